//! Uplink training chain: preamble LS, shared-pilot group observation,
//! beamspace-truncated (SBEM) estimate, and CCM-enhanced MMSE.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{apply_rotation, ArrayConfig};
use crate::channel::complex_gaussian;
use crate::error::{Error, Result};
use crate::numerics::{dft_matrix, C64, CMat, CVec};
use crate::recon::CcmEstimate;

/// Training-stage parameters; SNRs are linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub rho_u: f64,
    pub rho_d: f64,
    /// Beamspace bin count used in angle acquisition and SBEM.
    pub kappa: usize,
    /// Retained eigenvector count in the MMSE filters.
    pub nu: usize,
    /// PAS gain grid size.
    pub l: usize,
}

impl TrainingConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.rho_u > 0.0) || !(self.rho_d > 0.0) {
            return Err(Error::contract("TrainingConfig: SNRs must be > 0"));
        }
        if self.kappa < 1 || self.kappa > m {
            return Err(Error::contract("TrainingConfig: kappa outside 1..=M"));
        }
        if self.nu < 1 || self.nu > m {
            return Err(Error::contract("TrainingConfig: nu outside 1..=M"));
        }
        if self.l < 1 {
            return Err(Error::contract("TrainingConfig: L must be >= 1"));
        }
        Ok(())
    }
}

/// Preamble LS estimate `h + n / sqrt(rho_u)`.
pub fn ls_preamble(h: &CVec, rho_u: f64, rng: &mut impl Rng) -> Result<CVec> {
    if !(rho_u > 0.0) {
        return Err(Error::contract("ls_preamble: rho_u must be > 0"));
    }
    Ok(h + complex_gaussian(h.len(), rng) / C64::new(rho_u.sqrt(), 0.0))
}

/// Shared-pilot superposition after matched filtering:
/// `sum_i h_i + n / sqrt(rho_u)`.
pub fn group_observation(channels: &[&CVec], rho_u: f64, rng: &mut impl Rng) -> Result<CVec> {
    if channels.is_empty() {
        return Err(Error::Degenerate("group_observation: empty group".into()));
    }
    if !(rho_u > 0.0) {
        return Err(Error::contract("group_observation: rho_u must be > 0"));
    }
    let m = channels[0].len();
    let mut sum = CVec::zeros(m);
    for h in channels {
        if h.len() != m {
            return Err(Error::dimension("group_observation: mixed lengths"));
        }
        sum += *h;
    }
    Ok(sum + complex_gaussian(m, rng) / C64::new(rho_u.sqrt(), 0.0))
}

/// SBEM estimate: rotate by `psi`, keep the `q` beamspace bins, zero the
/// rest, rotate back. An orthogonal projection, so idempotent for fixed
/// (psi, q).
pub fn sbem_estimate(cfg: &ArrayConfig, h_group: &CVec, psi: f64, q: &[usize]) -> Result<CVec> {
    if q.is_empty() {
        return Err(Error::contract("sbem_estimate: empty bin set"));
    }
    if h_group.len() != cfg.m {
        return Err(Error::dimension("sbem_estimate: channel length != M"));
    }
    let f = dft_matrix(cfg.m)?;
    let rotated = apply_rotation(h_group, psi);
    let mut kept = CVec::zeros(cfg.m);
    // Only touch the selected rows of F and columns of F^H: O(kappa M).
    for &qi in q {
        if qi >= cfg.m {
            return Err(Error::contract("sbem_estimate: bin index outside 0..M"));
        }
        let coeff = (f.row(qi) * &rotated)[(0, 0)];
        kept += f.row(qi).adjoint() * coeff;
    }
    Ok(apply_rotation(&kept, -psi))
}

/// Rank-`nu` truncation of each CCM, as a scaled factor pair
/// `(V, V Sigma)` so downstream products stay low-rank.
fn truncated_factors(ccm: &CcmEstimate, nu: usize) -> Result<(CMat, CMat)> {
    let (v, s) = ccm.truncate(nu.min(ccm.dim()))?;
    let mut vs = v.clone();
    for (c, &sv) in s.iter().enumerate() {
        vs.column_mut(c).scale_mut(sv.max(0.0));
    }
    Ok((v, vs))
}

/// Multi-user MMSE with truncated covariance models:
/// `R_k (I / rho_u + sum_i R_i)^{-1} h_sbem` where every `R` is replaced by
/// its nu-truncated eigenexpansion. `own_index` selects the user inside
/// `group_ccms`.
pub fn mmse_uplink(
    h_sbem: &CVec,
    own_index: usize,
    group_ccms: &[&CcmEstimate],
    rho_u: f64,
    nu: usize,
) -> Result<CVec> {
    if !(rho_u > 0.0) {
        return Err(Error::contract("mmse_uplink: rho_u must be > 0"));
    }
    if own_index >= group_ccms.len() {
        return Err(Error::contract("mmse_uplink: own_index outside the group"));
    }
    let m = h_sbem.len();
    let mut sum = CMat::identity(m, m) / C64::new(rho_u, 0.0);
    let mut own = None;
    for (i, ccm) in group_ccms.iter().enumerate() {
        if ccm.dim() != m {
            return Err(Error::dimension("mmse_uplink: CCM dimension != M"));
        }
        let (v, vs) = truncated_factors(ccm, nu)?;
        let trunc = &vs * v.adjoint();
        sum += &trunc;
        if i == own_index {
            own = Some(trunc);
        }
    }
    let solved = sum
        .lu()
        .solve(h_sbem)
        .ok_or_else(|| Error::Degenerate("mmse_uplink: singular filter matrix".into()))?;
    Ok(own.unwrap() * solved)
}

/// Large-M single-user MMSE: `V Sigma (Sigma + I / rho_u)^{-1} V^H h_sbem`.
/// Costs O(nu M) per application instead of a full solve.
pub fn mmse_uplink_asymptotic(
    h_sbem: &CVec,
    own_ccm: &CcmEstimate,
    rho_u: f64,
    nu: usize,
) -> Result<CVec> {
    if !(rho_u > 0.0) {
        return Err(Error::contract("mmse_uplink_asymptotic: rho_u must be > 0"));
    }
    if own_ccm.dim() != h_sbem.len() {
        return Err(Error::dimension("mmse_uplink_asymptotic: CCM dimension != M"));
    }
    let (v, s) = own_ccm.truncate(nu.min(own_ccm.dim()))?;
    let coeff = v.adjoint() * h_sbem;
    let gains = DMatrix::from_fn(s.len(), 1, |i, _| {
        C64::new(s[i].max(0.0) / (s[i].max(0.0) + 1.0 / rho_u), 0.0)
    });
    Ok(&v * coeff.component_mul(&gains))
}
