//! Eigen-beamformed downlink training and MMSE recovery of the downlink
//! channel from fed-back observations.

use rand::Rng;

use crate::channel::complex_gaussian;
use crate::error::{Error, Result};
use crate::numerics::{C64, CMat, CVec};
use crate::recon::CcmEstimate;

/// Orthonormal beamforming columns for one user.
#[derive(Debug, Clone)]
pub struct Beamformer {
    pub columns: CMat,
    pub user: usize,
}

impl Beamformer {
    /// Validates `B^H B = I` within 1e-10.
    pub fn new(columns: CMat, user: usize) -> Result<Self> {
        let nu = columns.ncols();
        let gram = columns.adjoint() * &columns;
        if (gram - CMat::identity(nu, nu)).norm() > 1e-10 * (nu as f64).sqrt().max(1.0) {
            return Err(Error::contract("Beamformer: columns not orthonormal"));
        }
        Ok(Beamformer { columns, user })
    }

    pub fn nu(&self) -> usize {
        self.columns.ncols()
    }

    /// Subspace projector `B B^H`.
    pub fn projector(&self) -> CMat {
        &self.columns * self.columns.adjoint()
    }
}

/// Top-`nu` eigenvectors of the downlink CCM as beam columns.
pub fn eigen_beamformer(ccm: &CcmEstimate, nu: usize, user: usize) -> Result<Beamformer> {
    let (v, _) = ccm.truncate(nu)?;
    Beamformer::new(v, user)
}

/// Sum of all group members' beam columns; each user's observation sees the
/// superimposed training of the whole group.
fn combined_beams(beamformers: &[&Beamformer], m: usize) -> Result<CMat> {
    if beamformers.is_empty() {
        return Err(Error::Degenerate("downlink: empty beamformer set".into()));
    }
    let nu = beamformers[0].nu();
    let mut sum = CMat::zeros(m, nu);
    for b in beamformers {
        if b.columns.nrows() != m || b.nu() != nu {
            return Err(Error::dimension("downlink: mismatched beamformer shape"));
        }
        sum += &b.columns;
    }
    Ok(sum)
}

/// Post-matched-filter downlink observation
/// `(sum_i B_i)^H h_d + n / sqrt(rho_d)` with unit-variance `n`.
pub fn downlink_training(
    h_d: &CVec,
    beamformers: &[&Beamformer],
    rho_d: f64,
    rng: &mut impl Rng,
) -> Result<CVec> {
    let noise = complex_gaussian(
        beamformers.first().map_or(0, |b| b.nu()),
        rng,
    );
    downlink_training_with_noise(h_d, beamformers, rho_d, &noise)
}

/// Same observation with caller-supplied unit-variance noise, so different
/// reconstruction methods can share one noise draw inside a trial.
pub fn downlink_training_with_noise(
    h_d: &CVec,
    beamformers: &[&Beamformer],
    rho_d: f64,
    noise: &CVec,
) -> Result<CVec> {
    if !(rho_d > 0.0) {
        return Err(Error::contract("downlink_training: rho_d must be > 0"));
    }
    let c = combined_beams(beamformers, h_d.len())?;
    if noise.len() != c.ncols() {
        return Err(Error::dimension("downlink_training: noise length != nu"));
    }
    Ok(c.adjoint() * h_d + noise / C64::new(rho_d.sqrt(), 0.0))
}

/// MMSE recovery at the BS:
/// `h_d = R C (C^H R C + I / rho_d)^{-1} obs` with `C = sum_i B_i`.
pub fn mmse_downlink(
    obs: &CVec,
    ccm: &CcmEstimate,
    beamformers: &[&Beamformer],
    rho_d: f64,
) -> Result<CVec> {
    if !(rho_d > 0.0) {
        return Err(Error::contract("mmse_downlink: rho_d must be > 0"));
    }
    let m = ccm.dim();
    let c = combined_beams(beamformers, m)?;
    let nu = c.ncols();
    if obs.len() != nu {
        return Err(Error::dimension("mmse_downlink: observation length != nu"));
    }
    let rc = ccm.matrix() * &c;
    let inner = c.adjoint() * &rc + CMat::identity(nu, nu) / C64::new(rho_d, 0.0);
    let solved = inner
        .lu()
        .solve(obs)
        .ok_or_else(|| Error::Degenerate("mmse_downlink: singular filter matrix".into()))?;
    Ok(rc * solved)
}
