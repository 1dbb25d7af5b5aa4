//! ULA geometry: steering vectors, spatial-rotation matrices, and the
//! uplink-to-downlink carrier-shift transformation.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{C64, CMat, CVec};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Which carrier a vector or covariance matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Uplink,
    Downlink,
}

/// Uniform linear array with its uplink/downlink carriers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Antenna count.
    pub m: usize,
    /// Element spacing in meters.
    pub d: f64,
    /// Uplink carrier frequency in Hz.
    pub f_u: f64,
    /// Downlink carrier frequency in Hz.
    pub f_d: f64,
    /// Propagation speed in m/s.
    pub c: f64,
}

impl ArrayConfig {
    pub fn new(m: usize, d: f64, f_u: f64, f_d: f64) -> Result<Self> {
        if m < 1 {
            return Err(Error::contract("ArrayConfig: M must be >= 1"));
        }
        if !(d > 0.0) || !(f_u > 0.0) || !(f_d > 0.0) {
            return Err(Error::contract(
                "ArrayConfig: spacing and carriers must be positive",
            ));
        }
        Ok(ArrayConfig {
            m,
            d,
            f_u,
            f_d,
            c: SPEED_OF_LIGHT,
        })
    }

    /// Half-wavelength spacing at the uplink carrier.
    pub fn half_wavelength(m: usize, f_u: f64, f_d: f64) -> Result<Self> {
        Self::new(m, SPEED_OF_LIGHT / (2.0 * f_u), f_u, f_d)
    }

    /// Electrical spacing `chi = 2 pi f d / c` at carrier `f`.
    pub fn chi(&self, f: f64) -> f64 {
        2.0 * std::f64::consts::PI * f * self.d / self.c
    }

    pub fn chi_uplink(&self) -> f64 {
        self.chi(self.f_u)
    }

    pub fn chi_downlink(&self) -> f64 {
        self.chi(self.f_d)
    }

    pub fn chi_for(&self, link: Link) -> f64 {
        match link {
            Link::Uplink => self.chi_uplink(),
            Link::Downlink => self.chi_downlink(),
        }
    }

    pub fn carrier(&self, link: Link) -> f64 {
        match link {
            Link::Uplink => self.f_u,
            Link::Downlink => self.f_d,
        }
    }

    /// Search range for the spatial rotation parameter.
    pub fn psi_limit(&self) -> f64 {
        std::f64::consts::PI / self.m as f64
    }

    /// Beamspace bin width in cosine space at carrier `f`.
    pub fn bin_width_u(&self, f: f64) -> f64 {
        2.0 * std::f64::consts::PI / (self.m as f64 * self.chi(f))
    }
}

/// Array manifold: angle to response vector. Only the ULA is implemented;
/// other geometries can slot in behind this trait.
pub trait Manifold {
    fn antennas(&self) -> usize;
    fn response(&self, f: f64, theta: f64) -> CVec;
}

impl Manifold for ArrayConfig {
    fn antennas(&self) -> usize {
        self.m
    }

    fn response(&self, f: f64, theta: f64) -> CVec {
        steering(self, f, theta)
    }
}

/// ULA steering vector at carrier `f`:
/// entry `m = exp(-j m chi cos(theta)) / sqrt(M)`.
pub fn steering(cfg: &ArrayConfig, f: f64, theta: f64) -> CVec {
    let chi = cfg.chi(f);
    let scale = 1.0 / (cfg.m as f64).sqrt();
    let step = -chi * theta.cos();
    CVec::from_fn(cfg.m, |m, _| C64::from_polar(scale, step * m as f64))
}

/// Diagonal entries of the spatial rotation `Phi(psi) = diag{e^{j m psi}}`.
pub fn rotation_diag(cfg: &ArrayConfig, psi: f64) -> CVec {
    CVec::from_fn(cfg.m, |m, _| C64::from_polar(1.0, psi * m as f64))
}

/// Spatial rotation matrix. Values of `psi` outside `[-pi/M, pi/M]` are
/// accepted; the search routines never produce them.
pub fn rotation_matrix(cfg: &ArrayConfig, psi: f64) -> CMat {
    CMat::from_diagonal(&rotation_diag(cfg, psi))
}

/// Apply `Phi(psi)` to a vector without materializing the matrix.
pub fn apply_rotation(h: &CVec, psi: f64) -> CVec {
    CVec::from_fn(h.len(), |m, _| {
        h[m] * Complex::from_polar(1.0, psi * m as f64)
    })
}

/// Diagonal entries of the carrier-shift transform `Theta(theta)`, which maps
/// an uplink steering vector onto its downlink counterpart.
pub fn freq_shift_diag(cfg: &ArrayConfig, theta: f64) -> CVec {
    let step = -(cfg.chi_downlink() - cfg.chi_uplink()) * theta.cos();
    CVec::from_fn(cfg.m, |m, _| C64::from_polar(1.0, step * m as f64))
}

/// Carrier-shift transform as a full diagonal matrix.
pub fn freq_shift(cfg: &ArrayConfig, theta: f64) -> CMat {
    CMat::from_diagonal(&freq_shift_diag(cfg, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cfg128() -> ArrayConfig {
        ArrayConfig::half_wavelength(128, 2.0e9, 2.1e9).unwrap()
    }

    #[test]
    fn steering_broadside() {
        let cfg = cfg128();
        let a = steering(&cfg, cfg.f_u, PI / 2.0);
        let s = 1.0 / (cfg.m as f64).sqrt();
        for z in a.iter() {
            assert_abs_diff_eq!(z.re, s, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_unit_norm() {
        let cfg = cfg128();
        for k in 0..32 {
            let theta = 0.05 + (PI - 0.1) * k as f64 / 31.0;
            assert_abs_diff_eq!(steering(&cfg, cfg.f_u, theta).norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(steering(&cfg, cfg.f_d, theta).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_endfire_half_wavelength() {
        // M=4, chi=pi, theta=0: entries (1,-1,1,-1)/2.
        let cfg = ArrayConfig::half_wavelength(4, 2.0e9, 2.0e9).unwrap();
        assert_abs_diff_eq!(cfg.chi_uplink(), PI, epsilon = 1e-12);
        let a = steering(&cfg, cfg.f_u, 0.0);
        let expected = [0.5, -0.5, 0.5, -0.5];
        for (z, e) in a.iter().zip(expected) {
            assert_abs_diff_eq!(z.re, e, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_identity_and_unitarity() {
        let cfg = ArrayConfig::half_wavelength(3, 1.0e9, 1.0e9).unwrap();
        let id = rotation_matrix(&cfg, 0.0);
        assert!((id - CMat::identity(3, 3)).norm() < 1e-15);
        let psi = PI / 7.0;
        let prod = rotation_matrix(&cfg, psi) * rotation_matrix(&cfg, -psi);
        assert!((prod - CMat::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn rotation_direct_entries() {
        let cfg = ArrayConfig::half_wavelength(3, 1.0e9, 1.0e9).unwrap();
        let phi = rotation_matrix(&cfg, PI / 6.0);
        assert_abs_diff_eq!(phi[(1, 1)].arg(), PI / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(phi[(2, 2)].arg(), PI / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn freq_shift_degenerate_cases() {
        let same = ArrayConfig::half_wavelength(8, 2.0e9, 2.0e9).unwrap();
        assert!((freq_shift(&same, 1.0) - CMat::identity(8, 8)).norm() < 1e-14);
        let cfg = cfg128();
        let broadside = freq_shift(&cfg, PI / 2.0);
        assert!((broadside - CMat::identity(128, 128)).norm() < 1e-12);
    }

    #[test]
    fn freq_shift_maps_uplink_to_downlink() {
        let cfg = cfg128();
        for k in 0..100 {
            let theta = 0.02 + (PI - 0.04) * (k as f64) / 99.0;
            let a_u = steering(&cfg, cfg.f_u, theta);
            let a_d = steering(&cfg, cfg.f_d, theta);
            let mapped = CVec::from_fn(cfg.m, |m, _| freq_shift_diag(&cfg, theta)[m] * a_u[m]);
            assert!((mapped - a_d).norm() < 1e-12, "theta = {theta}");
        }
    }

    #[test]
    fn asymptotic_orthogonality() {
        // |a(t1)^H a(t2)| shrinks with M for separated angles.
        let t1 = 1.0f64;
        let t2 = (t1.cos() - 0.15).acos();
        let mut last = f64::INFINITY;
        for m in [16usize, 64, 256] {
            let cfg = ArrayConfig::half_wavelength(m, 2.0e9, 2.0e9).unwrap();
            let ip = (steering(&cfg, cfg.f_u, t1).adjoint() * steering(&cfg, cfg.f_u, t2))[(0, 0)]
                .norm();
            assert!(ip < last, "M={m}: {ip} !< {last}");
            last = ip;
        }
        assert!(last < 0.1);
    }
}
