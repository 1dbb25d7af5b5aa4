//! Instantaneous per-angle channel gains on a grid inside the inferred AOA
//! interval, by LS fit (grids up to M points) or DTFT sampling (any grid).

use crate::array::{apply_rotation, steering, ArrayConfig};
use crate::error::{Error, Result};
use crate::numerics::{pseudo_inverse, C64, CMat, CVec};

/// Singular-value cutoff for the LS gain fit, relative to the largest.
/// Dense grids stack near-collinear steering atoms; directions this weak
/// carry no resolvable signal and only amplify observation noise into the
/// squared gains.
pub const LS_PINV_TOL: f64 = 5e-2;

/// Angle grid with the estimated complex gain per grid point, tagged with
/// the rotation used at estimation time.
#[derive(Debug, Clone)]
pub struct GainGrid {
    pub angles: Vec<f64>,
    pub gains: Vec<C64>,
    pub psi: f64,
}

impl GainGrid {
    /// Total gain power `sum |alpha_l|^2`.
    pub fn power(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum()
    }
}

/// Grid size heuristic for the LS path.
pub fn default_grid_size(m: usize, kappa: usize) -> usize {
    m.min((4 * kappa).max(8))
}

/// `theta_l = mean - delta + 2 delta l / L`; a zero spread collapses the
/// grid to the single point `mean`.
pub fn angle_grid(mean: f64, delta: f64, l: usize) -> Result<Vec<f64>> {
    if l < 1 {
        return Err(Error::contract("angle_grid: L must be >= 1"));
    }
    if !(delta >= 0.0) {
        return Err(Error::contract("angle_grid: delta must be >= 0"));
    }
    if delta == 0.0 {
        return Ok(vec![mean]);
    }
    Ok((0..l)
        .map(|i| mean - delta + 2.0 * delta * i as f64 / l as f64)
        .collect())
}

fn steering_stack(cfg: &ArrayConfig, angles: &[f64]) -> CMat {
    let mut a = CMat::zeros(cfg.m, angles.len());
    for (i, &theta) in angles.iter().enumerate() {
        a.set_column(i, &steering(cfg, cfg.f_u, theta));
    }
    a
}

/// LS gain fit `alpha = A(theta)^+ Phi(psi) h`.
pub fn gains_ls(cfg: &ArrayConfig, h: &CVec, psi: f64, angles: &[f64]) -> Result<GainGrid> {
    if angles.is_empty() {
        return Err(Error::contract("gains_ls: empty angle grid"));
    }
    if angles.len() > cfg.m {
        return Err(Error::contract(
            "gains_ls: grid larger than M, use gains_dtft",
        ));
    }
    if h.len() != cfg.m {
        return Err(Error::dimension("gains_ls: channel length != M"));
    }
    let a = steering_stack(cfg, angles);
    let pinv = pseudo_inverse(&a, LS_PINV_TOL)?;
    let alpha = pinv * apply_rotation(h, psi);
    Ok(GainGrid {
        angles: angles.to_vec(),
        gains: alpha.iter().copied().collect(),
        psi,
    })
}

/// DTFT gain samples `alpha_l = (1/sqrt(M)) sum_m [Phi(psi) h]_m e^{-j m xi_l}`
/// with `xi_l = psi - chi cos(theta_l)`. Valid for any grid size.
pub fn gains_dtft(cfg: &ArrayConfig, h: &CVec, psi: f64, angles: &[f64]) -> Result<GainGrid> {
    if angles.is_empty() {
        return Err(Error::contract("gains_dtft: empty angle grid"));
    }
    if h.len() != cfg.m {
        return Err(Error::dimension("gains_dtft: channel length != M"));
    }
    let chi = cfg.chi_uplink();
    let rotated = apply_rotation(h, psi);
    let scale = 1.0 / (cfg.m as f64).sqrt();
    let gains = angles
        .iter()
        .map(|&theta| {
            let xi = psi - chi * theta.cos();
            let unit = C64::from_polar(1.0, -xi);
            let mut e = C64::new(scale, 0.0);
            let mut acc = C64::new(0.0, 0.0);
            for v in rotated.iter() {
                acc += v * e;
                e *= unit;
            }
            acc
        })
        .collect();
    Ok(GainGrid {
        angles: angles.to_vec(),
        gains,
        psi,
    })
}

/// LS when the grid fits, DTFT otherwise.
pub fn estimate_gains(cfg: &ArrayConfig, h: &CVec, psi: f64, angles: &[f64]) -> Result<GainGrid> {
    if angles.len() <= cfg.m {
        gains_ls(cfg, h, psi, angles)
    } else {
        gains_dtft(cfg, h, psi, angles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayConfig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg(m: usize) -> ArrayConfig {
        ArrayConfig::half_wavelength(m, 2.0e9, 2.1e9).unwrap()
    }

    #[test]
    fn grid_spacing_rule() {
        let g = angle_grid(60.0_f64.to_radians(), 10.0_f64.to_radians(), 4).unwrap();
        let expect = [50.0, 55.0, 60.0, 65.0];
        for (a, e) in g.iter().zip(expect) {
            assert_abs_diff_eq!(a.to_degrees(), e, epsilon = 1e-10);
        }
        assert_eq!(angle_grid(1.0, 0.2, 1).unwrap(), vec![0.8]);
        assert_eq!(angle_grid(1.0, 0.0, 16).unwrap(), vec![1.0]);
    }

    #[test]
    fn ls_exact_single_atom() {
        let c = cfg(64);
        let theta = 1.1;
        let alpha = C64::from_polar(2.0, std::f64::consts::FRAC_PI_3);
        let h = steering(&c, c.f_u, theta) * alpha;
        let g = gains_ls(&c, &h, 0.0, &[theta]).unwrap();
        assert!((g.gains[0] - alpha).norm() < 1e-10);
    }

    #[test]
    fn ls_recovers_two_atoms() {
        let c = cfg(128);
        let (t1, t2) = (1.0, 1.8);
        let (a1, a2) = (C64::new(0.7, -0.4), C64::new(-1.2, 0.9));
        let h = steering(&c, c.f_u, t1) * a1 + steering(&c, c.f_u, t2) * a2;
        let g = gains_ls(&c, &h, 0.0, &[t1, t2]).unwrap();
        assert!((g.gains[0] - a1).norm() < 1e-6 * a1.norm());
        assert!((g.gains[1] - a2).norm() < 1e-6 * a2.norm());
    }

    #[test]
    fn ls_psi_compensation() {
        // Rotating the observation by Phi(psi) and asking the fit at psi
        // undoes the rotation: gains match the psi = 0 fit of the unrotated h.
        let c = cfg(64);
        let theta = 1.3;
        let h = steering(&c, c.f_u, theta) * C64::new(1.5, 0.5);
        let psi = 0.01;
        let h_rot = apply_rotation(&h, -psi);
        let g = gains_ls(&c, &h_rot, psi, &[theta]).unwrap();
        let g0 = gains_ls(&c, &h, 0.0, &[theta]).unwrap();
        assert!((g.gains[0] - g0.gains[0]).norm() < 1e-10);
    }

    #[test]
    fn ls_residual_is_minimal() {
        let c = cfg(32);
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let h = crate::channel::complex_gaussian(32, &mut rng);
        let angles: Vec<f64> = (0..6).map(|i| 0.9 + 0.12 * i as f64).collect();
        let g = gains_ls(&c, &h, 0.0, &angles).unwrap();
        let a = steering_stack(&c, &angles);
        let alpha = CVec::from_iterator(6, g.gains.iter().copied());
        let best = (&h - &a * &alpha).norm();
        for _ in 0..100 {
            let z = CVec::from_fn(6, |_, _| {
                C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
            });
            assert!(best <= (&h - &a * z).norm() + 1e-12);
        }
    }

    #[test]
    fn ls_rejects_oversized_grid() {
        let c = cfg(16);
        let h = CVec::zeros(16);
        let angles: Vec<f64> = (0..17).map(|i| 0.5 + 0.01 * i as f64).collect();
        assert!(gains_ls(&c, &h, 0.0, &angles).is_err());
        assert!(gains_dtft(&c, &h, 0.0, &angles).is_ok());
    }

    #[test]
    fn dtft_exact_on_grid() {
        let c = cfg(128);
        let theta = 1.2;
        let alpha = C64::new(-0.3, 1.7);
        let h = steering(&c, c.f_u, theta) * alpha;
        let g = gains_dtft(&c, &h, 0.0, &[theta, 0.7]).unwrap();
        assert!((g.gains[0] - alpha).norm() < 1e-9);
    }

    #[test]
    fn dtft_sidelobe_bound() {
        // Off-grid response of a single ray is an aliased sinc:
        // |asinc_M(x)| <= 1 / (M |sin(x/2)|) <= pi / (M |x|) for |x| <= pi.
        let c = cfg(128);
        let theta0 = 1.4;
        let h = steering(&c, c.f_u, theta0);
        let chi = c.chi_uplink();
        for k in 1..40 {
            let theta = theta0 + 0.01 * k as f64;
            if theta >= std::f64::consts::PI {
                break;
            }
            let mut x = chi * (theta.cos() - theta0.cos());
            x = x.rem_euclid(2.0 * std::f64::consts::PI);
            if x > std::f64::consts::PI {
                x -= 2.0 * std::f64::consts::PI;
            }
            let g = gains_dtft(&c, &h, 0.0, &[theta]).unwrap();
            let bound = std::f64::consts::PI / (128.0 * x.abs());
            assert!(g.gains[0].norm() <= bound + 1e-9, "x={x}");
        }
    }

    #[test]
    fn dtft_zero_channel() {
        let c = cfg(32);
        let g = gains_dtft(&c, &CVec::zeros(32), 0.0, &[0.8, 1.0, 1.2]).unwrap();
        assert!(g.gains.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dtft_is_linear() {
        let c = cfg(32);
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let h1 = crate::channel::complex_gaussian(32, &mut rng);
        let h2 = crate::channel::complex_gaussian(32, &mut rng);
        let angles = [0.9, 1.1, 1.4];
        let g1 = gains_dtft(&c, &h1, 0.02, &angles).unwrap();
        let g2 = gains_dtft(&c, &h2, 0.02, &angles).unwrap();
        let gs = gains_dtft(&c, &(&h1 + &h2), 0.02, &angles).unwrap();
        for i in 0..3 {
            assert!((gs.gains[i] - g1.gains[i] - g2.gains[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn ls_and_dtft_agree_for_separated_atoms() {
        let c = cfg(256);
        let (t1, t2) = (1.0, 2.0);
        let h = steering(&c, c.f_u, t1) * C64::new(1.0, 0.2)
            + steering(&c, c.f_u, t2) * C64::new(-0.5, 0.8);
        let ls = gains_ls(&c, &h, 0.0, &[t1, t2]).unwrap();
        let dt = gains_dtft(&c, &h, 0.0, &[t1, t2]).unwrap();
        for i in 0..2 {
            assert!((ls.gains[i] - dt.gains[i]).norm() < 1e-2);
        }
    }

    #[test]
    fn specular_energy_concentrates() {
        // L = 2M grid spanning +-10 deg around a lone ray. The dense grid
        // oversamples the asinc main lobe, so a single point cannot hold
        // most of the power; the points within two beamspace bins of the
        // true angle do, and the on-angle point is the global maximum.
        let c = cfg(128);
        let theta0 = 1.1;
        let h = steering(&c, c.f_u, theta0);
        let mut angles = angle_grid(theta0, 10.0_f64.to_radians(), 256).unwrap();
        angles.push(theta0);
        let g = gains_dtft(&c, &h, 0.0, &angles).unwrap();
        let at_true = g.gains.last().unwrap().norm_sqr();
        assert!(g.gains.iter().all(|v| v.norm_sqr() <= at_true + 1e-12));
        let chi = c.chi_uplink();
        let bin = 2.0 * std::f64::consts::PI / 128.0;
        let main_lobe: f64 = g
            .angles
            .iter()
            .zip(&g.gains)
            .filter(|(&t, _)| (chi * (t.cos() - theta0.cos())).abs() <= 2.0 * bin)
            .map(|(_, v)| v.norm_sqr())
            .sum();
        assert!(main_lobe >= 0.95 * g.power(), "{}", main_lobe / g.power());
    }

    #[test]
    fn default_grid_size_rule() {
        assert_eq!(default_grid_size(128, 16), 64);
        assert_eq!(default_grid_size(128, 1), 8);
        assert_eq!(default_grid_size(16, 16), 16);
    }
}
