//! Rotated-DFT angle acquisition: find the rotation and bin set capturing
//! the most beamspace power, then map the bins back to an AOA interval.

use crate::array::{apply_rotation, ArrayConfig};
use crate::error::{Error, Result};
use crate::numerics::{dft_matrix, CVec};

/// Rotation, dominant beamspace bins and the AOA interval they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    /// Rotation in [-pi/M, pi/M].
    pub psi: f64,
    /// kappa dominant bin indices, ascending.
    pub q: Vec<usize>,
    /// Cosine-space interval, u_lo <= u_hi, clamped to [-1, 1].
    pub u_lo: f64,
    pub u_hi: f64,
    /// Angle-space interval inside (0, pi); arccos flips order.
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Interval midpoint and half-width in angle space.
    pub theta_mean: f64,
    pub delta: f64,
    /// Fraction of the channel power the selected bins capture.
    pub captured: f64,
    /// Whether the selected bins were contiguous (mod M).
    pub contiguous: bool,
}

/// Beamspace image `F Phi(psi) h`.
pub fn beamspace(cfg: &ArrayConfig, h: &CVec, psi: f64) -> Result<CVec> {
    if h.len() != cfg.m {
        return Err(Error::dimension("beamspace: channel length != M"));
    }
    let f = dft_matrix(cfg.m)?;
    Ok(f * apply_rotation(h, psi))
}

/// Indices of the `kappa` largest values, ties broken by lower index.
fn top_k(values: &[f64], kappa: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(kappa);
    idx.sort_unstable();
    idx
}

fn is_contiguous_mod(q: &[usize], m: usize) -> bool {
    if q.len() <= 1 {
        return true;
    }
    // Sorted indices are contiguous mod M iff at most one cyclic gap exceeds 1.
    let mut gaps = 0;
    for w in q.windows(2) {
        if w[1] - w[0] > 1 {
            gaps += 1;
        }
    }
    if q[0] + m - q.last().unwrap() > 1 {
        gaps += 1;
    }
    gaps <= 1
}

/// Search `g` equispaced rotations (0 always included) for the one whose
/// top-`kappa` beamspace bins capture the most power. Ties go to the
/// smaller |psi|, then to the earlier grid point.
pub fn rotation_search(
    cfg: &ArrayConfig,
    h: &CVec,
    kappa: usize,
    g: usize,
) -> Result<(f64, Vec<usize>, f64)> {
    if kappa < 1 || kappa > cfg.m {
        return Err(Error::contract(format!(
            "rotation_search: kappa {kappa} outside 1..=M"
        )));
    }
    if g < 1 {
        return Err(Error::contract("rotation_search: grid size must be >= 1"));
    }
    let total = h.norm_squared();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Degenerate("rotation_search: degenerate input".into()));
    }
    let limit = cfg.psi_limit();
    let mut grid: Vec<f64> = if g == 1 {
        vec![0.0]
    } else {
        (0..g)
            .map(|i| -limit + 2.0 * limit * i as f64 / (g - 1) as f64)
            .collect()
    };
    if !grid.iter().any(|&p| p == 0.0) {
        grid.push(0.0);
    }
    // Smaller |psi| first so a strict-greater update keeps the tie rule.
    grid.sort_by(|a, b| {
        a.abs()
            .partial_cmp(&b.abs())
            .unwrap()
            .then(a.partial_cmp(b).unwrap())
    });

    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for &psi in &grid {
        let b = beamspace(cfg, h, psi)?;
        let powers: Vec<f64> = b.iter().map(|c| c.norm_sqr()).collect();
        let q = top_k(&powers, kappa);
        let captured: f64 = q.iter().map(|&i| powers[i]).sum();
        if best.as_ref().map_or(true, |(_, _, c)| captured > *c) {
            best = Some((psi, q, captured));
        }
    }
    let (psi, q, captured) = best.unwrap();
    Ok((psi, q, captured / total))
}

/// Map bins to a cosine-space interval. Bin q peaks where
/// `psi - chi cos(theta) = 2 pi q' / M (mod 2 pi)` with the signed alias
/// `q' = q - M` for `q > M/2`, so `u_q = (psi - 2 pi q' / M) / chi`. A
/// half-bin margin `pi / (M chi)` pads both ends before clamping to [-1, 1].
pub fn infer_interval(cfg: &ArrayConfig, psi: f64, q: &[usize]) -> Result<(f64, f64)> {
    if q.is_empty() {
        return Err(Error::contract("infer_interval: empty bin set"));
    }
    let m = cfg.m;
    let chi = cfg.chi_uplink();
    let margin = std::f64::consts::PI / (m as f64 * chi);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &qi in q {
        if qi >= m {
            return Err(Error::contract(format!(
                "infer_interval: bin {qi} outside 0..M"
            )));
        }
        let alias = if qi > m / 2 {
            qi as f64 - m as f64
        } else {
            qi as f64
        };
        let u = (psi - 2.0 * std::f64::consts::PI * alias / m as f64) / chi;
        lo = lo.min(u);
        hi = hi.max(u);
    }
    let lo = (lo - margin).max(-1.0);
    let hi = (hi + margin).min(1.0);
    if lo >= hi {
        return Err(Error::Degenerate(
            "infer_interval: angles outside visible region".into(),
        ));
    }
    Ok((lo, hi))
}

/// Cosine-space gap between two estimates' intervals; 0 when they overlap
/// or touch.
pub fn angular_distance(e1: &AngleEstimate, e2: &AngleEstimate) -> f64 {
    (e1.u_lo.max(e2.u_lo) - e1.u_hi.min(e2.u_hi)).max(0.0)
}

/// Full acquisition: rotation search followed by interval inference.
pub fn estimate_angles(
    cfg: &ArrayConfig,
    h: &CVec,
    kappa: usize,
    g: usize,
) -> Result<AngleEstimate> {
    let (psi, q, captured) = rotation_search(cfg, h, kappa, g)?;
    estimate_from_bins(cfg, psi, q, captured)
}

/// Build the interval for an already-selected rotation and bin set.
pub fn estimate_from_bins(
    cfg: &ArrayConfig,
    psi: f64,
    q: Vec<usize>,
    captured: f64,
) -> Result<AngleEstimate> {
    let (u_lo, u_hi) = infer_interval(cfg, psi, &q)?;
    let theta_lo = u_hi.acos();
    let theta_hi = u_lo.acos();
    let contiguous = is_contiguous_mod(&q, cfg.m);
    Ok(AngleEstimate {
        psi,
        q,
        u_lo,
        u_hi,
        theta_lo,
        theta_hi,
        theta_mean: (theta_lo + theta_hi) / 2.0,
        delta: (theta_hi - theta_lo) / 2.0,
        captured,
        contiguous,
    })
}
