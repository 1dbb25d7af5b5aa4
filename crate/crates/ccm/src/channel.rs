//! Ground-truth multipath channel synthesis from a power angular spectrum,
//! and quadrature/sample covariance oracles.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::{steering, ArrayConfig, Link};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_toeplitz, C64, CMat, CVec};
use crate::recon::{CcmEstimate, MethodTag};

/// Smallest margin kept between a PAS support endpoint and the ULA
/// ambiguity boundary at 0 or pi.
const SUPPORT_MARGIN: f64 = 1e-9;

/// Power angular spectrum family of one multipath component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PasKind {
    /// `S(theta) = 1 / (2 delta)` on the support.
    Uniform,
    /// Truncated Laplacian `S(theta) = exp(-sqrt(2)|theta - mean| / delta) / (sqrt(2) delta)`.
    Laplacian,
    /// Piecewise-linear density from (angle, density) samples.
    Tabulated {
        angles: Vec<f64>,
        densities: Vec<f64>,
    },
}

/// PAS of one multipath component: family, mean AOA and angular spread
/// (all angles in radians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasModel {
    pub kind: PasKind,
    pub mean: f64,
    pub spread: f64,
}

impl PasModel {
    pub fn new(kind: PasKind, mean: f64, spread: f64) -> Result<Self> {
        if !(spread >= 0.0) {
            return Err(Error::contract("PasModel: spread must be >= 0"));
        }
        if mean - spread <= 0.0 || mean + spread >= std::f64::consts::PI {
            return Err(Error::contract(
                "PasModel: support must stay inside (0, pi); the ULA cannot \
                 distinguish theta from -theta",
            ));
        }
        if let PasKind::Tabulated { angles, densities } = &kind {
            if angles.len() != densities.len() || angles.len() < 2 {
                return Err(Error::contract("PasModel: need >= 2 tabulated samples"));
            }
            if densities.iter().any(|&d| !(d >= 0.0)) {
                return Err(Error::contract("PasModel: tabulated densities must be >= 0"));
            }
            if angles.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::contract("PasModel: tabulated angles must increase"));
            }
        }
        Ok(PasModel { kind, mean, spread })
    }

    /// Build a model from estimated parameters, clamping the support into
    /// (0, pi) instead of rejecting it. Used with angle estimates, which can
    /// overshoot the visible region.
    pub fn clamped(kind: PasKind, mean: f64, spread: f64) -> Self {
        let lo = (mean - spread).max(SUPPORT_MARGIN);
        let hi = (mean + spread).min(std::f64::consts::PI - SUPPORT_MARGIN);
        let (mean, spread) = if lo < hi {
            ((lo + hi) / 2.0, (hi - lo) / 2.0)
        } else {
            (lo.min(std::f64::consts::PI - SUPPORT_MARGIN), 0.0)
        };
        PasModel { kind, mean, spread }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.mean - self.spread, self.mean + self.spread)
    }

    /// Density `S(theta)`; zero outside the support.
    pub fn density(&self, theta: f64) -> f64 {
        let (lo, hi) = self.support();
        if theta < lo || theta > hi {
            return 0.0;
        }
        match &self.kind {
            PasKind::Uniform => 1.0 / (2.0 * self.spread),
            PasKind::Laplacian => {
                let s = std::f64::consts::SQRT_2;
                (-s * (theta - self.mean).abs() / self.spread).exp() / (s * self.spread)
            }
            PasKind::Tabulated { angles, densities } => {
                if theta <= angles[0] {
                    return densities[0];
                }
                if theta >= *angles.last().unwrap() {
                    return *densities.last().unwrap();
                }
                let i = angles.partition_point(|&a| a <= theta).min(angles.len() - 1);
                let (a0, a1) = (angles[i - 1], angles[i]);
                let t = (theta - a0) / (a1 - a0);
                densities[i - 1] * (1.0 - t) + densities[i] * t
            }
        }
    }
}

/// Discrete ray representation of a PAS: fixed angles and amplitudes,
/// per-slot random phases.
#[derive(Debug, Clone)]
pub struct RaySet {
    pub angles: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl RaySet {
    /// Total ray power (quadrature approximation of the PAS mass).
    pub fn power(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum()
    }

    /// Same geometry with every amplitude scaled by `sqrt(factor)`.
    pub fn scaled_power(&self, factor: f64) -> RaySet {
        RaySet {
            angles: self.angles.clone(),
            amplitudes: self.amplitudes.iter().map(|a| a * factor.sqrt()).collect(),
            phases: self.phases.clone(),
        }
    }
}

/// One channel vector for one user, slot and link direction.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub vector: CVec,
    pub user: usize,
    pub slot: usize,
    pub link: Link,
}

fn uniform_phase(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
}

/// Circularly-symmetric complex Gaussian vector with unit variance per entry.
pub fn complex_gaussian(m: usize, rng: &mut impl Rng) -> CVec {
    let comp = Normal::new(0.0, 0.5_f64.sqrt()).expect("valid normal");
    CVec::from_fn(m, |_, _| C64::new(comp.sample(rng), comp.sample(rng)))
}

/// Discretize a PAS into `r` equispaced rays with trapezoid quadrature
/// weights, so that the total ray power matches the PAS mass. Phases are
/// drawn i.i.d. uniform.
pub fn build_rays(model: &PasModel, r: usize, rng: &mut impl Rng) -> Result<RaySet> {
    if r == 0 {
        return Err(Error::contract("build_rays: ray count must be >= 1"));
    }
    if model.spread == 0.0 || r == 1 {
        // Specular limit: a single unit-power ray at the mean AOA.
        return Ok(RaySet {
            angles: vec![model.mean],
            amplitudes: vec![1.0],
            phases: vec![uniform_phase(rng)],
        });
    }
    let (lo, hi) = model.support();
    let step = (hi - lo) / (r - 1) as f64;
    let mut angles = Vec::with_capacity(r);
    let mut amplitudes = Vec::with_capacity(r);
    let mut phases = Vec::with_capacity(r);
    for i in 0..r {
        let theta = lo + step * i as f64;
        let w = if i == 0 || i == r - 1 { step / 2.0 } else { step };
        angles.push(theta);
        amplitudes.push((model.density(theta) * w).sqrt());
        phases.push(uniform_phase(rng));
    }
    Ok(RaySet {
        angles,
        amplitudes,
        phases,
    })
}

/// New coherence slot: same geometry, fresh i.i.d. phases.
pub fn redraw_phases(rays: &RaySet, rng: &mut impl Rng) -> RaySet {
    RaySet {
        angles: rays.angles.clone(),
        amplitudes: rays.amplitudes.clone(),
        phases: rays.angles.iter().map(|_| uniform_phase(rng)).collect(),
    }
}

/// Precomputed steering matrix for a fixed ray geometry, so per-slot
/// synthesis only touches the phases.
#[derive(Debug, Clone)]
pub struct RayBasis {
    pub matrix: CMat,
}

impl RayBasis {
    pub fn new(cfg: &ArrayConfig, f: f64, angles: &[f64]) -> Self {
        let mut matrix = CMat::zeros(cfg.m, angles.len());
        for (i, &theta) in angles.iter().enumerate() {
            matrix.set_column(i, &steering(cfg, f, theta));
        }
        RayBasis { matrix }
    }

    pub fn synthesize(&self, rays: &RaySet) -> CVec {
        let coeff = CVec::from_fn(rays.angles.len(), |i, _| {
            C64::from_polar(rays.amplitudes[i], rays.phases[i])
        });
        &self.matrix * coeff
    }
}

/// Superpose all rays: `h = sum_r amp_r e^{j phi_r} a(theta_r)` at carrier `f`.
pub fn synthesize(cfg: &ArrayConfig, f: f64, rays: &RaySet) -> CVec {
    RayBasis::new(cfg, f, &rays.angles).synthesize(rays)
}

/// First Toeplitz column of the quadrature CCM `int S(theta) a a^H dtheta`
/// at carrier `f` with `n` trapezoid nodes.
pub(crate) fn pas_quadrature_column(
    cfg: &ArrayConfig,
    f: f64,
    model: &PasModel,
    n: usize,
) -> Vec<C64> {
    let chi = cfg.chi(f);
    let (lo, hi) = model.support();
    let step = (hi - lo) / (n - 1) as f64;
    let mut col = vec![C64::new(0.0, 0.0); cfg.m];
    for i in 0..n {
        let theta = lo + step * i as f64;
        let w = if i == 0 || i == n - 1 { step / 2.0 } else { step };
        let ws = w * model.density(theta) / cfg.m as f64;
        let unit = C64::from_polar(1.0, -chi * theta.cos());
        let mut e = C64::new(ws, 0.0);
        for c in col.iter_mut() {
            *c += e;
            e *= unit;
        }
    }
    col
}

/// Ground-truth CCM by deterministic trapezoid quadrature of
/// `S(theta) a(theta) a^H(theta)` over the PAS support. A zero-spread model
/// returns the exact rank-1 outer product.
pub fn true_ccm(
    cfg: &ArrayConfig,
    f: f64,
    model: &PasModel,
    quadrature_n: usize,
) -> Result<CcmEstimate> {
    let link = if f == cfg.f_u {
        Link::Uplink
    } else {
        Link::Downlink
    };
    if model.spread == 0.0 {
        let a = steering(cfg, f, model.mean);
        return CcmEstimate::new(&a * a.adjoint(), MethodTag::TrueQuadrature, link);
    }
    if quadrature_n < 2 {
        return Err(Error::contract("true_ccm: quadrature N must be >= 2"));
    }
    let col = pas_quadrature_column(cfg, f, model, quadrature_n);
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::TrueQuadrature, link)
}

/// Sample covariance `(1/N) sum h h^H` over channel realizations.
pub fn sample_covariance(channels: &[CVec], link: Link) -> Result<CcmEstimate> {
    let n = channels.len();
    if n == 0 {
        return Err(Error::Degenerate("sample_covariance: no channels".into()));
    }
    let m = channels[0].len();
    let mut acc = CMat::zeros(m, m);
    for h in channels {
        if h.len() != m {
            return Err(Error::dimension("sample_covariance: mixed lengths"));
        }
        acc += h * h.adjoint();
    }
    CcmEstimate::new(acc / C64::new(n as f64, 0.0), MethodTag::SampleAverage, link)
}
