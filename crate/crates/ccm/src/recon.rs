//! Channel covariance reconstruction: the IC-pCCM scheme built from
//! instantaneous gain grids, the CF-iCCM closed forms, the MC-iCCM
//! quadrature, and a registry that exposes all of them behind one trait.

use std::sync::OnceLock;

use crate::angle::AngleEstimate;
use crate::array::{steering, ArrayConfig, Link};
use crate::channel::{pas_quadrature_column, PasKind, PasModel};
use crate::error::{Error, Result};
use crate::numerics::{
    dft_matrix, hermitian_eig, hermitian_toeplitz, C64, CMat, CVec, EigenDecomposition,
};
use crate::pas::GainGrid;

/// How a covariance matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodTag {
    IcPccm,
    CfIccm,
    McIccm,
    TrueQuadrature,
    SampleAverage,
    Sbem,
}

impl MethodTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodTag::IcPccm => "ic-pccm",
            MethodTag::CfIccm => "cf-iccm",
            MethodTag::McIccm => "mc-iccm",
            MethodTag::TrueQuadrature => "true-ccm",
            MethodTag::SampleAverage => "sample-average",
            MethodTag::Sbem => "sbem",
        }
    }
}

/// Hermitian PSD covariance estimate with a lazily computed
/// eigendecomposition.
#[derive(Debug)]
pub struct CcmEstimate {
    matrix: CMat,
    pub method: MethodTag,
    pub link: Link,
    eig: OnceLock<EigenDecomposition>,
}

impl Clone for CcmEstimate {
    fn clone(&self) -> Self {
        let eig = OnceLock::new();
        if let Some(e) = self.eig.get() {
            let _ = eig.set(e.clone());
        }
        CcmEstimate {
            matrix: self.matrix.clone(),
            method: self.method,
            link: self.link,
            eig,
        }
    }
}

impl CcmEstimate {
    /// Wrap a matrix, rejecting anything not Hermitian within 1e-10
    /// relative Frobenius error.
    pub fn new(matrix: CMat, method: MethodTag, link: Link) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::dimension("CcmEstimate: non-square matrix"));
        }
        let scale = matrix.norm();
        let skew = (&matrix - matrix.adjoint()).norm();
        if scale > 0.0 && skew > 1e-10 * scale {
            return Err(Error::contract("CcmEstimate: matrix is not Hermitian"));
        }
        Ok(CcmEstimate {
            matrix,
            method,
            link,
            eig: OnceLock::new(),
        })
    }

    /// Construct with a known eigendecomposition (columns orthonormal,
    /// values descending). Used where the decomposition is available by
    /// construction, e.g. a diagonal beamspace model.
    pub fn with_eig(
        matrix: CMat,
        eig: EigenDecomposition,
        method: MethodTag,
        link: Link,
    ) -> Result<Self> {
        let est = CcmEstimate::new(matrix, method, link)?;
        let _ = est.eig.set(eig);
        Ok(est)
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }

    pub fn eig(&self) -> &EigenDecomposition {
        self.eig.get_or_init(|| {
            hermitian_eig(&self.matrix).expect("CcmEstimate matrix validated Hermitian")
        })
    }

    /// Numerical rank at relative eigenvalue threshold `tol`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        self.eig().numerical_rank(tol)
    }

    /// Smallest eigenvector count capturing `frac` of the trace.
    pub fn power_rank(&self, frac: f64) -> usize {
        self.eig().power_rank(frac)
    }

    /// Top-`nu` eigenpairs, descending.
    pub fn truncate(&self, nu: usize) -> Result<(CMat, nalgebra::DVector<f64>)> {
        if nu < 1 || nu > self.dim() {
            return Err(Error::contract(format!(
                "truncate: nu {nu} outside 1..={}",
                self.dim()
            )));
        }
        Ok(self.eig().truncate(nu))
    }

    /// Rank-`nu` approximation `V_nu Sigma_nu V_nu^H`.
    pub fn truncated_matrix(&self, nu: usize) -> Result<CMat> {
        let (v, s) = self.truncate(nu)?;
        let mut vs = v.clone();
        for (c, &sv) in s.iter().enumerate() {
            vs.column_mut(c).scale_mut(sv);
        }
        Ok(vs * v.adjoint())
    }

    /// Reject estimates with eigenvalues below `-tol * lambda_max`.
    pub fn validate_psd(&self, tol: f64) -> Result<()> {
        let eig = self.eig();
        let lmax = eig.values.iter().cloned().fold(0.0_f64, f64::max);
        let lmin = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmin < -tol * lmax.max(f64::MIN_POSITIVE) {
            return Err(Error::contract(format!(
                "CcmEstimate ({}): not PSD, lambda_min {lmin} vs lambda_max {lmax}",
                self.method.as_str()
            )));
        }
        Ok(())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Toeplitz column of `sum_l w_l * outer(phi^H a(theta_l))` where the
/// rotated-atom spatial frequency is `chi cos(theta_l) + psi`.
fn atom_sum_column(cfg: &ArrayConfig, chi: f64, psi: f64, angles: &[f64], weights: &[f64]) -> Vec<C64> {
    let mut col = vec![C64::new(0.0, 0.0); cfg.m];
    for (&theta, &w) in angles.iter().zip(weights) {
        let unit = C64::from_polar(1.0, -(chi * theta.cos() + psi));
        let mut e = C64::new(w / cfg.m as f64, 0.0);
        for c in col.iter_mut() {
            *c += e;
            e *= unit;
        }
    }
    col
}

/// IC-pCCM: `R = sum_l |alpha_l|^2 Phi^H a(theta_l) a(theta_l)^H Phi` with
/// steering vectors at carrier `f`.
pub fn ic_pccm(grid: &GainGrid, cfg: &ArrayConfig, f: f64, link: Link) -> Result<CcmEstimate> {
    if grid.angles.is_empty() {
        return Err(Error::Degenerate("ic_pccm: empty gain grid".into()));
    }
    let weights: Vec<f64> = grid.gains.iter().map(|g| g.norm_sqr()).collect();
    let col = atom_sum_column(cfg, cfg.chi(f), grid.psi, &grid.angles, &weights);
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::IcPccm, link)
}

/// Downlink CCM inference:
/// `R_d = sum_l mu |alpha_l|^2 Theta(theta_l) Phi^H a_u a_u^H Phi Theta^H`.
pub fn infer_downlink(grid: &GainGrid, cfg: &ArrayConfig, mu: f64) -> Result<CcmEstimate> {
    if grid.angles.is_empty() {
        return Err(Error::Degenerate("infer_downlink: empty gain grid".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::contract("infer_downlink: mu must be > 0"));
    }
    // Theta(theta) Phi^H a_u(theta) has spatial frequency chi_d cos(theta) + psi.
    let weights: Vec<f64> = grid.gains.iter().map(|g| mu * g.norm_sqr()).collect();
    let col = atom_sum_column(cfg, cfg.chi_downlink(), grid.psi, &grid.angles, &weights);
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::IcPccm, Link::Downlink)
}

fn rank_one(cfg: &ArrayConfig, f: f64, mean: f64, scale: f64, tag: MethodTag, link: Link) -> Result<CcmEstimate> {
    let a = steering(cfg, f, mean);
    CcmEstimate::new((&a * a.adjoint()) * C64::new(scale, 0.0), tag, link)
}

/// CF-iCCM closed form for a uniform PAS:
/// `[R]_{m,n} = e^{-j chi_mn cos(mean)} sinc(chi_mn delta sin(mean)) / M`.
pub fn cf_iccm_uniform(
    mean: f64,
    delta: f64,
    cfg: &ArrayConfig,
    f: f64,
    link: Link,
) -> Result<CcmEstimate> {
    if delta <= 0.0 {
        return rank_one(cfg, f, mean, 1.0, MethodTag::CfIccm, link);
    }
    let chi = cfg.chi(f);
    let (sin_m, cos_m) = mean.sin_cos();
    let col: Vec<C64> = (0..cfg.m)
        .map(|k| {
            let chi_k = k as f64 * chi;
            C64::from_polar(sinc(chi_k * delta * sin_m) / cfg.m as f64, -chi_k * cos_m)
        })
        .collect();
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::CfIccm, link)
}

/// CF-iCCM closed form for a truncated Laplacian PAS (exact integral of the
/// Taylor-linearized phase).
pub fn cf_iccm_laplacian(
    mean: f64,
    delta: f64,
    cfg: &ArrayConfig,
    f: f64,
    link: Link,
) -> Result<CcmEstimate> {
    if delta <= 0.0 {
        return rank_one(cfg, f, mean, 1.0, MethodTag::CfIccm, link);
    }
    let chi = cfg.chi(f);
    let (sin_m, cos_m) = mean.sin_cos();
    let e = (-std::f64::consts::SQRT_2).exp();
    let col: Vec<C64> = (0..cfg.m)
        .map(|k| {
            let chi_k = k as f64 * chi;
            let b = chi_k * delta * sin_m;
            let denom = 2.0 + b * b;
            let brace = 2.0 * std::f64::consts::SQRT_2 * (1.0 - e * b.cos())
                + 2.0 * e * b * b * sinc(b);
            let mag = brace / (std::f64::consts::SQRT_2 * cfg.m as f64 * denom);
            C64::from_polar(mag, -chi_k * cos_m)
        })
        .collect();
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::CfIccm, link)
}

/// MC-iCCM: deterministic trapezoid quadrature of the PAS integral (the name
/// follows the originating method; the integrator is deterministic for
/// reproducibility).
pub fn mc_iccm(
    model: &PasModel,
    cfg: &ArrayConfig,
    f: f64,
    quadrature_n: usize,
    link: Link,
) -> Result<CcmEstimate> {
    if model.spread == 0.0 {
        return rank_one(cfg, f, model.mean, 1.0, MethodTag::McIccm, link);
    }
    if quadrature_n < 2 {
        return Err(Error::contract("mc_iccm: quadrature N must be >= 2"));
    }
    let col = pas_quadrature_column(cfg, f, model, quadrature_n);
    CcmEstimate::new(hermitian_toeplitz(&col), MethodTag::McIccm, link)
}

/// Diagnostic beamspace spectrum: `s_l = f_l^H R f_l` for every DFT column.
pub fn beamspace_spectrum(r: &CcmEstimate) -> Vec<f64> {
    let m = r.dim();
    let f = dft_matrix(m).expect("M >= 1");
    (0..m)
        .map(|l| {
            let col: CVec = f.column(l).into_owned();
            (col.adjoint() * r.matrix() * col)[(0, 0)].re
        })
        .collect()
}

/// Context handed to a reconstruction scheme: everything extracted from one
/// coherence slot for one user, plus the priors a given scheme may use.
pub struct ReconContext<'a> {
    pub cfg: &'a ArrayConfig,
    /// Instantaneous per-angle gains (IC-pCCM input).
    pub grid: &'a GainGrid,
    /// Updated angle estimate (CF/MC input).
    pub estimate: &'a AngleEstimate,
    /// PAS family prior for CF/MC-iCCM.
    pub pas_kind: PasKind,
    /// Ground-truth model (TrueQuadrature only).
    pub true_model: &'a PasModel,
    /// Downlink PAS scaling factor.
    pub mu: f64,
    pub quadrature_n: usize,
}

/// A covariance reconstruction strategy selectable by name at runtime.
pub trait CcmScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn reconstruct(&self, link: Link, ctx: &ReconContext) -> Result<CcmEstimate>;
}

struct IcPccmScheme;
struct CfIccmScheme;
struct McIccmScheme;
struct TrueCcmScheme;

impl CcmScheme for IcPccmScheme {
    fn name(&self) -> &'static str {
        "ic-pccm"
    }

    fn reconstruct(&self, link: Link, ctx: &ReconContext) -> Result<CcmEstimate> {
        match link {
            Link::Uplink => ic_pccm(ctx.grid, ctx.cfg, ctx.cfg.f_u, link),
            Link::Downlink => infer_downlink(ctx.grid, ctx.cfg, ctx.mu),
        }
    }
}

impl CcmScheme for CfIccmScheme {
    fn name(&self) -> &'static str {
        "cf-iccm"
    }

    fn reconstruct(&self, link: Link, ctx: &ReconContext) -> Result<CcmEstimate> {
        let f = ctx.cfg.carrier(link);
        let (mean, delta) = (ctx.estimate.theta_mean, ctx.estimate.delta);
        let ccm = match ctx.pas_kind {
            PasKind::Uniform => cf_iccm_uniform(mean, delta, ctx.cfg, f, link)?,
            PasKind::Laplacian => cf_iccm_laplacian(mean, delta, ctx.cfg, f, link)?,
            PasKind::Tabulated { .. } => {
                return Err(Error::contract(
                    "cf-iccm: no closed form for a tabulated PAS",
                ))
            }
        };
        if link == Link::Downlink && ctx.mu != 1.0 {
            return CcmEstimate::new(
                ccm.matrix() * C64::new(ctx.mu, 0.0),
                MethodTag::CfIccm,
                link,
            );
        }
        Ok(ccm)
    }
}

impl CcmScheme for McIccmScheme {
    fn name(&self) -> &'static str {
        "mc-iccm"
    }

    fn reconstruct(&self, link: Link, ctx: &ReconContext) -> Result<CcmEstimate> {
        let model = PasModel::clamped(
            ctx.pas_kind.clone(),
            ctx.estimate.theta_mean,
            ctx.estimate.delta,
        );
        let ccm = mc_iccm(&model, ctx.cfg, ctx.cfg.carrier(link), ctx.quadrature_n, link)?;
        if link == Link::Downlink && ctx.mu != 1.0 {
            return CcmEstimate::new(
                ccm.matrix() * C64::new(ctx.mu, 0.0),
                MethodTag::McIccm,
                link,
            );
        }
        Ok(ccm)
    }
}

impl CcmScheme for TrueCcmScheme {
    fn name(&self) -> &'static str {
        "true-ccm"
    }

    fn reconstruct(&self, link: Link, ctx: &ReconContext) -> Result<CcmEstimate> {
        let scale = match link {
            Link::Uplink => 1.0,
            Link::Downlink => ctx.mu,
        };
        let ccm = crate::channel::true_ccm(
            ctx.cfg,
            ctx.cfg.carrier(link),
            ctx.true_model,
            ctx.quadrature_n,
        )?;
        if scale != 1.0 {
            return CcmEstimate::new(
                ccm.matrix() * C64::new(scale, 0.0),
                MethodTag::TrueQuadrature,
                link,
            );
        }
        Ok(ccm)
    }
}

static SCHEMES: &[&dyn CcmScheme] = &[
    &IcPccmScheme,
    &CfIccmScheme,
    &McIccmScheme,
    &TrueCcmScheme,
];

/// All registered reconstruction schemes.
pub fn registry() -> &'static [&'static dyn CcmScheme] {
    SCHEMES
}

/// Look a scheme up by its registry name.
pub fn lookup(name: &str) -> Option<&'static dyn CcmScheme> {
    SCHEMES.iter().copied().find(|s| s.name() == name)
}
