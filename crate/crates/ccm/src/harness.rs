//! Scenario configuration, seeded Monte Carlo execution of the full
//! two-slot pipeline, metric aggregation and CSV emission.
//!
//! Determinism contract: every record is a pure function of the scenario
//! (including seed); per-trial randomness derives from a counter split of
//! the master seed, so worker count never changes the output bytes.

use std::io::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::{estimate_angles, AngleEstimate};
use crate::array::{ArrayConfig, Link};
use crate::channel::{
    complex_gaussian, redraw_phases, true_ccm, PasKind, PasModel, RayBasis, RaySet,
};
use crate::downlink::{downlink_training_with_noise, eigen_beamformer, mmse_downlink, Beamformer};
use crate::error::{Error, Result};
use crate::numerics::{dft_matrix, C64, CMat, CVec, EigenDecomposition};
use crate::pas::{angle_grid, default_grid_size, estimate_gains};
use crate::recon::{
    cf_iccm_laplacian, cf_iccm_uniform, ic_pccm, infer_downlink, mc_iccm, CcmEstimate, MethodTag,
};
use crate::scheduler::adma_group;
use crate::uplink::{group_observation, ls_preamble, mmse_uplink, sbem_estimate, TrainingConfig};

/// One multipath component per user; angles in degrees in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSpec {
    pub pas: String,
    pub mean_deg: f64,
    pub spread_deg: f64,
}

impl UserSpec {
    pub fn pas_kind(&self) -> Result<PasKind> {
        match self.pas.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PasKind::Uniform),
            "laplacian" => Ok(PasKind::Laplacian),
            other => Err(Error::Config(format!("unknown PAS kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    Snr,
    Spread,
    Nu,
}

impl SweepVar {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVar::Snr => "snr",
            SweepVar::Spread => "spread",
            SweepVar::Nu => "nu",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVar,
    pub values: Vec<f64>,
}

fn default_m() -> usize {
    128
}
fn default_f_u() -> f64 {
    2.0e9
}
fn default_f_d() -> f64 {
    2.1e9
}
fn default_snr() -> f64 {
    10.0
}
fn default_kappa() -> usize {
    16
}
fn default_nu() -> usize {
    16
}
fn default_methods() -> Vec<String> {
    ["ic-pccm", "cf-iccm", "mc-iccm", "true-ccm", "sbem"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_trials() -> usize {
    500
}
fn default_mu() -> f64 {
    1.0
}
fn default_quadrature() -> usize {
    2048
}
fn default_psi_grid() -> usize {
    64
}
fn default_rays() -> usize {
    256
}

/// Full experiment description; JSON-serializable. Angles in degrees,
/// frequencies in Hz, SNRs in dB.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_f_u")]
    pub f_u_hz: f64,
    #[serde(default = "default_f_d")]
    pub f_d_hz: f64,
    pub users: Vec<UserSpec>,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default = "default_nu")]
    pub nu: usize,
    /// Gain grid size; when absent, min(M, max(8, 4 kappa)).
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_n: usize,
    #[serde(default = "default_psi_grid")]
    pub psi_grid: usize,
    /// Ray count discretizing each user's PAS.
    #[serde(default = "default_rays")]
    pub rays: usize,
    /// Cosine-space guard between grouped users.
    #[serde(default)]
    pub guard_u: f64,
    /// Validate every covariance estimate (Hermitian/PSD) during runs.
    #[serde(default)]
    pub validate: bool,
}

/// Section IV defaults: M=128, f_u=2 GHz, 100 MHz carrier gap, two users
/// at 60 and 120 degrees with 10-degree uniform spread, kappa=nu=16.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        m: default_m(),
        f_u_hz: default_f_u(),
        f_d_hz: default_f_d(),
        users: vec![
            UserSpec {
                pas: "uniform".into(),
                mean_deg: 60.0,
                spread_deg: 10.0,
            },
            UserSpec {
                pas: "uniform".into(),
                mean_deg: 120.0,
                spread_deg: 10.0,
            },
        ],
        snr_db: default_snr(),
        kappa: default_kappa(),
        nu: default_nu(),
        l: None,
        methods: default_methods(),
        sweep: None,
        trials: default_trials(),
        seed: 1,
        mu: default_mu(),
        quadrature_n: default_quadrature(),
        psi_grid: default_psi_grid(),
        rays: default_rays(),
        guard_u: 0.0,
        validate: false,
    }
}

impl ScenarioConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_config()?;
        Ok(cfg)
    }

    pub fn validate_config(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Config("at least one user required".into()));
        }
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method required".into()));
        }
        for name in &self.methods {
            method_tag(name)?;
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be > 0".into()));
        }
        if self.quadrature_n < 2 {
            return Err(Error::Config("quadrature_n must be >= 2".into()));
        }
        if self.rays < 1 {
            return Err(Error::Config("rays must be >= 1".into()));
        }
        let array = self.array()?;
        self.training(self.nu, self.snr_db).validate(self.m)?;
        let _ = array;
        for u in &self.users {
            let kind = u.pas_kind()?;
            PasModel::new(kind, u.mean_deg.to_radians(), u.spread_deg.to_radians())?;
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep values must be non-empty".into()));
            }
            if s.variable == SweepVar::Nu {
                for &v in &s.values {
                    if v < 1.0 || v > self.m as f64 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("bad nu sweep value {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn array(&self) -> Result<ArrayConfig> {
        ArrayConfig::half_wavelength(self.m, self.f_u_hz, self.f_d_hz)
    }

    pub fn grid_size(&self) -> usize {
        self.l.unwrap_or_else(|| default_grid_size(self.m, self.kappa))
    }

    fn training(&self, nu: usize, snr_db: f64) -> TrainingConfig {
        let rho = 10f64.powf(snr_db / 10.0);
        TrainingConfig {
            rho_u: rho,
            rho_d: rho,
            kappa: self.kappa,
            nu,
            l: self.grid_size(),
        }
    }
}

fn method_tag(name: &str) -> Result<MethodTag> {
    match name.to_ascii_lowercase().as_str() {
        "ic-pccm" => Ok(MethodTag::IcPccm),
        "cf-iccm" => Ok(MethodTag::CfIccm),
        "mc-iccm" => Ok(MethodTag::McIccm),
        "true-ccm" => Ok(MethodTag::TrueQuadrature),
        "sbem" => Ok(MethodTag::Sbem),
        other => Err(Error::Config(format!("unknown method {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    EtaUl,
    EtaDl,
    NmseUl,
    NmseDl,
    Rank,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::EtaUl => "eta_ul",
            Metric::EtaDl => "eta_dl",
            Metric::NmseUl => "nmse_ul",
            Metric::NmseDl => "nmse_dl",
            Metric::Rank => "rank",
        }
    }
}

const METRICS: [Metric; 5] = [
    Metric::EtaUl,
    Metric::EtaDl,
    Metric::NmseUl,
    Metric::NmseDl,
    Metric::Rank,
];

/// Aggregated result for one (method, metric) at one sweep point, plus the
/// scenario context that makes the CSV row self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub method: MethodTag,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub metric: Metric,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub m: usize,
    pub f_u_hz: f64,
    pub f_d_hz: f64,
    pub snr_db: f64,
    pub nu: usize,
    pub kappa: usize,
    pub l: usize,
    pub pas_kind: String,
    pub as_deg: f64,
    pub seed: u64,
}

/// Subspace capture: `tr(B^H R B) / tr(R)`, requiring orthonormal `B`.
pub fn efficiency(r_true: &CcmEstimate, b: &CMat) -> Result<f64> {
    let nu = b.ncols();
    if b.nrows() != r_true.dim() {
        return Err(Error::dimension("efficiency: subspace rows != M"));
    }
    let gram = b.adjoint() * b;
    if (gram - CMat::identity(nu, nu)).norm() > 1e-8 * (nu as f64).sqrt().max(1.0) {
        return Err(Error::contract("efficiency: columns not orthonormal"));
    }
    let total = r_true.trace();
    if !(total > 0.0) {
        return Err(Error::Degenerate("efficiency: trace(R) <= 0".into()));
    }
    let captured = (b.adjoint() * r_true.matrix() * b).trace().re;
    let eta = captured / total;
    if !(-1e-9..=1.0 + 1e-9).contains(&eta) {
        return Err(Error::contract(format!("efficiency: eta {eta} outside [0,1]")));
    }
    Ok(eta.clamp(0.0, 1.0))
}

/// Per-user relative squared error.
pub fn nmse(h_true: &CVec, h_est: &CVec) -> Result<f64> {
    let p = h_true.norm_squared();
    if !(p > 0.0) {
        return Err(Error::Degenerate("nmse: zero true channel".into()));
    }
    if h_est.len() != h_true.len() {
        return Err(Error::dimension("nmse: length mismatch"));
    }
    Ok((h_est - h_true).norm_squared() / p)
}

/// One resolved sweep point.
#[derive(Debug, Clone)]
pub struct Point {
    pub index: usize,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub snr_db: f64,
    pub nu: usize,
    pub spread_deg_override: Option<f64>,
}

fn expand_points(cfg: &ScenarioConfig) -> Vec<Point> {
    match &cfg.sweep {
        None => vec![Point {
            index: 0,
            sweep_name: "none".into(),
            sweep_value: 0.0,
            snr_db: cfg.snr_db,
            nu: cfg.nu,
            spread_deg_override: None,
        }],
        Some(s) => s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| Point {
                index: i,
                sweep_name: s.variable.as_str().into(),
                sweep_value: v,
                snr_db: if s.variable == SweepVar::Snr { v } else { cfg.snr_db },
                nu: if s.variable == SweepVar::Nu { v as usize } else { cfg.nu },
                spread_deg_override: if s.variable == SweepVar::Spread {
                    Some(v)
                } else {
                    None
                },
            })
            .collect(),
    }
}

/// Per-point immutable state shared across trials: PAS models, ray bases,
/// true CCMs with precomputed eigendecompositions.
struct UserCache {
    kind: PasKind,
    ray_template: RaySet,
    basis_u: RayBasis,
    basis_d: RayBasis,
    true_ul: Arc<CcmEstimate>,
    true_dl: Arc<CcmEstimate>,
    true_rank: f64,
}

struct PointCache {
    array: ArrayConfig,
    users: Vec<UserCache>,
    dft: CMat,
}

/// Channel power is normalized to M times the PAS mass, so a linear SNR of
/// rho means per-antenna SNR rho against unit-variance noise.
fn build_cache(cfg: &ScenarioConfig, point: &Point) -> Result<PointCache> {
    let array = cfg.array()?;
    let mut users = Vec::with_capacity(cfg.users.len());
    for spec in &cfg.users {
        let spread = point.spread_deg_override.unwrap_or(spec.spread_deg);
        let model = PasModel::new(
            spec.pas_kind()?,
            spec.mean_deg.to_radians(),
            spread.to_radians(),
        )?;
        // Ray geometry is fixed per point; only phases change per slot.
        let mut geo_rng = ChaCha12Rng::seed_from_u64(0);
        let template = crate::channel::build_rays(&model, cfg.rays, &mut geo_rng)?
            .scaled_power(cfg.m as f64);
        let basis_u = RayBasis::new(&array, array.f_u, &template.angles);
        let basis_d = RayBasis::new(&array, array.f_d, &template.angles);
        let scale = C64::new(cfg.m as f64, 0.0);
        let base_ul = true_ccm(&array, array.f_u, &model, cfg.quadrature_n)?;
        let base_dl = true_ccm(&array, array.f_d, &model, cfg.quadrature_n)?;
        let true_ul = CcmEstimate::new(base_ul.matrix() * scale, MethodTag::TrueQuadrature, Link::Uplink)?;
        let true_dl = CcmEstimate::new(
            base_dl.matrix() * scale * C64::new(cfg.mu, 0.0),
            MethodTag::TrueQuadrature,
            Link::Downlink,
        )?;
        let true_rank = true_ul.power_rank(0.99) as f64;
        let _ = true_ul.eig();
        let _ = true_dl.eig();
        users.push(UserCache {
            kind: spec.pas_kind()?,
            ray_template: template,
            basis_u,
            basis_d,
            true_ul: Arc::new(true_ul),
            true_dl: Arc::new(true_dl),
            true_rank,
        });
    }
    let dft = dft_matrix(cfg.m)?;
    Ok(PointCache {
        array,
        users,
        dft,
    })
}

fn derive_seed(master: u64, trial: u64) -> u64 {
    let mut z = master
        ^ trial.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ 0xD6E8_FEB8_6659_FD93;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Best contiguous window of `width` beamspace bins (circularly) by energy
/// of the rotated estimate. The downlink training beams of the beamspace
/// truncation scheme cover the user's spatial band; a contiguous window
/// keeps single-snapshot noise from scattering that band.
fn contiguous_window(cache: &PointCache, h: &CVec, psi: f64, width: usize) -> Vec<usize> {
    let m = h.len();
    let rotated = crate::array::apply_rotation(h, psi);
    let beam = &cache.dft * rotated;
    let power: Vec<f64> = (0..m).map(|q| beam[q].norm_sqr()).collect();
    let width = width.min(m);
    let mut sum: f64 = power[..width].iter().sum();
    let mut best = sum;
    let mut start = 0usize;
    for s in 1..m {
        sum += power[(s + width - 1) % m] - power[s - 1];
        if sum > best {
            best = sum;
            start = s;
        }
    }
    (0..width).map(|i| (start + i) % m).collect()
}

/// SBEM's covariance surrogate: a diagonal beamspace model on the top-nu
/// rotated DFT bins of the estimate, with the eigendecomposition known by
/// construction.
fn sbem_ccm(
    cache: &PointCache,
    h_sbem: &CVec,
    psi: f64,
    nu: usize,
    link: Link,
) -> Result<CcmEstimate> {
    let m = h_sbem.len();
    let rotated = crate::array::apply_rotation(h_sbem, psi);
    let beam = &cache.dft * rotated;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        beam[b]
            .norm_sqr()
            .partial_cmp(&beam[a].norm_sqr())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(nu);
    let nu = order.len();
    // Bins are picked on the uplink beamspace. For the downlink the array
    // is electrically longer by f_d/f_u, so the selected band's spatial
    // frequencies scale by that ratio. The downlink set is a contiguous
    // window around the scaled power center so the stretched band is
    // covered without holes, each bin weighted by the power of the
    // nearest uplink source bin.
    let ratio = match link {
        Link::Uplink => 1.0,
        Link::Downlink => cache.array.f_d / cache.array.f_u,
    };
    let half = m as i64 / 2;
    let signed: Vec<f64> = order
        .iter()
        .map(|&q| (((q as i64 + half).rem_euclid(m as i64)) - half) as f64)
        .collect();
    let powers: Vec<f64> = order.iter().map(|&q| beam[q].norm_sqr()).collect();
    let mut bins: Vec<usize> = Vec::with_capacity(nu);
    let mut values = nalgebra::DVector::zeros(nu);
    if ratio == 1.0 {
        bins.extend_from_slice(&order);
        for c in 0..nu {
            values[c] = powers[c];
        }
    } else {
        let total: f64 = powers.iter().sum();
        let center: f64 = if total > 0.0 {
            signed.iter().zip(&powers).map(|(s, p)| s * p).sum::<f64>() / total
        } else {
            0.0
        };
        let start = (ratio * center - nu as f64 / 2.0).round() as i64;
        for i in 0..nu {
            let s_dl = (start + i as i64) as f64;
            let src = s_dl / ratio;
            let nearest = (0..nu)
                .min_by(|&a, &b| {
                    (signed[a] - src)
                        .abs()
                        .partial_cmp(&(signed[b] - src).abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            bins.push((start + i as i64).rem_euclid(m as i64) as usize);
            values[i] = powers[nearest];
        }
    }
    // Descending eigenvalues: subspace truncation keeps leading columns.
    let mut paired: Vec<(usize, f64)> = bins.iter().copied().zip(values.iter().copied()).collect();
    paired.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    for (c, &(q, p)) in paired.iter().enumerate() {
        bins[c] = q;
        values[c] = p;
    }
    let psi_link = psi * ratio;
    let mut vectors = CMat::zeros(m, nu);
    let mut matrix = CMat::zeros(m, m);
    for (c, &q) in bins.iter().enumerate() {
        // Phi^H F^H e_q columns stay orthonormal under the shared rotation.
        let col = crate::array::apply_rotation(&cache.dft.row(q).adjoint(), -psi_link);
        vectors.set_column(c, &col);
        matrix += (&col * col.adjoint()) * C64::new(values[c], 0.0);
    }
    let eig = EigenDecomposition { values, vectors };
    CcmEstimate::with_eig(matrix, eig, MethodTag::Sbem, link)
}

struct TrialOutput {
    /// (method, metric) -> user-averaged sample.
    samples: Vec<(MethodTag, Metric, f64)>,
}

fn run_trial(
    cfg: &ScenarioConfig,
    point: &Point,
    cache: &PointCache,
    trial: usize,
) -> Result<TrialOutput> {
    let array = &cache.array;
    let training = cfg.training(point.nu, point.snr_db);
    let n_users = cache.users.len();
    // Sweep points share per-trial seeds so curves over a swept parameter
    // see the same channel and noise draws (common random numbers).
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, trial as u64));

    let tags: Vec<MethodTag> = cfg.methods.iter().map(|n| method_tag(n).unwrap()).collect();

    // The scheme behind the beamspace truncation baseline demixes uplink
    // estimates with its kappa strongest bins, but trains the downlink on
    // nu beams covering the user's spatial band.
    let use_sbem = tags.contains(&MethodTag::Sbem);
    let sbem_width = point.nu.min(cfg.m);

    // Slot 0: per-user preamble training and angle acquisition.
    let mut est0: Vec<AngleEstimate> = Vec::with_capacity(n_users);
    let mut q_s: Vec<Vec<usize>> = Vec::new();
    for user in &cache.users {
        let rays = redraw_phases(&user.ray_template, &mut rng);
        let h0 = user.basis_u.synthesize(&rays);
        let h0_est = ls_preamble(&h0, training.rho_u, &mut rng)?;
        let est = estimate_angles(array, &h0_est, cfg.kappa, cfg.psi_grid)?;
        if use_sbem {
            q_s.push(contiguous_window(cache, &h0_est, est.psi, sbem_width));
        }
        est0.push(est);
    }
    let assignment = adma_group(&est0, cfg.guard_u)?;

    // Slot 1: fresh phases, shared within uplink/downlink of one user.
    let mut h1_u: Vec<CVec> = Vec::with_capacity(n_users);
    let mut h1_d: Vec<CVec> = Vec::with_capacity(n_users);
    for user in &cache.users {
        let rays = redraw_phases(&user.ray_template, &mut rng);
        h1_u.push(user.basis_u.synthesize(&rays));
        h1_d.push(user.basis_d.synthesize(&rays));
    }

    // Shared-pilot observation per group, demixed per user with the slot-0
    // angle parameters. The raw observation is kept: the multi-user MMSE
    // regularizes with every member's CCM, so its input is the mixed signal.
    let mut h_sbem: Vec<CVec> = vec![CVec::zeros(cfg.m); n_users];
    let mut h_sbem_s: Vec<CVec> = if use_sbem {
        vec![CVec::zeros(cfg.m); n_users]
    } else {
        Vec::new()
    };
    let mut group_obs: Vec<CVec> = Vec::with_capacity(assignment.groups.len());
    for group in &assignment.groups {
        let members: Vec<&CVec> = group.iter().map(|&u| &h1_u[u]).collect();
        let obs = group_observation(&members, training.rho_u, &mut rng)?;
        for &u in group {
            h_sbem[u] = sbem_estimate(array, &obs, est0[u].psi, &est0[u].q)?;
            if use_sbem {
                h_sbem_s[u] = sbem_estimate(array, &obs, est0[u].psi, &q_s[u])?;
            }
        }
        group_obs.push(obs);
    }

    // Downlink training noise, one draw per user shared across methods so
    // method comparisons are paired.
    let dl_noise: Vec<CVec> = (0..n_users)
        .map(|_| complex_gaussian(point.nu, &mut rng))
        .collect();

    // Angle update from the demixed estimates.
    let mut est1: Vec<AngleEstimate> = Vec::with_capacity(n_users);
    for h in &h_sbem {
        est1.push(estimate_angles(array, h, cfg.kappa, cfg.psi_grid)?);
    }

    // Instantaneous gain grids.
    let grid_l = cfg.grid_size();
    let grids: Vec<crate::pas::GainGrid> = (0..n_users)
        .map(|u| {
            let angles = angle_grid(est1[u].theta_mean, est1[u].delta, grid_l)?;
            estimate_gains(array, &h_sbem[u], est1[u].psi, &angles)
        })
        .collect::<Result<_>>()?;

    // Per-method pass: uplink CCMs for every user first (the group MMSE
    // needs all of them), then metrics per user.
    let mut samples = Vec::with_capacity(tags.len() * METRICS.len());
    for &tag in &tags {
        let mut ul_ccms: Vec<CcmEstimate> = Vec::with_capacity(n_users);
        let mut dl_ccms: Vec<CcmEstimate> = Vec::with_capacity(n_users);
        for u in 0..n_users {
            let user = &cache.users[u];
            let (mean, delta) = (est1[u].theta_mean, est1[u].delta);
            let power = h_sbem[u].norm_squared();
            let (ul, dl) = match tag {
                MethodTag::IcPccm => (
                    ic_pccm(&grids[u], array, array.f_u, Link::Uplink)?,
                    infer_downlink(&grids[u], array, cfg.mu)?,
                ),
                MethodTag::CfIccm => {
                    let build = |f, link| match user.kind {
                        PasKind::Uniform => cf_iccm_uniform(mean, delta, array, f, link),
                        PasKind::Laplacian => cf_iccm_laplacian(mean, delta, array, f, link),
                        PasKind::Tabulated { .. } => Err(Error::contract(
                            "cf-iccm: no closed form for a tabulated PAS",
                        )),
                    };
                    (
                        rescale(build(array.f_u, Link::Uplink)?, power)?,
                        rescale(build(array.f_d, Link::Downlink)?, power * cfg.mu)?,
                    )
                }
                MethodTag::McIccm => {
                    let model = PasModel::clamped(user.kind.clone(), mean, delta);
                    (
                        rescale(
                            mc_iccm(&model, array, array.f_u, cfg.quadrature_n, Link::Uplink)?,
                            power,
                        )?,
                        rescale(
                            mc_iccm(&model, array, array.f_d, cfg.quadrature_n, Link::Downlink)?,
                            power * cfg.mu,
                        )?,
                    )
                }
                MethodTag::TrueQuadrature => (
                    CcmEstimate::clone(&user.true_ul),
                    CcmEstimate::clone(&user.true_dl),
                ),
                MethodTag::Sbem => (
                    sbem_ccm(cache, &h_sbem[u], est0[u].psi, sbem_width, Link::Uplink)?,
                    sbem_ccm(cache, &h_sbem_s[u], est0[u].psi, sbem_width, Link::Downlink)?,
                ),
                MethodTag::SampleAverage => {
                    return Err(Error::contract("sample-average is not a pipeline method"))
                }
            };
            if cfg.validate {
                ul.validate_psd(1e-10)?;
                dl.validate_psd(1e-10)?;
            }
            ul_ccms.push(ul);
            dl_ccms.push(dl);
        }

        let mut acc = [0.0f64; 5];
        for u in 0..n_users {
            let user = &cache.users[u];
            // Uplink estimate: SBEM keeps its truncated estimate, everything
            // else runs the group MMSE with its own reconstructions.
            let h_hat_u = if tag == MethodTag::Sbem {
                h_sbem[u].clone()
            } else {
                let group_idx = assignment.group_of(u).expect("user grouped");
                let group = &assignment.groups[group_idx];
                let own = group.iter().position(|&g| g == u).expect("member");
                let ccms: Vec<&CcmEstimate> = group.iter().map(|&g| &ul_ccms[g]).collect();
                mmse_uplink(&group_obs[group_idx], own, &ccms, training.rho_u, point.nu)?
            };
            acc[2] += nmse(&h1_u[u], &h_hat_u)?;

            // Downlink: eigen-beamformers of each group member's own
            // reconstruction, superimposed training, MMSE back at the BS.
            let group_idx = assignment.group_of(u).expect("user grouped");
            let group = &assignment.groups[group_idx];
            let beams: Vec<Beamformer> = group
                .iter()
                .map(|&g| eigen_beamformer(&dl_ccms[g], point.nu, g))
                .collect::<Result<_>>()?;
            let beam_refs: Vec<&Beamformer> = beams.iter().collect();
            let obs = downlink_training_with_noise(
                &h1_d[u],
                &beam_refs,
                training.rho_d,
                &dl_noise[u],
            )?;
            let own_beam = group.iter().position(|&g| g == u).expect("member");
            let h_hat_d = mmse_downlink(&obs, &dl_ccms[u], &beam_refs, training.rho_d)?;
            acc[3] += nmse(&h1_d[u], &h_hat_d)?;

            // Efficiencies against the cached true CCMs.
            let (v_ul, _) = ul_ccms[u].truncate(point.nu)?;
            acc[0] += efficiency(&user.true_ul, &v_ul)?;
            acc[1] += efficiency(&user.true_dl, &beams[own_beam].columns)?;

            acc[4] += if tag == MethodTag::TrueQuadrature {
                user.true_rank
            } else {
                ul_ccms[u].power_rank(0.99) as f64
            };
        }
        for (metric, &total) in METRICS.iter().zip(&acc) {
            samples.push((tag, *metric, total / n_users as f64));
        }
    }
    Ok(TrialOutput { samples })
}

fn rescale(ccm: CcmEstimate, target_trace: f64) -> Result<CcmEstimate> {
    let t = ccm.trace();
    if !(t > 0.0) {
        return Err(Error::Degenerate("rescale: nonpositive trace".into()));
    }
    CcmEstimate::new(
        ccm.matrix() * C64::new(target_trace / t, 0.0),
        ccm.method,
        ccm.link,
    )
}

fn aggregate(
    cfg: &ScenarioConfig,
    point: &Point,
    outputs: &[TrialOutput],
) -> Vec<MetricsRecord> {
    let tags: Vec<MethodTag> = cfg.methods.iter().map(|n| method_tag(n).unwrap()).collect();
    let first_user = &cfg.users[0];
    let as_deg = point
        .spread_deg_override
        .unwrap_or(first_user.spread_deg);
    let mut records = Vec::new();
    for &tag in &tags {
        for metric in METRICS {
            let values: Vec<f64> = outputs
                .iter()
                .flat_map(|o| {
                    o.samples
                        .iter()
                        .filter(|(t, m, _)| *t == tag && *m == metric)
                        .map(|(_, _, v)| *v)
                })
                .collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            records.push(MetricsRecord {
                method: tag,
                sweep_name: point.sweep_name.clone(),
                sweep_value: point.sweep_value,
                metric,
                mean,
                stderr,
                trials: n,
                m: cfg.m,
                f_u_hz: cfg.f_u_hz,
                f_d_hz: cfg.f_d_hz,
                snr_db: point.snr_db,
                nu: point.nu,
                kappa: cfg.kappa,
                l: cfg.grid_size(),
                pas_kind: first_user.pas.clone(),
                as_deg,
                seed: cfg.seed,
            });
        }
    }
    records
}

/// Run every sweep point; trials run in parallel on `workers` threads, and
/// the records are byte-reproducible for any worker count.
pub fn run_sweep(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<MetricsRecord>> {
    cfg.validate_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut records = Vec::new();
    for point in expand_points(cfg) {
        let cache = build_cache(cfg, &point)?;
        let outputs: Vec<TrialOutput> = pool.install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    run_trial(cfg, &point, &cache, trial).map_err(|e| {
                        Error::Contract(format!(
                            "point {} trial {trial}: {e}",
                            point.index
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        records.extend(aggregate(cfg, &point, &outputs));
    }
    Ok(records)
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// UTF-8 CSV, one row per record, floats with 9 significant digits.
pub fn write_csv(records: &[MetricsRecord], out: &mut impl std::io::Write) -> Result<()> {
    let mut w = |line: String| -> Result<()> {
        out.write_all(line.as_bytes()).map_err(|source| Error::Io {
            path: "<csv output>".into(),
            source,
        })
    };
    w("method,sweep_name,sweep_value,metric,mean,stderr,trials,M,f_u_hz,f_d_hz,snr_db,nu,kappa,L,pas_kind,as_deg,seed\n".into())?;
    for r in records {
        w(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.sweep_name,
            fmt9(r.sweep_value),
            r.metric.as_str(),
            fmt9(r.mean),
            fmt9(r.stderr),
            r.trials,
            r.m,
            fmt9(r.f_u_hz),
            fmt9(r.f_d_hz),
            fmt9(r.snr_db),
            r.nu,
            r.kappa,
            r.l,
            r.pas_kind,
            fmt9(r.as_deg),
            r.seed,
        ))?;
    }
    Ok(())
}

pub fn write_csv_file(records: &[MetricsRecord], path: &std::path::Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(records, &mut file)?;
    file.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Invariant run: 200 trials of the default scenario with full validation
/// of every covariance estimate, efficiency range and steering norms.
pub fn selftest(workers: usize) -> Result<()> {
    let mut cfg = default_scenario();
    cfg.trials = 200;
    cfg.validate = true;
    let array = cfg.array()?;
    for deg in [10.0_f64, 45.0, 90.0, 135.0, 170.0] {
        let a = crate::array::steering(&array, array.f_u, deg.to_radians());
        if (a.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::contract("selftest: steering vector not unit-norm"));
        }
    }
    let records = run_sweep(&cfg, workers)?;
    for r in &records {
        if !r.mean.is_finite() {
            return Err(Error::contract(format!(
                "selftest: non-finite mean for {} {}",
                r.method.as_str(),
                r.metric.as_str()
            )));
        }
        match r.metric {
            Metric::EtaUl | Metric::EtaDl => {
                if !(0.0..=1.0).contains(&r.mean) {
                    return Err(Error::contract("selftest: eta outside [0,1]"));
                }
            }
            Metric::NmseUl | Metric::NmseDl => {
                if r.mean < 0.0 {
                    return Err(Error::contract("selftest: negative nmse"));
                }
            }
            Metric::Rank => {}
        }
    }
    Ok(())
}
