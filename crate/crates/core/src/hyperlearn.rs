//! Hyperparameter priors and slice-sampling MCMC over kernel hyperparameters.
//!
//! Length-scales and warp shapes are sampled in log space. The local-region
//! center lives in the unit hypercube and is kept there by reflecting slice
//! proposals at the box faces.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{
    adaptive_local_variance, KernelSpec, LengthScales, SpartanWeightConfig, DEFAULT_PSI,
    DEFAULT_SIGMA2_G, DEFAULT_SIGMA2_L,
};
use crate::surrogate::{fit, ObservationSet};
use crate::warp::WarpParams;

/// Median of the log-normal length-scale prior (normalized input units).
pub const LENGTH_SCALE_PRIOR_MEDIAN: f64 = 0.3;
/// Standard deviation of the length-scale prior in log space.
pub const LENGTH_SCALE_PRIOR_SD: f64 = 1.0;
/// Standard deviation of the log-normal prior on the warp shapes (median 1).
pub const WARP_PRIOR_SD: f64 = 0.75;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// How the variance of the local weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalVariance {
    Fixed(f64),
    /// Keep `k_loc` observations within `2σl` of the local center.
    Adaptive { k_loc: usize },
}

impl Default for LocalVariance {
    fn default() -> Self {
        LocalVariance::Fixed(DEFAULT_SIGMA2_L)
    }
}

/// Settings of the composite kernel that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpartanSettings {
    pub psi: f64,
    pub sigma2_g: f64,
    pub local_variance: LocalVariance,
    /// Ties the local kernel to the global one (`θl = θg`, `θp = ψ`, `σ²l = σ²g`),
    /// which turns the composite kernel into its plain global component.
    pub pinned: bool,
}

impl Default for SpartanSettings {
    fn default() -> Self {
        Self {
            psi: DEFAULT_PSI,
            sigma2_g: DEFAULT_SIGMA2_G,
            local_variance: LocalVariance::default(),
            pinned: false,
        }
    }
}

/// Which surrogate family the hyperparameters parameterize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelMode {
    /// Single Matérn 5/2 ARD kernel.
    Stationary,
    Spartan(SpartanSettings),
    /// Matérn 5/2 ARD on Beta-CDF warped inputs.
    Warped,
}

/// One MCMC draw of the kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSample {
    /// Log length-scales of the global (or only) kernel.
    pub global_scales: Vec<f64>,
    /// Log length-scales of the local kernel.
    pub local_scales: Vec<f64>,
    /// Local region center in the unit hypercube.
    pub theta_p: Vec<f64>,
    /// Log warp shapes, `[ln α_1..ln α_d, ln β_1..ln β_d]`.
    pub warp_params: Vec<f64>,
}

impl HyperSample {
    pub fn coordinate_count(&self) -> usize {
        self.global_scales.len() + self.local_scales.len() + self.theta_p.len() + self.warp_params.len()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.coordinate_count());
        v.extend_from_slice(&self.global_scales);
        v.extend_from_slice(&self.local_scales);
        v.extend_from_slice(&self.theta_p);
        v.extend_from_slice(&self.warp_params);
        v
    }
}

/// MCMC schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    /// Sweeps between retained samples.
    pub thin: usize,
    /// Initial slice bracket width.
    pub step_width: f64,
    pub max_stepout: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { n_samples: 10, burn_in: 100, thin: 10, step_width: 1.0, max_stepout: 10 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return invalid("n_samples must be at least 1");
        }
        if self.thin == 0 {
            return invalid("thin must be at least 1");
        }
        if !(self.step_width.is_finite() && self.step_width > 0.0) {
            return invalid("step_width must be positive");
        }
        Ok(())
    }
}

/// Maps a flat coordinate vector to and from kernels for one model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperModel {
    pub mode: ModelMode,
    pub dim: usize,
    pub noise: f64,
}

impl HyperModel {
    pub fn new(mode: ModelMode, dim: usize, noise: f64) -> Self {
        Self { mode, dim, noise }
    }

    fn learns_local(&self) -> bool {
        matches!(self.mode, ModelMode::Spartan(s) if !s.pinned)
    }

    /// Number of sampled coordinates (`d` plain or pinned, `3d` otherwise).
    pub fn coordinate_count(&self) -> usize {
        match self.mode {
            ModelMode::Stationary => self.dim,
            ModelMode::Spartan(s) if s.pinned => self.dim,
            ModelMode::Spartan(_) | ModelMode::Warped => 3 * self.dim,
        }
    }

    /// Per-coordinate support; `None` means the whole real line.
    pub fn bounds(&self) -> Vec<Option<(f64, f64)>> {
        let d = self.dim;
        let mut b = vec![None; self.coordinate_count()];
        if self.learns_local() {
            for slot in &mut b[2 * d..3 * d] {
                *slot = Some((0.0, 1.0));
            }
        }
        b
    }

    /// Prior median: length-scales at the prior median, centered local region,
    /// identity warps.
    pub fn prior_median(&self) -> HyperSample {
        let d = self.dim;
        let ls = vec![LENGTH_SCALE_PRIOR_MEDIAN.ln(); d];
        match self.mode {
            ModelMode::Stationary => self.sample_from_parts(ls, vec![], vec![], vec![]),
            ModelMode::Spartan(s) if s.pinned => self.sample_from_parts(ls, vec![], vec![], vec![]),
            ModelMode::Spartan(_) => self.sample_from_parts(ls.clone(), ls, vec![0.5; d], vec![]),
            ModelMode::Warped => self.sample_from_parts(ls, vec![], vec![], vec![0.0; 2 * d]),
        }
    }

    /// Independent draw from the prior.
    pub fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperSample {
        let mut v = self.prior_median().to_vector();
        let bounds = self.bounds();
        let d = self.dim;
        for (i, x) in v.iter_mut().enumerate() {
            if bounds[i].is_some() {
                *x = rng.random();
            } else {
                let sd = if matches!(self.mode, ModelMode::Warped) && i >= d {
                    WARP_PRIOR_SD
                } else {
                    LENGTH_SCALE_PRIOR_SD
                };
                *x += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.sample_from_vector(&v).expect("prior draw has the model's layout")
    }

    fn sample_from_parts(&self, g: Vec<f64>, l: Vec<f64>, p: Vec<f64>, w: Vec<f64>) -> HyperSample {
        HyperSample { global_scales: g, local_scales: l, theta_p: p, warp_params: w }
    }

    pub fn sample_from_vector(&self, v: &[f64]) -> Result<HyperSample> {
        if v.len() != self.coordinate_count() {
            return invalid(format!(
                "hyperparameter vector has {} entries, model expects {}",
                v.len(),
                self.coordinate_count()
            ));
        }
        let d = self.dim;
        Ok(match self.mode {
            ModelMode::Stationary => self.sample_from_parts(v.to_vec(), vec![], vec![], vec![]),
            ModelMode::Spartan(s) if s.pinned => {
                self.sample_from_parts(v.to_vec(), vec![], vec![], vec![])
            }
            ModelMode::Spartan(_) => self.sample_from_parts(
                v[..d].to_vec(),
                v[d..2 * d].to_vec(),
                v[2 * d..].to_vec(),
                vec![],
            ),
            ModelMode::Warped => {
                self.sample_from_parts(v[..d].to_vec(), vec![], vec![], v[d..].to_vec())
            }
        })
    }

    /// Log prior density of a sample (in its sampled coordinates).
    pub fn log_prior(&self, s: &HyperSample) -> f64 {
        let ls_mean = LENGTH_SCALE_PRIOR_MEDIAN.ln();
        let mut lp: f64 = s
            .global_scales
            .iter()
            .chain(&s.local_scales)
            .map(|&u| normal_log_pdf(u, ls_mean, LENGTH_SCALE_PRIOR_SD))
            .sum();
        if s.theta_p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return f64::NEG_INFINITY;
        }
        lp += s
            .warp_params
            .iter()
            .map(|&u| normal_log_pdf(u, 0.0, WARP_PRIOR_SD))
            .sum::<f64>();
        lp
    }

    /// Kernel induced by a sample. `obs` feeds the adaptive local variance.
    pub fn kernel_spec(&self, s: &HyperSample, obs: &ObservationSet) -> Result<KernelSpec> {
        let d = self.dim;
        let global = scales_from_log(&s.global_scales)?;
        match self.mode {
            ModelMode::Stationary => Ok(KernelSpec::Matern52(global)),
            ModelMode::Spartan(cfg) if cfg.pinned => {
                let psi = vec![cfg.psi; d];
                let weights = SpartanWeightConfig::new(psi.clone(), cfg.sigma2_g, cfg.sigma2_g, psi)?;
                KernelSpec::spartan(global.clone(), global, weights)
            }
            ModelMode::Spartan(cfg) => {
                let local = scales_from_log(&s.local_scales)?;
                let sigma2_l = match cfg.local_variance {
                    LocalVariance::Fixed(v) => v,
                    LocalVariance::Adaptive { k_loc } => {
                        adaptive_local_variance(&s.theta_p, obs.x(), k_loc)
                    }
                };
                let weights = SpartanWeightConfig::new(
                    vec![cfg.psi; d],
                    cfg.sigma2_g,
                    sigma2_l,
                    s.theta_p.clone(),
                )?;
                KernelSpec::spartan(global, local, weights)
            }
            ModelMode::Warped => {
                let w: Vec<f64> = s.warp_params.iter().map(|u| u.exp()).collect();
                KernelSpec::warped(global, WarpParams::new(w[..d].to_vec(), w[d..].to_vec())?)
            }
        }
    }

    /// Log marginal likelihood plus log prior; `-∞` outside the support or when
    /// the model cannot be factored.
    pub fn log_posterior(&self, s: &HyperSample, obs: &ObservationSet) -> f64 {
        let lp = self.log_prior(s);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        if obs.is_empty() {
            return lp;
        }
        let Ok(spec) = self.kernel_spec(s, obs) else {
            return f64::NEG_INFINITY;
        };
        match fit(obs, &spec, self.noise) {
            Ok(post) => {
                let v = post.log_marginal_likelihood() + lp;
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

fn scales_from_log(u: &[f64]) -> Result<LengthScales> {
    LengthScales::new(u.iter().map(|v| v.exp()).collect())
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Folds `x` into `[lo, hi]` by mirror reflection at the faces.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * w);
    lo + if t > w { 2.0 * w - t } else { t }
}

/// Coordinate-wise slice sampler with stepping out and shrinkage.
///
/// Runs `burn_in` full sweeps, then records the state after every `thin`
/// sweeps until `n_samples` states are retained.
pub fn slice_sample<F, R>(
    mut target: F,
    start: &[f64],
    bounds: &[Option<(f64, f64)>],
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if bounds.len() != start.len() {
        return invalid("bounds and start differ in length");
    }
    let mut x = start.to_vec();
    for (xi, b) in x.iter_mut().zip(bounds) {
        if let Some((lo, hi)) = *b {
            *xi = reflect(*xi, lo, hi);
        }
    }
    let mut fx = target(&x);
    if !fx.is_finite() {
        return invalid(format!("slice sampler target is not finite at the start ({fx})"));
    }

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let total = cfg.burn_in + cfg.n_samples * cfg.thin;
    for sweep in 1..=total {
        for (i, &bound) in bounds.iter().enumerate() {
            fx = slice_update(&mut target, &mut x, fx, i, bound, cfg, rng);
        }
        if sweep > cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thin) {
            samples.push(x.clone());
        }
    }
    Ok(samples)
}

fn slice_update<F, R>(
    target: &mut F,
    x: &mut [f64],
    fx: f64,
    i: usize,
    bound: Option<(f64, f64)>,
    cfg: &McmcConfig,
    rng: &mut R,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let x0 = x[i];
    let fold = |v: f64| match bound {
        Some((lo, hi)) => reflect(v, lo, hi),
        None => v,
    };
    let mut eval = |x: &mut [f64], v: f64| {
        x[i] = fold(v);
        let f = target(x);
        if f.is_nan() {
            f64::NEG_INFINITY
        } else {
            f
        }
    };

    let log_y = fx + (1.0 - rng.random::<f64>()).ln();
    let w = cfg.step_width;
    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    let mut j = (cfg.max_stepout as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = cfg.max_stepout.saturating_sub(1).saturating_sub(j);
    while j > 0 && eval(x, left) > log_y {
        left -= w;
        j -= 1;
    }
    while k > 0 && eval(x, right) > log_y {
        right += w;
        k -= 1;
    }

    loop {
        let x1 = left + rng.random::<f64>() * (right - left);
        let f1 = eval(x, x1);
        if f1 > log_y {
            return f1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if right - left < 1e-12 {
            x[i] = x0;
            return fx;
        }
    }
}

/// Draws `cfg.n_samples` hyperparameter samples for the current data.
///
/// The chain starts at `warm_start` when given (typically the last state of the
/// previous iteration's chain) and at the prior median otherwise.
pub fn posterior_samples<R: Rng + ?Sized>(
    obs: &ObservationSet,
    model: &HyperModel,
    cfg: &McmcConfig,
    warm_start: Option<&HyperSample>,
    rng: &mut R,
) -> Result<Vec<HyperSample>> {
    if obs.is_empty() {
        return invalid("posterior sampling needs at least one observation");
    }
    let target = |v: &[f64]| match model.sample_from_vector(v) {
        Ok(s) => model.log_posterior(&s, obs),
        Err(_) => f64::NEG_INFINITY,
    };

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        if w.coordinate_count() == model.coordinate_count() {
            candidates.push(w.to_vector());
        }
    }
    candidates.push(model.prior_median().to_vector());
    const PRIOR_RETRIES: usize = 20;
    let mut start = None;
    for c in candidates {
        if target(&c).is_finite() {
            start = Some(c);
            break;
        }
    }
    if start.is_none() {
        for _ in 0..PRIOR_RETRIES {
            let c = model.prior_draw(rng).to_vector();
            if target(&c).is_finite() {
                start = Some(c);
                break;
            }
        }
    }
    let Some(start) = start else {
        return Err(Error::DegeneratePosterior(
            "no hyperparameter setting with finite posterior density".into(),
        ));
    };

    let chain = slice_sample(target, &start, &model.bounds(), cfg, rng)?;
    chain.iter().map(|v| model.sample_from_vector(v)).collect()
}
