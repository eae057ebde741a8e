//! The Bayesian optimization loop for stationary, composite-kernel and
//! input-warping surrogates.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_acquisition, Incumbent};
use crate::benchmarks::Objective;
use crate::design::{DesignKind, InitialDesign};
use crate::error::{invalid, Error, Result};
use crate::hyperlearn::{posterior_samples, HyperModel, HyperSample, McmcConfig, ModelMode, SpartanSettings};
use crate::stats;
use crate::surrogate::{fit, ObservationSet, PosteriorSnapshot};

/// Acquisition evaluations per input dimension.
pub const ACQUISITION_EVALS_PER_DIM: usize = 2000;

// Independent random streams derived from one run seed. Design and objective
// streams do not depend on the method, which gives common random numbers.
const DESIGN_STREAM: u64 = 0;
const OBJECTIVE_STREAM: u64 = 1;
const ALGORITHM_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Stationary Matérn 5/2 ARD surrogate.
    Bo,
    /// Composite local/global kernel with a learned local center.
    Sbo,
    /// Beta-CDF input warping before a stationary kernel.
    Warp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bo => "bo",
            Method::Sbo => "sbo",
            Method::Warp => "warp",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bo" => Ok(Method::Bo),
            "sbo" => Ok(Method::Sbo),
            "warp" => Ok(Method::Warp),
            other => Err(format!("unknown method '{other}' (expected bo, sbo or warp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Total number of objective evaluations, initial design included.
    pub budget: usize,
    pub init_count: usize,
    pub init_kind: DesignKind,
    pub mcmc: McmcConfig,
    /// GP observation noise `σ²n`.
    pub noise: f64,
    pub spartan: SpartanSettings,
    /// EI evaluations per acquisition; `None` means `2000·d`.
    pub acquisition_budget: Option<usize>,
    pub seed: u64,
}

impl MethodConfig {
    /// Defaults for an objective: its standard budget, `p = 10` initial points
    /// for `d ≤ 8` (`2d` beyond), LHS design, and the objective's noise level.
    pub fn for_objective(method: Method, objective: &dyn Objective, seed: u64) -> Self {
        let d = objective.dim();
        Self {
            method,
            budget: objective.default_budget(),
            init_count: default_init_count(d),
            init_kind: DesignKind::Lhs,
            mcmc: McmcConfig::default(),
            noise: objective.default_noise(),
            spartan: SpartanSettings::default(),
            acquisition_budget: None,
            seed,
        }
    }

    pub fn model_mode(&self) -> ModelMode {
        match self.method {
            Method::Bo => ModelMode::Stationary,
            Method::Sbo => ModelMode::Spartan(self.spartan),
            Method::Warp => ModelMode::Warped,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_count == 0 {
            return invalid("initial design needs at least one point");
        }
        if self.budget < self.init_count {
            return invalid(format!(
                "budget {} is smaller than the initial design ({})",
                self.budget, self.init_count
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return invalid("noise must be non-negative");
        }
        self.mcmc.validate()
    }
}

pub fn default_init_count(dim: usize) -> usize {
    if dim <= 8 {
        10
    } else {
        2 * dim
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    /// 1-based evaluation index.
    pub iter: usize,
    pub x_native: Vec<f64>,
    pub y: f64,
    pub best_so_far: f64,
    /// Milliseconds since the run started.
    pub wall_ms: f64,
}

/// Mean local-region center over the MCMC samples of one BO iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperTraceRow {
    /// Evaluation index of the query chosen with these samples.
    pub iter: usize,
    pub theta_p_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub objective: String,
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<IterationRow>,
    pub x_best: Vec<f64>,
    pub y_best: f64,
    pub total_wall_ms: f64,
    pub hyper_trace: Vec<HyperTraceRow>,
    /// Set when the run stopped early on a degenerate posterior.
    pub aborted: Option<String>,
}

impl RunRecord {
    /// Best value after `evals` evaluations (clamped to the recorded length).
    pub fn best_at(&self, evals: usize) -> f64 {
        let i = evals.clamp(1, self.rows.len()) - 1;
        self.rows[i].best_so_far
    }

    pub fn best_trace(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best_so_far).collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct RunState<'a> {
    objective: &'a dyn Objective,
    obs: ObservationSet,
    rows: Vec<IterationRow>,
    noise_rng: ChaCha8Rng,
    start: Instant,
}

impl RunState<'_> {
    fn evaluate(&mut self, u: Vec<f64>) -> Result<()> {
        let x_native = self.objective.to_native(&u);
        let y = self.objective.evaluate(&x_native, &mut self.noise_rng)?;
        self.obs.push(u, y)?;
        let best_so_far = self.rows.last().map_or(y, |r| r.best_so_far.min(y));
        self.rows.push(IterationRow {
            iter: self.rows.len() + 1,
            x_native,
            y,
            best_so_far,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }
}

fn fit_mixture(
    samples: &[HyperSample],
    model: &HyperModel,
    obs: &ObservationSet,
) -> Vec<PosteriorSnapshot> {
    samples
        .par_iter()
        .filter_map(|s| {
            let spec = model.kernel_spec(s, obs).ok()?;
            fit(obs, &spec, model.noise).ok()
        })
        .collect()
}

/// Runs one Bayesian optimization on `objective` with `cfg`.
pub fn run(objective: &dyn Objective, cfg: &MethodConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let d = objective.dim();
    let mut design_rng = stream_rng(cfg.seed, DESIGN_STREAM);
    let mut algo_rng = stream_rng(cfg.seed, ALGORITHM_STREAM);
    let mut state = RunState {
        objective,
        obs: ObservationSet::new(d),
        rows: Vec::with_capacity(cfg.budget),
        noise_rng: stream_rng(cfg.seed, OBJECTIVE_STREAM),
        start: Instant::now(),
    };

    let design = InitialDesign { kind: cfg.init_kind, count: cfg.init_count, dim: d }
        .generate(&mut design_rng)?;
    for u in design {
        state.evaluate(u)?;
    }

    let model = HyperModel::new(cfg.model_mode(), d, cfg.noise);
    let learns_center = matches!(cfg.model_mode(), ModelMode::Spartan(s) if !s.pinned);
    let acq_budget = cfg.acquisition_budget.unwrap_or(ACQUISITION_EVALS_PER_DIM * d);
    let mut warm: Option<HyperSample> = None;
    let mut hyper_trace = Vec::new();
    let mut aborted = None;

    while state.obs.len() < cfg.budget {
        let drawn = posterior_samples(&state.obs, &model, &cfg.mcmc, warm.as_ref(), &mut algo_rng)
            .and_then(|s| {
                let posts = fit_mixture(&s, &model, &state.obs);
                if posts.is_empty() {
                    Err(Error::DegeneratePosterior("no sample produced a usable GP".into()))
                } else {
                    Ok((s, posts))
                }
            });
        let (samples, posteriors) = match drawn {
            Ok(v) => v,
            Err(Error::DegeneratePosterior(_)) => {
                // one retry from a fresh chain
                let retry = posterior_samples(&state.obs, &model, &cfg.mcmc, None, &mut algo_rng)
                    .map(|s| {
                        let posts = fit_mixture(&s, &model, &state.obs);
                        (s, posts)
                    });
                match retry {
                    Ok((s, p)) if !p.is_empty() => (s, p),
                    Ok(_) => {
                        aborted = Some(format!(
                            "degenerate posterior at evaluation {}: no usable GP after retry",
                            state.obs.len() + 1
                        ));
                        break;
                    }
                    Err(e) => {
                        aborted = Some(format!(
                            "degenerate posterior at evaluation {}: {e}",
                            state.obs.len() + 1
                        ));
                        break;
                    }
                }
            }
            Err(e) => return Err(e),
        };
        warm = samples.last().cloned();

        let inc = Incumbent::from_observations(&state.obs).expect("design is non-empty");
        let mut candidates = vec![inc.x_best.clone()];
        if learns_center {
            candidates.extend(samples.iter().map(|s| s.theta_p.clone()));
            let mut mean = vec![0.0; d];
            for s in &samples {
                for (m, p) in mean.iter_mut().zip(&s.theta_p) {
                    *m += p / samples.len() as f64;
                }
            }
            hyper_trace.push(HyperTraceRow { iter: state.obs.len() + 1, theta_p_mean: mean });
        }

        let acq = maximize_acquisition(&posteriors, &inc, &candidates, acq_budget, &mut algo_rng)?;
        let x_next = if acq.ei_value > 0.0 { acq.x_next } else { acq.max_variance_x };
        state.evaluate(x_next)?;
    }

    let best = state
        .rows
        .iter()
        .min_by(|a, b| a.y.total_cmp(&b.y).then(a.iter.cmp(&b.iter)))
        .expect("at least one evaluation");
    Ok(RunRecord {
        objective: objective.name(),
        method: cfg.method,
        seed: cfg.seed,
        x_best: best.x_native.clone(),
        y_best: best.y,
        total_wall_ms: state.start.elapsed().as_secs_f64() * 1e3,
        rows: state.rows,
        hyper_trace,
        aborted,
    })
}

/// Per-evaluation summary of `best_so_far` across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    /// Half-width of the 95% Student-t interval of the mean.
    pub ci95: Vec<f64>,
}

impl Aggregate {
    /// Runs shorter than the longest one carry their last incumbent forward.
    pub fn from_records(records: &[RunRecord]) -> Self {
        let len = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
        let mut agg = Aggregate { mean: vec![], median: vec![], ci95: vec![] };
        for i in 1..=len {
            let col: Vec<f64> = records.iter().map(|r| r.best_at(i)).collect();
            agg.mean.push(stats::mean(&col));
            agg.median.push(stats::median(&col));
            agg.ci95.push(stats::ci95_half_width(&col));
        }
        agg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRuns {
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Runs seeds `cfg.seed + r` for `r in 0..repeats`, in parallel on the current
/// rayon pool. Output order follows `r`.
pub fn run_repeated(objective: &dyn Objective, cfg: &MethodConfig, repeats: usize) -> Result<RepeatedRuns> {
    if repeats == 0 {
        return invalid("repeats must be at least 1");
    }
    let records = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = MethodConfig { seed: cfg.seed.wrapping_add(r), ..cfg.clone() };
            run(objective, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = Aggregate::from_records(&records);
    Ok(RepeatedRuns { records, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Branin, Gramacy};

    fn quick(method: Method, obj: &dyn Objective, budget: usize) -> MethodConfig {
        MethodConfig {
            budget,
            mcmc: McmcConfig { n_samples: 2, burn_in: 2, thin: 1, ..Default::default() },
            acquisition_budget: Some(200),
            ..MethodConfig::for_objective(method, obj, 3)
        }
    }

    #[test]
    fn budget_equal_to_design() {
        let cfg = quick(Method::Sbo, &Branin, 10);
        let rec = run(&Branin, &cfg).unwrap();
        assert_eq!(rec.rows.len(), 10);
        let min = rec.rows.iter().map(|r| r.y).fold(f64::INFINITY, f64::min);
        assert_eq!(rec.y_best, min);
        assert!(rec.hyper_trace.is_empty());
    }

    #[test]
    fn evaluates_exactly_the_budget() {
        for method in [Method::Bo, Method::Sbo, Method::Warp] {
            let rec = run(&Gramacy, &quick(method, &Gramacy, 13)).unwrap();
            assert_eq!(rec.rows.len(), 13);
            assert!(rec.aborted.is_none());
            assert!(rec.rows.windows(2).all(|w| w[1].best_so_far <= w[0].best_so_far));
            let expect_trace = if method == Method::Sbo { 3 } else { 0 };
            assert_eq!(rec.hyper_trace.len(), expect_trace);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = quick(Method::Bo, &Branin, 5);
        assert!(run(&Branin, &cfg).is_err());
        cfg.budget = 12;
        cfg.init_count = 0;
        assert!(run(&Branin, &cfg).is_err());
        assert!(run_repeated(&Branin, &quick(Method::Bo, &Branin, 11), 0).is_err());
    }

    #[test]
    fn single_repeat_aggregate_is_the_record() {
        let rr = run_repeated(&Branin, &quick(Method::Bo, &Branin, 11), 1).unwrap();
        assert_eq!(rr.aggregate.mean, rr.records[0].best_trace());
        assert_eq!(rr.aggregate.median, rr.records[0].best_trace());
        assert!(rr.aggregate.ci95.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("SBO".parse::<Method>().unwrap(), Method::Sbo);
        assert!("ucb".parse::<Method>().is_err());
    }
}
