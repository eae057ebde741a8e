//! Command-line harness: run experiments and summarize their results.
//!
//! `run` writes one CSV per run under `<out>/<objective>/<method>/run<r>.csv`
//! and an `aggregate.json` per objective. `report` turns a results directory
//! into plot-ready `convergence.csv` files and prints a final-gap table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchmarks::{objective_by_name, Objective};
use crate::design::DesignKind;
use crate::driver::{run_repeated, Method, MethodConfig, RepeatedRuns};
use crate::hyperlearn::{McmcConfig, SpartanSettings};
use crate::stats;

/// Environment variable overriding the worker pool size.
pub const THREADS_ENV: &str = "SPARTAN_OPT_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spartan-opt", version, about = "Bayesian optimization benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Run repeated optimizations for one objective and a set of methods.
    Run(RunArgs),
    /// Summarize a results directory produced by `run`.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Key-value (TOML) experiment file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<String>,
    /// Comma-separated list of methods (bo, sbo, warp).
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub init_count: Option<usize>,
    /// lhs or sobol.
    #[arg(long)]
    pub init_kind: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub mcmc_samples: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// EI evaluations per acquisition (default 2000·d).
    #[arg(long)]
    pub acquisition_budget: Option<usize>,
    /// Worker threads (default: SPARTAN_OPT_THREADS, then the number of CPUs).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `run`.
    pub dir: PathBuf,
}

/// Declarative experiment description, as read from a config file.
///
/// Missing entries take the driver defaults for the chosen objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: Option<String>,
    pub methods: Option<Vec<Method>>,
    pub budget: Option<usize>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub init_count: Option<usize>,
    pub init_kind: Option<DesignKind>,
    pub noise: Option<f64>,
    pub acquisition_budget: Option<usize>,
    pub mcmc: Option<McmcConfig>,
    pub spartan: Option<SpartanSettings>,
}

pub const DEFAULT_REPEATS: usize = 20;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_OUT: &str = "results";

/// Fully resolved experiment, echoed into `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedExperiment {
    pub objective: String,
    pub repeats: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub methods: Vec<MethodConfig>,
}

/// Failure of a CLI command, mapped onto an exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or malformed input (exit 2).
    Usage(String),
    /// Objective or I/O failure while running (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("bad config: {e}")))
    }

    /// Overlays command-line flags.
    pub fn apply_flags(&mut self, args: &RunArgs) -> Result<(), CliError> {
        if let Some(o) = &args.objective {
            self.objective = Some(o.clone());
        }
        if let Some(ms) = &args.method {
            let methods = ms
                .iter()
                .map(|m| m.parse::<Method>().map_err(usage))
                .collect::<Result<Vec<_>, _>>()?;
            self.methods = Some(methods);
        }
        if let Some(k) = &args.init_kind {
            self.init_kind = Some(k.parse::<DesignKind>().map_err(usage)?);
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = args.$field.clone() { self.$field = Some(v); } )* };
        }
        take!(budget, repeats, seed, out, init_count, noise, acquisition_budget);
        if args.mcmc_samples.is_some() || args.burn_in.is_some() || args.thin.is_some() {
            let mut m = self.mcmc.unwrap_or_default();
            if let Some(v) = args.mcmc_samples {
                m.n_samples = v;
            }
            if let Some(v) = args.burn_in {
                m.burn_in = v;
            }
            if let Some(v) = args.thin {
                m.thin = v;
            }
            self.mcmc = Some(m);
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<(ResolvedExperiment, Box<dyn Objective>), CliError> {
        let name = self.objective.clone().ok_or_else(|| usage("no objective given"))?;
        let objective = objective_by_name(&name).map_err(|e| usage(e.to_string()))?;
        let methods = self.methods.clone().unwrap_or_else(|| vec![Method::Bo, Method::Sbo]);
        if methods.is_empty() {
            return Err(usage("no methods given"));
        }
        let repeats = self.repeats.unwrap_or(DEFAULT_REPEATS);
        if repeats == 0 {
            return Err(usage("repeats must be at least 1"));
        }
        let seed = self.seed.unwrap_or(DEFAULT_SEED);
        let mut configs = Vec::new();
        for m in &methods {
            let mut cfg = MethodConfig::for_objective(*m, objective.as_ref(), seed);
            if let Some(v) = self.budget {
                cfg.budget = v;
            }
            if let Some(v) = self.init_count {
                cfg.init_count = v;
            }
            if let Some(v) = self.init_kind {
                cfg.init_kind = v;
            }
            if let Some(v) = self.noise {
                cfg.noise = v;
            }
            if let Some(v) = self.mcmc {
                cfg.mcmc = v;
            }
            if let Some(v) = self.spartan {
                cfg.spartan = v;
            }
            if let Some(v) = self.acquisition_budget {
                cfg.acquisition_budget = Some(v);
            }
            cfg.validate().map_err(|e| usage(format!("bad config for {m}: {e}")))?;
            if cfg.acquisition_budget.is_some_and(|b| b < 100) {
                return Err(usage("acquisition budget must be at least 100"));
            }
            configs.push(cfg);
        }
        let resolved = ResolvedExperiment {
            objective: objective.name(),
            repeats,
            seed,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            methods: configs,
        };
        Ok((resolved, objective))
    }
}

/// Pool size: explicit flag, then `SPARTAN_OPT_THREADS`, then the CPU count.
pub fn pool_size(flag: Option<usize>) -> usize {
    flag.filter(|&n| n > 0)
        .or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// CSV body of one run: `iter,x_1..x_d,y,best`.
pub fn run_csv(rows: &[crate::driver::IterationRow], dim: usize) -> String {
    let mut s = String::from("iter");
    for j in 1..=dim {
        let _ = write!(s, ",x_{j}");
    }
    s.push_str(",y,best\n");
    for r in rows {
        let _ = write!(s, "{}", r.iter);
        for v in &r.x_native {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{},{}", r.y, r.best_so_far);
    }
    s
}

#[derive(Debug, Serialize)]
struct MethodSummary<'a> {
    seeds: Vec<u64>,
    mean: &'a [f64],
    median: &'a [f64],
    ci95: &'a [f64],
    final_best: Vec<f64>,
    total_wall_ms: Vec<f64>,
    aborted: Vec<Option<String>>,
}

#[derive(Debug, Serialize)]
struct AggregateFile<'a> {
    objective: &'a str,
    dim: usize,
    known_optimum: Option<f64>,
    config: &'a ResolvedExperiment,
    methods: BTreeMap<String, MethodSummary<'a>>,
    wall_time_ms: f64,
}

/// Executes `run`. Returns the resolved experiment on success.
pub fn cmd_run(args: &RunArgs) -> Result<ResolvedExperiment, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply_flags(args)?;
    let (exp, objective) = cfg.resolve()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_size(args.threads))
        .build()
        .map_err(|e| runtime(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<RepeatedRuns> = pool.install(|| {
        exp.methods
            .iter()
            .map(|m| run_repeated(objective.as_ref(), m, exp.repeats))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(|e| runtime(format!("run failed: {e}")))?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

    let obj_dir = exp.out.join(&exp.objective);
    let mut methods = BTreeMap::new();
    for (m, res) in exp.methods.iter().zip(&results) {
        let dir = obj_dir.join(m.method.as_str());
        fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        for (r, rec) in res.records.iter().enumerate() {
            let path = dir.join(format!("run{r}.csv"));
            fs::write(&path, run_csv(&rec.rows, objective.dim()))
                .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        methods.insert(
            m.method.as_str().to_string(),
            MethodSummary {
                seeds: res.records.iter().map(|r| r.seed).collect(),
                mean: &res.aggregate.mean,
                median: &res.aggregate.median,
                ci95: &res.aggregate.ci95,
                final_best: res.records.iter().map(|r| r.y_best).collect(),
                total_wall_ms: res.records.iter().map(|r| r.total_wall_ms).collect(),
                aborted: res.records.iter().map(|r| r.aborted.clone()).collect(),
            },
        );
    }
    let file = AggregateFile {
        objective: &exp.objective,
        dim: objective.dim(),
        known_optimum: objective.known_optimum(),
        config: &exp,
        methods,
        wall_time_ms,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| runtime(e.to_string()))? + "\n";
    let path = obj_dir.join("aggregate.json");
    fs::write(&path, json).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(exp)
}

/// Best-so-far column of one run CSV.
fn read_best_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| usage(format!("{} is empty", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"iter") || cols.last() != Some(&"best") {
        return Err(usage(format!("{} has an unexpected header", path.display())));
    }
    let mut best = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(usage(format!("{}: row {} has {} fields", path.display(), i + 1, fields.len())));
        }
        let v: f64 = fields[cols.len() - 1]
            .parse()
            .map_err(|_| usage(format!("{}: row {} is not numeric", path.display(), i + 1)))?;
        best.push(v);
    }
    if best.is_empty() {
        return Err(usage(format!("{} has no rows", path.display())));
    }
    Ok(best)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn run_index(path: &Path) -> Option<usize> {
    path.file_name()?.to_str()?.strip_prefix("run")?.strip_suffix(".csv")?.parse().ok()
}

/// Per-method convergence statistics of one objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConvergence {
    pub method: String,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub finals: Vec<f64>,
}

/// Reads every `<method>/run<r>.csv` below an objective directory.
pub fn load_convergence(obj_dir: &Path) -> Result<Vec<MethodConvergence>, CliError> {
    let mut out = Vec::new();
    for method_dir in sorted_entries(obj_dir)?.into_iter().filter(|p| p.is_dir()) {
        let mut runs: Vec<(usize, Vec<f64>)> = Vec::new();
        for f in sorted_entries(&method_dir)? {
            if let Some(r) = run_index(&f) {
                runs.push((r, read_best_column(&f)?));
            }
        }
        if runs.is_empty() {
            continue;
        }
        runs.sort_by_key(|(r, _)| *r);
        let len = runs.iter().map(|(_, b)| b.len()).max().unwrap_or(0);
        let mut mc = MethodConvergence {
            method: method_dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            runs: runs.len(),
            mean: vec![],
            ci_lo: vec![],
            ci_hi: vec![],
            finals: runs.iter().map(|(_, b)| *b.last().expect("non-empty")).collect(),
        };
        for i in 0..len {
            let col: Vec<f64> = runs.iter().map(|(_, b)| b[i.min(b.len() - 1)]).collect();
            let m = stats::mean(&col);
            let hw = stats::ci95_half_width(&col);
            mc.mean.push(m);
            mc.ci_lo.push(m - hw);
            mc.ci_hi.push(m + hw);
        }
        out.push(mc);
    }
    if out.is_empty() {
        return Err(usage(format!("no run CSVs below {}", obj_dir.display())));
    }
    Ok(out)
}

/// `iter`, then `<method>_mean,<method>_ci_lo,<method>_ci_hi` per method.
pub fn convergence_csv(methods: &[MethodConvergence]) -> String {
    let mut s = String::from("iter");
    for m in methods {
        let _ = write!(s, ",{0}_mean,{0}_ci_lo,{0}_ci_hi", m.method);
    }
    s.push('\n');
    let len = methods.iter().map(|m| m.mean.len()).max().unwrap_or(0);
    for i in 0..len {
        let _ = write!(s, "{}", i + 1);
        for m in methods {
            let j = i.min(m.mean.len() - 1);
            let _ = write!(s, ",{},{},{}", m.mean[j], m.ci_lo[j], m.ci_hi[j]);
        }
        s.push('\n');
    }
    s
}

/// Executes `report`. Returns the printed summary table.
pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    if !args.dir.is_dir() {
        return Err(usage(format!("{} is not a directory", args.dir.display())));
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<22} {:<6} {:>5} {:>14} {:>14} {:>14}",
        "objective", "method", "runs", "mean_final", "median_final", "median_gap"
    );
    let mut found = false;
    for obj_dir in sorted_entries(&args.dir)?.into_iter().filter(|p| p.is_dir()) {
        let has_methods = sorted_entries(&obj_dir)?
            .iter()
            .any(|m| m.is_dir() && sorted_entries(m).map(|v| v.iter().any(|f| run_index(f).is_some())).unwrap_or(false));
        if !has_methods {
            continue;
        }
        found = true;
        let name = obj_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let methods = load_convergence(&obj_dir)?;
        let path = obj_dir.join("convergence.csv");
        fs::write(&path, convergence_csv(&methods))
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        let optimum = objective_by_name(&name).ok().and_then(|o| o.known_optimum());
        for m in &methods {
            let med = stats::median(&m.finals);
            let gap = optimum.map_or("-".to_string(), |o| format!("{:.6e}", med - o));
            let _ = writeln!(
                table,
                "{:<22} {:<6} {:>5} {:>14.6e} {:>14.6e} {:>14}",
                name,
                m.method,
                m.runs,
                stats::mean(&m.finals),
                med,
                gap
            );
        }
    }
    if !found {
        return Err(usage(format!("no results found in {}", args.dir.display())));
    }
    print!("{table}");
    Ok(table)
}

/// Parses arguments, dispatches, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|exp| {
            println!(
                "wrote {} method(s) x {} run(s) to {}",
                exp.methods.len(),
                exp.repeats,
                exp.out.join(&exp.objective).display()
            );
        }),
        Command::Report(a) => cmd_report(a).map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::IterationRow;

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
            objective = "branin"
            methods = ["bo", "sbo"]
            budget = 12
            repeats = 2
            seed = 7
            init_kind = "sobol"

            [mcmc]
            n_samples = 3
            burn_in = 4

            [spartan]
            local_variance = { adaptive = { k_loc = 6 } }
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let (exp, obj) = cfg.resolve().unwrap();
        assert_eq!(obj.name(), "branin");
        assert_eq!(exp.methods.len(), 2);
        assert_eq!(exp.methods[1].mcmc.n_samples, 3);
        assert_eq!(exp.methods[1].mcmc.thin, 10);
        assert_eq!(exp.methods[0].init_kind, DesignKind::Sobol);
        assert_eq!(
            exp.methods[1].spartan.local_variance,
            crate::hyperlearn::LocalVariance::Adaptive { k_loc: 6 }
        );
    }

    #[test]
    fn bad_configs_are_usage_errors() {
        assert!(matches!(ExperimentConfig::from_toml("budget = \"x\""), Err(CliError::Usage(_))));
        assert!(matches!(ExperimentConfig::from_toml("colour = 1"), Err(CliError::Usage(_))));
        let no_obj = ExperimentConfig::default();
        assert!(matches!(no_obj.resolve(), Err(CliError::Usage(_))));
        let tiny = ExperimentConfig { objective: Some("branin".into()), budget: Some(3), ..Default::default() };
        assert_eq!(tiny.resolve().err().unwrap().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = ExperimentConfig::from_toml("objective = \"gramacy\"\nbudget = 30").unwrap();
        let args = RunArgs {
            objective: Some("michalewicz-d5-m10".into()),
            method: Some(vec!["warp".into()]),
            budget: Some(25),
            burn_in: Some(7),
            ..Default::default()
        };
        cfg.apply_flags(&args).unwrap();
        let (exp, obj) = cfg.resolve().unwrap();
        assert_eq!(obj.dim(), 5);
        assert_eq!(exp.objective, "michalewicz-d5-m10");
        assert_eq!(exp.methods[0].method, Method::Warp);
        assert_eq!(exp.methods[0].budget, 25);
        assert_eq!(exp.methods[0].mcmc.burn_in, 7);
    }

    #[test]
    fn run_csv_schema() {
        let rows = vec![IterationRow { iter: 1, x_native: vec![0.5, -1.25], y: 0.1, best_so_far: 0.1, wall_ms: 3.0 }];
        let csv = run_csv(&rows, 2);
        assert_eq!(csv, "iter,x_1,x_2,y,best\n1,0.5,-1.25,0.1,0.1\n");
    }

    #[test]
    fn convergence_schema() {
        let m = |name: &str| MethodConvergence {
            method: name.into(),
            runs: 1,
            mean: vec![1.0],
            ci_lo: vec![1.0],
            ci_hi: vec![1.0],
            finals: vec![1.0],
        };
        let csv = convergence_csv(&[m("bo"), m("sbo")]);
        assert_eq!(
            csv.lines().next().unwrap(),
            "iter,bo_mean,bo_ci_lo,bo_ci_hi,sbo_mean,sbo_ci_lo,sbo_ci_hi"
        );
    }

    #[test]
    fn pool_size_prefers_flag() {
        assert_eq!(pool_size(Some(3)), 3);
        assert!(pool_size(None) >= 1);
    }
}
