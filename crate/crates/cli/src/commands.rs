use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_like::Uniform;
use serde::Serialize;
use thiserror::Error;
use wave_core::agent::{train, write_episode_csv, EpisodeLog, TrainOptions, WaveConfig};
use wave_core::envs::Env;
use wave_core::par;
use wave_core::sinkhorn::{sinkhorn_distance, EmpiricalDistribution};
use wave_core::theory::{
    bellman_operator, contraction_sweep, convergence_rate_experiment, measure_contraction,
    regularized_bellman_operator, variance_experiment, write_contraction_csv, write_rate_csv, write_variance_csv,
    Operator, QTable, TabularMdp, VarianceArms,
};

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{unix_time, write_atomic, write_atomic_str};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad command line; clap reports these.
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const RUNTIME: i32 = 4;
    /// A verification check failed.
    pub const ACCEPTANCE: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("checks failed: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Runtime(_) => exit::RUNTIME,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Serialize)]
struct ManifestRun {
    arm: String,
    seed: u64,
    csv: PathBuf,
    status: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    started_unix: u64,
    finished_unix: Option<u64>,
    config: serde_json::Map<String, serde_json::Value>,
    runs: Vec<ManifestRun>,
}

fn config_map(cfg: &ExperimentConfig) -> serde_json::Map<String, serde_json::Value> {
    cfg.to_pairs().into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect()
}

fn write_manifest(path: &Path, m: &Manifest<'_>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).map_err(runtime)?;
    write_atomic_str(path, &(text + "\n"))?;
    Ok(())
}

/// Per-seed outcome of a training command.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub arm: String,
    pub seed: u64,
    pub csv: PathBuf,
    pub outcome: Result<SeedStats, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedStats {
    pub episodes: usize,
    pub final_return: f64,
    pub final_moving_avg: f64,
    pub best_moving_avg: f64,
    pub r_threshold: Option<f64>,
}

impl SeedStats {
    fn from_log(log: &[EpisodeLog], r_threshold: Option<f64>) -> Self {
        let last = log.last();
        Self {
            episodes: log.len(),
            final_return: last.map_or(f64::NAN, |r| r.ret),
            final_moving_avg: last.map_or(f64::NAN, |r| r.moving_avg_return),
            best_moving_avg: log.iter().map(|r| r.moving_avg_return).fold(f64::NEG_INFINITY, f64::max),
            r_threshold,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub results: Vec<SeedResult>,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

pub const SUMMARY_HEADER: &str = "arm,seed,episodes,final_return,final_moving_avg,best_moving_avg,r_threshold,status";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-seed rows, a `mean` row per arm, and for two arms a
/// `wave_minus_td3` row with the differences of the means.
pub fn summary_csv(results: &[SeedResult], arms: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SUMMARY_HEADER}");
    let mut means = Vec::new();
    for arm in arms {
        let mut ok = Vec::new();
        for r in results.iter().filter(|r| &r.arm == arm) {
            match &r.outcome {
                Ok(s) => {
                    let _ = writeln!(
                        out,
                        "{arm},{},{},{},{},{},{},ok",
                        r.seed,
                        s.episodes,
                        s.final_return,
                        s.final_moving_avg,
                        s.best_moving_avg,
                        fmt_opt(s.r_threshold)
                    );
                    ok.push(s.clone());
                }
                Err(e) => {
                    let _ = writeln!(out, "{arm},{},,,,,,failed: {}", r.seed, e.replace([',', '\n'], ";"));
                }
            }
        }
        if ok.is_empty() {
            means.push(None);
            continue;
        }
        let m = |f: fn(&SeedStats) -> f64| mean(&ok.iter().map(f).collect::<Vec<_>>());
        let row = (m(|s| s.episodes as f64), m(|s| s.final_return), m(|s| s.final_moving_avg), m(|s| s.best_moving_avg));
        let _ = writeln!(out, "{arm},mean,{},{},{},{},,{} of {} ok", row.0, row.1, row.2, row.3, ok.len(), results.iter().filter(|r| &r.arm == arm).count());
        means.push(Some(row));
    }
    if let (2, Some(Some(a)), Some(Some(b))) = (arms.len(), means.first(), means.get(1)) {
        let _ = writeln!(
            out,
            "{}_minus_{},mean,,{},{},{},,",
            arms[0],
            arms[1],
            a.1 - b.1,
            a.2 - b.2,
            a.3 - b.3
        );
    }
    out
}

/// Trains every seed of every arm, writing `<out>/<arm>/seed_<n>.csv`,
/// `summary.csv` and `manifest.json`. A failing seed is recorded and the
/// others continue; the command then reports a runtime error.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, ablate: bool, command: &str) -> Result<TrainReport, CliError> {
    let arms: Vec<(String, Option<WaveConfig>)> = if ablate {
        vec![("wave".into(), Some(cfg.wave.clone())), ("td3".into(), None)]
    } else if cfg.regularizer {
        vec![("wave".into(), Some(cfg.wave.clone()))]
    } else {
        vec![("td3".into(), None)]
    };
    std::fs::create_dir_all(out)?;
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let csv_path = |a: usize, s: u64| out.join(&arms[a].0).join(format!("seed_{s}.csv"));

    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest {
        tool: "wave",
        version: env!("CARGO_PKG_VERSION"),
        command,
        started_unix: unix_time(),
        finished_unix: None,
        config: config_map(cfg),
        runs: jobs
            .iter()
            .map(|&(a, s)| ManifestRun {
                arm: arms[a].0.clone(),
                seed: s,
                csv: csv_path(a, s),
                status: "pending".into(),
            })
            .collect(),
    };
    write_manifest(&manifest_path, &manifest)?;

    let env = Env::new(cfg.env);
    let results: Vec<SeedResult> = par::map(&jobs, |&(a, seed)| {
        let opts = TrainOptions {
            stop_at_moving_average: cfg.stop_at_moving_average,
            record_wall_time: cfg.record_wall_time,
            log_every: cfg.log_every,
            ..TrainOptions::new(cfg.episodes, seed)
        };
        let path = csv_path(a, seed);
        let outcome = train(&env, &cfg.td3, arms[a].1.as_ref(), &opts)
            .map_err(|e| e.to_string())
            .and_then(|o| {
                write_atomic(&path, |w| write_episode_csv(&o.log, w)).map_err(|e| e.to_string())?;
                if o.sinkhorn_not_converged > 0 {
                    log::warn!("{} seed {seed}: {} updates used an unconverged Sinkhorn plan", arms[a].0, o.sinkhorn_not_converged);
                }
                Ok(SeedStats::from_log(&o.log, o.r_threshold))
            });
        if let Err(e) = &outcome {
            log::error!("{} seed {seed} failed: {e}", arms[a].0);
        }
        SeedResult { arm: arms[a].0.clone(), seed, csv: path, outcome }
    });

    let names: Vec<String> = arms.iter().map(|a| a.0.clone()).collect();
    let summary = out.join("summary.csv");
    write_atomic_str(&summary, &summary_csv(&results, &names))?;
    for (run, r) in manifest.runs.iter_mut().zip(&results) {
        run.status = match &r.outcome {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        };
    }
    manifest.finished_unix = Some(unix_time());
    write_manifest(&manifest_path, &manifest)?;

    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.outcome.is_err())
        .map(|r| format!("{} seed {}", r.arm, r.seed))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!("training failed for {}", failed.join(", "))));
    }
    Ok(TrainReport { out_dir: out.to_path_buf(), results, summary, manifest: manifest_path })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Measured and reported, not asserted.
    Info,
}

impl Status {
    fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl Check {
    fn asserted(name: &'static str, ok: bool, detail: String) -> Self {
        Self { name, status: if ok { Status::Pass } else { Status::Fail }, detail }
    }
}

#[derive(Clone, Debug)]
pub struct TheoryOutcome {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl TheoryOutcome {
    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

/// Tolerances of the asserted theory checks.
pub const CONTRACTION_SLACK: f64 = 1e-9;
pub const SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);
pub const VARIANCE_RATIO_LIMIT: f64 = 1.1;

/// Runs the contraction, rate and (if enabled) variance experiments, writes
/// one CSV per experiment plus `theory_summary.txt`, and fails with
/// [`CliError::Acceptance`] if an asserted check fails.
pub fn run_verify_theory(cfg: &ExperimentConfig, out: &Path) -> Result<TheoryOutcome, CliError> {
    let th = &cfg.theory;
    let mut checks = Vec::new();
    let mut files = Vec::new();
    let bound = th.gamma + CONTRACTION_SLACK;

    // Standard operator over several MDPs.
    let mdps: Vec<TabularMdp> = (0..th.mdps as u64)
        .map(|s| TabularMdp::random(th.n_states, th.n_actions, th.gamma, s))
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    let mut worst: f64 = 0.0;
    for (i, mdp) in mdps.iter().enumerate() {
        let r = measure_contraction(mdp, &Operator::Standard, th.trials, i as u64).map_err(runtime)?;
        worst = worst.max(r.measured_factor);
    }
    checks.push(Check::asserted(
        "contraction.standard",
        worst <= bound,
        format!("largest sup-norm ratio {worst} over {} MDPs x {} pairs; gamma = {}", th.mdps, th.trials, th.gamma),
    ));

    // λ = 0 must reproduce the standard operator exactly.
    let mut mismatches = 0;
    let mut rng = rand_like::seeded(7);
    for mdp in &mdps {
        for _ in 0..th.trials.min(200) {
            let bound = mdp.value_bound();
            let q = QTable::random(mdp.n_states, mdp.n_actions, bound, &mut rng);
            let prev = QTable::random(mdp.n_states, mdp.n_actions, bound, &mut rng);
            let a = bellman_operator(mdp, &q).map_err(runtime)?;
            let b = regularized_bellman_operator(mdp, &q, &prev, 0.0, cfg.sinkhorn()).map_err(runtime)?;
            if a != b {
                mismatches += 1;
            }
        }
    }
    checks.push(Check::asserted(
        "contraction.lambda_zero",
        mismatches == 0,
        format!("{mismatches} tables differ from the standard operator at lambda = 0"),
    ));

    let sweep = contraction_sweep(&mdps[0], &th.lambdas, th.trials, 0, cfg.sinkhorn()).map_err(runtime)?;
    let path = out.join("contraction.csv");
    write_atomic(&path, |w| write_contraction_csv(&sweep, w))?;
    files.push(path);
    let factors: Vec<String> = sweep
        .regularized
        .iter()
        .map(|r| format!("{}: {:.6}", r.operator.lambda(), r.measured_factor))
        .collect();
    checks.push(Check {
        name: "contraction.sweep",
        status: Status::Info,
        detail: format!(
            "measured factor per lambda {{{}}}; standard {:.6}; fitted c = {}",
            factors.join(", "),
            sweep.standard.measured_factor,
            sweep.fitted_c.map_or("n/a".into(), |c| format!("{c:.6}"))
        ),
    });

    let rate = convergence_rate_experiment(&th.rate).map_err(runtime)?;
    let path = out.join("rate.csv");
    write_atomic(&path, |w| write_rate_csv(&rate, w))?;
    files.push(path);
    let slope = rate.fitted_slope;
    checks.push(Check::asserted(
        "rate.slope",
        slope.is_some_and(|s| (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s)),
        format!(
            "log-log slope {} over k >= 100 (accepted {:?}); fitted C = {}",
            slope.map_or("n/a".into(), |s| format!("{s:.4}")),
            SLOPE_RANGE,
            rate.fitted_c.map_or("n/a".into(), |c| format!("{c:.4}"))
        ),
    ));
    let violations = rate.bound_violations();
    checks.push(Check::asserted(
        "rate.bound",
        violations.is_empty(),
        format!(
            "measured MSE above the recursion bound at {} of {} logged steps (a = {}, m = {}, G = {})",
            violations.len(),
            rate.bound.len(),
            rate.a,
            rate.m,
            rate.g
        ),
    ));

    if th.variance {
        let env = Env::new(cfg.env);
        let arms = VarianceArms { on: Some(&cfg.wave), off: None };
        let report = variance_experiment(&env, &cfg.td3, arms, &cfg.seeds, th.variance_window).map_err(runtime)?;
        let path = out.join("variance.csv");
        write_atomic(&path, |w| write_variance_csv(&report, w))?;
        files.push(path);
        let ratio = report.median_ratio().unwrap_or(f64::NAN);
        checks.push(Check::asserted(
            "variance.ratio",
            ratio <= VARIANCE_RATIO_LIMIT,
            format!(
                "median Var(on)/Var(off) = {ratio:.4} over {} seeds, updates {}..{} (target <= 1.0, fails above {VARIANCE_RATIO_LIMIT})",
                report.pairs.len(),
                report.window.0,
                report.window.1
            ),
        ));
    }

    let mut text = String::new();
    for c in &checks {
        let _ = writeln!(text, "{} {}: {}", c.status.label(), c.name, c.detail);
    }
    let path = out.join("theory_summary.txt");
    write_atomic_str(&path, &text)?;
    files.push(path);
    print!("{text}");

    let outcome = TheoryOutcome { checks, files };
    let failed: Vec<&str> = outcome.failed().iter().map(|c| c.name).collect();
    if !failed.is_empty() {
        return Err(CliError::Acceptance(failed.join(", ")));
    }
    Ok(outcome)
}

pub const BENCH_HEADER: &str = "n,epsilon,instances,mean_iterations,max_iterations,converged_fraction,max_violation,mean_micros";

/// Times the solver on random instances shaped like critic values: a spread
/// of `scale` with nearby partners.
pub fn run_sinkhorn_bench(cfg: &ExperimentConfig, out: &Path, sizes: &[usize], instances: usize, scale: f64) -> Result<PathBuf, CliError> {
    let mut rng = rand_like::seeded(0);
    let mut text = String::new();
    let _ = writeln!(text, "{BENCH_HEADER}");
    for &n in sizes {
        let mut iters = Vec::new();
        let mut converged = 0;
        let mut worst: f64 = 0.0;
        let mut elapsed = 0.0;
        for _ in 0..instances {
            let x: Vec<f64> = (0..n).map(|_| rng.uniform(-scale, 0.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.uniform(-0.05, 0.05) * scale).collect();
            let (xs, ys) = (EmpiricalDistribution::new(x).map_err(runtime)?, EmpiricalDistribution::new(y).map_err(runtime)?);
            let t = Instant::now();
            let r = sinkhorn_distance(&xs, &ys, cfg.sinkhorn()).map_err(runtime)?;
            elapsed += t.elapsed().as_secs_f64();
            iters.push(r.iterations as f64);
            converged += r.converged as usize;
            worst = worst.max(r.max_violation);
        }
        let _ = writeln!(
            text,
            "{n},{},{instances},{},{},{},{worst:e},{:.1}",
            cfg.sinkhorn().epsilon,
            mean(&iters),
            iters.iter().copied().fold(0.0, f64::max),
            converged as f64 / instances as f64,
            1e6 * elapsed / instances as f64
        );
    }
    let path = out.join("sinkhorn_bench.csv");
    write_atomic_str(&path, &text)?;
    print!("{text}");
    Ok(path)
}

/// Seeded uniform draws for the CLI's own sampling.
mod rand_like {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub trait Uniform {
        fn uniform(&mut self, lo: f64, hi: f64) -> f64;
    }

    impl Uniform for ChaCha8Rng {
        fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            self.random_range(lo..hi)
        }
    }

    pub fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
