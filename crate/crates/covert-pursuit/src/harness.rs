//! Run orchestration: config loading, scheme dispatch, comparisons, and
//! weight sweeps, with a bounded worker pool for fan-out work.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{self, OnlineOptions, TargetPredictor};
use crate::pdcae::{self, Scheme, SolveStatus, SolverOptions};
use crate::report::{self, CompareRow, RunReport, SweepRow};
use crate::scenario::{self, ScenarioConfig, TargetTrack};

/// Environment variable capping the fan-out worker pool.
pub const THREADS_ENV: &str = "COVERT_PURSUIT_THREADS";

/// Online-loop settings of a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSettings {
    pub predictor: TargetPredictor,
    pub window: usize,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        OnlineSettings {
            predictor: TargetPredictor::ConstantVelocity,
            window: 25,
        }
    }
}

/// Top-level config document: scenario plus solver settings. Unknown keys
/// are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub online: OnlineSettings,
}

impl HarnessConfig {
    pub fn reference() -> Self {
        HarnessConfig {
            scenario: ScenarioConfig::reference(),
            solver: SolverOptions::default(),
            online: OnlineSettings::default(),
        }
    }
}

/// Loads and validates a config document.
pub fn load_config(path: &Path) -> Result<HarnessConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: HarnessConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("invalid config {}: {e}", path.display())))?;
    cfg.scenario.validate()?;
    Ok(cfg)
}

/// Worker-pool width: the env cap if set, else available parallelism.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs independent jobs across at most `worker_count()` threads,
/// preserving input order.
pub fn run_parallel<T, F>(jobs: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let workers = worker_count().min(jobs.len().max(1));
    if workers <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let queue: Mutex<Vec<(usize, F)>> = Mutex::new(jobs.into_iter().enumerate().rev().collect());
    let results: Mutex<Vec<(usize, T)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop();
                match job {
                    Some((i, f)) => {
                        let out = f();
                        results.lock().unwrap().push((i, out));
                    }
                    None => break,
                }
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|&(i, _)| i);
    results.into_iter().map(|(_, t)| t).collect()
}

/// Scheme labels accepted by `run`, including the online loop.
pub const SCHEME_LABELS: [&str; 7] =
    ["proposed", "dko", "aco", "ndp", "dst", "mdr", "online"];

/// Runs one scheme offline (or the online loop for `"online"`) and builds
/// its report.
pub fn run_scheme(
    config: &HarnessConfig,
    scheme_label: &str,
    track: &TargetTrack,
) -> Result<RunReport> {
    if scheme_label == "online" {
        let options = OnlineOptions {
            predictor: config.online.predictor,
            window: config.online.window,
            solver: config.solver.clone(),
        };
        let outcome = mpc::run_online(&config.scenario, track, &options)?;
        let solar = pdcae::default_solar_fit(&config.scenario)?;
        let mut report = report::build_report(
            scheme_label,
            &config.scenario,
            &config.solver,
            track,
            &outcome.plan,
            Vec::new(),
            SolveStatus::Converged,
            &solar,
        )?;
        report.ticks = Some(outcome.ticks);
        report.fallback_slots = outcome.fallback_slots;
        return Ok(report);
    }

    let scheme = Scheme::from_label(scheme_label)
        .ok_or_else(|| Error::Parse(format!("unknown scheme '{scheme_label}'")))?;
    let mut solver = config.solver.clone();
    solver.scheme = scheme;
    let mut cfg = config.scenario.clone();
    scheme.apply_weights(&mut cfg);
    let outcome = pdcae::solve_offline(&config.scenario, track, &solver)?;
    report::build_report(
        scheme_label,
        &cfg,
        &solver,
        track,
        &outcome.plan,
        outcome.trace,
        outcome.status,
        &outcome.solar,
    )
}

/// Runs a scheme and writes its artifacts (report JSON, trajectory CSV,
/// iteration CSV, tick CSV when online) into `out_dir`.
pub fn run_and_write(
    config: &HarnessConfig,
    scheme_label: &str,
    track: &TargetTrack,
    out_dir: &Path,
) -> Result<RunReport> {
    let report = run_scheme(config, scheme_label, track)?;
    let stem = |name: &str| out_dir.join(format!("{scheme_label}_{name}"));
    report::write_report_json(&report, &stem("report.json"))?;
    report::write_trajectory_csv(&report.slots, &stem("trajectory.csv"))?;
    report::write_iteration_csv(&report.trace, &stem("iterations.csv"))?;
    if let Some(ticks) = &report.ticks {
        report::write_tick_csv(ticks, &stem("ticks.csv"))?;
    }
    Ok(report)
}

/// Runs several schemes on one scenario and tabulates them under the
/// common comparison weights. Per-run failures become flagged rows.
pub fn compare(
    config: &HarnessConfig,
    schemes: &[String],
    track: &TargetTrack,
    out_dir: Option<&Path>,
) -> Result<(Vec<CompareRow>, Vec<Result<RunReport>>)> {
    if schemes.len() < 2 {
        return Err(Error::Parse(
            "compare needs at least two schemes".into(),
        ));
    }
    for s in schemes {
        if !SCHEME_LABELS.contains(&s.as_str()) {
            return Err(Error::Parse(format!("unknown scheme '{s}'")));
        }
    }
    let jobs: Vec<_> = schemes
        .iter()
        .map(|s| {
            let s = s.clone();
            let config = config.clone();
            let track = track.clone();
            move || match out_dir {
                Some(dir) => run_and_write(&config, &s, &track, dir),
                None => run_scheme(&config, &s, &track),
            }
        })
        .collect();
    let outcomes = run_parallel(jobs);
    let rows = schemes
        .iter()
        .zip(&outcomes)
        .map(|(s, outcome)| match outcome {
            Ok(r) => CompareRow {
                scheme: s.clone(),
                objective_common_weights: r.objective_common_weights,
                energy_consumed_j: r.energy.consumed_j,
                disguise_total: r.disguise_total,
                max_d3: r.audit.max_d3,
                status: format!("{:?}", r.status),
            },
            Err(e) => CompareRow {
                scheme: s.clone(),
                objective_common_weights: f64::NAN,
                energy_consumed_j: f64::NAN,
                disguise_total: f64::NAN,
                max_d3: f64::NAN,
                status: format!("error: {e}"),
            },
        })
        .collect();
    Ok((rows, outcomes))
}

/// Sweeps disguising weights along mu1 + mu2 = 1 and reports the
/// power/disguise trade-off of each converged run.
pub fn pareto_sweep(
    config: &HarnessConfig,
    mu1_grid: &[f64],
    track: &TargetTrack,
) -> Result<Vec<SweepRow>> {
    if mu1_grid.is_empty() {
        return Err(Error::Parse("sweep needs a nonempty weight grid".into()));
    }
    let jobs: Vec<_> = mu1_grid
        .iter()
        .map(|&mu1| {
            let config = config.clone();
            let track = track.clone();
            move || -> Result<SweepRow> {
                let mut cfg = config.scenario.clone();
                cfg.mu1 = mu1;
                cfg.mu2 = 1.0 - mu1;
                let mut solver = config.solver.clone();
                solver.scheme = Scheme::Proposed;
                let outcome = pdcae::solve_offline(&cfg, &track, &solver)?;
                let totals = report::energy_totals(&outcome.plan, &cfg)?;
                let disguise: f64 =
                    scenario::disguise_metric(&outcome.plan, &track, &cfg).iter().sum();
                Ok(SweepRow {
                    mu1,
                    mu2: 1.0 - mu1,
                    power_w: totals.consumed_j / (cfg.n_slots as f64 * cfg.delta),
                    disguise,
                    converged: outcome.status == SolveStatus::Converged,
                })
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(mu1_grid.len());
    for (i, out) in run_parallel(jobs).into_iter().enumerate() {
        match out {
            Ok(row) => rows.push(row),
            Err(e) => {
                // Individual failures are flagged, the sweep continues.
                rows.push(SweepRow {
                    mu1: mu1_grid[i],
                    mu2: 1.0 - mu1_grid[i],
                    power_w: f64::NAN,
                    disguise: f64::NAN,
                    converged: false,
                });
                eprintln!("sweep point mu1={} failed: {e}", mu1_grid[i]);
            }
        }
    }
    Ok(rows)
}

/// Track selection: explicit CSV if configured, else the generated
/// reference track.
pub fn load_or_generate_track(
    cfg: &ScenarioConfig,
    track_path: Option<&Path>,
) -> Result<TargetTrack> {
    match track_path {
        Some(p) => scenario::load_target_track(p, cfg.target_alt_h),
        None => Ok(scenario::generate_target_track(cfg)),
    }
}
