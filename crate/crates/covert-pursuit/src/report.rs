//! Run reports: per-slot breakdowns against the exact power models,
//! feasibility audits, and deterministic JSON/CSV writers.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dc::{self, ObjectiveKind};
use crate::error::{Error, Result};
use crate::mpc::TickRecord;
use crate::pdcae::{IterationRecord, SolveStatus, SolverOptions};
use crate::power::{self, SolarLinearApprox};
use crate::scenario::{
    self, MobilityViolation, ScenarioConfig, TargetTrack, TrajectoryPlan,
};

/// Exact-model quantities of one slot of a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotBreakdown {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub q: f64,
    pub ph_exact: f64,
    pub pv: f64,
    pub ps_exact: f64,
    pub ps_linear: f64,
    /// Disguising reward of the slot.
    pub f: f64,
    /// Horizontal distance to the target.
    pub d2: f64,
    /// 3D distance to the target.
    pub d3: f64,
}

/// Post-hoc feasibility audit against the exact models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityAudit {
    pub mobility_violations: Vec<MobilityViolation>,
    /// Slots (1-based) outside the feasible flight region.
    pub ffr_violations: Vec<usize>,
    /// Worst 3D distance to the target over all slots.
    pub max_d3: f64,
    /// Minimum exact-model causality margin relative to the storage
    /// budget; nonnegative means causality holds.
    pub causality_min_margin_rel: f64,
    pub feasible: bool,
}

/// Mission energy totals under the exact models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub consumed_j: f64,
    pub harvested_j: f64,
    pub net_j: f64,
}

/// Self-contained result of one scheme run.
///
/// Wall time is intentionally not part of the serialized report so that
/// identical configurations produce byte-identical files; timings go to
/// stderr instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scheme: String,
    pub config: ScenarioConfig,
    pub solver: SolverOptions,
    pub status: SolveStatus,
    pub plan: TrajectoryPlan,
    pub trace: Vec<IterationRecord>,
    pub slots: Vec<SlotBreakdown>,
    pub audit: FeasibilityAudit,
    pub energy: EnergyTotals,
    /// Objective of this plan under the common comparison weights.
    pub objective_common_weights: f64,
    /// Total disguising reward under the common weights.
    pub disguise_total: f64,
    /// Online-run tick log, absent for offline runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticks: Option<Vec<TickRecord>>,
    /// Slots where the online loop fell back to the greedy pursuit walk.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_slots: Vec<usize>,
}

/// Comparison weights used when scoring schemes against each other.
pub const COMMON_MU1: f64 = 0.2;
pub const COMMON_MU2: f64 = 0.1;

/// Builds the per-slot breakdown of a plan under the exact models.
pub fn slot_breakdown(
    plan: &TrajectoryPlan,
    track: &TargetTrack,
    cfg: &ScenarioConfig,
    solar_fit: &SolarLinearApprox,
) -> Result<Vec<SlotBreakdown>> {
    plan.validate_shape(cfg.n_slots)?;
    let mut rows = Vec::with_capacity(cfg.n_slots + 1);
    for t in 0..=cfg.n_slots {
        let [x, y, z] = plan.waypoints[t];
        let (a, b) = track.waypoints[t];
        let d2 = ((x - a).powi(2) + (y - b).powi(2)).sqrt();
        let d3 = ((x - a).powi(2) + (y - b).powi(2) + (z - cfg.target_alt_h).powi(2)).sqrt();
        let (q, ph, pv, f) = if t == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let dz = plan.alt_step(t);
            (
                plan.q[t - 1],
                power::propulsion_power_exact(plan.horiz_speed(t, cfg.delta), &cfg.propulsion)?,
                cfg.thrust.weight_force() * dz / cfg.delta,
                cfg.mu1 * d2 * d2 + cfg.mu2 * dz * dz,
            )
        };
        rows.push(SlotBreakdown {
            t,
            x,
            y,
            z,
            q,
            ph_exact: ph,
            pv,
            ps_exact: power::solar_power_exact(z, &cfg.solar)?,
            ps_linear: solar_fit.eval(z),
            f,
            d2,
            d3,
        });
    }
    Ok(rows)
}

/// Audits a plan against the exact models: mobility, flight region,
/// trailing, altitude floor, and energy causality via the exact solar
/// curve.
pub fn audit_plan(
    plan: &TrajectoryPlan,
    track: &TargetTrack,
    cfg: &ScenarioConfig,
) -> Result<FeasibilityAudit> {
    let mobility_violations = scenario::audit_mobility(plan, cfg)?;
    let mut ffr_violations = Vec::new();
    let mut max_d3: f64 = 0.0;
    for t in 1..=cfg.n_slots {
        let wp = plan.waypoints[t];
        let (a, b) = track.waypoints[t];
        let d3 = ((wp[0] - a).powi(2) + (wp[1] - b).powi(2) + (wp[2] - cfg.target_alt_h).powi(2))
            .sqrt();
        max_d3 = max_d3.max(d3);
        if !scenario::in_ffr(wp, (a, b), cfg) {
            ffr_violations.push(t);
        }
    }
    // Exact-model causality: cumulative (Ph + Pv) * delta within the
    // storage budget plus cumulative exact harvested energy.
    let budget = cfg.eta0 * cfg.e0;
    let mut balance = budget;
    let mut min_margin = f64::INFINITY;
    for t in 1..=cfg.n_slots {
        let ph = power::propulsion_power_exact(plan.horiz_speed(t, cfg.delta), &cfg.propulsion)?;
        let pv = cfg.thrust.weight_force() * plan.alt_step(t) / cfg.delta;
        let ps = power::solar_power_exact(plan.waypoints[t][2], &cfg.solar)?;
        balance += (cfg.eta0 * ps - ph - pv) * cfg.delta;
        min_margin = min_margin.min(balance);
    }
    let causality_min_margin_rel = min_margin / budget.max(1e-12);
    let feasible = mobility_violations.is_empty()
        && ffr_violations.is_empty()
        && causality_min_margin_rel >= -1e-6;
    Ok(FeasibilityAudit {
        mobility_violations,
        ffr_violations,
        max_d3,
        causality_min_margin_rel,
        feasible,
    })
}

/// Exact-model energy totals of a plan.
pub fn energy_totals(plan: &TrajectoryPlan, cfg: &ScenarioConfig) -> Result<EnergyTotals> {
    let mut consumed = 0.0;
    let mut harvested = 0.0;
    for t in 1..=cfg.n_slots {
        let ph = power::propulsion_power_exact(plan.horiz_speed(t, cfg.delta), &cfg.propulsion)?;
        let pv = cfg.thrust.weight_force() * plan.alt_step(t) / cfg.delta;
        let ps = power::solar_power_exact(plan.waypoints[t][2], &cfg.solar)?;
        consumed += (ph + pv) * cfg.delta;
        harvested += cfg.eta0 * ps * cfg.delta;
    }
    Ok(EnergyTotals {
        consumed_j: consumed,
        harvested_j: harvested,
        net_j: consumed - harvested,
    })
}

/// Objective of a plan evaluated under the common comparison weights,
/// regardless of which scheme produced it.
pub fn common_weights_objective(
    plan: &TrajectoryPlan,
    track: &TargetTrack,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let mut common = cfg.clone();
    common.mu1 = COMMON_MU1;
    common.mu2 = COMMON_MU2;
    dc::exact_objective(plan, track, &common)
}

/// Assembles a report from a finished run.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    scheme: &str,
    cfg: &ScenarioConfig,
    solver: &SolverOptions,
    track: &TargetTrack,
    plan: &TrajectoryPlan,
    trace: Vec<IterationRecord>,
    status: SolveStatus,
    solar_fit: &SolarLinearApprox,
) -> Result<RunReport> {
    let mut common = cfg.clone();
    common.mu1 = COMMON_MU1;
    common.mu2 = COMMON_MU2;
    let disguise_total = scenario::disguise_metric(plan, track, &common).iter().sum();
    Ok(RunReport {
        scheme: scheme.to_string(),
        config: cfg.clone(),
        solver: solver.clone(),
        status,
        plan: plan.clone(),
        trace,
        slots: slot_breakdown(plan, track, cfg, solar_fit)?,
        audit: audit_plan(plan, track, cfg)?,
        energy: energy_totals(plan, cfg)?,
        objective_common_weights: common_weights_objective(plan, track, cfg)?,
        disguise_total,
        ticks: None,
        fallback_slots: Vec::new(),
    })
}

/// Formats a float with nine significant digits, stable across runs.
pub fn fmt9(v: f64) -> String {
    if v == 0.0 {
        return "0.0".into();
    }
    format!("{v:.8e}")
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serializes the report as pretty JSON with a trailing newline.
pub fn report_json(report: &RunReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<()> {
    write_atomic(path, &report_json(report)?)
}

/// Trajectory CSV: one row per slot including the start.
pub fn trajectory_csv(slots: &[SlotBreakdown]) -> String {
    let mut out = String::from("t,x,y,z,q,Ph_exact,Pv,Ps_exact,Ps_linear,f,d2,d3\n");
    for s in slots {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.t,
            fmt9(s.x),
            fmt9(s.y),
            fmt9(s.z),
            fmt9(s.q),
            fmt9(s.ph_exact),
            fmt9(s.pv),
            fmt9(s.ps_exact),
            fmt9(s.ps_linear),
            fmt9(s.f),
            fmt9(s.d2),
            fmt9(s.d3),
        ));
    }
    out
}

pub fn write_trajectory_csv(slots: &[SlotBreakdown], path: &Path) -> Result<()> {
    write_atomic(path, trajectory_csv(slots).as_bytes())
}

/// Iteration CSV mirroring the outer trace.
pub fn iteration_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iter,surrogate_objective,exact_objective,step_norm,beta,inner_iters\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            fmt9(r.surrogate_objective),
            fmt9(r.exact_objective),
            fmt9(r.step_norm),
            fmt9(r.beta),
            r.inner_iters,
        ));
    }
    out
}

pub fn write_iteration_csv(trace: &[IterationRecord], path: &Path) -> Result<()> {
    write_atomic(path, iteration_csv(trace).as_bytes())
}

/// Tick CSV of an online run.
pub fn tick_csv(ticks: &[TickRecord]) -> String {
    let mut out = String::from(
        "tau,x,y,z,predicted_err,energy_consumed,energy_harvested,reserve,ffr_ok\n",
    );
    for r in ticks {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.tau,
            fmt9(r.x),
            fmt9(r.y),
            fmt9(r.z),
            fmt9(r.predicted_err),
            fmt9(r.energy_consumed),
            fmt9(r.energy_harvested),
            fmt9(r.reserve),
            r.ffr_ok,
        ));
    }
    out
}

pub fn write_tick_csv(ticks: &[TickRecord], path: &Path) -> Result<()> {
    write_atomic(path, tick_csv(ticks).as_bytes())
}

/// One row of a weight-sweep series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu1: f64,
    pub mu2: f64,
    /// Mean exact propulsion-plus-thrust power over the mission (W).
    pub power_w: f64,
    /// Total disguising metric under the row's own weights.
    pub disguise: f64,
    pub converged: bool,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mu1,mu2,power,disguise,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt9(r.mu1),
            fmt9(r.mu2),
            fmt9(r.power_w),
            fmt9(r.disguise),
            r.converged,
        ));
    }
    out
}

/// One row of a scheme-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: String,
    pub objective_common_weights: f64,
    pub energy_consumed_j: f64,
    pub disguise_total: f64,
    pub max_d3: f64,
    pub status: String,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("scheme,objective_common_weights,energy_consumed_j,disguise_total,max_d3,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scheme,
            fmt9(r.objective_common_weights),
            fmt9(r.energy_consumed_j),
            fmt9(r.disguise_total),
            fmt9(r.max_d3),
            r.status,
        ));
    }
    out
}

/// Reconciliation check: the per-slot breakdown must sum to the report's
/// energy totals within floating-point tolerance.
pub fn totals_reconcile(report: &RunReport) -> bool {
    let consumed: f64 = report
        .slots
        .iter()
        .map(|s| (s.ph_exact + s.pv) * report.config.delta)
        .sum();
    let harvested: f64 = report
        .slots
        .iter()
        .skip(1)
        .map(|s| report.config.eta0 * s.ps_exact * report.config.delta)
        .sum();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    rel(consumed, report.energy.consumed_j) <= 1e-9
        && rel(harvested, report.energy.harvested_j) <= 1e-9
}

/// The objective kind is part of the report indirectly through the scheme
/// label; expose the mapping for consumers.
pub fn objective_kind_of(scheme: &str) -> ObjectiveKind {
    if scheme == "dst" {
        ObjectiveKind::DistanceSquared
    } else {
        ObjectiveKind::Surrogate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdcae;
    use crate::scenario::generate_target_track;
    use approx::assert_relative_eq;

    fn setup() -> (ScenarioConfig, TargetTrack, TrajectoryPlan, SolarLinearApprox) {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = 12;
        cfg.horizon_t = cfg.n_slots as f64 * cfg.delta;
        let track = generate_target_track(&cfg);
        let plan = scenario::initial_plan(&track, &cfg).unwrap();
        let solar = pdcae::default_solar_fit(&cfg).unwrap();
        (cfg, track, plan, solar)
    }

    #[test]
    fn breakdown_has_one_row_per_slot_plus_start() {
        let (cfg, track, plan, solar) = setup();
        let rows = slot_breakdown(&plan, &track, &cfg, &solar).unwrap();
        assert_eq!(rows.len(), cfg.n_slots + 1);
        assert_eq!(rows[0].t, 0);
        assert_eq!(rows[0].ph_exact, 0.0);
        assert!(rows[1].ph_exact > 0.0);
        // Linear solar never exceeds the exact curve.
        for r in &rows {
            assert!(r.ps_linear <= r.ps_exact + 1e-9);
        }
    }

    #[test]
    fn shadow_plan_audits_clean() {
        let (cfg, track, plan, _) = setup();
        let audit = audit_plan(&plan, &track, &cfg).unwrap();
        assert!(audit.feasible);
        assert!(audit.mobility_violations.is_empty());
        assert!(audit.ffr_violations.is_empty());
        // Shadow rides directly above the target: d3 = |z0 - H| exactly.
        assert_relative_eq!(audit.max_d3, cfg.monitor_z0 - cfg.target_alt_h, epsilon = 1e-9);
    }

    #[test]
    fn report_reconciles_and_serializes_deterministically() {
        let (cfg, track, plan, solar) = setup();
        let solver = SolverOptions::default();
        let report = build_report(
            "proposed",
            &cfg,
            &solver,
            &track,
            &plan,
            Vec::new(),
            SolveStatus::Converged,
            &solar,
        )
        .unwrap();
        assert!(totals_reconcile(&report));
        let a = report_json(&report).unwrap();
        let b = report_json(&report).unwrap();
        assert_eq!(a, b);
        // Round-trips through serde.
        let back: RunReport = serde_json::from_slice(&a).unwrap();
        assert_eq!(back.scheme, "proposed");
        assert_eq!(back.plan.waypoints, report.plan.waypoints);
    }

    #[test]
    fn csv_headers_match_contract() {
        let (cfg, track, plan, solar) = setup();
        let rows = slot_breakdown(&plan, &track, &cfg, &solar).unwrap();
        let csv = trajectory_csv(&rows);
        assert!(csv.starts_with("t,x,y,z,q,Ph_exact,Pv,Ps_exact,Ps_linear,f,d2,d3\n"));
        assert_eq!(csv.lines().count(), cfg.n_slots + 2);
        let ticks = tick_csv(&[]);
        assert_eq!(
            ticks,
            "tau,x,y,z,predicted_err,energy_consumed,energy_harvested,reserve,ffr_ok\n"
        );
    }

    #[test]
    fn atomic_write_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("out.csv");
        write_atomic(&path, b"hello\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello\n");
        // Overwrite works too.
        write_atomic(&path, b"bye\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"bye\n");
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(121.4), "1.21400000e2");
        assert_eq!(fmt9(0.0), "0.0");
        assert_eq!(fmt9(-3.5e-7), "-3.50000000e-7");
    }
}
