//! Proximal difference-of-convex outer loop with Nesterov-style
//! extrapolation and periodic restarts.
//!
//! Each outer iteration linearizes the concave part of the objective and
//! the nonconvex slack constraint at the current plan, solves the resulting
//! strongly convex subproblem from an extrapolated center, and accepts the
//! step only if the surrogate objective does not increase. Rejected
//! extrapolated steps are retried without momentum, which is guaranteed to
//! descend; a step that still fails marks the run as stalled.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dc::{
    self, build_subproblem, plan_to_vector, vector_to_plan, BuildOptions, ObjectiveKind,
};
use crate::error::{Error, Result};
use crate::inner::{self, InnerOptions};
use crate::power::{fit_solar_linear, SolarLinearApprox};
use crate::scenario::{ScenarioConfig, TargetTrack, TrajectoryPlan};

/// Planning schemes: which objective terms are active and which extra
/// constraints are imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Full objective: energy minus both disguising rewards.
    Proposed,
    /// Distance-keeping only (no altitude reward).
    DistanceKeepingOnly,
    /// Altitude-change reward only (no distance reward).
    AltitudeChangeOnly,
    /// No disguising reward: pure energy minimization.
    NoDisguising,
    /// Distance-based energy proxy: squared total path length replaces the
    /// propulsion model in the objective.
    DistanceProxy,
    /// Heading regulation: slope-constrained motion instead of the
    /// distance reward.
    HeadingRegulated,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Proposed,
        Scheme::DistanceKeepingOnly,
        Scheme::AltitudeChangeOnly,
        Scheme::NoDisguising,
        Scheme::DistanceProxy,
        Scheme::HeadingRegulated,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::DistanceKeepingOnly => "dko",
            Scheme::AltitudeChangeOnly => "aco",
            Scheme::NoDisguising => "ndp",
            Scheme::DistanceProxy => "dst",
            Scheme::HeadingRegulated => "mdr",
        }
    }

    pub fn from_label(s: &str) -> Option<Scheme> {
        Scheme::ALL.iter().copied().find(|sch| sch.label() == s)
    }

    /// Rewrites the scenario weights for this scheme.
    pub fn apply_weights(&self, cfg: &mut ScenarioConfig) {
        match self {
            Scheme::Proposed | Scheme::DistanceProxy => {}
            Scheme::DistanceKeepingOnly => cfg.mu2 = 0.0,
            Scheme::AltitudeChangeOnly => cfg.mu1 = 0.0,
            Scheme::NoDisguising => {
                cfg.mu1 = 0.0;
                cfg.mu2 = 0.0;
            }
            Scheme::HeadingRegulated => cfg.mu1 = 0.0,
        }
    }

    pub fn objective_kind(&self) -> ObjectiveKind {
        match self {
            Scheme::DistanceProxy => ObjectiveKind::DistanceSquared,
            _ => ObjectiveKind::Surrogate,
        }
    }

    pub fn heading_rows(&self) -> bool {
        matches!(self, Scheme::HeadingRegulated)
    }
}

/// Outer-loop tuning knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub scheme: Scheme,
    /// Proximal modulus; `None` picks the default from the scenario.
    pub prox_weight: Option<f64>,
    pub max_outer_iters: usize,
    /// Step convergence threshold: the proximal-map fixed-point residual,
    /// measured as a per-variable RMS of the decision vector (meters), must
    /// fall below this. The RMS reading keeps the tolerance independent of
    /// the horizon length.
    pub step_tol: f64,
    /// Maximum relative residual of the slack equality at convergence.
    pub q_residual_tol: f64,
    /// Momentum restart period.
    pub restart_period: usize,
    /// Random seed reserved for stochastic variants; fixed here so that
    /// reports stay byte-identical across runs.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            scheme: Scheme::Proposed,
            prox_weight: None,
            max_outer_iters: 2500,
            step_tol: 1e-3,
            q_residual_tol: 1e-4,
            restart_period: 50,
            seed: 0,
        }
    }
}

/// Default proximal modulus: twice the largest curvature-like scale among
/// the reward weights and the thrust-power slope over the flight region.
pub fn default_prox_weight(cfg: &ScenarioConfig) -> f64 {
    let thrust_scale = cfg.thrust.weight_force() / (cfg.delta * cfg.d_max);
    2.0 * cfg.mu1.max(cfg.mu2).max(thrust_scale)
}

/// Momentum coefficient schedule with periodic restart.
#[derive(Debug, Clone)]
pub struct ExtrapolationState {
    beta_bar_prev: f64,
    beta_bar: f64,
    since_restart: usize,
    period: usize,
}

impl ExtrapolationState {
    pub fn new(period: usize) -> Self {
        ExtrapolationState {
            beta_bar_prev: 1.0,
            beta_bar: 1.0,
            since_restart: 0,
            period,
        }
    }

    /// Momentum coefficient for the next step, advancing the recursion.
    pub fn next_beta(&mut self) -> f64 {
        if self.period > 0 && self.since_restart >= self.period {
            self.beta_bar_prev = 1.0;
            self.beta_bar = 1.0;
            self.since_restart = 0;
        }
        let beta = (self.beta_bar_prev - 1.0) / self.beta_bar;
        let next = (1.0 + (1.0 + 4.0 * self.beta_bar * self.beta_bar).sqrt()) / 2.0;
        self.beta_bar_prev = self.beta_bar;
        self.beta_bar = next;
        self.since_restart += 1;
        beta
    }
}

/// One line of the outer-iteration trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub surrogate_objective: f64,
    pub exact_objective: f64,
    pub step_norm: f64,
    pub beta: f64,
    pub inner_iters: usize,
}

/// How the outer loop terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Step norm and slack residual below tolerance.
    Converged,
    /// Outer-iteration budget exhausted.
    MaxIters,
    /// No acceptable descent step found even without momentum.
    Stalled,
}

/// Converged plan plus its iteration history.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub plan: TrajectoryPlan,
    pub trace: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub solar: SolarLinearApprox,
}

/// Largest relative violation of the slack equality `1/q^2 = q^2 +
/// v^2/v_hat^2` across slots. At a solver fixed point this is zero because
/// the inner objective pushes q down onto the constraint.
pub fn max_q_residual(plan: &TrajectoryPlan, cfg: &ScenarioConfig) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 1..=plan.n_slots() {
        let dx = plan.waypoints[t][0] - plan.waypoints[t - 1][0];
        let dy = plan.waypoints[t][1] - plan.waypoints[t - 1][1];
        let q = plan.q[t - 1].max(1e-12);
        let lhs = 1.0 / (q * q);
        let rhs = dc::q_constraint_rhs(dx, dy, q, cfg);
        worst = worst.max((rhs - lhs).abs() / lhs.max(1.0));
    }
    worst
}

/// Context shared by the offline solver and each receding-horizon stage.
pub struct HorizonProblem<'a> {
    pub cfg: &'a ScenarioConfig,
    pub track: &'a TargetTrack,
    pub start: [f64; 3],
    /// Altitude step executed just before this horizon (receding horizon
    /// only); gates the first acceleration row.
    pub prev_alt_step: Option<f64>,
    /// Cumulative-power budget; `None` uses the scenario's storage budget.
    pub energy_budget_override: Option<f64>,
}

/// Runs the proximal DC loop on one horizon from the given initial plan.
pub fn solve_horizon(
    problem: &HorizonProblem,
    init: &TrajectoryPlan,
    solver: &SolverOptions,
    solar: &SolarLinearApprox,
) -> Result<SolveOutcome> {
    let cfg = problem.cfg;
    let n = cfg.n_slots;
    init.validate_shape(n)?;
    if init.waypoints[0] != problem.start {
        return Err(Error::Scenario(
            "initial plan does not begin at the horizon start".into(),
        ));
    }

    let mut options = BuildOptions::offline(cfg, *solar);
    options.objective = solver.scheme.objective_kind();
    options.heading = solver.scheme.heading_rows();
    options.start = problem.start;
    options.prev_alt_step = problem.prev_alt_step;
    options.energy_budget_override = problem.energy_budget_override;

    let mut prox_weight = solver
        .prox_weight
        .unwrap_or_else(|| default_prox_weight(cfg));
    let kind = solver.scheme.objective_kind();

    let mut current = init.clone();
    let mut x_curr = plan_to_vector(&current);
    let mut x_prev = x_curr.clone();
    let mut phi_curr = dc::scheme_objective(&current, problem.track, cfg, kind)?;
    let mut extrapolation = ExtrapolationState::new(solver.restart_period);
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let inner_options = InnerOptions::default();
    // Bounded number of extra momentum-free polishing rounds once the step
    // norm is small but the slack equality still has residual.
    let mut polish_left = 10usize;

    for iter in 0..solver.max_outer_iters {
        let beta = extrapolation.next_beta();
        let mut inner_total = 0usize;
        let mut accepted: Option<(DVector<f64>, f64, f64, f64)> = None;

        for momentum in [beta, 0.0] {
            if momentum > beta {
                break;
            }
            let center = if momentum > 0.0 {
                &x_curr + (&x_curr - &x_prev) * momentum
            } else {
                x_curr.clone()
            };
            let sub = build_subproblem(&current, &center, problem.track, cfg, prox_weight, &options)?;
            let warm = inner::phase1_feasible(&sub, &x_curr, 1e-8)?;
            let sol = inner::solve_subproblem(&sub, &warm, &inner_options)?;
            inner_total += sol.inner_iterations;
            let cand_plan = vector_to_plan(&sol.point, problem.start);
            let phi = dc::scheme_objective(&cand_plan, problem.track, cfg, kind)?;
            // Fixed-point residual of the proximal map: how far the
            // subproblem solution moved from its own expansion center.
            // Momentum drift is excluded on purpose — near a stationary
            // point the extrapolated centers keep sliding while the map
            // itself barely moves its argument.
            let prox_residual = (&sol.point - &center).norm();
            if std::env::var("PURSUIT_DEBUG").is_ok() {
                eprintln!(
                    "  attempt beta {momentum:.3}: inner {} status {:?} kkt {:.3e} dphi {:.3e} step {:.3e} prox {:.3e}",
                    sol.inner_iterations,
                    sol.status,
                    sol.kkt_residual,
                    phi - phi_curr,
                    (&sol.point - &x_curr).norm(),
                    prox_residual
                );
            }
            if phi <= phi_curr + 1e-9 {
                accepted = Some((sol.point, phi, momentum, prox_residual));
                break;
            }
            if momentum == 0.0 {
                break;
            }
        }

        match accepted {
            Some((x_new, phi_new, used_beta, prox_residual)) => {
                let step = prox_residual / (x_new.len() as f64).sqrt();
                x_prev = std::mem::replace(&mut x_curr, x_new);
                current = vector_to_plan(&x_curr, problem.start);
                phi_curr = phi_new;
                trace.push(IterationRecord {
                    iter,
                    surrogate_objective: phi_new,
                    exact_objective: dc::exact_objective(&current, problem.track, cfg)?,
                    step_norm: step,
                    beta: used_beta,
                    inner_iters: inner_total,
                });
                if step < solver.step_tol {
                    // Small step: accept only once the slack variables sit
                    // on their equality; otherwise keep polishing without
                    // momentum for a few rounds.
                    if max_q_residual(&current, cfg) <= solver.q_residual_tol || polish_left == 0 {
                        status = SolveStatus::Converged;
                        break;
                    }
                    polish_left -= 1;
                    extrapolation = ExtrapolationState::new(solver.restart_period);
                } else if step < 100.0 * solver.step_tol && prox_weight > 0.5 {
                    // The proximal map barely moves its argument but has not
                    // reached tolerance: the modulus is over-damping the
                    // step, so relax it (descent stays guaranteed because
                    // candidates are only accepted on monotone decrease).
                    prox_weight = (prox_weight * 0.5).max(0.5);
                }
            }
            None => {
                if std::env::var("PURSUIT_DEBUG").is_ok() {
                    eprintln!(
                        "iter {iter}: no descent, beta {beta:.3}, prox {prox_weight:.3e}, phi {phi_curr:.9e}"
                    );
                }
                // Even the momentum-free proximal step failed to descend;
                // soften the prox modulus once, then give up.
                if prox_weight > 1e-3 {
                    prox_weight = (prox_weight * 0.5).max(1e-3);
                    continue;
                }
                status = SolveStatus::Stalled;
                break;
            }
        }
    }

    Ok(SolveOutcome {
        plan: current,
        trace,
        status,
        solar: *solar,
    })
}

/// Fits the default solar under-estimator for a scenario: the band spans
/// from the altitude floor across the reachable climb range.
pub fn default_solar_fit(cfg: &ScenarioConfig) -> Result<SolarLinearApprox> {
    let climb = cfg.max_vert_step() * cfg.n_slots as f64;
    let z_hi = (cfg.monitor_z0 + climb).min(crate::power::SolarParams::max_altitude() * 0.9);
    fit_solar_linear(&cfg.solar, [cfg.z_lower, z_hi.max(cfg.z_lower + 1.0)], 512)
}

/// Plans the whole mission offline from the shadow initialization.
pub fn solve_offline(
    cfg: &ScenarioConfig,
    track: &TargetTrack,
    solver: &SolverOptions,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let mut scheme_cfg = cfg.clone();
    solver.scheme.apply_weights(&mut scheme_cfg);
    let solar = default_solar_fit(&scheme_cfg)?;
    let init = initial_plan_for_scheme(track, &scheme_cfg, solver.scheme)?;
    let problem = HorizonProblem {
        cfg: &scheme_cfg,
        track,
        start: [0.0, 0.0, scheme_cfg.monitor_z0],
        prev_alt_step: None,
        energy_budget_override: None,
    };
    solve_horizon(&problem, &init, solver, &solar)
}

/// Scheme-aware initialization. The shadow plan rides the target exactly
/// and is feasible for every scheme except heading regulation, whose slope
/// rows the shadow may violate; that scheme starts from the subproblem
/// anchor construction instead.
pub fn initial_plan_for_scheme(
    track: &TargetTrack,
    cfg: &ScenarioConfig,
    scheme: Scheme,
) -> Result<TrajectoryPlan> {
    if !scheme.heading_rows() {
        return crate::scenario::initial_plan(track, cfg);
    }
    // The shadow generally violates the slope rows, so start from the
    // heading-aware anchor walk instead.
    let solar = default_solar_fit(cfg)?;
    let mut options = BuildOptions::offline(cfg, solar);
    options.heading = true;
    let seed = dc::anchor_walk(track, cfg, &options)?;
    let mut plan = vector_to_plan(&seed, [0.0, 0.0, cfg.monitor_z0]);
    // Tighten q back onto the slack equality where possible.
    for t in 1..=cfg.n_slots {
        let v = plan.horiz_speed(t, cfg.delta);
        plan.q[t - 1] = crate::power::solve_q_exact(v, cfg.propulsion.v0)?;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_target_track;
    use approx::assert_relative_eq;

    #[test]
    fn momentum_schedule_matches_accelerated_recursion() {
        let mut s = ExtrapolationState::new(50);
        let b0 = s.next_beta();
        let b1 = s.next_beta();
        let b2 = s.next_beta();
        assert_relative_eq!(b0, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b1, 0.0, epsilon = 1e-15);
        // beta_bar sequence: 1, 1, (1+sqrt(5))/2, ... and each momentum
        // coefficient is (beta_bar_prev - 1) / beta_bar_curr.
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        let bb3 = (1.0 + (1.0 + 4.0 * golden * golden).sqrt()) / 2.0;
        assert_relative_eq!(b2, (golden - 1.0) / bb3, max_relative = 1e-12);
        assert!((b2 - 0.2817).abs() < 1e-3);
    }

    #[test]
    fn momentum_restarts() {
        let mut s = ExtrapolationState::new(3);
        let first: Vec<f64> = (0..3).map(|_| s.next_beta()).collect();
        let second: Vec<f64> = (0..3).map(|_| s.next_beta()).collect();
        assert_eq!(first, second);
        assert!(first[2] > 0.0);
    }

    #[test]
    fn betas_stay_in_unit_interval() {
        let mut s = ExtrapolationState::new(0);
        for _ in 0..500 {
            let b = s.next_beta();
            assert!((0.0..1.0).contains(&b), "beta {b} out of range");
        }
    }

    #[test]
    fn small_offline_run_descends_monotonically() {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = 10;
        cfg.horizon_t = cfg.n_slots as f64 * cfg.delta;
        let track = generate_target_track(&cfg);
        let outcome = solve_offline(&cfg, &track, &SolverOptions::default()).unwrap();
        assert!(matches!(
            outcome.status,
            SolveStatus::Converged | SolveStatus::MaxIters
        ));
        assert!(!outcome.trace.is_empty());
        for w in outcome.trace.windows(2) {
            assert!(
                w[1].surrogate_objective <= w[0].surrogate_objective + 1e-9,
                "objective increased between iterations {} and {}",
                w[0].iter,
                w[1].iter
            );
        }
        // The plan beats the shadow initialization.
        let shadow = crate::scenario::initial_plan(&track, &cfg).unwrap();
        let phi_shadow =
            dc::scheme_objective(&shadow, &track, &cfg, ObjectiveKind::Surrogate).unwrap();
        assert!(outcome.trace.last().unwrap().surrogate_objective <= phi_shadow + 1e-9);
    }

    #[test]
    fn q_residual_is_zero_for_consistent_plans() {
        let cfg = ScenarioConfig::reference();
        let track = generate_target_track(&cfg);
        let shadow = crate::scenario::initial_plan(&track, &cfg).unwrap();
        assert!(max_q_residual(&shadow, &cfg) < 1e-10);
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::from_label(s.label()), Some(s));
        }
        assert_eq!(Scheme::from_label("bogus"), None);
    }
}
