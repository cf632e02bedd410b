//! Receding-horizon online planning.
//!
//! At each tick the monitor predicts the target over a lookahead window,
//! plans that window with the proximal DC solver, executes the first slot,
//! and updates an exact-model energy ledger. Prediction is either
//! constant-velocity extrapolation from the last two observations or an
//! oracle that reads the true future track.

use serde::{Deserialize, Serialize};

use crate::dc;
use crate::error::{Error, Result};
use crate::pdcae::{
    self, solve_horizon, HorizonProblem, SolveStatus, SolverOptions,
};
use crate::power::{self, SolarLinearApprox};
use crate::scenario::{self, ScenarioConfig, TargetTrack, TrajectoryPlan};

/// How the online planner forecasts the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetPredictor {
    /// Extrapolate the last observed displacement.
    ConstantVelocity,
    /// Read the true future track (idealized upper bound).
    Oracle,
}

/// One executed tick of the online loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    /// Slot index (1-based, matches the offline slot numbering).
    pub tau: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Horizontal distance between the predicted and true target position
    /// at the executed slot.
    pub predicted_err: f64,
    /// Cumulative exact-model consumption (J).
    pub energy_consumed: f64,
    /// Cumulative exact-model harvest (J).
    pub energy_harvested: f64,
    /// Stored energy remaining (J).
    pub reserve: f64,
    /// Whether the executed waypoint stays inside the feasible flight
    /// region around the true target.
    pub ffr_ok: bool,
}

/// Options of the online loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineOptions {
    pub predictor: TargetPredictor,
    /// Lookahead window length in slots.
    pub window: usize,
    pub solver: SolverOptions,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        OnlineOptions {
            predictor: TargetPredictor::ConstantVelocity,
            window: 25,
            solver: SolverOptions::default(),
        }
    }
}

/// Full result of an online run.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub plan: TrajectoryPlan,
    pub ticks: Vec<TickRecord>,
    /// Slots where the planner had to fall back to the greedy pursuit walk
    /// because the window solve failed.
    pub fallback_slots: Vec<usize>,
}

/// Predicts the target over `window` future slots given observations up to
/// slot `now` (inclusive).
pub fn predict_target(
    track: &TargetTrack,
    now: usize,
    window: usize,
    predictor: TargetPredictor,
) -> Result<TargetTrack> {
    let n = track.n_slots();
    if now > n {
        return Err(Error::Scenario(format!(
            "prediction base slot {now} beyond track end {n}"
        )));
    }
    let horizon = window.min(n - now);
    if horizon == 0 {
        return Err(Error::Scenario("no future slots left to predict".into()));
    }
    let mut waypoints = Vec::with_capacity(horizon + 1);
    waypoints.push(track.waypoints[now]);
    match predictor {
        TargetPredictor::Oracle => {
            for k in 1..=horizon {
                waypoints.push(track.waypoints[now + k]);
            }
        }
        TargetPredictor::ConstantVelocity => {
            let (a1, b1) = track.waypoints[now];
            let (da, db) = if now >= 1 {
                let (a0, b0) = track.waypoints[now - 1];
                (a1 - a0, b1 - b0)
            } else {
                (0.0, 0.0)
            };
            for k in 1..=horizon {
                waypoints.push((a1 + da * k as f64, b1 + db * k as f64));
            }
        }
    }
    Ok(TargetTrack {
        waypoints,
        alt: track.alt,
    })
}

/// Greedy one-window pursuit walk used to seed each window solve and as a
/// fallback when the solve fails: reuses the anchor construction.
fn greedy_window_plan(
    start: [f64; 3],
    predicted: &TargetTrack,
    cfg: &ScenarioConfig,
    solar: &SolarLinearApprox,
    heading: bool,
) -> Result<TrajectoryPlan> {
    let mut options = dc::BuildOptions::offline(cfg, *solar);
    options.heading = heading;
    options.start = start;
    let x = dc::anchor_walk(predicted, cfg, &options)?;
    Ok(dc::vector_to_plan(&x, start))
}

/// Live state of the online loop at a tick boundary.
#[derive(Debug, Clone, Copy)]
pub struct MpcState {
    /// Monitor position at the start of the upcoming slot.
    pub position: [f64; 3],
    /// Altitude step executed over the previous slot, if any; constrains
    /// the first vertical acceleration of the next window.
    pub prev_alt_step: Option<f64>,
    /// Cumulative exact-model consumption so far (J).
    pub consumed: f64,
    /// Cumulative exact-model harvest so far (J).
    pub harvested: f64,
}

impl MpcState {
    /// State at mission start: hovering at the initial altitude over the
    /// origin with a full battery.
    pub fn mission_start(cfg: &ScenarioConfig) -> Self {
        MpcState {
            position: [0.0, 0.0, cfg.monitor_z0],
            prev_alt_step: None,
            consumed: 0.0,
            harvested: 0.0,
        }
    }

    /// Stored energy remaining (J).
    pub fn reserve(&self, cfg: &ScenarioConfig) -> f64 {
        cfg.e0 + self.harvested - self.consumed
    }
}

/// Plans one lookahead window from the live state against a predicted
/// target track. The energy budget is anchored at the current ledger with
/// the reserve floor `(1 - eta0) * E0` untouchable, so at mission start it
/// equals the offline storage budget; at mission start the offline
/// initializer also seeds the solve, which makes a full-window oracle plan
/// coincide with the offline one.
pub fn plan_horizon(
    state: &MpcState,
    predicted: &TargetTrack,
    cfg: &ScenarioConfig,
    solver: &SolverOptions,
    solar: &SolarLinearApprox,
) -> Result<TrajectoryPlan> {
    let horizon = predicted.n_slots();
    if horizon == 0 {
        return Err(Error::Scenario("empty lookahead window".into()));
    }
    let mut window_cfg = cfg.clone();
    window_cfg.n_slots = horizon;
    window_cfg.horizon_t = horizon as f64 * window_cfg.delta;

    let budget = (state.reserve(cfg) - (1.0 - cfg.eta0) * cfg.e0).max(0.0) / cfg.delta;
    let problem = HorizonProblem {
        cfg: &window_cfg,
        track: predicted,
        start: state.position,
        prev_alt_step: state.prev_alt_step,
        energy_budget_override: Some(budget),
    };

    let at_start = state.position == [0.0, 0.0, cfg.monitor_z0] && state.prev_alt_step.is_none();
    let seed = if at_start {
        pdcae::initial_plan_for_scheme(predicted, &window_cfg, solver.scheme)
            .or_else(|_| greedy_window_plan(state.position, predicted, &window_cfg, solar, false))
    } else {
        greedy_window_plan(state.position, predicted, &window_cfg, solar, false)
    }?;
    // The seed must respect the boundary acceleration row too.
    if let Some(dz_prev) = state.prev_alt_step {
        let dz1 = seed.waypoints[1][2] - seed.waypoints[0][2];
        if (dz1 - dz_prev).abs() > window_cfg.max_vert_step() + 1e-12 {
            return Err(Error::InfeasibleConstruction(
                "seed violates the boundary acceleration row".into(),
            ));
        }
    }

    let outcome = solve_horizon(&problem, &seed, solver, solar)?;
    match outcome.status {
        SolveStatus::Converged | SolveStatus::MaxIters => Ok(outcome.plan),
        SolveStatus::Stalled => Err(Error::InnerSolver {
            message: "window solve stalled".into(),
            kkt_residual: f64::NAN,
        }),
    }
}

/// Runs the online receding-horizon loop over the whole mission.
pub fn run_online(
    cfg: &ScenarioConfig,
    track: &TargetTrack,
    options: &OnlineOptions,
) -> Result<OnlineOutcome> {
    cfg.validate()?;
    if options.window == 0 {
        return Err(Error::Scenario("lookahead window must be nonempty".into()));
    }
    let mut scheme_cfg = cfg.clone();
    options.solver.scheme.apply_weights(&mut scheme_cfg);
    let solar = pdcae::default_solar_fit(&scheme_cfg)?;
    let n = scheme_cfg.n_slots;
    if track.n_slots() != n {
        return Err(Error::Scenario(format!(
            "track has {} slots, config expects {}",
            track.n_slots(),
            n
        )));
    }

    let mut waypoints = vec![[0.0, 0.0, scheme_cfg.monitor_z0]];
    let mut q_hist = Vec::with_capacity(n);
    let mut ticks = Vec::with_capacity(n);
    let mut fallback_slots = Vec::new();
    let mut state = MpcState::mission_start(&scheme_cfg);

    for now in 0..n {
        let pos = state.position;
        let predicted = predict_target(track, now, options.window, options.predictor)?;

        let (wp, q) = match plan_horizon(&state, &predicted, &scheme_cfg, &options.solver, &solar)
        {
            Ok(plan) => (plan.waypoints[1], plan.q[0]),
            Err(_) => {
                // Greedy fallback: walk one capped step toward an offset
                // shadow of the prediction, holding altitude.
                fallback_slots.push(now + 1);
                let mut window_cfg = scheme_cfg.clone();
                window_cfg.n_slots = predicted.n_slots();
                window_cfg.horizon_t = window_cfg.n_slots as f64 * window_cfg.delta;
                let fallback = greedy_window_plan(pos, &predicted, &window_cfg, &solar, false)?;
                (fallback.waypoints[1], fallback.q[0])
            }
        };

        // Execute the first slot and update the exact-model ledger.
        let dx = wp[0] - pos[0];
        let dy = wp[1] - pos[1];
        let dz = wp[2] - pos[2];
        let v_h = (dx * dx + dy * dy).sqrt() / scheme_cfg.delta;
        let p_h = power::propulsion_power_exact(v_h, &scheme_cfg.propulsion)?;
        let p_v = power::thrust_power(wp[2], pos[2], &scheme_cfg.thrust, scheme_cfg.delta)?;
        let p_s = power::solar_power_exact(wp[2], &scheme_cfg.solar)?;
        state.consumed += (p_h + p_v) * scheme_cfg.delta;
        state.harvested += scheme_cfg.eta0 * p_s * scheme_cfg.delta;
        state.position = wp;
        state.prev_alt_step = Some(dz);

        let true_target = track.waypoints[now + 1];
        let predicted_pos = predicted.waypoints[1];
        let predicted_err = ((predicted_pos.0 - true_target.0).powi(2)
            + (predicted_pos.1 - true_target.1).powi(2))
        .sqrt();
        let ffr_ok = scenario::in_ffr(wp, true_target, &scheme_cfg);

        waypoints.push(wp);
        q_hist.push(q);
        ticks.push(TickRecord {
            tau: now + 1,
            x: wp[0],
            y: wp[1],
            z: wp[2],
            predicted_err,
            energy_consumed: state.consumed,
            energy_harvested: state.harvested,
            reserve: state.reserve(&scheme_cfg),
            ffr_ok,
        });
    }

    Ok(OnlineOutcome {
        plan: TrajectoryPlan {
            waypoints,
            q: q_hist,
        },
        ticks,
        fallback_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_target_track;
    use approx::assert_relative_eq;

    fn short_cfg(n: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = n;
        cfg.horizon_t = n as f64 * cfg.delta;
        cfg
    }

    #[test]
    fn oracle_prediction_reads_the_true_track() {
        let cfg = short_cfg(20);
        let track = generate_target_track(&cfg);
        let p = predict_target(&track, 5, 6, TargetPredictor::Oracle).unwrap();
        assert_eq!(p.n_slots(), 6);
        for k in 0..=6 {
            assert_eq!(p.waypoints[k], track.waypoints[5 + k]);
        }
    }

    #[test]
    fn constant_velocity_prediction_extrapolates() {
        let cfg = short_cfg(20);
        let track = generate_target_track(&cfg);
        let p = predict_target(&track, 5, 4, TargetPredictor::ConstantVelocity).unwrap();
        let (a1, b1) = track.waypoints[5];
        let (a0, b0) = track.waypoints[4];
        for k in 1..=4 {
            let (pa, pb) = p.waypoints[k];
            assert_relative_eq!(pa, a1 + (a1 - a0) * k as f64, max_relative = 1e-12);
            assert_relative_eq!(pb, b1 + (b1 - b0) * k as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn window_clips_at_mission_end() {
        let cfg = short_cfg(10);
        let track = generate_target_track(&cfg);
        let p = predict_target(&track, 8, 25, TargetPredictor::Oracle).unwrap();
        assert_eq!(p.n_slots(), 2);
        assert!(predict_target(&track, 10, 5, TargetPredictor::Oracle).is_err());
    }

    #[test]
    fn online_run_executes_every_slot_and_keeps_the_ledger_consistent() {
        let cfg = short_cfg(12);
        let track = generate_target_track(&cfg);
        let mut options = OnlineOptions::default();
        options.window = 5;
        options.solver.max_outer_iters = 15;
        let outcome = run_online(&cfg, &track, &options).unwrap();
        assert_eq!(outcome.ticks.len(), 12);
        assert_eq!(outcome.plan.n_slots(), 12);
        // Ledger identity reserve = e0 + harvested - consumed.
        for tick in &outcome.ticks {
            assert_relative_eq!(
                tick.reserve,
                cfg.e0 + tick.energy_harvested - tick.energy_consumed,
                max_relative = 1e-12
            );
        }
        // Harvested energy is cumulative; consumed energy may dip on descent
        // because vertical thrust power is negative there.
        for w in outcome.ticks.windows(2) {
            assert!(w[1].energy_harvested >= w[0].energy_harvested);
        }
        // The executed path respects mobility.
        assert!(scenario::audit_mobility(&outcome.plan, &cfg).unwrap().is_empty());
    }

    #[test]
    fn oracle_predictor_has_zero_prediction_error() {
        let cfg = short_cfg(8);
        let track = generate_target_track(&cfg);
        let mut options = OnlineOptions::default();
        options.predictor = TargetPredictor::Oracle;
        options.window = 4;
        options.solver.max_outer_iters = 10;
        let outcome = run_online(&cfg, &track, &options).unwrap();
        for tick in &outcome.ticks {
            assert!(tick.predicted_err < 1e-12);
            assert!(tick.ffr_ok, "slot {} left the flight region", tick.tau);
        }
    }
}
