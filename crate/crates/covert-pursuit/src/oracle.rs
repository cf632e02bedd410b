//! Independent reference computations for validating the solver: an
//! exhaustive grid search over tiny instances and finite-difference
//! gradients.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::power;
use crate::scenario::{self, ScenarioConfig, TargetTrack, TrajectoryPlan};

/// Exhaustive search over a waypoint grid.
#[derive(Debug, Clone)]
pub struct BruteForceOutcome {
    pub plan: TrajectoryPlan,
    pub objective: f64,
    /// Number of full candidate trajectories evaluated.
    pub evaluated: u64,
    /// Grid spacing actually used per axis.
    pub spacing: [f64; 3],
}

/// Settings of the exhaustive search.
#[derive(Debug, Clone)]
pub struct BruteForceOptions {
    /// Grid points per axis per slot.
    pub points_per_axis: [usize; 3],
    /// Hard cap on trajectory evaluations; the search refuses to start if
    /// the grid could exceed it.
    pub max_evaluations: u64,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        BruteForceOptions {
            points_per_axis: [9, 9, 5],
            max_evaluations: 100_000_000,
        }
    }
}

/// Exact-model objective of one slot transition.
fn slot_cost(
    prev: [f64; 3],
    next: [f64; 3],
    target: (f64, f64),
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let dx = next[0] - prev[0];
    let dy = next[1] - prev[1];
    let v_h = (dx * dx + dy * dy).sqrt() / cfg.delta;
    let p_h = power::propulsion_power_exact(v_h, &cfg.propulsion)?;
    let p_v = cfg.thrust.weight_force() * (next[2] - prev[2]) / cfg.delta;
    let d2 = (next[0] - target.0).powi(2) + (next[1] - target.1).powi(2);
    let dz = next[2] - prev[2];
    Ok(p_h + p_v - cfg.mu1 * d2 - cfg.mu2 * dz * dz)
}

/// Exhaustively minimizes the exact-model objective over a per-slot grid.
///
/// Each slot's candidate positions form a box around the target waypoint:
/// x and y span `[a - d_max, a]` x `[b - d_max, b]` (the trailing
/// half of the distance ball) and z spans the admissible altitude band.
/// Candidates violating mobility or the flight region are pruned. Only
/// meant for tiny instances (a few slots); the search refuses grids whose
/// worst-case evaluation count exceeds the cap.
///
/// Ties are broken lexicographically by slot-major (x, y, z) order, so the
/// result is deterministic.
pub fn brute_force_small(
    cfg: &ScenarioConfig,
    track: &TargetTrack,
    options: &BruteForceOptions,
) -> Result<BruteForceOutcome> {
    cfg.validate()?;
    let n = cfg.n_slots;
    if track.n_slots() != n {
        return Err(Error::Scenario(format!(
            "track has {} slots, config expects {}",
            track.n_slots(),
            n
        )));
    }
    let [nx, ny, nz] = options.points_per_axis;
    if nx < 2 || ny < 2 || nz < 1 {
        return Err(Error::Scenario(
            "exhaustive search needs at least 2x2x1 grid points".into(),
        ));
    }
    let per_slot = (nx * ny * nz) as u64;
    let worst: u64 = per_slot
        .checked_pow(n as u32)
        .ok_or_else(|| Error::Scenario("grid size overflows".into()))?;
    if worst > options.max_evaluations {
        return Err(Error::Scenario(format!(
            "grid would require up to {worst} evaluations (cap {})",
            options.max_evaluations
        )));
    }

    // Candidate positions per slot.
    let z_lo = cfg.z_lower;
    let z_hi = cfg.target_alt_h + cfg.d_max;
    let mut slots: Vec<Vec<[f64; 3]>> = Vec::with_capacity(n);
    for t in 1..=n {
        let (a, b) = track.waypoints[t];
        let mut pts = Vec::new();
        for ix in 0..nx {
            let x = a - cfg.d_max + cfg.d_max * ix as f64 / (nx - 1) as f64;
            for iy in 0..ny {
                let y = b - cfg.d_max + cfg.d_max * iy as f64 / (ny - 1) as f64;
                for iz in 0..nz {
                    let z = if nz == 1 {
                        cfg.monitor_z0
                    } else {
                        z_lo + (z_hi - z_lo) * iz as f64 / (nz - 1) as f64
                    };
                    let wp = [x, y, z];
                    if scenario::in_ffr(wp, (a, b), cfg) {
                        pts.push(wp);
                    }
                }
            }
        }
        if pts.is_empty() {
            return Err(Error::InfeasibleConstruction(format!(
                "no grid point lies in the flight region at slot {t}"
            )));
        }
        slots.push(pts);
    }

    struct Search<'a> {
        cfg: &'a ScenarioConfig,
        track: &'a TargetTrack,
        slots: &'a [Vec<[f64; 3]>],
        evaluated: u64,
        best: f64,
        best_path: Vec<[f64; 3]>,
        path: Vec<[f64; 3]>,
    }

    impl Search<'_> {
        fn recurse(&mut self, t: usize, cost_so_far: f64) -> Result<()> {
            let n = self.slots.len();
            if t > n {
                self.evaluated += 1;
                if cost_so_far < self.best - 1e-13 {
                    self.best = cost_so_far;
                    self.best_path = self.path.clone();
                }
                return Ok(());
            }
            let prev = self.path[t - 1];
            let h_max = self.cfg.max_horiz_step();
            let v_max = self.cfg.max_vert_step();
            let dz_prev = if t >= 2 {
                self.path[t - 1][2] - self.path[t - 2][2]
            } else {
                0.0
            };
            // Candidate list is in lexicographic construction order, so the
            // first strictly better trajectory wins ties deterministically.
            for &wp in &self.slots[t - 1] {
                let dx = wp[0] - prev[0];
                let dy = wp[1] - prev[1];
                let dz = wp[2] - prev[2];
                if dx * dx + dy * dy > h_max * h_max + 1e-12 {
                    continue;
                }
                if dz.abs() > v_max + 1e-12 {
                    continue;
                }
                if t >= 2 && (dz - dz_prev).abs() > v_max + 1e-12 {
                    continue;
                }
                let c = slot_cost(prev, wp, self.track.waypoints[t], self.cfg)?;
                self.path.push(wp);
                self.recurse(t + 1, cost_so_far + c)?;
                self.path.pop();
            }
            Ok(())
        }
    }

    let mut search = Search {
        cfg,
        track,
        slots: &slots,
        evaluated: 0,
        best: f64::INFINITY,
        best_path: Vec::new(),
        path: vec![[0.0, 0.0, cfg.monitor_z0]],
    };
    search.recurse(1, 0.0)?;
    if search.best_path.is_empty() {
        return Err(Error::InfeasibleConstruction(
            "no mobility-feasible trajectory exists on the grid".into(),
        ));
    }

    let plan_wps = search.best_path.clone();
    let mut q = Vec::with_capacity(n);
    for t in 1..=n {
        let dx = plan_wps[t][0] - plan_wps[t - 1][0];
        let dy = plan_wps[t][1] - plan_wps[t - 1][1];
        let v = (dx * dx + dy * dy).sqrt() / cfg.delta;
        q.push(power::solve_q_exact(v, cfg.propulsion.v0)?);
    }
    Ok(BruteForceOutcome {
        plan: TrajectoryPlan {
            waypoints: plan_wps,
            q,
        },
        objective: search.best,
        evaluated: search.evaluated,
        spacing: [
            cfg.d_max / (nx - 1) as f64,
            cfg.d_max / (ny - 1) as f64,
            if nz > 1 { (z_hi - z_lo) / (nz - 1) as f64 } else { 0.0 },
        ],
    })
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_diff_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc;
    use crate::scenario::generate_target_track;
    use approx::assert_relative_eq;

    fn toy_cfg(n: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = n;
        cfg.horizon_t = n as f64 * cfg.delta;
        cfg
    }

    #[test]
    fn refuses_oversized_grids() {
        let cfg = toy_cfg(3);
        let track = generate_target_track(&cfg);
        let options = BruteForceOptions {
            points_per_axis: [60, 60, 30],
            max_evaluations: 1_000_000,
        };
        assert!(brute_force_small(&cfg, &track, &options).is_err());
    }

    #[test]
    fn search_is_deterministic() {
        let cfg = toy_cfg(2);
        let track = generate_target_track(&cfg);
        let options = BruteForceOptions {
            points_per_axis: [7, 7, 3],
            max_evaluations: 10_000_000,
        };
        let a = brute_force_small(&cfg, &track, &options).unwrap();
        let b = brute_force_small(&cfg, &track, &options).unwrap();
        assert_eq!(a.plan.waypoints, b.plan.waypoints);
        assert_eq!(a.evaluated, b.evaluated);
        assert!(a.evaluated > 0);
    }

    #[test]
    fn grid_optimum_matches_direct_objective_recomputation() {
        let cfg = toy_cfg(2);
        let track = generate_target_track(&cfg);
        let options = BruteForceOptions {
            points_per_axis: [7, 7, 3],
            max_evaluations: 10_000_000,
        };
        let outcome = brute_force_small(&cfg, &track, &options).unwrap();
        let direct = dc::exact_objective(&outcome.plan, &track, &cfg).unwrap();
        assert_relative_eq!(outcome.objective, direct, max_relative = 1e-9);
    }

    #[test]
    fn finite_differences_recover_a_quadratic_gradient() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let g = finite_diff_gradient(|v| v.norm_squared(), &x, 1e-6);
        for i in 0..3 {
            assert_relative_eq!(g[i], 2.0 * x[i], max_relative = 1e-6);
        }
    }
}
