//! Cross-validates the solver against the exhaustive grid oracle on a tiny
//! scenario. Two error sources separate the answers: the grid only visits
//! discrete waypoints (it can miss the continuous optimum by up to one
//! cell), and the solver converges to a stationary point of a nonconvex
//! program (it can settle slightly above the global optimum). Both effects
//! are covered by a grid-cell Lipschitz bound on the objective.

use covert_pursuit::dc;
use covert_pursuit::oracle::{brute_force_small, finite_diff_gradient, BruteForceOptions};
use covert_pursuit::pdcae::{solve_offline, SolverOptions};
use covert_pursuit::scenario::generate_target_track;
use covert_pursuit::{ScenarioConfig, TrajectoryPlan};
use nalgebra::DVector;

fn main() -> covert_pursuit::Result<()> {
    let mut cfg = ScenarioConfig::reference();
    cfg.n_slots = 2;
    cfg.horizon_t = 2.0 * cfg.delta;
    // Shrink the pursuit ball so the grid stays small at 0.5 m spacing.
    cfg.d_max = 3.0;
    let track = generate_target_track(&cfg);
    let n = cfg.n_slots;

    let options = BruteForceOptions {
        points_per_axis: [7, 7, 3],
        max_evaluations: 100_000_000,
    };
    let oracle = brute_force_small(&cfg, &track, &options)?;
    println!(
        "oracle incumbent {:.6} over {} trajectories",
        oracle.objective, oracle.evaluated
    );

    let solved = solve_offline(&cfg, &track, &SolverOptions::default())?;
    let objective = dc::exact_objective(&solved.plan, &track, &cfg)?;
    println!("solver objective {objective:.6} ({:?})", solved.status);

    let gap = (objective - oracle.objective).abs();
    println!("absolute gap: {gap:.6}");

    // Local Lipschitz estimate of the exact objective around both answers.
    let start = [0.0, 0.0, cfg.monitor_z0];
    let obj_of = |x: &DVector<f64>| -> f64 {
        let mut waypoints = vec![start];
        let mut q = Vec::new();
        for t in 0..n {
            waypoints.push([x[3 * t], x[3 * t + 1], x[3 * t + 2]]);
            q.push(1.0);
        }
        dc::exact_objective(&TrajectoryPlan { waypoints, q }, &track, &cfg).unwrap()
    };
    let mut lipschitz: f64 = 0.0;
    for plan in [&oracle.plan, &solved.plan] {
        let mut v = DVector::zeros(3 * n);
        for t in 1..=n {
            v[3 * (t - 1)] = plan.waypoints[t][0];
            v[3 * (t - 1) + 1] = plan.waypoints[t][1];
            v[3 * (t - 1) + 2] = plan.waypoints[t][2];
        }
        lipschitz = lipschitz.max(finite_diff_gradient(&obj_of, &v, 1e-5).norm());
    }
    let half_cell = oracle
        .spacing
        .iter()
        .map(|s| (s / 2.0) * (s / 2.0))
        .sum::<f64>()
        .sqrt();
    let bound = 2.0 * lipschitz * half_cell * (n as f64).sqrt() + 1e-3;
    println!("grid-cell Lipschitz bound: {bound:.6}");
    assert!(
        gap <= bound,
        "solver and grid oracle disagree beyond one grid cell: {gap:.4} > {bound:.4}"
    );
    println!("solver agrees with the grid oracle within one cell");
    Ok(())
}
