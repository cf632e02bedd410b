//! Runs the receding-horizon online planner with the constant-velocity
//! target predictor and prints the executed tick log summary.

use covert_pursuit::mpc::{run_online, OnlineOptions, TargetPredictor};
use covert_pursuit::scenario::generate_target_track;
use covert_pursuit::ScenarioConfig;

fn main() -> covert_pursuit::Result<()> {
    let mut cfg = ScenarioConfig::reference();
    // 10-second mission with a 2-second lookahead window.
    cfg.n_slots = 50;
    cfg.horizon_t = 50.0 * cfg.delta;
    let track = generate_target_track(&cfg);

    let mut options = OnlineOptions::default();
    options.predictor = TargetPredictor::ConstantVelocity;
    options.window = 10;
    options.solver.max_outer_iters = 20;

    let outcome = run_online(&cfg, &track, &options)?;
    println!("tick  pos(x, y, z)                  pred_err  reserve_J  ffr");
    for tick in outcome.ticks.iter().step_by(5) {
        println!(
            "{:4}  ({:7.2}, {:7.2}, {:6.2})   {:7.3}   {:8.1}  {}",
            tick.tau, tick.x, tick.y, tick.z, tick.predicted_err, tick.reserve, tick.ffr_ok
        );
    }
    let last = outcome.ticks.last().unwrap();
    println!(
        "consumed {:.1} J, harvested {:.1} J, {} fallback slots",
        last.energy_consumed,
        last.energy_harvested,
        outcome.fallback_slots.len()
    );
    Ok(())
}
