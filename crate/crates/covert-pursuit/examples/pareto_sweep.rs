//! Sweeps the disguising weights along mu1 + mu2 = 1 on a reduced horizon
//! and prints the power/disguise trade-off curve.

use covert_pursuit::harness::{self, HarnessConfig};
use covert_pursuit::report;

fn main() -> covert_pursuit::Result<()> {
    let mut config = HarnessConfig::reference();
    config.scenario.n_slots = 30;
    config.scenario.horizon_t = 30.0 * config.scenario.delta;

    let track = harness::load_or_generate_track(&config.scenario, None)?;
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows = harness::pareto_sweep(&config, &grid, &track)?;
    print!("{}", report::sweep_csv(&rows));
    Ok(())
}
