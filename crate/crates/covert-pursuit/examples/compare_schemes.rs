//! Runs every offline scheme on a reduced-horizon scenario and prints the
//! comparison table scored under the common weights.
//!
//! The heading-regulated scheme (`mdr`) reports an error row here: its
//! slope rows cap the pursuer's x speed below the target's beyond roughly
//! five seconds of this track, so no feasible plan exists on this horizon.

use covert_pursuit::harness::{self, HarnessConfig};
use covert_pursuit::report;

fn main() -> covert_pursuit::Result<()> {
    let mut config = HarnessConfig::reference();
    // A 6-second horizon keeps the six solves quick; drop this override to
    // reproduce the full-mission comparison.
    config.scenario.n_slots = 30;
    config.scenario.horizon_t = 30.0 * config.scenario.delta;

    let track = harness::load_or_generate_track(&config.scenario, None)?;
    let schemes: Vec<String> = ["proposed", "dko", "aco", "ndp", "dst", "mdr"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (rows, _) = harness::compare(&config, &schemes, &track, None)?;
    print!("{}", report::compare_csv(&rows));
    Ok(())
}
