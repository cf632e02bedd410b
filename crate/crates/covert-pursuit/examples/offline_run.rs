//! Plans the full reference mission offline and writes the report,
//! trajectory, and iteration artifacts to `out/`.
//!
//! Pass a smaller slot count as the first argument to try a quick run,
//! e.g. `cargo run --example offline_run -- 30`.

use std::path::Path;

use covert_pursuit::harness::{self, HarnessConfig};

fn main() -> covert_pursuit::Result<()> {
    let mut config = HarnessConfig::reference();
    if let Some(arg) = std::env::args().nth(1) {
        let n: usize = arg.parse().expect("slot count must be an integer");
        config.scenario.n_slots = n;
        config.scenario.horizon_t = n as f64 * config.scenario.delta;
    }
    let track = harness::load_or_generate_track(&config.scenario, None)?;
    let started = std::time::Instant::now();
    let report = harness::run_and_write(&config, "proposed", &track, Path::new("out"))?;
    println!(
        "status {:?} after {} outer iterations ({:.1} s)",
        report.status,
        report.trace.len(),
        started.elapsed().as_secs_f64()
    );
    println!(
        "energy consumed {:.1} J, harvested {:.1} J, disguise metric {:.1}",
        report.energy.consumed_j, report.energy.harvested_j, report.disguise_total
    );
    println!(
        "feasible: {} (max 3D distance {:.2} m)",
        report.audit.feasible, report.audit.max_d3
    );
    println!("artifacts in out/proposed_*.{{json,csv}}");
    Ok(())
}
