//! Fits the linear solar under-estimator on an altitude band and prints
//! the fit quality against the exact harvesting curve.

use covert_pursuit::power::{fit_solar_linear, solar_power_exact};
use covert_pursuit::ScenarioConfig;

fn main() -> covert_pursuit::Result<()> {
    let cfg = ScenarioConfig::reference();
    let band = [cfg.z_lower, cfg.z_lower + 100.0];
    let fit = fit_solar_linear(&cfg.solar, band, 512)?;
    println!("band [{}, {}] m: c1 = {:.6} W/m, c2 = {:.4} W", band[0], band[1], fit.c1, fit.c2);

    let mut worst_gap = 0.0f64;
    for i in 0..=100 {
        let z = band[0] + (band[1] - band[0]) * i as f64 / 100.0;
        let exact = solar_power_exact(z, &cfg.solar)?;
        let linear = fit.eval(z);
        assert!(linear <= exact + 1e-9, "under-estimator property violated");
        worst_gap = worst_gap.max((exact - linear) / exact);
        if i % 20 == 0 {
            println!("z = {z:6.1} m   exact {exact:8.4} W   linear {linear:8.4} W");
        }
    }
    println!("worst relative gap over the band: {:.4}%", 100.0 * worst_gap);
    Ok(())
}
