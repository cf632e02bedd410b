//! Scenario configuration, target tracks, trajectory plans, and the
//! feasibility predicates used both by the solver and the post-hoc audits.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{self, PropulsionParams, SolarParams, ThrustParams};

/// Immutable per-run scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Mission duration T (s).
    pub horizon_t: f64,
    /// Slot duration delta (s).
    pub delta: f64,
    /// Number of slots N (= T / delta).
    pub n_slots: usize,
    /// Maximum horizontal speed (m/s).
    pub v_hm: f64,
    /// Maximum vertical speed (m/s).
    pub v_vm: f64,
    /// Target altitude H (m).
    pub target_alt_h: f64,
    /// Monitor initial altitude z0 (m).
    pub monitor_z0: f64,
    /// Monitor altitude floor z_l (m).
    pub z_lower: f64,
    /// Maximum 3D monitor-target distance D (m).
    pub d_max: f64,
    /// Weight of horizontal distance keeping (W/m^2).
    pub mu1: f64,
    /// Weight of altitude changing (W/m^2).
    pub mu2: f64,
    /// Initial battery energy E0 (J).
    pub e0: f64,
    /// Usable battery ratio eta0, in (0, 1].
    pub eta0: f64,
    /// Heading-slope margin c3 for moving-direction regulation.
    pub c3: f64,
    pub propulsion: PropulsionParams,
    pub thrust: ThrustParams,
    pub solar: SolarParams,
}

impl ScenarioConfig {
    /// The reference scenario: a 30 s mission at 0.2 s slots with the
    /// standard rotary-wing and solar panel parameters.
    pub fn reference() -> Self {
        ScenarioConfig {
            horizon_t: 30.0,
            delta: 0.2,
            n_slots: 150,
            v_hm: 30.0,
            v_vm: 8.0,
            target_alt_h: 100.0,
            monitor_z0: 102.0,
            z_lower: 101.0,
            d_max: 20.0,
            mu1: 0.2,
            mu2: 0.1,
            e0: 50_000.0,
            eta0: 0.9,
            c3: 1.0,
            propulsion: PropulsionParams {
                p0: 3.4,
                p1: 118.0,
                u_tip: 60.0,
                v0: 5.4,
                d_f: 0.3,
                rho: 1.225,
                s: 0.03,
                a_disc: 0.28,
            },
            thrust: ThrustParams { mass: 4.0, g: 9.8 },
            solar: SolarParams {
                eta: 0.4,
                s_panel: 0.5,
                p_i: 1367.0,
                alpha: 0.8978,
                cos_zenith: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propulsion.validate()?;
        self.thrust.validate()?;
        self.solar.validate()?;
        if !(self.delta > 0.0) || self.n_slots == 0 {
            return Err(Error::Scenario("delta and n_slots must be positive".into()));
        }
        if (self.n_slots as f64 * self.delta - self.horizon_t).abs() > 1e-9 * self.horizon_t.max(1.0)
        {
            return Err(Error::Scenario(format!(
                "n_slots * delta = {} does not match horizon_t = {}",
                self.n_slots as f64 * self.delta,
                self.horizon_t
            )));
        }
        if !(self.target_alt_h < self.z_lower && self.z_lower <= self.monitor_z0) {
            return Err(Error::Scenario(format!(
                "need H < z_l <= z0, got H={}, z_l={}, z0={}",
                self.target_alt_h, self.z_lower, self.monitor_z0
            )));
        }
        if !(self.d_max > self.z_lower - self.target_alt_h) {
            return Err(Error::Scenario(format!(
                "d_max={} must exceed z_l - H = {}",
                self.d_max,
                self.z_lower - self.target_alt_h
            )));
        }
        if !(self.eta0 > 0.0 && self.eta0 <= 1.0) {
            return Err(Error::Scenario(format!("eta0 must be in (0,1], got {}", self.eta0)));
        }
        if self.mu1 < 0.0 || self.mu2 < 0.0 {
            return Err(Error::Scenario("mu1 and mu2 must be nonnegative".into()));
        }
        if !(self.v_hm > 0.0 && self.v_vm > 0.0) {
            return Err(Error::Scenario("speed limits must be positive".into()));
        }
        if self.e0 < 0.0 {
            return Err(Error::Scenario("e0 must be nonnegative".into()));
        }
        Ok(())
    }

    /// Largest horizontal displacement per slot (m).
    pub fn max_horiz_step(&self) -> f64 {
        self.v_hm * self.delta
    }

    /// Largest altitude change per slot (m).
    pub fn max_vert_step(&self) -> f64 {
        self.v_vm * self.delta
    }

    /// Usable initial energy, expressed in cumulative-power units (W slots).
    pub fn energy_budget_rows(&self) -> f64 {
        self.eta0 * self.e0 / self.delta
    }
}

/// Target waypoints at fixed altitude H, one per slot including slot 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTrack {
    /// (a_t, b_t) per slot, t = 0..=N.
    pub waypoints: Vec<(f64, f64)>,
    /// Target altitude H (m).
    pub alt: f64,
}

impl TargetTrack {
    pub fn n_slots(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    /// Largest per-slot 2D displacement of the target.
    pub fn max_step(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Generates the reference target track: `a(t) = 10 t`, `b(t) = 100 sin(t/5)`
/// with `t` the elapsed mission time in seconds.
pub fn generate_target_track(cfg: &ScenarioConfig) -> TargetTrack {
    let waypoints = (0..=cfg.n_slots)
        .map(|slot| {
            let t = slot as f64 * cfg.delta;
            (10.0 * t, 100.0 * (t / 5.0).sin())
        })
        .collect();
    TargetTrack {
        waypoints,
        alt: cfg.target_alt_h,
    }
}

/// Loads a target track from CSV with header `t,a,b` and slot-indexed rows.
pub fn load_target_track(path: &Path, alt: f64) -> Result<TargetTrack> {
    let mut file = std::fs::File::open(path)?;
    let mut content = String::new();
    file.read_to_string(&mut content)?;
    parse_target_track(&content, alt)
}

pub fn parse_target_track(content: &str, alt: f64) -> Result<TargetTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    {
        let headers = reader.headers()?;
        if headers.iter().collect::<Vec<_>>() != ["t", "a", "b"] {
            return Err(Error::Parse(format!(
                "expected header `t,a,b`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut waypoints = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header
        if record.len() != 3 {
            return Err(Error::Parse(format!("row {row}: expected 3 fields")));
        }
        let slot: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad slot index `{}`", &record[0])))?;
        if slot != row_idx {
            return Err(Error::Parse(format!(
                "row {row}: expected slot {row_idx}, found slot {slot}"
            )));
        }
        let a: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad a value `{}`", &record[1])))?;
        let b: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad b value `{}`", &record[2])))?;
        waypoints.push((a, b));
    }
    if waypoints.is_empty() {
        return Err(Error::Parse("no waypoints".into()));
    }
    Ok(TargetTrack { waypoints, alt })
}

/// Writes a target track as CSV (`t,a,b`, LF line endings). Round-trips
/// bit-exactly through [`load_target_track`].
pub fn export_target_track(track: &TargetTrack, out: &mut dyn Write) -> Result<()> {
    out.write_all(b"t,a,b\n")?;
    for (slot, (a, b)) in track.waypoints.iter().enumerate() {
        // Ryu-style shortest round-trip formatting keeps the round trip exact.
        writeln!(out, "{slot},{a},{b}")?;
    }
    Ok(())
}

/// Monitor trajectory: waypoint 0 is the fixed start `(0, 0, z0)`, plus the
/// per-slot substitution slack `q_t`, t = 1..=N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    /// (x, y, z) per slot, t = 0..=N; entry 0 is the start.
    pub waypoints: Vec<[f64; 3]>,
    /// Substitution slack per slot, t = 1..=N.
    pub q: Vec<f64>,
}

impl TrajectoryPlan {
    pub fn n_slots(&self) -> usize {
        self.q.len()
    }

    pub fn validate_shape(&self, n_slots: usize) -> Result<()> {
        if self.waypoints.len() != n_slots + 1 || self.q.len() != n_slots {
            return Err(Error::Scenario(format!(
                "plan shape mismatch: {} waypoints / {} slacks for {} slots",
                self.waypoints.len(),
                self.q.len(),
                n_slots
            )));
        }
        Ok(())
    }

    /// Horizontal displacement between slots `t-1` and `t`, t >= 1.
    pub fn horiz_step(&self, t: usize) -> f64 {
        let [x1, y1, _] = self.waypoints[t];
        let [x0, y0, _] = self.waypoints[t - 1];
        ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
    }

    /// Altitude change between slots `t-1` and `t`, t >= 1.
    pub fn alt_step(&self, t: usize) -> f64 {
        self.waypoints[t][2] - self.waypoints[t - 1][2]
    }

    /// Horizontal speed during slot t (m/s).
    pub fn horiz_speed(&self, t: usize, delta: f64) -> f64 {
        self.horiz_step(t) / delta
    }
}

/// Feasible flight region membership (inclusive boundaries): the monitor
/// trails the target (`x <= a`, `y <= b`), stays above the floor, and keeps
/// the 3D distance within `d_max`.
pub fn in_ffr(monitor_wp: [f64; 3], target_wp: (f64, f64), cfg: &ScenarioConfig) -> bool {
    let [x, y, z] = monitor_wp;
    let (a, b) = target_wp;
    let d3_sq = (x - a).powi(2) + (y - b).powi(2) + (z - cfg.target_alt_h).powi(2);
    d3_sq <= cfg.d_max * cfg.d_max && x <= a && y <= b && z >= cfg.z_lower
}

/// Which mobility constraint a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MobilityConstraint {
    /// Per-slot horizontal displacement bound.
    Horizontal,
    /// Per-slot altitude change bound.
    Vertical,
    /// Bound on the change of altitude rate between consecutive slots.
    VerticalAccel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityViolation {
    pub slot: usize,
    pub constraint: MobilityConstraint,
    /// Amount by which the bound is exceeded (m).
    pub magnitude: f64,
}

const AUDIT_TOL: f64 = 1e-9;

/// Checks per-slot speed, climb-rate, and climb-acceleration limits.
pub fn audit_mobility(plan: &TrajectoryPlan, cfg: &ScenarioConfig) -> Result<Vec<MobilityViolation>> {
    plan.validate_shape(cfg.n_slots)?;
    let mut violations = Vec::new();
    let h_max = cfg.max_horiz_step();
    let v_max = cfg.max_vert_step();
    for t in 1..=cfg.n_slots {
        let h = plan.horiz_step(t);
        if h > h_max + AUDIT_TOL {
            violations.push(MobilityViolation {
                slot: t,
                constraint: MobilityConstraint::Horizontal,
                magnitude: h - h_max,
            });
        }
        let dz = plan.alt_step(t).abs();
        if dz > v_max + AUDIT_TOL {
            violations.push(MobilityViolation {
                slot: t,
                constraint: MobilityConstraint::Vertical,
                magnitude: dz - v_max,
            });
        }
        if t >= 2 {
            let accel = (plan.alt_step(t) - plan.alt_step(t - 1)).abs();
            if accel > v_max + AUDIT_TOL {
                violations.push(MobilityViolation {
                    slot: t,
                    constraint: MobilityConstraint::VerticalAccel,
                    magnitude: accel - v_max,
                });
            }
        }
    }
    Ok(violations)
}

/// Per-slot disguising reward `f_t = mu1 d_t^2 + mu2 dz_t^2`, t = 1..=N.
pub fn disguise_metric(
    plan: &TrajectoryPlan,
    track: &TargetTrack,
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    (1..=plan.n_slots())
        .map(|t| {
            let [x, y, _] = plan.waypoints[t];
            let (a, b) = track.waypoints[t];
            let d2 = (x - a).powi(2) + (y - b).powi(2);
            let dz = plan.alt_step(t);
            cfg.mu1 * d2 + cfg.mu2 * dz * dz
        })
        .collect()
}

/// Builds the shadow initialization: the monitor copies the target's
/// horizontal waypoints at altitude z0, with `q_t` from the implied speed.
///
/// Errors when the shadow plan is itself infeasible (mobility or FFR), in
/// which case the scenario needs adjusting.
pub fn initial_plan(track: &TargetTrack, cfg: &ScenarioConfig) -> Result<TrajectoryPlan> {
    cfg.validate()?;
    if track.n_slots() != cfg.n_slots {
        return Err(Error::Scenario(format!(
            "track has {} slots, config expects {}",
            track.n_slots(),
            cfg.n_slots
        )));
    }
    let mut waypoints = Vec::with_capacity(cfg.n_slots + 1);
    waypoints.push([0.0, 0.0, cfg.monitor_z0]);
    for t in 1..=cfg.n_slots {
        let (a, b) = track.waypoints[t];
        waypoints.push([a, b, cfg.monitor_z0]);
    }
    let mut q = Vec::with_capacity(cfg.n_slots);
    let plan_tmp = TrajectoryPlan {
        waypoints,
        q: vec![0.0; cfg.n_slots],
    };
    for t in 1..=cfg.n_slots {
        let v = plan_tmp.horiz_speed(t, cfg.delta);
        q.push(power::solve_q_exact(v, cfg.propulsion.v0)?);
    }
    let plan = TrajectoryPlan {
        waypoints: plan_tmp.waypoints,
        q,
    };
    let violations = audit_mobility(&plan, cfg)?;
    if !violations.is_empty() {
        return Err(Error::InfeasibleConstruction(format!(
            "shadow plan violates mobility at slot {} ({:?})",
            violations[0].slot, violations[0].constraint
        )));
    }
    for t in 1..=cfg.n_slots {
        if !in_ffr(plan.waypoints[t], track.waypoints[t], cfg) {
            return Err(Error::InfeasibleConstruction(format!(
                "shadow plan leaves the feasible flight region at slot {t}"
            )));
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generated_track_endpoints() {
        let cfg = ScenarioConfig::reference();
        let track = generate_target_track(&cfg);
        assert_eq!(track.waypoints.len(), 151);
        assert_eq!(track.waypoints[0], (0.0, 0.0));
        let (a, b) = track.waypoints[150];
        assert_relative_eq!(a, 300.0, max_relative = 1e-12);
        assert_relative_eq!(b, 100.0 * 6.0f64.sin(), max_relative = 1e-12);
        assert!((b + 27.94).abs() < 0.01);
    }

    #[test]
    fn generated_track_trackable() {
        let cfg = ScenarioConfig::reference();
        let track = generate_target_track(&cfg);
        assert!(track.max_step() <= cfg.max_horiz_step());
    }

    #[test]
    fn track_csv_round_trip() {
        let cfg = ScenarioConfig::reference();
        let track = generate_target_track(&cfg);
        let mut buf = Vec::new();
        export_target_track(&track, &mut buf).unwrap();
        let parsed = parse_target_track(std::str::from_utf8(&buf).unwrap(), cfg.target_alt_h).unwrap();
        assert_eq!(parsed.waypoints, track.waypoints);
    }

    #[test]
    fn track_gap_detected() {
        let content = "t,a,b\n0,0,0\n1,1,0\n3,3,0\n";
        let err = parse_target_track(content, 100.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("slot 2") || msg.contains("found slot 3"), "{msg}");
    }

    #[test]
    fn empty_track_rejected() {
        let err = parse_target_track("t,a,b\n", 100.0).unwrap_err();
        assert!(err.to_string().contains("no waypoints"));
    }

    #[test]
    fn ffr_boundary_cases() {
        let cfg = ScenarioConfig::reference();
        // Exactly on the trailing boundary at the floor altitude.
        assert!(in_ffr([5.0, 3.0, cfg.z_lower], (5.0, 3.0), &cfg));
        // Ahead of the target in x.
        assert!(!in_ffr([5.1, 3.0, cfg.z_lower], (5.0, 3.0), &cfg));
        // Just beyond the 3D distance bound.
        let dz = cfg.z_lower - cfg.target_alt_h;
        let horiz = ((20.001f64).powi(2) - dz * dz).sqrt();
        assert!(!in_ffr([5.0 - horiz, 3.0, cfg.z_lower], (5.0, 3.0), &cfg));
    }

    #[test]
    fn ffr_monotone_in_d() {
        let mut cfg = ScenarioConfig::reference();
        let wp = [0.0, 0.0, 102.0];
        let tg = (10.0, 5.0);
        let mut was_inside = false;
        for d in [5.0, 10.0, 12.0, 15.0, 30.0] {
            cfg.d_max = d;
            let inside = in_ffr(wp, tg, &cfg);
            assert!(!was_inside || inside, "FFR not monotone in d_max");
            was_inside = inside;
        }
    }

    fn stationary_plan(cfg: &ScenarioConfig) -> TrajectoryPlan {
        TrajectoryPlan {
            waypoints: vec![[0.0, 0.0, cfg.monitor_z0]; cfg.n_slots + 1],
            q: vec![1.0; cfg.n_slots],
        }
    }

    #[test]
    fn stationary_plan_has_no_mobility_violations() {
        let cfg = ScenarioConfig::reference();
        assert!(audit_mobility(&stationary_plan(&cfg), &cfg).unwrap().is_empty());
    }

    #[test]
    fn horizontal_hop_flagged() {
        let cfg = ScenarioConfig::reference();
        let mut plan = stationary_plan(&cfg);
        plan.waypoints[10][0] = 7.0;
        plan.waypoints[11][0] = 7.0; // keep only one violating hop back
        let violations = audit_mobility(&plan, &cfg).unwrap();
        let horiz: Vec<_> = violations
            .iter()
            .filter(|v| v.constraint == MobilityConstraint::Horizontal)
            .collect();
        assert_eq!(horiz.len(), 2); // into the hop at slot 10, out at slot 12
        assert_eq!(horiz[0].slot, 10);
        assert_relative_eq!(horiz[0].magnitude, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn sharp_ascend_descend_flagged() {
        let cfg = ScenarioConfig::reference();
        let mut plan = stationary_plan(&cfg);
        let step = cfg.max_vert_step();
        plan.waypoints[5][2] += step;
        // slot 5 climbs +step, slot 6 descends -step: rate change 2*step.
        let violations = audit_mobility(&plan, &cfg).unwrap();
        assert!(violations
            .iter()
            .any(|v| v.slot == 6 && v.constraint == MobilityConstraint::VerticalAccel));
    }

    #[test]
    fn disguise_metric_values() {
        let mut cfg = ScenarioConfig::reference();
        cfg.mu1 = 0.2;
        cfg.mu2 = 0.1;
        cfg.n_slots = 1;
        cfg.horizon_t = cfg.delta;
        let track = TargetTrack {
            waypoints: vec![(0.0, 0.0), (20.0, 0.0)],
            alt: cfg.target_alt_h,
        };
        let plan = TrajectoryPlan {
            waypoints: vec![[0.0, 0.0, 102.0], [0.0, 0.0, 103.6]],
            q: vec![1.0],
        };
        let f = disguise_metric(&plan, &track, &cfg);
        assert_relative_eq!(f[0], 0.2 * 400.0 + 0.1 * 2.56, max_relative = 1e-12);

        cfg.mu1 = 0.0;
        cfg.mu2 = 0.0;
        let f0 = disguise_metric(&plan, &track, &cfg);
        assert_eq!(f0, vec![0.0]);
    }

    #[test]
    fn shadow_plan_feasible_on_reference_scenario() {
        let cfg = ScenarioConfig::reference();
        let track = generate_target_track(&cfg);
        let plan = initial_plan(&track, &cfg).unwrap();
        assert!(audit_mobility(&plan, &cfg).unwrap().is_empty());
        for t in 1..=cfg.n_slots {
            assert!(in_ffr(plan.waypoints[t], track.waypoints[t], &cfg));
            assert!(plan.horiz_speed(t, cfg.delta) <= cfg.v_hm + 1e-9);
        }
    }

    #[test]
    fn stationary_target_gives_hover_plan() {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = 10;
        cfg.horizon_t = 2.0;
        let track = TargetTrack {
            waypoints: vec![(0.0, 0.0); 11],
            alt: cfg.target_alt_h,
        };
        let plan = initial_plan(&track, &cfg).unwrap();
        for t in 1..=10 {
            assert_eq!(plan.waypoints[t], [0.0, 0.0, cfg.monitor_z0]);
            assert_eq!(plan.q[t - 1], 1.0);
        }
    }

    #[test]
    fn low_start_altitude_rejected() {
        let mut cfg = ScenarioConfig::reference();
        cfg.monitor_z0 = 100.5; // below z_l
        let track = generate_target_track(&cfg);
        assert!(initial_plan(&track, &cfg).is_err());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let mut value = serde_json::to_value(ScenarioConfig::reference()).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("bogus".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<ScenarioConfig>(value).is_err());
    }
}
