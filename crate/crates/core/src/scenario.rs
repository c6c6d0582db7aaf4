//! Scenario files: JSON with a fixed set of keys, validated and defaulted.
//!
//! Every default that gets filled in is recorded in [`Scenario::defaults`]
//! so callers can echo it.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::chance::DEFAULT_KAPPA;
use crate::error::{Error, Result};
use crate::gaussian::check_covariance;
use crate::mpc::{Corridor, MpcConfig};
use crate::scp::ScpConfig;

pub const DEFAULT_HORIZON: usize = 28;
pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_SENSING_RANGE: f64 = 10.0;
pub const DEFAULT_WAYPOINT_SPACING: f64 = 5.0;
pub const DEFAULT_GOAL_TOLERANCE: f64 = 0.2;
pub const DEFAULT_COV: f64 = 0.02;
pub const DEFAULT_RADIUS: f64 = 0.5;
pub const DEFAULT_SPEED: f64 = 3.0;
pub const DEFAULT_ACCEL: f64 = 1.0;
/// Step budget as a multiple of the nominal straight-line time.
pub const BUDGET_FACTOR: f64 = 4.0;
/// Covariance and spacing rule for wall obstacles.
pub const WALL_COV: f64 = 1e-4;
pub const DEFAULT_STAGE_WEIGHT: f64 = 1.0;
/// Contour level kept clear of wall obstacles, independent of `c_min`.
pub const DEFAULT_WALL_C_MIN: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Static(DVector<f64>),
    /// Moves from `from` to `to` over `duration` seconds, then stays.
    Linear {
        from: DVector<f64>,
        to: DVector<f64>,
        duration: f64,
    },
    /// Positions sampled every `dt` seconds; extrapolated linearly past the end.
    Scripted {
        positions: Vec<DVector<f64>>,
        dt: f64,
    },
}

impl Trajectory {
    pub fn position(&self, t: f64) -> DVector<f64> {
        match self {
            Trajectory::Static(p) => p.clone(),
            Trajectory::Linear { from, to, duration } => {
                let s = if *duration > 0.0 {
                    (t / duration).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                from + (to - from) * s
            }
            Trajectory::Scripted { positions, dt } => {
                let last = positions.len() - 1;
                if last == 0 {
                    return positions[0].clone();
                }
                let x = (t / dt).max(0.0);
                let k = (x.floor() as usize).min(last - 1);
                let frac = x - k as f64;
                &positions[k] + (&positions[k + 1] - &positions[k]) * frac
            }
        }
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        match self {
            Trajectory::Static(p) => DVector::zeros(p.len()),
            Trajectory::Linear { from, to, duration } => {
                if *duration > 0.0 && t < *duration {
                    (to - from) / *duration
                } else {
                    DVector::zeros(from.len())
                }
            }
            Trajectory::Scripted { positions, dt } => {
                let last = positions.len() - 1;
                if last == 0 {
                    return DVector::zeros(positions[0].len());
                }
                let k = ((t / dt).max(0.0).floor() as usize).min(last - 1);
                (&positions[k + 1] - &positions[k]) / *dt
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec {
    pub trajectory: Trajectory,
    pub cov: DMatrix<f64>,
    pub radius: f64,
    pub wall: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub a_min: DVector<f64>,
    pub a_max: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub start_velocity: DVector<f64>,
    pub drone_cov: DMatrix<f64>,
    pub drone_radius: f64,
    pub kappa: f64,
    /// Scenario obstacles, not including generated walls.
    pub obstacles: Vec<ObstacleSpec>,
    pub corridor: Option<Corridor>,
    pub c_min: f64,
    pub c_max: Option<f64>,
    pub bounds: Bounds,
    pub horizon: usize,
    pub tau: f64,
    pub sensing_range: f64,
    pub waypoint_spacing: f64,
    pub goal_tolerance: f64,
    pub max_steps: usize,
    pub cov_growth: f64,
    pub smooth_weight: f64,
    pub terminal_weight: f64,
    pub stage_weight: f64,
    pub scp: ScpConfig,
    /// `key = value` lines for every default that was applied.
    pub defaults: Vec<String>,
}

// --- raw file layout -------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    dim: Option<usize>,
    start: Vec<f64>,
    goal: Vec<f64>,
    start_velocity: Option<Vec<f64>>,
    drone: Option<RawBody>,
    #[serde(default)]
    obstacles: Vec<RawObstacle>,
    corridor: Option<RawCorridor>,
    constraints: RawConstraints,
    bounds: Option<RawBounds>,
    mpc: Option<RawMpc>,
    solver: Option<RawSolver>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBody {
    cov: Option<Vec<Vec<f64>>>,
    radius: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    trajectory: RawTrajectory,
    cov: Option<Vec<Vec<f64>>>,
    radius: Option<f64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum RawTrajectory {
    Static(Vec<f64>),
    Linear {
        from: Vec<f64>,
        to: Vec<f64>,
        duration: f64,
    },
    Scripted(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorridor {
    min: Vec<f64>,
    max: Vec<f64>,
    wall_thickness: f64,
    wall_c_min: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    c_min: f64,
    c_max: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    v_min: Option<Vec<f64>>,
    v_max: Option<Vec<f64>>,
    a_min: Option<Vec<f64>>,
    a_max: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpc {
    horizon: Option<usize>,
    tau: Option<f64>,
    sensing_range: Option<f64>,
    waypoint_spacing: Option<f64>,
    goal_tolerance: Option<f64>,
    max_steps: Option<usize>,
    cov_growth: Option<f64>,
    smooth_weight: Option<f64>,
    terminal_weight: Option<f64>,
    stage_weight: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    delta: Option<f64>,
    max_iters: Option<usize>,
    trust_region: Option<f64>,
    slack_weight: Option<f64>,
}

// --- conversion ------------------------------------------------------------

struct Defaults(Vec<String>);

impl Defaults {
    fn take<T: std::fmt::Debug>(&mut self, key: &str, value: Option<T>, default: T) -> T {
        match value {
            Some(v) => v,
            None => {
                self.0.push(format!("{key} = {default:?}"));
                default
            }
        }
    }
}

fn vector(field: &str, v: &[f64], dim: usize) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::validation(
            field,
            format!("expected {dim} components, found {}", v.len()),
        ));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::validation(field, "non-finite component"));
    }
    Ok(DVector::from_column_slice(v))
}

fn matrix(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::validation(field, format!("covariance must be {dim}x{dim}")));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    check_covariance(&m).map_err(|e| Error::validation(field, e.to_string()))?;
    Ok(m)
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::validation(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::validation(field, format!("must be non-negative, got {v}")))
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &[u8]) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_slice(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut defs = Defaults(Vec::new());
    let name = defs.take("name", raw.name, "unnamed".to_string());
    let dim = defs.take("dim", raw.dim, raw.start.len());
    if dim != 2 && dim != 3 {
        return Err(Error::validation("dim", format!("must be 2 or 3, got {dim}")));
    }
    let start = vector("start", &raw.start, dim)?;
    let goal = vector("goal", &raw.goal, dim)?;
    let start_velocity = match raw.start_velocity {
        Some(v) => vector("start_velocity", &v, dim)?,
        None => {
            defs.0.push("start_velocity = zero".into());
            DVector::zeros(dim)
        }
    };

    let iso = |s: f64| DMatrix::identity(dim, dim) * s;
    let (drone_cov, drone_radius, kappa) = {
        let body = raw.drone.unwrap_or(RawBody {
            cov: None,
            radius: None,
            kappa: None,
        });
        let cov = match body.cov {
            Some(c) => matrix("drone.cov", &c, dim)?,
            None => {
                defs.0.push(format!("drone.cov = {DEFAULT_COV}*I"));
                iso(DEFAULT_COV)
            }
        };
        let radius = non_negative("drone.radius", defs.take("drone.radius", body.radius, DEFAULT_RADIUS))?;
        let kappa = positive("drone.kappa", defs.take("drone.kappa", body.kappa, DEFAULT_KAPPA))?;
        (cov, radius, kappa)
    };

    let mpc = raw.mpc.unwrap_or(RawMpc {
        horizon: None,
        tau: None,
        sensing_range: None,
        waypoint_spacing: None,
        goal_tolerance: None,
        max_steps: None,
        cov_growth: None,
        smooth_weight: None,
        terminal_weight: None,
        stage_weight: None,
    });
    let horizon = defs.take("mpc.horizon", mpc.horizon, DEFAULT_HORIZON);
    if horizon < 3 {
        return Err(Error::validation("mpc.horizon", "must be at least 3"));
    }
    let tau = positive("mpc.tau", defs.take("mpc.tau", mpc.tau, DEFAULT_TAU))?;
    let sensing_range = positive(
        "mpc.sensing_range",
        defs.take("mpc.sensing_range", mpc.sensing_range, DEFAULT_SENSING_RANGE),
    )?;
    let waypoint_spacing = positive(
        "mpc.waypoint_spacing",
        defs.take("mpc.waypoint_spacing", mpc.waypoint_spacing, DEFAULT_WAYPOINT_SPACING),
    )?;
    let goal_tolerance = positive(
        "mpc.goal_tolerance",
        defs.take("mpc.goal_tolerance", mpc.goal_tolerance, DEFAULT_GOAL_TOLERANCE),
    )?;
    let cov_growth = non_negative("mpc.cov_growth", defs.take("mpc.cov_growth", mpc.cov_growth, 0.0))?;
    let smooth_weight = non_negative(
        "mpc.smooth_weight",
        defs.take("mpc.smooth_weight", mpc.smooth_weight, 1.0),
    )?;
    let terminal_weight = positive(
        "mpc.terminal_weight",
        defs.take("mpc.terminal_weight", mpc.terminal_weight, 1.0),
    )?;
    let stage_weight = non_negative(
        "mpc.stage_weight",
        defs.take("mpc.stage_weight", mpc.stage_weight, DEFAULT_STAGE_WEIGHT),
    )?;

    let mut obstacles = Vec::with_capacity(raw.obstacles.len());
    for (k, ob) in raw.obstacles.into_iter().enumerate() {
        let field = |s: &str| format!("obstacles[{k}].{s}");
        let trajectory = match ob.trajectory {
            RawTrajectory::Static(p) => Trajectory::Static(vector(&field("trajectory"), &p, dim)?),
            RawTrajectory::Linear { from, to, duration } => Trajectory::Linear {
                from: vector(&field("trajectory.from"), &from, dim)?,
                to: vector(&field("trajectory.to"), &to, dim)?,
                duration: positive(&field("trajectory.duration"), duration)?,
            },
            RawTrajectory::Scripted(ps) => {
                if ps.is_empty() {
                    return Err(Error::validation(field("trajectory"), "scripted sequence is empty"));
                }
                let positions = ps
                    .iter()
                    .map(|p| vector(&field("trajectory"), p, dim))
                    .collect::<Result<Vec<_>>>()?;
                Trajectory::Scripted { positions, dt: tau }
            }
        };
        let cov = match ob.cov {
            Some(c) => matrix(&field("cov"), &c, dim)?,
            None => {
                defs.0.push(format!("{} = {DEFAULT_COV}*I", field("cov")));
                iso(DEFAULT_COV)
            }
        };
        let radius = non_negative(&field("radius"), defs.take(&field("radius"), ob.radius, DEFAULT_RADIUS))?;
        obstacles.push(ObstacleSpec {
            trajectory,
            cov,
            radius,
            wall: false,
        });
    }

    let corridor = match raw.corridor {
        Some(c) => {
            let min = vector("corridor.min", &c.min, dim)?;
            let max = vector("corridor.max", &c.max, dim)?;
            if (0..dim).any(|i| min[i] >= max[i]) {
                return Err(Error::validation("corridor", "min corner must lie below max corner"));
            }
            let wall_c_min = defs.take("corridor.wall_c_min", c.wall_c_min, DEFAULT_WALL_C_MIN);
            if !(wall_c_min > 0.0 && wall_c_min < 1.0) {
                return Err(Error::validation("corridor.wall_c_min", "must lie in (0,1)"));
            }
            Some(Corridor {
                min,
                max,
                wall_thickness: positive("corridor.wall_thickness", c.wall_thickness)?,
                wall_c_min,
            })
        }
        None => None,
    };

    let c_min = raw.constraints.c_min;
    if !(c_min > 0.0 && c_min < 1.0) {
        return Err(Error::validation("constraints.c_min", "must lie in (0,1)"));
    }
    let c_max = raw.constraints.c_max;
    if let Some(hi) = c_max {
        if !(hi > c_min) {
            return Err(Error::validation("constraints", "constraint band empty"));
        }
        if !(hi < 1.0) {
            return Err(Error::validation("constraints.c_max", "must lie below 1"));
        }
    } else {
        defs.0.push("constraints.c_max = none".into());
    }

    let rb = raw.bounds.unwrap_or(RawBounds {
        v_min: None,
        v_max: None,
        a_min: None,
        a_max: None,
    });
    let mut bound = |key: &str, v: Option<Vec<f64>>, def: f64| -> Result<DVector<f64>> {
        match v {
            Some(v) => vector(key, &v, dim),
            None => {
                defs.0.push(format!("{key} = {def}"));
                Ok(DVector::from_element(dim, def))
            }
        }
    };
    let bounds = Bounds {
        v_min: bound("bounds.v_min", rb.v_min, -DEFAULT_SPEED)?,
        v_max: bound("bounds.v_max", rb.v_max, DEFAULT_SPEED)?,
        a_min: bound("bounds.a_min", rb.a_min, -DEFAULT_ACCEL)?,
        a_max: bound("bounds.a_max", rb.a_max, DEFAULT_ACCEL)?,
    };
    for i in 0..dim {
        if !(bounds.v_min[i] < bounds.v_max[i]) {
            return Err(Error::validation("bounds.v_min", "must lie below bounds.v_max"));
        }
        if !(bounds.a_min[i] < bounds.a_max[i]) {
            return Err(Error::validation("bounds.a_min", "must lie below bounds.a_max"));
        }
    }

    let max_steps = match mpc.max_steps {
        Some(0) => return Err(Error::validation("mpc.max_steps", "must be positive")),
        Some(m) => m,
        None => {
            let m = default_step_budget(&start, &goal, &bounds, tau);
            defs.0.push(format!("mpc.max_steps = {m}"));
            m
        }
    };

    let mut scp = ScpConfig::default();
    if let Some(s) = raw.solver {
        if let Some(v) = s.delta {
            scp.delta = positive("solver.delta", v)?;
        }
        if let Some(v) = s.max_iters {
            if v == 0 {
                return Err(Error::validation("solver.max_iters", "must be positive"));
            }
            scp.max_iters = v;
        }
        if let Some(v) = s.trust_region {
            scp.trust_region = positive("solver.trust_region", v)?;
        }
        if let Some(v) = s.slack_weight {
            scp.slack_weight = positive("solver.slack_weight", v)?;
        }
    } else {
        defs.0.push(format!(
            "solver = {{ delta: {}, max_iters: {}, trust_region: {}, slack_weight: {} }}",
            scp.delta, scp.max_iters, scp.trust_region, scp.slack_weight
        ));
    }

    Ok(Scenario {
        name,
        dim,
        start,
        goal,
        start_velocity,
        drone_cov,
        drone_radius,
        kappa,
        obstacles,
        corridor,
        c_min,
        c_max,
        bounds,
        horizon,
        tau,
        sensing_range,
        waypoint_spacing,
        goal_tolerance,
        max_steps,
        cov_growth,
        smooth_weight,
        terminal_weight,
        stage_weight,
        scp,
        defaults: defs.0,
    })
}

/// Four times the time needed to cover the start-goal distance at the
/// fastest speed the velocity box allows along that direction.
pub fn default_step_budget(start: &DVector<f64>, goal: &DVector<f64>, bounds: &Bounds, tau: f64) -> usize {
    let delta = goal - start;
    let dist = delta.norm();
    if dist == 0.0 {
        return 1;
    }
    let u = &delta / dist;
    // largest s with s·u inside the velocity box
    let mut speed = f64::INFINITY;
    for i in 0..u.len() {
        if u[i] > 1e-12 {
            speed = speed.min(bounds.v_max[i] / u[i]);
        } else if u[i] < -1e-12 {
            speed = speed.min(bounds.v_min[i] / u[i]);
        }
    }
    let speed = if speed.is_finite() && speed > 0.0 { speed } else { 1.0 };
    let nominal = dist / speed;
    ((BUDGET_FACTOR * nominal / tau).ceil() as usize).max(1)
}

impl Scenario {
    /// Static wall obstacles: a row along each lateral face of the corridor
    /// box at mid height, spaced by the wall thickness.
    pub fn walls(&self) -> Vec<ObstacleSpec> {
        let Some(c) = &self.corridor else {
            return Vec::new();
        };
        let dim = self.dim;
        let t = c.wall_thickness;
        let length = c.max[0] - c.min[0];
        let count = (length / t).floor() as usize + 1;
        let mut out = Vec::with_capacity(2 * count);
        for side in [c.min[1], c.max[1]] {
            for k in 0..count {
                let mut p = DVector::zeros(dim);
                p[0] = c.min[0] + k as f64 * t;
                p[1] = side;
                if dim == 3 {
                    p[2] = 0.5 * (c.min[2] + c.max[2]);
                }
                out.push(ObstacleSpec {
                    trajectory: Trajectory::Static(p),
                    cov: DMatrix::identity(dim, dim) * WALL_COV,
                    radius: t,
                    wall: true,
                });
            }
        }
        out
    }

    /// Scenario obstacles followed by generated walls.
    pub fn all_obstacles(&self) -> Vec<ObstacleSpec> {
        let mut v = self.obstacles.clone();
        v.extend(self.walls());
        v
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            tau: self.tau,
            sensing_range: self.sensing_range,
            c_min: self.c_min,
            c_max: self.c_max,
            waypoint_spacing: self.waypoint_spacing,
            scp: self.scp,
            v_min: self.bounds.v_min.clone(),
            v_max: self.bounds.v_max.clone(),
            a_min: self.bounds.a_min.clone(),
            a_max: self.bounds.a_max.clone(),
            drone_cov: self.drone_cov.clone(),
            drone_radius: self.drone_radius,
            kappa: self.kappa,
            cov_growth: self.cov_growth,
            smooth_weight: self.smooth_weight,
            terminal_weight: self.terminal_weight,
            stage_weight: self.stage_weight,
            goal_tolerance: self.goal_tolerance,
            max_steps: self.max_steps,
            corridor: self.corridor.clone(),
            warm_start: true,
            record_timing: false,
        }
    }

    /// Human-readable summary of the validated scenario, defaults included.
    pub fn describe(&self) -> String {
        let fmt = |v: &DVector<f64>| {
            let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("[{}]", parts.join(", "))
        };
        let mut s = String::new();
        s.push_str(&format!("name: {}\n", self.name));
        s.push_str(&format!("dim: {}\n", self.dim));
        s.push_str(&format!("start: {}\n", fmt(&self.start)));
        s.push_str(&format!("goal: {}\n", fmt(&self.goal)));
        s.push_str(&format!("obstacles: {}\n", self.obstacles.len()));
        if let Some(c) = &self.corridor {
            s.push_str(&format!(
                "corridor: min {} max {} wall_thickness {} ({} wall obstacles)\n",
                fmt(&c.min),
                fmt(&c.max),
                c.wall_thickness,
                self.walls().len()
            ));
        }
        s.push_str(&format!("c_min: {}\n", self.c_min));
        if let Some(hi) = self.c_max {
            s.push_str(&format!("c_max: {hi}\n"));
        }
        s.push_str(&format!(
            "horizon: {} tau: {} sensing_range: {} max_steps: {}\n",
            self.horizon, self.tau, self.sensing_range, self.max_steps
        ));
        for d in &self.defaults {
            s.push_str(&format!("default: {d}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "start": [0, 0, 0],
        "goal": [5, 0, 0],
        "obstacles": [{ "trajectory": { "static": [2, 1, 0] } }],
        "constraints": { "c_min": 0.9 }
    }"#;

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let s = parse_scenario(MINIMAL.as_bytes()).unwrap();
        assert_eq!(s.dim, 3);
        assert_eq!(s.horizon, DEFAULT_HORIZON);
        assert_eq!(s.tau, DEFAULT_TAU);
        assert_eq!(s.obstacles[0].radius, DEFAULT_RADIUS);
        assert_eq!(s.c_max, None);
        for key in [
            "mpc.horizon",
            "mpc.tau",
            "drone.radius",
            "obstacles[0].cov",
            "mpc.max_steps",
            "name",
        ] {
            assert!(s.defaults.iter().any(|d| d.starts_with(key)), "missing default {key}");
        }
        assert!(s.describe().contains("default: mpc.horizon = 28"));
    }

    #[test]
    fn negative_eigenvalue_names_obstacle() {
        let text = MINIMAL.replace(
            r#"{ "static": [2, 1, 0] } }"#,
            r#"{ "static": [2, 1, 0] }, "cov": [[1, 2, 0], [2, 1, 0], [0, 0, 1]] }"#,
        );
        match parse_scenario(text.as_bytes()) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "obstacles[0].cov"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_band_rejected() {
        let text = MINIMAL.replace(r#""c_min": 0.9"#, r#""c_min": 0.6, "c_max": 0.3"#);
        match parse_scenario(text.as_bytes()) {
            Err(Error::Validation { reason, .. }) => assert_eq!(reason, "constraint band empty"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_scenario(b"{\n  \"start\": [0, 0,\n}") {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_scenario(MINIMAL.replace("\"goal\"", "\"gaol\"").as_bytes()),
            Err(Error::Syntax { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = MINIMAL.replace("[5, 0, 0]", "[5, 0]");
        assert!(matches!(parse_scenario(text.as_bytes()), Err(Error::Validation { .. })));
    }

    #[test]
    fn trajectories() {
        let v = |x: &[f64]| DVector::from_column_slice(x);
        let lin = Trajectory::Linear {
            from: v(&[10.0, 0.0]),
            to: v(&[0.0, 0.0]),
            duration: 20.0,
        };
        assert_eq!(lin.position(5.0), v(&[7.5, 0.0]));
        assert_eq!(lin.velocity(5.0), v(&[-0.5, 0.0]));
        assert_eq!(lin.position(30.0), v(&[0.0, 0.0]));
        assert_eq!(lin.velocity(30.0), v(&[0.0, 0.0]));
        let scr = Trajectory::Scripted {
            positions: vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])],
            dt: 0.5,
        };
        assert_eq!(scr.position(0.25), v(&[0.5, 0.0]));
        // linear extrapolation past the last sample
        assert_eq!(scr.position(1.0), v(&[2.0, 0.0]));
        assert_eq!(scr.velocity(3.0), v(&[2.0, 0.0]));
    }

    #[test]
    fn walls_follow_corridor() {
        let text = MINIMAL.replace(
            r#""constraints""#,
            r#""corridor": { "min": [0, -2, -1], "max": [10, 2, 1], "wall_thickness": 0.5 }, "constraints""#,
        );
        let s = parse_scenario(text.as_bytes()).unwrap();
        let walls = s.walls();
        assert_eq!(walls.len(), 2 * 21);
        assert!(walls.iter().all(|w| w.wall && w.radius == 0.5));
        assert_eq!(s.all_obstacles().len(), 43);
    }
}
