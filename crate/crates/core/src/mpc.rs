//! Receding-horizon loop around the SCP planner.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::chance::inflate;
use crate::error::Result;
use crate::overlap::{contour_of_touch, contour_to_overlap, minmax_separator, LAMBDA_TOL};
use crate::scenario::{ObstacleSpec, Scenario};
use crate::scp::{scp_solve, ObstacleTrack, ProblemSpec, ScpConfig, TrajectorySolution, WarmStart};
use crate::trace::{SimTrace, StepRecord};

/// Axis-aligned corridor region; walls run along its lateral (y) faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
    pub wall_thickness: f64,
    /// Contour level the drone keeps clear of wall obstacles.
    pub wall_c_min: f64,
}

impl Corridor {
    pub fn contains(&self, p: &DVector<f64>) -> bool {
        (0..p.len()).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleState {
    pub id: usize,
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub radius: f64,
    pub wall: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub drone_pos: DVector<f64>,
    pub drone_vel: DVector<f64>,
    pub obstacles: Vec<ObstacleState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub tau: f64,
    pub sensing_range: f64,
    pub c_min: f64,
    pub c_max: Option<f64>,
    pub waypoint_spacing: f64,
    pub scp: ScpConfig,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub a_min: DVector<f64>,
    pub a_max: DVector<f64>,
    pub drone_cov: DMatrix<f64>,
    pub drone_radius: f64,
    pub kappa: f64,
    /// Predicted obstacle covariances grow by `i·cov_growth·I` at step `i`.
    pub cov_growth: f64,
    pub smooth_weight: f64,
    pub terminal_weight: f64,
    /// Running goal cost weight; keeps the drone from deferring arrival.
    pub stage_weight: f64,
    pub goal_tolerance: f64,
    pub max_steps: usize,
    /// Region inside which the lower overlap bound is enforced.
    pub corridor: Option<Corridor>,
    pub warm_start: bool,
    /// Record wall-clock solve times (otherwise zero, keeping traces reproducible).
    pub record_timing: bool,
}

/// Per-step quantities reported by [`mpc_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    /// Ids of the obstacles that entered the plan.
    pub sensed: Vec<usize>,
    /// Exact overlap and contour of touch at the current state, per sensed obstacle.
    pub upsilon: Vec<f64>,
    pub contour: Vec<f64>,
    pub cost_terminal: f64,
    pub cost_smooth: f64,
    pub scp_iterations: usize,
    pub solve_ms: f64,
    pub converged: bool,
    pub plan_violated: bool,
    /// Set when the planner failed and the brake command was issued.
    pub braked: bool,
    pub waypoint: DVector<f64>,
}

/// Constant-velocity means; covariances constant or grown linearly.
pub fn predict_obstacles(
    world: &WorldState,
    horizon: usize,
    tau: f64,
    growth: f64,
) -> Vec<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    world
        .obstacles
        .iter()
        .map(|ob| {
            let d = ob.pos.len();
            let means = (1..=horizon).map(|i| &ob.pos + &ob.vel * (tau * i as f64)).collect();
            let covs = (1..=horizon)
                .map(|i| &ob.cov + DMatrix::identity(d, d) * (growth * i as f64))
                .collect();
            (means, covs)
        })
        .collect()
}

/// Waypoints every `spacing` along the segment, ending at the goal.
pub fn waypoints(start: &DVector<f64>, goal: &DVector<f64>, spacing: f64) -> Vec<DVector<f64>> {
    let delta = goal - start;
    let len = delta.norm();
    let mut out = Vec::new();
    if len > 0.0 {
        let u = &delta / len;
        let mut s = spacing;
        while s < len - 1e-9 {
            out.push(start + &u * s);
            s += spacing;
        }
    }
    out.push(goal.clone());
    out
}

/// First waypoint more than one spacing ahead of the drone's along-track
/// position, or the goal.
pub fn select_waypoint(start: &DVector<f64>, goal: &DVector<f64>, spacing: f64, pos: &DVector<f64>) -> DVector<f64> {
    let delta = goal - start;
    let len = delta.norm();
    if len == 0.0 {
        return goal.clone();
    }
    let u = &delta / len;
    let along = (pos - start).dot(&u);
    waypoints(start, goal, spacing)
        .into_iter()
        .find(|w| (w - start).dot(&u) > along + spacing)
        .unwrap_or_else(|| goal.clone())
}

/// Exact overlap between the drone at `pos` and an obstacle, with radius inflation.
pub fn exact_overlap(pos: &DVector<f64>, cfg: &MpcConfig, ob: &ObstacleState) -> Result<f64> {
    let sd = inflate(&cfg.drone_cov, cfg.drone_radius, cfg.kappa);
    let so = inflate(&ob.cov, ob.radius, cfg.kappa);
    Ok(minmax_separator(pos, &sd, &ob.pos, &so, LAMBDA_TOL)?.overlap)
}

/// Mutable state carried between steps.
#[derive(Debug, Clone, Default)]
pub struct MpcMemory {
    previous: Option<(WarmStart, Vec<usize>)>,
}

/// Plans from `world` and returns the first velocity command.
pub fn mpc_step(
    world: &WorldState,
    cfg: &MpcConfig,
    start: &DVector<f64>,
    goal: &DVector<f64>,
    memory: &mut MpcMemory,
) -> Result<(DVector<f64>, Option<TrajectorySolution>, StepMetrics)> {
    let d = world.drone_pos.len();
    let sensed: Vec<&ObstacleState> = world
        .obstacles
        .iter()
        .filter(|ob| (&ob.pos - &world.drone_pos).norm() <= cfg.sensing_range)
        .collect();
    let sensed_world = WorldState {
        obstacles: sensed.iter().map(|o| (*o).clone()).collect(),
        ..world.clone()
    };
    let predictions = predict_obstacles(&sensed_world, cfg.horizon, cfg.tau, cfg.cov_growth);
    let waypoint = select_waypoint(start, goal, cfg.waypoint_spacing, &world.drone_pos);
    let upsilon_max = contour_to_overlap(cfg.c_min, d)?;
    let upsilon_min = cfg.c_max.map(|c| contour_to_overlap(c, d)).transpose()?;
    let drone_inside = cfg.corridor.as_ref().is_some_and(|c| c.contains(&world.drone_pos));
    let wall_max = cfg
        .corridor
        .as_ref()
        .map(|c| contour_to_overlap(c.wall_c_min, d))
        .transpose()?;

    let obstacles: Vec<ObstacleTrack> = sensed
        .iter()
        .zip(predictions)
        .map(|(ob, (means, covs))| {
            let min_mask = match (&cfg.corridor, upsilon_min) {
                (Some(c), Some(_)) if drone_inside && !ob.wall => means.iter().map(|m| c.contains(m)).collect(),
                _ => Vec::new(),
            };
            ObstacleTrack {
                means,
                covs,
                radius: ob.radius,
                min_mask,
                upsilon_max: if ob.wall { wall_max } else { None },
            }
        })
        .collect();
    let ids: Vec<usize> = sensed.iter().map(|o| o.id).collect();

    let spec = ProblemSpec {
        start: world.drone_pos.clone(),
        goal: waypoint.clone(),
        start_velocity: Some(world.drone_vel.clone()),
        n: cfg.horizon,
        tau: cfg.tau,
        v_min: cfg.v_min.clone(),
        v_max: cfg.v_max.clone(),
        a_min: cfg.a_min.clone(),
        a_max: cfg.a_max.clone(),
        drone_covs: vec![cfg.drone_cov.clone(); cfg.horizon],
        drone_radius: cfg.drone_radius,
        kappa: cfg.kappa,
        obstacles,
        upsilon_max,
        upsilon_min,
        smooth_weight: cfg.smooth_weight,
        terminal_weight: cfg.terminal_weight,
        stage_weight: cfg.stage_weight,
    };

    let warm = if cfg.warm_start {
        memory.previous.as_ref().map(|(ws, prev_ids)| {
            let shifted = ws.shifted();
            let lambdas = ids
                .iter()
                .map(|id| {
                    prev_ids
                        .iter()
                        .position(|p| p == id)
                        .and_then(|k| shifted.lambdas.get(k).cloned().flatten())
                })
                .collect();
            WarmStart {
                velocities: shifted.velocities,
                lambdas,
            }
        })
    } else {
        None
    };

    let clock = Instant::now();
    let result = scp_solve(&spec, warm.as_ref(), &cfg.scp);
    let solve_ms = if cfg.record_timing {
        clock.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };

    let mut upsilon = Vec::with_capacity(sensed.len());
    let mut contour = Vec::with_capacity(sensed.len());
    for ob in &sensed {
        let u = exact_overlap(&world.drone_pos, cfg, ob)?;
        upsilon.push(u);
        contour.push(contour_of_touch(u, d)?);
    }

    match result {
        Ok(plan) => {
            memory.previous = Some((plan.warm_start(), ids.clone()));
            let metrics = StepMetrics {
                sensed: ids,
                upsilon,
                contour,
                cost_terminal: plan.cost_terminal,
                cost_smooth: plan.cost_smooth,
                scp_iterations: plan.scp_iterations,
                solve_ms,
                converged: plan.converged,
                plan_violated: plan.constraint_violated,
                braked: false,
                waypoint,
            };
            Ok((plan.velocities[0].clone(), Some(plan), metrics))
        }
        Err(_) => {
            memory.previous = None;
            let metrics = StepMetrics {
                sensed: ids,
                upsilon,
                contour,
                cost_terminal: f64::NAN,
                cost_smooth: f64::NAN,
                scp_iterations: 0,
                solve_ms,
                converged: false,
                plan_violated: true,
                braked: true,
                waypoint,
            };
            Ok((DVector::zeros(d), None, metrics))
        }
    }
}

pub fn world_at(obstacles: &[ObstacleSpec], t: f64, pos: &DVector<f64>, vel: &DVector<f64>) -> WorldState {
    WorldState {
        time: t,
        drone_pos: pos.clone(),
        drone_vel: vel.clone(),
        obstacles: obstacles
            .iter()
            .enumerate()
            .map(|(id, ob)| ObstacleState {
                id,
                pos: ob.trajectory.position(t),
                vel: ob.trajectory.velocity(t),
                cov: ob.cov.clone(),
                radius: ob.radius,
                wall: ob.wall,
            })
            .collect(),
    }
}

/// Simulates the scenario until the goal is reached or the step budget runs out.
pub fn run_scenario(scenario: &Scenario, cfg: &MpcConfig) -> Result<SimTrace> {
    let obstacles = scenario.all_obstacles();
    let n_real = scenario.obstacles.len();
    let mut pos = scenario.start.clone();
    let mut vel = scenario.start_velocity.clone();
    let mut memory = MpcMemory::default();
    let mut records = Vec::new();
    let mut completed = (&pos - &scenario.goal).norm() <= cfg.goal_tolerance;
    let mut t = 0.0;
    let mut step = 0;

    while !completed && step < cfg.max_steps {
        let world = world_at(&obstacles, t, &pos, &vel);
        let (cmd, _plan, metrics) = mpc_step(&world, cfg, &scenario.start, &scenario.goal, &mut memory)?;
        pos += &cmd * cfg.tau;
        vel = cmd;
        step += 1;
        t = step as f64 * cfg.tau;
        let after = world_at(&obstacles, t, &pos, &vel);

        let mut upsilon = Vec::with_capacity(n_real);
        let mut contour = Vec::with_capacity(n_real);
        let mut active = Vec::with_capacity(n_real);
        let mut interaction = Vec::with_capacity(n_real);
        let inside = cfg.corridor.as_ref().is_some_and(|c| c.contains(&pos));
        for ob in after.obstacles.iter().take(n_real) {
            let u = exact_overlap(&pos, cfg, ob)?;
            upsilon.push(u);
            contour.push(contour_of_touch(u, scenario.dim)?);
            let sensed = metrics.sensed.contains(&ob.id);
            active.push(sensed);
            interaction.push(sensed && inside && cfg.corridor.as_ref().is_some_and(|c| c.contains(&ob.pos)));
        }
        let wall_clearance = after
            .obstacles
            .iter()
            .skip(n_real)
            .map(|w| (&pos - &w.pos).norm() - (cfg.drone_radius + w.radius))
            .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.min(c))));

        records.push(StepRecord {
            t,
            pos: pad3(&pos),
            vel: pad3(&vel),
            upsilon,
            contour,
            active,
            interaction,
            wall_clearance,
            cost_terminal: metrics.cost_terminal,
            cost_smooth: metrics.cost_smooth,
            scp_iters: metrics.scp_iterations,
            solve_ms: metrics.solve_ms,
            braked: metrics.braked,
        });
        completed = (&pos - &scenario.goal).norm() <= cfg.goal_tolerance;
    }

    Ok(SimTrace::new(
        scenario.name.clone(),
        scenario.dim,
        cfg.tau,
        n_real,
        pad3(&scenario.start),
        records,
        completed,
    ))
}

pub(crate) fn pad3(v: &DVector<f64>) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, x) in out.iter_mut().zip(v.iter()) {
        *o = *x;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn obstacle(pos: &[f64], vel: &[f64]) -> ObstacleState {
        ObstacleState {
            id: 0,
            pos: v(pos),
            vel: v(vel),
            cov: DMatrix::identity(3, 3) * 0.02,
            radius: 0.5,
            wall: false,
        }
    }

    #[test]
    fn prediction_examples() {
        let world = WorldState {
            time: 0.0,
            drone_pos: v(&[0.0, 0.0, 0.0]),
            drone_vel: v(&[0.0, 0.0, 0.0]),
            obstacles: vec![
                obstacle(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]),
                obstacle(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]),
            ],
        };
        let pred = predict_obstacles(&world, 5, 0.3, 0.0);
        assert!(pred[0].0.iter().all(|m| m == &v(&[1.0, 2.0, 3.0])));
        for (i, m) in pred[1].0.iter().enumerate() {
            assert_abs_diff_eq!(m[0], 0.3 * (i + 1) as f64, epsilon = 1e-12);
        }
        let grown = predict_obstacles(&world, 4, 0.3, 0.01);
        for (i, c) in grown[0].1.iter().enumerate() {
            let expected = DMatrix::identity(3, 3) * (0.02 + 0.01 * (i + 1) as f64);
            assert!((c - expected).amax() < 1e-15);
            assert!(c.clone().cholesky().is_some());
        }
    }

    #[test]
    fn waypoint_selection() {
        let s = v(&[0.0, 0.0]);
        let g = v(&[12.0, 0.0]);
        let wps = waypoints(&s, &g, 5.0);
        assert_eq!(wps, vec![v(&[5.0, 0.0]), v(&[10.0, 0.0]), v(&[12.0, 0.0])]);
        assert_eq!(select_waypoint(&s, &g, 5.0, &v(&[-0.5, 0.0])), v(&[5.0, 0.0]));
        assert_eq!(select_waypoint(&s, &g, 5.0, &v(&[0.0, 0.0])), v(&[10.0, 0.0]));
        assert_eq!(select_waypoint(&s, &g, 5.0, &v(&[8.0, 1.0])), g);
    }

    #[test]
    fn corridor_contains() {
        let c = Corridor {
            min: v(&[0.0, -2.0]),
            max: v(&[10.0, 2.0]),
            wall_thickness: 0.3,
            wall_c_min: 0.99,
        };
        assert!(c.contains(&v(&[5.0, 0.0])));
        assert!(!c.contains(&v(&[-0.1, 0.0])));
    }
}
