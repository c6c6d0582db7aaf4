//! Sequential convex programming over velocities and overlap parameters.
//!
//! Each iteration linearizes the overlap constraints about the reference
//! trajectory and solves one convex QP in the velocities. The admissibility
//! equality `f₂ = 0` is used to eliminate each `λ` from the linear model, so
//! the QP only carries velocity variables plus one shared, penalized slack;
//! the new `λ` values are recovered from the same linear model afterwards.
//! Steps are accepted on a merit function built from the EXACT overlap.

use nalgebra::{DMatrix, DVector};

use crate::chance::{inflate, linearize_pair, PairLinearization, DEFAULT_KAPPA};
use crate::error::{Error, Result};
use crate::gaussian::check_covariance;
use crate::overlap::{minmax_separator, Separator, LAMBDA_TOL};
use crate::qp::{solve_qp, QpMethod, QpProblem};
use crate::stats::{chi_square_quantile, normal_pdf, normal_quantile, normal_sf};

/// Predicted mean and covariance of one obstacle over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    /// `means[i]` is the position at step `i + 1`.
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub radius: f64,
    /// Steps at which the lower overlap bound applies (empty = none).
    pub min_mask: Vec<bool>,
    /// Per-track upper bound replacing [`ProblemSpec::upsilon_max`].
    pub upsilon_max: Option<f64>,
}

impl ObstacleTrack {
    /// Constant-covariance track without lower-bound steps.
    pub fn new(means: Vec<DVector<f64>>, cov: DMatrix<f64>, radius: f64) -> Self {
        let covs = vec![cov; means.len()];
        ObstacleTrack {
            means,
            covs,
            radius,
            min_mask: Vec::new(),
            upsilon_max: None,
        }
    }

    fn min_applies(&self, i: usize) -> bool {
        self.min_mask.get(i).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    /// Velocity executed just before the horizon; bounds the first acceleration.
    pub start_velocity: Option<DVector<f64>>,
    pub n: usize,
    pub tau: f64,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub a_min: DVector<f64>,
    pub a_max: DVector<f64>,
    /// Raw (un-inflated) drone covariance per step.
    pub drone_covs: Vec<DMatrix<f64>>,
    pub drone_radius: f64,
    pub kappa: f64,
    pub obstacles: Vec<ObstacleTrack>,
    pub upsilon_max: f64,
    pub upsilon_min: Option<f64>,
    pub smooth_weight: f64,
    pub terminal_weight: f64,
    /// Weight of the running goal cost `Σᵢ (Dᵢ − G)ᵀΣ_N⁻¹(Dᵢ − G) / N`; zero
    /// leaves only the terminal cost.
    pub stage_weight: f64,
}

impl ProblemSpec {
    /// Obstacle-free problem with constant drone covariance and unit weights.
    pub fn new(
        start: DVector<f64>,
        goal: DVector<f64>,
        n: usize,
        tau: f64,
        (v_min, v_max): (DVector<f64>, DVector<f64>),
        (a_min, a_max): (DVector<f64>, DVector<f64>),
        drone_cov: DMatrix<f64>,
        upsilon_max: f64,
    ) -> Self {
        ProblemSpec {
            start,
            goal,
            start_velocity: None,
            n,
            tau,
            v_min,
            v_max,
            a_min,
            a_max,
            drone_covs: vec![drone_cov; n],
            drone_radius: 0.0,
            kappa: DEFAULT_KAPPA,
            obstacles: Vec::new(),
            upsilon_max,
            upsilon_min: None,
            smooth_weight: 1.0,
            terminal_weight: 1.0,
            stage_weight: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    /// Upper overlap bound for obstacle `j`.
    pub fn upsilon_max_for(&self, j: usize) -> f64 {
        self.obstacles[j].upsilon_max.unwrap_or(self.upsilon_max)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d != 2 && d != 3 {
            return Err(Error::validation("start", format!("dimension must be 2 or 3, got {d}")));
        }
        for (name, v) in [
            ("goal", &self.goal),
            ("v_min", &self.v_min),
            ("v_max", &self.v_max),
            ("a_min", &self.a_min),
            ("a_max", &self.a_max),
        ] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::validation(name, "non-finite entry"));
            }
        }
        if let Some(u) = &self.start_velocity {
            if u.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: u.len(),
                });
            }
        }
        if self.n < 3 {
            return Err(Error::validation("n", "horizon must have at least 3 steps"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation("tau", "must be positive"));
        }
        for c in 0..d {
            if !(self.v_min[c] < self.v_max[c]) {
                return Err(Error::validation("v_min", "must be below v_max componentwise"));
            }
            if !(self.a_min[c] < self.a_max[c]) {
                return Err(Error::validation("a_min", "must be below a_max componentwise"));
            }
        }
        if !(self.upsilon_max > 0.0 && self.upsilon_max <= 1.0) {
            return Err(Error::validation("upsilon_max", "must lie in (0,1]"));
        }
        if let Some(lo) = self.upsilon_min {
            if !(lo > 0.0 && lo < self.upsilon_max) {
                return Err(Error::validation("upsilon_min", "must lie in (0, upsilon_max)"));
            }
        }
        if !(self.kappa > 0.0) || self.drone_radius < 0.0 {
            return Err(Error::validation(
                "kappa",
                "kappa must be positive and radii non-negative",
            ));
        }
        if self.smooth_weight < 0.0 || self.stage_weight < 0.0 || !(self.terminal_weight > 0.0) {
            return Err(Error::validation(
                "terminal_weight",
                "weights must be non-negative (terminal positive)",
            ));
        }
        if self.drone_covs.len() != self.n {
            return Err(Error::validation("drone_covs", format!("expected {} matrices", self.n)));
        }
        for cov in &self.drone_covs {
            check_covariance(cov)?;
        }
        for (j, ob) in self.obstacles.iter().enumerate() {
            let field = format!("obstacles[{j}]");
            if ob.means.len() != self.n || ob.covs.len() != self.n {
                return Err(Error::validation(field, format!("track must cover {} steps", self.n)));
            }
            if ob.radius < 0.0 {
                return Err(Error::validation(field, "negative radius"));
            }
            if let Some(hi) = ob.upsilon_max {
                if !(hi > 0.0 && hi <= 1.0) {
                    return Err(Error::validation(field, "upsilon_max must lie in (0,1]"));
                }
            }
            for m in &ob.means {
                if m.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.len(),
                    });
                }
            }
            for cov in &ob.covs {
                check_covariance(cov).map_err(|e| Error::validation(field.clone(), e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScpConfig {
    /// Merit-change threshold `δ` for convergence.
    pub delta: f64,
    pub max_iters: usize,
    /// Initial per-component velocity trust region (m/s).
    pub trust_region: f64,
    pub trust_region_max: f64,
    pub trust_region_min: f64,
    pub slack_weight: f64,
    /// Proximal weight on `‖V − V̄‖²`; keeps the QP strictly convex.
    pub prox_weight: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Constraints are linearized only where the reference distance is below
    /// this multiple of the combined 99% contour extent.
    pub activation_factor: f64,
    /// Tolerance on the exact overlap bounds.
    pub violation_tol: f64,
    pub method: QpMethod,
}

impl Default for ScpConfig {
    fn default() -> Self {
        ScpConfig {
            delta: 1e-3,
            max_iters: 50,
            trust_region: 0.5,
            trust_region_max: 2.0,
            trust_region_min: 1e-6,
            slack_weight: 1e4,
            prox_weight: 1e-4,
            lambda_min: 0.01,
            lambda_max: 0.99,
            activation_factor: 3.0,
            violation_tol: 1e-3,
            method: QpMethod::ActiveSet,
        }
    }
}

impl ScpConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::validation("delta", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters", "must be at least 1"));
        }
        if !(self.trust_region > 0.0) {
            return Err(Error::validation("trust_region", "must be positive"));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max && self.lambda_max < 1.0) {
            return Err(Error::validation("lambda_min", "need 0 < lambda_min < lambda_max < 1"));
        }
        Ok(())
    }
}

/// Initial guess for [`scp_solve`]; `lambdas[j]` may be absent per obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub velocities: Vec<DVector<f64>>,
    pub lambdas: Vec<Option<Vec<f64>>>,
}

/// One SCP iteration, for verbose diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub merit: f64,
    pub cost: f64,
    pub max_violation: f64,
    pub trust_region: f64,
    pub accepted: bool,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub velocities: Vec<DVector<f64>>,
    pub positions: Vec<DVector<f64>>,
    /// `lambdas[j][i]` for obstacle `j` at step `i + 1`.
    pub lambdas: Vec<Vec<f64>>,
    /// Exact overlap per obstacle and step.
    pub upsilons: Vec<Vec<f64>>,
    pub cost_terminal: f64,
    pub cost_smooth: f64,
    /// Unweighted running goal cost (see [`ProblemSpec::stage_weight`]).
    pub cost_stage: f64,
    pub scp_iterations: usize,
    pub converged: bool,
    pub constraint_violated: bool,
    /// Largest exact bound violation over all obstacles and steps.
    pub max_violation: f64,
    /// Merit of the reference after each iteration.
    pub per_iteration_cost: Vec<f64>,
    /// Largest |linear model − exact overlap| over the constraints active in
    /// the last accepted QP.
    pub linearization_gap: f64,
    pub diagnostics: Vec<IterationRecord>,
}

impl TrajectorySolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            velocities: self.velocities.clone(),
            lambdas: self.lambdas.iter().cloned().map(Some).collect(),
        }
    }
}

impl WarmStart {
    /// Drops the first step and repeats the last one.
    pub fn shifted(&self) -> WarmStart {
        fn shift<T: Clone>(v: &[T]) -> Vec<T> {
            let mut out: Vec<T> = v.iter().skip(1).cloned().collect();
            if let Some(last) = v.last() {
                out.push(last.clone());
            }
            out
        }
        WarmStart {
            velocities: shift(&self.velocities),
            lambdas: self.lambdas.iter().map(|l| l.as_ref().map(|l| shift(l))).collect(),
        }
    }
}

/// Positions after each step: `x_i = x₀ + τ·Σ_{k≤i} v_k`.
pub fn rollout(start: &DVector<f64>, velocities: &[DVector<f64>], tau: f64) -> Vec<DVector<f64>> {
    let mut pos = start.clone();
    velocities
        .iter()
        .map(|v| {
            pos += v * tau;
            pos.clone()
        })
        .collect()
}

/// Squared Mahalanobis distance `(D − G)ᵀΣ⁻¹(D − G)`.
pub fn terminal_cost(final_pos: &DVector<f64>, final_cov: &DMatrix<f64>, goal: &DVector<f64>) -> Result<f64> {
    let chol = final_cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let e = final_pos - goal;
    Ok(e.dot(&chol.solve(&e)))
}

/// `Σ_{i=2}^{N−1} ‖(v_{i+1} + v_{i−1} − 2v_i)/τ²‖²`.
pub fn smoothness_cost(velocities: &[DVector<f64>], tau: f64) -> f64 {
    let t2 = tau * tau;
    velocities
        .windows(3)
        .map(|w| ((&w[2] + &w[0] - &w[1] * 2.0) / t2).norm_squared())
        .sum()
}

/// Mean squared Mahalanobis distance of all horizon positions to the goal.
fn stage_cost(positions: &[DVector<f64>], weight: &DMatrix<f64>, goal: &DVector<f64>) -> f64 {
    let total: f64 = positions
        .iter()
        .map(|p| {
            let e = p - goal;
            e.dot(&(weight * &e))
        })
        .sum();
    total / positions.len() as f64
}

// ---------------------------------------------------------------------------

struct Pair {
    drone_cov: DMatrix<f64>,
    obs_cov: DMatrix<f64>,
    /// Combined 99% contour extent.
    extent: f64,
}

struct Prepared<'a> {
    spec: &'a ProblemSpec,
    cfg: &'a ScpConfig,
    d: usize,
    terminal_inv: DMatrix<f64>,
    /// `pairs[j][i]`
    pairs: Vec<Vec<Pair>>,
    /// Separation at the lower overlap bound and the slope `2φ(η_min)`.
    eta_min: f64,
    min_scale: f64,
}

struct Evaluation {
    cost_terminal: f64,
    cost_smooth: f64,
    cost_stage: f64,
    violation: f64,
}

impl Evaluation {
    fn cost(&self, spec: &ProblemSpec) -> f64 {
        spec.terminal_weight * self.cost_terminal
            + spec.smooth_weight * self.cost_smooth
            + spec.stage_weight * self.cost_stage
    }

    fn merit(&self, spec: &ProblemSpec, cfg: &ScpConfig) -> f64 {
        self.cost(spec) + cfg.slack_weight * self.violation
    }
}

enum RowKind {
    Max,
    /// Lower overlap bound written as `k·η ≤ k·η_min` with `k = 2φ(η_min)`,
    /// so the row keeps a gradient where the overlap itself underflows.
    Min,
    LambdaHigh,
    LambdaLow,
}

struct OverlapRow {
    j: usize,
    i: usize,
    kind: RowKind,
    /// Predicted overlap is `c + g·(D_i − D̄_i)`.
    c: f64,
    g: DVector<f64>,
}

/// Linear model of the admissible `λ` for one pair.
struct LambdaModel {
    j: usize,
    i: usize,
    lambda: f64,
    f2: f64,
    g2: DVector<f64>,
    h2: f64,
}

fn lambda_max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

impl<'a> Prepared<'a> {
    fn new(spec: &'a ProblemSpec, cfg: &'a ScpConfig) -> Result<Self> {
        let d = spec.dim();
        let r99 = chi_square_quantile(0.99, d)?.sqrt();
        let terminal_inv = spec.drone_covs[spec.n - 1]
            .clone()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        let pairs = spec
            .obstacles
            .iter()
            .map(|ob| {
                (0..spec.n)
                    .map(|i| {
                        let drone_cov = inflate(&spec.drone_covs[i], spec.drone_radius, spec.kappa);
                        let obs_cov = inflate(&ob.covs[i], ob.radius, spec.kappa);
                        let extent = r99 * (lambda_max_eig(&drone_cov).sqrt() + lambda_max_eig(&obs_cov).sqrt());
                        Pair {
                            drone_cov,
                            obs_cov,
                            extent,
                        }
                    })
                    .collect()
            })
            .collect();
        let (eta_min, min_scale) = match spec.upsilon_min {
            Some(lo) => {
                let e = -normal_quantile(0.5 * lo)?;
                (e, 2.0 * normal_pdf(e))
            }
            None => (0.0, 1.0),
        };
        Ok(Prepared {
            spec,
            cfg,
            d,
            terminal_inv,
            pairs,
            eta_min,
            min_scale,
        })
    }

    fn exact_separator(&self, j: usize, i: usize, pos: &DVector<f64>) -> Result<Separator> {
        let p = &self.pairs[j][i];
        minmax_separator(
            pos,
            &p.drone_cov,
            &self.spec.obstacles[j].means[i],
            &p.obs_cov,
            LAMBDA_TOL,
        )
    }

    fn exact_overlap(&self, j: usize, i: usize, pos: &DVector<f64>) -> Result<(f64, f64)> {
        let sep = self.exact_separator(j, i, pos)?;
        Ok((sep.overlap, sep.lambda))
    }

    /// Upper bound on the overlap from the separator along the center line.
    fn overlap_bound(&self, j: usize, i: usize, pos: &DVector<f64>) -> f64 {
        let p = &self.pairs[j][i];
        let delta = &self.spec.obstacles[j].means[i] - pos;
        let dist = delta.norm();
        if dist == 0.0 {
            return 1.0;
        }
        let u = delta / dist;
        let s = u.dot(&(&p.drone_cov * &u)).sqrt() + u.dot(&(&p.obs_cov * &u)).sqrt();
        2.0 * normal_sf(dist / s)
    }

    /// Bound violation of one pair. The upper bound is measured in overlap;
    /// the lower bound in scaled separation `k·(η − η_min)`, which matches
    /// overlap units near the bound and keeps growing once the overlap has
    /// underflowed.
    fn pair_violation(&self, j: usize, i: usize, pos: &DVector<f64>) -> Result<f64> {
        let spec = self.spec;
        let lower = spec.upsilon_min.is_some() && spec.obstacles[j].min_applies(i);
        let upper = spec.upsilon_max_for(j);
        if !lower && self.overlap_bound(j, i, pos) <= upper {
            return Ok(0.0);
        }
        let sep = self.exact_separator(j, i, pos)?;
        let mut v = (sep.overlap - upper).max(0.0);
        if lower && !sep.degenerate {
            v = v.max(self.min_scale * (sep.eta1 - self.eta_min));
        }
        Ok(v)
    }

    fn evaluate(&self, vel: &[DVector<f64>]) -> Result<Evaluation> {
        let spec = self.spec;
        let pos = rollout(&spec.start, vel, spec.tau);
        let e = &pos[spec.n - 1] - &spec.goal;
        let cost_terminal = e.dot(&(&self.terminal_inv * &e));
        let cost_smooth = smoothness_cost(vel, spec.tau);
        let cost_stage = stage_cost(&pos, &self.terminal_inv, &spec.goal);
        let mut violation: f64 = 0.0;
        for j in 0..spec.obstacles.len() {
            for (i, p) in pos.iter().enumerate() {
                violation = violation.max(self.pair_violation(j, i, p)?);
            }
        }
        Ok(Evaluation {
            cost_terminal,
            cost_smooth,
            cost_stage,
            violation,
        })
    }

    fn bounds_ok(&self, vel: &[DVector<f64>]) -> bool {
        let spec = self.spec;
        let tol = 1e-9;
        let mut prev = spec.start_velocity.clone();
        for v in vel {
            for c in 0..self.d {
                if v[c] < spec.v_min[c] - tol || v[c] > spec.v_max[c] + tol {
                    return false;
                }
                if let Some(p) = &prev {
                    let a = (v[c] - p[c]) / spec.tau;
                    if a < spec.a_min[c] - tol || a > spec.a_max[c] + tol {
                        return false;
                    }
                }
            }
            prev = Some(v.clone());
        }
        true
    }

    fn linearize(&self, j: usize, i: usize, pos: &DVector<f64>, lambda: f64) -> Result<PairLinearization> {
        let p = &self.pairs[j][i];
        linearize_pair(pos, &p.drone_cov, &self.spec.obstacles[j].means[i], &p.obs_cov, lambda)
    }

    fn is_active(&self, j: usize, i: usize, pos: &DVector<f64>) -> bool {
        let spec = self.spec;
        if spec.upsilon_min.is_some() && spec.obstacles[j].min_applies(i) {
            return true;
        }
        let dist = (pos - &spec.obstacles[j].means[i]).norm();
        dist < self.cfg.activation_factor * self.pairs[j][i].extent
    }

    /// Builds the convex subproblem about `(vel, lambdas)`.
    fn build_qp(
        &self,
        vel: &[DVector<f64>],
        lambdas: &mut [Vec<f64>],
        radius: f64,
    ) -> Result<(QpProblem, Vec<OverlapRow>, Vec<LambdaModel>)> {
        let spec = self.spec;
        let cfg = self.cfg;
        let (d, n, tau) = (self.d, spec.n, spec.tau);
        let nv = d * n;
        let nx = nv + 1;
        let s_idx = nv;
        let pos = rollout(&spec.start, vel, tau);

        let mut p = DMatrix::zeros(nx, nx);
        let mut q = DVector::zeros(nx);
        // terminal: w·(x₀ + τΣv − G)ᵀW(…)
        let w = &self.terminal_inv * (2.0 * spec.terminal_weight);
        let e0 = &spec.start - &spec.goal;
        let we0 = &w * &e0 * tau;
        for a in 0..n {
            for b in 0..n {
                let mut blk = p.view_mut((a * d, b * d), (d, d));
                blk += &w * (tau * tau);
            }
            let mut seg = q.rows_mut(a * d, d);
            seg += &we0;
        }
        // running cost: position i+1 depends on v_0..v_i
        if spec.stage_weight > 0.0 {
            let ws = &self.terminal_inv * (2.0 * spec.stage_weight / n as f64);
            let ws0 = &ws * &e0 * tau;
            for a in 0..n {
                for b in 0..n {
                    let count = (n - a.max(b)) as f64;
                    let mut blk = p.view_mut((a * d, b * d), (d, d));
                    blk += &ws * (tau * tau * count);
                }
                let mut seg = q.rows_mut(a * d, d);
                seg += &ws0 * (n - a) as f64;
            }
        }
        // smoothness: second differences
        let t2 = tau * tau;
        let coef = [1.0 / t2, -2.0 / t2, 1.0 / t2];
        for mid in 1..n - 1 {
            for (ka, ca) in coef.iter().enumerate() {
                for (kb, cb) in coef.iter().enumerate() {
                    let (ra, rb) = ((mid + ka - 1) * d, (mid + kb - 1) * d);
                    for c in 0..d {
                        p[(ra + c, rb + c)] += 2.0 * spec.smooth_weight * ca * cb;
                    }
                }
            }
        }
        for k in 0..n {
            for c in 0..d {
                let idx = k * d + c;
                p[(idx, idx)] += 2.0 * cfg.prox_weight;
                q[idx] -= 2.0 * cfg.prox_weight * vel[k][c];
            }
        }
        p[(s_idx, s_idx)] = 2e-2;
        q[s_idx] = cfg.slack_weight;

        // bounds: velocity box ∩ trust region ∩ first acceleration
        let mut lb = DVector::zeros(nx);
        let mut ub = DVector::zeros(nx);
        for k in 0..n {
            for c in 0..d {
                let mut lo = spec.v_min[c].max(vel[k][c] - radius);
                let mut hi = spec.v_max[c].min(vel[k][c] + radius);
                if k == 0 {
                    if let Some(u0) = &spec.start_velocity {
                        lo = lo.max(u0[c] + tau * spec.a_min[c]);
                        hi = hi.min(u0[c] + tau * spec.a_max[c]);
                    }
                }
                if lo > hi {
                    // Reference outside the feasible box: fall back to the box alone.
                    lo = spec.v_min[c];
                    hi = spec.v_max[c];
                    if k == 0 {
                        if let Some(u0) = &spec.start_velocity {
                            lo = lo.max(u0[c] + tau * spec.a_min[c]);
                            hi = hi.min(u0[c] + tau * spec.a_max[c]);
                        }
                    }
                    if lo > hi {
                        return Err(Error::QpInfeasible { max_violation: lo - hi });
                    }
                }
                lb[k * d + c] = lo;
                ub[k * d + c] = hi;
            }
        }
        lb[s_idx] = 0.0;
        ub[s_idx] = f64::INFINITY;

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for k in 1..n {
            for c in 0..d {
                let mut r = DVector::zeros(nx);
                r[k * d + c] = 1.0;
                r[(k - 1) * d + c] = -1.0;
                rows.push((r.clone(), tau * spec.a_max[c]));
                rows.push((-r, -tau * spec.a_min[c]));
            }
        }

        let mut overlap_rows = Vec::new();
        let mut models = Vec::new();
        for j in 0..spec.obstacles.len() {
            for i in 0..n {
                if !self.is_active(j, i, &pos[i]) {
                    continue;
                }
                let mut lin = self.linearize(j, i, &pos[i], lambdas[j][i])?;
                if lin.degenerate {
                    continue;
                }
                if !(lin.df2_dlambda > 1e-12) {
                    let (_, star) = self.exact_overlap(j, i, &pos[i])?;
                    lambdas[j][i] = star.clamp(cfg.lambda_min, cfg.lambda_max);
                    lin = self.linearize(j, i, &pos[i], lambdas[j][i])?;
                }
                let (c, g, c_eta, g_eta) = if lin.df2_dlambda > 1e-12 {
                    let ratio = lin.df1_dlambda / lin.df2_dlambda;
                    let ratio_eta = lin.deta_dlambda / lin.df2_dlambda;
                    models.push(LambdaModel {
                        j,
                        i,
                        lambda: lambdas[j][i],
                        f2: lin.f2,
                        g2: lin.grad_pos_f2.clone(),
                        h2: lin.df2_dlambda,
                    });
                    (
                        lin.f1 - ratio * lin.f2,
                        &lin.grad_pos_f1 - &lin.grad_pos_f2 * ratio,
                        lin.eta - ratio_eta * lin.f2,
                        &lin.grad_pos_eta - &lin.grad_pos_f2 * ratio_eta,
                    )
                } else {
                    (lin.f1, lin.grad_pos_f1.clone(), lin.eta, lin.grad_pos_eta.clone())
                };
                let lower = spec.upsilon_min.filter(|_| spec.obstacles[j].min_applies(i));
                overlap_rows.push(OverlapRow {
                    j,
                    i,
                    kind: RowKind::Max,
                    c,
                    g,
                });
                if lower.is_some() {
                    let k = self.min_scale;
                    overlap_rows.push(OverlapRow {
                        j,
                        i,
                        kind: RowKind::Min,
                        c: k * c_eta,
                        g: g_eta * k,
                    });
                }
                if let Some(m) = models.last().filter(|m| m.j == j && m.i == i) {
                    // λ(D) = λ̄ − (f₂ + g₂·δD)/h₂, expressed as "c + g·δD"
                    let c_l = m.lambda - m.f2 / m.h2;
                    let g_l = &m.g2 * (-1.0 / m.h2);
                    overlap_rows.push(OverlapRow {
                        j,
                        i,
                        kind: RowKind::LambdaHigh,
                        c: c_l,
                        g: g_l.clone(),
                    });
                    overlap_rows.push(OverlapRow {
                        j,
                        i,
                        kind: RowKind::LambdaLow,
                        c: c_l,
                        g: g_l,
                    });
                }
            }
        }

        let mut kept = Vec::with_capacity(overlap_rows.len());
        for row in overlap_rows {
            // g·(D_i − D̄_i) = τ·g·Σ_{k≤i} v_k − g·(D̄_i − x₀)
            let mut r = DVector::zeros(nx);
            for k in 0..=row.i {
                for c in 0..d {
                    r[k * d + c] = tau * row.g[c];
                }
            }
            let offset = row.c - row.g.dot(&(&pos[row.i] - &spec.start));
            let (sign, bound) = match row.kind {
                RowKind::Max => (1.0, spec.upsilon_max_for(row.j)),
                RowKind::Min => (1.0, self.min_scale * self.eta_min),
                RowKind::LambdaHigh => (1.0, cfg.lambda_max),
                RowKind::LambdaLow => (-1.0, -cfg.lambda_min),
            };
            let mut r = r * sign;
            let rhs = bound - sign * offset;
            // Drop rows that cannot bind anywhere in the variable box.
            let reach: f64 = (0..nv).map(|k| (r[k] * lb[k]).max(r[k] * ub[k])).sum();
            if reach <= rhs {
                continue;
            }
            r[s_idx] = -1.0;
            rows.push((r, rhs));
            kept.push(row);
        }
        let overlap_rows = kept;

        let mut a_in = DMatrix::zeros(rows.len(), nx);
        let mut b_in = DVector::zeros(rows.len());
        for (k, (r, b)) in rows.into_iter().enumerate() {
            a_in.set_row(k, &r.transpose());
            b_in[k] = b;
        }
        let prob = QpProblem::new(p, q).with_ineq(a_in, b_in).with_bounds(lb, ub);
        Ok((prob, overlap_rows, models))
    }
}

fn unflatten(x: &DVector<f64>, d: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|k| x.rows(k * d, d).into_owned()).collect()
}

fn default_guess(spec: &ProblemSpec, bump: bool) -> Vec<DVector<f64>> {
    let d = spec.dim();
    let horizon = spec.n as f64 * spec.tau;
    let target = DVector::from_fn(d, |c, _| {
        ((spec.goal[c] - spec.start[c]) / horizon).clamp(spec.v_min[c], spec.v_max[c])
    });
    shaped(spec, &vec![target; spec.n], bump)
}

fn with_bump(spec: &ProblemSpec, base: &[DVector<f64>]) -> Vec<DVector<f64>> {
    shaped(spec, base, true)
}

/// `base` plus an optional one-period lateral sine (0.1 m/s), clamped to the
/// velocity and acceleration bounds step by step.
fn shaped(spec: &ProblemSpec, base: &[DVector<f64>], bump: bool) -> Vec<DVector<f64>> {
    let d = spec.dim();
    let lateral = if bump { lateral_direction(spec) } else { None };
    let mut prev = spec.start_velocity.clone();
    let mut out = Vec::with_capacity(spec.n);
    for (i, b) in base.iter().enumerate() {
        let mut v = b.clone();
        if let Some(l) = &lateral {
            let phase = 2.0 * std::f64::consts::PI * (i + 1) as f64 / spec.n as f64;
            v += l * (0.1 * phase.sin());
        }
        if let Some(p) = &prev {
            for c in 0..d {
                let lo = p[c] + spec.tau * spec.a_min[c];
                let hi = p[c] + spec.tau * spec.a_max[c];
                v[c] = v[c].clamp(lo.min(hi), hi.max(lo));
            }
        }
        for c in 0..d {
            v[c] = v[c].clamp(spec.v_min[c], spec.v_max[c]);
        }
        prev = Some(v.clone());
        out.push(v);
    }
    out
}

fn lateral_direction(spec: &ProblemSpec) -> Option<DVector<f64>> {
    let u = &spec.goal - &spec.start;
    let (ux, uy) = (u[0], u[1]);
    let h = ux.hypot(uy);
    let mut l = DVector::zeros(spec.dim());
    if h > 1e-12 {
        l[0] = -uy / h;
        l[1] = ux / h;
    } else {
        l[0] = 1.0;
    }
    Some(l)
}

/// Runs the SCP loop and returns the best iterate found.
pub fn scp_solve(spec: &ProblemSpec, init: Option<&WarmStart>, cfg: &ScpConfig) -> Result<TrajectorySolution> {
    spec.validate()?;
    cfg.validate()?;
    let prep = Prepared::new(spec, cfg)?;
    let (d, n) = (prep.d, spec.n);
    let n_obs = spec.obstacles.len();

    let mut vel = match init {
        Some(ws) if ws.velocities.len() == n && ws.velocities.iter().all(|v| v.len() == d) => ws.velocities.clone(),
        _ => Vec::new(),
    };
    if vel.is_empty() || !prep.bounds_ok(&vel) {
        vel = default_guess(spec, n_obs > 0);
        if n_obs > 0 && !prep.bounds_ok(&vel) {
            vel = default_guess(spec, false);
        }
    } else if n_obs > 0 && prep.evaluate(&vel)?.violation > cfg.violation_tol {
        // A violated warm start may sit on a symmetric saddle (obstacle dead
        // ahead) where the overlap has no lateral gradient.
        let bumped = with_bump(spec, &vel);
        if prep.bounds_ok(&bumped) {
            vel = bumped;
        }
    }
    let mut lambdas: Vec<Vec<f64>> = (0..n_obs)
        .map(
            |j| match init.and_then(|ws| ws.lambdas.get(j)).and_then(|l| l.as_ref()) {
                Some(l) if l.len() == n => l.iter().map(|v| v.clamp(cfg.lambda_min, cfg.lambda_max)).collect(),
                _ => vec![0.5; n],
            },
        )
        .collect();

    let mut eval_ref = prep.evaluate(&vel)?;
    let mut merit_ref = eval_ref.merit(spec, cfg);
    let mut radius = cfg.trust_region;
    let mut per_iteration_cost = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut linearization_gap = 0.0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let mut trial_lambdas = lambdas.clone();
        let built = prep.build_qp(&vel, &mut trial_lambdas, radius);
        let (prob, rows, models) = match built {
            Ok(b) => b,
            Err(Error::Linearization(_)) | Err(Error::NoConvergence { .. }) => {
                radius *= 0.5;
                per_iteration_cost.push(merit_ref);
                diagnostics.push(record(it, merit_ref, &eval_ref, spec, radius, false, 0));
                if radius < cfg.trust_region_min {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let sol = match solve_qp(&prob, cfg.method) {
            Ok(s) => s,
            Err(_) => break,
        };
        let cand = unflatten(&sol.x, d, n);
        let eval_new = match prep.evaluate(&cand) {
            Ok(e) => e,
            Err(_) => {
                radius *= 0.5;
                per_iteration_cost.push(merit_ref);
                diagnostics.push(record(it, merit_ref, &eval_ref, spec, radius, false, sol.iterations));
                continue;
            }
        };
        let merit_new = eval_new.merit(spec, cfg);
        // round-off allowance on the acceptance test
        let slop = 1e-12 * (1.0 + merit_ref.abs());
        if merit_new <= merit_ref + slop {
            let change = merit_ref - merit_new;
            let pos_new = rollout(&spec.start, &cand, spec.tau);
            let pos_old = rollout(&spec.start, &vel, spec.tau);
            for m in &models {
                let dd = &pos_new[m.i] - &pos_old[m.i];
                let l = m.lambda - (m.f2 + m.g2.dot(&dd)) / m.h2;
                trial_lambdas[m.j][m.i] = l.clamp(cfg.lambda_min, cfg.lambda_max);
            }
            linearization_gap = gap_at_active(&prep, &prob, &sol.x, &rows, &pos_old, &pos_new)?;
            vel = cand;
            lambdas = trial_lambdas;
            eval_ref = eval_new;
            merit_ref = merit_new;
            radius = (radius * 2.0).min(cfg.trust_region_max);
            per_iteration_cost.push(merit_ref);
            diagnostics.push(record(it, merit_ref, &eval_ref, spec, radius, true, sol.iterations));
            if change < cfg.delta && eval_ref.violation <= cfg.violation_tol {
                converged = true;
                break;
            }
        } else {
            if merit_new - merit_ref < cfg.delta && eval_ref.violation <= cfg.violation_tol {
                // The model predicts no worthwhile descent from a feasible point.
                per_iteration_cost.push(merit_ref);
                diagnostics.push(record(it, merit_ref, &eval_ref, spec, radius, false, sol.iterations));
                converged = true;
                break;
            }
            radius *= 0.5;
            let pos = rollout(&spec.start, &vel, spec.tau);
            for j in 0..n_obs {
                for i in 0..n {
                    if prep.is_active(j, i, &pos[i]) {
                        if let Ok((_, star)) = prep.exact_overlap(j, i, &pos[i]) {
                            lambdas[j][i] = star.clamp(cfg.lambda_min, cfg.lambda_max);
                        }
                    }
                }
            }
            per_iteration_cost.push(merit_ref);
            diagnostics.push(record(it, merit_ref, &eval_ref, spec, radius, false, sol.iterations));
            if radius < cfg.trust_region_min {
                converged = eval_ref.violation <= cfg.violation_tol;
                break;
            }
        }
    }

    let positions = rollout(&spec.start, &vel, spec.tau);
    let mut upsilons = vec![vec![0.0; n]; n_obs];
    let mut max_violation: f64 = 0.0;
    for j in 0..n_obs {
        for i in 0..n {
            let (ups, _) = prep.exact_overlap(j, i, &positions[i])?;
            upsilons[j][i] = ups;
            max_violation = max_violation.max(ups - spec.upsilon_max_for(j));
            if let Some(lo) = spec.upsilon_min.filter(|_| spec.obstacles[j].min_applies(i)) {
                max_violation = max_violation.max(lo - ups);
            }
        }
    }
    Ok(TrajectorySolution {
        velocities: vel,
        positions,
        lambdas,
        upsilons,
        cost_terminal: eval_ref.cost_terminal,
        cost_smooth: eval_ref.cost_smooth,
        cost_stage: eval_ref.cost_stage,
        scp_iterations: iterations,
        converged,
        constraint_violated: max_violation > cfg.violation_tol,
        max_violation: max_violation.max(0.0),
        per_iteration_cost,
        linearization_gap,
        diagnostics,
    })
}

fn record(
    iteration: usize,
    merit: f64,
    eval: &Evaluation,
    spec: &ProblemSpec,
    trust_region: f64,
    accepted: bool,
    qp_iterations: usize,
) -> IterationRecord {
    IterationRecord {
        iteration,
        merit,
        cost: eval.cost(spec),
        max_violation: eval.violation,
        trust_region,
        accepted,
        qp_iterations,
    }
}

/// Largest |model − exact| over overlap rows that are tight at the QP solution.
fn gap_at_active(
    prep: &Prepared<'_>,
    prob: &QpProblem,
    x: &DVector<f64>,
    rows: &[OverlapRow],
    pos_old: &[DVector<f64>],
    pos_new: &[DVector<f64>],
) -> Result<f64> {
    let first = prob.a_in.nrows() - rows.len();
    let mut gap: f64 = 0.0;
    for (k, row) in rows.iter().enumerate() {
        if !matches!(row.kind, RowKind::Max | RowKind::Min) {
            continue;
        }
        let r = first + k;
        let slack = prob.b_in[r] - prob.a_in.row(r).transpose().dot(x);
        if slack.abs() > 1e-6 {
            continue;
        }
        let mut pred = row.c + row.g.dot(&(&pos_new[row.i] - &pos_old[row.i]));
        if matches!(row.kind, RowKind::Min) {
            pred = 2.0 * normal_sf(pred / prep.min_scale);
        }
        let (exact, _) = prep.exact_overlap(row.j, row.i, &pos_new[row.i])?;
        gap = gap.max((pred - exact).abs());
    }
    Ok(gap)
}
