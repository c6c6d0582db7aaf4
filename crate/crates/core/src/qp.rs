//! Dense convex quadratic programming.
//!
//! Solves `min ½xᵀPx + qᵀx` subject to `A_eq x = b_eq`, `A_in x ≤ b_in` and
//! `lb ≤ x ≤ ub` with either a Goldfarb–Idnani dual active-set method (the
//! default, exact and deterministic) or an ADMM operator-splitting method
//! followed by an active-set polish. Both report multipliers so the result
//! can be audited with [`kkt_residuals`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic program in the form documented at module level. Infinite bound
/// entries mean "unbounded".
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem of size `n`.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        QpProblem {
            p,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let checks = [
            (self.p.nrows(), n),
            (self.p.ncols(), n),
            (self.a_eq.ncols(), n),
            (self.a_eq.nrows(), self.b_eq.len()),
            (self.a_in.ncols(), n),
            (self.a_in.nrows(), self.b_in.len()),
            (self.lb.len(), n),
            (self.ub.len(), n),
        ];
        for (found, expected) in checks {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(Error::QpInfeasible {
                    max_violation: self.lb[i] - self.ub[i],
                });
            }
        }
        Ok(())
    }

    /// `½xᵀPx + qᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            v = v.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_in.nrows() > 0 {
            v = (&self.a_in * x - &self.b_in).iter().fold(v, |m, &r| m.max(r));
        }
        for i in 0..self.n() {
            v = v.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        v
    }
}

/// Which algorithm [`solve_qp`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QpMethod {
    #[default]
    ActiveSet,
    Admm,
}

/// Primal solution and multipliers, signed so that
/// `Px + q + A_eqᵀ y_eq + A_inᵀ y_in + z = 0` with `y_in ≥ 0`,
/// `z_i ≥ 0` at an active upper bound and `z_i ≤ 0` at an active lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Largest KKT residual of each kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(prob: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let x = &sol.x;
    let mut grad = &prob.p * x + &prob.q + &sol.z;
    if prob.a_eq.nrows() > 0 {
        grad += prob.a_eq.transpose() * &sol.y_eq;
    }
    let mut comp: f64 = 0.0;
    let mut dual: f64 = 0.0;
    if prob.a_in.nrows() > 0 {
        grad += prob.a_in.transpose() * &sol.y_in;
        let slack = &prob.b_in - &prob.a_in * x;
        for (s, y) in slack.iter().zip(sol.y_in.iter()) {
            dual = dual.max(-y);
            comp = comp.max((s.max(0.0) * y.max(0.0)).abs());
        }
    }
    for i in 0..prob.n() {
        let z = sol.z[i];
        if z > 0.0 {
            let gap = prob.ub[i] - x[i];
            comp = comp.max(if gap.is_finite() { gap.max(0.0) * z } else { z });
        } else if z < 0.0 {
            let gap = x[i] - prob.lb[i];
            comp = comp.max(if gap.is_finite() { gap.max(0.0) * -z } else { -z });
        }
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal: prob.max_violation(x),
        dual,
        complementarity: comp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-7,
            eps_rel: 1e-7,
            max_iter: 20_000,
        }
    }
}

pub fn solve_qp(prob: &QpProblem, method: QpMethod) -> Result<QpSolution> {
    match method {
        QpMethod::ActiveSet => solve_active_set(prob),
        QpMethod::Admm => solve_admm(prob, &AdmmSettings::default()),
    }
}

// ---------------------------------------------------------------------------
// Goldfarb–Idnani
// ---------------------------------------------------------------------------

/// Row `k` of the stacked constraint set `nᵀx + c ≥ 0` (equalities first).
#[derive(Debug, Clone, Copy)]
enum Origin {
    Eq(usize),
    In(usize),
    Lower(usize),
    Upper(usize),
}

struct Stacked {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    origin: Vec<Origin>,
    meq: usize,
}

fn stack_constraints(prob: &QpProblem) -> Stacked {
    let n = prob.n();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut offsets = Vec::new();
    let mut origin = Vec::new();
    for i in 0..prob.a_eq.nrows() {
        cols.push(prob.a_eq.row(i).transpose());
        offsets.push(-prob.b_eq[i]);
        origin.push(Origin::Eq(i));
    }
    for i in 0..prob.a_in.nrows() {
        cols.push(-prob.a_in.row(i).transpose());
        offsets.push(prob.b_in[i]);
        origin.push(Origin::In(i));
    }
    for i in 0..n {
        if prob.lb[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            cols.push(e);
            offsets.push(-prob.lb[i]);
            origin.push(Origin::Lower(i));
        }
        if prob.ub[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            cols.push(e);
            offsets.push(prob.ub[i]);
            origin.push(Origin::Upper(i));
        }
    }
    let normals = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Stacked {
        normals,
        offsets: DVector::from_vec(offsets),
        origin,
        meq: prob.a_eq.nrows(),
    }
}

struct Factor {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
}

impl Factor {
    fn d(&self, np: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    fn z(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let n = d.len();
        let mut z = DVector::zeros(n);
        for k in iq..n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        z
    }

    fn r_vec(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut s = d[i];
            for j in i + 1..iq {
                s -= self.r[(i, j)] * r[j];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    /// Rotates `d` so that only its first `iq+1` entries are nonzero, appends
    /// it as a column of R. Returns false on (near) linear dependence.
    fn add(&mut self, d: &mut DVector<f64>, iq: &mut usize) -> bool {
        let n = d.len();
        for j in (*iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[j - 1], d[j]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[j] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[j - 1] = -h;
            } else {
                d[j - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, j - 1)];
                let t2 = self.j[(k, j)];
                self.j[(k, j - 1)] = t1 * cc + t2 * ss;
                self.j[(k, j)] = xny * (t1 + self.j[(k, j - 1)]) - t2;
            }
        }
        *iq += 1;
        for i in 0..*iq {
            self.r[(i, *iq - 1)] = d[i];
        }
        let diag = d[*iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Removes the active constraint `l`, restoring the triangular shape of R.
    fn delete(&mut self, active: &mut [usize], u: &mut [f64], meq: usize, iq: &mut usize, l: usize) {
        let n = self.j.nrows();
        let qq = match (meq..*iq).find(|&i| active[i] == l) {
            Some(q) => q,
            None => return,
        };
        for i in qq..*iq - 1 {
            active[i] = active[i + 1];
            u[i] = u[i + 1];
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        active[*iq - 1] = active[*iq];
        u[*iq - 1] = u[*iq];
        active[*iq] = 0;
        u[*iq] = 0.0;
        for j in 0..*iq {
            self.r[(j, *iq - 1)] = 0.0;
        }
        *iq -= 1;
        if *iq == 0 {
            return;
        }
        for j in qq..*iq {
            let (mut cc, mut ss) = (self.r[(j, j)], self.r[(j + 1, j)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(j + 1, j)] = 0.0;
            if cc < 0.0 {
                self.r[(j, j)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(j, j)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in j + 1..*iq {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                self.r[(j, k)] = t1 * cc + t2 * ss;
                self.r[(j + 1, k)] = xny * (t1 + self.r[(j, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, j)];
                let t2 = self.j[(k, j + 1)];
                self.j[(k, j)] = t1 * cc + t2 * ss;
                self.j[(k, j + 1)] = xny * (self.j[(k, j)] + t1) - t2;
            }
        }
    }
}

fn solve_active_set(prob: &QpProblem) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.n();
    let st = stack_constraints(prob);
    let m_all = st.offsets.len();
    let meq = st.meq;
    let chol = prob
        .p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::QpFailure("cost matrix is not positive definite".into()))?;
    let c1 = prob.p.trace();
    let l_inv_t = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::QpFailure("singular Cholesky factor".into()))?
        .transpose();
    let c2 = l_inv_t.trace();
    let mut fac = Factor {
        j: l_inv_t,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
    };

    let mut x = -chol.solve(&prob.q);
    let mut iq = 0usize;
    let cap = n + m_all + 1;
    let mut active = vec![0usize; cap];
    let mut u = vec![0.0; cap];
    let col = |k: usize| st.normals.column(k).into_owned();
    let slack_of = |k: usize, x: &DVector<f64>| st.normals.column(k).dot(x) + st.offsets[k];

    for k in 0..meq {
        let np = col(k);
        let mut d = fac.d(&np);
        let z = fac.z(&d, iq);
        let r = fac.r_vec(&d, iq);
        let zn = z.dot(&np);
        let t2 = if z.dot(&z) > f64::EPSILON {
            -slack_of(k, &x) / zn
        } else {
            0.0
        };
        x.axpy(t2, &z, 1.0);
        u[iq] = t2;
        for i in 0..iq {
            u[i] -= t2 * r[i];
        }
        active[iq] = k;
        if !fac.add(&mut d, &mut iq) {
            return Err(Error::QpFailure("equality constraints are linearly dependent".into()));
        }
    }

    let mut in_active = vec![false; m_all];
    let mut excluded = vec![false; m_all];
    let max_iter = 50 * (n + m_all) + 100;
    let mut iterations = 0usize;
    let tol = (m_all as f64) * f64::EPSILON * c1 * c2 * 100.0;

    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::QpFailure(format!(
                "active set did not settle in {max_iter} iterations"
            )));
        }
        for flag in in_active.iter_mut() {
            *flag = false;
        }
        for &a in &active[meq..iq] {
            in_active[a] = true;
        }
        let s: Vec<f64> = (0..m_all).map(|k| slack_of(k, &x)).collect();
        let psi: f64 = s[meq..].iter().map(|v| v.min(0.0)).sum();
        if psi.abs() <= tol.max(1e-300) {
            break;
        }
        let u_old = u.clone();
        let a_old = active.clone();
        let x_old = x.clone();
        for flag in excluded.iter_mut() {
            *flag = false;
        }

        'pick: loop {
            let mut ss = 0.0;
            let mut ip = usize::MAX;
            for k in meq..m_all {
                if s[k] < ss && !in_active[k] && !excluded[k] {
                    ss = s[k];
                    ip = k;
                }
            }
            if ip == usize::MAX {
                break 'outer;
            }
            let np = col(ip);
            u[iq] = 0.0;
            active[iq] = ip;
            let mut s_ip = s[ip];

            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::QpFailure(format!(
                        "active set did not settle in {max_iter} iterations"
                    )));
                }
                let mut d = fac.d(&np);
                let z = fac.z(&d, iq);
                let r = fac.r_vec(&d, iq);
                let mut t1 = f64::INFINITY;
                let mut l = usize::MAX;
                for k in meq..iq {
                    if r[k] > 0.0 && u[k] / r[k] < t1 {
                        t1 = u[k] / r[k];
                        l = active[k];
                    }
                }
                let zn = z.dot(&np);
                let t2 = if z.dot(&z) > f64::EPSILON {
                    -s_ip / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    let viol = -s_ip;
                    return Err(Error::QpInfeasible {
                        max_violation: viol.max(0.0),
                    });
                }
                if !t2.is_finite() {
                    for k in 0..iq {
                        u[k] -= t * r[k];
                    }
                    u[iq] += t;
                    in_active[l] = false;
                    fac.delete(&mut active, &mut u, meq, &mut iq, l);
                    continue;
                }
                x.axpy(t, &z, 1.0);
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                if t == t2 {
                    if !fac.add(&mut d, &mut iq) {
                        excluded[ip] = true;
                        fac.delete(&mut active, &mut u, meq, &mut iq, ip);
                        for flag in in_active.iter_mut() {
                            *flag = false;
                        }
                        for k in meq..iq {
                            active[k] = a_old[k];
                            u[k] = u_old[k];
                            in_active[active[k]] = true;
                        }
                        x = x_old.clone();
                        continue 'pick;
                    }
                    continue 'outer;
                }
                in_active[l] = false;
                fac.delete(&mut active, &mut u, meq, &mut iq, l);
                s_ip = slack_of(ip, &x);
            }
        }
    }

    let mut y_eq = DVector::zeros(prob.a_eq.nrows());
    let mut y_in = DVector::zeros(prob.a_in.nrows());
    let mut z = DVector::zeros(n);
    for k in 0..iq {
        let lam = u[k];
        match st.origin[active[k]] {
            Origin::Eq(i) => y_eq[i] = -lam,
            Origin::In(i) => y_in[i] = lam,
            Origin::Lower(i) => z[i] -= lam,
            Origin::Upper(i) => z[i] += lam,
        }
    }
    Ok(QpSolution {
        objective: prob.objective(&x),
        x,
        y_eq,
        y_in,
        z,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// ADMM
// ---------------------------------------------------------------------------

fn solve_admm(prob: &QpProblem, cfg: &AdmmSettings) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.n();
    let me = prob.a_eq.nrows();
    let mi = prob.a_in.nrows();
    let m = me + mi + n;
    // Stack as l ≤ Ax ≤ u.
    let mut a = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    a.rows_mut(0, me).copy_from(&prob.a_eq);
    a.rows_mut(me, mi).copy_from(&prob.a_in);
    for i in 0..n {
        a[(me + mi + i, i)] = 1.0;
    }
    for i in 0..me {
        lo[i] = prob.b_eq[i];
        hi[i] = prob.b_eq[i];
    }
    for i in 0..mi {
        lo[me + i] = f64::NEG_INFINITY;
        hi[me + i] = prob.b_in[i];
    }
    for i in 0..n {
        lo[me + mi + i] = prob.lb[i];
        hi[me + mi + i] = prob.ub[i];
    }
    let rho: DVector<f64> = DVector::from_fn(m, |i, _| if i < me { 1e3 * cfg.rho } else { cfg.rho });
    let mut kmat = &prob.p + DMatrix::identity(n, n) * cfg.sigma;
    for i in 0..m {
        let row = a.row(i);
        kmat += row.transpose() * row * rho[i];
    }
    let chol = kmat
        .cholesky()
        .ok_or_else(|| Error::QpFailure("ADMM system matrix is not positive definite".into()))?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let rhs = &x * cfg.sigma - &prob.q + a.tr_mul(&(rho.component_mul(&z) - &y));
        let xt = chol.solve(&rhs);
        let zt = &a * &xt;
        x = &xt * cfg.alpha + &x * (1.0 - cfg.alpha);
        let relaxed = &zt * cfg.alpha + &z * (1.0 - cfg.alpha);
        let mut z_new = DVector::zeros(m);
        for i in 0..m {
            z_new[i] = (relaxed[i] + y[i] / rho[i]).clamp(lo[i], hi[i]);
        }
        y += rho.component_mul(&(&relaxed - &z_new));
        z = z_new;

        if iterations % 10 == 0 {
            let ax = &a * &x;
            let r_prim = (&ax - &z).amax();
            let px = &prob.p * &x;
            let aty = a.tr_mul(&y);
            let r_dual = (&px + &prob.q + &aty).amax();
            let eps_p = cfg.eps_abs + cfg.eps_rel * ax.amax().max(z.amax());
            let eps_d = cfg.eps_abs + cfg.eps_rel * px.amax().max(aty.amax()).max(prob.q.amax());
            if r_prim <= eps_p && r_dual <= eps_d {
                break;
            }
        }
    }

    let unpolished = unpack_admm(prob, &x, &y, iterations);
    Ok(polish(prob, &a, &lo, &hi, &x, &y, iterations).unwrap_or(unpolished))
}

fn unpack_admm(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, iterations: usize) -> QpSolution {
    let me = prob.a_eq.nrows();
    let mi = prob.a_in.nrows();
    let n = prob.n();
    QpSolution {
        x: x.clone(),
        y_eq: y.rows(0, me).into_owned(),
        y_in: y.rows(me, mi).map(|v| v.max(0.0)),
        z: y.rows(me + mi, n).into_owned(),
        objective: prob.objective(x),
        iterations,
    }
}

/// Solves the equality-constrained problem on the active set guessed from the
/// ADMM multipliers; accepted only if the result satisfies the full KKT system.
fn polish(
    prob: &QpProblem,
    a: &DMatrix<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    iterations: usize,
) -> Option<QpSolution> {
    let n = prob.n();
    let m = a.nrows();
    let ax = a * x;
    let gap_tol = 1e-5;
    // (row, target value, sign of the multiplier)
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if lo[i] == hi[i] || y[i] < -1e-9 || (lo[i].is_finite() && (ax[i] - lo[i]).abs() < gap_tol && y[i] < 0.0) {
            rows.push((i, lo[i]));
        } else if y[i] > 1e-9 || (hi[i].is_finite() && (ax[i] - hi[i]).abs() < gap_tol && y[i] > 0.0) {
            rows.push((i, hi[i]));
        }
    }
    let k = rows.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&prob.q));
    for (r, &(i, target)) in rows.iter().enumerate() {
        for c in 0..n {
            kkt[(n + r, c)] = a[(i, c)];
            kkt[(c, n + r)] = a[(i, c)];
        }
        rhs[n + r] = target;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..3 {
        let res = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&res) {
            sol += corr;
        }
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(m);
    for (r, &(i, _)) in rows.iter().enumerate() {
        yp[i] += sol[n + r];
    }
    let cand = unpack_raw(prob, &xp, &yp, iterations);
    let kkt_res = kkt_residuals(prob, &cand);
    let sign_ok = rows.iter().enumerate().all(|(r, &(i, target))| {
        let v = sol[n + r];
        lo[i] == hi[i] || (target == hi[i] && v >= -1e-10) || (target == lo[i] && v <= 1e-10)
    });
    if sign_ok && kkt_res.max() <= 1e-8 * (1.0 + prob.q.amax().max(prob.p.amax())) {
        Some(cand)
    } else {
        None
    }
}

fn unpack_raw(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, iterations: usize) -> QpSolution {
    let me = prob.a_eq.nrows();
    let mi = prob.a_in.nrows();
    let n = prob.n();
    QpSolution {
        x: x.clone(),
        y_eq: y.rows(0, me).into_owned(),
        y_in: y.rows(me, mi).into_owned(),
        z: y.rows(me + mi, n).into_owned(),
        objective: prob.objective(x),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }
    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn both(prob: &QpProblem) -> [QpSolution; 2] {
        [
            solve_qp(prob, QpMethod::ActiveSet).unwrap(),
            solve_qp(prob, QpMethod::Admm).unwrap(),
        ]
    }

    #[test]
    fn active_lower_bound() {
        // min x² s.t. x ≥ 1
        let prob = QpProblem::new(m(1, 1, &[2.0]), v(&[0.0])).with_ineq(m(1, 1, &[-1.0]), v(&[-1.0]));
        for sol in both(&prob) {
            assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
            assert!(kkt_residuals(&prob, &sol).max() <= 1e-8);
        }
        let boxed = QpProblem::new(m(1, 1, &[2.0]), v(&[0.0])).with_bounds(v(&[1.0]), v(&[f64::INFINITY]));
        for sol in both(&boxed) {
            assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
            assert!(sol.z[0] < 0.0);
            assert!(kkt_residuals(&boxed, &sol).max() <= 1e-8);
        }
    }

    #[test]
    fn active_upper_constraint() {
        // min (x−2)² s.t. x ≤ 1
        let prob = QpProblem::new(m(1, 1, &[2.0]), v(&[-4.0])).with_ineq(m(1, 1, &[1.0]), v(&[1.0]));
        for sol in both(&prob) {
            assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sol.y_in[0], 2.0, epsilon = 1e-8);
            assert!(kkt_residuals(&prob, &sol).max() <= 1e-8);
        }
    }

    #[test]
    fn equality_symmetric() {
        // min ‖x‖² s.t. x₁ + x₂ = 2
        let prob =
            QpProblem::new(DMatrix::identity(2, 2) * 2.0, v(&[0.0, 0.0])).with_eq(m(1, 2, &[1.0, 1.0]), v(&[2.0]));
        for sol in both(&prob) {
            assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-9);
            assert!(kkt_residuals(&prob, &sol).max() <= 1e-8);
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let prob = QpProblem::new(m(2, 2, &[4.0, 1.0, 1.0, 3.0]), v(&[1.0, 2.0]));
        let sol = solve_qp(&prob, QpMethod::ActiveSet).unwrap();
        let expected = -m(2, 2, &[4.0, 1.0, 1.0, 3.0]).try_inverse().unwrap() * v(&[1.0, 2.0]);
        assert!((sol.x - expected).amax() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let prob = QpProblem::new(DMatrix::identity(1, 1), v(&[0.0])).with_ineq(m(2, 1, &[1.0, -1.0]), v(&[0.0, -1.0]));
        match solve_qp(&prob, QpMethod::ActiveSet) {
            Err(Error::QpInfeasible { max_violation }) => assert!(max_violation >= 0.0),
            other => panic!("expected infeasibility, got {other:?}"),
        }
        let crossed = QpProblem::new(DMatrix::identity(1, 1), v(&[0.0])).with_bounds(v(&[1.0]), v(&[0.0]));
        assert!(matches!(
            solve_qp(&crossed, QpMethod::ActiveSet),
            Err(Error::QpInfeasible { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let prob = random_qp(&mut ChaCha8Rng::seed_from_u64(5), 12, 2, 10);
        let a = solve_qp(&prob, QpMethod::ActiveSet).unwrap();
        let b = solve_qp(&prob, QpMethod::ActiveSet).unwrap();
        assert_eq!(a, b);
    }

    // Feasible by construction: constraints hold at a random interior point.
    fn random_qp(rng: &mut ChaCha8Rng, n: usize, me: usize, mi: usize) -> QpProblem {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let a_eq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        let b_eq = &a_eq * &x0;
        let a_in = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
        let b_in = &a_in * &x0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
        let lb = DVector::from_fn(n, |i, _| if i % 3 == 0 { -1.0 } else { f64::NEG_INFINITY });
        let ub = DVector::from_fn(n, |i, _| if i % 4 == 1 { 1.0 } else { f64::INFINITY });
        QpProblem::new(p, q)
            .with_eq(a_eq, b_eq)
            .with_ineq(a_in, b_in)
            .with_bounds(lb, ub)
    }

    #[test]
    fn methods_agree_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = 3 + trial % 10;
            let prob = random_qp(&mut rng, n, trial % 3, 2 * n);
            let gi = solve_qp(&prob, QpMethod::ActiveSet).unwrap();
            let admm = solve_qp(&prob, QpMethod::Admm).unwrap();
            let kg = kkt_residuals(&prob, &gi);
            let ka = kkt_residuals(&prob, &admm);
            assert!(kg.max() <= 1e-8, "trial {trial}: active set {kg:?}");
            assert!(ka.max() <= 1e-8, "trial {trial}: admm {ka:?}");
            assert!((&gi.x - &admm.x).amax() < 1e-6, "trial {trial}");
        }
    }
}
