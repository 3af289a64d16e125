//! Strictly convex quadratic programming via the dual active-set method of
//! Goldfarb and Idnani, with an independent KKT certificate.
//!
//! Problems take the form
//!
//! ```text
//!     minimize    1/2 x' G x - a' x
//!     subject to  Ceq   x  = beq
//!                 Cineq x >= bineq
//! ```
//!
//! with `G` symmetric positive definite. The solver starts from the
//! unconstrained minimizer `G^{-1} a` (dual feasible) and adds violated
//! constraints one at a time, dropping blocking ones, until primal
//! feasibility is reached.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::Scalar;

/// Maximum accepted condition proxy for `G` (ratio of extreme Cholesky
/// pivots, squared).
const MAX_CONDITION: f64 = 1e12;

/// A strictly convex QP with linear equality and inequality constraints.
#[derive(Debug, Clone)]
pub struct QpProblem<S> {
    g: Array2<S>,
    a: Array1<S>,
    ceq: Array2<S>,
    beq: Array1<S>,
    cineq: Array2<S>,
    bineq: Array1<S>,
}

impl<S: Scalar> QpProblem<S> {
    /// Unconstrained problem; add constraints with the `with_*` methods.
    pub fn new(g: Array2<S>, a: Array1<S>) -> Result<Self> {
        let d = a.len();
        if g.dim() != (d, d) {
            return Err(Error::validation(format!(
                "G must be {d} x {d} to match the linear term"
            )));
        }
        let scale = g.iter().fold(S::zero(), |acc, &v| acc.max(v.abs()));
        let tol = S::cast(1e-10) * scale.max(S::one());
        for i in 0..d {
            for j in (i + 1)..d {
                if (g[(i, j)] - g[(j, i)]).abs() > tol {
                    return Err(Error::validation(format!(
                        "G is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            g,
            a,
            ceq: Array2::zeros((0, d)),
            beq: Array1::zeros(0),
            cineq: Array2::zeros((0, d)),
            bineq: Array1::zeros(0),
        })
    }

    /// Adds equality constraints `Ceq x = beq`. Rows must be independent
    /// (detected during the solve) and `e <= d`.
    pub fn with_equalities(mut self, ceq: Array2<S>, beq: Array1<S>) -> Result<Self> {
        let d = self.dim();
        if ceq.ncols() != d || ceq.nrows() != beq.len() {
            return Err(Error::validation("equality constraint dimensions disagree"));
        }
        if ceq.nrows() > d {
            return Err(Error::validation(format!(
                "more equality constraints ({}) than unknowns ({d})",
                ceq.nrows()
            )));
        }
        self.ceq = ceq;
        self.beq = beq;
        Ok(self)
    }

    /// Adds inequality constraints `Cineq x >= bineq`.
    pub fn with_inequalities(mut self, cineq: Array2<S>, bineq: Array1<S>) -> Result<Self> {
        if cineq.ncols() != self.dim() || cineq.nrows() != bineq.len() {
            return Err(Error::validation(
                "inequality constraint dimensions disagree",
            ));
        }
        self.cineq = cineq;
        self.bineq = bineq;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn n_eq(&self) -> usize {
        self.ceq.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.cineq.nrows()
    }

    pub fn g(&self) -> &Array2<S> {
        &self.g
    }

    pub fn a(&self) -> &Array1<S> {
        &self.a
    }

    pub fn ceq(&self) -> &Array2<S> {
        &self.ceq
    }

    pub fn beq(&self) -> &Array1<S> {
        &self.beq
    }

    pub fn cineq(&self) -> &Array2<S> {
        &self.cineq
    }

    pub fn bineq(&self) -> &Array1<S> {
        &self.bineq
    }

    /// Objective value `1/2 x' G x - a' x`.
    pub fn objective(&self, x: ArrayView1<'_, S>) -> S {
        let gx = self.g.dot(&x);
        S::cast(0.5) * x.dot(&gx) - self.a.dot(&x)
    }

    fn constraint_row(&self, idx: usize) -> ArrayView1<'_, S> {
        if idx < self.n_eq() {
            self.ceq.row(idx)
        } else {
            self.cineq.row(idx - self.n_eq())
        }
    }

    fn constraint_rhs(&self, idx: usize) -> S {
        if idx < self.n_eq() {
            self.beq[idx]
        } else {
            self.bineq[idx - self.n_eq()]
        }
    }
}

/// Certified minimizer of a [`QpProblem`].
#[derive(Debug, Clone)]
pub struct QpSolution<S> {
    pub x: Array1<S>,
    /// Indices (into `cineq`) of inequalities binding at the solution.
    pub active_set: Vec<usize>,
    pub lagrange_eq: Array1<S>,
    /// Non-negative multipliers, one per inequality row.
    pub lagrange_ineq: Array1<S>,
    pub objective: S,
    /// Number of constraint additions performed.
    pub iterations: usize,
}

struct ActiveConstraint<S> {
    index: usize,
    sign: S,
}

/// Solves the QP, returning the unique global minimizer.
pub fn solve<S: Scalar>(problem: &QpProblem<S>) -> Result<QpSolution<S>> {
    let d = problem.dim();
    let e = problem.n_eq();
    let q = problem.n_ineq();
    let max_additions = d + q + e + 50;

    // Cholesky G = L L', rejecting indefinite or near-singular input.
    let lower = cholesky(&problem.g)?;
    let mut pivots: Vec<S> = (0..d).map(|i| lower[(i, i)]).collect();
    pivots.sort_by(|a, b| a.partial_cmp(b).expect("pivots are finite"));
    let cond_proxy = (pivots[d - 1] / pivots[0]).powi(2);
    if cond_proxy.as_f64() > MAX_CONDITION {
        return Err(Error::numerical(format!(
            "G is near-singular (condition proxy {:.3e})",
            cond_proxy.as_f64()
        )));
    }

    // J = L^{-T}; the columns past the active count span the free subspace.
    let mut j_mat = invert_lower(&lower).reversed_axes().as_standard_layout().to_owned();

    // Unconstrained minimizer x = G^{-1} a.
    let mut x = problem.a.clone();
    forward_substitute(&lower, &mut x);
    backward_substitute_transposed(&lower, &mut x);

    let mut r_mat = Array2::<S>::zeros((d, d));
    let mut active: Vec<ActiveConstraint<S>> = Vec::new();
    let mut multipliers: Vec<S> = Vec::new();
    let mut additions = 0usize;

    // Equality constraints enter the active set first and are never dropped.
    for idx in 0..e {
        let slack = problem.constraint_row(idx).dot(&x) - problem.constraint_rhs(idx);
        let sign = if slack > S::zero() { -S::one() } else { S::one() };
        add_constraint(
            problem,
            idx,
            sign,
            &mut x,
            &mut j_mat,
            &mut r_mat,
            &mut active,
            &mut multipliers,
            &mut additions,
            max_additions,
        )?;
    }

    loop {
        // Most violated inequality; scanning ascending keeps the lowest
        // index on ties.
        let mut chosen = None;
        let mut worst = S::zero();
        for i in 0..q {
            let idx = e + i;
            if active.iter().any(|c| c.index == idx) {
                continue;
            }
            let slack = problem.constraint_row(idx).dot(&x) - problem.constraint_rhs(idx);
            let tol = S::cast(1e-10) * (S::one() + problem.constraint_rhs(idx).abs());
            if slack < -tol && slack < worst {
                worst = slack;
                chosen = Some(idx);
            }
        }
        let Some(idx) = chosen else { break };
        add_constraint(
            problem,
            idx,
            S::one(),
            &mut x,
            &mut j_mat,
            &mut r_mat,
            &mut active,
            &mut multipliers,
            &mut additions,
            max_additions,
        )?;
    }

    let mut lagrange_eq = Array1::zeros(e);
    let mut lagrange_ineq = Array1::zeros(q);
    let mut active_set = Vec::new();
    for (k, c) in active.iter().enumerate() {
        if c.index < e {
            lagrange_eq[c.index] = c.sign * multipliers[k];
        } else {
            lagrange_ineq[c.index - e] = multipliers[k];
            active_set.push(c.index - e);
        }
    }
    active_set.sort_unstable();

    let objective = problem.objective(x.view());
    Ok(QpSolution {
        x,
        active_set,
        lagrange_eq,
        lagrange_ineq,
        objective,
        iterations: additions,
    })
}

/// Runs the dual iteration until constraint `idx` (with orientation `sign`)
/// joins the active set, dropping blocking inequalities on the way.
#[allow(clippy::too_many_arguments)]
fn add_constraint<S: Scalar>(
    problem: &QpProblem<S>,
    idx: usize,
    sign: S,
    x: &mut Array1<S>,
    j_mat: &mut Array2<S>,
    r_mat: &mut Array2<S>,
    active: &mut Vec<ActiveConstraint<S>>,
    multipliers: &mut Vec<S>,
    additions: &mut usize,
    max_additions: usize,
) -> Result<()> {
    let e = problem.n_eq();
    let d = problem.dim();
    let n_vec: Array1<S> = problem.constraint_row(idx).mapv(|v| v * sign);
    let b_val = problem.constraint_rhs(idx) * sign;
    let mut slack = n_vec.dot(x) - b_val;
    let mut u_plus = S::zero();

    loop {
        let nact = active.len();
        // Step directions: z in primal space, r in dual space.
        let dvec = j_mat.t().dot(&n_vec);
        let mut z = Array1::<S>::zeros(d);
        for c in nact..d {
            let coeff = dvec[c];
            if coeff != S::zero() {
                for row in 0..d {
                    z[row] += coeff * j_mat[(row, c)];
                }
            }
        }
        let mut rvec = vec![S::zero(); nact];
        if nact > 0 {
            for k in 0..nact {
                rvec[k] = dvec[k];
            }
            for k in (0..nact).rev() {
                let mut acc = rvec[k];
                for c in (k + 1)..nact {
                    acc -= r_mat[(k, c)] * rvec[c];
                }
                rvec[k] = acc / r_mat[(k, k)];
            }
        }

        // Longest dual step before an active inequality multiplier hits zero.
        let mut t1 = S::infinity();
        let mut drop_k: Option<usize> = None;
        for k in 0..nact {
            if active[k].index >= e && rvec[k] > S::zero() {
                let ratio = multipliers[k] / rvec[k];
                if ratio < t1 {
                    t1 = ratio;
                    drop_k = Some(k);
                }
            }
        }

        let znorm2 = z.dot(&z);
        let ztn = z.dot(&n_vec);
        let primal_step = znorm2 > S::epsilon() && ztn > S::zero();

        if !primal_step {
            // Constraint normal lies in the span of the active set.
            if t1.is_infinite() {
                if idx < e {
                    if slack.abs() <= S::cast(1e-9) * (S::one() + b_val.abs()) {
                        return Err(Error::validation(
                            "equality constraint rows are linearly dependent",
                        ));
                    }
                    return Err(Error::Infeasible(format!(
                        "equality constraint {idx} conflicts with the constraints before it"
                    )));
                }
                return Err(Error::Infeasible(format!(
                    "inequality constraint {} cannot be satisfied together with the active set",
                    idx - e
                )));
            }
            for k in 0..nact {
                multipliers[k] -= t1 * rvec[k];
            }
            u_plus += t1;
            drop_constraint(drop_k.expect("finite t1 implies a blocker"), j_mat, r_mat, active, multipliers);
            continue;
        }

        let t2 = -slack / ztn;
        let t = t1.min(t2);
        for row in 0..d {
            x[row] += t * z[row];
        }
        for k in 0..nact {
            multipliers[k] -= t * rvec[k];
        }
        u_plus += t;

        if t2 <= t1 {
            // Full step: constraint becomes active.
            *additions += 1;
            if *additions > max_additions {
                return Err(Error::numerical(format!(
                    "iteration cap of {max_additions} constraint additions exceeded"
                )));
            }
            let mut new_col = dvec;
            rotate_into_triangle(&mut new_col, j_mat, nact);
            for row in 0..=nact {
                r_mat[(row, nact)] = new_col[row];
            }
            active.push(ActiveConstraint { index: idx, sign });
            multipliers.push(u_plus);
            return Ok(());
        }

        // Partial step: the blocking inequality leaves the active set.
        drop_constraint(drop_k.expect("t1 < t2 implies a blocker"), j_mat, r_mat, active, multipliers);
        slack = n_vec.dot(x) - b_val;
    }
}

/// Givens rotations zeroing `col[nact+1..]`, accumulated into the columns of
/// `J` so that the invariant `J^T N = [R; 0]` is preserved.
fn rotate_into_triangle<S: Scalar>(col: &mut Array1<S>, j_mat: &mut Array2<S>, nact: usize) {
    let d = col.len();
    for k in ((nact + 1)..d).rev() {
        let a = col[k - 1];
        let b = col[k];
        if b == S::zero() {
            continue;
        }
        let h = a.hypot(b);
        let c = a / h;
        let s = b / h;
        col[k - 1] = h;
        col[k] = S::zero();
        for row in 0..d {
            let v1 = j_mat[(row, k - 1)];
            let v2 = j_mat[(row, k)];
            j_mat[(row, k - 1)] = c * v1 + s * v2;
            j_mat[(row, k)] = -s * v1 + c * v2;
        }
    }
}

/// Removes active constraint `k` and restores the triangular structure of `R`.
fn drop_constraint<S: Scalar>(
    k: usize,
    j_mat: &mut Array2<S>,
    r_mat: &mut Array2<S>,
    active: &mut Vec<ActiveConstraint<S>>,
    multipliers: &mut Vec<S>,
) {
    let nact = active.len();
    let d = j_mat.nrows();
    // Shift the trailing columns of R left over the removed one.
    for col in k..nact - 1 {
        for row in 0..d {
            r_mat[(row, col)] = r_mat[(row, col + 1)];
        }
    }
    for row in 0..d {
        r_mat[(row, nact - 1)] = S::zero();
    }
    active.remove(k);
    multipliers.remove(k);
    let nact = active.len();

    // Each shifted column has one sub-diagonal entry; rotate it away.
    for c in k..nact {
        let a = r_mat[(c, c)];
        let b = r_mat[(c + 1, c)];
        if b == S::zero() {
            continue;
        }
        let h = a.hypot(b);
        let cs = a / h;
        let sn = b / h;
        for col in c..nact {
            let v1 = r_mat[(c, col)];
            let v2 = r_mat[(c + 1, col)];
            r_mat[(c, col)] = cs * v1 + sn * v2;
            r_mat[(c + 1, col)] = -sn * v1 + cs * v2;
        }
        for row in 0..d {
            let v1 = j_mat[(row, c)];
            let v2 = j_mat[(row, c + 1)];
            j_mat[(row, c)] = cs * v1 + sn * v2;
            j_mat[(row, c + 1)] = -sn * v1 + cs * v2;
        }
    }
}

/// KKT residuals of a candidate solution, one worst case per condition.
#[derive(Debug, Clone)]
pub struct KktReport<S> {
    /// `max |Ceq x - beq|`.
    pub equality_residual: S,
    /// `max(0, max_i (bineq_i - cineq_i' x))`.
    pub inequality_violation: S,
    /// `max(0, -min_i lambda_i)` over inequality multipliers.
    pub dual_violation: S,
    /// `max |G x - a - Ceq' lam_eq - Cineq' lam_ineq|`.
    pub stationarity_residual: S,
    /// `max_i |lambda_i * slack_i|`.
    pub complementarity_residual: S,
    pub pass: bool,
}

/// Evaluates primal feasibility, dual feasibility, stationarity, and
/// complementary slackness of `solution` at tolerance `tol`.
pub fn kkt_check<S: Scalar>(
    problem: &QpProblem<S>,
    solution: &QpSolution<S>,
    tol: S,
) -> Result<KktReport<S>> {
    if solution.x.len() != problem.dim()
        || solution.lagrange_eq.len() != problem.n_eq()
        || solution.lagrange_ineq.len() != problem.n_ineq()
    {
        return Err(Error::validation("solution dimensions do not match problem"));
    }
    let x = &solution.x;

    let mut equality_residual = S::zero();
    for i in 0..problem.n_eq() {
        let r = (problem.ceq.row(i).dot(x) - problem.beq[i]).abs();
        equality_residual = equality_residual.max(r);
    }

    let mut inequality_violation = S::zero();
    let mut complementarity_residual = S::zero();
    for i in 0..problem.n_ineq() {
        let slack = problem.cineq.row(i).dot(x) - problem.bineq[i];
        inequality_violation = inequality_violation.max(-slack);
        complementarity_residual =
            complementarity_residual.max((solution.lagrange_ineq[i] * slack).abs());
    }
    inequality_violation = inequality_violation.max(S::zero());

    let mut dual_violation = S::zero();
    for &l in solution.lagrange_ineq.iter() {
        dual_violation = dual_violation.max(-l);
    }

    let mut grad = problem.g.dot(x) - &problem.a;
    for i in 0..problem.n_eq() {
        let l = solution.lagrange_eq[i];
        grad.zip_mut_with(&problem.ceq.row(i).to_owned(), |g, &c| *g -= l * c);
    }
    for i in 0..problem.n_ineq() {
        let l = solution.lagrange_ineq[i];
        if l != S::zero() {
            grad.zip_mut_with(&problem.cineq.row(i).to_owned(), |g, &c| *g -= l * c);
        }
    }
    let stationarity_residual = grad.iter().fold(S::zero(), |acc, &v| acc.max(v.abs()));

    let pass = equality_residual <= tol
        && inequality_violation <= tol
        && dual_violation <= tol
        && stationarity_residual <= tol
        && complementarity_residual <= tol;

    Ok(KktReport {
        equality_residual,
        inequality_violation,
        dual_violation,
        stationarity_residual,
        complementarity_residual,
        pass,
    })
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
fn cholesky<S: Scalar>(g: &Array2<S>) -> Result<Array2<S>> {
    let d = g.nrows();
    let mut l = Array2::<S>::zeros((d, d));
    for j in 0..d {
        let mut diag = g[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= S::zero() || !diag.is_finite() {
            return Err(Error::numerical(
                "quadratic term is not positive definite",
            ));
        }
        l[(j, j)] = diag.sqrt();
        for i in (j + 1)..d {
            let mut v = g[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / l[(j, j)];
        }
    }
    Ok(l)
}

/// In-place solve of `L y = b` for lower-triangular `L`.
fn forward_substitute<S: Scalar>(l: &Array2<S>, b: &mut Array1<S>) {
    let d = b.len();
    for i in 0..d {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * b[k];
        }
        b[i] = acc / l[(i, i)];
    }
}

/// In-place solve of `L' x = y` for lower-triangular `L`.
fn backward_substitute_transposed<S: Scalar>(l: &Array2<S>, b: &mut Array1<S>) {
    let d = b.len();
    for i in (0..d).rev() {
        let mut acc = b[i];
        for k in (i + 1)..d {
            acc -= l[(k, i)] * b[k];
        }
        b[i] = acc / l[(i, i)];
    }
}

/// Inverse of a lower-triangular matrix.
fn invert_lower<S: Scalar>(l: &Array2<S>) -> Array2<S> {
    let d = l.nrows();
    let mut inv = Array2::<S>::zeros((d, d));
    for col in 0..d {
        inv[(col, col)] = S::one() / l[(col, col)];
        for i in (col + 1)..d {
            let mut acc = S::zero();
            for k in col..i {
                acc -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = acc / l[(i, i)];
        }
    }
    inv
}
