//! Dense convex QP solver.
//!
//! Solves `min ½ xᵀQx + qᵀx  s.t.  A_eq x = b_eq,  A_ie x <= b_ie`.
//!
//! Equalities are eliminated with an orthonormal null-space basis from an SVD,
//! leaving an inequality-only problem in reduced coordinates, which is solved
//! with the Goldfarb–Idnani dual active-set method. The dual method starts
//! from the unconstrained minimizer and adds the most violated constraint at
//! each step, so it needs no feasible starting point and terminates with an
//! infeasibility certificate when a violated constraint cannot be satisfied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Acceptance tolerance on primal and (scaled) dual KKT residuals.
pub const KKT_TOL: f64 = 1e-6;

/// Regularization added to the reduced Hessian when it is not numerically PD.
const REGULARIZATION: f64 = 1e-10;

/// Constraint activity threshold in normalized (metric) units.
const VIOLATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("problem dimensions are inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration cap of {0} reached")]
    MaxIterations(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// `min ½ xᵀQx + qᵀx` subject to linear equalities and inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ie: DMatrix<f64>,
    pub b_ie: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints.
    pub fn unconstrained(q_mat: DMatrix<f64>, q_vec: DVector<f64>) -> Self {
        let n = q_vec.len();
        Self {
            q_mat,
            q_vec,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ie: DMatrix::zeros(0, n),
            b_ie: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.q_vec.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q_vec.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let dims_ok = self.q_mat.nrows() == n
            && self.q_mat.ncols() == n
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_ie.ncols() == n
            && self.a_ie.nrows() == self.b_ie.len();
        if !dims_ok {
            return Err(QpError::DimensionMismatch(format!(
                "n={n}, Q={}x{}, A_eq={}x{}, b_eq={}, A_ie={}x{}, b_ie={}",
                self.q_mat.nrows(),
                self.q_mat.ncols(),
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len(),
                self.a_ie.nrows(),
                self.a_ie.ncols(),
                self.b_ie.len()
            )));
        }
        let asym = (&self.q_mat - self.q_mat.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.q_mat.amax()) {
            return Err(QpError::DimensionMismatch(format!(
                "Q is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let finite = self.q_mat.iter().all(|v| v.is_finite())
            && self.q_vec.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.a_ie.iter().all(|v| v.is_finite())
            && self.b_ie.iter().all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NumericalFailure("non-finite problem data".into()));
        }
        Ok(())
    }
}

/// Measured optimality conditions of a returned point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖A_eq x − b_eq‖∞`.
    pub primal_eq: f64,
    /// `max(0, max(A_ie x − b_ie))`.
    pub primal_ie: f64,
    /// `‖Qx + q + A_eqᵀν + A_ieᵀμ‖∞` divided by `max(1, ‖Qx‖∞, ‖q‖∞)`.
    pub stationarity: f64,
    /// `max |μ_i (A_ie x − b_ie)_i|` with the same scaling as stationarity.
    pub complementarity: f64,
    /// `max(0, −min μ)`.
    pub dual_infeasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ie)
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual_infeasibility)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows.
    pub eq_multipliers: DVector<f64>,
    /// Nonnegative multipliers of the inequality rows.
    pub ie_multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Evaluates KKT residuals of `x` with the given multipliers.
pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
) -> KktResiduals {
    let qx = &p.q_mat * x;
    let grad = &qx + &p.q_vec + p.a_eq.transpose() * nu + p.a_ie.transpose() * mu;
    let scale = 1f64.max(qx.amax()).max(p.q_vec.amax());
    let eq_res = &p.a_eq * x - &p.b_eq;
    let ie_res = &p.a_ie * x - &p.b_ie;
    let comp = mu
        .iter()
        .zip(ie_res.iter())
        .map(|(m, r)| (m * r).abs())
        .fold(0.0, f64::max);
    KktResiduals {
        primal_eq: if eq_res.is_empty() {
            0.0
        } else {
            eq_res.amax()
        },
        primal_ie: ie_res.iter().copied().fold(0.0, f64::max),
        stationarity: if grad.is_empty() {
            0.0
        } else {
            grad.amax() / scale
        },
        complementarity: comp / scale,
        dual_infeasibility: mu.iter().map(|m| -m).fold(0.0, f64::max),
    }
}

/// Solves the QP; every returned solution satisfies all KKT residuals < 1e-6.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.n();
    if n == 0 {
        return Err(QpError::DimensionMismatch("no variables".into()));
    }

    // --- Equality elimination: x = x0 + Z y -----------------------------------
    let elim = eliminate_equalities(&p.a_eq, &p.b_eq, n)?;
    let z = &elim.basis;
    let nz = z.ncols();
    let x0 = &elim.particular;

    let (y, u_red, iterations) = if nz == 0 {
        (DVector::zeros(0), DVector::zeros(p.a_ie.nrows()), 0)
    } else {
        let h = z.transpose() * &p.q_mat * z;
        let h = 0.5 * (&h + h.transpose());
        let g = z.transpose() * (&p.q_mat * x0 + &p.q_vec);
        let c = &p.a_ie * z;
        let d = &p.b_ie - &p.a_ie * x0;
        dual_active_set(&h, &g, &c, &d)?
    };
    if nz == 0 {
        // Fully determined by equalities; only feasibility remains.
        let viol = (&p.a_ie * x0 - &p.b_ie).iter().copied().fold(0.0, f64::max);
        if viol > KKT_TOL {
            return Err(QpError::Infeasible);
        }
    }
    let x = x0 + z * &y;

    // --- Multipliers in the original coordinates ------------------------------
    let mu = u_red;
    let rhs = -(&p.q_mat * &x + &p.q_vec + p.a_ie.transpose() * &mu);
    let nu = if p.a_eq.nrows() == 0 {
        DVector::zeros(0)
    } else {
        let at = p.a_eq.transpose();
        let svd = at.svd(true, true);
        svd.solve(&rhs, 1e-12 * svd.singular_values.amax().max(1e-300))
            .map_err(|e| QpError::NumericalFailure(e.to_string()))?
    };
    let kkt = kkt_residuals(p, &x, &nu, &mu);
    if !(kkt.max() < KKT_TOL) {
        return Err(QpError::NumericalFailure(format!(
            "KKT residuals too large: {kkt:?}"
        )));
    }
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        eq_multipliers: nu,
        ie_multipliers: mu,
        iterations,
        kkt,
    })
}

struct Elimination {
    particular: DVector<f64>,
    basis: DMatrix<f64>,
}

fn eliminate_equalities(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    n: usize,
) -> Result<Elimination, QpError> {
    if a.nrows() == 0 {
        return Ok(Elimination {
            particular: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
        });
    }
    // Row-normalize so the rank threshold is scale free.
    let mut an = a.clone();
    let mut bn = b.clone();
    for i in 0..an.nrows() {
        let norm = an.row(i).norm();
        if norm > 0.0 {
            an.row_mut(i).scale_mut(1.0 / norm);
            bn[i] /= norm;
        } else if b[i].abs() > KKT_TOL {
            return Err(QpError::Infeasible);
        }
    }
    // Pad to at least n rows so the SVD exposes the full right basis.
    let rows = an.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, an.nrows()).copy_from(&an);
    let svd = padded.svd(true, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| QpError::NumericalFailure("SVD failed".into()))?;
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| QpError::NumericalFailure("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let smax = sv.amax();
    let tol = 1e-10 * smax.max(1.0);
    let mut bpad = DVector::zeros(rows);
    bpad.rows_mut(0, bn.len()).copy_from(&bn);

    let mut particular = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for k in 0..n {
        if sv[k] > tol {
            let coef = u.column(k).dot(&bpad) / sv[k];
            particular += v_t.row(k).transpose() * coef;
        } else {
            null_cols.push(v_t.row(k).transpose());
        }
    }
    let residual = (&an * &particular - &bn).amax();
    if residual > 1e-9 * (1.0 + bn.amax()) {
        return Err(QpError::Infeasible);
    }
    let basis = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Ok(Elimination { particular, basis })
}

/// Goldfarb–Idnani for `min ½ yᵀHy + gᵀy  s.t.  C y <= d`.
/// Returns `(y, multipliers of the rows of C, iterations)`.
fn dual_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, usize), QpError> {
    let n = h.nrows();
    let m = c.nrows();

    let chol = match h.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let reg = REGULARIZATION * (1.0 + h.diagonal().amax());
            let hr = h + DMatrix::identity(n, n) * reg;
            hr.cholesky()
                .ok_or_else(|| QpError::NumericalFailure("reduced Hessian is not PSD".into()))?
        }
    };
    let l = chol.l();

    // Constraints in "n_iᵀ y >= b_i" form with unit rows.
    let mut normals: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    let mut norms: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let row = c.row(i).transpose();
        let nrm = row.norm();
        if nrm < 1e-14 {
            if d[i] < -KKT_TOL {
                return Err(QpError::Infeasible);
            }
            normals.push(DVector::zeros(n));
            rhs.push(f64::NEG_INFINITY);
            norms.push(0.0);
            continue;
        }
        normals.push(-row / nrm);
        rhs.push(-d[i] / nrm);
        norms.push(nrm);
    }

    // J = L⁻ᵀ so that J Jᵀ = H⁻¹.
    let mut j_mat = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| QpError::NumericalFailure("singular Cholesky factor".into()))?
        .transpose();
    let mut r_mat = DMatrix::<f64>::zeros(n, n);
    let mut r_norm = 1.0_f64;
    let mut y = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut excluded = vec![false; m];

    let cap = 10 * (n + m).max(1);
    let mut iterations = 0;
    let slack = |y: &DVector<f64>, i: usize, normals: &[DVector<f64>], rhs: &[f64]| {
        normals[i].dot(y) - rhs[i]
    };

    loop {
        iterations += 1;
        if iterations > cap {
            return Err(QpError::MaxIterations(cap));
        }
        // Step 1: most violated inactive constraint.
        let mut p = None;
        let mut worst = -VIOLATION_TOL;
        for i in 0..m {
            if excluded[i] || norms[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = slack(&y, i, &normals, &rhs);
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let np = normals[p].clone();
        let mut u_p = 0.0;
        let mut s_p = slack(&y, p, &normals, &rhs);

        // Step 2: move primal and dual until p becomes active.
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(QpError::MaxIterations(cap));
            }
            let iq = active.len();
            let dvec = j_mat.transpose() * &np;
            let z = j_mat.columns(iq, n - iq) * dvec.rows(iq, n - iq);
            let r = back_substitute(&r_mat, &dvec, iq);

            // Partial (dual) step length.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..iq {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            // Full (primal) step length.
            let zn = z.dot(&np);
            let t2 = if z.norm_squared() > 1e-24 && zn > 0.0 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            if !t2.is_finite() {
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u_p += t;
                let k = drop.expect("finite partial step names a constraint");
                delete_constraint(&mut r_mat, &mut j_mat, &mut active, &mut u, k);
                continue;
            }
            y += &z * t;
            for k in 0..iq {
                u[k] -= t * r[k];
            }
            u_p += t;
            if t2 <= t1 {
                let mut dd = dvec.clone();
                if add_constraint(&mut r_mat, &mut j_mat, &mut dd, iq, &mut r_norm) {
                    active.push(p);
                    u.push(u_p);
                } else {
                    // Linearly dependent on the active set; skip it.
                    excluded[p] = true;
                }
                break;
            }
            let k = drop.expect("partial step names a constraint");
            delete_constraint(&mut r_mat, &mut j_mat, &mut active, &mut u, k);
            s_p = slack(&y, p, &normals, &rhs);
        }
    }

    let mut mult = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        mult[i] = u[k].max(0.0) / norms[i];
    }
    Ok((y, mult, iterations))
}

fn back_substitute(r: &DMatrix<f64>, d: &DVector<f64>, iq: usize) -> Vec<f64> {
    let mut out = vec![0.0; iq];
    for i in (0..iq).rev() {
        let mut s = d[i];
        for j in i + 1..iq {
            s -= r[(i, j)] * out[j];
        }
        out[i] = s / r[(i, i)];
    }
    out
}

/// Appends a constraint with `d = Jᵀ n` to the factorization; returns `false`
/// when it is linearly dependent on the active set.
fn add_constraint(
    r: &mut DMatrix<f64>,
    j: &mut DMatrix<f64>,
    d: &mut DVector<f64>,
    iq: usize,
    r_norm: &mut f64,
) -> bool {
    let n = d.len();
    for col in (iq + 1..n).rev() {
        let mut cc = d[col - 1];
        let mut ss = d[col];
        let h = cc.hypot(ss);
        if h == 0.0 {
            continue;
        }
        d[col] = 0.0;
        ss /= h;
        cc /= h;
        if cc < 0.0 {
            cc = -cc;
            ss = -ss;
            d[col - 1] = -h;
        } else {
            d[col - 1] = h;
        }
        let xny = ss / (1.0 + cc);
        for k in 0..n {
            let t1 = j[(k, col - 1)];
            let t2 = j[(k, col)];
            j[(k, col - 1)] = t1 * cc + t2 * ss;
            j[(k, col)] = xny * (t1 + j[(k, col - 1)]) - t2;
        }
    }
    if d[iq].abs() <= f64::EPSILON * *r_norm {
        return false;
    }
    for i in 0..=iq {
        r[(i, iq)] = d[i];
    }
    *r_norm = r_norm.max(d[iq].abs());
    true
}

/// Removes the active constraint at position `qq` and restores the
/// triangular factor with Givens rotations.
fn delete_constraint(
    r: &mut DMatrix<f64>,
    j: &mut DMatrix<f64>,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    qq: usize,
) {
    let n = j.nrows();
    let iq_old = active.len();
    active.remove(qq);
    u.remove(qq);
    for col in qq..iq_old - 1 {
        for row in 0..n {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..n {
        r[(row, iq_old - 1)] = 0.0;
    }
    let iq = iq_old - 1;
    for col in qq..iq {
        let mut cc = r[(col, col)];
        let mut ss = r[(col + 1, col)];
        let h = cc.hypot(ss);
        if h == 0.0 {
            continue;
        }
        cc /= h;
        ss /= h;
        r[(col + 1, col)] = 0.0;
        if cc < 0.0 {
            r[(col, col)] = -h;
            cc = -cc;
            ss = -ss;
        } else {
            r[(col, col)] = h;
        }
        let xny = ss / (1.0 + cc);
        for k in col + 1..iq {
            let t1 = r[(col, k)];
            let t2 = r[(col + 1, k)];
            r[(col, k)] = t1 * cc + t2 * ss;
            r[(col + 1, k)] = xny * (t1 + r[(col, k)]) - t2;
        }
        for k in 0..n {
            let t1 = j[(k, col)];
            let t2 = j[(k, col + 1)];
            j[(k, col)] = t1 * cc + t2 * ss;
            j[(k, col + 1)] = xny * (j[(k, col)] + t1) - t2;
        }
    }
}
