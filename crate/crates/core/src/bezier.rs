//! Bézier segments in Bernstein form with an affine time scaling.
//!
//! A segment over `[t0, t1]` is evaluated at `τ = (t − t0)/s`, `s = t1 − t0`;
//! physical-time derivatives of order `k` carry a factor `s^{-k}`.

use crate::geometry::Vec3;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Domain slack when evaluating at a time slightly outside `[t0, t1]`.
const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BezierError {
    #[error("time {t} lies outside [{t0}, {t1}]")]
    OutOfDomain { t: f64, t0: f64, t1: f64 },
    #[error("collocation system is singular")]
    SingularSystem,
    #[error("invalid segment: {0}")]
    Invalid(String),
}

/// Binomial coefficient by Pascal's rule (exact for `n <= 60`).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut row = vec![1.0_f64; n + 1];
    for i in 1..=n {
        for j in (1..i).rev() {
            row[j] += row[j - 1];
        }
    }
    row[k]
}

/// Bernstein basis polynomial `b_{i,n}(τ)`.
pub fn bernstein(i: usize, n: usize, tau: f64) -> f64 {
    if i > n {
        return 0.0;
    }
    binomial(n, i) * tau.powi(i as i32) * (1.0 - tau).powi((n - i) as i32)
}

/// All `n + 1` basis values at `τ`.
pub fn bernstein_row(n: usize, tau: f64) -> Vec<f64> {
    let binoms: Vec<f64> = (0..=n).map(|i| binomial(n, i)).collect();
    (0..=n)
        .map(|i| binoms[i] * tau.powi(i as i32) * (1.0 - tau).powi((n - i) as i32))
        .collect()
}

/// Control points of the `k`-th derivative, in physical time for a segment of
/// duration `scale`.
pub fn derivative_control_points(cps: &[Vec3], k: usize, scale: f64) -> Vec<Vec3> {
    assert!(k < cps.len(), "derivative order exceeds degree");
    let n = cps.len() - 1;
    let mut cur = cps.to_vec();
    for order in 1..=k {
        let factor = (n - order + 1) as f64;
        cur = cur.windows(2).map(|w| (w[1] - w[0]) * factor).collect();
    }
    let s = scale.powi(k as i32);
    cur.into_iter().map(|c| c / s).collect()
}

/// Matrix `D` with `derivative_cps = D · cps` for order `k` in τ (unscaled).
pub fn derivative_matrix(n: usize, k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(n + 1, n + 1);
    for order in 1..=k {
        let rows = n + 1 - order;
        let mut step = DMatrix::<f64>::zeros(rows, rows + 1);
        let factor = (n - order + 1) as f64;
        for i in 0..rows {
            step[(i, i)] = -factor;
            step[(i, i + 1)] = factor;
        }
        d = step * d;
    }
    d
}

/// Gram matrix `∫_0^1 b_{i,m} b_{j,m} dτ`.
pub fn bernstein_gram(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m + 1, m + 1, |i, j| {
        binomial(m, i) * binomial(m, j) / ((2 * m + 1) as f64 * binomial(2 * m, i + j))
    })
}

/// Hessian `H` of one coordinate's jerk integral `∫ |x'''(t)|² dt = cᵀ H c`
/// over a segment of degree `n` and duration `scale`.
pub fn jerk_hessian(n: usize, scale: f64) -> DMatrix<f64> {
    assert!(n >= 3, "jerk needs degree >= 3");
    let d3 = derivative_matrix(n, 3);
    let g = bernstein_gram(n - 3);
    (d3.transpose() * g * d3) / scale.powi(5)
}

fn de_casteljau(cps: &[Vec3], tau: f64) -> Vec3 {
    if cps.is_empty() {
        return Vec3::zeros();
    }
    let mut work = cps.to_vec();
    let n = work.len();
    for r in 1..n {
        for i in 0..n - r {
            work[i] = work[i] * (1.0 - tau) + work[i + 1] * tau;
        }
    }
    work[0]
}

/// Kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BezierState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
}

/// One polynomial piece over `[t0, t1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierSegment {
    pub control_points: Vec<Vec3>,
    pub t0: f64,
    pub t1: f64,
}

impl BezierSegment {
    pub fn new(control_points: Vec<Vec3>, t0: f64, t1: f64) -> Result<Self, BezierError> {
        if control_points.len() < 2 {
            return Err(BezierError::Invalid("degree must be at least 1".into()));
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(BezierError::Invalid("t1 must exceed t0".into()));
        }
        Ok(Self {
            control_points,
            t0,
            t1,
        })
    }

    /// Constant curve at `p`.
    pub fn constant(p: Vec3, degree: usize, t0: f64, t1: f64) -> Result<Self, BezierError> {
        Self::new(vec![p; degree + 1], t0, t1)
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn scale(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn tau(&self, t: f64) -> Result<f64, BezierError> {
        if t < self.t0 - DOMAIN_TOL || t > self.t1 + DOMAIN_TOL || !t.is_finite() {
            return Err(BezierError::OutOfDomain {
                t,
                t0: self.t0,
                t1: self.t1,
            });
        }
        Ok(((t - self.t0) / self.scale()).clamp(0.0, 1.0))
    }

    /// Physical-time derivative control points of order `k`.
    pub fn derivative_cps(&self, k: usize) -> Vec<Vec3> {
        if k > self.degree() {
            return vec![Vec3::zeros()];
        }
        derivative_control_points(&self.control_points, k, self.scale())
    }

    /// Position and the first three derivatives at time `t`.
    pub fn eval(&self, t: f64) -> Result<BezierState, BezierError> {
        let tau = self.tau(t)?;
        Ok(self.eval_tau(tau))
    }

    pub fn eval_tau(&self, tau: f64) -> BezierState {
        let d = |k: usize| de_casteljau(&self.derivative_cps(k), tau);
        BezierState {
            position: de_casteljau(&self.control_points, tau),
            velocity: d(1),
            acceleration: d(2),
            jerk: d(3),
        }
    }

    pub fn position(&self, t: f64) -> Result<Vec3, BezierError> {
        let tau = self.tau(t)?;
        Ok(de_casteljau(&self.control_points, tau))
    }
}

/// Bernstein collocation fit: control points of the degree-`degree` curve
/// through `samples` at `τ_j = j/degree`.
pub fn fit_bezier(samples: &[Vec3], degree: usize) -> Result<Vec<Vec3>, BezierError> {
    if samples.len() != degree + 1 || degree == 0 {
        return Err(BezierError::Invalid(format!(
            "expected {} samples, got {}",
            degree + 1,
            samples.len()
        )));
    }
    let m = DMatrix::from_fn(degree + 1, degree + 1, |j, i| {
        bernstein(i, degree, j as f64 / degree as f64)
    });
    let lu = m.lu();
    let mut out = vec![Vec3::zeros(); degree + 1];
    for axis in 0..3 {
        let rhs = DVector::from_iterator(degree + 1, samples.iter().map(|s| s[axis]));
        let sol = lu.solve(&rhs).ok_or(BezierError::SingularSystem)?;
        for (o, v) in out.iter_mut().zip(sol.iter()) {
            o[axis] = *v;
        }
    }
    Ok(out)
}

/// Abutting segments forming one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBezier {
    pub segments: Vec<BezierSegment>,
}

impl PiecewiseBezier {
    pub fn new(segments: Vec<BezierSegment>) -> Result<Self, BezierError> {
        if segments.is_empty() {
            return Err(BezierError::Invalid("no segments".into()));
        }
        for w in segments.windows(2) {
            if (w[0].t1 - w[1].t0).abs() > 1e-9 {
                return Err(BezierError::Invalid("segments do not abut".into()));
            }
        }
        Ok(Self { segments })
    }

    pub fn t_start(&self) -> f64 {
        self.segments[0].t0
    }

    pub fn t_end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t1
    }

    /// Index of the segment containing `t` (the later one at a joint).
    pub fn segment_index(&self, t: f64) -> Result<usize, BezierError> {
        if t < self.t_start() - DOMAIN_TOL || t > self.t_end() + DOMAIN_TOL || !t.is_finite() {
            return Err(BezierError::OutOfDomain {
                t,
                t0: self.t_start(),
                t1: self.t_end(),
            });
        }
        let k = self.segments.partition_point(|s| s.t1 <= t);
        Ok(k.min(self.segments.len() - 1))
    }

    pub fn eval(&self, t: f64) -> Result<BezierState, BezierError> {
        let k = self.segment_index(t)?;
        self.segments[k].eval(t.clamp(self.segments[k].t0, self.segments[k].t1))
    }

    pub fn position(&self, t: f64) -> Result<Vec3, BezierError> {
        Ok(self.eval(t)?.position)
    }

    /// Largest mismatch in position, velocity or acceleration at any joint.
    pub fn continuity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.segments.windows(2) {
            let a = w[0].eval_tau(1.0);
            let b = w[1].eval_tau(0.0);
            worst = worst
                .max((a.position - b.position).amax())
                .max((a.velocity - b.velocity).amax())
                .max((a.acceleration - b.acceleration).amax());
        }
        worst
    }

    /// Appends another trajectory that starts where this one ends.
    pub fn append(&mut self, other: PiecewiseBezier) -> Result<(), BezierError> {
        if (self.t_end() - other.t_start()).abs() > 1e-9 {
            return Err(BezierError::Invalid(
                "appended trajectory does not abut".into(),
            ));
        }
        self.segments.extend(other.segments);
        Ok(())
    }
}
