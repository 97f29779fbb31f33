//! Minimum-jerk piecewise Bézier trajectory of the quadcopter base through a
//! corridor, with per-axis velocity/acceleration bounds on derivative control
//! points and rest-to-rest boundary conditions.

use crate::bezier::{derivative_matrix, jerk_hessian, BezierError, BezierSegment, PiecewiseBezier};
use crate::corridor::Corridor;
use crate::geometry::Vec3;
use crate::qp::{solve_qp, QpError, QpProblem};
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Degree of every base segment.
pub const QUAD_DEGREE: usize = 7;
/// Duration multiplier applied after an infeasible solve.
pub const RETRY_STRETCH: f64 = 1.5;
/// Retries after the first attempt.
pub const MAX_RETRIES: usize = 3;
/// Tolerance on endpoint membership in the first/last cell, meters.
const ENDPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadTrajectoryError {
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("corridor is empty or has a gap")]
    InvalidCorridor,
    #[error("{0} position lies outside its corridor cell")]
    EndpointOutsideCell(&'static str),
    #[error("no feasible trajectory after {attempts} attempts: {last}")]
    QpInfeasible { attempts: usize, last: QpError },
    #[error(transparent)]
    Bezier(#[from] BezierError),
}

/// Per-axis dynamic bounds of the base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadLimits {
    #[serde(rename = "v_max_mps")]
    pub v_max: f64,
    #[serde(rename = "a_max_mps2")]
    pub a_max: f64,
}

impl Default for QuadLimits {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            a_max: 1.0,
        }
    }
}

impl QuadLimits {
    pub fn validate(&self) -> Result<(), QuadTrajectoryError> {
        if self.v_max > 0.0 && self.a_max > 0.0 && self.v_max.is_finite() && self.a_max.is_finite()
        {
            Ok(())
        } else {
            Err(QuadTrajectoryError::InvalidLimits(format!(
                "v_max = {}, a_max = {} must be positive",
                self.v_max, self.a_max
            )))
        }
    }
}

/// Result of a corridor trajectory solve.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadPlan {
    pub trajectory: PiecewiseBezier,
    /// Segment durations actually used (after any stretching).
    pub durations: Vec<f64>,
    /// Number of QP solves performed.
    pub attempts: usize,
}

/// Index of control point `i`, axis `a`, segment `k`.
fn var(k: usize, a: usize, i: usize) -> usize {
    (k * 3 + a) * (QUAD_DEGREE + 1) + i
}

/// Assembles the corridor QP for the given durations.
pub fn build_quad_qp(
    corridor: &Corridor,
    durations: &[f64],
    p_start: &Vec3,
    p_goal: &Vec3,
    limits: &QuadLimits,
) -> QpProblem {
    let n = QUAD_DEGREE;
    let np = n + 1;
    let segs = corridor.cells.len();
    let nv = segs * 3 * np;
    let d1 = derivative_matrix(n, 1);
    let d2 = derivative_matrix(n, 2);

    let mut q_mat = DMatrix::<f64>::zeros(nv, nv);
    for (k, &s) in durations.iter().enumerate() {
        let h = jerk_hessian(n, s) * 2.0;
        for a in 0..3 {
            let o = var(k, a, 0);
            q_mat.view_mut((o, o), (np, np)).copy_from(&h);
        }
    }

    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ie_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();

    // Rest at both ends: position, velocity and acceleration (τ-derivatives
    // vanish exactly when the physical ones do).
    let last = segs - 1;
    for a in 0..3 {
        eq_rows.push((vec![(var(0, a, 0), 1.0)], p_start[a]));
        eq_rows.push((row_of(&d1, 0, var(0, a, 0), 1.0), 0.0));
        eq_rows.push((row_of(&d2, 0, var(0, a, 0), 1.0), 0.0));
        eq_rows.push((vec![(var(last, a, n), 1.0)], p_goal[a]));
        eq_rows.push((row_of(&d1, n - 1, var(last, a, 0), 1.0), 0.0));
        eq_rows.push((row_of(&d2, n - 2, var(last, a, 0), 1.0), 0.0));
    }

    // C² joints in physical time.
    for k in 0..last {
        let (s0, s1) = (durations[k], durations[k + 1]);
        for a in 0..3 {
            eq_rows.push((vec![(var(k, a, n), 1.0), (var(k + 1, a, 0), -1.0)], 0.0));
            let mut v = row_of(&d1, n - 1, var(k, a, 0), 1.0 / s0);
            v.extend(row_of(&d1, 0, var(k + 1, a, 0), -1.0 / s1));
            eq_rows.push((v, 0.0));
            let mut acc = row_of(&d2, n - 2, var(k, a, 0), 1.0 / (s0 * s0));
            acc.extend(row_of(&d2, 0, var(k + 1, a, 0), -1.0 / (s1 * s1)));
            eq_rows.push((acc, 0.0));
        }
    }

    for (k, cell) in corridor.cells.iter().enumerate() {
        let s = durations[k];
        // Every position control point inside the cell.
        for (normal, b) in cell.polytope.rows() {
            for i in 0..np {
                let coeffs: Vec<(usize, f64)> = (0..3)
                    .filter(|&a| normal[a] != 0.0)
                    .map(|a| (var(k, a, i), normal[a]))
                    .collect();
                ie_rows.push((coeffs, b));
            }
        }
        // Per-axis derivative bounds.
        for a in 0..3 {
            for (d, scale, bound) in [(&d1, s, limits.v_max), (&d2, s * s, limits.a_max)] {
                for j in 0..d.nrows() {
                    ie_rows.push((row_of(d, j, var(k, a, 0), 1.0 / scale), bound));
                    ie_rows.push((row_of(d, j, var(k, a, 0), -1.0 / scale), bound));
                }
            }
        }
    }

    let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
        let mut m = DMatrix::<f64>::zeros(rows.len(), nv);
        let mut b = DVector::<f64>::zeros(rows.len());
        for (r, (coeffs, rhs)) in rows.iter().enumerate() {
            for &(c, v) in coeffs {
                m[(r, c)] += v;
            }
            b[r] = *rhs;
        }
        (m, b)
    };
    let (a_eq, b_eq) = dense(&eq_rows);
    let (a_ie, b_ie) = dense(&ie_rows);
    QpProblem {
        q_mat,
        q_vec: DVector::zeros(nv),
        a_eq,
        b_eq,
        a_ie,
        b_ie,
    }
}

/// Sparse row `factor · d[row, :]` placed at column offset `offset`.
fn row_of(d: &DMatrix<f64>, row: usize, offset: usize, factor: f64) -> Vec<(usize, f64)> {
    (0..d.ncols())
        .filter(|&c| d[(row, c)] != 0.0)
        .map(|c| (offset + c, factor * d[(row, c)]))
        .collect()
}

/// Minimum-jerk rest-to-rest trajectory with one segment per corridor cell,
/// starting at time `t0`. Infeasible solves are retried with all durations
/// stretched by [`RETRY_STRETCH`], up to [`MAX_RETRIES`] times.
pub fn generate_quad_trajectory(
    corridor: &Corridor,
    p_start: &Vec3,
    p_goal: &Vec3,
    limits: &QuadLimits,
    t0: f64,
) -> Result<QuadPlan, QuadTrajectoryError> {
    limits.validate()?;
    if corridor.cells.is_empty() || corridor.check_overlaps().is_err() {
        return Err(QuadTrajectoryError::InvalidCorridor);
    }
    if corridor.cells[0].polytope.max_violation(p_start) > ENDPOINT_TOL {
        return Err(QuadTrajectoryError::EndpointOutsideCell("start"));
    }
    if corridor.cells[corridor.cells.len() - 1]
        .polytope
        .max_violation(p_goal)
        > ENDPOINT_TOL
    {
        return Err(QuadTrajectoryError::EndpointOutsideCell("goal"));
    }

    let mut durations = corridor.durations();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let problem = build_quad_qp(corridor, &durations, p_start, p_goal, limits);
        match solve_qp(&problem) {
            Ok(sol) => {
                debug!(
                    "base trajectory solved on attempt {attempts} with {} iterations",
                    sol.iterations
                );
                let trajectory = assemble(&sol.x, &durations, p_start, p_goal, t0)?;
                return Ok(QuadPlan {
                    trajectory,
                    durations,
                    attempts,
                });
            }
            Err(e) => {
                if attempts > MAX_RETRIES {
                    return Err(QuadTrajectoryError::QpInfeasible { attempts, last: e });
                }
                warn!("base trajectory attempt {attempts} failed ({e}); stretching durations");
                for d in &mut durations {
                    *d *= RETRY_STRETCH;
                }
            }
        }
    }
}

fn assemble(
    x: &DVector<f64>,
    durations: &[f64],
    p_start: &Vec3,
    p_goal: &Vec3,
    t0: f64,
) -> Result<PiecewiseBezier, BezierError> {
    let np = QUAD_DEGREE + 1;
    let segs = durations.len();
    let mut out = Vec::with_capacity(segs);
    let mut t = t0;
    let mut prev_end: Option<Vec3> = None;
    for (k, &s) in durations.iter().enumerate() {
        let mut cps: Vec<Vec3> = (0..np)
            .map(|i| Vec3::new(x[var(k, 0, i)], x[var(k, 1, i)], x[var(k, 2, i)]))
            .collect();
        // Pinned points are snapped to their exact values.
        if k == 0 {
            cps[0] = *p_start;
        }
        if k == segs - 1 {
            cps[np - 1] = *p_goal;
        }
        if let Some(p) = prev_end {
            cps[0] = p;
        }
        prev_end = Some(cps[np - 1]);
        let t1 = if k == segs - 1 {
            t0 + durations.iter().sum::<f64>()
        } else {
            t + s
        };
        out.push(BezierSegment::new(cps, t, t1)?);
        t = t1;
    }
    PiecewiseBezier::new(out)
}

/// Constant segment holding `p` over `[t0, t0 + duration]`.
pub fn hold_segment(p: &Vec3, t0: f64, duration: f64) -> Result<BezierSegment, BezierError> {
    BezierSegment::constant(*p, QUAD_DEGREE, t0, t0 + duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{CellKind, CorridorCell};
    use crate::geometry::{Aabb, HalfspacePolytope};
    use approx::assert_relative_eq;

    fn cell(min: Vec3, max: Vec3, d: f64) -> CorridorCell {
        let b = Aabb::new(min, max);
        CorridorCell {
            kind: CellKind::Moving,
            polytope: HalfspacePolytope::from_aabb(&b),
            bounds: b,
            duration_s: d,
        }
    }

    #[test]
    fn single_cell_line_is_symmetric() {
        let c = Corridor {
            cells: vec![cell(
                Vec3::new(-0.5, -0.5, -0.5),
                Vec3::new(2.5, 0.5, 0.5),
                10.0,
            )],
            overlaps: vec![],
        };
        let s = Vec3::zeros();
        let g = Vec3::new(2.0, 0.0, 0.0);
        let plan = generate_quad_trajectory(&c, &s, &g, &QuadLimits::default(), 0.0).unwrap();
        let tr = &plan.trajectory;
        assert_eq!(plan.attempts, 1);
        assert!((tr.position(0.0).unwrap() - s).norm() < 1e-9);
        assert!((tr.position(10.0).unwrap() - g).norm() < 1e-9);
        for k in 0..=100 {
            let t = 10.0 * k as f64 / 100.0;
            let p = tr.position(t).unwrap();
            let q = tr.position(10.0 - t).unwrap();
            assert_relative_eq!(p.x + q.x, 2.0, epsilon = 1e-6);
            assert!(p.y.abs() < 1e-6 && p.z.abs() < 1e-6);
        }
        let end = tr.eval(10.0).unwrap();
        assert!(end.velocity.norm() < 1e-6 && end.acceleration.norm() < 1e-6);
    }

    #[test]
    fn l_shaped_corridor_respects_cells_and_limits() {
        let c = Corridor {
            cells: vec![
                cell(Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.6, 0.6), 6.0),
                cell(Vec3::new(2.4, 0.0, 0.0), Vec3::new(3.0, 3.0, 0.6), 6.0),
            ],
            overlaps: vec![Vec3::new(2.7, 0.3, 0.3)],
        };
        let s = Vec3::new(0.3, 0.3, 0.3);
        let g = Vec3::new(2.7, 2.7, 0.3);
        let lim = QuadLimits::default();
        let plan = generate_quad_trajectory(&c, &s, &g, &lim, 1.0).unwrap();
        let tr = &plan.trajectory;
        assert!(tr.continuity_error() < 1e-6);
        let t_end = tr.t_end();
        let steps = ((t_end - 1.0) * 1000.0) as usize;
        for k in 0..=steps {
            let t = 1.0 + (t_end - 1.0) * k as f64 / steps as f64;
            let st = tr.eval(t).unwrap();
            let i = tr.segment_index(t).unwrap();
            assert!(c.cells[i].polytope.max_violation(&st.position) < 1e-6);
            assert!(st.velocity.amax() <= lim.v_max + 1e-6);
            assert!(st.acceleration.amax() <= lim.a_max + 1e-6);
        }
    }

    #[test]
    fn tight_time_is_stretched() {
        let c = Corridor {
            cells: vec![cell(
                Vec3::new(-0.5, -0.5, -0.5),
                Vec3::new(3.5, 0.5, 0.5),
                9.0,
            )],
            overlaps: vec![],
        };
        let plan = generate_quad_trajectory(
            &c,
            &Vec3::zeros(),
            &Vec3::new(3.0, 0.0, 0.0),
            &QuadLimits::default(),
            0.0,
        )
        .unwrap();
        assert!(plan.attempts > 1);
        assert_relative_eq!(
            plan.durations[0],
            9.0 * RETRY_STRETCH.powi(plan.attempts as i32 - 1)
        );
    }

    #[test]
    fn hopeless_time_fails_after_retries() {
        let c = Corridor {
            cells: vec![cell(
                Vec3::new(-0.5, -0.5, -0.5),
                Vec3::new(30.5, 0.5, 0.5),
                1.0,
            )],
            overlaps: vec![],
        };
        let r = generate_quad_trajectory(
            &c,
            &Vec3::zeros(),
            &Vec3::new(30.0, 0.0, 0.0),
            &QuadLimits::default(),
            0.0,
        );
        assert!(matches!(
            r,
            Err(QuadTrajectoryError::QpInfeasible { attempts, .. }) if attempts == MAX_RETRIES + 1
        ));
    }

    #[test]
    fn endpoints_outside_cells_are_rejected() {
        let c = Corridor {
            cells: vec![cell(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 2.0)],
            overlaps: vec![],
        };
        let r = generate_quad_trajectory(
            &c,
            &Vec3::new(-0.1, 0.5, 0.5),
            &Vec3::new(0.5, 0.5, 0.5),
            &QuadLimits::default(),
            0.0,
        );
        assert_eq!(r, Err(QuadTrajectoryError::EndpointOutsideCell("start")));
    }
}
