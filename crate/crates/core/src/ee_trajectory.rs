//! End-effector trajectory over a manipulation window: boundary states from
//! the base trajectory through differential flatness, the constrained jerk QP,
//! and the iterative obstacle-mirror loop.

use crate::bezier::{
    bernstein_row, derivative_matrix, fit_bezier, jerk_hessian, BezierError, BezierSegment,
    PiecewiseBezier,
};
use crate::collision::{
    local_map_box, sweep_collisions, update_weights, ArmShape, CollisionInterval, Obstacle,
    ObstacleMirrorSet, DEFAULT_SWEEP_DT, FINE_SWEEP_DT,
};
use crate::feasibility::RevisedWorkspace;
use crate::geometry::{yaw_rotation, RotMat3, Vec3};
use crate::qp::{solve_qp, QpError, QpProblem};
use crate::GRAVITY;
use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Degree of the end-effector curve and of the base fit over the window.
pub const EE_DEGREE: usize = 7;
/// Default stencil step for the boundary-state differences, seconds.
pub const DEFAULT_DELTA_I: f64 = 1e-3;
/// Default iteration cap of the obstacle-mirror loop.
pub const DEFAULT_MAX_ITERS: usize = 50;
/// Default widening of the geometric rows, meters. Absorbs the attitude
/// rotation of the arm's rest offset in the window's start state.
pub const DEFAULT_GEOMETRIC_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EeError {
    #[error("manipulation window would start before t = 0 (t_G = {t_g}, window = {window})")]
    NegativeWindow { t_g: f64, window: f64 },
    #[error("attitude is singular: {0}")]
    Singular(&'static str),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error("end-effector QP failed: {0}")]
    Qp(#[from] QpError),
    #[error("no collision-free solution after {0} iterations")]
    NoConvergence(usize),
}

/// Per-axis dynamic bounds of the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeLimits {
    #[serde(rename = "v_E_max_mps")]
    pub v_max: f64,
    #[serde(rename = "a_E_max_mps2")]
    pub a_max: f64,
}

impl Default for EeLimits {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            a_max: 2.0,
        }
    }
}

impl EeLimits {
    pub fn validate(&self) -> Result<(), EeError> {
        if self.v_max > 0.0 && self.a_max > 0.0 && self.v_max.is_finite() && self.a_max.is_finite()
        {
            Ok(())
        } else {
            Err(EeError::InvalidLimits(format!(
                "v_E_max = {}, a_E_max = {} must be positive",
                self.v_max, self.a_max
            )))
        }
    }

    /// Duration of the manipulation window, `2 v / a`.
    pub fn window(&self) -> f64 {
        2.0 * self.v_max / self.a_max
    }
}

/// Object pose and grasp-approach parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspSpec {
    #[serde(rename = "p_O_m")]
    pub p_o: Vec3,
    #[serde(rename = "psi_O_rad")]
    pub psi_o: f64,
    #[serde(rename = "t_grip_s")]
    pub t_grip: f64,
    #[serde(rename = "t_G_s")]
    pub t_g: f64,
    #[serde(rename = "cone_angle_rad")]
    pub cone_angle: f64,
    pub cone_time_fraction: f64,
}

/// Position, velocity and acceleration of the end-effector at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeInitialState {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

impl EeInitialState {
    pub fn at_rest(p: Vec3) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            a: Vec3::zeros(),
        }
    }
}

/// `t_B = t_G − 2 v / a`.
pub fn manipulation_start_time(t_g: f64, limits: &EeLimits) -> Result<f64, EeError> {
    limits.validate()?;
    let window = limits.window();
    if t_g <= window {
        return Err(EeError::NegativeWindow { t_g, window });
    }
    Ok(t_g - window)
}

/// Start of a manipulation window stretched by `scale >= 1`:
/// `t_G − scale · 2 v / a`.
pub fn scaled_start_time(t_g: f64, limits: &EeLimits, scale: f64) -> Result<f64, EeError> {
    limits.validate()?;
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(EeError::InvalidLimits(format!(
            "window scale {scale} must be >= 1"
        )));
    }
    let window = scale * limits.window();
    if t_g <= window {
        return Err(EeError::NegativeWindow { t_g, window });
    }
    Ok(t_g - window)
}

/// Body attitude with third axis along `accel + g e3` and heading `psi_o`.
pub fn flat_attitude(accel: &Vec3, psi_o: f64, g: f64) -> Result<RotMat3, EeError> {
    let thrust = accel + Vec3::new(0.0, 0.0, g);
    let norm = thrust.norm();
    if norm <= 1e-6 {
        return Err(EeError::Singular("thrust direction vanishes"));
    }
    let r3 = thrust / norm;
    let r_g = Vec3::new(psi_o.cos(), psi_o.sin(), 0.0);
    let c = r3.cross(&r_g);
    let cn = c.norm();
    if cn <= 1e-9 {
        return Err(EeError::Singular("thrust axis parallel to heading"));
    }
    let r2 = c / cn;
    let r1 = r2.cross(&r3);
    Ok(RotMat3::from_columns(&[r1, r2, r3]))
}

/// End-effector rest position attached to the base at time `t`.
fn attached_position(
    quad: &PiecewiseBezier,
    t: f64,
    p_top: &Vec3,
    psi_o: f64,
) -> Result<Vec3, EeError> {
    let st = quad.eval(t)?;
    let r = flat_attitude(&st.acceleration, psi_o, GRAVITY)?;
    Ok(st.position + r * p_top)
}

/// Boundary state of the end-effector resting at `p_top` in the body frame at
/// time `t_b`: position from the flat attitude, velocity by a backward
/// difference and acceleration by a central second difference with step `delta_i`.
pub fn initial_state(
    quad: &PiecewiseBezier,
    t_b: f64,
    p_top: &Vec3,
    psi_o: f64,
    delta_i: f64,
) -> Result<EeInitialState, EeError> {
    let pm = attached_position(quad, t_b - delta_i, p_top, psi_o)?;
    let p0 = attached_position(quad, t_b, p_top, psi_o)?;
    let pp = attached_position(quad, t_b + delta_i, p_top, psi_o)?;
    Ok(EeInitialState {
        p: p0,
        v: (p0 - pm) / delta_i,
        a: (pp - 2.0 * p0 + pm) / (delta_i * delta_i),
    })
}

/// One end-effector QP window: boundary states, object pose and cone timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeWindow {
    pub t0: f64,
    pub t1: f64,
    pub start: EeInitialState,
    pub end: EeInitialState,
    #[serde(rename = "p_O_m")]
    pub p_o: Vec3,
    #[serde(rename = "psi_O_rad")]
    pub psi_o: f64,
    /// Normalized time at which the cone rows apply.
    pub tau_c: f64,
    #[serde(rename = "cone_angle_rad")]
    pub cone_angle: f64,
}

impl EeWindow {
    /// Approach: from the attached state at `t_B` to rest at the object at `t_G`.
    pub fn approach(grasp: &GraspSpec, t_b: f64, start: EeInitialState) -> Self {
        Self {
            t0: t_b,
            t1: grasp.t_g,
            start,
            end: EeInitialState::at_rest(grasp.p_o),
            p_o: grasp.p_o,
            psi_o: grasp.psi_o,
            tau_c: grasp.cone_time_fraction,
            cone_angle: grasp.cone_angle,
        }
    }

    /// Retraction: from rest at the object at `t0` to the attached state at `t1`.
    pub fn retraction(grasp: &GraspSpec, t0: f64, t1: f64, end: EeInitialState) -> Self {
        Self {
            t0,
            t1,
            start: EeInitialState::at_rest(grasp.p_o),
            end,
            p_o: grasp.p_o,
            psi_o: grasp.psi_o,
            tau_c: 1.0 - grasp.cone_time_fraction,
            cone_angle: grasp.cone_angle,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Row counts of the end-effector QP for degree `n`.
pub fn ee_constraint_counts(n: usize) -> (usize, usize) {
    let eq = 18;
    let velocity = 2 * 3 * n;
    let acceleration = 2 * 3 * (n - 1);
    let geometric = 6 * (n + 1);
    let cone = 4;
    (eq, velocity + acceleration + geometric + cone)
}

/// Index of control point `i` of axis `a` (all x, then y, then z).
fn var(a: usize, i: usize) -> usize {
    a * (EE_DEGREE + 1) + i
}

/// Assembles the window QP over the end-effector control points.
///
/// Objective: jerk integral plus `Σ λ_k Σ_i ‖c_i − p_M,k‖²`. Equalities: start
/// and end position, velocity and acceleration. Inequalities: per-axis
/// velocity and acceleration bounds on derivative control points;
/// `w_min − slack <= R_ψᵀ (c_E,i − c_B,i) <= w_max + slack` for every control
/// point; and four cone rows at `tau_c`.
pub fn build_ee_qp(
    window: &EeWindow,
    quad_fit_cps: &[Vec3],
    w_r: &RevisedWorkspace,
    limits: &EeLimits,
    mirrors: &ObstacleMirrorSet,
    geometric_slack: f64,
) -> Result<QpProblem, EeError> {
    let n = EE_DEGREE;
    let np = n + 1;
    if quad_fit_cps.len() != np {
        return Err(EeError::Qp(QpError::DimensionMismatch(format!(
            "expected {np} base control points, got {}",
            quad_fit_cps.len()
        ))));
    }
    let nv = 3 * np;
    let s = window.duration();
    let d1 = derivative_matrix(n, 1);
    let d2 = derivative_matrix(n, 2);

    let (lambda_sum, weighted) = mirrors.weighted_sums();
    let h = jerk_hessian(n, s);
    let mut q_mat = DMatrix::<f64>::zeros(nv, nv);
    let mut q_vec = DVector::<f64>::zeros(nv);
    for a in 0..3 {
        let o = var(a, 0);
        let mut block = h.clone();
        for i in 0..np {
            block[(i, i)] += lambda_sum;
        }
        q_mat.view_mut((o, o), (np, np)).copy_from(&(block * 2.0));
        for i in 0..np {
            q_vec[var(a, i)] = -2.0 * weighted[a];
        }
    }

    let (n_eq, n_ie) = ee_constraint_counts(n);
    let mut a_eq = DMatrix::<f64>::zeros(n_eq, nv);
    let mut b_eq = DVector::<f64>::zeros(n_eq);
    let mut r = 0;
    for (state, first) in [(&window.start, true), (&window.end, false)] {
        for a in 0..3 {
            let i_pos = if first { 0 } else { n };
            a_eq[(r, var(a, i_pos))] = 1.0;
            b_eq[r] = state.p[a];
            r += 1;
            let j1 = if first { 0 } else { n - 1 };
            for c in 0..np {
                a_eq[(r, var(a, c))] = d1[(j1, c)] / s;
            }
            b_eq[r] = state.v[a];
            r += 1;
            let j2 = if first { 0 } else { n - 2 };
            for c in 0..np {
                a_eq[(r, var(a, c))] = d2[(j2, c)] / (s * s);
            }
            b_eq[r] = state.a[a];
            r += 1;
        }
    }
    debug_assert_eq!(r, n_eq);

    let mut a_ie = DMatrix::<f64>::zeros(n_ie, nv);
    let mut b_ie = DVector::<f64>::zeros(n_ie);
    let mut r = 0;
    for a in 0..3 {
        for (d, scale, bound) in [(&d1, s, limits.v_max), (&d2, s * s, limits.a_max)] {
            for j in 0..d.nrows() {
                for sign in [1.0, -1.0] {
                    for c in 0..np {
                        a_ie[(r, var(a, c))] = sign * d[(j, c)] / scale;
                    }
                    b_ie[r] = bound;
                    r += 1;
                }
            }
        }
    }
    let rot = yaw_rotation(window.psi_o);
    for (i, c_b) in quad_fit_cps.iter().enumerate() {
        for j in 0..3 {
            let axis = rot.column(j).into_owned();
            let base = axis.dot(c_b);
            for a in 0..3 {
                a_ie[(r, var(a, i))] = axis[a];
                a_ie[(r + 1, var(a, i))] = -axis[a];
            }
            b_ie[r] = w_r.w_max[j] + geometric_slack + base;
            b_ie[r + 1] = -w_r.w_min[j] + geometric_slack - base;
            r += 2;
        }
    }
    let basis = bernstein_row(n, window.tau_c);
    let tan = window.cone_angle.tan();
    let (po, zo) = (window.p_o, window.p_o.z);
    for lateral in 0..2 {
        let target = po[lateral];
        for i in 0..np {
            // (c_μ + c_z tanγ) · b <= μ_O + z_O tanγ
            a_ie[(r, var(lateral, i))] = basis[i];
            a_ie[(r, var(2, i))] = tan * basis[i];
            // −(c_μ − c_z tanγ) · b <= −(μ_O − z_O tanγ)
            a_ie[(r + 1, var(lateral, i))] = -basis[i];
            a_ie[(r + 1, var(2, i))] = tan * basis[i];
        }
        b_ie[r] = target + zo * tan;
        b_ie[r + 1] = -(target - zo * tan);
        r += 2;
    }
    debug_assert_eq!(r, n_ie);
    Ok(QpProblem {
        q_mat,
        q_vec,
        a_eq,
        b_eq,
        a_ie,
        b_ie,
    })
}

fn segment_from(x: &DVector<f64>, window: &EeWindow) -> Result<BezierSegment, BezierError> {
    let np = EE_DEGREE + 1;
    let mut cps: Vec<Vec3> = (0..np)
        .map(|i| Vec3::new(x[var(0, i)], x[var(1, i)], x[var(2, i)]))
        .collect();
    cps[0] = window.start.p;
    cps[np - 1] = window.end.p;
    BezierSegment::new(cps, window.t0, window.t1)
}

/// Control points of the degree-`EE_DEGREE` fit of the base over the window.
pub fn fit_base_over(quad: &PiecewiseBezier, t0: f64, t1: f64) -> Result<Vec<Vec3>, EeError> {
    let samples = (0..=EE_DEGREE)
        .map(|i| quad.position(t0 + (t1 - t0) * i as f64 / EE_DEGREE as f64))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fit_bezier(&samples, EE_DEGREE)?)
}

/// Obstacles and arm shape used by the collision loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEnv<'a> {
    pub obstacles: &'a [Obstacle],
    pub arm: ArmShape,
    /// Local-map padding, meters.
    pub l_s: f64,
    /// Weight step.
    pub alpha: f64,
}

/// Options of the iterative planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePlanOptions {
    pub max_iters: usize,
    pub avoidance: bool,
    pub geometric_slack: f64,
    pub sweep_dt: f64,
    pub fine_sweep_dt: f64,
}

impl Default for EePlanOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            avoidance: true,
            geometric_slack: DEFAULT_GEOMETRIC_SLACK,
            sweep_dt: DEFAULT_SWEEP_DT,
            fine_sweep_dt: FINE_SWEEP_DT,
        }
    }
}

/// One pass of the mirror loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub mirrors: ObstacleMirrorSet,
    pub intervals: Vec<CollisionInterval>,
}

/// Result of [`plan_ee_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct EePlan {
    pub segment: BezierSegment,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Collisions of the returned segment at the fine sweep (empty when
    /// avoidance is enabled).
    pub residual_collisions: Vec<CollisionInterval>,
    /// Control points of the base fit used by the geometric rows.
    pub base_fit: Vec<Vec3>,
}

/// Solves the window QP, sweeps the result for collisions, and while any are
/// found adds or strengthens obstacle mirrors and re-solves. With avoidance
/// disabled the first solution is returned with its collisions recorded.
pub fn plan_ee_trajectory(
    quad: &PiecewiseBezier,
    window: &EeWindow,
    w_r: &RevisedWorkspace,
    limits: &EeLimits,
    env: &CollisionEnv,
    options: &EePlanOptions,
) -> Result<EePlan, EeError> {
    limits.validate()?;
    let base_fit = fit_base_over(quad, window.t0, window.t1)?;
    let p_b0 = quad.position(window.t0)?;
    let local = local_map_box(&p_b0, &window.p_o, env.l_s);
    let mut mirrors = ObstacleMirrorSet::default();
    let mut trace = Vec::new();
    for iteration in 1..=options.max_iters.max(1) {
        let problem = build_ee_qp(
            window,
            &base_fit,
            w_r,
            limits,
            &mirrors,
            options.geometric_slack,
        )?;
        let sol = solve_qp(&problem)?;
        let segment = segment_from(&sol.x, window)?;
        let mut intervals = sweep_collisions(
            &segment,
            quad,
            &env.arm,
            env.obstacles,
            &local,
            options.sweep_dt,
        )
        .intervals;
        if intervals.is_empty() {
            // Guard against thin obstacles slipping between coarse samples.
            intervals = sweep_collisions(
                &segment,
                quad,
                &env.arm,
                env.obstacles,
                &local,
                options.fine_sweep_dt,
            )
            .intervals;
        }
        debug!(
            "ee iteration {iteration}: objective {:.6}, {} collision intervals",
            sol.objective,
            intervals.len()
        );
        trace.push(IterationRecord {
            iteration,
            objective: sol.objective,
            mirrors: mirrors.clone(),
            intervals: intervals.clone(),
        });
        if intervals.is_empty() || !options.avoidance {
            return Ok(EePlan {
                segment,
                iterations: iteration,
                trace,
                residual_collisions: intervals,
                base_fit,
            });
        }
        mirrors = update_weights(&mirrors, &intervals, env.obstacles, env.alpha);
    }
    Err(EeError::NoConvergence(options.max_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{shape_polyhedron, ShapeParams};
    use crate::delta::MountTransform;
    use crate::geometry::gjk_query;
    use crate::geometry::{aabb_vertices, Aabb};
    use crate::qp::kkt_residuals;
    use approx::assert_relative_eq;

    fn paper_box() -> RevisedWorkspace {
        RevisedWorkspace::new(Vec3::new(-0.06, -0.06, -0.60), Vec3::new(0.06, 0.06, -0.40)).unwrap()
    }

    fn hover(p: Vec3, t0: f64, t1: f64) -> PiecewiseBezier {
        PiecewiseBezier::new(vec![BezierSegment::constant(p, EE_DEGREE, t0, t1).unwrap()]).unwrap()
    }

    #[test]
    fn start_time_examples() {
        let l = EeLimits::default();
        assert_relative_eq!(
            manipulation_start_time(10.0, &l).unwrap(),
            9.5,
            epsilon = 1e-15
        );
        let unit = EeLimits {
            v_max: 0.7,
            a_max: 0.7,
        };
        assert_relative_eq!(
            manipulation_start_time(5.0, &unit).unwrap(),
            3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            manipulation_start_time(0.1, &l),
            Err(EeError::NegativeWindow { .. })
        ));
        assert_relative_eq!(
            scaled_start_time(10.0, &l, 3.0).unwrap(),
            8.5,
            epsilon = 1e-15
        );
        assert!(scaled_start_time(10.0, &l, 0.5).is_err());
    }

    #[test]
    fn flat_attitude_hover_and_random() {
        let r = flat_attitude(&Vec3::zeros(), 0.0, GRAVITY).unwrap();
        assert_relative_eq!(r, RotMat3::identity(), epsilon = 1e-15);
        let r = flat_attitude(&Vec3::zeros(), 0.8, GRAVITY).unwrap();
        assert_relative_eq!(r.column(2).into_owned(), Vec3::z(), epsilon = 1e-15);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let acc = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let psi = rng.gen_range(-3.0..3.0);
            let r = flat_attitude(&acc, psi, GRAVITY).unwrap();
            assert_relative_eq!(r.transpose() * r, RotMat3::identity(), epsilon = 1e-9);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
            let thrust = (acc + Vec3::new(0.0, 0.0, GRAVITY)).normalize();
            assert_relative_eq!(r.column(2).into_owned(), thrust, epsilon = 1e-12);
        }
        assert!(matches!(
            flat_attitude(&Vec3::new(0.0, 0.0, -GRAVITY), 0.0, GRAVITY),
            Err(EeError::Singular(_))
        ));
    }

    #[test]
    fn initial_state_of_hover_and_uniform_motion() {
        let p = Vec3::new(0.5, -1.0, -2.0);
        let top = Vec3::new(0.0, 0.0, -0.6);
        let st = initial_state(&hover(p, 0.0, 2.0), 1.0, &top, 0.0, 1e-3).unwrap();
        assert_relative_eq!(st.p, p + top, epsilon = 1e-12);
        assert!(st.v.norm() < 1e-9 && st.a.norm() < 1e-6);
        // Uniform motion: degree-7 parametrization of a straight line.
        let v = Vec3::new(0.3, -0.2, 0.1);
        let cps: Vec<Vec3> = (0..=7).map(|i| p + v * (2.0 * i as f64 / 7.0)).collect();
        let line = PiecewiseBezier::new(vec![BezierSegment::new(cps, 0.0, 2.0).unwrap()]).unwrap();
        let st = initial_state(&line, 1.0, &top, 0.0, 1e-3).unwrap();
        assert_relative_eq!(st.v, v, epsilon = 1e-9);
        assert!(st.a.norm() < 1e-6);
    }

    #[test]
    fn velocity_stencil_is_first_order() {
        // Accelerating base: the backward difference error halves with δ.
        let cps: Vec<Vec3> = (0..=7)
            .map(|i| {
                let u = i as f64 / 7.0;
                Vec3::new(u * u, 0.0, 0.0)
            })
            .collect();
        let quad = PiecewiseBezier::new(vec![BezierSegment::new(cps, 0.0, 2.0).unwrap()]).unwrap();
        let top = Vec3::new(0.0, 0.0, -0.6);
        let exact = {
            let h = 1e-6;
            let a = attached_position(&quad, 1.0 + h, &top, 0.0).unwrap();
            let b = attached_position(&quad, 1.0 - h, &top, 0.0).unwrap();
            (a - b) / (2.0 * h)
        };
        let e1 = (initial_state(&quad, 1.0, &top, 0.0, 1e-2).unwrap().v - exact).norm();
        let e2 = (initial_state(&quad, 1.0, &top, 0.0, 5e-3).unwrap().v - exact).norm();
        assert!(e1 > 0.0);
        let ratio = e1 / e2;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    fn hover_window(p_b: Vec3, p_o: Vec3) -> (PiecewiseBezier, EeWindow) {
        window_over(hover(p_b, 0.0, 12.0), p_o)
    }

    /// Base at rest until the window opens, then a rest-to-rest glide of
    /// `offset` that ends at `p_b` at grasp time, then at rest again.
    fn glide(p_b: Vec3, offset: Vec3) -> PiecewiseBezier {
        let from = p_b - offset;
        let mut cps = vec![from; 4];
        cps.extend(vec![p_b; 4]);
        PiecewiseBezier::new(vec![
            BezierSegment::constant(from, EE_DEGREE, 0.0, 8.5).unwrap(),
            BezierSegment::new(cps, 8.5, 10.0).unwrap(),
            BezierSegment::constant(p_b, EE_DEGREE, 10.0, 12.0).unwrap(),
        ])
        .unwrap()
    }

    fn window_over(quad: PiecewiseBezier, p_o: Vec3) -> (PiecewiseBezier, EeWindow) {
        let grasp = GraspSpec {
            p_o,
            psi_o: 0.0,
            t_grip: 1.0,
            t_g: 10.0,
            cone_angle: 15f64.to_radians(),
            cone_time_fraction: 0.8,
        };
        let t_b = scaled_start_time(grasp.t_g, &EeLimits::default(), 3.0).unwrap();
        let start =
            initial_state(&quad, t_b, &Vec3::new(0.0, 0.0, -0.6), 0.0, DEFAULT_DELTA_I).unwrap();
        (quad, EeWindow::approach(&grasp, t_b, start))
    }

    #[test]
    fn qp_shape_and_pure_jerk_objective() {
        let (quad, w) = hover_window(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.0, 0.0, -2.5));
        let fit = fit_base_over(&quad, w.t0, w.t1).unwrap();
        let p = build_ee_qp(
            &w,
            &fit,
            &paper_box(),
            &EeLimits::default(),
            &ObstacleMirrorSet::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(p.a_eq.nrows(), 18);
        assert_eq!(p.a_ie.nrows(), 18 * EE_DEGREE + 4);
        assert_eq!(ee_constraint_counts(EE_DEGREE), (18, 18 * EE_DEGREE + 4));
        assert!(p.q_vec.iter().all(|v| *v == 0.0));
        let h = jerk_hessian(EE_DEGREE, w.duration()) * 2.0;
        assert_relative_eq!(p.q_mat.view((8, 8), (8, 8)).into_owned(), h, epsilon = 1e-9);
        assert!(build_ee_qp(
            &w,
            &fit[..7],
            &paper_box(),
            &EeLimits::default(),
            &ObstacleMirrorSet::default(),
            0.0
        )
        .is_err());
    }

    #[test]
    fn vertical_reach_stays_planar() {
        let (quad, w) = hover_window(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.0, 0.0, -2.5));
        let fit = fit_base_over(&quad, w.t0, w.t1).unwrap();
        let p = build_ee_qp(
            &w,
            &fit,
            &paper_box(),
            &EeLimits::default(),
            &ObstacleMirrorSet::default(),
            0.0,
        )
        .unwrap();
        let sol = solve_qp(&p).unwrap();
        let r = kkt_residuals(&p, &sol.x, &sol.eq_multipliers, &sol.ie_multipliers);
        assert!(r.max() < 1e-6);
        for i in 0..8 {
            assert!(sol.x[var(0, i)].abs() < 1e-6);
            assert!(sol.x[var(1, i)].abs() < 1e-6);
        }
    }

    fn env(obstacles: &[Obstacle]) -> CollisionEnv<'_> {
        env_with_alpha(obstacles, 3.0)
    }

    fn env_with_alpha(obstacles: &[Obstacle], alpha: f64) -> CollisionEnv<'_> {
        CollisionEnv {
            obstacles,
            arm: ArmShape {
                psi: 0.0,
                mount: MountTransform::default(),
                shape: ShapeParams::default(),
            },
            l_s: 0.2,
            alpha,
        }
    }

    #[test]
    fn free_map_converges_in_one_iteration() {
        let (quad, w) = hover_window(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.02, 0.0, -2.5));
        let plan = plan_ee_trajectory(
            &quad,
            &w,
            &paper_box(),
            &EeLimits::default(),
            &env(&[]),
            &EePlanOptions::default(),
        )
        .unwrap();
        assert_eq!(plan.iterations, 1);
        let end = plan.segment.eval(w.t1).unwrap();
        assert!((end.position - w.p_o).norm() < 1e-6);
        assert!(end.velocity.norm() < 1e-6 && end.acceleration.norm() < 1e-6);
        let start = plan.segment.eval(w.t0).unwrap();
        assert!((start.position - w.start.p).norm() < 1e-6);
        assert!((start.velocity - w.start.v).norm() < 1e-6);
    }

    #[test]
    fn planted_obstacle_needs_mirrors() {
        let p_b = Vec3::new(0.0, 0.0, -2.0);
        let p_o = Vec3::new(0.05, 0.0, -2.5);
        let (quad, w) = window_over(glide(p_b, Vec3::new(0.08, 0.0, 0.0)), p_o);
        let free = plan_ee_trajectory(
            &quad,
            &w,
            &paper_box(),
            &EeLimits::default(),
            &env(&[]),
            &EePlanOptions::default(),
        )
        .unwrap();
        // Small cube just inside a gripper-side vertex of the arm hull at
        // mid-window, clear of the fixed start and end configurations.
        let arm = env(&[]).arm;
        let hull_at = |t: f64| {
            let pe = free.segment.position(t).unwrap();
            shape_polyhedron(&quad.position(t).unwrap(), &pe, 0.0, &arm.mount, &arm.shape)
        };
        let mid = hull_at(0.5 * (w.t0 + w.t1));
        let inward = (mid.hull().centroid() - mid.lower[2]).normalize();
        let c = mid.lower[2] + inward * 0.003;
        let cube = aabb_vertices(&Aabb::new(c - Vec3::repeat(0.002), c + Vec3::repeat(0.002)));
        assert!(!gjk_query(&hull_at(w.t0).hull(), &cube).intersects);
        assert!(!gjk_query(&hull_at(w.t1).hull(), &cube).intersects);
        let obs = vec![Obstacle { id: 0, hull: cube }];
        let disabled = EePlanOptions {
            avoidance: false,
            ..Default::default()
        };
        let plan = plan_ee_trajectory(
            &quad,
            &w,
            &paper_box(),
            &EeLimits::default(),
            &env(&obs),
            &disabled,
        )
        .unwrap();
        assert!(!plan.residual_collisions.is_empty());
        // Millimetre-scale intervals against the jerk cost of a 1.5 s window
        // need a far larger weight step than the default to converge.
        let plan = plan_ee_trajectory(
            &quad,
            &w,
            &paper_box(),
            &EeLimits::default(),
            &env_with_alpha(&obs, 3000.0),
            &EePlanOptions::default(),
        )
        .unwrap();
        assert!(plan.iterations >= 2);
        assert!(plan.iterations <= 10);
        for pair in plan.trace.windows(2) {
            let before = pair[0].mirrors.lambda_of(0).unwrap_or(0.0);
            assert!(pair[1].mirrors.lambda_of(0).unwrap() >= before);
        }
        assert!(plan.residual_collisions.is_empty());
        let local = local_map_box(&p_b, &p_o, 0.2);
        let fine = sweep_collisions(
            &plan.segment,
            &quad,
            &env(&obs).arm,
            &obs,
            &local,
            FINE_SWEEP_DT / 2.0,
        );
        assert!(fine.intervals.is_empty());
        // Re-solving with the new mirror set is optimal for its own objective.
        for pair in plan.trace.windows(2) {
            let prev = &pair[0];
            let next = &pair[1];
            let fit = fit_base_over(&quad, w.t0, w.t1).unwrap();
            let p_next = build_ee_qp(
                &w,
                &fit,
                &paper_box(),
                &EeLimits::default(),
                &next.mirrors,
                DEFAULT_GEOMETRIC_SLACK,
            )
            .unwrap();
            let p_prev = build_ee_qp(
                &w,
                &fit,
                &paper_box(),
                &EeLimits::default(),
                &prev.mirrors,
                DEFAULT_GEOMETRIC_SLACK,
            )
            .unwrap();
            let x_prev = solve_qp(&p_prev).unwrap().x;
            assert!(p_next.objective(&x_prev) > next.objective - 1e-9);
        }
    }
}
