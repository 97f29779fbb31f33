//! Delta-arm kinematics and a conservative convex approximation of its workspace.
//!
//! The arm frame Σ_D has its origin at the center of the fixed base plate and
//! z pointing toward the end-effector. Arm `i` lies in the vertical plane at
//! azimuth `(i − 1)π/3` measured so that its elbow sits at
//! `[−ρ cos α_i, ρ sin α_i, l_U sin q_i]` with `ρ = r_F − r_M + l_U cos q_i`.

use crate::geometry::{convex_hull_facets, HalfspacePolytope, RotMat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Inward shrink applied to the sampled hull, in meters.
pub const WORKSPACE_MARGIN: f64 = 0.01;

/// Extra clearance of every carving cut beyond the unreachable sample, in meters.
const CARVE_CLEARANCE: f64 = 0.005;

/// Candidate points drawn per carving round.
const CARVE_POOL: usize = 20_000;

/// Fresh verification batches that must come back clean before carving stops.
const CARVE_CLEAN_ROUNDS: usize = 2;

/// Hard cap on carving cuts.
const CARVE_MAX_CUTS: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeltaError {
    #[error("the three lower-arm spheres do not intersect")]
    NoIntersection,
    #[error("position is outside the reachable set of arm {arm}")]
    Unreachable { arm: usize },
    #[error("workspace samples are degenerate")]
    DegenerateHull,
    #[error("invalid arm parameters: {0}")]
    InvalidParams(String),
}

/// Arm geometry, all lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    #[serde(rename = "l_U_m")]
    pub l_u: f64,
    #[serde(rename = "l_L_m")]
    pub l_l: f64,
    #[serde(rename = "r_F_m")]
    pub r_f: f64,
    #[serde(rename = "r_M_m")]
    pub r_m: f64,
    #[serde(rename = "l_g_m")]
    pub l_g: f64,
}

impl Default for DeltaParams {
    fn default() -> Self {
        Self {
            l_u: 0.30,
            l_l: 0.70,
            r_f: 0.06,
            r_m: 0.03,
            l_g: 0.10,
        }
    }
}

impl DeltaParams {
    pub fn validate(&self) -> Result<(), DeltaError> {
        let all = [self.l_u, self.l_l, self.r_f, self.r_m, self.l_g];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DeltaError::InvalidParams(
                "all lengths must be strictly positive".into(),
            ));
        }
        if self.l_l <= (self.r_f - self.r_m).abs() {
            return Err(DeltaError::InvalidParams(
                "lower arm must exceed |r_F - r_M|".into(),
            ));
        }
        Ok(())
    }

    fn gripper(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.l_g)
    }
}

/// Shoulder angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAngles(pub [f64; 3]);

/// Symmetric joint range applied to all three shoulders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    #[serde(rename = "q_min_rad")]
    pub lo: f64,
    #[serde(rename = "q_max_rad")]
    pub hi: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self { lo: -0.4, hi: 1.1 }
    }
}

impl JointLimits {
    pub fn contains(&self, q: f64, tol: f64) -> bool {
        q >= self.lo - tol && q <= self.hi + tol
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Pose of the arm base in the quadcopter body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountTransform {
    pub r_d_b: RotMat3,
    pub p_c_b: Vec3,
}

impl Default for MountTransform {
    /// Arm mounted upside down on top of the body, reaching upward.
    fn default() -> Self {
        Self {
            r_d_b: crate::geometry::roll_rotation(PI),
            p_c_b: Vec3::new(0.0, 0.0, 0.16),
        }
    }
}

/// Unit vectors spanning the plane of arm `i` (1-based): radial `u` and
/// tangential `w`.
fn arm_axes(i: usize) -> (Vec3, Vec3) {
    let alpha = (i as f64 - 1.0) * PI / 3.0;
    let (s, c) = alpha.sin_cos();
    (Vec3::new(-c, s, 0.0), Vec3::new(s, c, 0.0))
}

/// Elbow position `h_i` of arm `i` (1, 2 or 3) at shoulder angle `q_i`.
pub fn elbow_point(params: &DeltaParams, q_i: f64, i: usize) -> Vec3 {
    assert!((1..=3).contains(&i), "arm index must be 1, 2 or 3");
    let alpha = (i as f64 - 1.0) * PI / 3.0;
    let rho = params.r_f - params.r_m + params.l_u * q_i.cos();
    Vec3::new(
        -rho * alpha.cos(),
        rho * alpha.sin(),
        params.l_u * q_i.sin(),
    )
}

/// Residual `| ‖p + l_G − h_i‖ − l_L |` of the closure equation for each arm.
pub fn closure_residuals(params: &DeltaParams, q: &JointAngles, p: &Vec3) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, r) in out.iter_mut().enumerate() {
        let h = elbow_point(params, q.0[k], k + 1);
        *r = ((p + params.gripper() - h).norm() - params.l_l).abs();
    }
    out
}

/// End-effector position in Σ_D; picks the intersection with larger z.
pub fn forward_kinematics(params: &DeltaParams, q: &JointAngles) -> Result<Vec3, DeltaError> {
    let c0 = elbow_point(params, q.0[0], 1);
    let c1 = elbow_point(params, q.0[1], 2);
    let c2 = elbow_point(params, q.0[2], 3);
    let r = params.l_l;

    let d01 = c1 - c0;
    let d = d01.norm();
    if d < 1e-12 {
        return Err(DeltaError::NoIntersection);
    }
    let ex = d01 / d;
    let d02 = c2 - c0;
    let i = ex.dot(&d02);
    let ey_raw = d02 - ex * i;
    let j = ey_raw.norm();
    if j < 1e-12 {
        return Err(DeltaError::NoIntersection);
    }
    let ey = ey_raw / j;
    let ez = ex.cross(&ey);

    // Equal radii simplify the classic trilateration formulas.
    let x = 0.5 * d;
    let y = (i * i + j * j - 2.0 * i * x) / (2.0 * j);
    let zz = r * r - x * x - y * y;
    if zz < -1e-12 {
        return Err(DeltaError::NoIntersection);
    }
    let z = zz.max(0.0).sqrt();
    let base = c0 + ex * x + ey * y;
    let a = base + ez * z;
    let b = base - ez * z;
    let p = if a.z >= b.z { a } else { b };
    Ok(p - params.gripper())
}

/// Both shoulder-angle roots for arm `i`, elbow-out (smaller) first, wrapped
/// to (−π, π].
fn arm_roots(params: &DeltaParams, p: &Vec3, i: usize) -> Option<[f64; 2]> {
    let pp = p + params.gripper();
    let (u, w) = arm_axes(i);
    let a = pp.dot(&u) - (params.r_f - params.r_m);
    let b = pp.dot(&w);
    let c = pp.z;
    let k = a * a + b * b + c * c + params.l_u * params.l_u - params.l_l * params.l_l;
    let rr = a.hypot(c);
    if rr < 1e-15 {
        return None;
    }
    let ratio = k / (2.0 * params.l_u * rr);
    if !(-1.0..=1.0).contains(&ratio) {
        return None;
    }
    let phi = c.atan2(a);
    let delta = ratio.acos();
    Some([wrap_angle(phi - delta), wrap_angle(phi + delta)])
}

fn wrap_angle(q: f64) -> f64 {
    let mut r = (q + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Elbow-out inverse kinematics.
pub fn inverse_kinematics(params: &DeltaParams, p_e_d: &Vec3) -> Result<JointAngles, DeltaError> {
    let mut q = [0.0; 3];
    for (k, qk) in q.iter_mut().enumerate() {
        let roots =
            arm_roots(params, p_e_d, k + 1).ok_or(DeltaError::Unreachable { arm: k + 1 })?;
        *qk = roots[0];
    }
    Ok(JointAngles(q))
}

/// Inverse kinematics restricted to `limits`: per arm the elbow-out root is
/// preferred, the other root is used when only it lies within the limits.
pub fn inverse_kinematics_within(
    params: &DeltaParams,
    p_e_d: &Vec3,
    limits: &JointLimits,
) -> Result<JointAngles, DeltaError> {
    let mut q = [0.0; 3];
    for (k, qk) in q.iter_mut().enumerate() {
        let roots =
            arm_roots(params, p_e_d, k + 1).ok_or(DeltaError::Unreachable { arm: k + 1 })?;
        *qk = roots
            .into_iter()
            .find(|&r| limits.contains(r, 1e-12))
            .ok_or(DeltaError::Unreachable { arm: k + 1 })?;
    }
    Ok(JointAngles(q))
}

/// `true` when the arm can place the end-effector at `p` within joint limits.
pub fn is_reachable(params: &DeltaParams, p: &Vec3, limits: &JointLimits) -> bool {
    inverse_kinematics_within(params, p, limits).is_ok()
}

/// End-effector position in the body frame.
pub fn ee_in_body(mount: &MountTransform, p_e_d: &Vec3) -> Vec3 {
    mount.r_d_b * p_e_d + mount.p_c_b
}

/// Forward-kinematics samples on a uniform joint grid with at least
/// `n_samples` nodes.
pub fn workspace_samples(
    params: &DeltaParams,
    limits: &JointLimits,
    n_samples: usize,
) -> Vec<Vec3> {
    let per_axis = ((n_samples as f64).cbrt().ceil() as usize).max(2);
    let qs: Vec<f64> = (0..per_axis)
        .map(|k| limits.lo + (limits.hi - limits.lo) * k as f64 / (per_axis - 1) as f64)
        .collect();
    let mut out = Vec::with_capacity(per_axis.pow(3));
    for &q1 in &qs {
        for &q2 in &qs {
            for &q3 in &qs {
                if let Ok(p) = forward_kinematics(params, &JointAngles([q1, q2, q3])) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Convex hull of the joint-grid samples shrunk by [`WORKSPACE_MARGIN`].
pub fn sampled_hull(
    params: &DeltaParams,
    limits: &JointLimits,
    n_samples: usize,
) -> Result<HalfspacePolytope, DeltaError> {
    params.validate()?;
    let samples = workspace_samples(params, limits, n_samples);
    let planes = convex_hull_facets(&samples).map_err(|_| DeltaError::DegenerateHull)?;
    let (normals, offsets): (Vec<Vec3>, Vec<f64>) = planes.into_iter().unzip();
    Ok(HalfspacePolytope::new(normals, offsets).shrunk(WORKSPACE_MARGIN))
}

/// Conservative convex workspace in Σ_D.
///
/// The joint-grid hull is not itself reachable everywhere (the true workspace
/// is not convex), so random points of the hull are checked with inverse
/// kinematics and every unreachable one is cut away with a plane facing away
/// from the mid-range configuration. Carving stops once fresh random batches
/// come back free of unreachable points.
pub fn approximate_workspace(
    params: &DeltaParams,
    limits: &JointLimits,
    n_samples: usize,
    seed: u64,
) -> Result<HalfspacePolytope, DeltaError> {
    if n_samples < 1000 {
        return Err(DeltaError::InvalidParams(
            "at least 1000 samples required".into(),
        ));
    }
    let hull = sampled_hull(params, limits, n_samples)?;
    let center = forward_kinematics(params, &JointAngles([limits.mid(); 3]))?;
    if hull.max_violation(&center) > 0.0 {
        return Err(DeltaError::DegenerateHull);
    }
    let samples = workspace_samples(params, limits, n_samples);
    let (mut lo, mut hi) = (samples[0], samples[0]);
    for s in &samples {
        lo = lo.inf(s);
        hi = hi.sup(s);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals: Vec<Vec3> = hull.normals().to_vec();
    let mut offsets: Vec<f64> = hull.offsets().to_vec();
    let mut clean_rounds = 0;
    let mut cuts = 0;
    while clean_rounds < CARVE_CLEAN_ROUNDS {
        // Unreachable points of a fresh batch that survive all cuts so far.
        let mut bad: Vec<Vec3> = (0..CARVE_POOL)
            .map(|_| Vec3::from_fn(|k, _| rng.gen_range(lo[k]..=hi[k])))
            .filter(|p| {
                normals.iter().zip(&offsets).all(|(n, b)| n.dot(p) <= *b)
                    && !is_reachable(params, p, limits)
            })
            .collect();
        if bad.is_empty() {
            clean_rounds += 1;
            continue;
        }
        clean_rounds = 0;
        while !bad.is_empty() {
            if cuts >= CARVE_MAX_CUTS {
                return Err(DeltaError::DegenerateHull);
            }
            let (idx, _) = bad
                .iter()
                .enumerate()
                .map(|(k, p)| (k, (p - center).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty");
            let u = bad[idx];
            let n = (u - center).normalize();
            let b = n.dot(&u) - CARVE_CLEARANCE;
            normals.push(n);
            offsets.push(b);
            cuts += 1;
            bad.retain(|p| n.dot(p) <= b);
        }
    }
    let poly = HalfspacePolytope::new(normals, offsets);
    if poly.max_violation(&center) > 0.0 {
        return Err(DeltaError::DegenerateHull);
    }
    Ok(poly)
}
