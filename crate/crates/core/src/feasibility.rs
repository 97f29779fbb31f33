//! Geometric feasibility: workspaces tilted through the attainable roll/pitch
//! range, their intersection, and the inscribed box used as a linear
//! end-effector-to-base constraint.

use crate::delta::MountTransform;
use crate::geometry::{
    pitch_rotation, roll_rotation, yaw_rotation, Aabb, HalfspacePolytope, RotMat3, Vec3,
};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance of [`geometric_feasibility_ok`], meters.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

/// Default tilt half-range, radians (10 degrees).
pub const DEFAULT_TILT: f64 = 0.1745;

/// Containment tolerance for the corners of a revised workspace.
const CORNER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error("intersection of tilted workspaces has no interior")]
    EmptyIntersection,
    #[error("workspace box bounds are out of order")]
    InvalidBounds,
    #[error("workspace box corner violates the workspace by {violation:.3e} m")]
    NotContained { violation: f64 },
    #[error("invalid tilt bounds: {0}")]
    InvalidTilt(String),
}

/// Roll/pitch range of the base during manipulation, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltBounds {
    #[serde(rename = "theta_min_rad")]
    pub theta_min: f64,
    #[serde(rename = "theta_max_rad")]
    pub theta_max: f64,
    #[serde(rename = "phi_min_rad")]
    pub phi_min: f64,
    #[serde(rename = "phi_max_rad")]
    pub phi_max: f64,
}

impl Default for TiltBounds {
    fn default() -> Self {
        Self::symmetric(DEFAULT_TILT)
    }
}

impl TiltBounds {
    pub fn symmetric(a: f64) -> Self {
        Self {
            theta_min: -a,
            theta_max: a,
            phi_min: -a,
            phi_max: a,
        }
    }

    pub fn validate(&self) -> Result<(), FeasibilityError> {
        let lim = std::f64::consts::FRAC_PI_2;
        let ok = self.theta_min <= 0.0
            && self.theta_max >= 0.0
            && self.phi_min <= 0.0
            && self.phi_max >= 0.0
            && [self.theta_min, self.theta_max, self.phi_min, self.phi_max]
                .iter()
                .all(|v| v.abs() < lim);
        if ok {
            Ok(())
        } else {
            Err(FeasibilityError::InvalidTilt(
                "each range must bracket zero and stay below pi/2".into(),
            ))
        }
    }
}

/// Axis-aligned box of admissible end-effector offsets in the yaw-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisedWorkspace {
    #[serde(rename = "w_min_m")]
    pub w_min: Vec3,
    #[serde(rename = "w_max_m")]
    pub w_max: Vec3,
}

impl RevisedWorkspace {
    pub fn new(w_min: Vec3, w_max: Vec3) -> Result<Self, FeasibilityError> {
        if (0..3).any(|i| !(w_min[i] <= w_max[i]) || !w_min[i].is_finite() || !w_max[i].is_finite())
        {
            return Err(FeasibilityError::InvalidBounds);
        }
        Ok(Self { w_min, w_max })
    }

    /// Checks that all corners lie inside `w_i` (tolerance 1e-9 m).
    pub fn check_contained(&self, w_i: &HalfspacePolytope) -> Result<(), FeasibilityError> {
        let violation = self.corner_violation(w_i);
        if violation > CORNER_TOL {
            Err(FeasibilityError::NotContained { violation })
        } else {
            Ok(())
        }
    }

    /// Largest constraint violation over the eight corners.
    pub fn corner_violation(&self, w_i: &HalfspacePolytope) -> f64 {
        self.corners()
            .iter()
            .map(|c| w_i.max_violation(c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            for i in 0..3 {
                c[i] = if k >> i & 1 == 0 {
                    self.w_min[i]
                } else {
                    self.w_max[i]
                };
            }
        }
        out
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.w_min + self.w_max)
    }

    pub fn as_aabb(&self) -> Aabb {
        Aabb::new(self.w_min, self.w_max)
    }

    pub fn volume(&self) -> f64 {
        (self.w_max - self.w_min).product()
    }
}

/// Rotation for pitch `theta` about y followed by roll `phi` about x.
pub fn tilt_rotation(theta: f64, phi: f64) -> RotMat3 {
    pitch_rotation(theta) * roll_rotation(phi)
}

/// The arm workspace `w` (in the arm frame) expressed in the yaw-aligned base
/// frame when the base is tilted by pitch `theta` and roll `phi`.
pub fn tilted_workspace(
    w: &HalfspacePolytope,
    mount: &MountTransform,
    theta: f64,
    phi: f64,
) -> HalfspacePolytope {
    let m = tilt_rotation(theta, phi) * mount.r_d_b;
    let normals: Vec<Vec3> = w.normals().iter().map(|a| m * a).collect();
    let shift = mount.r_d_b.transpose() * mount.p_c_b;
    let offsets: Vec<f64> = w.rows().map(|(a, b)| b + a.dot(&shift)).collect();
    HalfspacePolytope::new(normals, offsets)
}

/// Intersection of the workspaces at the four tilt extremes.
pub fn workspace_intersection(
    w: &HalfspacePolytope,
    mount: &MountTransform,
    tilts: &TiltBounds,
) -> Result<HalfspacePolytope, FeasibilityError> {
    tilts.validate()?;
    let extremes = [
        (tilts.theta_min, 0.0),
        (tilts.theta_max, 0.0),
        (0.0, tilts.phi_min),
        (0.0, tilts.phi_max),
    ];
    let mut out: Option<HalfspacePolytope> = None;
    for (theta, phi) in extremes {
        let part = tilted_workspace(w, mount, theta, phi);
        out = Some(match out {
            None => part,
            Some(acc) => acc.intersect(&part),
        });
    }
    let out = out.expect("four extremes");
    match out.chebyshev_center() {
        Some((_, r)) if r > 0.0 => Ok(out),
        _ => Err(FeasibilityError::EmptyIntersection),
    }
}

type V6 = SVector<f64, 6>;
type M6 = SMatrix<f64, 6, 6>;

/// Linear rows `g . [lo; hi] <= b` equivalent to "every corner of the box
/// `[lo, hi]` satisfies the halfspace".
fn box_rows(w_i: &HalfspacePolytope) -> Vec<(V6, f64)> {
    w_i.rows()
        .map(|(a, b)| {
            let mut g = V6::zeros();
            for j in 0..3 {
                g[j] = a[j].min(0.0);
                g[3 + j] = a[j].max(0.0);
            }
            (g, b)
        })
        .collect()
}

/// Largest-volume axis-aligned box inside `w_i`.
///
/// Solved as the concave program max Σ log(hi_j − lo_j) subject to the linear
/// corner rows, by a log-barrier interior-point method started from the cube
/// inscribed in the Chebyshev ball.
pub fn inscribed_cuboid(w_i: &HalfspacePolytope) -> Result<RevisedWorkspace, FeasibilityError> {
    let (c, r) = w_i
        .chebyshev_center()
        .ok_or(FeasibilityError::EmptyIntersection)?;
    if r <= 0.0 {
        return Err(FeasibilityError::EmptyIntersection);
    }
    let rows = box_rows(w_i);
    let h = 0.9 * r / 3f64.sqrt();
    let mut x = V6::zeros();
    for j in 0..3 {
        x[j] = c[j] - h;
        x[3 + j] = c[j] + h;
    }

    let slacks = |x: &V6| -> Option<(Vec<f64>, [f64; 3])> {
        let s: Vec<f64> = rows.iter().map(|(g, b)| b - g.dot(x)).collect();
        let e = [x[3] - x[0], x[4] - x[1], x[5] - x[2]];
        if s.iter().all(|v| *v > 0.0) && e.iter().all(|v| *v > 0.0) {
            Some((s, e))
        } else {
            None
        }
    };
    // f_t(x) = -t Σ log e_j - Σ log s_k
    let value = |x: &V6, t: f64| -> f64 {
        match slacks(x) {
            None => f64::INFINITY,
            Some((s, e)) => {
                -t * e.iter().map(|v| v.ln()).sum::<f64>() - s.iter().map(|v| v.ln()).sum::<f64>()
            }
        }
    };

    let m = rows.len() as f64;
    let mut t = 1.0;
    while m / t > 1e-12 {
        for _ in 0..100 {
            let (s, e) = slacks(&x).expect("iterate stays interior");
            let mut grad = V6::zeros();
            let mut hess = M6::zeros();
            for ((g, _), sk) in rows.iter().zip(&s) {
                grad += g / *sk;
                hess += g * g.transpose() / (sk * sk);
            }
            for j in 0..3 {
                // d/dlo (−t log e) = t/e ; d/dhi = −t/e
                grad[j] += t / e[j];
                grad[3 + j] -= t / e[j];
                let w = t / (e[j] * e[j]);
                hess[(j, j)] += w;
                hess[(3 + j, 3 + j)] += w;
                hess[(j, 3 + j)] -= w;
                hess[(3 + j, j)] -= w;
            }
            let Some(chol) = hess.cholesky() else { break };
            let step = -chol.solve(&grad);
            let decrement = -grad.dot(&step);
            if decrement < 1e-14 {
                break;
            }
            let f0 = value(&x, t);
            let mut alpha = 1.0;
            loop {
                let cand = x + step * alpha;
                if value(&cand, t) <= f0 - 0.25 * alpha * decrement {
                    x = cand;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break;
                }
            }
            if alpha < 1e-12 {
                break;
            }
        }
        t *= 8.0;
    }

    let ws = RevisedWorkspace::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))?;
    ws.check_contained(w_i)?;
    Ok(ws)
}

/// `w_min − tol <= R_ψᵀ (p_E − p_B) <= w_max + tol` componentwise.
pub fn geometric_feasibility_ok(
    p_e: &Vec3,
    p_b: &Vec3,
    psi_o: f64,
    w_r: &RevisedWorkspace,
    tol: f64,
) -> bool {
    geometric_margin(p_e, p_b, psi_o, w_r) >= -tol
}

/// Signed distance of the relative offset to the box faces in the yaw frame:
/// positive inside, negative by the largest excursion outside.
pub fn geometric_margin(p_e: &Vec3, p_b: &Vec3, psi_o: f64, w_r: &RevisedWorkspace) -> f64 {
    let d = yaw_rotation(psi_o).transpose() * (p_e - p_b);
    (0..3)
        .map(|i| (d[i] - w_r.w_min[i]).min(w_r.w_max[i] - d[i]))
        .fold(f64::INFINITY, f64::min)
}
