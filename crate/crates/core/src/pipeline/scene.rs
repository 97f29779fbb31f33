//! Scene description: map, obstacles, mission waypoints and parameters.
//!
//! Scenes are JSON documents whose field names carry their units
//! (`p_start_m`, `psi_O_rad`, ...). Every parameter except the map and the
//! mission waypoints has a default.

use crate::collision::{ArmShape, Obstacle, ShapeParams};
use crate::corridor::TimeAllocation;
use crate::delta::{approximate_workspace, DeltaParams, JointLimits, MountTransform};
use crate::ee_trajectory::{
    EeLimits, DEFAULT_DELTA_I, DEFAULT_GEOMETRIC_SLACK, DEFAULT_MAX_ITERS, EE_DEGREE,
};
use crate::feasibility::{inscribed_cuboid, workspace_intersection, RevisedWorkspace, TiltBounds};
use crate::geometry::{aabb_vertices, Aabb, ConvexPolyhedronV, GridMap3D, Vec3};
use crate::quad_trajectory::{QuadLimits, QUAD_DEGREE};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SceneError> {
    Err(SceneError::Invalid(msg.into()))
}

/// Axis-aligned box given by two corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min_m: Vec3,
    pub max_m: Vec3,
}

impl BoxSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min_m, self.max_m)
    }
}

/// Occupancy map: a regular grid filled from boxes and/or an explicit
/// `occupancy[x][y][z]` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin_m: Vec3,
    pub cell_size_m: f64,
    pub dims: [usize; 3],
    #[serde(default)]
    pub occupied_boxes: Vec<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<Vec<Vec<Vec<bool>>>>,
}

/// Obstacle the arm must avoid during manipulation, as a box or as the
/// vertices of a convex hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    #[serde(rename = "box")]
    pub aabb: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices_m: Option<Vec<Vec3>>,
}

/// One manipulation: the end-effector reaches `p_O`, holds for `t_grip`
/// and retracts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspTask {
    #[serde(rename = "p_O_m")]
    pub p_o: Vec3,
    #[serde(rename = "psi_O_rad", default)]
    pub psi_o: f64,
    #[serde(rename = "t_grip_s", default = "default_t_grip")]
    pub t_grip: f64,
}

fn default_t_grip() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    #[serde(default)]
    pub quad: QuadLimits,
    #[serde(default)]
    pub ee: EeLimits,
}

/// Source of the revised workspace box: explicit bounds, or computed from the
/// arm geometry and the attitude range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum WorkspaceSpec {
    Explicit {
        w_min_m: Vec3,
        w_max_m: Vec3,
    },
    Computed {
        tilt: TiltBounds,
        #[serde(default = "default_workspace_samples")]
        n_samples: usize,
    },
}

fn default_workspace_samples() -> usize {
    4096
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        WorkspaceSpec::Explicit {
            w_min_m: Vec3::new(-0.06, -0.06, -0.60),
            w_max_m: Vec3::new(0.06, 0.06, -0.40),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreesSpec {
    pub quad: usize,
    pub ee: usize,
}

impl Default for DegreesSpec {
    fn default() -> Self {
        Self {
            quad: QUAD_DEGREE,
            ee: EE_DEGREE,
        }
    }
}

/// Final-approach cone on the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSpec {
    pub angle_rad: f64,
    /// Normalized window time at which the cone applies.
    pub time_fraction: f64,
}

impl Default for ConeSpec {
    fn default() -> Self {
        Self {
            angle_rad: 15f64.to_radians(),
            time_fraction: 0.8,
        }
    }
}

/// Corridor time allocation as fractions of the base limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSpec {
    pub speed_factor: f64,
    pub accel_factor: f64,
    pub min_duration_s: f64,
}

impl Default for AllocationSpec {
    fn default() -> Self {
        Self {
            speed_factor: 0.35,
            accel_factor: 0.35,
            min_duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Widening of the planner's geometric rows, meters.
    pub geometric_slack_m: f64,
    /// Slack accepted by the verifier's geometric sweep, meters.
    pub verify_geometric_m: f64,
    /// Slack on dynamic limits, m/s and m/s².
    pub verify_limits: f64,
    /// Hold-phase and endpoint position tolerance, meters.
    pub verify_position_m: f64,
    /// Corridor membership tolerance, meters.
    pub verify_corridor_m: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            geometric_slack_m: DEFAULT_GEOMETRIC_SLACK,
            verify_geometric_m: 0.005,
            verify_limits: 1e-6,
            verify_position_m: 1e-6,
            verify_corridor_m: 1e-6,
        }
    }
}

fn default_l_s() -> f64 {
    0.2
}

fn default_alpha() -> f64 {
    3.0
}

fn default_window_scale() -> f64 {
    3.0
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_delta_i() -> f64 {
    DEFAULT_DELTA_I
}

/// Complete mission description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub name: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub p_start_m: Vec3,
    pub p_end_m: Vec3,
    pub grasps: Vec<GraspTask>,
    #[serde(default)]
    pub limits: LimitsSpec,
    #[serde(default)]
    pub delta: DeltaParams,
    #[serde(default)]
    pub joint_limits: JointLimits,
    #[serde(default)]
    pub mount: MountTransform,
    #[serde(default)]
    pub workspace: WorkspaceSpec,
    #[serde(default)]
    pub shape: ShapeParams,
    /// Vehicle clearance used to inflate the map; defaults to `shape.r_S_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflate_radius_m: Option<f64>,
    #[serde(default = "default_l_s")]
    pub l_s_m: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub degrees: DegreesSpec,
    #[serde(default)]
    pub cone: ConeSpec,
    #[serde(default)]
    pub allocation: AllocationSpec,
    /// Manipulation window length as a multiple of `2 v_E / a_E`.
    #[serde(default = "default_window_scale")]
    pub window_scale: f64,
    #[serde(default = "default_max_iters")]
    pub ee_max_iterations: usize,
    #[serde(rename = "delta_I_s", default = "default_delta_i")]
    pub delta_i: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn inflate_radius(&self) -> f64 {
        self.inflate_radius_m.unwrap_or(self.shape.r_s)
    }

    pub fn grid_bounds(&self) -> Aabb {
        let g = &self.grid;
        let size = Vec3::new(g.dims[0] as f64, g.dims[1] as f64, g.dims[2] as f64) * g.cell_size_m;
        Aabb::new(g.origin_m, g.origin_m + size)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let g = &self.grid;
        if !(g.cell_size_m > 0.0 && g.cell_size_m.is_finite()) {
            return invalid("grid cell size must be positive");
        }
        if g.dims.contains(&0) {
            return invalid("grid dimensions must be positive");
        }
        if let Some(occ) = &g.occupancy {
            let ok = occ.len() == g.dims[0]
                && occ.iter().all(|plane| {
                    plane.len() == g.dims[1] && plane.iter().all(|col| col.len() == g.dims[2])
                });
            if !ok {
                return invalid("occupancy array does not match grid dimensions");
            }
        }
        for b in &g.occupied_boxes {
            if (0..3).any(|i| !(b.min_m[i] <= b.max_m[i])) {
                return invalid("occupied box has min > max");
            }
        }
        let bounds = self.grid_bounds();
        for (name, p) in [("p_start_m", &self.p_start_m), ("p_end_m", &self.p_end_m)] {
            if !bounds.contains(p, 0.0) {
                return invalid(format!("{name} lies outside the grid"));
            }
        }
        if self.grasps.is_empty() {
            return invalid("at least one grasp is required");
        }
        for (k, t) in self.grasps.iter().enumerate() {
            if !bounds.contains(&t.p_o, 0.0) {
                return invalid(format!("grasp {k}: p_O_m lies outside the grid"));
            }
            if !(t.t_grip >= 0.0 && t.t_grip.is_finite() && t.psi_o.is_finite()) {
                return invalid(format!("grasp {k}: t_grip_s must be non-negative"));
            }
        }
        let mut ids: Vec<usize> = self.obstacles.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("obstacle ids must be unique");
        }
        for o in &self.obstacles {
            match (&o.aabb, &o.vertices_m) {
                (Some(b), None) if (0..3).all(|i| b.min_m[i] <= b.max_m[i]) => {}
                (None, Some(v)) if !v.is_empty() => {}
                _ => {
                    return invalid(format!(
                        "obstacle {} needs exactly one valid box or vertex list",
                        o.id
                    ))
                }
            }
        }
        if self.degrees.quad != QUAD_DEGREE || self.degrees.ee != EE_DEGREE {
            return invalid(format!(
                "only degree {QUAD_DEGREE} base and degree {EE_DEGREE} end-effector curves are supported"
            ));
        }
        let positive = [
            ("limits.quad.v_max_mps", self.limits.quad.v_max),
            ("limits.quad.a_max_mps2", self.limits.quad.a_max),
            ("limits.ee.v_E_max_mps", self.limits.ee.v_max),
            ("limits.ee.a_E_max_mps2", self.limits.ee.a_max),
            ("l_s_m", self.l_s_m),
            ("alpha", self.alpha),
            ("delta_I_s", self.delta_i),
            ("allocation.speed_factor", self.allocation.speed_factor),
            ("allocation.accel_factor", self.allocation.accel_factor),
            ("allocation.min_duration_s", self.allocation.min_duration_s),
            ("shape.r_S_m", self.shape.r_s),
            ("shape.l_C_m", self.shape.l_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !(self.inflate_radius() >= 0.0 && self.inflate_radius().is_finite()) {
            return invalid("inflate_radius_m must be non-negative");
        }
        if !(self.window_scale >= 1.0 && self.window_scale.is_finite()) {
            return invalid("window_scale must be at least 1");
        }
        if !(self.cone.angle_rad > 0.0 && self.cone.angle_rad < std::f64::consts::FRAC_PI_2) {
            return invalid("cone.angle_rad must lie in (0, pi/2)");
        }
        if !(self.cone.time_fraction > 0.0 && self.cone.time_fraction < 1.0) {
            return invalid("cone.time_fraction must lie in (0, 1)");
        }
        if self.ee_max_iterations == 0 {
            return invalid("ee_max_iterations must be positive");
        }
        let t = &self.tolerances;
        for v in [
            t.geometric_slack_m,
            t.verify_geometric_m,
            t.verify_limits,
            t.verify_position_m,
            t.verify_corridor_m,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid("tolerances must be non-negative");
            }
        }
        if let WorkspaceSpec::Explicit { w_min_m, w_max_m } = self.workspace {
            RevisedWorkspace::new(w_min_m, w_max_m)
                .map_err(|e| SceneError::Invalid(e.to_string()))?;
        }
        self.delta
            .validate()
            .map_err(|e| SceneError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Occupancy grid with boxes and the explicit array rasterized.
    pub fn build_grid(&self) -> GridMap3D {
        let g = &self.grid;
        let mut grid = GridMap3D::new(g.origin_m, g.cell_size_m, g.dims);
        for b in &g.occupied_boxes {
            grid.fill_box(&b.aabb());
        }
        if let Some(occ) = &g.occupancy {
            for (x, plane) in occ.iter().enumerate() {
                for (y, col) in plane.iter().enumerate() {
                    for (z, v) in col.iter().enumerate() {
                        if *v {
                            grid.set_occupied([x, y, z], true);
                        }
                    }
                }
            }
        }
        grid
    }

    pub fn build_obstacles(&self) -> Vec<Obstacle> {
        self.obstacles
            .iter()
            .map(|o| Obstacle {
                id: o.id,
                hull: match (&o.aabb, &o.vertices_m) {
                    (Some(b), _) => aabb_vertices(&b.aabb()),
                    (None, Some(v)) => ConvexPolyhedronV::new(v.clone()),
                    (None, None) => unreachable!("validated"),
                },
            })
            .collect()
    }

    pub fn arm_shape(&self, psi: f64) -> ArmShape {
        ArmShape {
            psi,
            mount: self.mount,
            shape: self.shape,
        }
    }

    pub fn time_allocation(&self) -> TimeAllocation {
        TimeAllocation {
            v: self.allocation.speed_factor * self.limits.quad.v_max,
            a: self.allocation.accel_factor * self.limits.quad.a_max,
            min_duration: self.allocation.min_duration_s,
        }
    }

    /// Revised workspace, computing it from the arm model when not given.
    /// `seed` drives the workspace sampling.
    pub fn revised_workspace(&self, seed: u64) -> Result<RevisedWorkspace, String> {
        match self.workspace {
            WorkspaceSpec::Explicit { w_min_m, w_max_m } => {
                RevisedWorkspace::new(w_min_m, w_max_m).map_err(|e| e.to_string())
            }
            WorkspaceSpec::Computed { tilt, n_samples } => {
                let w = approximate_workspace(&self.delta, &self.joint_limits, n_samples, seed)
                    .map_err(|e| e.to_string())?;
                let w_i =
                    workspace_intersection(&w, &self.mount, &tilt).map_err(|e| e.to_string())?;
                inscribed_cuboid(&w_i).map_err(|e| e.to_string())
            }
        }
    }
}
