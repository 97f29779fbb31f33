//! End-to-end mission planning: grasp positions, grid search, corridors,
//! base trajectory, then the end-effector windows around every grasp.

use super::scene::{GraspTask, Scene};
use super::Stage;
use crate::bezier::{BezierSegment, BezierState, PiecewiseBezier};
use crate::collision::CollisionInterval;
use crate::corridor::{generate_corridor, grasp_cell, CellKind};
use crate::ee_trajectory::{
    flat_attitude, initial_state, plan_ee_trajectory, scaled_start_time, CollisionEnv,
    EePlanOptions, EeWindow, GraspSpec, IterationRecord, EE_DEGREE,
};
use crate::feasibility::RevisedWorkspace;
use crate::geometry::{HalfspacePolytope, Vec3};
use crate::grid_planner::{astar_inflated, feasible_grasp_position, inflate, workspace_top_point};
use crate::quad_trajectory::{generate_quad_trajectory, hold_segment};
use crate::GRAVITY;
use log::info;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;
use thiserror::Error;

/// Failure of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PlanError {
    pub stage: Stage,
    pub message: String,
}

fn fail<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PlanError {
    move |e| PlanError {
        stage,
        message: e.to_string(),
    }
}

/// How much of the mission to plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSelection {
    /// Base trajectory only.
    Moving,
    /// Full plan; exports only the manipulation phases.
    Manipulation,
    #[default]
    All,
}

impl StageSelection {
    pub fn plans_manipulation(&self) -> bool {
        !matches!(self, StageSelection::Moving)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub avoidance: bool,
    pub seed: u64,
    pub stage: StageSelection,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            avoidance: true,
            seed: 0,
            stage: StageSelection::All,
        }
    }
}

/// Role of a base segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Moving,
    Grasp,
    Hold,
}

/// Convex cell that must contain one base segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCell {
    pub leg: usize,
    pub kind: SegmentKind,
    pub polytope: HalfspacePolytope,
}

/// Flight between two consecutive mission waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub from_m: Vec3,
    pub to_m: Vec3,
    pub path_cells: usize,
    pub path_cost_m: f64,
    pub corridor_cells: usize,
    pub durations_s: Vec<f64>,
    pub qp_attempts: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
}

/// Result of one end-effector window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window: EeWindow,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub residual_collisions: Vec<CollisionInterval>,
}

/// Timing and end-effector plan of one grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPlan {
    pub task: GraspTask,
    #[serde(rename = "p_B_f_m")]
    pub p_b_f: Vec3,
    #[serde(rename = "t_B_s")]
    pub t_b: f64,
    #[serde(rename = "t_G_s")]
    pub t_g: f64,
    /// End of the hold, start of the retraction.
    #[serde(rename = "t_R_s")]
    pub t_r: f64,
    /// End of the retraction window.
    #[serde(rename = "t_E_s")]
    pub t_e: f64,
    /// Approach, hold and retraction as one trajectory over `[t_B, t_E]`;
    /// absent when only the base was planned.
    pub ee: Option<PiecewiseBezier>,
    pub approach: Option<WindowPlan>,
    pub retraction: Option<WindowPlan>,
}

/// Everything a mission produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub scene_name: String,
    pub seed: u64,
    pub stage: StageSelection,
    pub avoidance: bool,
    pub revised_workspace: RevisedWorkspace,
    /// End-effector rest offset in the yaw-aligned body frame.
    #[serde(rename = "p_top_m")]
    pub p_top: Vec3,
    pub base: PiecewiseBezier,
    /// One cell per base segment.
    pub base_cells: Vec<SegmentCell>,
    pub legs: Vec<LegSummary>,
    pub grasps: Vec<GraspPlan>,
    pub horizon_s: f64,
}

/// Phase of the mission at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Moving,
    Approach,
    Hold,
    Retract,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Moving => "moving",
            Phase::Approach => "approach",
            Phase::Hold => "hold",
            Phase::Retract => "retract",
        }
    }
}

impl PlanResult {
    pub fn phase_at(&self, t: f64) -> Phase {
        for g in &self.grasps {
            if t >= g.t_b && t < g.t_g {
                return Phase::Approach;
            }
            if t >= g.t_g && t < g.t_r {
                return Phase::Hold;
            }
            if t >= g.t_r && t < g.t_e {
                return Phase::Retract;
            }
        }
        Phase::Moving
    }

    /// Heading of the base at `t`: the object yaw during manipulation,
    /// interpolated linearly between consecutive grasps.
    pub fn heading_at(&self, t: f64) -> f64 {
        let gs = &self.grasps;
        if gs.is_empty() {
            return 0.0;
        }
        if t <= gs[0].t_e {
            return gs[0].task.psi_o;
        }
        for w in gs.windows(2) {
            if t <= w[1].t_b {
                let s = ((t - w[0].t_e) / (w[1].t_b - w[0].t_e)).clamp(0.0, 1.0);
                return w[0].task.psi_o + s * (w[1].task.psi_o - w[0].task.psi_o);
            }
            if t <= w[1].t_e {
                return w[1].task.psi_o;
            }
        }
        gs[gs.len() - 1].task.psi_o
    }

    /// End-effector position when resting at `p_top` on the base.
    pub fn attached_position(&self, t: f64) -> Result<Vec3, String> {
        let st = self.base.eval(t).map_err(|e| e.to_string())?;
        let r = flat_attitude(&st.acceleration, self.heading_at(t), GRAVITY)
            .map_err(|e| e.to_string())?;
        Ok(st.position + r * self.p_top)
    }

    /// End-effector state at `t`: the planned windows where they apply,
    /// otherwise the attached rest position with finite-difference rates.
    pub fn ee_state(&self, t: f64) -> Result<BezierState, String> {
        for g in &self.grasps {
            if let Some(ee) = &g.ee {
                if t >= g.t_b && t <= g.t_e {
                    return ee.eval(t).map_err(|e| e.to_string());
                }
            }
        }
        let h = ATTACHED_STEP;
        let (t0, t1) = (self.base.t_start(), self.base.t_end());
        let tc = t.clamp(t0 + h, t1 - h);
        let pm = self.attached_position(tc - h)?;
        let p0 = self.attached_position(tc)?;
        let pp = self.attached_position(tc + h)?;
        Ok(BezierState {
            position: self.attached_position(t)?,
            velocity: (pp - pm) / (2.0 * h),
            acceleration: (pp - 2.0 * p0 + pm) / (h * h),
            jerk: Vec3::zeros(),
        })
    }
}

/// Difference step for end-effector rates in attached phases, seconds.
const ATTACHED_STEP: f64 = 1e-3;

/// Wall-clock split of one planning run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanTimings {
    /// Workspace, grid search, corridors and base trajectory.
    pub quad_side_ms: f64,
    /// All end-effector windows including collision iterations.
    pub ee_side_ms: f64,
}

/// Plans a mission, returning the result and the time spent on each side.
pub fn plan_mission_timed(
    scene: &Scene,
    options: &PlanOptions,
) -> Result<(PlanResult, PlanTimings), PlanError> {
    scene.validate().map_err(fail(Stage::Scene))?;
    let clock = Instant::now();
    let w_r = scene
        .revised_workspace(options.seed)
        .map_err(fail(Stage::Workspace))?;
    let p_top = workspace_top_point(&w_r);
    let grid = scene.build_grid();
    let inflated = inflate(&grid, scene.inflate_radius());
    let bounds = scene.grid_bounds();

    let mut grasp_positions = Vec::with_capacity(scene.grasps.len());
    for (k, task) in scene.grasps.iter().enumerate() {
        let p = feasible_grasp_position(&task.p_o, task.psi_o, &w_r);
        let free = inflated
            .world_to_cell(&p)
            .map(|c| !inflated.is_occupied(c))
            .unwrap_or(false);
        if !bounds.contains(&p, 0.0) || !free {
            return Err(PlanError {
                stage: Stage::GraspPosition,
                message: format!("grasp {k}: base position {p:?} is outside the free space"),
            });
        }
        grasp_positions.push(p);
    }

    let window_len = scene.window_scale * scene.limits.ee.window();
    let alloc = scene.time_allocation();
    let mut waypoints = vec![scene.p_start_m];
    waypoints.extend(grasp_positions.iter().copied());
    waypoints.push(scene.p_end_m);
    let n_legs = waypoints.len() - 1;

    let mut segments: Vec<BezierSegment> = Vec::new();
    let mut base_cells: Vec<SegmentCell> = Vec::new();
    let mut legs = Vec::with_capacity(n_legs);
    let mut grasp_times: Vec<(f64, f64)> = Vec::new();
    let mut t = 0.0;
    for leg in 0..n_legs {
        let (from, to) = (waypoints[leg], waypoints[leg + 1]);
        let path = astar_inflated(&inflated, &from, &to).map_err(fail(Stage::PathSearch))?;
        let mut corridor = generate_corridor(&inflated, &path, &from, &to, &alloc)
            .map_err(fail(Stage::Corridor))?;
        if leg > 0 {
            let task = &scene.grasps[leg - 1];
            let cell = grasp_cell(
                &task.p_o,
                task.psi_o,
                &w_r,
                &corridor.cells[0].bounds,
                window_len,
            );
            corridor
                .prepend_cell(cell, from)
                .map_err(fail(Stage::Corridor))?;
        }
        if leg + 1 < n_legs {
            let task = &scene.grasps[leg];
            let last = corridor.cells.len() - 1;
            let cell = grasp_cell(
                &task.p_o,
                task.psi_o,
                &w_r,
                &corridor.cells[last].bounds,
                window_len,
            );
            corridor
                .push_cell(cell, to)
                .map_err(fail(Stage::Corridor))?;
        }
        let quad = generate_quad_trajectory(&corridor, &from, &to, &scene.limits.quad, t)
            .map_err(fail(Stage::BaseTrajectory))?;
        info!(
            "leg {leg}: {} path cells, {} corridor cells, {} QP attempts",
            path.cells.len(),
            corridor.cells.len(),
            quad.attempts
        );
        let t_start = t;
        for (seg, cell) in quad.trajectory.segments.iter().zip(&corridor.cells) {
            segments.push(seg.clone());
            base_cells.push(SegmentCell {
                leg,
                kind: match cell.kind {
                    CellKind::Moving => SegmentKind::Moving,
                    CellKind::Grasp => SegmentKind::Grasp,
                },
                polytope: cell.polytope.clone(),
            });
        }
        t = quad.trajectory.t_end();
        legs.push(LegSummary {
            from_m: from,
            to_m: to,
            path_cells: path.cells.len(),
            path_cost_m: path.cost,
            corridor_cells: corridor.cells.len(),
            durations_s: quad.durations.clone(),
            qp_attempts: quad.attempts,
            t_start_s: t_start,
            t_end_s: t,
        });
        if leg + 1 < n_legs {
            let t_grip = scene.grasps[leg].t_grip;
            let t_g = t;
            if t_grip > 0.0 {
                segments.push(hold_segment(&to, t, t_grip).map_err(fail(Stage::BaseTrajectory))?);
                let last = &corridor.cells[corridor.cells.len() - 1];
                base_cells.push(SegmentCell {
                    leg,
                    kind: SegmentKind::Hold,
                    polytope: last.polytope.clone(),
                });
                t += t_grip;
            }
            grasp_times.push((t_g, t));
        }
    }
    let base = PiecewiseBezier::new(segments).map_err(fail(Stage::BaseTrajectory))?;
    let horizon = base.t_end();

    let mut grasps: Vec<GraspPlan> = scene
        .grasps
        .iter()
        .zip(&grasp_positions)
        .zip(&grasp_times)
        .map(|((task, p_b_f), (t_g, t_r))| GraspPlan {
            task: *task,
            p_b_f: *p_b_f,
            t_b: t_g - window_len,
            t_g: *t_g,
            t_r: *t_r,
            t_e: t_r + window_len,
            ee: None,
            approach: None,
            retraction: None,
        })
        .collect();
    let quad_side_ms = clock.elapsed().as_secs_f64() * 1e3;

    let clock = Instant::now();
    if options.stage.plans_manipulation() {
        let obstacles = scene.build_obstacles();
        let ee_options = EePlanOptions {
            max_iters: scene.ee_max_iterations,
            avoidance: options.avoidance,
            geometric_slack: scene.tolerances.geometric_slack_m,
            ..Default::default()
        };
        for (k, g) in grasps.iter_mut().enumerate() {
            let task = g.task;
            let spec = GraspSpec {
                p_o: task.p_o,
                psi_o: task.psi_o,
                t_grip: task.t_grip,
                t_g: g.t_g,
                cone_angle: scene.cone.angle_rad,
                cone_time_fraction: scene.cone.time_fraction,
            };
            let t_b = scaled_start_time(g.t_g, &scene.limits.ee, scene.window_scale)
                .map_err(fail(Stage::ManipulationTiming))?;
            if t_b - scene.delta_i < 0.0 || g.t_e + scene.delta_i > horizon {
                return Err(PlanError {
                    stage: Stage::ManipulationTiming,
                    message: format!(
                        "grasp {k}: manipulation windows do not fit inside the base trajectory"
                    ),
                });
            }
            g.t_b = t_b;
            let env = CollisionEnv {
                obstacles: &obstacles,
                arm: scene.arm_shape(task.psi_o),
                l_s: scene.l_s_m,
                alpha: scene.alpha,
            };
            let start = initial_state(&base, t_b, &p_top, task.psi_o, scene.delta_i)
                .map_err(fail(Stage::ManipulationTiming))?;
            let approach_window = EeWindow::approach(&spec, t_b, start);
            let approach = plan_ee_trajectory(
                &base,
                &approach_window,
                &w_r,
                &scene.limits.ee,
                &env,
                &ee_options,
            )
            .map_err(|e| PlanError {
                stage: Stage::EeTrajectory,
                message: format!("grasp {k} approach: {e}"),
            })?;
            let end = initial_state(&base, g.t_e, &p_top, task.psi_o, scene.delta_i)
                .map_err(fail(Stage::ManipulationTiming))?;
            let retraction_window = EeWindow::retraction(&spec, g.t_r, g.t_e, end);
            let retraction = plan_ee_trajectory(
                &base,
                &retraction_window,
                &w_r,
                &scene.limits.ee,
                &env,
                &ee_options,
            )
            .map_err(|e| PlanError {
                stage: Stage::EeTrajectory,
                message: format!("grasp {k} retraction: {e}"),
            })?;
            info!(
                "grasp {k}: approach {} iterations, retraction {} iterations",
                approach.iterations, retraction.iterations
            );
            let mut pieces = vec![approach.segment.clone()];
            if g.t_r > g.t_g {
                pieces.push(
                    BezierSegment::constant(task.p_o, EE_DEGREE, g.t_g, g.t_r)
                        .map_err(fail(Stage::EeTrajectory))?,
                );
            }
            pieces.push(retraction.segment.clone());
            g.ee = Some(PiecewiseBezier::new(pieces).map_err(fail(Stage::EeTrajectory))?);
            g.approach = Some(WindowPlan {
                window: approach_window,
                iterations: approach.iterations,
                trace: approach.trace,
                residual_collisions: approach.residual_collisions,
            });
            g.retraction = Some(WindowPlan {
                window: retraction_window,
                iterations: retraction.iterations,
                trace: retraction.trace,
                residual_collisions: retraction.residual_collisions,
            });
        }
    }
    let ee_side_ms = clock.elapsed().as_secs_f64() * 1e3;

    let result = PlanResult {
        scene_name: scene.name.clone(),
        seed: options.seed,
        stage: options.stage,
        avoidance: options.avoidance,
        revised_workspace: w_r,
        p_top,
        base,
        base_cells,
        legs,
        grasps,
        horizon_s: horizon,
    };
    Ok((
        result,
        PlanTimings {
            quad_side_ms,
            ee_side_ms,
        },
    ))
}

/// Plans a mission.
pub fn plan_mission(scene: &Scene, options: &PlanOptions) -> Result<PlanResult, PlanError> {
    plan_mission_timed(scene, options).map(|(r, _)| r)
}
