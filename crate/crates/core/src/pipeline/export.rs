//! Report assembly and file output.

use super::mission::{Phase, PlanResult, StageSelection};
use super::verify::Check;
use super::Stage;
use crate::bezier::BezierState;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Report layout version.
pub const REPORT_VERSION: u32 = 1;
/// JSON schema of the report file.
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/report.schema.json");
/// Default trajectory sampling step, seconds.
pub const DEFAULT_SAMPLE_DT: f64 = 0.01;

pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot write trajectory: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot sample trajectory: {0}")]
    Sample(String),
    #[error("sample step must be positive")]
    InvalidSampleDt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub obstacle_id: usize,
    #[serde(rename = "t_L_s")]
    pub t_l: f64,
    #[serde(rename = "t_R_s")]
    pub t_r: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub objective: f64,
    /// `(obstacle id, weight)` of every mirror used in this iteration.
    pub lambdas: Vec<(usize, f64)>,
    pub intervals: Vec<IntervalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: String,
    pub t0_s: f64,
    pub t1_s: f64,
    pub iterations: usize,
    pub trace: Vec<IterationSummary>,
    pub residual_collisions: Vec<IntervalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspTimings {
    #[serde(rename = "t_B_s")]
    pub t_b: f64,
    #[serde(rename = "t_G_s")]
    pub t_g: f64,
    #[serde(rename = "t_grip_s")]
    pub t_grip: f64,
    #[serde(rename = "t_E_s")]
    pub t_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegRecord {
    pub corridor_cells: usize,
    pub path_cells: usize,
    pub qp_attempts: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
}

/// Machine-readable outcome of one mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub status: Status,
    pub scene: String,
    pub seed: u64,
    pub stage: StageSelection,
    pub avoidance: bool,
    pub horizon_s: f64,
    pub legs: Vec<LegRecord>,
    pub grasps: Vec<GraspTimings>,
    pub windows: Vec<WindowSummary>,
    pub checks: Vec<Check>,
    /// Stage that failed when planning did not complete.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl Report {
    pub fn from_plan(plan: &PlanResult, checks: Vec<Check>) -> Self {
        let status = if checks.iter().all(|c| c.passed) {
            Status::Pass
        } else {
            Status::Fail
        };
        let mut windows = Vec::new();
        for (k, g) in plan.grasps.iter().enumerate() {
            for (label, w) in [("approach", &g.approach), ("retraction", &g.retraction)] {
                let Some(w) = w else { continue };
                windows.push(WindowSummary {
                    window: format!("grasp{k}_{label}"),
                    t0_s: w.window.t0,
                    t1_s: w.window.t1,
                    iterations: w.iterations,
                    trace: w
                        .trace
                        .iter()
                        .map(|r| IterationSummary {
                            iteration: r.iteration,
                            objective: r.objective,
                            lambdas: r
                                .mirrors
                                .entries
                                .iter()
                                .map(|e| (e.obstacle_id, e.lambda))
                                .collect(),
                            intervals: r.intervals.iter().map(interval_record).collect(),
                        })
                        .collect(),
                    residual_collisions: w
                        .residual_collisions
                        .iter()
                        .map(interval_record)
                        .collect(),
                });
            }
        }
        Self {
            version: REPORT_VERSION,
            status,
            scene: plan.scene_name.clone(),
            seed: plan.seed,
            stage: plan.stage,
            avoidance: plan.avoidance,
            horizon_s: plan.horizon_s,
            legs: plan
                .legs
                .iter()
                .map(|l| LegRecord {
                    corridor_cells: l.corridor_cells,
                    path_cells: l.path_cells,
                    qp_attempts: l.qp_attempts,
                    t_start_s: l.t_start_s,
                    t_end_s: l.t_end_s,
                })
                .collect(),
            grasps: plan
                .grasps
                .iter()
                .map(|g| GraspTimings {
                    t_b: g.t_b,
                    t_g: g.t_g,
                    t_grip: g.t_r - g.t_g,
                    t_e: g.t_e,
                })
                .collect(),
            windows,
            checks,
            failed_stage: None,
            error: None,
        }
    }

    /// Report for a run that stopped before a plan existed.
    pub fn planning_failure(scene: &str, seed: u64, stage: Stage, error: &str) -> Self {
        Self {
            version: REPORT_VERSION,
            status: Status::Fail,
            scene: scene.to_string(),
            seed,
            stage: StageSelection::All,
            avoidance: true,
            horizon_s: 0.0,
            legs: Vec::new(),
            grasps: Vec::new(),
            windows: Vec::new(),
            checks: Vec::new(),
            failed_stage: Some(stage),
            error: Some(error.to_string()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Longest collision interval recorded in any iteration of any window.
    pub fn max_collision_interval(&self) -> f64 {
        self.windows
            .iter()
            .flat_map(|w| w.trace.iter().flat_map(|r| r.intervals.iter()))
            .map(|i| i.length_m)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn interval_record(i: &crate::collision::CollisionInterval) -> IntervalRecord {
    IntervalRecord {
        obstacle_id: i.obstacle_id,
        t_l: i.t_left,
        t_r: i.t_right,
        length_m: i.length(),
    }
}

/// Sample times `k · dt` for `k = 0 ..= ceil(horizon / dt)`, the last one
/// clamped to the horizon.
pub fn sample_times(t0: f64, horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt).ceil() as usize;
    (0..=n)
        .map(|k| (t0 + k as f64 * dt).min(t0 + horizon))
        .collect()
}

fn row(t: f64, body: &str, st: &BezierState, phase: Phase) -> [String; 12] {
    let f = |v: f64| format!("{v:.9}");
    [
        format!("{t:.6}"),
        body.to_string(),
        f(st.position.x),
        f(st.position.y),
        f(st.position.z),
        f(st.velocity.x),
        f(st.velocity.y),
        f(st.velocity.z),
        f(st.acceleration.x),
        f(st.acceleration.y),
        f(st.acceleration.z),
        phase.label().to_string(),
    ]
}

pub const CSV_HEADER: [&str; 12] = [
    "t_s", "body", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "stage",
];

/// Writes base (and, when planned, end-effector) samples as CSV. With the
/// manipulation stage selected only manipulation-phase rows are written.
pub fn write_trajectory_csv<W: Write>(
    plan: &PlanResult,
    sample_dt: f64,
    out: W,
) -> Result<(), ExportError> {
    if !(sample_dt > 0.0 && sample_dt.is_finite()) {
        return Err(ExportError::InvalidSampleDt);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let t0 = plan.base.t_start();
    for t in sample_times(t0, plan.horizon_s - t0, sample_dt) {
        let phase = plan.phase_at(t);
        if plan.stage == StageSelection::Manipulation && phase == Phase::Moving {
            continue;
        }
        let base = plan
            .base
            .eval(t)
            .map_err(|e| ExportError::Sample(e.to_string()))?;
        w.write_record(row(t, "base", &base, phase))?;
        if plan.stage.plans_manipulation() {
            let ee = plan.ee_state(t).map_err(ExportError::Sample)?;
            w.write_record(row(t, "ee", &ee, phase))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `plan.json`, `report.json` and `trajectory.csv` into `dir`.
pub fn export(
    plan: &PlanResult,
    report: &Report,
    dir: &Path,
    sample_dt: f64,
) -> Result<(), ExportError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(PLAN_FILE), serde_json::to_string(plan)?)?;
    std::fs::write(dir.join(REPORT_FILE), report.to_json())?;
    let file = std::fs::File::create(dir.join(TRAJECTORY_FILE))?;
    write_trajectory_csv(plan, sample_dt, std::io::BufWriter::new(file))
}

/// Reads a plan written by [`export`].
pub fn load_plan(dir: &Path) -> Result<PlanResult, ExportError> {
    let text = std::fs::read_to_string(dir.join(PLAN_FILE))?;
    Ok(serde_json::from_str(&text)?)
}
