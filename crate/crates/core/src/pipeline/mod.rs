//! Scene ingestion, mission orchestration, verification and export.

pub mod export;
pub mod mission;
pub mod scene;
pub mod verify;

pub use export::{
    export, load_plan, write_trajectory_csv, Report, Status, DEFAULT_SAMPLE_DT, REPORT_SCHEMA,
};
pub use mission::{
    plan_mission, plan_mission_timed, PlanError, PlanOptions, PlanResult, PlanTimings,
    StageSelection,
};
pub use scene::{Scene, SceneError};
pub use verify::{verify_plan, Check};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scene,
    Workspace,
    GraspPosition,
    PathSearch,
    Corridor,
    BaseTrajectory,
    ManipulationTiming,
    EeTrajectory,
    Verification,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Scene => "scene",
            Stage::Workspace => "workspace",
            Stage::GraspPosition => "grasp_position",
            Stage::PathSearch => "path_search",
            Stage::Corridor => "corridor",
            Stage::BaseTrajectory => "base_trajectory",
            Stage::ManipulationTiming => "manipulation_timing",
            Stage::EeTrajectory => "ee_trajectory",
            Stage::Verification => "verification",
        };
        f.write_str(s)
    }
}

/// Process exit codes of the command-line front end.
pub mod exit_code {
    pub const PASS: i32 = 0;
    pub const PLANNING_FAILURE: i32 = 2;
    pub const VERIFICATION_FAILURE: i32 = 3;
    pub const SCENE_ERROR: i32 = 4;
}

/// A planned and verified mission.
#[derive(Debug, Clone)]
pub struct Mission {
    pub plan: PlanResult,
    pub report: Report,
    pub timings: PlanTimings,
}

/// Plans `scene` and verifies the result.
pub fn run_mission(scene: &Scene, options: &PlanOptions) -> Result<Mission, PlanError> {
    let (plan, timings) = plan_mission_timed(scene, options)?;
    let report = Report::from_plan(&plan, verify_plan(&plan, scene));
    Ok(Mission {
        plan,
        report,
        timings,
    })
}
