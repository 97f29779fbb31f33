//! Command-line front end: plan a mission from a scene file, or re-verify a
//! stored plan.

use aerial_pnp::pipeline::{
    exit_code, export, load_plan, run_mission, verify_plan, PlanOptions, Report, Scene, Stage,
    StageSelection, DEFAULT_SAMPLE_DT,
};
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "aerial-pnp",
    version,
    about = "Quadcopter + Delta-arm pick-and-place planner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Moving,
    Manipulation,
    All,
}

impl From<StageArg> for StageSelection {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Moving => StageSelection::Moving,
            StageArg::Manipulation => StageSelection::Manipulation,
            StageArg::All => StageSelection::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plan a mission and write plan.json, report.json and trajectory.csv.
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the end-effector obstacle iterations.
        #[arg(long)]
        disable_ee_avoidance: bool,
        /// Trajectory sampling step in seconds.
        #[arg(long, default_value_t = DEFAULT_SAMPLE_DT)]
        sample_dt: f64,
        /// Seed for workspace sampling; defaults to the scene's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Re-run the verifier on a stored plan and print the report.
    Verify {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
}

fn load_scene(path: &Path) -> Result<Scene, ExitCode> {
    Scene::load(path).map_err(|e| {
        error!("{e}");
        eprintln!("scene error: {e}");
        ExitCode::from(exit_code::SCENE_ERROR as u8)
    })
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Plan {
            scene,
            out,
            disable_ee_avoidance,
            sample_dt,
            seed,
            stage,
        } => {
            if !(sample_dt > 0.0 && sample_dt.is_finite()) {
                eprintln!("--sample-dt must be positive");
                return Err(ExitCode::from(exit_code::SCENE_ERROR as u8));
            }
            let scene = load_scene(&scene)?;
            let options = PlanOptions {
                avoidance: !disable_ee_avoidance,
                seed: seed.unwrap_or(scene.seed),
                stage: stage.into(),
            };
            let mission = match run_mission(&scene, &options) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("planning failed: {e}");
                    let report =
                        Report::planning_failure(&scene.name, options.seed, e.stage, &e.message);
                    if std::fs::create_dir_all(&out).is_ok() {
                        let _ = std::fs::write(
                            out.join(aerial_pnp::pipeline::export::REPORT_FILE),
                            report.to_json(),
                        );
                    }
                    let code = if e.stage == Stage::Scene {
                        exit_code::SCENE_ERROR
                    } else {
                        exit_code::PLANNING_FAILURE
                    };
                    return Err(ExitCode::from(code as u8));
                }
            };
            info!(
                "quad side {:.1} ms, end-effector side {:.1} ms",
                mission.timings.quad_side_ms, mission.timings.ee_side_ms
            );
            if let Err(e) = export(&mission.plan, &mission.report, &out, sample_dt) {
                eprintln!("export failed: {e}");
                return Err(ExitCode::from(exit_code::PLANNING_FAILURE as u8));
            }
            print_summary(&mission.report);
            if mission.report.passed() {
                Ok(())
            } else {
                Err(ExitCode::from(exit_code::VERIFICATION_FAILURE as u8))
            }
        }
        Command::Verify { plan, scene } => {
            let scene = load_scene(&scene)?;
            let plan = load_plan(&plan).map_err(|e| {
                eprintln!("cannot load plan: {e}");
                ExitCode::from(exit_code::SCENE_ERROR as u8)
            })?;
            let report = Report::from_plan(&plan, verify_plan(&plan, &scene));
            println!("{}", report.to_json());
            if report.passed() {
                Ok(())
            } else {
                Err(ExitCode::from(exit_code::VERIFICATION_FAILURE as u8))
            }
        }
    }
}

fn print_summary(report: &Report) {
    for c in &report.checks {
        println!(
            "{:<5} {:<28} margin {:>12.3e}  {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.worst_margin,
            c.detail
        );
    }
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLANNER_LOG", "warn")).init();
    // Argument errors are input errors; keep exit code 2 for planning failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit_code::SCENE_ERROR as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
