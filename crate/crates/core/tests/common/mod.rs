//! Shared helpers for the integration tests: fixture loading and a seeded
//! generator of random pick-and-place scenes.
#![allow(dead_code)]

use aerial_pnp::pipeline::{run_mission, Mission, PlanError, PlanOptions, Scene, StageSelection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::PathBuf;

pub const FIXTURES: [&str; 4] = ["retrieval", "transport", "collision_avoidance", "empty"];

pub fn scenes_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

pub fn fixture(name: &str) -> Scene {
    Scene::load(&scenes_dir().join(format!("{name}.json")))
        .unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn options(scene: &Scene, avoidance: bool) -> PlanOptions {
    PlanOptions {
        avoidance,
        seed: scene.seed,
        stage: StageSelection::All,
    }
}

pub fn plan(scene: &Scene, avoidance: bool) -> Result<Mission, PlanError> {
    run_mission(scene, &options(scene, avoidance))
}

fn clear_of(p: [f64; 2], keep_out: &[[f64; 2]], r: f64) -> bool {
    keep_out
        .iter()
        .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) > r)
}

/// Random scene on an 8 m × 8 m × 3 m map: start and end in opposite
/// corners, one or two grasps in the middle, and up to three full-height
/// pillars kept clear of every waypoint.
pub fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = [
        rng.gen_range(-3.2..-2.2),
        rng.gen_range(-3.2..-2.2),
        rng.gen_range(-2.2..-1.8),
    ];
    let end = [
        rng.gen_range(2.2..3.2),
        rng.gen_range(2.2..3.2),
        rng.gen_range(-2.2..-1.8),
    ];
    let n_grasps = rng.gen_range(1..=2);
    let grasps: Vec<_> = (0..n_grasps)
        .map(|_| {
            [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.8..-1.2),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(0.3..1.2),
            ]
        })
        .collect();
    let mut keep_out = vec![[start[0], start[1]], [end[0], end[1]]];
    keep_out.extend(grasps.iter().map(|g| [g[0], g[1]]));
    let mut pillars = Vec::new();
    for _ in 0..3 {
        let c = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        if clear_of(c, &keep_out, 1.3) {
            pillars.push(json!({"min_m": [c[0] - 0.2, c[1] - 0.2, -3.0], "max_m": [c[0] + 0.2, c[1] + 0.2, 0.0]}));
        }
    }
    let v = json!({
        "name": format!("random-{seed}"),
        "seed": seed,
        "grid": {
            "origin_m": [-4.0, -4.0, -3.0],
            "cell_size_m": 0.2,
            "dims": [40, 40, 15],
            "occupied_boxes": pillars,
        },
        "p_start_m": start,
        "p_end_m": end,
        "grasps": grasps
            .iter()
            .map(|g| json!({"p_O_m": [g[0], g[1], g[2]], "psi_O_rad": g[3], "t_grip_s": g[4]}))
            .collect::<Vec<_>>(),
    });
    Scene::from_json(&v.to_string()).expect("generated scene is valid")
}
