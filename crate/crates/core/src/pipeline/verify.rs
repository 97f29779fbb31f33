//! Independent play-back checks of a planned mission.
//!
//! Every check re-samples the stored trajectories densely and evaluates the
//! constraint directly; nothing here calls into the planners.

use super::mission::PlanResult;
use super::scene::Scene;
use crate::bezier::PiecewiseBezier;
use crate::collision::shape_polyhedron;
use crate::geometry::{gjk_query, yaw_rotation, RotMat3, Vec3};
use crate::GRAVITY;
use serde::{Deserialize, Serialize};

/// Sampling step of the dense checks, seconds (1 kHz).
pub const VERIFY_DT: f64 = 1e-3;
/// Sampling step of the collision sweep, seconds.
pub const COLLISION_DT: f64 = 5e-4;

/// Outcome of one check. `worst_margin` is positive when the constraint holds
/// with room to spare and negative by the size of the worst violation; the
/// check passes when `worst_margin >= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(
        name: impl Into<String>,
        worst_margin: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            passed: worst_margin >= -tolerance && worst_margin.is_finite(),
            worst_margin,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            worst_margin: f64::NEG_INFINITY,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

fn samples(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    (0..=n).map(|k| (t0 + k as f64 * dt).min(t1)).collect()
}

/// Attitude whose third axis is along `accel + g e3`, heading `psi`.
fn thrust_attitude(accel: &Vec3, psi: f64) -> Option<RotMat3> {
    let z = accel + Vec3::new(0.0, 0.0, GRAVITY);
    let z = z.try_normalize(1e-9)?;
    let heading = Vec3::new(psi.cos(), psi.sin(), 0.0);
    let y = z.cross(&heading).try_normalize(1e-12)?;
    Some(RotMat3::from_columns(&[y.cross(&z), y, z]))
}

fn worst_limit(
    traj: &PiecewiseBezier,
    t0: f64,
    t1: f64,
    v_max: f64,
    a_max: f64,
) -> Result<(f64, f64), String> {
    let (mut v_margin, mut a_margin) = (f64::INFINITY, f64::INFINITY);
    for t in samples(t0, t1, VERIFY_DT) {
        let st = traj.eval(t).map_err(|e| e.to_string())?;
        v_margin = v_margin.min(v_max - st.velocity.amax());
        a_margin = a_margin.min(a_max - st.acceleration.amax());
    }
    Ok((v_margin, a_margin))
}

/// Re-checks `plan` against `scene` and reports every check.
pub fn verify_plan(plan: &PlanResult, scene: &Scene) -> Vec<Check> {
    let mut checks = Vec::new();
    let tol = &scene.tolerances;
    let base = &plan.base;

    // Base endpoints: at rest at the mission start and end.
    match (base.eval(base.t_start()), base.eval(base.t_end())) {
        (Ok(s), Ok(e)) => {
            let err = (s.position - scene.p_start_m)
                .amax()
                .max((e.position - scene.p_end_m).amax())
                .max(s.velocity.amax())
                .max(s.acceleration.amax())
                .max(e.velocity.amax())
                .max(e.acceleration.amax());
            checks.push(Check::new(
                "base_endpoints",
                -err,
                tol.verify_position_m,
                "start/end position and rest",
            ));
        }
        _ => checks.push(Check::failed(
            "base_endpoints",
            "trajectory cannot be evaluated",
        )),
    }
    checks.push(Check::new(
        "base_continuity",
        -base.continuity_error(),
        tol.verify_position_m,
        "position, velocity and acceleration at segment joints",
    ));

    match worst_limit(
        base,
        base.t_start(),
        base.t_end(),
        scene.limits.quad.v_max,
        scene.limits.quad.a_max,
    ) {
        Ok((v, a)) => {
            checks.push(Check::new(
                "base_velocity",
                v,
                tol.verify_limits,
                "per-axis |v| <= v_max",
            ));
            checks.push(Check::new(
                "base_acceleration",
                a,
                tol.verify_limits,
                "per-axis |a| <= a_max",
            ));
        }
        Err(e) => checks.push(Check::failed("base_limits", e)),
    }

    // Corridor containment, each segment against its own cell.
    if plan.base_cells.len() == base.segments.len() {
        let mut worst: f64 = f64::INFINITY;
        for (seg, cell) in base.segments.iter().zip(&plan.base_cells) {
            for t in samples(seg.t0, seg.t1, VERIFY_DT) {
                let p = seg.position(t).unwrap_or(Vec3::repeat(f64::NAN));
                worst = worst.min(-cell.polytope.max_violation(&p));
            }
        }
        checks.push(Check::new(
            "base_corridor",
            worst,
            tol.verify_corridor_m,
            "every base sample inside its corridor cell",
        ));
    } else {
        checks.push(Check::failed(
            "base_corridor",
            "cell count does not match segment count",
        ));
    }

    if !plan.stage.plans_manipulation() {
        return checks;
    }
    if plan.grasps.len() != scene.grasps.len() {
        checks.push(Check::failed(
            "grasps",
            "grasp count does not match the scene",
        ));
        return checks;
    }
    let obstacles = scene.build_obstacles();
    let w_r = &plan.revised_workspace;
    for (k, g) in plan.grasps.iter().enumerate() {
        let name = |s: &str| format!("grasp{k}_{s}");
        let Some(ee) = &g.ee else {
            checks.push(Check::failed(name("ee"), "end-effector trajectory missing"));
            continue;
        };
        let task = &scene.grasps[k];
        let psi = task.psi_o;
        let rot = yaw_rotation(psi);
        let eval = |traj: &PiecewiseBezier, t: f64| traj.eval(t).map_err(|e| e.to_string());
        let attached = |t: f64| -> Option<Vec3> {
            let st = base.eval(t).ok()?;
            Some(st.position + thrust_attitude(&st.acceleration, psi)? * plan.p_top)
        };

        // Boundary states of the manipulation windows.
        let boundary = (|| -> Result<f64, String> {
            let start = eval(ee, g.t_b)?;
            let grasp = eval(ee, g.t_g)?;
            let release = eval(ee, g.t_r)?;
            let end = eval(ee, g.t_e)?;
            let a0 = attached(g.t_b).ok_or("singular attitude at t_B")?;
            let a1 = attached(g.t_e).ok_or("singular attitude at window end")?;
            let b_g = eval(base, g.t_g)?;
            Ok((start.position - a0)
                .amax()
                .max((end.position - a1).amax())
                .max((grasp.position - task.p_o).amax())
                .max(grasp.velocity.amax())
                .max(grasp.acceleration.amax())
                .max((release.position - task.p_o).amax())
                .max(release.velocity.amax())
                .max(release.acceleration.amax())
                .max((b_g.position - g.p_b_f).amax())
                .max(b_g.velocity.amax()))
        })();
        checks.push(match boundary {
            Ok(err) => Check::new(
                name("endpoints"),
                -err,
                tol.verify_position_m,
                "window starts/ends attached to the base, rests at the object",
            ),
            Err(e) => Check::failed(name("endpoints"), e),
        });

        match worst_limit(
            ee,
            g.t_b,
            g.t_e,
            scene.limits.ee.v_max,
            scene.limits.ee.a_max,
        ) {
            Ok((v, a)) => {
                checks.push(Check::new(
                    name("ee_velocity"),
                    v,
                    tol.verify_limits,
                    "per-axis |v| <= v_E_max",
                ));
                checks.push(Check::new(
                    name("ee_acceleration"),
                    a,
                    tol.verify_limits,
                    "per-axis |a| <= a_E_max",
                ));
            }
            Err(e) => checks.push(Check::failed(name("ee_limits"), e)),
        }

        // Geometric feasibility against the true base trajectory.
        let mut worst: f64 = f64::INFINITY;
        for t in samples(g.t_b, g.t_e, VERIFY_DT) {
            match (ee.position(t), base.position(t)) {
                (Ok(pe), Ok(pb)) => {
                    let d = rot.transpose() * (pe - pb);
                    for i in 0..3 {
                        worst = worst.min(d[i] - w_r.w_min[i]).min(w_r.w_max[i] - d[i]);
                    }
                }
                _ => worst = f64::NEG_INFINITY,
            }
        }
        checks.push(Check::new(
            name("geometric"),
            worst,
            tol.verify_geometric_m,
            "end-effector offset inside the revised workspace at 1 kHz",
        ));

        // Approach cone at the configured fraction of both windows.
        let tan = scene.cone.angle_rad.tan();
        let f = scene.cone.time_fraction;
        let t_approach = g.t_b + f * (g.t_g - g.t_b);
        let t_retract = g.t_r + (1.0 - f) * (g.t_e - g.t_r);
        let mut worst: f64 = f64::INFINITY;
        for t in [t_approach, t_retract] {
            match ee.position(t) {
                Ok(p) => {
                    let reach = (task.p_o.z - p.z) * tan;
                    worst = worst
                        .min(reach - (p.x - task.p_o.x).abs())
                        .min(reach - (p.y - task.p_o.y).abs());
                }
                Err(_) => worst = f64::NEG_INFINITY,
            }
        }
        checks.push(Check::new(
            name("cone"),
            worst,
            tol.verify_position_m,
            "lateral offset inside the cone",
        ));

        // Hold contract.
        let mut err: f64 = 0.0;
        for t in samples(g.t_g, g.t_r, VERIFY_DT) {
            match (ee.position(t), base.position(t)) {
                (Ok(pe), Ok(pb)) => {
                    err = err.max((pe - task.p_o).amax()).max((pb - g.p_b_f).amax())
                }
                _ => err = f64::INFINITY,
            }
        }
        checks.push(Check::new(
            name("hold"),
            -err,
            tol.verify_position_m,
            "end-effector at the object and base at rest during the hold",
        ));

        // Collision sweep of the arm hull over the whole manipulation.
        let mut colliding = 0usize;
        let mut first_hit: Option<(f64, usize)> = None;
        for t in samples(g.t_b, g.t_e, COLLISION_DT) {
            let (Ok(pe), Ok(pb)) = (ee.position(t), base.position(t)) else {
                colliding += 1;
                continue;
            };
            let hull = shape_polyhedron(&pb, &pe, psi, &scene.mount, &scene.shape).hull();
            for o in &obstacles {
                if gjk_query(&hull, &o.hull).intersects {
                    colliding += 1;
                    first_hit.get_or_insert((t, o.id));
                    break;
                }
            }
        }
        let detail = match first_hit {
            Some((t, id)) => {
                format!("{colliding} colliding samples, first at t = {t:.4} s with obstacle {id}")
            }
            None => "no arm-obstacle contact at 0.5 ms".to_string(),
        };
        checks.push(Check::new(
            name("collision"),
            -(colliding as f64) * COLLISION_DT,
            0.0,
            detail,
        ));
    }
    checks
}
