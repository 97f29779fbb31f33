//! Arm collision checking during manipulation: the shape polyhedron enclosing
//! arm and gripper, local-map filtering, the sampled GJK sweep, and the
//! obstacle-mirror penalty bookkeeping.

use crate::bezier::{BezierSegment, PiecewiseBezier};
use crate::delta::MountTransform;
use crate::geometry::{aabb_vertices, gjk_query, yaw_rotation, Aabb, ConvexPolyhedronV, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default sweep step, seconds.
pub const DEFAULT_SWEEP_DT: f64 = 5e-3;
/// Default verification sweep step, seconds.
pub const FINE_SWEEP_DT: f64 = 5e-4;

/// Six-vertex hull around the arm: a triangle of radius `r_S` at the base and
/// a small triangle at the end-effector offset by `l_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePolyhedron {
    pub upper: [Vec3; 3],
    pub lower: [Vec3; 3],
}

impl ShapePolyhedron {
    pub fn hull(&self) -> ConvexPolyhedronV {
        let mut v = self.upper.to_vec();
        v.extend_from_slice(&self.lower);
        ConvexPolyhedronV::new(v)
    }
}

/// Shape sizes of the arm hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    #[serde(rename = "r_S_m")]
    pub r_s: f64,
    #[serde(rename = "l_C_m")]
    pub l_c: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            r_s: 0.5,
            l_c: 0.06,
        }
    }
}

/// Shape polyhedron at base position `p_b`, end-effector position `p_e` and yaw `psi`.
pub fn shape_polyhedron(
    p_b: &Vec3,
    p_e: &Vec3,
    psi: f64,
    mount: &MountTransform,
    shape: &ShapeParams,
) -> ShapePolyhedron {
    let r = yaw_rotation(psi) * mount.r_d_b;
    let upper = std::array::from_fn(|k| {
        let a = (1.0 + 2.0 * (k + 1) as f64) * PI / 3.0;
        p_b + r * Vec3::new(shape.r_s * a.cos(), shape.r_s * a.sin(), 0.0)
    });
    let lower = std::array::from_fn(|k| {
        let a = (1.0 + 2.0 * (k + 1) as f64) * PI / 6.0;
        p_e + r * Vec3::new(shape.l_c * a.cos(), shape.l_c * a.sin(), shape.l_c)
    });
    ShapePolyhedron { upper, lower }
}

/// Box around the base position at the window start and the object, padded by `l_s`.
pub fn local_map_box(p_b: &Vec3, p_o: &Vec3, l_s: f64) -> Aabb {
    assert!(l_s >= 0.0, "padding must be nonnegative");
    let pad = Vec3::repeat(l_s);
    Aabb::new(p_b.inf(p_o) - pad, p_b.sup(p_o) + pad)
}

/// Convex obstacle given by its vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: usize,
    pub hull: ConvexPolyhedronV,
}

impl Obstacle {
    /// Center used for mirroring: mean of the hull vertices.
    pub fn centroid(&self) -> Vec3 {
        self.hull.centroid()
    }
}

/// Time span over which the arm hull intersects one obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionInterval {
    pub obstacle_id: usize,
    /// End-effector reference position at the first colliding sample.
    #[serde(rename = "T_L_m")]
    pub p_left: Vec3,
    /// End-effector reference position at the last colliding sample.
    #[serde(rename = "T_R_m")]
    pub p_right: Vec3,
    #[serde(rename = "t_L_s")]
    pub t_left: f64,
    #[serde(rename = "t_R_s")]
    pub t_right: f64,
}

impl CollisionInterval {
    /// `‖T_L − T_R‖`.
    pub fn length(&self) -> f64 {
        (self.p_left - self.p_right).norm()
    }
}

/// Sweep outcome with query accounting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub intervals: Vec<CollisionInterval>,
    /// Obstacles that passed the local-map filter.
    pub candidates: Vec<usize>,
    /// GJK queries issued against candidate obstacles.
    pub gjk_queries: usize,
}

/// Arm geometry needed to place the shape polyhedron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmShape {
    pub psi: f64,
    pub mount: MountTransform,
    pub shape: ShapeParams,
}

/// Sample times covering `[t0, t1]` at step `dt`, ending exactly at `t1`.
pub fn sample_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "sweep step must be positive");
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    (0..=n)
        .map(|k| if k == n { t1 } else { t0 + k as f64 * dt })
        .collect()
}

/// Samples the end-effector segment and the base trajectory over the
/// segment's window, and reports, per obstacle of the local map that the arm
/// hull touches, the first and last colliding samples.
pub fn sweep_collisions(
    ee: &BezierSegment,
    quad: &PiecewiseBezier,
    arm: &ArmShape,
    obstacles: &[Obstacle],
    local_box: &Aabb,
    dt: f64,
) -> SweepReport {
    let box_hull = aabb_vertices(local_box);
    let candidates: Vec<&Obstacle> = obstacles
        .iter()
        .filter(|o| {
            o.hull.bounding_box().overlaps(local_box) && gjk_query(&o.hull, &box_hull).intersects
        })
        .collect();
    let mut report = SweepReport {
        candidates: candidates.iter().map(|o| o.id).collect(),
        ..Default::default()
    };
    if candidates.is_empty() {
        return report;
    }
    let t0 = ee.t0.max(quad.t_start());
    let t1 = ee.t1.min(quad.t_end());
    let times = sample_times(t0, t1, dt);
    let mut first: Vec<Option<(f64, Vec3)>> = vec![None; candidates.len()];
    let mut last: Vec<Option<(f64, Vec3)>> = vec![None; candidates.len()];
    for &t in &times {
        let p_e = ee.position(t).expect("time inside the window");
        let p_b = quad.position(t).expect("time inside the window");
        let hull = shape_polyhedron(&p_b, &p_e, arm.psi, &arm.mount, &arm.shape).hull();
        for (j, o) in candidates.iter().enumerate() {
            report.gjk_queries += 1;
            if gjk_query(&hull, &o.hull).intersects {
                if first[j].is_none() {
                    first[j] = Some((t, p_e));
                }
                last[j] = Some((t, p_e));
            }
        }
    }
    for (j, o) in candidates.iter().enumerate() {
        if let (Some((tl, pl)), Some((tr, pr))) = (first[j], last[j]) {
            report.intervals.push(CollisionInterval {
                obstacle_id: o.id,
                p_left: pl,
                p_right: pr,
                t_left: tl,
                t_right: tr,
            });
        }
    }
    report
}

/// Reflection of the obstacle center `o` through the midpoint of `T_L`, `T_R`.
pub fn pinhole_mirror(t_l: &Vec3, t_r: &Vec3, o: &Vec3) -> Vec3 {
    let p_p = 0.5 * (t_l + t_r);
    2.0 * p_p - o
}

/// Attractor point and weight for one obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorEntry {
    pub obstacle_id: usize,
    #[serde(rename = "p_M_m")]
    pub p_m: Vec3,
    pub lambda: f64,
}

/// Mirrors of every obstacle that has collided so far.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObstacleMirrorSet {
    pub entries: Vec<MirrorEntry>,
}

impl ObstacleMirrorSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambda_of(&self, obstacle_id: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.obstacle_id == obstacle_id)
            .map(|e| e.lambda)
    }

    /// `Σ λ_k` and `Σ λ_k p_M,k`.
    pub fn weighted_sums(&self) -> (f64, Vec3) {
        self.entries.iter().fold((0.0, Vec3::zeros()), |(l, p), e| {
            (l + e.lambda, p + e.p_m * e.lambda)
        })
    }
}

/// Grows weights by `alpha · ‖T_L − T_R‖` and refreshes mirrors of the
/// obstacles in `intervals`; other entries are left unchanged.
pub fn update_weights(
    mirrors: &ObstacleMirrorSet,
    intervals: &[CollisionInterval],
    obstacles: &[Obstacle],
    alpha: f64,
) -> ObstacleMirrorSet {
    assert!(alpha > 0.0, "weight step must be positive");
    let mut out = mirrors.clone();
    for iv in intervals {
        let center = obstacles
            .iter()
            .find(|o| o.id == iv.obstacle_id)
            .map(Obstacle::centroid)
            .expect("interval refers to a known obstacle");
        let p_m = pinhole_mirror(&iv.p_left, &iv.p_right, &center);
        let step = alpha * iv.length();
        match out
            .entries
            .iter_mut()
            .find(|e| e.obstacle_id == iv.obstacle_id)
        {
            Some(e) => {
                e.lambda += step;
                e.p_m = p_m;
            }
            None => out.entries.push(MirrorEntry {
                obstacle_id: iv.obstacle_id,
                p_m,
                lambda: step,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::aabb_vertices;
    use approx::assert_relative_eq;

    fn identity_mount() -> MountTransform {
        MountTransform {
            r_d_b: crate::geometry::RotMat3::identity(),
            p_c_b: Vec3::zeros(),
        }
    }

    fn box_obstacle(id: usize, min: Vec3, max: Vec3) -> Obstacle {
        Obstacle {
            id,
            hull: aabb_vertices(&Aabb::new(min, max)),
        }
    }

    #[test]
    fn shape_vertices_follow_displayed_offsets() {
        let shape = ShapeParams {
            r_s: 0.5,
            l_c: 0.06,
        };
        let pb = Vec3::new(1.0, 2.0, -3.0);
        let s = shape_polyhedron(&pb, &Vec3::zeros(), 0.0, &identity_mount(), &shape);
        assert_relative_eq!(s.upper[0], pb + Vec3::new(-0.5, 0.0, 0.0), epsilon = 1e-12);
        let s0 = shape_polyhedron(
            &Vec3::zeros(),
            &Vec3::zeros(),
            0.0,
            &identity_mount(),
            &shape,
        );
        for v in &s0.lower {
            assert_relative_eq!(v.z, 0.06, epsilon = 1e-15);
            assert_relative_eq!(v.xy().norm(), 0.06, epsilon = 1e-12);
        }
        for v in &s0.upper {
            assert_relative_eq!(v.norm(), 0.5, epsilon = 1e-12);
        }
        let psi = 0.7;
        let a = shape_polyhedron(
            &pb,
            &Vec3::new(0.1, 0.2, 0.3),
            psi,
            &MountTransform::default(),
            &shape,
        );
        let b = shape_polyhedron(
            &pb,
            &Vec3::new(0.1, 0.2, 0.3),
            psi + 2.0 * PI,
            &MountTransform::default(),
            &shape,
        );
        for k in 0..3 {
            assert!((a.upper[k] - b.upper[k]).norm() < 1e-12);
            assert!((a.lower[k] - b.lower[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn local_box_examples() {
        let b = local_map_box(
            &Vec3::new(0.0, 0.0, -2.0),
            &Vec3::new(0.0, -2.0, -1.24),
            0.2,
        );
        assert_relative_eq!(b.min, Vec3::new(-0.2, -2.2, -2.2), epsilon = 1e-12);
        assert_relative_eq!(b.max, Vec3::new(0.2, 0.2, -1.04), epsilon = 1e-12);
        let c = Vec3::new(0.3, 0.1, -1.0);
        let b = local_map_box(&c, &c, 0.2);
        assert_relative_eq!(b.extent(), Vec3::repeat(0.4), epsilon = 1e-12);
        let b = local_map_box(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0), 0.0);
        assert_eq!(b.min, Vec3::zeros());
        assert_eq!(b.max, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn mirror_examples() {
        let o = Vec3::new(0.3, -0.2, 1.0);
        assert_eq!(pinhole_mirror(&o, &o, &o), o);
        let t = Vec3::new(1.0, 1.0, 1.0);
        assert_eq!(
            pinhole_mirror(&t, &t, &Vec3::zeros()),
            Vec3::new(2.0, 2.0, 2.0)
        );
        let (l, r) = (Vec3::new(0.1, 0.5, -1.0), Vec3::new(0.4, -0.25, -1.5));
        let m = pinhole_mirror(&l, &r, &o);
        assert_relative_eq!(0.5 * (o + m), 0.5 * (l + r), epsilon = 1e-15);
    }

    #[test]
    fn weight_updates() {
        let obs = vec![box_obstacle(7, Vec3::zeros(), Vec3::repeat(1.0))];
        let iv = CollisionInterval {
            obstacle_id: 7,
            p_left: Vec3::zeros(),
            p_right: Vec3::new(0.26, 0.0, 0.0),
            t_left: 0.0,
            t_right: 0.1,
        };
        let m1 = update_weights(&ObstacleMirrorSet::default(), &[iv], &obs, 3.0);
        assert_relative_eq!(m1.lambda_of(7).unwrap(), 0.78, epsilon = 1e-12);
        let m2 = update_weights(&m1, &[iv], &obs, 3.0);
        assert_relative_eq!(m2.lambda_of(7).unwrap(), 2.0 * 0.78, epsilon = 1e-12);
        let point = CollisionInterval {
            p_right: Vec3::zeros(),
            ..iv
        };
        let m3 = update_weights(&m2, &[point], &obs, 3.0);
        assert_eq!(m3.lambda_of(7), m2.lambda_of(7));
        let m4 = update_weights(&m2, &[], &obs, 3.0);
        assert_eq!(m4, m2);
    }

    fn straight_trajectories(t1: f64) -> (BezierSegment, PiecewiseBezier) {
        let ee = BezierSegment::new(
            vec![Vec3::new(-1.0, 0.0, -1.0), Vec3::new(1.0, 0.0, -1.0)],
            0.0,
            t1,
        )
        .unwrap();
        let quad = PiecewiseBezier::new(vec![BezierSegment::new(
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            0.0,
            t1,
        )
        .unwrap()])
        .unwrap();
        (ee, quad)
    }

    fn arm() -> ArmShape {
        ArmShape {
            psi: 0.0,
            mount: identity_mount(),
            shape: ShapeParams {
                r_s: 0.1,
                l_c: 0.02,
            },
        }
    }

    #[test]
    fn sweep_filters_and_brackets() {
        let (ee, quad) = straight_trajectories(1.0);
        let local = Aabb::new(Vec3::new(-1.5, -0.5, -1.5), Vec3::new(1.5, 0.5, 0.5));
        // Far obstacle is never queried.
        let far = box_obstacle(1, Vec3::new(5.0, 5.0, 5.0), Vec3::new(6.0, 6.0, 6.0));
        let r = sweep_collisions(&ee, &quad, &arm(), std::slice::from_ref(&far), &local, 0.01);
        assert!(r.intervals.is_empty());
        assert_eq!(r.gjk_queries, 0);
        // Obstacle containing everything collides over the whole window.
        let huge = box_obstacle(2, Vec3::repeat(-10.0), Vec3::repeat(10.0));
        let r = sweep_collisions(&ee, &quad, &arm(), &[far, huge], &local, 0.01);
        assert_eq!(r.candidates, vec![2]);
        assert_eq!(r.intervals.len(), 1);
        assert_eq!(r.intervals[0].t_left, 0.0);
        assert_eq!(r.intervals[0].t_right, 1.0);
    }

    #[test]
    fn thin_obstacle_interval_matches_refinement() {
        let (ee, quad) = straight_trajectories(2.0);
        let local = Aabb::new(Vec3::new(-1.5, -0.5, -1.5), Vec3::new(1.5, 0.5, 0.5));
        let wall = box_obstacle(3, Vec3::new(0.3, -0.3, -0.6), Vec3::new(0.32, 0.3, -0.4));
        let dt = 0.01;
        let coarse = sweep_collisions(&ee, &quad, &arm(), std::slice::from_ref(&wall), &local, dt);
        let fine = sweep_collisions(&ee, &quad, &arm(), &[wall], &local, dt / 10.0);
        assert_eq!(coarse.intervals.len(), 1);
        let speed = 1.0; // 2 m in 2 s
        assert!(
            (coarse.intervals[0].length() - fine.intervals[0].length()).abs() <= 2.0 * dt * speed
        );
        assert!(coarse.intervals[0].length() > 0.0);
    }

    #[test]
    fn sample_times_cover_window() {
        let t = sample_times(1.0, 1.5, 0.1);
        assert_eq!(t.len(), 6);
        assert_eq!(*t.last().unwrap(), 1.5);
        let t = sample_times(0.0, 0.05, 0.1);
        assert_eq!(t, vec![0.0, 0.05]);
    }
}
