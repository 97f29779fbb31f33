//! Property-based checks of the invariants each module promises.

mod common;

use aerial_pnp::bezier::{bernstein_row, BezierSegment};
use aerial_pnp::collision::{
    pinhole_mirror, update_weights, CollisionInterval, MirrorEntry, Obstacle, ObstacleMirrorSet,
};
use aerial_pnp::delta::{
    closure_residuals, forward_kinematics, inverse_kinematics, DeltaParams, JointAngles,
    JointLimits,
};
use aerial_pnp::feasibility::{geometric_feasibility_ok, RevisedWorkspace};
use aerial_pnp::geometry::{
    aabb_vertices, gjk_query, polytope_contains, yaw_rotation, Aabb, GridMap3D, HalfspacePolytope,
};
use aerial_pnp::grid_planner::{astar, feasible_grasp_position, inflate};
use aerial_pnp::qp::{solve_qp, QpProblem};
use aerial_pnp::{RotMat3, Vec3};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn aabb(range: f64) -> impl Strategy<Value = Aabb> {
    (vec3(range), (0.01..1.0, 0.01..1.0, 0.01..1.0)).prop_map(|(c, (a, b, d))| {
        let h = Vec3::new(a, b, d);
        Aabb::new(c - h, c + h)
    })
}

fn paper_box() -> RevisedWorkspace {
    RevisedWorkspace::new(Vec3::new(-0.06, -0.06, -0.60), Vec3::new(0.06, 0.06, -0.40)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gjk_is_symmetric(a in aabb(2.0), b in aabb(2.0)) {
        let (pa, pb) = (aabb_vertices(&a), aabb_vertices(&b));
        prop_assert_eq!(gjk_query(&pa, &pb), gjk_query(&pb, &pa));
    }

    #[test]
    fn gjk_distance_follows_separating_translation(a in aabb(1.0), gap in 0.01..2.0f64, delta in 0.0..1.0f64) {
        // Place a second box `gap` beyond the first along +x, overlapping in y and z.
        let shift = Vec3::new(a.max.x - a.min.x + gap, 0.0, 0.0);
        let b = Aabb::new(a.min + shift, a.max + shift);
        let (pa, pb) = (aabb_vertices(&a), aabb_vertices(&b));
        let d0 = gjk_query(&pa, &pb);
        let d1 = gjk_query(&pa, &pb.translated(&Vec3::new(delta, 0.0, 0.0)));
        prop_assert!(!d0.intersects);
        prop_assert!((d0.distance - gap).abs() < 1e-9);
        prop_assert!((d1.distance - d0.distance - delta).abs() < 1e-9);
    }

    #[test]
    fn box_polytope_contains_its_vertices(b in aabb(5.0)) {
        let poly = HalfspacePolytope::from_aabb(&b);
        for v in aabb_vertices(&b).vertices() {
            prop_assert!(polytope_contains(&poly, v, 1e-12));
        }
    }

    #[test]
    fn yaw_rotations_invert(psi in -10.0..10.0f64) {
        let r = yaw_rotation(psi) * yaw_rotation(-psi);
        prop_assert!((r - RotMat3::identity()).amax() < 1e-12);
    }

    #[test]
    fn kinematics_round_trip_within_limits(q in proptest::array::uniform3(JointLimits::default().lo..JointLimits::default().hi)) {
        let params = DeltaParams::default();
        let q = JointAngles(q);
        let p = forward_kinematics(&params, &q).unwrap();
        for r in closure_residuals(&params, &q, &p) {
            prop_assert!(r < 1e-9);
        }
        let q2 = inverse_kinematics(&params, &p).unwrap();
        let p2 = forward_kinematics(&params, &q2).unwrap();
        prop_assert!((p2 - p).norm() < 1e-9);
    }

    #[test]
    fn geometric_feasibility_is_yaw_equivariant(d in vec3(0.7), p_b in vec3(5.0), psi in -4.0..4.0f64) {
        let w = paper_box();
        let reference = geometric_feasibility_ok(&(p_b + d), &p_b, 0.0, &w, 0.0);
        prop_assert_eq!(geometric_feasibility_ok(&(p_b + yaw_rotation(psi) * d), &p_b, psi, &w, 0.0), reference);
    }

    #[test]
    fn grasp_position_centres_the_workspace_on_the_object(p_o in vec3(5.0), psi in -4.0..4.0f64) {
        let w = paper_box();
        let p_b = feasible_grasp_position(&p_o, psi, &w);
        let back = p_b + yaw_rotation(psi) * (0.5 * (w.w_min + w.w_max));
        prop_assert!((back - p_o).amax() < 1e-12);
    }

    #[test]
    fn bernstein_basis_is_a_partition_of_unity(n in 1usize..12, tau in 0.0..=1.0f64) {
        let row = bernstein_row(n, tau);
        prop_assert!(row.iter().all(|&b| b >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bezier_endpoint_derivatives(cps in proptest::collection::vec(vec3(2.0), 2..10), t0 in -5.0..5.0f64, s in 0.1..4.0f64) {
        let seg = BezierSegment::new(cps.clone(), t0, t0 + s).unwrap();
        let n = (cps.len() - 1) as f64;
        let v0 = seg.eval(t0).unwrap().velocity;
        let v1 = seg.eval(t0 + s).unwrap().velocity;
        let last = cps.len() - 1;
        prop_assert!((v0 - n * (cps[1] - cps[0]) / s).amax() < 1e-9);
        prop_assert!((v1 - n * (cps[last] - cps[last - 1]) / s).amax() < 1e-9);
    }

    #[test]
    fn mirror_midpoint_identity(l in vec3(3.0), r in vec3(3.0), o in vec3(3.0)) {
        let m = pinhole_mirror(&l, &r, &o);
        prop_assert!((0.5 * (o + m) - 0.5 * (l + r)).amax() < 1e-12);
    }

    #[test]
    fn weights_never_decrease(lengths in proptest::collection::vec(0.0..0.5f64, 1..8), alpha in 0.1..1e4f64) {
        let obstacles = vec![Obstacle { id: 4, hull: aabb_vertices(&Aabb::new(Vec3::zeros(), Vec3::repeat(1.0))) }];
        let mut mirrors = ObstacleMirrorSet::default();
        let mut previous = 0.0;
        for len in lengths {
            let iv = CollisionInterval {
                obstacle_id: 4,
                p_left: Vec3::zeros(),
                p_right: Vec3::new(len, 0.0, 0.0),
                t_left: 0.0,
                t_right: 0.1,
            };
            mirrors = update_weights(&mirrors, &[iv], &obstacles, alpha);
            let lambda = mirrors.lambda_of(4).unwrap();
            prop_assert!(lambda >= previous);
            prop_assert!((lambda - previous - alpha * len).abs() < 1e-9 * (1.0 + lambda));
            previous = lambda;
        }
        let entry: &MirrorEntry = &mirrors.entries[0];
        prop_assert_eq!(entry.obstacle_id, 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn qp_solutions_satisfy_kkt_and_repeat_bit_for_bit(seed in any::<u64>(), n in 2usize..12) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q_mat = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let q_vec = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let m = n + 2;
        let a_ie = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        // The origin is strictly feasible, so the problem always has a solution.
        let b_ie = DVector::from_fn(m, |_, _| rng.gen_range(0.05..1.0));
        let a_eq = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let problem = QpProblem {
            a_eq,
            b_eq: DVector::zeros(1),
            a_ie,
            b_ie,
            ..QpProblem::unconstrained(q_mat, q_vec)
        };
        let first = solve_qp(&problem).unwrap();
        prop_assert!(first.kkt.max() < 1e-6, "{:?}", first.kkt);
        let second = solve_qp(&problem).unwrap();
        prop_assert_eq!(first.x, second.x);
    }

    #[test]
    fn grid_paths_stay_in_free_space(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut grid = GridMap3D::new(Vec3::zeros(), 0.2, [14, 14, 6]);
        for _ in 0..6 {
            let c = Vec3::new(rng.gen_range(0.8..2.0), rng.gen_range(0.0..2.8), 0.0);
            grid.fill_box(&Aabb::new(c, c + Vec3::new(0.2, 0.4, 1.2)));
        }
        let (start, goal) = (Vec3::new(0.5, 0.5, 0.6), Vec3::new(2.3, 2.3, 0.6));
        let radius = 0.2;
        let inflated = inflate(&grid, radius);
        if let Ok(path) = astar(&grid, &start, &goal, radius) {
            prop_assert!(path.cells.iter().all(|c| !inflated.is_occupied(*c)));
            prop_assert!(path.cost + 1e-9 >= (inflated.cell_center(*path.cells.last().unwrap()) - inflated.cell_center(path.cells[0])).norm());
            for w in path.cells.windows(2) {
                prop_assert!((0..3).all(|a| (w[0][a] as i64 - w[1][a] as i64).abs() <= 1));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_missions_verify(seed in 1000u64..100_000) {
        let scene = common::random_scene(seed);
        let m = common::plan(&scene, true).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let failed: Vec<_> = m.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        prop_assert!(failed.is_empty(), "seed {}: {:?}", seed, failed);
    }
}
