//! Vectors, rotations, convex sets and occupancy grids shared by every planner stage.

mod gjk;
mod grid;
mod hull;
pub mod lp;

pub use gjk::{gjk_query, GjkResult, GJK_MAX_ITERATIONS, GJK_TOLERANCE};
pub use grid::{CellIndex, GridMap3D};
pub use hull::{convex_hull_facets, HullError};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Position or direction in meters (or unitless where context dictates).
pub type Vec3 = Vector3<f64>;

/// 3x3 rotation matrix.
pub type RotMat3 = Matrix3<f64>;

/// Rows of a halfspace system shorter than this are treated as zero rows.
const ZERO_ROW: f64 = 1e-14;

/// Rotation about the z axis by `psi` radians.
pub fn yaw_rotation(psi: f64) -> RotMat3 {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about the x axis (roll).
pub fn roll_rotation(phi: f64) -> RotMat3 {
    let (s, c) = phi.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis (pitch).
pub fn pitch_rotation(theta: f64) -> RotMat3 {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Checks orthonormality and a positive determinant within `tol`.
pub fn is_rotation(r: &RotMat3, tol: f64) -> bool {
    let err = (r * r.transpose() - RotMat3::identity()).abs().max();
    err <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Convex region `{p | A p <= b}` with unit-norm rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspacePolytope {
    normals: Vec<Vec3>,
    offsets: Vec<f64>,
}

impl HalfspacePolytope {
    /// Builds the polytope and normalizes every row so offsets are metric.
    ///
    /// Zero rows with a nonnegative offset are dropped; a zero row with a
    /// negative offset is kept as an always-violated constraint.
    pub fn new(normals: Vec<Vec3>, offsets: Vec<f64>) -> Self {
        assert_eq!(normals.len(), offsets.len(), "row count mismatch");
        let mut out = Self {
            normals: Vec::with_capacity(normals.len()),
            offsets: Vec::with_capacity(offsets.len()),
        };
        for (a, b) in normals.into_iter().zip(offsets) {
            out.push_row(a, b);
        }
        out
    }

    /// Axis-aligned box `[min, max]`.
    pub fn from_aabb(b: &Aabb) -> Self {
        let mut normals = Vec::with_capacity(6);
        let mut offsets = Vec::with_capacity(6);
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = 1.0;
            normals.push(e);
            offsets.push(b.max[axis]);
            normals.push(-e);
            offsets.push(-b.min[axis]);
        }
        Self::new(normals, offsets)
    }

    fn push_row(&mut self, a: Vec3, b: f64) {
        let n = a.norm();
        if n < ZERO_ROW {
            if b < 0.0 {
                self.normals.push(Vec3::zeros());
                self.offsets.push(b);
            }
            return;
        }
        self.normals.push(a / n);
        self.offsets.push(b / n);
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Vec3, f64)> {
        self.normals.iter().zip(self.offsets.iter().copied())
    }

    /// Largest value of `a_i . p - b_i` over all rows (negative when strictly inside).
    pub fn max_violation(&self, p: &Vec3) -> f64 {
        self.rows()
            .map(|(a, b)| a.dot(p) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Stacks the rows of both systems (set intersection).
    pub fn intersect(&self, other: &HalfspacePolytope) -> HalfspacePolytope {
        let mut out = self.clone();
        out.normals.extend_from_slice(&other.normals);
        out.offsets.extend_from_slice(&other.offsets);
        out
    }

    /// Moves every face inward by `margin` meters.
    pub fn shrunk(&self, margin: f64) -> HalfspacePolytope {
        let mut out = self.clone();
        for (a, b) in out.normals.iter().zip(out.offsets.iter_mut()) {
            if a.norm() > 0.0 {
                *b -= margin;
            }
        }
        out
    }

    /// Image of the set under `p -> r p + t`.
    pub fn transformed(&self, r: &RotMat3, t: &Vec3) -> HalfspacePolytope {
        // a.(r^T (p - t)) <= b  <=>  (r a).p <= b + (r a).t
        let normals: Vec<Vec3> = self.normals.iter().map(|a| r * a).collect();
        let offsets = normals
            .iter()
            .zip(&self.offsets)
            .map(|(ra, b)| b + ra.dot(t))
            .collect();
        HalfspacePolytope { normals, offsets }
    }

    /// Center and radius of the largest inscribed ball, `None` when the system is
    /// infeasible or unbounded.
    pub fn chebyshev_center(&self) -> Option<(Vec3, f64)> {
        lp::chebyshev_center(self)
    }
}

/// `true` iff `A p <= b + tol` componentwise.
pub fn polytope_contains(poly: &HalfspacePolytope, p: &Vec3, tol: f64) -> bool {
    debug_assert!(tol >= 0.0);
    poly.rows().all(|(a, b)| a.dot(p) <= b + tol)
}

/// Convex hull of a finite vertex set, used as a GJK support map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolyhedronV {
    vertices: Vec<Vec3>,
}

impl ConvexPolyhedronV {
    pub fn new(vertices: Vec<Vec3>) -> Self {
        assert!(
            !vertices.is_empty(),
            "a polyhedron needs at least one vertex"
        );
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    /// Vertex maximizing `d . v`; ties resolve to the lowest index.
    pub fn support(&self, d: &Vec3) -> Vec3 {
        let mut best = self.vertices[0];
        let mut best_dot = best.dot(d);
        for v in &self.vertices[1..] {
            let s = v.dot(d);
            if s > best_dot {
                best_dot = s;
                best = *v;
            }
        }
        best
    }

    /// Mean of the vertices.
    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn bounding_box(&self) -> Aabb {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices[1..] {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb { min, max }
    }

    pub fn translated(&self, t: &Vec3) -> ConvexPolyhedronV {
        Self::new(self.vertices.iter().map(|v| v + t).collect())
    }
}

/// Axis-aligned box `min <= p <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!((0..3).all(|i| min[i] <= max[i]), "aabb bounds out of order");
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// The 8 corners of a box, ordered by the bit pattern (x, y, z) of the index.
pub fn aabb_vertices(b: &Aabb) -> ConvexPolyhedronV {
    let vertices = (0..8)
        .map(|k| {
            Vec3::new(
                if k & 1 == 0 { b.min.x } else { b.max.x },
                if k & 2 == 0 { b.min.y } else { b.max.y },
                if k & 4 == 0 { b.min.z } else { b.max.z },
            )
        })
        .collect();
    ConvexPolyhedronV::new(vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn unit_cube() -> HalfspacePolytope {
        HalfspacePolytope::from_aabb(&Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0)))
    }

    #[test]
    fn yaw_identity_and_quarter_turn() {
        assert_eq!(yaw_rotation(0.0), RotMat3::identity());
        let r = yaw_rotation(FRAC_PI_2);
        let cols = [
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::z(),
        ];
        for (j, c) in cols.iter().enumerate() {
            assert_relative_eq!(r.column(j).into_owned(), *c, epsilon = 1e-15);
        }
    }

    #[test]
    fn yaw_is_orthonormal() {
        let r = yaw_rotation(0.3);
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += r[(i, k)] * r[(j, k)];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                err = err.max((s - expect).abs());
            }
        }
        assert!(err < 1e-12);
        assert!(is_rotation(&r, 1e-9));
    }

    #[test]
    fn yaw_inverse_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let psi = rng.gen_range(-10.0..10.0);
            let prod = yaw_rotation(psi) * yaw_rotation(-psi);
            assert!((prod - RotMat3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn cube_membership() {
        let cube = unit_cube();
        assert!(polytope_contains(&cube, &Vec3::zeros(), 0.0));
        assert!(!polytope_contains(&cube, &Vec3::new(2.0, 0.0, 0.0), 0.0));
        assert!(polytope_contains(&cube, &Vec3::new(1.05, 0.0, 0.0), 0.1));
    }

    #[test]
    fn rows_are_normalized() {
        let p = HalfspacePolytope::new(vec![Vec3::new(3.0, 0.0, 4.0)], vec![10.0]);
        assert_relative_eq!(p.normals()[0].norm(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.offsets()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_rows() {
        let p = HalfspacePolytope::new(vec![Vec3::zeros(), Vec3::zeros()], vec![1.0, -1.0]);
        assert_eq!(p.len(), 1);
        assert!(!polytope_contains(&p, &Vec3::zeros(), 0.5));
    }

    #[test]
    fn aabb_corner_sets() {
        let unit = aabb_vertices(&Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)));
        assert_eq!(unit.vertices().len(), 8);
        let mut seen: Vec<[i32; 3]> = unit
            .vertices()
            .iter()
            .map(|v| [v.x as i32, v.y as i32, v.z as i32])
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);

        let c = Vec3::new(0.3, -0.2, 1.0);
        let degenerate = aabb_vertices(&Aabb::new(c, c));
        assert!(degenerate.vertices().iter().all(|v| *v == c));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let e = Vec3::from_fn(|_, _| rng.gen_range(0.0..2.0));
            let b = Aabb::new(a, a + e);
            let poly = HalfspacePolytope::from_aabb(&b);
            for v in aabb_vertices(&b).vertices() {
                assert!(b.contains(v, 0.0));
                assert!(polytope_contains(&poly, v, 1e-12));
            }
        }
    }

    #[test]
    fn transformed_matches_pointwise_map() {
        let cube = unit_cube();
        let r = yaw_rotation(0.7) * roll_rotation(0.2);
        let t = Vec3::new(0.5, -1.0, 2.0);
        let moved = cube.transformed(&r, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let pre = r.transpose() * (p - t);
            assert_eq!(
                polytope_contains(&moved, &p, 0.0),
                polytope_contains(&cube, &pre, 0.0)
            );
        }
    }
}
