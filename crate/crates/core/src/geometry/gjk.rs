//! Gilbert–Johnson–Keerthi distance query between convex vertex hulls.
//!
//! The iteration runs on the Minkowski difference `A − B`. Each step adds the
//! support point in the direction of the origin and reduces the simplex to
//! the smallest face containing the point closest to the origin.

use super::{ConvexPolyhedronV, Vec3};

/// Terminate once the lower bound on the distance is within this many meters
/// of the current estimate.
pub const GJK_TOLERANCE: f64 = 1e-9;

/// Iteration cap; hitting it yields the conservative answer `intersects = true`.
pub const GJK_MAX_ITERATIONS: usize = 128;

/// Squared distance below which the origin counts as touched.
const TOUCH_SQ: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GjkResult {
    pub intersects: bool,
    pub distance: f64,
}

impl GjkResult {
    const HIT: GjkResult = GjkResult {
        intersects: true,
        distance: 0.0,
    };
}

/// Intersection test and Euclidean separation of two convex hulls.
pub fn gjk_query(pa: &ConvexPolyhedronV, pb: &ConvexPolyhedronV) -> GjkResult {
    // Order the pair canonically so swapping the arguments is bit-identical.
    if lex_cmp(pb.vertices(), pa.vertices()) == std::cmp::Ordering::Less {
        run(pb, pa)
    } else {
        run(pa, pb)
    }
}

fn lex_cmp(a: &[Vec3], b: &[Vec3]) -> std::cmp::Ordering {
    for (u, v) in a.iter().zip(b) {
        for i in 0..3 {
            match u[i].total_cmp(&v[i]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
    }
    a.len().cmp(&b.len())
}

fn support(pa: &ConvexPolyhedronV, pb: &ConvexPolyhedronV, d: &Vec3) -> Vec3 {
    pa.support(d) - pb.support(&-d)
}

fn run(pa: &ConvexPolyhedronV, pb: &ConvexPolyhedronV) -> GjkResult {
    let mut d = pa.centroid() - pb.centroid();
    if d.norm_squared() == 0.0 {
        d = Vec3::x();
    }
    let mut simplex: Vec<Vec3> = vec![support(pa, pb, &d)];
    let mut v = simplex[0];

    for _ in 0..GJK_MAX_ITERATIONS {
        let vv = v.norm_squared();
        if vv <= TOUCH_SQ {
            return GjkResult::HIT;
        }
        let w = support(pa, pb, &-v);
        // Lower bound on the distance is v.w / |v|; stop when it meets |v|.
        let gap = vv - v.dot(&w);
        if gap <= GJK_TOLERANCE * vv.sqrt() || simplex.contains(&w) {
            return GjkResult {
                intersects: false,
                distance: vv.sqrt(),
            };
        }
        simplex.push(w);
        match closest_on_simplex(&simplex) {
            Reduced::Inside => return GjkResult::HIT,
            Reduced::Point(p, keep) => {
                simplex = keep;
                v = p;
            }
        }
    }
    GjkResult::HIT
}

enum Reduced {
    Inside,
    Point(Vec3, Vec<Vec3>),
}

fn closest_on_simplex(s: &[Vec3]) -> Reduced {
    match s.len() {
        1 => Reduced::Point(s[0], s.to_vec()),
        2 => {
            let (p, keep) = closest_on_segment(s[0], s[1]);
            Reduced::Point(p, keep)
        }
        3 => {
            let (p, keep) = closest_on_triangle(s[0], s[1], s[2]);
            Reduced::Point(p, keep)
        }
        4 => closest_on_tetrahedron(s[0], s[1], s[2], s[3]),
        _ => unreachable!("simplex holds at most four points"),
    }
}

fn closest_on_segment(a: Vec3, b: Vec3) -> (Vec3, Vec<Vec3>) {
    let ab = b - a;
    let denom = ab.norm_squared();
    let t = if denom > 0.0 {
        (-a).dot(&ab) / denom
    } else {
        0.0
    };
    if t <= 0.0 {
        (a, vec![a])
    } else if t >= 1.0 {
        (b, vec![b])
    } else {
        (a + ab * t, vec![a, b])
    }
}

/// Closest point of triangle `abc` to the origin by Voronoi-region tests.
fn closest_on_triangle(a: Vec3, b: Vec3, c: Vec3) -> (Vec3, Vec<Vec3>) {
    let ab = b - a;
    let ac = c - a;
    let ap = -a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, vec![a]);
    }
    let bp = -b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, vec![b]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (a + ab * t, vec![a, b]);
    }
    let cp = -c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, vec![c]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (a + ac * t, vec![a, c]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * t, vec![b, c]);
    }
    let sum = va + vb + vc;
    if sum.abs() < f64::MIN_POSITIVE {
        // Degenerate (collinear) triangle: fall back to the best edge.
        return best_of(vec![
            closest_on_segment(a, b),
            closest_on_segment(a, c),
            closest_on_segment(b, c),
        ]);
    }
    let v = vb / sum;
    let w = vc / sum;
    (a + ab * v + ac * w, vec![a, b, c])
}

fn best_of(cands: Vec<(Vec3, Vec<Vec3>)>) -> (Vec3, Vec<Vec3>) {
    cands
        .into_iter()
        .min_by(|x, y| x.0.norm_squared().total_cmp(&y.0.norm_squared()))
        .expect("at least one candidate")
}

/// `true` when the origin and `d` lie on opposite sides of plane `abc`
/// (or the tetrahedron is flat, in which case the face is always examined).
fn origin_outside_face(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> bool {
    let n = (b - a).cross(&(c - a));
    let sign_o = (-a).dot(&n);
    let sign_d = (d - a).dot(&n);
    sign_d == 0.0 || sign_o * sign_d < 0.0
}

fn closest_on_tetrahedron(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Reduced {
    let faces = [(a, b, c, d), (a, c, d, b), (a, d, b, c), (b, d, c, a)];
    let mut best: Option<(Vec3, Vec<Vec3>)> = None;
    for (p, q, r, opp) in faces {
        if origin_outside_face(p, q, r, opp) {
            let cand = closest_on_triangle(p, q, r);
            let better = match &best {
                None => true,
                Some(b) => cand.0.norm_squared() < b.0.norm_squared(),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    match best {
        None => Reduced::Inside,
        Some((p, keep)) => Reduced::Point(p, keep),
    }
}
