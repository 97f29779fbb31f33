//! Incremental 3D convex hull returning outward facet planes.

use super::Vec3;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HullError {
    #[error("point set is degenerate (collinear or coplanar)")]
    Degenerate,
}

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    alive: bool,
}

/// Facet planes `(n, d)` with unit outward `n` such that the hull is
/// `{p | n . p <= d}` for every facet. Near-duplicate planes are merged.
pub fn convex_hull_facets(points: &[Vec3]) -> Result<Vec<(Vec3, f64)>, HullError> {
    if points.len() < 4 {
        return Err(HullError::Degenerate);
    }
    let scale = points
        .iter()
        .map(|p| p.amax())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let eps = 1e-10 * scale;

    let seed = initial_tetrahedron(points, eps)?;
    let interior = seed.iter().map(|&i| points[i]).sum::<Vec3>() / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    let [a, b, c, d] = seed;
    for tri in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        faces.push(make_face(points, tri, &interior));
    }

    for (pi, p) in points.iter().enumerate() {
        if seed.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.normal.dot(p) - f.offset > eps)
            .map(|(k, _)| k)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for &k in &visible {
            let [i, j, l] = faces[k].v;
            for e in [(i, j), (j, l), (l, i)] {
                edges.insert(e);
            }
            faces[k].alive = false;
        }
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(i, j)| !edges.contains(&(*j, *i)))
            .copied()
            .collect();
        horizon.sort_unstable();
        for (i, j) in horizon {
            faces.push(make_face(points, [i, j, pi], &interior));
        }
        if faces.len() > 4 * faces.iter().filter(|f| f.alive).count() + 64 {
            faces.retain(|f| f.alive);
        }
    }

    let mut planes: Vec<(Vec3, f64)> = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        if let Some(existing) = planes
            .iter_mut()
            .find(|(n, _)| (n - f.normal).amax() < 1e-9)
        {
            existing.1 = existing.1.max(f.offset);
        } else {
            planes.push((f.normal, f.offset));
        }
    }
    Ok(planes)
}

/// Face through the three points, oriented away from `interior`. Faces are
/// stored with winding consistent with their outward normal.
fn make_face(points: &[Vec3], tri: [usize; 3], interior: &Vec3) -> Face {
    let [i, j, l] = tri;
    let mut n = (points[j] - points[i]).cross(&(points[l] - points[i]));
    let mut v = tri;
    if n.dot(&(interior - points[i])) > 0.0 {
        n = -n;
        v = [i, l, j];
    }
    let len = n.norm();
    let normal = if len > 0.0 { n / len } else { n };
    Face {
        v,
        normal,
        offset: normal.dot(&points[i]),
        alive: true,
    }
}

fn initial_tetrahedron(points: &[Vec3], eps: f64) -> Result<[usize; 4], HullError> {
    let (mut i0, mut i1) = (0, 0);
    for (k, p) in points.iter().enumerate() {
        if p.x < points[i0].x {
            i0 = k;
        }
        if p.x > points[i1].x {
            i1 = k;
        }
    }
    if (points[i1] - points[i0]).norm() <= eps {
        // All share the same x; pick the farthest point from the first.
        i0 = 0;
        i1 = argmax(points, |p| (p - points[0]).norm());
        if (points[i1] - points[i0]).norm() <= eps {
            return Err(HullError::Degenerate);
        }
    }
    let dir = (points[i1] - points[i0]).normalize();
    let i2 = argmax(points, |p| {
        let r = p - points[i0];
        (r - dir * r.dot(&dir)).norm()
    });
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    if n.norm() <= eps {
        return Err(HullError::Degenerate);
    }
    let n = n.normalize();
    let i3 = argmax(points, |p| (p - points[i0]).dot(&n).abs());
    if (points[i3] - points[i0]).dot(&n).abs() <= eps {
        return Err(HullError::Degenerate);
    }
    Ok([i0, i1, i2, i3])
}

fn argmax(points: &[Vec3], f: impl Fn(&Vec3) -> f64) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, p) in points.iter().enumerate() {
        let v = f(p);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}
