//! Safe flight corridors: chains of overlapping free boxes grown around a grid
//! path, plus the grasp-stage cell derived from the revised workspace.

use crate::feasibility::RevisedWorkspace;
use crate::geometry::{yaw_rotation, Aabb, CellIndex, GridMap3D, HalfspacePolytope, Vec3};
use crate::grid_planner::GridPath;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Containment tolerance for overlap witnesses, meters.
const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorridorError {
    #[error("cells {0} and {1} do not overlap")]
    CorridorGap(usize, usize),
    #[error("path is empty or leaves the free space")]
    InvalidPath,
    #[error("invalid time allocation: {0}")]
    InvalidAllocation(String),
}

/// Role of a corridor cell in the mission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Free box around the grid path.
    Moving,
    /// Base region from which the object is inside the arm's box.
    Grasp,
}

/// One convex cell with its time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorCell {
    pub kind: CellKind,
    pub polytope: HalfspacePolytope,
    /// Axis-aligned bounds (exact for moving boxes, enclosing for grasp cells).
    pub bounds: Aabb,
    pub duration_s: f64,
}

/// Ordered cells; `overlaps[k]` lies in both `cells[k]` and `cells[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub cells: Vec<CorridorCell>,
    pub overlaps: Vec<Vec3>,
}

impl Corridor {
    pub fn durations(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.duration_s).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.cells.iter().map(|c| c.duration_s).sum()
    }

    /// Checks every overlap witness against both neighbors.
    pub fn check_overlaps(&self) -> Result<(), CorridorError> {
        if self.overlaps.len() + 1 != self.cells.len() {
            return Err(CorridorError::CorridorGap(0, self.cells.len()));
        }
        for (k, w) in self.overlaps.iter().enumerate() {
            let a = &self.cells[k].polytope;
            let b = &self.cells[k + 1].polytope;
            if a.max_violation(w) > WITNESS_TOL || b.max_violation(w) > WITNESS_TOL {
                return Err(CorridorError::CorridorGap(k, k + 1));
            }
        }
        Ok(())
    }

    /// Scales every duration by `factor`.
    pub fn stretched(&self, factor: f64) -> Corridor {
        let mut out = self.clone();
        for c in &mut out.cells {
            c.duration_s *= factor;
        }
        out
    }

    /// Appends `cell`, using `witness` as the overlap with the current last cell.
    pub fn push_cell(&mut self, cell: CorridorCell, witness: Vec3) -> Result<(), CorridorError> {
        self.cells.push(cell);
        self.overlaps.push(witness);
        let n = self.cells.len();
        self.check_pair(n - 2)
    }

    /// Prepends `cell`, using `witness` as the overlap with the current first cell.
    pub fn prepend_cell(&mut self, cell: CorridorCell, witness: Vec3) -> Result<(), CorridorError> {
        self.cells.insert(0, cell);
        self.overlaps.insert(0, witness);
        self.check_pair(0)
    }

    fn check_pair(&self, k: usize) -> Result<(), CorridorError> {
        let w = &self.overlaps[k];
        if self.cells[k].polytope.max_violation(w) > WITNESS_TOL
            || self.cells[k + 1].polytope.max_violation(w) > WITNESS_TOL
        {
            return Err(CorridorError::CorridorGap(k, k + 1));
        }
        Ok(())
    }
}

/// Speed and acceleration used to allocate time along the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAllocation {
    pub v: f64,
    pub a: f64,
    pub min_duration: f64,
}

impl TimeAllocation {
    /// Time to reach arc length `s` on a rest-to-rest trapezoidal profile
    /// covering `total` meters.
    pub fn time_at(&self, s: f64, total: f64) -> f64 {
        let s = s.clamp(0.0, total);
        let ramp = self.v * self.v / self.a;
        if total >= ramp {
            let d_r = 0.5 * ramp;
            let t_r = self.v / self.a;
            let cruise = total - ramp;
            if s <= d_r {
                (2.0 * s / self.a).sqrt()
            } else if s <= d_r + cruise {
                t_r + (s - d_r) / self.v
            } else {
                let t_total = 2.0 * t_r + cruise / self.v;
                t_total - (2.0 * (total - s) / self.a).sqrt()
            }
        } else {
            let half = 0.5 * total;
            let t_half = (2.0 * half / self.a).sqrt();
            if s <= half {
                (2.0 * s / self.a).sqrt()
            } else {
                2.0 * t_half - (2.0 * (total - s) / self.a).sqrt()
            }
        }
    }
}

/// Inclusive index box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexBox {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl IndexBox {
    fn spanning(a: CellIndex, b: CellIndex) -> Self {
        Self {
            lo: [a[0].min(b[0]), a[1].min(b[1]), a[2].min(b[2])],
            hi: [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])],
        }
    }

    fn contains(&self, c: CellIndex) -> bool {
        (0..3).all(|i| c[i] >= self.lo[i] && c[i] <= self.hi[i])
    }

    fn world(&self, grid: &GridMap3D) -> Aabb {
        let cs = grid.cell_size();
        let o = grid.origin();
        let min = o + Vec3::new(self.lo[0] as f64, self.lo[1] as f64, self.lo[2] as f64) * cs;
        let max = o + Vec3::new(
            (self.hi[0] + 1) as f64,
            (self.hi[1] + 1) as f64,
            (self.hi[2] + 1) as f64,
        ) * cs;
        Aabb::new(min, max)
    }
}

fn block_is_free(grid: &GridMap3D, lo: [usize; 3], hi: [usize; 3]) -> bool {
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                if grid.is_occupied([x, y, z]) {
                    return false;
                }
            }
        }
    }
    true
}

/// Grows `b` one layer at a time, faces in the order +x, −x, +y, −y, +z, −z,
/// until no face can advance without touching an occupied cell.
fn grow(grid: &GridMap3D, mut b: IndexBox) -> IndexBox {
    let dims = grid.dims();
    let mut open = [true; 6];
    while open.iter().any(|o| *o) {
        for face in 0..6 {
            if !open[face] {
                continue;
            }
            let axis = face / 2;
            let positive = face % 2 == 0;
            let (mut lo, mut hi) = (b.lo, b.hi);
            if positive {
                if b.hi[axis] + 1 >= dims[axis] {
                    open[face] = false;
                    continue;
                }
                lo[axis] = b.hi[axis] + 1;
                hi[axis] = b.hi[axis] + 1;
            } else {
                if b.lo[axis] == 0 {
                    open[face] = false;
                    continue;
                }
                lo[axis] = b.lo[axis] - 1;
                hi[axis] = b.lo[axis] - 1;
            }
            if block_is_free(grid, lo, hi) {
                if positive {
                    b.hi[axis] += 1;
                } else {
                    b.lo[axis] -= 1;
                }
            } else {
                open[face] = false;
            }
        }
    }
    b
}

/// Overlapping free boxes covering `path` in the already inflated `grid`, with
/// durations from a trapezoidal profile over the polyline
/// `start → interior waypoints → goal`.
pub fn generate_corridor(
    inflated: &GridMap3D,
    path: &GridPath,
    start: &Vec3,
    goal: &Vec3,
    alloc: &TimeAllocation,
) -> Result<Corridor, CorridorError> {
    if !(alloc.v > 0.0 && alloc.a > 0.0 && alloc.min_duration > 0.0) {
        return Err(CorridorError::InvalidAllocation(
            "speed, acceleration and minimum duration must be positive".into(),
        ));
    }
    let cells = &path.cells;
    if cells.is_empty()
        || cells
            .iter()
            .any(|c| !inflated.in_bounds(*c) || inflated.is_occupied(*c))
    {
        return Err(CorridorError::InvalidPath);
    }

    // Boxes and, for each box after the first, the path index of its witness.
    let mut boxes: Vec<IndexBox> = Vec::new();
    let mut witness_idx: Vec<usize> = Vec::new();
    let seed_end = if cells.len() > 1 { cells[1] } else { cells[0] };
    boxes.push(grow(inflated, IndexBox::spanning(cells[0], seed_end)));
    let mut k = 0;
    while k + 1 < cells.len() {
        let current = *boxes.last().expect("nonempty");
        // Advance along the path while it stays inside the current box.
        while k + 1 < cells.len() && current.contains(cells[k + 1]) {
            k += 1;
        }
        if k + 1 >= cells.len() {
            break;
        }
        let seed = IndexBox::spanning(cells[k], cells[k + 1]);
        if !block_is_free(inflated, seed.lo, seed.hi) {
            return Err(CorridorError::InvalidPath);
        }
        boxes.push(grow(inflated, seed));
        witness_idx.push(k);
        k += 1;
    }

    // Arc length along the polyline start → interior waypoints → goal.
    let n = path.waypoints.len();
    let mut poly: Vec<Vec3> = Vec::with_capacity(n + 2);
    poly.push(*start);
    if n > 2 {
        poly.extend_from_slice(&path.waypoints[1..n - 1]);
    }
    poly.push(*goal);
    let mut arc = vec![0.0; poly.len()];
    for i in 1..poly.len() {
        arc[i] = arc[i - 1] + (poly[i] - poly[i - 1]).norm();
    }
    let total = arc[arc.len() - 1];
    // Path index i (cell) maps to polyline vertex i, except the endpoints,
    // which the polyline replaces by the exact start/goal.
    let arc_of_cell = |i: usize| -> f64 { arc[i.min(poly.len() - 1)] };

    let mut bounds_s: Vec<f64> = vec![0.0];
    bounds_s.extend(witness_idx.iter().map(|&i| arc_of_cell(i)));
    bounds_s.push(total);

    let mut out = Corridor {
        cells: Vec::with_capacity(boxes.len()),
        overlaps: Vec::with_capacity(boxes.len().saturating_sub(1)),
    };
    for (j, b) in boxes.iter().enumerate() {
        let world = b.world(inflated);
        let t0 = alloc.time_at(bounds_s[j], total);
        let t1 = alloc.time_at(bounds_s[j + 1], total);
        out.cells.push(CorridorCell {
            kind: CellKind::Moving,
            polytope: HalfspacePolytope::from_aabb(&world),
            bounds: world,
            duration_s: (t1 - t0).max(alloc.min_duration),
        });
    }
    for &i in &witness_idx {
        out.overlaps.push(inflated.cell_center(cells[i]));
    }
    out.check_overlaps()?;
    if out.cells[0].polytope.max_violation(start) > WITNESS_TOL
        || out.cells[out.cells.len() - 1].polytope.max_violation(goal) > WITNESS_TOL
    {
        return Err(CorridorError::InvalidPath);
    }
    Ok(out)
}

/// `{p | w_min <= R_ψᵀ (p − anchor) <= w_max}`.
pub fn designed_polyhedron(anchor: &Vec3, psi_o: f64, w_r: &RevisedWorkspace) -> HalfspacePolytope {
    let r = yaw_rotation(psi_o);
    let mut normals = Vec::with_capacity(6);
    let mut offsets = Vec::with_capacity(6);
    for i in 0..3 {
        let axis = r.column(i).into_owned();
        normals.push(axis);
        offsets.push(w_r.w_max[i] + axis.dot(anchor));
        normals.push(-axis);
        offsets.push(-w_r.w_min[i] - axis.dot(anchor));
    }
    HalfspacePolytope::new(normals, offsets)
}

/// Base positions from which `p_o` lies inside the revised workspace:
/// `{p | w_min <= R_ψᵀ (p_o − p) <= w_max}`.
pub fn grasp_region(p_o: &Vec3, psi_o: f64, w_r: &RevisedWorkspace) -> HalfspacePolytope {
    let negated = RevisedWorkspace {
        w_min: -w_r.w_max,
        w_max: -w_r.w_min,
    };
    designed_polyhedron(p_o, psi_o, &negated)
}

/// Grasp-stage cell: the grasp region clipped to a free moving box.
pub fn grasp_cell(
    p_o: &Vec3,
    psi_o: f64,
    w_r: &RevisedWorkspace,
    free_box: &Aabb,
    duration_s: f64,
) -> CorridorCell {
    let region = grasp_region(p_o, psi_o, w_r);
    let polytope = region.intersect(&HalfspacePolytope::from_aabb(free_box));
    // Enclosing bounds of the rotated box, clipped to the free box.
    let r = yaw_rotation(psi_o);
    let center = p_o - r * w_r.center();
    let half = 0.5 * (w_r.w_max - w_r.w_min);
    let ext = r.abs() * half;
    let lo = (center - ext).sup(&free_box.min);
    let hi = (center + ext).inf(&free_box.max).sup(&lo);
    let bounds = Aabb::new(lo, hi);
    CorridorCell {
        kind: CellKind::Grasp,
        polytope,
        bounds,
        duration_s,
    }
}
