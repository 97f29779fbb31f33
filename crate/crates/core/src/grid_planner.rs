//! Grasp-position geometry and A* search on the inflated occupancy grid.

use crate::feasibility::RevisedWorkspace;
use crate::geometry::{yaw_rotation, CellIndex, GridMap3D, Vec3};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Slack on the inflation distance test so cells exactly `r` away stay free.
const INFLATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("start position is outside the map or blocked after inflation")]
    StartOccupied,
    #[error("goal position is outside the map or blocked after inflation")]
    GoalOccupied,
    #[error("no collision-free path between start and goal")]
    NoPath,
}

/// Ordered cell centers from the start cell to the goal cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub waypoints: Vec<Vec3>,
    pub cells: Vec<CellIndex>,
    pub cost: f64,
}

/// Base position that puts the workspace center on the object.
pub fn feasible_grasp_position(p_o: &Vec3, psi_o: f64, w_r: &RevisedWorkspace) -> Vec3 {
    p_o - 0.5 * (yaw_rotation(psi_o) * (w_r.w_min + w_r.w_max))
}

/// Retracted end-effector offset: centered in x/y, at the near z face.
pub fn workspace_top_point(w_r: &RevisedWorkspace) -> Vec3 {
    Vec3::new(
        0.5 * (w_r.w_min.x + w_r.w_max.x),
        0.5 * (w_r.w_min.y + w_r.w_max.y),
        w_r.w_min.z,
    )
}

/// Grid with occupancy dilated by `radius`.
///
/// A cell is blocked when the closest points of its cube and of an occupied
/// cube are less than `radius` apart, or when its cube lies closer than
/// `radius` to the map boundary (space outside the map is unknown). The
/// vehicle sphere centered anywhere in a free cell therefore clears every
/// occupied cube and stays inside the map.
pub fn inflate(grid: &GridMap3D, radius: f64) -> GridMap3D {
    let cs = grid.cell_size();
    let dims = grid.dims();
    let mut out = GridMap3D::new(grid.origin(), cs, dims);
    let reach = (radius / cs).ceil() as i64 + 1;

    // Boundary clearance: the cell cube itself needs `radius` to every wall.
    let wall = |i: usize, d: usize| -> bool {
        let lo = i as f64 * cs;
        let hi = (d - i - 1) as f64 * cs;
        lo + INFLATE_EPS < radius || hi + INFLATE_EPS < radius
    };
    for k in 0..grid.len() {
        let c = grid.cell_of_linear(k);
        if (0..3).any(|a| wall(c[a], dims[a])) {
            out.set_occupied(c, true);
        }
    }
    for occ in grid.occupied_cells() {
        out.set_occupied(occ, true);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let delta = [dx, dy, dz];
                    let mut cell = [0usize; 3];
                    let mut ok = true;
                    for a in 0..3 {
                        let v = occ[a] as i64 + delta[a];
                        if v < 0 || v >= dims[a] as i64 {
                            ok = false;
                            break;
                        }
                        cell[a] = v as usize;
                    }
                    if !ok {
                        continue;
                    }
                    let gap = Vec3::new(
                        (dx.abs() - 1).max(0) as f64,
                        (dy.abs() - 1).max(0) as f64,
                        (dz.abs() - 1).max(0) as f64,
                    ) * cs;
                    if gap.norm() + INFLATE_EPS < radius {
                        out.set_occupied(cell, true);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    h: f64,
    index: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    /// Reversed so `BinaryHeap` pops the smallest `(f, h, index)`.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Neighbor offsets of the 26-connected lattice with their Euclidean lengths
/// in cell units.
fn neighbor_offsets() -> Vec<([i64; 3], f64)> {
    let mut out = Vec::with_capacity(26);
    for dz in -1..=1_i64 {
        for dy in -1..=1_i64 {
            for dx in -1..=1_i64 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                out.push(([dx, dy, dz], ((dx * dx + dy * dy + dz * dz) as f64).sqrt()));
            }
        }
    }
    out
}

/// Moves are allowed only when every cell of the bounding block spanned by
/// the move is free, so diagonal moves never cut obstacle corners.
fn move_is_clear(grid: &GridMap3D, from: CellIndex, to: CellIndex) -> bool {
    let lo = [from[0].min(to[0]), from[1].min(to[1]), from[2].min(to[2])];
    let hi = [from[0].max(to[0]), from[1].max(to[1]), from[2].max(to[2])];
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

/// Free neighbors of `c` in an already inflated grid with edge costs in meters.
pub fn free_neighbors(grid: &GridMap3D, c: CellIndex) -> Vec<(CellIndex, f64)> {
    let dims = grid.dims();
    let cs = grid.cell_size();
    let mut out = Vec::with_capacity(26);
    for (d, len) in neighbor_offsets() {
        let mut n = [0usize; 3];
        let mut ok = true;
        for a in 0..3 {
            let v = c[a] as i64 + d[a];
            if v < 0 || v >= dims[a] as i64 {
                ok = false;
                break;
            }
            n[a] = v as usize;
        }
        if ok && move_is_clear(grid, c, n) {
            out.push((n, len * cs));
        }
    }
    out
}

/// A* over an already inflated grid.
pub fn astar_inflated(
    inflated: &GridMap3D,
    start: &Vec3,
    goal: &Vec3,
) -> Result<GridPath, GridError> {
    let s = inflated
        .world_to_cell(start)
        .filter(|c| !inflated.is_occupied(*c))
        .ok_or(GridError::StartOccupied)?;
    let g = inflated
        .world_to_cell(goal)
        .filter(|c| !inflated.is_occupied(*c))
        .ok_or(GridError::GoalOccupied)?;
    let goal_center = inflated.cell_center(g);
    let heuristic = |c: CellIndex| (inflated.cell_center(c) - goal_center).norm();

    let n = inflated.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let si = inflated.linear_index(s);
    let gi = inflated.linear_index(g);
    cost[si] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: heuristic(s),
        h: heuristic(s),
        index: si,
    });
    while let Some(OpenEntry { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            break;
        }
        let c = inflated.cell_of_linear(index);
        for (nb, w) in free_neighbors(inflated, c) {
            let ni = inflated.linear_index(nb);
            if closed[ni] {
                continue;
            }
            let cand = cost[index] + w;
            if cand < cost[ni] {
                cost[ni] = cand;
                parent[ni] = index;
                let h = heuristic(nb);
                open.push(OpenEntry {
                    f: cand + h,
                    h,
                    index: ni,
                });
            }
        }
    }
    if !cost[gi].is_finite() {
        return Err(GridError::NoPath);
    }
    let mut cells = vec![g];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(inflated.cell_of_linear(cur));
    }
    cells.reverse();
    Ok(GridPath {
        waypoints: cells.iter().map(|c| inflated.cell_center(*c)).collect(),
        cells,
        cost: cost[gi],
    })
}

/// Minimal-cost 26-connected path after inflating obstacles by `inflate_radius`.
pub fn astar(
    grid: &GridMap3D,
    start: &Vec3,
    goal: &Vec3,
    inflate_radius: f64,
) -> Result<GridPath, GridError> {
    astar_inflated(&inflate(grid, inflate_radius), start, goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::geometric_feasibility_ok;
    use crate::geometry::Aabb;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn paper_box() -> RevisedWorkspace {
        RevisedWorkspace::new(Vec3::new(-0.06, -0.06, -0.60), Vec3::new(0.06, 0.06, -0.40)).unwrap()
    }

    #[test]
    fn grasp_position_reference_values() {
        let p = feasible_grasp_position(&Vec3::new(0.0, -2.0, -1.24), 0.0, &paper_box());
        assert_relative_eq!(p, Vec3::new(0.0, -2.0, -0.74), epsilon = 1e-12);
        let sym = RevisedWorkspace::new(Vec3::repeat(-0.1), Vec3::repeat(0.1)).unwrap();
        let po = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(feasible_grasp_position(&po, 0.7, &sym), po);
        let asym =
            RevisedWorkspace::new(Vec3::new(0.1, 0.2, -0.6), Vec3::new(0.3, 0.4, -0.4)).unwrap();
        let a = feasible_grasp_position(&po, 0.0, &asym) - po;
        let b = feasible_grasp_position(&po, PI, &asym) - po;
        assert_relative_eq!(a.x, -b.x, epsilon = 1e-12);
        assert_relative_eq!(a.y, -b.y, epsilon = 1e-12);
        assert_relative_eq!(a.z, b.z, epsilon = 1e-12);
    }

    #[test]
    fn grasp_identity_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = paper_box();
        for _ in 0..100 {
            let po = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let psi = rng.gen_range(-PI..PI);
            let pb = feasible_grasp_position(&po, psi, &w);
            assert!((pb + yaw_rotation(psi) * w.center() - po).amax() < 1e-12);
        }
    }

    #[test]
    fn top_point_values() {
        assert_relative_eq!(
            workspace_top_point(&paper_box()),
            Vec3::new(0.0, 0.0, -0.60),
            epsilon = 1e-15
        );
        let c = Vec3::new(0.1, 0.2, 0.3);
        let point = RevisedWorkspace::new(c, c).unwrap();
        assert_eq!(workspace_top_point(&point), c);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let psi = rng.gen_range(-PI..PI);
            let pb = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let pe = pb + yaw_rotation(psi) * workspace_top_point(&paper_box());
            assert!(geometric_feasibility_ok(&pe, &pb, psi, &paper_box(), 1e-12));
        }
    }

    #[test]
    fn straight_path_in_empty_grid() {
        let g = GridMap3D::new(Vec3::zeros(), 1.0, [10, 10, 10]);
        let p = astar(
            &g,
            &Vec3::new(0.5, 4.5, 4.5),
            &Vec3::new(9.5, 4.5, 4.5),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(p.cost, 9.0, epsilon = 1e-12);
        assert_eq!(p.waypoints.len(), 10);
    }

    #[test]
    fn walled_goal_has_no_path() {
        let mut g = GridMap3D::new(Vec3::zeros(), 1.0, [7, 7, 7]);
        for z in 2..=4 {
            for y in 2..=4 {
                for x in 2..=4 {
                    if [x, y, z] != [3, 3, 3] {
                        g.set_occupied([x, y, z], true);
                    }
                }
            }
        }
        let r = astar(
            &g,
            &Vec3::new(0.5, 0.5, 0.5),
            &Vec3::new(3.5, 3.5, 3.5),
            0.0,
        );
        assert_eq!(r, Err(GridError::NoPath));
        let blocked = astar(
            &g,
            &Vec3::new(2.5, 2.5, 2.5),
            &Vec3::new(3.5, 3.5, 3.5),
            0.0,
        );
        assert_eq!(blocked, Err(GridError::StartOccupied));
    }

    #[test]
    fn inflation_blocks_near_walls() {
        let g = GridMap3D::new(Vec3::zeros(), 0.1, [20, 20, 20]);
        let inf = inflate(&g, 0.25);
        // Cells whose cube is within 0.25 m of the boundary are blocked.
        assert!(inf.is_occupied([2, 10, 10]));
        assert!(!inf.is_occupied([3, 10, 10]));
        assert!(!inf.is_occupied([16, 10, 10]));
        assert!(inf.is_occupied([17, 10, 10]));
    }

    /// Plain Dijkstra over an O(n²) frontier scan with its own corner rule.
    fn dijkstra_cost(g: &GridMap3D, s: CellIndex, t: CellIndex) -> Option<f64> {
        let n = g.len();
        let d = g.dims();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[g.linear_index(s)] = 0.0;
        loop {
            let mut best = None;
            for i in 0..n {
                if !done[i] && dist[i].is_finite() && best.is_none_or(|b: usize| dist[i] < dist[b])
                {
                    best = Some(i);
                }
            }
            let u = best?;
            if u == g.linear_index(t) {
                return Some(dist[u]);
            }
            done[u] = true;
            let c = g.cell_of_linear(u);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let off = [dx, dy, dz];
                        if off == [0, 0, 0] {
                            continue;
                        }
                        let v: Vec<i64> = (0..3).map(|a| c[a] as i64 + off[a]).collect();
                        if (0..3).any(|a| v[a] < 0 || v[a] >= d[a] as i64) {
                            continue;
                        }
                        // Every cell sharing the move's bounding block must be free.
                        let mut clear = true;
                        for mask in 0..8u32 {
                            let q: Vec<usize> = (0..3)
                                .map(|a| {
                                    if mask >> a & 1 == 1 {
                                        v[a] as usize
                                    } else {
                                        c[a]
                                    }
                                })
                                .collect();
                            if g.is_occupied([q[0], q[1], q[2]]) {
                                clear = false;
                            }
                        }
                        if !clear {
                            continue;
                        }
                        let w = g.cell_size() * ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                        let vi = g.linear_index([v[0] as usize, v[1] as usize, v[2] as usize]);
                        if dist[u] + w < dist[vi] {
                            dist[vi] = dist[u] + w;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn astar_cost_matches_dijkstra_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut solved = 0;
        for _ in 0..50 {
            let mut g = GridMap3D::new(Vec3::zeros(), 1.0, [20, 20, 20]);
            for k in 0..g.len() {
                if rng.gen_bool(0.25) {
                    let c = g.cell_of_linear(k);
                    g.set_occupied(c, true);
                }
            }
            let s = [0, 0, 0];
            let t = [19, 19, 19];
            g.set_occupied(s, false);
            g.set_occupied(t, false);
            let a = astar(&g, &g.cell_center(s), &g.cell_center(t), 0.0);
            match dijkstra_cost(&g, s, t) {
                Some(c) => {
                    let p = a.expect("dijkstra found a path");
                    assert_relative_eq!(p.cost, c, epsilon = 1e-9);
                    for w in p.cells.windows(2) {
                        assert!(free_neighbors(&g, w[0]).iter().any(|(n, _)| *n == w[1]));
                    }
                    assert!(p.cells.iter().all(|c| !g.is_occupied(*c)));
                    solved += 1;
                }
                None => assert_eq!(a, Err(GridError::NoPath)),
            }
        }
        assert!(solved > 10);
    }

    #[test]
    fn path_threads_single_hole_in_wall() {
        let mut g = GridMap3D::new(Vec3::zeros(), 1.0, [9, 9, 9]);
        for z in 0..9 {
            for y in 0..9 {
                if [y, z] != [6, 2] {
                    g.set_occupied([4, y, z], true);
                }
            }
        }
        let p = astar(
            &g,
            &Vec3::new(0.5, 0.5, 7.5),
            &Vec3::new(8.5, 8.5, 0.5),
            0.0,
        )
        .unwrap();
        assert!(p.cells.contains(&[4, 6, 2]));
        assert!(p.cells.iter().all(|c| !g.is_occupied(*c)));
    }

    #[test]
    fn inflated_paths_keep_radius_from_obstacles() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = 0.25;
        for _ in 0..10 {
            let mut g = GridMap3D::new(Vec3::zeros(), 0.1, [30, 30, 10]);
            for _ in 0..6 {
                let c = Vec3::new(rng.gen_range(0.8..2.2), rng.gen_range(0.8..2.2), 0.5);
                g.fill_box(&Aabb::new(
                    c - Vec3::new(0.2, 0.2, 0.5),
                    c + Vec3::new(0.2, 0.2, 0.5),
                ));
            }
            let s = Vec3::new(0.35, 0.35, 0.55);
            let e = Vec3::new(2.65, 2.65, 0.55);
            let inf = inflate(&g, r);
            if inf.world_to_cell(&s).is_none_or(|c| inf.is_occupied(c))
                || inf.world_to_cell(&e).is_none_or(|c| inf.is_occupied(c))
            {
                continue;
            }
            if let Ok(p) = astar_inflated(&inf, &s, &e) {
                let occ: Vec<Aabb> = g.occupied_cells().map(|c| g.cell_box(c)).collect();
                for c in &p.cells {
                    let b = g.cell_box(*c);
                    for o in &occ {
                        let gap = Vec3::from_fn(|i, _| {
                            (o.min[i] - b.max[i]).max(b.min[i] - o.max[i]).max(0.0)
                        });
                        assert!(gap.norm() >= r - 1e-9);
                    }
                }
            }
        }
    }
}
