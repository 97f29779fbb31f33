//! Dense 3D occupancy grid.

use super::{Aabb, Vec3};
use serde::{Deserialize, Serialize};

/// Integer cell coordinates `(ix, iy, iz)`.
pub type CellIndex = [usize; 3];

/// Axis-aligned grid of cubes; `origin` is the minimum corner of cell (0,0,0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap3D {
    origin: Vec3,
    cell_size: f64,
    dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl GridMap3D {
    /// All-free grid.
    pub fn new(origin: Vec3, cell_size: f64, dims: [usize; 3]) -> Self {
        assert!(
            cell_size > 0.0 && cell_size.is_finite(),
            "cell size must be positive"
        );
        assert!(
            dims.iter().all(|&d| d > 0),
            "grid dimensions must be positive"
        );
        Self {
            origin,
            cell_size,
            dims,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    /// World-space bounds of the whole map.
    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.cell_size;
        Aabb::new(self.origin, self.origin + ext)
    }

    pub fn linear_index(&self, c: CellIndex) -> usize {
        debug_assert!(self.in_bounds(c));
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn cell_of_linear(&self, k: usize) -> CellIndex {
        let ix = k % self.dims[0];
        let rest = k / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn in_bounds(&self, c: CellIndex) -> bool {
        (0..3).all(|i| c[i] < self.dims[i])
    }

    pub fn is_occupied(&self, c: CellIndex) -> bool {
        self.occupancy[self.linear_index(c)]
    }

    pub fn set_occupied(&mut self, c: CellIndex, occupied: bool) {
        let k = self.linear_index(c);
        self.occupancy[k] = occupied;
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, c: CellIndex) -> Vec3 {
        self.origin
            + Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.cell_size
    }

    /// World-space cube of a cell.
    pub fn cell_box(&self, c: CellIndex) -> Aabb {
        let min = self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.cell_size;
        Aabb::new(min, min + Vec3::repeat(self.cell_size))
    }

    /// Cell whose center is nearest to `p`, or `None` outside the map.
    pub fn world_to_cell(&self, p: &Vec3) -> Option<CellIndex> {
        let mut out = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.cell_size).floor();
            if !(f >= 0.0 && f < self.dims[i] as f64) {
                return None;
            }
            out[i] = f as usize;
        }
        Some(out)
    }

    /// Marks every cell whose cube overlaps `b` (open overlap) as occupied.
    pub fn fill_box(&mut self, b: &Aabb) {
        let lo = self.clamped_range(b);
        let Some((lo, hi)) = lo else { return };
        for iz in lo[2]..hi[2] {
            for iy in lo[1]..hi[1] {
                for ix in lo[0]..hi[0] {
                    self.set_occupied([ix, iy, iz], true);
                }
            }
        }
    }

    /// Half-open index range of cells overlapping the interior of `b`.
    fn clamped_range(&self, b: &Aabb) -> Option<(CellIndex, CellIndex)> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for i in 0..3 {
            let a = ((b.min[i] - self.origin[i]) / self.cell_size).floor();
            let z = ((b.max[i] - self.origin[i]) / self.cell_size).ceil();
            let a = a.max(0.0);
            let z = z.min(self.dims[i] as f64);
            if z <= a {
                return None;
            }
            lo[i] = a as usize;
            hi[i] = z as usize;
        }
        Some((lo, hi))
    }

    /// Iterator over all occupied cells in linear order.
    pub fn occupied_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(k, _)| self.cell_of_linear(k))
    }

    /// Raw occupancy flags in linear order.
    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }
}
