//! Uniform-grid spatial hash over 3D points.

use std::collections::HashMap;

use crate::vec3::Vec3;

#[derive(Debug, Clone)]
pub(crate) struct SpatialGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialGrid {
    /// `cell` must be at least the largest query radius.
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: Vec3) -> [i64; 3] {
        [
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        ]
    }

    pub fn insert(&mut self, idx: usize, p: Vec3) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(idx);
    }

    /// Calls `f` on every stored index whose cell is adjacent to the cell of `p`.
    /// Every point within distance `cell` of `p` is visited.
    pub fn for_each_near(&self, p: Vec3, mut f: impl FnMut(usize)) {
        let k = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in b {
                            f(i);
                        }
                    }
                }
            }
        }
    }

    pub fn from_points(cell: f64, points: impl IntoIterator<Item = Vec3>) -> Self {
        let mut g = Self::new(cell);
        for (i, p) in points.into_iter().enumerate() {
            g.insert(i, p);
        }
        g
    }
}
