//! Uniform-grid nearest-neighbor search over point sets.

use std::collections::HashMap;

use crate::geometry::Vec3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct VoxelGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    /// Cell-index bounding box of the occupied cells.
    lo: Cell,
    hi: Cell,
}

impl<'a> VoxelGrid<'a> {
    /// `cell` must be positive; a cell near the query radius is fastest.
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        VoxelGrid {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn key(p: &Vec3, cell: f64) -> Cell {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn scan_cell(&self, c: Cell, p: &Vec3, best: &mut Option<(usize, f64)>) {
        if let Some(ids) = self.cells.get(&c) {
            for &i in ids {
                let d2 = (self.points[i as usize] - p).norm_squared();
                let better = match *best {
                    None => true,
                    Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                };
                if better {
                    *best = Some((i as usize, d2));
                }
            }
        }
    }

    /// Index and distance of the nearest point (lowest index on ties).
    pub fn nearest(&self, p: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::key(p, self.cell);
        let mut best: Option<(usize, f64)> = None;
        // Rings of growing Chebyshev radius; a point in ring r is at least
        // (r - 1) * cell away, so stop once that exceeds the best distance.
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (c.0 - self.hi.0).abs(),
            (c.1 - self.lo.1).abs(),
            (c.1 - self.hi.1).abs(),
            (c.2 - self.lo.2).abs(),
            (c.2 - self.hi.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        for r in 0..=max_ring {
            if let Some((_, d2)) = best {
                let reach = (r - 1).max(0) as f64 * self.cell;
                if reach * reach > d2 {
                    break;
                }
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) == r {
                            self.scan_cell((c.0 + dx, c.1 + dy, c.2 + dz), p, &mut best);
                        }
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Whether some point lies within `radius` (inclusive) of `p`.
    pub fn any_within(&self, p: &Vec3, radius: f64) -> bool {
        let c = Self::key(p, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if ids.iter().any(|&i| (self.points[i as usize] - p).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// O(n) reference for [`VoxelGrid::nearest`].
pub fn nearest_brute_force(points: &[Vec3], p: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in points.iter().enumerate() {
        let d2 = (q - p).norm_squared();
        if best.map_or(true, |(_, bd)| d2 < bd) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)))
            .collect()
    }

    #[test]
    fn matches_brute_force_on_2000_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = cloud(&mut rng, 2000, 3.0);
        let queries = cloud(&mut rng, 500, 4.0);
        for cell in [0.05, 0.2, 1.0] {
            let grid = VoxelGrid::new(&pts, cell);
            for q in &queries {
                let (i, d) = grid.nearest(q).unwrap();
                let (j, e) = nearest_brute_force(&pts, q).unwrap();
                assert_eq!((i, d), (j, e));
                for rho in [0.05, 0.1, 0.2, 0.5] {
                    assert_eq!(grid.any_within(q, rho), e <= rho);
                }
            }
        }
    }

    #[test]
    fn empty_grid() {
        let grid = VoxelGrid::new(&[], 0.1);
        assert!(grid.nearest(&Vec3::zeros()).is_none());
        assert!(!grid.any_within(&Vec3::zeros(), 1.0));
    }

    proptest! {
        #[test]
        fn nearest_is_exact(seed in 0u64..1000, n in 1usize..300, cell in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = cloud(&mut rng, n, 2.0);
            let grid = VoxelGrid::new(&pts, cell);
            let q = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            prop_assert_eq!(grid.nearest(&q).map(|x| x.1), nearest_brute_force(&pts, &q).map(|x| x.1));
        }
    }
}
