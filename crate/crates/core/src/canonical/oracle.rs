//! Surface-point shape oracle and exact nearest-neighbor queries.

use crate::{Error, Result};

/// Point set sampled on a shape surface, with a uniform-cell index for exact
/// nearest-neighbor lookup. Brute force stays available as the verification
/// path; the index only accelerates, never changes, the answer.
#[derive(Debug, Clone)]
pub struct ShapeOracle {
    points: Vec<[f64; 3]>,
    cells: Vec<Vec<u32>>,
    res: usize,
}

impl ShapeOracle {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("shape oracle needs at least one surface point".into()));
        }
        let res = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).clamp(2, 24);
        let mut cells = vec![Vec::new(); res * res * res];
        for (i, p) in points.iter().enumerate() {
            cells[cell_of(p, res)].push(i as u32);
        }
        Ok(ShapeOracle { points, cells, res })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Index and distance of the nearest surface point to `x`.
    pub fn nearest(&self, x: [f64; 3]) -> (usize, f64) {
        self.nearest_excluding(x, usize::MAX)
    }

    /// Euclidean distance from `x` to the surface sample set.
    pub fn distance(&self, x: [f64; 3]) -> f64 {
        self.nearest(x).1
    }

    /// Nearest point skipping one index (for self-gap measurements).
    pub fn nearest_excluding(&self, x: [f64; 3], skip: usize) -> (usize, f64) {
        let res = self.res;
        let cell_size = 1.0 / res as f64;
        let home = [
            clamped_axis_cell(x[0], res),
            clamped_axis_cell(x[1], res),
            clamped_axis_cell(x[2], res),
        ];
        let mut best = f64::INFINITY;
        let mut best_idx = usize::MAX;
        for ring in 0..res {
            // Any point in a cell at Chebyshev distance `ring` from the
            // query's (clamped) cell lies at least (ring - 1) cells away.
            let lower = (ring as f64 - 1.0).max(0.0) * cell_size;
            if best <= lower {
                break;
            }
            self.for_ring_cells(home, ring, |cell| {
                for &pi in &self.cells[cell] {
                    let pi = pi as usize;
                    if pi == skip {
                        continue;
                    }
                    let p = self.points[pi];
                    let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2);
                    if d2 < best * best {
                        best = d2.sqrt();
                        best_idx = pi;
                    }
                }
            });
        }
        if best_idx == usize::MAX {
            // All candidates excluded by ring pruning edge cases; fall back.
            return self.brute_nearest(x, skip);
        }
        (best_idx, best)
    }

    fn for_ring_cells(&self, home: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let res = self.res as isize;
        let (hx, hy, hz) = (home[0] as isize, home[1] as isize, home[2] as isize);
        let r = ring as isize;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let (cx, cy, cz) = (hx + dx, hy + dy, hz + dz);
                    if cx < 0 || cx >= res || cy < 0 || cy >= res || cz < 0 || cz >= res {
                        continue;
                    }
                    f(((cx * res + cy) * res + cz) as usize);
                }
            }
        }
    }

    /// Exhaustive reference query.
    pub fn brute_nearest(&self, x: [f64; 3], skip: usize) -> (usize, f64) {
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (i, p) in self.points.iter().enumerate() {
            if i == skip {
                continue;
            }
            let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2);
            if d2 < best {
                best = d2;
                best_idx = i;
            }
        }
        (best_idx, best.sqrt())
    }

    /// Largest nearest-neighbor gap within the sample set; the measured
    /// sampling tolerance for surface-distance assertions.
    pub fn max_nn_gap(&self) -> f64 {
        let mut max_gap: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            let (_, d) = self.nearest_excluding(*p, i);
            max_gap = max_gap.max(d);
        }
        max_gap
    }
}

fn clamped_axis_cell(x: f64, res: usize) -> usize {
    let t = ((x + 0.5) * res as f64).floor();
    (t.max(0.0) as usize).min(res - 1)
}

fn cell_of(p: &[f64; 3], res: usize) -> usize {
    let cx = clamped_axis_cell(p[0], res);
    let cy = clamped_axis_cell(p[1], res);
    let cz = clamped_axis_cell(p[2], res);
    (cx * res + cy) * res + cz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_point_has_zero_distance() {
        let oracle = ShapeOracle::new(vec![[0.1, 0.2, 0.3], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(oracle.distance([0.1, 0.2, 0.3]), 0.0);
    }

    #[test]
    fn three_four_five() {
        let oracle = ShapeOracle::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        assert!((oracle.distance([0.3, 0.0, 0.4]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(ShapeOracle::new(vec![]).is_err());
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<[f64; 3]> = (0..1500)
            .map(|_| {
                [
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ]
            })
            .collect();
        let oracle = ShapeOracle::new(points).unwrap();
        for _ in 0..500 {
            // Queries may fall slightly outside the cube.
            let q = [
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            ];
            let fast = oracle.nearest(q);
            let brute = oracle.brute_nearest(q, usize::MAX);
            assert!(
                (fast.1 - brute.1).abs() < 1e-12,
                "query {q:?}: fast {fast:?} vs brute {brute:?}"
            );
        }
    }

    #[test]
    fn max_gap_of_a_lattice() {
        // 4x4x4 lattice spaced 0.2: nearest neighbor of every point is 0.2.
        let mut points = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    points.push([
                        -0.3 + 0.2 * i as f64,
                        -0.3 + 0.2 * j as f64,
                        -0.3 + 0.2 * k as f64,
                    ]);
                }
            }
        }
        let oracle = ShapeOracle::new(points).unwrap();
        assert!((oracle.max_nn_gap() - 0.2).abs() < 1e-12);
    }
}
