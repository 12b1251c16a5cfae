//! Voxel feature/weight grids and the differentiable trilinear
//! splat/sample pair.
//!
//! The grid spans the origin-centred unit cube. Coordinates are clamped into
//! the interior band `[-0.5 + h/2, 0.5 - h/2]` per axis before splatting or
//! sampling so the 8-cell stencil always exists and weights sum to one;
//! the coordinate gradient is zero in clamped directions.

mod diff;
mod io;

pub use diff::{gather_self_neighbor_mean, sample_node, splat_node, test_hooks};
pub use io::{read_grid, write_grid};

use crate::diffcore::Scalar;
use crate::{Error, Result};

/// Cubic grid geometry: `cells` per axis over `[-0.5, 0.5]^3`, `feature_dim`
/// scalars per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub cells: usize,
    pub feature_dim: usize,
}

impl GridSpec {
    pub fn new(cells: usize, feature_dim: usize) -> Result<Self> {
        if cells == 0 || feature_dim == 0 {
            return Err(Error::Config("grid cells and feature_dim must be positive".into()));
        }
        Ok(GridSpec { cells, feature_dim })
    }

    pub fn cell_edge(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn cell_count(&self) -> usize {
        self.cells * self.cells * self.cells
    }

    pub fn value_count(&self) -> usize {
        self.cell_count() * self.feature_dim
    }

    /// Flat cell index with x slowest, z fastest.
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cells + j) * self.cells + k
    }

    pub fn cell_coords(&self, index: usize) -> (usize, usize, usize) {
        let c = self.cells;
        (index / (c * c), (index / c) % c, index % c)
    }

    /// Center of cell `i` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) * self.cell_edge()
    }

    /// Interior clamp band along each axis.
    pub fn clamp_interior<S: Scalar>(&self, x: S) -> S {
        let half = S::from_f64(0.5 - 0.5 * self.cell_edge());
        x.max(-half).min(half)
    }
}

/// One axis of a trilinear stencil: two cell indices with weights and the
/// weight derivative w.r.t. the (unclamped) coordinate.
#[derive(Debug, Clone, Copy)]
pub struct AxisStencil<S> {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: S,
    pub w_hi: S,
    /// d(w_lo)/dx; d(w_hi)/dx is its negation. Zero where clamping bound.
    pub dw_lo: S,
}

/// Per-axis stencils for a point; product form of the trilinear weights.
pub fn axis_stencils<S: Scalar>(spec: &GridSpec, x: [S; 3]) -> [AxisStencil<S>; 3] {
    let c = spec.cells;
    let cf = S::from_f64(c as f64);
    let mut out = [AxisStencil { lo: 0, hi: 0, w_lo: S::one(), w_hi: S::zero(), dw_lo: S::zero() };
        3];
    for d in 0..3 {
        if c == 1 {
            out[d] = AxisStencil { lo: 0, hi: 0, w_lo: S::one(), w_hi: S::zero(), dw_lo: S::zero() };
            continue;
        }
        let raw = x[d];
        let clamped = spec.clamp_interior(raw);
        let was_clamped = clamped != raw;
        // Continuous cell coordinate: cell centers sit at integer positions.
        let t = (clamped + S::from_f64(0.5)) * cf - S::from_f64(0.5);
        let mut lo = t.floor().as_f64() as isize;
        if lo < 0 {
            lo = 0;
        }
        if lo > (c - 2) as isize {
            lo = (c - 2) as isize;
        }
        let lo = lo as usize;
        let frac = t - S::from_f64(lo as f64);
        let dw = if was_clamped { S::zero() } else { -cf };
        out[d] = AxisStencil {
            lo,
            hi: lo + 1,
            w_lo: S::one() - frac,
            w_hi: frac,
            dw_lo: dw,
        };
    }
    out
}

/// Up to 8 `(cell index, weight)` pairs for a point; weights are positive and
/// sum to one after interior clamping.
pub fn splat_weights<S: Scalar>(spec: &GridSpec, x: [S; 3]) -> Vec<(usize, S)> {
    let st = axis_stencils(spec, x);
    let mut out = Vec::with_capacity(8);
    for (ix, wx) in [(st[0].lo, st[0].w_lo), (st[0].hi, st[0].w_hi)] {
        if wx == S::zero() {
            continue;
        }
        for (iy, wy) in [(st[1].lo, st[1].w_lo), (st[1].hi, st[1].w_hi)] {
            if wy == S::zero() {
                continue;
            }
            for (iz, wz) in [(st[2].lo, st[2].w_lo), (st[2].hi, st[2].w_hi)] {
                if wz == S::zero() {
                    continue;
                }
                out.push((spec.cell_index(ix, iy, iz), wx * wy * wz));
            }
        }
    }
    out
}

/// Dense voxel grid of `feature_dim` scalars per cell; all-zeros is the
/// valid empty state. Flat layout: cell index (x slowest) then feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<S> {
    spec: GridSpec,
    values: Vec<S>,
}

impl<S: Scalar> FeatureGrid<S> {
    pub fn zeros(spec: GridSpec) -> Self {
        FeatureGrid { values: vec![S::zero(); spec.value_count()], spec }
    }

    pub fn from_values(spec: GridSpec, values: Vec<S>) -> Result<Self> {
        if values.len() != spec.value_count() {
            return Err(Error::shape(
                "feature_grid",
                format!("expected {} values, got {}", spec.value_count(), values.len()),
            ));
        }
        Ok(FeatureGrid { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn cell(&self, index: usize) -> &[S] {
        let d = self.spec.feature_dim;
        &self.values[index * d..(index + 1) * d]
    }

    /// Adds `scale * w_cell * f` into every cell the point touches.
    pub fn splat(&mut self, x: [S; 3], f: &[S], scale: S) -> Result<()> {
        if f.len() != self.spec.feature_dim {
            return Err(Error::shape(
                "splat",
                format!("feature dim {} vs grid dim {}", f.len(), self.spec.feature_dim),
            ));
        }
        if f.iter().any(|v| !v.is_finite()) || !scale.is_finite() {
            return Err(Error::NonFinite("splat"));
        }
        let d = self.spec.feature_dim;
        for (cell, w) in splat_weights(&self.spec, x) {
            let s = scale * w;
            let dst = &mut self.values[cell * d..(cell + 1) * d];
            for (o, &v) in dst.iter_mut().zip(f) {
                *o = *o + s * v;
            }
        }
        Ok(())
    }

    /// Trilinear interpolation at `x`; points outside the cube return zeros.
    pub fn sample(&self, x: [S; 3]) -> Vec<S> {
        let half = S::from_f64(0.5);
        if x.iter().any(|&v| v < -half || v > half) {
            return vec![S::zero(); self.spec.feature_dim];
        }
        let d = self.spec.feature_dim;
        let mut out = vec![S::zero(); d];
        for (cell, w) in splat_weights(&self.spec, x) {
            let src = &self.values[cell * d..(cell + 1) * d];
            for (o, &v) in out.iter_mut().zip(src) {
                *o = *o + w * v;
            }
        }
        out
    }
}

/// Scalar mass grid accumulated by splatting; values stay non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid<S> {
    spec: GridSpec,
    values: Vec<S>,
}

impl<S: Scalar> WeightGrid<S> {
    pub fn zeros(cells: usize) -> Result<Self> {
        let spec = GridSpec::new(cells, 1)?;
        Ok(WeightGrid { values: vec![S::zero(); spec.cell_count()], spec })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn splat(&mut self, x: [S; 3], scale: S) {
        for (cell, w) in splat_weights(&self.spec, x) {
            self.values[cell] = self.values[cell] + scale * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec4() -> GridSpec {
        GridSpec::new(4, 2).unwrap()
    }

    #[test]
    fn cell_center_gets_unit_weight() {
        // (0.125, 0.125, 0.125) is a cell center for a 4-cell axis.
        let w = splat_weights(&spec4(), [0.125f64, 0.125, 0.125]);
        assert_eq!(w.len(), 1);
        assert!((w[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_midpoint_splits_half_half() {
        let w = splat_weights(&spec4(), [0.0f64, 0.125, 0.125]);
        assert_eq!(w.len(), 2);
        for (_, wi) in &w {
            assert!((wi - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn splat_at_center_stores_feature() {
        let mut grid = FeatureGrid::zeros(spec4());
        grid.splat([0.125f64, 0.125, 0.125], &[1.0, 0.0], 1.0).unwrap();
        let idx = spec4().cell_index(2, 2, 2);
        assert_eq!(grid.cell(idx), &[1.0, 0.0]);
        let total: f64 = grid.values().iter().map(|v| v.abs()).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn opposite_splats_cancel() {
        let mut grid = FeatureGrid::zeros(spec4());
        let x = [0.07f64, -0.21, 0.33];
        grid.splat(x, &[0.8, -0.4], 1.0).unwrap();
        grid.splat(x, &[-0.8, 0.4], 1.0).unwrap();
        assert!(grid.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_cell_splat_example() {
        // Feature 2.0 at an x-midpoint with scale 0.5: each of the two cells
        // holds 0.5 * 0.5 * 2.0 = 0.5, confirmed by direct weight enumeration.
        let spec = GridSpec::new(4, 1).unwrap();
        let x = [0.0f64, 0.125, 0.125];
        let weights = splat_weights(&spec, x);
        let mut grid = FeatureGrid::zeros(spec);
        grid.splat(x, &[2.0], 0.5).unwrap();
        for (cell, w) in weights {
            assert!((grid.cell(cell)[0] - 0.5 * w * 2.0).abs() < 1e-12);
            assert!((grid.cell(cell)[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_constant_grid_returns_constant() {
        let spec = GridSpec::new(5, 1).unwrap();
        let grid = FeatureGrid::from_values(spec, vec![3.5f64; spec.value_count()]).unwrap();
        for x in [[0.0, 0.0, 0.0], [0.21, -0.37, 0.44], [-0.5, 0.5, 0.0]] {
            let v = grid.sample(x);
            assert!((v[0] - 3.5).abs() < 1e-12, "at {x:?}: {v:?}");
        }
    }

    #[test]
    fn sample_outside_cube_is_zero() {
        let spec = GridSpec::new(4, 1).unwrap();
        let grid = FeatureGrid::from_values(spec, vec![1.0f64; spec.value_count()]).unwrap();
        assert_eq!(grid.sample([0.6, 0.0, 0.0]), vec![0.0]);
    }

    #[test]
    fn splat_then_sample_at_cell_center_is_exact() {
        let mut grid = FeatureGrid::zeros(spec4());
        let x = [0.125f64, -0.125, 0.375];
        grid.splat(x, &[0.7, -0.2], 1.0).unwrap();
        assert_eq!(grid.sample(x), vec![0.7, -0.2]);
    }

    #[test]
    fn rejects_non_finite_feature() {
        let mut grid = FeatureGrid::zeros(spec4());
        assert!(grid.splat([0.0, 0.0, 0.0], &[f64::NAN, 0.0], 1.0).is_err());
    }

    proptest! {
        /// Partition of unity over the clamped interior.
        #[test]
        fn weights_sum_to_one(
            x in -0.6f64..0.6, y in -0.6f64..0.6, z in -0.6f64..0.6,
            c in 1usize..9
        ) {
            let spec = GridSpec::new(c, 1).unwrap();
            let total: f64 = splat_weights(&spec, [x, y, z]).iter().map(|(_, w)| w).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
        }

        /// Splat linearity in the feature argument.
        #[test]
        fn splat_is_linear_in_features(
            x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5,
            f1 in -2.0f64..2.0, f2 in -2.0f64..2.0,
            a in -2.0f64..2.0, b in -2.0f64..2.0
        ) {
            let spec = GridSpec::new(4, 1).unwrap();
            let mut combined = FeatureGrid::zeros(spec);
            combined.splat([x, y, z], &[a * f1 + b * f2], 1.0).unwrap();
            let mut parts = FeatureGrid::zeros(spec);
            parts.splat([x, y, z], &[f1], a).unwrap();
            parts.splat([x, y, z], &[f2], b).unwrap();
            for (u, v) in combined.values().iter().zip(parts.values()) {
                prop_assert!((u - v).abs() <= 1e-6);
            }
        }

        /// Adjoint identity: <splat(x, f), G> = f . sample(G, x).
        #[test]
        fn splat_sample_adjoint(
            x in -0.45f64..0.45, y in -0.45f64..0.45, z in -0.45f64..0.45,
            seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let spec = GridSpec::new(4, 3).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let big = FeatureGrid::from_values(spec, g.clone()).unwrap();
            let mut splatted = FeatureGrid::zeros(spec);
            splatted.splat([x, y, z], &f, 1.0).unwrap();
            let lhs: f64 = splatted.values().iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = big.sample([x, y, z]).iter().zip(&f).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-6);
        }
    }
}
