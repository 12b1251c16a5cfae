//! Procedural surface color as a smooth function of symmetry-invariant
//! coordinates.
//!
//! For each class the color depends on the point only through quantities
//! invariant under the class's nominal symmetry (algebraic harmonics, so the
//! invariance is exact in floating point). Coordinate inference from color
//! alone is therefore ambiguous exactly up to the symmetry. A
//! symmetry-breaking mode appends the raw planar coordinates for ablation
//! diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::ShapeClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureMode {
    SymmetryInvariant,
    SymmetryBreaking,
}

/// Per-instance random color field.
#[derive(Debug, Clone)]
pub struct Texture {
    class: ShapeClass,
    mode: TextureMode,
    /// One (weights, phase) row per output channel.
    weights: Vec<[f64; 6]>,
    phases: [f64; 3],
}

impl Texture {
    /// Fixed, well-conditioned per-class projections from the invariant
    /// features to the three color channels (rows are diagonally dominant,
    /// so color inversion stays well-posed). Columns beyond a class's
    /// feature count are ignored by construction.
    fn base_projection(class: ShapeClass) -> [[f64; 6]; 3] {
        match class {
            ShapeClass::WedgeIdentity | ShapeClass::PlaneReflecty => [
                [1.4, 0.3, -0.4, 0.0, 0.6, 0.2],
                [-0.3, 1.3, 0.5, 0.0, -0.2, 0.5],
                [0.4, -0.5, 1.2, 0.0, 0.3, -0.4],
            ],
            ShapeClass::TableRot4 | ShapeClass::BenchRot2 => [
                [1.2, 0.3, -0.5, 0.4, 0.5, 0.2],
                [-0.3, 1.2, 0.6, -0.3, -0.2, 0.4],
                [0.5, -0.4, 1.1, 0.7, 0.3, -0.3],
            ],
            ShapeClass::BottleRotcont => [
                [1.5, 0.5, 0.0, 0.0, 0.5, 0.2],
                [-0.5, 1.4, 0.0, 0.0, -0.2, 0.4],
                [1.0, -1.1, 0.0, 0.0, 0.3, -0.3],
            ],
        }
    }

    pub fn new(class: ShapeClass, mode: TextureMode, seed: u64) -> Self {
        // The color-to-invariant mapping is fixed per class; the instance
        // seed only jitters it. Coordinates then stay per-pixel inferable
        // across instances and ambiguity comes from the symmetry alone.
        let mut inst_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e97);
        let base = Self::base_projection(class);
        let mut weights = Vec::with_capacity(3);
        let mut phases = [0.0; 3];
        // Arguments stay within the monotone lobe of sin, so each channel
        // is an invertible warp of its projection. Jitter stays at the
        // few-percent level: any texture variation the model cannot infer
        // from a pixel turns directly into coordinate noise.
        const ARG_SCALE: f64 = 0.55;
        const CHANNEL_PHASE: [f64; 3] = [0.0, 0.25, -0.25];
        for (ch, phase) in phases.iter_mut().enumerate() {
            let mut row = [0.0; 6];
            for (i, w) in row.iter_mut().enumerate() {
                *w = ARG_SCALE * base[ch][i] * inst_rng.gen_range(0.98..1.02);
            }
            weights.push(row);
            *phase = CHANNEL_PHASE[ch] + inst_rng.gen_range(-0.02..0.02);
        }
        Texture { class, mode, weights, phases }
    }

    /// Invariant feature vector, scaled to order one on the canonical cube.
    /// Rotational harmonics are radius-normalized (then re-scaled by the
    /// radius) so angular information stays strong at every radius; the
    /// algebra keeps the invariance exact in floating point.
    fn invariants(&self, p: [f64; 3]) -> [f64; 6] {
        let [x, y, z] = p;
        let rho2 = x * x + y * y;
        let rho = rho2.sqrt();
        let c2 = x * x - y * y;
        let s2 = 2.0 * x * y;
        let mut f = [0.0; 6];
        match self.class.nominal_symmetry() {
            crate::symmetry::SymmetryType::Identity => {
                f[0] = 2.0 * x;
                f[1] = 2.0 * y;
                f[2] = 2.0 * z;
            }
            crate::symmetry::SymmetryType::ReflectY => {
                // Centered so sin arguments stay in the monotone lobe.
                f[0] = 2.0 * x;
                f[1] = 4.0 * y.abs() - 1.0;
                f[2] = 2.0 * z;
            }
            crate::symmetry::SymmetryType::Rot2Z => {
                // rho * (cos 2t, sin 2t), exact under half turns.
                let scale = if rho2 > 1e-12 { 4.0 * rho / rho2 } else { 0.0 };
                f[0] = scale * c2;
                f[1] = scale * s2;
                f[2] = 2.0 * z;
                f[3] = 3.0 * rho - 0.8;
            }
            crate::symmetry::SymmetryType::Rot4Z => {
                // rho * (cos 4t, sin 4t), exact under quarter turns.
                let rho4 = rho2 * rho2;
                let scale = if rho4 > 1e-12 { 4.0 * rho / rho4 } else { 0.0 };
                f[0] = scale * (c2 * c2 - s2 * s2);
                f[1] = scale * (2.0 * c2 * s2);
                f[2] = 2.0 * z;
                f[3] = 3.0 * rho - 0.8;
            }
            crate::symmetry::SymmetryType::RotContZ => {
                f[0] = 3.0 * rho - 0.8;
                f[1] = 2.0 * z;
            }
        }
        if self.mode == TextureMode::SymmetryBreaking {
            f[4] = 2.0 * x;
            f[5] = 2.0 * y;
        }
        f
    }

    /// Well-separated per-class base colors; a single pixel then pins the
    /// class while the sinusoidal variation encodes the coordinates.
    fn palette(class: ShapeClass) -> [f64; 3] {
        match class {
            ShapeClass::TableRot4 => [0.72, 0.30, 0.28],
            ShapeClass::BenchRot2 => [0.28, 0.68, 0.32],
            ShapeClass::BottleRotcont => [0.30, 0.34, 0.74],
            ShapeClass::PlaneReflecty => [0.70, 0.68, 0.28],
            ShapeClass::WedgeIdentity => [0.32, 0.66, 0.72],
        }
    }

    /// RGB color in `[0, 1]` at a canonical-frame surface point.
    pub fn color(&self, p: [f64; 3]) -> [f32; 3] {
        let f = self.invariants(p);
        let base = Self::palette(self.class);
        let mut rgb = [0.0f32; 3];
        for ch in 0..3 {
            let w = &self.weights[ch];
            let arg: f64 = (0..6).map(|i| w[i] * f[i]).sum::<f64>() + self.phases[ch];
            rgb[ch] = (base[ch] + 0.26 * arg.sin()).clamp(0.0, 1.0) as f32;
        }
        rgb
    }
}
