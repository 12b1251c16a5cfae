//! Per-pixel coordinate/probability/feature field representation.
//!
//! Foreground pixels are gathered into row batches in scan order (row-major
//! over the image); background pixels carry zero features and are excluded
//! from every sum, so the gathered form is the working representation.

use crate::diffcore::{Buffer, NodeId, ParametricMap, Scalar, Tape};
use crate::symmetry::{SymmetryConfig, SymmetryType};
use crate::{Error, Result};

/// Gathered per-pixel network inputs for one view: rows of
/// `[r, g, b, u, v]` with pixel coordinates normalized to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct PixelBatch<S: Scalar> {
    pub inputs: Buffer<S>,
    pub pixels: Vec<(u32, u32)>,
    pub image_size: (usize, usize),
}

impl<S: Scalar> PixelBatch<S> {
    pub fn from_image(image: &[f32], mask: &[bool], height: usize, width: usize) -> Result<Self> {
        if image.len() != height * width * 3 || mask.len() != height * width {
            return Err(Error::shape(
                "pixel_batch",
                format!(
                    "image {} / mask {} vs {}x{}",
                    image.len(),
                    mask.len(),
                    height,
                    width
                ),
            ));
        }
        let mut rows = Vec::new();
        let mut pixels = Vec::new();
        for r in 0..height {
            for c in 0..width {
                let p = r * width + c;
                if !mask[p] {
                    continue;
                }
                pixels.push((r as u32, c as u32));
                let u = ((c as f64 + 0.5) / width as f64) * 2.0 - 1.0;
                let v = ((r as f64 + 0.5) / height as f64) * 2.0 - 1.0;
                rows.push(S::from_f64(image[p * 3] as f64));
                rows.push(S::from_f64(image[p * 3 + 1] as f64));
                rows.push(S::from_f64(image[p * 3 + 2] as f64));
                rows.push(S::from_f64(u));
                rows.push(S::from_f64(v));
            }
        }
        let n = pixels.len();
        Ok(PixelBatch {
            inputs: Buffer::new(rows, vec![n, 5])?,
            pixels,
            image_size: (height, width),
        })
    }
}

/// Tape-resident symmetry-aware coordinate field for one view.
#[derive(Debug, Clone)]
pub struct CoordinateField {
    /// `[n, |G|*3]`, every triple inside the canonical cube.
    pub coords: NodeId,
    /// `[n, |G|]` rows on the probability simplex.
    pub probs: NodeId,
    /// `[n, D]` per-pixel features.
    pub features: NodeId,
    /// The marked input node carrying `[r,g,b,u,v]` rows (gradient target
    /// for saliency analysis).
    pub pixel_input: NodeId,
    pub pixels: Vec<(u32, u32)>,
    pub image_size: (usize, usize),
    pub types: Vec<SymmetryType>,
}

impl CoordinateField {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// Applies the predictor to every foreground pixel. The first `|G|*3`
/// outputs pass through `tanh` scaled by 0.5 (coordinates per type), the
/// next `|G|` are softmaxed into type probabilities, the remaining `D` are
/// features.
pub fn predict_coords<S: Scalar>(
    tape: &mut Tape<S>,
    predictor: &ParametricMap,
    batch: &PixelBatch<S>,
    sym: &SymmetryConfig,
    feature_dim: usize,
) -> Result<CoordinateField> {
    sym.validate()?;
    let g = sym.type_count();
    if predictor.input_dim() != 5 {
        return Err(Error::shape(
            "predict_coords",
            format!("predictor input dim {} != 5", predictor.input_dim()),
        ));
    }
    if predictor.output_dim() != g * 4 + feature_dim {
        return Err(Error::shape(
            "predict_coords",
            format!(
                "predictor output dim {} != |G|*4 + D = {}",
                predictor.output_dim(),
                g * 4 + feature_dim
            ),
        ));
    }
    let pixel_input = tape.input(batch.inputs.clone());
    let raw = predictor.apply(tape, pixel_input)?;
    let coord_raw = tape.slice_cols(raw, 0, g * 3)?;
    let coord_tanh = tape.tanh_op(coord_raw);
    let coords = tape.scale(coord_tanh, 0.5);
    let logits = tape.slice_cols(raw, g * 3, g * 4)?;
    let probs = tape.softmax(logits, 1)?;
    let features = tape.slice_cols(raw, g * 4, g * 4 + feature_dim)?;
    Ok(CoordinateField {
        coords,
        probs,
        features,
        pixel_input,
        pixels: batch.pixels.clone(),
        image_size: batch.image_size,
        types: sym.active_set.clone(),
    })
}

/// Ground-truth canonical coordinates for a view.
#[derive(Debug, Clone)]
pub struct GroundTruthCoords {
    /// Row-major `H*W*3`; undefined (zero) off the mask.
    pub coords: Vec<f32>,
    pub mask: Vec<bool>,
    pub image_size: (usize, usize),
}

impl GroundTruthCoords {
    /// Coordinates gathered at the field's foreground pixels; errors when
    /// the masks disagree.
    pub fn gather_for(&self, field_pixels: &[(u32, u32)]) -> Result<Vec<[f64; 3]>> {
        let (h, w) = self.image_size;
        let mask_count = self.mask.iter().filter(|&&m| m).count();
        if mask_count != field_pixels.len() {
            return Err(Error::Data(format!(
                "mask disagreement: gt has {} foreground pixels, field has {}",
                mask_count,
                field_pixels.len()
            )));
        }
        let mut out = Vec::with_capacity(field_pixels.len());
        for &(r, c) in field_pixels {
            let p = r as usize * w + c as usize;
            if r as usize >= h || c as usize >= w || !self.mask[p] {
                return Err(Error::Data(format!("field pixel ({r},{c}) not in gt mask")));
            }
            out.push([
                self.coords[p * 3] as f64,
                self.coords[p * 3 + 1] as f64,
                self.coords[p * 3 + 2] as f64,
            ]);
        }
        Ok(out)
    }
}

/// Plain-value coordinate field (extracted from a tape or built from ground
/// truth) for correspondence lookup and inspection.
#[derive(Debug, Clone)]
pub struct CoordFieldValues {
    pub coords: Vec<f64>,
    pub probs: Vec<f64>,
    pub pixels: Vec<(u32, u32)>,
    pub image_size: (usize, usize),
    pub types: Vec<SymmetryType>,
}

impl CoordFieldValues {
    pub fn from_tape<S: Scalar>(tape: &Tape<S>, field: &CoordinateField) -> Self {
        CoordFieldValues {
            coords: tape.value(field.coords).data().iter().map(|v| v.as_f64()).collect(),
            probs: tape.value(field.probs).data().iter().map(|v| v.as_f64()).collect(),
            pixels: field.pixels.clone(),
            image_size: field.image_size,
            types: field.types.clone(),
        }
    }

    /// Ground-truth field: probability one on `true_type`, coordinates equal
    /// to the exact canonical coordinates for every type slot.
    pub fn from_ground_truth(
        gt: &GroundTruthCoords,
        types: &[SymmetryType],
        true_type: SymmetryType,
    ) -> Result<Self> {
        let (h, w) = gt.image_size;
        let g = types.len();
        let type_idx = types
            .iter()
            .position(|&t| t == true_type)
            .ok_or_else(|| Error::Config(format!("type {} not active", true_type.name())))?;
        let mut pixels = Vec::new();
        let mut coords = Vec::new();
        let mut probs = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                if !gt.mask[p] {
                    continue;
                }
                pixels.push((r as u32, c as u32));
                for _ in 0..g {
                    coords.push(gt.coords[p * 3] as f64);
                    coords.push(gt.coords[p * 3 + 1] as f64);
                    coords.push(gt.coords[p * 3 + 2] as f64);
                }
                for gi in 0..g {
                    probs.push(if gi == type_idx { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(CoordFieldValues {
            coords,
            probs,
            pixels,
            image_size: gt.image_size,
            types: types.to_vec(),
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn coord_of(&self, pixel_row: usize, type_idx: usize) -> [f64; 3] {
        let g = self.types.len();
        let base = (pixel_row * g + type_idx) * 3;
        [self.coords[base], self.coords[base + 1], self.coords[base + 2]]
    }

    pub fn prob_of(&self, pixel_row: usize, type_idx: usize) -> f64 {
        self.probs[pixel_row * self.types.len() + type_idx]
    }

    /// Index of the most probable type for a pixel.
    pub fn argmax_type(&self, pixel_row: usize) -> usize {
        let g = self.types.len();
        let row = &self.probs[pixel_row * g..(pixel_row + 1) * g];
        let mut best = 0;
        for i in 1..g {
            if row[i] > row[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Nonlinearity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_batch() -> PixelBatch<f64> {
        let image = vec![0.5f32; 2 * 2 * 3];
        let mask = vec![true, false, false, true];
        PixelBatch::from_image(&image, &mask, 2, 2).unwrap()
    }

    #[test]
    fn batch_gathers_foreground_in_scan_order() {
        let batch = tiny_batch();
        assert_eq!(batch.pixels, vec![(0, 0), (1, 1)]);
        assert_eq!(batch.inputs.shape(), &[2, 5]);
        // Normalized coordinates of pixel (0,0) in a 2x2 image.
        assert!((batch.inputs.data()[3] - (-0.5)).abs() < 1e-12);
        assert!((batch.inputs.data()[4] - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_give_centered_uniform_field() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sym = SymmetryConfig::full(0);
        let d = 4;
        let out_dim = sym.type_count() * 4 + d;
        let predictor = ParametricMap::register(
            &mut tape,
            "ftheta",
            &[5, out_dim],
            Nonlinearity::Relu,
            &mut rng,
        )
        .unwrap();
        tape.store_mut().value_mut("ftheta.w0").unwrap().fill(0.0);
        let batch = tiny_batch();
        let field = predict_coords(&mut tape, &predictor, &batch, &sym, d).unwrap();
        for &v in tape.value(field.coords).data() {
            assert_eq!(v, 0.0);
        }
        for &p in tape.value(field.probs).data() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn single_type_softmax_is_one() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sym = SymmetryConfig::identity_only(0);
        let predictor =
            ParametricMap::register(&mut tape, "ftheta", &[5, 4 + 2], Nonlinearity::Relu, &mut rng)
                .unwrap();
        let field = predict_coords(&mut tape, &predictor, &tiny_batch(), &sym, 2).unwrap();
        for &p in tape.value(field.probs).data() {
            assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn wrong_dims_rejected() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sym = SymmetryConfig::full(0);
        let predictor =
            ParametricMap::register(&mut tape, "bad", &[5, 7], Nonlinearity::Relu, &mut rng)
                .unwrap();
        assert!(predict_coords(&mut tape, &predictor, &tiny_batch(), &sym, 4).is_err());
    }

    #[test]
    fn coords_stay_in_cube() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sym = SymmetryConfig::full(0);
        let d = 2;
        let out_dim = sym.type_count() * 4 + d;
        let predictor = ParametricMap::register(
            &mut tape,
            "ftheta",
            &[5, 16, out_dim],
            Nonlinearity::Tanh,
            &mut rng,
        )
        .unwrap();
        let field = predict_coords(&mut tape, &predictor, &tiny_batch(), &sym, d).unwrap();
        for &v in tape.value(field.coords).data() {
            assert!(v.abs() <= 0.5);
        }
        for row in 0..2 {
            let g = sym.type_count();
            let sum: f64 = tape.value(field.probs).data()[row * g..(row + 1) * g].iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}
