//! Symmetry-aware canonical coordinate prediction and its training losses.

mod field;
mod losses;
mod oracle;

pub use field::{
    predict_coords, CoordFieldValues, CoordinateField, GroundTruthCoords, PixelBatch,
};
pub use losses::{coord_loss, shape_distance_node, spurious_loss};
pub use oracle::ShapeOracle;

/// Euclidean distance from a point to the oracle's surface samples.
pub fn shape_distance(oracle: &ShapeOracle, x: [f64; 3]) -> f64 {
    oracle.distance(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, Buffer, NodeId, Tape};
    use crate::symmetry::{closure, ClosureSet, SymmetryType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Hand-built field over explicit coordinate/probability buffers, so the
    /// losses can be exercised without a predictor.
    fn raw_field(
        tape: &mut Tape<f64>,
        types: &[SymmetryType],
        coords: Buffer<f64>,
        probs: Buffer<f64>,
    ) -> (CoordinateField, NodeId, NodeId) {
        let n = coords.shape()[0];
        let coords_node = tape.input(coords);
        let probs_node = tape.input(probs);
        let features = tape.constant(Buffer::zeros(&[n, 1]));
        let pixel_input = tape.constant(Buffer::zeros(&[n, 5]));
        let field = CoordinateField {
            coords: coords_node,
            probs: probs_node,
            features,
            pixel_input,
            pixels: (0..n).map(|i| (i as u32, 0)).collect(),
            image_size: (n.max(1), 1),
            types: types.to_vec(),
        };
        (field, coords_node, probs_node)
    }

    /// Independent brute-force evaluation of the coordinate loss by closure
    /// enumeration (dense angles for the continuous type).
    fn coord_loss_brute(
        types: &[SymmetryType],
        coords: &[f64],
        probs: &[f64],
        gts: &[[f64; 3]],
        circle_angles: usize,
    ) -> f64 {
        let g = types.len();
        let n = gts.len();
        let mut total = 0.0;
        for u in 0..n {
            for (gi, &ty) in types.iter().enumerate() {
                let base = (u * g + gi) * 3;
                let c = [coords[base], coords[base + 1], coords[base + 2]];
                let d = match closure(ty, c) {
                    ClosureSet::Finite(points) => points
                        .iter()
                        .map(|p| {
                            ((p[0] - gts[u][0]).powi(2)
                                + (p[1] - gts[u][1]).powi(2)
                                + (p[2] - gts[u][2]).powi(2))
                            .sqrt()
                        })
                        .fold(f64::INFINITY, f64::min),
                    ClosureSet::Circle { radius, height } => (0..circle_angles)
                        .map(|i| {
                            let a = std::f64::consts::TAU * i as f64 / circle_angles as f64;
                            let p = [radius * a.cos(), radius * a.sin(), height];
                            ((p[0] - gts[u][0]).powi(2)
                                + (p[1] - gts[u][1]).powi(2)
                                + (p[2] - gts[u][2]).powi(2))
                            .sqrt()
                        })
                        .fold(f64::INFINITY, f64::min),
                };
                total += probs[u * g + gi] * d;
            }
        }
        total / n as f64
    }

    #[test]
    fn exact_identity_prediction_is_zero_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let types = [SymmetryType::Identity];
        let gt = [[0.1, -0.2, 0.3]];
        let (field, _, _) = raw_field(
            &mut tape,
            &types,
            Buffer::matrix(vec![0.1, -0.2, 0.3], 1, 3).unwrap(),
            Buffer::matrix(vec![1.0], 1, 1).unwrap(),
        );
        let loss = coord_loss(&mut tape, &field, &gt).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
    }

    #[test]
    fn closure_member_hit_is_zero_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let types = [SymmetryType::Rot4Z];
        // Ground truth is the 90-degree rotation of the prediction.
        let gt = [[-0.1, 0.2, 0.05]];
        let (field, _, _) = raw_field(
            &mut tape,
            &types,
            Buffer::matrix(vec![0.2, 0.1, 0.05], 1, 3).unwrap(),
            Buffer::matrix(vec![1.0], 1, 1).unwrap(),
        );
        let loss = coord_loss(&mut tape, &field, &gt).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-12);
    }

    #[test]
    fn two_type_mixture_averages_distances() {
        // Per-type minimum distances 0.2 and 0.4 at probabilities (0.5, 0.5)
        // combine to 0.3; expected value recomputed by brute enumeration.
        let mut tape: Tape<f64> = Tape::new();
        let types = [SymmetryType::Identity, SymmetryType::ReflectY];
        let gt = [[0.3, 0.0, 0.0]];
        // Identity coordinate at distance 0.2; reflection coordinate on the
        // mirror plane, so both members sit 0.4 away.
        let coords = vec![0.1, 0.0, 0.0, 0.3, 0.0, 0.4];
        let probs = vec![0.5, 0.5];
        let brute = coord_loss_brute(&types, &coords, &probs, &gt, 0);
        assert!((brute - 0.3).abs() < 1e-12);
        let (field, _, _) = raw_field(
            &mut tape,
            &types,
            Buffer::matrix(coords, 1, 6).unwrap(),
            Buffer::matrix(probs, 1, 2).unwrap(),
        );
        let loss = coord_loss(&mut tape, &field, &gt).unwrap();
        assert!((tape.value(loss).data()[0] - brute).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let types = SymmetryType::ALL;
        let g = types.len();
        for _ in 0..10 {
            let n = 3;
            let coords: Vec<f64> =
                (0..n * g * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut probs = Vec::new();
            for _ in 0..n {
                let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                probs.extend(raw.iter().map(|v| v / sum));
            }
            let gts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ]
                })
                .collect();
            let brute = coord_loss_brute(&types, &coords, &probs, &gts, 100_000);
            let mut tape: Tape<f64> = Tape::new();
            let (field, _, _) = raw_field(
                &mut tape,
                &types,
                Buffer::matrix(coords, n, g * 3).unwrap(),
                Buffer::matrix(probs, n, g).unwrap(),
            );
            let loss = coord_loss(&mut tape, &field, &gts).unwrap();
            let got = tape.value(loss).data()[0];
            assert!((got - brute).abs() < 1e-5, "analytic {got} vs brute {brute}");
        }
    }

    #[test]
    fn closure_invariance_of_coord_loss() {
        // Replacing a coordinate by another member of its own orbit leaves
        // the loss unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for ty in [SymmetryType::ReflectY, SymmetryType::Rot2Z, SymmetryType::Rot4Z] {
            let c = [
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
            ];
            let gt = [[
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
            ]];
            let ClosureSet::Finite(members) = closure(ty, c) else { panic!() };
            let mut values = Vec::new();
            for member in members {
                let mut tape: Tape<f64> = Tape::new();
                let (field, _, _) = raw_field(
                    &mut tape,
                    &[ty],
                    Buffer::matrix(member.to_vec(), 1, 3).unwrap(),
                    Buffer::matrix(vec![1.0], 1, 1).unwrap(),
                );
                let loss = coord_loss(&mut tape, &field, &gt).unwrap();
                values.push(tape.value(loss).data()[0]);
            }
            for v in &values {
                assert!((v - values[0]).abs() < 1e-6, "{values:?}");
            }
        }
    }

    #[test]
    fn losses_scale_linearly_in_probability() {
        let types = [SymmetryType::Identity];
        let gt = [[0.3, 0.0, 0.0]];
        let eval = |p: f64| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let (field, _, _) = raw_field(
                &mut tape,
                &types,
                Buffer::matrix(vec![0.1, 0.0, 0.0], 1, 3).unwrap(),
                Buffer::matrix(vec![p], 1, 1).unwrap(),
            );
            let loss = coord_loss(&mut tape, &field, &gt).unwrap();
            tape.value(loss).data()[0]
        };
        assert!((eval(1.0) - 2.0 * eval(0.5)).abs() < 1e-12);
        assert!(eval(0.25) >= 0.0);
    }

    #[test]
    fn coord_loss_gradients_match_fd() {
        let types = SymmetryType::ALL.to_vec();
        let g = types.len();
        let n = 2;
        let gts: Vec<[f64; 3]> = vec![[0.2, -0.1, 0.3], [-0.3, 0.2, -0.1]];
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let coords = tape.input(inputs[0].clone());
            let probs = tape.input(inputs[1].clone());
            let features = tape.constant(Buffer::zeros(&[n, 1]));
            let pixel_input = tape.constant(Buffer::zeros(&[n, 5]));
            let field = CoordinateField {
                coords,
                probs,
                features,
                pixel_input,
                pixels: (0..n).map(|i| (i as u32, 0)).collect(),
                image_size: (n, 1),
                types: types.clone(),
            };
            let loss = coord_loss(tape, &field, &gts)?;
            Ok((loss, vec![coords, probs]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let coords: Vec<f64> =
                (0..n * g * 3).map(|_| rng.gen_range(-0.45..0.45)).collect();
            let probs: Vec<f64> = (0..n * g).map(|_| rng.gen_range(0.05..0.5)).collect();
            let inputs = vec![
                Buffer::matrix(coords, n, g * 3).unwrap(),
                Buffer::matrix(probs, n, g).unwrap(),
            ];
            let report = grad_check(&program, &inputs, 1e-6, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    fn two_block_oracle() -> ShapeOracle {
        // Dense samples of two plates placed with 180-degree symmetry only.
        let mut points = Vec::new();
        let m = 14;
        for sign in [-1.0f64, 1.0] {
            for i in 0..m {
                for j in 0..m {
                    let y = -0.2 + 0.4 * (i as f64 / (m - 1) as f64);
                    let z = -0.2 + 0.4 * (j as f64 / (m - 1) as f64);
                    points.push([sign * 0.4, sign * y, z]);
                }
            }
        }
        ShapeOracle::new(points).unwrap()
    }

    #[test]
    fn on_surface_identity_has_tiny_spurious_loss() {
        let oracle = two_block_oracle();
        let mut tape: Tape<f64> = Tape::new();
        let (field, _, _) = raw_field(
            &mut tape,
            &[SymmetryType::Identity],
            Buffer::matrix(vec![0.4, 0.1, 0.1], 1, 3).unwrap(),
            Buffer::matrix(vec![1.0], 1, 1).unwrap(),
        );
        let loss = spurious_loss(&mut tape, &field, &oracle, 8, 0).unwrap();
        let gap = oracle.max_nn_gap();
        assert!(tape.value(loss).data()[0] <= gap, "loss exceeds sampling gap {gap}");
    }

    #[test]
    fn wrong_symmetry_type_is_penalized() {
        // A four-fold prediction on a two-fold-only shape: the quarter-turn
        // members leave the surface, so the loss is strictly positive. The
        // floor is measured by evaluating the oracle distance at the rotated
        // point directly.
        let oracle = two_block_oracle();
        let c = [0.4, 0.1, 0.1];
        let rotated = [-0.1, 0.4, 0.1];
        let direct = oracle.distance(rotated);
        assert!(direct > 0.05, "oracle setup: rotated point should be off-surface");
        let mut tape: Tape<f64> = Tape::new();
        let (field, _, _) = raw_field(
            &mut tape,
            &[SymmetryType::Rot4Z],
            Buffer::matrix(c.to_vec(), 1, 3).unwrap(),
            Buffer::matrix(vec![1.0], 1, 1).unwrap(),
        );
        let loss = spurious_loss(&mut tape, &field, &oracle, 8, 0).unwrap();
        assert!(tape.value(loss).data()[0] >= direct - 1e-9);
    }

    #[test]
    fn spurious_loss_gradients_match_fd() {
        let oracle = two_block_oracle();
        let types = vec![SymmetryType::Identity, SymmetryType::RotContZ];
        let g = types.len();
        let n = 2;
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let coords = tape.input(inputs[0].clone());
            let probs = tape.input(inputs[1].clone());
            let features = tape.constant(Buffer::zeros(&[n, 1]));
            let pixel_input = tape.constant(Buffer::zeros(&[n, 5]));
            let field = CoordinateField {
                coords,
                probs,
                features,
                pixel_input,
                pixels: (0..n).map(|i| (i as u32, 0)).collect(),
                image_size: (n, 1),
                types: types.clone(),
            };
            let loss = spurious_loss(tape, &field, &oracle, 6, 11)?;
            Ok((loss, vec![coords, probs]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..6 {
            let coords: Vec<f64> =
                (0..n * g * 3).map(|_| rng.gen_range(-0.45..0.45)).collect();
            let probs: Vec<f64> = (0..n * g).map(|_| rng.gen_range(0.05..0.5)).collect();
            let inputs = vec![
                Buffer::matrix(coords, n, g * 3).unwrap(),
                Buffer::matrix(probs, n, g).unwrap(),
            ];
            let report = grad_check(&program, &inputs, 1e-6, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn shape_distance_gradient_matches_fd() {
        let oracle = two_block_oracle();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let x = tape.input(inputs[0].clone());
            let d = shape_distance_node(tape, &oracle, x)?;
            Ok((d, vec![x]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let inputs = vec![Buffer::vector(vec![
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
            ])];
            let report = grad_check(&program, &inputs, 1e-6, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn gt_field_puts_probability_on_the_true_type() {
        let gt = GroundTruthCoords {
            coords: vec![0.2, 0.1, 0.05],
            mask: vec![true],
            image_size: (1, 1),
        };
        let field = CoordFieldValues::from_ground_truth(
            &gt,
            &SymmetryType::ALL,
            SymmetryType::Rot4Z,
        )
        .unwrap();
        assert_eq!(field.argmax_type(0), 3);
        assert_eq!(field.coord_of(0, 3), [0.2f32 as f64, 0.1f32 as f64, 0.05f32 as f64]);
        assert_eq!(field.prob_of(0, 0), 0.0);
    }

    #[test]
    fn empty_foreground_gives_zero_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let (field, _, _) = raw_field(
            &mut tape,
            &[SymmetryType::Identity],
            Buffer::zeros(&[0, 3]),
            Buffer::zeros(&[0, 1]),
        );
        let loss = coord_loss(&mut tape, &field, &[]).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
    }
}
