//! Registry of finite-difference checks covering every registered
//! differentiable operation, runnable from tests and the command line.
//!
//! Each entry builds a small scalar program with seeded random inputs and
//! compares analytic against central-difference gradients at f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonical::{
    coord_loss, shape_distance_node, spurious_loss, CoordinateField, ShapeOracle,
};
use crate::diffcore::{grad_check, Buffer, GradCheckReport, Nonlinearity, ParametricMap, Tape};
use crate::heads::{
    decode, depth_pool, occupancy_loss, predict_occupancy, project, upsample2x, Camera,
    RenderSettings,
};
use crate::symmetry::SymmetryType;
use crate::voxelgrid::{gather_self_neighbor_mean, sample_node, splat_node, GridSpec};
use crate::Result;

pub const SUITE_STEP: f64 = 1e-5;
pub const SUITE_TOL: f64 = 1e-4;

type ProgramBox = Box<dyn Fn(&mut Tape<f64>, &[Buffer<f64>]) -> Result<(crate::diffcore::NodeId, Vec<crate::diffcore::NodeId>)>>;

pub struct SuiteCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

fn rng_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn probe_loss(
    tape: &mut Tape<f64>,
    out: crate::diffcore::NodeId,
    probe: Buffer<f64>,
) -> Result<crate::diffcore::NodeId> {
    let p = tape.constant(probe);
    let weighted = tape.multiply(out, p)?;
    Ok(tape.sum(weighted))
}

fn small_oracle() -> ShapeOracle {
    let mut points = Vec::new();
    let m = 10;
    for i in 0..m {
        for j in 0..m {
            let a = -0.35 + 0.7 * (i as f64 / (m - 1) as f64);
            let b = -0.35 + 0.7 * (j as f64 / (m - 1) as f64);
            points.push([a, b, 0.3]);
            points.push([a, 0.35, b]);
            points.push([-0.35, a, b]);
        }
    }
    ShapeOracle::new(points).expect("non-empty")
}

fn field_program(
    types: Vec<SymmetryType>,
    n: usize,
    build: impl Fn(
            &mut Tape<f64>,
            CoordinateField,
        ) -> Result<crate::diffcore::NodeId>
        + 'static,
) -> ProgramBox {
    Box::new(move |tape, inputs| {
        let coords = tape.input(inputs[0].clone());
        let probs = tape.input(inputs[1].clone());
        let features = tape.input(inputs[2].clone());
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
        let loss = build(tape, field)?;
        Ok((loss, vec![coords, probs, features]))
    })
}

fn field_inputs(rng: &mut ChaCha8Rng, n: usize, g: usize, d: usize) -> Vec<Buffer<f64>> {
    vec![
        Buffer::matrix(rng_vec(rng, n * g * 3, -0.42, 0.42), n, g * 3).unwrap(),
        Buffer::matrix(rng_vec(rng, n * g, 0.05, 0.5), n, g).unwrap(),
        Buffer::matrix(rng_vec(rng, n * d, -1.0, 1.0), n, d).unwrap(),
    ]
}

/// One named check at one seed.
fn run_check(name: &'static str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let spec = GridSpec::new(3, 2).unwrap();
    match name {
        "add" | "subtract" | "multiply" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let a = tape.input(inputs[0].clone());
                let b = tape.input(inputs[1].clone());
                let out = match name {
                    "add" => tape.add(a, b)?,
                    "subtract" => tape.subtract(a, b)?,
                    _ => tape.multiply(a, b)?,
                };
                let loss = probe_loss(tape, out, inputs[2].clone())?;
                Ok((loss, vec![a, b]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 5, -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, 5, -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, 5, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "divide_eps" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let a = tape.input(inputs[0].clone());
                let b = tape.input(inputs[1].clone());
                let out = tape.divide_eps(a, b, 1e-8)?;
                let loss = probe_loss(tape, out, inputs[2].clone())?;
                Ok((loss, vec![a, b]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 5, -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, 5, 0.4, 2.0)),
                Buffer::vector(rng_vec(&mut rng, 5, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "relu" | "tanh" | "sigmoid" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let out = match name {
                    "relu" => tape.relu(x),
                    "tanh" => tape.tanh_op(x),
                    _ => tape.sigmoid(x),
                };
                let loss = probe_loss(tape, out, inputs[1].clone())?;
                Ok((loss, vec![x]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 6, -1.5, 1.5)),
                Buffer::vector(rng_vec(&mut rng, 6, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "softmax" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let out = tape.softmax(x, 1)?;
                let loss = probe_loss(tape, out, inputs[1].clone())?;
                Ok((loss, vec![x]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 8, -2.0, 2.0), 2, 4).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 8, -1.0, 1.0), 2, 4).unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "dense" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let w = tape.input(inputs[0].clone());
                let b = tape.input(inputs[1].clone());
                let x = tape.input(inputs[2].clone());
                let out = tape.dense(w, b, x)?;
                let loss = probe_loss(tape, out, inputs[3].clone())?;
                Ok((loss, vec![w, b, x]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 6, -1.0, 1.0), 2, 3).unwrap(),
                Buffer::vector(rng_vec(&mut rng, 2, -0.5, 0.5)),
                Buffer::matrix(rng_vec(&mut rng, 9, -1.0, 1.0), 3, 3).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 6, -1.0, 1.0), 3, 2).unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "sum" | "mean" | "l2_norm" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let loss = match name {
                    "sum" => tape.sum(x),
                    "mean" => tape.mean(x),
                    _ => tape.l2_norm(x),
                };
                Ok((loss, vec![x]))
            });
            let inputs = vec![Buffer::vector(rng_vec(&mut rng, 7, 0.2, 1.5))];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "l1_loss" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let a = tape.input(inputs[0].clone());
                let b = tape.input(inputs[1].clone());
                let loss = tape.l1_loss(a, b)?;
                Ok((loss, vec![a, b]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 6, -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, 6, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "bce_with_logits" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let z = tape.input(inputs[0].clone());
                let t = tape.constant(inputs[1].clone());
                let loss = tape.bce_with_logits(z, t)?;
                Ok((loss, vec![z]))
            });
            let targets: Vec<f64> =
                (0..6).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 6, -2.0, 2.0)),
                Buffer::vector(targets),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "concat_slice" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let a = tape.input(inputs[0].clone());
                let b = tape.input(inputs[1].clone());
                let cat = tape.concat(a, b)?;
                let sliced = tape.slice_cols(cat, 1, 4)?;
                let loss = probe_loss(tape, sliced, inputs[2].clone())?;
                Ok((loss, vec![a, b]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 4, -1.0, 1.0), 2, 2).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 4, -1.0, 1.0), 2, 2).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 6, -1.0, 1.0), 2, 3).unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "scale_reshape" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let scaled = tape.scale(x, -1.7);
                let reshaped = tape.reshape(scaled, vec![6])?;
                let loss = probe_loss(tape, reshaped, inputs[1].clone())?;
                Ok((loss, vec![x]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 6, -1.0, 1.0), 2, 3).unwrap(),
                Buffer::vector(rng_vec(&mut rng, 6, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "splat" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let f = tape.input(inputs[1].clone());
                let s = tape.input(inputs[2].clone());
                let grid = splat_node(tape, spec, x, f, s)?;
                let loss = probe_loss(tape, grid, inputs[3].clone())?;
                Ok((loss, vec![x, f, s]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, 3, -0.4, 0.4)),
                Buffer::vector(rng_vec(&mut rng, 2, -1.0, 1.0)),
                Buffer::scalar(rng.gen_range(0.3..1.4)),
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "sample" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let grid = tape.input(inputs[0].clone());
                let x = tape.input(inputs[1].clone());
                let out = sample_node(tape, spec, grid, x)?;
                let loss = probe_loss(tape, out, inputs[2].clone())?;
                Ok((loss, vec![grid, x]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, 3, -0.4, 0.4)),
                Buffer::vector(rng_vec(&mut rng, 2, -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "gather_neighbors" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let grid = tape.input(inputs[0].clone());
                let out = gather_self_neighbor_mean(tape, spec, grid)?;
                let loss = probe_loss(tape, out, inputs[1].clone())?;
                Ok((loss, vec![grid]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::matrix(
                    rng_vec(&mut rng, spec.cell_count() * 4, -1.0, 1.0),
                    spec.cell_count(),
                    4,
                )
                .unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "coord_loss" => {
            let types = SymmetryType::ALL.to_vec();
            let n = 2;
            let gts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    ]
                })
                .collect();
            let inputs = field_inputs(&mut rng, n, types.len(), 1);
            let program = field_program(types, n, move |tape, field| {
                coord_loss(tape, &field, &gts)
            });
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "spurious_loss" => {
            let types = SymmetryType::ALL.to_vec();
            let n = 2;
            let oracle = small_oracle();
            let inputs = field_inputs(&mut rng, n, types.len(), 1);
            let program = field_program(types, n, move |tape, field| {
                spurious_loss(tape, &field, &oracle, 4, 99)
            });
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "shape_distance" => {
            let oracle = small_oracle();
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let x = tape.input(inputs[0].clone());
                let d = shape_distance_node(tape, &oracle, x)?;
                Ok((d, vec![x]))
            });
            let inputs = vec![Buffer::vector(rng_vec(&mut rng, 3, -0.45, 0.45))];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "lift_view" => {
            let types =
                vec![SymmetryType::Identity, SymmetryType::Rot4Z, SymmetryType::RotContZ];
            let n = 2;
            let d = spec.feature_dim;
            let probe_f = Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0));
            let probe_w = Buffer::vector(rng_vec(&mut rng, spec.cell_count(), -1.0, 1.0));
            let inputs = field_inputs(&mut rng, n, types.len(), d);
            let program = field_program(types, n, move |tape, field| {
                let lift = crate::aggregate::lift_view(tape, &field, spec, 3, 5, false)?;
                let pf = tape.constant(probe_f.clone());
                let pw = tape.constant(probe_w.clone());
                let wf = tape.multiply(lift.features, pf)?;
                let ww = tape.multiply(lift.weights, pw)?;
                let sf = tape.sum(wf);
                let sw = tape.sum(ww);
                tape.add(sf, sw)
            });
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "weighted_average" => {
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let f1 = tape.input(inputs[0].clone());
                let w1 = tape.input(inputs[1].clone());
                let f2 = tape.input(inputs[2].clone());
                let w2 = tape.input(inputs[3].clone());
                let lifts = [
                    crate::aggregate::ViewLift { features: f1, weights: w1 },
                    crate::aggregate::ViewLift { features: f2, weights: w2 },
                ];
                let (avg, _) = crate::aggregate::average(tape, &lifts, spec, 1e-6)?;
                let loss = probe_loss(tape, avg, inputs[4].clone())?;
                Ok((loss, vec![f1, w1, f2, w2]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, spec.cell_count(), 0.4, 2.0)),
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, spec.cell_count(), 0.4, 2.0)),
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "refine" => {
            let d = spec.feature_dim;
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let mut map_rng = ChaCha8Rng::seed_from_u64(3);
                let refiner = ParametricMap::register(
                    tape,
                    "hpsi",
                    &[2 * (d + 1), 5, d],
                    Nonlinearity::Tanh,
                    &mut map_rng,
                )?;
                let avg = tape.input(inputs[0].clone());
                let wsum = tape.input(inputs[1].clone());
                let refined = crate::aggregate::refine(tape, &refiner, avg, wsum, spec)?;
                let loss = probe_loss(tape, refined, inputs[2].clone())?;
                Ok((loss, vec![avg, wsum]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::vector(rng_vec(&mut rng, spec.cell_count(), 0.2, 2.0)),
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "project" => {
            let cam = Camera {
                azimuth_deg: rng.gen_range(0.0..360.0),
                elevation_deg: rng.gen_range(-20.0..40.0),
                distance: 1.5,
                translation: [0.0; 3],
                focal: 1.2,
                image_size: (2, 2),
            };
            let settings = RenderSettings { ray_grid: 2, depth_samples: 3, output_size: 2 };
            let d = spec.feature_dim;
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let mut map_rng = ChaCha8Rng::seed_from_u64(4);
                let occl = ParametricMap::register(
                    tape,
                    "occl",
                    &[d + 1, 4, 1],
                    Nonlinearity::Tanh,
                    &mut map_rng,
                )?;
                let grid = tape.input(inputs[0].clone());
                let pooled = project(tape, grid, spec, &cam, &occl, &settings)?;
                let loss = probe_loss(tape, pooled, inputs[1].clone())?;
                Ok((loss, vec![grid]))
            });
            let inputs = vec![
                Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0)),
                Buffer::matrix(rng_vec(&mut rng, 4 * spec.feature_dim, -1.0, 1.0), 4, spec.feature_dim)
                    .unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "decode" => {
            let settings = RenderSettings { ray_grid: 2, depth_samples: 2, output_size: 4 };
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let mut map_rng = ChaCha8Rng::seed_from_u64(5);
                let decoder = ParametricMap::register(
                    tape,
                    "dec",
                    &[2, 5, 3],
                    Nonlinearity::Tanh,
                    &mut map_rng,
                )?;
                let map = tape.input(inputs[0].clone());
                let image = decode(tape, &decoder, map, &settings)?;
                let loss = probe_loss(tape, image, inputs[1].clone())?;
                Ok((loss, vec![map]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 8, -1.0, 1.0), 4, 2).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 48, -1.0, 1.0), 16, 3).unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "upsample_depth_pool" => {
            let program: ProgramBox = Box::new(|tape, inputs| {
                let feats = tape.input(inputs[0].clone());
                let weights = tape.input(inputs[1].clone());
                let pooled = depth_pool(tape, feats, weights, 3)?;
                let up = upsample2x(tape, pooled, 2)?;
                let loss = probe_loss(tape, up, inputs[2].clone())?;
                Ok((loss, vec![feats, weights]))
            });
            let inputs = vec![
                Buffer::matrix(rng_vec(&mut rng, 12 * 2, -1.0, 1.0), 12, 2).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 12, 0.1, 1.0), 4, 3).unwrap(),
                Buffer::matrix(rng_vec(&mut rng, 32, -1.0, 1.0), 16, 2).unwrap(),
            ];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        "occupancy_head" => {
            let gt: Vec<bool> = (0..spec.cell_count()).map(|_| rng.gen_bool(0.4)).collect();
            let d = spec.feature_dim;
            let program: ProgramBox = Box::new(move |tape, inputs| {
                let mut map_rng = ChaCha8Rng::seed_from_u64(6);
                let head = ParametricMap::register(
                    tape,
                    "occ",
                    &[2 * d, 5, 1],
                    Nonlinearity::Tanh,
                    &mut map_rng,
                )?;
                let grid = tape.input(inputs[0].clone());
                let (logits, _) = predict_occupancy(tape, &head, grid, spec)?;
                let loss = occupancy_loss(tape, logits, &gt)?;
                Ok((loss, vec![grid]))
            });
            let inputs =
                vec![Buffer::vector(rng_vec(&mut rng, spec.value_count(), -1.0, 1.0))];
            grad_check(&program, &inputs, SUITE_STEP, SUITE_TOL)
        }
        other => Err(crate::Error::Config(format!("unknown gradient check {other:?}"))),
    }
}

/// Every op name the suite covers.
pub const SUITE_OPS: [&str; 24] = [
    "add",
    "subtract",
    "multiply",
    "divide_eps",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "dense",
    "sum",
    "mean",
    "l2_norm",
    "l1_loss",
    "bce_with_logits",
    "concat_slice",
    "scale_reshape",
    "splat",
    "sample",
    "gather_neighbors",
    "coord_loss",
    "spurious_loss",
    "shape_distance",
    "lift_view",
    "weighted_average",
];

/// Ops beyond the primitive list (composites and heads).
pub const SUITE_COMPOSITES: [&str; 5] =
    ["refine", "project", "decode", "upsample_depth_pool", "occupancy_head"];

/// Runs every check over `seeds` seeds; returns one aggregated entry per op
/// with the worst report (the first failing seed's, if any).
pub fn run_suite(seeds: u64) -> Result<Vec<SuiteCheck>> {
    let mut out = Vec::new();
    for op in SUITE_OPS.iter().chain(SUITE_COMPOSITES.iter()) {
        let mut worst: Option<GradCheckReport> = None;
        for seed in 0..seeds {
            let report = run_check(op, seed)?;
            let failed = !report.passed();
            let replace = match &worst {
                None => true,
                Some(w) => {
                    (failed && w.passed())
                        || (failed == !w.passed() && report.max_rel_error > w.max_rel_error)
                }
            };
            if replace {
                worst = Some(report);
            }
            if failed {
                break;
            }
        }
        out.push(SuiteCheck { op, report: worst.expect("at least one seed") });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_on_a_few_seeds() {
        let _guard = crate::voxelgrid::test_hooks::exclusive();
        let checks = run_suite(3).unwrap();
        assert_eq!(checks.len(), SUITE_OPS.len() + SUITE_COMPOSITES.len());
        for c in &checks {
            assert!(
                c.report.passed(),
                "{} failed: {:?}",
                c.op,
                c.report.failures
            );
        }
    }
}
