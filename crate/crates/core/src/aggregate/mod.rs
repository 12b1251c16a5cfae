//! Lifting per-view coordinate fields into voxel grids and aggregating
//! across views.
//!
//! Each foreground pixel splats its feature into every closure member of its
//! per-type coordinate, weighted by the type probability; a parallel scalar
//! grid records the splatted mass. Views are averaged voxel-wise by the
//! summed mass in ascending list order, then a small per-voxel map refines
//! the result over self + face-neighbor context.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonical::CoordinateField;
use crate::diffcore::{Buffer, NodeId, ParametricMap, Scalar, Tape};
use crate::symmetry::{apply_member, SymmetryType, CLOSURE_DEDUP_TOL};
use crate::voxelgrid::{axis_stencils, gather_self_neighbor_mean, GridSpec};
use crate::{Error, Result};

/// Per-view lifted grids (flat buffers on the tape).
#[derive(Debug, Clone, Copy)]
pub struct ViewLift {
    /// `[cells^3 * feature_dim]` splatted features.
    pub features: NodeId,
    /// `[cells^3]` splatted probability mass.
    pub weights: NodeId,
}

/// Aggregated grids: mass-weighted average, summed mass, refined features.
#[derive(Debug, Clone, Copy)]
pub struct AggregateGrid {
    pub averaged: NodeId,
    pub weight_sum: NodeId,
    pub refined: NodeId,
}

/// Orbit members of a finite type with their transform indices, deduplicated
/// so on-axis degenerate orbits splat once.
fn deduped_members(ty: SymmetryType, c: [f64; 3]) -> Vec<(usize, [f64; 3])> {
    let mut out: Vec<(usize, [f64; 3])> = Vec::with_capacity(4);
    for (mi, m) in ty.members().iter().enumerate() {
        let p = apply_member(m, c);
        let dup = out.iter().any(|(_, q)| {
            (q[0] - p[0]).abs() <= CLOSURE_DEDUP_TOL
                && (q[1] - p[1]).abs() <= CLOSURE_DEDUP_TOL
                && (q[2] - p[2]).abs() <= CLOSURE_DEDUP_TOL
        });
        if !dup {
            out.push((mi, p));
        }
    }
    out
}

/// Splats one view's field into feature and weight grids.
///
/// Finite types expand every closure member; the continuous type splats
/// `sample_count` points at angles seeded by `angle_seed` (a per-view seed,
/// so reordering a view list cannot change any view's samples). With
/// `decouple` set, coordinates and probabilities enter through stop-gradient
/// and downstream losses reach only the features.
pub fn lift_view<S: Scalar>(
    tape: &mut Tape<S>,
    field: &CoordinateField,
    spec: GridSpec,
    sample_count: usize,
    angle_seed: u64,
    decouple: bool,
) -> Result<ViewLift> {
    let n = field.pixel_count();
    let g = field.types.len();
    let d = spec.feature_dim;
    if tape.value(field.features).shape() != [n, d] {
        return Err(Error::shape(
            "lift_view",
            format!(
                "features {:?} vs {} pixels x grid dim {}",
                tape.value(field.features).shape(),
                n,
                d
            ),
        ));
    }
    if sample_count == 0 {
        return Err(Error::Config("lift_view sample_count must be >= 1".into()));
    }

    let coords = if decouple { tape.stop_gradient(field.coords) } else { field.coords };
    let probs = if decouple { tape.stop_gradient(field.probs) } else { field.probs };
    let features = field.features;
    let types = field.types.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(angle_seed);
    let angles: Vec<f64> = (0..n * sample_count)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let feat_len = spec.value_count();
    let cell_count = spec.cell_count();

    // Forward.
    let value = {
        let cv = tape.value(coords).data();
        let pv = tape.value(probs).data();
        let fv = tape.value(features).data();
        let mut out = vec![S::zero(); feat_len + cell_count];
        for u in 0..n {
            let frow = fv[u * d..(u + 1) * d].to_vec();
            for (gi, &ty) in types.iter().enumerate() {
                let p = pv[u * g + gi];
                let base = (u * g + gi) * 3;
                let c = [cv[base], cv[base + 1], cv[base + 2]];
                let mut splat_point = |x: [S; 3]| {
                    for (cell, w) in crate::voxelgrid::splat_weights(&spec, x) {
                        let pw = p * w;
                        let dst = &mut out[cell * d..(cell + 1) * d];
                        for (o, &f) in dst.iter_mut().zip(&frow) {
                            *o = *o + pw * f;
                        }
                        out[feat_len + cell] = out[feat_len + cell] + pw;
                    }
                };
                if ty.is_continuous() {
                    let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                    for s in 0..sample_count {
                        let a = angles[u * sample_count + s];
                        splat_point([
                            r * S::from_f64(a.cos()),
                            r * S::from_f64(a.sin()),
                            c[2],
                        ]);
                    }
                } else {
                    let cf = [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()];
                    for (_, member) in deduped_members(ty, cf) {
                        splat_point([
                            S::from_f64(member[0]),
                            S::from_f64(member[1]),
                            S::from_f64(member[2]),
                        ]);
                    }
                }
            }
        }
        Buffer::new(out, vec![feat_len + cell_count])?
    };

    let lift = tape.custom(
        "lift_view",
        vec![coords, probs, features],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            let (gv, gw) = go.split_at(feat_len);
            let cv = ctx.val(coords).data().to_vec();
            let pv = ctx.val(probs).data().to_vec();
            let fv = ctx.val(features).data().to_vec();

            let mut gc = vec![S::zero(); cv.len()];
            let mut gp = vec![S::zero(); pv.len()];
            let mut gf = vec![S::zero(); fv.len()];

            for u in 0..n {
                let frow = &fv[u * d..(u + 1) * d];
                for (gi, &ty) in types.iter().enumerate() {
                    let p = pv[u * g + gi];
                    let base = (u * g + gi) * 3;
                    let c = [cv[base], cv[base + 1], cv[base + 2]];

                    // One splatted point's adjoint; returns the gradient
                    // w.r.t. the point position.
                    let mut point_adjoint = |x: [S; 3]| -> [S; 3] {
                        let st = axis_stencils(&spec, x);
                        let mut gx = [S::zero(); 3];
                        for (ax, wx, dwx) in [
                            (st[0].lo, st[0].w_lo, st[0].dw_lo),
                            (st[0].hi, st[0].w_hi, -st[0].dw_lo),
                        ] {
                            for (ay, wy, dwy) in [
                                (st[1].lo, st[1].w_lo, st[1].dw_lo),
                                (st[1].hi, st[1].w_hi, -st[1].dw_lo),
                            ] {
                                for (az, wz, dwz) in [
                                    (st[2].lo, st[2].w_lo, st[2].dw_lo),
                                    (st[2].hi, st[2].w_hi, -st[2].dw_lo),
                                ] {
                                    let cell = spec.cell_index(ax, ay, az);
                                    let gcell = &gv[cell * d..(cell + 1) * d];
                                    let dot: S =
                                        gcell.iter().zip(frow).map(|(&a, &b)| a * b).sum();
                                    let combined = dot + gw[cell];
                                    let w = wx * wy * wz;
                                    gp[u * g + gi] = gp[u * g + gi] + w * combined;
                                    gx[0] = gx[0] + p * combined * dwx * wy * wz;
                                    gx[1] = gx[1] + p * combined * wx * dwy * wz;
                                    gx[2] = gx[2] + p * combined * wx * wy * dwz;
                                    let pw = p * w;
                                    let dst = &mut gf[u * d..(u + 1) * d];
                                    for (o, &gcv) in dst.iter_mut().zip(gcell) {
                                        *o = *o + pw * gcv;
                                    }
                                }
                            }
                        }
                        gx
                    };

                    if ty.is_continuous() {
                        let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                        for s in 0..sample_count {
                            let a = angles[u * sample_count + s];
                            let (cos_a, sin_a) =
                                (S::from_f64(a.cos()), S::from_f64(a.sin()));
                            let gx = point_adjoint([r * cos_a, r * sin_a, c[2]]);
                            let radial = gx[0] * cos_a + gx[1] * sin_a;
                            if r.as_f64() > 1e-12 {
                                gc[base] = gc[base] + radial * c[0] / r;
                                gc[base + 1] = gc[base + 1] + radial * c[1] / r;
                            }
                            gc[base + 2] = gc[base + 2] + gx[2];
                        }
                    } else {
                        let cf = [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()];
                        for (mi, member) in deduped_members(ty, cf) {
                            let gx = point_adjoint([
                                S::from_f64(member[0]),
                                S::from_f64(member[1]),
                                S::from_f64(member[2]),
                            ]);
                            let back = crate::symmetry::apply_member_transpose(
                                &ty.members()[mi],
                                gx,
                            );
                            for k in 0..3 {
                                gc[base + k] = gc[base + k] + back[k];
                            }
                        }
                    }
                }
            }

            for (dst, src) in ctx.grad_mut(coords).iter_mut().zip(&gc) {
                *dst = *dst + *src;
            }
            for (dst, src) in ctx.grad_mut(probs).iter_mut().zip(&gp) {
                *dst = *dst + *src;
            }
            for (dst, src) in ctx.grad_mut(features).iter_mut().zip(&gf) {
                *dst = *dst + *src;
            }
        }),
    );

    let features_grid = tape.slice_cols(lift, 0, feat_len)?;
    let weights_grid = tape.slice_cols(lift, feat_len, feat_len + cell_count)?;
    Ok(ViewLift { features: features_grid, weights: weights_grid })
}

/// Voxel-wise mass-weighted average across views, summed in ascending list
/// order. Cells whose total mass stays below `eps` output zero feature with
/// zero gradient.
pub fn average<S: Scalar>(
    tape: &mut Tape<S>,
    lifts: &[ViewLift],
    spec: GridSpec,
    eps: f64,
) -> Result<(NodeId, NodeId)> {
    if lifts.is_empty() {
        return Err(Error::Config("average needs at least one view lift".into()));
    }
    if eps <= 0.0 {
        return Err(Error::Config("average eps must be positive".into()));
    }
    for lift in lifts {
        if tape.value(lift.features).len() != spec.value_count()
            || tape.value(lift.weights).len() != spec.cell_count()
        {
            return Err(Error::shape("average", "view lift does not match grid spec"));
        }
    }
    let mut feat_sum = lifts[0].features;
    let mut weight_sum = lifts[0].weights;
    for lift in &lifts[1..] {
        feat_sum = tape.add(feat_sum, lift.features)?;
        weight_sum = tape.add(weight_sum, lift.weights)?;
    }

    let d = spec.feature_dim;
    let cells = spec.cell_count();
    let e = S::from_f64(eps);
    let value = {
        let fv = tape.value(feat_sum).data();
        let wv = tape.value(weight_sum).data();
        let mut out = vec![S::zero(); fv.len()];
        for cell in 0..cells {
            let w = wv[cell];
            if w >= e {
                for k in 0..d {
                    out[cell * d + k] = fv[cell * d + k] / w;
                }
            }
        }
        Buffer::new(out, vec![fv.len()])?
    };
    let averaged = tape.custom(
        "weighted_average",
        vec![feat_sum, weight_sum],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            let fv = ctx.val(feat_sum).data().to_vec();
            let wv = ctx.val(weight_sum).data().to_vec();
            {
                let gf = ctx.grad_mut(feat_sum);
                for cell in 0..cells {
                    let w = wv[cell];
                    if w >= e {
                        for k in 0..d {
                            gf[cell * d + k] = gf[cell * d + k] + go[cell * d + k] / w;
                        }
                    }
                }
            }
            let gw = ctx.grad_mut(weight_sum);
            for cell in 0..cells {
                let w = wv[cell];
                if w >= e {
                    let mut acc = S::zero();
                    for k in 0..d {
                        acc = acc + go[cell * d + k] * fv[cell * d + k];
                    }
                    gw[cell] = gw[cell] - acc / (w * w);
                }
            }
        }),
    );
    Ok((averaged, weight_sum))
}

/// Zips per-cell feature channels with the scalar weight channel into a
/// `(feature_dim + 1)`-channel grid. Linear.
pub fn append_weight_channel<S: Scalar>(
    tape: &mut Tape<S>,
    features: NodeId,
    weights: NodeId,
    spec: GridSpec,
) -> Result<NodeId> {
    let d = spec.feature_dim;
    let cells = spec.cell_count();
    if tape.value(features).len() != spec.value_count() || tape.value(weights).len() != cells {
        return Err(Error::shape("append_weight_channel", "grid sizes disagree"));
    }
    let width = d + 1;
    let value = {
        let fv = tape.value(features).data();
        let wv = tape.value(weights).data();
        let mut out = vec![S::zero(); cells * width];
        for cell in 0..cells {
            out[cell * width..cell * width + d].copy_from_slice(&fv[cell * d..(cell + 1) * d]);
            out[cell * width + d] = wv[cell];
        }
        Buffer::new(out, vec![cells * width])?
    };
    Ok(tape.custom(
        "append_weight_channel",
        vec![features, weights],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            {
                let gf = ctx.grad_mut(features);
                for cell in 0..cells {
                    for k in 0..d {
                        gf[cell * d + k] = gf[cell * d + k] + go[cell * width + k];
                    }
                }
            }
            let gw = ctx.grad_mut(weights);
            for cell in 0..cells {
                gw[cell] = gw[cell] + go[cell * width + d];
            }
        }),
    ))
}

/// Applies the refiner at every voxel over `[own ; face-neighbor mean]` of
/// the `[averaged ; weight]` channels, producing the final feature grid.
pub fn refine<S: Scalar>(
    tape: &mut Tape<S>,
    refiner: &ParametricMap,
    averaged: NodeId,
    weight_sum: NodeId,
    spec: GridSpec,
) -> Result<NodeId> {
    let d = spec.feature_dim;
    let expected_in = 2 * (d + 1);
    if refiner.input_dim() != expected_in || refiner.output_dim() != d {
        return Err(Error::shape(
            "refine",
            format!(
                "refiner dims {}->{} vs expected {}->{}",
                refiner.input_dim(),
                refiner.output_dim(),
                expected_in,
                d
            ),
        ));
    }
    let stacked = append_weight_channel(tape, averaged, weight_sum, spec)?;
    let stacked_spec = GridSpec::new(spec.cells, d + 1)?;
    let gathered = gather_self_neighbor_mean(tape, stacked_spec, stacked)?;
    let rows = refiner.apply(tape, gathered)?;
    tape.reshape(rows, vec![spec.value_count()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, Nonlinearity};
    use rand::Rng;

    fn spec(d: usize) -> GridSpec {
        GridSpec::new(4, d).unwrap()
    }

    fn field_on_tape(
        tape: &mut Tape<f64>,
        types: &[SymmetryType],
        coords: Vec<f64>,
        probs: Vec<f64>,
        feats: Vec<f64>,
        d: usize,
    ) -> CoordinateField {
        let g = types.len();
        let n = probs.len() / g;
        let coords = tape.input(Buffer::matrix(coords, n, g * 3).unwrap());
        let probs = tape.input(Buffer::matrix(probs, n, g).unwrap());
        let features = tape.input(Buffer::matrix(feats, n, d).unwrap());
        let pixel_input = tape.constant(Buffer::zeros(&[n, 5]));
        CoordinateField {
            coords,
            probs,
            features,
            pixel_input,
            pixels: (0..n).map(|i| (i as u32, 0)).collect(),
            image_size: (n, 1),
            types: types.to_vec(),
        }
    }

    #[test]
    fn identity_pixel_at_cell_center() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = spec(2);
        let field = field_on_tape(
            &mut tape,
            &[SymmetryType::Identity],
            vec![0.125, 0.125, 0.125],
            vec![1.0],
            vec![1.0, 0.0],
            2,
        );
        let lift = lift_view(&mut tape, &field, sp, 8, 0, false).unwrap();
        let idx = sp.cell_index(2, 2, 2);
        let feats = tape.value(lift.features).data();
        assert_eq!(&feats[idx * 2..idx * 2 + 2], &[1.0, 0.0]);
        let weights = tape.value(lift.weights).data();
        assert_eq!(weights[idx], 1.0);
        assert_eq!(weights.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn four_fold_pixel_splats_mass_4p() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = spec(1);
        let p = 0.7;
        let field = field_on_tape(
            &mut tape,
            &[SymmetryType::Rot4Z],
            vec![0.21, 0.09, 0.13],
            vec![p],
            vec![1.0],
            1,
        );
        let lift = lift_view(&mut tape, &field, sp, 8, 0, false).unwrap();
        let total: f64 = tape.value(lift.weights).data().iter().sum();
        assert!((total - 4.0 * p).abs() < 1e-9, "mass {total}");
    }

    #[test]
    fn lift_is_linear_in_features() {
        let run = |alpha: f64| -> (Vec<f64>, Vec<f64>) {
            let mut tape: Tape<f64> = Tape::new();
            let sp = spec(2);
            let field = field_on_tape(
                &mut tape,
                &[SymmetryType::ReflectY],
                vec![0.2, 0.17, -0.05],
                vec![0.8],
                vec![alpha * 0.5, alpha * -0.25],
                2,
            );
            let lift = lift_view(&mut tape, &field, sp, 8, 3, false).unwrap();
            (
                tape.value(lift.features).data().to_vec(),
                tape.value(lift.weights).data().to_vec(),
            )
        };
        let (f1, w1) = run(1.0);
        let (f3, w3) = run(3.0);
        for (a, b) in f1.iter().zip(&f3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
        assert_eq!(w1, w3);
    }

    #[test]
    fn mass_accounting_over_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let types = SymmetryType::ALL.to_vec();
        let g = types.len();
        let n = 6;
        let m = 5;
        let coords: Vec<f64> = (0..n * g * 3).map(|_| rng.gen_range(-0.49..0.49)).collect();
        let probs: Vec<f64> = (0..n * g).map(|_| rng.gen_range(0.0..0.4)).collect();
        let feats: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape: Tape<f64> = Tape::new();
        let field = field_on_tape(&mut tape, &types, coords.clone(), probs.clone(), feats, 1);
        let lift = lift_view(&mut tape, &field, spec(1), m, 1, false).unwrap();
        let total: f64 = tape.value(lift.weights).data().iter().sum();
        // Expected mass: per pixel and type, (deduped members or m samples) * P.
        let mut expected = 0.0;
        for u in 0..n {
            for (gi, &ty) in types.iter().enumerate() {
                let count = if ty.is_continuous() {
                    m
                } else {
                    let base = (u * g + gi) * 3;
                    deduped_members(ty, [coords[base], coords[base + 1], coords[base + 2]])
                        .len()
                };
                expected += count as f64 * probs[u * g + gi];
            }
        }
        assert!((total - expected).abs() < 1e-4, "{total} vs {expected}");
    }

    #[test]
    fn lift_gradients_match_fd() {
        let types = vec![SymmetryType::Identity, SymmetryType::Rot4Z, SymmetryType::RotContZ];
        let g = types.len();
        let n = 2;
        let d = 2;
        let sp = GridSpec::new(3, d).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
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
            let lift = lift_view(tape, &field, sp, 4, 21, false)?;
            let probe_f = tape.constant(inputs[3].clone());
            let probe_w = tape.constant(inputs[4].clone());
            let wf = tape.multiply(lift.features, probe_f)?;
            let ww = tape.multiply(lift.weights, probe_w)?;
            let sf = tape.sum(wf);
            let sw = tape.sum(ww);
            let loss = tape.add(sf, sw)?;
            Ok((loss, vec![coords, probs, features]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..6 {
            let inputs = vec![
                Buffer::matrix(
                    (0..n * g * 3).map(|_| rng.gen_range(-0.4..0.4)).collect(),
                    n,
                    g * 3,
                )
                .unwrap(),
                Buffer::matrix((0..n * g).map(|_| rng.gen_range(0.05..0.5)).collect(), n, g)
                    .unwrap(),
                Buffer::matrix((0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), n, d)
                    .unwrap(),
                Buffer::vector(
                    (0..sp.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ),
                Buffer::vector(
                    (0..sp.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ),
            ];
            let report = grad_check(&program, &inputs, 1e-6, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn decouple_blocks_coordinate_gradients() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = spec(1);
        let field = field_on_tape(
            &mut tape,
            &[SymmetryType::Rot2Z],
            vec![0.2, 0.1, 0.0],
            vec![0.9],
            vec![0.7],
            1,
        );
        let lift = lift_view(&mut tape, &field, sp, 8, 0, true).unwrap();
        let loss = tape.sum(lift.features);
        tape.backward(loss).unwrap();
        assert!(tape.grad(field.coords).is_none());
        assert!(tape.grad(field.probs).is_none());
        let gf = tape.grad(field.features).unwrap();
        assert!(gf.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn average_example_and_empty_cells() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = GridSpec::new(1, 1).unwrap();
        // Two single-cell views: weights (1, 3), features (2, 18).
        let mk = |tape: &mut Tape<f64>, f: f64, w: f64| -> ViewLift {
            ViewLift {
                features: tape.input(Buffer::vector(vec![f])),
                weights: tape.input(Buffer::vector(vec![w])),
            }
        };
        let a = mk(&mut tape, 2.0, 1.0);
        let b = mk(&mut tape, 18.0, 3.0);
        let (avg, wsum) = average(&mut tape, &[a, b], sp, 1e-8).unwrap();
        assert_eq!(tape.value(avg).data(), &[5.0]);
        assert_eq!(tape.value(wsum).data(), &[4.0]);
        // All-empty cell stays zero.
        let mut tape2: Tape<f64> = Tape::new();
        let z1 = mk(&mut tape2, 0.0, 0.0);
        let z2 = mk(&mut tape2, 0.0, 0.0);
        let (avg2, w2) = average(&mut tape2, &[z1, z2], sp, 1e-8).unwrap();
        assert_eq!(tape2.value(avg2).data(), &[0.0]);
        assert_eq!(tape2.value(w2).data(), &[0.0]);
    }

    #[test]
    fn single_view_average_is_normalized_lift() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = spec(1);
        let field = field_on_tape(
            &mut tape,
            &[SymmetryType::Identity],
            vec![0.1, -0.07, 0.22],
            vec![0.6],
            vec![2.0],
            1,
        );
        let lift = lift_view(&mut tape, &field, sp, 8, 0, false).unwrap();
        let (avg, _) = average(&mut tape, &[lift], sp, 1e-8).unwrap();
        for (cell, &w) in tape.value(lift.weights).data().iter().enumerate() {
            let f = tape.value(lift.features).data()[cell];
            let a = tape.value(avg).data()[cell];
            if w >= 1e-8 {
                assert!((a - f / w).abs() < 1e-12);
                assert!((a - 2.0).abs() < 1e-9, "feature average should be the input");
            } else {
                assert_eq!(a, 0.0);
            }
        }
    }

    #[test]
    fn average_gradients_match_fd() {
        let sp = GridSpec::new(2, 2).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let f1 = tape.input(inputs[0].clone());
            let w1 = tape.input(inputs[1].clone());
            let f2 = tape.input(inputs[2].clone());
            let w2 = tape.input(inputs[3].clone());
            let lifts = [
                ViewLift { features: f1, weights: w1 },
                ViewLift { features: f2, weights: w2 },
            ];
            let (avg, wsum) = average(tape, &lifts, sp, 1e-6)?;
            let probe = tape.constant(inputs[4].clone());
            let weighted = tape.multiply(avg, probe)?;
            let s1 = tape.sum(weighted);
            let s2 = tape.sum(wsum);
            let small = tape.scale(s2, 0.1);
            let loss = tape.add(s1, small)?;
            Ok((loss, vec![f1, w1, f2, w2]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let inputs = vec![
            Buffer::vector((0..sp.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            Buffer::vector((0..sp.cell_count()).map(|_| rng.gen_range(0.5..2.0)).collect()),
            Buffer::vector((0..sp.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            Buffer::vector((0..sp.cell_count()).map(|_| rng.gen_range(0.5..2.0)).collect()),
            Buffer::vector((0..sp.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        ];
        let report = grad_check(&program, &inputs, 1e-6, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn identity_initialized_refiner_reproduces_average() {
        let mut tape: Tape<f64> = Tape::new();
        let sp = spec(2);
        let d = sp.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refiner = ParametricMap::register(
            &mut tape,
            "hpsi",
            &[2 * (d + 1), d],
            Nonlinearity::Relu,
            &mut rng,
        )
        .unwrap();
        // Single dense stage whose weights copy the own-voxel feature block.
        {
            let w = tape.store_mut().value_mut("hpsi.w0").unwrap();
            w.fill(0.0);
            let in_dim = 2 * (d + 1);
            for k in 0..d {
                w.data_mut()[k * in_dim + k] = 1.0;
            }
        }
        let field = field_on_tape(
            &mut tape,
            &[SymmetryType::Identity],
            vec![0.13, -0.2, 0.31],
            vec![1.0],
            vec![0.8, -0.3],
            d,
        );
        let lift = lift_view(&mut tape, &field, sp, 8, 0, false).unwrap();
        let (avg, wsum) = average(&mut tape, &[lift], sp, 1e-8).unwrap();
        let refined = refine(&mut tape, &refiner, avg, wsum, sp).unwrap();
        let av = tape.value(avg).data();
        let rv = tape.value(refined).data();
        for (a, r) in av.iter().zip(rv) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn refined_output_is_view_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let sp = spec(2);
        let d = sp.feature_dim;
        let types = vec![SymmetryType::Identity, SymmetryType::Rot4Z];
        let g = types.len();
        let n = 5;
        // Three views with distinct fields and per-view seeds.
        let mut views = Vec::new();
        for v in 0..3u64 {
            let coords: Vec<f64> =
                (0..n * g * 3).map(|_| rng.gen_range(-0.45..0.45)).collect();
            let probs: Vec<f64> = (0..n * g).map(|_| rng.gen_range(0.1..0.5)).collect();
            let feats: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            views.push((coords, probs, feats, 100 + v));
        }
        let run = |order: &[usize]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut tape: Tape<f64> = Tape::new();
            let mut map_rng = ChaCha8Rng::seed_from_u64(77);
            let refiner = ParametricMap::register(
                &mut tape,
                "hpsi",
                &[2 * (d + 1), 8, d],
                Nonlinearity::Relu,
                &mut map_rng,
            )
            .unwrap();
            let lifts: Vec<ViewLift> = order
                .iter()
                .map(|&i| {
                    let (coords, probs, feats, seed) = &views[i];
                    let field = field_on_tape(
                        &mut tape,
                        &types,
                        coords.clone(),
                        probs.clone(),
                        feats.clone(),
                        d,
                    );
                    lift_view(&mut tape, &field, sp, 6, *seed, false).unwrap()
                })
                .collect();
            let (avg, wsum) = average(&mut tape, &lifts, sp, 1e-8).unwrap();
            let refined = refine(&mut tape, &refiner, avg, wsum, sp).unwrap();
            (
                tape.value(avg).data().to_vec(),
                tape.value(wsum).data().to_vec(),
                tape.value(refined).data().to_vec(),
            )
        };
        let (a1, w1, r1) = run(&[0, 1, 2]);
        let (a2, w2, r2) = run(&[2, 0, 1]);
        for (x, y) in a1.iter().zip(&a2) {
            assert!((x - y).abs() <= 1e-5);
        }
        for (x, y) in w1.iter().zip(&w2) {
            assert!((x - y).abs() <= 1e-5);
        }
        for (x, y) in r1.iter().zip(&r2) {
            assert!((x - y).abs() <= 1e-5);
        }
    }
}
