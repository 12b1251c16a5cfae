//! Tape registrations for the grid operations.

use super::{axis_stencils, splat_weights, GridSpec};
use crate::diffcore::{Buffer, NodeId, Scalar, Tape};
use crate::{Error, Result};

/// Testing hooks for adjoint mutation checks. The gradient suite must fail
/// when a fault is armed; production paths never set these.
pub mod test_hooks {
    use std::sync::atomic::AtomicBool;
    use std::sync::{Mutex, MutexGuard};

    /// Flips the sign of the splat adjoint's feature contribution.
    pub static FLIP_SPLAT_FEATURE_ADJOINT: AtomicBool = AtomicBool::new(false);

    static SUITE_LOCK: Mutex<()> = Mutex::new(());

    /// Serializes tests that arm a fault against tests that require a
    /// healthy suite.
    pub fn exclusive() -> MutexGuard<'static, ()> {
        SUITE_LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

fn splat_feature_adjoint_sign<S: Scalar>() -> S {
    if test_hooks::FLIP_SPLAT_FEATURE_ADJOINT.load(std::sync::atomic::Ordering::Relaxed) {
        -S::one()
    } else {
        S::one()
    }
}

/// Splats `scale * f` at `x` into an empty grid; output is the flat grid
/// buffer `[cells^3 * feature_dim]`. Differentiable w.r.t. `x`, `f`, `scale`.
pub fn splat_node<S: Scalar>(
    tape: &mut Tape<S>,
    spec: GridSpec,
    x: NodeId,
    f: NodeId,
    scale: NodeId,
) -> Result<NodeId> {
    if tape.value(x).shape() != [3] {
        return Err(Error::shape("splat", format!("point must be [3], got {:?}", tape.value(x).shape())));
    }
    if tape.value(f).len() != spec.feature_dim {
        return Err(Error::shape(
            "splat",
            format!("feature dim {} vs grid dim {}", tape.value(f).len(), spec.feature_dim),
        ));
    }
    if !tape.value(f).all_finite() {
        return Err(Error::NonFinite("splat"));
    }
    if !tape.value(scale).is_scalar() {
        return Err(Error::shape("splat", "scale must be scalar"));
    }

    let point = [tape.value(x).data()[0], tape.value(x).data()[1], tape.value(x).data()[2]];
    let s = tape.value(scale).data()[0];
    let d = spec.feature_dim;
    let mut out = vec![S::zero(); spec.value_count()];
    for (cell, w) in splat_weights(&spec, point) {
        let sw = s * w;
        let fv = tape.value(f).data();
        for (o, &v) in out[cell * d..(cell + 1) * d].iter_mut().zip(fv) {
            *o = *o + sw * v;
        }
    }
    let value = Buffer::new(out, vec![spec.value_count()])?;
    Ok(tape.custom(
        "splat",
        vec![x, f, scale],
        value,
        Box::new(move |ctx| {
            let g = ctx.out_grad().data().to_vec();
            let xv = ctx.val(x).data();
            let point = [xv[0], xv[1], xv[2]];
            let fv = ctx.val(f).data().to_vec();
            let sv = ctx.val(scale).data()[0];
            let st = axis_stencils(&spec, point);
            let adj_sign = splat_feature_adjoint_sign::<S>();

            let mut gx = [S::zero(); 3];
            let mut gf = vec![S::zero(); d];
            let mut gs = S::zero();
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
                        let gcell = &g[cell * d..(cell + 1) * d];
                        let dot: S = gcell.iter().zip(&fv).map(|(&a, &b)| a * b).sum();
                        let w = wx * wy * wz;
                        gs = gs + w * dot;
                        gx[0] = gx[0] + sv * dot * dwx * wy * wz;
                        gx[1] = gx[1] + sv * dot * wx * dwy * wz;
                        gx[2] = gx[2] + sv * dot * wx * wy * dwz;
                        let sw = sv * w * adj_sign;
                        for (o, &gc) in gf.iter_mut().zip(gcell) {
                            *o = *o + sw * gc;
                        }
                    }
                }
            }
            for (dst, src) in ctx.grad_mut(x).iter_mut().zip(gx) {
                *dst = *dst + src;
            }
            for (dst, src) in ctx.grad_mut(f).iter_mut().zip(gf) {
                *dst = *dst + src;
            }
            ctx.grad_mut(scale)[0] = ctx.grad_mut(scale)[0] + gs;
        }),
    ))
}

/// Trilinear sample of a grid node at a point node; differentiable w.r.t.
/// both. Points outside the cube yield zeros with zero gradient.
pub fn sample_node<S: Scalar>(
    tape: &mut Tape<S>,
    spec: GridSpec,
    grid: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    if tape.value(grid).len() != spec.value_count() {
        return Err(Error::shape(
            "sample",
            format!("grid has {} values, spec wants {}", tape.value(grid).len(), spec.value_count()),
        ));
    }
    if tape.value(x).shape() != [3] {
        return Err(Error::shape("sample", format!("point must be [3], got {:?}", tape.value(x).shape())));
    }
    let d = spec.feature_dim;
    let xv = tape.value(x).data();
    let point = [xv[0], xv[1], xv[2]];
    let half = S::from_f64(0.5);
    let outside = point.iter().any(|&v| v < -half || v > half);

    let mut out = vec![S::zero(); d];
    if !outside {
        let gv = tape.value(grid).data();
        for (cell, w) in splat_weights(&spec, point) {
            for (o, &v) in out.iter_mut().zip(&gv[cell * d..(cell + 1) * d]) {
                *o = *o + w * v;
            }
        }
    }
    let value = Buffer::new(out, vec![d])?;
    Ok(tape.custom(
        "sample",
        vec![grid, x],
        value,
        Box::new(move |ctx| {
            if outside {
                return;
            }
            let g = ctx.out_grad().data().to_vec();
            let xv = ctx.val(x).data();
            let point = [xv[0], xv[1], xv[2]];
            let gridv = ctx.val(grid).data().to_vec();
            let st = axis_stencils(&spec, point);

            let mut gx = [S::zero(); 3];
            {
                let ggrid = ctx.grad_mut(grid);
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
                            let cellv = &gridv[cell * d..(cell + 1) * d];
                            let dot: S = g.iter().zip(cellv).map(|(&a, &b)| a * b).sum();
                            let w = wx * wy * wz;
                            gx[0] = gx[0] + dot * dwx * wy * wz;
                            gx[1] = gx[1] + dot * wx * dwy * wz;
                            gx[2] = gx[2] + dot * wx * wy * dwz;
                            let dst = &mut ggrid[cell * d..(cell + 1) * d];
                            for (o, &gi) in dst.iter_mut().zip(&g) {
                                *o = *o + w * gi;
                            }
                        }
                    }
                }
            }
            for (dst, src) in ctx.grad_mut(x).iter_mut().zip(gx) {
                *dst = *dst + src;
            }
        }),
    ))
}

/// Per-voxel gather of `[own features ; mean of the 6 face neighbors]`.
///
/// Input: flat grid `[cells^3 * channels]`. Output: `[cells^3, 2 * channels]`
/// rows. Out-of-range neighbors contribute zero and the divisor stays 6.
/// Linear, so the adjoint is the transposed scatter.
pub fn gather_self_neighbor_mean<S: Scalar>(
    tape: &mut Tape<S>,
    spec: GridSpec,
    grid: NodeId,
) -> Result<NodeId> {
    let ch = spec.feature_dim;
    if tape.value(grid).len() != spec.value_count() {
        return Err(Error::shape(
            "gather_neighbors",
            format!(
                "grid has {} values, spec wants {}",
                tape.value(grid).len(),
                spec.value_count()
            ),
        ));
    }
    let n = spec.cell_count();
    let c = spec.cells as isize;
    let sixth = S::from_f64(1.0 / 6.0);

    let neighbors = |index: usize| -> Vec<usize> {
        let (i, j, k) = spec.cell_coords(index);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        [(i - 1, j, k), (i + 1, j, k), (i, j - 1, k), (i, j + 1, k), (i, j, k - 1), (i, j, k + 1)]
            .into_iter()
            .filter(|&(a, b, d3)| a >= 0 && a < c && b >= 0 && b < c && d3 >= 0 && d3 < c)
            .map(|(a, b, d3)| spec.cell_index(a as usize, b as usize, d3 as usize))
            .collect()
    };

    let gv = tape.value(grid).data();
    let width = 2 * ch;
    let mut out = vec![S::zero(); n * width];
    for cell in 0..n {
        let row = &mut out[cell * width..(cell + 1) * width];
        row[..ch].copy_from_slice(&gv[cell * ch..(cell + 1) * ch]);
        for nb in neighbors(cell) {
            let src = &gv[nb * ch..(nb + 1) * ch];
            for (o, &v) in row[ch..].iter_mut().zip(src) {
                *o = *o + sixth * v;
            }
        }
    }
    let value = Buffer::new(out, vec![n, width])?;
    Ok(tape.custom(
        "gather_neighbors",
        vec![grid],
        value,
        Box::new(move |ctx| {
            let g = ctx.out_grad().data().to_vec();
            let ggrid = ctx.grad_mut(grid);
            for cell in 0..n {
                let row = &g[cell * width..(cell + 1) * width];
                let dst = &mut ggrid[cell * ch..(cell + 1) * ch];
                for (o, &v) in dst.iter_mut().zip(&row[..ch]) {
                    *o = *o + v;
                }
                let (i, j, k) = spec.cell_coords(cell);
                let (i, j, k) = (i as isize, j as isize, k as isize);
                for (a, b, d3) in [
                    (i - 1, j, k),
                    (i + 1, j, k),
                    (i, j - 1, k),
                    (i, j + 1, k),
                    (i, j, k - 1),
                    (i, j, k + 1),
                ] {
                    if a >= 0 && a < c && b >= 0 && b < c && d3 >= 0 && d3 < c {
                        let nb = spec.cell_index(a as usize, b as usize, d3 as usize);
                        let dstn = &mut ggrid[nb * ch..(nb + 1) * ch];
                        for (o, &v) in dstn.iter_mut().zip(&row[ch..]) {
                            *o = *o + sixth * v;
                        }
                    }
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    #[test]
    fn splat_gradients_match_fd() {
        let spec = GridSpec::new(3, 2).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let x = tape.input(inputs[0].clone());
            let f = tape.input(inputs[1].clone());
            let s = tape.input(inputs[2].clone());
            let grid = splat_node(tape, spec, x, f, s)?;
            let probe = tape.constant(inputs[3].clone());
            let weighted = tape.multiply(grid, probe)?;
            let loss = tape.sum(weighted);
            Ok((loss, vec![x, f, s]))
        };
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inputs = vec![
                Buffer::vector((0..3).map(|_| rng.gen_range(-0.4..0.4)).collect()),
                Buffer::vector((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                Buffer::scalar(rng.gen_range(0.2..1.5)),
                Buffer::vector((0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            ];
            let report = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn sample_gradients_match_fd() {
        let spec = GridSpec::new(3, 2).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let grid = tape.input(inputs[0].clone());
            let x = tape.input(inputs[1].clone());
            let sampled = sample_node(tape, spec, grid, x)?;
            let probe = tape.constant(inputs[2].clone());
            let weighted = tape.multiply(sampled, probe)?;
            let loss = tape.sum(weighted);
            Ok((loss, vec![grid, x]))
        };
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let inputs = vec![
                Buffer::vector((0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                Buffer::vector((0..3).map(|_| rng.gen_range(-0.4..0.4)).collect()),
                Buffer::vector((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            ];
            let report = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn fault_hook_breaks_the_check() {
        use std::sync::atomic::Ordering;
        let _guard = test_hooks::exclusive();
        let spec = GridSpec::new(3, 1).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let x = tape.constant(inputs[1].clone());
            let f = tape.input(inputs[0].clone());
            let one = tape.constant(Buffer::scalar(1.0));
            let grid = splat_node(tape, spec, x, f, one)?;
            let loss = tape.sum(grid);
            Ok((loss, vec![f]))
        };
        let inputs =
            vec![Buffer::vector(vec![0.7]), Buffer::vector(vec![0.1, 0.12, -0.2])];
        test_hooks::FLIP_SPLAT_FEATURE_ADJOINT.store(true, Ordering::SeqCst);
        let broken = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
        test_hooks::FLIP_SPLAT_FEATURE_ADJOINT.store(false, Ordering::SeqCst);
        assert!(!broken.passed());
        let healthy = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
        assert!(healthy.passed(), "{:?}", healthy.failures);
    }

    #[test]
    fn gather_identity_block_reproduces_grid() {
        let spec = GridSpec::new(2, 1).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let vals: Vec<f64> = (0..spec.value_count()).map(|i| i as f64).collect();
        let grid = tape.input(Buffer::vector(vals.clone()));
        let gathered = gather_self_neighbor_mean(&mut tape, spec, grid).unwrap();
        let out = tape.value(gathered);
        assert_eq!(out.shape(), &[8, 2]);
        for cell in 0..8 {
            assert_eq!(out.data()[cell * 2], vals[cell]);
        }
    }

    #[test]
    fn gather_gradients_match_fd() {
        let spec = GridSpec::new(2, 2).unwrap();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let grid = tape.input(inputs[0].clone());
            let gathered = gather_self_neighbor_mean(tape, spec, grid)?;
            let probe = tape.constant(inputs[1].clone());
            let weighted = tape.multiply(gathered, probe)?;
            let loss = tape.sum(weighted);
            Ok((loss, vec![grid]))
        };
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let inputs = vec![
            Buffer::vector((0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            Buffer::matrix(
                (0..spec.cell_count() * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                spec.cell_count(),
                4,
            )
            .unwrap(),
        ];
        let report = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }
}
