//! Differentiable novel-view rendering from the aggregate feature grid.
//!
//! Per ray: uniform depth samples across the ray/cube intersection, trilinear
//! feature samples, per-depth occlusion logits, a softmax over depth, and a
//! weighted feature sum. The pooled map is optionally upsampled by
//! nearest-neighbor doublings and decoded per pixel into colors.

use serde::{Deserialize, Serialize};

use super::camera::{cast_ray, Camera};
use crate::diffcore::{Buffer, NodeId, ParametricMap, Scalar, Tape};
use crate::voxelgrid::GridSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    /// Rays per side of the square ray grid.
    pub ray_grid: usize,
    /// Depth samples per ray.
    pub depth_samples: usize,
    /// Output image side; must be `ray_grid * 2^k`.
    pub output_size: usize,
}

impl RenderSettings {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        RenderSettings { ray_grid: 16, depth_samples: 16, output_size: 32 }
    }

    /// Full-scale reference settings.
    pub fn full() -> Self {
        RenderSettings { ray_grid: 56, depth_samples: 64, output_size: 224 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ray_grid == 0 || self.depth_samples == 0 {
            return Err(Error::Config("ray grid and depth samples must be >= 1".into()));
        }
        let mut s = self.ray_grid;
        while s < self.output_size {
            s *= 2;
        }
        if s != self.output_size {
            return Err(Error::Config(format!(
                "output size {} is not ray grid {} times a power of two",
                self.output_size, self.ray_grid
            )));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        let mut s = self.ray_grid;
        let mut stages = 0;
        while s < self.output_size {
            s *= 2;
            stages += 1;
        }
        stages
    }
}

/// Trilinear samples of the grid at every (ray, depth) position.
///
/// Positions are fixed by the camera, so the op is linear in the grid; miss
/// rays contribute zero rows. Returns the sample node
/// (`[rays * depths, D]`) plus the normalized depth constants.
pub fn sample_rays<S: Scalar>(
    tape: &mut Tape<S>,
    grid: NodeId,
    spec: GridSpec,
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<(NodeId, NodeId)> {
    settings.validate()?;
    if tape.value(grid).len() != spec.value_count() {
        return Err(Error::shape(
            "sample_rays",
            format!(
                "grid has {} values, spec wants {}",
                tape.value(grid).len(),
                spec.value_count()
            ),
        ));
    }
    let s = settings.ray_grid;
    let nd = settings.depth_samples;
    let d = spec.feature_dim;
    let ray_cam = cam.with_image_size(s, s);

    // Stencils per (ray, depth): up to 8 (cell, weight) pairs.
    let mut stencils: Vec<Vec<(usize, f64)>> = Vec::with_capacity(s * s * nd);
    for r in 0..s {
        for c in 0..s {
            let (ray, t_enter, t_exit) = cast_ray(&ray_cam, r, c);
            if t_enter > t_exit {
                for _ in 0..nd {
                    stencils.push(Vec::new());
                }
                continue;
            }
            let span = t_exit - t_enter;
            for i in 0..nd {
                let t = t_enter + (i as f64 + 0.5) / nd as f64 * span;
                let p = [
                    ray.origin[0] + t * ray.dir[0],
                    ray.origin[1] + t * ray.dir[1],
                    ray.origin[2] + t * ray.dir[2],
                ];
                let w = crate::voxelgrid::splat_weights(
                    &spec,
                    [S::from_f64(p[0]), S::from_f64(p[1]), S::from_f64(p[2])],
                );
                stencils.push(w.into_iter().map(|(cell, wt)| (cell, wt.as_f64())).collect());
            }
        }
    }

    let rows = s * s * nd;
    let value = {
        let gv = tape.value(grid).data();
        let mut out = vec![S::zero(); rows * d];
        for (row, stencil) in stencils.iter().enumerate() {
            let dst = &mut out[row * d..(row + 1) * d];
            for &(cell, w) in stencil {
                let w = S::from_f64(w);
                for (o, &v) in dst.iter_mut().zip(&gv[cell * d..(cell + 1) * d]) {
                    *o = *o + w * v;
                }
            }
        }
        Buffer::new(out, vec![rows, d])?
    };
    let samples = tape.custom(
        "sample_rays",
        vec![grid],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            let ggrid = ctx.grad_mut(grid);
            for (row, stencil) in stencils.iter().enumerate() {
                let grow = &go[row * d..(row + 1) * d];
                for &(cell, w) in stencil {
                    let w = S::from_f64(w);
                    let dst = &mut ggrid[cell * d..(cell + 1) * d];
                    for (o, &g) in dst.iter_mut().zip(grow) {
                        *o = *o + w * g;
                    }
                }
            }
        }),
    );

    let mut depth_data = Vec::with_capacity(rows);
    for _ in 0..s * s {
        for i in 0..nd {
            depth_data.push(S::from_f64((i as f64 + 0.5) / nd as f64));
        }
    }
    let depths = tape.constant(Buffer::new(depth_data, vec![rows, 1])?);
    Ok((samples, depths))
}

/// Pools per-depth features with per-ray weight rows:
/// `out[ray] = sum_i w[ray, i] * f[ray * depths + i]`.
pub fn depth_pool<S: Scalar>(
    tape: &mut Tape<S>,
    features: NodeId,
    weights: NodeId,
    depths: usize,
) -> Result<NodeId> {
    let (rows, d) = tape.value(features).rows_cols()?;
    let (rays, nd) = tape.value(weights).rows_cols()?;
    if nd != depths || rows != rays * depths {
        return Err(Error::shape(
            "depth_pool",
            format!(
                "features {:?} vs weights {:?} at {} depths",
                tape.value(features).shape(),
                tape.value(weights).shape(),
                depths
            ),
        ));
    }
    let value = {
        let fv = tape.value(features).data();
        let wv = tape.value(weights).data();
        let mut out = vec![S::zero(); rays * d];
        for ray in 0..rays {
            let dst = &mut out[ray * d..(ray + 1) * d];
            for i in 0..depths {
                let w = wv[ray * depths + i];
                let src = &fv[(ray * depths + i) * d..(ray * depths + i + 1) * d];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = *o + w * v;
                }
            }
        }
        Buffer::new(out, vec![rays, d])?
    };
    Ok(tape.custom(
        "depth_pool",
        vec![features, weights],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            let fv = ctx.val(features).data().to_vec();
            let wv = ctx.val(weights).data().to_vec();
            {
                let gf = ctx.grad_mut(features);
                for ray in 0..rays {
                    let grow = &go[ray * d..(ray + 1) * d];
                    for i in 0..depths {
                        let w = wv[ray * depths + i];
                        let dst = &mut gf[(ray * depths + i) * d..(ray * depths + i + 1) * d];
                        for (o, &g) in dst.iter_mut().zip(grow) {
                            *o = *o + w * g;
                        }
                    }
                }
            }
            let gw = ctx.grad_mut(weights);
            for ray in 0..rays {
                let grow = &go[ray * d..(ray + 1) * d];
                for i in 0..depths {
                    let src = &fv[(ray * depths + i) * d..(ray * depths + i + 1) * d];
                    let dot: S = grow.iter().zip(src).map(|(&a, &b)| a * b).sum();
                    gw[ray * depths + i] = gw[ray * depths + i] + dot;
                }
            }
        }),
    ))
}

/// Occlusion-weighted projection of the grid to a per-ray feature map
/// (`[ray_grid^2, D]`). The occlusion map sees each sample's features plus
/// its normalized depth and its logits are softmaxed over depth.
pub fn project<S: Scalar>(
    tape: &mut Tape<S>,
    grid: NodeId,
    spec: GridSpec,
    cam: &Camera,
    occlusion: &ParametricMap,
    settings: &RenderSettings,
) -> Result<NodeId> {
    let d = spec.feature_dim;
    if occlusion.input_dim() != d + 1 || occlusion.output_dim() != 1 {
        return Err(Error::shape(
            "project",
            format!(
                "occlusion map dims {}->{} vs expected {}->1",
                occlusion.input_dim(),
                occlusion.output_dim(),
                d + 1
            ),
        ));
    }
    let (samples, depths) = sample_rays(tape, grid, spec, cam, settings)?;
    let with_depth = tape.concat(samples, depths)?;
    let logits = occlusion.apply(tape, with_depth)?;
    let rays = settings.ray_grid * settings.ray_grid;
    let per_ray = tape.reshape(logits, vec![rays, settings.depth_samples])?;
    let weights = tape.softmax(per_ray, 1)?;
    depth_pool(tape, samples, weights, settings.depth_samples)
}

/// Nearest-neighbor 2x upsampling of a square row-major feature map.
pub fn upsample2x<S: Scalar>(tape: &mut Tape<S>, map: NodeId, side: usize) -> Result<NodeId> {
    let (rows, d) = tape.value(map).rows_cols()?;
    if rows != side * side {
        return Err(Error::shape(
            "upsample2x",
            format!("{} rows vs side {}", rows, side),
        ));
    }
    let out_side = side * 2;
    let value = {
        let mv = tape.value(map).data();
        let mut out = vec![S::zero(); out_side * out_side * d];
        for r in 0..out_side {
            for c in 0..out_side {
                let src = (r / 2) * side + c / 2;
                let dst = r * out_side + c;
                out[dst * d..(dst + 1) * d].copy_from_slice(&mv[src * d..(src + 1) * d]);
            }
        }
        Buffer::new(out, vec![out_side * out_side, d])?
    };
    Ok(tape.custom(
        "upsample2x",
        vec![map],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data().to_vec();
            let gm = ctx.grad_mut(map);
            for r in 0..out_side {
                for c in 0..out_side {
                    let src = (r / 2) * side + c / 2;
                    let dst = r * out_side + c;
                    for k in 0..d {
                        gm[src * d + k] = gm[src * d + k] + go[dst * d + k];
                    }
                }
            }
        }),
    ))
}

/// Decodes a pooled feature map to an image (`[output^2, 3]`, values in
/// `[0, 1]` via sigmoid), upsampling by nearest-neighbor doublings first.
pub fn decode<S: Scalar>(
    tape: &mut Tape<S>,
    decoder: &ParametricMap,
    feature_map: NodeId,
    settings: &RenderSettings,
) -> Result<NodeId> {
    if decoder.output_dim() != 3 {
        return Err(Error::shape(
            "decode",
            format!("decoder output dim {} != 3", decoder.output_dim()),
        ));
    }
    let (rows, d) = tape.value(feature_map).rows_cols()?;
    if rows != settings.ray_grid * settings.ray_grid || d != decoder.input_dim() {
        return Err(Error::shape(
            "decode",
            format!(
                "feature map {:?} vs ray grid {} and decoder input {}",
                tape.value(feature_map).shape(),
                settings.ray_grid,
                decoder.input_dim()
            ),
        ));
    }
    let mut map = feature_map;
    let mut side = settings.ray_grid;
    for _ in 0..settings.upsample_stages() {
        map = upsample2x(tape, map, side)?;
        side *= 2;
    }
    let raw = decoder.apply(tape, map)?;
    Ok(tape.sigmoid(raw))
}

/// Mean absolute error between a rendered image and a ground-truth image.
pub fn view_synthesis_loss<S: Scalar>(
    tape: &mut Tape<S>,
    rendered: NodeId,
    gt_image: &[f32],
) -> Result<NodeId> {
    let rv = tape.value(rendered);
    if rv.len() != gt_image.len() {
        return Err(Error::shape(
            "view_synthesis_loss",
            format!("rendered {} values vs gt {}", rv.len(), gt_image.len()),
        ));
    }
    let shape = rv.shape().to_vec();
    let gt = tape.constant(Buffer::new(
        gt_image.iter().map(|&v| S::from_f64(v as f64)).collect(),
        shape,
    )?);
    tape.l1_loss(rendered, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, Nonlinearity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_cam() -> Camera {
        Camera {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            distance: 1.5,
            translation: [0.0; 3],
            focal: 1.2,
            image_size: (8, 8),
        }
    }

    fn occl_with(tape: &mut Tape<f64>, d: usize, depth_weight: f64) -> ParametricMap {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map =
            ParametricMap::register(tape, "occl", &[d + 1, 1], Nonlinearity::Relu, &mut rng)
                .unwrap();
        let w = tape.store_mut().value_mut("occl.w0").unwrap();
        w.fill(0.0);
        let in_dim = d + 1;
        w.data_mut()[in_dim - 1] = depth_weight;
        map
    }

    #[test]
    fn constant_logits_pool_to_the_mean() {
        let spec = GridSpec::new(4, 1).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let occl = occl_with(&mut tape, 1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gv: Vec<f64> = (0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grid = tape.input(Buffer::vector(gv));
        let settings = RenderSettings { ray_grid: 3, depth_samples: 4, output_size: 3 };
        let (samples, _) = sample_rays(&mut tape, grid, spec, &axis_cam(), &settings).unwrap();
        let pooled = project(&mut tape, grid, spec, &axis_cam(), &occl, &settings).unwrap();
        // Mean over depth of the raw samples.
        let sv = tape.value(samples).data();
        let pv = tape.value(pooled).data();
        for ray in 0..9 {
            let mean: f64 = (0..4).map(|i| sv[ray * 4 + i]).sum::<f64>() / 4.0;
            assert!((pv[ray] - mean).abs() < 1e-12, "ray {ray}: {} vs {mean}", pv[ray]);
        }
    }

    #[test]
    fn zero_grid_projects_to_zero() {
        let spec = GridSpec::new(4, 2).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let occl = occl_with(&mut tape, 2, 0.7);
        let grid = tape.input(Buffer::zeros(&[spec.value_count()]));
        let settings = RenderSettings { ray_grid: 4, depth_samples: 5, output_size: 4 };
        let pooled = project(&mut tape, grid, spec, &axis_cam(), &occl, &settings).unwrap();
        assert!(tape.value(pooled).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_axis_ray_matches_hand_evaluation() {
        // One ray straight down -x; grid values constant per x-slice, so the
        // four depth samples read the slice values back to front.
        let spec = GridSpec::new(4, 1).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let depth_weight = 2.0;
        let occl = occl_with(&mut tape, 1, depth_weight);
        let slice_values = [0.3, -0.5, 0.9, 0.2];
        let mut gv = vec![0.0; spec.value_count()];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    gv[spec.cell_index(i, j, k)] = slice_values[i];
                }
            }
        }
        let grid = tape.input(Buffer::vector(gv));
        let cam = Camera { image_size: (1, 1), ..axis_cam() };
        let settings = RenderSettings { ray_grid: 1, depth_samples: 4, output_size: 1 };
        let pooled = project(&mut tape, grid, spec, &cam, &occl, &settings).unwrap();
        // Depth order front-to-back along -x reads slices 3, 2, 1, 0.
        let feats = [slice_values[3], slice_values[2], slice_values[1], slice_values[0]];
        let depths = [0.125, 0.375, 0.625, 0.875];
        let logits: Vec<f64> = depths
            .iter()
            .map(|t| (depth_weight * t).max(0.0))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let expected: f64 =
            (0..4).map(|i| exps[i] / denom * feats[i]).sum();
        let got = tape.value(pooled).data()[0];
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn pooling_is_linear_in_features_for_fixed_weights() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rays = 3;
        let nd = 4;
        let d = 2;
        let feats: Vec<f64> = (0..rays * nd * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut weights = Vec::new();
        for _ in 0..rays {
            let raw: Vec<f64> = (0..nd).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            weights.extend(raw.iter().map(|v| v / s));
        }
        let f1 = tape.input(Buffer::matrix(feats.clone(), rays * nd, d).unwrap());
        let f2 = tape
            .input(Buffer::matrix(feats.iter().map(|v| 2.0 * v).collect(), rays * nd, d).unwrap());
        let w = tape.input(Buffer::matrix(weights, rays, nd).unwrap());
        let p1 = depth_pool(&mut tape, f1, w, nd).unwrap();
        let p2 = depth_pool(&mut tape, f2, w, nd).unwrap();
        for (a, b) in tape.value(p1).data().iter().zip(tape.value(p2).data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn project_gradients_match_fd() {
        let spec = GridSpec::new(3, 2).unwrap();
        let settings = RenderSettings { ray_grid: 2, depth_samples: 3, output_size: 2 };
        let cam = axis_cam();
        let program = move |tape: &mut Tape<f64>, inputs: &[Buffer<f64>]| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let occl = ParametricMap::register(
                tape,
                "occl",
                &[3, 4, 1],
                Nonlinearity::Tanh,
                &mut rng,
            )?;
            let grid = tape.input(inputs[0].clone());
            let pooled = project(tape, grid, spec, &cam, &occl, &settings)?;
            let probe = tape.constant(inputs[1].clone());
            let weighted = tape.multiply(pooled, probe)?;
            let loss = tape.sum(weighted);
            Ok((loss, vec![grid]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = vec![
            Buffer::vector((0..spec.value_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            Buffer::matrix((0..4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(), 4, 2).unwrap(),
        ];
        let report = grad_check(&program, &inputs, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn decode_upsamples_and_bounds_colors() {
        let mut tape: Tape<f64> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 3;
        let decoder =
            ParametricMap::register(&mut tape, "dec", &[d, 8, 3], Nonlinearity::Relu, &mut rng)
                .unwrap();
        let settings = RenderSettings { ray_grid: 4, depth_samples: 2, output_size: 8 };
        let feats: Vec<f64> = (0..16 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let map = tape.input(Buffer::matrix(feats, 16, d).unwrap());
        let image = decode(&mut tape, &decoder, map, &settings).unwrap();
        assert_eq!(tape.value(image).shape(), &[64, 3]);
        for &v in tape.value(image).data() {
            assert!((0.0..=1.0).contains(&v));
        }
        // Nearest-neighbor: the four children of a source pixel share color.
        let iv = tape.value(image).data();
        for k in 0..3 {
            assert_eq!(iv[k], iv[3 + k]); // (0,0) vs (0,1)
            assert_eq!(iv[k], iv[8 * 3 + k]); // (0,0) vs (1,0)
        }
    }

    #[test]
    fn view_synthesis_loss_examples() {
        let mut tape: Tape<f64> = Tape::new();
        let gt = vec![1.0f32; 12];
        let rendered_zero = tape.input(Buffer::zeros(&[4, 3]));
        let loss = view_synthesis_loss(&mut tape, rendered_zero, &gt).unwrap();
        assert_eq!(tape.value(loss).data()[0], 1.0);

        let same = tape.input(Buffer::new(vec![1.0; 12], vec![4, 3]).unwrap());
        let zero_loss = view_synthesis_loss(&mut tape, same, &gt).unwrap();
        assert_eq!(tape.value(zero_loss).data()[0], 0.0);

        // Half-gray against any binary image is exactly one half per pixel.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let binary: Vec<f32> =
            (0..300).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let gray = tape.input(Buffer::new(vec![0.5; 300], vec![100, 3]).unwrap());
        let half = view_synthesis_loss(&mut tape, gray, &binary).unwrap();
        assert!((tape.value(half).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn settings_validation() {
        assert!(RenderSettings { ray_grid: 16, depth_samples: 16, output_size: 32 }
            .validate()
            .is_ok());
        assert!(RenderSettings { ray_grid: 16, depth_samples: 16, output_size: 48 }
            .validate()
            .is_err());
        assert_eq!(RenderSettings::full().ray_grid, 56);
        assert_eq!(RenderSettings::full().depth_samples, 64);
        assert_eq!(RenderSettings::full().output_size, 224);
        assert_eq!(RenderSettings::full().upsample_stages(), 2);
    }
}
