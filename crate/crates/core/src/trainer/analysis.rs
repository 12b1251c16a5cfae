//! Representation analyses: gradient back-tracing from rendered regions to
//! input pixels, and symmetry-aware correspondence lookup.

use super::config::TrainConfig;
use super::model::{forward_representation, Model};
use crate::canonical::CoordFieldValues;
use crate::diffcore::{Buffer, Scalar, Tape};
use crate::heads::{decode, project, Camera};
use crate::scenes::RenderSample;
use crate::symmetry::{closure, set_distance};
use crate::voxelgrid::GridSpec;
use crate::{Error, Result};

/// Per-view saliency maps: gradient magnitude of a rendered-region sum with
/// respect to each input image, max-normalized across the view set.
///
/// Runs with decoupling disabled so gradients reach the input pixels through
/// the coordinate path as well.
pub fn saliency_backtrace(
    tape: &mut Tape<f32>,
    model: &Model,
    cfg: &TrainConfig,
    input_views: &[RenderSample],
    camera: &Camera,
    region: &[(usize, usize)],
) -> Result<Vec<Vec<f32>>> {
    if region.is_empty() {
        return Err(Error::Config("saliency region is empty".into()));
    }
    let out = cfg.render.output_size;
    for &(r, c) in region {
        if r >= out || c >= out {
            return Err(Error::Config(format!(
                "region pixel ({r},{c}) outside {out}x{out} render"
            )));
        }
    }
    let mut analysis_cfg = cfg.clone();
    analysis_cfg.decouple = false;

    tape.clear_nodes();
    tape.zero_grads();
    let spec = GridSpec::new(cfg.grid_cells, cfg.feature_dim)?;
    let (fields, _, _, _, refined) =
        forward_representation(tape, model, &analysis_cfg, input_views)?;
    let pooled = project(tape, refined, spec, camera, &model.occlusion, &cfg.render)?;
    let image = decode(tape, &model.decoder, pooled, &cfg.render)?;

    // Sum of rendered intensities over the region via a 0/1 mask.
    let mut mask = vec![0.0f32; out * out * 3];
    for &(r, c) in region {
        for ch in 0..3 {
            mask[(r * out + c) * 3 + ch] = 1.0;
        }
    }
    let mask_node = tape.constant(Buffer::new(
        mask.iter().map(|&v| v).collect(),
        vec![out * out, 3],
    )?);
    let masked = tape.multiply(image, mask_node)?;
    let loss = tape.sum(masked);
    tape.backward(loss)?;

    // Per-pixel L2 over the rgb gradient entries, placed back into images.
    let mut maps = Vec::with_capacity(fields.len());
    let mut global_max = 0.0f32;
    for (field, view) in fields.iter().zip(input_views) {
        let (h, w) = view.image_size();
        let mut map = vec![0.0f32; h * w];
        if let Some(grad) = tape.grad(field.pixel_input) {
            let g = grad.data();
            for (row, &(r, c)) in field.pixels.iter().enumerate() {
                let mut mag = 0.0f32;
                for ch in 0..3 {
                    let v = g[row * 5 + ch].as_f64() as f32;
                    mag += v * v;
                }
                let mag = mag.sqrt();
                map[r as usize * w + c as usize] = mag;
                global_max = global_max.max(mag);
            }
        }
        maps.push(map);
    }
    if global_max > 0.0 {
        for map in &mut maps {
            for v in map.iter_mut() {
                *v /= global_max;
            }
        }
    }
    Ok(maps)
}

/// Ranked matches for a query pixel in every view (including its own):
/// distance between two pixels is the minimum distance between the closure
/// sets of their most probable symmetry types.
pub fn find_correspondences(
    fields: &[CoordFieldValues],
    query_view: usize,
    query_pixel: (u32, u32),
    top_n: usize,
) -> Result<Vec<Vec<(u32, u32, f64)>>> {
    let qf = fields
        .get(query_view)
        .ok_or_else(|| Error::Config(format!("query view {query_view} out of range")))?;
    let qrow = qf
        .pixels
        .iter()
        .position(|&p| p == query_pixel)
        .ok_or_else(|| Error::Data("query pixel is not foreground".into()))?;
    let qtype = qf.argmax_type(qrow);
    let qset = closure(qf.types[qtype], qf.coord_of(qrow, qtype));

    let mut out = Vec::with_capacity(fields.len());
    for field in fields {
        let mut scored: Vec<(u32, u32, f64)> = field
            .pixels
            .iter()
            .enumerate()
            .map(|(row, &(r, c))| {
                let ty = field.argmax_type(row);
                let set = closure(field.types[ty], field.coord_of(row, ty));
                (r, c, set_distance(&qset, &set))
            })
            .collect();
        scored.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
        });
        scored.truncate(top_n);
        out.push(scored);
    }
    Ok(out)
}
