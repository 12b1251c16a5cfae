//! Model assembly and the per-instance forward graph.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::aggregate::{average, lift_view, refine, ViewLift};
use crate::canonical::{coord_loss, predict_coords, spurious_loss, CoordinateField, PixelBatch, ShapeOracle};
use crate::diffcore::{NodeId, Nonlinearity, ParametricMap, Scalar, Tape};
use crate::heads::{decode, occupancy_loss, predict_occupancy, project, view_synthesis_loss, OccupancyGrid};
use crate::scenes::RenderSample;
use crate::voxelgrid::GridSpec;
use crate::{Error, Result};

/// Salt separating the spurious-loss angle stream from the lift stream.
const SPURIOUS_SEED_SALT: u64 = 0x51ab;

/// The five parametric maps of the pipeline, registered in one tape's store.
#[derive(Debug, Clone)]
pub struct Model {
    pub predictor: ParametricMap,
    pub refiner: ParametricMap,
    pub occupancy_head: ParametricMap,
    pub occlusion: ParametricMap,
    pub decoder: ParametricMap,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl Model {
    /// The predictor regresses a smooth inverse map, so it runs on tanh
    /// hidden layers; the grid-side maps use relu.
    fn dims_for(cfg: &TrainConfig) -> [(&'static str, Vec<usize>, Nonlinearity); 5] {
        let g = cfg.symmetry.type_count();
        let d = cfg.feature_dim;
        [
            ("ftheta", dims(5, &cfg.predictor_hidden, g * 4 + d), Nonlinearity::Tanh),
            ("hpsi", dims(2 * (d + 1), &cfg.refiner_hidden, d), Nonlinearity::Relu),
            ("occ", dims(2 * d, &cfg.occupancy_hidden, 1), Nonlinearity::Relu),
            ("occl", dims(d + 1, &cfg.occlusion_hidden, 1), Nonlinearity::Relu),
            ("dec", dims(d, &cfg.decoder_hidden, 3), Nonlinearity::Relu),
        ]
    }

    /// Registers fresh parameters seeded from the config.
    pub fn register<S: Scalar>(tape: &mut Tape<S>, cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let all = Self::dims_for(cfg);
        let mut maps = Vec::with_capacity(5);
        for (name, dims, nonlin) in &all {
            maps.push(ParametricMap::register(tape, name, dims, *nonlin, &mut rng)?);
        }
        let mut it = maps.into_iter();
        Ok(Model {
            predictor: it.next().unwrap(),
            refiner: it.next().unwrap(),
            occupancy_head: it.next().unwrap(),
            occlusion: it.next().unwrap(),
            decoder: it.next().unwrap(),
        })
    }

    /// Attaches to parameters already present in the store (checkpoint load).
    pub fn attach<S: Scalar>(tape: &Tape<S>, cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let all = Self::dims_for(cfg);
        let mut maps = Vec::with_capacity(5);
        for (name, dims, nonlin) in &all {
            maps.push(ParametricMap::attach(tape, name, dims, *nonlin)?);
        }
        let mut it = maps.into_iter();
        Ok(Model {
            predictor: it.next().unwrap(),
            refiner: it.next().unwrap(),
            occupancy_head: it.next().unwrap(),
            occlusion: it.next().unwrap(),
            decoder: it.next().unwrap(),
        })
    }

    /// Names of the final predictor rows that produce coordinates and type
    /// probabilities (the coordinate/probability head parameters).
    pub fn coordinate_head_rows(&self, cfg: &TrainConfig) -> (String, String, usize) {
        (
            self.predictor.final_weight_name().to_string(),
            self.predictor.final_bias_name().to_string(),
            cfg.symmetry.type_count() * 4,
        )
    }
}

/// Everything the per-instance graph exposes for losses, metrics, and
/// analysis.
pub struct ForwardOutputs {
    pub fields: Vec<CoordinateField>,
    pub lifts: Vec<ViewLift>,
    pub averaged: NodeId,
    pub weight_sum: NodeId,
    pub refined: NodeId,
    pub occupancy_logits: NodeId,
    pub occupancy: OccupancyGrid,
    /// Rendered supervision images (`[output^2, 3]` each).
    pub rendered: Vec<NodeId>,
    pub loss_coord: NodeId,
    pub loss_spurious: NodeId,
    pub loss_vol: NodeId,
    pub loss_vs: Option<NodeId>,
    pub total: NodeId,
}

/// Builds the representation (fields, lifts, average, refined grid) from a
/// set of input views.
pub fn forward_representation<S: Scalar>(
    tape: &mut Tape<S>,
    model: &Model,
    cfg: &TrainConfig,
    views: &[RenderSample],
) -> Result<(Vec<CoordinateField>, Vec<ViewLift>, NodeId, NodeId, NodeId)> {
    if views.is_empty() {
        return Err(Error::Config("need at least one input view".into()));
    }
    let spec = GridSpec::new(cfg.grid_cells, cfg.feature_dim)?;
    let mut fields = Vec::with_capacity(views.len());
    let mut lifts = Vec::with_capacity(views.len());
    for view in views {
        let (h, w) = view.image_size();
        let batch = PixelBatch::from_image(&view.image, &view.mask, h, w)?;
        let field = predict_coords(tape, &model.predictor, &batch, &cfg.symmetry, cfg.feature_dim)?;
        let lift = lift_view(
            tape,
            &field,
            spec,
            cfg.lift_samples,
            view.view_seed,
            cfg.decouple,
        )?;
        fields.push(field);
        lifts.push(lift);
    }
    let (averaged, weight_sum) = average(tape, &lifts, spec, cfg.average_eps)?;
    let weight_input = if cfg.normalize_weight_input {
        tape.scale(weight_sum, 1.0 / views.len() as f64)
    } else {
        weight_sum
    };
    let refined = refine(tape, &model.refiner, averaged, weight_input, spec)?;
    Ok((fields, lifts, averaged, weight_sum, refined))
}

/// Builds the full per-instance graph: representation, both task heads, the
/// coordinate losses, and the weighted total.
pub fn forward_instance<S: Scalar>(
    tape: &mut Tape<S>,
    model: &Model,
    cfg: &TrainConfig,
    input_views: &[RenderSample],
    supervision_views: &[RenderSample],
    gt_occupancy: &[bool],
    oracle: &ShapeOracle,
) -> Result<ForwardOutputs> {
    let spec = GridSpec::new(cfg.grid_cells, cfg.feature_dim)?;
    let (fields, lifts, averaged, weight_sum, refined) =
        forward_representation(tape, model, cfg, input_views)?;

    // Coordinate-space losses, averaged over views.
    let mut coord_terms = Vec::with_capacity(fields.len());
    let mut spurious_terms = Vec::with_capacity(fields.len());
    for (field, view) in fields.iter().zip(input_views) {
        let gt = view.ground_truth();
        let gathered = gt.gather_for(&field.pixels)?;
        coord_terms.push(coord_loss(tape, field, &gathered)?);
        spurious_terms.push(spurious_loss(
            tape,
            field,
            oracle,
            cfg.symmetry.sample_count,
            view.view_seed ^ SPURIOUS_SEED_SALT,
        )?);
    }
    let loss_coord = mean_of(tape, &coord_terms)?;
    let loss_spurious = mean_of(tape, &spurious_terms)?;

    // Occupancy head.
    let (occupancy_logits, occupancy) =
        predict_occupancy(tape, &model.occupancy_head, refined, spec)?;
    let loss_vol = occupancy_loss(tape, occupancy_logits, gt_occupancy)?;

    // Rendering head over the supervision views (known cameras).
    let mut rendered = Vec::with_capacity(supervision_views.len());
    let mut vs_terms = Vec::with_capacity(supervision_views.len());
    for view in supervision_views {
        let pooled = project(tape, refined, spec, &view.camera, &model.occlusion, &cfg.render)?;
        let image = decode(tape, &model.decoder, pooled, &cfg.render)?;
        let (h, w) = view.image_size();
        if h * w * 3 != tape.value(image).len() {
            return Err(Error::shape(
                "forward_instance",
                format!(
                    "render output {} values vs supervision image {}x{}x3",
                    tape.value(image).len(),
                    h,
                    w
                ),
            ));
        }
        vs_terms.push(view_synthesis_loss(tape, image, &view.image)?);
        rendered.push(image);
    }
    let loss_vs = if vs_terms.is_empty() { None } else { Some(mean_of(tape, &vs_terms)?) };

    // Weighted total.
    let mut total = tape.scale(loss_coord, cfg.lambda_coord);
    let spur = tape.scale(loss_spurious, cfg.lambda_spurious);
    total = tape.add(total, spur)?;
    let vol = tape.scale(loss_vol, cfg.lambda_vol);
    total = tape.add(total, vol)?;
    if let Some(vs) = loss_vs {
        let vs_scaled = tape.scale(vs, cfg.lambda_vs);
        total = tape.add(total, vs_scaled)?;
    }

    Ok(ForwardOutputs {
        fields,
        lifts,
        averaged,
        weight_sum,
        refined,
        occupancy_logits,
        occupancy,
        rendered,
        loss_coord,
        loss_spurious,
        loss_vol,
        loss_vs,
        total,
    })
}

fn mean_of<S: Scalar>(tape: &mut Tape<S>, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_instance, SceneConfig, ShapeClass};

    fn tiny_scene_config() -> SceneConfig {
        SceneConfig {
            classes: vec![ShapeClass::TableRot4],
            per_class: 1,
            seed: 5,
            input_views: 2,
            supervision_views: 2,
            occupancy_cells: 8,
            oracle_points: 700,
            camera: crate::scenes::CameraRanges { image_size: 16, ..Default::default() },
            ..Default::default()
        }
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            grid_cells: 8,
            feature_dim: 4,
            input_views: 2,
            supervision_views: 2,
            render: crate::heads::RenderSettings {
                ray_grid: 8,
                depth_samples: 4,
                output_size: 16,
            },
            predictor_hidden: vec![16],
            refiner_hidden: vec![8],
            occupancy_hidden: vec![8],
            occlusion_hidden: vec![6],
            decoder_hidden: vec![8],
            ..Default::default()
        }
    }

    #[test]
    fn forward_graph_builds_and_backprops() {
        let scene_cfg = tiny_scene_config();
        let inst = generate_instance(&scene_cfg, ShapeClass::TableRot4, 0).unwrap();
        let cfg = tiny_train_config();
        let mut tape: Tape<f32> = Tape::new();
        let model = Model::register(&mut tape, &cfg).unwrap();
        let oracle = inst.oracle().unwrap();
        let out = forward_instance(
            &mut tape,
            &model,
            &cfg,
            &inst.input_views,
            &inst.supervision_views,
            &inst.occupancy.occupied,
            &oracle,
        )
        .unwrap();
        let total = tape.value(out.total).item().unwrap();
        assert!(total.is_finite() && total > 0.0);
        tape.backward(out.total).unwrap();
        // Every map received some gradient.
        for name in ["ftheta.w0", "hpsi.w0", "occ.w0", "occl.w0", "dec.w0"] {
            let g = tape.store().grad(name).unwrap();
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn decouple_zeroes_task_gradients_on_coordinate_rows() {
        let scene_cfg = tiny_scene_config();
        let inst = generate_instance(&scene_cfg, ShapeClass::TableRot4, 0).unwrap();
        let oracle = inst.oracle().unwrap();
        // Task losses only (coordinate loss weights zero), decoupling on:
        // the predictor's coordinate/probability rows must get exactly zero.
        let cfg = TrainConfig {
            lambda_coord: 0.0,
            lambda_spurious: 0.0,
            decouple: true,
            ..tiny_train_config()
        };
        let mut tape: Tape<f32> = Tape::new();
        let model = Model::register(&mut tape, &cfg).unwrap();
        let out = forward_instance(
            &mut tape,
            &model,
            &cfg,
            &inst.input_views,
            &inst.supervision_views,
            &inst.occupancy.occupied,
            &oracle,
        )
        .unwrap();
        tape.backward(out.total).unwrap();
        let (wname, bname, head_rows) = model.coordinate_head_rows(&cfg);
        let gw = tape.store().grad(&wname).unwrap();
        let in_dim = gw.shape()[1];
        for row in 0..head_rows {
            for col in 0..in_dim {
                assert_eq!(gw.data()[row * in_dim + col], 0.0, "w row {row}");
            }
        }
        let gb = tape.store().grad(&bname).unwrap();
        for row in 0..head_rows {
            assert_eq!(gb.data()[row], 0.0, "b row {row}");
        }
        // Feature rows still learn from the task losses.
        let feature_rows_have_grad = (head_rows..gw.shape()[0])
            .any(|row| (0..in_dim).any(|col| gw.data()[row * in_dim + col] != 0.0));
        assert!(feature_rows_have_grad);
    }

    #[test]
    fn without_decouple_task_gradients_reach_coordinate_rows() {
        let scene_cfg = tiny_scene_config();
        let inst = generate_instance(&scene_cfg, ShapeClass::TableRot4, 0).unwrap();
        let oracle = inst.oracle().unwrap();
        let cfg = TrainConfig {
            lambda_coord: 0.0,
            lambda_spurious: 0.0,
            decouple: false,
            ..tiny_train_config()
        };
        let mut tape: Tape<f32> = Tape::new();
        let model = Model::register(&mut tape, &cfg).unwrap();
        let out = forward_instance(
            &mut tape,
            &model,
            &cfg,
            &inst.input_views,
            &inst.supervision_views,
            &inst.occupancy.occupied,
            &oracle,
        )
        .unwrap();
        tape.backward(out.total).unwrap();
        let (wname, _, head_rows) = model.coordinate_head_rows(&cfg);
        let gw = tape.store().grad(&wname).unwrap();
        let in_dim = gw.shape()[1];
        let any_nonzero = (0..head_rows)
            .any(|row| (0..in_dim).any(|col| gw.data()[row * in_dim + col] != 0.0));
        assert!(any_nonzero, "coupled run should reach coordinate rows");
    }
}
