//! Evaluation metrics: best-threshold voxel intersection-over-union and
//! image L1, with per-class breakdowns and view-count sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{forward_representation, Model};
use super::train::TraceRow;
use crate::diffcore::{Scalar, Tape};
use crate::heads::{decode, predict_occupancy, project, OccupancyGrid};
use crate::scenes::SceneInstance;
use crate::voxelgrid::GridSpec;
use crate::{Error, Result};

/// Default binarization threshold sweep: 0.05 to 0.95 in steps of 0.05.
pub fn default_thresholds() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

/// Intersection-over-union at a fixed binarization threshold; an empty
/// union counts 1 when both grids are empty and 0 otherwise.
pub fn iou_at(pred: &[f64], gt: &[bool], threshold: f64) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let b = p >= threshold;
        if b && g {
            inter += 1;
        }
        if b || g {
            union += 1;
        }
    }
    if union == 0 {
        if gt.iter().any(|&g| g) {
            0.0
        } else {
            1.0
        }
    } else {
        inter as f64 / union as f64
    }
}

/// Best IoU over a threshold sweep for one grid pair.
pub fn eval_iou(
    pred: &OccupancyGrid,
    gt: &[bool],
    thresholds: &[f64],
) -> Result<(f64, f64)> {
    if thresholds.is_empty() {
        return Err(Error::Config("threshold sweep is empty".into()));
    }
    if pred.probs.len() != gt.len() {
        return Err(Error::shape(
            "eval_iou",
            format!("{} predictions vs {} ground truth", pred.probs.len(), gt.len()),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_t = thresholds[0];
    for &t in thresholds {
        let v = iou_at(&pred.probs, gt, t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    Ok((best, best_t))
}

/// Mean absolute image error scaled by 100, averaged over view pairs.
pub fn eval_l1(renders: &[Vec<f32>], gts: &[Vec<f32>]) -> Result<f64> {
    if renders.len() != gts.len() || renders.is_empty() {
        return Err(Error::shape(
            "eval_l1",
            format!("{} renders vs {} ground truths", renders.len(), gts.len()),
        ));
    }
    let mut total = 0.0;
    for (r, g) in renders.iter().zip(gts) {
        if r.len() != g.len() {
            return Err(Error::shape("eval_l1", "image sizes differ"));
        }
        let sum: f64 = r.iter().zip(g).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        total += sum / r.len() as f64;
    }
    Ok(total / renders.len() as f64 * 100.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub iou: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SweepEntry {
    pub views: usize,
    pub mean_iou: f64,
    pub mean_l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub mean_iou: f64,
    pub mean_l1: f64,
    /// Binarization threshold that maximized the mean IoU.
    pub threshold: f64,
    pub view_sweep: Vec<SweepEntry>,
}

/// Per-instance evaluation products.
pub struct InstanceEval {
    pub class: String,
    pub occupancy: OccupancyGrid,
    pub l1: f64,
}

/// Runs the trained model on one instance using its first `n_views` input
/// views; renders every supervision view for the image error.
pub fn evaluate_instance(
    tape: &mut Tape<f32>,
    model: &Model,
    cfg: &TrainConfig,
    inst: &SceneInstance,
    n_views: usize,
) -> Result<InstanceEval> {
    let n = n_views.min(inst.input_views.len()).max(1);
    tape.clear_nodes();
    let spec = GridSpec::new(cfg.grid_cells, cfg.feature_dim)?;
    let (_, _, _, _, refined) =
        forward_representation(tape, model, cfg, &inst.input_views[..n])?;
    let (_, occupancy) = predict_occupancy(tape, &model.occupancy_head, refined, spec)?;
    let mut renders = Vec::new();
    let mut gts = Vec::new();
    for view in &inst.supervision_views {
        let pooled = project(tape, refined, spec, &view.camera, &model.occlusion, &cfg.render)?;
        let image = decode(tape, &model.decoder, pooled, &cfg.render)?;
        renders.push(tape.value(image).data().iter().map(|v| v.as_f64() as f32).collect());
        gts.push(view.image.clone());
    }
    let l1 = if renders.is_empty() { 0.0 } else { eval_l1(&renders, &gts)? };
    Ok(InstanceEval {
        class: inst.spec.class.name().to_string(),
        occupancy,
        l1,
    })
}

/// Evaluates a set of instances: picks the threshold maximizing the mean
/// IoU, then reports per-class and mean metrics plus a view-count sweep.
/// Sequential reference path over one tape.
pub fn evaluate(
    tape: &mut Tape<f32>,
    model: &Model,
    cfg: &TrainConfig,
    instances: &[SceneInstance],
    indices: &[usize],
    view_counts: &[usize],
) -> Result<MetricsReport> {
    let eval_all = |n_views: usize,
                    tape: &mut Tape<f32>|
     -> Result<Vec<(usize, InstanceEval)>> {
        let mut evals = Vec::with_capacity(indices.len());
        for &i in indices {
            evals.push((i, evaluate_instance(tape, model, cfg, &instances[i], n_views)?));
        }
        Ok(evals)
    };
    let mut runner = |n: usize| eval_all(n, tape);
    evaluate_with(&mut runner, cfg, instances, indices, view_counts)
}

/// Same metrics computed with per-instance evaluation fanned out over a
/// worker pool; results are collected in index order so the report is
/// independent of thread count.
pub fn evaluate_parallel(
    store: &crate::diffcore::ParamStore<f32>,
    cfg: &TrainConfig,
    instances: &[SceneInstance],
    indices: &[usize],
    view_counts: &[usize],
    par: crate::parallel::Parallelism,
) -> Result<MetricsReport> {
    let mut runner = |n_views: usize| -> Result<Vec<(usize, InstanceEval)>> {
        let results = crate::parallel::map_indexed(par, indices.len(), |j| {
            let i = indices[j];
            let mut tape = Tape::from_store(store.clone());
            let model = Model::attach(&tape, cfg)?;
            let eval = evaluate_instance(&mut tape, &model, cfg, &instances[i], n_views)?;
            Ok((i, eval))
        });
        results.into_iter().collect()
    };
    evaluate_with(&mut runner, cfg, instances, indices, view_counts)
}

fn evaluate_with(
    eval_all: &mut dyn FnMut(usize) -> Result<Vec<(usize, InstanceEval)>>,
    cfg: &TrainConfig,
    instances: &[SceneInstance],
    indices: &[usize],
    view_counts: &[usize],
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::Config("no evaluation instances".into()));
    }
    let thresholds = default_thresholds();
    let full = cfg.input_views;
    let (mean_iou, threshold, per_class, mean_l1) =
        aggregate(&eval_all(full)?, instances, &thresholds);
    let mut view_sweep = Vec::new();
    for &n in view_counts {
        if n == full {
            view_sweep.push(SweepEntry { views: n, mean_iou, mean_l1 });
            continue;
        }
        let (iou_n, _, _, l1_n) = aggregate(&eval_all(n)?, instances, &thresholds);
        view_sweep.push(SweepEntry { views: n, mean_iou: iou_n, mean_l1: l1_n });
    }
    Ok(MetricsReport {
        config_hash: cfg.config_hash(),
        per_class,
        mean_iou,
        mean_l1,
        threshold,
        view_sweep,
    })
}

type SweepProducts = (f64, f64, BTreeMap<String, ClassMetrics>, f64);

fn aggregate(
    evals: &[(usize, InstanceEval)],
    instances: &[SceneInstance],
    thresholds: &[f64],
) -> SweepProducts {
    // Threshold maximizing the mean IoU across instances.
    let mut best_t = thresholds[0];
    let mut best_mean = f64::NEG_INFINITY;
    for &t in thresholds {
        let mean: f64 = evals
            .iter()
            .map(|(i, e)| iou_at(&e.occupancy.probs, &instances[*i].occupancy.occupied, t))
            .sum::<f64>()
            / evals.len() as f64;
        if mean > best_mean {
            best_mean = mean;
            best_t = t;
        }
    }
    let mut per_class: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut l1_total = 0.0;
    for (i, e) in evals {
        let iou = iou_at(&e.occupancy.probs, &instances[*i].occupancy.occupied, best_t);
        let entry = per_class.entry(e.class.clone()).or_insert((0.0, 0.0, 0));
        entry.0 += iou;
        entry.1 += e.l1;
        entry.2 += 1;
        l1_total += e.l1;
    }
    let per_class = per_class
        .into_iter()
        .map(|(class, (iou, l1, n))| {
            (class, ClassMetrics { iou: iou / n as f64, l1: l1 / n as f64 })
        })
        .collect();
    (best_mean, best_t, per_class, l1_total / evals.len() as f64)
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut csv = String::from("class,iou,l1\n");
    for (class, m) in &report.per_class {
        csv.push_str(&format!("{class},{:.6},{:.6}\n", m.iou, m.l1));
    }
    csv.push_str(&format!("mean,{:.6},{:.6}\n", report.mean_iou, report.mean_l1));
    std::fs::write(path, csv).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_loss_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut csv = String::from("epoch,step,coord,spurious,vol,vs,total\n");
    for row in trace {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            row.epoch,
            row.step,
            row.losses.coord,
            row.losses.spurious,
            row.losses.vol,
            row.losses.vs,
            row.losses.total
        ));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path.display().to_string(), e))
}
