//! Optimization loop over scene instances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::{forward_instance, Model};
use crate::canonical::ShapeOracle;
use crate::diffcore::{Adam, Scalar, Tape};
use crate::scenes::SceneInstance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub coord: f64,
    pub spurious: f64,
    pub vol: f64,
    pub vs: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub losses: LossBreakdown,
}

pub struct TrainingRun {
    pub tape: Tape<f32>,
    pub model: Model,
    pub trace: Vec<TraceRow>,
    pub epoch_means: Vec<f64>,
    pub skipped_steps: usize,
}

/// One gradient step over a batch of instances; gradients are averaged over
/// the batch. Returns the mean losses, or `None` when the step was skipped
/// because a total came out non-finite.
pub fn train_step(
    tape: &mut Tape<f32>,
    model: &Model,
    optimizer: &mut Adam<f32>,
    cfg: &TrainConfig,
    batch: &[(&SceneInstance, &ShapeOracle)],
) -> Result<Option<LossBreakdown>> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    tape.zero_grads();
    let mut sums = LossBreakdown { coord: 0.0, spurious: 0.0, vol: 0.0, vs: 0.0, total: 0.0 };
    for (inst, oracle) in batch {
        tape.clear_nodes();
        let k = cfg.input_views.min(inst.input_views.len());
        let ks = cfg.supervision_views.min(inst.supervision_views.len());
        let out = forward_instance(
            tape,
            model,
            cfg,
            &inst.input_views[..k],
            &inst.supervision_views[..ks],
            &inst.occupancy.occupied,
            oracle,
        )?;
        let total = tape.value(out.total).item()?.as_f64();
        if !total.is_finite() {
            return Ok(None);
        }
        sums.coord += tape.value(out.loss_coord).item()?.as_f64();
        sums.spurious += tape.value(out.loss_spurious).item()?.as_f64();
        sums.vol += tape.value(out.loss_vol).item()?.as_f64();
        if let Some(vs) = out.loss_vs {
            sums.vs += tape.value(vs).item()?.as_f64();
        }
        sums.total += total;
        tape.backward(out.total)?;
    }
    let n = batch.len() as f64;
    optimizer.step(tape.store_mut(), 1.0 / n);
    Ok(Some(LossBreakdown {
        coord: sums.coord / n,
        spurious: sums.spurious / n,
        vol: sums.vol / n,
        vs: sums.vs / n,
        total: sums.total / n,
    }))
}

/// Trains a fresh model over the given training indices. Deterministic for a
/// fixed config: instance order is reshuffled per epoch from the config
/// seed. Aborts after three consecutive skipped (non-finite) steps.
pub fn run_training(
    instances: &[SceneInstance],
    train_indices: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainingRun> {
    cfg.validate()?;
    if train_indices.is_empty() {
        return Err(Error::Config("no training instances".into()));
    }
    let mut tape: Tape<f32> = Tape::new();
    let model = Model::register(&mut tape, cfg)?;
    let mut optimizer = Adam::new(cfg.optim);
    let oracles: Vec<ShapeOracle> = instances
        .iter()
        .map(|inst| inst.oracle())
        .collect::<Result<_>>()?;

    let mut trace = Vec::new();
    let mut epoch_means = Vec::new();
    let mut skipped = 0usize;
    let mut consecutive_skips = 0usize;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0bad_cafe);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        optimizer.set_lr(cfg.optim.lr * cfg.lr_decay.powi(epoch as i32));
        let mut order: Vec<usize> = train_indices.to_vec();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&SceneInstance, &ShapeOracle)> =
                chunk.iter().map(|&i| (&instances[i], &oracles[i])).collect();
            match train_step(&mut tape, &model, &mut optimizer, cfg, &batch)? {
                Some(losses) => {
                    consecutive_skips = 0;
                    epoch_sum += losses.total;
                    epoch_count += 1;
                    trace.push(TraceRow { epoch, step, losses });
                }
                None => {
                    skipped += 1;
                    consecutive_skips += 1;
                    eprintln!("warning: skipped step {step} (non-finite loss)");
                    if consecutive_skips >= 3 {
                        return Err(Error::Data(
                            "three consecutive non-finite training steps".into(),
                        ));
                    }
                }
            }
            step += 1;
        }
        epoch_means.push(epoch_sum / epoch_count.max(1) as f64);
    }
    Ok(TrainingRun { tape, model, trace, epoch_means, skipped_steps: skipped })
}
