//! Voxel occupancy prediction and its cross-entropy objective.

use crate::diffcore::{Buffer, NodeId, ParametricMap, Scalar, Tape};
use crate::voxelgrid::{gather_self_neighbor_mean, GridSpec};
use crate::{Error, Result};

/// Per-voxel occupancy probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cells: usize,
    pub probs: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(cells: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != cells * cells * cells {
            return Err(Error::shape(
                "occupancy_grid",
                format!("{} probs vs {} cells per axis", probs.len(), cells),
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("occupancy probabilities outside [0, 1]".into()));
        }
        Ok(OccupancyGrid { cells, probs })
    }
}

/// Applies the head at every voxel over `[own ; face-neighbor mean]` of the
/// refined features, returning per-voxel logits (`[cells^3, 1]`) and the
/// sigmoid probability grid.
pub fn predict_occupancy<S: Scalar>(
    tape: &mut Tape<S>,
    head: &ParametricMap,
    grid: NodeId,
    spec: GridSpec,
) -> Result<(NodeId, OccupancyGrid)> {
    if head.input_dim() != 2 * spec.feature_dim || head.output_dim() != 1 {
        return Err(Error::shape(
            "predict_occupancy",
            format!(
                "head dims {}->{} vs expected {}->1",
                head.input_dim(),
                head.output_dim(),
                2 * spec.feature_dim
            ),
        ));
    }
    let gathered = gather_self_neighbor_mean(tape, spec, grid)?;
    let logits = head.apply(tape, gathered)?;
    let probs = tape
        .value(logits)
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z.as_f64()).exp()))
        .collect();
    Ok((logits, OccupancyGrid { cells: spec.cells, probs }))
}

/// Mean binary cross-entropy from logits against a binary ground-truth grid.
pub fn occupancy_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: NodeId,
    gt_occupied: &[bool],
) -> Result<NodeId> {
    if tape.value(logits).len() != gt_occupied.len() {
        return Err(Error::shape(
            "occupancy_loss",
            format!(
                "{} logits vs {} ground-truth voxels",
                tape.value(logits).len(),
                gt_occupied.len()
            ),
        ));
    }
    let shape = tape.value(logits).shape().to_vec();
    let targets = tape.constant(Buffer::new(
        gt_occupied.iter().map(|&o| if o { S::one() } else { S::zero() }).collect(),
        shape,
    )?);
    tape.bce_with_logits(logits, targets)
}
