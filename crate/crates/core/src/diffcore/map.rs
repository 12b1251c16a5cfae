//! Small dense parametric maps (the stand-in for learned predictors).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Buffer, Scalar};
use super::tape::{NodeId, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    None,
}

#[derive(Debug, Clone)]
struct LayerSpec {
    weight: String,
    bias: String,
    in_dim: usize,
    out_dim: usize,
    nonlin: Nonlinearity,
}

/// A stack of dense layers with per-layer nonlinearities, registered in a
/// tape's parameter store under `<name>.w<i>` / `<name>.b<i>`.
#[derive(Debug, Clone)]
pub struct ParametricMap {
    name: String,
    layers: Vec<LayerSpec>,
}

impl ParametricMap {
    /// Registers fresh parameters. `dims` chains input to output; the last
    /// layer uses `Nonlinearity::None`, interior layers use `hidden_nonlin`.
    pub fn register<S: Scalar>(
        tape: &mut Tape<S>,
        name: &str,
        dims: &[usize],
        hidden_nonlin: Nonlinearity,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "parametric map {name:?} needs at least input and output dims"
            )));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            if in_dim == 0 || out_dim == 0 {
                return Err(Error::Config(format!("zero layer dim in map {name:?}")));
            }
            let weight = format!("{name}.w{i}");
            let bias = format!("{name}.b{i}");
            // Uniform +-sqrt(6 / (fan_in + fan_out)), biases zero.
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let wdata: Vec<S> = (0..in_dim * out_dim)
                .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            tape.store_mut()
                .register(&weight, Buffer::new(wdata, vec![out_dim, in_dim])?)?;
            tape.store_mut()
                .register(&bias, Buffer::zeros(&[out_dim]))?;
            let nonlin = if i + 2 == dims.len() { Nonlinearity::None } else { hidden_nonlin };
            layers.push(LayerSpec { weight, bias, in_dim, out_dim, nonlin });
        }
        Ok(ParametricMap { name: name.to_string(), layers })
    }

    /// Rebuilds the map description against parameters that already exist in
    /// the store (e.g. after loading a checkpoint).
    pub fn attach<S: Scalar>(
        tape: &Tape<S>,
        name: &str,
        dims: &[usize],
        hidden_nonlin: Nonlinearity,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let weight = format!("{name}.w{i}");
            let bias = format!("{name}.b{i}");
            let stored = tape
                .store()
                .value(&weight)
                .ok_or_else(|| Error::Config(format!("missing parameter {weight:?}")))?;
            if stored.shape() != [dims[i + 1], dims[i]] {
                return Err(Error::Config(format!(
                    "parameter {weight:?} has shape {:?}, expected [{}, {}]",
                    stored.shape(),
                    dims[i + 1],
                    dims[i]
                )));
            }
            let nonlin = if i + 2 == dims.len() { Nonlinearity::None } else { hidden_nonlin };
            layers.push(LayerSpec {
                weight,
                bias,
                in_dim: dims[i],
                out_dim: dims[i + 1],
                nonlin,
            });
        }
        Ok(ParametricMap { name: name.to_string(), layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Name of the final layer's weight parameter (rows select outputs).
    pub fn final_weight_name(&self) -> &str {
        &self.layers.last().expect("non-empty map").weight
    }

    pub fn final_bias_name(&self) -> &str {
        &self.layers.last().expect("non-empty map").bias
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in &self.layers {
            names.push(l.weight.clone());
            names.push(l.bias.clone());
        }
        names
    }

    /// Applies the stack to `x` (`[in]` or `[n, in]` rows).
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.value(x).rows_cols()?;
        if cols != self.input_dim() {
            return Err(Error::shape(
                "parametric_map",
                format!("map {} expects input dim {}, got {}", self.name, self.input_dim(), cols),
            ));
        }
        let mut cur = x;
        for layer in &self.layers {
            let w = tape.param(&layer.weight)?;
            let b = tape.param(&layer.bias)?;
            cur = tape.dense(w, b, cur)?;
            cur = match layer.nonlin {
                Nonlinearity::Relu => tape.relu(cur),
                Nonlinearity::Tanh => tape.tanh_op(cur),
                Nonlinearity::None => cur,
            };
        }
        Ok(cur)
    }
}
