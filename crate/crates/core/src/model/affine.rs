//! Logistic conditionals whose location and log-scale are affine in the parent values.

use serde::{Deserialize, Serialize};

use crate::discretization::{uniform_grid, BinGrid, LogisticParams};
use crate::error::{Error, Result};

/// Symbols per data dimension for affine-logistic models.
pub const DATA_ALPHABET: usize = 256;

/// Log-scales are clamped to this range so every parent value gives a usable density.
pub const LOG_SCALE_RANGE: (f64, f64) = (-12.0, 12.0);

/// Per-output-dimension affine maps: `mu = W_mu v + b_mu`, `log_scale = W_s v + b_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineBlock {
    pub mu_weights: Vec<Vec<f64>>,
    pub mu_bias: Vec<f64>,
    pub log_scale_weights: Vec<Vec<f64>>,
    pub log_scale_bias: Vec<f64>,
}

impl AffineBlock {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            mu_weights: vec![vec![0.0; in_dim]; out_dim],
            mu_bias: vec![0.0; out_dim],
            log_scale_weights: vec![vec![0.0; in_dim]; out_dim],
            log_scale_bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mu_bias.len()
    }

    pub(crate) fn check(&self, out_dim: usize, in_dim: usize) -> Result<()> {
        let shapes_ok = self.mu_bias.len() == out_dim
            && self.log_scale_bias.len() == out_dim
            && self.mu_weights.len() == out_dim
            && self.log_scale_weights.len() == out_dim
            && self
                .mu_weights
                .iter()
                .chain(&self.log_scale_weights)
                .all(|w| w.len() == in_dim);
        if !shapes_ok {
            return Err(Error::InvalidModel(format!(
                "affine block does not map {in_dim} inputs to {out_dim} outputs"
            )));
        }
        let finite = self
            .mu_weights
            .iter()
            .chain(&self.log_scale_weights)
            .flatten()
            .chain(&self.mu_bias)
            .chain(&self.log_scale_bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel("non-finite affine parameter".into()));
        }
        Ok(())
    }

    /// Logistic parameters of every output dimension given parent values `inputs`.
    pub fn params(&self, inputs: &[f64]) -> Result<Vec<LogisticParams>> {
        (0..self.out_dim())
            .map(|j| {
                let mu = dot(&self.mu_weights[j], inputs) + self.mu_bias[j];
                let log_scale = (dot(&self.log_scale_weights[j], inputs) + self.log_scale_bias[j])
                    .clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
                LogisticParams::new(mu, log_scale.exp())
            })
            .collect()
    }
}

fn dot(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Affine-logistic payload. The prior on the top layer is a fixed standard logistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLogisticChain {
    /// `generative[i]` maps `z_{i+1}` to `p(z_i | z_{i+1})`, `i in 0..L` (`z_0 = x`).
    pub generative: Vec<AffineBlock>,
    /// `inference[i - 1]` maps `z_{i-1}` to `q(z_i | z_{i-1})`, `i in 1..=L`.
    pub inference: Vec<AffineBlock>,
}

impl AffineLogisticChain {
    pub(crate) fn check(&self, layer_dims: &[usize]) -> Result<()> {
        let depth = layer_dims.len() - 1;
        if self.generative.len() != depth || self.inference.len() != depth {
            return Err(Error::InvalidModel(
                "need one generative and one inference block per latent layer".into(),
            ));
        }
        for i in 0..depth {
            self.generative[i].check(layer_dims[i], layer_dims[i + 1])?;
            self.inference[i].check(layer_dims[i + 1], layer_dims[i])?;
        }
        Ok(())
    }
}

/// Grid for 8-bit data: bin `k` covers `[k - 0.5, k + 0.5)`, with 0 and 255 taking the tails.
pub fn observation_grid() -> BinGrid {
    uniform_grid(-0.5, DATA_ALPHABET as f64 - 0.5, DATA_ALPHABET).expect("static grid is valid")
}
