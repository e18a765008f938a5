//! Hierarchical latent-variable models with Markov-chain structure.
//!
//! Sampling runs `z_L -> z_{L-1} -> ... -> z_1 -> x`; inference runs the other way.
//! Every conditional is fully factorized across the dimensions of the layer it
//! describes and is exposed twice: as the model's own probabilities (used by the
//! oracles and by ancestral sampling) and as quantized [`FrequencyTable`]s (used
//! for coding).
//!
//! Layers are indexed `0..=L` with layer 0 the data `x`. Values of a layer are
//! symbol indices: data symbols for `x`, bin indices for latents.

mod affine;
mod io;
mod oracle;
mod tabular;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretization::{BinGrid, LogisticParams};
use crate::error::{Error, Result};
use crate::rans::{quantize_pmf, FrequencyTable};

pub use affine::{observation_grid, AffineBlock, AffineLogisticChain, DATA_ALPHABET, LOG_SCALE_RANGE};
pub use io::{gen_model, load_model, save_model, GenFamily, GenSpec, FORMAT_VERSION};
pub use oracle::{
    elbo_bits, elbo_bits_monte_carlo, exact_log_marginal, kl_gap_bits, NegElbo,
    EXACT_PAIR_BUDGET,
};
pub use tabular::{TabularChain, TabularConditional, MAX_ALPHABET, MAX_DEPTH, MAX_DIM};

/// Default quantization precision for model conditionals.
pub const DEFAULT_PRECISION_BITS: u32 = 12;

/// Default number of discretization bins per latent dimension.
pub const DEFAULT_BINS: usize = 1 << 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Tabular(TabularChain),
    AffineLogistic {
        params: AffineLogisticChain,
        /// One grid per latent layer; `grids[i - 1]` discretizes `z_i`.
        grids: Vec<BinGrid>,
        observation: BinGrid,
    },
}

/// Which conditional of the chain to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditional {
    /// `p(z_L)`.
    Prior,
    /// `p(z_i | z_{i+1})` for `i in 0..L`.
    Generative(usize),
    /// `q(z_i | z_{i-1})` for `i in 1..=L`.
    Inference(usize),
}

/// A depth-`L` chain model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    layer_dims: Vec<usize>,
    precision_bits: u32,
    family: Family,
    sampling_seed: Option<u64>,
    prior_tables: Vec<Arc<FrequencyTable>>,
}

impl ChainModel {
    /// Validates the parameters and precomputes everything that does not depend on
    /// conditioning values.
    ///
    /// `layer_dims` is `[D, d_1, ..., d_L]`.
    pub fn new(
        layer_dims: Vec<usize>,
        precision_bits: u32,
        family: Family,
        sampling_seed: Option<u64>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidModel("depth must be at least 1".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidModel("every layer needs at least one dim".into()));
        }
        if !(1..=crate::rans::MAX_PRECISION_BITS).contains(&precision_bits) {
            return Err(Error::InvalidPrecision(precision_bits));
        }
        let mut model = Self {
            layer_dims,
            precision_bits,
            family,
            sampling_seed,
            prior_tables: Vec::new(),
        };
        let depth = model.depth();
        match &mut model.family {
            Family::Tabular(t) => t.build(&model.layer_dims, precision_bits)?,
            Family::AffineLogistic {
                params,
                grids,
                observation,
            } => {
                params.check(&model.layer_dims)?;
                if grids.len() != depth {
                    return Err(Error::InvalidModel(format!(
                        "{} grids for {depth} latent layers",
                        grids.len()
                    )));
                }
                if *observation != observation_grid() {
                    return Err(Error::InvalidModel("unexpected observation grid".into()));
                }
            }
        }
        for layer in 0..=depth {
            let alphabet = model.alphabet(layer);
            if alphabet as u64 > 1u64 << precision_bits {
                return Err(Error::AlphabetTooLarge {
                    alphabet,
                    precision_bits,
                });
            }
        }
        model.prior_tables = model
            .prior_probs()
            .iter()
            .map(|p| quantize_pmf(p, precision_bits).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(model)
    }

    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn data_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// `[D, d_1, ..., d_L]`.
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layer_dim(&self, layer: usize) -> usize {
        self.layer_dims[layer]
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Tabular(_) => "tabular",
            Family::AffineLogistic { .. } => "affine-logistic",
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.family, Family::Tabular(_))
    }

    pub fn sampling_seed(&self) -> Option<u64> {
        self.sampling_seed
    }

    /// Number of symbols per dimension of `layer`.
    pub fn alphabet(&self, layer: usize) -> usize {
        match &self.family {
            Family::Tabular(t) => t.alphabets[layer],
            Family::AffineLogistic {
                grids, observation, ..
            } => {
                if layer == 0 {
                    observation.n_bins()
                } else {
                    grids[layer - 1].n_bins()
                }
            }
        }
    }

    /// Grid of latent layer `layer` (affine-logistic only).
    pub fn grid(&self, layer: usize) -> Option<&BinGrid> {
        match &self.family {
            Family::AffineLogistic { grids, .. } if (1..=self.depth()).contains(&layer) => {
                Some(&grids[layer - 1])
            }
            _ => None,
        }
    }

    /// Layer described by `cond` and the layer it conditions on.
    pub fn layers_of(&self, cond: Conditional) -> Result<(usize, Option<usize>)> {
        let depth = self.depth();
        match cond {
            Conditional::Prior => Ok((depth, None)),
            Conditional::Generative(i) if i < depth => Ok((i, Some(i + 1))),
            Conditional::Inference(i) if (1..=depth).contains(&i) => Ok((i, Some(i - 1))),
            Conditional::Generative(i) | Conditional::Inference(i) => {
                Err(Error::IndexOutOfRange {
                    index: i,
                    len: depth + 1,
                })
            }
        }
    }

    /// Checks that `values` is an admissible configuration of `layer`.
    pub fn check_layer_values(&self, layer: usize, values: &[usize]) -> Result<()> {
        if values.len() != self.layer_dims[layer] {
            return Err(Error::InvalidData(format!(
                "layer {layer} has {} dims, got {} values",
                self.layer_dims[layer],
                values.len()
            )));
        }
        let alphabet = self.alphabet(layer);
        if let Some(&v) = values.iter().find(|&&v| v >= alphabet) {
            return Err(Error::SymbolOutOfRange {
                symbol: v,
                alphabet,
            });
        }
        Ok(())
    }

    /// Real-valued conditioning inputs of `layer` for the affine maps.
    fn layer_inputs(&self, layer: usize, values: &[usize]) -> Vec<f64> {
        match &self.family {
            Family::AffineLogistic {
                grids, observation, ..
            } => {
                let grid = if layer == 0 {
                    observation
                } else {
                    &grids[layer - 1]
                };
                values.iter().map(|&v| grid.representatives()[v]).collect()
            }
            Family::Tabular(_) => values.iter().map(|&v| v as f64).collect(),
        }
    }

    fn logistic_params(&self, cond: Conditional, parent: &[usize]) -> Result<Vec<LogisticParams>> {
        let Family::AffineLogistic { params, .. } = &self.family else {
            unreachable!("only called for affine-logistic models");
        };
        let (layer, parent_layer) = self.layers_of(cond)?;
        match (cond, parent_layer) {
            (Conditional::Prior, _) => Ok(vec![LogisticParams::standard(); self.layer_dims[layer]]),
            (Conditional::Generative(i), Some(pl)) => {
                params.generative[i].params(&self.layer_inputs(pl, parent))
            }
            (Conditional::Inference(i), Some(pl)) => {
                params.inference[i - 1].params(&self.layer_inputs(pl, parent))
            }
            _ => unreachable!(),
        }
    }

    fn check_parent(&self, cond: Conditional, parent: &[usize]) -> Result<usize> {
        let (layer, parent_layer) = self.layers_of(cond)?;
        match parent_layer {
            Some(pl) => self.check_layer_values(pl, parent)?,
            None if !parent.is_empty() => {
                return Err(Error::InvalidData("the prior takes no conditioning values".into()))
            }
            None => {}
        }
        Ok(layer)
    }

    /// Model probabilities of `cond` for every dimension of its layer.
    pub fn conditional_probs(&self, cond: Conditional, parent: &[usize]) -> Result<Vec<Vec<f64>>> {
        let layer = self.check_parent(cond, parent)?;
        match &self.family {
            Family::Tabular(t) => {
                let alphabets = parent_alphabets(t, cond, layer, parent.len());
                Ok(tabular_block(t, cond)
                    .iter()
                    .map(|c| c.probs(parent, &alphabets).to_vec())
                    .collect())
            }
            Family::AffineLogistic { .. } => {
                let grid = self.layer_grid(layer);
                Ok(self
                    .logistic_params(cond, parent)?
                    .iter()
                    .map(|p| grid.bin_masses(p))
                    .collect())
            }
        }
    }

    /// Quantized coding tables of `cond` for every dimension of its layer.
    pub fn conditional_tables(
        &self,
        cond: Conditional,
        parent: &[usize],
    ) -> Result<Vec<Arc<FrequencyTable>>> {
        if cond == Conditional::Prior {
            self.check_parent(cond, parent)?;
            return Ok(self.prior_tables.clone());
        }
        let layer = self.check_parent(cond, parent)?;
        match &self.family {
            Family::Tabular(t) => {
                let alphabets = parent_alphabets(t, cond, layer, parent.len());
                Ok(tabular_block(t, cond)
                    .iter()
                    .map(|c| c.table(parent, &alphabets))
                    .collect())
            }
            Family::AffineLogistic { .. } => {
                let grid = self.layer_grid(layer);
                self.logistic_params(cond, parent)?
                    .iter()
                    .map(|p| {
                        crate::discretization::discretize_density(p, grid, self.precision_bits)
                            .map(Arc::new)
                    })
                    .collect()
            }
        }
    }

    pub fn prior_probs(&self) -> Vec<Vec<f64>> {
        self.conditional_probs(Conditional::Prior, &[])
            .expect("prior is always defined")
    }

    pub fn prior_tables(&self) -> Vec<Arc<FrequencyTable>> {
        self.prior_tables.clone()
    }

    /// `p(z_layer | z_{layer+1})`, `layer in 0..L`.
    pub fn generative_tables(&self, layer: usize, parent: &[usize]) -> Result<Vec<Arc<FrequencyTable>>> {
        self.conditional_tables(Conditional::Generative(layer), parent)
    }

    /// `q(z_layer | z_{layer-1})`, `layer in 1..=L`.
    pub fn inference_tables(&self, layer: usize, child: &[usize]) -> Result<Vec<Arc<FrequencyTable>>> {
        self.conditional_tables(Conditional::Inference(layer), child)
    }

    fn layer_grid(&self, layer: usize) -> &BinGrid {
        match &self.family {
            Family::AffineLogistic {
                grids, observation, ..
            } => {
                if layer == 0 {
                    observation
                } else {
                    &grids[layer - 1]
                }
            }
            Family::Tabular(_) => unreachable!("tabular layers have no grid"),
        }
    }

    /// Draws `z_L` from the prior and then each child in chain order, from the model
    /// probabilities. Deterministic in `seed`.
    pub fn sample_ancestral(&self, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Sample {
        let depth = self.depth();
        let mut layers = vec![Vec::new(); depth + 1];
        layers[depth] = sample_dims(&self.prior_probs(), rng);
        for layer in (0..depth).rev() {
            let probs = self
                .conditional_probs(Conditional::Generative(layer), &layers[layer + 1])
                .expect("sampled parents are admissible");
            layers[layer] = sample_dims(&probs, rng);
        }
        Sample { layers }
    }

    /// Number of joint configurations of `layer`, saturating at `u64::MAX`.
    pub fn layer_configurations(&self, layer: usize) -> u64 {
        (self.alphabet(layer) as u64)
            .checked_pow(self.layer_dims[layer] as u32)
            .unwrap_or(u64::MAX)
    }
}

fn tabular_block(t: &TabularChain, cond: Conditional) -> &[TabularConditional] {
    match cond {
        Conditional::Prior => &t.prior,
        Conditional::Generative(i) => &t.generative[i],
        Conditional::Inference(i) => &t.inference[i - 1],
    }
}

fn parent_alphabets(t: &TabularChain, cond: Conditional, layer: usize, len: usize) -> Vec<usize> {
    match cond {
        Conditional::Prior => Vec::new(),
        Conditional::Generative(_) => vec![t.alphabets[layer + 1]; len],
        Conditional::Inference(_) => vec![t.alphabets[layer - 1]; len],
    }
}

fn sample_dims<R: Rng>(probs: &[Vec<f64>], rng: &mut R) -> Vec<usize> {
    probs.iter().map(|p| sample_categorical(p, rng)).collect()
}

pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_nonzero = i;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// One ancestral draw: `layers[0]` is `x`, `layers[i]` is `z_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub layers: Vec<Vec<usize>>,
}

impl Sample {
    pub fn x(&self) -> &[usize] {
        &self.layers[0]
    }

    pub fn z(&self, layer: usize) -> &[usize] {
        &self.layers[layer]
    }
}
