//! Reference values computed from the model probabilities rather than from a coder.
//!
//! `negative ELBO = E_q[log2 q(z|x) - log2 p(x, z)]`, evaluated layer by layer: the
//! posterior marginal of `z_{i-1}` is pushed through `q(z_i | z_{i-1})` while the
//! pair's contribution is accumulated. This is exact whenever every adjacent pair
//! of layers is small enough to enumerate; otherwise a Monte Carlo estimate is
//! returned together with its standard error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_categorical, ChainModel, Conditional};
use crate::error::{Error, Result};

/// Largest `support(z_{i-1}) * configs(z_i)` enumerated exactly.
pub const EXACT_PAIR_BUDGET: u64 = 1 << 24;

const MC_SAMPLES: usize = 10_000;
const MC_SEED: u64 = 0x5eed_e1b0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegElbo {
    /// Negative ELBO of the datapoint, in bits.
    pub bits: f64,
    /// `None` for exact values.
    pub std_error: Option<f64>,
}

impl NegElbo {
    pub fn is_exact(&self) -> bool {
        self.std_error.is_none()
    }
}

/// Mixed-radix index to per-dimension values, first dimension most significant.
fn unrank(mut index: u64, alphabet: usize, dim: usize) -> Vec<usize> {
    let mut values = vec![0; dim];
    for v in values.iter_mut().rev() {
        *v = (index % alphabet as u64) as usize;
        index /= alphabet as u64;
    }
    values
}

fn joint_log2(probs: &[Vec<f64>], values: &[usize]) -> f64 {
    probs.iter().zip(values).map(|(p, &v)| p[v].log2()).sum()
}

fn joint_prob(probs: &[Vec<f64>], values: &[usize]) -> f64 {
    probs.iter().zip(values).map(|(p, &v)| p[v]).product()
}

/// Negative ELBO of `x`, exact when the chain fits [`EXACT_PAIR_BUDGET`].
pub fn elbo_bits(model: &ChainModel, x: &[usize]) -> Result<NegElbo> {
    model.check_layer_values(0, x)?;
    match exact_elbo(model, x)? {
        Some(bits) => Ok(NegElbo {
            bits,
            std_error: None,
        }),
        None => elbo_bits_monte_carlo(model, x, MC_SAMPLES, MC_SEED),
    }
}

fn exact_elbo(model: &ChainModel, x: &[usize]) -> Result<Option<f64>> {
    let depth = model.depth();
    for layer in 1..=depth {
        if model.layer_configurations(layer) > EXACT_PAIR_BUDGET {
            return Ok(None);
        }
    }
    // Sparse marginal of the previous layer: (values, probability).
    let mut marginal: Vec<(Vec<usize>, f64)> = vec![(x.to_vec(), 1.0)];
    let mut total = 0.0;
    for layer in 1..=depth {
        let configs = model.layer_configurations(layer);
        if (marginal.len() as u64).saturating_mul(configs) > EXACT_PAIR_BUDGET {
            return Ok(None);
        }
        let alphabet = model.alphabet(layer);
        let dim = model.layer_dim(layer);
        let below: Vec<Vec<f64>> = marginal
            .iter()
            .map(|(v, _)| model.conditional_probs(Conditional::Inference(layer), v))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|p| p.concat())
            .collect();
        let mut next = vec![0.0f64; configs as usize];
        for index in 0..configs {
            let z = unrank(index, alphabet, dim);
            let gen = model.conditional_probs(Conditional::Generative(layer - 1), &z)?;
            for (k, (prev, weight)) in marginal.iter().enumerate() {
                let q: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| below[k][j * alphabet + v])
                    .product();
                if q == 0.0 {
                    continue;
                }
                let mass = weight * q;
                next[index as usize] += mass;
                total += mass * (q.log2() - joint_log2(&gen, prev));
            }
        }
        marginal = next
            .into_iter()
            .enumerate()
            .filter(|&(_, m)| m > 0.0)
            .map(|(i, m)| (unrank(i as u64, alphabet, dim), m))
            .collect();
    }
    let prior = model.prior_probs();
    for (z, weight) in &marginal {
        total -= weight * joint_log2(&prior, z);
    }
    Ok(Some(total))
}

/// Monte Carlo estimate from `samples` posterior draws seeded by `seed`.
pub fn elbo_bits_monte_carlo(
    model: &ChainModel,
    x: &[usize],
    samples: usize,
    seed: u64,
) -> Result<NegElbo> {
    model.check_layer_values(0, x)?;
    if samples < 2 {
        return Err(Error::InvalidConfig("need at least two samples".into()));
    }
    let depth = model.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let mut prev = x.to_vec();
        let mut value = 0.0;
        for layer in 1..=depth {
            let q = model.conditional_probs(Conditional::Inference(layer), &prev)?;
            let z: Vec<usize> = q.iter().map(|p| sample_categorical(p, &mut rng)).collect();
            let gen = model.conditional_probs(Conditional::Generative(layer - 1), &z)?;
            value += joint_log2(&q, &z) - joint_log2(&gen, &prev);
            prev = z;
        }
        value -= joint_log2(&model.prior_probs(), &prev);
        sum += value;
        sum_sq += value * value;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(NegElbo {
        bits: mean,
        std_error: Some((var / n).sqrt()),
    })
}

/// `log2 p(x)` by summing out the chain top-down. Tabular models only.
pub fn exact_log_marginal(model: &ChainModel, x: &[usize]) -> Result<f64> {
    if !model.is_tabular() {
        return Err(Error::NotTabular);
    }
    model.check_layer_values(0, x)?;
    let depth = model.depth();
    let too_large = || Error::InvalidModel("chain too large to enumerate exactly".into());
    let top_configs = model.layer_configurations(depth);
    if top_configs > EXACT_PAIR_BUDGET {
        return Err(too_large());
    }
    let prior = model.prior_probs();
    let (a_top, d_top) = (model.alphabet(depth), model.layer_dim(depth));
    let mut marginal: Vec<f64> = (0..top_configs)
        .map(|i| joint_prob(&prior, &unrank(i, a_top, d_top)))
        .collect();
    for layer in (1..depth).rev() {
        let configs = model.layer_configurations(layer);
        if configs.saturating_mul(marginal.len() as u64) > EXACT_PAIR_BUDGET {
            return Err(too_large());
        }
        let (a_up, d_up) = (model.alphabet(layer + 1), model.layer_dim(layer + 1));
        let (alphabet, dim) = (model.alphabet(layer), model.layer_dim(layer));
        let mut next = vec![0.0f64; configs as usize];
        for (up, &weight) in marginal.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            let gen = model.conditional_probs(
                Conditional::Generative(layer),
                &unrank(up as u64, a_up, d_up),
            )?;
            for (index, slot) in next.iter_mut().enumerate() {
                *slot += weight * joint_prob(&gen, &unrank(index as u64, alphabet, dim));
            }
        }
        marginal = next;
    }
    let (a1, d1) = (model.alphabet(1), model.layer_dim(1));
    let mut px = 0.0;
    for (index, &weight) in marginal.iter().enumerate() {
        if weight > 0.0 {
            let gen =
                model.conditional_probs(Conditional::Generative(0), &unrank(index as u64, a1, d1))?;
            px += weight * joint_prob(&gen, x);
        }
    }
    Ok(px.log2())
}

/// `negative ELBO - (-log2 p(x))`, the posterior KL gap in bits. Tabular models only.
pub fn kl_gap_bits(model: &ChainModel, x: &[usize]) -> Result<f64> {
    let log_px = exact_log_marginal(model, x)?;
    let elbo = elbo_bits(model, x)?;
    Ok(elbo.bits + log_px)
}
