//! JSON model files and deterministic model generation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    observation_grid, AffineBlock, AffineLogisticChain, ChainModel, Family, TabularChain,
    TabularConditional, DEFAULT_BINS,
};
use crate::discretization::{equal_mass_grid, uniform_grid, BinGrid, LogisticParams};
use crate::error::{Error, Result};
use crate::rans::quantize_pmf;

pub const FORMAT_VERSION: u32 = 1;

/// Ancestral samples drawn to estimate the moments of each lower latent layer.
const GRID_SAMPLES: usize = 10_000;
/// Lower-layer grids span the sample mean plus or minus this many standard deviations.
const GRID_HALF_WIDTH_SDS: f64 = 4.0;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    family: String,
    #[serde(rename = "L")]
    depth: usize,
    #[serde(rename = "D")]
    data_dim: usize,
    /// Latent dims `d_1..d_L`.
    layer_dims: Vec<usize>,
    precision_bits: u32,
    grids: Vec<BinGrid>,
    params: serde_json::Value,
    sampling_seed: Option<u64>,
}

impl ChainModel {
    /// Canonical JSON serialization (the bytes written by [`save_model`]).
    pub fn to_json(&self) -> Result<String> {
        let (family, grids, params) = match &self.family {
            Family::Tabular(t) => ("tabular", Vec::new(), serde_json::to_value(t)?),
            Family::AffineLogistic { params, grids, .. } => {
                ("affine-logistic", grids.clone(), serde_json::to_value(params)?)
            }
        };
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            family: family.into(),
            depth: self.depth(),
            data_dim: self.data_dim(),
            layer_dims: self.layer_dims[1..].to_vec(),
            precision_bits: self.precision_bits,
            grids,
            params,
            sampling_seed: self.sampling_seed,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if file.layer_dims.len() != file.depth {
            return Err(Error::InvalidModel(format!(
                "L = {} but {} latent dims listed",
                file.depth,
                file.layer_dims.len()
            )));
        }
        let mut layer_dims = vec![file.data_dim];
        layer_dims.extend(&file.layer_dims);
        let family = match file.family.as_str() {
            "tabular" => {
                if !file.grids.is_empty() {
                    return Err(Error::InvalidModel("tabular models carry no grids".into()));
                }
                Family::Tabular(serde_json::from_value(file.params)?)
            }
            "affine-logistic" => Family::AffineLogistic {
                params: serde_json::from_value(file.params)?,
                grids: file.grids,
                observation: observation_grid(),
            },
            other => return Err(Error::InvalidModel(format!("unknown family '{other}'"))),
        };
        ChainModel::new(layer_dims, file.precision_bits, family, file.sampling_seed)
    }
}

pub fn save_model(model: &ChainModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ChainModel> {
    ChainModel::from_json(&std::fs::read_to_string(path)?)
}

/// Family-specific knobs for [`gen_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum GenFamily {
    /// Independent per-dimension chains with a reversible transition kernel
    /// `T = (1 - mixing) I + mixing * 1 pi^T`, which makes `T` itself the exact
    /// posterior transition. `mismatch` blends the inference tables toward uniform.
    Tabular {
        alphabet: usize,
        mixing: f64,
        skew: u32,
        mismatch: f64,
    },
    AffineLogistic { n_bins: usize },
}

impl GenFamily {
    pub fn tabular(alphabet: usize) -> Self {
        GenFamily::Tabular {
            alphabet,
            mixing: 0.75,
            skew: 2,
            mismatch: 0.0,
        }
    }

    pub fn affine_logistic() -> Self {
        GenFamily::AffineLogistic {
            n_bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub family: GenFamily,
    pub depth: usize,
    pub data_dim: usize,
    /// `d_1..d_L`.
    pub latent_dims: Vec<usize>,
    pub precision_bits: u32,
    pub seed: u64,
}

/// Draws a model's parameters deterministically from `spec.seed`.
pub fn gen_model(spec: &GenSpec) -> Result<ChainModel> {
    if spec.depth == 0 || spec.latent_dims.len() != spec.depth {
        return Err(Error::InvalidModel(format!(
            "depth {} needs exactly that many latent dims, got {}",
            spec.depth,
            spec.latent_dims.len()
        )));
    }
    let mut layer_dims = vec![spec.data_dim];
    layer_dims.extend(&spec.latent_dims);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.family {
        GenFamily::Tabular {
            alphabet,
            mixing,
            skew,
            mismatch,
        } => gen_tabular(&layer_dims, alphabet, mixing, skew, mismatch, spec.precision_bits, &mut rng),
        GenFamily::AffineLogistic { n_bins } => {
            gen_affine(&layer_dims, n_bins, spec.precision_bits, spec.seed, &mut rng)
        }
    }
}

fn gen_tabular(
    layer_dims: &[usize],
    alphabet: usize,
    mixing: f64,
    skew: u32,
    mismatch: f64,
    precision_bits: u32,
    rng: &mut ChaCha8Rng,
) -> Result<ChainModel> {
    let dim = layer_dims[0];
    if layer_dims.iter().any(|&d| d != dim) {
        return Err(Error::InvalidModel(
            "generated tabular models pair dimension j of every layer, so all dims must match"
                .into(),
        ));
    }
    if !alphabet.is_power_of_two() || !(2..=super::MAX_ALPHABET).contains(&alphabet) {
        return Err(Error::InvalidModel(format!(
            "generated tabular alphabet must be a power of two in 2..={}",
            super::MAX_ALPHABET
        )));
    }
    if !(0.0..=1.0).contains(&mixing) || !(0.0..=1.0).contains(&mismatch) {
        return Err(Error::InvalidModel("mixing and mismatch must lie in [0, 1]".into()));
    }
    let depth = layer_dims.len() - 1;
    let quantized = |row: Vec<f64>| -> Result<Vec<f64>> {
        let t = quantize_pmf(&row, precision_bits)?;
        Ok((0..alphabet).map(|s| t.probability(s)).collect())
    };

    // Stationary distribution per dimension: 16 units per symbol, then random transfers.
    let stationary: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let mut counts = vec![16u32; alphabet];
            for _ in 0..alphabet {
                let from = rng.random_range(0..alphabet);
                let to = rng.random_range(0..alphabet);
                let amount = rng.random_range(0..=skew).min(counts[from] - 1);
                counts[from] -= amount;
                counts[to] += amount;
            }
            let total = f64::from(16 * alphabet as u32);
            counts.iter().map(|&c| f64::from(c) / total).collect()
        })
        .collect();

    let kernel = |pi: &[f64], from: usize| -> Vec<f64> {
        (0..alphabet)
            .map(|to| mixing * pi[to] + if to == from { 1.0 - mixing } else { 0.0 })
            .collect()
    };
    let transition_block = |blend: f64| -> Result<Vec<TabularConditional>> {
        stationary
            .iter()
            .enumerate()
            .map(|(j, pi)| {
                let rows = (0..alphabet)
                    .map(|from| {
                        let row = kernel(pi, from)
                            .into_iter()
                            .map(|p| (1.0 - blend) * p + blend / alphabet as f64)
                            .collect();
                        quantized(row)
                    })
                    .collect::<Result<_>>()?;
                Ok(TabularConditional::new(vec![j], rows))
            })
            .collect()
    };

    let prior = stationary
        .iter()
        .map(|pi| Ok(TabularConditional::new(Vec::new(), vec![quantized(pi.clone())?])))
        .collect::<Result<_>>()?;
    let generative = (0..depth).map(|_| transition_block(0.0)).collect::<Result<_>>()?;
    let inference = (0..depth).map(|_| transition_block(mismatch)).collect::<Result<_>>()?;
    let chain = TabularChain {
        alphabets: vec![alphabet; depth + 1],
        prior,
        generative,
        inference,
    };
    ChainModel::new(layer_dims.to_vec(), precision_bits, Family::Tabular(chain), None)
}

fn uniform_in(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    rng.random_range(-half_width..=half_width)
}

/// Ranges of a randomly drawn generative block.
struct BlockInit {
    weight_scale: f64,
    mu_center: f64,
    mu_jitter: f64,
    log_scale: f64,
    log_scale_weight: f64,
}

fn random_block(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize, init: &BlockInit) -> AffineBlock {
    let mut block = AffineBlock::zeros(out_dim, in_dim);
    for j in 0..out_dim {
        for k in 0..in_dim {
            block.mu_weights[j][k] = uniform_in(rng, init.weight_scale);
            block.log_scale_weights[j][k] = uniform_in(rng, init.log_scale_weight);
        }
        block.mu_bias[j] = init.mu_center + uniform_in(rng, init.mu_jitter);
        block.log_scale_bias[j] = init.log_scale + uniform_in(rng, 0.2);
    }
    block
}

fn gen_affine(
    layer_dims: &[usize],
    n_bins: usize,
    precision_bits: u32,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ChainModel> {
    let depth = layer_dims.len() - 1;
    let generative: Vec<AffineBlock> = (0..depth)
        .map(|layer| {
            let (out_dim, in_dim) = (layer_dims[layer], layer_dims[layer + 1]);
            let fan = (in_dim as f64).sqrt();
            let init = if layer == 0 {
                BlockInit {
                    weight_scale: 48.0 / fan,
                    mu_center: 127.5,
                    mu_jitter: 16.0,
                    log_scale: 4f64.ln(),
                    log_scale_weight: 0.1 / fan,
                }
            } else {
                BlockInit {
                    weight_scale: 0.8 / fan,
                    mu_center: 0.0,
                    mu_jitter: 0.5,
                    log_scale: 0.5f64.ln(),
                    log_scale_weight: 0.1 / fan,
                }
            };
            random_block(rng, out_dim, in_dim, &init)
        })
        .collect();
    let samples = ancestral_samples(&generative, layer_dims, seed)?;
    let moments: Vec<Moments> = (1..=depth)
        .map(|layer| {
            if layer == depth {
                Moments::standard_logistic(layer_dims[depth])
            } else {
                Moments::from_samples(&samples[layer])
            }
        })
        .collect();
    let inference = (1..=depth)
        .map(|layer| posterior_block(&generative[layer - 1], &moments[layer - 1]))
        .collect::<Result<_>>()?;
    let params = AffineLogisticChain {
        generative,
        inference,
    };
    let std = LogisticParams::standard();
    let mut grids = Vec::with_capacity(depth);
    for m in &moments[..depth - 1] {
        let (mean, sd) = m.pooled();
        grids.push(uniform_grid(
            mean - GRID_HALF_WIDTH_SDS * sd,
            mean + GRID_HALF_WIDTH_SDS * sd,
            n_bins,
        )?);
    }
    grids.push(equal_mass_grid(&std, n_bins)?);
    ChainModel::new(
        layer_dims.to_vec(),
        precision_bits,
        Family::AffineLogistic {
            params,
            grids,
            observation: observation_grid(),
        },
        Some(seed),
    )
}

/// Continuous ancestral samples of every latent layer below the top, `[layer][sample]`.
fn ancestral_samples(
    generative: &[AffineBlock],
    layer_dims: &[usize],
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let depth = layer_dims.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let std = LogisticParams::standard();
    let mut samples = vec![Vec::with_capacity(GRID_SAMPLES); depth + 1];
    for _ in 0..GRID_SAMPLES {
        let mut values: Vec<f64> = (0..layer_dims[depth])
            .map(|_| std.quantile(open_unit(&mut rng)))
            .collect();
        for layer in (1..depth).rev() {
            values = generative[layer]
                .params(&values)?
                .iter()
                .map(|p| p.quantile(open_unit(&mut rng)))
                .collect();
            samples[layer].push(values.clone());
        }
    }
    Ok(samples)
}

/// Mean and covariance of a latent layer's marginal.
struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Moments {
    fn standard_logistic(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * LOGISTIC_VARIANCE,
        }
    }

    fn from_samples(samples: &[Vec<f64>]) -> Self {
        let dim = samples[0].len();
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(dim);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        for s in samples {
            let d = DVector::from_column_slice(s) - &mean;
            cov += &d * d.transpose();
        }
        cov /= n - 1.0;
        Self { mean, cov }
    }

    /// Mean and standard deviation over all dimensions together.
    fn pooled(&self) -> (f64, f64) {
        let dim = self.mean.len() as f64;
        let mean = self.mean.sum() / dim;
        let second: f64 = (0..self.mean.len())
            .map(|j| self.cov[(j, j)] + self.mean[j] * self.mean[j])
            .sum::<f64>()
            / dim;
        (mean, (second - mean * mean).max(0.0).sqrt().max(1e-3))
    }
}

/// Variance of the standard logistic distribution.
const LOGISTIC_VARIANCE: f64 = std::f64::consts::PI * std::f64::consts::PI / 3.0;

/// Inference block `q(z | y)` for a generative block `p(y | z)`, from the
/// linear-Gaussian posterior with `z ~ N(prior.mean, prior.cov)` and logistic noise
/// replaced by its variance. Each output dimension gets the posterior mean and the
/// logistic scale matching the marginal posterior variance.
fn posterior_block(gen: &AffineBlock, prior: &Moments) -> Result<AffineBlock> {
    let (y_dim, z_dim) = (gen.out_dim(), prior.mean.len());
    let w = DMatrix::from_fn(y_dim, z_dim, |i, k| gen.mu_weights[i][k]);
    let noise_precision = DMatrix::from_fn(y_dim, y_dim, |i, k| {
        if i == k {
            1.0 / (LOGISTIC_VARIANCE * (2.0 * gen.log_scale_bias[i]).exp())
        } else {
            0.0
        }
    });
    let singular = || Error::InvalidModel("degenerate latent covariance".into());
    let prior_precision = prior.cov.clone().try_inverse().ok_or_else(singular)?;
    let post_cov = (&prior_precision + w.transpose() * &noise_precision * &w)
        .try_inverse()
        .ok_or_else(singular)?;
    let gain = &post_cov * w.transpose() * &noise_precision;
    let b = DVector::from_column_slice(&gen.mu_bias);
    let offset = &post_cov * &prior_precision * &prior.mean - &gain * b;
    let mut block = AffineBlock::zeros(z_dim, y_dim);
    for j in 0..z_dim {
        for i in 0..y_dim {
            block.mu_weights[j][i] = gain[(j, i)];
        }
        block.mu_bias[j] = offset[j];
        block.log_scale_bias[j] = (post_cov[(j, j)] / LOGISTIC_VARIANCE).sqrt().ln();
    }
    Ok(block)
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tabular_spec(seed: u64) -> GenSpec {
        GenSpec {
            family: GenFamily::tabular(8),
            depth: 2,
            data_dim: 2,
            latent_dims: vec![2, 2],
            precision_bits: 12,
            seed,
        }
    }

    fn affine_spec() -> GenSpec {
        GenSpec {
            family: GenFamily::AffineLogistic { n_bins: 64 },
            depth: 3,
            data_dim: 3,
            latent_dims: vec![2, 2, 1],
            precision_bits: 16,
            seed: 11,
        }
    }

    #[test]
    fn json_roundtrip_is_identity() {
        for spec in [tabular_spec(5), affine_spec()] {
            let m = gen_model(&spec).unwrap();
            let text = m.to_json().unwrap();
            let back = ChainModel::from_json(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            gen_model(&tabular_spec(9)).unwrap().to_json().unwrap(),
            gen_model(&tabular_spec(9)).unwrap().to_json().unwrap()
        );
        assert_ne!(gen_model(&tabular_spec(9)).unwrap(), gen_model(&tabular_spec(10)).unwrap());
        let a = gen_model(&affine_spec()).unwrap();
        assert_eq!(a, gen_model(&affine_spec()).unwrap());
        assert_eq!(a.sampling_seed(), Some(11));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = gen_model(&tabular_spec(1)).unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn rejects_version_and_family() {
        let m = gen_model(&tabular_spec(1)).unwrap();
        let text = m.to_json().unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            ChainModel::from_json(&bumped),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        let renamed = text.replace("\"tabular\"", "\"mystery\"");
        assert!(ChainModel::from_json(&renamed).is_err());
    }

    #[test]
    fn generated_tables_are_dyadic() {
        let m = gen_model(&tabular_spec(4)).unwrap();
        let Family::Tabular(t) = m.family() else { panic!() };
        for c in t.generative.iter().chain(&t.inference).flatten().chain(&t.prior) {
            for row in &c.rows {
                for p in row {
                    assert_eq!((p * 4096.0).fract(), 0.0);
                }
            }
        }
    }

    #[test]
    fn affine_grids_follow_layout() {
        let m = gen_model(&affine_spec()).unwrap();
        let top = m.grid(3).unwrap();
        let expected = equal_mass_grid(&LogisticParams::standard(), 64).unwrap();
        assert_eq!(top, &expected);
        for layer in 1..3 {
            let g = m.grid(layer).unwrap();
            assert_eq!(g.n_bins(), 64);
            let reps = g.representatives();
            let width = reps[1] - reps[0];
            assert!((reps[63] - reps[62] - width).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_mismatched_tabular_dims() {
        let mut spec = tabular_spec(1);
        spec.latent_dims = vec![2, 3];
        assert!(gen_model(&spec).is_err());
        spec.latent_dims = vec![2];
        assert!(gen_model(&spec).is_err());
    }
}
