//! Repeated chained-compression runs: cumulative moving averages of the stream
//! length, initial-bit comparisons across depths, and cross-checks against the
//! model's own ELBO.
//!
//! Datasets are ancestral samples from the model under test, so the expected net
//! bitrate is the model's negative ELBO.

use std::io::{Read, Write};
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{
    bbans_initial_bits_formula, bitswap_initial_bits_formula, chain_compress, SchemeId,
};
use crate::error::{Error, Result};
use crate::model::{elbo_bits, exact_log_marginal, ChainModel, Conditional};

pub const DEFAULT_DATAPOINTS: usize = 100;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_SEED_WORDS: usize = 64;

/// Tolerance of [`oracle_check`] in bits per dimension.
pub const ORACLE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<SchemeId>,
    #[serde(default = "default_datapoints")]
    pub n_datapoints: usize,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_seed_words")]
    pub seed_words: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Directory receiving one CSV per scheme.
    pub output: PathBuf,
    /// Models of increasing depth for the initial-bits comparison.
    #[serde(default)]
    pub compare_models: Vec<PathBuf>,
}

fn all_schemes() -> Vec<SchemeId> {
    SchemeId::ALL.to_vec()
}

fn default_datapoints() -> usize {
    DEFAULT_DATAPOINTS
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_seed_words() -> usize {
    DEFAULT_SEED_WORDS
}

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            schemes: all_schemes(),
            n_datapoints: DEFAULT_DATAPOINTS,
            n_trials: DEFAULT_TRIALS,
            seed_words: DEFAULT_SEED_WORDS,
            base_seed: 0,
            output: output.into(),
            compare_models: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_datapoints == 0 || self.n_trials == 0 {
            return Err(Error::InvalidConfig(
                "n_datapoints and n_trials must be at least 1".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no scheme selected".into()));
        }
        Ok(())
    }

    pub fn run_params(&self) -> RunParams {
        RunParams {
            n_datapoints: self.n_datapoints,
            n_trials: self.n_trials,
            seed_words: self.seed_words,
            base_seed: self.base_seed,
        }
    }
}

/// Everything a run depends on besides the model and scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunParams {
    pub n_datapoints: usize,
    pub n_trials: usize,
    pub seed_words: usize,
    pub base_seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n_datapoints: DEFAULT_DATAPOINTS,
            n_trials: DEFAULT_TRIALS,
            seed_words: DEFAULT_SEED_WORDS,
            base_seed: 0,
        }
    }
}

/// Dataset and buffer seeds of trial `trial`; independent of the scheme.
pub fn trial_seeds(base_seed: u64, trial: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial as u64);
    (rng.next_u64(), rng.next_u64())
}

/// `n` ancestral samples of `x`.
pub fn sample_dataset(model: &ChainModel, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| model.sample_with(&mut rng).layers.swap_remove(0))
        .collect()
}

/// One datapoint of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Stream length above the low-water mark, initial bits included.
    pub bits_total: u64,
    /// Stream growth caused by this datapoint.
    pub bits_net: i64,
    /// Seed bits consumed so far.
    pub initial_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaTable {
    pub scheme: SchemeId,
    pub data_dim: usize,
    pub trials: Vec<TrialRecord>,
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CmaTable {
    pub fn n_timesteps(&self) -> usize {
        self.trials.first().map_or(0, |t| t.steps.len())
    }

    fn cma(&self, trial: &TrialRecord, n: usize) -> f64 {
        trial.steps[n - 1].bits_total as f64 / (n * self.data_dim) as f64
    }

    /// Mean and across-trial standard deviation of `CMA_n` in bits per dimension
    /// (`n` counts from 1).
    pub fn cma_stats(&self, n: usize) -> (f64, f64) {
        mean_sd(self.trials.iter().map(|t| self.cma(t, n)))
    }

    pub fn mean_cma_curve(&self) -> Vec<f64> {
        (1..=self.n_timesteps()).map(|n| self.cma_stats(n).0).collect()
    }

    /// Net bits per dimension averaged over every datapoint of every trial.
    pub fn mean_net_bits_per_dim(&self) -> f64 {
        let (sum, count) = self
            .trials
            .iter()
            .flat_map(|t| &t.steps)
            .fold((0i64, 0usize), |(s, c), step| (s + step.bits_net, c + 1));
        sum as f64 / (count * self.data_dim) as f64
    }

    /// Bits taken from the initial buffer by the first datapoint, mean and sd across trials.
    pub fn first_initial_bits(&self) -> (f64, f64) {
        mean_sd(self.trials.iter().map(|t| t.steps[0].initial_bits as f64))
    }

    pub fn final_initial_bits(&self) -> (f64, f64) {
        mean_sd(
            self.trials
                .iter()
                .map(|t| t.steps.last().map_or(0, |s| s.initial_bits) as f64),
        )
    }

    /// Writes `trial,timestep,bits_total,bits_net,cma_bits_per_dim,initial_bits`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for t in &self.trials {
            for (i, s) in t.steps.iter().enumerate() {
                w.write_record(&[
                    t.trial.to_string(),
                    (i + 1).to_string(),
                    s.bits_total.to_string(),
                    s.bits_net.to_string(),
                    self.cma(t, i + 1).to_string(),
                    s.initial_bits.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the output of [`write_csv`](Self::write_csv). The CMA column is checked
    /// against the recorded lengths.
    pub fn read_csv<R: Read>(input: R, scheme: SchemeId, data_dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(CSV_HEADER) {
            return Err(Error::InvalidData("unexpected CSV header".into()));
        }
        let mut table = CmaTable {
            scheme,
            data_dim,
            trials: Vec::new(),
        };
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if table.trials.last().is_none_or(|t| t.trial != row.trial) {
                table.trials.push(TrialRecord {
                    trial: row.trial,
                    steps: Vec::new(),
                });
            }
            let trial = table.trials.last_mut().expect("pushed above");
            if row.timestep != trial.steps.len() + 1 {
                return Err(Error::InvalidData(format!(
                    "trial {} timestep {} out of order",
                    row.trial, row.timestep
                )));
            }
            let expected = row.bits_total as f64 / (row.timestep * data_dim) as f64;
            if (expected - row.cma_bits_per_dim).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(Error::InvalidData(format!(
                    "CMA of trial {} timestep {} does not match its length",
                    row.trial, row.timestep
                )));
            }
            trial.steps.push(StepRecord {
                bits_total: row.bits_total,
                bits_net: row.bits_net,
                initial_bits: row.initial_bits,
            });
        }
        Ok(table)
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "trial",
    "timestep",
    "bits_total",
    "bits_net",
    "cma_bits_per_dim",
    "initial_bits",
];

#[derive(Deserialize)]
struct CsvRow {
    trial: usize,
    timestep: usize,
    bits_total: u64,
    bits_net: i64,
    cma_bits_per_dim: f64,
    initial_bits: u64,
}

fn run_trial(model: &ChainModel, scheme: SchemeId, params: &RunParams, trial: usize) -> Result<TrialRecord> {
    let (data_seed, buffer_seed) = trial_seeds(params.base_seed, trial);
    let dataset = sample_dataset(model, params.n_datapoints, data_seed);
    let (coder, trace) = chain_compress(model, scheme, &dataset, params.seed_words, buffer_seed)?;
    let initial_len = coder.initial_len_bits();
    let mut low = initial_len;
    let steps = trace
        .datapoints
        .iter()
        .map(|d| {
            low = low.min(d.min_bits_during);
            StepRecord {
                bits_total: d.bits_after - low,
                bits_net: d.net_bits(),
                initial_bits: initial_len - low,
            }
        })
        .collect();
    Ok(TrialRecord { trial, steps })
}

/// Runs `params.n_trials` independent chained compressions in parallel.
pub fn run_cma_experiment(model: &ChainModel, scheme: SchemeId, params: &RunParams) -> Result<CmaTable> {
    if params.n_datapoints == 0 || params.n_trials == 0 {
        return Err(Error::InvalidConfig(
            "n_datapoints and n_trials must be at least 1".into(),
        ));
    }
    let trials = (0..params.n_trials)
        .into_par_iter()
        .map(|trial| {
            run_trial(model, scheme, params, trial).map_err(|e| Error::Trial {
                trial,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CmaTable {
        scheme,
        data_dim: model.data_dim(),
        trials,
    })
}

/// Expected ideal cost of every chain op under the coding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCosts {
    /// `decode[i]`: cost of decoding `z_{i+1}` under `q`.
    pub decode: Vec<f64>,
    /// `encode[i]`: cost of encoding `z_i` under `p` (`z_0 = x`).
    pub encode: Vec<f64>,
}

impl LayerCosts {
    pub fn bbans_initial_bits(&self) -> f64 {
        bbans_initial_bits_formula(&self.decode)
    }

    pub fn bitswap_initial_bits(&self) -> f64 {
        bitswap_initial_bits_formula(&self.decode, &self.encode)
    }

    /// Mean decode cost of one latent layer.
    pub fn mean_layer_decode(&self) -> f64 {
        self.decode.iter().sum::<f64>() / self.decode.len() as f64
    }
}

/// Monte Carlo expectation over ancestral samples of `-log2 F/M` for every chain op.
/// For models whose inference tables match the posterior this is also the
/// expectation under the coder's own sampling.
pub fn expected_layer_costs(model: &ChainModel, samples: usize, seed: u64) -> Result<LayerCosts> {
    let depth = model.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decode = vec![0.0; depth];
    let mut encode = vec![0.0; depth];
    let cost = |cond: Conditional, parent: &[usize], values: &[usize]| -> Result<f64> {
        Ok(model
            .conditional_tables(cond, parent)?
            .iter()
            .zip(values)
            .map(|(t, &v)| t.cost_bits(v))
            .sum())
    };
    for _ in 0..samples {
        let s = model.sample_with(&mut rng);
        for i in 1..=depth {
            decode[i - 1] += cost(Conditional::Inference(i), &s.layers[i - 1], &s.layers[i])?;
            encode[i - 1] += cost(Conditional::Generative(i - 1), &s.layers[i], &s.layers[i - 1])?;
        }
    }
    let n = samples as f64;
    Ok(LayerCosts {
        decode: decode.into_iter().map(|c| c / n).collect(),
        encode: encode.into_iter().map(|c| c / n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialBitsRow {
    pub depth: usize,
    /// Mean and across-trial sd of the first datapoint's initial bits.
    pub bbans: (f64, f64),
    pub bitswap: (f64, f64),
    pub bbans_formula: f64,
    pub bitswap_formula: f64,
}

/// Initial bits of the first datapoint for both schemes on each model.
pub fn compare_initial_bits(models: &[ChainModel], params: &RunParams) -> Result<Vec<InitialBitsRow>> {
    let first_only = RunParams {
        n_datapoints: 1,
        ..*params
    };
    models
        .iter()
        .map(|model| {
            let costs = expected_layer_costs(model, 2_000, params.base_seed)?;
            Ok(InitialBitsRow {
                depth: model.depth(),
                bbans: run_cma_experiment(model, SchemeId::BbAns, &first_only)?.first_initial_bits(),
                bitswap: run_cma_experiment(model, SchemeId::BitSwap, &first_only)?
                    .first_initial_bits(),
                bbans_formula: costs.bbans_initial_bits(),
                bitswap_formula: costs.bitswap_initial_bits(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub n_datapoints: usize,
    pub mean_net_bits_per_dim: f64,
    pub neg_elbo_per_dim: f64,
    pub neg_log_px_per_dim: f64,
    pub kl_gap_per_dim: f64,
    /// `|net - negative ELBO| > ORACLE_TOLERANCE`.
    pub flagged: bool,
}

/// Chained compression of `n_datapoints` model samples compared with the exact
/// per-datapoint oracles. Tabular models only.
pub fn oracle_check(
    model: &ChainModel,
    scheme: SchemeId,
    n_datapoints: usize,
    seed_words: usize,
    seed: u64,
) -> Result<OracleReport> {
    if !model.is_tabular() {
        return Err(Error::NotTabular);
    }
    if n_datapoints == 0 {
        return Err(Error::InvalidConfig("need at least one datapoint".into()));
    }
    let (data_seed, buffer_seed) = trial_seeds(seed, 0);
    let dataset = sample_dataset(model, n_datapoints, data_seed);
    let (_, trace) = chain_compress(model, scheme, &dataset, seed_words, buffer_seed)?;
    let dims = (n_datapoints * model.data_dim()) as f64;
    let net: i64 = trace.datapoints.iter().map(|d| d.net_bits()).sum();
    let mut neg_elbo = 0.0;
    let mut neg_log_px = 0.0;
    for x in &dataset {
        neg_elbo += elbo_bits(model, x)?.bits;
        neg_log_px -= exact_log_marginal(model, x)?;
    }
    let mean_net_bits_per_dim = net as f64 / dims;
    let neg_elbo_per_dim = neg_elbo / dims;
    Ok(OracleReport {
        n_datapoints,
        mean_net_bits_per_dim,
        neg_elbo_per_dim,
        neg_log_px_per_dim: neg_log_px / dims,
        kl_gap_per_dim: (neg_elbo - neg_log_px) / dims,
        flagged: (mean_net_bits_per_dim - neg_elbo_per_dim).abs() > ORACLE_TOLERANCE,
    })
}
