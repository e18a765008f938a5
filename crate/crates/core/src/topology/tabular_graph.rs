//! Tabular models over arbitrary topologies.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dist, GraphModel, Topology};
use crate::error::{Error, Result};
use crate::model::{sample_categorical, TabularConditional, FORMAT_VERSION, MAX_ALPHABET, MAX_DIM};
use crate::rans::{quantize_pmf, FrequencyTable};

pub const GRAPH_FAMILY: &str = "tabular-graph";

/// Every conditional is factorized over the dimensions of its variable; each
/// dimension's table indexes into the concatenated values of the parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularGraphModel {
    format_version: u32,
    family: String,
    precision_bits: u32,
    alphabets: Vec<usize>,
    dims: Vec<usize>,
    topology: Topology,
    /// `generative[v]`, one entry per dimension of `v`.
    generative: Vec<Vec<TabularConditional>>,
    /// `inference[v]`; empty for `x`.
    inference: Vec<Vec<TabularConditional>>,
}

impl TabularGraphModel {
    pub fn new(
        precision_bits: u32,
        alphabets: Vec<usize>,
        dims: Vec<usize>,
        topology: Topology,
        generative: Vec<Vec<TabularConditional>>,
        inference: Vec<Vec<TabularConditional>>,
    ) -> Result<Self> {
        let mut model = Self {
            format_version: FORMAT_VERSION,
            family: GRAPH_FAMILY.into(),
            precision_bits,
            alphabets,
            dims,
            topology,
            generative,
            inference,
        };
        model.build()?;
        Ok(model)
    }

    fn build(&mut self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.family != GRAPH_FAMILY {
            return Err(Error::InvalidModel(format!("unexpected family '{}'", self.family)));
        }
        self.topology.validate()?;
        let n = self.topology.n_vars();
        if self.alphabets.len() != n || self.dims.len() != n {
            return Err(Error::InvalidModel("one alphabet and one dim per variable".into()));
        }
        if self.alphabets.iter().any(|a| !(2..=MAX_ALPHABET).contains(a))
            || self.dims.iter().any(|d| !(1..=MAX_DIM).contains(d))
        {
            return Err(Error::InvalidModel("alphabet or dim outside the tabular limits".into()));
        }
        if self.alphabets.iter().any(|&a| a as u64 > 1u64 << self.precision_bits) {
            return Err(Error::InvalidPrecision(self.precision_bits));
        }
        if self.generative.len() != n || self.inference.len() != n {
            return Err(Error::InvalidModel("one conditional block per variable".into()));
        }
        for v in 0..n {
            let gen_alphabets = self.cond_alphabets(&self.topology.gen_parents[v]);
            let inf_alphabets = self.cond_alphabets(&self.topology.inf_parents[v]);
            let (alphabet, dim) = (self.alphabets[v], self.dims[v]);
            let r = self.precision_bits;
            let expected_inf = if v == 0 { 0 } else { dim };
            if self.generative[v].len() != dim || self.inference[v].len() != expected_inf {
                return Err(Error::InvalidModel(format!("variable {v} has the wrong number of tables")));
            }
            for c in &mut self.generative[v] {
                c.build(&gen_alphabets, alphabet, r)?;
            }
            for c in &mut self.inference[v] {
                c.build(&inf_alphabets, alphabet, r)?;
            }
        }
        Ok(())
    }

    fn cond_alphabets(&self, parents: &[usize]) -> Vec<usize> {
        parents
            .iter()
            .flat_map(|&p| std::iter::repeat_n(self.alphabets[p], self.dims[p]))
            .collect()
    }

    pub fn alphabet(&self, var: usize) -> usize {
        self.alphabets[var]
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    fn block(&self, var: usize, dist: Dist) -> (&[TabularConditional], &[usize]) {
        match dist {
            Dist::Generative => (&self.generative[var], &self.topology.gen_parents[var]),
            Dist::Inference => (&self.inference[var], &self.topology.inf_parents[var]),
        }
    }

    fn check_parents(&self, var: usize, parent_ids: &[usize], parents: &[&[usize]]) -> Result<Vec<usize>> {
        if parents.len() != parent_ids.len() {
            return Err(Error::InvalidData(format!(
                "variable {var} needs {} conditioning values, got {}",
                parent_ids.len(),
                parents.len()
            )));
        }
        let mut cond = Vec::new();
        for (&p, values) in parent_ids.iter().zip(parents) {
            if values.len() != self.dims[p] || values.iter().any(|&s| s >= self.alphabets[p]) {
                return Err(Error::InvalidData(format!("bad values for variable {p}")));
            }
            cond.extend_from_slice(values);
        }
        Ok(cond)
    }

    /// Model probabilities of `var` under `dist`, one row per dimension.
    pub fn probs(&self, var: usize, dist: Dist, parents: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let (block, ids) = self.block(var, dist);
        let cond = self.check_parents(var, ids, parents)?;
        let alphabets = self.cond_alphabets(ids);
        Ok(block.iter().map(|c| c.probs(&cond, &alphabets).to_vec()).collect())
    }

    /// Ancestral sample of every variable, parents before children.
    pub fn sample_ancestral(&self, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.topology.n_vars();
        let mut values: Vec<Option<Vec<usize>>> = vec![None; n];
        while values.iter().any(Option::is_none) {
            for v in 0..n {
                let ids = &self.topology.gen_parents[v];
                if values[v].is_some() || ids.iter().any(|&p| values[p].is_none()) {
                    continue;
                }
                let parents: Vec<&[usize]> = ids.iter().map(|&p| values[p].as_deref().unwrap()).collect();
                let probs = self
                    .probs(v, Dist::Generative, &parents)
                    .expect("sampled parents are admissible");
                values[v] = Some(probs.iter().map(|p| sample_categorical(p, &mut rng)).collect());
            }
        }
        values.into_iter().map(Option::unwrap).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: Self = serde_json::from_str(text)?;
        model.build()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

impl GraphModel for TabularGraphModel {
    fn topology(&self) -> Topology {
        self.topology.clone()
    }

    fn var_dim(&self, var: usize) -> usize {
        self.dims[var]
    }

    fn tables(&self, var: usize, dist: Dist, parents: &[&[usize]]) -> Result<Vec<Arc<FrequencyTable>>> {
        let (block, ids) = self.block(var, dist);
        let cond = self.check_parents(var, ids, parents)?;
        let alphabets = self.cond_alphabets(ids);
        Ok(block.iter().map(|c| c.table(&cond, &alphabets)).collect())
    }
}

/// A five-variable tree: `p(x | z1) p(z1 | z2, z3) p(z2 | z4) p(z3) p(z4)` with
/// `q(z1 | x) q(z2 | z1) q(z3 | z1) q(z4 | z2)`. Rows are random and quantized at
/// `precision_bits`, so the stored probabilities equal the coding tables.
pub fn tree_fixture(alphabet: usize, dim: usize, precision_bits: u32, seed: u64) -> Result<TabularGraphModel> {
    let topology = Topology {
        gen_parents: vec![vec![1], vec![2, 3], vec![4], vec![], vec![]],
        inf_parents: vec![vec![], vec![0], vec![1], vec![1], vec![2]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.n_vars();
    let mut random_block = |parent_ids: &[usize]| -> Result<Vec<TabularConditional>> {
        (0..dim)
            .map(|j| {
                // Each dimension depends on the same dimension of every parent.
                let parents: Vec<usize> = (0..parent_ids.len()).map(|k| k * dim + j).collect();
                let rows = (0..alphabet.pow(parents.len() as u32))
                    .map(|_| {
                        let raw: Vec<f64> = (0..alphabet).map(|_| rng.random_range(0.05..1.0)).collect();
                        let sum: f64 = raw.iter().sum();
                        let pmf: Vec<f64> = raw.iter().map(|p| p / sum).collect();
                        let t = quantize_pmf(&pmf, precision_bits)?;
                        Ok((0..alphabet).map(|s| t.probability(s)).collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(TabularConditional::new(parents, rows))
            })
            .collect()
    };
    let generative = (0..n)
        .map(|v| random_block(&topology.gen_parents[v]))
        .collect::<Result<_>>()?;
    let inference = (0..n)
        .map(|v| {
            if v == 0 {
                Ok(Vec::new())
            } else {
                random_block(&topology.inf_parents[v])
            }
        })
        .collect::<Result<_>>()?;
    TabularGraphModel::new(
        precision_bits,
        vec![alphabet; n],
        vec![dim; n],
        topology,
        generative,
        inference,
    )
}
