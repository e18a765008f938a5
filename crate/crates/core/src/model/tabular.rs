//! Explicit conditional probability tables over small alphabets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rans::{quantize_pmf, FrequencyTable};

pub const MAX_ALPHABET: usize = 16;
pub const MAX_DEPTH: usize = 8;
pub const MAX_DIM: usize = 8;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// One output dimension's conditional: a row per configuration of its parents.
///
/// `parents` index into the conditioning vector supplied by the caller (for a chain,
/// the parent layer). Rows are ordered mixed-radix with the first parent most
/// significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularConditional {
    pub parents: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    #[serde(skip)]
    tables: Vec<Arc<FrequencyTable>>,
}

impl TabularConditional {
    pub fn new(parents: Vec<usize>, rows: Vec<Vec<f64>>) -> Self {
        Self {
            parents,
            rows,
            tables: Vec::new(),
        }
    }

    /// Checks shapes and row sums, then quantizes every row at `precision_bits`.
    ///
    /// `parent_alphabets[k]` is the alphabet of conditioning entry `k`.
    pub(crate) fn build(
        &mut self,
        parent_alphabets: &[usize],
        alphabet: usize,
        precision_bits: u32,
    ) -> Result<()> {
        let mut n_rows = 1usize;
        for &p in &self.parents {
            let a = *parent_alphabets.get(p).ok_or_else(|| {
                Error::InvalidModel(format!(
                    "parent index {p} outside conditioning vector of length {}",
                    parent_alphabets.len()
                ))
            })?;
            n_rows = n_rows
                .checked_mul(a)
                .filter(|&n| n <= 1 << 20)
                .ok_or_else(|| Error::InvalidModel("conditional table too large".into()))?;
        }
        if self.rows.len() != n_rows {
            return Err(Error::InvalidModel(format!(
                "expected {n_rows} rows, found {}",
                self.rows.len()
            )));
        }
        for row in &self.rows {
            if row.len() != alphabet {
                return Err(Error::InvalidModel(format!(
                    "row of length {} for alphabet {alphabet}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidModel("negative or non-finite probability".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!("row sums to {sum}")));
            }
        }
        self.tables = self
            .rows
            .iter()
            .map(|row| quantize_pmf(row, precision_bits).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn row_index(&self, cond: &[usize], cond_alphabets: &[usize]) -> usize {
        self.parents
            .iter()
            .fold(0, |acc, &p| acc * cond_alphabets[p] + cond[p])
    }

    pub fn probs(&self, cond: &[usize], cond_alphabets: &[usize]) -> &[f64] {
        &self.rows[self.row_index(cond, cond_alphabets)]
    }

    pub fn table(&self, cond: &[usize], cond_alphabets: &[usize]) -> Arc<FrequencyTable> {
        Arc::clone(&self.tables[self.row_index(cond, cond_alphabets)])
    }
}

/// Tabular payload of a chain model. Layer 0 is `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularChain {
    /// Alphabet of every layer, `x` first.
    pub alphabets: Vec<usize>,
    /// `p(z_L)`, one unconditioned entry per dimension of the top layer.
    pub prior: Vec<TabularConditional>,
    /// `generative[i]` is `p(z_i | z_{i+1})` for `i in 0..L` (`z_0 = x`).
    pub generative: Vec<Vec<TabularConditional>>,
    /// `inference[i - 1]` is `q(z_i | z_{i-1})` for `i in 1..=L`.
    pub inference: Vec<Vec<TabularConditional>>,
}

impl TabularChain {
    pub(crate) fn build(&mut self, layer_dims: &[usize], precision_bits: u32) -> Result<()> {
        let depth = layer_dims.len() - 1;
        if depth > MAX_DEPTH || layer_dims.iter().any(|&d| d > MAX_DIM) {
            return Err(Error::InvalidModel(format!(
                "tabular models are limited to depth {MAX_DEPTH} and {MAX_DIM} dims per layer"
            )));
        }
        if self.alphabets.len() != depth + 1 {
            return Err(Error::InvalidModel(format!(
                "{} alphabets for {} layers",
                self.alphabets.len(),
                depth + 1
            )));
        }
        if let Some(a) = self.alphabets.iter().find(|&&a| !(2..=MAX_ALPHABET).contains(&a)) {
            return Err(Error::InvalidModel(format!(
                "tabular alphabet {a} outside 2..={MAX_ALPHABET}"
            )));
        }
        if self.generative.len() != depth || self.inference.len() != depth {
            return Err(Error::InvalidModel(
                "need one generative and one inference block per latent layer".into(),
            ));
        }
        let expand = |layer: usize| vec![self.alphabets[layer]; layer_dims[layer]];

        check_block_len(&self.prior, layer_dims[depth], "prior")?;
        for c in &mut self.prior {
            c.build(&[], self.alphabets[depth], precision_bits)?;
        }
        for (layer, block) in self.generative.iter_mut().enumerate() {
            let parents = expand(layer + 1);
            check_block_len(block, layer_dims[layer], "generative")?;
            for c in block.iter_mut() {
                c.build(&parents, self.alphabets[layer], precision_bits)?;
            }
        }
        for (i, block) in self.inference.iter_mut().enumerate() {
            let (layer, parents) = (i + 1, expand(i));
            check_block_len(block, layer_dims[layer], "inference")?;
            for c in block.iter_mut() {
                c.build(&parents, self.alphabets[layer], precision_bits)?;
            }
        }
        Ok(())
    }
}

fn check_block_len(block: &[TabularConditional], dim: usize, what: &str) -> Result<()> {
    if block.len() != dim {
        return Err(Error::InvalidModel(format!(
            "{what} block has {} entries for a layer of {dim} dims",
            block.len()
        )));
    }
    Ok(())
}
