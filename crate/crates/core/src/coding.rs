//! Bits-back coding of single datapoints and chained datasets.
//!
//! Both schemes share the same primitive: decoding a layer samples it from the
//! stream, encoding a layer appends it. Within a layer, decodes run over dimensions
//! in descending order and encodes in ascending order, so every op is undone by its
//! counterpart in the reverse schedule.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainModel, Conditional};
use crate::rans::{CoderState, FrequencyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    BbAns,
    BitSwap,
}

impl SchemeId {
    pub const ALL: [SchemeId; 2] = [SchemeId::BbAns, SchemeId::BitSwap];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::BbAns => "bbans",
            SchemeId::BitSwap => "bitswap",
        }
    }

    /// Id stored in container headers.
    pub fn byte(self) -> u8 {
        match self {
            SchemeId::BbAns => 0,
            SchemeId::BitSwap => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SchemeId::BbAns),
            1 => Ok(SchemeId::BitSwap),
            _ => Err(Error::CorruptStream(format!("unknown scheme id {b}"))),
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bbans" | "bb-ans" => Ok(SchemeId::BbAns),
            "bitswap" | "bit-swap" => Ok(SchemeId::BitSwap),
            _ => Err(Error::InvalidConfig(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Decode,
    Encode,
}

/// One layer-level op as executed by the sender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub kind: OpKind,
    pub layer: usize,
    pub cond: TraceConditional,
    /// Change of the stream length in bits.
    pub bits_delta: i64,
    /// `sum -log2(F/M)` over the layer's symbols.
    pub ideal_bits: f64,
}

/// Serializable mirror of [`Conditional`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceConditional {
    Prior,
    Generative,
    Inference,
}

impl From<Conditional> for TraceConditional {
    fn from(c: Conditional) -> Self {
        match c {
            Conditional::Prior => TraceConditional::Prior,
            Conditional::Generative(_) => TraceConditional::Generative,
            Conditional::Inference(_) => TraceConditional::Inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatapointTrace {
    pub bits_before: u64,
    pub bits_after: u64,
    /// Lowest stream length reached while coding this datapoint.
    pub min_bits_during: u64,
    pub ops: Vec<OpRecord>,
}

impl DatapointTrace {
    /// Stream growth due to this datapoint.
    pub fn net_bits(&self) -> i64 {
        self.bits_after as i64 - self.bits_before as i64
    }

    /// Bits that had to be on the stream before coding this datapoint.
    pub fn initial_bits_required(&self) -> u64 {
        self.bits_before - self.min_bits_during
    }

    /// Ideal cost of every decode, by latent layer (`[0]` is `z_1`).
    pub fn decode_costs(&self) -> Vec<f64> {
        self.layer_costs(OpKind::Decode, 1)
    }

    /// Ideal cost of every non-prior encode, by layer (`[0]` is `x`).
    pub fn encode_costs(&self) -> Vec<f64> {
        self.layer_costs(OpKind::Encode, 0)
    }

    fn layer_costs(&self, kind: OpKind, first_layer: usize) -> Vec<f64> {
        let mut costs: Vec<(usize, f64)> = self
            .ops
            .iter()
            .filter(|op| op.kind == kind && op.cond != TraceConditional::Prior)
            .map(|op| (op.layer, op.ideal_bits))
            .collect();
        costs.sort_by_key(|&(layer, _)| layer);
        debug_assert!(costs.iter().enumerate().all(|(i, &(l, _))| l == i + first_layer));
        costs.into_iter().map(|(_, c)| c).collect()
    }
}

/// Sum of the latent decode costs: the initial bits BB-ANS needs when every decode
/// precedes every encode.
pub fn bbans_initial_bits_formula(decode_costs: &[f64]) -> f64 {
    decode_costs.iter().sum()
}

/// Bit-Swap bound: `sum_i max(0, decode(z_{i+1}) - encode(z_{i-1}))` with nothing
/// encoded before the first decode.
///
/// `decode_costs[i]` is the cost of decoding `z_{i+1}` and `encode_costs[i]` the cost
/// of encoding `z_i` (`z_0 = x`).
pub fn bitswap_initial_bits_formula(decode_costs: &[f64], encode_costs: &[f64]) -> f64 {
    decode_costs
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let freed = if i == 0 { 0.0 } else { encode_costs[i - 1] };
            (d - freed).max(0.0)
        })
        .sum()
}

/// Coder wrapper that records per-layer ops and the low-water mark.
struct Recorder<'a> {
    coder: &'a mut CoderState,
    min_bits: u64,
    ops: Option<Vec<OpRecord>>,
}

impl<'a> Recorder<'a> {
    fn new(coder: &'a mut CoderState, record: bool) -> Self {
        let min_bits = coder.total_bits();
        Self {
            coder,
            min_bits,
            ops: record.then(Vec::new),
        }
    }

    fn decode(
        &mut self,
        layer: usize,
        cond: Conditional,
        tables: &[Arc<FrequencyTable>],
    ) -> Result<Vec<usize>> {
        let before = self.coder.total_bits();
        let mut values = vec![0; tables.len()];
        let mut ideal = 0.0;
        for j in (0..tables.len()).rev() {
            values[j] = self.coder.decode(&tables[j])?;
            ideal += tables[j].cost_bits(values[j]);
            self.min_bits = self.min_bits.min(self.coder.total_bits());
        }
        self.record(OpKind::Decode, layer, cond, before, ideal);
        Ok(values)
    }

    fn encode(
        &mut self,
        layer: usize,
        cond: Conditional,
        tables: &[Arc<FrequencyTable>],
        values: &[usize],
    ) -> Result<()> {
        let before = self.coder.total_bits();
        let mut ideal = 0.0;
        for (table, &v) in tables.iter().zip(values) {
            self.coder.encode(table, v)?;
            ideal += table.cost_bits(v);
            self.min_bits = self.min_bits.min(self.coder.total_bits());
        }
        self.record(OpKind::Encode, layer, cond, before, ideal);
        Ok(())
    }

    fn record(&mut self, kind: OpKind, layer: usize, cond: Conditional, before: u64, ideal: f64) {
        if let Some(ops) = &mut self.ops {
            ops.push(OpRecord {
                kind,
                layer,
                cond: cond.into(),
                bits_delta: self.coder.total_bits() as i64 - before as i64,
                ideal_bits: ideal,
            });
        }
    }
}

/// Conditional, its layer, and the layer it conditions on.
fn tables_for(
    model: &ChainModel,
    cond: Conditional,
    layers: &[Vec<usize>],
) -> Result<(usize, Vec<Arc<FrequencyTable>>)> {
    let (layer, parent) = model.layers_of(cond)?;
    let parent_values = parent.map_or(&[][..], |p| &layers[p]);
    Ok((layer, model.conditional_tables(cond, parent_values)?))
}

fn sender_decode(rec: &mut Recorder, model: &ChainModel, cond: Conditional, layers: &mut [Vec<usize>]) -> Result<()> {
    let (layer, tables) = tables_for(model, cond, layers)?;
    layers[layer] = rec.decode(layer, cond, &tables)?;
    Ok(())
}

fn sender_encode(rec: &mut Recorder, model: &ChainModel, cond: Conditional, layers: &[Vec<usize>]) -> Result<()> {
    let (layer, tables) = tables_for(model, cond, layers)?;
    rec.encode(layer, cond, &tables, &layers[layer])
}

/// Layer-level op sequence of the sender for a chain of depth `depth`.
pub fn chain_ops(scheme: SchemeId, depth: usize) -> Vec<(OpKind, Conditional)> {
    let mut ops = Vec::with_capacity(2 * depth + 1);
    match scheme {
        SchemeId::BbAns => {
            ops.extend((1..=depth).map(|i| (OpKind::Decode, Conditional::Inference(i))));
            ops.extend((0..depth).map(|i| (OpKind::Encode, Conditional::Generative(i))));
        }
        SchemeId::BitSwap => {
            ops.push((OpKind::Decode, Conditional::Inference(1)));
            ops.push((OpKind::Encode, Conditional::Generative(0)));
            for i in 1..depth {
                ops.push((OpKind::Decode, Conditional::Inference(i + 1)));
                ops.push((OpKind::Encode, Conditional::Generative(i)));
            }
        }
    }
    ops.push((OpKind::Encode, Conditional::Prior));
    ops
}

fn encode_with(
    model: &ChainModel,
    scheme: SchemeId,
    coder: &mut CoderState,
    x: &[usize],
    record: bool,
) -> Result<DatapointTrace> {
    model.check_layer_values(0, x)?;
    let bits_before = coder.total_bits();
    let mut layers = vec![Vec::new(); model.depth() + 1];
    layers[0] = x.to_vec();
    let mut rec = Recorder::new(coder, record);
    let outcome = chain_ops(scheme, model.depth())
        .into_iter()
        .try_for_each(|(kind, cond)| match kind {
            OpKind::Decode => sender_decode(&mut rec, model, cond, &mut layers),
            OpKind::Encode => sender_encode(&mut rec, model, cond, &layers),
        });
    outcome?;
    let (min_bits_during, ops) = (rec.min_bits, rec.ops.take().unwrap_or_default());
    Ok(DatapointTrace {
        bits_before,
        bits_after: coder.total_bits(),
        min_bits_during,
        ops,
    })
}

/// Pushes `x` onto `coder`. On error the coder is left part-way through the datapoint.
pub fn encode_datapoint(
    model: &ChainModel,
    scheme: SchemeId,
    coder: &mut CoderState,
    x: &[usize],
) -> Result<DatapointTrace> {
    encode_with(model, scheme, coder, x, true)
}

/// Pops the most recently encoded datapoint, returning the bits borrowed for its
/// latents to the stream.
pub fn decode_datapoint(
    model: &ChainModel,
    scheme: SchemeId,
    coder: &mut CoderState,
) -> Result<Vec<usize>> {
    let mut layers = vec![Vec::new(); model.depth() + 1];
    let mut rec = Recorder::new(coder, false);
    for (kind, cond) in chain_ops(scheme, model.depth()).into_iter().rev() {
        let (layer, tables) = tables_for(model, cond, &layers)?;
        match kind {
            // The receiver decodes what the sender encoded and vice versa.
            OpKind::Encode => layers[layer] = rec.decode(layer, cond, &tables)?,
            OpKind::Decode => rec.encode(layer, cond, &tables, &layers[layer])?,
        }
    }
    Ok(std::mem::take(&mut layers[0]))
}

pub fn bbans_encode(model: &ChainModel, coder: &mut CoderState, x: &[usize]) -> Result<DatapointTrace> {
    encode_datapoint(model, SchemeId::BbAns, coder, x)
}

pub fn bbans_decode(model: &ChainModel, coder: &mut CoderState) -> Result<Vec<usize>> {
    decode_datapoint(model, SchemeId::BbAns, coder)
}

pub fn bitswap_encode(model: &ChainModel, coder: &mut CoderState, x: &[usize]) -> Result<DatapointTrace> {
    encode_datapoint(model, SchemeId::BitSwap, coder, x)
}

pub fn bitswap_decode(model: &ChainModel, coder: &mut CoderState) -> Result<Vec<usize>> {
    decode_datapoint(model, SchemeId::BitSwap, coder)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodeTrace {
    pub datapoints: Vec<DatapointTrace>,
}

impl EncodeTrace {
    /// Lowest stream length reached over the whole run.
    pub fn low_water_bits(&self) -> Option<u64> {
        self.datapoints.iter().map(|d| d.min_bits_during).min()
    }

    /// Writes `trial,index,bits_before,bits_after,min_bits_during` rows.
    pub fn write_csv<W: Write>(&self, trial: usize, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(["trial", "index", "bits_before", "bits_after", "min_bits_during"])?;
        }
        for (i, d) in self.datapoints.iter().enumerate() {
            w.write_record(&[
                trial.to_string(),
                i.to_string(),
                d.bits_before.to_string(),
                d.bits_after.to_string(),
                d.min_bits_during.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compresses `dataset` in order onto a coder seeded with `n_seed_words` words.
pub fn chain_compress(
    model: &ChainModel,
    scheme: SchemeId,
    dataset: &[Vec<usize>],
    n_seed_words: usize,
    seed: u64,
) -> Result<(CoderState, EncodeTrace)> {
    let mut coder = CoderState::seeded(n_seed_words, seed);
    let mut trace = EncodeTrace::default();
    for (index, x) in dataset.iter().enumerate() {
        let d = encode_datapoint(model, scheme, &mut coder, x).map_err(|e| match e {
            Error::StreamExhausted => Error::StreamExhaustedAt { index },
            e => e,
        })?;
        trace.datapoints.push(d);
    }
    Ok((coder, trace))
}

/// Inverse of [`chain_compress`]: returns the datapoints in their original order and
/// checks that the seeded buffer comes back bit for bit.
pub fn chain_decompress(
    model: &ChainModel,
    scheme: SchemeId,
    mut coder: CoderState,
    n_datapoints: usize,
    n_seed_words: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(n_datapoints);
    for index in (0..n_datapoints).rev() {
        let x = decode_datapoint(model, scheme, &mut coder).map_err(|e| match e {
            Error::StreamExhausted => Error::StreamExhaustedAt { index },
            e => e,
        })?;
        out.push(x);
    }
    out.reverse();
    verify_restored(&coder, n_seed_words, seed)?;
    Ok(out)
}

/// Checks that `coder` holds exactly the seeded initial buffer.
pub fn verify_restored(coder: &CoderState, n_seed_words: usize, seed: u64) -> Result<()> {
    if *coder == CoderState::seeded(n_seed_words, seed) {
        Ok(())
    } else {
        Err(Error::CorruptStream(
            "initial buffer not restored after decoding".into(),
        ))
    }
}

/// `bits_before - min_bits_during` of a single trace.
pub fn initial_bits_required(trace: &DatapointTrace) -> u64 {
    trace.initial_bits_required()
}
