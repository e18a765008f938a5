//! Coding schedules for general latent topologies.
//!
//! Variable 0 is always the data `x`. A schedule lists the sender's ops; the
//! receiver runs [`reverse_schedule`] of it, decoding under the generative model and
//! encoding under the inference model.

mod tabular_graph;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coding::{chain_ops, OpKind, SchemeId};
use crate::error::{Error, Result};
use crate::model::{ChainModel, Conditional};
use crate::rans::{CoderState, FrequencyTable};

pub use tabular_graph::{tree_fixture, TabularGraphModel, GRAPH_FAMILY};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// `gen_parents[v]`: conditioning variables of `p(v | .)`. Empty for priors.
    pub gen_parents: Vec<Vec<usize>>,
    /// `inf_parents[v]`: conditioning variables of `q(v | .)`. Empty for `x`.
    pub inf_parents: Vec<Vec<usize>>,
}

impl Topology {
    /// `x <- z_1 <- ... <- z_L` with `q(z_i | z_{i-1})`.
    pub fn chain(depth: usize) -> Self {
        Self {
            gen_parents: (0..=depth)
                .map(|v| if v < depth { vec![v + 1] } else { Vec::new() })
                .collect(),
            inf_parents: (0..=depth)
                .map(|v| if v == 0 { Vec::new() } else { vec![v - 1] })
                .collect(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.gen_parents.len()
    }

    /// Variables without generative parents.
    pub fn priors(&self) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&v| self.gen_parents[v].is_empty())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let bad = |msg: String| Err(Error::InvalidTopology(msg));
        if n < 2 {
            return bad("need x and at least one latent".into());
        }
        if self.inf_parents.len() != n {
            return bad("generative and inference parent lists differ in length".into());
        }
        for v in 0..n {
            for &p in self.gen_parents[v].iter().chain(&self.inf_parents[v]) {
                if p >= n || p == v {
                    return bad(format!("variable {v} has invalid parent {p}"));
                }
            }
        }
        if self.gen_parents.iter().any(|ps| ps.contains(&0)) {
            return bad("x must be a sink of the generative graph".into());
        }
        if !self.inf_parents[0].is_empty() {
            return bad("x cannot have inference parents".into());
        }
        if let Some(v) = (1..n).find(|&v| self.inf_parents[v].is_empty()) {
            return bad(format!("latent {v} has no inference parent"));
        }
        if self.gen_parents[0].is_empty() {
            return bad("x needs a generative parent".into());
        }
        if !is_acyclic(&self.gen_parents) {
            return bad("generative graph has a cycle".into());
        }
        // Reachability from x along inference edges.
        let mut reached = vec![false; n];
        reached[0] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for v in 1..n {
                if !reached[v] && self.inf_parents[v].iter().any(|&p| reached[p]) {
                    reached[v] = true;
                    changed = true;
                }
            }
        }
        if let Some(v) = reached.iter().position(|r| !r) {
            return bad(format!("latent {v} is not reachable from x by inference edges"));
        }
        Ok(())
    }

    fn gen_children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vars()).filter(move |&c| self.gen_parents[c].contains(&v))
    }

    fn inf_children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vars()).filter(move |&c| self.inf_parents[c].contains(&v))
    }
}

fn is_acyclic(parents: &[Vec<usize>]) -> bool {
    let n = parents.len();
    let mut done = vec![false; n];
    for _ in 0..n {
        let mut progressed = false;
        for v in 0..n {
            if !done[v] && parents[v].iter().all(|&p| done[p]) {
                done[v] = true;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    done.iter().all(|&d| d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dist {
    Generative,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleOp {
    pub kind: OpKind,
    pub var: usize,
    pub dist: Dist,
}

impl ScheduleOp {
    pub fn decode(var: usize) -> Self {
        Self {
            kind: OpKind::Decode,
            var,
            dist: Dist::Inference,
        }
    }

    pub fn encode(var: usize) -> Self {
        Self {
            kind: OpKind::Encode,
            var,
            dist: Dist::Generative,
        }
    }
}

impl fmt::Display for ScheduleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            OpKind::Decode => 'D',
            OpKind::Encode => 'E',
        };
        let d = match self.dist {
            Dist::Generative => 'p',
            Dist::Inference => 'q',
        };
        write!(f, "{k}{}/{d}", self.var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub ops: Vec<ScheduleOp>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Largest number of latents decoded but not yet encoded at any point.
    pub fn max_outstanding(&self) -> usize {
        let mut outstanding = 0usize;
        let mut worst = 0;
        for op in &self.ops {
            match op.kind {
                OpKind::Decode => outstanding += 1,
                OpKind::Encode if op.var != 0 => outstanding = outstanding.saturating_sub(1),
                OpKind::Encode => {}
            }
            worst = worst.max(outstanding);
        }
        worst
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

/// The fixed op order of `scheme` on a depth-`depth` chain.
pub fn chain_schedule(depth: usize, scheme: SchemeId) -> Schedule {
    let ops = chain_ops(scheme, depth)
        .into_iter()
        .map(|(kind, cond)| match (kind, cond) {
            (OpKind::Decode, Conditional::Inference(i)) => ScheduleOp::decode(i),
            (OpKind::Encode, Conditional::Generative(i)) => ScheduleOp::encode(i),
            (OpKind::Encode, Conditional::Prior) => ScheduleOp::encode(depth),
            _ => unreachable!("chain schedules decode under q and encode under p"),
        })
        .collect();
    Schedule { ops }
}

/// Greedy sender schedule: every legal encode is emitted as soon as possible (lowest
/// id first, priors held back to the end), otherwise the legal decode that unlocks
/// the most encodes is taken (lowest id on ties).
pub fn compile_schedule(topology: &Topology) -> Result<Schedule> {
    topology.validate()?;
    let n = topology.n_vars();
    let mut state = SenderState::new(n);
    let mut ops = Vec::with_capacity(2 * n - 1);
    let is_prior = |v: usize| topology.gen_parents[v].is_empty();
    while ops.len() < 2 * n - 1 {
        if let Some(v) = (0..n).find(|&v| !is_prior(v) && state.can_encode(topology, v)) {
            state.encoded[v] = true;
            ops.push(ScheduleOp::encode(v));
            continue;
        }
        let decodable: Vec<usize> = (1..n).filter(|&v| state.can_decode(topology, v)).collect();
        if let Some(&best) = decodable.iter().max_by_key(|&&v| {
            let mut next = state.clone();
            next.known[v] = true;
            next.decoded[v] = true;
            let unlocked = (0..n)
                .filter(|&u| !is_prior(u) && next.can_encode(topology, u))
                .count();
            // max_by_key keeps the last maximum, so rank lower ids higher.
            (unlocked, std::cmp::Reverse(v))
        }) {
            state.known[best] = true;
            state.decoded[best] = true;
            ops.push(ScheduleOp::decode(best));
            continue;
        }
        if let Some(v) = (0..n).find(|&v| is_prior(v) && state.can_encode(topology, v)) {
            state.encoded[v] = true;
            ops.push(ScheduleOp::encode(v));
            continue;
        }
        return Err(Error::NoValidSchedule);
    }
    Ok(Schedule { ops })
}

#[derive(Clone)]
struct SenderState {
    known: Vec<bool>,
    decoded: Vec<bool>,
    encoded: Vec<bool>,
}

impl SenderState {
    fn new(n: usize) -> Self {
        let mut known = vec![false; n];
        known[0] = true;
        Self {
            known,
            decoded: vec![false; n],
            encoded: vec![false; n],
        }
    }

    fn can_decode(&self, t: &Topology, v: usize) -> bool {
        v != 0 && !self.known[v] && t.inf_parents[v].iter().all(|&p| self.known[p])
    }

    fn encode_blocker(&self, t: &Topology, v: usize) -> Option<String> {
        if !self.known[v] {
            return Some(format!("variable {v} is not known yet"));
        }
        if self.encoded[v] {
            return Some(format!("variable {v} is encoded twice"));
        }
        if let Some(p) = t.gen_parents[v].iter().find(|&&p| !self.known[p]) {
            return Some(format!("generative parent {p} of {v} is not known"));
        }
        if let Some(c) = t.gen_children(v).find(|&c| !self.encoded[c]) {
            return Some(format!(
                "generative child {c} of {v} is not encoded, so the receiver could not decode it"
            ));
        }
        if let Some(c) = t.inf_children(v).find(|&c| !self.decoded[c]) {
            return Some(format!(
                "{c} conditions on {v} under q but is not decoded, so the receiver could not re-encode it"
            ));
        }
        None
    }

    fn can_encode(&self, t: &Topology, v: usize) -> bool {
        self.encode_blocker(t, v).is_none()
    }
}

/// Receiver schedule: reversed order with decodes and encodes swapped. Each op keeps
/// its distribution, so the receiver decodes under p and encodes under q.
pub fn reverse_schedule(schedule: &Schedule) -> Schedule {
    let ops = schedule
        .ops
        .iter()
        .rev()
        .map(|op| ScheduleOp {
            kind: match op.kind {
                OpKind::Decode => OpKind::Encode,
                OpKind::Encode => OpKind::Decode,
            },
            var: op.var,
            dist: op.dist,
        })
        .collect();
    Schedule { ops }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleReport {
    /// `(op index, reason)` of the first failure, if any.
    pub first_violation: Option<(usize, String)>,
}

impl ScheduleReport {
    pub fn is_valid(&self) -> bool {
        self.first_violation.is_none()
    }

    fn fail(index: usize, reason: impl Into<String>) -> Self {
        Self {
            first_violation: Some((index, reason.into())),
        }
    }
}

impl fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.first_violation {
            None => f.write_str("valid"),
            Some((i, reason)) => write!(f, "op {i}: {reason}"),
        }
    }
}

/// Checks a sender schedule against `topology`, then checks its reverse under the
/// receiver's rules.
pub fn validate_schedule(topology: &Topology, schedule: &Schedule) -> ScheduleReport {
    if let Err(e) = topology.validate() {
        return ScheduleReport::fail(0, e.to_string());
    }
    let n = topology.n_vars();
    let mut state = SenderState::new(n);
    for (i, op) in schedule.ops.iter().enumerate() {
        if op.var >= n {
            return ScheduleReport::fail(i, format!("unknown variable {}", op.var));
        }
        match (op.kind, op.dist) {
            (OpKind::Decode, Dist::Inference) => {
                if op.var == 0 {
                    return ScheduleReport::fail(i, "x is never decoded by the sender");
                }
                if state.decoded[op.var] {
                    return ScheduleReport::fail(i, format!("latent {} decoded twice", op.var));
                }
                if let Some(p) = topology.inf_parents[op.var].iter().find(|&&p| !state.known[p]) {
                    return ScheduleReport::fail(
                        i,
                        format!("inference parent {p} of {} is not known", op.var),
                    );
                }
                state.known[op.var] = true;
                state.decoded[op.var] = true;
            }
            (OpKind::Encode, Dist::Generative) => {
                if let Some(reason) = state.encode_blocker(topology, op.var) {
                    return ScheduleReport::fail(i, reason);
                }
                state.encoded[op.var] = true;
            }
            _ => {
                return ScheduleReport::fail(
                    i,
                    "the sender decodes under q and encodes under p",
                )
            }
        }
    }
    if let Some(v) = (1..n).find(|&v| !state.decoded[v]) {
        return ScheduleReport::fail(schedule.len(), format!("latent {v} is never decoded"));
    }
    if let Some(v) = (0..n).find(|&v| !state.encoded[v]) {
        return ScheduleReport::fail(schedule.len(), format!("variable {v} is never encoded"));
    }
    validate_receiver(topology, &reverse_schedule(schedule))
}

fn validate_receiver(topology: &Topology, receiver: &Schedule) -> ScheduleReport {
    let n = topology.n_vars();
    let mut known = vec![false; n];
    for (i, op) in receiver.ops.iter().enumerate() {
        let fail = |reason: String| ScheduleReport::fail(i, format!("receiver: {reason}"));
        match (op.kind, op.dist) {
            (OpKind::Decode, Dist::Generative) => {
                if let Some(p) = topology.gen_parents[op.var].iter().find(|&&p| !known[p]) {
                    return fail(format!("generative parent {p} of {} unknown", op.var));
                }
                known[op.var] = true;
            }
            (OpKind::Encode, Dist::Inference) => {
                if !known[op.var] {
                    return fail(format!("{} encoded before it is decoded", op.var));
                }
                if let Some(p) = topology.inf_parents[op.var].iter().find(|&&p| !known[p]) {
                    return fail(format!("inference parent {p} of {} unknown", op.var));
                }
            }
            _ => return fail("the receiver decodes under p and encodes under q".into()),
        }
    }
    ScheduleReport {
        first_violation: None,
    }
}

/// A model whose conditionals can be looked up by variable.
pub trait GraphModel {
    fn topology(&self) -> Topology;
    fn var_dim(&self, var: usize) -> usize;
    /// Coding tables of `var` under `dist`, given the values of its parents under
    /// `dist` in the topology's order.
    fn tables(&self, var: usize, dist: Dist, parents: &[&[usize]]) -> Result<Vec<Arc<FrequencyTable>>>;
}

impl GraphModel for ChainModel {
    fn topology(&self) -> Topology {
        Topology::chain(self.depth())
    }

    fn var_dim(&self, var: usize) -> usize {
        self.layer_dim(var)
    }

    fn tables(&self, var: usize, dist: Dist, parents: &[&[usize]]) -> Result<Vec<Arc<FrequencyTable>>> {
        let cond = match dist {
            Dist::Generative if var == self.depth() => Conditional::Prior,
            Dist::Generative => Conditional::Generative(var),
            Dist::Inference => Conditional::Inference(var),
        };
        self.conditional_tables(cond, parents.first().copied().unwrap_or(&[]))
    }
}

/// Values of every variable after an execution, plus the stream's low-water mark.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub values: Vec<Option<Vec<usize>>>,
    pub min_bits_during: u64,
}

/// Runs `schedule` on `coder`. `values` holds what is already known: `x` for a
/// sender, nothing for a receiver.
pub fn execute_schedule<M: GraphModel + ?Sized>(
    model: &M,
    schedule: &Schedule,
    coder: &mut CoderState,
    mut values: Vec<Option<Vec<usize>>>,
) -> Result<Execution> {
    let topology = model.topology();
    if values.len() != topology.n_vars() {
        return Err(Error::InvalidSchedule(format!(
            "{} values for {} variables",
            values.len(),
            topology.n_vars()
        )));
    }
    let mut min_bits = coder.total_bits();
    for (i, op) in schedule.ops.iter().enumerate() {
        let parent_ids = match op.dist {
            Dist::Generative => &topology.gen_parents[op.var],
            Dist::Inference => &topology.inf_parents[op.var],
        };
        let parents: Vec<&[usize]> = parent_ids
            .iter()
            .map(|&p| {
                values[p].as_deref().ok_or_else(|| {
                    Error::InvalidSchedule(format!("op {i}: conditioning variable {p} unknown"))
                })
            })
            .collect::<Result<_>>()?;
        let tables = model.tables(op.var, op.dist, &parents)?;
        match op.kind {
            OpKind::Decode => {
                let mut v = vec![0; tables.len()];
                for j in (0..tables.len()).rev() {
                    v[j] = coder.decode(&tables[j])?;
                    min_bits = min_bits.min(coder.total_bits());
                }
                values[op.var] = Some(v);
            }
            OpKind::Encode => {
                let v = values[op.var].as_ref().ok_or_else(|| {
                    Error::InvalidSchedule(format!("op {i}: variable {} unknown", op.var))
                })?;
                for (table, &s) in tables.iter().zip(v) {
                    coder.encode(table, s)?;
                    min_bits = min_bits.min(coder.total_bits());
                }
            }
        }
    }
    Ok(Execution {
        values,
        min_bits_during: min_bits,
    })
}

/// Sender side of a schedule for datapoint `x`.
pub fn encode_with_schedule<M: GraphModel + ?Sized>(
    model: &M,
    schedule: &Schedule,
    coder: &mut CoderState,
    x: &[usize],
) -> Result<Execution> {
    let mut values = vec![None; model.topology().n_vars()];
    values[0] = Some(x.to_vec());
    execute_schedule(model, schedule, coder, values)
}

/// Receiver side: runs the reverse of the sender schedule and returns `x`.
pub fn decode_with_schedule<M: GraphModel + ?Sized>(
    model: &M,
    sender: &Schedule,
    coder: &mut CoderState,
) -> Result<Vec<usize>> {
    let n = model.topology().n_vars();
    let exec = execute_schedule(model, &reverse_schedule(sender), coder, vec![None; n])?;
    exec.values
        .into_iter()
        .next()
        .flatten()
        .ok_or_else(|| Error::InvalidSchedule("schedule never decodes x".into()))
}
