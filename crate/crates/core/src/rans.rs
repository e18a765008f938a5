//! Range asymmetric numeral systems (rANS) with a stack-structured word stream.
//!
//! The coder keeps a 64-bit state `s` in `[2^32, 2^64)` and spills whole 32-bit
//! words onto a LIFO stack when the state would overflow. Decoding pops words
//! back, so symbols come out in the reverse of the order they went in. This is
//! the property bits-back coding relies on: decoding from a stack that holds
//! arbitrary bits is a way of sampling, and every bit taken that way can later
//! be pushed back.
//!
//! For a symbol `x` with quantized frequency `F[x]` and cumulative `B[x]` at
//! precision `M = 2^r`:
//!
//! ```text
//! encode:  s' = M * floor(s / F[x]) + B[x] + (s mod F[x])
//! decode:  R = s' mod M,  x = the symbol with B[x] <= R < B[x] + F[x],
//!          s = F[x] * floor(s' / M) + R - B[x]
//! ```

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Lower bound of the normalized state interval `[2^32, 2^64)`.
pub const STATE_LOWER: u64 = 1 << 32;

/// Largest supported precision.
pub const MAX_PRECISION_BITS: u32 = 24;

/// Tolerance on the sum of a probability vector handed to [`quantize_pmf`].
const PMF_SUM_TOLERANCE: f64 = 1e-6;

/// A quantized probability mass function over `0..alphabet_size`.
///
/// Frequencies are integers summing to exactly `M = 2^precision_bits`, and every
/// symbol has frequency at least one so that it stays codable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    precision_bits: u32,
    freqs: Vec<u32>,
    cumuls: Vec<u32>,
}

impl FrequencyTable {
    /// Builds a table from integer frequencies that already sum to `2^precision_bits`.
    pub fn from_frequencies(freqs: Vec<u32>, precision_bits: u32) -> Result<Self> {
        check_precision(precision_bits)?;
        let total = 1u64 << precision_bits;
        if freqs.len() < 2 {
            return Err(Error::InvalidPmf(format!(
                "need at least 2 symbols, got {}",
                freqs.len()
            )));
        }
        if freqs.len() as u64 > total {
            return Err(Error::AlphabetTooLarge {
                alphabet: freqs.len(),
                precision_bits,
            });
        }
        if let Some(pos) = freqs.iter().position(|&f| f == 0) {
            return Err(Error::InvalidPmf(format!("symbol {pos} has zero frequency")));
        }
        let sum: u64 = freqs.iter().map(|&f| u64::from(f)).sum();
        if sum != total {
            return Err(Error::InvalidPmf(format!(
                "frequencies sum to {sum}, expected {total}"
            )));
        }
        let mut cumuls = Vec::with_capacity(freqs.len());
        let mut acc = 0u32;
        for &f in &freqs {
            cumuls.push(acc);
            acc += f;
        }
        Ok(Self {
            precision_bits,
            freqs,
            cumuls,
        })
    }

    /// Uniform table over `alphabet_size` symbols. The alphabet must be a power of two
    /// no larger than `2^precision_bits`.
    pub fn uniform(alphabet_size: usize, precision_bits: u32) -> Result<Self> {
        check_precision(precision_bits)?;
        let total = 1u64 << precision_bits;
        if alphabet_size < 2 || !alphabet_size.is_power_of_two() || alphabet_size as u64 > total
        {
            return Err(Error::InvalidPmf(format!(
                "uniform table needs a power-of-two alphabet in 2..={total}, got {alphabet_size}"
            )));
        }
        let f = (total / alphabet_size as u64) as u32;
        Self::from_frequencies(vec![f; alphabet_size], precision_bits)
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    /// `M = 2^precision_bits`.
    pub fn total(&self) -> u32 {
        1 << self.precision_bits
    }

    pub fn alphabet_size(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumuls(&self) -> &[u32] {
        &self.cumuls
    }

    pub fn freq(&self, sym: usize) -> u32 {
        self.freqs[sym]
    }

    pub fn cumul(&self, sym: usize) -> u32 {
        self.cumuls[sym]
    }

    /// `F[sym] / M`.
    pub fn probability(&self, sym: usize) -> f64 {
        f64::from(self.freqs[sym]) / f64::from(self.total())
    }

    /// Ideal codelength of `sym` in bits, `log2(M / F[sym])`.
    pub fn cost_bits(&self, sym: usize) -> f64 {
        f64::from(self.precision_bits) - f64::from(self.freqs[sym]).log2()
    }

    /// Shannon entropy of the quantized pmf in bits.
    pub fn entropy_bits(&self) -> f64 {
        (0..self.alphabet_size())
            .map(|s| self.probability(s) * self.cost_bits(s))
            .sum()
    }

    /// The symbol whose interval `[B[x], B[x] + F[x])` contains `slot`.
    pub fn symbol_for_slot(&self, slot: u32) -> usize {
        debug_assert!(slot < self.total());
        self.cumuls.partition_point(|&c| c <= slot) - 1
    }

    /// The bare state map `C(sym, s)`. Returns `None` if the result overflows 64 bits.
    pub fn encode_step(&self, s: u64, sym: usize) -> Option<u64> {
        let f = u64::from(self.freqs[sym]);
        (s / f)
            .checked_mul(u64::from(self.total()))?
            .checked_add(u64::from(self.cumuls[sym]) + s % f)
    }

    /// The bare state map `D(s')`, returning the decoded symbol and the previous state.
    pub fn decode_step(&self, s: u64) -> (usize, u64) {
        let slot = (s & (u64::from(self.total()) - 1)) as u32;
        let sym = self.symbol_for_slot(slot);
        let prev = u64::from(self.freqs[sym]) * (s >> self.precision_bits) + u64::from(slot)
            - u64::from(self.cumuls[sym]);
        (sym, prev)
    }
}

fn check_precision(precision_bits: u32) -> Result<()> {
    if (1..=MAX_PRECISION_BITS).contains(&precision_bits) {
        Ok(())
    } else {
        Err(Error::InvalidPrecision(precision_bits))
    }
}

/// Quantizes a probability vector to integer frequencies summing to `2^precision_bits`.
///
/// Largest-remainder rounding, ties going to the lower symbol index. Any symbol that
/// rounds to zero is raised to one, taking the unit from whichever entry is currently
/// largest.
pub fn quantize_pmf(probs: &[f64], precision_bits: u32) -> Result<FrequencyTable> {
    check_precision(precision_bits)?;
    let total = 1u64 << precision_bits;
    let n = probs.len();
    if n < 2 {
        return Err(Error::InvalidPmf(format!("need at least 2 symbols, got {n}")));
    }
    if n as u64 > total {
        return Err(Error::AlphabetTooLarge {
            alphabet: n,
            precision_bits,
        });
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidPmf(format!("entry {p} is not a probability")));
    }
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidPmf("all-zero probability vector".into()));
    }
    if (sum - 1.0).abs() > PMF_SUM_TOLERANCE {
        return Err(Error::InvalidPmf(format!("probabilities sum to {sum}")));
    }

    let scale = total as f64 / sum;
    let mut freqs = Vec::with_capacity(n);
    let mut remainders = Vec::with_capacity(n);
    let mut assigned = 0u64;
    for (i, &p) in probs.iter().enumerate() {
        let ideal = p * scale;
        let floor = ideal.floor().min(total as f64) as u64;
        assigned += floor;
        freqs.push(floor);
        remainders.push((ideal - floor as f64, i));
    }

    if assigned < total {
        let leftover = (total - assigned) as usize;
        remainders.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().cycle().take(leftover) {
            freqs[i] += 1;
        }
    } else if assigned > total {
        // Only reachable through rounding in `scale`; shave from the largest entries.
        let mut excess = assigned - total;
        while excess > 0 {
            let i = argmax_lowest(&freqs);
            freqs[i] -= 1;
            excess -= 1;
        }
    }

    let zeros: Vec<usize> = (0..n).filter(|&i| freqs[i] == 0).collect();
    if !zeros.is_empty() {
        let mut heap: std::collections::BinaryHeap<(u64, std::cmp::Reverse<usize>)> = freqs
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 1)
            .map(|(i, &f)| (f, std::cmp::Reverse(i)))
            .collect();
        for i in zeros {
            let (f, std::cmp::Reverse(j)) = heap.pop().expect("alphabet fits in M");
            freqs[j] = f - 1;
            freqs[i] = 1;
            if f - 1 > 1 {
                heap.push((f - 1, std::cmp::Reverse(j)));
            }
        }
    }

    FrequencyTable::from_frequencies(freqs.into_iter().map(|f| f as u32).collect(), precision_bits)
}

fn argmax_lowest(v: &[u64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The ANS state together with its stack of spilled words.
///
/// Equality compares only the stream content (state and words), not the length
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct CoderState {
    state: u64,
    words: Vec<u32>,
    initial_len_bits: u64,
    min_len_bits: u64,
}

impl PartialEq for CoderState {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state && self.words == other.words
    }
}

impl Eq for CoderState {}

impl Default for CoderState {
    fn default() -> Self {
        Self::new()
    }
}

impl CoderState {
    /// A fresh coder: state `2^32`, empty stack.
    pub fn new() -> Self {
        let mut coder = Self {
            state: STATE_LOWER,
            words: Vec::new(),
            initial_len_bits: 0,
            min_len_bits: 0,
        };
        coder.initial_len_bits = coder.total_bits();
        coder.min_len_bits = coder.initial_len_bits;
        coder
    }

    /// A fresh coder whose stack holds `n_words` pseudo-random words derived from `seed`.
    pub fn seeded(n_words: usize, seed: u64) -> Self {
        let mut coder = Self::new();
        coder
            .seed_buffer(n_words, seed)
            .expect("a new coder is always fresh");
        coder
    }

    /// Rebuilds a coder from a stored state and stack (bottom word first).
    pub fn from_parts(state: u64, words: Vec<u32>) -> Result<Self> {
        if state < STATE_LOWER {
            return Err(Error::CorruptStream(format!(
                "state {state:#x} below the normalized interval"
            )));
        }
        let mut coder = Self {
            state,
            words,
            initial_len_bits: 0,
            min_len_bits: 0,
        };
        coder.initial_len_bits = coder.total_bits();
        coder.min_len_bits = coder.initial_len_bits;
        Ok(coder)
    }

    pub fn into_parts(self) -> (u64, Vec<u32>) {
        (self.state, self.words)
    }

    /// Fills the stack of a fresh coder with `n_words` words from a ChaCha8 stream seeded
    /// with `seed`, then sets the low 32 bits of the state from the next word. The result
    /// is reproducible from `(n_words, seed)` alone.
    pub fn seed_buffer(&mut self, n_words: usize, seed: u64) -> Result<()> {
        if !self.is_fresh() {
            return Err(Error::CorruptStream(
                "the initial buffer can only be seeded on a fresh coder".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.words = (0..n_words).map(|_| rng.next_u32()).collect();
        // Random low bits keep the first decode from always landing on slot 0; the
        // state length stays at 33 bits.
        self.state = STATE_LOWER | u64::from(rng.next_u32());
        self.initial_len_bits = self.total_bits();
        self.min_len_bits = self.initial_len_bits;
        Ok(())
    }

    fn is_fresh(&self) -> bool {
        self.state == STATE_LOWER && self.words.is_empty()
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Spilled words, bottom of the stack first.
    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// `32 * |stack| + bit length of the state`.
    pub fn total_bits(&self) -> u64 {
        32 * self.words.len() as u64 + u64::from(64 - self.state.leading_zeros())
    }

    /// Length in bits right after construction or seeding.
    pub fn initial_len_bits(&self) -> u64 {
        self.initial_len_bits
    }

    /// Smallest length observed since construction or the last [`reset_min_len`](Self::reset_min_len).
    pub fn min_len_bits(&self) -> u64 {
        self.min_len_bits
    }

    pub fn reset_min_len(&mut self) {
        self.min_len_bits = self.total_bits();
    }

    pub fn encode(&mut self, table: &FrequencyTable, sym: usize) -> Result<()> {
        if sym >= table.alphabet_size() {
            return Err(Error::SymbolOutOfRange {
                symbol: sym,
                alphabet: table.alphabet_size(),
            });
        }
        // Encoding maps [F << (32 - r), F << (64 - r)) onto [2^32, 2^64).
        let upper = u64::from(table.freq(sym)) << (64 - table.precision_bits());
        if self.state >= upper {
            self.words.push(self.state as u32);
            self.state >>= 32;
        }
        self.state = table
            .encode_step(self.state, sym)
            .expect("renormalized state cannot overflow");
        self.track_min();
        Ok(())
    }

    /// Decodes one symbol. On [`Error::StreamExhausted`] the coder is left unchanged.
    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let (sym, mut prev) = table.decode_step(self.state);
        if prev < STATE_LOWER {
            let word = self.words.pop().ok_or(Error::StreamExhausted)?;
            prev = (prev << 32) | u64::from(word);
        }
        self.state = prev;
        self.track_min();
        Ok(sym)
    }

    fn track_min(&mut self) {
        self.min_len_bits = self.min_len_bits.min(self.total_bits());
    }
}
