//! The compressed file layout. All integers are big-endian.
//!
//! ```text
//! magic "BSWP" | version u8 | scheme u8 | model sha256 [32] | depth u8
//! | n_datapoints u32 | n_seed_words u32 | seed u64 | payload words u64 | words u32...
//! ```
//!
//! The payload is the coder's word stack, bottom first, followed by the 64-bit
//! state as two words, low half first.

use anyhow::{bail, ensure, Context, Result};
use bitswap_core::coding::SchemeId;
use bitswap_core::CoderState;
use sha2::{Digest, Sha256};

pub const MAGIC: [u8; 4] = *b"BSWP";
pub const CONTAINER_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 32 + 1 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u8,
    pub scheme: SchemeId,
    pub model_hash: [u8; 32],
    pub depth: u8,
    pub n_datapoints: u32,
    pub n_seed_words: u32,
    pub seed: u64,
    pub payload_words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub payload: Vec<u32>,
}

/// SHA-256 of a model's canonical JSON.
pub fn model_hash(canonical_json: &str) -> [u8; 32] {
    Sha256::digest(canonical_json.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stack words followed by the state, low half first.
pub fn payload_from_coder(coder: CoderState) -> Vec<u32> {
    let (state, mut words) = coder.into_parts();
    words.push(state as u32);
    words.push((state >> 32) as u32);
    words
}

pub fn coder_from_payload(payload: &[u32]) -> Result<CoderState> {
    let Some((words, &[low, high])) = payload.split_last_chunk::<2>() else {
        bail!("payload is too short to hold the coder state");
    };
    let state = u64::from(low) | (u64::from(high) << 32);
    CoderState::from_parts(state, words.to_vec()).context("payload holds an invalid coder state")
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(h.version);
        out.push(h.scheme.byte());
        out.extend_from_slice(&h.model_hash);
        out.push(h.depth);
        out.extend_from_slice(&h.n_datapoints.to_be_bytes());
        out.extend_from_slice(&h.n_seed_words.to_be_bytes());
        out.extend_from_slice(&h.seed.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        for w in &self.payload {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= HEADER_LEN,
            "truncated container: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        );
        let (header, body) = bytes.split_at(HEADER_LEN);
        let mut r = Reader(header);
        ensure!(r.take::<4>() == MAGIC, "not a container: bad magic bytes");
        let version = r.take::<1>()[0];
        ensure!(
            version == CONTAINER_VERSION,
            "unsupported container version {version} (expected {CONTAINER_VERSION})"
        );
        let scheme = SchemeId::from_byte(r.take::<1>()[0])?;
        let model_hash = r.take::<32>();
        let depth = r.take::<1>()[0];
        let n_datapoints = u32::from_be_bytes(r.take());
        let n_seed_words = u32::from_be_bytes(r.take());
        let seed = u64::from_be_bytes(r.take());
        let payload_words = u64::from_be_bytes(r.take());
        ensure!(
            payload_words.checked_mul(4) == Some(body.len() as u64),
            "payload length mismatch: header declares {payload_words} words, file holds {} bytes",
            body.len()
        );
        let payload = body
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().expect("chunks of four")))
            .collect();
        Ok(Self {
            header: ContainerHeader {
                version,
                scheme,
                model_hash,
                depth,
                n_datapoints,
                n_seed_words,
                seed,
                payload_words,
            },
            payload,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_first_chunk::<N>().expect("header length checked");
        self.0 = rest;
        *head
    }
}
