//! The model files shipped under `fixtures/` and the settings that generate them.

use std::path::PathBuf;

use crate::error::Result;
use crate::model::{gen_model, ChainModel, GenFamily, GenSpec};
use crate::topology::{tree_fixture, TabularGraphModel};

pub const TABULAR_DEPTHS: [usize; 4] = [1, 2, 4, 8];
pub const AFFINE_DEPTHS: [usize; 4] = [1, 2, 4, 8];

const TABULAR_SEED: u64 = 2019;
const AFFINE_SEED: u64 = 7;
const TREE_SEED: u64 = 9;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Matched family: one seed for every depth, so all depths share the same
/// per-dimension kernels and differ only in the number of layers.
pub fn tabular_spec(depth: usize) -> GenSpec {
    GenSpec {
        family: GenFamily::tabular(16),
        depth,
        data_dim: 2,
        latent_dims: vec![2; depth],
        precision_bits: 12,
        seed: TABULAR_SEED,
    }
}

/// Depth 4 with inference tables blended a little toward uniform.
pub fn mismatched_spec() -> GenSpec {
    let mut spec = tabular_spec(4);
    spec.family = GenFamily::Tabular {
        alphabet: 16,
        mixing: 0.75,
        skew: 2,
        mismatch: 0.05,
    };
    spec
}

pub fn affine_spec(depth: usize) -> GenSpec {
    GenSpec {
        family: GenFamily::AffineLogistic { n_bins: 256 },
        depth,
        data_dim: 4,
        latent_dims: vec![2; depth],
        precision_bits: 16,
        seed: AFFINE_SEED,
    }
}

pub fn tabular_name(depth: usize) -> String {
    format!("tabular_l{depth}.json")
}

pub fn affine_name(depth: usize) -> String {
    format!("affine_l{depth}.json")
}

pub const MISMATCHED_NAME: &str = "tabular_mismatch_l4.json";
pub const TREE_NAME: &str = "tree.json";

pub fn tree() -> Result<TabularGraphModel> {
    tree_fixture(4, 2, 12, TREE_SEED)
}

/// Every shipped chain model with its file name.
pub fn chain_fixtures() -> Result<Vec<(String, ChainModel)>> {
    let mut out = Vec::new();
    for d in TABULAR_DEPTHS {
        out.push((tabular_name(d), gen_model(&tabular_spec(d))?));
    }
    out.push((MISMATCHED_NAME.to_string(), gen_model(&mismatched_spec())?));
    for d in AFFINE_DEPTHS {
        out.push((affine_name(d), gen_model(&affine_spec(d))?));
    }
    Ok(out)
}

/// Writes every fixture into `dir`.
pub fn write_all(dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, model) in chain_fixtures()? {
        crate::model::save_model(&model, dir.join(name))?;
    }
    tree()?.save(dir.join(TREE_NAME))
}
