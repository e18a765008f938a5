//! Subcommand implementations. Each writes its report to `out` and returns an
//! error instead of exiting, so the binary decides the exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bitswap_core::coding::{chain_compress, chain_decompress, SchemeId};
use bitswap_core::experiment::{
    compare_initial_bits, oracle_check, run_cma_experiment, ExperimentConfig, ORACLE_TOLERANCE,
};
use bitswap_core::model::{gen_model as generate, load_model, save_model, GenFamily, GenSpec};
use bitswap_core::topology::{compile_schedule, GraphModel, TabularGraphModel, GRAPH_FAMILY};
use bitswap_core::{ChainModel, Conditional};

use crate::container::{
    coder_from_payload, hex, model_hash, payload_from_coder, Container, ContainerHeader,
    CONTAINER_VERSION,
};

pub struct CompressArgs {
    pub model: PathBuf,
    pub scheme: SchemeId,
    pub input: PathBuf,
    pub output: PathBuf,
    pub seed_words: usize,
    pub seed: u64,
    pub trace: Option<PathBuf>,
}

fn load_chain(path: &Path) -> Result<(ChainModel, [u8; 32])> {
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    let hash = model_hash(&model.to_json()?);
    Ok((model, hash))
}

pub fn compress(args: &CompressArgs, out: &mut impl Write) -> Result<()> {
    let (model, hash) = load_chain(&args.model)?;
    let raw = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let dim = model.data_dim();
    ensure!(
        raw.len() % dim == 0,
        "input holds {} symbols, not a multiple of the data dimension {dim}",
        raw.len()
    );
    let alphabet = model.alphabet(0);
    if let Some(pos) = raw.iter().position(|&b| usize::from(b) >= alphabet) {
        bail!("symbol {} at offset {pos} is outside the alphabet of {alphabet}", raw[pos]);
    }
    let dataset: Vec<Vec<usize>> = raw
        .chunks_exact(dim)
        .map(|c| c.iter().map(|&b| usize::from(b)).collect())
        .collect();
    let n = dataset.len();
    let (coder, trace) = chain_compress(&model, args.scheme, &dataset, args.seed_words, args.seed)?;
    let initial_len = coder.initial_len_bits();
    let low = trace.low_water_bits().map_or(initial_len, |l| l.min(initial_len));
    let net: i64 = trace.datapoints.iter().map(|d| d.net_bits()).sum();
    let container = Container {
        header: ContainerHeader {
            version: CONTAINER_VERSION,
            scheme: args.scheme,
            model_hash: hash,
            depth: u8::try_from(model.depth()).context("depth does not fit the header")?,
            n_datapoints: u32::try_from(n).context("too many datapoints for one container")?,
            n_seed_words: u32::try_from(args.seed_words).context("too many seed words")?,
            seed: args.seed,
            payload_words: 0,
        },
        payload: payload_from_coder(coder),
    };
    let bytes = container.to_bytes();
    if let Some(path) = &args.trace {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        trace.write_csv(0, file, true)?;
    }
    fs::write(&args.output, &bytes).with_context(|| format!("writing {}", args.output.display()))?;
    let dims = (n * dim).max(1) as f64;
    writeln!(out, "scheme: {}", args.scheme)?;
    writeln!(out, "datapoints: {n}")?;
    writeln!(out, "net bits/dim: {:.4}", net as f64 / dims)?;
    writeln!(out, "initial bits: {}", initial_len - low)?;
    writeln!(out, "container bytes: {}", bytes.len())?;
    Ok(())
}

pub fn decompress(model: &Path, input: &Path, output: &Path, out: &mut impl Write) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let container = Container::from_bytes(&bytes)?;
    let h = &container.header;
    let (model, hash) = load_chain(model)?;
    ensure!(
        hash == h.model_hash,
        "model hash mismatch: container was written with {}, supplied model is {}",
        hex(&h.model_hash),
        hex(&hash)
    );
    ensure!(
        usize::from(h.depth) == model.depth(),
        "container depth {} does not match the model depth {}",
        h.depth,
        model.depth()
    );
    let coder = coder_from_payload(&container.payload)?;
    let data = chain_decompress(
        &model,
        h.scheme,
        coder,
        h.n_datapoints as usize,
        h.n_seed_words as usize,
        h.seed,
    )
    .context("decoding the payload")?;
    let mut raw = Vec::with_capacity(data.len() * model.data_dim());
    for x in &data {
        for &s in x {
            raw.push(u8::try_from(s).context("decoded symbol does not fit a byte")?);
        }
    }
    fs::write(output, &raw).with_context(|| format!("writing {}", output.display()))?;
    writeln!(out, "scheme: {}", h.scheme)?;
    writeln!(out, "datapoints: {}", data.len())?;
    writeln!(out, "initial buffer restored: yes")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    Tabular,
    AffineLogistic,
}

pub struct GenModelArgs {
    pub family: FamilyArg,
    pub depth: usize,
    /// `[D, d]` or `[D, d_1, ..., d_L]`.
    pub dims: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Option<u32>,
    pub alphabet: usize,
    pub mismatch: f64,
    pub bins: usize,
}

pub fn gen_model(args: &GenModelArgs, out: &mut impl Write) -> Result<()> {
    let latent_dims = match args.dims.as_slice() {
        [_, d] => vec![*d; args.depth],
        [_, rest @ ..] if rest.len() == args.depth => rest.to_vec(),
        _ => bail!(
            "--dims takes `D,d` or `D,d1,...,dL` ({} values for depth {})",
            args.depth + 1,
            args.depth
        ),
    };
    let (family, default_precision) = match args.family {
        FamilyArg::Tabular => (
            GenFamily::Tabular {
                alphabet: args.alphabet,
                mixing: 0.75,
                skew: 2,
                mismatch: args.mismatch,
            },
            12,
        ),
        FamilyArg::AffineLogistic => (GenFamily::AffineLogistic { n_bins: args.bins }, 16),
    };
    let model = generate(&GenSpec {
        family,
        depth: args.depth,
        data_dim: args.dims[0],
        latent_dims,
        precision_bits: args.precision.unwrap_or(default_precision),
        seed: args.seed,
    })?;
    save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "wrote {} model with depth {} to {}",
        model.family_name(),
        model.depth(),
        args.out.display()
    )?;
    Ok(())
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Runs the experiment described by a TOML file. Relative paths in the file are
/// taken relative to the file's directory.
pub fn experiment(config_path: &Path, out: &mut impl Write) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", config_path.display()))?;
    config.validate()?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let model_path = resolve(base, &config.model);
    let (model, _) = load_chain(&model_path)?;
    let output = resolve(base, &config.output);
    fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
    let stem = model_path
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let params = config.run_params();
    writeln!(
        out,
        "model {} (depth {}, D = {}), {} trials x {} datapoints",
        model_path.display(),
        model.depth(),
        model.data_dim(),
        params.n_trials,
        params.n_datapoints
    )?;
    writeln!(
        out,
        "{:<8} {:>16} {:>16} {:>16} {:>16} {:>10}",
        "scheme", "initial (n=1)", "CMA (n=1)", "CMA (n=50)", "CMA (last)", "net"
    )?;
    let fmt = |(m, sd): (f64, f64)| format!("{m:.3} ± {sd:.3}");
    for &scheme in &config.schemes {
        let table = run_cma_experiment(&model, scheme, &params)?;
        let csv_path = output.join(format!("{stem}_{scheme}.csv"));
        let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
        table.write_csv(std::io::BufWriter::new(file))?;
        let n = table.n_timesteps();
        let mid = if n >= 50 { fmt(table.cma_stats(50)) } else { "-".into() };
        writeln!(
            out,
            "{:<8} {:>16} {:>16} {:>16} {:>16} {:>10.4}",
            scheme.name(),
            fmt(table.first_initial_bits()),
            fmt(table.cma_stats(1)),
            mid,
            fmt(table.cma_stats(n)),
            table.mean_net_bits_per_dim()
        )?;
        if model.is_tabular() {
            let report = oracle_check(&model, scheme, params.n_datapoints, params.seed_words, params.base_seed)?;
            writeln!(
                out,
                "         oracle: net {:.4}, negative ELBO {:.4}, -log2 p(x) {:.4}, KL gap {:.4} bits/dim{}",
                report.mean_net_bits_per_dim,
                report.neg_elbo_per_dim,
                report.neg_log_px_per_dim,
                report.kl_gap_per_dim,
                if report.flagged {
                    format!("  [differs by more than {ORACLE_TOLERANCE}]")
                } else {
                    String::new()
                }
            )?;
        }
        writeln!(out, "         wrote {}", csv_path.display())?;
    }
    if !config.compare_models.is_empty() {
        let models = config
            .compare_models
            .iter()
            .map(|p| load_chain(&resolve(base, p)).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        writeln!(out, "initial bits of the first datapoint")?;
        writeln!(
            out,
            "{:>5} {:>16} {:>10} {:>16} {:>10}",
            "depth", "BB-ANS", "formula", "Bit-Swap", "formula"
        )?;
        for row in compare_initial_bits(&models, &params)? {
            writeln!(
                out,
                "{:>5} {:>16} {:>10.2} {:>16} {:>10.2}",
                row.depth,
                fmt(row.bbans),
                row.bbans_formula,
                fmt(row.bitswap),
                row.bitswap_formula
            )?;
        }
    }
    Ok(())
}

const INSPECT_SAMPLES: u64 = 200;

pub fn inspect(path: &Path, out: &mut impl Write) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let family: serde_json::Value = serde_json::from_str(&text)?;
    if family.get("family").and_then(|f| f.as_str()) == Some(GRAPH_FAMILY) {
        return inspect_graph(&TabularGraphModel::from_json(&text)?, out);
    }
    let model = ChainModel::from_json(&text)?;
    let depth = model.depth();
    writeln!(out, "family: {}", model.family_name())?;
    writeln!(out, "depth: {depth}")?;
    writeln!(out, "precision: {} bits", model.precision_bits())?;
    if let Some(seed) = model.sampling_seed() {
        writeln!(out, "sampling seed: {seed}")?;
    }
    writeln!(out, "model hash: {}", hex(&model_hash(&model.to_json()?)))?;
    let samples: Vec<_> = (0..INSPECT_SAMPLES).map(|s| model.sample_ancestral(s)).collect();
    let mean_entropy = |cond: Conditional, parent: &dyn Fn(&bitswap_core::Sample) -> Vec<usize>| -> Result<f64> {
        let mut total = 0.0;
        for s in &samples {
            let tables = model.conditional_tables(cond, &parent(s))?;
            total += tables.iter().map(|t| t.entropy_bits()).sum::<f64>();
        }
        Ok(total / samples.len() as f64)
    };
    writeln!(out, "layers (entropies in bits, averaged over {INSPECT_SAMPLES} ancestral samples):")?;
    for layer in 0..=depth {
        let name = if layer == 0 { "x".to_string() } else { format!("z{layer}") };
        let p_cond = if layer == depth {
            Conditional::Prior
        } else {
            Conditional::Generative(layer)
        };
        let p = mean_entropy(p_cond, &|s| if layer == depth { Vec::new() } else { s.layers[layer + 1].clone() })?;
        let mut line = format!(
            "  {name:<4} dim {:>3}  alphabet {:>5}  H[p] {p:>8.3}",
            model.layer_dim(layer),
            model.alphabet(layer)
        );
        if layer > 0 {
            let q = mean_entropy(Conditional::Inference(layer), &|s| s.layers[layer - 1].clone())?;
            line.push_str(&format!("  H[q] {q:>8.3}"));
        }
        if let Some(grid) = model.grid(layer) {
            let edges = grid.interior_edges();
            line.push_str(&format!(
                "  grid {} bins, edges [{:.4}, {:.4}]",
                grid.n_bins(),
                edges[0],
                edges[edges.len() - 1]
            ));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn inspect_graph(model: &TabularGraphModel, out: &mut impl Write) -> Result<()> {
    let topology = model.topology();
    writeln!(out, "family: {GRAPH_FAMILY}")?;
    writeln!(out, "variables: {}", topology.n_vars())?;
    writeln!(out, "precision: {} bits", model.precision_bits())?;
    for v in 0..topology.n_vars() {
        writeln!(
            out,
            "  var {v}: dim {}, alphabet {}, p parents {:?}, q parents {:?}",
            model.var_dim(v),
            model.alphabet(v),
            topology.gen_parents[v],
            topology.inf_parents[v]
        )?;
    }
    let schedule = compile_schedule(&topology)?;
    writeln!(out, "schedule: {schedule}")?;
    writeln!(out, "max outstanding latents: {}", schedule.max_outstanding())?;
    Ok(())
}
