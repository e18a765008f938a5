use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn bitswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitswap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 60 datapoints of the D = 2 tabular fixtures, drawn from a fixed byte pattern.
fn tabular_input(dir: &Path) -> PathBuf {
    let path = dir.join("in.bin");
    let bytes: Vec<u8> = (0..120u32).map(|i| ((i * 7 + i / 3) % 16) as u8).collect();
    std::fs::write(&path, bytes).unwrap();
    path
}

fn compress(model: &Path, scheme: &str, input: &Path, output: &Path) -> Output {
    bitswap(&[
        "compress",
        "--model",
        model.to_str().unwrap(),
        "--scheme",
        scheme,
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--seed-words",
        "32",
        "--seed",
        "5",
    ])
}

fn decompress(model: &Path, input: &Path, output: &Path) -> Output {
    bitswap(&[
        "decompress",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ])
}

#[test]
fn round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    for scheme in ["bbans", "bitswap"] {
        let model = fixture("tabular_l4.json");
        let packed = dir.path().join(format!("{scheme}.bsw"));
        let o = compress(&model, scheme, &input, &packed);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("net bits/dim"));
        let restored = dir.path().join(format!("{scheme}.out"));
        let o = decompress(&model, &packed, &restored);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(std::fs::read(&restored).unwrap(), std::fs::read(&input).unwrap());
    }
}

#[test]
fn affine_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.bin");
    let bytes: Vec<u8> = (0..80u32).map(|i| (100 + (i * 13) % 60) as u8).collect();
    std::fs::write(&input, &bytes).unwrap();
    let model = fixture("affine_l2.json");
    let packed = dir.path().join("a.bsw");
    let o = compress(&model, "bitswap", &input, &packed);
    assert!(o.status.success(), "{}", stderr(&o));
    let restored = dir.path().join("a.out");
    assert!(decompress(&model, &packed, &restored).status.success());
    assert_eq!(std::fs::read(&restored).unwrap(), bytes);
}

#[test]
fn schemes_agree_at_depth_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    let model = fixture("tabular_l1.json");
    let a = dir.path().join("a.bsw");
    let b = dir.path().join("b.bsw");
    assert!(compress(&model, "bbans", &input, &a).status.success());
    assert!(compress(&model, "bitswap", &input, &b).status.success());
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    // Only the scheme byte differs.
    assert_eq!(a.len(), b.len());
    let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    assert_eq!(differing, vec![5]);
}

#[test]
fn reported_net_bits_match_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    let trace = dir.path().join("trace.csv");
    let o = bitswap(&[
        "compress",
        "--model",
        fixture("tabular_l2.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("c.bsw").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reported: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("net bits/dim: "))
        .unwrap()
        .parse()
        .unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let before = header.iter().position(|&h| h == "bits_before").unwrap();
    let after = header.iter().position(|&h| h == "bits_after").unwrap();
    let net: i64 = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[after].parse::<i64>().unwrap() - f[before].parse::<i64>().unwrap()
        })
        .sum();
    assert!((net as f64 / 120.0 - reported).abs() < 1e-4);
}

#[test]
fn wrong_model_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    let packed = dir.path().join("c.bsw");
    assert!(compress(&fixture("tabular_l4.json"), "bitswap", &input, &packed).status.success());
    let restored = dir.path().join("never.bin");
    let o = decompress(&fixture("tabular_mismatch_l4.json"), &packed, &restored);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("hash mismatch"), "{}", stderr(&o));
    assert!(!restored.exists());
}

#[test]
fn damaged_containers_fail() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    let model = fixture("tabular_l2.json");
    let packed = dir.path().join("c.bsw");
    assert!(compress(&model, "bitswap", &input, &packed).status.success());
    let bytes = std::fs::read(&packed).unwrap();
    let restored = dir.path().join("out.bin");

    std::fs::write(&packed, &bytes[..bytes.len() - 3]).unwrap();
    let o = decompress(&model, &packed, &restored);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("length mismatch"), "{}", stderr(&o));

    let mut wrong_scheme = bytes.clone();
    wrong_scheme[5] = 0;
    std::fs::write(&packed, &wrong_scheme).unwrap();
    assert!(!decompress(&model, &packed, &restored).status.success());

    // The bottom of the stack still holds untouched seed words, so a flip there
    // always breaks the restored-buffer check.
    let mut flipped = bytes.clone();
    flipped[63] ^= 0x10;
    std::fs::write(&packed, &flipped).unwrap();
    let o = decompress(&model, &packed, &restored);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("initial buffer"), "{}", stderr(&o));
    assert!(!restored.exists());

    // There is no payload checksum: a flip near the top either fails or decodes to
    // different data, never to the original.
    let mut flipped = bytes.clone();
    let last = flipped.len() - 9;
    flipped[last] ^= 0x10;
    std::fs::write(&packed, &flipped).unwrap();
    if decompress(&model, &packed, &restored).status.success() {
        assert_ne!(std::fs::read(&restored).unwrap(), std::fs::read(&input).unwrap());
    }
}

#[test]
fn malformed_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("odd.bin");
    std::fs::write(&input, [1u8, 2, 3]).unwrap();
    let o = compress(&fixture("tabular_l2.json"), "bitswap", &input, &dir.path().join("c.bsw"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("multiple"));
    std::fs::write(&input, [1u8, 200]).unwrap();
    let o = compress(&fixture("tabular_l2.json"), "bitswap", &input, &dir.path().join("c.bsw"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("alphabet"));
}

#[test]
fn too_few_seed_words_reports_the_datapoint() {
    let dir = tempfile::tempdir().unwrap();
    let input = tabular_input(dir.path());
    let o = bitswap(&[
        "compress",
        "--model",
        fixture("tabular_l8.json").to_str().unwrap(),
        "--scheme",
        "bbans",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("c.bsw").to_str().unwrap(),
        "--seed-words",
        "0",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("datapoint 0"), "{}", stderr(&o));
}

#[test]
fn gen_model_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str| {
        let path = dir.path().join(name);
        let o = bitswap(&[
            "gen-model",
            "--family",
            "affine-logistic",
            "--depth",
            "2",
            "--dims",
            "3,2,1",
            "--bins",
            "64",
            "--seed",
            "4",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(path).unwrap()
    };
    assert_eq!(gen("a.json"), gen("b.json"));
    let o = bitswap(&[
        "gen-model", "--family", "tabular", "--depth", "3", "--dims", "2,2,2", "--out",
        dir.path().join("c.json").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn inspect_lists_every_layer() {
    let o = bitswap(&["inspect", "--model", fixture("tabular_l4.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("depth: 4"));
    for layer in ["z1", "z2", "z3", "z4"] {
        assert!(text.lines().any(|l| l.trim_start().starts_with(layer)), "{text}");
    }
    let o = bitswap(&["inspect", "--model", fixture("tree.json").to_str().unwrap()]);
    assert!(stdout(&o).contains("schedule: D1/q E0/p"));
}

#[test]
fn experiment_writes_csv_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            "model = {:?}\nn_trials = 3\nn_datapoints = 20\nbase_seed = 2\noutput = \"results\"\n",
            fixture("tabular_l2.json")
        ),
    )
    .unwrap();
    let o = bitswap(&["experiment", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for scheme in ["bbans", "bitswap"] {
        let text = std::fs::read_to_string(dir.path().join(format!("results/tabular_l2_{scheme}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,timestep,bits_total,bits_net,cma_bits_per_dim,initial_bits"
        );
        assert_eq!(lines.count(), 60);
    }
    std::fs::write(&config, "model = \"m.json\"\noutput = \"o\"\nbogus = 1\n").unwrap();
    assert!(!bitswap(&["experiment", "--config", config.to_str().unwrap()]).status.success());
}
