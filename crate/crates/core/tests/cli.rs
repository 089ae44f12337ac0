use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lada(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lada")).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_spec() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth.toml")
}

/// A small, fast run on the bundled synthetic spec.
fn write_config(dir: &Path, mode: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let body = format!(
        r#"mode = "{mode}"
output_dir = "out"

[data]
synthetic = "{}"

[train]
epochs = 2
batch_size = 4
labeled_fraction = 0.02
{extra}

[train.encoder]
d_model = 8
heads = 2
d_ff = 8
layers = 2
max_len = 24

[train.policy]
intra_layers = [2]
inter_layers = [1, 2]
"#,
        synth_spec().display()
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn hash_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn gen_data_writes_every_split_with_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = lada(&["gen-data", "--spec", synth_spec().to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("paraphrase count audit: passed"));
    for name in ["train.conll", "dev.conll", "test.conll", "unlabeled.txt", "paraphrases.txt"] {
        assert!(hash_line(&out.join(name)).starts_with("#meta config-hash "), "{name}");
    }
    let first = std::fs::read_to_string(out.join("train.conll")).unwrap();
    let again = dir.path().join("again");
    lada(&["gen-data", "--spec", synth_spec().to_str().unwrap(), "--seed", "3", "--out", again.to_str().unwrap()]);
    assert_eq!(first, std::fs::read_to_string(again.join("train.conll")).unwrap());

    // The generated files load back as a file-based run.
    let cfg = dir.path().join("files.toml");
    std::fs::write(
        &cfg,
        "mode = \"lada\"\n[data]\ntrain = \"data/train.conll\"\ndev = \"data/dev.conll\"\ntest = \"data/test.conll\"\nentity_types = [\"PER\", \"LOC\", \"ORG\"]\n[train]\nepochs = 1\nlabeled_fraction = 0.02\n[train.encoder]\nd_model = 8\nheads = 2\nd_ff = 8\nlayers = 2\nmax_len = 24\n[train.policy]\nintra_layers = [2]\ninter_layers = [1, 2]\n",
    )
    .unwrap();
    let o = lada(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "semi-lada", "");
    let o = lada(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = text(&o);
    let reported: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("test f1 "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    let out = dir.path().join("out");
    let header = hash_line(&out.join("metrics.csv"));
    assert!(header.starts_with("#meta config-hash "));
    for name in ["config.toml", "test_eval.csv"] {
        assert_eq!(hash_line(&out.join(name)), header, "{name}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1), Some("epoch,split,loss,L,L_u,f1"));
    assert!(metrics.lines().any(|l| l.contains(",test,")));

    let o = lada(&["eval", cfg.to_str().unwrap(), "--checkpoint", out.join("best.ckpt").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scored: f64 = text(&o)
        .lines()
        .find_map(|l| l.strip_prefix("f1 "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((scored - reported).abs() < 1e-4, "{scored} vs {reported}");

    // Same config and seed, same bytes.
    let first = std::fs::read(out.join("metrics.csv")).unwrap();
    lada(&["train", cfg.to_str().unwrap()]);
    assert_eq!(first, std::fs::read(out.join("metrics.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lada", "epochs = 1");
    let cfg_text = std::fs::read_to_string(&cfg).unwrap().replace("epochs = 2\n", "");
    std::fs::write(&cfg, cfg_text).unwrap();
    let o = lada(&["sweep", cfg.to_str().unwrap(), "--param", "mu", "--values", "0,0.7", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("#meta config-hash "));
    assert_eq!(lines[1], "value,seed,f1");
    let rows: Vec<(String, String)> = lines[2..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 3);
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let want: Vec<(String, String)> = [("0", "0"), ("0", "1"), ("0.7", "0"), ("0.7", "1")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(rows, want);
}

#[test]
fn augment_preview_lists_sorted_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lada", "");
    let o = lada(&["augment-preview", cfg.to_str().unwrap(), "--id", "1", "--n", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = text(&o);
    let lines: Vec<&str> = out.lines().collect();
    let start = lines.iter().position(|l| l.ends_with("nearest neighbors:")).unwrap();
    let dists: Vec<f64> = lines[start + 1..start + 4]
        .iter()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(dists.windows(2).all(|w| w[0] <= w[1]), "{dists:?}");
    let plans = lines.iter().filter(|l| l.contains(" lambda ")).count();
    assert_eq!(plans, 4);
}

#[test]
fn print_config_is_a_valid_config() {
    let o = lada(&["print-config"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.toml");
    std::fs::write(&path, text(&o)).unwrap();
    let cfg = lada::cli::RunConfig::load(&path).unwrap();
    assert_eq!(cfg.train, lada::train::TrainConfig::default());
}

#[test]
fn exit_codes() {
    assert_eq!(lada(&["no-such-verb"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = 0\n[data]\nsynthetic = \"x.toml\"\n").unwrap();
    assert_eq!(lada(&["train", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.toml");
    assert_eq!(lada(&["train", missing.to_str().unwrap()]).status.code(), Some(2));
    let conll = dir.path().join("broken.conll");
    std::fs::write(&conll, "Alice B-PER\nsmiled\n").unwrap();
    let cfg = dir.path().join("files.toml");
    std::fs::write(&cfg, format!("[data]\ntrain = \"{}\"\nentity_types = [\"PER\"]\n", conll.display())).unwrap();
    let o = lada(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.conll"));
}
