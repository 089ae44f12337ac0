//! `lada` command line: data generation, training, evaluation, sweeps and
//! augmentation previews driven by one TOML run config.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Checkpoint;
use crate::corpus::{
    audit_paraphrases, gen_synthetic, meta_header, paraphrases_to_text, parse_conll, parse_paraphrases, parse_raw,
    raw_to_text, to_conll, Dataset, LabelSet, SubtokenStrategy, SynthSpec,
};
use crate::encoder::{init_params, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::knn::build_index;
use crate::sampler::{make_mix_plan, Partner};
use crate::train::{evaluate, metrics_csv, prepare, train_with, Mode, TrainConfig};

/// Where the sentences come from: a synthetic spec or CoNLL-style files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synthetic: Option<PathBuf>,
    /// Generator seed for synthetic data.
    pub seed: u64,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
    /// Entity types of the files, in tag-id order.
    pub entity_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_mode() -> Mode {
    Mode::SemiLada
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: default_mode(),
            output_dir: Some(PathBuf::from("runs/default")),
            data: DataConfig {
                synthetic: Some(PathBuf::from("configs/synth.toml")),
                ..DataConfig::default()
            },
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut cfg.data;
        for p in [
            &mut d.synthetic,
            &mut d.train,
            &mut d.dev,
            &mut d.test,
            &mut d.unlabeled,
            &mut d.paraphrases,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.train) {
            (Some(_), Some(_)) => Err(Error::Config("set either data.synthetic or data.train, not both".into())),
            (None, None) => Err(Error::Config("no data source: set data.synthetic or data.train".into())),
            (None, Some(_)) if self.data.entity_types.is_empty() => {
                Err(Error::Config("data.entity_types is required with data files".into()))
            }
            _ => self.train.validate(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the normalized config.
    pub fn hash(&self) -> String {
        short_hash(self.to_toml().as_bytes())
    }

    pub fn header(&self) -> String {
        format!("#meta config-hash {}\n", self.hash())
    }
}

fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

/// Loads or generates the dataset named by `data`.
pub fn load_dataset(data: &DataConfig) -> Result<Dataset> {
    if let Some(spec) = &data.synthetic {
        let spec = SynthSpec::load(existing(spec)?)?;
        return gen_synthetic(&spec, data.seed);
    }
    let label_set = LabelSet::new(data.entity_types.iter().cloned())?;
    let train_path = data.train.as_deref().ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let labeled = |p: &Option<PathBuf>| -> Result<Vec<_>> {
        match p {
            Some(p) => parse_conll(&read(existing(p)?)?, &label_set).map_err(|e| with_path(p, e)),
            None => Ok(Vec::new()),
        }
    };
    let train = labeled(&Some(train_path.to_path_buf()))?;
    let dev = labeled(&data.dev)?;
    let test = labeled(&data.test)?;
    let unlabeled = match &data.unlabeled {
        Some(p) => parse_raw(&read(existing(p)?)?, None).map_err(|e| with_path(p, e))?,
        None => Vec::new(),
    };
    let paraphrases = match &data.paraphrases {
        Some(p) => parse_paraphrases(&read(existing(p)?)?, None).map_err(|e| with_path(p, e))?,
        None => Default::default(),
    };
    let ds = Dataset {
        label_set,
        train,
        dev,
        test,
        unlabeled,
        paraphrases,
    };
    ds.validate()?;
    Ok(ds)
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, detail } => Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        Error::Bio { line, tag, prev } => Error::Bio {
            line,
            tag: format!("{tag} (in {})", path.display()),
            prev,
        },
        other => other,
    }
}

#[derive(Debug, Parser)]
#[command(name = "lada", version, about = "Hidden-state mixing augmentation for sequence labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Mu,
    Pi,
    Fraction,
    Strategy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from a spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Keep gold tags in the unlabeled and paraphrase files.
        #[arg(long)]
        gold: bool,
    },
    /// Train a model and write metrics, checkpoints and a test report.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split (or another tagged file).
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the per-type CSV report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train once per value (and seed) of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show a labeled sentence, its neighbors and sampled mix plans.
    AugmentPreview {
        config: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// Embed with these parameters instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the default run config.
    PrintConfig,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    let text = match command {
        Command::GenData { spec, seed, out, gold } => cmd_gen_data(&spec, seed, &out, gold)?,
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            cmd_train(&cfg)?
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            csv,
        } => cmd_eval(&RunConfig::load(&config)?, &checkpoint, data.as_deref(), csv.as_deref())?,
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let csv = cmd_sweep(&cfg, param, &values, seeds)?;
            match out {
                Some(path) => {
                    write(&path, &csv)?;
                    format!("wrote {}\n", path.display())
                }
                None => csv,
            }
        }
        Command::AugmentPreview {
            config,
            id,
            n,
            checkpoint,
        } => cmd_augment_preview(&RunConfig::load(&config)?, id, n, checkpoint.as_deref())?,
        Command::PrintConfig => RunConfig::default().to_toml(),
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Writes `train.conll`, `dev.conll`, `test.conll`, `unlabeled.txt` and
/// `paraphrases.txt` under `out`.
pub fn cmd_gen_data(spec_path: &Path, seed: u64, out: &Path, gold: bool) -> Result<String> {
    let spec_text = read(existing(spec_path)?)?;
    let spec = SynthSpec::from_toml(&spec_text)?;
    let ds = gen_synthetic(&spec, seed)?;
    let hash = short_hash(format!("{spec_text}\nseed={seed}").as_bytes());
    let seed_text = seed.to_string();
    let header = meta_header(&[("config-hash", &hash), ("seed", &seed_text)]);
    let gold_set = gold.then_some(&ds.label_set);
    let files = [
        ("train.conll", to_conll(&ds.train, &ds.label_set)),
        ("dev.conll", to_conll(&ds.dev, &ds.label_set)),
        ("test.conll", to_conll(&ds.test, &ds.label_set)),
        ("unlabeled.txt", raw_to_text(&ds.unlabeled, gold_set)),
        ("paraphrases.txt", paraphrases_to_text(&ds.paraphrases, gold_set)),
    ];
    let mut report = String::new();
    for (name, body) in files {
        let path = out.join(name);
        write(&path, &format!("{header}{body}"))?;
        let _ = writeln!(report, "wrote {}", path.display());
    }
    let audit = audit_paraphrases(&ds)?;
    let _ = writeln!(
        report,
        "sentences: train {} dev {} test {} unlabeled {} paraphrases {}",
        ds.train.len(),
        ds.dev.len(),
        ds.test.len(),
        ds.unlabeled.len(),
        audit.paraphrases
    );
    let _ = writeln!(
        report,
        "paraphrase count audit: {} ({} violations)",
        if audit.passed() { "passed" } else { "failed" },
        audit.violations.len()
    );
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let data = load_dataset(&cfg.data)?;
    let header = cfg.header();
    let outcome = train_with(&data, &cfg.train, cfg.mode, |r| {
        let mut line = format!("epoch {:>3}  L_semi {:.5}  L {:.5}", r.epoch, r.l_semi, r.l_sup);
        if let Some(u) = r.l_u {
            let _ = write!(line, "  L_u {u:.5}");
        }
        if let (Some(l), Some(f)) = (r.dev_loss, r.dev_f1) {
            let _ = write!(line, "  dev loss {l:.5}  dev f1 {:.2}", 100.0 * f);
        }
        let _ = writeln!(std::io::stderr(), "{line}");
    })?;
    let mut report = String::new();
    if let Some(dir) = &cfg.output_dir {
        write(&dir.join("metrics.csv"), &metrics_csv(&outcome, &header))?;
        write(&dir.join("config.toml"), &format!("{header}{}", cfg.to_toml()))?;
        for (name, params) in [("best.ckpt", &outcome.best_params), ("final.ckpt", &outcome.params)] {
            let mut ckpt = params.to_checkpoint();
            ckpt.meta.insert("config-hash".into(), cfg.hash());
            ckpt.save(&dir.join(name))?;
        }
        if let Some(t) = &outcome.test {
            write(&dir.join("test_eval.csv"), &format!("{header}{}", t.report.to_csv()))?;
        }
        let _ = writeln!(report, "wrote {}", dir.display());
    }
    match &outcome.test {
        Some(t) => {
            report.push_str(&t.report.to_table());
            let _ = writeln!(
                report,
                "test f1 {:.4} (best dev epoch {}, config-hash {})",
                t.f1(),
                outcome.best_epoch,
                cfg.hash()
            );
        }
        None => report.push_str("no test split; skipped test evaluation\n"),
    }
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data_path: Option<&Path>, csv: Option<&Path>) -> Result<String> {
    let data = load_dataset(&cfg.data)?;
    let (_, feat) = prepare(&data, &cfg.train)?;
    let params = EncoderParams::from_checkpoint(&Checkpoint::load(existing(checkpoint)?)?)?;
    if params.dims.vocab != feat.vocab.len() || params.dims.num_tags != feat.label_set.num_tags() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has vocab {} and {} tags, the config's data gives {} and {}",
            params.dims.vocab,
            params.dims.num_tags,
            feat.vocab.len(),
            feat.label_set.num_tags()
        )));
    }
    let sentences = match data_path {
        Some(p) => parse_conll(&read(existing(p)?)?, &feat.label_set).map_err(|e| with_path(p, e))?,
        None => data.test.clone(),
    };
    let eval = evaluate(&params, &feat, &sentences)?;
    if let Some(path) = csv {
        write(path, &format!("{}{}", cfg.header(), eval.report.to_csv()))?;
    }
    Ok(format!("{}loss {:.6}\nf1 {:.4}\n", eval.report.to_table(), eval.loss, eval.f1()))
}

fn apply_sweep_value(cfg: &mut RunConfig, param: SweepParam, value: &str) -> Result<()> {
    let float = || -> Result<f64> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("sweep value `{value}` is not a number")))
    };
    match param {
        SweepParam::Mu => cfg.train.policy.mu = float()?,
        SweepParam::Pi => cfg.train.policy.pi = float()?,
        SweepParam::Fraction => cfg.train.labeled_fraction = float()?,
        SweepParam::Strategy => cfg.train.subtoken_strategy = value.parse::<SubtokenStrategy>()?,
    }
    cfg.validate()
}

/// CSV `value,seed,f1`, one row per value and seed (test F1 of the best
/// dev checkpoint).
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[String], seeds: u64) -> Result<String> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let data = load_dataset(&cfg.data)?;
    let mut out = cfg.header();
    out.push_str("value,seed,f1\n");
    for value in values {
        let mut run = cfg.clone();
        apply_sweep_value(&mut run, param, value)?;
        for s in 0..seeds {
            run.train.seed = cfg.train.seed + s;
            let outcome = train_with(&data, &run.train, run.mode, |_| {})?;
            let f1 = outcome
                .test
                .as_ref()
                .ok_or_else(|| Error::Data("sweeps need a test split".into()))?
                .f1();
            let _ = writeln!(out, "{value},{},{f1:.6}", run.train.seed);
            let _ = writeln!(std::io::stderr(), "{value} seed {}: f1 {:.2}", run.train.seed, 100.0 * f1);
        }
    }
    Ok(out)
}

pub fn cmd_augment_preview(cfg: &RunConfig, id: usize, n: usize, checkpoint: Option<&Path>) -> Result<String> {
    let data = load_dataset(&cfg.data)?;
    let (labeled, feat) = prepare(&data, &cfg.train)?;
    if id >= labeled.len() {
        return Err(Error::Config(format!(
            "sentence id {id} out of range (0..{})",
            labeled.len()
        )));
    }
    let params = match checkpoint {
        Some(p) => EncoderParams::from_checkpoint(&Checkpoint::load(existing(p)?)?)?,
        None => init_params(
            EncoderDims {
                config: cfg.train.encoder,
                vocab: feat.vocab.len(),
                num_tags: feat.label_set.num_tags(),
            },
            cfg.train.seed,
        )?,
    };
    let subs = labeled.iter().map(|s| feat.subtokenized(s)).collect::<Result<Vec<_>>>()?;
    let policy = &cfg.train.policy;
    let index = build_index(&params, &feat.vocab, &subs, policy.k)?;
    let show = |s: &crate::corpus::Sentence| -> String {
        s.tokens
            .iter()
            .zip(&s.labels)
            .map(|(t, &l)| format!("{t}/{}", feat.label_set.name(l)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = cfg.header();
    let _ = writeln!(out, "sentence {id}: {}", show(&labeled[id]));
    let _ = writeln!(out, "{} nearest neighbors:", policy.k);
    for (j, d) in index.query(id)?.iter().zip(index.distances(id)?) {
        let _ = writeln!(out, "  {j:>5}  {d:.6}  {}", show(&labeled[*j]));
    }
    let _ = writeln!(out, "{n} sampled mix plans ({} strategy):", policy.strategy);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    for _ in 0..n {
        let plan = make_mix_plan(id, &labeled, policy, Some(&index), &mut rng)?;
        let partner = match &plan.partner {
            Partner::Sentence(j) => format!("sentence {j}: {}", show(&labeled[*j])),
            Partner::Permutation(s) => format!("permutation: {}", show(s)),
        };
        let _ = writeln!(
            out,
            "  {:<6} lambda {:.4} layer {}  {partner}",
            plan.kind.to_string(),
            plan.lambda,
            plan.layer
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_hash_is_stable() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
        let mut other = cfg.clone();
        other.train.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn data_source_must_be_unique() {
        let both = "[data]\nsynthetic = \"a.toml\"\ntrain = \"b.conll\"\n";
        assert!(matches!(RunConfig::from_toml(both), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("mode = \"lada\"\n"), Err(Error::Config(_))));
        let files = "[data]\ntrain = \"b.conll\"\n";
        assert!(RunConfig::from_toml(files).is_err());
        let unknown = "[data]\nsynthetic = \"a.toml\"\n[train]\nbogus = 1\n";
        assert!(RunConfig::from_toml(unknown).is_err());
    }

    #[test]
    fn sweep_values_are_checked() {
        let mut cfg = RunConfig::default();
        assert!(apply_sweep_value(&mut cfg, SweepParam::Mu, "0.5").is_ok());
        assert_eq!(cfg.train.policy.mu, 0.5);
        assert!(apply_sweep_value(&mut cfg.clone(), SweepParam::Mu, "1.5").is_err());
        assert!(apply_sweep_value(&mut cfg, SweepParam::Pi, "x").is_err());
        assert!(apply_sweep_value(&mut cfg, SweepParam::Strategy, "Repeat").is_ok());
        assert_eq!(cfg.train.subtoken_strategy, SubtokenStrategy::Repeat);
        assert!(apply_sweep_value(&mut cfg, SweepParam::Fraction, "0").is_err());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["lada", "frobnicate"]), 1);
        assert_eq!(main_with_args(["lada", "train"]), 1);
    }
}
