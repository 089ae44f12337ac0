//! Training loop for the supervised baseline, LADA and semi-supervised LADA.

mod loss;
mod optim;

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    consistency_loss, entity_count, kl_loss, lada_loss, mixed_labels, one_hot_targets, pair_targets, sharpen,
    supervised_loss, CountSpace, Example, ParaphraseGroup,
};
pub use optim::{Adam, AdamConfig};

use crate::autodiff::{Tape, Tensor};
use crate::corpus::{
    add_special_and_pad, split_labeled, subtokenize, Dataset, LabelSet, RawSentence, RuleSplitter, Sentence,
    Splitter, SubtokenStrategy, SubtokenizedSentence, Vocab,
};
use crate::encoder::{classify, forward_lower, init_params, EncoderConfig, EncoderDims, EncoderInput, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{decode_predictions, extract_spans, EvalReport};
use crate::knn::{build_index, KnnIndex};
use crate::sampler::{make_batch_plans, MixPolicy, Partner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SupervisedBaseline,
    Lada,
    SemiLada,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SupervisedBaseline => "supervised-baseline",
            Mode::Lada => "lada",
            Mode::SemiLada => "semi-lada",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised-baseline" | "baseline" => Ok(Mode::SupervisedBaseline),
            "lada" => Ok(Mode::Lada),
            "semi-lada" => Ok(Mode::SemiLada),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of the labeled training sentences actually used.
    pub labeled_fraction: f64,
    /// Weight of the consistency loss.
    pub gamma: f64,
    /// Sharpening temperature.
    pub temperature: f64,
    /// Paraphrases used per unlabeled sentence.
    pub paraphrases: usize,
    pub subtoken_strategy: SubtokenStrategy,
    pub count_space: CountSpace,
    /// Drop the loss at special and pad positions.
    pub mask_special_loss: bool,
    /// Evaluate on the dev set every this many epochs (and after the last).
    pub eval_every: usize,
    /// Rebuild the neighbor index from the current encoder every this many
    /// epochs; 0 keeps the index built at initialization.
    pub knn_refresh_epochs: usize,
    pub optimizer: AdamConfig,
    pub encoder: EncoderConfig,
    pub policy: MixPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 30,
            batch_size: 8,
            labeled_fraction: 1.0,
            gamma: 1.0,
            temperature: 0.5,
            paraphrases: 2,
            subtoken_strategy: SubtokenStrategy::Real,
            count_space: CountSpace::EntityTags,
            mask_special_loss: false,
            eval_every: 1,
            knn_refresh_epochs: 0,
            optimizer: AdamConfig::default(),
            encoder: EncoderConfig::default(),
            policy: MixPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad("labeled_fraction must lie in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.paraphrases == 0 {
            return bad("paraphrases must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        self.optimizer.validate()?;
        self.policy.validate(self.encoder.layers)
    }
}

/// Per-epoch means of the training losses plus dev metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_u: Option<f64>,
    pub l_semi: f64,
    pub dev_loss: Option<f64>,
    pub dev_f1: Option<f64>,
}

/// Turns sentences into encoder examples.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub label_set: LabelSet,
    pub vocab: Vocab,
    pub strategy: SubtokenStrategy,
    pub splitter: RuleSplitter,
    pub max_len: usize,
    pub mask_special: bool,
}

impl Featurizer {
    /// Vocabulary over every piece of the given token streams.
    pub fn build_vocab<'a>(splitter: &RuleSplitter, tokens: impl IntoIterator<Item = &'a String>) -> Vocab {
        let pieces: Vec<String> = tokens.into_iter().flat_map(|t| splitter.split(t)).collect();
        Vocab::build(pieces.iter().map(String::as_str))
    }

    pub fn subtokenized(&self, s: &Sentence) -> Result<SubtokenizedSentence> {
        let sub = subtokenize(s, self.strategy, &self.splitter, &self.label_set);
        add_special_and_pad(&sub, self.max_len)
    }

    pub fn example(&self, s: &Sentence) -> Result<Example> {
        let sub = self.subtokenized(s)?;
        Ok(self.example_from(&sub))
    }

    pub fn raw_example(&self, s: &RawSentence) -> Result<Example> {
        let mut s = s.as_sentence();
        s.labels.fill(crate::corpus::OUTSIDE);
        self.example(&s)
    }

    pub fn example_from(&self, sub: &SubtokenizedSentence) -> Example {
        let mut labels = sub.labels.clone();
        if self.mask_special {
            for (l, &sp) in labels.iter_mut().zip(&sub.is_special) {
                if sp {
                    *l = crate::corpus::IGNORE;
                }
            }
        }
        Example {
            input: EncoderInput::new(sub, &self.vocab),
            targets: one_hot_targets(&labels, self.label_set.num_tags()),
            real_mask: sub.real_mask(),
        }
    }
}

/// Dev or test metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean per-sentence KL against gold.
    pub loss: f64,
    pub report: EvalReport,
}

impl Evaluation {
    pub fn f1(&self) -> f64 {
        self.report.all.f1()
    }
}

/// Scores `params` on gold-tagged sentences.
pub fn evaluate(params: &EncoderParams, feat: &Featurizer, sentences: &[Sentence]) -> Result<Evaluation> {
    if sentences.is_empty() {
        return Err(Error::Data("no sentences to evaluate".into()));
    }
    let mut loss = 0.0;
    let (mut pred, mut gold) = (Vec::new(), Vec::new());
    for (chunk_no, chunk) in sentences.chunks(32).enumerate() {
        let subs = chunk.iter().map(|s| feat.subtokenized(s)).collect::<Result<Vec<_>>>()?;
        let examples: Vec<Example> = subs.iter().map(|s| feat.example_from(s)).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let inputs: Vec<EncoderInput> = examples.iter().map(|e| e.input.clone()).collect();
        let h = forward_lower(&mut tape, &bound, &inputs, params.dims.config.layers)?;
        let preds = classify(&mut tape, &bound, &h)?;
        for (i, ((s, sub), ex)) in chunk.iter().zip(&subs).zip(&examples).enumerate() {
            let id = chunk_no * 32 + i;
            let kl = kl_loss(&mut tape, preds.logits[i], &ex.targets)?;
            loss += tape.scalar(kl)?;
            let tags = decode_predictions(tape.value(preds.probs[i])?, sub, &feat.label_set)?;
            pred.extend(extract_spans(id, &tags, &feat.label_set));
            gold.extend(extract_spans(id, &s.labels, &feat.label_set));
        }
    }
    let loss = loss / sentences.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("evaluation loss is {loss}")));
    }
    Ok(Evaluation {
        loss,
        report: EvalReport::new(&pred, &gold, &feat.label_set),
    })
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Parameters at the best dev F1 (the final ones without a dev set).
    pub best_params: EncoderParams,
    pub best_epoch: usize,
    pub reports: Vec<LossReport>,
    /// Scores of `best_params` on the test split, if there is one.
    pub test: Option<Evaluation>,
    pub featurizer: Featurizer,
    /// Labeled sentences actually used for training.
    pub labeled: Vec<Sentence>,
    pub index: Option<KnnIndex>,
}

fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SEED_INIT: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_SHUFFLE: u64 = 3;
const SEED_MIX: u64 = 4;
const SEED_UNLABELED: u64 = 5;

fn rng_for(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

struct UnlabeledGroup {
    anchor: Example,
    paraphrases: Vec<Example>,
}

/// Cycles through a shuffled order, reshuffling after each pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Cycler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..k.min(self.order.len()))
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Labeled subset and featurizer for a dataset under `config`.
pub fn prepare(data: &Dataset, config: &TrainConfig) -> Result<(Vec<Sentence>, Featurizer)> {
    if data.train.is_empty() {
        return Err(Error::Data("no labeled training sentences".into()));
    }
    let labeled = if config.labeled_fraction < 1.0 {
        split_labeled(&data.train, config.labeled_fraction, derive_seed(config.seed, SEED_SPLIT))?.0
    } else {
        data.train.clone()
    };
    let splitter = RuleSplitter::default();
    let vocab = Featurizer::build_vocab(
        &splitter,
        labeled
            .iter()
            .flat_map(|s| &s.tokens)
            .chain(data.unlabeled.iter().flat_map(|s| &s.tokens))
            .chain(data.paraphrases.values().flatten().flat_map(|s| &s.tokens)),
    );
    let feat = Featurizer {
        label_set: data.label_set.clone(),
        vocab,
        strategy: config.subtoken_strategy,
        splitter,
        max_len: config.encoder.max_len,
        mask_special: config.mask_special_loss,
    };
    Ok((labeled, feat))
}

pub fn train(data: &Dataset, config: &TrainConfig, mode: Mode) -> Result<TrainOutcome> {
    train_with(data, config, mode, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    data: &Dataset,
    config: &TrainConfig,
    mode: Mode,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let (labeled, feat) = prepare(data, config)?;
    let subs = labeled.iter().map(|s| feat.subtokenized(s)).collect::<Result<Vec<_>>>()?;
    let examples: Vec<Example> = subs.iter().map(|s| feat.example_from(s)).collect();

    let groups: Vec<UnlabeledGroup> = if mode == Mode::SemiLada {
        let mut groups = Vec::new();
        for (id, paras) in &data.paraphrases {
            if paras.is_empty() {
                continue;
            }
            let anchor = feat.raw_example(&data.unlabeled[*id])?;
            let paraphrases = paras
                .iter()
                .take(config.paraphrases)
                .map(|p| feat.raw_example(p))
                .collect::<Result<Vec<_>>>()?;
            groups.push(UnlabeledGroup { anchor, paraphrases });
        }
        if groups.is_empty() {
            return Err(Error::Config("semi-lada needs unlabeled sentences with paraphrases".into()));
        }
        groups
    } else {
        Vec::new()
    };

    let dims = EncoderDims {
        config: config.encoder,
        vocab: feat.vocab.len(),
        num_tags: feat.label_set.num_tags(),
    };
    let mut params = init_params(dims, derive_seed(config.seed, SEED_INIT))?;
    let uses_index = mode != Mode::SupervisedBaseline && config.policy.needs_index();
    if uses_index && labeled.len() <= config.policy.k {
        return Err(Error::Config(format!(
            "Inter mixing with k = {} needs more than {} labeled sentences",
            config.policy.k,
            labeled.len()
        )));
    }
    let mut index = if uses_index {
        Some(build_index(&params, &feat.vocab, &subs, config.policy.k)?)
    } else {
        None
    };

    let mut adam = Adam::new(config.optimizer, &params.store);
    let mut shuffle_rng = rng_for(config.seed, SEED_SHUFFLE);
    let mut mix_rng = rng_for(config.seed, SEED_MIX);
    let mut unl_rng = rng_for(config.seed, SEED_UNLABELED);
    let mut unl_cycle = Cycler::new(groups.len());

    let mut reports = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut order: Vec<usize> = (0..labeled.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_l, mut sum_u, mut sum_total, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for ids in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let anchors: Vec<&Example> = ids.iter().map(|&i| &examples[i]).collect();
            let l = if mode == Mode::SupervisedBaseline {
                supervised_loss(&mut tape, &bound, &anchors)?
            } else {
                let plans = make_batch_plans(ids, &labeled, &config.policy, index.as_ref(), &mut mix_rng)?;
                let permuted = plans
                    .iter()
                    .map(|p| match &p.partner {
                        Partner::Permutation(s) => feat.example(s).map(Some),
                        Partner::Sentence(_) => Ok(None),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let partners: Vec<&Example> = plans
                    .iter()
                    .zip(&permuted)
                    .map(|(p, perm)| match (&p.partner, perm) {
                        (_, Some(e)) => e,
                        (Partner::Sentence(j), None) => &examples[*j],
                        (Partner::Permutation(_), None) => unreachable!("permutations are featurized"),
                    })
                    .collect();
                let lambdas: Vec<f64> = plans.iter().map(|p| p.lambda).collect();
                lada_loss(&mut tape, &bound, &anchors, &partners, &lambdas, plans[0].layer)?
            };
            let (total, l_u) = if mode == Mode::SemiLada {
                let picked = unl_cycle.take(config.batch_size, &mut unl_rng);
                let batch: Vec<ParaphraseGroup> = picked
                    .iter()
                    .map(|&g| ParaphraseGroup {
                        anchor: &groups[g].anchor,
                        paraphrases: &groups[g].paraphrases,
                    })
                    .collect();
                let lu = consistency_loss(
                    &mut tape,
                    &bound,
                    &bound,
                    &batch,
                    config.temperature,
                    config.count_space,
                )?;
                let weighted = tape.scale(lu, config.gamma)?;
                (tape.add(l, weighted)?, Some(lu))
            } else {
                (l, None)
            };
            let total_value = tape.scalar(total)?;
            let l_value = tape.scalar(l)?;
            let u_value = l_u.map(|v| tape.scalar(v)).transpose()?;
            if !total_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {total_value} at epoch {epoch}, step {} (L = {l_value}, L_u = {u_value:?})",
                    steps + 1
                )));
            }
            let grads = tape.backward(total)?;
            let grads: Vec<Tensor> = bound
                .slots
                .iter()
                .map(|&v| grads.get(v).cloned().ok_or_else(|| Error::Tape("missing parameter gradient".into())))
                .collect::<Result<_>>()?;
            adam.step(&mut params.store, &grads)?;
            sum_l += l_value;
            sum_u += u_value.unwrap_or(0.0);
            sum_total += total_value;
            steps += 1;
        }
        let n = steps as f64;
        let mut report = LossReport {
            epoch,
            l_sup: sum_l / n,
            l_u: (mode == Mode::SemiLada).then_some(sum_u / n),
            l_semi: sum_total / n,
            dev_loss: None,
            dev_f1: None,
        };
        if !data.dev.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let dev = evaluate(&params, &feat, &data.dev)?;
            report.dev_loss = Some(dev.loss);
            report.dev_f1 = Some(dev.f1());
            if best.as_ref().is_none_or(|b| dev.f1() > b.0) {
                best = Some((dev.f1(), epoch, params.clone()));
            }
        }
        if uses_index && config.knn_refresh_epochs > 0 && epoch % config.knn_refresh_epochs == 0 {
            index = Some(build_index(&params, &feat.vocab, &subs, config.policy.k)?);
        }
        on_epoch(&report);
        reports.push(report);
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, params.clone()),
    };
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&best_params, &feat, &data.test)?)
    };
    Ok(TrainOutcome {
        params,
        best_params,
        best_epoch,
        reports,
        test,
        featurizer: feat,
        labeled,
        index,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.8}")).unwrap_or_default()
}

/// `epoch,split,loss,L,L_u,f1` rows: one train and (when evaluated) one dev
/// row per epoch, then a test row for the best-dev parameters.
pub fn metrics_csv(outcome: &TrainOutcome, header: &str) -> String {
    let mut out = String::from(header);
    out.push_str("epoch,split,loss,L,L_u,f1\n");
    for r in &outcome.reports {
        let _ = writeln!(
            out,
            "{},train,{:.8},{:.8},{},",
            r.epoch,
            r.l_semi,
            r.l_sup,
            opt(r.l_u)
        );
        if let (Some(loss), Some(f1)) = (r.dev_loss, r.dev_f1) {
            let _ = writeln!(out, "{},dev,{loss:.8},{loss:.8},,{f1:.8}", r.epoch);
        }
    }
    if let Some(t) = &outcome.test {
        let _ = writeln!(
            out,
            "{},test,{:.8},{:.8},,{:.8}",
            outcome.best_epoch,
            t.loss,
            t.loss,
            t.f1()
        );
    }
    out
}
