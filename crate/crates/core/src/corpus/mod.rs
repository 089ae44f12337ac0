//! Sequence-labeling data: parsing, sub-token expansion, padding, synthetic
//! generation and labeled/unlabeled splits.

mod conll;
mod labels;
mod sentence;
mod subtoken;
mod synth;
mod vocab;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use conll::{
    meta_header, paraphrases_to_text, parse_conll, parse_paraphrases, parse_raw, raw_to_text, to_conll,
};
pub use labels::{LabelSet, Tag, IGNORE, OUTSIDE, SPECIAL, SPECIAL_TAG_NAME};
pub use sentence::{
    add_special_and_pad, RawSentence, Sentence, SubtokenizedSentence, END_MARKER, PAD_MARKER, START_MARKER,
};
pub use subtoken::{subtokenize, RuleSplitter, Splitter, SubtokenStrategy};
pub use synth::{audit_paraphrases, entity_counts, gen_synthetic, ParaphraseAudit, SynthSpec};
pub use vocab::{Vocab, END_ID, PAD_ID, START_ID, UNK_ID, UNK_MARKER};

use crate::error::{Error, Result};

/// Everything a training run reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub label_set: LabelSet,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub unlabeled: Vec<RawSentence>,
    /// Unlabeled sentence id -> its paraphrases.
    pub paraphrases: BTreeMap<usize, Vec<RawSentence>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for &id in self.paraphrases.keys() {
            if id >= self.unlabeled.len() {
                return Err(Error::Data(format!(
                    "paraphrase group {id} references a missing unlabeled sentence ({} exist)",
                    self.unlabeled.len()
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic shuffled split into `round(fraction * n)` (at least one)
/// sentences and the remainder. Rounding is half-up. Both parts keep the
/// input order.
pub fn split_labeled(sentences: &[Sentence], fraction: f64, seed: u64) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction {fraction} outside (0, 1]")));
    }
    let n = sentences.len();
    let take = ((fraction * n as f64 + 0.5).floor() as usize).clamp(1.min(n), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = vec![false; n];
    for &i in &order[..take] {
        chosen[i] = true;
    }
    let (mut subset, mut rest) = (Vec::with_capacity(take), Vec::with_capacity(n - take));
    for (s, keep) in sentences.iter().zip(chosen) {
        if keep {
            subset.push(s.clone());
        } else {
            rest.push(s.clone());
        }
    }
    Ok((subset, rest))
}
