//! Mixing ratios and partner selection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SubtokenizedSentence};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;

/// `λ ~ Beta(α, α)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("Beta parameter must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("Beta({alpha}, {alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Uniformly random joint permutation of tokens and labels.
pub fn sample_intra<R: Rng + ?Sized>(s: &Sentence, rng: &mut R) -> Sentence {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.shuffle(rng);
    Sentence {
        tokens: order.iter().map(|&i| s.tokens[i].clone()).collect(),
        labels: order.iter().map(|&i| s.labels[i]).collect(),
        origin: s.origin,
    }
}

/// Permutes only the non-special positions of a padded sentence.
pub fn sample_intra_padded<R: Rng + ?Sized>(s: &SubtokenizedSentence, rng: &mut R) -> SubtokenizedSentence {
    let real: Vec<usize> = (0..s.len()).filter(|&i| !s.is_special[i]).collect();
    let mut shuffled = real.clone();
    shuffled.shuffle(rng);
    let mut out = s.clone();
    for (&dst, &src) in real.iter().zip(&shuffled) {
        out.subtokens[dst] = s.subtokens[src].clone();
        out.labels[dst] = s.labels[src];
        out.is_first_subtoken[dst] = s.is_first_subtoken[src];
        out.alignment[dst] = s.alignment[src];
    }
    out
}

/// With probability `mu` a uniform pick among the anchor's neighbors,
/// otherwise a uniform pick over the whole corpus (the anchor included).
pub fn sample_inter<R: Rng + ?Sized>(
    anchor: usize,
    index: &KnnIndex,
    mu: f64,
    corpus_size: usize,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Config(format!("mu must lie in [0, 1], got {mu}")));
    }
    let neighbors = index.query(anchor)?;
    if rng.random::<f64>() < mu {
        Ok(neighbors[rng.random_range(0..neighbors.len())])
    } else {
        Ok(rng.random_range(0..corpus_size))
    }
}

/// Partner-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Uniform partner from the corpus.
    Random,
    Intra,
    Inter,
    /// Intra with probability `pi`, Inter otherwise.
    IntraInter,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Intra => "intra",
            Strategy::Inter => "inter",
            Strategy::IntraInter => "intra-inter",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "intra" => Ok(Strategy::Intra),
            "inter" => Ok(Strategy::Inter),
            "intra-inter" | "intra_inter" => Ok(Strategy::IntraInter),
            other => Err(Error::Config(format!("unknown mixing strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixPolicy {
    pub strategy: Strategy,
    pub alpha: f64,
    /// Mix layers used by Intra plans.
    pub intra_layers: Vec<usize>,
    /// Mix layers used by Inter and Random plans.
    pub inter_layers: Vec<usize>,
    pub mu: f64,
    pub k: usize,
    pub pi: f64,
    /// Replace λ with `max(λ, 1-λ)`.
    pub fold_lambda: bool,
    /// Use this ratio instead of sampling one.
    pub fixed_lambda: Option<f64>,
}

impl Default for MixPolicy {
    fn default() -> Self {
        MixPolicy {
            strategy: Strategy::Inter,
            alpha: 8.0,
            intra_layers: vec![4],
            inter_layers: vec![2, 3],
            mu: 0.7,
            k: 3,
            pi: 0.3,
            fold_lambda: false,
            fixed_lambda: None,
        }
    }
}

impl MixPolicy {
    pub fn validate(&self, layers: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1], got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return bad(format!("pi must lie in [0, 1], got {}", self.pi));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("fixed_lambda must lie in [0, 1], got {l}"));
            }
        }
        for (name, set) in [("intra_layers", &self.intra_layers), ("inter_layers", &self.inter_layers)] {
            if set.is_empty() {
                return bad(format!("{name} is empty"));
            }
            if let Some(m) = set.iter().find(|&&m| m > layers) {
                return bad(format!("{name} contains layer {m} but the encoder has {layers}"));
            }
        }
        Ok(())
    }

    pub fn needs_index(&self) -> bool {
        matches!(self.strategy, Strategy::Inter | Strategy::IntraInter) && self.pi < 1.0
    }

    fn lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let l = match self.fixed_lambda {
            Some(l) => l,
            None => sample_lambda(self.alpha, rng)?,
        };
        Ok(if self.fold_lambda { l.max(1.0 - l) } else { l })
    }
}

/// Strategy actually used by one plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Random,
    Intra,
    Inter,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Random => "random",
            PlanKind::Intra => "intra",
            PlanKind::Inter => "inter",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Partner {
    Sentence(usize),
    Permutation(Sentence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub anchor: usize,
    pub partner: Partner,
    pub lambda: f64,
    pub layer: usize,
    pub kind: PlanKind,
}

/// Plans for one batch. Strategy and mix layer are drawn once per batch;
/// λ and the partner are drawn per anchor.
pub fn make_batch_plans<R: Rng + ?Sized>(
    anchors: &[usize],
    corpus: &[Sentence],
    policy: &MixPolicy,
    index: Option<&KnnIndex>,
    rng: &mut R,
) -> Result<Vec<MixPlan>> {
    let kind = match policy.strategy {
        Strategy::Random => PlanKind::Random,
        Strategy::Intra => PlanKind::Intra,
        Strategy::Inter => PlanKind::Inter,
        Strategy::IntraInter => {
            if rng.random::<f64>() < policy.pi {
                PlanKind::Intra
            } else {
                PlanKind::Inter
            }
        }
    };
    if kind == PlanKind::Inter && index.is_none() {
        return Err(Error::Config("Inter mixing needs a neighbor index".into()));
    }
    let layers = if kind == PlanKind::Intra {
        &policy.intra_layers
    } else {
        &policy.inter_layers
    };
    if layers.is_empty() {
        return Err(Error::Config("empty mix-layer set".into()));
    }
    let layer = layers[rng.random_range(0..layers.len())];
    let mut plans = Vec::with_capacity(anchors.len());
    for &anchor in anchors {
        let s = corpus
            .get(anchor)
            .ok_or_else(|| Error::Data(format!("anchor {anchor} outside corpus of {}", corpus.len())))?;
        let lambda = policy.lambda(rng)?;
        let partner = match kind {
            PlanKind::Random => Partner::Sentence(rng.random_range(0..corpus.len())),
            PlanKind::Intra => Partner::Permutation(sample_intra(s, rng)),
            PlanKind::Inter => Partner::Sentence(sample_inter(
                anchor,
                index.expect("checked"),
                policy.mu,
                corpus.len(),
                rng,
            )?),
        };
        plans.push(MixPlan {
            anchor,
            partner,
            lambda,
            layer,
            kind,
        });
    }
    Ok(plans)
}

pub fn make_mix_plan<R: Rng + ?Sized>(
    anchor: usize,
    corpus: &[Sentence],
    policy: &MixPolicy,
    index: Option<&KnnIndex>,
    rng: &mut R,
) -> Result<MixPlan> {
    Ok(make_batch_plans(&[anchor], corpus, policy, index, rng)?.remove(0))
}
