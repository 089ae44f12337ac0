use super::labels::{LabelSet, IGNORE, SPECIAL};
use crate::error::{Error, Result};

pub const START_MARKER: &str = "[CLS]";
pub const END_MARKER: &str = "[SEP]";
pub const PAD_MARKER: &str = "[PAD]";

/// A labeled sentence with hard BIO tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
    pub origin: usize,
}

impl Sentence {
    /// Validates length agreement and BIO well-formedness.
    pub fn new(tokens: Vec<String>, labels: Vec<usize>, origin: usize, label_set: &LabelSet) -> Result<Self> {
        let s = Sentence::from_parts(tokens, labels, origin)?;
        if let Some(i) = label_set.first_bio_violation(&s.labels) {
            let prev = if i == 0 {
                "sentence start".to_string()
            } else {
                label_set.name(s.labels[i - 1])
            };
            return Err(Error::Bio {
                line: i + 1,
                tag: label_set.name(s.labels[i]),
                prev,
            });
        }
        Ok(s)
    }

    /// Checks lengths only; the tag sequence may break BIO (permutations do).
    pub fn from_parts(tokens: Vec<String>, labels: Vec<usize>, origin: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        if tokens.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(Sentence { tokens, labels, origin })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An untagged sentence, optionally carrying gold tags kept for auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub tokens: Vec<String>,
    pub origin: usize,
    pub gold: Option<Vec<usize>>,
}

impl RawSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Views the sentence as labeled, tagging every token `O` when no gold
    /// tags exist. Labels are only used for layout, never as targets.
    pub fn as_sentence(&self) -> Sentence {
        let labels = self
            .gold
            .clone()
            .unwrap_or_else(|| vec![super::labels::OUTSIDE; self.tokens.len()]);
        Sentence {
            tokens: self.tokens.clone(),
            labels,
            origin: self.origin,
        }
    }
}

impl From<&Sentence> for RawSentence {
    fn from(s: &Sentence) -> Self {
        RawSentence {
            tokens: s.tokens.clone(),
            origin: s.origin,
            gold: Some(s.labels.clone()),
        }
    }
}

/// A sentence after sub-token splitting (and optionally special markers and
/// padding). All per-position vectors have equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtokenizedSentence {
    pub subtokens: Vec<String>,
    /// Tag ids, or [`IGNORE`] for positions excluded from the loss.
    pub labels: Vec<usize>,
    pub is_first_subtoken: Vec<bool>,
    pub is_special: Vec<bool>,
    /// Source token index of each sub-token; `None` for special positions.
    pub alignment: Vec<Option<usize>>,
    pub origin: usize,
}

impl SubtokenizedSentence {
    pub fn len(&self) -> usize {
        self.subtokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtokens.is_empty()
    }

    pub fn is_pad(&self, i: usize) -> bool {
        self.is_special[i] && self.subtokens[i] == PAD_MARKER
    }

    /// `1.0` at non-special positions, `0.0` elsewhere.
    pub fn real_mask(&self) -> Vec<f64> {
        self.is_special.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect()
    }

    pub fn num_source_tokens(&self) -> usize {
        self.alignment.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Returns true if any position carries the ignore marker.
    pub fn has_ignored(&self) -> bool {
        self.labels.contains(&IGNORE)
    }
}

/// Wraps a sub-tokenized sentence in start/end markers and pads it to
/// `max_len`. Marker and pad positions carry the special tag.
pub fn add_special_and_pad(s: &SubtokenizedSentence, max_len: usize) -> Result<SubtokenizedSentence> {
    if s.len() + 2 > max_len {
        return Err(Error::Truncation { len: s.len(), max_len });
    }
    let mut out = SubtokenizedSentence {
        subtokens: Vec::with_capacity(max_len),
        labels: Vec::with_capacity(max_len),
        is_first_subtoken: Vec::with_capacity(max_len),
        is_special: Vec::with_capacity(max_len),
        alignment: Vec::with_capacity(max_len),
        origin: s.origin,
    };
    let push_special = |out: &mut SubtokenizedSentence, marker: &str| {
        out.subtokens.push(marker.to_string());
        out.labels.push(SPECIAL);
        out.is_first_subtoken.push(false);
        out.is_special.push(true);
        out.alignment.push(None);
    };
    push_special(&mut out, START_MARKER);
    out.subtokens.extend(s.subtokens.iter().cloned());
    out.labels.extend(&s.labels);
    out.is_first_subtoken.extend(&s.is_first_subtoken);
    out.is_special.extend(&s.is_special);
    out.alignment.extend(&s.alignment);
    push_special(&mut out, END_MARKER);
    while out.len() < max_len {
        push_special(&mut out, PAD_MARKER);
    }
    Ok(out)
}
