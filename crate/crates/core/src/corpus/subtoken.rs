use std::fmt;
use std::str::FromStr;

use super::labels::{LabelSet, Tag, IGNORE, OUTSIDE};
use super::sentence::{Sentence, SubtokenizedSentence};
use crate::error::{Error, Result};

/// Deterministic word-piece splitter.
pub trait Splitter {
    fn split(&self, token: &str) -> Vec<String>;
}

/// Tokens longer than `max_chars` are cut into `piece_chars`-character pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleSplitter {
    pub max_chars: usize,
    pub piece_chars: usize,
}

impl Default for RuleSplitter {
    fn default() -> Self {
        RuleSplitter {
            max_chars: 6,
            piece_chars: 4,
        }
    }
}

impl Splitter for RuleSplitter {
    fn split(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        if chars.len() <= self.max_chars || self.piece_chars == 0 {
            return vec![token.to_string()];
        }
        chars
            .chunks(self.piece_chars)
            .map(|c| c.iter().collect())
            .collect()
    }
}

/// How non-first sub-tokens of a word are tagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum SubtokenStrategy {
    /// Non-first pieces are excluded from the loss.
    #[serde(rename = "None")]
    Ignore,
    /// `Oxx -> OOO`, `Ixx -> III`, `Bxx -> BII`.
    #[default]
    Real,
    /// Every piece repeats the word tag: `Bxx -> BBB`.
    Repeat,
    /// Non-first pieces are `O`: `Ixx -> IOO`, `Bxx -> BOO`.
    #[serde(rename = "O")]
    Outside,
}

impl SubtokenStrategy {
    pub const ALL: [SubtokenStrategy; 4] = [
        SubtokenStrategy::Ignore,
        SubtokenStrategy::Real,
        SubtokenStrategy::Repeat,
        SubtokenStrategy::Outside,
    ];

    fn continuation(self, label_set: &LabelSet, tag: usize) -> usize {
        match self {
            SubtokenStrategy::Ignore => IGNORE,
            SubtokenStrategy::Repeat => tag,
            SubtokenStrategy::Outside => OUTSIDE,
            SubtokenStrategy::Real => match label_set.tag(tag) {
                Some(Tag::Begin(t)) => label_set.id(Tag::Inside(t)),
                _ => tag,
            },
        }
    }
}

impl fmt::Display for SubtokenStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubtokenStrategy::Ignore => "None",
            SubtokenStrategy::Real => "Real",
            SubtokenStrategy::Repeat => "Repeat",
            SubtokenStrategy::Outside => "O",
        })
    }
}

impl FromStr for SubtokenStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SubtokenStrategy::Ignore),
            "real" => Ok(SubtokenStrategy::Real),
            "repeat" => Ok(SubtokenStrategy::Repeat),
            "o" => Ok(SubtokenStrategy::Outside),
            _ => Err(Error::Config(format!(
                "unknown sub-token strategy `{s}` (expected None, Real, Repeat or O)"
            ))),
        }
    }
}

/// Splits every token and expands its tag over the pieces.
pub fn subtokenize(
    s: &Sentence,
    strategy: SubtokenStrategy,
    splitter: &dyn Splitter,
    label_set: &LabelSet,
) -> SubtokenizedSentence {
    let mut out = SubtokenizedSentence {
        subtokens: Vec::new(),
        labels: Vec::new(),
        is_first_subtoken: Vec::new(),
        is_special: Vec::new(),
        alignment: Vec::new(),
        origin: s.origin,
    };
    for (i, (tok, &tag)) in s.tokens.iter().zip(&s.labels).enumerate() {
        for (j, piece) in splitter.split(tok).into_iter().enumerate() {
            out.subtokens.push(piece);
            out.labels.push(if j == 0 {
                tag
            } else {
                strategy.continuation(label_set, tag)
            });
            out.is_first_subtoken.push(j == 0);
            out.is_special.push(false);
            out.alignment.push(Some(i));
        }
    }
    out
}
