use std::fmt;

use crate::error::{Error, Result};

/// Tag id of `O`.
pub const OUTSIDE: usize = 0;
/// Tag id carried by sentence-start, sentence-end and pad positions.
pub const SPECIAL: usize = 1;
/// Marker for positions excluded from the training loss.
pub const IGNORE: usize = usize::MAX;

pub const SPECIAL_TAG_NAME: &str = "[SPECIAL]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Special,
    Begin(usize),
    Inside(usize),
}

/// Entity types and the dense tag ids derived from them.
///
/// Layout: `O` = 0, special = 1, then `B-t` = 2 + 2t and `I-t` = 3 + 2t
/// for the t-th entity type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    types: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        for (i, t) in types.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) || t.contains('-') {
                return Err(Error::Config(format!("invalid entity type name {t:?}")));
            }
            if types[..i].contains(t) {
                return Err(Error::Config(format!("duplicate entity type {t}")));
            }
        }
        Ok(LabelSet { types })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Total tag count C.
    pub fn num_tags(&self) -> usize {
        2 + 2 * self.types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn id(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => OUTSIDE,
            Tag::Special => SPECIAL,
            Tag::Begin(t) => 2 + 2 * t,
            Tag::Inside(t) => 3 + 2 * t,
        }
    }

    pub fn tag(&self, id: usize) -> Option<Tag> {
        match id {
            OUTSIDE => Some(Tag::Outside),
            SPECIAL => Some(Tag::Special),
            _ if id < self.num_tags() => {
                let t = (id - 2) / 2;
                Some(if id.is_multiple_of(2) { Tag::Begin(t) } else { Tag::Inside(t) })
            }
            _ => None,
        }
    }

    pub fn name(&self, id: usize) -> String {
        match self.tag(id) {
            Some(Tag::Outside) => "O".into(),
            Some(Tag::Special) => SPECIAL_TAG_NAME.into(),
            Some(Tag::Begin(t)) => format!("B-{}", self.types[t]),
            Some(Tag::Inside(t)) => format!("I-{}", self.types[t]),
            None => format!("<{id}>"),
        }
    }

    pub fn parse(&self, name: &str) -> Result<usize> {
        if name == "O" {
            return Ok(OUTSIDE);
        }
        if name == SPECIAL_TAG_NAME {
            return Ok(SPECIAL);
        }
        let (prefix, ty) = name
            .split_once('-')
            .ok_or_else(|| Error::UnknownTag(name.to_string()))?;
        let t = self
            .type_index(ty)
            .ok_or_else(|| Error::UnknownTag(name.to_string()))?;
        match prefix {
            "B" => Ok(self.id(Tag::Begin(t))),
            "I" => Ok(self.id(Tag::Inside(t))),
            _ => Err(Error::UnknownTag(name.to_string())),
        }
    }

    /// Entity type of a `B-`/`I-` tag.
    pub fn entity_type(&self, id: usize) -> Option<usize> {
        match self.tag(id)? {
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
            _ => None,
        }
    }

    /// Whether `tag` may follow `prev` (`None` at sentence start) under BIO.
    pub fn bio_allows(&self, prev: Option<usize>, tag: usize) -> bool {
        match self.tag(tag) {
            Some(Tag::Inside(t)) => {
                matches!(prev.and_then(|p| self.tag(p)), Some(Tag::Begin(u) | Tag::Inside(u)) if u == t)
            }
            Some(_) => true,
            None => false,
        }
    }

    /// Index of the first tag that breaks BIO, if any.
    pub fn first_bio_violation(&self, labels: &[usize]) -> Option<usize> {
        let mut prev = None;
        for (i, &l) in labels.iter().enumerate() {
            if !self.bio_allows(prev, l) {
                return Some(i);
            }
            prev = Some(l);
        }
        None
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (0..self.num_tags()).map(|i| self.name(i)).collect();
        write!(f, "{}", names.join(" "))
    }
}
