use std::collections::HashMap;

use super::sentence::{END_MARKER, PAD_MARKER, START_MARKER};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const START_ID: usize = 2;
pub const END_ID: usize = 3;
pub const UNK_MARKER: &str = "[UNK]";

/// Sub-token to id map. Ids 0..4 are reserved for pad, unknown, start, end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut v = Vocab {
            pieces: Vec::new(),
            ids: HashMap::new(),
        };
        for m in [PAD_MARKER, UNK_MARKER, START_MARKER, END_MARKER] {
            v.add(m);
        }
        v
    }
}

impl Vocab {
    /// Builds a vocabulary in first-seen order.
    pub fn build<'a>(pieces: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        for p in pieces {
            v.add(p);
        }
        v
    }

    pub fn add(&mut self, piece: &str) -> usize {
        if let Some(&id) = self.ids.get(piece) {
            return id;
        }
        let id = self.pieces.len();
        self.pieces.push(piece.to_string());
        self.ids.insert(piece.to_string(), id);
        id
    }

    pub fn id(&self, piece: &str) -> usize {
        self.ids.get(piece).copied().unwrap_or(UNK_ID)
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn encode(&self, pieces: &[String]) -> Vec<usize> {
        pieces.iter().map(|p| self.id(p)).collect()
    }
}
