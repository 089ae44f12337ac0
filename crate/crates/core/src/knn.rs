//! Sentence embeddings and exact k-nearest-neighbor lists.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{SubtokenizedSentence, Vocab};
use crate::encoder::{encode, EncoderInput, EncoderParams};
use crate::error::{Error, Result};

/// Mean of final-layer hidden states over non-special positions.
pub fn embed_sentences(
    params: &EncoderParams,
    vocab: &Vocab,
    sentences: &[SubtokenizedSentence],
) -> Result<Vec<Vec<f64>>> {
    let d = params.dims.config.d_model;
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(64) {
        let inputs: Vec<EncoderInput> = chunk.iter().map(|s| EncoderInput::new(s, vocab)).collect();
        let hidden = encode(params, &inputs)?;
        for (s, h) in chunk.iter().zip(hidden) {
            let real: Vec<usize> = (0..s.len()).filter(|&i| !s.is_special[i]).collect();
            if real.is_empty() {
                return Err(Error::Data(format!("sentence {} has no real tokens", s.origin)));
            }
            let mut mean = vec![0.0; d];
            for &i in &real {
                for (m, v) in mean.iter_mut().zip(h.row(i)) {
                    *m += v;
                }
            }
            let n = real.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            out.push(mean);
        }
    }
    Ok(out)
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neighbor lists sorted by ascending distance, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    k: usize,
    neighbors: Vec<Vec<usize>>,
    distances: Vec<Vec<f64>>,
}

impl KnnIndex {
    /// Brute-force all-pairs search over the given embeddings.
    pub fn build(embeddings: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = embeddings.len();
        if k == 0 || k >= n {
            return Err(Error::Config(format!("k = {k} needs 1 <= k < corpus size {n}")));
        }
        let mut neighbors = Vec::with_capacity(n);
        let mut distances = Vec::with_capacity(n);
        for (i, e) in embeddings.iter().enumerate() {
            let mut cand: Vec<(f64, usize)> = embeddings
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, o)| (squared_l2(e, o), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            distances.push(cand.iter().map(|c| c.0.sqrt()).collect());
            neighbors.push(cand.into_iter().map(|c| c.1).collect());
        }
        Ok(KnnIndex { k, neighbors, distances })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn query(&self, id: usize) -> Result<&[usize]> {
        self.neighbors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("sentence {id} is not indexed ({} sentences)", self.len())))
    }

    /// l² distances matching [`KnnIndex::query`].
    pub fn distances(&self, id: usize) -> Result<&[f64]> {
        self.distances
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("sentence {id} is not indexed")))
    }

    /// `id: n1 n2 n3` lines, preceded by a key line.
    pub fn to_cache_text(&self, key: &str) -> String {
        let mut out = format!("#key {key}\n");
        for (i, (ns, ds)) in self.neighbors.iter().zip(&self.distances).enumerate() {
            let ids: Vec<String> = ns.iter().map(usize::to_string).collect();
            let dist: Vec<String> = ds.iter().map(|d| format!("{:016x}", d.to_bits())).collect();
            let _ = writeln!(out, "{i}: {} | {}", ids.join(" "), dist.join(" "));
        }
        out
    }

    /// Parses a cache file; returns `None` when its key differs.
    pub fn from_cache_text(text: &str, key: &str) -> Result<Option<Self>> {
        let mut lines = text.lines();
        match lines.next().and_then(|l| l.strip_prefix("#key ")) {
            Some(k) if k == key => {}
            _ => return Ok(None),
        }
        let bad = |line: usize| Error::Parse {
            line,
            detail: "malformed neighbor cache entry".into(),
        };
        let mut neighbors = Vec::new();
        let mut distances = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (id, rest) = line.split_once(':').ok_or_else(|| bad(lineno))?;
            if id.trim().parse::<usize>().ok() != Some(i) {
                return Err(bad(lineno));
            }
            let (ids, dist) = rest.split_once('|').ok_or_else(|| bad(lineno))?;
            let ids: Vec<usize> = ids
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(lineno)))
                .collect::<Result<_>>()?;
            let dist: Vec<f64> = dist
                .split_whitespace()
                .map(|t| u64::from_str_radix(t, 16).map(f64::from_bits).map_err(|_| bad(lineno)))
                .collect::<Result<_>>()?;
            if ids.len() != dist.len() {
                return Err(bad(lineno));
            }
            neighbors.push(ids);
            distances.push(dist);
        }
        let k = neighbors.first().map_or(0, Vec::len);
        if k == 0 || neighbors.iter().any(|n| n.len() != k) {
            return Err(Error::Data("neighbor cache has inconsistent list lengths".into()));
        }
        Ok(Some(KnnIndex { k, neighbors, distances }))
    }
}

/// Content hash of everything an index depends on.
pub fn cache_key(params: &EncoderParams, vocab: &Vocab, corpus: &[SubtokenizedSentence], k: usize) -> String {
    let mut h = Sha256::new();
    h.update(k.to_le_bytes());
    for p in vocab.pieces() {
        h.update(p.as_bytes());
        h.update([0]);
    }
    for s in corpus {
        for t in &s.subtokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        h.update([1]);
    }
    for (name, t) in params.store.iter() {
        h.update(name.as_bytes());
        for v in t.values() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Embeds `corpus` with `params` and indexes it.
pub fn build_index(
    params: &EncoderParams,
    vocab: &Vocab,
    corpus: &[SubtokenizedSentence],
    k: usize,
) -> Result<KnnIndex> {
    if k == 0 || k >= corpus.len() {
        return Err(Error::Config(format!("k = {k} needs 1 <= k < corpus size {}", corpus.len())));
    }
    KnnIndex::build(&embed_sentences(params, vocab, corpus)?, k)
}

/// Like [`build_index`], reusing `cache` when its key matches and
/// rewriting it otherwise.
pub fn build_index_cached(
    params: &EncoderParams,
    vocab: &Vocab,
    corpus: &[SubtokenizedSentence],
    k: usize,
    cache: &Path,
) -> Result<KnnIndex> {
    let key = cache_key(params, vocab, corpus, k);
    if let Ok(text) = std::fs::read_to_string(cache) {
        if let Some(index) = KnnIndex::from_cache_text(&text, &key)? {
            return Ok(index);
        }
    }
    let index = build_index(params, vocab, corpus, k)?;
    std::fs::write(cache, index.to_cache_text(&key)).map_err(|e| Error::io(cache, e))?;
    Ok(index)
}
