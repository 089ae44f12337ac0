//! Entity-level scoring in the conlleval convention.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::corpus::{LabelSet, SubtokenizedSentence, Tag, OUTSIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub sentence: usize,
    /// First source token, inclusive.
    pub start: usize,
    /// Last source token, inclusive.
    pub end: usize,
    pub entity_type: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Tags over source tokens from per-sub-token distributions (rows of a
/// `len × C` row-major buffer). Only first sub-tokens of real tokens are
/// read. A predicted special tag counts as `O`; an `I-t` without a
/// compatible predecessor becomes `B-t`.
pub fn decode_predictions(probs: &[f64], sub: &SubtokenizedSentence, label_set: &LabelSet) -> Result<Vec<usize>> {
    let c = label_set.num_tags();
    if probs.len() != sub.len() * c {
        return Err(Error::Data(format!(
            "{} prediction values for {} positions of {c} tags",
            probs.len(),
            sub.len()
        )));
    }
    let mut tags = Vec::new();
    for i in 0..sub.len() {
        if !sub.is_first_subtoken[i] || sub.is_special[i] {
            continue;
        }
        let mut tag = argmax(&probs[i * c..(i + 1) * c]);
        if tag == crate::corpus::SPECIAL {
            tag = OUTSIDE;
        }
        tags.push(tag);
    }
    Ok(repair_bio(&tags, label_set))
}

/// Rewrites every `I-t` that does not follow `B-t`/`I-t` as `B-t`.
pub fn repair_bio(tags: &[usize], label_set: &LabelSet) -> Vec<usize> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = None;
    for &t in tags {
        let fixed = match label_set.tag(t) {
            Some(Tag::Inside(ty)) if !label_set.bio_allows(prev, t) => label_set.id(Tag::Begin(ty)),
            _ => t,
        };
        out.push(fixed);
        prev = Some(fixed);
    }
    out
}

/// Maximal runs that open with `B-t` (or an orphan `I-t`) and continue
/// with `I-t` of the same type.
pub fn extract_spans(sentence: usize, tags: &[usize], label_set: &LabelSet) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &t) in tags.iter().enumerate() {
        match label_set.tag(t) {
            Some(Tag::Inside(ty)) if open.is_some_and(|s| s.entity_type == ty) => {
                open.as_mut().expect("open").end = i;
            }
            Some(Tag::Begin(ty) | Tag::Inside(ty)) => {
                spans.extend(open.take());
                open = Some(EntitySpan {
                    sentence,
                    start: i,
                    end: i,
                    entity_type: ty,
                });
            }
            _ => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Scores {
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 if self.fn_ == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 if self.fp == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Exact-match counts over `(sentence, start, end, type)`.
pub fn f1(pred: &[EntitySpan], gold: &[EntitySpan]) -> Scores {
    let p: BTreeSet<_> = pred.iter().collect();
    let g: BTreeSet<_> = gold.iter().collect();
    let tp = p.intersection(&g).count();
    Scores {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Micro-averaged scores plus a per-type breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_type: Vec<(String, Scores)>,
    pub all: Scores,
}

impl EvalReport {
    pub fn new(pred: &[EntitySpan], gold: &[EntitySpan], label_set: &LabelSet) -> Self {
        let per_type = label_set
            .types()
            .iter()
            .enumerate()
            .map(|(ty, name)| {
                let of = |v: &[EntitySpan]| v.iter().filter(|s| s.entity_type == ty).copied().collect::<Vec<_>>();
                (name.clone(), f1(&of(pred), &of(gold)))
            })
            .collect();
        EvalReport {
            per_type,
            all: f1(pred, gold),
        }
    }

    fn rows(&self) -> impl Iterator<Item = (&str, &Scores)> {
        self.per_type
            .iter()
            .map(|(n, s)| (n.as_str(), s))
            .chain(std::iter::once(("ALL", &self.all)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("type,tp,fp,fn,p,r,f1\n");
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "{name},{},{},{},{:.6},{:.6},{:.6}",
                s.tp,
                s.fp,
                s.fn_,
                s.precision(),
                s.recall(),
                s.f1()
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n",
            "type", "tp", "fp", "fn", "prec", "rec", "f1"
        );
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "{name:<10} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2}",
                s.tp,
                s.fp,
                s.fn_,
                100.0 * s.precision(),
                100.0 * s.recall(),
                100.0 * s.f1()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{add_special_and_pad, subtokenize, RuleSplitter, Sentence, SubtokenStrategy, SPECIAL};
    use proptest::prelude::*;

    fn ls() -> LabelSet {
        LabelSet::new(["PER", "LOC"]).unwrap()
    }

    fn tags(names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| ls().parse(n).unwrap()).collect()
    }

    fn span(sentence: usize, start: usize, end: usize, ty: &str) -> EntitySpan {
        EntitySpan {
            sentence,
            start,
            end,
            entity_type: ls().type_index(ty).unwrap(),
        }
    }

    fn one_hot(ids: &[usize]) -> Vec<f64> {
        let c = ls().num_tags();
        let mut v = vec![0.0; ids.len() * c];
        for (i, &t) in ids.iter().enumerate() {
            v[i * c + t] = 1.0;
        }
        v
    }

    #[test]
    fn spans() {
        assert!(extract_spans(0, &tags(&["O", "O", "O"]), &ls()).is_empty());
        assert_eq!(
            extract_spans(0, &tags(&["B-PER", "I-PER", "O", "B-LOC"]), &ls()),
            [span(0, 0, 1, "PER"), span(0, 3, 3, "LOC")]
        );
        assert_eq!(
            extract_spans(0, &tags(&["B-PER", "B-PER"]), &ls()),
            [span(0, 0, 0, "PER"), span(0, 1, 1, "PER")]
        );
        assert_eq!(
            extract_spans(2, &tags(&["B-PER", "I-LOC"]), &ls()),
            [span(2, 0, 0, "PER"), span(2, 1, 1, "LOC")]
        );
    }

    #[test]
    fn repair() {
        assert_eq!(repair_bio(&tags(&["O", "I-LOC"]), &ls()), tags(&["O", "B-LOC"]));
        assert_eq!(repair_bio(&tags(&["I-PER", "I-PER"]), &ls()), tags(&["B-PER", "I-PER"]));
        assert_eq!(repair_bio(&tags(&["B-PER", "I-LOC"]), &ls()), tags(&["B-PER", "B-LOC"]));
    }

    #[test]
    fn decode_masks_specials_and_continuations() {
        let s = Sentence::new(
            vec!["Alexandria".into(), "x".into()],
            tags(&["B-LOC", "O"]),
            0,
            &ls(),
        )
        .unwrap();
        let sub = subtokenize(&s, SubtokenStrategy::Real, &RuleSplitter::default(), &ls());
        let p = add_special_and_pad(&sub, 8).unwrap();
        assert!(p.len() == 8 && !p.is_first_subtoken[2]);
        let mut pred = p.labels.clone();
        pred[2] = ls().parse("B-PER").unwrap();
        let probs = one_hot(&pred);
        assert_eq!(decode_predictions(&probs, &p, &ls()).unwrap(), tags(&["B-LOC", "O"]));
        assert!(decode_predictions(&probs[1..], &p, &ls()).is_err());

        let all_special = one_hot(&[SPECIAL; 8]);
        let mut sp = p.clone();
        sp.is_special = vec![true; 8];
        assert!(decode_predictions(&all_special, &sp, &ls()).unwrap().is_empty());
    }

    #[test]
    fn scores() {
        let gold = [span(0, 0, 1, "PER"), span(1, 2, 2, "LOC")];
        assert_eq!(f1(&gold, &gold).f1(), 1.0);
        let none = f1(&[], &gold);
        assert_eq!((none.recall(), none.f1()), (0.0, 0.0));
        let half = f1(&[span(0, 0, 1, "PER"), span(1, 2, 3, "LOC")], &gold);
        assert_eq!((half.precision(), half.recall(), half.f1()), (0.5, 0.5, 0.5));
        assert_eq!(f1(&[], &[]).f1(), 1.0);
    }

    #[test]
    fn report_formats() {
        let gold = [span(0, 0, 1, "PER"), span(1, 2, 2, "LOC")];
        let pred = [span(0, 0, 1, "PER")];
        let r = EvalReport::new(&pred, &gold, &ls());
        let csv = r.to_csv();
        assert!(csv.starts_with("type,tp,fp,fn,p,r,f1\nPER,1,0,0,1.000000,1.000000,1.000000\n"));
        assert!(csv.contains("LOC,0,0,1,0.000000,0.000000,0.000000\n"));
        assert!(csv.ends_with("ALL,1,0,1,1.000000,0.500000,0.666667\n"));
        assert!(r.to_table().contains("ALL"));
    }

    proptest! {
        #[test]
        fn f1_bounds_and_order_invariance(raw in prop::collection::vec((0usize..4, 0usize..5, 0usize..2, any::<bool>()), 0..12), seed in any::<u64>()) {
            let gold: Vec<EntitySpan> = raw.iter().map(|&(s, a, t, _)| EntitySpan { sentence: s, start: a, end: a + t, entity_type: t }).collect();
            let pred: Vec<EntitySpan> = raw.iter().filter(|r| r.3).map(|&(s, a, t, _)| EntitySpan { sentence: s, start: a, end: a + 1, entity_type: t }).collect();
            let sc = f1(&pred, &gold).f1();
            prop_assert!((0.0..=1.0).contains(&sc));
            let mut shuffled = pred.clone();
            let n = shuffled.len().max(1);
            shuffled.rotate_left(seed as usize % n);
            prop_assert_eq!(f1(&shuffled, &gold), f1(&pred, &gold));
            if !gold.is_empty() {
                prop_assert_eq!(f1(&gold, &gold).f1(), 1.0);
            }
        }

        #[test]
        fn decode_ignores_masked_positions(noise in prop::collection::vec(0.0f64..1.0, 8 * 6)) {
            let s = Sentence::new(vec!["Alexandria".into(), "Bo".into()], tags(&["B-LOC", "B-PER"]), 0, &ls()).unwrap();
            let sub = subtokenize(&s, SubtokenStrategy::Real, &RuleSplitter::default(), &ls());
            let p = add_special_and_pad(&sub, 8).unwrap();
            let base = one_hot(&p.labels);
            let mut noisy = base.clone();
            for i in 0..8 {
                if p.is_special[i] || !p.is_first_subtoken[i] {
                    noisy[i * 6..(i + 1) * 6].copy_from_slice(&noise[i * 6..(i + 1) * 6]);
                }
            }
            prop_assert_eq!(decode_predictions(&noisy, &p, &ls()).unwrap(), decode_predictions(&base, &p, &ls()).unwrap());
        }
    }
}
