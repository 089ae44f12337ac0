//! CoNLL-style column files.
//!
//! One token per line, whitespace-separated columns, tag in the last column,
//! blank lines between sentences. `-DOCSTART-` lines are skipped. Two
//! directive lines are recognized: `#group <id>` (paraphrase files) and
//! `#meta <key> <value>` (provenance headers written by this crate).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::labels::LabelSet;
use super::sentence::{RawSentence, Sentence};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Row<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

#[derive(Debug)]
enum Item<'a> {
    Group(usize, usize),
    Sentence(Vec<Row<'a>>),
}

fn flush<'a>(current: &mut Vec<Row<'a>>, items: &mut Vec<Item<'a>>) {
    if !current.is_empty() {
        items.push(Item::Sentence(std::mem::take(current)));
    }
}

fn read_blocks(text: &str) -> Result<Vec<Item<'_>>> {
    let mut items = Vec::new();
    let mut current: Vec<Row> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.first() {
            None => {
                flush(&mut current, &mut items);
            }
            Some(&"#meta") => {}
            Some(&"#group") => {
                flush(&mut current, &mut items);
                let id = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line,
                        detail: "#group needs a numeric sentence id".into(),
                    })?;
                items.push(Item::Group(line, id));
            }
            Some(&"-DOCSTART-") => {
                flush(&mut current, &mut items);
            }
            Some(_) => {
                if let Some(first) = current.first() {
                    if first.fields.len() != fields.len() {
                        return Err(Error::Parse {
                            line,
                            detail: format!(
                                "{} columns, but the sentence started with {}",
                                fields.len(),
                                first.fields.len()
                            ),
                        });
                    }
                }
                current.push(Row { line, fields });
            }
        }
    }
    flush(&mut current, &mut items);
    Ok(items)
}

fn labeled_sentence(rows: &[Row], origin: usize, label_set: &LabelSet) -> Result<Sentence> {
    if rows[0].fields.len() < 2 {
        return Err(Error::Parse {
            line: rows[0].line,
            detail: "expected a token column and a tag column".into(),
        });
    }
    let mut tokens = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut prev = None;
    for row in rows {
        let tag = *row.fields.last().expect("non-empty row");
        let id = label_set.parse(tag).map_err(|_| Error::Parse {
            line: row.line,
            detail: format!("unknown tag `{tag}`"),
        })?;
        if id == super::labels::SPECIAL || !label_set.bio_allows(prev, id) {
            return Err(Error::Bio {
                line: row.line,
                tag: tag.to_string(),
                prev: prev.map_or_else(|| "sentence start".into(), |p| label_set.name(p)),
            });
        }
        tokens.push(row.fields[0].to_string());
        labels.push(id);
        prev = Some(id);
    }
    Sentence::from_parts(tokens, labels, origin)
}

fn raw_sentence(rows: &[Row], origin: usize, gold: Option<&LabelSet>) -> Result<RawSentence> {
    let tokens = rows.iter().map(|r| r.fields[0].to_string()).collect();
    let gold = match gold {
        Some(ls) if rows[0].fields.len() >= 2 => Some(labeled_sentence(rows, origin, ls)?.labels),
        _ => None,
    };
    Ok(RawSentence { tokens, origin, gold })
}

/// Parses a tagged column file. Sentence origins are their file positions.
pub fn parse_conll(text: &str, label_set: &LabelSet) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for item in read_blocks(text)? {
        match item {
            Item::Sentence(rows) => out.push(labeled_sentence(&rows, out.len(), label_set)?),
            Item::Group(line, _) => {
                return Err(Error::Parse {
                    line,
                    detail: "#group is only valid in paraphrase files".into(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no sentences in input".into()));
    }
    Ok(out)
}

/// Parses an untagged (or gold-tagged, when `gold` is given) column file.
pub fn parse_raw(text: &str, gold: Option<&LabelSet>) -> Result<Vec<RawSentence>> {
    let mut out = Vec::new();
    for item in read_blocks(text)? {
        match item {
            Item::Sentence(rows) => out.push(raw_sentence(&rows, out.len(), gold)?),
            Item::Group(line, _) => {
                return Err(Error::Parse {
                    line,
                    detail: "#group is only valid in paraphrase files".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Parses a paraphrase file: `#group <unlabeled-id>` followed by sentences.
pub fn parse_paraphrases(text: &str, gold: Option<&LabelSet>) -> Result<BTreeMap<usize, Vec<RawSentence>>> {
    let mut groups: BTreeMap<usize, Vec<RawSentence>> = BTreeMap::new();
    let mut current: Option<usize> = None;
    for item in read_blocks(text)? {
        match item {
            Item::Group(_, id) => {
                groups.entry(id).or_default();
                current = Some(id);
            }
            Item::Sentence(rows) => {
                let id = current.ok_or_else(|| Error::Parse {
                    line: rows[0].line,
                    detail: "paraphrase before any #group header".into(),
                })?;
                let group = groups.entry(id).or_default();
                let s = raw_sentence(&rows, id, gold)?;
                group.push(s);
            }
        }
    }
    Ok(groups)
}

pub fn meta_header(meta: &[(&str, &str)]) -> String {
    meta.iter().map(|(k, v)| format!("#meta {k} {v}\n")).collect()
}

pub fn to_conll(sentences: &[Sentence], label_set: &LabelSet) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, &l) in s.tokens.iter().zip(&s.labels) {
            let _ = writeln!(out, "{tok} {}", label_set.name(l));
        }
        out.push('\n');
    }
    out
}

fn write_raw(out: &mut String, s: &RawSentence, gold: Option<&LabelSet>) {
    match (gold, &s.gold) {
        (Some(ls), Some(labels)) => {
            for (tok, &l) in s.tokens.iter().zip(labels) {
                let _ = writeln!(out, "{tok} {}", ls.name(l));
            }
        }
        _ => {
            for tok in &s.tokens {
                let _ = writeln!(out, "{tok}");
            }
        }
    }
    out.push('\n');
}

/// Writes untagged sentences; gold tags are included when `gold` is given.
pub fn raw_to_text(sentences: &[RawSentence], gold: Option<&LabelSet>) -> String {
    let mut out = String::new();
    for s in sentences {
        write_raw(&mut out, s, gold);
    }
    out
}

pub fn paraphrases_to_text(groups: &BTreeMap<usize, Vec<RawSentence>>, gold: Option<&LabelSet>) -> String {
    let mut out = String::new();
    for (id, group) in groups {
        let _ = writeln!(out, "#group {id}");
        for s in group {
            write_raw(&mut out, s, gold);
        }
    }
    out
}
