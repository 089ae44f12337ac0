//! Template-and-gazetteer corpus generator.
//!
//! Templates are whitespace-separated words where `{TYPE}` marks an entity
//! slot. Paraphrases of an unlabeled sentence re-render the same entity
//! multiset into another template with the same slot types, so per-type
//! entity counts match the source unless a violation is injected.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{LabelSet, Tag, OUTSIDE};
use super::sentence::{RawSentence, Sentence};
use super::Dataset;
use crate::error::{Error, Result};

/// Generator configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Labeled training pool size.
    pub labeled: usize,
    #[serde(default)]
    pub unlabeled: usize,
    #[serde(default)]
    pub dev: usize,
    pub test: usize,
    /// Paraphrases per unlabeled sentence (K).
    #[serde(default = "default_paraphrases")]
    pub paraphrases: usize,
    /// Fraction of paraphrases rendered with a different entity multiset.
    #[serde(default)]
    pub violation_fraction: f64,
    /// Entity type order; defaults to the sorted gazetteer keys.
    #[serde(default)]
    pub entity_types: Option<Vec<String>>,
    pub templates: Vec<String>,
    pub gazetteers: BTreeMap<String, Vec<String>>,
}

fn default_paraphrases() -> usize {
    2
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match &self.entity_types {
            Some(types) => LabelSet::new(types.iter().cloned()),
            None => LabelSet::new(self.gazetteers.keys().cloned()),
        }
    }
}

#[derive(Debug, Clone)]
enum Part {
    Word(String),
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Template {
    parts: Vec<Part>,
    /// Sorted slot types.
    signature: Vec<usize>,
}

/// A rendered sentence plus the gazetteer entry chosen for each slot type.
struct Rendered {
    sentence: Sentence,
    entities: Vec<(usize, String)>,
    template: usize,
}

struct Generator<'a> {
    label_set: LabelSet,
    templates: Vec<Template>,
    gazetteers: Vec<&'a [String]>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec) -> Result<Self> {
        let label_set = spec.label_set()?;
        if spec.templates.is_empty() {
            return Err(Error::Config("synthetic spec has no templates".into()));
        }
        if !(0.0..=1.0).contains(&spec.violation_fraction) {
            return Err(Error::Config(format!(
                "violation_fraction {} outside [0, 1]",
                spec.violation_fraction
            )));
        }
        let mut templates = Vec::new();
        for (ti, text) in spec.templates.iter().enumerate() {
            let mut parts = Vec::new();
            for w in text.split_whitespace() {
                match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                    Some(ty) => {
                        let t = label_set.type_index(ty).ok_or_else(|| {
                            Error::Config(format!("template {ti} references unknown type {ty}"))
                        })?;
                        parts.push(Part::Slot(t));
                    }
                    None => parts.push(Part::Word(w.to_string())),
                }
            }
            if parts.is_empty() {
                return Err(Error::Config(format!("template {ti} is empty")));
            }
            let mut signature: Vec<usize> = parts
                .iter()
                .filter_map(|p| match p {
                    Part::Slot(t) => Some(*t),
                    Part::Word(_) => None,
                })
                .collect();
            signature.sort_unstable();
            templates.push(Template { parts, signature });
        }
        let mut gazetteers = Vec::new();
        for ty in label_set.types() {
            gazetteers.push(spec.gazetteers.get(ty).map_or(&[][..], Vec::as_slice));
        }
        let referenced: HashSet<usize> = templates.iter().flat_map(|t| t.signature.iter().copied()).collect();
        for &t in &referenced {
            if gazetteers[t].iter().all(|e| e.split_whitespace().next().is_none()) {
                return Err(Error::Config(format!(
                    "gazetteer for referenced type {} is empty",
                    label_set.types()[t]
                )));
            }
        }
        Ok(Generator {
            label_set,
            templates,
            gazetteers,
        })
    }

    fn render(&self, template: usize, fills: &[(usize, String)], origin: usize) -> Rendered {
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        let mut next = fills.iter();
        for part in &self.templates[template].parts {
            match part {
                Part::Word(w) => {
                    tokens.push(w.clone());
                    labels.push(OUTSIDE);
                }
                Part::Slot(t) => {
                    let (_, entry) = next.next().expect("one fill per slot");
                    for (j, w) in entry.split_whitespace().enumerate() {
                        tokens.push(w.to_string());
                        let tag = if j == 0 { Tag::Begin(*t) } else { Tag::Inside(*t) };
                        labels.push(self.label_set.id(tag));
                    }
                }
            }
        }
        Rendered {
            sentence: Sentence::from_parts(tokens, labels, origin).expect("templates are non-empty"),
            entities: fills.to_vec(),
            template,
        }
    }

    fn random_fills(&self, template: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, String)> {
        self.templates[template]
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(t) => {
                    let entry = self.gazetteers[*t]
                        .iter()
                        .filter(|e| !e.trim().is_empty())
                        .collect::<Vec<_>>()
                        .choose(rng)
                        .map(|e| e.to_string())
                        .expect("checked non-empty");
                    Some((*t, entry))
                }
                Part::Word(_) => None,
            })
            .collect()
    }

    fn sample(&self, origin: usize, rng: &mut ChaCha8Rng) -> Rendered {
        let template = rng.random_range(0..self.templates.len());
        let fills = self.random_fills(template, rng);
        self.render(template, &fills, origin)
    }

    fn paraphrase(&self, source: &Rendered, violate: bool, rng: &mut ChaCha8Rng) -> Rendered {
        let sig = &self.templates[source.template].signature;
        if violate {
            let others: Vec<usize> = (0..self.templates.len())
                .filter(|&t| &self.templates[t].signature != sig)
                .collect();
            if let Some(&t) = others.choose(rng) {
                let fills = self.random_fills(t, rng);
                return self.render(t, &fills, source.sentence.origin);
            }
        }
        let same: Vec<usize> = (0..self.templates.len())
            .filter(|&t| &self.templates[t].signature == sig && t != source.template)
            .collect();
        let template = same.choose(rng).copied().unwrap_or(source.template);

        let mut pools: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (t, e) in &source.entities {
            pools.entry(*t).or_default().push(e.clone());
        }
        for pool in pools.values_mut() {
            pool.shuffle(rng);
        }
        let fills: Vec<(usize, String)> = self.templates[template]
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(t) => Some((*t, pools.get_mut(t).and_then(Vec::pop).expect("same signature"))),
                Part::Word(_) => None,
            })
            .collect();
        self.render(template, &fills, source.sentence.origin)
    }
}

/// Generates a full dataset. Output depends only on `(spec, seed)`.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let generator = Generator::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Sentence> {
        (0..n).map(|i| generator.sample(i, rng).sentence).collect()
    };
    let train = split(spec.labeled, &mut rng);
    let dev = split(spec.dev, &mut rng);
    let test = split(spec.test, &mut rng);

    let mut unlabeled = Vec::with_capacity(spec.unlabeled);
    let mut paraphrases = BTreeMap::new();
    for i in 0..spec.unlabeled {
        let source = generator.sample(i, &mut rng);
        let mut group = Vec::with_capacity(spec.paraphrases);
        for _ in 0..spec.paraphrases {
            let violate = spec.violation_fraction > 0.0 && rng.random_bool(spec.violation_fraction);
            let p = generator.paraphrase(&source, violate, &mut rng);
            group.push(RawSentence::from(&p.sentence));
        }
        unlabeled.push(RawSentence::from(&source.sentence));
        if !group.is_empty() {
            paraphrases.insert(i, group);
        }
    }
    let ds = Dataset {
        label_set: generator.label_set,
        train,
        dev,
        test,
        unlabeled,
        paraphrases,
    };
    ds.validate()?;
    Ok(ds)
}

/// Entities per type (number of `B-` tags), computed from gold tags.
pub fn entity_counts(labels: &[usize], label_set: &LabelSet) -> Vec<usize> {
    let mut counts = vec![0; label_set.num_types()];
    for &l in labels {
        if let Some(Tag::Begin(t)) = label_set.tag(l) {
            counts[t] += 1;
        }
    }
    counts
}

/// Result of comparing gold entity counts between sentences and paraphrases.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParaphraseAudit {
    pub groups: usize,
    pub paraphrases: usize,
    /// `(unlabeled id, paraphrase index)` pairs whose counts differ.
    pub violations: Vec<(usize, usize)>,
}

impl ParaphraseAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every paraphrase preserves per-type entity counts. Needs gold tags.
pub fn audit_paraphrases(ds: &Dataset) -> Result<ParaphraseAudit> {
    let mut audit = ParaphraseAudit::default();
    for (&id, group) in &ds.paraphrases {
        let source = ds
            .unlabeled
            .get(id)
            .ok_or_else(|| Error::Data(format!("paraphrase group {id} has no source sentence")))?;
        let gold = source
            .gold
            .as_ref()
            .ok_or_else(|| Error::Data(format!("unlabeled sentence {id} has no gold tags")))?;
        let want = entity_counts(gold, &ds.label_set);
        audit.groups += 1;
        for (k, p) in group.iter().enumerate() {
            let pg = p
                .gold
                .as_ref()
                .ok_or_else(|| Error::Data(format!("paraphrase {k} of {id} has no gold tags")))?;
            audit.paraphrases += 1;
            if entity_counts(pg, &ds.label_set) != want {
                audit.violations.push((id, k));
            }
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthSpec {
        SynthSpec::from_toml(
            r#"
            labeled = 3
            test = 1
            unlabeled = 2
            paraphrases = 1
            templates = ["{PER} visits {LOC}"]
            [gazetteers]
            PER = ["Ann"]
            LOC = ["Oslo"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn single_template_renders_exactly() {
        let ds = gen_synthetic(&tiny(), 1).unwrap();
        let ls = &ds.label_set;
        let s = &ds.train[0];
        assert_eq!(s.tokens, ["Ann", "visits", "Oslo"]);
        let names: Vec<String> = s.labels.iter().map(|&l| ls.name(l)).collect();
        assert_eq!(names, ["B-PER", "O", "B-LOC"]);
    }

    #[test]
    fn multi_word_entries_get_inside_tags() {
        let mut spec = tiny();
        spec.gazetteers.insert("PER".into(), vec!["Ann Lee Moe".into()]);
        let ds = gen_synthetic(&spec, 1).unwrap();
        let names: Vec<String> = ds.train[0].labels.iter().map(|&l| ds.label_set.name(l)).collect();
        assert_eq!(names, ["B-PER", "I-PER", "I-PER", "O", "B-LOC"]);
    }

    #[test]
    fn empty_referenced_gazetteer_is_an_error() {
        let mut spec = tiny();
        spec.gazetteers.insert("LOC".into(), vec![]);
        assert!(gen_synthetic(&spec, 0).is_err());
        spec.gazetteers.remove("LOC");
        spec.entity_types = Some(vec!["PER".into(), "LOC".into()]);
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn unknown_slot_type_is_an_error() {
        let mut spec = tiny();
        spec.templates.push("{ORG} rises".into());
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(SynthSpec::from_toml("labeled = 1\ntest = 1\ntemplates = []\nbogus = 2\n[gazetteers]\n").is_err());
    }
}
