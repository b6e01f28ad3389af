//! Entity-linking scorer: class mappings, macro-F1 and accuracy, per-category
//! breakdowns and an approximate randomization test.

mod predictions;
mod sigtest;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Mention, UNTAGGED};
use crate::{Error, Real, Result};

pub use predictions::{read_predictions, write_predictions, Prediction, PredictionSet};
pub use sigtest::{approx_randomization, SigTestResult, Statistic};

/// Name of the class that absorbs every entity without a class of its own.
pub const CATCH_ALL: &str = "<other>";

/// A gold mention as seen by the scorer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gold {
    pub id: String,
    pub entity: String,
    pub category: String,
}

impl From<&Mention> for Gold {
    fn from(m: &Mention) -> Self {
        Gold {
            id: m.id.clone(),
            entity: m.entity.clone(),
            category: m.category.clone(),
        }
    }
}

impl Gold {
    pub fn new(id: impl Into<String>, entity: impl Into<String>) -> Self {
        Gold {
            id: id.into(),
            entity: entity.into(),
            category: UNTAGGED.to_string(),
        }
    }
}

pub fn golds_of(corpus: &Corpus) -> Vec<Gold> {
    corpus.mentions().iter().map(Gold::from).collect()
}

/// Maps entity ids onto contiguous class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMapping {
    pub condition: String,
    /// Class names by index; the catch-all, when present, is last.
    pub classes: Vec<String>,
    index: HashMap<String, usize>,
    pub catch_all: Option<usize>,
}

impl ClassMapping {
    fn from_named(condition: &str, named: Vec<String>, catch_all: bool) -> Self {
        let index = named
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let mut classes = named;
        let catch_all = catch_all.then(|| {
            classes.push(CATCH_ALL.to_string());
            classes.len() - 1
        });
        ClassMapping {
            condition: condition.to_string(),
            classes,
            index,
            catch_all,
        }
    }

    /// One class per listed id and no catch-all; unknown ids are rejected.
    pub fn identity(ids: &[&str]) -> Self {
        Self::from_named(
            "identity",
            ids.iter().map(|s| s.to_string()).collect(),
            false,
        )
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, entity: &str) -> Result<usize> {
        self.index
            .get(entity)
            .copied()
            .or(self.catch_all)
            .ok_or_else(|| {
                Error::data(format!(
                    "entity '{entity}' has no class under '{}'",
                    self.condition
                ))
            })
    }
}

/// One class per entity with at least `min_count` gold mentions (in id
/// order), plus the catch-all.
pub fn build_all_entities_mapping(golds: &[Gold], min_count: usize) -> ClassMapping {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for g in golds {
        *counts.entry(g.entity.as_str()).or_default() += 1;
    }
    let named = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_count)
        .map(|(e, _)| e.to_string())
        .collect();
    ClassMapping::from_named("all", named, true)
}

/// Six main-entity classes plus the catch-all.
pub fn build_main_entities_mapping(ids: &[String]) -> Result<ClassMapping> {
    let distinct: HashSet<&String> = ids.iter().collect();
    if ids.len() != 6 || distinct.len() != 6 {
        return Err(Error::config(format!(
            "main-entities condition needs exactly 6 distinct ids, got {ids:?}"
        )));
    }
    Ok(ClassMapping::from_named("main", ids.to_vec(), true))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub macro_f1: Real,
    pub accuracy: Real,
    pub mentions: usize,
    pub per_class: Vec<ClassScore>,
}

#[derive(Clone, Debug, Default)]
pub struct ScoreOptions {
    /// Leave the catch-all class out of the macro average.
    pub exclude_catch_all: bool,
    /// Entities the system could have predicted. Gold mentions of any other
    /// entity are always counted as errors.
    pub known_entities: Option<HashSet<String>>,
}

/// Mapped `(gold class, predicted class, counts as correct)` per gold mention,
/// in gold order.
pub(crate) fn align(
    preds: &PredictionSet,
    golds: &[Gold],
    mapping: &ClassMapping,
    opts: &ScoreOptions,
) -> Result<Vec<(usize, usize, bool)>> {
    let by_id: HashMap<&str, &str> = preds
        .entries
        .iter()
        .map(|p| (p.mention_id.as_str(), p.entity.as_str()))
        .collect();
    if by_id.len() != preds.entries.len() {
        let mut seen = HashSet::new();
        let dup = preds
            .entries
            .iter()
            .find(|p| !seen.insert(&p.mention_id))
            .expect("duplicate exists");
        return Err(Error::data(format!(
            "duplicate prediction for mention '{}'",
            dup.mention_id
        )));
    }
    let gold_ids: HashSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();
    if let Some(extra) = preds
        .entries
        .iter()
        .find(|p| !gold_ids.contains(p.mention_id.as_str()))
    {
        return Err(Error::data(format!(
            "prediction for unknown mention '{}'",
            extra.mention_id
        )));
    }
    golds
        .iter()
        .map(|g| {
            let p = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::data(format!("no prediction for mention '{}'", g.id)))?;
            let gc = mapping.class_of(&g.entity)?;
            let pc = mapping.class_of(p)?;
            let reachable = opts
                .known_entities
                .as_ref()
                .map_or(true, |k| k.contains(&g.entity));
            Ok((gc, pc, reachable && gc == pc))
        })
        .collect()
}

/// Per-class counts `(true positives, predicted, gold)`.
pub(crate) fn confusion(
    n_classes: usize,
    rows: impl Iterator<Item = (usize, usize, bool)>,
) -> (Vec<[usize; 3]>, usize, usize) {
    let mut counts = vec![[0usize; 3]; n_classes];
    let (mut correct, mut total) = (0, 0);
    for (g, p, ok) in rows {
        counts[p][1] += 1;
        counts[g][2] += 1;
        if ok {
            counts[g][0] += 1;
            correct += 1;
        }
        total += 1;
    }
    (counts, correct, total)
}

fn ratio(a: usize, b: usize) -> Real {
    if b == 0 {
        0.0
    } else {
        a as Real / b as Real
    }
}

pub(crate) fn f1_of(c: &[usize; 3]) -> (Real, Real, Real) {
    let p = ratio(c[0], c[1]);
    let r = ratio(c[0], c[2]);
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub(crate) fn macro_f1(counts: &[[usize; 3]], skip: Option<usize>) -> Real {
    let (sum, n) = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .fold((0.0, 0usize), |(s, n), (_, c)| (s + f1_of(c).2, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as Real
    }
}

fn report_from(
    mapping: &ClassMapping,
    rows: &[(usize, usize, bool)],
    opts: &ScoreOptions,
) -> EvalReport {
    let (counts, correct, total) = confusion(mapping.len(), rows.iter().copied());
    let skip = if opts.exclude_catch_all {
        mapping.catch_all
    } else {
        None
    };
    let per_class = counts
        .iter()
        .zip(&mapping.classes)
        .map(|(c, name)| {
            let (precision, recall, f1) = f1_of(c);
            ClassScore {
                class: name.clone(),
                precision,
                recall,
                f1,
                support: c[2],
            }
        })
        .collect();
    EvalReport {
        condition: mapping.condition.clone(),
        macro_f1: macro_f1(&counts, skip),
        accuracy: ratio(correct, total),
        mentions: total,
        per_class,
    }
}

pub fn score(preds: &PredictionSet, golds: &[Gold], mapping: &ClassMapping) -> Result<EvalReport> {
    score_with(preds, golds, mapping, &ScoreOptions::default())
}

pub fn score_with(
    preds: &PredictionSet,
    golds: &[Gold],
    mapping: &ClassMapping,
    opts: &ScoreOptions,
) -> Result<EvalReport> {
    let rows = align(preds, golds, mapping, opts)?;
    Ok(report_from(mapping, &rows, opts))
}

/// Reports per gold category, each scored under the global mapping.
pub fn breakdown_by_category(
    preds: &PredictionSet,
    golds: &[Gold],
    mapping: &ClassMapping,
    opts: &ScoreOptions,
) -> Result<BTreeMap<String, EvalReport>> {
    let rows = align(preds, golds, mapping, opts)?;
    let mut parts: BTreeMap<String, Vec<(usize, usize, bool)>> = BTreeMap::new();
    for (g, row) in golds.iter().zip(rows) {
        parts.entry(g.category.clone()).or_default().push(row);
    }
    Ok(parts
        .into_iter()
        .map(|(tag, rows)| {
            let mut r = report_from(mapping, &rows, opts);
            r.condition = format!("{}:{tag}", mapping.condition);
            (tag, r)
        })
        .collect())
}
