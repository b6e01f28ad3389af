use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention_id: String,
    /// Predicted entity id.
    pub entity: String,
    /// Distribution over the model's entity inventory, when kept.
    pub probs: Option<Vec<Real>>,
}

impl Prediction {
    pub fn new(mention_id: impl Into<String>, entity: impl Into<String>) -> Self {
        Prediction {
            mention_id: mention_id.into(),
            entity: entity.into(),
            probs: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub entries: Vec<Prediction>,
    /// Digest of the vocabulary the predicting model was trained with.
    pub vocab_digest: Option<String>,
}

impl PredictionSet {
    pub fn new(entries: Vec<Prediction>) -> Self {
        PredictionSet {
            entries,
            vocab_digest: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated text, one mention per line:
    /// `mention_id TAB entity_id [TAB p_1,...,p_N]`.
    pub fn to_tsv(&self, with_probs: bool) -> String {
        let mut out = String::new();
        for p in &self.entries {
            out.push_str(&p.mention_id);
            out.push('\t');
            out.push_str(&p.entity);
            if let (true, Some(probs)) = (with_probs, &p.probs) {
                out.push('\t');
                for (i, v) in probs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) || cols[0].is_empty() || cols[1].is_empty() {
                return Err(bad(format!(
                    "expected 2 or 3 tab-separated columns, got '{line}'"
                )));
            }
            if !seen.insert(cols[0].to_string()) {
                return Err(bad(format!("duplicate mention id '{}'", cols[0])));
            }
            let probs = match cols.get(2) {
                Some(s) => Some(
                    s.split(',')
                        .map(|v| {
                            v.trim()
                                .parse::<Real>()
                                .map_err(|e| bad(format!("probability '{v}': {e}")))
                        })
                        .collect::<Result<Vec<Real>>>()?,
                ),
                None => None,
            };
            entries.push(Prediction {
                mention_id: cols[0].to_string(),
                entity: cols[1].to_string(),
                probs,
            });
        }
        Ok(PredictionSet::new(entries))
    }
}

pub fn write_predictions(
    set: &PredictionSet,
    path: impl AsRef<Path>,
    with_probs: bool,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_tsv(with_probs)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PredictionSet::from_tsv(&text)
}
