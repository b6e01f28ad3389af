use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Scene, TokenRecord, Utterance};
use crate::{Error, Result};

/// Settings for the synthetic dialogue generator.
///
/// Every entity `j` has id `E<j>`, speaks as `Person<j>` and is named by the
/// single token `Name<j>`. Mentions are generated as `I` (the current
/// speaker), `Name<j>` (entity `j`) or `you` (the previous utterance's
/// speaker). Speakers and named entities are drawn from the same popularity
/// distribution: uniform, or with `head_entities` entities sharing
/// `head_mass` of the probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entities: usize,
    pub scenes: usize,
    pub utterances_per_scene: usize,
    pub tokens_per_utterance: usize,
    /// Probability that a token slot holds a mention.
    pub mention_rate: f64,
    pub first_person_weight: f64,
    pub name_weight: f64,
    pub second_person_weight: f64,
    /// Number of filler word types.
    pub filler_words: usize,
    pub head_entities: usize,
    pub head_mass: f64,
    pub scene_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 6,
            scenes: 200,
            utterances_per_scene: 6,
            tokens_per_utterance: 8,
            mention_rate: 0.25,
            first_person_weight: 1.0,
            name_weight: 1.0,
            second_person_weight: 1.0,
            filler_words: 30,
            head_entities: 0,
            head_mass: 0.8,
            scene_prefix: "syn".to_string(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synth: {m}")));
        if self.entities < 2 {
            return bad("need at least 2 entities");
        }
        if self.utterances_per_scene == 0 || self.tokens_per_utterance == 0 {
            return bad("utterances_per_scene and tokens_per_utterance must be positive");
        }
        if !(0.0..=1.0).contains(&self.mention_rate) {
            return bad("mention_rate must lie in [0, 1]");
        }
        let w = [
            self.first_person_weight,
            self.name_weight,
            self.second_person_weight,
        ];
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return bad("mention weights must be non-negative with a positive sum");
        }
        if self.head_entities >= self.entities && self.head_entities != 0 {
            return bad("head_entities must be smaller than entities");
        }
        if !(0.0..1.0).contains(&self.head_mass)
            || (self.head_entities > 0 && self.head_mass == 0.0)
        {
            return bad("head_mass must lie in (0, 1)");
        }
        if self.filler_words == 0 {
            return bad("filler_words must be positive");
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut map = serde_json::Map::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            let v = v.trim();
            let value = serde_json::from_str(v).unwrap_or(serde_json::Value::String(v.to_string()));
            map.insert(k.trim().to_string(), value);
        }
        let cfg: SynthConfig = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::config(format!("synth settings: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let value = serde_json::to_value(self).expect("serialisable");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// Popularity of each entity as a speaker and as a named referent.
    pub fn entity_weights(&self) -> Vec<f64> {
        let n = self.entities;
        let h = self.head_entities;
        if h == 0 {
            return vec![1.0 / n as f64; n];
        }
        (0..n)
            .map(|j| {
                if j < h {
                    self.head_mass / h as f64
                } else {
                    (1.0 - self.head_mass) / (n - h) as f64
                }
            })
            .collect()
    }
}

pub fn entity_id(j: usize) -> String {
    format!("E{j}")
}

pub fn speaker_name(j: usize) -> String {
    format!("Person{j}")
}

pub fn name_token(j: usize) -> String {
    format!("Name{j}")
}

pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let popularity = WeightedIndex::new(config.entity_weights())
        .map_err(|e| Error::config(format!("synth weights: {e}")))?;
    let kinds = WeightedIndex::new([
        config.first_person_weight,
        config.name_weight,
        config.second_person_weight,
    ])
    .map_err(|e| Error::config(format!("synth weights: {e}")))?;

    let mut scenes = Vec::with_capacity(config.scenes);
    for s in 0..config.scenes {
        let mut utterances = Vec::with_capacity(config.utterances_per_scene);
        let mut previous: Option<usize> = None;
        for _ in 0..config.utterances_per_scene {
            let speaker = loop {
                let cand = popularity.sample(&mut rng);
                if Some(cand) != previous {
                    break cand;
                }
            };
            let tokens = (0..config.tokens_per_utterance)
                .map(|_| {
                    if rng.gen_bool(config.mention_rate) {
                        let kind = match (kinds.sample(&mut rng), previous) {
                            (2, None) => 0,
                            (k, _) => k,
                        };
                        match kind {
                            0 => TokenRecord::mention("I", entity_id(speaker), "PRP"),
                            1 => {
                                let j = popularity.sample(&mut rng);
                                TokenRecord::mention(name_token(j), entity_id(j), "NNP")
                            }
                            _ => TokenRecord::mention(
                                "you",
                                entity_id(previous.expect("checked above")),
                                "PRP",
                            ),
                        }
                    } else {
                        TokenRecord::plain(format!("w{}", rng.gen_range(0..config.filler_words)))
                    }
                })
                .collect();
            utterances.push(Utterance {
                speakers: vec![speaker_name(speaker)],
                tokens,
            });
            previous = Some(speaker);
        }
        scenes.push(Scene {
            id: format!("{}{s:04}", config.scene_prefix),
            utterances,
        });
    }
    Ok(Corpus::new(scenes))
}
