use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::Corpus;

/// Reserved string at index 0 of the token and speaker inventories.
pub const UNK: &str = "<unk>";

/// Bijection between strings and dense indices, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    fn with_unk() -> Self {
        let mut i = Self::new();
        i.insert(UNK);
        i
    }

    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&i) = self.index.get(item) {
            return i;
        }
        let i = self.items.len();
        self.items.push(item.to_string());
        self.index.insert(item.to_string(), i);
        i
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn item(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl FromIterator<String> for Interner {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut i = Interner::new();
        for s in iter {
            i.insert(&s);
        }
        i
    }
}

impl Serialize for Interner {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.items.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interner {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items = Vec::<String>::deserialize(d)?;
        let n = items.len();
        let interner: Interner = items.into_iter().collect();
        if interner.len() != n {
            return Err(serde::de::Error::custom("duplicate vocabulary entry"));
        }
        Ok(interner)
    }
}

/// Token, speaker and entity inventories.
///
/// Tokens and speakers reserve index 0 for [`UNK`]. Entities have no unknown
/// slot: mentions of entities outside the inventory are unseen and can never
/// be predicted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Interner,
    pub speakers: Interner,
    pub entities: Interner,
}

impl Vocabulary {
    pub fn token_index(&self, surface: &str) -> usize {
        self.tokens.get(surface).unwrap_or(0)
    }

    pub fn speaker_index(&self, name: &str) -> usize {
        self.speakers.get(name).unwrap_or(0)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.get(id)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// SHA-256 over the canonical JSON of all three inventories, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Builds inventories by first occurrence, scene by scene in corpus order.
/// Token types seen fewer than `min_token_count` times map to [`UNK`].
pub fn build_vocab(corpus: &Corpus, min_token_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for scene in &corpus.scenes {
        for utt in &scene.utterances {
            for tok in &utt.tokens {
                *counts.entry(tok.surface.as_str()).or_default() += 1;
            }
        }
    }

    let mut tokens = Interner::with_unk();
    let mut speakers = Interner::with_unk();
    let mut entities = Interner::new();
    for scene in &corpus.scenes {
        for utt in &scene.utterances {
            for s in &utt.speakers {
                speakers.insert(s);
            }
            for tok in &utt.tokens {
                if counts[tok.surface.as_str()] >= min_token_count {
                    tokens.insert(&tok.surface);
                }
                if let Some(m) = &tok.mention {
                    if tok.is_span_final() {
                        entities.insert(&m.entity);
                    }
                }
            }
        }
    }
    Vocabulary {
        tokens,
        speakers,
        entities,
    }
}
