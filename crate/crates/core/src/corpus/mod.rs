//! Dialogue data model, ingestion and batching.
//!
//! A [`Corpus`] is a list of scenes; a scene is a list of utterances, each with
//! a non-empty speaker set and a sequence of tokens. Gold mentions are marked
//! on tokens as begin/inside/end spans. Only the last token of a span is
//! resolved by the model.

mod batch;
mod embeddings;
mod stats;
mod synth;
mod tsv;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use batch::{chunk_and_batch, chunk_bounds, Batch, Chunk, ChunkMention};
pub use embeddings::{
    load_pretrained_embeddings, load_pretrained_rows, write_pretrained, Coverage, Pretrained,
};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{entity_id, name_token, speaker_name, synth_corpus, SynthConfig};
pub use tsv::{parse_corpus, parse_corpus_str, serialize_corpus, write_corpus};
pub use vocab::{build_vocab, Interner, Vocabulary, UNK};

/// Format version written by [`serialize_corpus`].
pub const FORMAT_VERSION: u32 = 1;

/// Tag used for mentions that carry no category column.
pub const UNTAGGED: &str = "other";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanRole {
    Begin,
    Inside,
    End,
}

impl SpanRole {
    pub fn marker(self) -> char {
        match self {
            SpanRole::Begin => 'B',
            SpanRole::Inside => 'I',
            SpanRole::End => 'E',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionTag {
    pub entity: String,
    pub role: SpanRole,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub surface: String,
    pub mention: Option<MentionTag>,
    pub category: Option<String>,
}

impl TokenRecord {
    pub fn plain(surface: impl Into<String>) -> Self {
        TokenRecord {
            surface: surface.into(),
            mention: None,
            category: None,
        }
    }

    /// Single-token mention.
    pub fn mention(surface: impl Into<String>, entity: impl Into<String>, tag: &str) -> Self {
        TokenRecord {
            surface: surface.into(),
            mention: Some(MentionTag {
                entity: entity.into(),
                role: SpanRole::End,
            }),
            category: Some(tag.to_string()),
        }
    }

    /// True on the token that gets resolved: the last token of a span.
    pub fn is_span_final(&self) -> bool {
        matches!(&self.mention, Some(m) if m.role == SpanRole::End)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speakers: Vec<String>,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Scene {
    pub fn num_tokens(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub scenes: Vec<Scene>,
    pub source: Option<PathBuf>,
    pub format_version: u32,
}

/// A resolved gold mention, addressed by its span-final token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub id: String,
    pub scene: usize,
    pub utterance: usize,
    /// Span-final token index within the utterance.
    pub token: usize,
    /// First token index of the span within the utterance.
    pub start: usize,
    pub entity: String,
    pub category: String,
}

/// Identifier of the mention whose span ends at `token` of `utterance`.
pub fn mention_id(scene_id: &str, utterance: usize, token: usize) -> String {
    format!("{scene_id}/{utterance}/{token}")
}

impl Corpus {
    pub fn new(scenes: Vec<Scene>) -> Self {
        Corpus {
            scenes,
            source: None,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.scenes.iter().map(Scene::num_tokens).sum()
    }

    /// All gold mentions in file order.
    pub fn mentions(&self) -> Vec<Mention> {
        let mut out = Vec::new();
        for (si, scene) in self.scenes.iter().enumerate() {
            for (ui, utt) in scene.utterances.iter().enumerate() {
                let mut start = 0;
                for (ti, tok) in utt.tokens.iter().enumerate() {
                    let Some(m) = &tok.mention else { continue };
                    if m.role == SpanRole::Begin {
                        start = ti;
                    }
                    if m.role == SpanRole::End {
                        let first = if ti > 0
                            && matches!(&utt.tokens[ti - 1].mention, Some(p) if p.role != SpanRole::End)
                        {
                            start
                        } else {
                            ti
                        };
                        out.push(Mention {
                            id: mention_id(&scene.id, ui, ti),
                            scene: si,
                            utterance: ui,
                            token: ti,
                            start: first,
                            entity: m.entity.clone(),
                            category: tok.category.clone().unwrap_or_else(|| UNTAGGED.to_string()),
                        });
                    }
                }
            }
        }
        out
    }

    /// Sub-corpus with the scenes at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            scenes: indices.iter().map(|&i| self.scenes[i].clone()).collect(),
            source: self.source.clone(),
            format_version: self.format_version,
        }
    }
}
