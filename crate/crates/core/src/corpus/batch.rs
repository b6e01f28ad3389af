use rand::seq::SliceRandom;
use rand::RngCore;

use super::{mention_id, Corpus, Scene, SpanRole, Vocabulary};
use crate::{Error, Result};

/// A gold mention inside a chunk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkMention {
    /// Position of the span-final token within the chunk.
    pub position: usize,
    /// Entity index, or `None` for an entity outside the vocabulary.
    pub gold: Option<usize>,
    pub id: String,
}

/// A contiguous slice of one scene, padded to its batch's length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub scene_id: String,
    /// Offset of the chunk's first token within the scene's token stream.
    pub offset: usize,
    pub tokens: Vec<usize>,
    pub speakers: Vec<Vec<usize>>,
    pub mask: Vec<bool>,
    pub mentions: Vec<ChunkMention>,
}

impl Chunk {
    /// Number of real (unpadded) tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn padded_len(&self) -> usize {
        self.mask.len()
    }

    fn pad_to(&mut self, len: usize) {
        while self.tokens.len() < len {
            self.tokens.push(0);
            self.speakers.push(Vec::new());
            self.mask.push(false);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub chunks: Vec<Chunk>,
}

impl Batch {
    /// Common padded length of all chunks.
    pub fn len(&self) -> usize {
        self.chunks.first().map_or(0, Chunk::padded_len)
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn num_mentions(&self) -> usize {
        self.chunks.iter().map(|c| c.mentions.len()).sum()
    }
}

/// Splits `n` tokens into consecutive `[start, end)` chunks of at most
/// `chunk_len`. A boundary that would cut through a mention span (inclusive
/// `(first, last)` pairs) moves back to the span's first token, unless the span
/// starts the chunk itself.
pub fn chunk_bounds(n: usize, spans: &[(usize, usize)], chunk_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + chunk_len).min(n);
        if end < n {
            if let Some(&(first, _)) = spans
                .iter()
                .find(|&&(first, last)| first < end && last >= end)
            {
                if first > start {
                    end = first;
                }
            }
        }
        out.push((start, end));
        start = end;
    }
    out
}

fn scene_chunks(scene: &Scene, vocab: &Vocabulary, chunk_len: usize) -> Vec<Chunk> {
    let mut tokens = Vec::new();
    let mut speakers = Vec::new();
    let mut spans = Vec::new();
    let mut mentions = Vec::new();
    for (ui, utt) in scene.utterances.iter().enumerate() {
        let speaker_ids: Vec<usize> = utt
            .speakers
            .iter()
            .map(|s| vocab.speaker_index(s))
            .collect();
        let mut span_start = 0;
        for (ti, tok) in utt.tokens.iter().enumerate() {
            let pos = tokens.len();
            tokens.push(vocab.token_index(&tok.surface));
            speakers.push(speaker_ids.clone());
            if let Some(m) = &tok.mention {
                match m.role {
                    SpanRole::Begin => span_start = pos,
                    SpanRole::Inside => {}
                    SpanRole::End => {
                        let in_span = ti > 0
                            && matches!(&utt.tokens[ti - 1].mention, Some(p) if p.role != SpanRole::End);
                        let first = if in_span { span_start } else { pos };
                        spans.push((first, pos));
                        mentions.push((
                            pos,
                            ChunkMention {
                                position: pos,
                                gold: vocab.entity_index(&m.entity),
                                id: mention_id(&scene.id, ui, ti),
                            },
                        ));
                    }
                }
            }
        }
    }

    chunk_bounds(tokens.len(), &spans, chunk_len)
        .into_iter()
        .map(|(start, end)| Chunk {
            scene_id: scene.id.clone(),
            offset: start,
            tokens: tokens[start..end].to_vec(),
            speakers: speakers[start..end].to_vec(),
            mask: vec![true; end - start],
            mentions: mentions
                .iter()
                .filter(|(pos, _)| (start..end).contains(pos))
                .map(|(pos, m)| ChunkMention {
                    position: pos - start,
                    ..m.clone()
                })
                .collect(),
        })
        .collect()
}

/// Groups scenes into batches of `batch_scenes` and splits each scene into
/// chunks of at most `chunk_len` tokens, padding every chunk to the longest one
/// in its batch. Scenes are shuffled with `rng` when given, otherwise kept in
/// corpus order.
pub fn chunk_and_batch(
    corpus: &Corpus,
    vocab: &Vocabulary,
    batch_scenes: usize,
    chunk_len: usize,
    rng: Option<&mut dyn RngCore>,
) -> Result<Vec<Batch>> {
    if batch_scenes == 0 || chunk_len == 0 {
        return Err(Error::config(format!(
            "batch_scenes ({batch_scenes}) and chunk_len ({chunk_len}) must be at least 1"
        )));
    }
    let mut order: Vec<usize> = (0..corpus.scenes.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    let batches = order
        .chunks(batch_scenes)
        .map(|group| {
            let mut chunks: Vec<Chunk> = group
                .iter()
                .flat_map(|&i| scene_chunks(&corpus.scenes[i], vocab, chunk_len))
                .collect();
            let longest = chunks.iter().map(|c| c.tokens.len()).max().unwrap_or(0);
            chunks.iter_mut().for_each(|c| c.pad_to(longest));
            Batch { chunks }
        })
        .filter(|b| !b.chunks.is_empty())
        .collect();
    Ok(batches)
}
