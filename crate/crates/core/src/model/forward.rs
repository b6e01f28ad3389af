use rand::Rng;

use super::{
    bilstm_forward, embed_input, predict, score_mentions, ModelConfig, ModelParams, ParamVars,
};
use crate::autodiff::{Tape, Var};
use crate::corpus::{Batch, Chunk, ChunkMention};
use crate::{Real, Result};

/// Result of recording one batch on a tape.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// `M × N` entity distributions, one row per mention; `None` when the batch
    /// has no mentions.
    pub probs: Option<Var>,
    /// `(chunk index, mention)` for every row of `probs`, in order.
    pub mentions: Vec<(usize, ChunkMention)>,
}

/// Scored mention from an evaluation-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MentionOutput {
    pub chunk: usize,
    pub position: usize,
    pub id: String,
    pub gold: Option<usize>,
    pub probs: Vec<Real>,
    pub predicted: usize,
}

/// Records the full forward pass for a batch. Padded positions take the
/// unknown speaker so their embedding is defined; the mask keeps them from
/// touching any state.
pub fn forward_batch<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ParamVars,
    batch: &Batch,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<BatchOutput> {
    let b = batch.chunks.len();
    let t_len = batch.len();
    let mut mentions = Vec::new();
    for (ci, ch) in batch.chunks.iter().enumerate() {
        mentions.extend(ch.mentions.iter().map(|m| (ci, m.clone())));
    }
    if mentions.is_empty() || t_len == 0 {
        return Ok(BatchOutput {
            probs: None,
            mentions,
        });
    }

    let mut tokens = Vec::with_capacity(b * t_len);
    let mut speakers = Vec::with_capacity(b * t_len);
    let mut mask = Vec::with_capacity(b * t_len);
    for t in 0..t_len {
        for ch in &batch.chunks {
            tokens.push(ch.tokens[t]);
            speakers.push(if ch.mask[t] {
                ch.speakers[t].clone()
            } else {
                vec![0]
            });
            mask.push(ch.mask[t]);
        }
    }
    let x = embed_input(tape, vars, &tokens, &speakers, config, training, rng)?;
    let states = bilstm_forward(tape, vars, x, b, &mask)?;
    let rows: Vec<usize> = mentions.iter().map(|(ci, m)| m.position * b + ci).collect();
    let h = states.gather(tape, &rows)?;
    let h = tape.dropout(h, config.dropout_hidden, training, rng)?;
    let probs = score_mentions(tape, vars, h, config.variant)?;
    Ok(BatchOutput {
        probs: Some(probs),
        mentions,
    })
}

/// Evaluation-mode pass over a batch: one output per mention.
pub fn infer_batch(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Vec<MentionOutput>> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    // Never consulted outside training.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = forward_batch(&mut tape, &vars, batch, config, false, &mut rng)?;
    let Some(probs) = out.probs else {
        return Ok(Vec::new());
    };
    let p = tape.value(probs);
    Ok(out
        .mentions
        .into_iter()
        .enumerate()
        .map(|(r, (chunk, m))| {
            let row = p.row(r).to_vec();
            MentionOutput {
                chunk,
                position: m.position,
                id: m.id,
                gold: m.gold,
                predicted: predict(&row),
                probs: row,
            }
        })
        .collect())
}

/// Runs one chunk on its own. In evaluation mode this is a pure function of
/// `(params, chunk)`.
pub fn forward_chunk<R: Rng + ?Sized>(
    chunk: &Chunk,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Vec<MentionOutput>> {
    let batch = Batch {
        chunks: vec![chunk.clone()],
    };
    if !training {
        return infer_batch(params, config, &batch);
    }
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let out = forward_batch(&mut tape, &vars, &batch, config, true, rng)?;
    let Some(probs) = out.probs else {
        return Ok(Vec::new());
    };
    let p = tape.value(probs);
    Ok(out
        .mentions
        .into_iter()
        .enumerate()
        .map(|(r, (chunk, m))| MentionOutput {
            chunk,
            position: m.position,
            id: m.id,
            gold: m.gold,
            predicted: predict(p.row(r)),
            probs: p.row(r).to_vec(),
        })
        .collect())
}
