//! Mention loss, the epoch loop, checkpoints, cross-validation and
//! output-averaging ensembles.

mod checkpoint;
mod crossval;
mod ensemble;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Tape, Tensor, Var};
use crate::corpus::{chunk_and_batch, Corpus, Vocabulary};
use crate::evaluation::{
    build_all_entities_mapping, golds_of, score_with, EvalReport, Prediction, PredictionSet,
    ScoreOptions,
};
use crate::model::{
    forward_batch, infer_batch, init_params, BatchOutput, MentionOutput, ModelConfig, ModelParams,
};
use crate::{Error, Real, Result};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, TrainingMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use crossval::{assign_folds, crossval, CrossvalOutcome, FoldAssignment, FoldResult};
pub use ensemble::{ensemble_predict, EnsembleModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub batch_scenes: usize,
    pub chunk_len: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub folds: usize,
    pub seed: u64,
    /// Gold frequency needed for a class of its own in the validation mapping.
    pub min_class_count: usize,
    /// Token types rarer than this map to the unknown token.
    pub min_token_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            batch_scenes: 24,
            chunk_len: 757,
            max_epochs: 50,
            patience: 5,
            folds: 5,
            seed: 0,
            min_class_count: 3,
            min_token_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_scenes == 0 || self.chunk_len == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "batch_scenes, chunk_len and max_epochs must be at least 1",
            ));
        }
        if self.folds < 2 {
            return Err(Error::config(format!(
                "folds = {} (need at least 2)",
                self.folds
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Loss of one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub loss: Var,
    /// Mentions that entered the loss.
    pub mentions: usize,
    /// Set when no mention had an in-vocabulary gold; the loss is then a
    /// constant zero.
    pub empty: bool,
}

/// Mean negative log-likelihood of the gold entity over the batch's mentions.
/// Mentions without an in-vocabulary gold are left out.
pub fn chunk_loss(tape: &mut Tape, out: &BatchOutput) -> Result<BatchLoss> {
    let (rows, golds): (Vec<usize>, Vec<usize>) = out
        .mentions
        .iter()
        .enumerate()
        .filter_map(|(r, (_, m))| m.gold.map(|g| (r, g)))
        .unzip();
    let Some(probs) = out.probs.filter(|_| !rows.is_empty()) else {
        return Ok(BatchLoss {
            loss: tape.constant(Tensor::scalar(0.0)),
            mentions: 0,
            empty: true,
        });
    };
    let probs = if rows.len() == out.mentions.len() {
        probs
    } else {
        tape.gather_rows(probs, &rows)?
    };
    Ok(BatchLoss {
        loss: tape.nll_mean(probs, &golds)?,
        mentions: rows.len(),
        empty: false,
    })
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mention-weighted mean of the batch losses seen during the epoch.
    pub train_loss: Real,
    pub mentions: usize,
    pub empty_batches: usize,
    pub restored_rows: usize,
    pub validation_macro_f1: Option<Real>,
    pub validation_accuracy: Option<Real>,
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Evaluation-mode outputs for every gold mention of `corpus`, in corpus order.
pub fn predict_corpus(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    batch_scenes: usize,
    chunk_len: usize,
) -> Result<Vec<MentionOutput>> {
    let batches = chunk_and_batch(corpus, vocab, batch_scenes, chunk_len, None)?;
    let per_batch: Vec<Vec<MentionOutput>> = batches
        .par_iter()
        .map(|b| infer_batch(params, config, b))
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

pub fn to_prediction_set(
    outputs: &[MentionOutput],
    vocab: &Vocabulary,
    keep_probs: bool,
) -> PredictionSet {
    let entries = outputs
        .iter()
        .map(|o| Prediction {
            mention_id: o.id.clone(),
            entity: vocab
                .entities
                .item(o.predicted)
                .expect("prediction within inventory")
                .to_string(),
            probs: keep_probs.then(|| o.probs.clone()),
        })
        .collect();
    PredictionSet {
        entries,
        vocab_digest: Some(vocab.digest()),
    }
}

/// Scores `params` on `corpus` under the all-entities mapping built from the
/// corpus's own gold labels. Gold entities outside the vocabulary count as
/// errors.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    train: &TrainConfig,
) -> Result<EvalReport> {
    let outputs = predict_corpus(
        params,
        config,
        corpus,
        vocab,
        train.batch_scenes,
        train.chunk_len,
    )?;
    let preds = to_prediction_set(&outputs, vocab, false);
    let golds = golds_of(corpus);
    let mapping = build_all_entities_mapping(&golds, train.min_class_count);
    let opts = ScoreOptions {
        known_entities: Some(
            vocab
                .entities
                .items()
                .iter()
                .cloned()
                .collect::<HashSet<String>>(),
        ),
        ..Default::default()
    };
    score_with(&preds, &golds, &mapping, &opts)
}

/// Evaluation-mode mean mention loss over `corpus` (in-vocabulary golds only).
pub fn evaluate_loss(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    train: &TrainConfig,
) -> Result<Real> {
    let outputs = predict_corpus(
        params,
        config,
        corpus,
        vocab,
        train.batch_scenes,
        train.chunk_len,
    )?;
    let (sum, n) = outputs
        .iter()
        .filter_map(|o| {
            o.gold
                .map(|g| -o.probs[g].max(crate::autodiff::NLL_FLOOR).ln())
        })
        .fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as Real })
}

/// Trains a fresh model on `corpus`.
///
/// Each epoch shuffles the scenes, then takes one Adam step per batch on the
/// mean mention loss over every parameter array. With a validation corpus the
/// run stops once the validation macro-F1 has not improved for `patience`
/// epochs and the best epoch's parameters are returned; without one, all
/// `max_epochs` epochs run and the last parameters are returned.
pub fn train(
    corpus: &Corpus,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    validation: Option<&Corpus>,
    pretrained: Option<&Tensor>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    let params = init_params(model_config, vocab, pretrained, model_config.seed)?;
    train_from(
        params,
        corpus,
        vocab,
        model_config,
        train_config,
        validation,
    )
}

/// Like [`train`], starting from the given parameters.
pub fn train_from(
    mut params: ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    validation: Option<&Corpus>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    model_config.validate()?;
    if params.variant() != model_config.variant {
        return Err(Error::config(
            "parameters do not match the configured variant",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut adam = AdamState::new(params.groups().into_iter().map(|(_, t)| t));
    let mut history = Vec::new();
    let mut best: Option<(Real, usize, ModelParams)> = None;

    for epoch in 1..=train_config.max_epochs {
        let batches = chunk_and_batch(
            corpus,
            vocab,
            train_config.batch_scenes,
            train_config.chunk_len,
            Some(&mut rng),
        )?;
        let mut record = EpochRecord {
            epoch,
            train_loss: 0.0,
            mentions: 0,
            empty_batches: 0,
            restored_rows: 0,
            validation_macro_f1: None,
            validation_accuracy: None,
        };
        let mut loss_sum = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let out = forward_batch(&mut tape, &vars, batch, model_config, true, &mut rng)?;
            let bl = chunk_loss(&mut tape, &out)?;
            if bl.empty {
                record.empty_batches += 1;
                log::debug!("epoch {epoch}: batch without trainable mentions skipped");
                continue;
            }
            let value = tape.value(bl.loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}: batch loss is {value} after {} mentions",
                    record.mentions
                )));
            }
            tape.backward(bl.loss)?;
            let order = vars.in_order();
            let grads: Vec<&Tensor> = order
                .iter()
                .map(|&v| tape.grad(v).expect("every parameter receives a gradient"))
                .collect();
            if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}: non-finite gradient for {}",
                    params.groups()[i].0
                )));
            }
            let previous_lib = params.entity_lib.clone();
            {
                let mut groups = params.groups_mut();
                let mut slots: Vec<&mut Tensor> =
                    groups.iter_mut().map(|(_, t)| &mut **t).collect();
                adam_step(&mut slots, &grads, &mut adam, train_config.learning_rate)?;
            }
            record.restored_rows += params.guard_entity_rows(previous_lib.as_ref());
            loss_sum += value * bl.mentions as Real;
            record.mentions += bl.mentions;
        }
        if record.mentions > 0 {
            record.train_loss = loss_sum / record.mentions as Real;
        }

        let mut stop = false;
        if let Some(val) = validation {
            let report = evaluate(&params, model_config, val, vocab, train_config)?;
            record.validation_macro_f1 = Some(report.macro_f1);
            record.validation_accuracy = Some(report.accuracy);
            match &best {
                Some((m, _, _)) if report.macro_f1 <= *m => {}
                _ => best = Some((report.macro_f1, epoch, params.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            stop = epoch - best_epoch >= train_config.patience;
        }
        log::info!(
            "epoch {epoch}: loss {:.6} over {} mentions{}",
            record.train_loss,
            record.mentions,
            record
                .validation_macro_f1
                .map_or(String::new(), |f| format!(", validation macro-F1 {f:.4}"))
        );
        history.push(record);
        if stop {
            break;
        }
    }

    let (epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (history.len(), params),
    };
    let checkpoint = Checkpoint {
        model_config: model_config.clone(),
        vocab: vocab.clone(),
        params,
        meta: TrainingMeta {
            epoch,
            seed: train_config.seed,
            train_config: Some(train_config.clone()),
            history: history.clone(),
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}
