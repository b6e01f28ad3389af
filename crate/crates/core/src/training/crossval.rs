use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, Checkpoint, EpochRecord, TrainConfig};
use crate::autodiff::Tensor;
use crate::corpus::{Corpus, Vocabulary};
use crate::evaluation::EvalReport;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Scene ids of every fold, as used by a cross-validation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }
}

/// Partitions `0..n` into `folds` parts: a seeded shuffle, then round-robin
/// assignment, so part sizes differ by at most one and larger parts come first.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::config(format!("folds = {folds} (need at least 2)")));
    }
    if folds > n {
        return Err(Error::config(format!(
            "{folds} folds requested for {n} scenes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = vec![Vec::new(); folds];
    for (i, s) in order.into_iter().enumerate() {
        parts[i % folds].push(s);
    }
    Ok(parts)
}

pub struct FoldResult {
    pub fold: usize,
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    pub history: Vec<EpochRecord>,
}

pub struct CrossvalOutcome {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldResult>,
}

/// Trains one model per fold on the other folds and validates it on its own.
/// All folds share `vocab`, so the resulting checkpoints can form an
/// ensemble. Fold `f` uses seeds offset by `f`. Folds train in parallel.
pub fn crossval(
    corpus: &Corpus,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    pretrained: Option<&Tensor>,
) -> Result<CrossvalOutcome> {
    train_config.validate()?;
    let parts = assign_folds(corpus.scenes.len(), train_config.folds, train_config.seed)?;
    let assignment = FoldAssignment {
        seed: train_config.seed,
        folds: parts
            .iter()
            .map(|p| p.iter().map(|&i| corpus.scenes[i].id.clone()).collect())
            .collect(),
    };
    let folds = (0..parts.len())
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let train_part = corpus.select(&train_idx);
            let held_out = corpus.select(&parts[f]);
            let mc = ModelConfig {
                seed: model_config.seed.wrapping_add(f as u64),
                ..model_config.clone()
            };
            let tc = TrainConfig {
                seed: train_config.seed.wrapping_add(f as u64),
                ..train_config.clone()
            };
            let out = train(&train_part, vocab, &mc, &tc, Some(&held_out), pretrained)?;
            let report = evaluate(&out.checkpoint.params, &mc, &held_out, vocab, &tc)?;
            log::info!("fold {f}: validation macro-F1 {:.4}", report.macro_f1);
            Ok(FoldResult {
                fold: f,
                checkpoint: out.checkpoint,
                report,
                history: out.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossvalOutcome { assignment, folds })
}
