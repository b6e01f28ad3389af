use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{align, confusion, macro_f1, ClassMapping, Gold, PredictionSet, ScoreOptions};
use crate::{Error, Real, Result};

/// Permutations drawn from one generator stream.
const BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    MacroF1,
    Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigTestResult {
    pub statistic: Statistic,
    pub metric_a: Real,
    pub metric_b: Real,
    pub observed_diff: Real,
    pub permutations: usize,
    /// Permutations whose difference reached the observed one.
    pub at_least_as_extreme: usize,
    pub p_value: Real,
    pub seed: u64,
}

struct Rows {
    n_classes: usize,
    skip: Option<usize>,
    statistic: Statistic,
    a: Vec<(usize, usize, bool)>,
    b: Vec<(usize, usize, bool)>,
}

impl Rows {
    fn metric(&self, rows: impl Iterator<Item = (usize, usize, bool)>) -> Real {
        let (counts, correct, total) = confusion(self.n_classes, rows);
        match self.statistic {
            Statistic::MacroF1 => macro_f1(&counts, self.skip),
            Statistic::Accuracy if total == 0 => 0.0,
            Statistic::Accuracy => correct as Real / total as Real,
        }
    }

    /// `|metric(A') - metric(B')|` where mention `i` is swapped iff `swap[i]`.
    fn diff(&self, swap: &[bool]) -> Real {
        let pick = |first: bool| {
            (0..self.a.len()).map(move |i| {
                if swap[i] == first {
                    self.b[i]
                } else {
                    self.a[i]
                }
            })
        };
        (self.metric(pick(true)) - self.metric(pick(false))).abs()
    }
}

/// Approximate randomization test on the difference of a metric between two
/// systems. Each of `permutations` trials swaps the two systems' predictions
/// per mention with probability 1/2; `p = (c + 1) / (R + 1)` where `c` counts
/// trials at least as extreme as the observed difference. Trials are split in
/// fixed blocks, each with its own generator stream, so the result depends only
/// on `seed`.
pub fn approx_randomization(
    preds_a: &PredictionSet,
    preds_b: &PredictionSet,
    golds: &[Gold],
    mapping: &ClassMapping,
    opts: &ScoreOptions,
    permutations: usize,
    seed: u64,
    statistic: Statistic,
) -> Result<SigTestResult> {
    if permutations < 1 {
        return Err(Error::config(
            "approximate randomization needs at least one permutation",
        ));
    }
    let rows = Rows {
        n_classes: mapping.len(),
        skip: if opts.exclude_catch_all {
            mapping.catch_all
        } else {
            None
        },
        statistic,
        a: align(preds_a, golds, mapping, opts)?,
        b: align(preds_b, golds, mapping, opts)?,
    };
    let metric_a = rows.metric(rows.a.iter().copied());
    let metric_b = rows.metric(rows.b.iter().copied());
    let observed = (metric_a - metric_b).abs();
    // Guards against ties lost to rounding in the recomputed metrics.
    let threshold = observed - 1e-12;
    let m = golds.len();

    let blocks = permutations.div_ceil(BLOCK);
    let count: usize = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(blk as u64);
            let n = BLOCK.min(permutations - blk * BLOCK);
            let mut swap = vec![false; m];
            let mut hits = 0;
            for _ in 0..n {
                swap.iter_mut().for_each(|s| *s = rng.gen::<bool>());
                if rows.diff(&swap) >= threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum();

    Ok(SigTestResult {
        statistic,
        metric_a,
        metric_b,
        observed_diff: observed,
        permutations,
        at_least_as_extreme: count,
        p_value: (count + 1) as Real / (permutations + 1) as Real,
        seed,
    })
}
