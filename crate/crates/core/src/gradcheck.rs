//! Finite-difference audit of the composed model's gradients.

use serde::Serialize;

use crate::autodiff::Tape;
use crate::corpus::{build_vocab, chunk_and_batch, parse_corpus_str, Batch};
use crate::model::{forward_batch, init_params, ModelConfig, ModelParams, Variant};
use crate::{Error, Real, Result};

const FIXTURE: &str =
    "#scene g1\n#speakers A\nI\tE:a\tPRP\nlike\t-\nyour\tB:b\nsister\tE:b\tNN\n\n\
#speakers B,C\nyou\tE:a\tPRP\nand\t-\nBob\tE:c\tNNP\n\n\
#scene g2\n#speakers C\nhey\t-\nme\tE:c\tPRP\n\n";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub step: Real,
    pub tolerance: Real,
    /// Gradients smaller than this in both the analytic and numeric estimate
    /// are compared in absolute terms.
    pub floor: Real,
    pub seed: u64,
    /// Perturbs the analytic gradient of the named group (negative control).
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub values: usize,
    pub max_rel_error: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub tolerance: Real,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_error <= self.tolerance))
            .map(|g| g.name.as_str())
            .collect()
    }
}

/// The tiny model used by the audit: token_dim 4, k 3, d 5, three entities.
pub fn tiny_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        token_dim: 4,
        entity_dim: 3,
        lstm_dim: 5,
        variant,
        dropout_input: 0.0,
        dropout_hidden: 0.0,
        seed,
        ..Default::default()
    }
}

fn loss(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    golds: &[usize],
) -> Result<(Tape, crate::autodiff::Var, Vec<crate::autodiff::Var>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = forward_batch(&mut tape, &vars, batch, config, false, &mut rng)?;
    let probs = out
        .probs
        .ok_or_else(|| Error::data("fixture has no mentions"))?;
    let l = tape.nll_mean(probs, golds)?;
    Ok((tape, l, vars.in_order()))
}

/// Compares backpropagated gradients of the mean mention loss against central
/// differences for every value of every parameter group. The per-value error
/// is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(variant: Variant, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let corpus = parse_corpus_str(FIXTURE)?;
    let vocab = build_vocab(&corpus, 1);
    let config = tiny_config(variant, cfg.seed);
    let mut params = init_params(&config, &vocab, None, cfg.seed)?;
    let batches = chunk_and_batch(&corpus, &vocab, 2, 757, None)?;
    let batch = &batches[0];
    let golds: Vec<usize> = batch
        .chunks
        .iter()
        .flat_map(|c| {
            c.mentions
                .iter()
                .map(|m| m.gold.expect("fixture entities are in vocabulary"))
        })
        .collect();

    let (mut tape, l, vars) = loss(&params, &config, batch, &golds)?;
    tape.backward(l)?;
    let mut analytic: Vec<Vec<Real>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameter gradient").data().to_vec())
        .collect();
    let names: Vec<&'static str> = params.groups().iter().map(|(n, _)| *n).collect();
    if let Some(target) = &cfg.corrupt {
        let gi = names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::config(format!("no parameter group named '{target}'")))?;
        analytic[gi][0] += 1e-2 * (1.0 + analytic[gi][0].abs());
    }

    let eval = |p: &ModelParams| -> Result<Real> {
        Ok(loss(p, &config, batch, &golds)?.0.value(l).item())
    };
    let mut groups = Vec::with_capacity(names.len());
    for (gi, name) in names.iter().enumerate() {
        let n = params.groups()[gi].1.len();
        let mut worst: Real = 0.0;
        for j in 0..n {
            let orig = params.groups()[gi].1.data()[j];
            params.groups_mut()[gi].1.data_mut()[j] = orig + cfg.step;
            let up = eval(&params)?;
            params.groups_mut()[gi].1.data_mut()[j] = orig - cfg.step;
            let down = eval(&params)?;
            params.groups_mut()[gi].1.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[gi][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if !(err <= worst) {
                worst = err;
            }
        }
        groups.push(GroupResult {
            name: name.to_string(),
            values: n,
            max_rel_error: worst,
        });
    }
    Ok(GradcheckReport {
        variant,
        tolerance: cfg.tolerance,
        groups,
    })
}

#[cfg(all(test, not(feature = "single")))]
mod tests {
    use super::*;
    use crate::model::GROUP_NAMES;

    #[test]
    fn both_variants_pass() {
        for variant in [Variant::EntLib, Variant::NoEntLib] {
            let r = gradcheck(variant, &GradcheckConfig::default()).unwrap();
            assert!(r.passed(), "{r:#?}");
            let expected = if variant == Variant::EntLib { 11 } else { 10 };
            assert_eq!(r.groups.len(), expected);
            for (g, name) in r.groups.iter().zip(GROUP_NAMES) {
                assert_eq!(g.name, name);
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let cfg = GradcheckConfig {
            corrupt: Some("lstm_bwd.w_hidden".into()),
            ..Default::default()
        };
        let r = gradcheck(Variant::EntLib, &cfg).unwrap();
        assert_eq!(r.failures(), vec!["lstm_bwd.w_hidden"]);
        assert!(gradcheck(
            Variant::EntLib,
            &GradcheckConfig {
                corrupt: Some("nope".into()),
                ..Default::default()
            }
        )
        .is_err());
    }
}
