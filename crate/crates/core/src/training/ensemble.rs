use rayon::prelude::*;

use super::{predict_corpus, Checkpoint, TrainConfig};
use crate::corpus::{Corpus, Vocabulary};
use crate::evaluation::{Prediction, PredictionSet};
use crate::model::{predict, ModelConfig};
use crate::{Error, Real, Result};

/// Checkpoints whose output distributions are averaged.
#[derive(Clone, Debug)]
pub struct EnsembleModel {
    members: Vec<Checkpoint>,
}

fn without_seed(c: &ModelConfig) -> ModelConfig {
    ModelConfig {
        seed: 0,
        ..c.clone()
    }
}

impl EnsembleModel {
    /// Members must share the vocabulary and the model configuration (seeds
    /// aside).
    pub fn new(members: Vec<Checkpoint>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::config("an ensemble needs at least one member"))?;
        let digest = first.vocab_digest();
        let config = without_seed(&first.model_config);
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.vocab_digest() != digest {
                return Err(Error::config(format!(
                    "member {i} has vocabulary digest {} but member 0 has {digest}",
                    m.vocab_digest()
                )));
            }
            if without_seed(&m.model_config) != config {
                return Err(Error::config(format!(
                    "member {i} has a different model configuration"
                )));
            }
        }
        Ok(EnsembleModel { members })
    }

    pub fn members(&self) -> &[Checkpoint] {
        &self.members
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.members[0].vocab
    }
}

/// Order-independent mean: values are sorted before a running mean, so equal
/// inputs give that value exactly.
fn mean(values: &mut [Real]) -> Real {
    values.sort_by(|a, b| a.total_cmp(b));
    let mut m = 0.0;
    for (k, v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as Real;
    }
    m
}

/// Per mention, the arithmetic mean of the members' distributions, and its
/// argmax (lowest index on ties).
pub fn ensemble_predict(
    ensemble: &EnsembleModel,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<PredictionSet> {
    let theirs = ensemble.vocab().digest();
    let ours = vocab.digest();
    if theirs != ours {
        return Err(Error::config(format!(
            "ensemble vocabulary digest {theirs} differs from the run's {ours}"
        )));
    }
    let defaults = TrainConfig::default();
    let outputs = ensemble
        .members
        .par_iter()
        .map(|m| {
            let tc = m.meta.train_config.as_ref().unwrap_or(&defaults);
            predict_corpus(
                &m.params,
                &m.model_config,
                corpus,
                vocab,
                tc.batch_scenes,
                tc.chunk_len,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let first = &outputs[0];
    let mut entries = Vec::with_capacity(first.len());
    for (i, o) in first.iter().enumerate() {
        let mut avg = Vec::with_capacity(o.probs.len());
        let mut column = Vec::with_capacity(outputs.len());
        for j in 0..o.probs.len() {
            column.clear();
            for member in &outputs {
                debug_assert_eq!(member[i].id, o.id);
                column.push(member[i].probs[j]);
            }
            avg.push(mean(&mut column));
        }
        let best = predict(&avg);
        entries.push(Prediction {
            mention_id: o.id.clone(),
            entity: vocab
                .entities
                .item(best)
                .expect("within inventory")
                .to_string(),
            probs: Some(avg),
        });
    }
    Ok(PredictionSet {
        entries,
        vocab_digest: Some(ours),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synth_corpus, SynthConfig};
    use crate::model::{init_params, Variant};
    use crate::training::{to_prediction_set, TrainingMeta};

    fn member(seed: u64, corpus: &Corpus) -> Checkpoint {
        let vocab = build_vocab(corpus, 1);
        let model_config = ModelConfig {
            token_dim: 3,
            entity_dim: 3,
            lstm_dim: 3,
            variant: Variant::EntLib,
            seed,
            ..Default::default()
        };
        let params = init_params(&model_config, &vocab, None, seed).unwrap();
        Checkpoint {
            model_config,
            vocab,
            params,
            meta: TrainingMeta {
                epoch: 0,
                seed,
                train_config: None,
                history: vec![],
            },
        }
    }

    fn corpus() -> Corpus {
        synth_corpus(
            &SynthConfig {
                entities: 4,
                scenes: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn hand_average_and_tie_break() {
        let mut a = vec![0.8, 0.2];
        let mut b = vec![0.2, 0.8];
        let avg: Vec<Real> = (0..2).map(|j| mean(&mut [a[j], b[j]])).collect();
        assert!((avg[0] - 0.5).abs() < 1e-15 && avg[0] == avg[1]);
        assert_eq!(predict(&avg), 0);
        a.swap(0, 1);
        b.swap(0, 1);
        assert_eq!(mean(&mut [0.3; 5]), 0.3);
    }

    #[test]
    fn singleton_and_identical_members_match_the_single_model() {
        let c = corpus();
        let m = member(1, &c);
        let vocab = m.vocab.clone();
        let single = to_prediction_set(
            &predict_corpus(&m.params, &m.model_config, &c, &vocab, 24, 757).unwrap(),
            &vocab,
            true,
        );
        let one =
            ensemble_predict(&EnsembleModel::new(vec![m.clone()]).unwrap(), &c, &vocab).unwrap();
        assert_eq!(one, single);
        let five =
            ensemble_predict(&EnsembleModel::new(vec![m.clone(); 5]).unwrap(), &c, &vocab).unwrap();
        assert_eq!(five, single);
    }

    #[test]
    fn member_order_does_not_matter() {
        let c = corpus();
        let ms: Vec<Checkpoint> = (0..4).map(|s| member(s, &c)).collect();
        let vocab = ms[0].vocab.clone();
        let fwd = ensemble_predict(&EnsembleModel::new(ms.clone()).unwrap(), &c, &vocab).unwrap();
        let mut rev = ms;
        rev.reverse();
        rev.swap(0, 2);
        let back = ensemble_predict(&EnsembleModel::new(rev).unwrap(), &c, &vocab).unwrap();
        assert_eq!(fwd, back);
        for p in &fwd.entries {
            let s: Real = p.probs.as_ref().unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_members_are_refused() {
        let c = corpus();
        let a = member(0, &c);
        let mut other = synth_corpus(
            &SynthConfig {
                entities: 5,
                scenes: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        other.scenes.truncate(2);
        let b = member(0, &other);
        assert!(matches!(
            EnsembleModel::new(vec![a.clone(), b.clone()]),
            Err(Error::Config(_))
        ));
        assert!(EnsembleModel::new(vec![]).is_err());
        let e = EnsembleModel::new(vec![a]).unwrap();
        assert!(matches!(
            ensemble_predict(&e, &c, &b.vocab),
            Err(Error::Config(_))
        ));
    }
}
