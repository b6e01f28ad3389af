//! Encoder and scoring heads.
//!
//! Each token is embedded as the concatenation of its word vector and the sum
//! of its speakers' vectors, squashed by the input activation and fed to a
//! bidirectional LSTM. At the last token of every mention the concatenated
//! hidden state is mapped either to a query that is compared by cosine against
//! the learned entity library (`EntLib`), or directly to class logits
//! (`NoEntLib`). A softmax gives the distribution over entities.

mod forward;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::Vocabulary;
use crate::{Error, Real, Result};

pub use forward::{forward_batch, forward_chunk, infer_batch, BatchOutput, MentionOutput};
pub use layers::{bilstm_forward, embed_input, lstm_scan, predict, score_mentions, BiStates};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Cosine retrieval against the entity library.
    EntLib,
    /// Linear map straight to entity logits.
    NoEntLib,
}

/// Input activation applied to the concatenated embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub token_dim: usize,
    /// Width of speaker embeddings and entity vectors.
    pub entity_dim: usize,
    /// LSTM state width per direction.
    pub lstm_dim: usize,
    pub variant: Variant,
    pub activation: Activation,
    pub dropout_input: Real,
    pub dropout_hidden: Real,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            token_dim: 300,
            entity_dim: 134,
            lstm_dim: 459,
            variant: Variant::EntLib,
            activation: Activation::Tanh,
            dropout_input: 0.008,
            dropout_hidden: 0.0013,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.token_dim + self.entity_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.entity_dim == 0 || self.lstm_dim == 0 {
            return Err(Error::config("model dimensions must be at least 1"));
        }
        for (name, r) in [
            ("dropout_input", self.dropout_input),
            ("dropout_hidden", self.dropout_hidden),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("{name} = {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Weights of one LSTM direction. Gate blocks are laid out `[i | f | g | o]`
/// along the last axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `input_dim × 4d`
    pub w_input: Tensor,
    /// `d × 4d`
    pub w_hidden: Tensor,
    /// `4d`
    pub bias: Tensor,
}

impl LstmParams {
    fn init(input: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_input = Tensor::glorot_uniform(&[input, 4 * d], input, 4 * d, rng);
        let w_hidden = Tensor::glorot_uniform(&[d, 4 * d], d, 4 * d, rng);
        let mut bias = Tensor::zeros(&[4 * d]);
        bias.data_mut()[d..2 * d].iter_mut().for_each(|b| *b = 1.0);
        LstmParams {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `|V| × token_dim`
    pub token_emb: Tensor,
    /// `|S| × k`
    pub speaker_emb: Tensor,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `2d × k` (EntLib) or `2d × N` (NoEntLib)
    pub w_out: Tensor,
    pub b_out: Tensor,
    /// `N × k`, EntLib only.
    pub entity_lib: Option<Tensor>,
}

/// Names of the parameter arrays in their canonical order.
pub const GROUP_NAMES: [&str; 11] = [
    "W_t",
    "W_s",
    "lstm_fwd.w_input",
    "lstm_fwd.w_hidden",
    "lstm_fwd.bias",
    "lstm_bwd.w_input",
    "lstm_bwd.w_hidden",
    "lstm_bwd.bias",
    "W_o",
    "b",
    "E",
];

impl ModelParams {
    /// All arrays with their names, in canonical order.
    pub fn groups(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v: Vec<(&'static str, &Tensor)> = vec![
            (GROUP_NAMES[0], &self.token_emb),
            (GROUP_NAMES[1], &self.speaker_emb),
            (GROUP_NAMES[2], &self.forward.w_input),
            (GROUP_NAMES[3], &self.forward.w_hidden),
            (GROUP_NAMES[4], &self.forward.bias),
            (GROUP_NAMES[5], &self.backward.w_input),
            (GROUP_NAMES[6], &self.backward.w_hidden),
            (GROUP_NAMES[7], &self.backward.bias),
            (GROUP_NAMES[8], &self.w_out),
            (GROUP_NAMES[9], &self.b_out),
        ];
        if let Some(e) = &self.entity_lib {
            v.push((GROUP_NAMES[10], e));
        }
        v
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v: Vec<(&'static str, &mut Tensor)> = vec![
            (GROUP_NAMES[0], &mut self.token_emb),
            (GROUP_NAMES[1], &mut self.speaker_emb),
            (GROUP_NAMES[2], &mut self.forward.w_input),
            (GROUP_NAMES[3], &mut self.forward.w_hidden),
            (GROUP_NAMES[4], &mut self.forward.bias),
            (GROUP_NAMES[5], &mut self.backward.w_input),
            (GROUP_NAMES[6], &mut self.backward.w_hidden),
            (GROUP_NAMES[7], &mut self.backward.bias),
            (GROUP_NAMES[8], &mut self.w_out),
            (GROUP_NAMES[9], &mut self.b_out),
        ];
        if let Some(e) = &mut self.entity_lib {
            v.push((GROUP_NAMES[10], e));
        }
        v
    }

    pub fn num_values(&self) -> usize {
        self.groups().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn variant(&self) -> Variant {
        if self.entity_lib.is_some() {
            Variant::EntLib
        } else {
            Variant::NoEntLib
        }
    }

    pub fn num_entities(&self) -> usize {
        match &self.entity_lib {
            Some(e) => e.rows(),
            None => self.w_out.cols(),
        }
    }

    /// Restores every entity-library row whose norm collapsed below `1e-12`
    /// (or became non-finite) to its value in `previous`, the library before
    /// the update. Returns the number of rows restored.
    pub fn guard_entity_rows(&mut self, previous: Option<&Tensor>) -> usize {
        let (Some(lib), Some(prev)) = (&mut self.entity_lib, previous) else {
            return 0;
        };
        let mut restored = 0;
        for r in 0..lib.rows() {
            let n2: Real = lib.row(r).iter().map(|v| v * v).sum();
            if !(n2.sqrt() >= 1e-12) {
                lib.row_mut(r).copy_from_slice(prev.row(r));
                restored += 1;
            }
        }
        restored
    }

    /// Records every array on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, true)
    }

    /// Records every array on `tape` as a constant (inference).
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut lstm = |p: &LstmParams| LstmVars {
            w_input: leaf(&p.w_input),
            w_hidden: leaf(&p.w_hidden),
            bias: leaf(&p.bias),
            hidden_dim: p.hidden_dim(),
        };
        let forward = lstm(&self.forward);
        let backward = lstm(&self.backward);
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamVars {
            token_emb: leaf(&self.token_emb),
            speaker_emb: leaf(&self.speaker_emb),
            forward,
            backward,
            w_out: leaf(&self.w_out),
            b_out: leaf(&self.b_out),
            entity_lib: self.entity_lib.as_ref().map(leaf),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden_dim: usize,
}

/// Tape handles for every parameter array.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub token_emb: Var,
    pub speaker_emb: Var,
    pub forward: LstmVars,
    pub backward: LstmVars,
    pub w_out: Var,
    pub b_out: Var,
    pub entity_lib: Option<Var>,
}

impl ParamVars {
    /// Handles in the order of [`ModelParams::groups`].
    pub fn in_order(&self) -> Vec<Var> {
        let mut v = vec![
            self.token_emb,
            self.speaker_emb,
            self.forward.w_input,
            self.forward.w_hidden,
            self.forward.bias,
            self.backward.w_input,
            self.backward.w_hidden,
            self.backward.bias,
            self.w_out,
            self.b_out,
        ];
        v.extend(self.entity_lib);
        v
    }
}

/// Samples a fresh parameter set.
///
/// Token embeddings come from `pretrained` when given (it must have one row per
/// vocabulary token); every other array is uniform in `[-a, a]` with
/// `a = sqrt(6 / (fan_in + fan_out))`. LSTM biases start at zero except the
/// forget gate, which starts at one. Entity-library rows are redrawn until
/// their norm is positive.
pub fn init_params(
    config: &ModelConfig,
    vocab: &Vocabulary,
    pretrained: Option<&Tensor>,
    seed: u64,
) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab.tokens.len();
    let s = vocab.speakers.len();
    let n = vocab.num_entities();
    let (k, d) = (config.entity_dim, config.lstm_dim);
    if n == 0 {
        return Err(Error::config("vocabulary has no entities"));
    }

    let random_tokens =
        Tensor::glorot_uniform(&[v, config.token_dim], v, config.token_dim, &mut rng);
    let token_emb = match pretrained {
        Some(p) if p.shape() != [v, config.token_dim] => {
            return Err(Error::config(format!(
                "pretrained matrix {:?} does not match vocabulary {}×{}",
                p.shape(),
                v,
                config.token_dim
            )))
        }
        Some(p) => p.clone(),
        None => random_tokens,
    };
    let speaker_emb = Tensor::glorot_uniform(&[s, k], s, k, &mut rng);
    let forward = LstmParams::init(config.input_dim(), d, &mut rng);
    let backward = LstmParams::init(config.input_dim(), d, &mut rng);
    let out_dim = match config.variant {
        Variant::EntLib => k,
        Variant::NoEntLib => n,
    };
    let w_out = Tensor::glorot_uniform(&[2 * d, out_dim], 2 * d, out_dim, &mut rng);
    let b_out = Tensor::glorot_uniform(&[out_dim], 2 * d, out_dim, &mut rng);
    let entity_lib = match config.variant {
        Variant::EntLib => {
            let mut e = Tensor::glorot_uniform(&[n, k], n, k, &mut rng);
            let bound = crate::autodiff::glorot_bound(n, k);
            for r in 0..n {
                while e.row(r).iter().all(|&x| x == 0.0) {
                    let fresh = Tensor::uniform(&[k], bound, &mut rng);
                    e.row_mut(r).copy_from_slice(fresh.data());
                }
            }
            Some(e)
        }
        Variant::NoEntLib => None,
    };
    Ok(ModelParams {
        token_emb,
        speaker_emb,
        forward,
        backward,
        w_out,
        b_out,
        entity_lib,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, parse_corpus_str};

    pub(crate) fn toy_vocab() -> Vocabulary {
        let text = "#scene a\n#speakers A\nI\tE:1\tPRP\nsaw\t-\nyou\tE:2\tPRP\n\n#speakers B\nBob\tE:3\tNNP\n\n";
        build_vocab(&parse_corpus_str(text).unwrap(), 1)
    }

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            token_dim: 4,
            entity_dim: 3,
            lstm_dim: 5,
            variant,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_params() {
        let v = toy_vocab();
        let a = init_params(&tiny(Variant::EntLib), &v, None, 9).unwrap();
        let b = init_params(&tiny(Variant::EntLib), &v, None, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&tiny(Variant::EntLib), &v, None, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let v = toy_vocab();
        let cfg = tiny(Variant::EntLib);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pre = Tensor::uniform(&[v.tokens.len(), 4], 1.0, &mut rng);
        let p = init_params(&cfg, &v, Some(&pre), 3).unwrap();
        assert_eq!(p.token_emb, pre);
        let wrong = Tensor::zeros(&[v.tokens.len() + 1, 4]);
        assert!(matches!(
            init_params(&cfg, &v, Some(&wrong), 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn entity_rows_nonzero_over_many_seeds() {
        let v = toy_vocab();
        let cfg = tiny(Variant::EntLib);
        for seed in 0..1000 {
            let p = init_params(&cfg, &v, None, seed).unwrap();
            let e = p.entity_lib.unwrap();
            for r in 0..e.rows() {
                assert!(e.row(r).iter().map(|x| x * x).sum::<Real>() > 0.0);
            }
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let p = init_params(&tiny(Variant::NoEntLib), &toy_vocab(), None, 0).unwrap();
        let b = p.forward.bias.data();
        assert!(b[..5].iter().all(|&x| x == 0.0));
        assert!(b[5..10].iter().all(|&x| x == 1.0));
        assert!(b[10..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parameter_count_formula() {
        let v = toy_vocab();
        let (vs, ss, n) = (v.tokens.len(), v.speakers.len(), v.num_entities());
        for variant in [Variant::EntLib, Variant::NoEntLib] {
            let cfg = ModelConfig {
                token_dim: 300,
                entity_dim: 134,
                lstm_dim: 7,
                variant,
                ..Default::default()
            };
            let p = init_params(&cfg, &v, None, 0).unwrap();
            let (k, d) = (134, 7);
            let lstm = 2 * (4 * (d * 434 + d * d + d));
            let head = match variant {
                Variant::EntLib => 2 * d * k + k + n * k,
                Variant::NoEntLib => 2 * d * n + n,
            };
            assert_eq!(p.num_values(), vs * 300 + ss * k + lstm + head);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.input_dim(), 434);
        c.dropout_hidden = 1.0;
        assert!(c.validate().is_err());
        c = ModelConfig {
            lstm_dim: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn guard_restores_collapsed_rows() {
        let v = toy_vocab();
        let before = init_params(&tiny(Variant::EntLib), &v, None, 0).unwrap();
        let mut after = before.clone();
        after.entity_lib.as_mut().unwrap().row_mut(1).fill(0.0);
        assert_eq!(after.guard_entity_rows(before.entity_lib.as_ref()), 1);
        assert_eq!(after, before);
    }
}
