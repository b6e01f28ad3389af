use rand::Rng;

use super::{Activation, LstmVars, ModelConfig, ParamVars, Variant};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// Embeds a sequence of positions, one output row per position: the token
/// vector concatenated with the sum of the speaker vectors, then input dropout
/// (training only) and the input activation.
pub fn embed_input<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ParamVars,
    tokens: &[usize],
    speakers: &[Vec<usize>],
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if tokens.len() != speakers.len() {
        return Err(Error::shape(format!(
            "{} tokens but {} speaker sets",
            tokens.len(),
            speakers.len()
        )));
    }
    if let Some(i) = speakers.iter().position(Vec::is_empty) {
        return Err(Error::data(format!("position {i} has no speaker")));
    }
    let words = tape.gather_rows(vars.token_emb, tokens)?;
    let who = tape.sum_rows(vars.speaker_emb, speakers.to_vec())?;
    let x = tape.concat_cols(&[words, who])?;
    let x = tape.dropout(x, config.dropout_input, training, rng)?;
    Ok(match config.activation {
        Activation::Tanh => tape.tanh(x),
    })
}

/// One LSTM direction over a time-major sequence.
///
/// `projected` holds the input projections `x_t W_input` for all steps,
/// stacked as `(steps · batch) × 4d` with row `t · batch + b`. Rows whose mask
/// entry is false carry the previous state through unchanged. Returns the
/// hidden state after every step (`batch × d` each), indexed by time step
/// regardless of the scan direction.
pub fn lstm_scan(
    tape: &mut Tape,
    p: &LstmVars,
    projected: Var,
    batch: usize,
    mask: &[bool],
    reverse: bool,
) -> Result<Vec<Var>> {
    let d = p.hidden_dim;
    if batch == 0 || mask.len() % batch != 0 || tape.value(projected).rows() != mask.len() {
        return Err(Error::shape(format!(
            "lstm_scan: {} projected rows, mask {} for batch {batch}",
            tape.value(projected).rows(),
            mask.len()
        )));
    }
    let steps = mask.len() / batch;
    let mut h = tape.constant(Tensor::zeros(&[batch, d]));
    let mut c = tape.constant(Tensor::zeros(&[batch, d]));
    let mut out = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let rows: Vec<usize> = (t * batch..(t + 1) * batch).collect();
        let m = &mask[t * batch..(t + 1) * batch];
        let xw = tape.gather_rows(projected, &rows)?;
        let hw = tape.matmul(h, p.w_hidden)?;
        let z = tape.add(xw, hw)?;
        let z = tape.add_row(z, p.bias)?;
        let zi = tape.slice_cols(z, 0, d)?;
        let zf = tape.slice_cols(z, d, d)?;
        let zg = tape.slice_cols(z, 2 * d, d)?;
        let zo = tape.slice_cols(z, 3 * d, d)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        if m.iter().all(|&x| x) {
            c = c_new;
            h = h_new;
        } else {
            c = tape.row_select(m, c_new, c)?;
            h = tape.row_select(m, h_new, h)?;
        }
        out[t] = h;
    }
    Ok(out)
}

/// Directional hidden states of a BiLSTM pass, one `batch × d` matrix per step.
#[derive(Clone, Debug)]
pub struct BiStates {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub batch: usize,
}

impl BiStates {
    /// `h_i = [forward ; backward]` for the given time-major rows
    /// (`t · batch + b`), one output row each.
    pub fn gather(&self, tape: &mut Tape, rows: &[usize]) -> Result<Var> {
        let fwd = tape.concat_rows(&self.forward)?;
        let bwd = tape.concat_rows(&self.backward)?;
        let f = tape.gather_rows(fwd, rows)?;
        let b = tape.gather_rows(bwd, rows)?;
        tape.concat_cols(&[f, b])
    }

    /// All hidden states, `(steps · batch) × 2d`.
    pub fn all(&self, tape: &mut Tape) -> Result<Var> {
        let fwd = tape.concat_rows(&self.forward)?;
        let bwd = tape.concat_rows(&self.backward)?;
        tape.concat_cols(&[fwd, bwd])
    }
}

/// Runs both directions over time-major inputs (`(steps · batch) × in`, row
/// `t · batch + b`) from zero initial states. Hidden dropout is left to the
/// caller, which applies it to the rows it scores.
pub fn bilstm_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    inputs: Var,
    batch: usize,
    mask: &[bool],
) -> Result<BiStates> {
    if mask.is_empty() {
        return Err(Error::shape("bilstm_forward needs a nonempty sequence"));
    }
    let pf = tape.matmul(inputs, vars.forward.w_input)?;
    let pb = tape.matmul(inputs, vars.backward.w_input)?;
    Ok(BiStates {
        forward: lstm_scan(tape, &vars.forward, pf, batch, mask, false)?,
        backward: lstm_scan(tape, &vars.backward, pb, batch, mask, true)?,
        batch,
    })
}

/// Maps hidden rows (`M × 2d`) to entity distributions (`M × N`).
pub fn score_mentions(tape: &mut Tape, vars: &ParamVars, h: Var, variant: Variant) -> Result<Var> {
    let z = tape.matmul(h, vars.w_out)?;
    let z = tape.add_row(z, vars.b_out)?;
    let logits = match (variant, vars.entity_lib) {
        (Variant::EntLib, Some(lib)) => tape.cosine_rows(lib, z)?,
        (Variant::NoEntLib, None) => z,
        _ => return Err(Error::config("parameters do not match the model variant")),
    };
    tape.softmax(logits)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict(probs: &[Real]) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best
}
