//! The recurrent sequence generator: a single-layer LSTM driven by the
//! previous character and context, followed by an MLP output head.

use rand_chacha::ChaCha8Rng;

use crate::attention::{attend_on, AttentionMemory, AttentionParams, AttentionScorer, AttentionState, Window};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{params, Init};

/// Single-layer LSTM without peepholes. Gate inputs are
/// `[embed(y_prev); c_prev]` (`W_*`) and the previous hidden state (`U_*`).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    /// `|V| × dec`.
    pub embed: T,
    pub w_i: T,
    pub w_f: T,
    pub w_c: T,
    pub w_o: T,
    pub u_i: T,
    pub u_f: T,
    pub u_c: T,
    pub u_o: T,
    pub b_i: T,
    pub b_f: T,
    pub b_c: T,
    pub b_o: T,
}

params!(DecoderParams {
    leaf embed, leaf w_i, leaf w_f, leaf w_c, leaf w_o,
    leaf u_i, leaf u_f, leaf u_c, leaf u_o,
    leaf b_i, leaf b_f, leaf b_c, leaf b_o,
});

/// `softmax(W_y tanh(W_h [s; c] + b_h) + b_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead<T> {
    /// `dec × (dec + enc)`.
    pub w_h: T,
    pub b_h: T,
    /// `|V| × dec`.
    pub w_y: T,
    pub b_y: T,
}

params!(OutputHead { leaf w_h, leaf b_h, leaf w_y, leaf b_y });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab: usize,
    pub dec: usize,
    pub enc: usize,
}

impl DecoderParams<Tensor> {
    pub fn init(init: &mut Init<'_>, d: DecoderDims, forget_bias: f64) -> Self {
        let x = d.dec + d.enc;
        Self {
            embed: init.uniform(&[d.vocab, d.dec]),
            w_i: init.uniform(&[d.dec, x]),
            w_f: init.uniform(&[d.dec, x]),
            w_c: init.uniform(&[d.dec, x]),
            w_o: init.uniform(&[d.dec, x]),
            u_i: init.uniform(&[d.dec, d.dec]),
            u_f: init.uniform(&[d.dec, d.dec]),
            u_c: init.uniform(&[d.dec, d.dec]),
            u_o: init.uniform(&[d.dec, d.dec]),
            b_i: init.constant(&[d.dec], 0.0),
            b_f: init.constant(&[d.dec], forget_bias),
            b_c: init.constant(&[d.dec], 0.0),
            b_o: init.constant(&[d.dec], 0.0),
        }
    }

    pub fn dims(&self) -> Result<DecoderDims> {
        let (vocab, dec) = self.embed.expect_matrix("decoder embedding")?;
        let (rows, x) = self.w_i.expect_matrix("decoder W_i")?;
        if rows != dec || x < dec {
            return Err(Error::shape(format!(
                "decoder W_i is {:?}, embedding is {:?}",
                self.w_i.dims(),
                self.embed.dims()
            )));
        }
        Ok(DecoderDims { vocab, dec, enc: x - dec })
    }
}

impl OutputHead<Tensor> {
    pub fn init(init: &mut Init<'_>, d: DecoderDims) -> Self {
        Self {
            w_h: init.uniform(&[d.dec, d.dec + d.enc]),
            b_h: init.constant(&[d.dec], 0.0),
            w_y: init.uniform(&[d.vocab, d.dec]),
            b_y: init.constant(&[d.vocab], 0.0),
        }
    }

    pub fn zeros(d: DecoderDims) -> Self {
        Self {
            w_h: Tensor::zeros(&[d.dec, d.dec + d.enc]),
            b_h: Tensor::zeros(&[d.dec]),
            w_y: Tensor::zeros(&[d.vocab, d.dec]),
            b_y: Tensor::zeros(&[d.vocab]),
        }
    }
}

/// Decoder recurrence state: LSTM hidden `s` and cell, the previous
/// character and the previous context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub s: T,
    pub cell: T,
    pub y_prev: usize,
    pub context: T,
}

impl DecoderState<Var> {
    pub fn values(&self, tape: &Tape) -> DecoderState<Tensor> {
        DecoderState {
            s: tape.value(&self.s).as_ref().clone(),
            cell: tape.value(&self.cell).as_ref().clone(),
            y_prev: self.y_prev,
            context: tape.value(&self.context).as_ref().clone(),
        }
    }
}

impl DecoderState<Tensor> {
    pub fn on(&self, tape: &Tape) -> DecoderState<Var> {
        DecoderState {
            s: tape.constant(self.s.clone()),
            cell: tape.constant(self.cell.clone()),
            y_prev: self.y_prev,
            context: tape.constant(self.context.clone()),
        }
    }
}

/// `s_i, cell_i` from `[embed(y_{i-1}); c_{i-1}]` and `s_{i-1}`.
pub fn lstm_on(tape: &Tape, p: &DecoderParams<Var>, st: &DecoderState<Var>) -> Result<(Var, Var)> {
    let e = tape.row(&p.embed, st.y_prev)?;
    let x = tape.concat(&[e, st.context])?;
    let gate = |w: &Var, u: &Var, b: &Var| -> Result<Var> {
        let a = tape.affine(w, &x, b)?;
        tape.add(&a, &tape.matvec(u, &st.s)?)
    };
    let i = tape.sigmoid(&gate(&p.w_i, &p.u_i, &p.b_i)?);
    let f = tape.sigmoid(&gate(&p.w_f, &p.u_f, &p.b_f)?);
    let g = tape.tanh(&gate(&p.w_c, &p.u_c, &p.b_c)?);
    let o = tape.sigmoid(&gate(&p.w_o, &p.u_o, &p.b_o)?);
    let cell = tape.add(&tape.mul(&f, &st.cell)?, &tape.mul(&i, &g)?)?;
    let s = tape.mul(&o, &tape.tanh(&cell))?;
    Ok((s, cell))
}

/// Log-probabilities over the vocabulary from `(s_i, c_i)`.
pub fn output_log_probs_on(tape: &Tape, head: &OutputHead<Var>, s: &Var, context: &Var) -> Result<Var> {
    let z = tape.concat(&[*s, *context])?;
    let hidden = tape.tanh(&tape.affine(&head.w_h, &z, &head.b_h)?);
    let logits = tape.affine(&head.w_y, &hidden, &head.b_y)?;
    tape.log_softmax(&logits)
}

/// One step on a tape: new recurrent state, then alignment and context
/// from it. The returned state's `context` is `c_i`; `y_prev` is left for
/// the caller to advance.
#[allow(clippy::too_many_arguments)]
pub fn step_on(
    tape: &Tape,
    dp: &DecoderParams<Var>,
    ap: &AttentionParams<Var>,
    scorer: &dyn AttentionScorer,
    mem: &AttentionMemory,
    st: &DecoderState<Var>,
    alpha_prev: &Var,
    window: Window,
) -> Result<(DecoderState<Var>, Var, usize)> {
    let (s, cell) = lstm_on(tape, dp, st)?;
    let att = attend_on(tape, scorer, ap, mem, &s, alpha_prev, window)?;
    Ok((DecoderState { s, cell, y_prev: st.y_prev, context: att.context }, att.alpha, att.scored))
}

/// Value-level decoder step. Updates `at.alpha_prev` to the new alignment
/// and returns `(state, α_i, c_i)`.
pub fn decoder_step(
    dp: &DecoderParams<Tensor>,
    ap: &AttentionParams<Tensor>,
    scorer: &dyn AttentionScorer,
    st: &DecoderState<Tensor>,
    h: &Tensor,
    at: &mut AttentionState,
) -> Result<(DecoderState<Tensor>, Tensor, Tensor)> {
    at.validate()?;
    if at.alpha_prev.len() != h.rows() {
        return Err(Error::shape(format!(
            "alignment has {} frames, encoded sequence {}",
            at.alpha_prev.len(),
            h.rows()
        )));
    }
    let tape = Tape::inference();
    let dv = dp.bind(&tape);
    let av = ap.bind(&tape);
    let mem = AttentionMemory::new(&tape, &av, tape.constant(h.clone()))?;
    let alpha_prev = tape.constant(at.alpha_prev.clone());
    let window = at.window.unwrap_or(Window::full(h.rows()));
    let (next, alpha, _) = step_on(&tape, &dv, &av, scorer, &mem, &st.on(&tape), &alpha_prev, window)?;
    let next = next.values(&tape);
    let alpha = tape.value(&alpha).as_ref().clone();
    at.alpha_prev = alpha.clone();
    let c = next.context.clone();
    Ok((next, alpha, c))
}

/// `softmax(MLP([s; c]))`.
pub fn output_distribution(head: &OutputHead<Tensor>, s: &Tensor, c: &Tensor) -> Result<Tensor> {
    let tape = Tape::inference();
    let hv = head.bind(&tape);
    let lp = output_log_probs_on(&tape, &hv, &tape.constant(s.clone()), &tape.constant(c.clone()))?;
    Ok(tape.value(&lp).map(f64::exp))
}

/// Per-step record of the inputs fed during [`crate::model::Model::sequence_loss`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    /// Input character of every step (the first is the start symbol).
    pub inputs: Vec<usize>,
    /// Whether step `i`'s input was drawn from the model (always `false`
    /// for the first step).
    pub sampled: Vec<bool>,
    /// `log P(y_i* | ...)` per step.
    pub step_log_probs: Vec<f64>,
    /// Argmax of each step's distribution.
    pub predictions: Vec<usize>,
}

impl LossTrace {
    /// Number of steps whose input was subject to a sampling draw.
    pub fn draws(&self) -> usize {
        self.sampled.len().saturating_sub(1)
    }

    pub fn sampled_count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_index(log_probs: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
    use rand::distributions::{Distribution, WeightedIndex};
    let dist = WeightedIndex::new(log_probs.iter().map(|lp| lp.exp()))
        .map_err(|e| Error::Numeric(format!("cannot sample from predicted distribution: {e}")))?;
    Ok(dist.sample(rng))
}
