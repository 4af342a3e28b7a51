//! The full recognizer: encoder, attention, decoder and output head over
//! a character vocabulary.

use std::cell::Cell;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attend_on, next_window, AttentionConfig, AttentionMemory, AttentionParams, AttentionRegistry, AttentionScorer,
    Window,
};
use crate::decoder::{
    argmax, output_log_probs_on, sample_index, step_on, DecoderDims, DecoderParams, DecoderState, LossTrace,
    OutputHead,
};
use crate::encoder::{concat_channels, encode_on, EncoderConfig, EncoderParams, MultichannelUtterance};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{params, Init};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder_dim: usize,
    pub init_scale: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            attention: AttentionConfig::default(),
            decoder_dim: 64,
            init_scale: 0.1,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub attention: AttentionParams<T>,
    pub decoder: DecoderParams<T>,
    pub head: OutputHead<T>,
}

params!(ModelParams { node encoder, node attention, node decoder, node head });

impl<T> ModelParams<T> {
    /// Parameter names in traversal order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each("", &mut |n, _| out.push(n.to_string()));
        out
    }
}

impl<T: Clone> ModelParams<T> {
    pub fn leaves(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.for_each("", &mut |_, t| out.push(t.clone()));
        out
    }
}

/// Options shared by the decoding strategies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeOptions {
    /// Maximum number of decoder steps (emitted symbols including the end
    /// symbol); defaults to `ceil(4·L / 3)`.
    pub max_len: Option<usize>,
    /// Restrict attention to `2·half_width + 1` frames around the previous
    /// alignment peak.
    pub half_width: Option<usize>,
}

impl DecodeOptions {
    pub fn max_len_for(&self, frames: usize) -> usize {
        self.max_len.unwrap_or_else(|| (4 * frames).div_ceil(3).max(1))
    }
}

/// A decoded transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub text: String,
    /// Character indices, without the end symbol.
    pub indices: Vec<usize>,
    pub am_logp: f64,
    pub lm_logp: f64,
    pub fused: f64,
    /// Whether the end symbol was emitted before `max_len`.
    pub finished: bool,
    /// Total number of encoded frames scored by attention.
    pub frames_scored: usize,
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams<Tensor>,
    scorer: Arc<dyn AttentionScorer>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("vocab", &self.vocab)
            .field("scorer", &self.scorer.name())
            .finish_non_exhaustive()
    }
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, rng: &mut ChaCha8Rng) -> Result<Self> {
        let scorer = AttentionRegistry::default().get(&config.attention.scorer)?;
        if config.decoder_dim == 0 || config.attention.dim == 0 {
            return Err(Error::config("decoder and attention dims must be positive"));
        }
        let encoder = EncoderParams::init(&config.encoder, rng)?;
        let d = DecoderDims { vocab: vocab.len(), dec: config.decoder_dim, enc: config.encoder.output_dim() };
        let attention = AttentionParams::init(
            &config.attention,
            d.dec,
            d.enc,
            scorer.location_aware(),
            rng,
            config.init_scale,
        )?;
        let mut init = Init::new(rng, config.init_scale);
        let decoder = DecoderParams::init(&mut init, d, config.forget_bias);
        let head = OutputHead::init(&mut init, d);
        Self::from_params(config, vocab, ModelParams { encoder, attention, decoder, head })
    }

    pub fn from_params(config: ModelConfig, vocab: Vocabulary, params: ModelParams<Tensor>) -> Result<Self> {
        let scorer = AttentionRegistry::default().get(&config.attention.scorer)?;
        let (_, enc) = params.encoder.chain()?;
        let d = params.decoder.dims()?;
        if d.vocab != vocab.len() || d.enc != enc {
            return Err(Error::config(format!(
                "decoder expects |V|={} and encoder dim {}, got |V|={} and {enc}",
                d.vocab,
                d.enc,
                vocab.len()
            )));
        }
        let a = &params.attention;
        if a.w_dec.dims() != [a.bias.len(), d.dec] || a.v_enc.dims() != [a.bias.len(), enc] {
            return Err(Error::config("attention weights do not match the decoder and encoder dims"));
        }
        if scorer.location_aware() && (a.u_loc.is_none() || a.q_filters.is_none()) {
            return Err(Error::config(format!("{} attention needs U and Q", scorer.name())));
        }
        let h = &params.head;
        if h.w_h.dims() != [d.dec, d.dec + enc] || h.w_y.dims() != [d.vocab, d.dec] {
            return Err(Error::config("output head does not match the decoder dims"));
        }
        Ok(Self { config, vocab, params, scorer })
    }

    pub fn scorer(&self) -> &dyn AttentionScorer {
        self.scorer.as_ref()
    }

    pub fn decoder_dims(&self) -> DecoderDims {
        DecoderDims { vocab: self.vocab.len(), dec: self.config.decoder_dim, enc: self.config.encoder.output_dim() }
    }

    /// Concatenated channels, checked against the encoder input width.
    pub fn input(&self, u: &MultichannelUtterance) -> Result<Tensor> {
        let x = concat_channels(u)?;
        let (input_dim, _) = self.params.encoder.chain()?;
        if x.cols() != input_dim {
            return Err(Error::data(format!(
                "utterance {} has {} features per frame, model expects {input_dim}",
                u.id,
                x.cols()
            )));
        }
        Ok(x)
    }

    /// Transcript indices followed by the end symbol.
    pub fn targets(&self, u: &MultichannelUtterance) -> Result<Vec<usize>> {
        self.vocab.encode(&u.transcript).map_err(|e| Error::data(format!("utterance {}: {e}", u.id)))
    }

    fn initial_state(
        &self,
        tape: &Tape,
        pv: &ModelParams<Var>,
        mem: &AttentionMemory,
        uniform: &Var,
    ) -> Result<DecoderState<Var>> {
        let dec = self.config.decoder_dim;
        let s = tape.constant(Tensor::zeros(&[dec]));
        let cell = tape.constant(Tensor::zeros(&[dec]));
        let c0 = attend_on(tape, self.scorer(), &pv.attention, mem, &s, uniform, Window::full(mem.len))?;
        Ok(DecoderState { s, cell, y_prev: self.vocab.sos(), context: c0.context })
    }

    /// `−Σ_i log P(y_i* | X, inputs_{<i})` over the transcript and the end
    /// symbol. Each input after the first is, with probability
    /// `sampling_rate`, drawn from the previous step's prediction instead
    /// of the ground truth.
    pub fn sequence_loss_on(
        &self,
        tape: &Tape,
        pv: &ModelParams<Var>,
        u: &MultichannelUtterance,
        sampling_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossTrace)> {
        if !(0.0..=1.0).contains(&sampling_rate) {
            return Err(Error::domain(format!("sampling rate {sampling_rate} outside [0, 1]")));
        }
        if u.transcript.is_empty() {
            return Err(Error::data(format!("utterance {}: empty transcript", u.id)));
        }
        let targets = self.targets(u)?;
        let x = tape.constant(self.input(u)?);
        let h = encode_on(tape, &pv.encoder, &x)?;
        let mem = AttentionMemory::new(tape, &pv.attention, h)?;
        let mut alpha = tape.constant(Tensor::filled(&[mem.len], 1.0 / mem.len as f64));
        let mut st = self.initial_state(tape, pv, &mem, &alpha)?;
        let mut trace = LossTrace::default();
        let mut total: Option<Var> = None;
        let mut prev_lp: Option<Var> = None;
        for (i, &y) in targets.iter().enumerate() {
            let mut sampled = false;
            if let Some(lp) = prev_lp {
                st.y_prev = if rng.gen_bool(sampling_rate) {
                    sampled = true;
                    sample_index(tape.value(&lp).data(), rng)?
                } else {
                    targets[i - 1]
                };
            }
            trace.inputs.push(st.y_prev);
            trace.sampled.push(sampled);
            let (next, a, _) =
                step_on(tape, &pv.decoder, &pv.attention, self.scorer(), &mem, &st, &alpha, Window::full(mem.len))?;
            st = next;
            alpha = a;
            let lp = output_log_probs_on(tape, &pv.head, &st.s, &st.context)?;
            let term = tape.pick(&lp, y)?;
            trace.step_log_probs.push(tape.value(&term).item());
            trace.predictions.push(argmax(tape.value(&lp).data()));
            total = Some(match total {
                None => term,
                Some(t) => tape.add(&t, &term)?,
            });
            prev_lp = Some(lp);
        }
        let total = total.expect("targets always end with the end symbol");
        let loss = tape.scale(&total, -1.0);
        let value = tape.value(&loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("utterance {}: non-finite loss {value}", u.id)));
        }
        Ok((loss, trace))
    }

    /// Loss value without gradients.
    pub fn sequence_loss(
        &self,
        u: &MultichannelUtterance,
        sampling_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, LossTrace)> {
        let tape = Tape::inference();
        let pv = self.params.bind(&tape);
        let (loss, trace) = self.sequence_loss_on(&tape, &pv, u, sampling_rate, rng)?;
        Ok((tape.value(&loss).item(), trace))
    }

    /// `(correct, total)` next-character predictions under teacher forcing.
    pub fn teacher_forced_accuracy(&self, u: &MultichannelUtterance) -> Result<(usize, usize)> {
        use rand::SeedableRng;
        let (_, trace) = self.sequence_loss(u, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
        let targets = self.targets(u)?;
        let correct = trace.predictions.iter().zip(&targets).filter(|(p, t)| p == t).count();
        Ok((correct, targets.len()))
    }

    pub fn session(&self, u: &MultichannelUtterance, opts: DecodeOptions) -> Result<Session<'_>> {
        Session::new(self, u, opts)
    }

    /// Emits the most probable symbol (never the start symbol) until the
    /// end symbol or `max_len` steps.
    pub fn greedy_decode(&self, u: &MultichannelUtterance, opts: DecodeOptions) -> Result<Decoded> {
        let session = self.session(u, opts)?;
        let mut stream = session.start()?;
        let mut indices = Vec::new();
        let mut am = 0.0;
        let mut finished = false;
        let eos = self.vocab.eos();
        for _ in 0..session.max_len() {
            let (next, lp) = session.advance(&stream)?;
            let y = argmax_emittable(&lp, self.vocab.sos());
            am += lp[y];
            if y == eos {
                finished = true;
                break;
            }
            indices.push(y);
            stream = next.feed(y);
        }
        Ok(Decoded {
            text: self.vocab.decode(&indices)?,
            indices,
            am_logp: am,
            lm_logp: 0.0,
            fused: am,
            finished,
            frames_scored: session.frames_scored(),
        })
    }
}

/// Best index of `lp` other than `skip`, first on ties.
pub(crate) fn argmax_emittable(lp: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in lp.iter().enumerate() {
        if i != skip && (best == usize::MAX || v > lp[best]) {
            best = i;
        }
    }
    best
}

/// The decoder and attention state of one hypothesis, after consuming
/// `state.y_prev`.
#[derive(Debug, Clone)]
pub struct Stream {
    pub state: DecoderState<Var>,
    pub alpha: Var,
}

impl Stream {
    /// The same stream with `y` as its next input.
    pub fn feed(&self, y: usize) -> Stream {
        let mut s = self.clone();
        s.state.y_prev = y;
        s
    }
}

/// Inference context for decoding one utterance: encoded memory on an
/// inference tape shared by every hypothesis.
pub struct Session<'m> {
    model: &'m Model,
    tape: Tape,
    pv: ModelParams<Var>,
    mem: AttentionMemory,
    opts: DecodeOptions,
    frames_scored: Cell<usize>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, u: &MultichannelUtterance, opts: DecodeOptions) -> Result<Self> {
        let tape = Tape::inference();
        let pv = model.params.bind(&tape);
        let x = tape.constant(model.input(u)?);
        let h = encode_on(&tape, &pv.encoder, &x)?;
        let mem = AttentionMemory::new(&tape, &pv.attention, h)?;
        Ok(Self { model, tape, pv, mem, opts, frames_scored: Cell::new(0) })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn frames(&self) -> usize {
        self.mem.len
    }

    pub fn max_len(&self) -> usize {
        self.opts.max_len_for(self.mem.len)
    }

    pub fn frames_scored(&self) -> usize {
        self.frames_scored.get()
    }

    pub fn start(&self) -> Result<Stream> {
        let alpha = self.tape.constant(Tensor::filled(&[self.mem.len], 1.0 / self.mem.len as f64));
        let state = self.model.initial_state(&self.tape, &self.pv, &self.mem, &alpha)?;
        Ok(Stream { state, alpha })
    }

    /// Runs one step on `stream` and returns the advanced stream (input
    /// still unset) and the log-distribution over the next symbol.
    pub fn advance(&self, stream: &Stream) -> Result<(Stream, Vec<f64>)> {
        let window = match self.opts.half_width {
            Some(w) => next_window(self.tape.value(&stream.alpha).data(), w, self.mem.len),
            None => Window::full(self.mem.len),
        };
        let (state, alpha, scored) = step_on(
            &self.tape,
            &self.pv.decoder,
            &self.pv.attention,
            self.model.scorer(),
            &self.mem,
            &stream.state,
            &stream.alpha,
            window,
        )?;
        self.frames_scored.set(self.frames_scored.get() + scored);
        let lp = output_log_probs_on(&self.tape, &self.pv.head, &state.s, &state.context)?;
        let lp = self.tape.value(&lp).data().to_vec();
        Ok((Stream { state, alpha }, lp))
    }

    /// The current alignment of `stream`.
    pub fn alignment(&self, stream: &Stream) -> Tensor {
        self.tape.value(&stream.alpha).as_ref().clone()
    }
}
