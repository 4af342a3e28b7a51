//! Multichannel input concatenation and the stacked bidirectional
//! highway-LSTM encoder.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{run_layer_on, Direction, HlstmParams, LayerDims, LayerKind, LayerParams, LstmpParams};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{params, Init};

/// One utterance: `N` channels of `L` frames of `D`-dimensional features,
/// plus its character transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultichannelUtterance {
    pub id: String,
    pub transcript: String,
    /// `channels[n][t][d]`.
    pub channels: Vec<Vec<Vec<f64>>>,
}

impl MultichannelUtterance {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn feature_dim(&self) -> usize {
        self.channels.first().and_then(|c| c.first()).map_or(0, Vec::len)
    }

    /// Checks that all channels share `L` and `D`.
    pub fn validate(&self) -> Result<()> {
        let l = self.num_frames();
        let d = self.feature_dim();
        if self.channels.is_empty() || l == 0 || d == 0 {
            return Err(Error::data(format!("utterance {}: empty channels", self.id)));
        }
        for (n, ch) in self.channels.iter().enumerate() {
            if ch.len() != l {
                return Err(Error::data(format!(
                    "utterance {}: channel {} has {} frames, channel 0 has {l}",
                    self.id,
                    n,
                    ch.len()
                )));
            }
            if let Some((t, f)) = ch.iter().enumerate().find(|(_, f)| f.len() != d) {
                return Err(Error::data(format!(
                    "utterance {}: channel {n} frame {t} has dim {}, expected {d}",
                    self.id,
                    f.len()
                )));
            }
        }
        Ok(())
    }
}

/// Frame `t` of the result is channel 1..N's frame `t`, concatenated in
/// channel order. Returned as an `L × N·D` matrix.
pub fn concat_channels(u: &MultichannelUtterance) -> Result<Tensor> {
    u.validate()?;
    let l = u.num_frames();
    let width = u.num_channels() * u.feature_dim();
    let mut data = Vec::with_capacity(l * width);
    for t in 0..l {
        for ch in &u.channels {
            data.extend_from_slice(&ch[t]);
        }
    }
    Tensor::matrix(l, width, data)
}

/// Forward and backward parameters of one stack level.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer<T> {
    pub fwd: LayerParams<T>,
    pub bwd: LayerParams<T>,
}

impl<T> BiLayer<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> BiLayer<U> {
        BiLayer {
            fwd: self.fwd.map(&crate::params::join(prefix, "fwd"), f),
            bwd: self.bwd.map(&crate::params::join(prefix, "bwd"), f),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.fwd.for_each_mut(&crate::params::join(prefix, "fwd"), f);
        self.bwd.for_each_mut(&crate::params::join(prefix, "bwd"), f);
    }
}

/// Optional sigmoid readout `y = σ(W_yr h + b_y)` on top of the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout<T> {
    pub w_yr: T,
    pub b_y: T,
}

params!(Readout { leaf w_yr, leaf b_y });

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<BiLayer<T>>,
    pub readout: Option<Readout<T>>,
}

impl<T> EncoderParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> EncoderParams<U> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.map(&crate::params::join(prefix, &format!("layer{i}")), f))
            .collect();
        let readout = self.readout.as_ref().map(|r| r.map(&crate::params::join(prefix, "readout"), f));
        EncoderParams { layers, readout }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&crate::params::join(prefix, &format!("layer{i}")), f);
        }
        if let Some(r) = self.readout.as_mut() {
            r.for_each_mut(&crate::params::join(prefix, "readout"), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// `N·D`.
    pub input_dim: usize,
    pub layers: usize,
    pub cell: usize,
    pub proj: usize,
    /// `lstmp` (default) or `highway-over-input`.
    pub first_layer: LayerKind,
    pub readout: Option<usize>,
    pub init_scale: f64,
    pub forget_bias: f64,
    pub carry_bias: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            layers: 3,
            cell: 64,
            proj: 32,
            first_layer: LayerKind::Lstmp,
            readout: None,
            init_scale: 0.05,
            forget_bias: 1.0,
            carry_bias: 2.0,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.readout.unwrap_or(2 * self.proj)
    }
}

impl EncoderParams<Tensor> {
    pub fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.layers == 0 || cfg.cell == 0 || cfg.proj == 0 || cfg.input_dim == 0 {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if cfg.first_layer == LayerKind::HighwayOverLstm {
            return Err(Error::config("the first encoder layer has no recurrent layer below it"));
        }
        let mut init = Init::new(rng, cfg.init_scale);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.input_dim } else { 2 * cfg.proj };
            let dims = LayerDims { input, cell: cfg.cell, proj: cfg.proj };
            let make = |init: &mut Init<'_>| match (l, cfg.first_layer) {
                (0, LayerKind::Lstmp) => LayerParams::Lstmp(LstmpParams::init(init, dims, cfg.forget_bias)),
                (0, _) => LayerParams::Highway(HlstmParams::init(init, dims, false, cfg.forget_bias, cfg.carry_bias)),
                _ => LayerParams::Highway(HlstmParams::init(init, dims, true, cfg.forget_bias, cfg.carry_bias)),
            };
            let fwd = make(&mut init);
            let bwd = make(&mut init);
            layers.push(BiLayer { fwd, bwd });
        }
        let readout = cfg.readout.map(|out| Readout {
            w_yr: init.uniform(&[out, 2 * cfg.proj]),
            b_y: Tensor::zeros(&[out]),
        });
        let p = Self { layers, readout };
        p.output_dim()?;
        Ok(p)
    }

    /// Validates the dimension chain and returns `(input_dim, output_dim)`.
    pub fn chain(&self) -> Result<(usize, usize)> {
        let first = self.layers.first().ok_or_else(|| Error::config("encoder stack is empty"))?;
        let d0 = first.fwd.dims()?;
        let mut expected_in = d0.input;
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                let d = p.dims()?;
                let want_kind_ok = if l == 0 {
                    p.kind() != LayerKind::HighwayOverLstm
                } else {
                    p.kind() == LayerKind::HighwayOverLstm
                };
                if !want_kind_ok {
                    return Err(Error::config(format!("encoder layer {l} {dir}: unexpected kind {:?}", p.kind())));
                }
                if d.input != expected_in || d.cell != d0.cell || d.proj != d0.proj {
                    return Err(Error::config(format!(
                        "encoder layer {l} {dir}: dims {d:?} do not chain (input {expected_in}, cell {}, proj {})",
                        d0.cell, d0.proj
                    )));
                }
            }
            expected_in = 2 * d0.proj;
        }
        let out = match &self.readout {
            None => 2 * d0.proj,
            Some(r) => {
                let (out, inp) = r.w_yr.expect_matrix("readout weight")?;
                if inp != 2 * d0.proj || r.b_y.dims() != [out] {
                    return Err(Error::config(format!(
                        "readout dims {:?}/{:?} do not match stack output {}",
                        r.w_yr.dims(),
                        r.b_y.dims(),
                        2 * d0.proj
                    )));
                }
                out
            }
        };
        Ok((d0.input, out))
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.chain()?.1)
    }

    pub fn bind(&self, tape: &Tape) -> EncoderParams<Var> {
        self.map("", &mut |_, t| tape.param(t))
    }
}

/// The encoded sequence `h`, one row per input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub h: Tensor,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        self.h.row(l)
    }
}

/// Runs the stack over `x` (`L × in`) and returns `h` (`L × out`).
pub fn encode_on(tape: &Tape, p: &EncoderParams<Var>, x: &Var) -> Result<Var> {
    let mut input = *x;
    let mut below: Option<(Vec<Var>, Vec<Var>)> = None;
    for layer in &p.layers {
        let (bf, bb) = match &below {
            Some((f, b)) => (Some(f.as_slice()), Some(b.as_slice())),
            None => (None, None),
        };
        let fwd = run_layer_on(tape, &layer.fwd, &input, Direction::Forward, bf)?;
        let bwd = run_layer_on(tape, &layer.bwd, &input, Direction::Backward, bb)?;
        let frames = crate::cells::bidir_concat_on(tape, &fwd.r, &bwd.r)?;
        input = tape.stack(&frames)?;
        below = Some((fwd.c, bwd.c));
    }
    match &p.readout {
        None => Ok(input),
        Some(r) => {
            let y = tape.matmul_nt(&input, &r.w_yr)?;
            let y = tape.add_rows(&y, &r.b_y)?;
            Ok(tape.sigmoid(&y))
        }
    }
}

/// Encodes one utterance.
pub fn encode(p: &EncoderParams<Tensor>, u: &MultichannelUtterance) -> Result<EncodedSequence> {
    let (input_dim, _) = p.chain()?;
    let x = concat_channels(u)?;
    if x.cols() != input_dim {
        return Err(Error::config(format!(
            "utterance {} has {} features per frame, encoder expects {input_dim}",
            u.id,
            x.cols()
        )));
    }
    let tape = Tape::inference();
    let pv = p.bind(&tape);
    let xv = tape.constant(x);
    let h = encode_on(&tape, &pv, &xv)?;
    Ok(EncodedSequence { h: tape.value(&h).as_ref().clone() })
}
