//! Content-based and location-aware attention.
//!
//! Energies are `e_l = wᵀ tanh(W s + V h_l [+ U f_l] + b)`, where `f_l` is
//! row `l` of the previous alignment convolved along time with the filter
//! bank `Q`. Scorers are registered by name in an [`AttentionRegistry`]
//! and chosen from configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{params, Init};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// `W`, `att × dec`.
    pub w_dec: T,
    /// `V`, `att × enc`.
    pub v_enc: T,
    /// `U`, `att × F`; location-aware only.
    pub u_loc: Option<T>,
    pub bias: T,
    /// `w`, `att`.
    pub w_energy: T,
    /// `Q`, `F × K`, `K` odd; location-aware only.
    pub q_filters: Option<T>,
}

params!(AttentionParams { leaf w_dec, leaf v_enc, opt u_loc, leaf bias, leaf w_energy, opt q_filters });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Registered scorer name: `location` or `content`.
    pub scorer: String,
    pub dim: usize,
    pub filters: usize,
    pub taps: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { scorer: "location".into(), dim: 32, filters: 8, taps: 11 }
    }
}

impl AttentionParams<Tensor> {
    pub fn init(cfg: &AttentionConfig, dec: usize, enc: usize, location: bool, rng: &mut ChaCha8Rng, scale: f64) -> Result<Self> {
        if location && cfg.taps.is_multiple_of(2) {
            return Err(Error::config(format!("attention filter width must be odd, got {}", cfg.taps)));
        }
        let mut init = Init::new(rng, scale);
        let att = cfg.dim;
        Ok(Self {
            w_dec: init.uniform(&[att, dec]),
            v_enc: init.uniform(&[att, enc]),
            u_loc: location.then(|| init.uniform(&[att, cfg.filters])),
            bias: Tensor::zeros(&[att]),
            w_energy: init.uniform(&[att]),
            q_filters: location.then(|| init.uniform(&[cfg.filters, cfg.taps])),
        })
    }
}

/// A frame range `start..end` (0-based, end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn full(len: usize) -> Self {
        Self { start: 0, end: len }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Window of `2·half_width + 1` frames centered on the peak of `alpha_prev`
/// (first index on ties), clipped to the sequence.
pub fn next_window(alpha_prev: &[f64], half_width: usize, len: usize) -> Window {
    let half_width = half_width.max(1);
    let mut center = 0;
    for (l, &a) in alpha_prev.iter().enumerate() {
        if a > alpha_prev[center] {
            center = l;
        }
    }
    let start = center.saturating_sub(half_width);
    let end = (center + half_width + 1).min(len);
    Window { start, end }
}

/// Strategy for the location-dependent part of the energy.
pub trait AttentionScorer: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether `U` and `Q` are required.
    fn location_aware(&self) -> bool;

    /// Extra energy terms (`window.len() × att`) added to `V h_l + b`, or
    /// `None` when the scorer has none.
    fn location_term(
        &self,
        tape: &Tape,
        p: &AttentionParams<Var>,
        alpha_prev: &Var,
        window: Window,
    ) -> Result<Option<Var>>;
}

/// `e = wᵀ tanh(W s + V h + b)`.
#[derive(Debug, Default)]
pub struct ContentScorer;

impl AttentionScorer for ContentScorer {
    fn name(&self) -> &'static str {
        "content"
    }

    fn location_aware(&self) -> bool {
        false
    }

    fn location_term(&self, _: &Tape, _: &AttentionParams<Var>, _: &Var, _: Window) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// `e = wᵀ tanh(W s + V h + U f + b)` with `F = Q * α_prev`.
#[derive(Debug, Default)]
pub struct LocationScorer;

impl AttentionScorer for LocationScorer {
    fn name(&self) -> &'static str {
        "location"
    }

    fn location_aware(&self) -> bool {
        true
    }

    fn location_term(
        &self,
        tape: &Tape,
        p: &AttentionParams<Var>,
        alpha_prev: &Var,
        window: Window,
    ) -> Result<Option<Var>> {
        let (q, u) = match (&p.q_filters, &p.u_loc) {
            (Some(q), Some(u)) => (q, u),
            _ => return Err(Error::config("location-aware attention needs U and Q")),
        };
        let f = tape.conv1d_time(q, alpha_prev, window.start, window.end)?;
        Ok(Some(tape.matmul_nt(&f, u)?))
    }
}

type ScorerFactory = fn() -> Arc<dyn AttentionScorer>;

/// Name → scorer table.
#[derive(Clone)]
pub struct AttentionRegistry {
    factories: BTreeMap<&'static str, ScorerFactory>,
}

impl fmt::Debug for AttentionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for AttentionRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("content", || Arc::new(ContentScorer));
        r.register("location", || Arc::new(LocationScorer));
        r
    }
}

impl AttentionRegistry {
    pub fn register(&mut self, name: &'static str, factory: ScorerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AttentionScorer>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            Error::config(format!(
                "unknown attention scorer {name:?} (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Per-utterance quantities that do not depend on the decoder state.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMemory {
    /// `h`, `L × enc`.
    pub h: Var,
    /// `H Vᵀ + b`, `L × att`.
    pub vh: Var,
    pub len: usize,
}

impl AttentionMemory {
    pub fn new(tape: &Tape, p: &AttentionParams<Var>, h: Var) -> Result<Self> {
        let len = tape.value(&h).rows();
        let vh = tape.matmul_nt(&h, &p.v_enc)?;
        let vh = tape.add_rows(&vh, &p.bias)?;
        Ok(Self { h, vh, len })
    }
}

/// Result of one attention call.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    /// `α_i` over all `L` frames (zero outside the window).
    pub alpha: Var,
    pub context: Var,
    /// Number of frames scored.
    pub scored: usize,
}

/// Scores the frames of `window`, normalizes them into an alignment and
/// forms the context vector.
pub fn attend_on(
    tape: &Tape,
    scorer: &dyn AttentionScorer,
    p: &AttentionParams<Var>,
    mem: &AttentionMemory,
    s: &Var,
    alpha_prev: &Var,
    window: Window,
) -> Result<Attended> {
    if window.is_empty() || window.end > mem.len {
        return Err(Error::domain(format!(
            "attention window {}..{} is empty or outside 0..{}",
            window.start, window.end, mem.len
        )));
    }
    let mut pre = tape.rows(&mem.vh, window.start, window.end)?;
    if let Some(loc) = scorer.location_term(tape, p, alpha_prev, window)? {
        pre = tape.add(&pre, &loc)?;
    }
    let ws = tape.matvec(&p.w_dec, s)?;
    let pre = tape.add_rows(&pre, &ws)?;
    let e = tape.matvec(&tape.tanh(&pre), &p.w_energy)?;
    let a = tape.softmax(&e)?;
    let hw = tape.rows(&mem.h, window.start, window.end)?;
    let context = tape.tmatvec(&hw, &a)?;
    let alpha = tape.scatter(&a, window.start, mem.len)?;
    Ok(Attended { alpha, context, scored: window.len() })
}

/// Previous alignment and optional window of one decoding stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub alpha_prev: Tensor,
    pub window: Option<Window>,
}

impl AttentionState {
    /// Uniform alignment over `len` frames.
    pub fn uniform(len: usize) -> Self {
        Self { alpha_prev: Tensor::filled(&[len], 1.0 / len as f64), window: None }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha_prev.data();
        let sum: f64 = a.iter().sum();
        if a.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::domain("previous alignment is not a distribution"));
        }
        if let Some(w) = self.window {
            if w.is_empty() || w.end > a.len() {
                return Err(Error::domain(format!("window {}..{} outside 0..{}", w.start, w.end, a.len())));
            }
        }
        Ok(())
    }
}

fn single_frame_energy(p: &AttentionParams<Tensor>, s: &Tensor, h_l: &Tensor, f_l: Option<&Tensor>) -> Result<f64> {
    let mut pre = Tensor::affine(&p.w_dec, s, &p.bias)?;
    pre.add_assign(&Tensor::matvec(&p.v_enc, h_l)?);
    if let Some(f) = f_l {
        let u = p.u_loc.as_ref().ok_or_else(|| Error::config("location energy needs U"))?;
        pre.add_assign(&Tensor::matvec(u, f)?);
    }
    let t = pre.map(f64::tanh);
    Ok(Tensor::matvec(&Tensor::matrix(1, t.len(), t.into_data())?, &p.w_energy)?.item())
}

/// Content energy of a single frame.
pub fn content_energy(p: &AttentionParams<Tensor>, s: &Tensor, h_l: &Tensor) -> Result<f64> {
    single_frame_energy(p, s, h_l, None)
}

/// Location-aware energy of a single frame with location features `f_l`.
pub fn location_energy(p: &AttentionParams<Tensor>, s: &Tensor, h_l: &Tensor, f_l: &Tensor) -> Result<f64> {
    if p.q_filters.is_none() {
        return Err(Error::config("location energy needs Q"));
    }
    single_frame_energy(p, s, h_l, Some(f_l))
}

/// Alignment and context for decoder state `s` over the encoded frames.
pub fn align_and_context(
    scorer: &dyn AttentionScorer,
    p: &AttentionParams<Tensor>,
    s: &Tensor,
    h: &Tensor,
    st: &AttentionState,
) -> Result<(Tensor, Tensor)> {
    st.validate()?;
    if st.alpha_prev.len() != h.rows() {
        return Err(Error::shape(format!(
            "alignment has {} frames, encoded sequence {}",
            st.alpha_prev.len(),
            h.rows()
        )));
    }
    let tape = Tape::inference();
    let pv = p.bind(&tape);
    let hv = tape.constant(h.clone());
    let mem = AttentionMemory::new(&tape, &pv, hv)?;
    let sv = tape.constant(s.clone());
    let av = tape.constant(st.alpha_prev.clone());
    let window = st.window.unwrap_or(Window::full(h.rows()));
    let out = attend_on(&tape, scorer, &pv, &mem, &sv, &av, window)?;
    Ok((tape.value(&out.alpha).as_ref().clone(), tape.value(&out.context).as_ref().clone()))
}
