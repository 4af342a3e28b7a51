//! Decoding strategies: greedy and beam search with language-model
//! fusion, `score = log P_am + β·log P_lm + γ·|y|`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::MultichannelUtterance;
use crate::error::{Error, Result};
use crate::lm::NgramLm;
use crate::model::{DecodeOptions, Decoded, Model, Stream};

/// Fusion weights and beam width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    pub beam: usize,
    pub beta: f64,
    /// Per-character length bonus.
    pub gamma: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { beam: 8, beta: 0.3, gamma: 0.0 }
    }
}

/// A beam-search prefix with its separate acoustic and LM scores.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Character indices; ends with the end symbol once finished.
    pub prefix: Vec<usize>,
    pub am_logp: f64,
    pub lm_logp: f64,
    pub stream: Option<Stream>,
    pub finished: bool,
}

impl Hypothesis {
    /// Number of characters, excluding the end symbol.
    pub fn chars(&self) -> usize {
        self.prefix.len() - usize::from(self.finished)
    }
}

pub fn fused_score(h: &Hypothesis, beta: f64, gamma: f64) -> f64 {
    let mut s = h.am_logp;
    if beta != 0.0 {
        s += beta * h.lm_logp;
    }
    if gamma != 0.0 {
        s += gamma * h.chars() as f64;
    }
    s
}

/// Higher score first, then lexicographically smaller prefix.
fn rank(a: &(f64, Hypothesis), b: &(f64, Hypothesis)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.prefix.cmp(&b.1.prefix))
}

fn check_lm(model: &Model, lm: Option<&NgramLm>, beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::config(format!("LM weight must be finite and non-negative, got {beta}")));
    }
    match lm {
        None if beta > 0.0 => Err(Error::config("a positive LM weight needs a language model")),
        Some(lm) if lm.vocab().chars() != model.vocab.chars() => {
            Err(Error::config("language model and acoustic model vocabularies differ"))
        }
        _ => Ok(()),
    }
}

/// Beam search over characters. Each live hypothesis is expanded with
/// every symbol except the start symbol; the best `beam` candidates are
/// kept and those ending in the end symbol retire to a pool. Search stops
/// when nothing is live or after `max_len` steps. Returns the best
/// retired hypothesis, or the best live one if none retired.
pub fn beam_search_decode(
    model: &Model,
    lm: Option<&NgramLm>,
    u: &MultichannelUtterance,
    sp: SearchParams,
    opts: DecodeOptions,
) -> Result<Decoded> {
    if sp.beam < 1 {
        return Err(Error::config("beam width must be at least 1"));
    }
    check_lm(model, lm, sp.beta)?;
    let lm = if sp.beta > 0.0 { lm } else { None };
    let session = model.session(u, opts)?;
    let (sos, eos) = (model.vocab.sos(), model.vocab.eos());
    let mut live = vec![Hypothesis {
        prefix: Vec::new(),
        am_logp: 0.0,
        lm_logp: 0.0,
        stream: Some(session.start()?),
        finished: false,
    }];
    let mut pool: Vec<(f64, Hypothesis)> = Vec::new();
    for _ in 0..session.max_len() {
        let mut candidates: Vec<(f64, Hypothesis)> = Vec::new();
        for h in &live {
            let stream = h.stream.as_ref().expect("live hypotheses carry a stream");
            let (next, lp) = session.advance(stream)?;
            for (y, &l) in lp.iter().enumerate() {
                if y == sos {
                    continue;
                }
                let mut prefix = h.prefix.clone();
                prefix.push(y);
                let lm_logp = match lm {
                    Some(lm) => h.lm_logp + lm.log_prob(&h.prefix, y),
                    None => 0.0,
                };
                let finished = y == eos;
                let cand = Hypothesis {
                    prefix,
                    am_logp: h.am_logp + l,
                    lm_logp,
                    stream: (!finished).then(|| next.feed(y)),
                    finished,
                };
                candidates.push((fused_score(&cand, sp.beta, sp.gamma), cand));
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(sp.beam);
        live.clear();
        for (score, h) in candidates {
            if h.finished {
                pool.push((score, h));
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    let best = if pool.is_empty() {
        live.into_iter().map(|h| (fused_score(&h, sp.beta, sp.gamma), h)).min_by(rank)
    } else {
        pool.into_iter().min_by(rank)
    };
    let (fused, h) = best.expect("search keeps at least one hypothesis");
    let indices: Vec<usize> = h.prefix[..h.chars()].to_vec();
    Ok(Decoded {
        text: model.vocab.decode(&indices)?,
        indices,
        am_logp: h.am_logp,
        lm_logp: h.lm_logp,
        fused,
        finished: h.finished,
        frames_scored: session.frames_scored(),
    })
}

/// A named decoding procedure.
pub trait DecodeStrategy: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn decode(
        &self,
        model: &Model,
        lm: Option<&NgramLm>,
        u: &MultichannelUtterance,
        sp: SearchParams,
        opts: DecodeOptions,
    ) -> Result<Decoded>;
}

/// Most probable symbol at every step; ignores the LM.
#[derive(Debug, Default)]
pub struct Greedy;

impl DecodeStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decode(
        &self,
        model: &Model,
        _: Option<&NgramLm>,
        u: &MultichannelUtterance,
        _: SearchParams,
        opts: DecodeOptions,
    ) -> Result<Decoded> {
        model.greedy_decode(u, opts)
    }
}

#[derive(Debug, Default)]
pub struct Beam;

impl DecodeStrategy for Beam {
    fn name(&self) -> &'static str {
        "beam"
    }

    fn decode(
        &self,
        model: &Model,
        lm: Option<&NgramLm>,
        u: &MultichannelUtterance,
        sp: SearchParams,
        opts: DecodeOptions,
    ) -> Result<Decoded> {
        beam_search_decode(model, lm, u, sp, opts)
    }
}

type StrategyFactory = fn() -> Arc<dyn DecodeStrategy>;

/// Name → decoding strategy table.
#[derive(Clone)]
pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("greedy", || Arc::new(Greedy));
        r.register("beam", || Arc::new(Beam));
        r
    }
}

impl StrategyRegistry {
    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DecodeStrategy>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            Error::config(format!(
                "unknown decoding strategy {name:?} (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}
