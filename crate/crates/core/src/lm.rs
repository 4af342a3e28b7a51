//! Character n-gram language model with add-k smoothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

const HEADER: &str = "NGRAM-LM v1";

/// `P(y | previous n−1 symbols)` over the characters of a vocabulary and
/// the end symbol. Contexts shorter than `n−1` are padded with the start
/// symbol; unseen contexts are uniform.
#[derive(Debug)]
pub struct NgramLm {
    vocab: Vocabulary,
    order: usize,
    k: f64,
    /// Context → log-probabilities indexed by symbol (end symbol last).
    table: BTreeMap<Vec<usize>, Vec<f64>>,
    calls: AtomicUsize,
}

impl Clone for NgramLm {
    fn clone(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            order: self.order,
            k: self.k,
            table: self.table.clone(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for NgramLm {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.order == other.order && self.k == other.k && self.table == other.table
    }
}

impl NgramLm {
    /// Add-k estimate from `corpus`. Every string contributes its
    /// characters and a final end symbol.
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a str>, vocab: Vocabulary, n: usize, k: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::config(format!("n-gram order must be at least 1, got {n}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config(format!("smoothing constant must be positive, got {k}")));
        }
        let symbols = vocab.num_chars() + 1;
        let mut counts: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        let mut lines = 0;
        for (line, text) in corpus.into_iter().enumerate() {
            lines += 1;
            let seq = vocab
                .encode(text)
                .map_err(|e| Error::data(format!("corpus line {}: {e}", line + 1)))?;
            let mut history = Vec::with_capacity(seq.len());
            for &y in &seq {
                let ctx = context_of(&vocab, n, &history);
                counts.entry(ctx).or_insert_with(|| vec![0.0; symbols])[symbol_slot(&vocab, y)] += 1.0;
                history.push(y);
            }
        }
        if lines == 0 {
            return Err(Error::data("language model corpus is empty"));
        }
        let table = counts
            .into_iter()
            .map(|(ctx, c)| {
                let total: f64 = c.iter().sum::<f64>() + k * symbols as f64;
                let lp = c.iter().map(|&v| ((v + k) / total).ln()).collect();
                (ctx, lp)
            })
            .collect();
        Ok(Self { vocab, order: n, k, table, calls: AtomicUsize::new(0) })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of [`NgramLm::log_prob`] calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// `log P(y | history)`, where `history` holds the character indices
    /// emitted so far and `y` is a character or the end symbol.
    pub fn log_prob(&self, history: &[usize], y: usize) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let slot = symbol_slot(&self.vocab, y);
        match self.table.get(&context_of(&self.vocab, self.order, history)) {
            Some(lp) => lp[slot],
            None => -((self.vocab.num_chars() + 1) as f64).ln(),
        }
    }

    /// `log P(s + end)` by the chain rule.
    pub fn score_text(&self, s: &str) -> Result<f64> {
        let seq = self.vocab.encode(s)?;
        Ok((0..seq.len()).map(|i| self.log_prob(&seq[..i], seq[i])).sum())
    }

    /// Distributions of every stored context, in symbol order.
    pub fn contexts(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        self.table.iter().map(|(c, lp)| (c.as_slice(), lp.as_slice()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} n={} k={}\n", self.order, self.k);
        for (ctx, lp) in &self.table {
            let ctx: Vec<String> = ctx.iter().map(|&i| token(&self.vocab, i)).collect();
            let ctx = ctx.join(" ");
            for (slot, &v) in lp.iter().enumerate() {
                let y = if slot == self.vocab.num_chars() { self.vocab.eos() } else { slot };
                let _ = writeln!(out, "{ctx}\t{}\t{}", token(&self.vocab, y), fixed12(v));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (order, k) = match lines.next() {
            Some((_, h)) => parse_header(h)?,
            None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        };
        let mut entries: Vec<(Vec<String>, String, f64)> = Vec::new();
        let mut chars: Vec<char> = Vec::new();
        for (i, line) in lines {
            let bad = |message: &str| Error::Parse { line: i + 1, message: message.to_string() };
            let mut f = line.split('\t');
            let (ctx, y, v) = match (f.next(), f.next(), f.next(), f.next()) {
                (Some(c), Some(y), Some(v), None) => (c, y, v),
                _ => return Err(bad("expected context<TAB>symbol<TAB>logprob")),
            };
            let v: f64 = v.parse().map_err(|_| bad("log-probability is not a number"))?;
            if !v.is_finite() || v > 0.0 {
                return Err(bad("log-probability must be finite and at most 0"));
            }
            let ctx: Vec<String> = if ctx.is_empty() { Vec::new() } else { ctx.split(' ').map(str::to_string).collect() };
            if ctx.len() != order - 1 {
                return Err(bad("context length does not match the order"));
            }
            if let Some(c) = untoken(y).map_err(|m| bad(&m))? {
                if !chars.contains(&c) {
                    chars.push(c);
                }
            }
            entries.push((ctx, y.to_string(), v));
        }
        let vocab = Vocabulary::new(chars)?;
        let symbols = vocab.num_chars() + 1;
        let index = |tok: &str| -> Result<usize> {
            match tok {
                "<sos>" => Ok(vocab.sos()),
                "<eos>" => Ok(vocab.eos()),
                t => untoken(t)
                    .map_err(Error::Format)?
                    .and_then(|c| vocab.index_of(c))
                    .ok_or_else(|| Error::Format(format!("context symbol {t:?} is not predicted anywhere"))),
            }
        };
        let mut table: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (ctx, y, v) in entries {
            let ctx = ctx.iter().map(|t| index(t)).collect::<Result<Vec<_>>>()?;
            let slot = symbol_slot(&vocab, index(&y)?);
            table.entry(ctx).or_insert_with(|| vec![f64::NAN; symbols])[slot] = v;
        }
        if table.values().any(|lp| lp.iter().any(|v| v.is_nan())) {
            return Err(Error::Format("a context does not list every symbol".into()));
        }
        Ok(Self { vocab, order, k, table, calls: AtomicUsize::new(0) })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn symbol_slot(vocab: &Vocabulary, y: usize) -> usize {
    if y == vocab.eos() {
        vocab.num_chars()
    } else {
        y
    }
}

fn context_of(vocab: &Vocabulary, n: usize, history: &[usize]) -> Vec<usize> {
    let want = n - 1;
    let take = history.len().min(want);
    let mut ctx = vec![vocab.sos(); want - take];
    ctx.extend_from_slice(&history[history.len() - take..]);
    ctx
}

fn token(vocab: &Vocabulary, i: usize) -> String {
    if i == vocab.sos() {
        return "<sos>".into();
    }
    if i == vocab.eos() {
        return "<eos>".into();
    }
    match vocab.char_at(i) {
        Some(' ') => "<sp>".into(),
        Some('\t') => "<tab>".into(),
        Some('<') => "<lt>".into(),
        Some(c) => c.to_string(),
        None => unreachable!("index {i} outside the vocabulary"),
    }
}

/// `Ok(None)` for the sentinels.
fn untoken(t: &str) -> std::result::Result<Option<char>, String> {
    match t {
        "<sos>" | "<eos>" => Ok(None),
        "<sp>" => Ok(Some(' ')),
        "<tab>" => Ok(Some('\t')),
        "<lt>" => Ok(Some('<')),
        _ => {
            let mut it = t.chars();
            match (it.next(), it.next()) {
                (Some(c), None) if c != '<' => Ok(Some(c)),
                _ => Err(format!("bad symbol token {t:?}")),
            }
        }
    }
}

fn parse_header(h: &str) -> Result<(usize, f64)> {
    let bad = |m: &str| Error::Format(format!("language model header {h:?}: {m}"));
    let rest = h.strip_prefix(HEADER).ok_or_else(|| bad("unknown format or version"))?;
    let mut n = None;
    let mut k = None;
    for part in rest.split_whitespace() {
        match part.split_once('=') {
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("k", v)) => k = v.parse::<f64>().ok(),
            _ => return Err(bad("unexpected field")),
        }
    }
    match (n, k) {
        (Some(n), Some(k)) if n >= 1 && k > 0.0 => Ok((n, k)),
        _ => Err(bad("needs n >= 1 and k > 0")),
    }
}

/// Fixed-point decimal with 12 significant digits.
fn fixed12(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000000".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}
