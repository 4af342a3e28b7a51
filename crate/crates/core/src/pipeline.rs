//! End-to-end commands: synthesize, train an LM, train, decode, evaluate,
//! check gradients. The command-line front end is a thin layer over these.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DecodeConfig, RunConfig};
use crate::error::{Error, Result};
use crate::lm::NgramLm;
use crate::metrics::corpus_cer;
use crate::model::{Model, ModelParams};
use crate::numerics::{grad_check_with, GradCheck, Stencil, Var};
use crate::search::StrategyRegistry;
use crate::synth::{read_dataset, synthesize, write_dataset, SynthConfig};
use crate::train::{teacher_forced_accuracy, Trainer, UpdateRecord};
use crate::vocab::Vocabulary;

pub const THREADS_ENV: &str = "ARSG_THREADS";

/// Worker count from `ARSG_THREADS`; 1 when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} {} does not exist", path.display())))
    }
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    let data = synthesize(cfg)?;
    write_dataset(out, &data)?;
    Ok(data.len())
}

/// A text line from a dataset, decode output or plain transcript file.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEntry {
    pub id: Option<String>,
    pub text: String,
}

/// Reads one entry per non-empty line. JSON object lines contribute their
/// `id` and their `transcript`, `hyp` or `text` field; other lines are
/// taken verbatim.
pub fn read_text_entries(path: &Path) -> Result<Vec<TextEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            let text = ["transcript", "hyp", "text"]
                .iter()
                .find_map(|k| v.get(*k).and_then(|t| t.as_str()))
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: "object has no transcript, hyp or text field".into(),
                })?;
            let id = v.get("id").and_then(|t| t.as_str()).map(str::to_string);
            out.push(TextEntry { id, text: text.to_string() });
        } else {
            out.push(TextEntry { id: None, text: line.to_string() });
        }
    }
    Ok(out)
}

pub fn lm_train(corpus: &Path, vocab: Option<&Path>, n: usize, k: f64, out: &Path) -> Result<NgramLm> {
    require_file(corpus, "corpus")?;
    let lines = read_text_entries(corpus)?;
    let texts: Vec<&str> = lines.iter().map(|e| e.text.as_str()).collect();
    let vocab = match vocab {
        Some(p) => {
            require_file(p, "vocabulary")?;
            Vocabulary::read(p)?
        }
        None => Vocabulary::from_texts(texts.iter().copied())?,
    };
    let lm = NgramLm::train(texts, vocab, n, k)?;
    lm.write(out)?;
    Ok(lm)
}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<UpdateRecord>,
    pub teacher_forced_accuracy: f64,
}

/// Trains a model on `data`, writing the checkpoint to `out` and the
/// per-update log (`update,loss,grad_norm`) to `log`.
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    log: &Path,
    threads: usize,
    progress: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    require_file(data, "dataset")?;
    let data = read_dataset(data)?;
    if data.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    let vocab = Vocabulary::from_texts(data.iter().map(|u| u.transcript.as_str()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let model = Model::new(cfg.model.clone(), vocab, &mut rng)?;
    for u in &data {
        model.input(u)?;
    }
    let mut trainer = Trainer::new(model, cfg.train.clone())?.with_threads(threads);
    let mut w = csv::Writer::from_path(log).map_err(csv_error)?;
    let interval = cfg.train.eval_interval;
    let history = trainer.run(&data, |_, rec| {
        w.serialize(rec).map_err(csv_error)?;
        if interval > 0 && rec.update % interval as u64 == 0 {
            progress(&format!("update {} loss {:.5} grad_norm {:.4}", rec.update, rec.loss, rec.grad_norm));
        }
        Ok(())
    })?;
    w.flush()?;
    Checkpoint::from_trainer(&trainer).save(out)?;
    let acc = teacher_forced_accuracy(&trainer.model, &data)?;
    progress(&format!("teacher-forced accuracy {acc:.4}"));
    Ok(TrainSummary { history, teacher_forced_accuracy: acc })
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        k => Error::Format(format!("training log: {k:?}")),
    }
}

/// One line of decode output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub hyp: String,
    pub am_logp: f64,
    pub lm_logp: f64,
    pub fused: f64,
}

pub fn decode(ckpt: &Path, data: &Path, lm: Option<&Path>, dc: &DecodeConfig, out: &Path) -> Result<Vec<DecodeRecord>> {
    require_file(ckpt, "checkpoint")?;
    require_file(data, "dataset")?;
    let model = Checkpoint::load(ckpt)?.model;
    let lm = match lm {
        Some(p) => {
            require_file(p, "language model")?;
            Some(NgramLm::read(p)?)
        }
        None => None,
    };
    let strategy = StrategyRegistry::default().get(&dc.strategy)?;
    let data = read_dataset(data)?;
    let mut records = Vec::with_capacity(data.len());
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    for u in &data {
        let d = strategy.decode(&model, lm.as_ref(), u, dc.search(), dc.options())?;
        let rec = DecodeRecord { id: u.id.clone(), hyp: d.text, am_logp: d.am_logp, lm_logp: d.lm_logp, fused: d.fused };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
        records.push(rec);
    }
    w.flush()?;
    Ok(records)
}

/// Corpus CER of `hyp` against `reference`. Entries are paired by id when
/// every reference entry has one, otherwise line by line.
pub fn eval(reference: &Path, hyp: &Path) -> Result<f64> {
    require_file(reference, "reference")?;
    require_file(hyp, "hypothesis file")?;
    let refs = read_text_entries(reference)?;
    let hyps = read_text_entries(hyp)?;
    let by_id = !refs.is_empty() && refs.iter().all(|e| e.id.is_some()) && hyps.iter().all(|e| e.id.is_some());
    let pairs: Vec<(&str, &str)> = if by_id {
        let map: HashMap<&str, &str> = hyps.iter().map(|e| (e.id.as_deref().unwrap(), e.text.as_str())).collect();
        refs.iter()
            .map(|r| {
                let id = r.id.as_deref().unwrap();
                map.get(id)
                    .map(|h| (r.text.as_str(), *h))
                    .ok_or_else(|| Error::data(format!("no hypothesis for utterance {id}")))
            })
            .collect::<Result<_>>()?
    } else {
        if refs.len() != hyps.len() {
            return Err(Error::data(format!("{} references but {} hypotheses", refs.len(), hyps.len())));
        }
        refs.iter().zip(&hyps).map(|(r, h)| (r.text.as_str(), h.text.as_str())).collect()
    };
    corpus_cer(pairs)
}

/// Finite-difference step of [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 2e-3;

/// Gradient check of the sequence loss of the first synthesized utterance
/// under teacher forcing, on a model built from `cfg`.
pub fn gradcheck(cfg: &RunConfig) -> Result<GradCheck> {
    let synth = SynthConfig { utterances: 1, ..cfg.synth.clone() };
    let u = synthesize(&synth)?.remove(0);
    let vocab = Vocabulary::new(cfg.synth.vocab.chars())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let model = Model::new(cfg.model.clone(), vocab, &mut rng)?;
    model_grad_check(&model, &u, GRADCHECK_STEP, Stencil::FivePoint)
}

/// Compares the analytic gradient of the teacher-forced loss of `u` with
/// central differences over every parameter.
pub fn model_grad_check(
    model: &Model,
    u: &crate::encoder::MultichannelUtterance,
    eps: f64,
    stencil: Stencil,
) -> Result<GradCheck> {
    let leaves = model.params.leaves();
    grad_check_with(
        |tape, vars| {
            let mut it = vars.iter();
            let pv: ModelParams<Var> = model.params.map("", &mut |_, _| *it.next().expect("one var per leaf"));
            let (loss, _) = model.sequence_loss_on(tape, &pv, u, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
            Ok(loss)
        },
        &leaves,
        eps,
        stencil,
    )
}

/// Name of the parameter at position `index` of [`ModelParams::leaves`].
pub fn param_name(model: &Model, index: usize) -> String {
    model.params.names().get(index).cloned().unwrap_or_default()
}
