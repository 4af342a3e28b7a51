//! Mini-batch training with Adam and global-norm gradient clipping.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::LossTrace;
use crate::encoder::MultichannelUtterance;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub max_updates: usize,
    pub sampling_rate: f64,
    pub seed: u64,
    /// Updates between progress evaluations; 0 disables them.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip: 5.0,
            batch_size: 8,
            max_updates: 2000,
            sampling_rate: 0.1,
            seed: 1,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip > 0.0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.sampling_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates applied.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.dims())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// Applies one update to every parameter of `params`, visited in
    /// [`ModelParams::leaves`] order.
    pub fn update(&mut self, params: &mut ModelParams<Tensor>, grads: &[Tensor], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powf(self.t as f64);
        let c2 = 1.0 - cfg.beta2.powf(self.t as f64);
        let mut k = 0;
        params.for_each_mut("", &mut |_, p| {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
            k += 1;
        });
    }
}

/// `sqrt(Σ ‖g‖²)` over all tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `clip`; returns the
/// norm before clipping.
pub fn clip_by_global_norm(grads: &mut [Tensor], clip: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Loss, target count, gradient (in [`crate::model::ModelParams::leaves`]
/// order) and input trace of one utterance.
#[derive(Debug, Clone)]
pub struct UtteranceGradient {
    pub loss: f64,
    pub targets: usize,
    pub grads: Vec<Tensor>,
    pub trace: LossTrace,
}

pub fn utterance_gradient(
    model: &Model,
    u: &MultichannelUtterance,
    sampling_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UtteranceGradient> {
    let tape = Tape::new();
    let pv = model.params.bind(&tape);
    let (loss, trace) = model.sequence_loss_on(&tape, &pv, u, sampling_rate, rng)?;
    let value = tape.value(&loss).item();
    let mut g = tape.backward(loss)?;
    let grads = pv
        .leaves()
        .into_iter()
        .zip(model.params.leaves())
        .map(|(v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.dims())))
        .collect();
    Ok(UtteranceGradient { loss: value, targets: trace.inputs.len(), grads, trace })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    /// Mean loss per target character over the batch.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Model plus optimizer and sampling state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    threads: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&model.params.leaves());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { model, cfg, adam, rng, threads: 1 })
    }

    /// Restores a trainer from saved optimizer and RNG state.
    pub fn resume(model: Model, cfg: TrainConfig, adam: Adam, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let dims: Vec<Vec<usize>> = model.params.leaves().iter().map(|t| t.dims().to_vec()).collect();
        let ok = adam.m.len() == dims.len()
            && adam.v.len() == dims.len()
            && adam.m.iter().zip(&adam.v).zip(&dims).all(|((m, v), d)| m.dims() == d && v.dims() == d);
        if !ok {
            return Err(Error::config("optimizer state does not match the model parameters"));
        }
        Ok(Self { model, cfg, adam, rng, threads: 1 })
    }

    /// Worker threads for the per-utterance passes. Results do not depend
    /// on this.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn updates(&self) -> u64 {
        self.adam.t
    }

    /// One update on a random batch of `data`.
    pub fn step(&mut self, data: &[MultichannelUtterance]) -> Result<UpdateRecord> {
        if data.is_empty() {
            return Err(Error::data("training data is empty"));
        }
        let batch = sample(&mut self.rng, data.len(), self.cfg.batch_size.min(data.len())).into_vec();
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.gen()).collect();
        let model = &self.model;
        let rate = self.cfg.sampling_rate;
        let work = |(&i, &seed): (&usize, &u64)| {
            utterance_gradient(model, &data[i], rate, &mut ChaCha8Rng::seed_from_u64(seed))
        };
        let results: Vec<Result<UtteranceGradient>> = if self.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(|| batch.par_iter().zip(seeds.par_iter()).map(work).collect())
        } else {
            batch.iter().zip(seeds.iter()).map(work).collect()
        };
        let update = self.adam.t + 1;
        let ids = || batch.iter().map(|&i| data[i].id.as_str()).collect::<Vec<_>>().join(",");
        let mut total = 0.0;
        let mut targets = 0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            let r = r.map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("update {update} (batch {}): {m}", ids())),
                e => e,
            })?;
            total += r.loss;
            targets += r.targets;
            match grads.as_mut() {
                None => grads = Some(r.grads),
                Some(acc) => acc.iter_mut().zip(&r.grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let loss = total / targets as f64;
        let mut grads = grads.expect("batch is never empty");
        grads.iter_mut().for_each(|g| g.scale_assign(1.0 / targets as f64));
        let grad_norm = clip_by_global_norm(&mut grads, self.cfg.clip);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Numeric(format!(
                "update {update}: loss {loss}, gradient norm {grad_norm} (batch {})",
                ids()
            )));
        }
        self.adam.update(&mut self.model.params, &grads, &self.cfg);
        Ok(UpdateRecord { update, loss, grad_norm })
    }

    /// Runs until `cfg.max_updates` updates have been applied in total,
    /// calling `on_update` after each.
    pub fn run(
        &mut self,
        data: &[MultichannelUtterance],
        mut on_update: impl FnMut(&Trainer, &UpdateRecord) -> Result<()>,
    ) -> Result<Vec<UpdateRecord>> {
        let mut history = Vec::new();
        while (self.adam.t as usize) < self.cfg.max_updates {
            let rec = self.step(data)?;
            on_update(self, &rec)?;
            history.push(rec);
        }
        Ok(history)
    }
}

/// Teacher-forced next-character accuracy over `data`.
pub fn teacher_forced_accuracy(model: &Model, data: &[MultichannelUtterance]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for u in data {
        let (c, t) = model.teacher_forced_accuracy(u)?;
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total.max(1) as f64)
}
