#![allow(dead_code)]

use arsg::attention::AttentionConfig;
use arsg::encoder::{EncoderConfig, MultichannelUtterance};
use arsg::model::{Model, ModelConfig};
use arsg::vocab::Vocabulary;
use arsg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn vec_of(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Utterance with `channels × frames × dim` uniform features.
pub fn utterance(id: &str, transcript: &str, channels: usize, frames: usize, dim: usize, seed: u64) -> MultichannelUtterance {
    let mut r = rng(seed);
    let channels = (0..channels).map(|_| (0..frames).map(|_| vec_of(&mut r, dim, 1.0)).collect()).collect();
    MultichannelUtterance { id: id.into(), transcript: transcript.into(), channels }
}

pub fn toy_config(layers: usize, cell: usize, proj: usize, dec: usize, input: usize, scorer: &str) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { input_dim: input, layers, cell, proj, ..EncoderConfig::default() },
        attention: AttentionConfig { scorer: scorer.into(), dim: 4, filters: 2, taps: 3 },
        decoder_dim: dec,
        init_scale: 0.3,
        forget_bias: 1.0,
    }
}

pub fn toy_model(chars: &str, cfg: ModelConfig, seed: u64) -> Model {
    Model::new(cfg, Vocabulary::new(chars.chars()).unwrap(), &mut rng(seed)).unwrap()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `W x` by explicit loops over a row-major matrix.
pub fn mv(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    assert_eq!(cols, x.len());
    (0..rows).map(|i| (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum()).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Best finished sequence by brute-force enumeration of every emittable
/// sequence ending in the end symbol within `opts.max_len` steps, ranked
/// like beam search: fused score, then lexicographically smaller prefix.
pub fn exhaustive_best(
    model: &Model,
    lm: Option<&arsg::lm::NgramLm>,
    u: &MultichannelUtterance,
    sp: arsg::search::SearchParams,
    opts: arsg::model::DecodeOptions,
) -> Option<(f64, Vec<usize>)> {
    let session = model.session(u, opts).unwrap();
    let (sos, eos) = (model.vocab.sos(), model.vocab.eos());
    let symbols: Vec<usize> = (0..model.vocab.len()).filter(|&y| y != sos).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0, 0.0, session.start().unwrap())];
    while let Some((prefix, am, lmp, stream)) = stack.pop() {
        let (next, lp) = session.advance(&stream).unwrap();
        for &y in &symbols {
            let mut p = prefix.clone();
            p.push(y);
            let am = am + lp[y];
            let lmp = match lm {
                Some(lm) if sp.beta > 0.0 => lmp + lm.log_prob(&prefix, y),
                _ => 0.0,
            };
            if y == eos {
                let chars = p.len() - 1;
                let mut score = am;
                if sp.beta != 0.0 {
                    score += sp.beta * lmp;
                }
                if sp.gamma != 0.0 {
                    score += sp.gamma * chars as f64;
                }
                let better = match &best {
                    None => true,
                    Some((s, bp)) => score > *s || (score == *s && p < *bp),
                };
                if better {
                    best = Some((score, p));
                }
            } else if p.len() < session.max_len() {
                stack.push((p, am, lmp, next.feed(y)));
            }
        }
    }
    best
}
