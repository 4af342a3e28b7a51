mod common;

use arsg::attention::{
    align_and_context, content_energy, location_energy, next_window, AttentionConfig, AttentionParams,
    AttentionRegistry, AttentionState, Window,
};
use arsg::numerics::{softmax, Tensor};
use common::{add, max_diff, mv, rng, uniform};
use proptest::prelude::*;
use rand::Rng;

const ENC: usize = 3;
const DEC: usize = 2;

fn params(location: bool, seed: u64) -> AttentionParams<Tensor> {
    let cfg = AttentionConfig { scorer: "location".into(), dim: 3, filters: 2, taps: 3 };
    let mut p = AttentionParams::init(&cfg, DEC, ENC, location, &mut rng(seed), 0.8).unwrap();
    p.bias = uniform(&mut rng(seed + 1000), &[3], 0.5);
    p
}

fn scalar_energy(p: &AttentionParams<Tensor>, s: &[f64], h: &[f64], f: Option<&[f64]>) -> f64 {
    let mut pre = add(&add(&mv(&p.w_dec, s), &mv(&p.v_enc, h)), p.bias.data());
    if let Some(f) = f {
        pre = add(&pre, &mv(p.u_loc.as_ref().unwrap(), f));
    }
    pre.iter().zip(p.w_energy.data()).map(|(a, w)| w * a.tanh()).sum()
}

/// Location features by direct summation over the zero-padded alignment.
fn scalar_features(q: &Tensor, alpha: &[f64], l: usize) -> Vec<f64> {
    let half = (q.cols() / 2) as isize;
    (0..q.rows())
        .map(|fi| {
            (0..q.cols())
                .map(|j| {
                    let src = l as isize + j as isize - half;
                    if src >= 0 && (src as usize) < alpha.len() {
                        q.get(fi, j) * alpha[src as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

fn random_alpha(r: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| r.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

#[test]
fn content_energy_matches_scalar_evaluation() {
    let p = params(false, 1);
    let mut r = rng(2);
    for _ in 0..20 {
        let s = uniform(&mut r, &[DEC], 1.0);
        let h = uniform(&mut r, &[ENC], 1.0);
        let e = content_energy(&p, &s, &h).unwrap();
        assert!((e - scalar_energy(&p, s.data(), h.data(), None)).abs() < 1e-12);
    }
}

#[test]
fn zero_energy_vector_gives_zero_energy() {
    let mut p = params(false, 3);
    p.w_energy = Tensor::zeros(&[3]);
    let mut r = rng(4);
    assert_eq!(content_energy(&p, &uniform(&mut r, &[DEC], 1.0), &uniform(&mut r, &[ENC], 1.0)).unwrap(), 0.0);
}

#[test]
fn location_energy_matches_scalar_evaluation() {
    let p = params(true, 5);
    let mut r = rng(6);
    for _ in 0..20 {
        let s = uniform(&mut r, &[DEC], 1.0);
        let h = uniform(&mut r, &[ENC], 1.0);
        let f = uniform(&mut r, &[2], 1.0);
        let e = location_energy(&p, &s, &h, &f).unwrap();
        assert!((e - scalar_energy(&p, s.data(), h.data(), Some(f.data()))).abs() < 1e-12);
    }
}

#[test]
fn averaging_filter_on_uniform_alignment_is_flat_inside() {
    let (l, k) = (12, 5);
    let q = Tensor::filled(&[1, k], 1.0 / k as f64);
    let f = Tensor::conv1d_time(&q, &Tensor::filled(&[l], 1.0 / l as f64)).unwrap();
    for pos in k / 2..l - k / 2 {
        assert!((f.get(pos, 0) - 1.0 / l as f64).abs() < 1e-15);
    }
    assert!(f.get(0, 0) < 1.0 / l as f64);
}

#[test]
fn full_alignment_matches_scalar_oracle() {
    let registry = AttentionRegistry::default();
    let mut r = rng(7);
    for (name, location) in [("content", false), ("location", true)] {
        let scorer = registry.get(name).unwrap();
        let p = params(location, 8);
        let len = 6;
        let h = uniform(&mut r, &[len, ENC], 1.0);
        let s = uniform(&mut r, &[DEC], 1.0);
        let alpha_prev = random_alpha(&mut r, len);
        let st = AttentionState { alpha_prev: Tensor::vector(alpha_prev.clone()), window: None };
        let (alpha, c) = align_and_context(scorer.as_ref(), &p, &s, &h, &st).unwrap();

        let energies: Vec<f64> = (0..len)
            .map(|l| {
                let f = location.then(|| scalar_features(p.q_filters.as_ref().unwrap(), &alpha_prev, l));
                scalar_energy(&p, s.data(), h.row(l), f.as_deref())
            })
            .collect();
        let want = softmax(&energies).unwrap();
        assert!(max_diff(alpha.data(), &want) < 1e-12, "{name}");
        let ctx: Vec<f64> = (0..ENC).map(|j| (0..len).map(|l| want[l] * h.get(l, j)).sum()).collect();
        assert!(max_diff(c.data(), &ctx) < 1e-12, "{name}");
    }
}

#[test]
fn single_frame_and_symmetric_cases() {
    let scorer = AttentionRegistry::default().get("location").unwrap();
    let p = params(true, 9);
    let mut r = rng(10);
    let h = uniform(&mut r, &[1, ENC], 1.0);
    let (a, c) = align_and_context(scorer.as_ref(), &p, &uniform(&mut r, &[DEC], 1.0), &h, &AttentionState::uniform(1)).unwrap();
    assert_eq!(a.data(), &[1.0]);
    assert!(max_diff(c.data(), h.row(0)) < 1e-15);

    let mut flat = p.clone();
    flat.w_energy = Tensor::zeros(&[3]);
    let h = uniform(&mut r, &[4, ENC], 1.0);
    let (a, c) = align_and_context(scorer.as_ref(), &flat, &uniform(&mut r, &[DEC], 1.0), &h, &AttentionState::uniform(4)).unwrap();
    assert!(max_diff(a.data(), &[0.25; 4]) < 1e-15);
    let mean: Vec<f64> = (0..ENC).map(|j| (0..4).map(|l| h.get(l, j)).sum::<f64>() / 4.0).collect();
    assert!(max_diff(c.data(), &mean) < 1e-15);
}

#[test]
fn zero_location_weights_reduce_to_content_attention() {
    let reg = AttentionRegistry::default();
    let mut p = params(true, 11);
    p.u_loc = Some(Tensor::zeros(&[3, 2]));
    let mut r = rng(12);
    let h = uniform(&mut r, &[7, ENC], 1.0);
    let s = uniform(&mut r, &[DEC], 1.0);
    let st = AttentionState { alpha_prev: Tensor::vector(random_alpha(&mut r, 7)), window: None };
    let loc = align_and_context(reg.get("location").unwrap().as_ref(), &p, &s, &h, &st).unwrap();
    let con = align_and_context(reg.get("content").unwrap().as_ref(), &p, &s, &h, &st).unwrap();
    assert!(loc.0.max_abs_diff(&con.0) <= 1e-12);
    assert!(loc.1.max_abs_diff(&con.1) <= 1e-12);
}

#[test]
fn full_window_equals_unwindowed() {
    let scorer = AttentionRegistry::default().get("location").unwrap();
    let p = params(true, 13);
    let mut r = rng(14);
    let h = uniform(&mut r, &[9, ENC], 1.0);
    let s = uniform(&mut r, &[DEC], 1.0);
    let a = random_alpha(&mut r, 9);
    let open = AttentionState { alpha_prev: Tensor::vector(a.clone()), window: None };
    let full = AttentionState { alpha_prev: Tensor::vector(a), window: Some(Window::full(9)) };
    assert_eq!(
        align_and_context(scorer.as_ref(), &p, &s, &h, &open).unwrap(),
        align_and_context(scorer.as_ref(), &p, &s, &h, &full).unwrap()
    );
}

#[test]
fn window_examples() {
    let peak = |at: usize, len: usize| {
        let mut a = vec![0.0; len];
        a[at] = 1.0;
        a
    };
    assert_eq!(next_window(&peak(0, 10), 2, 10), Window { start: 0, end: 3 });
    assert_eq!(next_window(&peak(4, 10), 2, 10), Window { start: 2, end: 7 });
    assert_eq!(next_window(&[0.25; 4], 1, 4), Window { start: 0, end: 2 });
    assert_eq!(next_window(&peak(9, 10), 3, 10), Window { start: 6, end: 10 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windowed_alignment_invariants(seed in 0u64..10_000, len in 1usize..15, hw in 1usize..4, loc in any::<bool>()) {
        let reg = AttentionRegistry::default();
        let scorer = reg.get(if loc { "location" } else { "content" }).unwrap();
        let p = params(loc, seed % 17);
        let mut r = rng(seed);
        let h = uniform(&mut r, &[len, ENC], 2.0);
        let s = uniform(&mut r, &[DEC], 2.0);
        let a = random_alpha(&mut r, len);
        let w = next_window(&a, hw, len);
        let st = AttentionState { alpha_prev: Tensor::vector(a), window: Some(w) };
        let (alpha, c) = align_and_context(scorer.as_ref(), &p, &s, &h, &st).unwrap();
        prop_assert!((alpha.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for l in 0..len {
            let inside = l >= w.start && l < w.end;
            let ok = if inside { alpha.data()[l] > 0.0 } else { alpha.data()[l] == 0.0 };
            prop_assert!(ok, "frame {}", l);
        }
        for j in 0..ENC {
            let col = (w.start..w.end).map(|l| h.get(l, j));
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            prop_assert!(c.data()[j] >= lo - 1e-12 && c.data()[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn time_shift_with_zero_padding_shifts_alignment(seed in 0u64..10_000, len in 1usize..10, pad in 1usize..4) {
        let scorer = AttentionRegistry::default().get("location").unwrap();
        let p = params(true, seed % 13);
        let mut r = rng(seed);
        let h = uniform(&mut r, &[len, ENC], 1.0);
        let s = uniform(&mut r, &[DEC], 1.0);
        let a = random_alpha(&mut r, len);
        let total = len + 2 * pad;
        let mut hs = vec![0.0; total * ENC];
        hs[pad * ENC..(pad + len) * ENC].copy_from_slice(h.data());
        let mut as_ = vec![0.0; total];
        as_[pad..pad + len].copy_from_slice(&a);
        let base = AttentionState { alpha_prev: Tensor::vector(a), window: None };
        let shifted = AttentionState { alpha_prev: Tensor::vector(as_), window: Some(Window { start: pad, end: pad + len }) };
        let (a0, c0) = align_and_context(scorer.as_ref(), &p, &s, &h, &base).unwrap();
        let (a1, c1) = align_and_context(scorer.as_ref(), &p, &s, &Tensor::matrix(total, ENC, hs).unwrap(), &shifted).unwrap();
        prop_assert!(max_diff(a0.data(), &a1.data()[pad..pad + len]) <= 1e-12);
        prop_assert!(c0.max_abs_diff(&c1) <= 1e-12);
    }
}

#[test]
fn registry_rejects_unknown_scorer() {
    let reg = AttentionRegistry::default();
    assert_eq!(reg.names().collect::<Vec<_>>(), vec!["content", "location"]);
    assert_eq!(reg.get("dot").unwrap_err().category(), "config");
}
