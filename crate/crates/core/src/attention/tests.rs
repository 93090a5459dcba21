use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, Tape, Tensor};

fn randomize_bias<T: crate::Scalar>(w: &mut AttentionWeights<T>, rng: &mut ChaCha8Rng) {
    if let Some(b) = &mut w.rel_bias {
        b.data_mut().iter_mut().for_each(|v| *v = T::lit(rng.gen_range(-0.5..0.5)));
    }
    for b in [&mut w.query_b, &mut w.value_b, &mut w.out_b] {
        b.data_mut().iter_mut().for_each(|v| *v = T::lit(rng.gen_range(-0.2..0.2)));
    }
}

fn rand_input<T: crate::Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-1.0..1.0)))
}

#[test]
fn window_soundness_exhaustive() {
    for len in 1..=64usize {
        for k in [1usize, 3, 5, 7] {
            for d in [1usize, 2, 3, 8] {
                for i in 0..len {
                    let w = neighborhood_window_1d(i, len, k, d).unwrap();
                    let coset: Vec<usize> = (i % d..len).step_by(d).collect();
                    assert_eq!(w.len(), k.min(coset.len()));
                    assert!(w.contains(&i));
                    assert!(w.iter().all(|&j| j < len && j % d == i % d));
                    let first = coset.iter().position(|&j| j == w[0]).unwrap();
                    assert_eq!(&coset[first..first + w.len()], &w[..]);
                    // centered whenever the coset leaves room on both sides
                    let pos = i / d;
                    if pos >= k / 2 && pos + k / 2 < coset.len() {
                        assert_eq!(w[0], i - (k / 2) * d);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_query_key_gives_window_mean_of_values() {
    let (t, c) = (10, 4);
    let cfg = AttentionConfig::new(3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = AttentionWeights::<f64>::random(&mut rng, c, &cfg, AttentionKind::Temporal);
    w.query_w = Tensor::zeros([c, c]);
    w.key_w = Tensor::zeros([c, c]);
    w.value_w = Tensor::eye(c);
    w.out_w = Tensor::eye(c);
    let x = rand_input::<f64>(&mut rng, &[t, c]);
    let y = na1d(&x, &w, &cfg).unwrap();
    for i in 0..t {
        let win = neighborhood_window_1d(i, t, 3, 2).unwrap();
        for e in 0..c {
            let mean = win.iter().map(|&j| x.at(&[j, e])).sum::<f64>() / win.len() as f64;
            assert!((y.at(&[i, e]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn wide_kernel_equals_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = 6;
    let cfg = AttentionConfig::new(2 * t - 1, 1, 2);
    let mut w = AttentionWeights::<f32>::random(&mut rng, 8, &cfg, AttentionKind::Temporal);
    randomize_bias(&mut w, &mut rng);
    let x = rand_input::<f32>(&mut rng, &[t, 8]);
    let y = na1d(&x, &w, &cfg).unwrap();
    let full = full_attention_oracle(&x, &w, &cfg, &vec![true; t * t], BiasLayout::Sequence { dilation: 1 })
        .unwrap();
    assert!(y.max_abs_diff(&full) < 1e-5);
}

#[test]
fn na1d_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = AttentionConfig::new(5, 4, 4);
    let w = AttentionWeights::<f32>::random(&mut rng, 8, &cfg, AttentionKind::Temporal);
    for t in [1usize, 7, 100] {
        let x = rand_input::<f32>(&mut rng, &[t, 8]);
        assert_eq!(na1d(&x, &w, &cfg).unwrap().shape(), &[t, 8]);
    }
}

#[test]
fn na2d_single_stem_reduces_to_na1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AttentionConfig::new(5, 1, 2);
    let mut w2 = AttentionWeights::<f64>::random(&mut rng, 6, &cfg, AttentionKind::Grid);
    randomize_bias(&mut w2, &mut rng);
    // with one stem only the zero-instrument-offset row of the table is used
    let mut w1 = w2.clone();
    let table = w2.rel_bias.as_ref().unwrap();
    let span = 9;
    w1.rel_bias = Some(Tensor::from_fn([2, span], |i| {
        let (h, dt) = (i / span, i % span);
        table.data()[h * span * span + 4 * span + dt]
    }));
    let x = rand_input::<f64>(&mut rng, &[1, 13, 6]);
    let y2 = na2d(&x, &w2, &cfg).unwrap();
    let y1 = na1d(&x.reshape([13, 6]).unwrap(), &w1, &cfg).unwrap();
    assert!(y2.reshape([13, 6]).unwrap().max_abs_diff(&y1) < 1e-12);
}

#[test]
fn identical_stems_get_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = AttentionConfig::new(5, 1, 2);
    let w = AttentionWeights::<f32>::random(&mut rng, 4, &cfg, AttentionKind::Grid);
    let stem = rand_input::<f32>(&mut rng, &[9, 4]);
    let mut data = stem.data().to_vec();
    data.extend_from_slice(stem.data());
    let x = Tensor::new([2, 9, 4], data).unwrap();
    let y = na2d(&x, &w, &cfg).unwrap();
    let (a, b) = y.data().split_at(36);
    assert_eq!(a, b);
}

#[test]
fn grid_covering_kernel_equals_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = AttentionConfig::new(5, 1, 4);
    let mut w = AttentionWeights::<f32>::random(&mut rng, 8, &cfg, AttentionKind::Grid);
    randomize_bias(&mut w, &mut rng);
    let x = rand_input::<f32>(&mut rng, &[4, 5, 8]);
    let y = na2d(&x, &w, &cfg).unwrap();
    let full = full_attention_oracle(
        &x,
        &w,
        &cfg,
        &vec![true; 400],
        BiasLayout::Grid { rows: 4, frames: 5 },
    )
    .unwrap();
    assert!(y.max_abs_diff(&full) < 1e-5);
}

#[test]
fn oracle_identity_mask_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = AttentionConfig::new(3, 1, 1);
    let w = AttentionWeights::<f64>::random(&mut rng, 3, &cfg, AttentionKind::Temporal);
    let x = rand_input::<f64>(&mut rng, &[4, 3]);
    let eye: Vec<bool> = (0..16).map(|i| i / 4 == i % 4).collect();
    let y = full_attention_oracle(&x, &w, &cfg, &eye, BiasLayout::None).unwrap();
    let tape = Tape::inference();
    let vars = w.bind(&tape);
    let v = tape.linear(&tape.constant(x.clone()), &vars.value_w, Some(&vars.value_b)).unwrap();
    let o = tape.linear(&v, &vars.out_w, Some(&vars.out_b)).unwrap();
    assert!(y.max_abs_diff(o.value()) < 1e-12);

    let mut bad = eye;
    bad[5] = false;
    assert!(matches!(
        full_attention_oracle(&x, &w, &cfg, &bad, BiasLayout::None),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn randomized_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..60 {
        let k = [3usize, 5][rng.gen_range(0..2)];
        let d = [1usize, 2, 4, 8][rng.gen_range(0..4)];
        let heads = [1usize, 2, 4][rng.gen_range(0..3)];
        let c = heads * rng.gen_range(1..4);
        if case % 2 == 0 {
            let t = rng.gen_range(1..=64);
            let cfg = AttentionConfig::new(k, d, heads);
            let mut w = AttentionWeights::<f32>::random(&mut rng, c, &cfg, AttentionKind::Temporal);
            randomize_bias(&mut w, &mut rng);
            let x = rand_input::<f32>(&mut rng, &[t, c]);
            let mask = Neighborhood::dilated_1d(1, t, k, d).unwrap().dense_mask();
            let full = full_attention_oracle(&x, &w, &cfg, &mask, BiasLayout::Sequence { dilation: d }).unwrap();
            let y = na1d(&x, &w, &cfg).unwrap();
            assert!(y.max_abs_diff(&full) < 1e-5, "1d case {case}");
        } else {
            let s = rng.gen_range(1..=4);
            let t = rng.gen_range(1..=16);
            let cfg = AttentionConfig::new(k, 1, heads);
            let mut w = AttentionWeights::<f32>::random(&mut rng, c, &cfg, AttentionKind::Grid);
            randomize_bias(&mut w, &mut rng);
            let x = rand_input::<f32>(&mut rng, &[s, t, c]);
            let mask = Neighborhood::grid_2d(s, t, k).unwrap().dense_mask();
            let full = full_attention_oracle(&x, &w, &cfg, &mask, BiasLayout::Grid { rows: s, frames: t }).unwrap();
            let y = na2d(&x, &w, &cfg).unwrap();
            assert!(y.max_abs_diff(&full) < 1e-5, "2d case {case}");
        }
    }
}

fn attention_grad_error(kind: AttentionKind, seed: u64, dropout: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, heads, k) = (6, 2, 3);
    let cfg = AttentionConfig::new(k, 2, heads);
    let mut w = AttentionWeights::<f64>::random(&mut rng, c, &cfg, kind);
    randomize_bias(&mut w, &mut rng);
    let (shape, nb) = match kind {
        AttentionKind::Temporal => ([2, 9, c], Neighborhood::dilated_1d(2, 9, k, 2).unwrap()),
        AttentionKind::Grid => ([3, 5, c], Neighborhood::grid_2d(3, 5, k).unwrap()),
    };
    let x = rand_input::<f64>(&mut rng, &shape);
    let probe = rand_input::<f64>(&mut rng, &shape);
    let params = vec![
        x,
        w.query_w.clone(),
        w.query_b.clone(),
        w.key_w.clone(),
        w.value_w.clone(),
        w.value_b.clone(),
        w.out_w.clone(),
        w.out_b.clone(),
        w.rel_bias.clone().unwrap(),
    ];
    grad_check(&params, 1e-5, |t, p| {
        let vars = AttentionVars {
            query_w: p[1].clone(),
            query_b: p[2].clone(),
            key_w: p[3].clone(),
            value_w: p[4].clone(),
            value_b: p[5].clone(),
            out_w: p[6].clone(),
            out_b: p[7].clone(),
            rel_bias: Some(p[8].clone()),
        };
        // a fixed-seed mask keeps the function deterministic across evaluations
        let mut drng = ChaCha8Rng::seed_from_u64(99);
        let drop = dropout.then_some((0.3, &mut drng as &mut dyn rand::RngCore));
        let y = attend(t, &p[0], &vars, Rc::new(nb.clone()), heads, drop)?;
        let y = t.mul(&y, &t.constant(probe.clone()))?;
        t.sum(&y)
    })
    .unwrap()
    .max_relative_error
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..3 {
        for kind in [AttentionKind::Temporal, AttentionKind::Grid] {
            for dropout in [false, true] {
                let e = attention_grad_error(kind, seed, dropout);
                assert!(e < 1e-4, "{kind:?} seed {seed} dropout {dropout}: {e}");
            }
        }
    }
}

#[test]
fn interior_outputs_are_translation_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (t, c, d, k) = (60usize, 4usize, 3usize, 5usize);
    let cfg = AttentionConfig::new(k, d, 2);
    let mut w = AttentionWeights::<f64>::random(&mut rng, c, &cfg, AttentionKind::Temporal);
    randomize_bias(&mut w, &mut rng);
    let x = rand_input::<f64>(&mut rng, &[t + d, c]);
    let a = Tensor::new([t, c], x.data()[..t * c].to_vec()).unwrap();
    let b = Tensor::new([t, c], x.data()[d * c..].to_vec()).unwrap();
    let ya = na1d(&a, &w, &cfg).unwrap();
    let yb = na1d(&b, &w, &cfg).unwrap();
    let reach = (k / 2) * d;
    for i in reach + d..t - reach - d {
        for e in 0..c {
            assert!((ya.at(&[i, e]) - yb.at(&[i - d, e])).abs() < 1e-12);
        }
    }
}
