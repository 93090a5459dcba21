use aio_core::attention::AttentionKind;
use aio_core::frontend::StemSpectrogram;
use aio_core::model::*;
use aio_core::numerics::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(cfg: &ModelConfig, frames: usize, seed: u64) -> StemSpectrogram<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Tensor::from_fn([cfg.num_stems, frames, cfg.bands], |_| rng.gen_range(0.0..1.5));
    let stems = (0..cfg.num_stems).map(|s| format!("s{s}")).collect();
    StemSpectrogram::new(stems, values, cfg.fps).unwrap()
}

/// Adds noise to every tensor so no path sits at an exact zero.
fn jitter(w: &mut ModelWeights<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.params.visit_mut(&mut |t| {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    });
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn check_invariants(a: &FrameActivations<f64>, frames: usize, vocab: usize) {
    assert_eq!(a.frames(), frames);
    assert_eq!(a.labels.shape(), &[frames, vocab]);
    for v in a.beat.iter().chain(&a.downbeat).chain(&a.boundary).chain(a.labels.data()) {
        assert!(v.is_finite() && (0.0..=1.0).contains(v));
    }
    for row in a.labels.data().chunks(vocab) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn parameter_counts_hit_the_budgets() {
    let full = param_count(&ModelConfig::default());
    assert!((255_000..=345_000).contains(&full), "{full}");
    let small = param_count(&ModelConfig::small());
    assert!((39_000..=53_000).contains(&small), "{small}");
    for cfg in [ModelConfig::default(), ModelConfig::small(), ModelConfig::tiny()] {
        assert_eq!(ModelWeights::<f32>::init(&cfg, 0).unwrap().param_count(), param_count(&cfg));
    }
    let ablated = ModelConfig {
        use_second_dina: false,
        use_instrument_attention: false,
        ..ModelConfig::default()
    };
    assert_eq!(ModelWeights::<f32>::init(&ablated, 0).unwrap().param_count(), param_count(&ablated));
}

#[test]
fn doubling_width_roughly_quadruples_block_params() {
    let body = |c: usize| {
        let cfg = ModelConfig {
            embed_dim: c,
            ..ModelConfig::default()
        };
        let w = ModelWeights::<f32>::init(&cfg, 0).unwrap();
        w.layout()
            .iter()
            .filter(|(n, _)| n.starts_with("block"))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum::<usize>() as f64
    };
    let ratio = body(48) / body(24);
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn init_is_seeded() {
    let cfg = ModelConfig::tiny();
    let a = ModelWeights::<f32>::init(&cfg, 7).unwrap();
    let b = ModelWeights::<f32>::init(&cfg, 7).unwrap();
    let c = ModelWeights::<f32>::init(&cfg, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let names = a.params.names();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len(), "names must be unique");
    let slots: Vec<Tensor<f32>> = a.params.slots().into_iter().cloned().collect();
    assert_eq!(a.params.fill(&slots).unwrap(), a.params);
}

#[test]
fn forward_after_init_is_well_formed() {
    let cfg = ModelConfig {
        num_blocks: 4,
        ..ModelConfig::default()
    };
    let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
    let a = model_forward(&spec(&cfg, 500, 2), &w).unwrap();
    check_invariants(&a, 500, 8);
    let mean_h = a.labels.data().chunks(8).map(entropy).sum::<f64>() / 500.0;
    let max_h = (8f64).ln();
    assert!(mean_h > 0.85 * max_h, "mean label entropy {mean_h} vs {max_h}");
}

#[test]
fn identical_stems_can_be_swapped() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f64>::init(&cfg, 3).unwrap();
    let mut s = spec(&cfg, 40, 4);
    let n = 40 * cfg.bands;
    let first = s.values.data()[..n].to_vec();
    s.values.data_mut()[n..].copy_from_slice(&first);
    let a = model_forward(&s, &w).unwrap();
    s.stems.swap(0, 1);
    let b = model_forward(&s, &w).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dilation_is_live() {
    let cfg = ModelConfig::tiny();
    let off = ModelConfig {
        use_dilation: false,
        ..cfg.clone()
    };
    let w = ModelWeights::<f64>::init(&cfg, 5).unwrap();
    let w_off = ModelWeights {
        config: off,
        params: w.params.clone(),
    };
    let s = spec(&cfg, 64, 6);
    let a = model_forward(&s, &w).unwrap();
    let b = model_forward(&s, &w_off).unwrap();
    let diff = a.beat.iter().zip(&b.beat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-9, "{diff}");
}

#[test]
fn zero_weights_make_a_block_the_identity() {
    let cfg = ModelConfig::tiny();
    let mut w = ModelWeights::<f64>::init(&cfg, 9).unwrap();
    let zero = |t: &mut Tensor<f64>| t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    for b in &mut w.params.blocks {
        b.dina1.visit_mut(&mut |t| zero(t));
        if let Some(a) = &mut b.dina2 {
            a.visit_mut(&mut |t| zero(t));
        }
        b.inst.visit_mut(&mut |t| zero(t));
        for t in [&mut b.fc1.weight, &mut b.fc1.bias, &mut b.fc2.weight, &mut b.fc2.bias] {
            zero(t);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn([2, 16, cfg.embed_dim], |_| rng.gen_range(-1.0..1.0));
    for l in 0..2 {
        assert_eq!(transformer_module_forward(&x, &w, l, &cfg).unwrap(), x);
    }
}

#[test]
fn instrument_ablation_matches_grid_attention_on_one_stem() {
    // one stem: the grid window degenerates to the plain temporal window, so
    // the 1D replacement with bias row k-1 of the grid table is the same map
    let cfg = ModelConfig {
        num_stems: 1,
        ..ModelConfig::tiny()
    };
    let off = ModelConfig {
        use_instrument_attention: false,
        ..cfg.clone()
    };
    let mut w = ModelWeights::<f64>::init(&cfg, 2).unwrap();
    jitter(&mut w, 0.1, 3);
    let mut w_off = ModelWeights::<f64>::init(&off, 2).unwrap();
    let k = cfg.kernel_size;
    let span = 2 * k - 1;
    for (b_off, b) in w_off.params.blocks.iter_mut().zip(&w.params.blocks) {
        let grid = b.inst.rel_bias.clone().unwrap();
        let mut inst = b.inst.clone();
        inst.rel_bias = Some(Tensor::from_fn([cfg.num_heads, span], |i| {
            let (h, j) = (i / span, i % span);
            grid.data()[h * span * span + (k - 1) * span + j]
        }));
        assert_eq!(span, AttentionKind::Temporal.bias_len(k));
        let mut copy = b.clone();
        copy.inst = inst;
        *b_off = copy;
    }
    w_off.params.frontend = w.params.frontend.clone();
    w_off.params.beat = w.params.beat.clone();
    w_off.params.downbeat = w.params.downbeat.clone();
    w_off.params.boundary = w.params.boundary.clone();
    w_off.params.label = w.params.label.clone();
    let s = spec(&cfg, 30, 4);
    let a = model_forward(&s, &w).unwrap();
    let b = model_forward(&s, &w_off).unwrap();
    let diff = a.beat.iter().zip(&b.beat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");

    // weights that disagree with the config are rejected
    let mut w_off2 = w_off.clone();
    w_off2.params.blocks[0].inst.rel_bias = None;
    assert!(model_forward(&s, &w_off2).is_err());
}

#[test]
fn module_preserves_shape() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f32>::init(&cfg, 0).unwrap();
    for t in [16, 4097] {
        let x = Tensor::<f32>::full([2, t, cfg.embed_dim], 0.25);
        assert_eq!(transformer_module_forward(&x, &w, 1, &cfg).unwrap().shape(), &[2, t, cfg.embed_dim]);
    }
}

#[test]
fn forward_is_bit_reproducible_and_rejects_bad_input() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f32>::init(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let values = Tensor::from_fn([2, 100, 9], |_| rng.gen_range(0.0f32..1.0));
    let s = StemSpectrogram::new(vec!["a".into(), "b".into()], values, 100.0).unwrap();
    assert_eq!(model_forward(&s, &w).unwrap(), model_forward(&s, &w).unwrap());

    let slow = StemSpectrogram::new(s.stems.clone(), s.values.clone(), 50.0).unwrap();
    assert!(model_forward(&slow, &w).is_err());
    let empty = StemSpectrogram::new(s.stems, Tensor::zeros([2, 0, 9]), 100.0).unwrap();
    assert!(model_forward(&empty, &w).is_err());
}

#[test]
fn dropout_only_in_training() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f64>::init(&cfg, 4).unwrap();
    let s = spec(&cfg, 32, 1);
    let run = |seed: Option<u64>| {
        let tape = Tape::inference();
        let vars = w.bind(&tape, false);
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let logits = model_logits(
            &tape,
            &vars,
            &cfg,
            &s.values,
            rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
        )
        .unwrap();
        logits.beat.to_tensor()
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(Some(1)), run(Some(1)));
    assert_ne!(run(Some(1)), run(Some(2)));
    assert_ne!(run(None), run(Some(1)));
}

#[test]
fn ablations_run() {
    for flags in 0..16u32 {
        let cfg = ModelConfig {
            use_second_dina: flags & 1 != 0,
            use_instrument_attention: flags & 2 != 0,
            use_dilation: flags & 4 != 0,
            use_demix: flags & 8 != 0,
            ..ModelConfig::tiny()
        };
        let w = ModelWeights::<f64>::init(&cfg, flags as u64).unwrap();
        assert_eq!(w.param_count(), param_count(&cfg));
        check_invariants(&model_forward(&spec(&cfg, 20, 0), &w).unwrap(), 20, 8);
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = ModelConfig::tiny();
    let report = model_grad_check(&cfg, 32, 11).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
    assert_eq!(report.entries_checked, param_count(&cfg));
}

/// Frames reachable from `t` through `radius(l)`-style windows, composed
/// analytically with the same window rule the kernels use.
fn analytic_influence(cfg: &ModelConfig, frames: usize, t: usize) -> Vec<bool> {
    use aio_core::attention::neighborhood_window_1d;
    let k = cfg.kernel_size;
    let mut reach = vec![false; frames];
    // two 3-tap convs along time
    for u in t.saturating_sub(2)..(t + 3).min(frames) {
        reach[u] = true;
    }
    let spread = |reach: &[bool], d: usize| {
        let mut out = reach.to_vec();
        for q in 0..frames {
            if neighborhood_window_1d(q, frames, k, d).unwrap().iter().any(|&j| reach[j]) {
                out[q] = true;
            }
        }
        out
    };
    for l in 0..cfg.num_blocks {
        let a = spread(&reach, cfg.dilation(l, 0).unwrap());
        let b = spread(&reach, cfg.dilation(l, 1).unwrap());
        let merged: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x || *y).collect();
        reach = spread(&merged, 1);
    }
    reach
}

#[test]
fn influence_matches_the_analytic_window_union() {
    let cfg = ModelConfig::tiny();
    let mut w = ModelWeights::<f64>::init(&cfg, 21).unwrap();
    jitter(&mut w, 0.05, 22);
    let frames = 48;
    let base = spec(&cfg, frames, 23);
    let y0 = model_forward(&base, &w).unwrap();
    let bound: usize = (0..cfg.num_blocks)
        .map(|l| (cfg.kernel_size - 1) * cfg.dilation(l, 1).unwrap() + (cfg.kernel_size - 1))
        .sum::<usize>()
        + 2;
    for t in [0, 5, 24, 47] {
        let mut s = base.clone();
        for st in 0..cfg.num_stems {
            for f in 0..cfg.bands {
                let i = (st * frames + t) * cfg.bands + f;
                s.values.data_mut()[i] += 0.5;
            }
        }
        let y = model_forward(&s, &w).unwrap();
        let changed: Vec<bool> = (0..frames).map(|u| y.beat[u] != y0.beat[u]).collect();
        assert_eq!(changed, analytic_influence(&cfg, frames, t), "perturbed frame {t}");
        for (u, &c) in changed.iter().enumerate() {
            if c {
                assert!(u.abs_diff(t) <= bound);
            }
        }
    }
}
