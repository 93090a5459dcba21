use aio_core::metrics::{AnnotatedBeat, Annotation};
use aio_core::model::*;
use aio_core::numerics::{grad_check_with_floor, Tape, Tensor};
use aio_core::postproc::Segment;
use aio_core::training::*;
use aio_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vec<String> {
    DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
}

fn seg(start: f64, end: f64, label: &str) -> Segment {
    Segment {
        start,
        end,
        label: label.into(),
    }
}

fn beat(time: f64, bar_position: u32) -> AnnotatedBeat {
    AnnotatedBeat { time, bar_position }
}

#[test]
fn beat_targets_are_widened() {
    let ann = Annotation {
        beats: vec![beat(1.0, 2)],
        segments: vec![seg(0.0, 20.0, "verse")],
        duration: 20.0,
    };
    let t = build_targets(&ann, 100.0, 2000, &TrainConfig::default(), &vocab()).unwrap();
    assert_eq!(t.beat[100], 1.0);
    for f in [98, 99, 101, 102] {
        assert_eq!(t.beat[f], 0.5);
    }
    assert_eq!(t.beat.iter().filter(|&&v| v > 0.0).count(), 5);
    assert!(t.downbeat.iter().all(|&v| v == 0.0));
    assert!(t.boundary.iter().all(|&v| v == 0.0));
    assert!(t.mask.iter().all(|&m| m));
}

#[test]
fn labels_and_boundaries_follow_the_segments() {
    let ann = Annotation {
        beats: vec![beat(0.5, 1), beat(1.0, 2)],
        segments: vec![seg(0.0, 10.0, "verse"), seg(10.0, 20.0, "chorus")],
        duration: 20.0,
    };
    let v = vocab();
    let t = build_targets(&ann, 100.0, 2000, &TrainConfig::default(), &v).unwrap();
    let verse = v.iter().position(|l| l == "verse").unwrap();
    let chorus = v.iter().position(|l| l == "chorus").unwrap();
    assert!(t.labels[..1000].iter().all(|&l| l == verse));
    assert!(t.labels[1000..].iter().all(|&l| l == chorus));
    assert_eq!(t.downbeat[50], 1.0);
    assert_eq!(t.downbeat[100], 0.0);
    assert_eq!(t.boundary[1000], 1.0);
    for d in 1..=50 {
        assert!(t.boundary[1000 - d] < 1.0 && t.boundary[1000 - d] > 0.0);
        assert_eq!(t.boundary[1000 - d], t.boundary[1000 + d]);
        assert!(t.boundary[1000 + d] < t.boundary[1000 + d - 1]);
    }
    assert_eq!(t.boundary[1051], 0.0);

    // frames past the annotated end are masked
    let t = build_targets(&ann, 100.0, 2050, &TrainConfig::default(), &v).unwrap();
    assert_eq!(t.mask.iter().filter(|&&m| m).count(), 2000);
}

#[test]
fn bad_annotations_are_rejected() {
    let cfg = TrainConfig::default();
    let ok_segs = vec![seg(0.0, 20.0, "verse")];
    let late = Annotation {
        beats: vec![beat(20.5, 1)],
        segments: ok_segs,
        duration: 20.0,
    };
    assert!(build_targets(&late, 100.0, 2000, &cfg, &vocab()).is_err());
    let long = Annotation {
        beats: vec![],
        segments: vec![seg(0.0, 30.0, "verse")],
        duration: 30.0,
    };
    assert!(build_targets(&long, 100.0, 2000, &cfg, &vocab()).is_err());
    let unknown = Annotation {
        beats: vec![],
        segments: vec![seg(0.0, 20.0, "kazoo")],
        duration: 20.0,
    };
    assert!(build_targets(&unknown, 100.0, 2000, &cfg, &vocab()).is_err());
}

fn logits_from(tape: &Tape<f64>, beat: Vec<f64>, labels: Tensor<f64>) -> Logits<f64> {
    let n = beat.len();
    let b = Tensor::new([n], beat).unwrap();
    Logits {
        beat: tape.leaf(b.clone()),
        downbeat: tape.leaf(b.clone()),
        boundary: tape.leaf(b),
        labels: tape.leaf(labels),
    }
}

fn plain_targets(n: usize, class: usize) -> TrainingTargets {
    TrainingTargets {
        beat: vec![0.0; n],
        downbeat: vec![0.0; n],
        boundary: vec![0.0; n],
        labels: vec![class; n],
        mask: vec![true; n],
    }
}

#[test]
fn confident_correct_logits_cost_almost_nothing() {
    let tape = Tape::new();
    let n = 50;
    let labels = Tensor::from_fn([n, 8], |i| if i % 8 == 3 { 20.0 } else { 0.0 });
    let l = logits_from(&tape, vec![-12.0; n], labels);
    let t = plain_targets(n, 3);
    let only = |k: usize| TrainConfig {
        task_weights: std::array::from_fn(|i| if i == k { 1.0 } else { 0.0 }),
        ..TrainConfig::default()
    };
    for k in 0..3 {
        let v = multitask_loss(&tape, &l, &t, &only(k)).unwrap().value().data()[0];
        assert!((0.0..1e-3).contains(&v), "task {k}: {v}");
    }
    let ce = multitask_loss(&tape, &l, &t, &only(3)).unwrap().value().data()[0];
    assert!((0.0..1e-6).contains(&ce), "{ce}");
}

#[test]
fn masked_frames_get_no_gradient_and_nan_is_an_error() {
    let tape = Tape::new();
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let beat: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let labels = Tensor::from_fn([n, 8], |_| rng.gen_range(-3.0..3.0));
    let l = logits_from(&tape, beat.clone(), labels.clone());
    let mut t = plain_targets(n, 1);
    t.beat[4] = 1.0;
    for f in 10..20 {
        t.mask[f] = false;
    }
    let loss = multitask_loss(&tape, &l, &t, &TrainConfig::default()).unwrap();
    assert!(loss.value().data()[0] > 0.0);
    let g = tape.backward(&loss).unwrap();
    for v in [&l.beat, &l.downbeat, &l.boundary] {
        let gv = g.get(v).unwrap();
        assert!(gv.data()[10..].iter().all(|&x| x == 0.0));
        assert!(gv.data()[..10].iter().all(|&x| x != 0.0));
    }
    assert!(g.get(&l.labels).unwrap().data()[80..].iter().all(|&x| x == 0.0));

    let mut bad = beat;
    bad[0] = f64::NAN;
    let l = logits_from(&tape, bad, labels);
    assert!(multitask_loss(&tape, &l, &t, &TrainConfig::default()).is_err());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let cfg = ModelConfig::tiny();
    let mut w = ModelWeights::<f64>::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // nonzero biases keep pre-activations off the ELU and max-pool kinks
    w.params.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05)));
    let frames = 16;
    let x = Tensor::from_fn([cfg.num_stems, frames, cfg.bands], |_| rng.gen_range(0.0..1.5));
    let targets = TrainingTargets {
        beat: (0..frames).map(|_| rng.gen_range(0.0..1.0)).collect(),
        downbeat: (0..frames).map(|_| rng.gen_range(0.0..1.0)).collect(),
        boundary: (0..frames).map(|_| rng.gen_range(0.0..1.0)).collect(),
        labels: (0..frames).map(|_| rng.gen_range(0..8)).collect(),
        mask: (0..frames).map(|f| f != 5).collect(),
    };
    let tcfg = TrainConfig::default();
    let params: Vec<Tensor<f64>> = w.params.slots().into_iter().cloned().collect();
    // the loss is O(1), so differences carry ~1e-11 of roundoff; a few
    // weights have gradients near 1e-9 that only an absolute bound can judge
    let report = grad_check_with_floor(&params, 4e-5, 1e-6, |tape: &Tape<f64>, vars| {
        let vars = w.params.fill(vars)?;
        let l = model_logits(tape, &vars, &cfg, &x, None)?;
        multitask_loss(tape, &l, &targets, &tcfg)
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn radam_without_gradient_only_decays() {
    let mut p = vec![Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap()];
    let zero = vec![Tensor::zeros([3])];
    let mut st = RAdamState::new(&p);
    let (lr, wd) = (0.01, 0.1);
    for _ in 0..50 {
        radam_step(&mut p, &zero, &mut st, lr, wd).unwrap();
    }
    let f = (1.0f64 - lr * wd).powi(50);
    for (a, b) in p[0].data().iter().zip([1.0, -2.0, 0.5]) {
        assert!((a - b * f).abs() < 1e-12);
    }
}

#[test]
fn radam_follows_a_constant_gradient_downhill() {
    let mut p = vec![Tensor::new([1], vec![0.0f64]).unwrap()];
    let g = vec![Tensor::new([1], vec![0.3]).unwrap()];
    let mut st = RAdamState::new(&p);
    let mut prev = 0.0;
    for _ in 0..100 {
        radam_step(&mut p, &g, &mut st, 0.01, 0.0).unwrap();
        let now = p[0].data()[0];
        assert!(now < prev);
        prev = now;
    }
}

/// Rectified Adam written out scalar by scalar.
struct Reference {
    m: [f64; 2],
    v: [f64; 2],
    t: i32,
}

impl Reference {
    fn step(&mut self, p: &mut [f64; 2], g: [f64; 2], lr: f64, wd: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho_inf - 2.0 * self.t as f64 * b2.powi(self.t) / (1.0 - b2.powi(self.t));
        for i in 0..2 {
            p[i] -= lr * wd * p[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(self.t));
            if rho_t > 5.0 {
                let v_hat = (self.v[i] / (1.0 - b2.powi(self.t))).sqrt();
                let r = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
                p[i] -= lr * r * m_hat / (v_hat + eps * 1.0);
            } else {
                p[i] -= lr * m_hat;
            }
        }
    }
}

#[test]
fn radam_matches_a_scalar_reference_on_a_quadratic() {
    // f(a, b) = 2a² + ab + b², gradient (4a + b, a + 2b)
    let grad = |p: [f64; 2]| [4.0 * p[0] + p[1], p[0] + 2.0 * p[1]];
    let mut reference = Reference {
        m: [0.0; 2],
        v: [0.0; 2],
        t: 0,
    };
    let mut rp = [1.5, -0.7];
    let mut tp = vec![Tensor::new([2], rp.to_vec()).unwrap()];
    let mut st = RAdamState::new(&tp);
    for step in 0..300 {
        let g = grad(rp);
        reference.step(&mut rp, g, 0.05, 0.01);
        let gt = vec![Tensor::new([2], g.to_vec()).unwrap()];
        radam_step(&mut tp, &gt, &mut st, 0.05, 0.01).unwrap();
        for i in 0..2 {
            // the two place ε differently: outside vs inside the bias
            // correction of v, which only matters once v is tiny
            assert!((tp[0].data()[i] - rp[i]).abs() < 1e-6, "step {step}: {:?} vs {rp:?}", tp[0].data());
        }
    }
    assert!(rp[0].abs() < 0.05 && rp[1].abs() < 0.05);
}

#[test]
fn swa_is_a_running_mean() {
    let w = Tensor::new([3], vec![1.0f64, -2.0, 3.5]).unwrap();
    let mut swa = vec![Tensor::zeros([3])];
    swa_update(&mut swa, &[w.clone()], 0).unwrap();
    assert_eq!(swa[0], w);
    swa_update(&mut swa, &[w.map(|v| -v)], 1).unwrap();
    assert!(swa[0].data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let snaps: Vec<Tensor<f32>> = (0..17).map(|_| Tensor::from_fn([40], |_| rng.gen_range(-1.0..1.0))).collect();
    let mut avg = vec![Tensor::zeros([40])];
    for (n, s) in snaps.iter().enumerate() {
        swa_update(&mut avg, std::slice::from_ref(s), n).unwrap();
    }
    for i in 0..40 {
        let direct = snaps.iter().map(|s| s.data()[i] as f64).sum::<f64>() / 17.0;
        assert!((avg[0].data()[i] as f64 - direct).abs() < 1e-6);
    }
    assert!(swa_update(&mut avg, &[Tensor::zeros([3])], 1).is_err());
}

#[test]
fn toy_data_is_seeded() {
    let cfg = ModelConfig::tiny();
    let a = make_toy_dataset::<f32>(3, 2, 12.0, &cfg).unwrap();
    let b = make_toy_dataset::<f32>(3, 2, 12.0, &cfg).unwrap();
    let c = make_toy_dataset::<f32>(4, 2, 12.0, &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.spec, y.spec);
        assert_eq!(x.annotation, y.annotation);
    }
    assert_ne!(a[0].spec, c[0].spec);
    for t in &a {
        t.annotation.validate().unwrap();
        assert_eq!(t.spec.frames(), 1200);
        assert!((2..=4).contains(&t.annotation.segments.len()));
    }
    assert!(make_toy_dataset::<f32>(3, 1, 9.0, &cfg).is_err());
}

#[test]
fn planted_tempo_gives_exact_intervals() {
    let plan = ToyPlan {
        frames: 3000,
        fps: 100.0,
        bpm: 120.0,
        beats_per_bar: 4,
        offset: 0.25,
        first_position: 3,
        sections: vec![(0, 0), (1500, 2)],
    };
    let ann = plan.annotation(&vocab());
    let times = ann.beat_times();
    assert_eq!(times.len(), 60);
    for w in times.windows(2) {
        assert!((w[1] - w[0] - 0.5).abs() < 1e-12);
    }
    let downs = ann.downbeat_times();
    assert!((downs[0] - 1.25).abs() < 1e-12);
    for w in downs.windows(2) {
        assert!((w[1] - w[0] - 2.0).abs() < 1e-12);
    }
    assert_eq!(ann.boundary_times(), vec![15.0]);
}

#[test]
fn section_changes_are_where_the_profile_changes() {
    let cfg = ModelConfig::tiny();
    let seed = 9;
    let profiles = toy_profiles(seed, &cfg);
    for t in make_toy_dataset::<f64>(seed, 3, 30.0, &cfg).unwrap() {
        let x = &t.spec.values;
        let section = t.plan.section_of_frames();
        // stem 0 holds level · profile(label) plus noise in [0, 0.05)
        let fits = |f: usize, label: usize| {
            (0..cfg.bands).all(|b| {
                let r = x.at(&[0, f, b]) - 0.5 * profiles[label][b];
                (0.0..0.05).contains(&r)
            })
        };
        for f in 0..t.plan.frames {
            assert!(fits(f, t.plan.sections[section[f]].1), "frame {f}");
        }
        for (i, &(start, _)) in t.plan.sections.iter().enumerate().skip(1) {
            assert!(!fits(start, t.plan.sections[i - 1].1));
            let time = start as f64 / cfg.fps;
            assert!(t.annotation.boundary_times().iter().any(|&b| (b - time).abs() < 1e-12));
        }
    }
}

fn short_set(seed: u64, n: usize, secs: f64) -> Vec<(aio_core::frontend::StemSpectrogram<f32>, Annotation)> {
    make_toy_dataset::<f32>(seed, n, secs, &ModelConfig::tiny())
        .unwrap()
        .into_iter()
        .map(|t| (t.spec, t.annotation))
        .collect()
}

#[test]
fn training_loss_falls_at_first() {
    let data = short_set(1, 1, 10.0);
    let cfg = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(&ModelConfig::tiny(), &cfg, &data, &data, &mut |_| {}).unwrap();
    assert_eq!(out.history.len(), 10);
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    for w in losses[..5].windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn frozen_weights_stop_on_patience() {
    let data = short_set(2, 1, 10.0);
    let cfg = TrainConfig {
        lr: 0.0,
        swa_lr: 0.0,
        patience_epochs: 1,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(&ModelConfig::tiny(), &cfg, &data, &data, &mut |_| {}).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.stop, StopReason::Patience);
    assert_eq!(out.history[0].val_loss, out.history[1].val_loss);
}

#[test]
fn seeded_training_is_reproducible() {
    let data = short_set(3, 2, 10.0);
    let cfg = TrainConfig {
        max_epochs: 4,
        chunk_seconds: 6.0,
        batch_size: 2,
        seed: 77,
        ..TrainConfig::default()
    };
    let mut lines = Vec::new();
    let a = train(&ModelConfig::tiny(), &cfg, &data, &data, &mut |r| lines.push(r.to_json_line())).unwrap();
    let b = train(&ModelConfig::tiny(), &cfg, &data, &data, &mut |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.weights, b.weights);
    assert_eq!(history_jsonl(&a.history), lines.join("\n") + "\n");
    assert_eq!(a.swa_models, 3);
    let c = train(&ModelConfig::tiny(), &TrainConfig { seed: 78, ..cfg }, &data, &data, &mut |_| {}).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn divergence_is_reported() {
    let data = short_set(4, 1, 10.0);
    let cfg = TrainConfig {
        lr: 1e30,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let err = train(&ModelConfig::tiny(), &cfg, &data, &data, &mut |_| {}).err().unwrap();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    assert!(train(&ModelConfig::tiny(), &TrainConfig::default(), &[], &data, &mut |_| {}).is_err());
}

#[test]
fn config_record_round_trips() {
    let mut cfg = TrainConfig::default();
    assert!(cfg.set("lr=0.01").unwrap());
    assert!(cfg.set("task_weights=1,0.5,2,1").unwrap());
    assert!(!cfg.set("embed_dim=4").unwrap());
    assert!(cfg.set("lr=abc").is_err());
    let mut back = TrainConfig::default();
    for line in cfg.to_record().lines() {
        assert!(back.set(line).unwrap());
    }
    assert_eq!(back, cfg);
    cfg.validate().unwrap();
    assert!(TrainConfig { patience_epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert_eq!(TrainConfig::default().swa_first_epoch(), 76);
}
