use aio_core::metrics::*;
use aio_core::postproc::{AnalysisResult, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest one-to-one matching by exhaustive search.
fn brute_matching(est: &[f64], reference: &[f64], tol: f64) -> usize {
    fn go(i: usize, est: &[f64], reference: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
        if i == est.len() {
            return 0;
        }
        let mut best = go(i + 1, est, reference, used, tol);
        for j in 0..reference.len() {
            if !used[j] && (est[i] - reference[j]).abs() <= tol + 1e-9 {
                used[j] = true;
                best = best.max(1 + go(i + 1, est, reference, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(0, est, reference, &mut vec![false; reference.len()], tol)
}

fn seg(bounds: &[f64], labels: &[&str]) -> Vec<Segment> {
    bounds
        .windows(2)
        .zip(labels)
        .map(|(w, l)| Segment {
            start: w[0],
            end: w[1],
            label: l.to_string(),
        })
        .collect()
}

#[test]
fn event_f1_examples() {
    let r: Vec<f64> = (1..=10).map(|k| 0.5 * k as f64).collect();
    assert_eq!(event_f1(&r, &r, 0.07).unwrap().f, 1.0);
    let shifted: Vec<f64> = r.iter().map(|x| x + 0.1).collect();
    assert_eq!(event_f1(&shifted, &r, 0.07).unwrap().f, 0.0);
    let missing: Vec<f64> = r.iter().copied().filter(|&x| x != 2.5).collect();
    let s = event_f1(&missing, &r, 0.07).unwrap();
    let m = brute_matching(&missing, &r, 0.07) as f64;
    let (p, rc) = (m / 9.0, m / 10.0);
    assert_eq!(s.precision, p);
    assert_eq!(s.recall, rc);
    assert!((s.f - 2.0 * p * rc / (p + rc)).abs() < 1e-12);
    assert!((s.f - 0.9474).abs() < 5e-5);

    assert_eq!(event_f1(&[], &[], 0.07).unwrap().f, 1.0);
    assert_eq!(event_f1(&[1.0], &[], 0.07).unwrap().f, 0.0);
    assert_eq!(event_f1(&[], &[1.0], 0.07).unwrap().f, 0.0);
    assert!(event_f1(&[1.0], &[1.0], -0.1).is_err());
    assert!(event_f1(&[2.0, 1.0], &[1.0], 0.1).is_err());
}

#[test]
fn greedy_matching_is_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..2000 {
        let mut a: Vec<f64> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0.0..3.0)).collect();
        let mut b: Vec<f64> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0.0..3.0)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let tol = rng.gen_range(0.0..0.5);
        assert_eq!(match_count(&a, &b, tol), brute_matching(&a, &b, tol), "{a:?} {b:?} {tol}");
        let ab = event_f1(&a, &b, tol).unwrap();
        let ba = event_f1(&b, &a, tol).unwrap();
        assert_eq!(ab.precision, ba.recall);
    }
}

#[test]
fn continuity_examples() {
    let r: Vec<f64> = (0..40).map(|k| 1.0 + 0.5 * k as f64).collect();
    assert_eq!(continuity(&r, &r).unwrap(), (1.0, 1.0));

    let mut double = Vec::new();
    for w in r.windows(2) {
        double.push(w[0]);
        double.push(0.5 * (w[0] + w[1]));
    }
    double.push(*r.last().unwrap());
    let (cml, aml) = continuity(&double, &r).unwrap();
    assert_eq!(cml, 0.0);
    assert_eq!(aml, 1.0);

    let half: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(i, &x)| if i < 20 { x } else { x + 0.4 * 0.5 })
        .collect();
    let (cml, _) = continuity(&half, &r).unwrap();
    assert!((cml - 0.5).abs() < 0.03, "{cml}");

    assert!(continuity(&r, &[1.0]).is_err());
    assert_eq!(continuity(&[], &r).unwrap(), (0.0, 0.0));
}

#[test]
fn continuity_is_bounded_by_its_variations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let ibi = rng.gen_range(0.3..1.0);
        let r: Vec<f64> = (0..rng.gen_range(2..30)).map(|k| 0.3 + ibi * k as f64).collect();
        let mut e: Vec<f64> = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(0.0..20.0)).collect();
        e.sort_by(f64::total_cmp);
        e.dedup();
        let (c, a) = continuity(&e, &r).unwrap();
        assert!((0.0..=1.0).contains(&c) && c <= a && a <= 1.0);
    }
}

#[test]
fn hit_rate_uses_the_window_half_width() {
    let r = seg(&[0.0, 30.0, 60.0, 90.0, 120.0], &["a", "b", "c", "d"]);
    assert_eq!(boundary_hit_rate(&r, &r, 0.5, true).unwrap().f, 1.0);
    let near = seg(&[0.0, 30.4, 60.0, 90.0, 120.0], &["a", "b", "c", "d"]);
    assert_eq!(boundary_hit_rate(&near, &r, 0.5, true).unwrap().f, 1.0);

    // 58 and 91 are 2 s and 1 s from their references, outside ±0.5 s
    let est = seg(&[0.0, 30.2, 58.0, 91.0, 120.0], &["a", "b", "c", "d"]);
    let ebounds = [0.0, 30.2, 58.0, 91.0, 120.0];
    let rbounds = [0.0, 30.0, 60.0, 90.0, 120.0];
    let hits = brute_matching(&ebounds, &rbounds, 0.5);
    assert_eq!(hits, 3);
    let hr = boundary_hit_rate(&est, &r, 0.5, true).unwrap();
    assert!((hr.precision - 0.6).abs() < 1e-12 && (hr.recall - 0.6).abs() < 1e-12);
    assert!((hr.f - 0.6).abs() < 1e-12);
    // the same pairs become hits once the window reaches 1 s
    assert!((boundary_hit_rate(&est, &r, 1.0, true).unwrap().f - 0.8).abs() < 1e-12);
    // internal boundaries only
    assert!((boundary_hit_rate(&est, &r, 0.5, false).unwrap().f - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn pairwise_examples() {
    let r = seg(&[0.0, 0.2, 0.4], &["A", "B"]);
    let e = seg(&[0.0, 0.3, 0.4], &["A", "B"]);
    let pw = pairwise_f(&e, &r, 0.1).unwrap();
    assert!((pw.precision - 1.0 / 3.0).abs() < 1e-12);
    assert!((pw.recall - 0.5).abs() < 1e-12);
    assert!((pw.f - 0.4).abs() < 1e-12);

    let a = seg(&[0.0, 10.0, 25.0, 40.0], &["x", "y", "x"]);
    assert_eq!(pairwise_f(&a, &a, 0.1).unwrap().f, 1.0);
    let renamed = seg(&[0.0, 10.0, 25.0, 40.0], &["q", "p", "q"]);
    let b = seg(&[0.0, 12.0, 30.0, 40.0], &["m", "n", "m"]);
    assert_eq!(pairwise_f(&renamed, &b, 0.1).unwrap(), pairwise_f(&a, &b, 0.1).unwrap());
    assert!(pairwise_f(&[], &a, 0.1).is_ok());
    assert!(pairwise_f(&a, &[], 0.1).is_err());
    assert!(pairwise_f(&a, &seg(&[0.0, 0.0], &["z"]), 0.1).is_err());
}

#[test]
fn entropy_examples() {
    let a = seg(&[0.0, 10.0, 25.0, 40.0], &["x", "y", "x"]);
    assert_eq!(entropy_scores(&a, &a, 0.1).unwrap().sf, 1.0);
    let renamed = seg(&[0.0, 10.0, 25.0, 40.0], &["b", "a", "b"]);
    let s = entropy_scores(&renamed, &a, 0.1).unwrap();
    assert!((s.sf - 1.0).abs() < 1e-12);

    let two = seg(&[0.0, 10.0, 20.0], &["A", "B"]);
    let one = seg(&[0.0, 20.0], &["Z"]);
    let s = entropy_scores(&one, &two, 0.1).unwrap();
    assert_eq!(s.over, 1.0);
    assert!(s.under.abs() < 1e-12);
    assert_eq!(s.sf, 0.0);
}

fn random_segmentation(rng: &mut ChaCha8Rng, duration: f64, labels: &[&str]) -> Vec<Segment> {
    let mut bounds = vec![0.0];
    loop {
        let next = bounds.last().unwrap() + rng.gen_range(1.0..12.0);
        if next >= duration - 1.0 {
            break;
        }
        // keep boundaries off the sampling grid
        bounds.push(next + 0.0123);
    }
    bounds.push(duration);
    let l: Vec<&str> = (0..bounds.len() - 1).map(|_| labels[rng.gen_range(0..labels.len())]).collect();
    seg(&bounds, &l)
}

#[test]
fn frame_size_barely_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let r = random_segmentation(&mut rng, 90.0, &["a", "b", "c"]);
        let e = random_segmentation(&mut rng, 90.0, &["x", "y", "z", "w"]);
        let p1 = pairwise_f(&e, &r, 0.1).unwrap().f;
        let p2 = pairwise_f(&e, &r, 0.05).unwrap().f;
        let s1 = entropy_scores(&e, &r, 0.1).unwrap().sf;
        let s2 = entropy_scores(&e, &r, 0.05).unwrap().sf;
        assert!((p1 - p2).abs() < 0.01 && (s1 - s2).abs() < 0.01);
        for v in [p1, s1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

fn annotation() -> Annotation {
    let beats = (0..60)
        .map(|k| AnnotatedBeat {
            time: 0.5 + 0.5 * k as f64,
            bar_position: (k % 4 + 1) as u32,
        })
        .collect();
    Annotation {
        beats,
        segments: seg(&[0.0, 8.0, 20.0, 31.0], &["intro", "verse", "chorus"]),
        duration: 31.0,
    }
}

#[test]
fn evaluating_the_reference_scores_one() {
    let a = annotation();
    a.validate().unwrap();
    let r = AnalysisResult {
        beats: a.beat_times(),
        downbeats: a.downbeat_times(),
        segments: a.segments.clone(),
        boundary_times: a.boundary_times(),
        duration: a.duration,
    };
    let rep = evaluate_track(&r, &a, &EvalOptions::default()).unwrap();
    assert_eq!(rep.scores.len(), 19);
    for (k, v) in &rep.scores {
        assert!((v - 1.0).abs() < 1e-12, "{k} = {v}");
    }
    let back = MetricsReport::from_json(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn empty_result_scores_zero_on_events() {
    let a = annotation();
    let r = AnalysisResult {
        beats: vec![],
        downbeats: vec![],
        segments: vec![],
        boundary_times: vec![],
        duration: a.duration,
    };
    let rep = evaluate_track(&r, &a, &EvalOptions::default()).unwrap();
    for k in ["beat_f1", "beat_cmlt", "beat_amlt", "downbeat_f1", "segment_hr5f"] {
        assert_eq!(rep.get(k), Some(0.0), "{k}");
    }
    let far = AnalysisResult {
        duration: 40.0,
        ..r
    };
    assert!(evaluate_track(&far, &a, &EvalOptions::default()).is_err());
}

#[test]
fn track_report_composes_the_standalone_metrics() {
    let a = annotation();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let beats: Vec<f64> = a.beat_times().iter().map(|t| t + rng.gen_range(-0.1..0.1)).collect();
        let downbeats: Vec<f64> = beats.iter().step_by(4).copied().collect();
        let segments = random_segmentation(&mut rng, 31.0, &["verse", "chorus"]);
        let r = AnalysisResult {
            beats: beats.clone(),
            downbeats: downbeats.clone(),
            boundary_times: segments.iter().skip(1).map(|s| s.start).collect(),
            segments: segments.clone(),
            duration: 31.0,
        };
        let rep = evaluate_track(&r, &a, &EvalOptions::default()).unwrap();
        assert_eq!(rep.get("beat_f1"), Some(event_f1(&beats, &a.beat_times(), 0.07).unwrap().f));
        assert_eq!(rep.get("downbeat_cmlt"), Some(continuity(&downbeats, &a.downbeat_times()).unwrap().0));
        assert_eq!(
            rep.get("segment_hr5f"),
            Some(boundary_hit_rate(&segments, &a.segments, 0.5, true).unwrap().f)
        );
        assert_eq!(rep.get("label_pwf"), Some(pairwise_f(&segments, &a.segments, 0.1).unwrap().f));
        assert_eq!(rep.get("label_sf"), Some(entropy_scores(&segments, &a.segments, 0.1).unwrap().sf));
        assert!(rep.scores.values().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn aggregate_and_table() {
    let mut x = MetricsReport::default();
    x.scores.insert("beat_f1".into(), 1.0);
    let mut y = MetricsReport::default();
    y.scores.insert("beat_f1".into(), 0.5);
    y.scores.insert("label_pwf".into(), 0.25);
    let m = aggregate(&[x, y]);
    assert_eq!(m.get("beat_f1"), Some(0.75));
    assert_eq!(m.get("label_pwf"), Some(0.25));
    let t = render_table(&[("mean".into(), m)]);
    assert!(t.lines().next().unwrap().contains("HR.5F"));
    assert!(t.contains("0.750"));
}
