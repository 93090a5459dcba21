use crate::error::{Error, Result};

/// Slack on tolerance comparisons so a boundary case such as
/// `0.57 - 0.5 <= 0.07` is not lost to binary rounding.
const SLACK: f64 = 1e-9;

/// F-measure, precision and recall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Prf {
    pub fn from_counts(matches: usize, n_est: usize, n_ref: usize) -> Self {
        match (n_est, n_ref) {
            (0, 0) => Self { f: 1.0, precision: 1.0, recall: 1.0 },
            (0, _) | (_, 0) => Self { f: 0.0, precision: 0.0, recall: 0.0 },
            _ => {
                let p = matches as f64 / n_est as f64;
                let r = matches as f64 / n_ref as f64;
                Self { f: harmonic(p, r), precision: p, recall: r }
            }
        }
    }
}

pub(crate) fn harmonic(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn check_sorted(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input(format!("{name} contains a non-finite time")));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input(format!("{name} times are not ascending")));
    }
    Ok(())
}

/// Size of a maximum one-to-one matching with `|e - r| <= tol`.
///
/// Both lists sorted: scanning estimates in order and taking the earliest
/// reachable unmatched reference is optimal on a line.
pub fn match_count(est: &[f64], reference: &[f64], tol: f64) -> usize {
    let mut j = 0;
    let mut count = 0;
    for &e in est {
        while j < reference.len() && reference[j] < e - tol - SLACK {
            j += 1;
        }
        if j < reference.len() && reference[j] <= e + tol + SLACK {
            count += 1;
            j += 1;
        }
    }
    count
}

/// Event F-measure with a symmetric tolerance window.
pub fn event_f1(est: &[f64], reference: &[f64], tol: f64) -> Result<Prf> {
    if !(tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be non-negative")));
    }
    check_sorted("estimate", est)?;
    check_sorted("reference", reference)?;
    Ok(Prf::from_counts(match_count(est, reference, tol), est.len(), reference.len()))
}

/// Phase and period tolerance of the continuity scores, as a fraction of
/// the reference inter-beat interval.
pub const CONTINUITY_TOLERANCE: f64 = 0.175;

/// Fraction of estimated beats that are correct against `reference`:
/// nearest reference beat within the phase tolerance and local interval
/// within the period tolerance. Normalized by the longer of the two lists.
fn continuity_score(est: &[f64], reference: &[f64], tol: f64) -> f64 {
    if est.len() < 2 || reference.len() < 2 {
        return 0.0;
    }
    let interval = |xs: &[f64], i: usize| if i == 0 { xs[1] - xs[0] } else { xs[i] - xs[i - 1] };
    let mut correct = 0;
    for (i, &e) in est.iter().enumerate() {
        let k = reference.partition_point(|&r| r < e);
        let j = match (k.checked_sub(1), reference.get(k)) {
            (Some(a), Some(&b)) => {
                if e - reference[a] <= b - e {
                    a
                } else {
                    k
                }
            }
            (Some(a), None) => a,
            (None, _) => 0,
        };
        let ri = interval(reference, j);
        let phase_ok = (e - reference[j]).abs() < tol * ri;
        let period_ok = (interval(est, i) - ri).abs() < tol * ri;
        if phase_ok && period_ok {
            correct += 1;
        }
    }
    correct as f64 / est.len().max(reference.len()) as f64
}

/// Allowed metrical variations of a reference beat sequence: original,
/// off-beat, double tempo, and half tempo on either phase.
pub fn metrical_variations(reference: &[f64]) -> Vec<Vec<f64>> {
    let mids: Vec<f64> = reference.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut double = Vec::with_capacity(reference.len() * 2);
    for (i, &r) in reference.iter().enumerate() {
        double.push(r);
        if let Some(&m) = mids.get(i) {
            double.push(m);
        }
    }
    vec![
        reference.to_vec(),
        mids,
        double,
        reference.iter().step_by(2).copied().collect(),
        reference.iter().skip(1).step_by(2).copied().collect(),
    ]
}

/// `(CMLt, AMLt)` continuity scores.
pub fn continuity(est: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    check_sorted("estimate", est)?;
    check_sorted("reference", reference)?;
    if reference.len() < 2 {
        return Err(Error::Input("continuity needs at least two reference beats".into()));
    }
    let tol = CONTINUITY_TOLERANCE;
    let cml = continuity_score(est, reference, tol);
    let aml = metrical_variations(reference)
        .iter()
        .filter(|v| v.len() >= 2)
        .map(|v| continuity_score(est, v, tol))
        .fold(cml, f64::max);
    Ok((cml, aml))
}
