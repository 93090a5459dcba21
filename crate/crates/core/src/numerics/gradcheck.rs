use rayon::prelude::*;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, flat entry) of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, entry by entry, in 64-bit. The difference quotient uses the
/// symmetric five-point stencil (error O(eps⁴)), which keeps tiny gradient
/// entries resolvable where the three-point quotient drowns in truncation
/// error.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(params: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + Sync,
{
    grad_check_with_floor(params, eps, DEFAULT_FLOOR, f)
}

pub const DEFAULT_FLOOR: f64 = 1e-8;

/// [`grad_check`] with a chosen denominator floor. Finite differences of a
/// function of size `|f|` carry roughly `1e-16·|f|/eps` of roundoff, so
/// entries far below that level cannot be resolved relatively. Below the
/// floor an error under `1e-4` means an absolute error under `1e-4 · floor`.
pub fn grad_check_with_floor<F>(params: &[Tensor<f64>], eps: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + Sync,
{
    if eps <= 0.0 || !(floor > 0.0) {
        return Err(Error::Parameter("grad_check eps and floor must be positive".into()));
    }
    let tape = Tape::new();
    let leaves: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &leaves)?;
    check_scalar(out.value())?;
    let grads = tape.backward(&out)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|v| grads.get_or_zeros(v)).collect();
    drop(leaves);

    let eval = |pi: usize, ei: usize, delta: f64| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<_> = params
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let mut t = p.clone();
                if j == pi {
                    t.data_mut()[ei] += delta;
                }
                tape.leaf(t)
            })
            .collect();
        let v = f(&tape, &vars)?;
        check_scalar(v.value())
    };

    let jobs: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    let errors: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(pi, ei)| {
            let near = eval(pi, ei, eps)? - eval(pi, ei, -eps)?;
            let far = eval(pi, ei, 2.0 * eps)? - eval(pi, ei, -2.0 * eps)?;
            let numeric = (8.0 * near - far) / (12.0 * eps);
            let a = analytic[pi].data()[ei];
            Ok(((a - numeric).abs() / (a.abs() + numeric.abs()).max(floor), a, numeric))
        })
        .collect::<Result<_>>()?;

    let (worst, max) = errors
        .iter()
        .enumerate()
        .fold((None, 0.0), |(w, m), (i, &(e, _, _))| if e > m { (Some(i), e) } else { (w, m) });
    Ok(GradCheckReport {
        max_relative_error: max,
        worst: worst.map(|i| jobs[i]),
        worst_values: worst.map(|i| (errors[i].1, errors[i].2)),
        entries_checked: jobs.len(),
    })
}

fn check_scalar(t: &Tensor<f64>) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::dim("grad_check", format!("function returned shape {:?}", t.shape())));
    }
    let v = t.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check function"));
    }
    Ok(v)
}
