use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// The adaptive step is used once the rectification length exceeds this.
pub const RECTIFY_THRESHOLD: f64 = 5.0;

/// Moments of rectified Adam, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RAdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> RAdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

fn check_shapes<T: Scalar>(op: &'static str, a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(Error::dim(op, "parameter and update layouts differ"));
    }
    Ok(())
}

/// One rectified-Adam step with decoupled weight decay:
///
/// ```text
/// p ← p·(1 − lr·wd)
/// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²,  m̂ = m/(1−β₁ᵗ)
/// ρ∞ = 2/(1−β₂) − 1,  ρₜ = ρ∞ − 2tβ₂ᵗ/(1−β₂ᵗ)
/// ρₜ > 5:  p ← p − lr·r·m̂·√(1−β₂ᵗ)/(√v + ε),
///          r = √((ρₜ−4)(ρₜ−2)ρ∞ / ((ρ∞−4)(ρ∞−2)ρₜ))
/// else:    p ← p − lr·m̂
/// ```
pub fn radam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut RAdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    check_shapes("radam_step", params, grads)?;
    check_shapes("radam_step", params, &state.m)?;
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let b2t = BETA2.powf(t);
    let bc2 = 1.0 - b2t;
    let rho_inf = 2.0 / (1.0 - BETA2) - 1.0;
    let rho = rho_inf - 2.0 * t * b2t / bc2;
    let rect = (rho > RECTIFY_THRESHOLD).then(|| {
        ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt()
    });
    let decay = T::lit(1.0 - lr * weight_decay);
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let (c1, c2) = (T::lit(1.0 - BETA1), T::lit(1.0 - BETA2));
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + c1 * g[j];
            v[j] = b2 * v[j] + c2 * g[j] * g[j];
            let m_hat = m[j].to_f64_lossy() / bc1;
            let step = match rect {
                Some(r) => r * m_hat * bc2.sqrt() / (v[j].to_f64_lossy().sqrt() + ADAM_EPS),
                None => m_hat,
            };
            *w = *w * decay - T::lit(lr * step);
        }
    }
    Ok(())
}

/// Running mean over snapshots: `swa ← (swa·n + current)/(n + 1)`.
pub fn swa_update<T: Scalar>(swa: &mut [Tensor<T>], current: &[Tensor<T>], n_models: usize) -> Result<()> {
    check_shapes("swa_update", swa, current)?;
    let n = T::lit(n_models as f64);
    let inv = T::one() / (n + T::one());
    for (s, c) in swa.iter_mut().zip(current) {
        for (a, &b) in s.data_mut().iter_mut().zip(c.data()) {
            *a = (*a * n + b) * inv;
        }
    }
    Ok(())
}
