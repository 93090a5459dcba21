use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{model_logits, ModelConfig, ModelWeights};
use crate::error::Result;
use crate::numerics::{grad_check, GradCheckReport, Tape, Tensor};

/// Step used by [`model_grad_check`].
pub const MODEL_CHECK_EPS: f64 = 5e-5;

/// Checks every parameter gradient of the full network in 64-bit.
///
/// The test point is a seeded init with ±0.05 noise on every tensor (so no
/// bias or pre-activation sits exactly on a kink) and query/key projections
/// scaled by 4 (sharper attention lifts key gradients well above
/// finite-difference noise). The scalar is a random signed probe of the
/// label logits and the three sigmoid heads, which stays near zero and so
/// loses little to cancellation.
pub fn model_grad_check(cfg: &ModelConfig, frames: usize, seed: u64) -> Result<GradCheckReport> {
    let mut w = ModelWeights::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    w.params
        .visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05)));
    for b in &mut w.params.blocks {
        for a in [Some(&mut b.dina1), b.dina2.as_mut(), Some(&mut b.inst)].into_iter().flatten() {
            a.key_w = a.key_w.map(|v| 4.0 * v);
            a.query_w = a.query_w.map(|v| 4.0 * v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let x = Tensor::from_fn([cfg.num_stems, frames, cfg.bands], |_| rng.gen_range(0.0..1.5));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let probe = Tensor::from_fn([frames, cfg.labels.len()], |_| rng.gen_range(-1.0..1.0));
    let head_probe = Tensor::from_fn([frames], |_| rng.gen_range(-1.0..1.0));
    let params: Vec<Tensor<f64>> = w.params.slots().into_iter().cloned().collect();
    grad_check(&params, MODEL_CHECK_EPS, |tape: &Tape<f64>, vars| {
        let vars = w.params.fill(vars)?;
        let l = model_logits(tape, &vars, cfg, &x, None)?;
        let p = tape.constant(probe.clone());
        let hp = tape.constant(head_probe.clone());
        let mut total = tape.sum(&tape.mul(&l.labels, &p)?)?;
        for head in [&l.beat, &l.downbeat, &l.boundary] {
            let s = tape.sigmoid(head)?;
            total = tape.add(&total, &tape.sum(&tape.mul(&s, &hp)?)?)?;
        }
        Ok(total)
    })
}
