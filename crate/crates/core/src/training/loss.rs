use super::{TrainConfig, TrainingTargets};
use crate::error::{Error, Result};
use crate::model::Logits;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;

/// Weighted sum of masked-mean binary cross-entropies (beat, downbeat,
/// boundary) and the label cross-entropy.
pub fn multitask_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Logits<T>,
    targets: &TrainingTargets,
    cfg: &TrainConfig,
) -> Result<Var<T>> {
    let frames = targets.frames();
    if logits.beat.shape() != [frames] || logits.labels.shape().first() != Some(&frames) {
        return Err(Error::dim(
            "multitask_loss",
            format!("logits {:?} for {frames} target frames", logits.beat.shape()),
        ));
    }
    let cast = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::lit(x)).collect() };
    let m = &targets.mask;
    let terms = [
        tape.bce_with_logits(&logits.beat, &cast(&targets.beat), m)?,
        tape.bce_with_logits(&logits.downbeat, &cast(&targets.downbeat), m)?,
        tape.bce_with_logits(&logits.boundary, &cast(&targets.boundary), m)?,
        tape.cross_entropy(&logits.labels, &targets.labels, m)?,
    ];
    let mut total: Option<Var<T>> = None;
    for (term, &w) in terms.iter().zip(&cfg.task_weights) {
        let t = tape.scale(term, T::lit(w))?;
        total = Some(match total {
            None => t,
            Some(acc) => tape.add(&acc, &t)?,
        });
    }
    Ok(total.expect("four terms"))
}
