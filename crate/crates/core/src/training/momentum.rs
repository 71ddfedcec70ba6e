//! Memory synchronisation with the classifier weights.

use crate::error::{Error, Result};
use crate::memory_distill::RevisedMemory;
use crate::tensor::Tensor;

fn check_shape(mem: &RevisedMemory, w_p: &Tensor) -> Result<()> {
    if w_p.cols() != mem.num_labels() || w_p.rows() != mem.dim() {
        return Err(Error::Shape(format!(
            "{} memory is {}x{}, classifier is {}x{}",
            mem.task.name(),
            mem.num_labels(),
            mem.dim(),
            w_p.rows(),
            w_p.cols()
        )));
    }
    Ok(())
}

/// `M ← λ M + (1 − λ) W_pᵀ`; row `i` tracks classifier column `i`.
pub fn momentum_update(mem: &mut RevisedMemory, w_p: &Tensor, lambda: f64) -> Result<()> {
    if !mem.initialized {
        return Err(Error::Memory(format!(
            "{} memory cannot be momentum-updated before warm-up initialization",
            mem.task.name()
        )));
    }
    check_shape(mem, w_p)?;
    let keep = 1.0 - lambda;
    for i in 0..mem.num_labels() {
        for j in 0..mem.dim() {
            let m = mem.rows.get(i, j);
            mem.rows.set(i, j, lambda * m + keep * w_p.get(j, i));
        }
    }
    Ok(())
}

/// Copies the classifier into the memory once warm-up has run its course.
pub fn warmup_init(mem: &mut RevisedMemory, w_p: &Tensor, step: usize, warmup_steps: usize) -> Result<()> {
    if step < warmup_steps {
        return Err(Error::Memory(format!(
            "{} memory initialization requested at step {step}, warm-up lasts {warmup_steps} steps",
            mem.task.name()
        )));
    }
    check_shape(mem, w_p)?;
    mem.rows = w_p.transpose();
    mem.initialized = true;
    Ok(())
}
