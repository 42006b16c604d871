//! A small reverse-mode differentiation engine over real tensors, the
//! convolutional denoiser and score networks, Adam, and NETP1 checkpoints.
//!
//! Complex images are carried as planar `[2, h, w]` tensors (real plane,
//! then imaginary plane). The real inner product of two planar tensors is
//! the real part of their Hermitian product, so gradients of real losses
//! with respect to complex inputs come out as `dL/dRe + i dL/dIm`.

mod adam;
mod checkpoint;
mod conv;
mod gradcheck;
mod nets;
mod solve;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, NETP_MAGIC};
pub use gradcheck::central_difference_error;
pub use nets::{
    denoiser_forward, score_forward, score_input_scale, Architecture, BoundParams, NetKind, NetworkParams,
};
pub use solve::{cg_on_tape, TapeCgStats};
pub use tape::{Gradients, LinearMap, Tape, Var};
pub use tensor::Tensor;

/// Parameter gradients in declaration order; parameters that did not
/// influence the output get zeros.
pub fn param_grads(grads: &Gradients, tape: &Tape, bound: &BoundParams) -> Vec<Tensor> {
    bound
        .vars()
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec())))
        .collect()
}

/// Sums per-example gradient lists in order.
pub fn sum_grads(mut lists: impl Iterator<Item = Vec<Tensor>>) -> Option<Vec<Tensor>> {
    let mut acc = lists.next()?;
    for l in lists {
        for (a, g) in acc.iter_mut().zip(&l) {
            a.add_assign(g);
        }
    }
    Some(acc)
}

/// Evaluates `per_example` for `0..n` (in parallel) and returns the mean
/// loss and mean gradient, reduced in index order.
pub fn batch_gradients<F>(n: usize, per_example: F) -> crate::Result<(f64, Vec<Tensor>)>
where
    F: Fn(usize) -> crate::Result<(f64, Vec<Tensor>)> + Sync,
{
    use rayon::prelude::*;
    if n == 0 {
        return Err(crate::Error::InvalidInput("empty batch".into()));
    }
    let results: Vec<(f64, Vec<Tensor>)> = (0..n).into_par_iter().map(&per_example).collect::<crate::Result<_>>()?;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n as f64;
    let mut grads = sum_grads(results.into_iter().map(|r| r.1)).expect("nonempty batch");
    for g in &mut grads {
        *g = g.scale(1.0 / n as f64);
    }
    Ok((loss, grads))
}
