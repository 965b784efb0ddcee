//! Minimal dense-tensor neural-network kernels: forward and hand-written
//! backward passes for the layer kinds used by the regression models, an MSE
//! loss, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use layers::{Cache, ChunkLayout, Layer, Phase};
pub use loss::mse_loss;
pub use tensor::Tensor;

use crate::error::Result;

/// Forward through a stack, collecting per-layer caches.
pub fn forward_net(layers: &[Layer], x: &Tensor, phase: Phase) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for layer in layers {
        let (next, cache) = layer.forward(&cur, phase)?;
        caches.push(cache);
        cur = next;
    }
    cur.ensure_finite("network output")?;
    Ok((cur, caches))
}

/// Backward through a stack. Returns the input gradient and, per layer, the
/// gradients aligned with that layer's `params()`.
pub fn backward_net(
    layers: &[Layer],
    caches: &[Cache],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
    let mut param_grads = vec![Vec::new(); layers.len()];
    let mut g = grad_out.clone();
    for (i, layer) in layers.iter().enumerate().rev() {
        let (gx, gp) = layer.backward(&g, &caches[i])?;
        param_grads[i] = gp;
        g = gx;
    }
    Ok((g, param_grads))
}

/// Per-item shape trace through a stack, starting from `in_shape`
/// (batch dimension excluded). Index 0 is the input shape itself.
pub fn shape_trace(layers: &[Layer], in_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut trace = vec![in_shape.to_vec()];
    let mut cur = in_shape.to_vec();
    for layer in layers {
        cur = layer.out_shape(&cur)?;
        trace.push(cur.clone());
    }
    Ok(trace)
}
