//! Central finite-difference gradient verification for layer stacks.
//! Checks every parameter tensor and the input, sampling elements of large
//! tensors with a seeded RNG.
//!
//! Probes whose +h/-h evaluations land on different sides of a ReLU kink
//! are skipped: the loss is not differentiable there, so the central
//! difference is meaningless (the analytic gradient is still correct
//! almost everywhere).

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::nn::layers::{Cache, Layer, Phase};
use crate::nn::loss::mse_loss;
use crate::nn::tensor::Tensor;
use crate::nn::{backward_net, forward_net};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub n_checked: usize,
}

pub struct GradCheckConfig {
    pub tolerance: f64,
    /// Maximum elements checked per tensor; larger tensors are sampled.
    pub sample_limit: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            tolerance: 1e-4,
            sample_limit: 150,
            step: 1e-5,
            seed: 0,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    // The 1e-6 floor sets an absolute tolerance for near-zero gradients:
    // central differences of an O(1) loss carry ~eps/(2h) = 1e-11 of
    // roundoff noise, far above f64 resolution of a tiny true gradient.
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Loss plus the sign pattern of every ReLU input, used to detect probes
/// that straddle a kink.
fn loss_and_pattern(layers: &[Layer], x: &Tensor, target: &Tensor) -> Result<(f64, Vec<bool>)> {
    let (y, caches) = forward_net(layers, x, Phase::Train)?;
    let pattern = caches
        .iter()
        .filter_map(|c| match c {
            Cache::Relu { x } => Some(x.data.iter().map(|&v| v > 0.0)),
            _ => None,
        })
        .flatten()
        .collect();
    Ok((mse_loss(&y, target)?.0, pattern))
}

fn sample_indices(n: usize, limit: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(limit);
        idx
    }
}

/// Checks d(loss)/d(param) and d(loss)/d(input) for an MSE loss on top of
/// the given stack against central finite differences.
pub fn grad_check_net(
    layers: &mut Vec<Layer>,
    x: &Tensor,
    target: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = crate::rng::seeded_rng(cfg.seed);
    let (y, caches) = forward_net(layers, x, Phase::Train)?;
    let (_, loss_grad) = mse_loss(&y, target)?;
    let (grad_x, param_grads) = backward_net(layers, &caches, &loss_grad)?;

    let mut max_rel = 0.0f64;
    let mut n_checked = 0usize;
    let h = cfg.step;

    // Parameters.
    for li in 0..layers.len() {
        let n_params = layers[li].params().len();
        for pi in 0..n_params {
            let numel = layers[li].params()[pi].1.numel();
            for ei in sample_indices(numel, cfg.sample_limit, &mut rng) {
                let orig = layers[li].params_mut()[pi].1.data[ei];
                layers[li].params_mut()[pi].1.data[ei] = orig + h;
                let (lp, pat_p) = loss_and_pattern(layers, x, target)?;
                layers[li].params_mut()[pi].1.data[ei] = orig - h;
                let (lm, pat_m) = loss_and_pattern(layers, x, target)?;
                layers[li].params_mut()[pi].1.data[ei] = orig;
                if pat_p != pat_m {
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = param_grads[li][pi].data[ei];
                max_rel = max_rel.max(rel_err(analytic, numeric));
                n_checked += 1;
            }
        }
    }

    // Input.
    let mut xp = x.clone();
    for ei in sample_indices(x.numel(), cfg.sample_limit, &mut rng) {
        let orig = xp.data[ei];
        xp.data[ei] = orig + h;
        let (lp, pat_p) = loss_and_pattern(layers, &xp, target)?;
        xp.data[ei] = orig - h;
        let (lm, pat_m) = loss_and_pattern(layers, &xp, target)?;
        xp.data[ei] = orig;
        if pat_p != pat_m {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grad_x.data[ei];
        max_rel = max_rel.max(rel_err(analytic, numeric));
        n_checked += 1;
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        pass: max_rel < cfg.tolerance,
        n_checked,
    })
}
