//! Small fixed problem used by the gradient check.

use super::{DeltaKind, LossConfig, ModelConfig, SpatialVariant, StackConfig, Stann};
use crate::diff::{grad_check, GradCheckReport, Tensor};
use crate::Error;

pub const TOY_STEPS: usize = 6;
pub const TOY_SERIES: usize = 2;
pub const TOY_LATENT: usize = 3;
/// Finite-difference step of [`toy_grad_check`].
pub const TOY_EPSILON: f64 = 1e-5;

/// STANN-D with two-block stacks of width 4.
pub fn toy_config() -> ModelConfig {
    let stack = StackConfig {
        blocks: 2,
        layers: 1,
        width: 4,
        residual: true,
    };
    ModelConfig {
        latent_dim: TOY_LATENT,
        variant: SpatialVariant::Discovered,
        decoder_stack: stack,
        dynamic_stack: stack,
        ..ModelConfig::new(TOY_SERIES)
    }
}

pub fn toy_loss_config() -> LossConfig {
    LossConfig {
        lambda: 0.7,
        gamma: 0.05,
        delta: DeltaKind::Mse,
    }
}

/// Uniform off-diagonal prior `n × 1 × n`.
pub fn toy_prior(n: usize) -> Tensor {
    let w = (0..n * n)
        .map(|k| if k / n == k % n { 0.0 } else { 0.5 })
        .collect();
    Tensor::new(vec![n, 1, n], w).expect("shape matches")
}

/// Smooth trending observations, `(steps + 1) × n`.
pub fn toy_data(steps: usize, n: usize) -> Tensor {
    let d = (0..(steps + 1) * n)
        .map(|k| ((k as f64) * 0.37).sin() + 0.1 * k as f64)
        .collect();
    Tensor::new(vec![steps + 1, n], d).expect("shape matches")
}

/// Compares analytic and central-difference gradients of the full loss with
/// respect to every parameter of the toy model.
pub fn toy_grad_check(seed: u64) -> Result<GradCheckReport, Error> {
    let m = Stann::new(
        toy_config(),
        TOY_STEPS,
        toy_prior(TOY_SERIES),
        seed,
        seed.wrapping_add(1),
    )?;
    let x = toy_data(TOY_STEPS, TOY_SERIES);
    let cfg = toy_loss_config();
    grad_check(m.store().tensors(), TOY_EPSILON, |g, vars| {
        m.loss_nodes(g, vars, &x, &cfg, None).map(|n| n.total)
    })
}
