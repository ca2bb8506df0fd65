//! Stochastic gradient descent with classical momentum:
//! `v <- momentum * v + g`, then `theta <- theta - lr * v`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One velocity tensor per parameter tensor, paired by position.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`.
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        OptimizerState {
            velocity: params.into_iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// The scalar recurrence, for any float width: returns the new
/// `(theta, velocity)`.
pub fn momentum_update<T>(theta: T, velocity: T, grad: T, lr: T, momentum: T) -> (T, T)
where
    T: Copy + std::ops::Mul<Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let v = momentum * velocity + grad;
    (theta - lr * v, v)
}

/// Applies one update in place to every `(param, grad)` pair.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
    lr: f32,
    momentum: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        p.require_same_shape(g)?;
        p.require_same_shape(v)?;
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((theta, &grad), vel) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(v.data_mut().iter_mut())
        {
            (*theta, *vel) = momentum_update(*theta, *vel, grad, lr, momentum);
        }
    }
    Ok(())
}
