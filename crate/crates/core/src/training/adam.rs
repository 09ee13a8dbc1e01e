use super::{Result, TrainingError};
use crate::autodiff::{Real, Tensor};
use crate::nn::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments aligned with a [`ModelParams`] iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.shape().to_vec())).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update. `grads` follows the iteration order of
/// `params`.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainingError::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (((name, p), g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(TrainingError::Shape(format!(
                "`{name}` has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let (c1, c2) = (T::lit(1.0 - BETA1), T::lit(1.0 - BETA2));
    let bc1 = T::lit(1.0 - BETA1.powi(t));
    let bc2 = T::lit(1.0 - BETA2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(EPSILON));
    for (((_, p), g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &g), (m, v)) in it {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
