use serde::{Deserialize, Serialize};

use super::{Real, Tensor, TensorError};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> Default for AdamState<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> AdamState<F> {
    /// Moment buffers are allocated (zeroed) on the first step.
    pub fn new() -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, param: usize) -> Option<&[F]> {
        self.m.get(param).map(Vec::as_slice)
    }

    pub fn second_moment(&self, param: usize) -> Option<&[F]> {
        self.v.get(param).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update of `params` using `grads`.
///
/// Gradients are checked for NaN/Inf before any parameter is touched, so
/// a failed step leaves parameters and state unchanged.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[&[F]],
    state: &mut AdamState<F>,
    hp: &AdamHyper,
) -> Result<(), TensorError> {
    if !(hp.lr > 0.0) {
        return Err(TensorError::Optimizer(format!("learning rate must be positive, got {}", hp.lr)));
    }
    if params.len() != grads.len() {
        return Err(TensorError::Optimizer(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(TensorError::Optimizer(format!(
                "parameter #{i} has {} values but its gradient has {}",
                p.len(),
                g.len()
            )));
        }
        if let Some((j, v)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient {
                param: i,
                index: j,
                value: v.as_f64(),
            });
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(TensorError::Optimizer("parameter shapes changed between steps".into()));
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::of(hp.beta1), F::of(hp.beta2));
    let (one_m_b1, one_m_b2) = (F::of(1.0 - hp.beta1), F::of(1.0 - hp.beta2));
    let bc1 = F::of(1.0 - hp.beta1.powi(t));
    let bc2 = F::of(1.0 - hp.beta2.powi(t));
    let (lr, eps) = (F::of(hp.lr), F::of(hp.eps));

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
