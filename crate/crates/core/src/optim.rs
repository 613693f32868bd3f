//! Adam with decoupled weight decay.

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One optimizer step over every parameter; gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(Error::contract(format!(
            "optimizer tracks {} parameters, model has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (id, name, t) in params.iter() {
        match &t.grad {
            None => return Err(Error::contract(format!("parameter `{name}` has no gradient"))),
            Some(g) if g.len() != t.len() || state.first_moment[id.0].len() != t.len() => {
                return Err(Error::contract(format!("parameter `{name}` buffers do not match its shape")))
            }
            _ => {}
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (lr, wd) = (state.learning_rate, state.weight_decay);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for id in params.ids().collect::<Vec<_>>() {
        let p = params.get_mut(id);
        let grad = p.grad.take().expect("checked above");
        let m = &mut state.first_moment[id.0];
        let v = &mut state.second_moment[id.0];
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            *w -= lr * wd * *w;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let mut grad = grad;
        grad.fill(0.0);
        p.grad = Some(grad);
    }
    Ok(())
}
