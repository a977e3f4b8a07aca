use crate::error::{Result, ZolError};

/// Moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Conventional constants `(0.9, 0.999, 1e-8)`.
    pub fn new(dim: usize) -> Self {
        Self::with_constants(dim, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }
}

/// One bias-corrected Adam update applied to `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.dim() {
        return Err(ZolError::Shape(format!(
            "adam dimensions disagree: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.dim()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ZolError::Numeric(format!("non-finite gradient at index {i}")));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `grad` so its Euclidean norm is at most `c`.
pub fn clip_grad_norm(grad: &[f64], c: f64) -> Vec<f64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm <= c || norm == 0.0 {
        return grad.to_vec();
    }
    let s = c / norm;
    grad.iter().map(|g| g * s).collect()
}
