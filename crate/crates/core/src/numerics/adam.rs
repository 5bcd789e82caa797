use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param: &Tensor, learning_rate: f64) -> Self {
        Self {
            first_moment: Tensor::zeros(param.shape()),
            second_moment: Tensor::zeros(param.shape()),
            step_count: 0,
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// One bias-corrected Adam update. Clears `param`'s gradient afterwards.
pub fn adam_step(param: &mut Tensor, state: &mut AdamState) -> Result<()> {
    if !state.first_moment.same_shape(param) || !state.second_moment.same_shape(param) {
        return Err(Error::dim(format!(
            "adam state {:?} for parameter {:?}",
            state.first_moment.shape(),
            param.shape()
        )));
    }
    let grad = param
        .take_grad()
        .ok_or_else(|| Error::Usage("adam_step on a parameter without a gradient".into()))?;

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    for (((p, g), m), v) in param.values_mut().iter_mut().zip(&grad).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    // Zeroed buffer rather than dropped, so callers can keep accumulating.
    let mut zeroed = grad;
    zeroed.iter_mut().for_each(|g| *g = 0.0);
    param.accumulate_grad(&zeroed)?;
    Ok(())
}

/// Adam over an ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            states: Vec::new(),
        }
    }

    /// Step every parameter; states are created lazily on the first call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        for (i, p) in params.into_iter().enumerate() {
            if i == self.states.len() {
                self.states.push(AdamState::new(p, self.learning_rate));
            }
            adam_step(p, &mut self.states[i])?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::row_vector(values).unwrap();
        t.accumulate_grad(grad).unwrap();
        t
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = with_grad(&[0.3, -1.2], &[0.0, 0.0]);
        let mut s = AdamState::new(&p, 0.1);
        for _ in 0..5 {
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.values(), &[0.3, -1.2]);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = with_grad(&[2.0], &[1.0]);
        let mut s = AdamState::new(&p, 0.1);
        adam_step(&mut p, &mut s).unwrap();
        assert!((p.values()[0] - 1.9).abs() < 1e-7);
        assert_eq!(p.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = with_grad(&[0.5, 0.1], &[0.3, -0.7]);
        let mut b = a.clone();
        let mut sa = AdamState::new(&a, 0.01);
        let mut sb = AdamState::new(&b, 0.01);
        adam_step(&mut a, &mut sa).unwrap();
        adam_step(&mut b, &mut sb).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(&p, 0.1);
        assert!(matches!(adam_step(&mut p, &mut s), Err(Error::Usage(_))));
    }
}
