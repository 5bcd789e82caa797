use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Evaluation of a differentiable scalar function: its value and the analytic
/// gradient with respect to each input tensor, in order.
pub struct Evaluated {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every coordinate of
/// every parameter, where `numeric` is a central difference with step `h`.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<Evaluated>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("finite-difference step {h} must be positive")));
    }
    let base = f(params)?;
    if !base.value.is_finite() {
        return Err(Error::Numeric(format!("function value {} is not finite", base.value)));
    }
    if base.grads.len() != params.len() {
        return Err(Error::dim(format!(
            "{} gradients for {} parameters",
            base.grads.len(),
            params.len()
        )));
    }

    let mut work: Vec<Tensor> = params.iter().map(Tensor::detached).collect();
    let mut worst = 0.0_f64;
    for p in 0..params.len() {
        if !base.grads[p].same_shape(&params[p]) {
            return Err(Error::dim(format!(
                "gradient {:?} for parameter {:?}",
                base.grads[p].shape(),
                params[p].shape()
            )));
        }
        for i in 0..params[p].len() {
            let orig = work[p].values()[i];
            work[p].values_mut()[i] = orig + h;
            let plus = f(&work)?.value;
            work[p].values_mut()[i] = orig - h;
            let minus = f(&work)?.value;
            work[p].values_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value perturbing parameter {p} coordinate {i}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = base.grads[p].values()[i];
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
