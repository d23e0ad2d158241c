
use crate::error::{invalid, Error, Result};
use crate::neuralnet::network::NetworkState;
use crate::neuralnet::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(name, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(state: &mut NetworkState<T>, grad: &[T], hyper: &AdamHyper) -> Result<()> {
    if grad.len() != state.params.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} gradients", state.params.len()),
            got: grad.len().to_string(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(invalid(
            "gradient",
            format!("non-finite value at parameter {i} (step {})", state.step),
        ));
    }
    let t = state.step + 1;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one = T::one();
    let c1 = 1.0 / (1.0 - hyper.beta1.powf(t as f64));
    let c2 = 1.0 / (1.0 - hyper.beta2.powf(t as f64));
    let step_size = T::from_f64(hyper.learning_rate * c1);
    let c2 = T::from_f64(c2);
    let eps = T::from_f64(hyper.epsilon);
    for (((p, m), v), &g) in state
        .params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
        .zip(grad)
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p = *p - step_size * *m / ((*v * c2).sqrt() + eps);
    }
    state.step = t;
    Ok(())
}
