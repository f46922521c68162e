use super::{NnError, ParameterSet};

/// Adam moments and hyperparameters for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: ParameterSet,
    second: ParameterSet,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 3e-4;

    /// Zeroed moments shaped like `params`, standard betas and epsilon.
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn first_moment(&self) -> &ParameterSet {
        &self.first
    }

    pub fn second_moment(&self) -> &ParameterSet {
        &self.second
    }
}

/// One bias-corrected Adam descent step, in place.
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, state: &mut AdamState) -> Result<(), NnError> {
    params.check_same_layout(grads, "adam_step gradients")?;
    params.check_same_layout(&state.first, "adam_step moments")?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
