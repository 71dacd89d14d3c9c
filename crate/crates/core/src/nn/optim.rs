use super::{NnError, ParamSet};
use crate::Scalar;

/// Adaptive-moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            first_moment: ParamSet::zeros_like(params),
            second_moment: ParamSet::zeros_like(params),
            step: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<(), NnError> {
        let shapes = params.shapes();
        if grads.shapes() != shapes || self.first_moment.shapes() != shapes {
            return Err(NnError::ParamShapeMismatch);
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_m_b1, one_m_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let correct1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let correct2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);

        for (t, p) in params.tensors.iter_mut().enumerate() {
            let g = &grads.tensors[t];
            let m = &mut self.first_moment.tensors[t];
            let v = &mut self.second_moment.tensors[t];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_m_b1 * g[i];
                v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
