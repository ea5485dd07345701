use std::collections::{BTreeMap, HashMap};

use crate::param::Parameter;
use crate::tensor::Tensor;

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learn_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(learn_rate: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            learn_rate,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    pub fn restore(&mut self, steps: u64, moments: BTreeMap<String, Moments>) {
        self.steps = steps;
        self.moments = moments;
    }

    /// One update. Parameters without an entry in `grads` are treated as
    /// having zero gradient.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
        grads: &HashMap<String, Tensor<f32>>,
    ) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for p in params {
            let n = p.tensor.numel();
            let state = self.moments.entry(p.name().to_string()).or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
            let grad = grads.get(p.name());
            for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad.map(|g| g.data()[k]).unwrap_or(0.0);
                state.first[k] = b1 * state.first[k] + (1.0 - b1) * g;
                state.second[k] = b2 * state.second[k] + (1.0 - b2) * g * g;
                let m_hat = state.first[k] as f64 / c1;
                let v_hat = state.second[k] as f64 / c2;
                *w -= (self.learn_rate * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learn_rate() {
        let mut p = Parameter::new("w", Tensor::from_fn(&[2], |_| 1.0));
        let grads = HashMap::from([("w".to_string(), Tensor::new(vec![2], vec![3.0, -0.5]).unwrap())]);
        let mut opt = Adam::new(0.1, 0.5, 0.999);
        opt.step([&mut p], &grads);
        // bias-corrected first step is lr * sign(g)
        assert!((p.tensor.data()[0] - 0.9).abs() < 1e-5);
        assert!((p.tensor.data()[1] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut p = Parameter::new("w", Tensor::from_fn(&[3], |i| i as f32));
        let before = p.clone();
        Adam::new(0.1, 0.5, 0.999).step([&mut p], &HashMap::new());
        assert_eq!(p, before);
    }
}
