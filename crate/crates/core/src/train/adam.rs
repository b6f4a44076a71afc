//! Adam with bias-corrected moment estimates.

use crate::params::ParamStore;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One in-place update of `params` at 1-based step `t`.
pub fn adam_step<T: Element>(params: &mut [T], grads: &[T], state: &mut AdamState, lr: f64, t: u64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths");
    assert_eq!(params.len(), state.m.len(), "parameter and state lengths");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g.as_f64();
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = T::of_f64(p.as_f64() - lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
}

/// Optimizer over every trainable tensor of a parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            states: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently stored in `store`.
    /// Tensors without a gradient buffer are treated as having zero gradient.
    pub fn step<T: Element>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let ids = store.trainable_ids();
        for id in ids {
            let idx = id.index();
            if self.states.len() <= idx {
                self.states.resize(idx + 1, None);
            }
            let tensor = store.get_mut(id);
            let state = self.states[idx].get_or_insert_with(|| AdamState::new(tensor.len()));
            let (data, grad) = tensor.data_and_grad_mut();
            match grad {
                Some(g) => adam_step(data, g, state, lr, self.step, &self.config),
                None => {
                    let zeros = vec![T::zero(); data.len()];
                    adam_step(data, &zeros, state, lr, self.step, &self.config);
                }
            }
        }
    }
}
