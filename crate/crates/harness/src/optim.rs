use std::collections::BTreeMap;

use fuselang_core::{ParameterStore, Tensor};

use crate::config::OptimizerConfig;

/// Adam with L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: OptimizerConfig,
    pub steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Adam {
            cfg,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Updates the parameters selected by `filter` that have a gradient.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &BTreeMap<String, Tensor>, filter: impl Fn(&str) -> bool) {
        self.steps += 1;
        let c = &self.cfg;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in store.iter_mut() {
            if !filter(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let w = p.value.data_mut();
            for (((wi, &gi), mi), vi) in w.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi + c.weight_decay * *wi;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *wi -= c.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + c.epsilon);
            }
        }
    }
}
