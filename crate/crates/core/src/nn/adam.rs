use super::param::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers follow the model's visiting
/// order and are created on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Multiplies the learning rate by `rate`.
    pub fn decay_learning_rate(&mut self, rate: f64) {
        self.config.learning_rate *= rate;
    }

    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut block = 0;
        model.visit_params(&mut |slot| {
            let Some(g) = slot.grads else { return };
            if m_all.len() <= block {
                m_all.push(vec![0.0; g.len()]);
                v_all.push(vec![0.0; g.len()]);
            }
            let (m, v) = (&mut m_all[block], &mut v_all[block]);
            assert_eq!(m.len(), g.len(), "parameter layout changed between steps");
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                slot.values[k] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
            block += 1;
        });
    }
}
