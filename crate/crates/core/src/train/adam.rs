//! Adam with bias correction, and the reduce-on-plateau learning-rate rule.

use crate::error::{CoreError, Result};
use crate::nn::ParamSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moments plus the shared step counter.
pub struct Adam {
    pub lr: f64,
    pub step_count: u64,
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Adam {
        let moments = params
            .iter()
            .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .collect();
        Adam {
            lr,
            step_count: 0,
            moments,
        }
    }

    /// One bias-corrected update over every parameter; gradients left unset
    /// count as zero. NaN gradients abort, naming the parameter.
    pub fn step(&mut self, params: &ParamSet) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for ((name, param), (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = param.grad();
            let Some(grad) = grad else { continue };
            if grad.iter().any(|g| g.is_nan()) {
                return Err(CoreError::NanGradient { name: name.clone() });
            }
            let mut values = param.values_mut();
            for i in 0..grad.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule: an epoch metric that fails to improve the best
/// seen value (strictly, beyond 1e-8) bumps a counter; when the counter
/// reaches the patience the rate is multiplied by the factor and the counter
/// resets. The rate never increases.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: u32,
    pub factor: f64,
    pub best: f64,
    pub since_improvement: u32,
}

pub const PLATEAU_PATIENCE: u32 = 5;
pub const PLATEAU_FACTOR: f64 = 0.75;

impl PlateauScheduler {
    pub fn new(lr: f64) -> PlateauScheduler {
        PlateauScheduler {
            lr,
            patience: PLATEAU_PATIENCE,
            factor: PLATEAU_FACTOR,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    /// Feed one epoch metric (minimized); returns the learning rate to use
    /// from the next epoch on.
    pub fn step(&mut self, epoch_metric: f64) -> f64 {
        if epoch_metric < self.best - 1e-8 {
            self.best = epoch_metric;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr *= self.factor;
                self.since_improvement = 0;
            }
        }
        self.lr
    }
}
