use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Updates `params` in place. A non-finite gradient leaves everything
    /// untouched and returns an error.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grad.len())?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient entry {i}"),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored value has
/// gone more than `patience` calls without a strict improvement, then
/// restarts the count.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr: lr0,
            factor,
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        if self.bad > self.patience {
            self.lr *= self.factor;
            self.bad = 0;
        }
        self.lr
    }
}

/// Tracks the best value seen and how many updates have passed since.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since: 0,
        }
    }

    /// Returns whether `metric` is a new best.
    pub fn update(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn should_stop(&self) -> bool {
        self.since > self.patience
    }
}

/// Symmetry weight for `epoch`: zero during the flat warm-up, then a linear
/// ramp up to `delta_max`.
pub fn delta_schedule(epoch: usize, delta_max: f64, flat: usize, ramp: usize) -> f64 {
    if epoch < flat {
        0.0
    } else if epoch < flat + ramp {
        delta_max * (epoch - flat) as f64 / ramp as f64
    } else {
        delta_max
    }
}
