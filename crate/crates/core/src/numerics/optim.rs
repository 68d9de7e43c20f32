//! Parameter updates and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Plain SGD update for one tensor: `p ← p − lr·(g + wd·p)`.
pub fn sgd_step(param: &mut Tensor, lr: f64, weight_decay: f64) -> Result<()> {
    let grad = param.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; param.len()]);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (p, g) in param.data_mut().iter_mut().zip(&grad) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Stateful optimizer over every trainable tensor of a module.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, weight_decay, step: 0, moments: Vec::new() }
    }

    /// Applies one update using the accumulated gradients, then zeroes them.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        let mut bad = None;
        module.visit("", &mut |name, t| {
            if t.requires_grad && bad.is_none() && t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(name);
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.step += 1;
        let (lr, wd, kind, step) = (self.lr, self.weight_decay, self.kind, self.step);
        let moments = &mut self.moments;
        let mut slot = 0usize;
        let mut result = Ok(());
        module.visit_mut("", &mut |_, t| {
            if !t.requires_grad || result.is_err() {
                return;
            }
            match kind {
                OptimizerKind::Sgd => result = sgd_step(t, lr, wd),
                OptimizerKind::Adam => {
                    if moments.len() <= slot {
                        moments.push((vec![0.0; t.len()], vec![0.0; t.len()]));
                    }
                    let (m, v) = &mut moments[slot];
                    let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
                    let bc1 = 1.0 - Self::BETA1.powi(step as i32);
                    let bc2 = 1.0 - Self::BETA2.powi(step as i32);
                    for (i, p) in t.data_mut().iter_mut().enumerate() {
                        let g = grad[i] + wd * *p;
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                        *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + Self::EPS);
                    }
                }
            }
            t.zero_grad();
            slot += 1;
        });
        result
    }
}

/// Step decay: `base · gamma^(number of milestones ≤ epoch)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 3e-4, milestones: vec![40, 70], gamma: 0.1 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
