use crate::error::{Result, SscError};
use crate::model::{ModelParams, ParamGrads, TensorRole};
use crate::numerics::SeededRng;

/// `lr0 · cos(7π·step / (16·total))`; `lr0` when `total` is zero.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr0 * (7.0 * std::f64::consts::PI * frac / 16.0).cos()
}

/// SGD with heavy-ball momentum and decoupled weight decay on weight
/// matrices only (biases and prototypes are not decayed). Prototype rows are
/// projected back onto the unit sphere after every update.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &ModelParams, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params
                .tensors()
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        let grad_tensors = grads.tensors();
        let mut tensors = params.tensors_mut();
        if tensors.len() != grad_tensors.len() || tensors.len() != self.velocity.len() {
            return Err(SscError::ShapeMismatch(
                "gradient layout does not match parameters".into(),
            ));
        }
        for (((role, p), g), v) in tensors
            .iter_mut()
            .zip(&grad_tensors)
            .zip(&mut self.velocity)
        {
            if p.len() != g.len() {
                return Err(SscError::ShapeMismatch(format!(
                    "tensor of {} values got a gradient of {}",
                    p.len(),
                    g.len()
                )));
            }
            for (vi, gi) in v.iter_mut().zip(g.iter()) {
                *vi = self.momentum * *vi + gi;
            }
            if lr == 0.0 {
                continue;
            }
            let decay = if *role == TensorRole::Weight {
                lr * self.weight_decay
            } else {
                0.0
            };
            for (pi, vi) in p.iter_mut().zip(v.iter()) {
                *pi -= lr * vi + decay * *pi;
            }
        }
        drop(tensors);
        if lr != 0.0 {
            params.project_prototypes()?;
        }
        Ok(())
    }
}

/// Endless index stream over `0..n` that reshuffles after every full pass.
#[derive(Debug, Clone)]
pub struct CyclingLoader {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl CyclingLoader {
    pub fn new(n: usize, mut rng: SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, count: usize) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
