//! Adam with bias correction and decoupled weight decay.

use crate::checkpoint::OptimSnapshot;
use crate::error::TrainError;
use crate::model::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn snapshot(&self, params: &ParamSet) -> OptimSnapshot {
        OptimSnapshot {
            step: self.step,
            moments: params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .map(|(p, (m, v))| (p.name.clone(), m.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn restore(snap: &OptimSnapshot, params: &ParamSet) -> Result<Self, TrainError> {
        if snap.moments.len() != params.len() {
            return Err(TrainError::Config(format!(
                "optimizer snapshot holds {} tensors, model has {}",
                snap.moments.len(),
                params.len()
            )));
        }
        let mut m = Vec::with_capacity(snap.moments.len());
        let mut v = Vec::with_capacity(snap.moments.len());
        for ((name, sm, sv), p) in snap.moments.iter().zip(params.iter()) {
            if name != &p.name || sm.len() != p.values.len() {
                return Err(TrainError::Config(format!(
                    "optimizer snapshot tensor `{name}` does not match parameter `{}`",
                    p.name
                )));
            }
            m.push(sm.clone());
            v.push(sv.clone());
        }
        Ok(Self {
            step: snap.step,
            m,
            v,
        })
    }
}

/// Scale all gradients so the global L2 norm is at most `clip`; returns the
/// pre-clip norm.
pub fn clip_gradients(grads: &mut [Vec<f64>], clip: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected update: `p -= lr·(m̂/(√v̂+eps) + wd·p)`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let step = state.step;
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (pi, p) in params.iter_mut().enumerate() {
        let g = &grads[pi];
        if g.len() != p.values.len() {
            return Err(TrainError::Config(format!(
                "gradient length {} does not match parameter `{}` ({})",
                g.len(),
                p.name,
                p.values.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                step,
            });
        }
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.values[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.values[i]);
        }
    }
    Ok(())
}
