use super::{Gradients, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet<f32>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, id: usize) -> &Tensor<f32> {
        &self.m[id]
    }

    pub fn second_moment(&self, id: usize) -> &Tensor<f32> {
        &self.v[id]
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are
/// treated as having a zero gradient (their moments still decay).
pub fn adam_step(
    params: &mut ParamSet<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for id in 0..params.len() {
        let g = grads.get(id);
        let p = params.by_id_mut(id);
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g.data()[j] as f64);
            let mj = beta1 * m.data()[j] as f64 + (1.0 - beta1) * gj;
            let vj = beta2 * v.data()[j] as f64 + (1.0 - beta2) * gj * gj;
            m.data_mut()[j] = mj as f32;
            v.data_mut()[j] = vj as f32;
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
            if update != 0.0 {
                let pj = &mut p.data_mut()[j];
                *pj = (*pj as f64 - update) as f32;
            }
        }
    }
}
