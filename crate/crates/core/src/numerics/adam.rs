//! Adam with bias correction.

use std::collections::HashMap;

use super::{Gradients, NumericsError, ParamStore, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moments plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update of every trainable parameter that has a
/// gradient and is not matched by `frozen`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    frozen: impl Fn(&str) -> bool,
) -> Result<(), NumericsError> {
    for (name, g) in grads.params() {
        let p = params.require(name)?;
        if p.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                detail: format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));

    // Deterministic order regardless of hash-map iteration.
    let mut names: Vec<&String> = grads.params().keys().collect();
    names.sort();
    for name in names {
        if frozen(name) {
            continue;
        }
        let g = &grads.params()[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        if m.len() != g.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                detail: format!("{name}: moment length {} vs grad {}", m.len(), g.len()),
            });
        }
        let p: &mut Tensor = params.get_mut(name).expect("checked above");
        for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
