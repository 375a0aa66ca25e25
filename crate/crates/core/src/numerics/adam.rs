use serde::{Deserialize, Serialize};

use super::GradientVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// On a non-finite update nothing is written and an error is returned.
pub fn adam_step(
    params: &mut [f64],
    g: &GradientVector,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if g.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("gradient of length {}", params.len()),
            got: format!("{}", g.len()),
        });
    }
    let t = state.t + 1;
    let bc1 = 1.0 - hyper.beta1.powf(t as f64);
    let bc2 = 1.0 - hyper.beta2.powf(t as f64);

    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut next = params.to_vec();
    for j in 0..params.len() {
        let gj = g.0[j];
        m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
        v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        next[j] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        if !next[j].is_finite() {
            return Err(Error::NonFinite(format!(
                "adam update of parameter {j} at step {t}"
            )));
        }
    }
    params.copy_from_slice(&next);
    state.m = m;
    state.v = v;
    state.t = t;
    Ok(())
}
