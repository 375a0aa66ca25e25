//! Dense arrays, the LSTM regressor with hand-written backpropagation
//! through time, MSE loss and the Adam optimizer.

mod adam;
mod model;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{
    backward_per_sample, forward, init_model, LstmTopology, ModelState, ParamBlock, Topology,
};
pub use tensor::Tensor;

/// Activation arguments are clamped to this magnitude before `exp`/`tanh`.
pub const ACTIVATION_CLAMP: f64 = 30.0;

/// Squared error of a single prediction.
pub fn loss_mse(pred: f64, target: f64) -> f64 {
    let r = pred - target;
    r * r
}

/// Per-parameter gradient of one sample's loss, in `ModelState::params` order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean norm over every parameter coordinate.
pub fn grad_norm(g: &GradientVector) -> f64 {
    g.0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(2.0, 2.0), 0.0);
        assert_eq!(loss_mse(3.0, 1.0), 4.0);
        assert_eq!(loss_mse(-1.0, 1.0), 4.0);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(grad_norm(&GradientVector(vec![0.0, 0.0, 0.0])), 0.0);
        assert_eq!(grad_norm(&GradientVector(vec![42.0, 56.0])), 70.0);
        assert_eq!(grad_norm(&GradientVector(vec![-3.0])), 3.0);
    }
}
