//! Gradient-norm based sample importance for time-series forecasting.
//!
//! The pipeline trains an LSTM regressor on every sample while logging each
//! sample's gradient norm per epoch, averages those norms into an importance
//! score, keeps the top `p`% of samples and retrains a freshly initialized
//! model on that subset. The [`experiment`] module sweeps `p` over several
//! seeded runs and reports accuracy against compute cost.

pub mod data;
pub mod error;
pub mod experiment;
pub mod importance;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
