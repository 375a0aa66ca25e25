//! Full-data training with gradient-norm tracking, subset retraining,
//! evaluation in original units and compute-cost accounting.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ScalerParams, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::importance::{GradientLog, SelectionResult};
use crate::numerics::{
    adam_step, forward, grad_norm, init_model, loss_mse, AdamConfig, AdamState, GradientVector,
    ModelState, Topology,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Seed for parameter initialization.
    pub seed: u64,
    pub topology: Topology,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            seed: 0,
            topology: Topology::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                o.learning_rate
            )));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam hyperparameters {o:?}")));
        }
        self.topology
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Deterministic work counters plus measured wall time for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub wall_time_s: f64,
    /// Samples processed, summed over epochs.
    pub sample_visits: u64,
    /// Optimizer steps taken.
    pub param_update_count: u64,
    /// Forward + backward per visit (backward counted as twice a forward)
    /// plus ten operations per parameter per Adam step.
    pub estimated_flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub n_test: usize,
}

/// Output of [`train_tracked`].
#[derive(Debug, Clone)]
pub struct TrackedRun {
    pub model: ModelState,
    pub log: GradientLog,
    pub ledger: CostLedger,
    /// Mean per-sample loss observed during each epoch's pass.
    pub epoch_losses: Vec<f64>,
}

/// Output of [`retrain_subset`].
#[derive(Debug, Clone)]
pub struct SubsetRun {
    pub model: ModelState,
    pub ledger: CostLedger,
    pub epoch_losses: Vec<f64>,
}

/// Passed to training observers before each mini-batch update.
#[derive(Debug)]
pub struct BatchStart<'a> {
    pub epoch: usize,
    /// Dataset indices of the samples in this batch.
    pub samples: &'a [usize],
    /// Parameters at which the batch's gradients are taken.
    pub model: &'a ModelState,
}

/// Trains on every sample in temporal order and records each sample's
/// gradient norm, taken at the parameters current when it is visited.
pub fn train_tracked(config: &TrainConfig, dataset: &TimeSeriesDataset) -> Result<TrackedRun> {
    train_tracked_observed(config, dataset, |_| {})
}

pub fn train_tracked_observed(
    config: &TrainConfig,
    dataset: &TimeSeriesDataset,
    observer: impl FnMut(&BatchStart<'_>),
) -> Result<TrackedRun> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut log = GradientLog::new(dataset.len());
    let out = run_training(config, dataset, &all, Some(&mut log), observer)?;
    Ok(TrackedRun {
        model: out.model,
        log,
        ledger: out.ledger,
        epoch_losses: out.epoch_losses,
    })
}

/// Reinitializes from `config.seed` and trains only on the selected samples.
pub fn retrain_subset(
    config: &TrainConfig,
    dataset: &TimeSeriesDataset,
    selection: &SelectionResult,
) -> Result<SubsetRun> {
    if selection.indices.is_empty() {
        return Err(Error::InvalidArgument("selection is empty".into()));
    }
    if let Some(&bad) = selection.indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidArgument(format!(
            "selected index {bad} out of range for {} samples",
            dataset.len()
        )));
    }
    let out = run_training(config, dataset, &selection.indices, None, |_| {})?;
    Ok(SubsetRun {
        model: out.model,
        ledger: out.ledger,
        epoch_losses: out.epoch_losses,
    })
}

struct TrainOutput {
    model: ModelState,
    ledger: CostLedger,
    epoch_losses: Vec<f64>,
}

fn run_training(
    config: &TrainConfig,
    dataset: &TimeSeriesDataset,
    samples: &[usize],
    mut log: Option<&mut GradientLog>,
    mut observer: impl FnMut(&BatchStart<'_>),
) -> Result<TrainOutput> {
    config.validate()?;
    let mut model = init_model(config.topology, config.seed)?;
    let p = model.param_count();
    let mut adam = AdamState::new(p);
    let visit_flops = 3 * config.topology.forward_flops(dataset.timesteps());
    let update_flops = 10 * p as u64;

    let start = Instant::now();
    let mut ledger = CostLedger::default();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut row = vec![0.0; samples.len()];
    let mut batch_grad = GradientVector::zeros(p);

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for (b, batch) in samples.chunks(config.batch_size).enumerate() {
            observer(&BatchStart {
                epoch,
                samples: batch,
                model: &model,
            });
            batch_grad.0.iter_mut().for_each(|g| *g = 0.0);
            for (j, &s) in batch.iter().enumerate() {
                let (pred, g) = model
                    .loss_and_gradient(&dataset.x[s], dataset.y[s])
                    .map_err(|e| Error::NumericalFailure {
                        epoch,
                        sample: s,
                        detail: e.to_string(),
                    })?;
                loss_sum += loss_mse(pred, dataset.y[s]);
                row[b * config.batch_size + j] = grad_norm(&g);
                for (acc, v) in batch_grad.0.iter_mut().zip(&g.0) {
                    *acc += v;
                }
            }
            let scale = batch.len() as f64;
            batch_grad.0.iter_mut().for_each(|g| *g /= scale);
            adam_step(&mut model.params, &batch_grad, &mut adam, &config.optimizer).map_err(
                |e| Error::NumericalFailure {
                    epoch,
                    sample: batch[0],
                    detail: e.to_string(),
                },
            )?;
            ledger.sample_visits += batch.len() as u64;
            ledger.param_update_count += 1;
            ledger.estimated_flops += batch.len() as u64 * visit_flops + update_flops;
        }
        let mean_loss = loss_sum / samples.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NumericalFailure {
                epoch,
                sample: samples[0],
                detail: "epoch loss is not finite".into(),
            });
        }
        epoch_losses.push(mean_loss);
        if let Some(log) = log.as_deref_mut() {
            log.record_epoch(epoch, &row)?;
        }
    }
    ledger.wall_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput {
        model,
        ledger,
        epoch_losses,
    })
}

/// Mean squared error of `model` over `dataset`, in the dataset's units.
pub fn mean_loss(model: &ModelState, dataset: &TimeSeriesDataset) -> Result<f64> {
    let preds = predict(model, dataset)?;
    let total: f64 = preds
        .iter()
        .zip(&dataset.y)
        .map(|(&p, &y)| loss_mse(p, y))
        .sum();
    Ok(total / dataset.len() as f64)
}

pub fn predict(model: &ModelState, dataset: &TimeSeriesDataset) -> Result<Vec<f64>> {
    dataset.x.iter().map(|x| forward(model, x)).collect()
}

/// MAE and RMSE of paired predictions and targets.
pub fn metrics(predictions: &[f64], truth: &[f64]) -> Result<EvalMetrics> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            predictions.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let (abs, sq) = predictions
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(a, s), (p, t)| {
            let e = p - t;
            (a + e.abs(), s + e * e)
        });
    Ok(EvalMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n_test: truth.len(),
    })
}

/// Scores `model` on `test` after mapping predictions and targets back to
/// original units.
pub fn evaluate(
    model: &ModelState,
    test: &TimeSeriesDataset,
    scaler: &ScalerParams,
) -> Result<EvalMetrics> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let preds = scaler.invert_all(&predict(model, test)?);
    metrics(&preds, &scaler.invert_all(&test.y))
}

const CKPT_MAGIC: &[u8; 8] = b"SIMPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header stored in front of a checkpoint's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub topology: Topology,
    pub init_seed: u64,
    pub param_count: usize,
    pub config_hash: String,
}

/// Layout: magic, `u32` version, `u32` header length, JSON header, then
/// `param_count` little-endian `f64`s.
pub fn write_checkpoint(
    mut out: impl Write,
    model: &ModelState,
    config: &TrainConfig,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        topology: model.topology,
        init_seed: model.init_seed,
        param_count: model.param_count(),
        config_hash: config.hash(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(CKPT_MAGIC).map_err(io)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(io)?;
    out.write_all(&(json.len() as u32).to_le_bytes())
        .map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for v in &model.params {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<(ModelState, CheckpointHeader)> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let bad = |m: &str| Error::Data(format!("malformed checkpoint: {m}"));
    if buf.len() < 16 || &buf[..8] != CKPT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let header_end = 16 + hlen;
    if buf.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&buf[16..header_end])?;
    let body = &buf[header_end..];
    if body.len() != header.param_count * 8 {
        return Err(bad("parameter block length does not match header"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = ModelState::from_params(header.topology, params, header.init_seed)?;
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &ModelState, config: &TrainConfig) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, model, config)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, CheckpointHeader)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
