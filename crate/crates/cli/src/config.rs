//! Run configuration: a flat JSON object with dotted keys, layered as
//! defaults < config file < environment < command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sampimp_core::data::SynthProfile;
use sampimp_core::experiment::{default_p_values, DataSource, DatasetSpec, SweepConfig};
use sampimp_core::numerics::{AdamConfig, LstmTopology, Topology};
use sampimp_core::training::TrainConfig;
use serde_json::{json, Value};

use crate::CliError;

pub const ENV_OUT_DIR: &str = "SAMPIMP_OUT_DIR";
pub const ENV_WORKERS: &str = "SAMPIMP_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Uint,
    Real,
    Text,
    RealList,
}

/// Keys that shape results. Everything here is echoed into `summary.json`.
fn result_keys() -> Vec<(&'static str, Kind, Option<Value>)> {
    let p = SynthProfile::default();
    let t = TrainConfig::default();
    let adam = AdamConfig::default();
    let lstm = LstmTopology::default();
    vec![
        ("data.source", Kind::Text, None),
        ("data.csv.path", Kind::Text, None),
        ("data.csv.value_column", Kind::Text, Some(json!("value"))),
        (
            "data.csv.timestamp_column",
            Kind::Text,
            Some(json!("timestamp")),
        ),
        ("data.synth.seed", Kind::Uint, Some(json!(0))),
        ("data.synth.length", Kind::Uint, Some(json!(5000))),
        ("data.synth.base", Kind::Real, Some(json!(p.base))),
        (
            "data.synth.daily_amplitude",
            Kind::Real,
            Some(json!(p.daily_amplitude)),
        ),
        (
            "data.synth.daily_period",
            Kind::Real,
            Some(json!(p.daily_period)),
        ),
        (
            "data.synth.weekly_depth",
            Kind::Real,
            Some(json!(p.weekly_depth)),
        ),
        (
            "data.synth.weekly_period",
            Kind::Real,
            Some(json!(p.weekly_period)),
        ),
        ("data.synth.noise_std", Kind::Real, Some(json!(p.noise_std))),
        (
            "data.synth.spike_rate",
            Kind::Real,
            Some(json!(p.spike_rate)),
        ),
        (
            "data.synth.spike_magnitude",
            Kind::Real,
            Some(json!(p.spike_magnitude)),
        ),
        ("data.synth.start_ms", Kind::Uint, Some(json!(p.start_ms))),
        ("data.synth.step_ms", Kind::Uint, Some(json!(p.step_ms))),
        ("data.train_fraction", Kind::Real, Some(json!(0.8))),
        ("data.window", Kind::Uint, Some(json!(1))),
        ("model.hidden", Kind::Uint, Some(json!(lstm.hidden))),
        ("train.epochs", Kind::Uint, Some(json!(t.epochs))),
        ("train.batch_size", Kind::Uint, Some(json!(t.batch_size))),
        (
            "train.learning_rate",
            Kind::Real,
            Some(json!(adam.learning_rate)),
        ),
        ("train.beta1", Kind::Real, Some(json!(adam.beta1))),
        ("train.beta2", Kind::Real, Some(json!(adam.beta2))),
        ("train.epsilon", Kind::Real, Some(json!(adam.epsilon))),
        (
            "sweep.p_values",
            Kind::RealList,
            Some(json!(default_p_values())),
        ),
        ("sweep.runs", Kind::Uint, Some(json!(5))),
        ("sweep.bootstrap_resamples", Kind::Uint, Some(json!(1000))),
        ("sweep.ci_level", Kind::Real, Some(json!(0.95))),
        ("sweep.master_seed", Kind::Uint, Some(json!(0))),
    ]
}

/// Keys that only affect where and how fast a run executes.
const OUTPUT_DIR: &str = "output.dir";
const WORKERS: &str = "workers";

fn kind_of(key: &str) -> Option<Kind> {
    match key {
        OUTPUT_DIR => Some(Kind::Text),
        WORKERS => Some(Kind::Uint),
        _ => result_keys()
            .into_iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, kind, _)| kind),
    }
}

fn check(key: &str, value: &Value) -> Result<(), CliError> {
    let kind =
        kind_of(key).ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
    let ok = match kind {
        Kind::Uint => value.is_u64(),
        Kind::Real => value.is_number(),
        Kind::Text => value.is_string(),
        Kind::RealList => value
            .as_array()
            .is_some_and(|a| a.iter().all(Value::is_number)),
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "`{key}` has the wrong type: {value}"
        )))
    }
}

/// Interprets a command-line or environment value: JSON when it parses,
/// otherwise a plain string. Comma-separated numbers become a list.
pub fn parse_value(key: &str, raw: &str) -> Value {
    if kind_of(key) == Some(Kind::RealList) && !raw.trim_start().starts_with('[') {
        let parts: Option<Vec<f64>> = raw
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().ok())
            .collect();
        if let Some(list) = parts {
            return json!(list);
        }
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Layered key/value settings before they are turned into a [`RunSpec`].
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: Value) -> Result<(), CliError> {
        check(key, &value)?;
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_raw(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        self.set(key, parse_value(key, raw))
    }

    /// Reads a config file. A `summary.json` from an earlier sweep is
    /// accepted too, in which case its configuration echo is used.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if doc.get("schema_version").is_some() {
            if let Some(config) = doc.get_mut("config") {
                doc = config.take();
            }
        }
        let Value::Object(map) = doc else {
            return Err(CliError::Config(format!(
                "{}: expected a JSON object of dotted keys",
                path.display()
            )));
        };
        for (k, v) in map {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), CliError> {
        for (var, key) in [(ENV_OUT_DIR, OUTPUT_DIR), (ENV_WORKERS, WORKERS)] {
            if let Ok(raw) = std::env::var(var) {
                let value = if key == OUTPUT_DIR {
                    Value::String(raw)
                } else {
                    parse_value(key, &raw)
                };
                self.set(key, value)
                    .map_err(|e| CliError::Config(format!("{var}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub sweep: SweepConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Every result-affecting key with its effective value.
    pub echo: BTreeMap<String, Value>,
}

struct Resolved<'a> {
    values: &'a BTreeMap<String, Value>,
}

impl Resolved<'_> {
    fn get(&self, key: &str) -> Result<&Value, CliError> {
        self.values
            .get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn uint(&self, key: &str) -> Result<u64, CliError> {
        Ok(self.get(key)?.as_u64().expect("type checked"))
    }

    fn usize(&self, key: &str) -> Result<usize, CliError> {
        usize::try_from(self.uint(key)?)
            .map_err(|_| CliError::Config(format!("`{key}` is too large")))
    }

    fn int(&self, key: &str) -> Result<i64, CliError> {
        i64::try_from(self.uint(key)?)
            .map_err(|_| CliError::Config(format!("`{key}` is too large")))
    }

    fn real(&self, key: &str) -> Result<f64, CliError> {
        Ok(self.get(key)?.as_f64().expect("type checked"))
    }

    fn text(&self, key: &str) -> Result<String, CliError> {
        Ok(self.get(key)?.as_str().expect("type checked").to_string())
    }

    fn reals(&self, key: &str) -> Result<Vec<f64>, CliError> {
        Ok(self
            .get(key)?
            .as_array()
            .expect("type checked")
            .iter()
            .map(|v| v.as_f64().expect("type checked"))
            .collect())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunSpec {
    pub fn resolve(settings: &Settings) -> Result<RunSpec, CliError> {
        let mut merged = BTreeMap::new();
        for (key, _, default) in result_keys() {
            if let Some(v) = default {
                merged.insert(key.to_string(), v);
            }
        }
        merged.extend(settings.values.clone());
        let r = Resolved { values: &merged };

        let source_kind = r.text("data.source")?;
        let source = match source_kind.as_str() {
            "csv" => DataSource::Csv {
                path: PathBuf::from(r.text("data.csv.path")?),
                value_column: r.text("data.csv.value_column")?,
                timestamp_column: r.text("data.csv.timestamp_column")?,
            },
            "synthetic" => DataSource::Synthetic {
                seed: r.uint("data.synth.seed")?,
                length: r.usize("data.synth.length")?,
                profile: SynthProfile {
                    base: r.real("data.synth.base")?,
                    daily_amplitude: r.real("data.synth.daily_amplitude")?,
                    daily_period: r.real("data.synth.daily_period")?,
                    weekly_depth: r.real("data.synth.weekly_depth")?,
                    weekly_period: r.real("data.synth.weekly_period")?,
                    noise_std: r.real("data.synth.noise_std")?,
                    spike_rate: r.real("data.synth.spike_rate")?,
                    spike_magnitude: r.real("data.synth.spike_magnitude")?,
                    start_ms: r.int("data.synth.start_ms")?,
                    step_ms: r.int("data.synth.step_ms")?,
                },
            },
            other => {
                return Err(CliError::Config(format!(
                    "data.source must be `csv` or `synthetic`, got `{other}`"
                )))
            }
        };
        if let DataSource::Synthetic { length: 0, .. } = source {
            return Err(CliError::Config(
                "data.synth.length must be positive".into(),
            ));
        }

        let window = r.usize("data.window")?;
        let sweep = SweepConfig {
            p_values: r.reals("sweep.p_values")?,
            n_runs: r.usize("sweep.runs")?,
            train: TrainConfig {
                epochs: r.usize("train.epochs")?,
                batch_size: r.usize("train.batch_size")?,
                optimizer: AdamConfig {
                    learning_rate: r.real("train.learning_rate")?,
                    beta1: r.real("train.beta1")?,
                    beta2: r.real("train.beta2")?,
                    epsilon: r.real("train.epsilon")?,
                },
                seed: 0,
                topology: Topology::Lstm(LstmTopology::new(1, r.usize("model.hidden")?, 1)),
            },
            dataset: DatasetSpec {
                source,
                train_fraction: r.real("data.train_fraction")?,
                window,
            },
            bootstrap_resamples: r.usize("sweep.bootstrap_resamples")?,
            ci_level: r.real("sweep.ci_level")?,
            master_seed: r.uint("sweep.master_seed")?,
        };
        sweep
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let workers = match merged.get(WORKERS) {
            Some(v) => v.as_u64().expect("type checked") as usize,
            None => default_workers(),
        };
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        let out_dir = merged
            .get(OUTPUT_DIR)
            .and_then(Value::as_str)
            .map_or_else(|| PathBuf::from("out"), PathBuf::from);

        let prefix = if source_kind == "csv" {
            "data.synth."
        } else {
            "data.csv."
        };
        let echo = merged
            .into_iter()
            .filter(|(k, _)| k != OUTPUT_DIR && k != WORKERS && !k.starts_with(prefix))
            .collect();
        Ok(RunSpec {
            sweep,
            out_dir,
            workers,
            echo,
        })
    }

    pub fn echo_value(&self) -> Value {
        Value::Object(self.echo.clone().into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> Settings {
        let mut s = Settings::default();
        s.set("data.source", json!("synthetic")).unwrap();
        s
    }

    #[test]
    fn source_is_required() {
        assert!(matches!(
            RunSpec::resolve(&Settings::default()),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn defaults_fill_everything_else() {
        let spec = RunSpec::resolve(&synthetic()).unwrap();
        assert_eq!(spec.sweep.n_runs, 5);
        assert_eq!(spec.sweep.train.epochs, 30);
        assert_eq!(spec.sweep.train.batch_size, 32);
        assert_eq!(spec.sweep.p_values, default_p_values());
        assert_eq!(spec.echo["sweep.runs"], json!(5));
        assert!(!spec.echo.contains_key("data.csv.path"));
        assert!(!spec.echo.contains_key(OUTPUT_DIR));
        assert!(!spec.echo.contains_key(WORKERS));
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let mut s = synthetic();
        assert!(s.set("train.epoch", json!(3)).is_err());
        assert!(s.set("train.epochs", json!("three")).is_err());
        assert!(s.set("train.epochs", json!(-1)).is_err());
        assert!(s.set("sweep.p_values", json!(["a"])).is_err());
    }

    #[test]
    fn raw_values_parse() {
        assert_eq!(
            parse_value("sweep.p_values", "10,20, 30"),
            json!([10.0, 20.0, 30.0])
        );
        assert_eq!(parse_value("sweep.p_values", "[100]"), json!([100]));
        assert_eq!(parse_value("sweep.runs", "3"), json!(3));
        assert_eq!(parse_value("data.source", "csv"), json!("csv"));
    }

    #[test]
    fn overrides_appear_in_echo() {
        let mut s = synthetic();
        s.set_raw("train.epochs", "3").unwrap();
        s.set_raw("sweep.p_values", "100").unwrap();
        let spec = RunSpec::resolve(&s).unwrap();
        assert_eq!(spec.sweep.train.epochs, 3);
        assert_eq!(spec.echo["train.epochs"], json!(3));
        assert_eq!(spec.echo["sweep.p_values"], json!([100.0]));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut s = synthetic();
        s.set_raw("sweep.p_values", "20,10").unwrap();
        assert!(RunSpec::resolve(&s).is_err());
        let mut s = synthetic();
        s.set_raw("train.epochs", "0").unwrap();
        assert!(RunSpec::resolve(&s).is_err());
        let mut s = synthetic();
        s.set_raw("data.source", "parquet").unwrap();
        assert!(RunSpec::resolve(&s).is_err());
    }
}
