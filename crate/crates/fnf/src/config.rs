//! TOML run configuration. Relative paths resolve against the directory
//! holding the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fnf_core::analysis::SvmParams;

use crate::casas::SensorClass;
use crate::experiment::{FuzzParams, Mode, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_mode", with = "mode_name")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub trace: TraceConfig,
    #[serde(default)]
    pub applets: AppletSource,
    #[serde(default)]
    pub fuzz: FuzzConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// `host:port` of a remote platform; in-process when absent.
    pub ta_addr: Option<String>,
}

fn default_mode() -> Mode {
    Mode::Filter
}

mod mode_name {
    use super::Mode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mode, D::Error> {
        let s = String::deserialize(d)?;
        Mode::parse(&s).ok_or_else(|| D::Error::custom(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceConfig {
    Synthetic {
        registry: PathBuf,
        profiles: Vec<PathBuf>,
        days: u64,
    },
    Casas {
        path: PathBuf,
        #[serde(default = "default_user")]
        user: String,
        /// Registry to use instead of the one inferred from sensor names.
        registry: Option<PathBuf>,
        /// Sensor-id prefixes added to or overriding the default map.
        #[serde(default)]
        prefixes: BTreeMap<String, SensorClass>,
    },
    Ndjson {
        path: PathBuf,
        registry: PathBuf,
    },
}

fn default_user() -> String {
    "resident".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppletSource {
    pub file: Option<PathBuf>,
    /// Draws applets from the trace's devices when no file is given.
    pub assign_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzConfig {
    pub buckets: usize,
    /// Zero means the whole history.
    pub window_days: u64,
    pub sigma: Option<f64>,
    pub naive_per_day: f64,
    pub per_device: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        let p = FuzzParams::default();
        Self {
            buckets: p.buckets,
            window_days: p.window_days.unwrap_or(0),
            sigma: p.sigma,
            naive_per_day: p.naive_per_day,
            per_device: p.per_device,
        }
    }
}

impl FuzzConfig {
    pub fn params(&self) -> FuzzParams {
        FuzzParams {
            buckets: self.buckets,
            window_days: (self.window_days > 0).then_some(self.window_days),
            sigma: self.sigma,
            naive_per_day: self.naive_per_day,
            per_device: self.per_device,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub days: u64,
    pub warmup_days: u64,
    pub repetitions: u32,
    pub knn_k: usize,
    pub train_fraction: f64,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    /// Second user derived from the first profile; unused when two
    /// profiles are given.
    pub second_user: String,
    pub noise_seed: u64,
    pub target_correlation: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let svm = SvmParams::default();
        Self {
            days: 100,
            warmup_days: 7,
            repetitions: 10,
            knn_k: 5,
            train_fraction: 0.7,
            svm_lambda: svm.lambda,
            svm_epochs: svm.epochs,
            second_user: "second".into(),
            noise_seed: 1,
            target_correlation: 0.93,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, toml::de::Error> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|source| ConfigError::Toml {
            path: path.into(),
            source,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.trace {
            TraceConfig::Synthetic { registry, profiles, .. } => {
                fix(registry);
                profiles.iter_mut().for_each(fix);
            }
            TraceConfig::Casas { path, registry, .. } => {
                fix(path);
                registry.iter_mut().for_each(fix);
            }
            TraceConfig::Ndjson { path, registry } => {
                fix(path);
                fix(registry);
            }
        }
        self.applets.file.iter_mut().for_each(fix);
        fix(&mut self.output.dir);
    }
}
