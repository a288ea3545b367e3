//! Loading configured inputs and running the gateway over them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fnf_core::analysis::SvmParams;
use fnf_core::catalog::{merge_applets, Applet, CatalogError};
use fnf_core::filter::FilterConfig;
use fnf_core::gateway::{Gateway, GatewayError, ReplayReport};
use fnf_core::model::{DeviceRegistry, Event, UserId};
use fnf_core::wire::TaEndpoint;

use crate::casas::{parse_casas, CasasError, CasasOptions};
use crate::config::{ConfigError, RunConfig, TraceConfig};
use crate::experiment::{ExperimentError, ExperimentSpec, FuzzParams, Mode};
use crate::formats::{parse_applets, parse_registry, read_events_ndjson, FormatError};
use crate::synth::{assign_applets, calibrated_pair, generate_synthetic, Calibration, SynthError, UserProfile};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Profile { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Casas(#[from] CasasError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|source| RunError::Read {
        path: path.into(),
        source,
    })
}

pub fn load_registry(path: &Path) -> Result<DeviceRegistry, RunError> {
    parse_registry(&read(path)?).map_err(|source| RunError::Format {
        path: path.into(),
        source,
    })
}

pub fn load_applets(path: &Path, devices: &DeviceRegistry) -> Result<Vec<Applet>, RunError> {
    parse_applets(&read(path)?, devices).map_err(|source| RunError::Format {
        path: path.into(),
        source,
    })
}

pub fn load_profile(path: &Path) -> Result<UserProfile, RunError> {
    serde_json::from_str(&read(path)?).map_err(|source| RunError::Profile {
        path: path.into(),
        source,
    })
}

/// A configured trace with its devices and applets.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub devices: DeviceRegistry,
    pub applets: Vec<Applet>,
    /// All users' events, sorted by timestamp.
    pub events: Vec<Event>,
}

impl Inputs {
    pub fn users(&self) -> Vec<UserId> {
        let mut users: Vec<UserId> = self.events.iter().map(|e| e.user.clone()).collect();
        users.sort();
        users.dedup();
        users
    }
}

/// Loads or generates the configured trace. Synthetic traces use `seed`.
pub fn load_inputs(cfg: &RunConfig, seed: u64) -> Result<Inputs, RunError> {
    let (devices, events) = match &cfg.trace {
        TraceConfig::Synthetic {
            registry,
            profiles,
            days,
        } => {
            let devices = load_registry(registry)?;
            let profiles = profiles
                .iter()
                .map(|p| load_profile(p))
                .collect::<Result<Vec<_>, _>>()?;
            let traces = generate_synthetic(&profiles, &devices, 0, *days, seed)?;
            let mut events: Vec<Event> = traces.into_values().flatten().collect();
            events.sort_by_key(|e| e.timestamp);
            (devices, events)
        }
        TraceConfig::Casas {
            path,
            user,
            registry,
            prefixes,
        } => {
            let user = UserId::new(user.as_str()).map_err(|e| RunError::Invalid(e.to_string()))?;
            let mut options = CasasOptions::default();
            options.prefixes.0.extend(prefixes.iter().map(|(k, v)| (k.clone(), *v)));
            let parsed = parse_casas(&read(path)?, &user, &options)?;
            let devices = match registry {
                Some(r) => load_registry(r)?,
                None => parsed.devices,
            };
            (devices, parsed.events)
        }
        TraceConfig::Ndjson { path, registry } => {
            let devices = load_registry(registry)?;
            let text = read(path)?;
            let mut events = read_events_ndjson(text.as_bytes()).map_err(|source| RunError::Format {
                path: path.clone(),
                source,
            })?;
            events.sort_by_key(|e| e.timestamp);
            (devices, events)
        }
    };
    let applets = match (&cfg.applets.file, cfg.applets.assign_seed) {
        (Some(file), _) => load_applets(file, &devices)?,
        (None, Some(s)) => assign_applets(&devices, &events, s)?,
        (None, None) => return Err(RunError::Invalid("no applet file or assign_seed configured".into())),
    };
    Ok(Inputs {
        devices,
        applets,
        events,
    })
}

/// Replays `inputs` through `ta` in `mode`.
pub fn replay<T: TaEndpoint>(
    inputs: &Inputs,
    params: &FuzzParams,
    mode: Mode,
    ta: T,
    seed: u64,
) -> Result<(T, ReplayReport), RunError> {
    let catalog = merge_applets(&inputs.applets, &inputs.devices)?;
    let mut gw = Gateway::new(
        &inputs.devices,
        &catalog,
        FilterConfig::default(),
        params.pipeline(mode),
        ta,
    );
    gw.replay(&inputs.events, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(gw.into_parts())
}

/// Builds the two-user experiment. A single profile is paired with a
/// calibrated second user; the calibration is returned in that case.
pub fn experiment_spec(cfg: &RunConfig, seed: u64) -> Result<(ExperimentSpec, Option<Calibration>), RunError> {
    let TraceConfig::Synthetic { registry, profiles, .. } = &cfg.trace else {
        return Err(RunError::Invalid("experiments need a synthetic trace source".into()));
    };
    let ex = cfg.experiment.clone().unwrap_or_default();
    let devices = load_registry(registry)?;
    let mut loaded = profiles
        .iter()
        .map(|p| load_profile(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut calibration = None;
    if loaded.len() == 1 {
        let second = UserId::new(ex.second_user.as_str()).map_err(|e| RunError::Invalid(e.to_string()))?;
        let (p, cal) = calibrated_pair(&loaded[0], second, ex.noise_seed, ex.target_correlation)?;
        loaded.push(p);
        calibration = Some(cal);
    }
    let applets = match &cfg.applets.file {
        Some(file) => load_applets(file, &devices)?,
        None => return Err(RunError::Invalid("experiments need an applet file".into())),
    };
    Ok((
        ExperimentSpec {
            devices,
            applets,
            profiles: loaded,
            days: ex.days,
            warmup_days: ex.warmup_days,
            repetitions: ex.repetitions,
            seed,
            fuzz: cfg.fuzz.params(),
            knn_k: ex.knn_k,
            train_fraction: ex.train_fraction,
            svm: SvmParams {
                lambda: ex.svm_lambda,
                epochs: ex.svm_epochs,
                seed: 0,
            },
            modes: Mode::ALL.to_vec(),
        },
        calibration,
    ))
}

/// Forwarded real events per user, for summaries.
pub fn forwarded_by_user(report: &ReplayReport) -> BTreeMap<UserId, usize> {
    let mut out = BTreeMap::new();
    for e in &report.forwarded {
        *out.entry(e.user.clone()).or_default() += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ndjson_source_with_applet_file() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "reg.txt",
            "M1 motion discrete active inactive\nL1 switch discrete on off\n",
        );
        write(
            dir.path(),
            "apps.txt",
            "If Any new motion detected by M1, then Switch on L1\n",
        );
        write(
            dir.path(),
            "ev.ndjson",
            concat!(
                r#"{"timestamp":9,"user":"u","device":"M1","attribute":"motion","value":"active"}"#,
                "\n",
                r#"{"timestamp":2,"user":"u","device":"M1","attribute":"motion","value":"inactive"}"#,
                "\n"
            ),
        );
        let cfg = RunConfig::parse(
            "[trace]\nsource = \"ndjson\"\npath = \"ev.ndjson\"\nregistry = \"reg.txt\"\n[applets]\nfile = \"apps.txt\"\n",
            dir.path(),
        )
        .unwrap();
        let inputs = load_inputs(&cfg, 0).unwrap();
        assert_eq!(
            inputs.events.iter().map(|e| e.timestamp).collect::<Vec<_>>(),
            vec![2, 9]
        );
        assert_eq!(inputs.applets.len(), 1);
        let (_, report) = replay(
            &inputs,
            &FuzzParams::default(),
            Mode::Filter,
            fnf_core::ta::TaPlatform::new(inputs.applets.clone()),
            1,
        )
        .unwrap();
        assert_eq!(report.stats.forwarded_count, 1);
        assert_eq!(report.delivered.len(), 1);
    }

    #[test]
    fn missing_applet_source_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "reg.txt", "M1 motion discrete active inactive\n");
        write(dir.path(), "ev.ndjson", "");
        let cfg = RunConfig::parse(
            "[trace]\nsource = \"ndjson\"\npath = \"ev.ndjson\"\nregistry = \"reg.txt\"\n",
            dir.path(),
        )
        .unwrap();
        assert!(matches!(load_inputs(&cfg, 0), Err(RunError::Invalid(_))));
        let cfg = RunConfig::parse(
            "[trace]\nsource = \"ndjson\"\npath = \"nope\"\nregistry = \"reg.txt\"\n",
            dir.path(),
        )
        .unwrap();
        assert!(matches!(load_inputs(&cfg, 0), Err(RunError::Read { .. })));
    }
}
