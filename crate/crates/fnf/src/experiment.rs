//! Two-user identification experiment.
//!
//! Each repetition generates fresh traces for both users, replays them
//! through every pipeline mode, and measures what the platform's log
//! reveals: correlation of its hourly vector with the true forwarded
//! pattern, and how well per-day vectors identify the user. The first
//! `warmup_days` days let the fuzzer build its pattern history and are not
//! scored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fnf_core::analysis::{
    interception_vector, knn_classify, mean_vector, pearson, stratified_split, svm_train, LabeledVector, SvmParams,
};
use fnf_core::catalog::{merge_applets, Applet, CatalogError};
use fnf_core::filter::FilterConfig;
use fnf_core::fuzz::{bucket_of, FuzzError, PseudoSchedule, TargetDistribution};
use fnf_core::gateway::{FuzzSettings, Gateway, GatewayError, Pipeline, ReplayReport};
use fnf_core::model::{DeviceRegistry, Event, UserId, SECONDS_PER_DAY};
use fnf_core::ta::TaPlatform;

use crate::synth::{generate_synthetic, SynthError, UserProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    Filter,
    FuzzIdeal,
    FuzzGaussian,
    FuzzNaive,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::Filter,
        Mode::FuzzIdeal,
        Mode::FuzzGaussian,
        Mode::FuzzNaive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Filter => "filter",
            Mode::FuzzIdeal => "fuzz-ideal",
            Mode::FuzzGaussian => "fuzz-gaussian",
            Mode::FuzzNaive => "fuzz-naive",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Knobs shared by replay and experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzParams {
    pub buckets: usize,
    pub window_days: Option<u64>,
    pub sigma: Option<f64>,
    pub naive_per_day: f64,
    pub per_device: bool,
}

impl Default for FuzzParams {
    fn default() -> Self {
        Self {
            buckets: 24,
            window_days: Some(7),
            sigma: None,
            naive_per_day: 120.0,
            per_device: false,
        }
    }
}

impl FuzzParams {
    pub fn pipeline(&self, mode: Mode) -> Pipeline {
        let schedule = match mode {
            Mode::Baseline => return Pipeline::Baseline,
            Mode::Filter => return Pipeline::Filter,
            Mode::FuzzIdeal => PseudoSchedule::Target {
                distribution: TargetDistribution::Uniform,
            },
            Mode::FuzzGaussian => PseudoSchedule::Target {
                distribution: match self.sigma {
                    Some(sigma) => TargetDistribution::Gaussian { sigma },
                    None => TargetDistribution::narrow_gaussian(self.buckets),
                },
            },
            Mode::FuzzNaive => PseudoSchedule::ConstantRate {
                per_day: self.naive_per_day,
            },
        };
        Pipeline::Fuzz(FuzzSettings {
            buckets: self.buckets,
            window_days: self.window_days,
            schedule,
            per_device: self.per_device,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
    #[error("analysis: {0}")]
    Analysis(#[from] fnf_core::analysis::AnalysisError),
    #[error("experiment needs exactly two user profiles, got {0}")]
    UserCount(usize),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub devices: DeviceRegistry,
    pub applets: Vec<Applet>,
    pub profiles: Vec<UserProfile>,
    pub days: u64,
    pub warmup_days: u64,
    pub repetitions: u32,
    pub seed: u64,
    pub fuzz: FuzzParams,
    pub knn_k: usize,
    pub train_fraction: f64,
    pub svm: SvmParams,
    pub modes: Vec<Mode>,
}

/// Outcome of one mode in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub replay_seed: u64,
    /// Per user: correlation of the platform's mean hourly vector with the
    /// mean forwarded vector. `None` when either is constant.
    pub pearson: BTreeMap<UserId, Option<f64>>,
    pub knn_accuracy: f64,
    pub svm_accuracy: f64,
    /// Records seen by the platform per forwarded real record.
    pub overhead_ratio: f64,
    pub forwarded_ratio: f64,
    /// Mean unmaskable excess per user-day.
    pub leak_budget: f64,
    pub sent_real: u64,
    pub sent_pseudo: u64,
    pub discarded: u64,
    pub protocol_errors: u64,
    pub adversary_mean: BTreeMap<UserId, Vec<f64>>,
    pub forwarded_mean: BTreeMap<UserId, Vec<f64>>,
}

impl ModeResult {
    pub fn mean_pearson(&self) -> Option<f64> {
        let v: Vec<f64> = self.pearson.values().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_abs_pearson(&self) -> Option<f64> {
        let v: Vec<f64> = self.pearson.values().flatten().map(|r| r.abs()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub index: u32,
    pub trace_seed: u64,
    pub raw_events: BTreeMap<UserId, usize>,
    pub modes: Vec<ModeResult>,
}

impl Repetition {
    pub fn mode(&self, mode: Mode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub pearson: Option<Spread>,
    pub abs_pearson: Option<Spread>,
    pub knn_accuracy: Option<Spread>,
    pub svm_accuracy: Option<Spread>,
    pub overhead_ratio: Option<Spread>,
    pub forwarded_ratio: Option<Spread>,
    pub leak_budget: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub days: u64,
    pub warmup_days: u64,
    pub fuzz: FuzzParams,
    /// Correlation between the users' profile aggregates.
    pub profile_correlation: Option<f64>,
    /// Per user, from the first repetition: correlation of raw and
    /// forwarded hourly vectors, and the pass-through estimate `f / u`.
    pub raw_vs_forwarded: BTreeMap<UserId, Option<f64>>,
    pub interception: BTreeMap<UserId, Vec<f64>>,
    pub summary: Vec<ModeSummary>,
    pub repetitions: Vec<Repetition>,
}

impl ExperimentReport {
    pub fn summary(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    /// `series,x,y` rows: per-repetition metrics and first-repetition
    /// hourly vectors.
    pub fn csv(&self) -> String {
        let mut out = String::from("series,x,y\n");
        for rep in &self.repetitions {
            for m in &rep.modes {
                let name = m.mode.name();
                let x = rep.index;
                let mut row = |metric: &str, y: f64| {
                    let _ = writeln!(out, "{metric}.{name},{x},{y}");
                };
                if let Some(r) = m.mean_pearson() {
                    row("pearson", r);
                }
                row("knn_accuracy", m.knn_accuracy);
                row("svm_accuracy", m.svm_accuracy);
                row("overhead_ratio", m.overhead_ratio);
                row("forwarded_ratio", m.forwarded_ratio);
                row("leak_budget", m.leak_budget);
            }
        }
        if let Some(rep) = self.repetitions.first() {
            for m in &rep.modes {
                for (user, v) in &m.adversary_mean {
                    for (i, y) in v.iter().enumerate() {
                        let _ = writeln!(out, "adversary.{}.{user},{i},{y}", m.mode.name());
                    }
                }
                for (user, v) in &m.forwarded_mean {
                    for (i, y) in v.iter().enumerate() {
                        let _ = writeln!(out, "forwarded.{}.{user},{i},{y}", m.mode.name());
                    }
                }
            }
        }
        out
    }
}

/// Per-user, per-day bucket counts over `days`.
fn day_vectors<'a, I>(
    events: I,
    users: &[UserId],
    days: std::ops::Range<u64>,
    n: usize,
) -> BTreeMap<UserId, Vec<Vec<f64>>>
where
    I: IntoIterator<Item = (u64, &'a UserId)>,
{
    let mut out: BTreeMap<UserId, Vec<Vec<f64>>> = users
        .iter()
        .map(|u| (u.clone(), vec![vec![0.0; n]; (days.end - days.start) as usize]))
        .collect();
    for (ts, user) in events {
        let day = ts / SECONDS_PER_DAY;
        if !days.contains(&day) {
            continue;
        }
        if let Some(v) = out.get_mut(user) {
            v[(day - days.start) as usize][bucket_of(ts, n)] += 1.0;
        }
    }
    out
}

fn mean_of(vectors: &[Vec<f64>]) -> Vec<f64> {
    mean_vector(vectors.iter().map(Vec::as_slice))
}

struct ModeRun {
    result: ModeResult,
    forwarded_days: BTreeMap<UserId, Vec<Vec<f64>>>,
    adversary_days: BTreeMap<UserId, Vec<Vec<f64>>>,
}

fn run_mode(
    spec: &ExperimentSpec,
    events: &[Event],
    users: &[UserId],
    mode: Mode,
    replay_seed: u64,
    split_seed: u64,
) -> Result<ModeRun, ExperimentError> {
    let catalog = merge_applets(&spec.applets, &spec.devices)?;
    let n = spec.fuzz.buckets;
    let mut gw = Gateway::new(
        &spec.devices,
        &catalog,
        FilterConfig::default(),
        spec.fuzz.pipeline(mode),
        TaPlatform::new(spec.applets.clone()),
    );
    let end = (spec.warmup_days + spec.days) * SECONDS_PER_DAY;
    gw.replay_until(events, end, &mut ChaCha8Rng::seed_from_u64(replay_seed))?;
    let (ta, report) = gw.into_parts();

    let window = spec.warmup_days..spec.warmup_days + spec.days;
    let adversary_days = day_vectors(
        ta.log().events().iter().map(|w| (w.ts, &w.user)),
        users,
        window.clone(),
        n,
    );
    let forwarded_days = day_vectors(
        report.forwarded.iter().map(|e| (e.timestamp, &e.user)),
        users,
        window.clone(),
        n,
    );

    let mut pearson_by_user = BTreeMap::new();
    let mut adversary_mean = BTreeMap::new();
    let mut forwarded_mean = BTreeMap::new();
    let mut labeled = Vec::new();
    for user in users {
        let adv = mean_of(&adversary_days[user]);
        let fwd = mean_of(&forwarded_days[user]);
        pearson_by_user.insert(user.clone(), pearson(&adv, &fwd).ok());
        adversary_mean.insert(user.clone(), adv);
        forwarded_mean.insert(user.clone(), fwd);
        labeled.extend(
            adversary_days[user]
                .iter()
                .map(|v| LabeledVector::new(v.clone(), user.as_str())),
        );
    }
    let (train, test) = stratified_split(&labeled, spec.train_fraction, split_seed);
    let knn = knn_classify(&train, &test, spec.knn_k)?;
    let svm = svm_train(
        &train,
        &SvmParams {
            seed: split_seed,
            ..spec.svm
        },
    )?
    .classify(&test);

    let seen: f64 = adversary_days.values().flatten().flatten().sum();
    let real: f64 = forwarded_days.values().flatten().flatten().sum();
    let leak = leak_budget(&report, &window, users.len());

    Ok(ModeRun {
        result: ModeResult {
            mode,
            replay_seed,
            pearson: pearson_by_user,
            knn_accuracy: knn.accuracy,
            svm_accuracy: svm.accuracy,
            overhead_ratio: if real > 0.0 { seen / real } else { 0.0 },
            forwarded_ratio: report.stats.forwarded_ratio(),
            leak_budget: leak,
            sent_real: report.sent_real,
            sent_pseudo: report.sent_pseudo,
            discarded: report.discarded,
            protocol_errors: report.protocol_errors,
            adversary_mean,
            forwarded_mean,
        },
        forwarded_days,
        adversary_days,
    })
}

fn leak_budget(report: &ReplayReport, window: &std::ops::Range<u64>, users: usize) -> f64 {
    let days = (window.end - window.start) as f64 * users as f64;
    let total: f64 = report
        .refreshes
        .iter()
        .filter(|r| window.contains(&r.refresh.day))
        .map(|r| r.refresh.leak_budget)
        .sum();
    if days > 0.0 {
        total / days
    } else {
        0.0
    }
}

fn merged_trace(traces: &BTreeMap<UserId, Vec<Event>>) -> Vec<Event> {
    let mut all: Vec<Event> = traces.values().flatten().cloned().collect();
    all.sort_by_key(|e| e.timestamp);
    all
}

/// Raw-vs-forwarded correlation and pass-through vector per user.
type Diagnostics = (BTreeMap<UserId, Option<f64>>, BTreeMap<UserId, Vec<f64>>);

struct RepOutput {
    rep: Repetition,
    diagnostics: Option<Diagnostics>,
}

fn run_repetition(spec: &ExperimentSpec, index: u32) -> Result<RepOutput, ExperimentError> {
    let trace_seed = spec.seed.wrapping_add(u64::from(index));
    let traces = generate_synthetic(
        &spec.profiles,
        &spec.devices,
        0,
        spec.warmup_days + spec.days,
        trace_seed,
    )?;
    let users: Vec<UserId> = traces.keys().cloned().collect();
    let events = merged_trace(&traces);
    let mut modes = Vec::new();
    let mut raw_days = None;
    let mut filtered_days = None;
    for (k, mode) in spec.modes.iter().enumerate() {
        let replay_seed = trace_seed.wrapping_mul(31).wrapping_add(k as u64 + 1);
        let run = run_mode(spec, &events, &users, *mode, replay_seed, trace_seed)?;
        match mode {
            Mode::Baseline => raw_days = Some(run.adversary_days),
            Mode::Filter => filtered_days = Some(run.forwarded_days),
            _ => {}
        }
        modes.push(run.result);
    }
    let diagnostics = match (raw_days, filtered_days) {
        (Some(u), Some(f)) if index == 0 => {
            let mut corr = BTreeMap::new();
            let mut p = BTreeMap::new();
            for user in &users {
                let (um, fm) = (mean_of(&u[user]), mean_of(&f[user]));
                corr.insert(user.clone(), pearson(&um, &fm).ok());
                p.insert(user.clone(), interception_vector(&um, &fm));
            }
            Some((corr, p))
        }
        _ => None,
    };
    Ok(RepOutput {
        rep: Repetition {
            index,
            trace_seed,
            raw_events: traces.iter().map(|(u, e)| (u.clone(), e.len())).collect(),
            modes,
        },
        diagnostics,
    })
}

/// Runs every repetition, in parallel threads, and summarizes. The result
/// depends only on its argument.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    if spec.profiles.len() != 2 {
        return Err(ExperimentError::UserCount(spec.profiles.len()));
    }
    let outputs: Vec<Result<RepOutput, ExperimentError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..spec.repetitions)
            .map(|i| s.spawn(move || run_repetition(spec, i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("repetition thread panicked"))
            .collect()
    });
    let mut repetitions = Vec::new();
    let mut diagnostics = None;
    for out in outputs {
        let out = out?;
        if out.diagnostics.is_some() {
            diagnostics = out.diagnostics;
        }
        repetitions.push(out.rep);
    }
    let (raw_vs_forwarded, interception) = diagnostics.unwrap_or_default();

    let summary = spec
        .modes
        .iter()
        .map(|&mode| {
            let results: Vec<&ModeResult> = repetitions.iter().filter_map(|r| r.mode(mode)).collect();
            let collect = |f: &dyn Fn(&ModeResult) -> Option<f64>| -> Option<Spread> {
                Spread::of(&results.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
            };
            ModeSummary {
                mode,
                pearson: collect(&|m| m.mean_pearson()),
                abs_pearson: collect(&|m| m.mean_abs_pearson()),
                knn_accuracy: collect(&|m| Some(m.knn_accuracy)),
                svm_accuracy: collect(&|m| Some(m.svm_accuracy)),
                overhead_ratio: collect(&|m| Some(m.overhead_ratio)),
                forwarded_ratio: collect(&|m| Some(m.forwarded_ratio)),
                leak_budget: collect(&|m| Some(m.leak_budget)),
            }
        })
        .collect();

    let profile_correlation = pearson(&spec.profiles[0].aggregate(), &spec.profiles[1].aggregate()).ok();
    Ok(ExperimentReport {
        seed: spec.seed,
        days: spec.days,
        warmup_days: spec.warmup_days,
        fuzz: spec.fuzz,
        profile_correlation,
        raw_vs_forwarded,
        interception,
        summary,
        repetitions,
    })
}

/// Acceptance bands for an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub ideal_abs_pearson_max: f64,
    pub gaussian_pearson: [f64; 2],
    pub filtered_accuracy_min: f64,
    pub ideal_accuracy: [f64; 2],
    pub gaussian_accuracy: [f64; 2],
    pub hierarchy_min_repetitions: u32,
    pub baseline_accuracy_min: f64,
    pub naive_pearson_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ideal_abs_pearson_max: 0.15,
            gaussian_pearson: [0.4, 0.85],
            filtered_accuracy_min: 0.95,
            ideal_accuracy: [0.40, 0.60],
            gaussian_accuracy: [0.55, 0.85],
            hierarchy_min_repetitions: 9,
            baseline_accuracy_min: 0.9,
            naive_pearson_min: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn within(v: f64, band: [f64; 2]) -> bool {
    (band[0]..=band[1]).contains(&v)
}

/// Evaluates the report against `t`. Checks for modes absent from the
/// report fail.
pub fn check_report(report: &ExperimentReport, t: &Thresholds) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| {
        out.push(Check {
            name: name.into(),
            pass,
            detail,
        })
    };
    let mean = |mode: Mode, f: fn(&ModeSummary) -> Option<Spread>| report.summary(mode).and_then(f).map(|s| s.mean);

    let ideal = mean(Mode::FuzzIdeal, |s| s.abs_pearson);
    push(
        "ideal-correlation",
        ideal.is_some_and(|v| v <= t.ideal_abs_pearson_max),
        format!("mean |r| = {}, limit {}", show(ideal), t.ideal_abs_pearson_max),
    );
    let gauss = mean(Mode::FuzzGaussian, |s| s.pearson);
    push(
        "gaussian-correlation",
        gauss.is_some_and(|v| within(v, t.gaussian_pearson)),
        format!("mean r = {}, band {:?}", show(gauss), t.gaussian_pearson),
    );
    let fk = mean(Mode::Filter, |s| s.knn_accuracy);
    let fs = mean(Mode::Filter, |s| s.svm_accuracy);
    push(
        "filtered-accuracy",
        fk.is_some_and(|v| v >= t.filtered_accuracy_min) && fs.is_some_and(|v| v >= t.filtered_accuracy_min),
        format!("knn {}, svm {}, floor {}", show(fk), show(fs), t.filtered_accuracy_min),
    );
    let (ik, is) = (
        mean(Mode::FuzzIdeal, |s| s.knn_accuracy),
        mean(Mode::FuzzIdeal, |s| s.svm_accuracy),
    );
    let (gk, gs) = (
        mean(Mode::FuzzGaussian, |s| s.knn_accuracy),
        mean(Mode::FuzzGaussian, |s| s.svm_accuracy),
    );
    let band_ok = |v: Option<f64>, b| v.is_some_and(|v| within(v, b));
    push(
        "fuzzed-accuracy",
        band_ok(ik, t.ideal_accuracy)
            && band_ok(is, t.ideal_accuracy)
            && band_ok(gk, t.gaussian_accuracy)
            && band_ok(gs, t.gaussian_accuracy),
        format!(
            "ideal knn {} svm {} in {:?}; gaussian knn {} svm {} in {:?}",
            show(ik),
            show(is),
            t.ideal_accuracy,
            show(gk),
            show(gs),
            t.gaussian_accuracy
        ),
    );
    let ordered = |acc: fn(&ModeResult) -> f64| {
        report
            .repetitions
            .iter()
            .filter(|r| {
                let get = |m| r.mode(m).map(acc);
                match (
                    get(Mode::Baseline),
                    get(Mode::Filter),
                    get(Mode::FuzzGaussian),
                    get(Mode::FuzzIdeal),
                ) {
                    (Some(b), Some(f), Some(g), Some(i)) => b >= f && f >= g && g >= i,
                    _ => false,
                }
            })
            .count() as u32
    };
    let (hk, hs) = (ordered(|m| m.knn_accuracy), ordered(|m| m.svm_accuracy));
    let (bk, bs) = (
        mean(Mode::Baseline, |s| s.knn_accuracy),
        mean(Mode::Baseline, |s| s.svm_accuracy),
    );
    let baseline_ok = [bk, bs].iter().all(|v| v.is_some_and(|v| v >= t.baseline_accuracy_min));
    push(
        "accuracy-hierarchy",
        hk >= t.hierarchy_min_repetitions && hs >= t.hierarchy_min_repetitions && baseline_ok,
        format!(
            "ordered in {hk} (knn) and {hs} (svm) of {} repetitions, need {}; baseline knn {} svm {}, floor {}",
            report.repetitions.len(),
            t.hierarchy_min_repetitions,
            show(bk),
            show(bs),
            t.baseline_accuracy_min
        ),
    );
    let overhead_ok = report
        .repetitions
        .iter()
        .all(|r| match (r.mode(Mode::FuzzIdeal), r.mode(Mode::FuzzGaussian)) {
            (Some(i), Some(g)) => i.overhead_ratio > g.overhead_ratio,
            _ => false,
        })
        && !report.repetitions.is_empty();
    push(
        "overhead-order",
        overhead_ok,
        format!(
            "mean ideal {} vs gaussian {}",
            show(mean(Mode::FuzzIdeal, |s| s.overhead_ratio)),
            show(mean(Mode::FuzzGaussian, |s| s.overhead_ratio))
        ),
    );
    let naive = report
        .repetitions
        .iter()
        .filter_map(|r| r.mode(Mode::FuzzNaive).and_then(ModeResult::mean_pearson))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    push(
        "naive-correlation",
        naive.is_some_and(|v| v >= t.naive_pearson_min),
        format!("lowest r = {}, floor {}", show(naive), t.naive_pearson_min),
    );
    out
}
