//! Pseudo-event injection.
//!
//! Each fuzzed scope (a user, or a user and one trigger device) keeps a
//! history of its forwarded events. At every day boundary the history
//! yields the pattern vector F, the schedule turns F into a target D and a
//! deficit Y, and pseudo-events are emitted on idle ticks of bucket i with
//! probability `min(y_i / m, 1)`, where m is the number of one-second ticks
//! in a bucket. [`exchange_round`] sends one batch to the platform and routes
//! its replies through the pseudo ledger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Action, Catalog, TriggerValue};
use crate::model::{
    ActuatorVerb, Command, DeviceId, DeviceRegistry, Event, StateRegistry, UserId, Value, SECONDS_PER_DAY,
};
use crate::wire::{decode_commands, encode_events, TaEndpoint, TransportError, WireCommand, WireError};

pub const DEFAULT_BUCKETS: usize = 24;
pub const DEFAULT_WINDOW_DAYS: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("gaussian sigma {sigma} is below the minimum {min}")]
    SigmaTooSmall { sigma: f64, min: f64 },
    #[error("pattern vector entries must be finite and non-negative")]
    InvalidPattern,
    #[error("bucket count must divide a day into at least one bucket")]
    InvalidBuckets,
    #[error("pseudo-event quota is positive but no trigger device is available")]
    EmptyPool,
    #[error("constant pseudo-event rate must be finite and non-negative")]
    InvalidRate,
    #[error("two events in one batch share the key ({ts}, {user}, {device})")]
    KeyCollision { ts: u64, user: UserId, device: DeviceId },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Mean number of events per day in each time-of-day bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PatternVector(Vec<f64>);

impl PatternVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FuzzError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FuzzError::InvalidPattern);
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// First index holding the maximum.
    pub fn argmax(&self) -> usize {
        let max = self.max();
        self.0.iter().position(|v| *v == max).unwrap_or(0)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for PatternVector {
    type Error = FuzzError;

    fn try_from(v: Vec<f64>) -> Result<Self, FuzzError> {
        Self::new(v)
    }
}

impl From<PatternVector> for Vec<f64> {
    fn from(p: PatternVector) -> Vec<f64> {
        p.0
    }
}

/// Bucket of a timestamp among `n` equal slices of the day.
pub fn bucket_of(ts: u64, n: usize) -> usize {
    ((ts % SECONDS_PER_DAY) * n as u64 / SECONDS_PER_DAY) as usize
}

/// First second of the day that falls into bucket `b`.
fn bucket_start(b: usize, n: usize) -> u64 {
    (b as u64 * SECONDS_PER_DAY).div_ceil(n as u64)
}

/// Per-day bucket counts from a given first day onwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternHistory {
    buckets: usize,
    start_day: u64,
    days: BTreeMap<u64, Vec<u32>>,
}

impl PatternHistory {
    pub fn new(buckets: usize, start_day: u64) -> Self {
        assert!(buckets > 0, "at least one bucket");
        Self {
            buckets,
            start_day,
            days: BTreeMap::new(),
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn start_day(&self) -> u64 {
        self.start_day
    }

    /// Counts one event. Events before the start day move the start back.
    pub fn record(&mut self, ts: u64) {
        let day = ts / SECONDS_PER_DAY;
        self.start_day = self.start_day.min(day);
        let n = self.buckets;
        self.days.entry(day).or_insert_with(|| vec![0; n])[bucket_of(ts, n)] += 1;
    }

    pub fn day_counts(&self, day: u64) -> Option<&[u32]> {
        self.days.get(&day).map(Vec::as_slice)
    }

    /// Mean counts over the `window` days ending at `through_day`, shortened
    /// to the days since the start when less history exists. `None` means
    /// the whole history.
    pub fn estimate(&self, window: Option<u64>, through_day: u64) -> PatternVector {
        if through_day < self.start_day {
            return PatternVector::zeros(self.buckets);
        }
        let available = through_day - self.start_day + 1;
        let span = window.map_or(available, |p| p.clamp(1, available));
        let first = through_day + 1 - span;
        let mut sums = vec![0.0; self.buckets];
        for counts in self.days.range(first..=through_day).map(|(_, c)| c) {
            for (s, c) in sums.iter_mut().zip(counts) {
                *s += f64::from(*c);
            }
        }
        for s in &mut sums {
            *s /= span as f64;
        }
        PatternVector(sums)
    }
}

/// Pattern vector of the real events in `events` over the last
/// `window_days` days of their span (`None` for the full span).
pub fn estimate_pattern(events: &[Event], window_days: Option<u64>, n: usize) -> PatternVector {
    let mut real = events.iter().filter(|e| !e.pseudo).peekable();
    let Some(first) = real.peek() else {
        return PatternVector::zeros(n);
    };
    let mut history = PatternHistory::new(n, first.day());
    let mut last_day = first.day();
    for ev in real {
        history.record(ev.timestamp);
        last_day = last_day.max(ev.day());
    }
    history.estimate(window_days, last_day)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetDistribution {
    /// Every bucket at max(F).
    Uniform,
    /// Bell curve of height max(F) centred on argmax(F), with circular
    /// distance between buckets.
    Gaussian { sigma: f64 },
}

impl TargetDistribution {
    /// Gaussian with the narrowest admissible width, n/6.
    pub fn narrow_gaussian(n: usize) -> Self {
        TargetDistribution::Gaussian { sigma: n as f64 / 6.0 }
    }
}

/// How a fuzzed scope chooses its pseudo-event quota.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PseudoSchedule {
    Target {
        distribution: TargetDistribution,
    },
    /// A fixed number of pseudo-events per day spread evenly over the
    /// buckets, blind to F.
    ConstantRate {
        per_day: f64,
    },
}

/// Target vector D and deficit vector Y for one pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub target: Vec<f64>,
    pub deficit: Vec<f64>,
}

impl Target {
    /// Excess of F over D that pseudo-events cannot mask.
    pub fn leak_budget(&self, f: &PatternVector) -> f64 {
        f.as_slice()
            .iter()
            .zip(&self.target)
            .map(|(f, d)| (f - d).max(0.0))
            .sum()
    }
}

pub fn build_target(f: &PatternVector, dist: &TargetDistribution) -> Result<Target, FuzzError> {
    let n = f.len();
    let peak = f.max();
    let target: Vec<f64> = match *dist {
        TargetDistribution::Uniform => vec![peak; n],
        TargetDistribution::Gaussian { sigma } => {
            let min = n as f64 / 6.0;
            if !sigma.is_finite() || sigma < min {
                return Err(FuzzError::SigmaTooSmall { sigma, min });
            }
            let mu = f.argmax();
            (0..n)
                .map(|i| {
                    let d = i.abs_diff(mu);
                    let d = d.min(n - d) as f64;
                    peak * libm::exp(-d * d / (2.0 * sigma * sigma))
                })
                .collect()
        }
    };
    if peak == 0.0 {
        log::debug!("pattern vector is all zero; no pseudo-events scheduled");
    }
    let deficit = target.iter().zip(f.as_slice()).map(|(d, f)| (d - f).max(0.0)).collect();
    Ok(Target { target, deficit })
}

impl PseudoSchedule {
    pub fn plan(&self, f: &PatternVector) -> Result<Target, FuzzError> {
        match self {
            PseudoSchedule::Target { distribution } => build_target(f, distribution),
            PseudoSchedule::ConstantRate { per_day } => {
                if !per_day.is_finite() || *per_day < 0.0 {
                    return Err(FuzzError::InvalidRate);
                }
                let y = per_day / f.len() as f64;
                Ok(Target {
                    target: f.as_slice().iter().map(|v| v + y).collect(),
                    deficit: vec![y; f.len()],
                })
            }
        }
    }
}

/// A trigger device a pseudo-event may impersonate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub device: DeviceId,
    pub attribute: String,
    pub values: Vec<TriggerValue>,
}

/// Trigger devices with the values that fire at least one applet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoPool {
    entries: Vec<PoolEntry>,
}

impl PseudoPool {
    pub fn from_catalog(catalog: &Catalog, devices: &DeviceRegistry) -> Self {
        let entries = catalog
            .trigger_devices()
            .filter_map(|id| {
                let values = catalog.trigger_values(id);
                let device = devices.get(id)?;
                (!values.is_empty()).then(|| PoolEntry {
                    device: id.clone(),
                    attribute: device.attribute.clone(),
                    values,
                })
            })
            .collect();
        Self { entries }
    }

    /// The pool narrowed to one device.
    pub fn only(&self, device: &DeviceId) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.device == *device).cloned().collect(),
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform device, then a uniform trigger value or a uniform integer in
    /// a uniformly chosen trigger sub-range.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(&PoolEntry, Value)> {
        if self.entries.is_empty() {
            return None;
        }
        let entry = &self.entries[rng.random_range(0..self.entries.len())];
        let value = match &entry.values[rng.random_range(0..entry.values.len())] {
            TriggerValue::Label(l) => Value::Label(l.clone()),
            TriggerValue::Range { low, high } => Value::Number(rng.random_range(*low..=*high)),
        };
        Some((entry, value))
    }

    fn event<R: Rng + ?Sized>(&self, ts: u64, user: &UserId, rng: &mut R) -> Result<Event, FuzzError> {
        let (entry, value) = self.draw(rng).ok_or(FuzzError::EmptyPool)?;
        Ok(Event {
            timestamp: ts,
            user: user.clone(),
            device: entry.device.clone(),
            attribute: entry.attribute.clone(),
            value,
            pseudo: true,
        })
    }
}

/// One idle tick in bucket `bucket`: emits a pseudo-event with probability
/// `min(y[bucket] / m, 1)`.
pub fn maybe_pseudo<R: Rng + ?Sized>(
    bucket: usize,
    m: u64,
    y: &[f64],
    rng: &mut R,
    pool: &PseudoPool,
    user: &UserId,
    ts: u64,
) -> Result<Option<Event>, FuzzError> {
    let q = emission_probability(y[bucket], m);
    if q == 0.0 {
        return Ok(None);
    }
    if pool.is_empty() {
        return Err(FuzzError::EmptyPool);
    }
    if q < 1.0 && !rng.random_bool(q) {
        return Ok(None);
    }
    pool.event(ts, user, rng).map(Some)
}

fn emission_probability(y: f64, m: u64) -> f64 {
    assert!(m >= 1, "at least one send per bucket");
    (y / m as f64).clamp(0.0, 1.0)
}

/// Ticks in one bucket when a tick lasts one second.
pub fn sends_per_bucket(n: usize) -> u64 {
    (SECONDS_PER_DAY / n as u64).max(1)
}

/// Number of failed Bernoulli(q) trials before the first success.
fn geometric<R: Rng + ?Sized>(q: f64, rng: &mut R) -> f64 {
    if q >= 1.0 {
        return 0.0;
    }
    let u = 1.0 - rng.random::<f64>();
    libm::floor(libm::log(u) / libm::log1p(-q))
}

/// First tick in `[from, until)` on which a per-tick Bernoulli process with
/// per-bucket probabilities `q` succeeds. Equivalent in distribution to
/// trying every tick in turn.
pub fn next_emission<R: Rng + ?Sized>(from: u64, until: u64, q: &[f64], rng: &mut R) -> Option<u64> {
    let n = q.len();
    let mut t = from;
    while t < until {
        let b = bucket_of(t, n);
        let day_start = t - t % SECONDS_PER_DAY;
        let end = (day_start + bucket_start(b + 1, n)).min(until);
        if q[b] > 0.0 {
            let g = geometric(q[b], rng);
            if g < (end - t) as f64 {
                return Some(t + g as u64);
            }
        }
        t = end;
    }
    None
}

/// Pattern, target and deficit in force for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refresh {
    pub day: u64,
    pub pattern: PatternVector,
    pub plan: Target,
    pub leak_budget: f64,
}

/// Re-estimates F from the `window` days before `day` and rebuilds D and Y.
pub fn refresh_cycle(
    history: &PatternHistory,
    window: Option<u64>,
    day: u64,
    schedule: &PseudoSchedule,
) -> Result<Refresh, FuzzError> {
    let pattern = match day.checked_sub(1) {
        Some(prev) => history.estimate(window, prev),
        None => PatternVector::zeros(history.buckets()),
    };
    let plan = schedule.plan(&pattern)?;
    let leak_budget = plan.leak_budget(&pattern);
    Ok(Refresh {
        day,
        pattern,
        plan,
        leak_budget,
    })
}

/// Fuzzing state of one scope.
#[derive(Debug, Clone)]
pub struct FuzzState {
    user: UserId,
    pool: PseudoPool,
    history: PatternHistory,
    schedule: PseudoSchedule,
    window: Option<u64>,
    current: Option<Refresh>,
    probabilities: Vec<f64>,
    next: Option<u64>,
}

impl FuzzState {
    pub fn new(
        user: UserId,
        pool: PseudoPool,
        buckets: usize,
        start_day: u64,
        schedule: PseudoSchedule,
        window: Option<u64>,
    ) -> Self {
        Self {
            user,
            pool,
            history: PatternHistory::new(buckets, start_day),
            schedule,
            window,
            current: None,
            probabilities: vec![0.0; buckets],
            next: None,
        }
    }

    pub fn user(&self) -> &UserId {
        &self.user
    }

    pub fn history(&self) -> &PatternHistory {
        &self.history
    }

    pub fn current(&self) -> Option<&Refresh> {
        self.current.as_ref()
    }

    /// Counts a forwarded real event toward F.
    pub fn record_forwarded(&mut self, ts: u64) {
        self.history.record(ts);
    }

    /// Starts `day`: refreshes F, D and Y and schedules the first emission.
    pub fn begin_day<R: Rng + ?Sized>(&mut self, day: u64, rng: &mut R) -> Result<&Refresh, FuzzError> {
        let refresh = refresh_cycle(&self.history, self.window, day, &self.schedule)?;
        let m = sends_per_bucket(self.history.buckets());
        self.probabilities = refresh
            .plan
            .deficit
            .iter()
            .map(|y| emission_probability(*y, m))
            .collect();
        if self.pool.is_empty() && self.probabilities.iter().any(|q| *q > 0.0) {
            return Err(FuzzError::EmptyPool);
        }
        self.current = Some(refresh);
        self.reschedule(day * SECONDS_PER_DAY, rng);
        Ok(self.current.as_ref().expect("just set"))
    }

    /// Next tick that would carry a pseudo-event, if any remains today.
    pub fn next_emission(&self) -> Option<u64> {
        self.next
    }

    /// Redraws the next emission from tick `from` onwards.
    pub fn reschedule<R: Rng + ?Sized>(&mut self, from: u64, rng: &mut R) {
        let until = (from / SECONDS_PER_DAY + 1) * SECONDS_PER_DAY;
        self.next = next_emission(from, until, &self.probabilities, rng);
    }

    /// Builds the pseudo-event due at tick `ts`.
    pub fn pseudo_event<R: Rng + ?Sized>(&self, ts: u64, rng: &mut R) -> Result<Event, FuzzError> {
        self.pool.event(ts, &self.user, rng)
    }
}

/// Where a reply from the platform goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Deliver,
    Discard,
    Unmatched,
}

#[derive(Debug, Default, Clone, Copy)]
struct Expected {
    real: u32,
    pseudo: u32,
}

/// Commands a batch may cause, split by whether the causing entry was real
/// or pseudo. A command is attributed to a real entry whenever one could
/// have caused it, so a real-caused command is never discarded.
#[derive(Debug, Default)]
pub struct PseudoLedger {
    keys: BTreeSet<(u64, UserId, DeviceId)>,
    expected: BTreeMap<(u64, UserId, DeviceId, &'static str), Expected>,
}

impl PseudoLedger {
    /// Registers a batch, rejecting duplicate (timestamp, user, device) keys.
    pub fn admit(&mut self, batch: &[Event], catalog: &Catalog) -> Result<(), FuzzError> {
        for ev in batch {
            if !self.keys.insert((ev.timestamp, ev.user.clone(), ev.device.clone())) {
                return Err(FuzzError::KeyCollision {
                    ts: ev.timestamp,
                    user: ev.user.clone(),
                    device: ev.device.clone(),
                });
            }
            let Some(row) = catalog.lookup(&ev.device, &ev.value) else {
                continue;
            };
            for entry in row.actions {
                if let Action::Actuate { actuator, verb } = &entry.action {
                    let slot = self
                        .expected
                        .entry((ev.timestamp, ev.user.clone(), actuator.clone(), verb.command()))
                        .or_default();
                    if ev.pseudo {
                        slot.pseudo += 1;
                    } else {
                        slot.real += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Consumes one expected command matching the reply.
    pub fn resolve(&mut self, cmd: &WireCommand) -> Resolution {
        let Some(verb) = ActuatorVerb::from_command(&cmd.command) else {
            return Resolution::Unmatched;
        };
        let key = (cmd.ts, cmd.user.clone(), cmd.device.clone(), verb.command());
        match self.expected.get_mut(&key) {
            Some(e) if e.real > 0 => {
                e.real -= 1;
                Resolution::Deliver
            }
            Some(e) if e.pseudo > 0 => {
                e.pseudo -= 1;
                Resolution::Discard
            }
            _ => Resolution::Unmatched,
        }
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.expected.clear();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A command handed to an actuator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivered {
    pub command: Command,
    /// Whether the actuator's recorded state changed.
    pub changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    pub sent_real: usize,
    pub sent_pseudo: usize,
    pub delivered: Vec<Delivered>,
    pub discarded: usize,
    pub protocol_errors: usize,
}

/// Sends `batch` to the platform and routes the replies: commands caused by
/// pseudo-events are discarded, commands caused by real events are applied
/// to `registry` and returned in reply order.
pub fn exchange_round<T: TaEndpoint + ?Sized>(
    batch: &[Event],
    ta: &mut T,
    catalog: &Catalog,
    devices: &DeviceRegistry,
    registry: &mut StateRegistry,
) -> Result<RoundOutcome, FuzzError> {
    let mut out = RoundOutcome::default();
    if batch.is_empty() {
        return Ok(out);
    }
    let mut ledger = PseudoLedger::default();
    ledger.admit(batch, catalog)?;
    out.sent_pseudo = batch.iter().filter(|e| e.pseudo).count();
    out.sent_real = batch.len() - out.sent_pseudo;

    let reply = ta.exchange(&encode_events(batch))?;
    let decoded = decode_commands(&reply)?;
    for e in &decoded.rejected {
        log::warn!("platform reply: {e}");
    }
    out.protocol_errors += decoded.rejected.len();

    for wc in decoded.items {
        match ledger.resolve(&wc) {
            Resolution::Discard => out.discarded += 1,
            Resolution::Deliver => {
                let command = Command::from(wc);
                match registry.apply_command(devices, &command) {
                    Ok(changed) => out.delivered.push(Delivered { command, changed }),
                    Err(e) => {
                        log::warn!("platform command rejected: {e}");
                        out.protocol_errors += 1;
                    }
                }
            }
            Resolution::Unmatched => {
                log::warn!(
                    "platform command ({}, {}, {}, {}) matches no batch entry",
                    wc.ts,
                    wc.user,
                    wc.device,
                    wc.command
                );
                out.protocol_errors += 1;
            }
        }
    }
    Ok(out)
}
