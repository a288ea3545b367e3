//! Synthetic multi-day traces from per-device hourly rate profiles.
//!
//! Profile JSON:
//!
//! ```json
//! {
//!   "user": "alice",
//!   "devices": [
//!     {"device": "D1", "rates": [0.2, ...], "emission": {"rule": "alternate"}},
//!     {"device": "L1", "rates": [...], "emission": {"rule": "constant", "label": "off"}},
//!     {"device": "T1", "rates": [...], "emission": {"rule": "random_walk", "start": 22, "step": 1}}
//!   ]
//! }
//! ```
//!
//! `rates[i]` is the expected number of events in bucket `i` of each day.
//! Counts are Poisson; event times are uniform within the bucket.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use fnf_core::analysis::pearson;
use fnf_core::catalog::{Action, Applet, Comparator, TriggerSpec};
use fnf_core::fuzz::bucket_of;
use fnf_core::model::{ActuatorVerb, DeviceId, DeviceKind, DeviceRegistry, Event, UserId, Value, SECONDS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Emission {
    /// Cycles through the device's states in declaration order.
    Alternate,
    Constant {
        label: String,
    },
    /// A uniformly drawn state or in-range integer.
    Uniform,
    /// Integer walk with uniform steps in `[-step, step]`, clamped to range.
    RandomWalk {
        start: i64,
        step: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device: DeviceId,
    pub rates: Vec<f64>,
    pub emission: Emission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: UserId,
    pub devices: Vec<DeviceProfile>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("profile {user}: unknown device {device}")]
    UnknownDevice { user: UserId, device: DeviceId },
    #[error("profile {user}, device {device}: {detail}")]
    Invalid {
        user: UserId,
        device: DeviceId,
        detail: String,
    },
    #[error("profiles disagree on bucket count")]
    BucketMismatch,
    #[error("duplicate profile for user {0}")]
    DuplicateUser(UserId),
    #[error("cannot reach correlation {target} by perturbation")]
    Unreachable { target: f64 },
}

impl UserProfile {
    pub fn buckets(&self) -> Option<usize> {
        self.devices.first().map(|d| d.rates.len())
    }

    /// Sum of all device rates per bucket.
    pub fn aggregate(&self) -> Vec<f64> {
        let n = self.buckets().unwrap_or(0);
        let mut out = vec![0.0; n];
        for d in &self.devices {
            out.iter_mut().zip(&d.rates).for_each(|(o, r)| *o += r);
        }
        out
    }

    /// Same layout with every rate in bucket `i` multiplied by `factors[i]`.
    pub fn rescaled(&self, user: UserId, factors: &[f64]) -> UserProfile {
        UserProfile {
            user,
            devices: self
                .devices
                .iter()
                .map(|d| DeviceProfile {
                    rates: d.rates.iter().zip(factors).map(|(r, f)| r * f).collect(),
                    ..d.clone()
                })
                .collect(),
        }
    }

    pub fn validate(&self, devices: &DeviceRegistry) -> Result<(), SynthError> {
        let n = self.buckets().unwrap_or(24);
        for d in &self.devices {
            let invalid = |detail: String| SynthError::Invalid {
                user: self.user.clone(),
                device: d.device.clone(),
                detail,
            };
            let device = devices.get(&d.device).ok_or_else(|| SynthError::UnknownDevice {
                user: self.user.clone(),
                device: d.device.clone(),
            })?;
            if d.rates.len() != n || n == 0 {
                return Err(SynthError::BucketMismatch);
            }
            if d.rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
                return Err(invalid("rates must be finite and non-negative".into()));
            }
            match (&d.emission, &device.kind) {
                (Emission::Constant { label }, kind) if !kind.admits(&Value::label(label.clone())) => {
                    return Err(invalid(format!("{label:?} is not a state")))
                }
                (Emission::RandomWalk { .. }, DeviceKind::Discrete { .. }) => {
                    return Err(invalid("random walk needs a numeric device".into()))
                }
                (Emission::Alternate, DeviceKind::Numeric { .. }) => {
                    return Err(invalid("alternation needs a discrete device".into()))
                }
                (Emission::RandomWalk { step, .. }, _) if *step < 0 => return Err(invalid("negative step".into())),
                _ => {}
            }
        }
        Ok(())
    }
}

struct Emitter<'a> {
    kind: &'a DeviceKind,
    emission: &'a Emission,
    next: usize,
    level: i64,
}

impl Emitter<'_> {
    fn emit<R: Rng>(&mut self, rng: &mut R) -> Value {
        match (self.emission, self.kind) {
            (Emission::Constant { label }, _) => Value::label(label.clone()),
            (Emission::Alternate, DeviceKind::Discrete { states }) => {
                let v = Value::label(states[self.next % states.len()].clone());
                self.next += 1;
                v
            }
            (Emission::Uniform, DeviceKind::Discrete { states }) => {
                Value::label(states[rng.random_range(0..states.len())].clone())
            }
            (Emission::Uniform, DeviceKind::Numeric { min, max, .. }) => Value::Number(rng.random_range(*min..=*max)),
            (Emission::RandomWalk { step, .. }, DeviceKind::Numeric { min, max, .. }) => {
                self.level = (self.level + rng.random_range(-step..=*step)).clamp(*min, *max);
                Value::Number(self.level)
            }
            _ => unreachable!("validated"),
        }
    }
}

/// One trace per profile covering days `first_day .. first_day + days`.
/// Deterministic in `seed`; each user draws from its own stream.
pub fn generate_synthetic(
    profiles: &[UserProfile],
    devices: &DeviceRegistry,
    first_day: u64,
    days: u64,
    seed: u64,
) -> Result<BTreeMap<UserId, Vec<Event>>, SynthError> {
    let mut out = BTreeMap::new();
    for (index, profile) in profiles.iter().enumerate() {
        profile.validate(devices)?;
        if out.contains_key(&profile.user) {
            return Err(SynthError::DuplicateUser(profile.user.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        out.insert(
            profile.user.clone(),
            generate_one(profile, devices, first_day, days, &mut rng),
        );
    }
    Ok(out)
}

fn generate_one(
    profile: &UserProfile,
    devices: &DeviceRegistry,
    first_day: u64,
    days: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let n = profile.buckets().unwrap_or(24) as u64;
    let mut emitters: Vec<Emitter> = profile
        .devices
        .iter()
        .map(|d| {
            let kind = &devices.get(&d.device).expect("validated").kind;
            let level = match (&d.emission, kind) {
                (Emission::RandomWalk { start, .. }, DeviceKind::Numeric { min, max, .. }) => {
                    (*start).clamp(*min, *max)
                }
                _ => 0,
            };
            Emitter {
                kind,
                emission: &d.emission,
                next: 0,
                level,
            }
        })
        .collect();
    let mut events = Vec::new();
    let mut day_slots: Vec<(u64, usize)> = Vec::new();
    for day in first_day..first_day + days {
        day_slots.clear();
        for (di, d) in profile.devices.iter().enumerate() {
            for (b, rate) in d.rates.iter().enumerate() {
                if *rate <= 0.0 {
                    continue;
                }
                let count = Poisson::new(*rate).expect("positive finite rate").sample(rng) as u64;
                let lo = (b as u64 * SECONDS_PER_DAY).div_ceil(n);
                let hi = ((b as u64 + 1) * SECONDS_PER_DAY).div_ceil(n);
                for _ in 0..count {
                    day_slots.push((day * SECONDS_PER_DAY + rng.random_range(lo..hi), di));
                }
            }
        }
        day_slots.sort_unstable();
        for &(ts, di) in &day_slots {
            let d = &profile.devices[di];
            let device = devices.get(&d.device).expect("validated");
            events.push(Event {
                timestamp: ts,
                user: profile.user.clone(),
                device: d.device.clone(),
                attribute: device.attribute.clone(),
                value: emitters[di].emit(rng),
                pseudo: false,
            });
        }
    }
    debug_assert!(events.iter().all(|e| bucket_of(e.timestamp, n as usize) < n as usize));
    events
}

/// Per-bucket multipliers turning `base` into `base + s * mean(base) * noise`,
/// floored at 1% of the mean. The base's peak bucket is left unchanged.
pub fn perturbation_factors(base: &[f64], noise: &[f64], s: f64) -> Vec<f64> {
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let peak = base
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > base[best] { i } else { best });
    base.iter()
        .zip(noise)
        .enumerate()
        .map(|(i, (b, q))| {
            if i == peak || *b <= 0.0 {
                return 1.0;
            }
            (b + s * q * mean).max(0.01 * mean) / b
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub correlation: f64,
}

/// Bisects the perturbation scale so that the perturbed aggregate reaches
/// `target` correlation with the base aggregate.
pub fn calibrate(base: &[f64], noise: &[f64], target: f64) -> Result<Calibration, SynthError> {
    let corr = |s: f64| {
        let f = perturbation_factors(base, noise, s);
        let p: Vec<f64> = base.iter().zip(&f).map(|(b, f)| b * f).collect();
        pearson(base, &p).unwrap_or(1.0)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while corr(hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(SynthError::Unreachable { target });
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if corr(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        scale: hi,
        correlation: corr(hi),
    })
}

/// Standard normal noise, one value per bucket, from `seed`.
pub fn bucket_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect()
}

/// A second user sharing `base`'s layout whose aggregate pattern correlates
/// with `base`'s at `target`.
pub fn calibrated_pair(
    base: &UserProfile,
    second: UserId,
    noise_seed: u64,
    target: f64,
) -> Result<(UserProfile, Calibration), SynthError> {
    let agg = base.aggregate();
    let noise = bucket_noise(agg.len(), noise_seed);
    let cal = calibrate(&agg, &noise, target)?;
    let factors = perturbation_factors(&agg, &noise, cal.scale);
    Ok((base.rescaled(second, &factors), cal))
}

/// Mean reading of every numeric device in `events`.
pub fn numeric_means(events: &[Event]) -> BTreeMap<DeviceId, f64> {
    let mut acc: BTreeMap<DeviceId, (f64, u64)> = BTreeMap::new();
    for ev in events {
        if let Value::Number(n) = ev.value {
            let e = acc.entry(ev.device.clone()).or_default();
            e.0 += n as f64;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(d, (s, c))| (d, s / c as f64)).collect()
}

/// One applet per switch, each triggered by a distinct device drawn without
/// replacement from the motion, contact and temperature devices. Motion
/// triggers on "active", contact on "open", temperature above its trace
/// mean rounded down.
pub fn assign_applets(devices: &DeviceRegistry, trace: &[Event], seed: u64) -> Result<Vec<Applet>, SynthError> {
    let switches: Vec<&DeviceId> = devices
        .iter()
        .filter(|d| d.attribute == "switch")
        .map(|d| &d.id)
        .collect();
    let triggers: Vec<&DeviceId> = devices
        .iter()
        .filter(|d| matches!(d.attribute.as_str(), "motion" | "contact" | "temperature"))
        .map(|d| &d.id)
        .collect();
    if switches.len() > triggers.len() {
        return Err(SynthError::Unreachable { target: 0.0 });
    }
    let means = numeric_means(trace);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, triggers.len(), switches.len());
    let mut out = Vec::new();
    for (light, pick) in switches.iter().zip(picks.iter()) {
        let trig = devices.get(triggers[pick]).expect("listed");
        let trigger = match trig.attribute.as_str() {
            "motion" => TriggerSpec::Discrete { value: "active".into() },
            "contact" => TriggerSpec::Discrete { value: "open".into() },
            _ => TriggerSpec::Numeric {
                comparator: Comparator::Above,
                threshold: means.get(&trig.id).copied().unwrap_or(20.0).floor() as i64,
            },
        };
        out.push(Applet {
            id: format!("auto-{light}"),
            trigger_device: trig.id.clone(),
            trigger,
            action: Action::Actuate {
                actuator: (*light).clone(),
                verb: ActuatorVerb::SwitchOn,
            },
        });
    }
    Ok(out)
}
