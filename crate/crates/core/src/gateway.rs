//! Replays a trace through the gateway into a platform endpoint.
//!
//! Events sharing a timestamp form one protocol tick. A tick's forwarded
//! events go to the platform together, except that a batch is flushed early
//! before a real actuator report is applied and before a second event with
//! the same (user, device) key would join it. Within a batch, the filter
//! sees the registry plus the commands already expected from the batch, so
//! its decisions match a strictly sequential interpreter.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::filter::{Filter, FilterConfig, FilterDecision, FilterStats};
use crate::fuzz::{
    exchange_round, Delivered, FuzzError, FuzzState, PseudoPool, PseudoSchedule, Refresh, DEFAULT_BUCKETS,
    DEFAULT_WINDOW_DAYS,
};
use crate::model::{DeviceId, DeviceRegistry, Event, Overlay, StateRegistry, UserId, Value, SECONDS_PER_DAY};
use crate::wire::TaEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzSettings {
    pub buckets: usize,
    /// Observation window in days; `None` uses all history.
    pub window_days: Option<u64>,
    pub schedule: PseudoSchedule,
    /// One fuzz scope per (user, trigger device) instead of per user.
    pub per_device: bool,
}

impl FuzzSettings {
    pub fn new(schedule: PseudoSchedule) -> Self {
        Self {
            buckets: DEFAULT_BUCKETS,
            window_days: Some(DEFAULT_WINDOW_DAYS),
            schedule,
            per_device: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pipeline {
    /// Every event goes to the platform unchanged.
    Baseline,
    Filter,
    /// Filter, then pad idle ticks with pseudo-events.
    Fuzz(FuzzSettings),
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("event {index} at {timestamp} precedes the previous event at {previous}")]
    Unsorted {
        index: usize,
        previous: u64,
        timestamp: u64,
    },
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
}

/// F, D and Y in force for one fuzz scope on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeRefresh {
    pub user: UserId,
    pub device: Option<DeviceId>,
    #[serde(flatten)]
    pub refresh: Refresh,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub stats: FilterStats,
    /// Real events as sent to the platform, in trace order.
    pub forwarded: Vec<Event>,
    /// Commands applied to actuators, in delivery order.
    pub delivered: Vec<Delivered>,
    pub rounds: u64,
    pub sent_real: u64,
    pub sent_pseudo: u64,
    pub discarded: u64,
    pub protocol_errors: u64,
    pub refreshes: Vec<ScopeRefresh>,
}

impl ReplayReport {
    /// Records on the wire per forwarded real record.
    pub fn overhead_ratio(&self) -> f64 {
        if self.sent_real == 0 {
            return 0.0;
        }
        (self.sent_real + self.sent_pseudo) as f64 / self.sent_real as f64
    }

    /// Delivered commands that changed an actuator's state.
    pub fn state_changes(&self) -> impl Iterator<Item = &Delivered> {
        self.delivered.iter().filter(|d| d.changed)
    }
}

type ScopeKey = (UserId, Option<DeviceId>);

pub struct Gateway<'a, T> {
    devices: &'a DeviceRegistry,
    catalog: &'a Catalog,
    filter: Filter<'a>,
    pipeline: Pipeline,
    ta: T,
    registry: StateRegistry,
    scopes: BTreeMap<ScopeKey, FuzzState>,
    report: ReplayReport,
    batch: Vec<Event>,
    expected: Vec<(UserId, DeviceId, Value)>,
    keys: BTreeSet<(UserId, DeviceId)>,
}

impl<'a, T: TaEndpoint> Gateway<'a, T> {
    pub fn new(
        devices: &'a DeviceRegistry,
        catalog: &'a Catalog,
        filter: FilterConfig,
        pipeline: Pipeline,
        ta: T,
    ) -> Self {
        Self {
            devices,
            catalog,
            filter: Filter::with_config(catalog, filter),
            pipeline,
            ta,
            registry: StateRegistry::new(),
            scopes: BTreeMap::new(),
            report: ReplayReport::default(),
            batch: Vec::new(),
            expected: Vec::new(),
            keys: BTreeSet::new(),
        }
    }

    pub fn registry(&self) -> &StateRegistry {
        &self.registry
    }

    pub fn report(&self) -> &ReplayReport {
        &self.report
    }

    pub fn into_parts(self) -> (T, ReplayReport) {
        (self.ta, self.report)
    }

    /// Replays `events` through the end of the last event's day.
    pub fn replay<R: Rng + ?Sized>(&mut self, events: &[Event], rng: &mut R) -> Result<(), GatewayError> {
        let Some(last) = events.last() else {
            return Ok(());
        };
        let end = (last.day() + 1) * SECONDS_PER_DAY;
        self.replay_until(events, end, rng)
    }

    /// Replays the events before `end`, fuzzing idle ticks up to `end`.
    pub fn replay_until<R: Rng + ?Sized>(
        &mut self,
        events: &[Event],
        end: u64,
        rng: &mut R,
    ) -> Result<(), GatewayError> {
        for (index, pair) in events.windows(2).enumerate() {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(GatewayError::Unsorted {
                    index: index + 1,
                    previous: pair[0].timestamp,
                    timestamp: pair[1].timestamp,
                });
            }
        }
        let Some(first) = events.first() else {
            return Ok(());
        };
        let mut day = first.day();
        self.init_scopes(events, day);
        self.begin_day(day, rng)?;

        let mut i = 0;
        loop {
            let boundary = (day + 1) * SECONDS_PER_DAY;
            let next_real = events.get(i).map(|e| e.timestamp).filter(|t| *t < end);
            let next_pseudo = self.scopes.values().filter_map(FuzzState::next_emission).min();
            let next = match (next_real, next_pseudo) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
            .filter(|t| *t < end);

            match next {
                Some(t) if t < boundary => {
                    let j = i + events[i..].iter().take_while(|e| e.timestamp == t).count();
                    self.tick(t, &events[i..j], rng)?;
                    i = j;
                }
                _ => {
                    if boundary >= end {
                        break;
                    }
                    day += 1;
                    self.begin_day(day, rng)?;
                }
            }
        }
        Ok(())
    }

    fn init_scopes(&mut self, events: &[Event], start_day: u64) {
        let Pipeline::Fuzz(settings) = self.pipeline else {
            return;
        };
        let pool = PseudoPool::from_catalog(self.catalog, self.devices);
        let users: BTreeSet<&UserId> = events.iter().map(|e| &e.user).collect();
        for user in users {
            let scopes: Vec<(Option<DeviceId>, PseudoPool)> = if settings.per_device {
                pool.entries()
                    .iter()
                    .map(|e| (Some(e.device.clone()), pool.only(&e.device)))
                    .collect()
            } else {
                alloc::vec![(None, pool.clone())]
            };
            for (device, pool) in scopes {
                let key = (user.clone(), device);
                self.scopes.entry(key).or_insert_with(|| {
                    FuzzState::new(
                        user.clone(),
                        pool,
                        settings.buckets,
                        start_day,
                        settings.schedule,
                        settings.window_days,
                    )
                });
            }
        }
    }

    fn begin_day<R: Rng + ?Sized>(&mut self, day: u64, rng: &mut R) -> Result<(), GatewayError> {
        for ((user, device), state) in &mut self.scopes {
            let refresh = state.begin_day(day, rng)?.clone();
            self.report.refreshes.push(ScopeRefresh {
                user: user.clone(),
                device: device.clone(),
                refresh,
            });
        }
        Ok(())
    }

    fn tick<R: Rng + ?Sized>(&mut self, t: u64, events: &[Event], rng: &mut R) -> Result<(), GatewayError> {
        let mut busy_users: BTreeSet<UserId> = BTreeSet::new();
        for ev in events {
            let actuator = self.catalog.is_actuator_target(&ev.device);
            if actuator {
                self.flush()?;
                if let Err(e) = self.registry.apply_event(self.devices, ev) {
                    log::warn!("actuator report at {} not recorded: {e}", ev.timestamp);
                }
            }
            let decision = match self.pipeline {
                Pipeline::Baseline => FilterDecision::Forward(ev.clone()),
                Pipeline::Filter | Pipeline::Fuzz(_) => {
                    let view = Overlay::new(&self.registry, &self.expected);
                    self.filter.decide(ev, &view, rng)
                }
            };
            self.report.stats.record(&decision);
            let FilterDecision::Forward(fwd) = decision else {
                continue;
            };
            if self.keys.contains(&(fwd.user.clone(), fwd.device.clone())) {
                self.flush()?;
            }
            for (actuator, verb) in self.filter.expected_commands(&fwd) {
                self.expected
                    .push((fwd.user.clone(), actuator.clone(), Value::label(verb.state())));
            }
            for key in [(fwd.user.clone(), None), (fwd.user.clone(), Some(fwd.device.clone()))] {
                if let Some(state) = self.scopes.get_mut(&key) {
                    state.record_forwarded(fwd.timestamp);
                }
            }
            busy_users.insert(fwd.user.clone());
            self.keys.insert((fwd.user.clone(), fwd.device.clone()));
            self.batch.push(fwd.clone());
            self.report.forwarded.push(fwd);
        }

        for state in self.scopes.values_mut() {
            if state.next_emission() != Some(t) {
                continue;
            }
            // No pseudo-events for a user whose real events travel this tick.
            if !busy_users.contains(state.user()) {
                let pseudo = state.pseudo_event(t, rng)?;
                if self.keys.insert((pseudo.user.clone(), pseudo.device.clone())) {
                    self.batch.push(pseudo);
                }
            }
            state.reschedule(t + 1, rng);
        }
        self.flush()
    }

    fn flush(&mut self) -> Result<(), GatewayError> {
        if self.batch.is_empty() {
            return Ok(());
        }
        let out = exchange_round(
            &self.batch,
            &mut self.ta,
            self.catalog,
            self.devices,
            &mut self.registry,
        )?;
        let r = &mut self.report;
        r.rounds += 1;
        r.sent_real += out.sent_real as u64;
        r.sent_pseudo += out.sent_pseudo as u64;
        r.discarded += out.discarded as u64;
        r.protocol_errors += out.protocol_errors as u64;
        r.delivered.extend(out.delivered);
        self.batch.clear();
        self.expected.clear();
        self.keys.clear();
        Ok(())
    }
}
