//! The four-step filter that runs before anything is uploaded.
//!
//! 1. events from devices that trigger no applet are dropped;
//! 2. values that fall in an untrigger row or sub-range are dropped;
//! 3. events whose every mapped actuator already sits in its consequential
//!    state are dropped, unless the row carries an external action;
//! 4. numeric survivors have their value redrawn uniformly from the
//!    containing sub-range.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Action, Catalog};
use crate::model::{ActuatorVerb, Command, DeviceId, DeviceRegistry, Event, StateRegistry, StateView, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UntriggerDevice,
    UntriggerState,
    ActuatorAlreadyInCsv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Drop(DropReason),
    Forward(Event),
}

impl FilterDecision {
    pub fn forwarded(&self) -> Option<&Event> {
        match self {
            FilterDecision::Forward(ev) => Some(ev),
            FilterDecision::Drop(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Redraw numeric values until they differ from the reading, when the
    /// sub-range holds more than one value. Off by default, so the true value
    /// can come back by chance.
    #[serde(default)]
    pub resample_distinct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("event {index} at t={timestamp} precedes the previous event at t={previous}")]
    Unsorted {
        index: usize,
        previous: u64,
        timestamp: u64,
    },
}

/// Per-reason drop counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub untrigger_device: u64,
    pub untrigger_state: u64,
    pub actuator_csv: u64,
}

impl DropCounts {
    pub fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::UntriggerDevice => self.untrigger_device += 1,
            DropReason::UntriggerState => self.untrigger_state += 1,
            DropReason::ActuatorAlreadyInCsv => self.actuator_csv += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.untrigger_device + self.untrigger_state + self.actuator_csv
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input_count: u64,
    pub forwarded_count: u64,
    pub drops: DropCounts,
}

impl FilterStats {
    pub fn record(&mut self, decision: &FilterDecision) {
        self.input_count += 1;
        match decision {
            FilterDecision::Forward(_) => self.forwarded_count += 1,
            FilterDecision::Drop(reason) => self.drops.record(*reason),
        }
    }

    pub fn forwarded_ratio(&self) -> f64 {
        if self.input_count == 0 {
            0.0
        } else {
            self.forwarded_count as f64 / self.input_count as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Filter<'a> {
    catalog: &'a Catalog,
    config: FilterConfig,
}

impl<'a> Filter<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        Self::with_config(catalog, FilterConfig::default())
    }

    pub fn with_config(catalog: &'a Catalog, config: FilterConfig) -> Self {
        Self { catalog, config }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn decide<V, R>(&self, ev: &Event, state: &V, rng: &mut R) -> FilterDecision
    where
        V: StateView + ?Sized,
        R: Rng + ?Sized,
    {
        if !self.catalog.is_trigger_device(&ev.device) {
            return FilterDecision::Drop(DropReason::UntriggerDevice);
        }
        let row = match self.catalog.lookup(&ev.device, &ev.value) {
            Some(row) if !row.actions.is_empty() => row,
            _ => return FilterDecision::Drop(DropReason::UntriggerState),
        };

        let needed = row.actions.iter().any(|entry| match &entry.action {
            Action::External { .. } => true,
            // Unknown actuator state never suppresses.
            Action::Actuate { actuator, verb } => {
                state.current(&ev.user, actuator).and_then(Value::as_label) != Some(verb.state())
            }
        });
        if !needed {
            return FilterDecision::Drop(DropReason::ActuatorAlreadyInCsv);
        }

        let mut out = ev.clone();
        if let (Some((low, high)), Value::Number(original)) = (row.range, &ev.value) {
            let mut v = rng.random_range(low..=high);
            if self.config.resample_distinct && low < high {
                while v == *original {
                    v = rng.random_range(low..=high);
                }
            }
            out.value = Value::Number(v);
        }
        FilterDecision::Forward(out)
    }

    /// Commands an honest platform sends back once `ev` is uploaded.
    pub fn expected_commands(&self, ev: &Event) -> Vec<(&'a DeviceId, ActuatorVerb)> {
        self.catalog
            .lookup(&ev.device, &ev.value)
            .map(|row| {
                row.actions
                    .iter()
                    .filter_map(|e| match &e.action {
                        Action::Actuate { actuator, verb } => Some((actuator, *verb)),
                        Action::External { .. } => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Runs the four filter steps on one event with the default configuration.
pub fn filter_event<V, R>(ev: &Event, catalog: &Catalog, state: &V, rng: &mut R) -> FilterDecision
where
    V: StateView + ?Sized,
    R: Rng + ?Sized,
{
    Filter::new(catalog).decide(ev, state, rng)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub forwarded: Vec<Event>,
    pub stats: FilterStats,
}

/// Replays an ordered trace through the filter.
///
/// Every real event is written to `registry` as it passes, and each
/// forwarded event's consequential actuator states are written right after
/// it, standing in for the commands the platform sends back.
pub fn filter_trace<R: Rng + ?Sized>(
    events: &[Event],
    filter: Filter<'_>,
    devices: &DeviceRegistry,
    registry: &mut StateRegistry,
    rng: &mut R,
) -> Result<FilterOutcome, FilterError> {
    let mut out = FilterOutcome::default();
    let mut previous = 0;
    for (index, ev) in events.iter().enumerate() {
        if ev.timestamp < previous {
            return Err(FilterError::Unsorted {
                index,
                previous,
                timestamp: ev.timestamp,
            });
        }
        previous = ev.timestamp;

        if let Err(e) = registry.apply_event(devices, ev) {
            log::warn!("event {index} not recorded in state registry: {e}");
        }
        let decision = filter.decide(ev, registry, rng);
        out.stats.record(&decision);
        if let FilterDecision::Forward(fwd) = decision {
            for (actuator, verb) in filter.expected_commands(ev) {
                let cmd = Command {
                    timestamp: ev.timestamp,
                    user: ev.user.clone(),
                    device: actuator.clone(),
                    command: verb.command().into(),
                };
                if let Err(e) = registry.apply_command(devices, &cmd) {
                    log::warn!("expected command not recorded: {e}");
                }
            }
            out.forwarded.push(fwd);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{merge_applets, parse_description};
    use crate::model::{device_id, user_id, Device, DeviceKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn devices() -> DeviceRegistry {
        let mut reg = DeviceRegistry::new();
        let mut add = |id: &str, attribute: &str, kind: DeviceKind| {
            reg.insert(Device {
                id: device_id(id),
                attribute: attribute.into(),
                kind,
            })
            .unwrap()
        };
        add(
            "presence",
            "presence",
            DeviceKind::discrete(["present", "unpresent"]).unwrap(),
        );
        add("light", "switch", DeviceKind::discrete(["on", "off"]).unwrap());
        add("temp", "temperature", DeviceKind::numeric(-20, 80, "C").unwrap());
        add("fan", "switch", DeviceKind::discrete(["on", "off"]).unwrap());
        add("humidity", "humidity", DeviceKind::numeric(0, 100, "%").unwrap());
        add("door", "contact", DeviceKind::discrete(["open", "closed"]).unwrap());
        reg
    }

    fn catalog(devices: &DeviceRegistry) -> Catalog {
        let applets = [
            "If presence is present by presence, then Switch on light",
            "If temperature is above 30 by temp, then Switch on fan",
            "If contact is open by door, then log door-opening",
        ]
        .iter()
        .enumerate()
        .map(|(i, s)| parse_description(&alloc::format!("a{i}"), s, devices).unwrap())
        .collect::<Vec<_>>();
        merge_applets(&applets, devices).unwrap()
    }

    fn ev(t: u64, device: &str, value: Value) -> Event {
        Event {
            timestamp: t,
            user: user_id("u"),
            device: device_id(device),
            attribute: String::from("x"),
            value,
            pseudo: false,
        }
    }

    use alloc::string::String;

    fn set(reg: &mut StateRegistry, devices: &DeviceRegistry, device: &str, state: &str) {
        reg.apply_event(devices, &ev(0, device, Value::label(state))).unwrap();
    }

    #[test]
    fn idle_device_dropped() {
        let d = devices();
        let c = catalog(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let decision = filter_event(
            &ev(1, "humidity", Value::Number(40)),
            &c,
            &StateRegistry::new(),
            &mut rng,
        );
        assert_eq!(decision, FilterDecision::Drop(DropReason::UntriggerDevice));
        let decision = filter_event(&ev(1, "light", Value::label("on")), &c, &StateRegistry::new(), &mut rng);
        assert_eq!(decision, FilterDecision::Drop(DropReason::UntriggerDevice));
    }

    #[test]
    fn unpresent_is_untrigger_state() {
        let d = devices();
        let c = catalog(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let decision = filter_event(
            &ev(1, "presence", Value::label("unpresent")),
            &c,
            &StateRegistry::new(),
            &mut rng,
        );
        assert_eq!(decision, FilterDecision::Drop(DropReason::UntriggerState));
        let decision = filter_event(&ev(1, "temp", Value::Number(30)), &c, &StateRegistry::new(), &mut rng);
        assert_eq!(decision, FilterDecision::Drop(DropReason::UntriggerState));
    }

    #[test]
    fn hot_reading_is_randomized_within_subrange() {
        let d = devices();
        let c = catalog(&d);
        let mut reg = StateRegistry::new();
        set(&mut reg, &d, "fan", "off");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen = alloc::collections::BTreeSet::new();
        for _ in 0..2000 {
            match filter_event(&ev(1, "temp", Value::Number(35)), &c, &reg, &mut rng) {
                FilterDecision::Forward(out) => {
                    let v = out.value.as_number().unwrap();
                    assert!((31..=80).contains(&v));
                    seen.insert(v);
                }
                other => panic!("{other:?}"),
            }
        }
        // 50 possible values; 2000 uniform draws miss one with probability < 1e-15.
        assert_eq!(seen.len(), 50);
    }

    #[test]
    fn actuator_already_in_csv_is_dropped() {
        let d = devices();
        let c = catalog(&d);
        let mut reg = StateRegistry::new();
        set(&mut reg, &d, "fan", "on");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let decision = filter_event(&ev(1, "temp", Value::Number(35)), &c, &reg, &mut rng);
        assert_eq!(decision, FilterDecision::Drop(DropReason::ActuatorAlreadyInCsv));
    }

    #[test]
    fn unknown_actuator_state_is_forwarded() {
        let d = devices();
        let c = catalog(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let decision = filter_event(
            &ev(1, "presence", Value::label("present")),
            &c,
            &StateRegistry::new(),
            &mut rng,
        );
        assert_eq!(
            decision,
            FilterDecision::Forward(ev(1, "presence", Value::label("present")))
        );
    }

    #[test]
    fn external_actions_are_never_suppressed() {
        let d = devices();
        let c = catalog(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let decision = filter_event(
                &ev(1, "door", Value::label("open")),
                &c,
                &StateRegistry::new(),
                &mut rng,
            );
            assert!(decision.forwarded().is_some());
        }
    }

    #[test]
    fn resample_distinct_never_returns_reading() {
        let d = devices();
        let c = catalog(&d);
        let f = Filter::with_config(
            &c,
            FilterConfig {
                resample_distinct: true,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let out = f.decide(&ev(1, "temp", Value::Number(35)), &StateRegistry::new(), &mut rng);
            assert_ne!(out.forwarded().unwrap().value, Value::Number(35));
        }
    }

    #[test]
    fn trace_with_no_applets_forwards_nothing() {
        let d = devices();
        let c = merge_applets(&[], &d).unwrap();
        let events = [
            ev(1, "presence", Value::label("present")),
            ev(2, "temp", Value::Number(50)),
            ev(3, "light", Value::label("on")),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = filter_trace(&events, Filter::new(&c), &d, &mut StateRegistry::new(), &mut rng).unwrap();
        assert!(out.forwarded.is_empty());
        assert_eq!(out.stats.drops.untrigger_device, 3);
        assert_eq!(out.stats.input_count, 3);
    }

    #[test]
    fn trace_tracks_actuator_state() {
        let d = devices();
        let c = catalog(&d);
        let events = [
            ev(1, "presence", Value::label("present")),
            ev(2, "presence", Value::label("unpresent")),
            ev(3, "presence", Value::label("present")), // light still on from t=1
            ev(4, "light", Value::label("off")),
            ev(5, "presence", Value::label("present")),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = filter_trace(&events, Filter::new(&c), &d, &mut StateRegistry::new(), &mut rng).unwrap();
        let times: Vec<u64> = out.forwarded.iter().map(|e| e.timestamp).collect();
        assert_eq!(times, [1, 5]);
        assert_eq!(
            out.stats,
            FilterStats {
                input_count: 5,
                forwarded_count: 2,
                drops: DropCounts {
                    untrigger_device: 1,
                    untrigger_state: 1,
                    actuator_csv: 1
                }
            }
        );
    }

    #[test]
    fn unsorted_trace_is_rejected() {
        let d = devices();
        let c = catalog(&d);
        let events = [ev(5, "door", Value::label("open")), ev(4, "door", Value::label("open"))];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            filter_trace(&events, Filter::new(&c), &d, &mut StateRegistry::new(), &mut rng),
            Err(FilterError::Unsorted {
                index: 1,
                previous: 5,
                timestamp: 4
            })
        );
    }
}
