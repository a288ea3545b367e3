//! Applet key information and the per-trigger-device tables built from it.
//!
//! An applet description is a single sentence of the form
//!
//! ```text
//! If <trigger> by <device>, then <action>
//! ```
//!
//! where `<trigger>` is `Any new motion detected`, `<attribute> is <label>`
//! or `<attribute> [is] above|below <integer>`, and `<action>` is one of
//! `Switch on <device>`, `Switch off <device>`, `Lock <device>`,
//! `Unlock <device>` or `log <text>`.
//!
//! Applets are merged by trigger device. Discrete devices get one row per
//! state; numeric devices have their range cut at every threshold into
//! contiguous integer sub-ranges. Each row lists the actions its values fire.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{ActuatorVerb, DeviceId, DeviceKind, DeviceRegistry, DeviceRole, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("device {device}: {detail}")]
    Domain { device: DeviceId, detail: String },
    #[error("applet {applet} uses a {trigger} trigger on {device}, which is not a {trigger} device")]
    Inconsistent {
        applet: String,
        device: DeviceId,
        trigger: &'static str,
    },
    #[error("duplicate applet id {0:?}")]
    DuplicateApplet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TriggerSpec {
    Discrete { value: String },
    Numeric { comparator: Comparator, threshold: i64 },
}

impl TriggerSpec {
    pub fn matches(&self, value: &Value) -> bool {
        match (self, value) {
            (TriggerSpec::Discrete { value: want }, Value::Label(got)) => want == got,
            // "above X" fires from X+1 upwards, "below X" from X-1 downwards.
            (TriggerSpec::Numeric { comparator, threshold }, Value::Number(n)) => match comparator {
                Comparator::Above => *n > *threshold,
                Comparator::Below => *n < *threshold,
            },
            _ => false,
        }
    }

    /// Upper end of the lower sub-range this trigger introduces.
    fn cut(&self) -> Option<i64> {
        match self {
            TriggerSpec::Numeric {
                comparator: Comparator::Above,
                threshold,
            } => Some(*threshold),
            TriggerSpec::Numeric {
                comparator: Comparator::Below,
                threshold,
            } => Some(*threshold - 1),
            TriggerSpec::Discrete { .. } => None,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            TriggerSpec::Discrete { .. } => "discrete",
            TriggerSpec::Numeric { .. } => "numeric",
        }
    }
}

/// What an applet does once triggered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Action {
    /// Operate a device. The consequential state value is `verb.state()`.
    Actuate { actuator: DeviceId, verb: ActuatorVerb },
    /// A non-device action such as appending to a spreadsheet.
    External { description: String },
}

impl Action {
    pub fn actuator(&self) -> Option<&DeviceId> {
        match self {
            Action::Actuate { actuator, .. } => Some(actuator),
            Action::External { .. } => None,
        }
    }

    pub fn csv(&self) -> Option<&'static str> {
        match self {
            Action::Actuate { verb, .. } => Some(verb.state()),
            Action::External { .. } => None,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, Action::External { .. })
    }
}

/// One trigger-action rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applet {
    pub id: String,
    pub trigger_device: DeviceId,
    pub trigger: TriggerSpec,
    pub action: Action,
}

impl Applet {
    pub fn matches(&self, device: &DeviceId, value: &Value) -> bool {
        self.trigger_device == *device && self.trigger.matches(value)
    }
}

const MOTION_PHRASE: &str = "Any new motion detected";

/// Parses one applet description sentence into its key information items.
pub fn parse_description(id: &str, sentence: &str, devices: &DeviceRegistry) -> Result<Applet, CatalogError> {
    let lead = sentence.len() - sentence.trim_start().len();
    let text = sentence.trim();
    let perr = |offset: usize, message: &str| CatalogError::Parse {
        offset: lead + offset,
        message: message.to_string(),
    };

    let body = strip_word(text, "If").ok_or_else(|| perr(0, "expected `If`"))?;
    let body_at = text.len() - body.len();
    let then_at = body.find(", then ").ok_or_else(|| perr(body_at, "expected `, then`"))?;
    let condition = &body[..then_at];
    let action_text = &body[then_at + ", then ".len()..];
    let action_at = body_at + then_at + ", then ".len();

    let by_at = condition
        .rfind(" by ")
        .ok_or_else(|| perr(body_at, "expected `by <device>`"))?;
    let clause = condition[..by_at].trim();
    let device_text = condition[by_at + " by ".len()..].trim();
    let device_at = body_at + by_at + " by ".len();
    if device_text.is_empty() || device_text.contains(char::is_whitespace) {
        return Err(perr(device_at, "expected a single device id"));
    }
    let device = devices
        .find(device_text)
        .ok_or_else(|| CatalogError::UnknownDevice(device_text.to_string()))?;

    let trigger = parse_trigger(clause).map_err(|(off, msg)| perr(body_at + off, msg))?;
    check_trigger(id, &device.id, &device.kind, &device.attribute, &trigger, clause)?;

    let action = parse_action(action_text, devices).map_err(|e| match e {
        ActionError::Parse(off, msg) => perr(action_at + off, msg),
        ActionError::Catalog(e) => e,
    })?;

    Ok(Applet {
        id: id.to_string(),
        trigger_device: device.id.clone(),
        trigger,
        action,
    })
}

fn strip_word<'a>(text: &'a str, word: &str) -> Option<&'a str> {
    let rest = text.strip_prefix(word)?;
    rest.starts_with(' ').then(|| rest.trim_start())
}

fn parse_trigger(clause: &str) -> Result<TriggerSpec, (usize, &'static str)> {
    if clause.eq_ignore_ascii_case(MOTION_PHRASE) {
        return Ok(TriggerSpec::Discrete { value: "active".into() });
    }
    let words: Vec<&str> = clause.split_whitespace().collect();
    let words: &[&str] = match words.as_slice() {
        [the, rest @ ..] if the.eq_ignore_ascii_case("the") => rest,
        all => all,
    };
    match words {
        [_attr, "is", cmp @ ("above" | "below"), n] | [_attr, cmp @ ("above" | "below"), n] => {
            let threshold = n
                .parse::<i64>()
                .map_err(|_| (clause.rfind(n).unwrap_or(0), "expected an integer threshold"))?;
            let comparator = if *cmp == "above" {
                Comparator::Above
            } else {
                Comparator::Below
            };
            Ok(TriggerSpec::Numeric { comparator, threshold })
        }
        [_attr, "is", label] => Ok(TriggerSpec::Discrete {
            value: (*label).to_string(),
        }),
        _ => Err((0, "unrecognized trigger clause")),
    }
}

fn clause_attribute(clause: &str) -> Option<&str> {
    let mut words = clause.split_whitespace();
    let first = words.next()?;
    if first.eq_ignore_ascii_case("the") {
        words.next()
    } else {
        Some(first)
    }
}

fn check_trigger(
    applet: &str,
    device: &DeviceId,
    kind: &DeviceKind,
    attribute: &str,
    trigger: &TriggerSpec,
    clause: &str,
) -> Result<(), CatalogError> {
    if !clause.eq_ignore_ascii_case(MOTION_PHRASE) {
        if let Some(attr) = clause_attribute(clause) {
            if attr != attribute {
                return Err(CatalogError::Parse {
                    offset: 0,
                    message: format!("device {device} reports `{attribute}`, not `{attr}`"),
                });
            }
        }
    }
    check_trigger_kind(applet, device, kind, trigger)
}

fn check_trigger_kind(
    applet: &str,
    device: &DeviceId,
    kind: &DeviceKind,
    trigger: &TriggerSpec,
) -> Result<(), CatalogError> {
    match (kind, trigger) {
        (DeviceKind::Discrete { states }, TriggerSpec::Discrete { value }) => {
            if states.iter().any(|s| s == value) {
                Ok(())
            } else {
                Err(CatalogError::Domain {
                    device: device.clone(),
                    detail: format!("state {value:?} is not one of {states:?}"),
                })
            }
        }
        (DeviceKind::Numeric { min, max, .. }, TriggerSpec::Numeric { threshold, .. }) => {
            if *min < *threshold && *threshold < *max {
                Ok(())
            } else {
                Err(CatalogError::Domain {
                    device: device.clone(),
                    detail: format!("threshold {threshold} is not inside ({min}, {max})"),
                })
            }
        }
        _ => Err(CatalogError::Inconsistent {
            applet: applet.to_string(),
            device: device.clone(),
            trigger: trigger.kind_name(),
        }),
    }
}

enum ActionError {
    Parse(usize, &'static str),
    Catalog(CatalogError),
}

fn parse_action(text: &str, devices: &DeviceRegistry) -> Result<Action, ActionError> {
    let text = text.trim_end();
    if let Some(rest) = strip_word(text, "log") {
        if rest.is_empty() {
            return Err(ActionError::Parse(3, "expected text after `log`"));
        }
        return Ok(Action::External {
            description: format!("log {rest}"),
        });
    }
    let verb = ActuatorVerb::ALL
        .into_iter()
        .find(|v| text.strip_prefix(v.phrase()).is_some_and(|r| r.starts_with(' ')))
        .ok_or(ActionError::Parse(
            0,
            "expected `Switch on|Switch off|Lock|Unlock` or `log`",
        ))?;
    let target = text[verb.phrase().len()..].trim();
    if target.is_empty() || target.contains(char::is_whitespace) {
        return Err(ActionError::Parse(
            verb.phrase().len() + 1,
            "expected a single actuator id",
        ));
    }
    let device = devices
        .find(target)
        .ok_or_else(|| ActionError::Catalog(CatalogError::UnknownDevice(target.to_string())))?;
    check_actuator(&device.id, &device.kind, verb).map_err(ActionError::Catalog)?;
    Ok(Action::Actuate {
        actuator: device.id.clone(),
        verb,
    })
}

fn check_actuator(device: &DeviceId, kind: &DeviceKind, verb: ActuatorVerb) -> Result<(), CatalogError> {
    let ok = match kind {
        DeviceKind::Discrete { states } => states.iter().any(|s| s == verb.state()),
        DeviceKind::Numeric { .. } => false,
    };
    if ok {
        Ok(())
    } else {
        Err(CatalogError::Domain {
            device: device.clone(),
            detail: format!("cannot reach state {:?}", verb.state()),
        })
    }
}

/// Renders an applet back into the description grammar.
pub fn render_description(applet: &Applet, devices: &DeviceRegistry) -> String {
    let attribute = devices
        .get(&applet.trigger_device)
        .map(|d| d.attribute.as_str())
        .unwrap_or("state");
    let trigger = match &applet.trigger {
        TriggerSpec::Discrete { value } if value == "active" && attribute == "motion" => MOTION_PHRASE.to_string(),
        TriggerSpec::Discrete { value } => format!("{attribute} is {value}"),
        TriggerSpec::Numeric { comparator, threshold } => {
            let cmp = match comparator {
                Comparator::Above => "above",
                Comparator::Below => "below",
            };
            format!("{attribute} is {cmp} {threshold}")
        }
    };
    let action = match &applet.action {
        Action::Actuate { actuator, verb } => format!("{} {actuator}", verb.phrase()),
        Action::External { description } => description.clone(),
    };
    format!("If {trigger} by {}, then {action}", applet.trigger_device)
}

/// An action referenced from a table row, tagged with the applet it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub applet: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteRow {
    pub state: String,
    pub actions: Vec<ActionEntry>,
}

/// Maps every state of a discrete trigger device to the actions it fires.
/// Rows with no actions are untrigger states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteTable {
    pub device: DeviceId,
    pub rows: Vec<DiscreteRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubRange {
    pub low: i64,
    pub high: i64,
    pub actions: Vec<ActionEntry>,
}

impl SubRange {
    pub fn contains(&self, v: i64) -> bool {
        (self.low..=self.high).contains(&v)
    }
}

/// Maps the sub-ranges of a numeric trigger device to the actions they fire.
///
/// `cuts` is the ascending, de-duplicated list `L_1 < ... < L_t`, giving the
/// sub-ranges `[min, L_1], [L_1 + 1, L_2], ..., [L_t + 1, max]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericTable {
    pub device: DeviceId,
    pub min: i64,
    pub max: i64,
    pub cuts: Vec<i64>,
    pub ranges: Vec<SubRange>,
}

impl NumericTable {
    /// Index of the sub-range holding `v`, if `v` is within `[min, max]`.
    pub fn range_index(&self, v: i64) -> Option<usize> {
        if v < self.min || v > self.max {
            return None;
        }
        Some(self.cuts.partition_point(|&c| c < v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TriggerTable {
    Discrete(DiscreteTable),
    Numeric(NumericTable),
}

/// The row a value falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRef<'a> {
    pub actions: &'a [ActionEntry],
    /// Inclusive bounds of the containing sub-range, for numeric devices.
    pub range: Option<(i64, i64)>,
}

/// A trigger value a pseudo-event may carry: a discrete label or a numeric
/// sub-range to sample from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerValue {
    Label(String),
    Range { low: i64, high: i64 },
}

/// Merged applet tables plus the role of every registered device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    applets: Vec<Applet>,
    tables: BTreeMap<DeviceId, TriggerTable>,
    roles: BTreeMap<DeviceId, DeviceRole>,
}

/// Merges applets by trigger device into discrete and numeric tables and
/// assigns every registered device a role.
pub fn merge_applets(applets: &[Applet], devices: &DeviceRegistry) -> Result<Catalog, CatalogError> {
    let mut ids = BTreeSet::new();
    let mut by_device: BTreeMap<&DeviceId, Vec<&Applet>> = BTreeMap::new();
    for applet in applets {
        if !ids.insert(applet.id.as_str()) {
            return Err(CatalogError::DuplicateApplet(applet.id.clone()));
        }
        let device = devices
            .get(&applet.trigger_device)
            .ok_or_else(|| CatalogError::UnknownDevice(applet.trigger_device.to_string()))?;
        check_trigger_kind(&applet.id, &device.id, &device.kind, &applet.trigger)?;
        if let Action::Actuate { actuator, verb } = &applet.action {
            let target = devices
                .get(actuator)
                .ok_or_else(|| CatalogError::UnknownDevice(actuator.to_string()))?;
            check_actuator(&target.id, &target.kind, *verb)?;
        }
        by_device.entry(&applet.trigger_device).or_default().push(applet);
    }

    let mut tables = BTreeMap::new();
    for (device_id, group) in by_device {
        let device = devices.require(device_id).expect("checked above");
        let table = match &device.kind {
            DeviceKind::Discrete { states } => TriggerTable::Discrete(DiscreteTable {
                device: device_id.clone(),
                rows: states
                    .iter()
                    .map(|state| DiscreteRow {
                        state: state.clone(),
                        actions: entries_where(&group, &Value::Label(state.clone())),
                    })
                    .collect(),
            }),
            DeviceKind::Numeric { min, max, .. } => {
                let mut cuts: Vec<i64> = group.iter().filter_map(|a| a.trigger.cut()).collect();
                cuts.sort_unstable();
                cuts.dedup();
                let mut ranges = Vec::with_capacity(cuts.len() + 1);
                let mut low = *min;
                for high in cuts.iter().copied().chain(core::iter::once(*max)) {
                    // Every applet predicate is constant on a sub-range, so
                    // probing its lower end decides the whole range.
                    ranges.push(SubRange {
                        low,
                        high,
                        actions: entries_where(&group, &Value::Number(low)),
                    });
                    low = high + 1;
                }
                TriggerTable::Numeric(NumericTable {
                    device: device_id.clone(),
                    min: *min,
                    max: *max,
                    cuts,
                    ranges,
                })
            }
        };
        tables.insert(device_id.clone(), table);
    }

    let actuators: BTreeSet<&DeviceId> = applets.iter().filter_map(|a| a.action.actuator()).collect();
    let roles = devices
        .iter()
        .map(|d| {
            let role = if tables.contains_key(&d.id) {
                DeviceRole::TriggerDevice
            } else if actuators.contains(&d.id) {
                DeviceRole::Actuator
            } else {
                DeviceRole::IdleDevice
            };
            (d.id.clone(), role)
        })
        .collect();

    Ok(Catalog {
        applets: applets.to_vec(),
        tables,
        roles,
    })
}

fn entries_where(group: &[&Applet], value: &Value) -> Vec<ActionEntry> {
    group
        .iter()
        .filter(|a| a.trigger.matches(value))
        .map(|a| ActionEntry {
            applet: a.id.clone(),
            action: a.action.clone(),
        })
        .collect()
}

impl Catalog {
    pub fn applets(&self) -> &[Applet] {
        &self.applets
    }

    pub fn tables(&self) -> impl Iterator<Item = &TriggerTable> {
        self.tables.values()
    }

    pub fn table(&self, device: &DeviceId) -> Option<&TriggerTable> {
        self.tables.get(device)
    }

    pub fn role(&self, device: &DeviceId) -> DeviceRole {
        self.roles.get(device).copied().unwrap_or(DeviceRole::IdleDevice)
    }

    pub fn roles(&self) -> &BTreeMap<DeviceId, DeviceRole> {
        &self.roles
    }

    pub fn is_trigger_device(&self, device: &DeviceId) -> bool {
        self.tables.contains_key(device)
    }

    /// True if some applet actuates `device`, whatever its role.
    pub fn is_actuator_target(&self, device: &DeviceId) -> bool {
        self.applets.iter().any(|a| a.action.actuator() == Some(device))
    }

    pub fn trigger_devices(&self) -> impl Iterator<Item = &DeviceId> {
        self.tables.keys()
    }

    /// Finds the row `value` falls into on a trigger device.
    pub fn lookup(&self, device: &DeviceId, value: &Value) -> Option<RowRef<'_>> {
        match (self.tables.get(device)?, value) {
            (TriggerTable::Discrete(t), Value::Label(l)) => t.rows.iter().find(|r| r.state == *l).map(|r| RowRef {
                actions: &r.actions,
                range: None,
            }),
            (TriggerTable::Numeric(t), Value::Number(n)) => {
                let r = &t.ranges[t.range_index(*n)?];
                Some(RowRef {
                    actions: &r.actions,
                    range: Some((r.low, r.high)),
                })
            }
            _ => None,
        }
    }

    /// Values of a trigger device that fire at least one applet.
    pub fn trigger_values(&self, device: &DeviceId) -> Vec<TriggerValue> {
        match self.tables.get(device) {
            Some(TriggerTable::Discrete(t)) => t
                .rows
                .iter()
                .filter(|r| !r.actions.is_empty())
                .map(|r| TriggerValue::Label(r.state.clone()))
                .collect(),
            Some(TriggerTable::Numeric(t)) => t
                .ranges
                .iter()
                .filter(|r| !r.actions.is_empty())
                .map(|r| TriggerValue::Range {
                    low: r.low,
                    high: r.high,
                })
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn discrete_tables(&self) -> impl Iterator<Item = &DiscreteTable> {
        self.tables.values().filter_map(|t| match t {
            TriggerTable::Discrete(d) => Some(d),
            TriggerTable::Numeric(_) => None,
        })
    }

    pub fn numeric_tables(&self) -> impl Iterator<Item = &NumericTable> {
        self.tables.values().filter_map(|t| match t {
            TriggerTable::Numeric(n) => Some(n),
            TriggerTable::Discrete(_) => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{device_id, Device};
    use alloc::vec;

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
            "Motion_Sensor_A",
            "motion",
            DeviceKind::discrete(["active", "inactive"]).unwrap(),
        );
        add("Switch_A", "switch", DeviceKind::discrete(["on", "off"]).unwrap());
        add("Switch_B", "switch", DeviceKind::discrete(["on", "off"]).unwrap());
        add("Temp_1", "temperature", DeviceKind::numeric(-20, 80, "C").unwrap());
        add("Door_1", "contact", DeviceKind::discrete(["open", "closed"]).unwrap());
        add("Lux_1", "illuminance", DeviceKind::numeric(0, 100_000, "lux").unwrap());
        add(
            "Presence_1",
            "presence",
            DeviceKind::discrete(["present", "unpresent"]).unwrap(),
        );
        add("Light", "switch", DeviceKind::discrete(["on", "off"]).unwrap());
        add("Humidity_1", "humidity", DeviceKind::numeric(0, 100, "%").unwrap());
        add("Lock_1", "lock", DeviceKind::discrete(["locked", "unlocked"]).unwrap());
        reg
    }

    #[test]
    fn parses_motion_applet() {
        let a = parse_description(
            "a1",
            "If Any new motion detected by Motion_Sensor_A, then Switch on Switch_A",
            &devices(),
        )
        .unwrap();
        assert_eq!(a.trigger_device, device_id("Motion_Sensor_A"));
        assert_eq!(a.trigger, TriggerSpec::Discrete { value: "active".into() });
        assert_eq!(a.action.actuator(), Some(&device_id("Switch_A")));
        assert_eq!(a.action.csv(), Some("on"));
    }

    #[test]
    fn parses_threshold_applet() {
        let a = parse_description(
            "a2",
            "If temperature is above 30 by Temp_1, then Switch on Switch_A",
            &devices(),
        )
        .unwrap();
        assert_eq!(
            a.trigger,
            TriggerSpec::Numeric {
                comparator: Comparator::Above,
                threshold: 30
            }
        );
        assert_eq!(a.action.csv(), Some("on"));
        let b = parse_description(
            "b",
            "If the temperature below 5 by Temp_1, then Lock Lock_1",
            &devices(),
        )
        .unwrap();
        assert_eq!(
            b.trigger,
            TriggerSpec::Numeric {
                comparator: Comparator::Below,
                threshold: 5
            }
        );
        assert_eq!(b.action.csv(), Some("locked"));
    }

    #[test]
    fn parses_external_action() {
        let a = parse_description("a3", "If contact is open by Door_1, then log door-opening", &devices()).unwrap();
        assert_eq!(a.trigger, TriggerSpec::Discrete { value: "open".into() });
        assert_eq!(
            a.action,
            Action::External {
                description: "log door-opening".into()
            }
        );
        assert_eq!(a.action.actuator(), None);
    }

    #[test]
    fn parse_errors() {
        let d = devices();
        match parse_description("x", "When motion by Motion_Sensor_A, then Switch on Switch_A", &d) {
            Err(CatalogError::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_description("x", "If contact is open by Door_1 then log it", &d) {
            Err(CatalogError::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
        match parse_description("x", "If contact is open by Door_1, then Dance Switch_A", &d) {
            Err(CatalogError::Parse { offset, .. }) => assert_eq!(offset, 35),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_description("x", "If contact is open by Door_9, then log it", &d),
            Err(CatalogError::UnknownDevice("Door_9".into()))
        );
        assert_eq!(
            parse_description("x", "If contact is open by Door_1, then Switch on Nope", &d),
            Err(CatalogError::UnknownDevice("Nope".into()))
        );
        assert!(matches!(
            parse_description("x", "If temperature is above 80 by Temp_1, then log hot", &d),
            Err(CatalogError::Domain { .. })
        ));
        assert!(matches!(
            parse_description("x", "If contact is ajar by Door_1, then log it", &d),
            Err(CatalogError::Domain { .. })
        ));
        assert!(matches!(
            parse_description("x", "If contact is open by Door_1, then Lock Switch_A", &d),
            Err(CatalogError::Domain { .. })
        ));
        assert!(matches!(
            parse_description("x", "If temperature is open by Door_1, then log it", &d),
            Err(CatalogError::Parse { .. })
        ));
    }

    #[test]
    fn render_round_trips_key_items() {
        let d = devices();
        for s in [
            "If Any new motion detected by Motion_Sensor_A, then Switch on Switch_A",
            "If temperature is above 30 by Temp_1, then Switch off Switch_B",
            "If temperature below -3 by Temp_1, then Unlock Lock_1",
            "If contact is open by Door_1, then log door-opening",
        ] {
            let a = parse_description("r", s, &d).unwrap();
            let again = parse_description("r", &render_description(&a, &d), &d).unwrap();
            assert_eq!(a, again);
        }
    }

    #[test]
    fn merges_two_illuminance_thresholds() {
        let d = devices();
        let applets = [
            parse_description(
                "a",
                "If illuminance is above 500 by Lux_1, then Switch off Switch_A",
                &d,
            )
            .unwrap(),
            parse_description(
                "b",
                "If illuminance is above 600 by Lux_1, then Switch off Switch_B",
                &d,
            )
            .unwrap(),
        ];
        let cat = merge_applets(&applets, &d).unwrap();
        let t = cat.numeric_tables().next().unwrap();
        let shape: Vec<(i64, i64, Vec<&str>)> = t
            .ranges
            .iter()
            .map(|r| {
                (
                    r.low,
                    r.high,
                    r.actions
                        .iter()
                        .map(|e| e.action.actuator().unwrap().as_str())
                        .collect(),
                )
            })
            .collect();
        assert_eq!(
            shape,
            [
                (0, 500, vec![]),
                (501, 600, vec!["Switch_A"]),
                (601, 100_000, vec!["Switch_A", "Switch_B"]),
            ]
        );
        assert_eq!(cat.role(&device_id("Switch_A")), DeviceRole::Actuator);
        assert_eq!(cat.role(&device_id("Lux_1")), DeviceRole::TriggerDevice);
        assert_eq!(cat.role(&device_id("Humidity_1")), DeviceRole::IdleDevice);
    }

    #[test]
    fn presence_table_marks_untrigger_row() {
        let d = devices();
        let a = parse_description("home", "If presence is present by Presence_1, then Switch on Light", &d).unwrap();
        let cat = merge_applets(&[a], &d).unwrap();
        let t = cat.discrete_tables().next().unwrap();
        assert_eq!(t.rows[0].state, "present");
        assert_eq!(t.rows[0].actions.len(), 1);
        assert_eq!(t.rows[0].actions[0].action.csv(), Some("on"));
        assert_eq!(t.rows[1].state, "unpresent");
        assert!(t.rows[1].actions.is_empty());
        assert_eq!(
            cat.trigger_values(&device_id("Presence_1")),
            [TriggerValue::Label("present".into())]
        );
    }

    #[test]
    fn empty_applet_set_leaves_everything_idle() {
        let d = devices();
        let cat = merge_applets(&[], &d).unwrap();
        assert_eq!(cat.tables().count(), 0);
        assert!(cat.roles().values().all(|r| *r == DeviceRole::IdleDevice));
        assert_eq!(cat.roles().len(), d.len());
    }

    #[test]
    fn trigger_and_actuator_is_treated_as_trigger() {
        let d = devices();
        let applets = [
            parse_description(
                "a",
                "If Any new motion detected by Motion_Sensor_A, then Switch on Switch_A",
                &d,
            )
            .unwrap(),
            parse_description("b", "If switch is on by Switch_A, then Switch on Switch_B", &d).unwrap(),
        ];
        let cat = merge_applets(&applets, &d).unwrap();
        assert_eq!(cat.role(&device_id("Switch_A")), DeviceRole::TriggerDevice);
        assert_eq!(cat.role(&device_id("Switch_B")), DeviceRole::Actuator);
    }

    #[test]
    fn merge_rejects_kind_conflicts_and_duplicates() {
        let d = devices();
        let bad = Applet {
            id: "bad".into(),
            trigger_device: device_id("Temp_1"),
            trigger: TriggerSpec::Discrete { value: "hot".into() },
            action: Action::External {
                description: "log x".into(),
            },
        };
        assert!(matches!(
            merge_applets(&[bad], &d),
            Err(CatalogError::Inconsistent { .. })
        ));
        let ok = parse_description("a", "If contact is open by Door_1, then log x", &d).unwrap();
        assert_eq!(
            merge_applets(&[ok.clone(), ok], &d),
            Err(CatalogError::DuplicateApplet("a".into()))
        );
    }

    #[test]
    fn below_and_above_share_one_partition() {
        let d = devices();
        let applets = [
            parse_description(
                "cold",
                "If temperature is below 10 by Temp_1, then Switch on Switch_A",
                &d,
            )
            .unwrap(),
            parse_description(
                "hot",
                "If temperature is above 30 by Temp_1, then Switch on Switch_B",
                &d,
            )
            .unwrap(),
            parse_description("hot2", "If temperature is above 30 by Temp_1, then log hot", &d).unwrap(),
        ];
        let cat = merge_applets(&applets, &d).unwrap();
        let t = cat.numeric_tables().next().unwrap();
        assert_eq!(t.cuts, [9, 30]);
        let bounds: Vec<(i64, i64, usize)> = t.ranges.iter().map(|r| (r.low, r.high, r.actions.len())).collect();
        assert_eq!(bounds, [(-20, 9, 1), (10, 30, 0), (31, 80, 2)]);
        let row = cat.lookup(&device_id("Temp_1"), &Value::Number(35)).unwrap();
        assert_eq!(row.range, Some((31, 80)));
    }
}
