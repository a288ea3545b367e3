//! CASAS-style sensor logs.
//!
//! Each line reads `YYYY-MM-DD HH:MM:SS[.ffffff] SENSOR VALUE [annotation...]`.
//! The alphabetic prefix of the sensor id selects its class. Timestamps
//! become seconds since midnight of the epoch date, by default the date of
//! the first record. Fractional seconds are truncated.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use fnf_core::model::{Device, DeviceId, DeviceKind, DeviceRegistry, Event, UserId, Value, SECONDS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorClass {
    Motion,
    Contact,
    Temperature,
    Switch,
    Illuminance,
    /// Records dropped on sight, such as battery levels.
    Ignore,
}

impl SensorClass {
    pub fn device(self, id: DeviceId) -> Option<Device> {
        let (attribute, kind) = match self {
            SensorClass::Motion => ("motion", DeviceKind::discrete(["active", "inactive"])),
            SensorClass::Contact => ("contact", DeviceKind::discrete(["open", "closed"])),
            SensorClass::Switch => ("switch", DeviceKind::discrete(["on", "off"])),
            SensorClass::Temperature => ("temperature", DeviceKind::numeric(-20, 80, "C")),
            SensorClass::Illuminance => ("illuminance", DeviceKind::numeric(0, 100_000, "lux")),
            SensorClass::Ignore => return None,
        };
        Some(Device {
            id,
            attribute: attribute.into(),
            kind: kind.expect("fixed domains are valid"),
        })
    }

    fn decode(self, raw: &str) -> Option<Value> {
        let label = |s: &str| Some(Value::label(s));
        match self {
            SensorClass::Motion => match raw {
                "ON" => label("active"),
                "OFF" => label("inactive"),
                _ => None,
            },
            SensorClass::Contact => match raw {
                "OPEN" => label("open"),
                "CLOSE" | "CLOSED" => label("closed"),
                _ => None,
            },
            SensorClass::Switch => match raw {
                "ON" => label("on"),
                "OFF" => label("off"),
                _ => None,
            },
            SensorClass::Temperature => round_reading(raw, -20, 80),
            SensorClass::Illuminance => round_reading(raw, 0, 100_000),
            SensorClass::Ignore => None,
        }
    }

    fn encode(self, value: &Value) -> Option<String> {
        let s = match (self, value) {
            (SensorClass::Motion, Value::Label(l)) if l == "active" => "ON",
            (SensorClass::Motion, Value::Label(l)) if l == "inactive" => "OFF",
            (SensorClass::Contact, Value::Label(l)) if l == "open" => "OPEN",
            (SensorClass::Contact, Value::Label(l)) if l == "closed" => "CLOSE",
            (SensorClass::Switch, Value::Label(l)) if l == "on" => "ON",
            (SensorClass::Switch, Value::Label(l)) if l == "off" => "OFF",
            (SensorClass::Temperature | SensorClass::Illuminance, Value::Number(n)) => return Some(n.to_string()),
            _ => return None,
        };
        Some(s.into())
    }
}

/// Half-up rounding into an inclusive range.
fn round_reading(raw: &str, min: i64, max: i64) -> Option<Value> {
    let x: f64 = raw.parse().ok()?;
    if !x.is_finite() {
        return None;
    }
    let n = (x + 0.5).floor() as i64;
    (min..=max).contains(&n).then_some(Value::Number(n))
}

/// Sensor id prefix to class. Looked up by the id's leading letters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixMap(pub BTreeMap<String, SensorClass>);

impl Default for PrefixMap {
    fn default() -> Self {
        use SensorClass::*;
        Self(
            [
                ("M", Motion),
                ("MA", Motion),
                ("D", Contact),
                ("T", Temperature),
                ("L", Switch),
                ("LL", Switch),
                ("LS", Illuminance),
                ("BAT", Ignore),
                ("BATP", Ignore),
                ("BATV", Ignore),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }
}

impl PrefixMap {
    pub fn class_of(&self, sensor: &str) -> Option<SensorClass> {
        let letters: String = sensor.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        self.0.get(&letters).copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CasasOptions {
    pub prefixes: PrefixMap,
    /// Day whose midnight is timestamp zero.
    pub epoch: Option<NaiveDate>,
    /// Share of malformed lines tolerated before giving up.
    pub max_malformed: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CasasError {
    #[error("{malformed} of {total} lines are malformed (first at line {first_line}: {first_reason})")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first_line: usize,
        first_reason: String,
    },
    #[error("record on line {line} predates the epoch")]
    BeforeEpoch { line: usize },
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    /// Events sorted by timestamp, file order kept among equal timestamps.
    pub events: Vec<Event>,
    pub devices: DeviceRegistry,
    pub epoch: Option<NaiveDate>,
    pub malformed: Vec<(usize, String)>,
    pub dropped: usize,
}

pub fn parse_casas(text: &str, user: &UserId, options: &CasasOptions) -> Result<ParsedLog, CasasError> {
    let mut out = ParsedLog {
        epoch: options.epoch,
        ..ParsedLog::default()
    };
    let mut total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_line(line, &options.prefixes) {
            Err(reason) => {
                log::warn!("line {line_no}: {reason}");
                out.malformed.push((line_no, reason));
            }
            Ok(None) => out.dropped += 1,
            Ok(Some((at, sensor, class, value))) => {
                let epoch = *out.epoch.get_or_insert(at.date());
                let days = (at.date() - epoch).num_days();
                if days < 0 {
                    return Err(CasasError::BeforeEpoch { line: line_no });
                }
                let timestamp = days as u64 * SECONDS_PER_DAY + u64::from(at.time().num_seconds_from_midnight());
                let device = DeviceId::new(sensor).expect("sensor ids are non-empty");
                if out.devices.get(&device).is_none() {
                    let d = class.device(device.clone()).expect("ignored classes never reach here");
                    out.devices.insert(d).expect("checked absent");
                }
                let attribute = out.devices.get(&device).expect("inserted").attribute.clone();
                out.events.push(Event {
                    timestamp,
                    user: user.clone(),
                    device,
                    attribute,
                    value,
                    pseudo: false,
                });
            }
        }
    }
    let limit = options.max_malformed.unwrap_or(0.01);
    if total > 0 && out.malformed.len() as f64 > limit * total as f64 {
        let (first_line, first_reason) = out.malformed[0].clone();
        return Err(CasasError::TooManyMalformed {
            malformed: out.malformed.len(),
            total,
            first_line,
            first_reason,
        });
    }
    out.events.sort_by_key(|e| e.timestamp);
    Ok(out)
}

type Record<'a> = (NaiveDateTime, &'a str, SensorClass, Value);

fn parse_line<'a>(line: &'a str, prefixes: &PrefixMap) -> Result<Option<Record<'a>>, String> {
    let mut fields = line.split_whitespace();
    let (Some(date), Some(time), Some(sensor), Some(raw)) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err("expected date, time, sensor and value".into());
    };
    let at = NaiveDateTime::parse_from_str(&format!("{date} {time}"), "%Y-%m-%d %H:%M:%S%.f")
        .map_err(|e| format!("bad timestamp {date} {time}: {e}"))?;
    if raw.starts_with("BAT") {
        return Ok(None);
    }
    let class = prefixes
        .class_of(sensor)
        .ok_or_else(|| format!("unknown sensor prefix in {sensor:?}"))?;
    if class == SensorClass::Ignore {
        return Ok(None);
    }
    let value = class
        .decode(raw)
        .ok_or_else(|| format!("value {raw:?} is invalid for sensor {sensor}"))?;
    Ok(Some((at, sensor, class, value)))
}

/// Renders events as CASAS lines relative to `epoch`. Events whose device
/// has no CASAS class under `prefixes` or whose value cannot be encoded are
/// skipped.
pub fn write_casas(events: &[Event], epoch: NaiveDate, prefixes: &PrefixMap) -> String {
    let midnight = epoch.and_hms_opt(0, 0, 0).expect("midnight exists");
    let mut out = String::new();
    for ev in events {
        let Some(raw) = prefixes.class_of(ev.device.as_str()).and_then(|c| c.encode(&ev.value)) else {
            log::warn!("no CASAS encoding for {} = {}", ev.device, ev.value);
            continue;
        };
        let at = midnight + chrono::Duration::seconds(ev.timestamp as i64);
        out.push_str(&format!(
            "{} {} {}\n",
            at.format("%Y-%m-%d %H:%M:%S%.6f"),
            ev.device,
            raw
        ));
    }
    out
}
