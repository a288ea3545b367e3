//! Text formats for device registries, applet lists and event logs.
//!
//! Registry file, one device per line:
//!
//! ```text
//! # id        attribute     kind      domain
//! M001        motion        discrete  active inactive
//! T101        temperature   numeric   -20 80 C
//! ```
//!
//! A compact domain is also accepted: `M001 motion states=active,inactive`
//! or `T101 temperature range=-20..80`.
//!
//! Applet file, one description per line, optionally prefixed by an id and
//! a colon. Lines without an id get `applet-<line>`:
//!
//! ```text
//! porch: If contact is open by D001, then Switch on L001
//! If Any new motion detected by M003, then Switch on L002
//! ```
//!
//! Blank lines and lines starting with `#` are ignored in both.

use std::io::{BufRead, Write};

use fnf_core::catalog::{parse_description, Applet, CatalogError};
use fnf_core::model::{Device, DeviceId, DeviceKind, DeviceRegistry, Event, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Registry { line: usize, message: String },
    #[error("line {line}, offset {offset}: {message}")]
    Applet {
        line: usize,
        offset: usize,
        message: String,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn bound(s: &str) -> Result<i64, String> {
    s.parse::<i64>().map_err(|e| format!("bad bound {s:?}: {e}"))
}

/// `discrete a b ...` or `numeric min max [unit]`.
fn long_kind(kind: &str, rest: &[&str]) -> Result<Result<DeviceKind, ModelError>, String> {
    match kind {
        "discrete" => Ok(DeviceKind::discrete(rest.iter().copied())),
        "numeric" => {
            let (min, max, unit) = match rest {
                [min, max] => (min, max, ""),
                [min, max, unit] => (min, max, *unit),
                _ => return Err("numeric devices take `min max [unit]`".into()),
            };
            Ok(DeviceKind::numeric(bound(min)?, bound(max)?, unit))
        }
        other => Err(format!("unknown kind {other:?}")),
    }
}

/// `states=a,b,...` or `range=min..max`.
fn compact_kind(spec: &str) -> Result<Result<DeviceKind, ModelError>, String> {
    match spec.split_once('=') {
        Some(("states", list)) => Ok(DeviceKind::discrete(list.split(','))),
        Some(("range", range)) => {
            let (min, max) = range.split_once("..").ok_or("range must be `min..max`")?;
            Ok(DeviceKind::numeric(bound(min)?, bound(max)?, ""))
        }
        _ => Err(format!("unknown domain {spec:?}")),
    }
}

pub fn parse_registry(text: &str) -> Result<DeviceRegistry, FormatError> {
    let mut reg = DeviceRegistry::new();
    for (line, l) in content_lines(text) {
        let err = |message: String| FormatError::Registry { line, message };
        let fields: Vec<&str> = l.split_whitespace().collect();
        let (id, attribute, kind) = match fields.as_slice() {
            [id, attribute, spec] if spec.contains('=') => (*id, *attribute, compact_kind(spec).map_err(err)?),
            [id, attribute, kind, rest @ ..] => (*id, *attribute, long_kind(kind, rest).map_err(err)?),
            _ => return Err(err("expected `id attribute kind domain...`".into())),
        };
        let kind = kind.map_err(|e| err(e.to_string()))?;
        let id = DeviceId::new(id).map_err(|e: ModelError| err(e.to_string()))?;
        reg.insert(Device {
            id,
            attribute: attribute.into(),
            kind,
        })
        .map_err(|e| err(e.to_string()))?;
    }
    Ok(reg)
}

pub fn render_registry(devices: &DeviceRegistry) -> String {
    let mut out = String::new();
    for d in devices.iter() {
        let domain = match &d.kind {
            DeviceKind::Discrete { states } => format!("discrete {}", states.join(" ")),
            DeviceKind::Numeric { min, max, unit } => format!("numeric {min} {max} {unit}").trim_end().to_string(),
        };
        out.push_str(&format!("{} {} {}\n", d.id, d.attribute, domain));
    }
    out
}

pub fn parse_applets(text: &str, devices: &DeviceRegistry) -> Result<Vec<Applet>, FormatError> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let (id, sentence, shift) = match l.split_once(':') {
            Some((id, rest)) if !id.contains(char::is_whitespace) && !id.is_empty() => {
                let trimmed = rest.trim_start();
                (id.to_string(), trimmed, l.len() - trimmed.len())
            }
            _ => (format!("applet-{line}"), l, 0),
        };
        let applet = parse_description(&id, sentence, devices).map_err(|e| match e {
            CatalogError::Parse { offset, message } => FormatError::Applet {
                line,
                offset: offset + shift,
                message,
            },
            other => FormatError::Applet {
                line,
                offset: 0,
                message: other.to_string(),
            },
        })?;
        out.push(applet);
    }
    Ok(out)
}

pub fn render_applets(applets: &[Applet], devices: &DeviceRegistry) -> String {
    applets
        .iter()
        .map(|a| format!("{}: {}\n", a.id, fnf_core::catalog::render_description(a, devices)))
        .collect()
}

/// Reads newline-delimited JSON events.
pub fn read_events_ndjson<R: BufRead>(reader: R) -> Result<Vec<Event>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FormatError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_ndjson<W: Write, T: serde::Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGISTRY: &str = "\
# layout
Motion_Sensor_A motion discrete active inactive
Switch_A switch discrete on off
Temp_1 temperature numeric -20 80 C
";

    #[test]
    fn registry_round_trip() {
        let reg = parse_registry(REGISTRY).unwrap();
        assert_eq!(reg.len(), 3);
        assert_eq!(parse_registry(&render_registry(&reg)).unwrap(), reg);
    }

    #[test]
    fn compact_domains_match_long_form() {
        let compact = parse_registry("M1 motion states=active,inactive\nT1 temperature range=-20..80\n").unwrap();
        let long = parse_registry("M1 motion discrete active inactive\nT1 temperature numeric -20 80\n").unwrap();
        assert_eq!(compact, long);
        for bad in [
            "T1 temperature range=5",
            "T1 temperature range=a..3",
            "T1 temperature colour=red",
        ] {
            assert!(
                matches!(parse_registry(bad), Err(FormatError::Registry { line: 1, .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn registry_errors_name_the_line() {
        let e = parse_registry("a b discrete on off\nx y numeric 5 1\n").unwrap_err();
        assert!(matches!(e, FormatError::Registry { line: 2, .. }), "{e}");
        assert!(parse_registry("a b odd x y").is_err());
        assert!(parse_registry("a b discrete on off\na b discrete on off").is_err());
    }

    #[test]
    fn applet_ids_and_offsets() {
        let reg = parse_registry(REGISTRY).unwrap();
        let text = "# comment\nhall: If Any new motion detected by Motion_Sensor_A, then Switch on Switch_A\n\nIf temperature is above 30 by Temp_1, then log hot\n";
        let applets = parse_applets(text, &reg).unwrap();
        assert_eq!(applets[0].id, "hall");
        assert_eq!(applets[1].id, "applet-4");
        assert_eq!(parse_applets(&render_applets(&applets, &reg), &reg).unwrap(), applets);

        match parse_applets("x: If contact is open by Door_1 then log it", &reg).unwrap_err() {
            FormatError::Applet { line: 1, offset, .. } => assert!(offset >= 3),
            e => panic!("{e}"),
        }
        assert!(parse_applets("", &reg).unwrap().is_empty());
    }
}
