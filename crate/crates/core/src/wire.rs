//! JSON wire formats between the gateway and the trigger-action platform.
//!
//! Events and commands travel as JSON arrays. A wire event carries no field
//! that tells real and pseudo events apart.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Command, DeviceId, Event, UserId, Value};

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("batch is not a JSON array: {0}")]
    NotAnArray(serde_json::Error),
    #[error("malformed {kind} at position {index}: {detail}")]
    Malformed {
        kind: &'static str,
        index: usize,
        detail: String,
    },
}

/// Failure of the transport carrying a batch to the platform.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Anything that takes a serialized event batch and answers with a
/// serialized command list.
pub trait TaEndpoint {
    fn exchange(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl<T: TaEndpoint + ?Sized> TaEndpoint for &mut T {
    fn exchange(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(batch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEvent {
    pub ts: u64,
    pub user: UserId,
    pub device: DeviceId,
    pub attribute: String,
    pub value: Value,
}

impl From<&Event> for WireEvent {
    fn from(ev: &Event) -> Self {
        WireEvent {
            ts: ev.timestamp,
            user: ev.user.clone(),
            device: ev.device.clone(),
            attribute: ev.attribute.clone(),
            value: ev.value.clone(),
        }
    }
}

impl WireEvent {
    pub fn key(&self) -> (u64, &UserId, &DeviceId) {
        (self.ts, &self.user, &self.device)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireCommand {
    pub ts: u64,
    pub user: UserId,
    pub device: DeviceId,
    pub command: String,
}

impl From<WireCommand> for Command {
    fn from(c: WireCommand) -> Self {
        Command {
            timestamp: c.ts,
            user: c.user,
            device: c.device,
            command: c.command,
        }
    }
}

impl From<&Command> for WireCommand {
    fn from(c: &Command) -> Self {
        WireCommand {
            ts: c.timestamp,
            user: c.user.clone(),
            device: c.device.clone(),
            command: c.command.clone(),
        }
    }
}

pub fn encode_events<'a, I>(events: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a Event>,
{
    let wire: Vec<WireEvent> = events.into_iter().map(WireEvent::from).collect();
    serde_json::to_vec(&wire).expect("wire events always serialize")
}

pub fn encode_commands(commands: &[WireCommand]) -> Vec<u8> {
    serde_json::to_vec(commands).expect("wire commands always serialize")
}

/// A decoded batch plus the entries that could not be read.
#[derive(Debug, Default)]
pub struct Decoded<T> {
    pub items: Vec<T>,
    pub rejected: Vec<WireError>,
}

fn decode_lenient<T: for<'de> Deserialize<'de>>(bytes: &[u8], kind: &'static str) -> Result<Decoded<T>, WireError> {
    let raw: Vec<serde_json::Value> = serde_json::from_slice(bytes).map_err(WireError::NotAnArray)?;
    let mut out = Decoded {
        items: Vec::with_capacity(raw.len()),
        rejected: Vec::new(),
    };
    for (index, item) in raw.into_iter().enumerate() {
        match serde_json::from_value::<T>(item) {
            Ok(v) => out.items.push(v),
            Err(e) => out.rejected.push(WireError::Malformed {
                kind,
                index,
                detail: alloc::format!("{e}"),
            }),
        }
    }
    Ok(out)
}

/// Decodes an event batch, skipping malformed entries.
pub fn decode_events(bytes: &[u8]) -> Result<Decoded<WireEvent>, WireError> {
    decode_lenient(bytes, "event")
}

/// Decodes a command list, skipping malformed entries.
pub fn decode_commands(bytes: &[u8]) -> Result<Decoded<WireCommand>, WireError> {
    decode_lenient(bytes, "command")
}
