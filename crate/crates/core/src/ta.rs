//! The stateless trigger-action platform and the adversary's view of it.
//!
//! The platform evaluates its own copy of the applet list against each
//! batch. It keeps nothing between batches except the append-only log of
//! everything it has received.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::catalog::{Action, Applet};
use crate::fuzz::{estimate_pattern, PatternVector};
use crate::model::{Event, UserId};
use crate::wire::{decode_events, encode_commands, TaEndpoint, TransportError, WireCommand, WireEvent};

/// One command per (event, applet) match with a device action, in batch
/// order and then applet order. External actions produce no command.
pub fn evaluate_batch(batch: &[WireEvent], applets: &[Applet]) -> Vec<WireCommand> {
    let mut out = Vec::new();
    for ev in batch {
        for applet in applets.iter().filter(|a| a.matches(&ev.device, &ev.value)) {
            if let Action::Actuate { actuator, verb } = &applet.action {
                out.push(WireCommand {
                    ts: ev.ts,
                    user: ev.user.clone(),
                    device: actuator.clone(),
                    command: verb.command().into(),
                });
            }
        }
    }
    out
}

/// Every wire event the platform has received, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryLog {
    events: Vec<WireEvent>,
}

impl AdversaryLog {
    pub fn events(&self) -> &[WireEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn extend(&mut self, events: impl IntoIterator<Item = WireEvent>) {
        self.events.extend(events);
    }
}

/// Per-user pattern vectors as the platform sees them, each over the span
/// of that user's logged events.
pub fn adversary_snapshot(log: &AdversaryLog, n: usize) -> BTreeMap<UserId, PatternVector> {
    let mut by_user: BTreeMap<UserId, Vec<Event>> = BTreeMap::new();
    for w in log.events() {
        by_user.entry(w.user.clone()).or_default().push(Event {
            timestamp: w.ts,
            user: w.user.clone(),
            device: w.device.clone(),
            attribute: w.attribute.clone(),
            value: w.value.clone(),
            pseudo: false,
        });
    }
    by_user
        .into_iter()
        .map(|(user, events)| (user, estimate_pattern(&events, None, n)))
        .collect()
}

/// In-process platform speaking the wire format.
#[derive(Debug, Clone, Default)]
pub struct TaPlatform {
    applets: Vec<Applet>,
    log: AdversaryLog,
    rejected: u64,
}

impl TaPlatform {
    pub fn new(applets: Vec<Applet>) -> Self {
        Self {
            applets,
            ..Self::default()
        }
    }

    pub fn applets(&self) -> &[Applet] {
        &self.applets
    }

    pub fn log(&self) -> &AdversaryLog {
        &self.log
    }

    pub fn into_log(self) -> AdversaryLog {
        self.log
    }

    /// Malformed wire entries skipped so far.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Handles one serialized batch and returns the serialized reply.
    pub fn handle(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError> {
        let decoded = decode_events(batch).map_err(|e| TransportError(alloc::format!("{e}")))?;
        for e in &decoded.rejected {
            log::warn!("skipping wire event: {e}");
        }
        self.rejected += decoded.rejected.len() as u64;
        let commands = evaluate_batch(&decoded.items, &self.applets);
        self.log.extend(decoded.items);
        Ok(encode_commands(&commands))
    }
}

impl TaEndpoint for TaPlatform {
    fn exchange(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.handle(batch)
    }
}
