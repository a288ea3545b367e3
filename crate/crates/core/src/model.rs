//! Domain types shared by the whole pipeline and the per-user device state
//! registry consulted by the filter.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Seconds in one day. Timestamps are seconds since local midnight of the
/// trace's first day, so `ts % SECONDS_PER_DAY` is the time of day.
pub const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("identifier must not be empty")]
    EmptyId,
    #[error("device {0} is already registered")]
    DuplicateDevice(DeviceId),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("numeric device range is empty: min {min} >= max {max}")]
    EmptyRange { min: i64, max: i64 },
    #[error("discrete device needs at least two distinct states")]
    TooFewStates,
    #[error("duplicate state label {0:?}")]
    DuplicateState(String),
    #[error("value {value} is outside the domain of device {device}")]
    OutOfDomain { device: DeviceId, value: Value },
    #[error("command {command:?} has no consequential state on device {device}")]
    UnknownCommand { device: DeviceId, command: String },
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(ModelError::EmptyId);
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Opaque, case-sensitive device identifier.
    DeviceId
);
string_id!(
    /// Opaque, case-sensitive user (household) identifier.
    UserId
);

/// A device state value: a discrete label or an integer reading.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(i64),
    Label(String),
}

impl Value {
    pub fn label(label: impl Into<String>) -> Self {
        Value::Label(label.into())
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Value::Label(l) => Some(l),
            Value::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<i64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Label(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => write!(f, "{n}"),
            Value::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum DeviceKind {
    Discrete { states: Vec<String> },
    Numeric { min: i64, max: i64, unit: String },
}

impl DeviceKind {
    pub fn discrete<I, S>(states: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let states: Vec<String> = states.into_iter().map(Into::into).collect();
        for (i, s) in states.iter().enumerate() {
            if states[..i].contains(s) {
                return Err(ModelError::DuplicateState(s.clone()));
            }
        }
        if states.len() < 2 {
            return Err(ModelError::TooFewStates);
        }
        Ok(DeviceKind::Discrete { states })
    }

    pub fn numeric(min: i64, max: i64, unit: impl Into<String>) -> Result<Self, ModelError> {
        if min >= max {
            return Err(ModelError::EmptyRange { min, max });
        }
        Ok(DeviceKind::Numeric {
            min,
            max,
            unit: unit.into(),
        })
    }

    pub fn admits(&self, value: &Value) -> bool {
        match (self, value) {
            (DeviceKind::Discrete { states }, Value::Label(l)) => states.iter().any(|s| s == l),
            (DeviceKind::Numeric { min, max, .. }, Value::Number(n)) => (*min..=*max).contains(n),
            _ => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, DeviceKind::Numeric { .. })
    }
}

/// A registered device: its identifier, the attribute its events report,
/// and its value domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    pub attribute: String,
    pub kind: DeviceKind,
}

/// The set of devices authorized to the trigger-action platform.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistry {
    devices: BTreeMap<DeviceId, Device>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device: Device) -> Result<(), ModelError> {
        if self.devices.contains_key(&device.id) {
            return Err(ModelError::DuplicateDevice(device.id));
        }
        self.devices.insert(device.id.clone(), device);
        Ok(())
    }

    pub fn get(&self, id: &DeviceId) -> Option<&Device> {
        self.devices.get(id)
    }

    pub fn require(&self, id: &DeviceId) -> Result<&Device, ModelError> {
        self.get(id).ok_or_else(|| ModelError::UnknownDevice(id.clone()))
    }

    pub fn find(&self, id: &str) -> Option<&Device> {
        self.devices.values().find(|d| d.id.as_str() == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

impl FromIterator<Device> for Result<DeviceRegistry, ModelError> {
    fn from_iter<T: IntoIterator<Item = Device>>(iter: T) -> Self {
        let mut reg = DeviceRegistry::new();
        for d in iter {
            reg.insert(d)?;
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    TriggerDevice,
    Actuator,
    IdleDevice,
}

/// A timestamped device state report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: u64,
    pub user: UserId,
    pub device: DeviceId,
    pub attribute: String,
    pub value: Value,
    #[serde(default)]
    pub pseudo: bool,
}

impl Event {
    pub fn day(&self) -> u64 {
        self.timestamp / SECONDS_PER_DAY
    }

    pub fn second_of_day(&self) -> u64 {
        self.timestamp % SECONDS_PER_DAY
    }
}

/// The closed set of actuator operations an applet can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorVerb {
    SwitchOn,
    SwitchOff,
    Lock,
    Unlock,
}

impl ActuatorVerb {
    pub const ALL: [ActuatorVerb; 4] = [
        ActuatorVerb::SwitchOn,
        ActuatorVerb::SwitchOff,
        ActuatorVerb::Lock,
        ActuatorVerb::Unlock,
    ];

    /// Command label as it travels on the wire.
    pub fn command(self) -> &'static str {
        match self {
            ActuatorVerb::SwitchOn => "on",
            ActuatorVerb::SwitchOff => "off",
            ActuatorVerb::Lock => "lock",
            ActuatorVerb::Unlock => "unlock",
        }
    }

    /// Consequential state value: the actuator state after the command runs.
    pub fn state(self) -> &'static str {
        match self {
            ActuatorVerb::SwitchOn => "on",
            ActuatorVerb::SwitchOff => "off",
            ActuatorVerb::Lock => "locked",
            ActuatorVerb::Unlock => "unlocked",
        }
    }

    /// Phrase used in applet descriptions.
    pub fn phrase(self) -> &'static str {
        match self {
            ActuatorVerb::SwitchOn => "Switch on",
            ActuatorVerb::SwitchOff => "Switch off",
            ActuatorVerb::Lock => "Lock",
            ActuatorVerb::Unlock => "Unlock",
        }
    }

    pub fn from_command(command: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.command() == command)
    }
}

/// A trigger-action platform reply addressed to an actuator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub timestamp: u64,
    pub user: UserId,
    pub device: DeviceId,
    pub command: String,
}

impl Command {
    pub fn consequential_state(&self) -> Option<&'static str> {
        ActuatorVerb::from_command(&self.command).map(ActuatorVerb::state)
    }
}

/// Read access to current device state. Implemented by [`StateRegistry`] and
/// by overlays that stack pending effects on top of it.
pub trait StateView {
    fn current(&self, user: &UserId, device: &DeviceId) -> Option<&Value>;
}

/// Last known value of every (user, device) pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateRegistry {
    states: BTreeMap<UserId, BTreeMap<DeviceId, Value>>,
}

/// Input to [`StateRegistry::apply`].
#[derive(Debug, Clone, Copy)]
pub enum StateUpdate<'a> {
    Event(&'a Event),
    Command(&'a Command),
}

impl StateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, user: &UserId, device: &DeviceId) -> Option<&Value> {
        self.states.get(user)?.get(device)
    }

    /// Records a new state. Returns whether the stored value changed.
    pub fn apply(&mut self, devices: &DeviceRegistry, update: StateUpdate<'_>) -> Result<bool, ModelError> {
        match update {
            StateUpdate::Event(ev) => self.apply_event(devices, ev),
            StateUpdate::Command(cmd) => self.apply_command(devices, cmd),
        }
    }

    pub fn apply_event(&mut self, devices: &DeviceRegistry, ev: &Event) -> Result<bool, ModelError> {
        let device = devices.require(&ev.device)?;
        if !device.kind.admits(&ev.value) {
            return Err(ModelError::OutOfDomain {
                device: ev.device.clone(),
                value: ev.value.clone(),
            });
        }
        Ok(self.write(&ev.user, &ev.device, ev.value.clone()))
    }

    pub fn apply_command(&mut self, devices: &DeviceRegistry, cmd: &Command) -> Result<bool, ModelError> {
        let device = devices.require(&cmd.device)?;
        let state = cmd
            .consequential_state()
            .map(Value::label)
            .filter(|v| device.kind.admits(v))
            .ok_or_else(|| ModelError::UnknownCommand {
                device: cmd.device.clone(),
                command: cmd.command.clone(),
            })?;
        Ok(self.write(&cmd.user, &cmd.device, state))
    }

    fn write(&mut self, user: &UserId, device: &DeviceId, value: Value) -> bool {
        let slot = self.states.entry(user.clone()).or_default();
        match slot.get_mut(device) {
            Some(current) if *current == value => false,
            Some(current) => {
                *current = value;
                true
            }
            None => {
                slot.insert(device.clone(), value);
                true
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UserId, &DeviceId, &Value)> {
        self.states
            .iter()
            .flat_map(|(u, m)| m.iter().map(move |(d, v)| (u, d, v)))
    }
}

impl StateView for StateRegistry {
    fn current(&self, user: &UserId, device: &DeviceId) -> Option<&Value> {
        self.get(user, device)
    }
}

/// Pending state writes layered over a base view. The gateway uses it to
/// account for commands it expects from events already packed into the
/// current batch. Later writes win.
#[derive(Debug)]
pub struct Overlay<'a, V: StateView + ?Sized> {
    base: &'a V,
    pending: &'a [(UserId, DeviceId, Value)],
}

impl<'a, V: StateView + ?Sized> Overlay<'a, V> {
    pub fn new(base: &'a V, pending: &'a [(UserId, DeviceId, Value)]) -> Self {
        Self { base, pending }
    }
}

impl<V: StateView + ?Sized> StateView for Overlay<'_, V> {
    fn current(&self, user: &UserId, device: &DeviceId) -> Option<&Value> {
        self.pending
            .iter()
            .rev()
            .find(|(u, d, _)| u == user && d == device)
            .map(|(_, _, v)| v)
            .or_else(|| self.base.current(user, device))
    }
}

impl fmt::Display for DeviceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceRole::TriggerDevice => "trigger",
            DeviceRole::Actuator => "actuator",
            DeviceRole::IdleDevice => "idle",
        })
    }
}

/// Convenience for building identifiers from literals in tests and fixtures.
///
/// Panics on an empty string.
pub fn device_id(id: &str) -> DeviceId {
    DeviceId::new(id.to_string()).expect("device id must be non-empty")
}

/// See [`device_id`].
pub fn user_id(id: &str) -> UserId {
    UserId::new(id.to_string()).expect("user id must be non-empty")
}
