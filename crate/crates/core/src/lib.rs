//! Deterministic timed machines executed in logical or wall-clock time,
//! the command-shaper safety pattern, and the device models built on it.

pub mod adapter;
pub mod clock;
pub mod config;
pub mod devices;
pub mod eventlog;
pub mod jitter;
pub mod machine;
pub mod models;
pub mod safety;
pub mod scenario;
pub mod shaper;
pub mod tick;
pub mod time;
pub mod wrapper;

pub use config::{Configuration, Direction, Element, Message, ModelObject, Value};
pub use machine::{drain_outgoing, inject, is_open, Machine, MachineError, TimedSystem};
pub use time::{LogicalTime, Rational, TimeInf};
