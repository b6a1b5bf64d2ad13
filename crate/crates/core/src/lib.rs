//! Virtually synchronous causal multicast.
//!
//! The crate contains the per-process protocol state machine
//! ([`protocol`]), a reference application ([`app`]), an oracle membership
//! service ([`gms`]), a deterministic fault-injecting simulator
//! ([`simnet`]), trace recording and parsing ([`trace`]), history checkers
//! ([`checker`]) and scenario handling ([`scenario`]).

pub mod app;
pub mod checker;
pub mod gms;
pub mod protocol;
pub mod scenario;
pub mod simnet;
pub mod trace;
pub mod types;

pub use app::{DeliveryLog, ReplicatedData};
pub use protocol::{Cast, Effect, ProcessState, ProtocolError, TxLog};
pub use types::*;
