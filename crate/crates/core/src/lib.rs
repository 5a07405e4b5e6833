//! Portable energy-profiling toolkit: polls an AC energy meter over a Modbus
//! RTU byte stream, drives logging sessions through a minimal start/stop line
//! protocol, orchestrates benchmark ladders against a system under test, and
//! reports energy, accuracy statistics, and productivity in requests per joule.
//!
//! The crate is organised around the measurement pipeline:
//!
//! * [`metrology`] — electrical quantities, energy integration, session
//!   statistics, productivity.
//! * [`modbus`] — RTU framing, CRC-16, the shared register map, and the
//!   polling master.
//! * [`emulator`] — a protocol-faithful meter stand-in with a configurable
//!   error model, doubling as the reference calibrator for accuracy runs.
//! * [`logger`] — the controller-side daemon state machine, CSV persistence,
//!   and the start/stop control protocol.
//! * [`orchestrator`] — workload ladders, load calibration, and the built-in
//!   open-loop HTTP generator.
//! * [`analysis`] — accuracy reports, time-series exports, and campaign
//!   comparisons.

pub mod analysis;
pub mod clock;
pub mod emulator;
pub mod logger;
pub mod metrology;
pub mod modbus;
pub mod orchestrator;

pub use clock::{Clock, SharedClock, SimClock, SystemClock};
