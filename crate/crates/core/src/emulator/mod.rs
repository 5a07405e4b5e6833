//! Protocol-faithful stand-in for the AC energy meter and, at the same time,
//! for the laboratory reference calibrator: it knows the exact ground-truth
//! electrical state, serves error-injected readings over Modbus RTU, and so
//! makes the accuracy campaign reproducible in software.
//!
//! Error model: a constant gain applied to reported active power and energy,
//! optional zero-mean Gaussian noise on the reported power register, and a
//! starting-current gate below which the meter reports nothing at all. The
//! energy counter carries the gain error but not the per-sample noise —
//! meters integrate internally, so noise averages out of the counter while
//! the instantaneous power register still scatters.

mod model;
pub mod scenario;
mod serve;

pub use model::{
    CalibrationOutcome, CalibratorSetting, Emulator, EmulatorError, ErrorModel, LoadCharacter,
    LoadPoint, LoadProfile, MeterTruth, ProfileStep, run_calibration_scenario, MAX_SIM_STEP_S,
};
pub use scenario::{
    load_scenario, load_scenario_str, CalibrationScenario, ProfileScenario, Scenario,
    ScenarioError,
};
