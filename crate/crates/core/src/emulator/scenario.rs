//! Declarative scenario files, so accuracy suites and demo profiles are data
//! rather than code.
//!
//! Two kinds share one schema, discriminated by `kind`:
//!
//! ```toml
//! kind = "calibration"          # one calibrator point
//! label = "row-a"
//! voltage_v = 230.0
//! current_a = 5.0
//! phase_angle_deg = 0.0         # power factor is cos(phase)
//! character = "resistive"       # resistive | inductive | capacitive
//! duration_s = 300.03
//! lead_in_s = 2.0               # optional zero-current settling window
//!
//! [error]
//! gain_error = -0.0035
//! noise_sd_w = 0.0
//! starting_current_a = 0.095
//! seed = 1
//! ```
//!
//! ```toml
//! kind = "profile"              # free-form step sequence
//! label = "ladder-sut"
//! frequency_hz = 50.0
//! unit_id = 1
//!
//! [[steps]]
//! duration_s = 3600.0
//! voltage_v = 230.0
//! current_a = 0.3
//! power_factor = 0.9
//!
//! [load_points.0]               # optional workload coupling
//! current_a = 0.3
//! power_factor = 0.9
//!
//! [load_points.100]
//! current_a = 5.0
//! power_factor = 1.0
//!
//! [error]
//! gain_error = 0.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::model::{
    CalibratorSetting, EmulatorError, ErrorModel, LoadCharacter, LoadPoint, LoadProfile,
    ProfileStep,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario invalid: {0}")]
    Invalid(#[from] EmulatorError),
    #[error("load_points key {0:?} is not a percentage in 0..=100")]
    BadLoadPointKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Calibration,
    Profile,
}

/// Peeks at the discriminator so the full document can be deserialized
/// directly into the concrete type (keeping line context in parse errors).
#[derive(Deserialize)]
struct KindProbe {
    kind: ScenarioKind,
}

#[derive(Debug, Clone)]
pub enum Scenario {
    Calibration(CalibrationScenario),
    Profile(ProfileScenario),
}

impl Scenario {
    pub fn label(&self) -> &str {
        match self {
            Scenario::Calibration(s) => &s.label,
            Scenario::Profile(s) => &s.label,
        }
    }

    pub fn error_model(&self) -> ErrorModel {
        match self {
            Scenario::Calibration(s) => s.error,
            Scenario::Profile(s) => s.error,
        }
    }

    pub fn unit_id(&self) -> u8 {
        match self {
            Scenario::Calibration(s) => s.unit_id,
            Scenario::Profile(s) => s.unit_id,
        }
    }

    /// The profile an emulator should run for this scenario.
    pub fn to_profile(&self) -> Result<LoadProfile, ScenarioError> {
        match self {
            Scenario::Calibration(s) => Ok(s.to_profile()),
            Scenario::Profile(s) => s.to_profile(),
        }
    }
}

fn default_lead_in() -> f64 {
    2.0
}

fn default_frequency() -> f64 {
    50.0
}

fn default_unit_id() -> u8 {
    1
}

/// A single calibrator point plus the meter's error model for it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationScenario {
    #[allow(dead_code)]
    kind: ScenarioKind,
    pub label: String,
    pub voltage_v: f64,
    pub current_a: f64,
    pub phase_angle_deg: f64,
    #[serde(default)]
    pub character: LoadCharacter,
    pub duration_s: f64,
    /// Zero-current settling window before and after the measured span, so a
    /// logging session only has to overlap it loosely: the energy counter is
    /// frozen outside the measured span.
    #[serde(default = "default_lead_in")]
    pub lead_in_s: f64,
    #[serde(default)]
    pub error: ErrorModel,
    #[serde(default = "default_unit_id")]
    pub unit_id: u8,
}

impl CalibrationScenario {
    pub fn setting(&self) -> CalibratorSetting {
        CalibratorSetting {
            voltage_v: self.voltage_v,
            current_a: self.current_a,
            phase_angle_deg: self.phase_angle_deg,
            load_character: self.character,
            duration_s: self.duration_s,
        }
    }

    /// Lead-in at zero current, the measured span, then a zero-current hold.
    pub fn to_profile(&self) -> LoadProfile {
        let idle = ProfileStep {
            duration_s: self.lead_in_s.max(0.5),
            voltage_v: self.voltage_v,
            current_a: 0.0,
            power_factor: 1.0,
            character: LoadCharacter::Resistive,
        };
        LoadProfile {
            steps: vec![
                idle,
                ProfileStep {
                    duration_s: self.duration_s,
                    voltage_v: self.voltage_v,
                    current_a: self.current_a,
                    power_factor: self.setting().power_factor(),
                    character: self.character,
                },
                idle,
            ],
            frequency_hz: default_frequency(),
            load_points: Vec::new(),
        }
    }
}

/// A free-form step sequence with optional workload coupling.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileScenario {
    #[allow(dead_code)]
    kind: ScenarioKind,
    pub label: String,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    pub steps: Vec<ProfileStep>,
    #[serde(default)]
    pub load_points: BTreeMap<String, LoadPoint>,
    #[serde(default)]
    pub error: ErrorModel,
    #[serde(default = "default_unit_id")]
    pub unit_id: u8,
}

impl ProfileScenario {
    pub fn to_profile(&self) -> Result<LoadProfile, ScenarioError> {
        let mut load_points = Vec::with_capacity(self.load_points.len());
        for (key, point) in &self.load_points {
            let percent: f64 = key
                .parse()
                .map_err(|_| ScenarioError::BadLoadPointKey(key.clone()))?;
            if !(0.0..=100.0).contains(&percent) {
                return Err(ScenarioError::BadLoadPointKey(key.clone()));
            }
            load_points.push((percent, *point));
        }
        let profile = LoadProfile {
            steps: self.steps.clone(),
            frequency_hz: self.frequency_hz,
            load_points,
        };
        profile.validate()?;
        Ok(profile)
    }
}

pub fn load_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let probe: KindProbe = toml::from_str(text)?;
    let scenario = match probe.kind {
        ScenarioKind::Calibration => Scenario::Calibration(toml::from_str(text)?),
        ScenarioKind::Profile => Scenario::Profile(toml::from_str(text)?),
    };
    scenario.to_profile()?;
    scenario.error_model().validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario_str(&text)
}
