//! Ground-truth simulation and the injected measurement error.

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modbus::registers::{Quantity, RegisterMap};

/// Internal simulation step cap, seconds. Advancing in sub-steps no larger
/// than this keeps the energy truth independent of the serve/poll cadence.
pub const MAX_SIM_STEP_S: f64 = 0.010;

/// Slivers shorter than this are treated as landing exactly on a profile
/// step boundary, absorbing float accumulation drift.
const BOUNDARY_EPS_S: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EmulatorError {
    #[error("step duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("profile must contain at least one step")]
    EmptyProfile,
    #[error("gain error {0} outside sanity bound |g| < 0.1")]
    GainOutOfRange(f64),
    #[error("{name} must be non-negative, got {value}")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("step quantity out of bounds: {0}")]
    BadStepQuantity(String),
    #[error("advance step dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("profile has no load points; cannot couple load percentage")]
    NoLoadPoints,
    #[error("register range {start}..{end} outside the mapped image")]
    RangeUnmapped { start: u16, end: u32 },
}

/// Load character determines the sign convention of reactive power:
/// inductive loads lag (positive), capacitive loads lead (negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadCharacter {
    #[default]
    Resistive,
    Inductive,
    Capacitive,
}

impl LoadCharacter {
    fn reactive_sign(self) -> f64 {
        match self {
            LoadCharacter::Capacitive => -1.0,
            _ => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LoadCharacter::Resistive => "res.",
            LoadCharacter::Inductive => "ind.",
            LoadCharacter::Capacitive => "cap.",
        }
    }
}

/// One point of the reference calibrator: voltage, current, and the phase
/// shift between them, held for a fixed duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratorSetting {
    pub voltage_v: f64,
    pub current_a: f64,
    pub phase_angle_deg: f64,
    pub load_character: LoadCharacter,
    pub duration_s: f64,
}

impl CalibratorSetting {
    pub fn power_factor(&self) -> f64 {
        self.phase_angle_deg.to_radians().cos()
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        if self.duration_s <= 0.0 {
            return Err(EmulatorError::NonPositiveDuration(self.duration_s));
        }
        if self.voltage_v < 0.0 || self.current_a < 0.0 {
            return Err(EmulatorError::BadStepQuantity(format!(
                "voltage {} / current {}",
                self.voltage_v, self.current_a
            )));
        }
        Ok(())
    }

    /// Reference energy the calibrator provides over the run: U·I·cos(φ)·t.
    pub fn reference_energy_j(&self) -> f64 {
        self.voltage_v * self.current_a * self.power_factor() * self.duration_s
    }
}

/// The meter's deviation from truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    /// Fraction applied to reported power and energy, e.g. -0.0035.
    pub gain_error: f64,
    /// Standard deviation of zero-mean Gaussian noise on the reported
    /// active power register, watts.
    pub noise_sd_w: f64,
    /// Below this true current the meter reports zero current and power.
    pub starting_current_a: f64,
    pub seed: u64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            gain_error: 0.0,
            noise_sd_w: 0.0,
            starting_current_a: 0.095,
            seed: 0,
        }
    }
}

impl ErrorModel {
    pub fn identity() -> Self {
        Self {
            starting_current_a: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        if self.gain_error.abs() >= 0.1 {
            return Err(EmulatorError::GainOutOfRange(self.gain_error));
        }
        if self.noise_sd_w < 0.0 {
            return Err(EmulatorError::NegativeParameter {
                name: "noise_sd_w",
                value: self.noise_sd_w,
            });
        }
        if self.starting_current_a < 0.0 {
            return Err(EmulatorError::NegativeParameter {
                name: "starting_current_a",
                value: self.starting_current_a,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStep {
    pub duration_s: f64,
    pub voltage_v: f64,
    pub current_a: f64,
    pub power_factor: f64,
    #[serde(default)]
    pub character: LoadCharacter,
}

/// Mapping from a workload percentage to the electrical operating point the
/// emulated system under test draws at that load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub current_a: f64,
    pub power_factor: f64,
}

/// The emulator's ground-truth scenario: an ordered step sequence, plus an
/// optional percentage→operating-point map for benchmark coupling. Profile
/// exhaustion holds the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub steps: Vec<ProfileStep>,
    pub frequency_hz: f64,
    /// Keys are load percentages 0..=100; lookups interpolate linearly.
    pub load_points: Vec<(f64, LoadPoint)>,
}

impl LoadProfile {
    pub fn constant(voltage_v: f64, current_a: f64, power_factor: f64) -> Self {
        Self {
            steps: vec![ProfileStep {
                duration_s: f64::MAX,
                voltage_v,
                current_a,
                power_factor,
                character: LoadCharacter::Resistive,
            }],
            frequency_hz: 50.0,
            load_points: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        if self.steps.is_empty() {
            return Err(EmulatorError::EmptyProfile);
        }
        for step in &self.steps {
            if step.duration_s <= 0.0 {
                return Err(EmulatorError::NonPositiveDuration(step.duration_s));
            }
            if step.voltage_v < 0.0 || step.current_a < 0.0 {
                return Err(EmulatorError::BadStepQuantity(format!(
                    "voltage {} / current {}",
                    step.voltage_v, step.current_a
                )));
            }
            if step.power_factor.abs() > 1.0 {
                return Err(EmulatorError::BadStepQuantity(format!(
                    "power factor {}",
                    step.power_factor
                )));
            }
        }
        for (percent, point) in &self.load_points {
            if !(0.0..=100.0).contains(percent) || point.current_a < 0.0 {
                return Err(EmulatorError::BadStepQuantity(format!(
                    "load point at {percent}%"
                )));
            }
        }
        Ok(())
    }

    fn interpolate_load(&self, percent: f64) -> Result<LoadPoint, EmulatorError> {
        if self.load_points.is_empty() {
            return Err(EmulatorError::NoLoadPoints);
        }
        let mut points = self.load_points.clone();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let p = percent.clamp(0.0, 100.0);
        if p <= points[0].0 {
            return Ok(points[0].1);
        }
        if p >= points[points.len() - 1].0 {
            return Ok(points[points.len() - 1].1);
        }
        let upper = points.iter().position(|(x, _)| *x >= p).unwrap();
        let (x0, a) = points[upper - 1];
        let (x1, b) = points[upper];
        let f = (p - x0) / (x1 - x0);
        Ok(LoadPoint {
            current_a: a.current_a + f * (b.current_a - a.current_a),
            power_factor: a.power_factor + f * (b.power_factor - a.power_factor),
        })
    }
}

/// Instantaneous electrical truth and the accumulated counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterTruth {
    pub sim_time_s: f64,
    pub voltage_v: f64,
    pub current_a: f64,
    pub power_factor: f64,
    pub true_power_w: f64,
    pub true_energy_j: f64,
    pub reported_power_w: f64,
    pub reported_energy_j: f64,
}

struct Inner {
    profile: LoadProfile,
    error: ErrorModel,
    map: RegisterMap,
    unit_id: u8,
    rng: ChaCha8Rng,

    step_index: usize,
    elapsed_in_step_s: f64,
    sim_time_s: f64,
    /// Clock reading at the first advance; profile time is measured from it.
    epoch_s: Option<f64>,

    true_energy_j: f64,
    reported_energy_j: f64,
    true_reactive_energy_vars: f64,

    load_override: Option<LoadPoint>,
    registers: Vec<u16>,
    last_reported_power_w: f64,
}

#[derive(Clone, Copy)]
struct OperatingPoint {
    voltage_v: f64,
    current_a: f64,
    power_factor: f64,
    character: LoadCharacter,
}

impl Inner {
    fn operating_point(&self) -> OperatingPoint {
        let step = &self.profile.steps[self.step_index.min(self.profile.steps.len() - 1)];
        match self.load_override {
            Some(point) => OperatingPoint {
                voltage_v: step.voltage_v,
                current_a: point.current_a,
                power_factor: point.power_factor,
                character: step.character,
            },
            None => OperatingPoint {
                voltage_v: step.voltage_v,
                current_a: step.current_a,
                power_factor: step.power_factor,
                character: step.character,
            },
        }
    }

    /// Remaining time inside the current profile step, or `None` when the
    /// profile is exhausted (the last step is held forever).
    fn time_to_boundary(&self) -> Option<f64> {
        if self.step_index + 1 >= self.profile.steps.len() {
            return None;
        }
        Some(self.profile.steps[self.step_index].duration_s - self.elapsed_in_step_s)
    }

    fn advance(&mut self, dt: f64) {
        let mut remaining = dt;
        while remaining > 0.0 {
            let point = self.operating_point();
            let mut h = remaining.min(MAX_SIM_STEP_S);
            let mut crossing = false;
            if let Some(to_boundary) = self.time_to_boundary() {
                if to_boundary <= h + BOUNDARY_EPS_S {
                    h = to_boundary.max(0.0);
                    crossing = true;
                }
            }

            let true_power = point.voltage_v * point.current_a * point.power_factor;
            let sin_phi = (1.0 - point.power_factor * point.power_factor).max(0.0).sqrt();
            let reactive =
                point.voltage_v * point.current_a * sin_phi * point.character.reactive_sign();

            self.true_energy_j += true_power * h;
            self.true_reactive_energy_vars += reactive * h;
            // The energy counter carries the gain error only, and stops
            // accruing entirely below the starting current.
            if point.current_a >= self.error.starting_current_a {
                self.reported_energy_j += true_power * (1.0 + self.error.gain_error) * h;
            }

            self.sim_time_s += h;
            self.elapsed_in_step_s += h;
            remaining -= h;
            if crossing {
                self.step_index += 1;
                self.elapsed_in_step_s = 0.0;
            }
        }
        self.refresh_registers();
    }

    fn refresh_registers(&mut self) {
        let point = self.operating_point();
        let true_power = point.voltage_v * point.current_a * point.power_factor;
        let sin_phi = (1.0 - point.power_factor * point.power_factor).max(0.0).sqrt();
        let apparent = point.voltage_v * point.current_a;
        let reactive = apparent * sin_phi * point.character.reactive_sign();

        let gated = point.current_a >= self.error.starting_current_a;
        let (current, power, q_power, s_power, pf) = if gated {
            let noise = if self.error.noise_sd_w > 0.0 {
                Normal::new(0.0, self.error.noise_sd_w)
                    .expect("validated noise sd")
                    .sample(&mut self.rng)
            } else {
                0.0
            };
            (
                point.current_a,
                true_power * (1.0 + self.error.gain_error) + noise,
                reactive,
                apparent,
                point.power_factor,
            )
        } else {
            (0.0, 0.0, 0.0, 0.0, 0.0)
        };
        self.last_reported_power_w = power;

        let mut write = |quantity: Quantity, value: f64| {
            let entry = self.map.entry(quantity);
            for (i, word) in entry.encode(value).into_iter().enumerate() {
                self.registers[entry.address as usize + i] = word;
            }
        };
        write(Quantity::Voltage, point.voltage_v);
        write(Quantity::Current, current);
        write(Quantity::Frequency, self.profile.frequency_hz);
        write(Quantity::PowerFactor, pf);
        write(Quantity::ActivePower, power);
        write(Quantity::ReactivePower, q_power);
        write(Quantity::ApparentPower, s_power);
        write(Quantity::ActiveEnergy, self.reported_energy_j);
        write(Quantity::ReactiveEnergy, self.true_reactive_energy_vars);
    }
}

/// Shared emulator handle; cheap to clone across the serve and drive threads.
/// State updates happen under one lock per advance, so a served reply is
/// always a consistent snapshot from a single step.
#[derive(Clone)]
pub struct Emulator {
    inner: Arc<Mutex<Inner>>,
}

impl Emulator {
    pub fn new(
        profile: LoadProfile,
        error: ErrorModel,
        map: RegisterMap,
        unit_id: u8,
    ) -> Result<Self, EmulatorError> {
        profile.validate()?;
        error.validate()?;
        let registers = vec![0u16; map.image_len()];
        let mut inner = Inner {
            rng: ChaCha8Rng::seed_from_u64(error.seed),
            profile,
            error,
            map,
            unit_id,
            step_index: 0,
            elapsed_in_step_s: 0.0,
            sim_time_s: 0.0,
            epoch_s: None,
            true_energy_j: 0.0,
            reported_energy_j: 0.0,
            true_reactive_energy_vars: 0.0,
            load_override: None,
            registers,
            last_reported_power_w: 0.0,
        };
        inner.refresh_registers();
        Ok(Self {
            inner: Arc::new(Mutex::new(inner)),
        })
    }

    pub fn unit_id(&self) -> u8 {
        self.inner.lock().unwrap().unit_id
    }

    /// Advances the simulation by `dt` seconds in sub-steps of at most
    /// [`MAX_SIM_STEP_S`], splitting exactly at profile step boundaries.
    pub fn step(&self, dt: f64) -> Result<(), EmulatorError> {
        if dt <= 0.0 {
            return Err(EmulatorError::NonPositiveDt(dt));
        }
        self.inner.lock().unwrap().advance(dt);
        Ok(())
    }

    /// Advances the simulation so its profile time matches `clock_now_s`.
    /// The first call pins the epoch; calls for earlier instants are no-ops.
    pub fn advance_to(&self, clock_now_s: f64) {
        let mut inner = self.inner.lock().unwrap();
        let epoch = *inner.epoch_s.get_or_insert(clock_now_s);
        let target = clock_now_s - epoch;
        let dt = target - inner.sim_time_s;
        if dt > 0.0 {
            inner.advance(dt);
        }
    }

    /// Switches the operating point to the profile's load map entry for
    /// `percent`, interpolating between configured points. Energy up to the
    /// switch keeps the previous operating point.
    pub fn set_load_percent(&self, percent: f64) -> Result<(), EmulatorError> {
        let mut inner = self.inner.lock().unwrap();
        let point = inner.profile.interpolate_load(percent)?;
        inner.load_override = Some(point);
        inner.refresh_registers();
        Ok(())
    }

    pub fn clear_load_override(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.load_override = None;
        inner.refresh_registers();
    }

    /// Copies `count` registers starting at `start` out of the live image.
    pub fn read_registers(&self, start: u16, count: u16) -> Result<Vec<u16>, EmulatorError> {
        let inner = self.inner.lock().unwrap();
        let end = start as u32 + count as u32;
        if count == 0 || end > inner.registers.len() as u32 || !inner.map.covers_range(start, count)
        {
            return Err(EmulatorError::RangeUnmapped { start, end });
        }
        Ok(inner.registers[start as usize..end as usize].to_vec())
    }

    pub fn register_map(&self) -> RegisterMap {
        self.inner.lock().unwrap().map.clone()
    }

    pub fn truth(&self) -> MeterTruth {
        let inner = self.inner.lock().unwrap();
        let point = inner.operating_point();
        MeterTruth {
            sim_time_s: inner.sim_time_s,
            voltage_v: point.voltage_v,
            current_a: point.current_a,
            power_factor: point.power_factor,
            true_power_w: point.voltage_v * point.current_a * point.power_factor,
            true_energy_j: inner.true_energy_j,
            reported_power_w: inner.last_reported_power_w,
            reported_energy_j: inner.reported_energy_j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOutcome {
    /// Calibrator-truth energy over the run, joules.
    pub provided_energy_j: f64,
    /// What the emulated meter's energy counter accumulated, joules.
    pub reported_energy_j: f64,
}

/// Runs a calibrator setting against a fresh emulated meter at fine internal
/// steps and returns both the provided and the reported energy.
pub fn run_calibration_scenario(
    setting: &CalibratorSetting,
    error: &ErrorModel,
) -> Result<CalibrationOutcome, EmulatorError> {
    setting.validate()?;
    let profile = LoadProfile {
        steps: vec![ProfileStep {
            duration_s: setting.duration_s,
            voltage_v: setting.voltage_v,
            current_a: setting.current_a,
            power_factor: setting.power_factor(),
            character: setting.load_character,
        }],
        frequency_hz: 50.0,
        load_points: Vec::new(),
    };
    let emulator = Emulator::new(profile, *error, RegisterMap::project_default(), 1)?;
    emulator.step(setting.duration_s)?;
    let truth = emulator.truth();
    Ok(CalibrationOutcome {
        provided_energy_j: truth.true_energy_j,
        reported_energy_j: truth.reported_energy_j,
    })
}
