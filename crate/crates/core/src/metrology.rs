//! Electrical quantities and the arithmetic every other module builds on:
//! AC real power, rectangular energy integration, session statistics, and
//! requests-per-joule productivity.
//!
//! All computations here are pure and side-effect free. Energy is carried in
//! joules throughout; watt-hour conversion happens only at report boundaries
//! (1 Wh = 3600 J, see [`joules_to_watt_hours`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetrologyError {
    #[error("power factor {0} outside [-1, 1]")]
    PowerFactorOutOfRange(f64),
    #[error("{quantity} must be non-negative, got {value}")]
    NegativeQuantity {
        quantity: &'static str,
        value: f64,
    },
    #[error("timestamps must be strictly increasing (violated at sample {index})")]
    NonMonotonicTimestamps { index: usize },
    #[error("active energy counter decreased at sample {index}")]
    EnergyCounterDecreased { index: usize },
    #[error("apparent power {apparent} below {kind} power magnitude {magnitude} beyond tolerance")]
    InconsistentPowers {
        kind: &'static str,
        apparent: f64,
        magnitude: f64,
    },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty sample series")]
    EmptySeries,
    #[error("reference value must be nonzero")]
    ZeroReference,
    #[error("total energy must be positive, got {0} J")]
    NonPositiveEnergy(f64),
    #[error("session id must be non-empty")]
    EmptySessionId,
}

/// One timestamped meter reading. Timestamps are seconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectricalSample {
    pub timestamp_s: f64,
    pub voltage_v: f64,
    pub current_a: f64,
    pub frequency_hz: f64,
    pub power_factor: f64,
    pub active_power_w: f64,
    pub reactive_power_var: f64,
    pub apparent_power_va: f64,
    /// Meter lifetime active energy counter, joules.
    pub active_energy_j: f64,
    /// Meter lifetime reactive energy counter, volt-amp-reactive-seconds.
    pub reactive_energy_vars: f64,
}

/// Tolerance for the apparent-vs-component power consistency check.
///
/// The effective slack is `absolute + relative * |apparent|`; the absolute
/// term absorbs register quantisation when samples come off the wire.
#[derive(Debug, Clone, Copy)]
pub struct SampleTolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for SampleTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-6,
            absolute: 0.0,
        }
    }
}

impl ElectricalSample {
    pub fn validate(&self, tol: SampleTolerance) -> Result<(), MetrologyError> {
        for (quantity, value) in [
            ("timestamp", self.timestamp_s),
            ("voltage", self.voltage_v),
            ("current", self.current_a),
            ("frequency", self.frequency_hz),
        ] {
            if value < 0.0 {
                return Err(MetrologyError::NegativeQuantity { quantity, value });
            }
        }
        if self.power_factor.abs() > 1.0 {
            return Err(MetrologyError::PowerFactorOutOfRange(self.power_factor));
        }
        let slack = tol.absolute + tol.relative * self.apparent_power_va.abs();
        for (kind, component) in [
            ("active", self.active_power_w),
            ("reactive", self.reactive_power_var),
        ] {
            if self.apparent_power_va < component.abs() - slack {
                return Err(MetrologyError::InconsistentPowers {
                    kind,
                    apparent: self.apparent_power_va,
                    magnitude: component.abs(),
                });
            }
        }
        Ok(())
    }
}

/// An ordered sample series with metadata: the unit of logging and analysis.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub session_id: String,
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub samples: Vec<ElectricalSample>,
    /// Nominal polling interval, seconds.
    pub sample_interval_s: f64,
    pub metadata: BTreeMap<String, String>,
}

impl SessionRecord {
    pub fn new(session_id: impl Into<String>, sample_interval_s: f64) -> Self {
        Self {
            session_id: session_id.into(),
            started_at: chrono::Utc::now(),
            samples: Vec::new(),
            sample_interval_s,
            metadata: BTreeMap::new(),
        }
    }

    /// Appends a sample, enforcing strictly increasing timestamps and a
    /// non-decreasing active energy counter.
    pub fn push(&mut self, sample: ElectricalSample) -> Result<(), MetrologyError> {
        if let Some(last) = self.samples.last() {
            if sample.timestamp_s <= last.timestamp_s {
                return Err(MetrologyError::NonMonotonicTimestamps {
                    index: self.samples.len(),
                });
            }
            if sample.active_energy_j < last.active_energy_j {
                return Err(MetrologyError::EnergyCounterDecreased {
                    index: self.samples.len(),
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MetrologyError> {
        if self.session_id.is_empty() {
            return Err(MetrologyError::EmptySessionId);
        }
        for (index, pair) in self.samples.windows(2).enumerate() {
            if pair[1].timestamp_s <= pair[0].timestamp_s {
                return Err(MetrologyError::NonMonotonicTimestamps { index: index + 1 });
            }
            if pair[1].active_energy_j < pair[0].active_energy_j {
                return Err(MetrologyError::EnergyCounterDecreased { index: index + 1 });
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(first), Some(last)) => last.timestamp_s - first.timestamp_s,
            _ => 0.0,
        }
    }
}

/// Aggregate statistics over one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub duration_s: f64,
    pub mean_power_w: f64,
    pub power_variance_w2: f64,
    pub total_energy_j: f64,
    pub sample_count: usize,
}

/// AC real power: `P = U * I * cos(phi)`.
pub fn real_power(
    voltage_v: f64,
    current_a: f64,
    power_factor: f64,
) -> Result<f64, MetrologyError> {
    if power_factor.abs() > 1.0 {
        return Err(MetrologyError::PowerFactorOutOfRange(power_factor));
    }
    if voltage_v < 0.0 {
        return Err(MetrologyError::NegativeQuantity {
            quantity: "voltage",
            value: voltage_v,
        });
    }
    if current_a < 0.0 {
        return Err(MetrologyError::NegativeQuantity {
            quantity: "current",
            value: current_a,
        });
    }
    Ok(voltage_v * current_a * power_factor)
}

/// Left-point rectangular energy integration over an ordered sample series:
/// each sample's power is held until the next timestamp. A single sample
/// spans no interval and yields 0 J.
pub fn integrate_energy(samples: &[ElectricalSample]) -> Result<f64, MetrologyError> {
    if samples.is_empty() {
        return Err(MetrologyError::EmptySeries);
    }
    let mut energy = 0.0;
    for (index, pair) in samples.windows(2).enumerate() {
        let dt = pair[1].timestamp_s - pair[0].timestamp_s;
        if dt <= 0.0 {
            return Err(MetrologyError::NonMonotonicTimestamps { index: index + 1 });
        }
        energy += pair[0].active_power_w * dt;
    }
    Ok(energy)
}

/// Session statistics: arithmetic mean and population variance of active
/// power plus integrated energy. Requires at least two samples so a session
/// that never actually polled fails loudly instead of reporting zeros.
pub fn summarize(session: &SessionRecord) -> Result<SessionSummary, MetrologyError> {
    summarize_samples(&session.samples)
}

pub fn summarize_samples(samples: &[ElectricalSample]) -> Result<SessionSummary, MetrologyError> {
    if samples.len() < 2 {
        return Err(MetrologyError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let total_energy_j = integrate_energy(samples)?;
    let n = samples.len() as f64;
    let mean_power_w = samples.iter().map(|s| s.active_power_w).sum::<f64>() / n;
    let power_variance_w2 = samples
        .iter()
        .map(|s| {
            let d = s.active_power_w - mean_power_w;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(SessionSummary {
        duration_s: samples[samples.len() - 1].timestamp_s - samples[0].timestamp_s,
        mean_power_w,
        power_variance_w2,
        total_energy_j,
        sample_count: samples.len(),
    })
}

/// Signed relative error `(measured - reference) / reference`.
pub fn relative_error(measured: f64, reference: f64) -> Result<f64, MetrologyError> {
    if reference == 0.0 {
        return Err(MetrologyError::ZeroReference);
    }
    Ok((measured - reference) / reference)
}

/// Productivity in requests per joule, numerically equal to requests per
/// second per watt.
pub fn productivity(request_count: u64, total_energy_j: f64) -> Result<f64, MetrologyError> {
    if total_energy_j <= 0.0 {
        return Err(MetrologyError::NonPositiveEnergy(total_energy_j));
    }
    Ok(request_count as f64 / total_energy_j)
}

pub fn joules_to_watt_hours(joules: f64) -> f64 {
    joules / 3600.0
}

/// Builds a sample carrying only a timestamp and active power; the other
/// quantities are filled with physically consistent placeholder values.
/// Convenient for tests and synthetic fixtures.
pub fn power_only_sample(timestamp_s: f64, active_power_w: f64) -> ElectricalSample {
    ElectricalSample {
        timestamp_s,
        voltage_v: 230.0,
        current_a: if active_power_w > 0.0 {
            active_power_w / 230.0
        } else {
            0.0
        },
        frequency_hz: 50.0,
        power_factor: 1.0,
        active_power_w,
        reactive_power_var: 0.0,
        apparent_power_va: active_power_w.abs(),
        active_energy_j: 0.0,
        reactive_energy_vars: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_series(power_w: f64, interval_s: f64, count: usize) -> Vec<ElectricalSample> {
        let mut samples = Vec::with_capacity(count);
        let mut energy = 0.0;
        for i in 0..count {
            let mut s = power_only_sample(i as f64 * interval_s, power_w);
            s.active_energy_j = energy;
            energy += power_w * interval_s;
            samples.push(s);
        }
        samples
    }

    #[test]
    fn real_power_direct_product() {
        assert_eq!(real_power(230.0, 5.0, 1.0).unwrap(), 1150.0);
        assert_eq!(real_power(230.0, 0.0, 0.9).unwrap(), 0.0);
        assert_eq!(real_power(230.0, 5.0, 0.5).unwrap(), 575.0);
    }

    #[test]
    fn real_power_rejects_bad_domain() {
        assert!(matches!(
            real_power(230.0, 5.0, 1.2),
            Err(MetrologyError::PowerFactorOutOfRange(_))
        ));
        assert!(real_power(-1.0, 5.0, 1.0).is_err());
        assert!(real_power(230.0, -0.1, 1.0).is_err());
        // -1 is a legal power factor (fully leading or an export convention).
        assert_eq!(real_power(230.0, 5.0, -1.0).unwrap(), -1150.0);
    }

    #[test]
    fn integrate_constant_power_closed_form() {
        // 1150 W sampled at t = 0, 1, ..., 300 -> 345000 J.
        let samples = constant_series(1150.0, 1.0, 301);
        let energy = integrate_energy(&samples).unwrap();
        assert!((energy - 345_000.0).abs() / 345_000.0 <= 1e-12);
    }

    #[test]
    fn integrate_single_sample_is_zero() {
        let samples = constant_series(1150.0, 1.0, 1);
        assert_eq!(integrate_energy(&samples).unwrap(), 0.0);
    }

    #[test]
    fn integrate_left_rectangle_rule() {
        // (t=0, 100 W), (t=2, 300 W): the first power is held for 2 s.
        let samples = vec![power_only_sample(0.0, 100.0), power_only_sample(2.0, 300.0)];
        assert_eq!(integrate_energy(&samples).unwrap(), 200.0);
    }

    #[test]
    fn integrate_rejects_non_increasing_timestamps() {
        let samples = vec![power_only_sample(1.0, 100.0), power_only_sample(1.0, 100.0)];
        assert!(matches!(
            integrate_energy(&samples),
            Err(MetrologyError::NonMonotonicTimestamps { index: 1 })
        ));
        assert!(matches!(
            integrate_energy(&[]),
            Err(MetrologyError::EmptySeries)
        ));
    }

    #[test]
    fn summarize_constant_series_has_zero_variance() {
        let samples = constant_series(575.0, 1.0, 10);
        let summary = summarize_samples(&samples).unwrap();
        assert_eq!(summary.power_variance_w2, 0.0);
        assert_eq!(summary.mean_power_w, 575.0);
        assert_eq!(summary.duration_s, 9.0);
        assert_eq!(summary.sample_count, 10);
    }

    #[test]
    fn summarize_two_point_series() {
        // {100, 300} W: mean 200 W, population variance 10000 W^2.
        let samples = vec![power_only_sample(0.0, 100.0), power_only_sample(1.0, 300.0)];
        let summary = summarize_samples(&samples).unwrap();
        assert_eq!(summary.mean_power_w, 200.0);
        assert_eq!(summary.power_variance_w2, 10_000.0);
    }

    #[test]
    fn summarize_rejects_degenerate_sessions() {
        assert!(matches!(
            summarize_samples(&constant_series(100.0, 1.0, 1)),
            Err(MetrologyError::TooFewSamples { needed: 2, got: 1 })
        ));
        assert!(summarize_samples(&[]).is_err());
    }

    #[test]
    fn relative_error_reference_pairs() {
        // Reference measurement pairs; printed errors are -0.35% and -1.2%.
        let e = relative_error(343_813.32, 345_032.93).unwrap();
        assert!((e - (-0.0035)).abs() < 5e-5);
        let e = relative_error(53_985.94, 54_629.41).unwrap();
        assert!((e - (-0.0118)).abs() < 5e-5);
    }

    #[test]
    fn relative_error_identity_and_zero_reference() {
        assert_eq!(relative_error(123.4, 123.4).unwrap(), 0.0);
        assert!(matches!(
            relative_error(1.0, 0.0),
            Err(MetrologyError::ZeroReference)
        ));
    }

    #[test]
    fn productivity_definitional_cases() {
        // 100 req/s for 10 s at constant 50 W: 1000 req over 500 J.
        assert_eq!(productivity(1000, 500.0).unwrap(), 2.0);
        assert_eq!(productivity(0, 42.0).unwrap(), 0.0);
        // 4500 requests over 30000 J, equivalently (450 req/s) / (3000 W).
        assert_eq!(productivity(4500, 30_000.0).unwrap(), 0.15);
        assert!(productivity(1, 0.0).is_err());
        assert!(productivity(1, -5.0).is_err());
    }

    #[test]
    fn session_push_enforces_invariants() {
        let mut session = SessionRecord::new("s1", 1.0);
        session.push(power_only_sample(0.0, 100.0)).unwrap();
        session.push(power_only_sample(1.0, 100.0)).unwrap();
        assert!(session.push(power_only_sample(1.0, 100.0)).is_err());
        let mut decreasing = power_only_sample(2.0, 100.0);
        decreasing.active_energy_j = -1.0;
        assert!(matches!(
            session.push(decreasing),
            Err(MetrologyError::EnergyCounterDecreased { .. })
        ));
        assert_eq!(session.samples.len(), 2);
        session.validate().unwrap();
    }

    #[test]
    fn sample_validation_bounds() {
        let mut s = power_only_sample(0.0, 100.0);
        s.validate(SampleTolerance::default()).unwrap();
        s.power_factor = 1.5;
        assert!(s.validate(SampleTolerance::default()).is_err());
        s.power_factor = 1.0;
        s.apparent_power_va = 50.0;
        assert!(matches!(
            s.validate(SampleTolerance::default()),
            Err(MetrologyError::InconsistentPowers { kind: "active", .. })
        ));
        // An absolute tolerance wide enough to cover the gap admits it again.
        s.validate(SampleTolerance {
            relative: 0.0,
            absolute: 60.0,
        })
        .unwrap();
    }

    #[test]
    fn summary_energy_matches_mean_times_duration_on_uniform_grid() {
        let samples: Vec<_> = (0..60)
            .map(|i| power_only_sample(i as f64 * 0.5, 100.0 + (i % 7) as f64 * 10.0))
            .collect();
        let summary = summarize_samples(&samples).unwrap();
        let max_power = samples
            .iter()
            .map(|s| s.active_power_w)
            .fold(0.0f64, f64::max);
        // Left-rectangle total vs mean * span differ by at most one
        // interval's worth of the power spread on a uniform grid.
        let bound = 0.5 * max_power;
        assert!((summary.total_energy_j - summary.mean_power_w * summary.duration_s).abs() < bound);
    }

    proptest! {
        #[test]
        fn real_power_is_homogeneous_in_voltage(
            voltage in 0.0f64..500.0,
            current in 0.0f64..32.0,
            pf in -1.0f64..1.0,
            k in 0.0f64..10.0,
        ) {
            let base = real_power(voltage, current, pf).unwrap();
            let scaled = real_power(k * voltage, current, pf).unwrap();
            let expected = k * base;
            prop_assert!((scaled - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }

        #[test]
        fn integration_is_additive_over_splits(
            powers in proptest::collection::vec(0.0f64..5000.0, 3..40),
            split in 1usize..38,
        ) {
            prop_assume!(split < powers.len() - 1);
            let samples: Vec<_> = powers
                .iter()
                .enumerate()
                .map(|(i, &p)| power_only_sample(i as f64, p))
                .collect();
            let whole = integrate_energy(&samples).unwrap();
            // The boundary sample is shared between the two halves.
            let left = integrate_energy(&samples[..=split]).unwrap();
            let right = integrate_energy(&samples[split..]).unwrap();
            prop_assert!((left + right - whole).abs() <= 1e-12 * whole.abs().max(1.0));
        }

        #[test]
        fn integrate_constant_power_matches_product(
            power in 0.1f64..10_000.0,
            interval in 0.01f64..10.0,
            count in 2usize..200,
        ) {
            let samples = constant_series(power, interval, count);
            let energy = integrate_energy(&samples).unwrap();
            let span = samples[count - 1].timestamp_s - samples[0].timestamp_s;
            let expected = power * span;
            prop_assert!((energy - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn productivity_equals_rate_over_power(
            count in 0u64..1_000_000,
            duration in 0.1f64..10_000.0,
            energy in 0.1f64..1e9,
        ) {
            let direct = productivity(count, energy).unwrap();
            let via_rates = (count as f64 / duration) / (energy / duration);
            prop_assert!((direct - via_rates).abs() <= 4.0 * f64::EPSILON * direct.max(via_rates));
        }
    }
}
