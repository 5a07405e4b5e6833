//! The polling master: one Modbus read cycle per sample, scheduled against a
//! monotonic clock with no drift accumulation.

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::frame::{
    decode_response, encode_read_request, expected_response_len, FrameError, MIN_RESPONSE_LEN,
};
use super::registers::{Quantity, RegisterMap};
use super::transport::Transport;
use crate::clock::Clock;
use crate::metrology::{ElectricalSample, SampleTolerance};

#[derive(Debug, Error)]
pub enum MasterError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("no response within the response window")]
    Timeout,
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
    #[error("transport closed by peer")]
    Closed,
    #[error("poll interval must be positive")]
    ZeroInterval,
    #[error("transport lost after {failures} consecutive poll failures: {last}")]
    TransportLost {
        failures: u32,
        last: Box<MasterError>,
    },
    #[error("decoded sample failed validation: {0}")]
    InvalidSample(#[from] crate::metrology::MetrologyError),
}

#[derive(Debug, Clone)]
pub struct PollConfig {
    pub unit_id: u8,
    pub interval: Duration,
    /// Wall-clock window to wait for each reply.
    pub response_timeout: Duration,
    /// Consecutive failed reads before the poll loop gives up.
    pub failure_limit: u32,
}

impl Default for PollConfig {
    fn default() -> Self {
        Self {
            unit_id: 1,
            interval: Duration::from_secs(1),
            response_timeout: Duration::from_millis(500),
            failure_limit: 5,
        }
    }
}

/// Receives the poll loop's output. `gap` is called once per failed tick
/// with the current consecutive-failure count.
pub trait SampleSink: Send {
    fn sample(&mut self, sample: ElectricalSample);
    fn gap(&mut self, _consecutive_failures: u32) {}
}

impl<F: FnMut(ElectricalSample) + Send> SampleSink for F {
    fn sample(&mut self, sample: ElectricalSample) {
        self(sample)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PollStats {
    pub emitted: u64,
    pub gaps: u64,
}

/// Reads bytes off the transport until one complete response frame is
/// buffered or the wall-clock deadline expires.
fn read_frame(transport: &mut dyn Transport, timeout: Duration) -> Result<Vec<u8>, MasterError> {
    let deadline = Instant::now() + timeout;
    let mut buffered: Vec<u8> = Vec::with_capacity(MIN_RESPONSE_LEN);
    let mut chunk = [0u8; 256];
    loop {
        if let Some(needed) = expected_response_len(&buffered) {
            if buffered.len() >= needed {
                buffered.truncate(needed);
                return Ok(buffered);
            }
        }
        let remaining = deadline
            .checked_duration_since(Instant::now())
            .ok_or(MasterError::Timeout)?;
        match transport.recv(&mut chunk, remaining) {
            Ok(0) => return Err(MasterError::Closed),
            Ok(n) => buffered.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == io::ErrorKind::TimedOut => return Err(MasterError::Timeout),
            Err(e) => return Err(MasterError::Io(e)),
        }
    }
}

/// One full measurement: issues the minimal set of coalesced read requests
/// covering the map, applies each scale, and stamps the sample with the
/// clock's monotonic time.
pub fn read_sample(
    transport: &mut dyn Transport,
    map: &RegisterMap,
    unit_id: u8,
    response_timeout: Duration,
    clock: &dyn Clock,
) -> Result<ElectricalSample, MasterError> {
    let timestamp_s = clock.now_secs();
    let mut values = std::collections::BTreeMap::new();
    for group in map.read_groups() {
        let request = encode_read_request(unit_id, group.start, group.count)?;
        transport.send(&request)?;
        let reply = read_frame(transport, response_timeout)?;
        let frame = decode_response(&reply, unit_id)?;
        if frame.registers.len() != group.count as usize {
            return Err(MasterError::Frame(FrameError::LengthMismatch {
                byte_count: (frame.registers.len() * 2) as u8,
                len: reply.len(),
            }));
        }
        for (quantity, offset) in &group.members {
            let entry = map.entry(*quantity);
            let start = *offset as usize;
            let words = &frame.registers[start..start + entry.words as usize];
            values.insert(*quantity, entry.decode(words));
        }
    }

    let sample = ElectricalSample {
        timestamp_s,
        voltage_v: values[&Quantity::Voltage],
        current_a: values[&Quantity::Current],
        frequency_hz: values[&Quantity::Frequency],
        power_factor: values[&Quantity::PowerFactor],
        active_power_w: values[&Quantity::ActivePower],
        reactive_power_var: values[&Quantity::ReactivePower],
        apparent_power_va: values[&Quantity::ApparentPower],
        active_energy_j: values[&Quantity::ActiveEnergy],
        reactive_energy_vars: values[&Quantity::ReactiveEnergy],
    };
    // Register quantisation can leave the apparent power one LSB below a
    // component, so the wire-side check allows that much absolute slack.
    let quantisation_slack = map.entry(Quantity::ActivePower).scale
        + map.entry(Quantity::ApparentPower).scale
        + map.entry(Quantity::ReactivePower).scale;
    sample.validate(SampleTolerance {
        relative: 1e-6,
        absolute: quantisation_slack,
    })?;
    Ok(sample)
}

/// Polls one sample per interval until cancelled. Deadlines advance by
/// exactly one interval per tick (`next = previous + interval`), so timing
/// errors never accumulate. A failed read emits nothing for that tick and
/// bumps the gap counter; `failure_limit` consecutive failures surface as
/// [`MasterError::TransportLost`].
pub fn poll(
    transport: &mut dyn Transport,
    map: &RegisterMap,
    config: &PollConfig,
    clock: &dyn Clock,
    sink: &mut dyn SampleSink,
    cancel: &AtomicBool,
) -> Result<PollStats, MasterError> {
    if config.interval.is_zero() {
        return Err(MasterError::ZeroInterval);
    }
    let mut stats = PollStats::default();
    let mut consecutive_failures = 0u32;
    let mut deadline = clock.now();
    loop {
        if cancel.load(Ordering::SeqCst) {
            return Ok(stats);
        }
        match read_sample(
            transport,
            map,
            config.unit_id,
            config.response_timeout,
            clock,
        ) {
            Ok(sample) => {
                consecutive_failures = 0;
                stats.emitted += 1;
                sink.sample(sample);
            }
            Err(error) => {
                consecutive_failures += 1;
                stats.gaps += 1;
                sink.gap(consecutive_failures);
                log::warn!(
                    "poll tick failed ({consecutive_failures}/{}): {error}",
                    config.failure_limit
                );
                if consecutive_failures >= config.failure_limit {
                    return Err(MasterError::TransportLost {
                        failures: consecutive_failures,
                        last: Box::new(error),
                    });
                }
            }
        }
        deadline += config.interval;
        clock.sleep_until(deadline);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{SimClock, SystemClock};
    use crate::modbus::frame::{encode_response, FUNC_READ_HOLDING_REGISTERS};
    use crate::modbus::transport::pipe;
    use std::sync::atomic::AtomicBool;
    use std::sync::Arc;

    /// Minimal scripted responder: answers every read request for the whole
    /// default map with a fixed register image.
    fn spawn_fixed_responder(
        mut side: crate::modbus::transport::PipeTransport,
        image: Vec<u16>,
        replies: Option<usize>,
    ) -> std::thread::JoinHandle<()> {
        std::thread::spawn(move || {
            let mut served = 0usize;
            let mut buf = Vec::new();
            let mut chunk = [0u8; 64];
            loop {
                if let Some(limit) = replies {
                    if served >= limit {
                        return;
                    }
                }
                match side.recv(&mut chunk, Duration::from_millis(500)) {
                    Ok(0) | Err(_) => return,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                }
                while buf.len() >= 8 {
                    let frame: Vec<u8> = buf.drain(..8).collect();
                    let request = crate::modbus::frame::decode_request(&frame).unwrap();
                    assert_eq!(request.function, FUNC_READ_HOLDING_REGISTERS);
                    let start = request.start_address as usize;
                    let end = start + request.count as usize;
                    let reply = encode_response(request.unit_id, &image[start..end]);
                    if side.send(&reply).is_err() {
                        return;
                    }
                    served += 1;
                }
            }
        })
    }

    fn image_for(map: &RegisterMap, voltage: f64, current: f64, power: f64) -> Vec<u16> {
        let mut image = vec![0u16; map.image_len()];
        let mut write = |q: Quantity, v: f64| {
            let entry = map.entry(q);
            for (i, w) in entry.encode(v).into_iter().enumerate() {
                image[entry.address as usize + i] = w;
            }
        };
        write(Quantity::Voltage, voltage);
        write(Quantity::Current, current);
        write(Quantity::Frequency, 50.0);
        write(Quantity::PowerFactor, 1.0);
        write(Quantity::ActivePower, power);
        write(Quantity::ReactivePower, 0.0);
        write(Quantity::ApparentPower, voltage * current);
        write(Quantity::ActiveEnergy, 65536.0);
        write(Quantity::ReactiveEnergy, 0.0);
        image
    }

    #[test]
    fn read_sample_applies_scales() {
        let map = RegisterMap::project_default();
        let (mut master_side, emu_side) = pipe();
        let image = image_for(&map, 230.0, 5.0, 1150.0);
        let responder = spawn_fixed_responder(emu_side, image, Some(1));
        let clock = SimClock::new();
        let sample =
            read_sample(&mut master_side, &map, 1, Duration::from_millis(500), &clock).unwrap();
        assert_eq!(sample.voltage_v, 230.0);
        assert_eq!(sample.current_a, 5.0);
        assert_eq!(sample.active_power_w, 1150.0);
        assert_eq!(sample.active_energy_j, 65536.0);
        responder.join().unwrap();
    }

    #[test]
    fn read_sample_times_out_without_peer() {
        let map = RegisterMap::project_default();
        let (mut master_side, _emu_side) = pipe();
        let clock = SimClock::new();
        let err = read_sample(&mut master_side, &map, 1, Duration::from_millis(30), &clock)
            .expect_err("absent peer");
        assert!(matches!(err, MasterError::Timeout));
    }

    #[test]
    fn read_sample_is_map_order_independent() {
        // The map stores entries keyed by quantity; coalescing sorts by
        // address, so any construction order decodes identically. Exercise
        // by comparing against a second identical map instance.
        let map_a = RegisterMap::project_default();
        let map_b = RegisterMap::project_default();
        assert_eq!(map_a.read_groups(), map_b.read_groups());
    }

    #[test]
    fn poll_rejects_zero_interval() {
        let map = RegisterMap::project_default();
        let (mut master_side, _emu) = pipe();
        let clock = SimClock::new();
        let cancel = AtomicBool::new(false);
        let mut sink = |_s: ElectricalSample| {};
        let err = poll(
            &mut master_side,
            &map,
            &PollConfig {
                interval: Duration::ZERO,
                ..Default::default()
            },
            &clock,
            &mut sink,
            &cancel,
        )
        .unwrap_err();
        assert!(matches!(err, MasterError::ZeroInterval));
    }

    #[test]
    fn poll_emits_on_schedule_with_sim_clock() {
        let map = RegisterMap::project_default();
        let (mut master_side, emu_side) = pipe();
        let image = image_for(&map, 230.0, 5.0, 1150.0);
        let responder = spawn_fixed_responder(emu_side, image, None);
        let clock = Arc::new(SimClock::new());
        let cancel = Arc::new(AtomicBool::new(false));

        let samples = Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink_samples = samples.clone();
        let sink_cancel = cancel.clone();
        let mut sink = move |s: ElectricalSample| {
            let mut guard = sink_samples.lock().unwrap();
            guard.push(s);
            if guard.len() >= 11 {
                sink_cancel.store(true, Ordering::SeqCst);
            }
        };
        let stats = poll(
            &mut master_side,
            &map,
            &PollConfig::default(),
            clock.as_ref(),
            &mut sink,
            &cancel,
        )
        .unwrap();
        assert_eq!(stats.emitted, 11);
        let samples = samples.lock().unwrap();
        // Samples land exactly on the 1 s grid and strictly increase.
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.timestamp_s, i as f64);
        }
        drop(master_side);
        responder.join().unwrap();
    }

    #[test]
    fn poll_real_clock_spacing_within_ten_percent() {
        let map = RegisterMap::project_default();
        let (mut master_side, emu_side) = pipe();
        let image = image_for(&map, 230.0, 5.0, 1150.0);
        let responder = spawn_fixed_responder(emu_side, image, None);
        let clock = SystemClock::new();
        let cancel = Arc::new(AtomicBool::new(false));
        let samples = Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink_samples = samples.clone();
        let sink_cancel = cancel.clone();
        let interval = Duration::from_millis(50);
        let mut sink = move |s: ElectricalSample| {
            let mut guard = sink_samples.lock().unwrap();
            guard.push(s);
            if guard.len() >= 20 {
                sink_cancel.store(true, Ordering::SeqCst);
            }
        };
        poll(
            &mut master_side,
            &map,
            &PollConfig {
                interval,
                ..Default::default()
            },
            &clock,
            &mut sink,
            &cancel,
        )
        .unwrap();
        let samples = samples.lock().unwrap();
        assert_eq!(samples.len(), 20);
        for pair in samples.windows(2) {
            let spacing = pair[1].timestamp_s - pair[0].timestamp_s;
            assert!(
                (spacing - 0.05).abs() <= 0.005,
                "spacing {spacing} off the 50 ms grid"
            );
        }
        drop(master_side);
        responder.join().unwrap();
    }

    #[test]
    fn poll_surfaces_transport_loss_after_failure_limit() {
        let map = RegisterMap::project_default();
        let (mut master_side, emu_side) = pipe();
        let image = image_for(&map, 230.0, 5.0, 1150.0);
        // Responder dies after three replies: the meter disappearing mid-poll.
        let responder = spawn_fixed_responder(emu_side, image, Some(3));
        let clock = SimClock::new();
        let cancel = AtomicBool::new(false);
        let mut gaps = 0u32;
        struct CountingSink<'a> {
            emitted: u64,
            gaps: &'a mut u32,
        }
        impl SampleSink for CountingSink<'_> {
            fn sample(&mut self, _s: ElectricalSample) {
                self.emitted += 1;
            }
            fn gap(&mut self, _consecutive: u32) {
                *self.gaps += 1;
            }
        }
        let mut sink = CountingSink {
            emitted: 0,
            gaps: &mut gaps,
        };
        let err = poll(
            &mut master_side,
            &map,
            &PollConfig {
                interval: Duration::from_millis(10),
                response_timeout: Duration::from_millis(50),
                ..Default::default()
            },
            &clock,
            &mut sink,
            &cancel,
        )
        .unwrap_err();
        match err {
            MasterError::TransportLost { failures, .. } => assert_eq!(failures, 5),
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(sink.emitted, 3);
        assert_eq!(gaps, 5);
        responder.join().unwrap();
    }
}
