//! Controller-side logging daemon: a two-state machine (logging on and off)
//! fed by the Modbus poll loop, persisting each session as one CSV file, and
//! driven over the wire by the start/stop control protocol.
//!
//! All state transitions and sample appends are serialized through one lock,
//! so a sample racing a stop command is either inside the session or cleanly
//! dropped — the session ends at the instant the stop was accepted.

pub mod control;
pub mod csvio;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::clock::SharedClock;
use crate::metrology::{
    summarize_samples, ElectricalSample, MetrologyError, SessionRecord, SessionSummary,
};
use crate::modbus::master::SampleSink;

pub use control::{send_command, ControlServer, ControlServerConfig};
pub use csvio::{parse_csv, parse_csv_file, session_from_csv_file, write_csv, CsvError, CSV_HEADER};

#[derive(Debug, Error)]
pub enum LoggerError {
    #[error("already logging (session {0})")]
    AlreadyLogging(String),
    #[error("not logging")]
    NotLogging,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// The two system states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoggerMode {
    Idle,
    Logging,
}

/// Commands understood on the control wire: the exact ASCII tokens `start`
/// (optionally followed by one label token) and `stop`, case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlCommand {
    Start { label: Option<String> },
    Stop,
}

/// Parses one command line. Anything that is not exactly a known verb with
/// a valid argument shape yields `None` and must be ignored by the server.
pub fn parse_command_line(line: &str) -> Option<ControlCommand> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let mut tokens = trimmed.split_whitespace();
    let verb = tokens.next()?;
    match verb {
        "start" => {
            let label = tokens.next().map(str::to_string);
            if tokens.next().is_some() {
                return None;
            }
            Some(ControlCommand::Start { label })
        }
        "stop" => {
            if tokens.next().is_some() {
                return None;
            }
            Some(ControlCommand::Stop)
        }
        _ => None,
    }
}

/// Outcome of applying a control command to the state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandOutcome {
    Started { session_id: String },
    Stopped { csv_path: PathBuf },
    /// Duplicate start: the in-progress session continues untouched.
    IgnoredAlreadyLogging,
    /// Stop without a session: a lost start must not crash the daemon.
    IgnoredNotLogging,
}

#[derive(Debug, Clone)]
pub struct LoggerConfig {
    pub output_dir: PathBuf,
    /// Nominal poll interval, recorded in each session.
    pub sample_interval_s: f64,
}

impl LoggerConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            sample_interval_s: 1.0,
        }
    }
}

/// Snapshot of the state machine for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggerState {
    pub mode: LoggerMode,
    pub active_session: Option<String>,
    pub gap_count: u64,
    pub sessions_completed: u64,
}

/// Everything a finished session yields. `summary` is `None` when the
/// session had fewer than two samples ("too few samples").
#[derive(Debug)]
pub struct StopOutcome {
    pub session: SessionRecord,
    pub csv_path: PathBuf,
    pub summary: Option<SessionSummary>,
}

impl StopOutcome {
    pub fn status(&self) -> &'static str {
        if self.summary.is_some() {
            "ok"
        } else {
            "too few samples"
        }
    }
}

struct ActiveSession {
    record: SessionRecord,
    epoch_s: f64,
    writer: BufWriter<File>,
    path: PathBuf,
}

struct Inner {
    active: Option<ActiveSession>,
    gap_count: u64,
    sessions_completed: u64,
}

struct Shared {
    config: LoggerConfig,
    clock: SharedClock,
    inner: Mutex<Inner>,
}

/// Cheaply cloneable handle to the logging state machine.
#[derive(Clone)]
pub struct Logger {
    shared: Arc<Shared>,
}

fn sanitize_label(label: &str) -> String {
    let cleaned: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "session".to_string()
    } else {
        cleaned
    }
}

impl Logger {
    pub fn new(config: LoggerConfig, clock: SharedClock) -> io::Result<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                clock,
                inner: Mutex::new(Inner {
                    active: None,
                    gap_count: 0,
                    sessions_completed: 0,
                }),
            }),
        })
    }

    pub fn output_dir(&self) -> &Path {
        &self.shared.config.output_dir
    }

    pub fn state(&self) -> LoggerState {
        let inner = self.shared.inner.lock().unwrap();
        LoggerState {
            mode: if inner.active.is_some() {
                LoggerMode::Logging
            } else {
                LoggerMode::Idle
            },
            active_session: inner
                .active
                .as_ref()
                .map(|a| a.record.session_id.clone()),
            gap_count: inner.gap_count,
            sessions_completed: inner.sessions_completed,
        }
    }

    /// Opens a fresh session: the CSV file is created and its header hits
    /// the disk immediately, so even a crashed run leaves a parsable log.
    pub fn start_logging(&self, label: Option<&str>) -> Result<String, LoggerError> {
        let mut inner = self.shared.inner.lock().unwrap();
        if let Some(active) = &inner.active {
            return Err(LoggerError::AlreadyLogging(
                active.record.session_id.clone(),
            ));
        }
        let session_id = format!("{:08x}", rand::random::<u32>());
        let label = sanitize_label(label.unwrap_or("session"));
        let started_at = chrono::Utc::now();
        let filename = format!(
            "{label}-{}-{session_id}.csv",
            started_at.format("%Y%m%dT%H%M%SZ")
        );
        let path = self.shared.config.output_dir.join(filename);
        let mut writer = BufWriter::new(File::create(&path)?);
        csvio::write_header(&mut writer)?;
        writer.flush()?;

        let mut record = SessionRecord::new(&session_id, self.shared.config.sample_interval_s);
        record.started_at = started_at;
        record.metadata = BTreeMap::from([("label".to_string(), label)]);
        inner.active = Some(ActiveSession {
            record,
            epoch_s: self.shared.clock.now_secs(),
            writer,
            path,
        });
        Ok(session_id)
    }

    /// Finalizes the active session: flushes and closes the CSV, computes
    /// the summary where possible.
    pub fn stop_logging(&self) -> Result<StopOutcome, LoggerError> {
        let mut inner = self.shared.inner.lock().unwrap();
        let mut active = inner.active.take().ok_or(LoggerError::NotLogging)?;
        active.writer.flush()?;
        drop(active.writer);
        inner.sessions_completed += 1;
        let summary = summarize_samples(&active.record.samples).ok();
        Ok(StopOutcome {
            session: active.record,
            csv_path: active.path,
            summary,
        })
    }

    /// Routes one polled sample into the active session, rebasing its
    /// timestamp onto the session epoch. Samples while idle, or measured
    /// before the session started, are discarded.
    pub fn append_sample(&self, sample: ElectricalSample) {
        let mut inner = self.shared.inner.lock().unwrap();
        let Some(active) = inner.active.as_mut() else {
            return;
        };
        let mut rebased = sample;
        rebased.timestamp_s = sample.timestamp_s - active.epoch_s;
        if rebased.timestamp_s < 0.0 {
            return;
        }
        match active.record.push(rebased) {
            Ok(()) => {
                if let Err(error) = csvio::write_row(&mut active.writer, &rebased)
                    .and_then(|()| active.writer.flush())
                {
                    log::error!("failed to persist sample: {error}");
                }
            }
            Err(MetrologyError::NonMonotonicTimestamps { .. }) => {
                log::warn!("dropped out-of-order sample at t={}", rebased.timestamp_s);
            }
            Err(error) => log::warn!("dropped invalid sample: {error}"),
        }
    }

    pub fn note_gap(&self) {
        self.shared.inner.lock().unwrap().gap_count += 1;
    }

    /// Applies a wire command. Duplicate starts and unmatched stops are
    /// ignored with a warning rather than disturbing a running measurement.
    pub fn apply_command(&self, command: &ControlCommand) -> Result<CommandOutcome, LoggerError> {
        match command {
            ControlCommand::Start { label } => match self.start_logging(label.as_deref()) {
                Ok(session_id) => Ok(CommandOutcome::Started { session_id }),
                Err(LoggerError::AlreadyLogging(id)) => {
                    log::warn!("start ignored: session {id} already running");
                    Ok(CommandOutcome::IgnoredAlreadyLogging)
                }
                Err(e) => Err(e),
            },
            ControlCommand::Stop => match self.stop_logging() {
                Ok(outcome) => Ok(CommandOutcome::Stopped {
                    csv_path: outcome.csv_path,
                }),
                Err(LoggerError::NotLogging) => {
                    log::warn!("stop ignored: no session running");
                    Ok(CommandOutcome::IgnoredNotLogging)
                }
                Err(e) => Err(e),
            },
        }
    }

    /// Clean-shutdown hook: finalizes any open session.
    pub fn finalize_if_logging(&self) -> Option<StopOutcome> {
        self.stop_logging().ok()
    }

    /// A sink feeding this logger, for [`crate::modbus::master::poll`].
    pub fn sink(&self) -> LoggerSink {
        LoggerSink {
            logger: self.clone(),
        }
    }
}

pub struct LoggerSink {
    logger: Logger,
}

impl SampleSink for LoggerSink {
    fn sample(&mut self, sample: ElectricalSample) {
        self.logger.append_sample(sample);
    }

    fn gap(&mut self, _consecutive_failures: u32) {
        self.logger.note_gap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::metrology::power_only_sample;
    use std::sync::Arc;

    fn test_logger() -> (Logger, Arc<SimClock>, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let clock = SimClock::shared();
        let logger = Logger::new(LoggerConfig::new(dir.path()), clock.clone()).unwrap();
        (logger, clock, dir)
    }

    fn sample_at(clock_t: f64, power: f64) -> ElectricalSample {
        let mut s = power_only_sample(clock_t, power);
        s.active_energy_j = clock_t * power;
        s
    }

    #[test]
    fn command_parsing_is_exact_and_case_sensitive() {
        assert_eq!(
            parse_command_line("start\n"),
            Some(ControlCommand::Start { label: None })
        );
        assert_eq!(
            parse_command_line("start apache-70pct\n"),
            Some(ControlCommand::Start {
                label: Some("apache-70pct".to_string())
            })
        );
        assert_eq!(parse_command_line("stop"), Some(ControlCommand::Stop));
        assert_eq!(parse_command_line("Start\n"), None);
        assert_eq!(parse_command_line("reboot\n"), None);
        assert_eq!(parse_command_line("start a b\n"), None);
        assert_eq!(parse_command_line("stop now\n"), None);
        assert_eq!(parse_command_line(""), None);
    }

    #[test]
    fn start_creates_csv_with_header_immediately() {
        let (logger, _clock, dir) = test_logger();
        logger.start_logging(Some("apache-70pct")).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let path = files[0].as_ref().unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap();
        assert!(name.starts_with("apache-70pct-"), "name: {name}");
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn double_start_is_rejected() {
        let (logger, _clock, _dir) = test_logger();
        logger.start_logging(None).unwrap();
        assert!(matches!(
            logger.start_logging(None),
            Err(LoggerError::AlreadyLogging(_))
        ));
    }

    #[test]
    fn stop_without_start_is_rejected() {
        let (logger, _clock, _dir) = test_logger();
        assert!(matches!(logger.stop_logging(), Err(LoggerError::NotLogging)));
    }

    #[test]
    fn samples_are_rebased_onto_the_session_epoch() {
        let (logger, clock, _dir) = test_logger();
        clock.advance(std::time::Duration::from_secs(100));
        logger.start_logging(None).unwrap();
        logger.append_sample(sample_at(100.0, 500.0));
        logger.append_sample(sample_at(101.0, 500.0));
        // Measured before the epoch: discarded.
        logger.append_sample(sample_at(99.0, 500.0));
        let outcome = logger.stop_logging().unwrap();
        assert_eq!(outcome.session.samples.len(), 2);
        assert_eq!(outcome.session.samples[0].timestamp_s, 0.0);
        assert_eq!(outcome.session.samples[1].timestamp_s, 1.0);
        let summary = outcome.summary.unwrap();
        assert_eq!(summary.mean_power_w, 500.0);
        assert_eq!(outcome.status(), "ok");
    }

    #[test]
    fn samples_while_idle_are_dropped() {
        let (logger, _clock, dir) = test_logger();
        logger.append_sample(sample_at(0.5, 100.0));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert_eq!(logger.state().mode, LoggerMode::Idle);
    }

    #[test]
    fn short_session_reports_too_few_samples() {
        let (logger, _clock, _dir) = test_logger();
        logger.start_logging(None).unwrap();
        logger.append_sample(sample_at(0.0, 100.0));
        let outcome = logger.stop_logging().unwrap();
        assert!(outcome.summary.is_none());
        assert_eq!(outcome.status(), "too few samples");
        assert_eq!(outcome.session.samples.len(), 1);
    }

    #[test]
    fn each_session_gets_its_own_file() {
        let (logger, clock, dir) = test_logger();
        for i in 0..3 {
            logger.start_logging(Some(&format!("run{i}"))).unwrap();
            clock.advance(std::time::Duration::from_secs(2));
            logger.stop_logging().unwrap();
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
        assert_eq!(logger.state().sessions_completed, 3);
    }

    #[test]
    fn command_state_machine_safety_over_interleavings() {
        // From any interleaving of valid and invalid lines: logging mode
        // iff an unclosed session exists, and never two open sessions.
        let (logger, _clock, dir) = test_logger();
        let script = [
            "start", "start", "stop", "stop", "garbage", "start a", "noise x", "stop", "start",
            "stop extra", "stop", "stop",
        ];
        let mut expected_open = false;
        let mut expected_files = 0;
        for line in script {
            match parse_command_line(line) {
                Some(cmd) => {
                    let outcome = logger.apply_command(&cmd).unwrap();
                    match (&cmd, expected_open) {
                        (ControlCommand::Start { .. }, false) => {
                            expected_open = true;
                            expected_files += 1;
                            assert!(matches!(outcome, CommandOutcome::Started { .. }));
                        }
                        (ControlCommand::Start { .. }, true) => {
                            assert_eq!(outcome, CommandOutcome::IgnoredAlreadyLogging);
                        }
                        (ControlCommand::Stop, true) => {
                            expected_open = false;
                            assert!(matches!(outcome, CommandOutcome::Stopped { .. }));
                        }
                        (ControlCommand::Stop, false) => {
                            assert_eq!(outcome, CommandOutcome::IgnoredNotLogging);
                        }
                    }
                }
                None => { /* ignored, state unchanged */ }
            }
            let state = logger.state();
            assert_eq!(
                state.mode == LoggerMode::Logging,
                expected_open,
                "after line {line:?}"
            );
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), expected_files);
    }

    #[test]
    fn labels_are_sanitized_for_filenames() {
        assert_eq!(sanitize_label("apache 70/pct"), "apache_70_pct");
        assert_eq!(sanitize_label(""), "session");
        assert_eq!(sanitize_label("ok-1.2_x"), "ok-1.2_x");
    }
}
