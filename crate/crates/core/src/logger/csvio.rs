//! Session CSV persistence. The column order and header names are a wire
//! contract; floats are rendered as the shortest decimal that round-trips
//! (always with a decimal point, e.g. `230.0`), lines end with LF.

use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::metrology::{ElectricalSample, SessionRecord};

pub const CSV_HEADER: &str = "timestamp_s,voltage_V,current_A,frequency_Hz,power_factor,\
active_power_W,reactive_power_var,apparent_power_VA,active_energy_J,reactive_energy_vars";

const COLUMN_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("header mismatch: expected {expected:?}, got {got:?}")]
    HeaderMismatch { expected: String, got: String },
    #[error("line {line}: expected {COLUMN_COUNT} fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}, field {field}: {source}")]
    BadNumber {
        line: usize,
        field: usize,
        source: std::num::ParseFloatError,
    },
}

fn format_field(value: f64) -> String {
    // Debug formatting of f64 is the shortest representation that parses
    // back to the same bits and always keeps a decimal point.
    format!("{value:?}")
}

pub fn format_row(sample: &ElectricalSample) -> String {
    [
        sample.timestamp_s,
        sample.voltage_v,
        sample.current_a,
        sample.frequency_hz,
        sample.power_factor,
        sample.active_power_w,
        sample.reactive_power_var,
        sample.apparent_power_va,
        sample.active_energy_j,
        sample.reactive_energy_vars,
    ]
    .map(format_field)
    .join(",")
}

pub fn write_header(writer: &mut impl Write) -> io::Result<()> {
    writer.write_all(CSV_HEADER.as_bytes())?;
    writer.write_all(b"\n")
}

pub fn write_row(writer: &mut impl Write, sample: &ElectricalSample) -> io::Result<()> {
    writer.write_all(format_row(sample).as_bytes())?;
    writer.write_all(b"\n")
}

/// Writes a complete session file: one header row, then one row per sample.
pub fn write_csv(writer: &mut impl Write, samples: &[ElectricalSample]) -> io::Result<()> {
    write_header(writer)?;
    for sample in samples {
        write_row(writer, sample)?;
    }
    writer.flush()
}

pub fn write_csv_file(path: impl AsRef<Path>, samples: &[ElectricalSample]) -> io::Result<()> {
    let mut file = io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(&mut file, samples)
}

/// Parses a session CSV back into samples. Leading `#` comment lines are
/// tolerated; the header itself must match byte-for-byte.
pub fn parse_csv(reader: impl BufRead) -> Result<Vec<ElectricalSample>, CsvError> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if line.starts_with('#') {
                    continue;
                }
                break line;
            }
            None => return Err(CsvError::MissingHeader),
        }
    };
    if header != CSV_HEADER {
        return Err(CsvError::HeaderMismatch {
            expected: CSV_HEADER.to_string(),
            got: header,
        });
    }

    let mut samples = Vec::new();
    for (index, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let line_no = index + 1;
        let mut fields = [0.0f64; COLUMN_COUNT];
        let mut count = 0;
        for (i, field) in line.split(',').enumerate() {
            if i >= COLUMN_COUNT {
                count = i + 1;
                continue;
            }
            fields[i] = field.parse().map_err(|source| CsvError::BadNumber {
                line: line_no,
                field: i + 1,
                source,
            })?;
            count = i + 1;
        }
        if count != COLUMN_COUNT {
            return Err(CsvError::FieldCount {
                line: line_no,
                got: count,
            });
        }
        samples.push(ElectricalSample {
            timestamp_s: fields[0],
            voltage_v: fields[1],
            current_a: fields[2],
            frequency_hz: fields[3],
            power_factor: fields[4],
            active_power_w: fields[5],
            reactive_power_var: fields[6],
            apparent_power_va: fields[7],
            active_energy_j: fields[8],
            reactive_energy_vars: fields[9],
        });
    }
    Ok(samples)
}

pub fn parse_csv_file(path: impl AsRef<Path>) -> Result<Vec<ElectricalSample>, CsvError> {
    let file = io::BufReader::new(std::fs::File::open(path)?);
    parse_csv(file)
}

/// Reconstructs a session record from a CSV file, recovering the label from
/// the `<label>-<timestamp>-<id>.csv` naming rule.
pub fn session_from_csv_file(path: impl AsRef<Path>) -> Result<SessionRecord, CsvError> {
    let path = path.as_ref();
    let samples = parse_csv_file(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("session");
    let (label, session_id) = split_session_filename(stem);
    let interval = if samples.len() >= 2 {
        (samples[samples.len() - 1].timestamp_s - samples[0].timestamp_s)
            / (samples.len() - 1) as f64
    } else {
        0.0
    };
    let mut record = SessionRecord::new(session_id, interval);
    record.samples = samples;
    record
        .metadata
        .insert("label".to_string(), label.to_string());
    Ok(record)
}

/// Splits `<label>-<timestamp>-<id>` from the right, so labels may contain
/// dashes. Returns `(label, id)`; degenerate names fall back to the stem.
pub fn split_session_filename(stem: &str) -> (&str, &str) {
    let mut parts = stem.rsplitn(3, '-');
    let id = parts.next().unwrap_or(stem);
    let _timestamp = parts.next();
    match parts.next() {
        Some(label) if !label.is_empty() => (label, id),
        _ => (stem, stem),
    }
}
