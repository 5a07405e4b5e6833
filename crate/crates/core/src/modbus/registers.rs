//! The shared register map: which holding registers carry which electrical
//! quantity, at what scale. Client and emulator must agree on it bit-exactly,
//! so the map is data — a versioned TOML file with one entry per quantity —
//! and both sides load the same schema.
//!
//! Scaling rule: `value = raw * scale`, where `raw` is the register content
//! interpreted big-endian (high word first for 2-word quantities) and
//! sign-extended when the entry is marked `signed`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegisterMapError {
    #[error("quantity {0} missing from register map")]
    MissingQuantity(Quantity),
    #[error("quantity {0}: register count must be 1 or 2, got {1}")]
    BadWordCount(Quantity, u8),
    #[error("quantity {0}: scale must be positive, got {1}")]
    BadScale(Quantity, f64),
    #[error("quantities {0} and {1} overlap in register ranges")]
    Overlap(Quantity, Quantity),
    #[error("failed to read register map: {0}")]
    Io(#[from] std::io::Error),
    #[error("register map parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

/// The nine quantities served by the meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Voltage,
    Current,
    Frequency,
    PowerFactor,
    ActivePower,
    ReactivePower,
    ApparentPower,
    ActiveEnergy,
    ReactiveEnergy,
}

impl Quantity {
    pub const ALL: [Quantity; 9] = [
        Quantity::Voltage,
        Quantity::Current,
        Quantity::Frequency,
        Quantity::PowerFactor,
        Quantity::ActivePower,
        Quantity::ReactivePower,
        Quantity::ApparentPower,
        Quantity::ActiveEnergy,
        Quantity::ReactiveEnergy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::Voltage => "voltage",
            Quantity::Current => "current",
            Quantity::Frequency => "frequency",
            Quantity::PowerFactor => "power_factor",
            Quantity::ActivePower => "active_power",
            Quantity::ReactivePower => "reactive_power",
            Quantity::ApparentPower => "apparent_power",
            Quantity::ActiveEnergy => "active_energy",
            Quantity::ReactiveEnergy => "reactive_energy",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One quantity's register assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterEntry {
    pub address: u16,
    /// 1 or 2 sixteen-bit registers, high word first.
    pub words: u8,
    /// Engineering units per least-significant bit; must be positive.
    pub scale: f64,
    #[serde(default)]
    pub signed: bool,
    #[serde(default)]
    pub unit: String,
}

impl RegisterEntry {
    fn end(&self) -> u16 {
        self.address + self.words as u16
    }

    /// Encodes an engineering value into register words, rounding to the
    /// nearest LSB and saturating at the representable range.
    pub fn encode(&self, value: f64) -> Vec<u16> {
        let raw = (value / self.scale).round();
        match (self.words, self.signed) {
            (1, false) => vec![raw.clamp(0.0, u16::MAX as f64) as u16],
            (1, true) => vec![(raw.clamp(i16::MIN as f64, i16::MAX as f64) as i16) as u16],
            (2, false) => {
                let raw = raw.clamp(0.0, u32::MAX as f64) as u32;
                vec![(raw >> 16) as u16, (raw & 0xFFFF) as u16]
            }
            (2, true) => {
                let raw = raw.clamp(i32::MIN as f64, i32::MAX as f64) as i32 as u32;
                vec![(raw >> 16) as u16, (raw & 0xFFFF) as u16]
            }
            _ => unreachable!("word count validated on load"),
        }
    }

    /// Decodes register words back into an engineering value.
    pub fn decode(&self, words: &[u16]) -> f64 {
        let raw: i64 = match (self.words, self.signed) {
            (1, false) => words[0] as i64,
            (1, true) => words[0] as i16 as i64,
            (2, false) => ((words[0] as u32) << 16 | words[1] as u32) as i64,
            (2, true) => ((words[0] as u32) << 16 | words[1] as u32) as i32 as i64,
            _ => unreachable!("word count validated on load"),
        };
        raw as f64 * self.scale
    }
}

/// All nine quantities' register assignments, validated for non-overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterMap {
    entries: BTreeMap<Quantity, RegisterEntry>,
}

/// On-disk schema: a version marker and one table per quantity.
#[derive(Debug, Serialize, Deserialize)]
struct RegisterMapFile {
    version: u32,
    voltage: RegisterEntry,
    current: RegisterEntry,
    frequency: RegisterEntry,
    power_factor: RegisterEntry,
    active_power: RegisterEntry,
    reactive_power: RegisterEntry,
    apparent_power: RegisterEntry,
    active_energy: RegisterEntry,
    reactive_energy: RegisterEntry,
}

fn entry(address: u16, words: u8, scale: f64, signed: bool, unit: &str) -> RegisterEntry {
    RegisterEntry {
        address,
        words,
        scale,
        signed,
        unit: unit.to_string(),
    }
}

impl RegisterMap {
    /// The project default map, shared verbatim with the emulator. The real
    /// device's register layout is proprietary, so this documented layout is
    /// the wire contract for this toolkit:
    ///
    /// | quantity        | addr | words | scale | signed | unit |
    /// |-----------------|------|-------|-------|--------|------|
    /// | voltage         | 0    | 1     | 0.1   | no     | V    |
    /// | current         | 1    | 1     | 0.001 | no     | A    |
    /// | frequency       | 2    | 1     | 0.01  | no     | Hz   |
    /// | power_factor    | 3    | 1     | 0.001 | yes    | —    |
    /// | active_power    | 4    | 2     | 0.1   | yes    | W    |
    /// | reactive_power  | 6    | 2     | 0.1   | yes    | var  |
    /// | apparent_power  | 8    | 2     | 0.1   | yes    | VA   |
    /// | active_energy   | 10   | 2     | 1.0   | no     | J    |
    /// | reactive_energy | 12   | 2     | 1.0   | yes    | vars |
    pub fn project_default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(Quantity::Voltage, entry(0, 1, 0.1, false, "V"));
        entries.insert(Quantity::Current, entry(1, 1, 0.001, false, "A"));
        entries.insert(Quantity::Frequency, entry(2, 1, 0.01, false, "Hz"));
        entries.insert(Quantity::PowerFactor, entry(3, 1, 0.001, true, ""));
        entries.insert(Quantity::ActivePower, entry(4, 2, 0.1, true, "W"));
        entries.insert(Quantity::ReactivePower, entry(6, 2, 0.1, true, "var"));
        entries.insert(Quantity::ApparentPower, entry(8, 2, 0.1, true, "VA"));
        entries.insert(Quantity::ActiveEnergy, entry(10, 2, 1.0, false, "J"));
        entries.insert(Quantity::ReactiveEnergy, entry(12, 2, 1.0, true, "vars"));
        let map = Self { entries };
        map.validate().expect("default map is valid");
        map
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegisterMapError> {
        let file: RegisterMapFile = toml::from_str(text)?;
        let mut entries = BTreeMap::new();
        entries.insert(Quantity::Voltage, file.voltage);
        entries.insert(Quantity::Current, file.current);
        entries.insert(Quantity::Frequency, file.frequency);
        entries.insert(Quantity::PowerFactor, file.power_factor);
        entries.insert(Quantity::ActivePower, file.active_power);
        entries.insert(Quantity::ReactivePower, file.reactive_power);
        entries.insert(Quantity::ApparentPower, file.apparent_power);
        entries.insert(Quantity::ActiveEnergy, file.active_energy);
        entries.insert(Quantity::ReactiveEnergy, file.reactive_energy);
        let map = Self { entries };
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegisterMapError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), RegisterMapError> {
        for quantity in Quantity::ALL {
            let entry = self
                .entries
                .get(&quantity)
                .ok_or(RegisterMapError::MissingQuantity(quantity))?;
            if !(1..=2).contains(&entry.words) {
                return Err(RegisterMapError::BadWordCount(quantity, entry.words));
            }
            if !(entry.scale > 0.0) {
                return Err(RegisterMapError::BadScale(quantity, entry.scale));
            }
        }
        let mut spans: Vec<(Quantity, u16, u16)> = self
            .entries
            .iter()
            .map(|(q, e)| (*q, e.address, e.end()))
            .collect();
        spans.sort_by_key(|(_, start, _)| *start);
        for pair in spans.windows(2) {
            if pair[1].1 < pair[0].2 {
                return Err(RegisterMapError::Overlap(pair[0].0, pair[1].0));
            }
        }
        Ok(())
    }

    pub fn entry(&self, quantity: Quantity) -> &RegisterEntry {
        &self.entries[&quantity]
    }

    /// One register past the highest mapped address; the emulator sizes its
    /// register image from this.
    pub fn image_len(&self) -> usize {
        self.entries.values().map(|e| e.end()).max().unwrap_or(0) as usize
    }

    /// True when every register in `[start, start + count)` is covered by
    /// some mapped quantity.
    pub fn covers_range(&self, start: u16, count: u16) -> bool {
        let end = start as u32 + count as u32;
        (start as u32..end).all(|addr| {
            self.entries
                .values()
                .any(|e| (e.address as u32..e.end() as u32).contains(&addr))
        })
    }

    /// The minimal set of read requests covering the whole map: quantities
    /// at contiguous addresses are coalesced into a single request.
    pub fn read_groups(&self) -> Vec<ReadGroup> {
        let mut by_address: Vec<(Quantity, &RegisterEntry)> =
            self.entries.iter().map(|(q, e)| (*q, e)).collect();
        by_address.sort_by_key(|(_, e)| e.address);

        let mut groups: Vec<ReadGroup> = Vec::new();
        for (quantity, entry) in by_address {
            match groups.last_mut() {
                Some(group) if group.start + group.count == entry.address => {
                    group.members.push((quantity, group.count));
                    group.count += entry.words as u16;
                }
                _ => groups.push(ReadGroup {
                    start: entry.address,
                    count: entry.words as u16,
                    members: vec![(quantity, 0)],
                }),
            }
        }
        groups
    }
}

/// One coalesced read request: `members` maps each quantity to its word
/// offset inside the reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadGroup {
    pub start: u16,
    pub count: u16,
    pub members: Vec<(Quantity, u16)>,
}
