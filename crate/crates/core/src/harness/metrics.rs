//! Per-iteration metrics and tabular export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::orbit::PassProfile;
use crate::{Error, Result};

/// One SSB period of an end-to-end run. Optional fields are empty when the
/// corresponding step did not happen (no detection, UE not yet configured,
/// uplink not found at the gNB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Transmit time of the SSB at the gNB.
    pub t_s: f64,
    pub detection: u8,
    pub branch_cfo_hz: Option<f64>,
    pub total_cfo_hz: Option<f64>,
    /// Downlink Doppler plus UE oscillator offset, at mid-symbol arrival.
    pub true_cfo_hz: f64,
    pub residual_ul_cfo_hz: Option<f64>,
    /// Uplink arrival minus `t_s + k_offset`, in uplink samples.
    pub ul_timing_error_samples: Option<f64>,
    pub buffer_delay_s: f64,
    /// 1 when a SIB19 was applied in this period.
    pub sib19: u8,
    /// True round-trip delay of this period, on the same 2^-40 s grid the UE
    /// uses for its buffer arithmetic.
    pub rtt_s: f64,
    pub k_offset_s: f64,
}

/// Column order of the CSV export.
pub const CSV_HEADER: [&str; 11] = [
    "t_s",
    "detection",
    "branch_cfo_hz",
    "total_cfo_hz",
    "true_cfo_hz",
    "residual_ul_cfo_hz",
    "ul_timing_error_samples",
    "buffer_delay_s",
    "sib19",
    "rtt_s",
    "k_offset_s",
];

/// Rows with strictly increasing `t_s`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<MetricsRow>", into = "Vec<MetricsRow>")]
pub struct Metrics {
    rows: Vec<MetricsRow>,
}

impl TryFrom<Vec<MetricsRow>> for Metrics {
    type Error = Error;

    fn try_from(rows: Vec<MetricsRow>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<Metrics> for Vec<MetricsRow> {
    fn from(m: Metrics) -> Self {
        m.rows
    }
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t_s > last.t_s) {
                return Err(Error::domain(format!(
                    "metrics time {} does not follow {}",
                    row.t_s, last.t_s
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl std::fmt::Display for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} rows", self.rows.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `rows` as CSV under `header` (always emitted, even with no rows) or
/// as a JSON array of objects.
pub fn write_table<T: Serialize>(
    rows: &[T],
    header: &[&str],
    format: Format,
    path: &Path,
) -> Result<()> {
    let mut out = create(path)?;
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(&mut out);
            w.write_record(header).map_err(|e| format_err(path, e))?;
            for r in rows {
                w.serialize(r).map_err(|e| format_err(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows).map_err(|e| format_err(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table<T: DeserializeOwned>(format: Format, path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Csv => csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| format_err(path, e)),
        Format::Json => serde_json::from_reader(reader).map_err(|e| format_err(path, e)),
    }
}

pub fn export_metrics(m: &Metrics, format: Format, path: &Path) -> Result<()> {
    write_table(m.rows(), &CSV_HEADER, format, path)
}

pub fn import_metrics(format: Format, path: &Path) -> Result<Metrics> {
    Metrics::from_rows(read_table(format, path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub t_s: f64,
    pub slant_range_m: f64,
    pub elevation_rad: f64,
    pub delay_s: f64,
    pub radial_velocity_ms: f64,
}

pub const PROFILE_HEADER: [&str; 5] = [
    "t_s",
    "slant_range_m",
    "elevation_rad",
    "delay_s",
    "radial_velocity_ms",
];

pub fn profile_rows(p: &PassProfile) -> Vec<ProfileRow> {
    (0..p.len())
        .map(|i| ProfileRow {
            t_s: p.t_s()[i],
            slant_range_m: p.slant_range_m()[i],
            elevation_rad: p.elevation_rad()[i],
            delay_s: p.delay_s()[i],
            radial_velocity_ms: p.radial_velocity_ms()[i],
        })
        .collect()
}

pub fn export_profile(p: &PassProfile, format: Format, path: &Path) -> Result<()> {
    write_table(&profile_rows(p), &PROFILE_HEADER, format, path)
}
