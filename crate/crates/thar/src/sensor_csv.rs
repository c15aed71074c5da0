//! Synchronized sensor log CSV: `timestamp_ms`, 791 channel columns, `label`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thar_core::datapipe::{ChannelGroup, Recording, SensorFrame, NUM_CHANNELS, THERMAL_COLS};
use thar_core::NUM_CLASSES;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("header has {got} columns, expected {expected} (timestamp_ms, 791 channels, label)")]
    HeaderLength { expected: usize, got: usize },
    #[error("header column {index} is `{got}`, expected `{expected}`")]
    HeaderMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} does not increase")]
    NonMonotonic { line: u64, timestamp: f64 },
    #[error("line {line}: label {label} outside 0..15")]
    Label { line: u64, label: u64 },
}

/// Column names in file order.
pub fn header() -> Vec<String> {
    let mut h = vec!["timestamp_ms".to_string()];
    for axis in ["x", "y", "z"] {
        h.push(format!("accel_{axis}"));
    }
    for axis in ["x", "y", "z"] {
        h.push(format!("gyro_{axis}"));
    }
    for axis in ["x", "y", "z"] {
        h.push(format!("mag_{axis}"));
    }
    h.push("barometer".into());
    h.push("distance".into());
    h.extend((0..2).map(|i| format!("gas_{i}")));
    h.extend((0..10).map(|i| format!("optical_{i}")));
    h.extend(
        (0..NUM_CHANNELS - 23)
            .map(|i| format!("thermal_r{:02}_c{:02}", i / THERMAL_COLS, i % THERMAL_COLS)),
    );
    h.push("label".into());
    h
}

fn check_header(got: &csv::StringRecord) -> Result<(), IngestError> {
    let expected = header();
    if got.len() != expected.len() {
        return Err(IngestError::HeaderLength {
            expected: expected.len(),
            got: got.len(),
        });
    }
    for (index, (e, g)) in expected.iter().zip(got.iter()).enumerate() {
        if e != g.trim() {
            return Err(IngestError::HeaderMismatch {
                index,
                expected: e.clone(),
                got: g.to_string(),
            });
        }
    }
    Ok(())
}

/// Parses a sensor log from any reader.
pub fn read_sensor_csv<R: Read>(reader: R) -> Result<Vec<(SensorFrame, u8)>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let head = rdr.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    check_header(head)?;
    let width = NUM_CHANNELS + 2;
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| IngestError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(IngestError::Parse {
                line,
                message: format!("{} fields, expected {width}", record.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let ts: f64 = field(0).parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("bad timestamp `{}`", field(0)),
        })?;
        if ts <= last || !ts.is_finite() {
            return Err(IngestError::NonMonotonic {
                line,
                timestamp: ts,
            });
        }
        last = ts;
        let mut channels = Vec::with_capacity(NUM_CHANNELS);
        for c in 1..=NUM_CHANNELS {
            let v: f32 = field(c).parse().map_err(|_| IngestError::Parse {
                line,
                message: format!("column {} (`{}`): bad value `{}`", c, header()[c], field(c)),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Parse {
                    line,
                    message: format!("column {c}: non-finite value"),
                });
            }
            channels.push(v);
        }
        let raw = field(width - 1);
        let label: u64 = raw.parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("bad label `{raw}`"),
        })?;
        if label >= NUM_CLASSES as u64 {
            return Err(IngestError::Label { line, label });
        }
        let frame = SensorFrame::new(ts, channels).expect("width checked above");
        out.push((frame, label as u8));
    }
    Ok(out)
}

pub fn ingest_csv(path: &Path) -> Result<Vec<(SensorFrame, u8)>, IngestError> {
    let f = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_sensor_csv(BufReader::new(f))
}

/// Writes a full-width recording; values use the shortest round-trip form.
pub fn write_sensor_csv<W: Write>(mut w: W, rec: &Recording) -> std::io::Result<()> {
    assert_eq!(
        rec.group,
        ChannelGroup::G791,
        "sensor logs carry every channel"
    );
    writeln!(w, "{}", header().join(","))?;
    let mut line = String::with_capacity(8 * NUM_CHANNELS);
    for i in 0..rec.len() {
        line.clear();
        line.push_str(&rec.timestamps_ms[i].to_string());
        for v in rec.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push(',');
        line.push_str(&rec.labels[i].to_string());
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn write_sensor_file(path: &Path, rec: &Recording) -> std::io::Result<()> {
    write_sensor_csv(BufWriter::new(File::create(path)?), rec)
}
