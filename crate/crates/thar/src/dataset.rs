//! Dataset directories: one sensor log per subject session plus `manifest.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thar_core::datapipe::{Recording, SynthDataset};
use thiserror::Error;

use crate::sensor_csv::{ingest_csv, write_sensor_file, IngestError};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset manifest not found: {0}")]
    MissingManifest(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {message}")]
    Recording { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: u16,
    pub session: u8,
    /// Relative to the manifest's directory.
    pub file: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn recording_file_name(subject: u16, session: u8) -> String {
    format!("subject{subject:02}_session{session:02}.csv")
}

/// Writes every recording and the manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    recordings: &[Recording],
) -> Result<Vec<ManifestEntry>, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let file = recording_file_name(rec.subject, rec.session);
        let path = dir.join(&file);
        write_sensor_file(&path, rec).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            subject: rec.subject,
            session: rec.session,
            file,
        });
    }
    let path = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&path).map_err(|e| DatasetError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    for e in &entries {
        w.serialize(e).map_err(|e| DatasetError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(entries)
}

pub fn write_synth_dataset(
    dir: &Path,
    ds: &SynthDataset,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    write_dataset(dir, &ds.recordings)
}

/// Accepts the dataset directory or the manifest itself.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let path = manifest_path(path);
    if !path.is_file() {
        return Err(DatasetError::MissingManifest(path));
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| DatasetError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e: csv::Error| DatasetError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(DatasetError::Manifest {
            path,
            message: "no recordings listed".into(),
        });
    }
    Ok(out)
}

/// Loads every recording listed in the manifest, in manifest order.
pub fn load_dataset(path: &Path) -> Result<Vec<Recording>, DatasetError> {
    let manifest = manifest_path(path);
    let entries = read_manifest(&manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let path = root.join(&e.file);
        if !path.is_file() {
            return Err(DatasetError::Recording {
                path,
                message: "listed in manifest but missing".into(),
            });
        }
        let rows = ingest_csv(&path).map_err(|source| DatasetError::Ingest {
            path: path.clone(),
            source,
        })?;
        let (frames, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let rec = Recording::from_frames(e.subject, e.session, &frames, labels).map_err(|err| {
            DatasetError::Recording {
                path: path.clone(),
                message: err.to_string(),
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}
