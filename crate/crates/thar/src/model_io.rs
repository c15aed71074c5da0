//! Reading and writing `.thar` model files.

use std::fs;
use std::path::{Path, PathBuf};

use thar_core::model_ir::format::{deserialize, serialize_graph, FormatError, ModelFile};
use thar_core::{ModelGraph, QuantizedModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model file not found: {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
}

pub fn load_model(path: &Path) -> Result<ModelFile, ModelIoError> {
    if !path.is_file() {
        return Err(ModelIoError::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    deserialize(&bytes).map_err(|source| ModelIoError::Format {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<u64, ModelIoError> {
    fs::write(path, bytes).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.len() as u64)
}

/// Returns the number of bytes written.
pub fn save_float(path: &Path, graph: &ModelGraph) -> Result<u64, ModelIoError> {
    write(path, &serialize_graph(graph))
}

pub fn save_int8(path: &Path, model: &QuantizedModel) -> Result<u64, ModelIoError> {
    write(path, &model.to_bytes())
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<u64, ModelIoError> {
    write(path, &model.to_bytes())
}
