//! On-disk formats: the flat dataset layout, the CSV import shim and
//! model directories. Weight files live with the tensor core
//! ([`crate::tensor::serialize`]).

mod dataset;
mod import;
mod model;

pub use dataset::{
    open_dataset, write_dataset, DatasetHandle, DatasetMeta, Record, SCHEMA_VERSION,
};
pub use import::import_csv;
pub use model::{load_model, save_model, ModelSpec, MODEL_FILE, WEIGHTS_FILE};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Write pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
