use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, read_json, write_json};
use crate::error::{Error, Result};
use crate::meta::ReprConfig;
use crate::net::{Encoder, EncoderConfig};

pub const MODEL_FORMAT: &str = "fsos-model";
pub const MODEL_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Everything needed to rebuild an encoder and feed it: `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderConfig,
    pub repr: ReprConfig,
    pub signal_len: usize,
}

impl ModelSpec {
    pub fn new(encoder: EncoderConfig, repr: ReprConfig, signal_len: usize) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            encoder,
            repr,
            signal_len,
        }
    }
}

/// Write `model.json` and `weights.bin` into `dir`.
pub fn save_model(dir: &Path, spec: &ModelSpec, encoder: &Encoder<f32>) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(MODEL_FILE), spec)?;
    encoder.save_weights(&dir.join(WEIGHTS_FILE))
}

pub fn load_model(dir: &Path) -> Result<(ModelSpec, Encoder<f32>)> {
    let spec: ModelSpec = read_json(&dir.join(MODEL_FILE))?;
    if spec.format != MODEL_FORMAT || spec.version != MODEL_VERSION {
        return Err(Error::CorruptWeights(format!(
            "unsupported model description {} v{}",
            spec.format, spec.version
        )));
    }
    let encoder = Encoder::load(spec.encoder.clone(), &dir.join(WEIGHTS_FILE))?;
    Ok((spec, encoder))
}
