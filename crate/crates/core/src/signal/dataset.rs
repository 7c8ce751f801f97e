use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    add_awgn, apply_channel, modulate, normalize_power, ChannelModel, ComplexSignal,
    ModulationScheme,
};
use crate::error::{Error, Result};
use crate::io::{write_dataset, DatasetHandle, DatasetMeta, Record, SCHEMA_VERSION};
use crate::rng::derive_seed;

/// SNR values in whole dB, either listed or as an inclusive range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrGrid {
    List(Vec<i16>),
    Range { start: i16, stop: i16, step: i16 },
}

impl SnrGrid {
    pub fn values(&self) -> Result<Vec<i16>> {
        match self {
            SnrGrid::List(v) => Ok(v.clone()),
            &SnrGrid::Range { start, stop, step } => {
                if step <= 0 || stop < start {
                    return Err(Error::InvalidConfig(format!(
                        "bad SNR range {start}..={stop} step {step}"
                    )));
                }
                Ok((start..=stop).step_by(step as usize).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub schemes: Vec<String>,
    pub snr_db: SnrGrid,
    /// Channel spec names, e.g. `awgn`, `rayleigh4`, `rician6`.
    pub channels: Vec<String>,
    pub samples_per_cell: usize,
    #[serde(default = "default_signal_len")]
    pub signal_len: usize,
}

fn default_signal_len() -> usize {
    128
}

struct Resolved {
    schemes: Vec<ModulationScheme>,
    snrs: Vec<i16>,
    channels: Vec<ChannelModel>,
}

impl DatasetConfig {
    /// 128-sample records over the −6..12 dB grid used with short bursts.
    pub fn radioml_style(schemes: &[&str], samples_per_cell: usize) -> Self {
        Self {
            schemes: schemes.iter().map(|s| s.to_string()).collect(),
            snr_db: SnrGrid::Range {
                start: -6,
                stop: 12,
                step: 2,
            },
            channels: vec!["awgn".into()],
            samples_per_cell,
            signal_len: 128,
        }
    }

    /// 1024-sample records over −20..18 dB and five channel conditions.
    pub fn hisar_style(schemes: &[&str], samples_per_cell: usize) -> Self {
        Self {
            schemes: schemes.iter().map(|s| s.to_string()).collect(),
            snr_db: SnrGrid::Range {
                start: -20,
                stop: 18,
                step: 2,
            },
            channels: ["ideal", "static4", "rayleigh4", "rician4", "nakagami4"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            samples_per_cell,
            signal_len: 1024,
        }
    }

    fn resolve(&self) -> Result<Resolved> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.schemes.is_empty() || self.channels.is_empty() || self.samples_per_cell == 0 {
            return bad("schemes, channels and samples_per_cell must be non-empty");
        }
        if self.signal_len < 16 {
            return bad("signal_len must be at least 16");
        }
        let schemes = self
            .schemes
            .iter()
            .map(|s| ModulationScheme::parse(s))
            .collect::<Result<Vec<_>>>()?;
        for (i, s) in schemes.iter().enumerate() {
            if schemes[..i].contains(s) {
                return bad(&format!("duplicate scheme {s}"));
            }
        }
        let snrs = self.snr_db.values()?;
        if snrs.is_empty() {
            return bad("empty SNR grid");
        }
        let channels = self
            .channels
            .iter()
            .map(|c| ChannelModel::from_spec(c))
            .collect::<Result<Vec<_>>>()?;
        if channels.len() > 256 || schemes.len() > u16::MAX as usize {
            return bad("too many channels or schemes");
        }
        Ok(Resolved {
            schemes,
            snrs,
            channels,
        })
    }

    pub fn count(&self) -> usize {
        let snrs = self.snr_db.values().map(|v| v.len()).unwrap_or(0);
        self.schemes.len() * snrs * self.channels.len() * self.samples_per_cell
    }
}

/// Record `index` in generation order: class-major, then SNR, channel and
/// example. Returns the received signal plus its (class, channel) ids.
pub fn synthesize_record(
    config: &DatasetConfig,
    seed: u64,
    index: usize,
) -> Result<(ComplexSignal, usize, usize)> {
    let r = config.resolve()?;
    synthesize(&r, config, seed, index)
}

fn synthesize(
    r: &Resolved,
    config: &DatasetConfig,
    seed: u64,
    index: usize,
) -> Result<(ComplexSignal, usize, usize)> {
    let per_channel = config.samples_per_cell;
    let per_snr = per_channel * r.channels.len();
    let per_class = per_snr * r.snrs.len();
    let class = index / per_class;
    let snr = r.snrs[(index % per_class) / per_snr];
    let ch = (index % per_snr) / per_channel;
    let scheme = &r.schemes[class];

    let sig_seed = derive_seed(seed, &[index as u64]);
    let sps = scheme.samples_per_symbol();
    let symbols = config.signal_len.div_ceil(sps).max(8);
    let mut clean = modulate(scheme, symbols, derive_seed(sig_seed, &[0]))?;
    clean.samples.truncate(config.signal_len);
    normalize_power(&mut clean.samples);
    let faded = apply_channel(&clean, &r.channels[ch], derive_seed(sig_seed, &[1]))?;
    let mut rx = add_awgn(&faded, snr as f64, derive_seed(sig_seed, &[2]));
    rx.seed = sig_seed;
    Ok((rx, class, ch))
}

/// Generate every record in memory. Parallel and serial runs produce
/// identical output because each record owns its seed stream.
pub fn generate_records(config: &DatasetConfig, seed: u64) -> Result<(DatasetMeta, Vec<Record>)> {
    let r = config.resolve()?;
    let n = config.count();
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let (sig, class, ch) = synthesize(&r, config, seed, i)?;
            let len = config.signal_len;
            let mut iq = vec![0f32; 2 * len];
            for (k, s) in sig.samples.iter().enumerate() {
                iq[k] = s.re as f32;
                iq[len + k] = s.im as f32;
            }
            Ok(Record {
                iq,
                label: class as u16,
                snr_db: sig.snr_db as i16,
                channel: ch as u8,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        n_samples: config.samples_per_cell,
        signal_len: config.signal_len,
        classes: r.schemes.iter().map(|s| s.name().to_string()).collect(),
        snr_grid: r.snrs.clone(),
        channels: r.channels.iter().map(|c| c.spec_name()).collect(),
        count: n,
        crc32: BTreeMap::new(),
    };
    Ok((meta, records))
}

/// Generate and persist a dataset under `out`.
pub fn generate_dataset(config: &DatasetConfig, seed: u64, out: &Path) -> Result<DatasetHandle> {
    let (meta, records) = generate_records(config, seed)?;
    write_dataset(&records, &meta, out)
}
