use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{create_dir, read_json, write_json};
use crate::error::{Error, Result};
use crate::signal::{ChannelModel, ComplexSignal, ModulationScheme};

pub const SCHEMA_VERSION: u32 = 1;

const IQ_FILE: &str = "iq.f32";
const LABEL_FILE: &str = "labels.u16";
const SNR_FILE: &str = "snr.i16";
const CHANNEL_FILE: &str = "channel.u8";
const META_FILE: &str = "meta.json";

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    /// Examples per (class, SNR, channel) cell; 0 for imported data.
    pub n_samples: usize,
    pub signal_len: usize,
    pub classes: Vec<String>,
    pub snr_grid: Vec<i16>,
    /// Channel spec names; `channel.u8` indexes into this list.
    pub channels: Vec<String>,
    pub count: usize,
    /// CRC32 (lowercase hex) of every payload file.
    pub crc32: BTreeMap<String, String>,
}

/// One stored example. `iq` holds the I row followed by the Q row.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub iq: Vec<f32>,
    pub label: u16,
    pub snr_db: i16,
    pub channel: u8,
}

/// A loaded, validated dataset.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    root: Option<PathBuf>,
    meta: DatasetMeta,
    iq: Vec<f32>,
    labels: Vec<u16>,
    snrs: Vec<i16>,
    channels: Vec<u8>,
}

fn check_records(records: &[Record], meta: &DatasetMeta) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidConfig(m));
    if meta.classes.is_empty() {
        return bad("dataset has no classes".into());
    }
    if meta.classes.len() > u16::MAX as usize || meta.channels.len() > u8::MAX as usize + 1 {
        return bad("too many classes or channels".into());
    }
    for (i, r) in records.iter().enumerate() {
        if r.iq.len() != 2 * meta.signal_len {
            return bad(format!(
                "record {i} has {} values, expected {}",
                r.iq.len(),
                2 * meta.signal_len
            ));
        }
        if r.label as usize >= meta.classes.len() {
            return bad(format!("record {i} label {} out of range", r.label));
        }
        if r.channel as usize >= meta.channels.len() {
            return bad(format!("record {i} channel {} out of range", r.channel));
        }
    }
    Ok(())
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

impl DatasetHandle {
    /// Build an in-memory dataset (no backing directory).
    pub fn from_records(mut meta: DatasetMeta, records: &[Record]) -> Result<Self> {
        check_records(records, &meta)?;
        meta.count = records.len();
        let payload = Payload::from_records(records);
        meta.crc32 = payload.checksums();
        Ok(Self {
            root: None,
            meta,
            iq: payload.iq,
            labels: payload.labels,
            snrs: payload.snrs,
            channels: payload.channels,
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.meta.signal_len
    }

    pub fn num_classes(&self) -> usize {
        self.meta.classes.len()
    }

    pub fn iq(&self, i: usize) -> &[f32] {
        let n = 2 * self.meta.signal_len;
        &self.iq[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn snr_db(&self, i: usize) -> i16 {
        self.snrs[i]
    }

    pub fn channel_index(&self, i: usize) -> usize {
        self.channels[i] as usize
    }

    pub fn record(&self, i: usize) -> Record {
        Record {
            iq: self.iq(i).to_vec(),
            label: self.labels[i],
            snr_db: self.snrs[i],
            channel: self.channels[i],
        }
    }

    pub fn samples(&self, i: usize) -> Vec<Complex64> {
        let iq = self.iq(i);
        let n = self.meta.signal_len;
        (0..n)
            .map(|k| Complex64::new(iq[k] as f64, iq[n + k] as f64))
            .collect()
    }

    pub fn signal(&self, i: usize) -> Result<ComplexSignal> {
        Ok(ComplexSignal {
            samples: self.samples(i),
            modulation: ModulationScheme::parse(&self.meta.classes[self.label(i)])?,
            snr_db: self.snr_db(i) as f64,
            channel: ChannelModel::from_spec(&self.meta.channels[self.channel_index(i)])?,
            seed: i as u64,
        })
    }

    /// Class id for a (possibly aliased) modulation name.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        let want = ModulationScheme::parse(name).ok();
        self.meta.classes.iter().position(|c| {
            c == name
                || match (&want, ModulationScheme::parse(c)) {
                    (Some(w), Ok(have)) => *w == have,
                    _ => false,
                }
        })
    }

    /// Record indices grouped by class id, in storage order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }
}

struct Payload {
    iq: Vec<f32>,
    labels: Vec<u16>,
    snrs: Vec<i16>,
    channels: Vec<u8>,
}

impl Payload {
    fn from_records(records: &[Record]) -> Self {
        Self {
            iq: records.iter().flat_map(|r| r.iq.iter().copied()).collect(),
            labels: records.iter().map(|r| r.label).collect(),
            snrs: records.iter().map(|r| r.snr_db).collect(),
            channels: records.iter().map(|r| r.channel).collect(),
        }
    }

    fn files(&self) -> [(&'static str, Vec<u8>); 4] {
        [
            (
                IQ_FILE,
                self.iq.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ),
            (
                LABEL_FILE,
                self.labels.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ),
            (
                SNR_FILE,
                self.snrs.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ),
            (CHANNEL_FILE, self.channels.clone()),
        ]
    }

    fn checksums(&self) -> BTreeMap<String, String> {
        self.files()
            .iter()
            .map(|(name, bytes)| (name.to_string(), crc_hex(bytes)))
            .collect()
    }
}

/// Write `meta.json` plus the four payload files under `path`. The count
/// and checksum fields of `meta` are filled in from the records.
pub fn write_dataset(records: &[Record], meta: &DatasetMeta, path: &Path) -> Result<DatasetHandle> {
    let mut handle = DatasetHandle::from_records(meta.clone(), records)?;
    create_dir(path)?;
    let payload = Payload::from_records(records);
    for (name, bytes) in payload.files() {
        let p = path.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    write_json(&path.join(META_FILE), &handle.meta)?;
    handle.root = Some(path.to_path_buf());
    Ok(handle)
}

fn read_payload(
    path: &Path,
    name: &str,
    expected_len: usize,
    meta: &DatasetMeta,
) -> Result<Vec<u8>> {
    let p = path.join(name);
    let bytes = std::fs::read(&p).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::CorruptDataset(format!("missing payload file {name}"))
        } else {
            Error::io(&p, e)
        }
    })?;
    if bytes.len() != expected_len {
        return Err(Error::CorruptDataset(format!(
            "{name} holds {} bytes, expected {expected_len}",
            bytes.len()
        )));
    }
    let want = meta
        .crc32
        .get(name)
        .ok_or_else(|| Error::CorruptDataset(format!("no checksum recorded for {name}")))?;
    let got = crc_hex(&bytes);
    if !want.eq_ignore_ascii_case(&got) {
        return Err(Error::CorruptDataset(format!(
            "{name} checksum {got} != {want}"
        )));
    }
    Ok(bytes)
}

/// Open and fully validate a dataset directory.
pub fn open_dataset(path: &Path) -> Result<DatasetHandle> {
    let meta_path = path.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::DatasetNotFound(path.to_path_buf()));
    }
    let raw: serde_json::Value = read_json(&meta_path)?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != SCHEMA_VERSION {
        return Err(Error::UnsupportedSchema(version));
    }
    let meta: DatasetMeta = serde_json::from_value(raw).map_err(|e| Error::json(&meta_path, e))?;
    let n = meta.count;
    let iq = read_payload(path, IQ_FILE, n * 2 * meta.signal_len * 4, &meta)?;
    let labels = read_payload(path, LABEL_FILE, n * 2, &meta)?;
    let snrs = read_payload(path, SNR_FILE, n * 2, &meta)?;
    let channels = read_payload(path, CHANNEL_FILE, n, &meta)?;
    let handle = DatasetHandle {
        root: Some(path.to_path_buf()),
        iq: iq
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        labels: labels
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect(),
        snrs: snrs
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect(),
        channels,
        meta,
    };
    if handle
        .labels
        .iter()
        .any(|&l| l as usize >= handle.meta.classes.len())
        || handle
            .channels
            .iter()
            .any(|&c| c as usize >= handle.meta.channels.len())
    {
        return Err(Error::CorruptDataset(
            "label or channel index out of range".into(),
        ));
    }
    Ok(handle)
}
