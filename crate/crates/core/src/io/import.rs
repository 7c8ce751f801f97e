use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use super::dataset::{write_dataset, DatasetHandle, DatasetMeta, Record, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::signal::{ChannelModel, ModulationScheme};

/// Convert externally produced arrays into the dataset format.
///
/// Each non-empty line is `label,snr_db,i0,q0,i1,q1,...` with exactly
/// `signal_len` complex pairs. Lines starting with `#` are skipped. Class
/// ids follow first appearance; labels must be modulation names.
pub fn import_csv<R: BufRead>(
    reader: R,
    signal_len: usize,
    channel: &str,
    out: &Path,
) -> Result<DatasetHandle> {
    let channel = ChannelModel::from_spec(channel)?.spec_name();
    let mut classes: Vec<String> = Vec::new();
    let mut snrs = std::collections::BTreeSet::new();
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(out, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::InvalidConfig(format!("import line {}: {m}", lineno + 1));
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().ok_or_else(|| bad("missing label"))?;
        let name = ModulationScheme::parse(label)?.name().to_string();
        let snr: i16 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad snr"))?;
        let values: Vec<f32> = fields
            .map(|f| f.parse::<f32>().map_err(|_| bad("bad sample value")))
            .collect::<Result<_>>()?;
        if values.len() != 2 * signal_len {
            return Err(bad(&format!(
                "{} values, expected {}",
                values.len(),
                2 * signal_len
            )));
        }
        let label = match classes.iter().position(|c| *c == name) {
            Some(i) => i,
            None => {
                classes.push(name);
                classes.len() - 1
            }
        };
        let mut iq = vec![0f32; 2 * signal_len];
        for k in 0..signal_len {
            iq[k] = values[2 * k];
            iq[signal_len + k] = values[2 * k + 1];
        }
        snrs.insert(snr);
        records.push(Record {
            iq,
            label: label as u16,
            snr_db: snr,
            channel: 0,
        });
    }
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        n_samples: 0,
        signal_len,
        classes,
        snr_grid: snrs.into_iter().collect(),
        channels: vec![channel],
        count: records.len(),
        crc32: BTreeMap::new(),
    };
    write_dataset(&records, &meta, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imports_interleaved_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let csv = "# label,snr,pairs\nQAM16,10,1,2,3,4\nBPSK,-2,0.5,0,-0.5,0\nqam16,10,0,0,1,1\n";
        let h = import_csv(csv.as_bytes(), 2, "awgn", dir.path()).unwrap();
        assert_eq!(h.meta().classes, vec!["16QAM", "BPSK"]);
        assert_eq!(h.len(), 3);
        assert_eq!(h.iq(0), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(h.label(2), 0);
        assert_eq!(h.meta().snr_grid, vec![-2, 10]);
    }

    #[test]
    fn rejects_wrong_pair_count() {
        let dir = tempfile::tempdir().unwrap();
        assert!(import_csv("BPSK,0,1,2,3".as_bytes(), 2, "awgn", dir.path()).is_err());
        assert!(import_csv("NOPE,0,1,2,3,4".as_bytes(), 2, "awgn", dir.path()).is_err());
    }
}
