use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DatasetHandle;
use crate::net::INPUT_ROWS;
use crate::repr::{to_multisequence, WelchParams};

/// How records become encoder inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub welch: WelchParams,
    /// Standardize every row to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            welch: WelchParams::default(),
            standardize: true,
        }
    }
}

/// Precomputed encoder inputs ([5, N] per record) for a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    rows: Vec<f32>,
    labels: Vec<usize>,
    snrs: Vec<i16>,
    signal_len: usize,
}

impl FeatureBank {
    pub fn from_dataset(ds: &DatasetHandle, cfg: &ReprConfig) -> Result<Self> {
        let n = ds.signal_len();
        cfg.welch.validate(n)?;
        let per: Vec<Vec<f32>> = (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let ms = to_multisequence(&ds.signal(i)?, &cfg.welch)?;
                Ok(ms
                    .encoder_rows(cfg.standardize)
                    .iter()
                    .flatten()
                    .map(|&v| v as f32)
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            rows: per.concat(),
            labels: (0..ds.len()).map(|i| ds.label(i)).collect(),
            snrs: (0..ds.len()).map(|i| ds.snr_db(i)).collect(),
            signal_len: n,
        })
    }

    /// Wrap ready-made rows laid out [len, 5, signal_len].
    pub fn from_rows(
        rows: Vec<f32>,
        labels: Vec<usize>,
        snrs: Vec<i16>,
        signal_len: usize,
    ) -> Result<Self> {
        if rows.len() != labels.len() * INPUT_ROWS * signal_len || snrs.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} labels of length {signal_len}",
                rows.len(),
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            labels,
            snrs,
            signal_len,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn snr_db(&self, i: usize) -> i16 {
        self.snrs[i]
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let stride = INPUT_ROWS * self.signal_len;
        &self.rows[i * stride..(i + 1) * stride]
    }

    /// Concatenated inputs of `indices`, ready for the encoder.
    pub fn batch(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * INPUT_ROWS * self.signal_len);
        for &i in indices {
            out.extend_from_slice(self.features(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_records, DatasetConfig};

    #[test]
    fn bank_rows_follow_the_dataset() {
        let cfg = DatasetConfig::radioml_style(&["BPSK", "GFSK"], 1);
        let (meta, recs) = generate_records(&cfg, 3).unwrap();
        let ds = DatasetHandle::from_records(meta, &recs).unwrap();
        let bank = FeatureBank::from_dataset(&ds, &ReprConfig::default()).unwrap();
        assert_eq!(bank.len(), 20);
        assert_eq!(bank.features(0).len(), 5 * 128);
        assert_eq!(bank.label(19), 1);
        assert_eq!(bank.batch(&[1, 2]).len(), 2 * 5 * 128);
        assert!(bank.features(4).iter().all(|v| v.is_finite()));
        assert!(FeatureBank::from_rows(vec![0.0; 10], vec![0], vec![0], 16).is_err());
    }
}
