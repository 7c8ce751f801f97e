//! Nearest-class-mean open-set classifier.
//!
//! Scores are a softmax over negated Euclidean distances to the
//! prototypes, with the unknown prototype c₀ at index 0. Without c₀ the
//! model runs threshold-only: the softmax covers the known classes and
//! the unknown score is `p₀ = 1 − max p_i`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_dir, load_model, read_json, save_model, write_json, ModelSpec};
use crate::meta::{embed_records, mean_vector, FeatureBank, PrototypeSet};
use crate::net::Encoder;
use crate::repr::MultiSequence;
use crate::tensor::softmax_in_place;

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const PROTOTYPES_FILE: &str = "prototypes.json";
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpenSetMode {
    /// Unknown prototype c₀ enrolled.
    Full,
    /// No c₀; `p₀ = 1 − max p_i`.
    ThresholdOnly,
}

/// `prototypes.json` in a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PrototypeFile {
    class_names: Vec<String>,
    prototypes: Vec<Vec<f64>>,
    unknown: Option<Vec<f64>>,
    gamma: f64,
    embedding_dim: usize,
    mode: OpenSetMode,
}

#[derive(Clone, Debug)]
pub struct OpenSetModel {
    pub spec: ModelSpec,
    pub encoder: Encoder<f32>,
    pub prototypes: PrototypeSet,
    pub gamma: f64,
    pub class_names: Vec<String>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "gamma {gamma} outside [0, 1]"
        )))
    }
}

/// Class decision from a score vector `[p₀, p₁, …, p_N]`: the best known
/// class if it reaches `gamma` and beats `p₀`, otherwise 0 (unknown).
/// Known-class ties go to the lowest index.
pub fn decide(p: &[f64], gamma: f64) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if best == 0 || p[i] > p[best] {
            best = i;
        }
    }
    if best != 0 && p[best] >= gamma && p[best] > p[0] {
        best
    } else {
        0
    }
}

/// Score vector for an embedding against a prototype set.
pub fn score_embedding(set: &PrototypeSet, e: &[f64]) -> Result<Vec<f64>> {
    let mut logits = Vec::with_capacity(set.len() + 1);
    if let Some(c0) = &set.unknown {
        logits.push(crate::meta::distance_score(e, c0)?);
    }
    for c in &set.prototypes {
        logits.push(crate::meta::distance_score(e, c)?);
    }
    softmax_in_place(&mut logits);
    if set.unknown.is_none() {
        let max = logits.iter().copied().fold(0.0, f64::max);
        logits.insert(0, 1.0 - max);
    }
    Ok(logits)
}

impl OpenSetModel {
    /// Enroll `support[j]` (records of class `j`) and optionally an
    /// unknown pool for c₀.
    pub fn enroll(
        spec: ModelSpec,
        encoder: Encoder<f32>,
        bank: &FeatureBank,
        class_names: Vec<String>,
        support: &[Vec<usize>],
        unknown_pool: Option<&[usize]>,
        gamma: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if support.is_empty() {
            return Err(Error::EmptySupport("no classes to enroll".into()));
        }
        if class_names.len() != support.len() {
            return Err(Error::LengthMismatch(format!(
                "{} class names for {} support sets",
                class_names.len(),
                support.len()
            )));
        }
        let mean_of = |idx: &[usize], what: &str| -> Result<Vec<f64>> {
            if idx.is_empty() {
                return Err(Error::EmptySupport(format!("{what} has no examples")));
            }
            let e = embed_records(&encoder, bank, idx)?;
            let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
            mean_vector(&refs)
        };
        let prototypes = support
            .iter()
            .zip(&class_names)
            .map(|(s, name)| mean_of(s, name))
            .collect::<Result<Vec<_>>>()?;
        let unknown = unknown_pool
            .map(|u| mean_of(u, "unknown pool"))
            .transpose()?;
        Ok(Self {
            prototypes: PrototypeSet {
                prototypes,
                unknown,
                embedding_dim: encoder.embedding_dim(),
            },
            spec,
            encoder,
            gamma,
            class_names,
        })
    }

    pub fn mode(&self) -> OpenSetMode {
        if self.prototypes.unknown.is_some() {
            OpenSetMode::Full
        } else {
            OpenSetMode::ThresholdOnly
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn score(&self, e: &[f64]) -> Result<Vec<f64>> {
        score_embedding(&self.prototypes, e)
    }

    pub fn decide(&self, p: &[f64]) -> usize {
        decide(p, self.gamma)
    }

    /// Score one multi-sequence sample end to end.
    pub fn classify_sample(&self, ms: &MultiSequence) -> Result<(usize, Vec<f64>)> {
        let rows: Vec<f32> = ms
            .encoder_rows(self.spec.repr.standardize)
            .iter()
            .flatten()
            .map(|&v| v as f32)
            .collect();
        let e: Vec<f64> = self
            .encoder
            .embed(&rows, 1)?
            .iter()
            .map(|&v| v as f64)
            .collect();
        let p = self.score(&e)?;
        Ok((self.decide(&p), p))
    }

    /// Hard decisions and score rows for `indices`, in order. Chunks are
    /// embedded in parallel; results do not depend on the worker count.
    pub fn classify_batch(
        &self,
        bank: &FeatureBank,
        indices: &[usize],
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let scores: Vec<Vec<f64>> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                embed_records(&self.encoder, bank, chunk)?
                    .iter()
                    .map(|e| self.score(e))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let preds = scores.iter().map(|p| self.decide(p)).collect();
        Ok((preds, scores))
    }

    /// Write a bundle directory: model.json, weights.bin, prototypes.json.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        save_model(dir, &self.spec, &self.encoder)?;
        write_json(
            &dir.join(PROTOTYPES_FILE),
            &PrototypeFile {
                class_names: self.class_names.clone(),
                prototypes: self.prototypes.prototypes.clone(),
                unknown: self.prototypes.unknown.clone(),
                gamma: self.gamma,
                embedding_dim: self.prototypes.embedding_dim,
                mode: self.mode(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (spec, encoder) = load_model(dir)?;
        let f: PrototypeFile = read_json(&dir.join(PROTOTYPES_FILE))?;
        check_gamma(f.gamma)?;
        let dim = encoder.embedding_dim();
        let vectors = f.prototypes.iter().chain(f.unknown.iter());
        if f.embedding_dim != dim || vectors.clone().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.embedding_dim,
            });
        }
        if f.prototypes.is_empty() || f.class_names.len() != f.prototypes.len() {
            return Err(Error::EmptySupport(
                "bundle prototypes do not match its class names".into(),
            ));
        }
        if (f.mode == OpenSetMode::Full) != f.unknown.is_some() {
            return Err(Error::InvalidConfig(
                "bundle mode disagrees with its unknown prototype".into(),
            ));
        }
        Ok(Self {
            spec,
            encoder,
            prototypes: PrototypeSet {
                prototypes: f.prototypes,
                unknown: f.unknown,
                embedding_dim: dim,
            },
            gamma: f.gamma,
            class_names: f.class_names,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(unknown: bool) -> PrototypeSet {
        PrototypeSet {
            prototypes: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            unknown: unknown.then(|| vec![0.0, -1.0]),
            embedding_dim: 2,
        }
    }

    #[test]
    fn equidistant_embedding_scores_uniformly() {
        let p = score_embedding(&set(true), &[0.0, 0.0]).unwrap();
        for v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn embedding_on_a_prototype_dominates() {
        let far = PrototypeSet {
            prototypes: vec![vec![0.0, 0.0], vec![50.0, 0.0]],
            unknown: Some(vec![0.0, 50.0]),
            embedding_dim: 2,
        };
        let p = score_embedding(&far, &[0.0, 0.0]).unwrap();
        assert!(p[1] > 1.0 - 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_only_reports_one_minus_max() {
        let p = score_embedding(&set(false), &[0.9, 0.1]).unwrap();
        assert_eq!(p.len(), 4);
        let max = p[1..].iter().copied().fold(0.0, f64::max);
        assert!((p[0] - (1.0 - max)).abs() < 1e-15);
        assert!((p[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decision_examples() {
        assert_eq!(decide(&[0.1, 0.9, 0.05, 0.05], 0.0), 1);
        assert_eq!(decide(&[0.0, 0.2, 0.7, 0.1], 1.01), 0);
        assert_eq!(decide(&[0.6, 0.3, 0.1], 0.2), 0);
        assert_eq!(decide(&[0.2, 0.4, 0.4], 0.3), 1);
        assert_eq!(decide(&[0.2, 0.25, 0.55], 0.6), 0);
    }

    #[test]
    fn gamma_is_validated() {
        assert!(check_gamma(1.0).is_ok());
        assert!(check_gamma(-0.1).is_err());
        assert!(check_gamma(f64::NAN).is_err());
    }
}
