use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Per-class mean embeddings plus the optional unknown-class prototype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
    pub unknown: Option<Vec<f64>>,
    pub embedding_dim: usize,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Index of the closest known prototype (first on ties).
    pub fn nearest(&self, e: &[f64]) -> Result<usize> {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.prototypes.iter().enumerate() {
            let d = -distance_score(e, c)?;
            if d < best.1 {
                best = (j, d);
            }
        }
        Ok(best.0)
    }
}

/// Mean of a set of equal-length vectors. Each coordinate is summed in
/// sorted order, so the result does not depend on the order of `vectors`.
pub fn mean_vector(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = vectors.first() else {
        return Err(Error::EmptySupport("no vectors to average".into()));
    };
    let d = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = vectors.len() as f64;
    let mut column = vec![0.0; vectors.len()];
    Ok((0..d)
        .map(|k| {
            for (c, v) in column.iter_mut().zip(vectors) {
                *c = v[k];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect())
}

/// Class prototypes from labelled embeddings; `labels[i] < n_classes`.
pub fn compute_prototypes(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<PrototypeSet> {
    if embeddings.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} embeddings, {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut prototypes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let members: Vec<&[f64]> = embeddings
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(e, _)| e.as_slice())
            .collect();
        if members.is_empty() {
            return Err(Error::EmptySupport(format!(
                "class {c} has no support examples"
            )));
        }
        prototypes.push(mean_vector(&members)?);
    }
    Ok(PrototypeSet {
        prototypes,
        unknown: None,
        embedding_dim: dim,
    })
}

/// Similarity score: the negated Euclidean distance (always ≤ 0).
pub fn distance_score(e: &[f64], c: &[f64]) -> Result<f64> {
    if e.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            got: e.len(),
        });
    }
    Ok(-e
        .iter()
        .zip(c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Mean triplet hinge over queries: positive = own prototype, negative =
/// nearest other prototype, distances Euclidean (not negated).
pub fn triplet_loss<T: Real>(
    g: &mut Graph<T>,
    queries: Var,
    labels: &[usize],
    prototypes: Var,
    margin: f64,
) -> Result<Var> {
    let d = g.pairwise_distance(queries, prototypes)?;
    g.triplet_hinge(d, labels, margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_shot_prototype_is_the_embedding() {
        let e = vec![vec![0.6, 0.8], vec![1.0, 0.0]];
        let p = compute_prototypes(&e, &[0, 1], 2).unwrap();
        assert_eq!(p.prototypes, e);
        assert_eq!(p.embedding_dim, 2);
    }

    #[test]
    fn opposite_embeddings_average_to_zero() {
        let p = compute_prototypes(&[vec![0.6, -0.8], vec![-0.6, 0.8]], &[0, 0], 1).unwrap();
        assert_eq!(p.prototypes[0], vec![0.0, 0.0]);
    }

    #[test]
    fn missing_class_is_reported() {
        assert!(matches!(
            compute_prototypes(&[vec![1.0]], &[0], 2),
            Err(Error::EmptySupport(_))
        ));
    }

    #[test]
    fn distance_score_examples() {
        assert_eq!(distance_score(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(distance_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -2.0);
        assert!(matches!(
            distance_score(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn zero_loss_when_margin_is_satisfied() {
        let mut g = Graph::<f64>::new();
        let q = g.input(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let c = g.input(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let l = triplet_loss(&mut g, q, &[0, 1], c, 0.5).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }
}
