use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// `1 − sqrt(2·n_tr / (n_tr + n_te))`, zero for a closed set.
pub fn openness(n_tr: usize, n_te: usize) -> Result<f64> {
    if n_tr == 0 || n_tr > n_te {
        return Err(Error::InvalidCounts(format!(
            "need 1 ≤ n_tr ≤ n_te, got {n_tr} and {n_te}"
        )));
    }
    Ok(1.0 - (2.0 * n_tr as f64 / (n_tr + n_te) as f64).sqrt())
}

fn check_labels(scores: &[f64], unknown: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != unknown.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            unknown.len()
        )));
    }
    let pos = unknown.iter().filter(|&&u| u).count();
    let neg = unknown.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{pos} unknown and {neg} known samples"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateLabels("NaN score".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve for detecting unknowns (higher score = more
/// unknown), from the Mann–Whitney statistic with midranks for ties.
pub fn auroc(scores: &[f64], unknown: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, unknown)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| unknown[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC curve as (false-positive rate, true-positive rate) points, from
/// (0, 0) to (1, 1), one point per distinct score threshold.
pub fn roc_points(scores: &[f64], unknown: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_labels(scores, unknown)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if unknown[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&n| scores[n] != scores[i]);
        if last_of_tie {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

/// Accuracy per SNR bin. Labels use 0 for unknown; an unknown sample is
/// correct iff predicted 0. Bins without samples are absent.
pub fn accuracy_by_snr(
    predictions: &[usize],
    truths: &[usize],
    snrs: &[i16],
) -> Result<BTreeMap<i16, f64>> {
    if predictions.len() != truths.len() || truths.len() != snrs.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions, {} truths, {} SNR labels",
            predictions.len(),
            truths.len(),
            snrs.len()
        )));
    }
    let mut bins: BTreeMap<i16, (usize, usize)> = BTreeMap::new();
    for ((&p, &t), &s) in predictions.iter().zip(truths).zip(snrs) {
        let b = bins.entry(s).or_default();
        b.0 += usize::from(p == t);
        b.1 += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(s, (c, n))| (s, c as f64 / n as f64))
        .collect())
}

/// Confusion counts, rows = truth, columns = prediction, `size` classes
/// including the unknown class 0.
pub fn confusion_matrix(
    predictions: &[usize],
    truths: &[usize],
    size: usize,
) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions, {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut m = vec![vec![0u64; size]; size];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= size || t >= size {
            return Err(Error::InvalidCounts(format!(
                "label {} outside {size} classes",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Fraction of `predictions` equal to `truths` over the positions `keep`
/// selects; `None` when nothing is selected.
pub fn accuracy_where(
    predictions: &[usize],
    truths: &[usize],
    keep: impl Fn(usize) -> bool,
) -> Option<f64> {
    let (mut c, mut n) = (0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        if keep(t) {
            n += 1;
            c += usize::from(p == t);
        }
    }
    (n > 0).then(|| c as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openness_examples() {
        assert!((openness(6, 11).unwrap() - 0.159_832).abs() < 5e-7);
        assert!((openness(13, 26).unwrap() - 0.183_503).abs() < 5e-7);
        assert_eq!(openness(4, 4).unwrap(), 0.0);
        assert!(matches!(openness(0, 3), Err(Error::InvalidCounts(_))));
        assert!(openness(5, 4).is_err());
    }

    #[test]
    fn auroc_extremes() {
        let u = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &u).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &u).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 4], &u).unwrap(), 0.5);
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn roc_runs_corner_to_corner() {
        let pts = roc_points(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert_eq!(pts[1], (0.0, 0.5));
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn snr_accuracy_examples() {
        let m = accuracy_by_snr(&[1, 2, 0, 1], &[1, 2, 0, 2], &[4, 4, 4, 4]).unwrap();
        assert_eq!(m[&4], 0.75);
        assert_eq!(m.len(), 1);
        let all = accuracy_by_snr(&[1, 0], &[1, 0], &[-2, 6]).unwrap();
        assert!(all.values().all(|&a| a == 1.0));
        assert!(!all.contains_key(&0));
        assert!(matches!(
            accuracy_by_snr(&[1], &[1, 2], &[0, 0]),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn confusion_rows_count_truths() {
        let m = confusion_matrix(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }
}
