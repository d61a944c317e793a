use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub verification_accuracy: f64,
    pub auc: f64,
}

/// Fraction of `(untampered, tampered)` pairs whose untampered score is
/// strictly higher. Ties count as failures.
///
/// ```
/// use xmc_core::eval::verification_accuracy;
///
/// let va = verification_accuracy(&[(0.9, 0.5), (0.4, 0.6), (0.7, 0.7)]).unwrap();
/// assert_eq!(va, 1.0 / 3.0);
/// ```
pub fn verification_accuracy(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let wins = pairs.iter().filter(|(u, t)| u > t).count();
    Ok(wins as f64 / pairs.len() as f64)
}

/// Rank-based ROC AUC of untampered (positive) against tampered (negative)
/// scores: `(#{u > t} + #{u = t} / 2) / (|U| |T|)`, the Mann-Whitney
/// statistic. Runs in `O((|U| + |T|) log |T|)`.
///
/// ```
/// use xmc_core::eval::auc;
///
/// assert_eq!(auc(&[0.9, 0.8], &[0.85, 0.2]).unwrap(), 0.75);
/// ```
pub fn auc(untampered: &[f64], tampered: &[f64]) -> Result<f64, EvalError> {
    if untampered.is_empty() || tampered.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let mut t = tampered.to_vec();
    t.sort_by(f64::total_cmp);
    // Twice the statistic, kept integral until the final division.
    let mut doubled: u128 = 0;
    for &u in untampered {
        let below = t.partition_point(|&x| x < u);
        let not_above = t.partition_point(|&x| x <= u);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(doubled as f64 / (2 * untampered.len() as u128 * tampered.len() as u128) as f64)
}
