//! Fleiss' kappa over an items × categories count matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KappaError {
    #[error("row {row} sums to {sum}, expected {expected} raters")]
    RowSumMismatch { row: usize, sum: usize, expected: usize },
    #[error("agreement undefined: all ratings fall in a single category")]
    DegenerateAgreement,
    #[error("need at least 2 items and 2 raters (got {items} items, {raters} raters)")]
    TooSmall { items: usize, raters: usize },
    #[error("rows have differing category counts")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: f64,
    pub n_items: usize,
    pub n_raters: usize,
    /// Mean per-item observed agreement.
    pub observed_agreement: f64,
    /// Chance agreement from squared category marginals.
    pub expected_agreement: f64,
    pub category_proportions: Vec<f64>,
    /// How items and raters were selected, for reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<String>,
}

/// Fleiss' kappa. Every row must sum to `n_raters`.
pub fn fleiss_kappa(matrix: &[Vec<usize>], n_raters: usize) -> Result<AgreementReport, KappaError> {
    let n_items = matrix.len();
    if n_items < 2 || n_raters < 2 {
        return Err(KappaError::TooSmall {
            items: n_items,
            raters: n_raters,
        });
    }
    let k = matrix[0].len();
    if matrix.iter().any(|r| r.len() != k) {
        return Err(KappaError::Ragged);
    }
    let mut column_totals = vec![0u64; k];
    let mut agreement_sum = 0.0;
    let n = n_raters as u64;
    for (row_idx, row) in matrix.iter().enumerate() {
        let sum: usize = row.iter().sum();
        if sum != n_raters {
            return Err(KappaError::RowSumMismatch {
                row: row_idx,
                sum,
                expected: n_raters,
            });
        }
        // integer numerator keeps perfect rows at exactly 1.0
        let pairs: u64 = row.iter().map(|&c| (c as u64) * (c as u64).saturating_sub(1)).sum();
        agreement_sum += pairs as f64 / (n * (n - 1)) as f64;
        for (j, &c) in row.iter().enumerate() {
            column_totals[j] += c as u64;
        }
    }
    let total = (n_items as u64 * n) as f64;
    let category_proportions: Vec<f64> = column_totals.iter().map(|&c| c as f64 / total).collect();
    let expected: f64 = category_proportions.iter().map(|p| p * p).sum();
    if column_totals.iter().filter(|&&c| c > 0).count() <= 1 {
        return Err(KappaError::DegenerateAgreement);
    }
    let observed = agreement_sum / n_items as f64;
    Ok(AgreementReport {
        kappa: (observed - expected) / (1.0 - expected),
        n_items,
        n_raters,
        observed_agreement: observed,
        expected_agreement: expected,
        category_proportions,
        interpretation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_is_exactly_one() {
        let m = vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]];
        assert_eq!(fleiss_kappa(&m, 3).unwrap().kappa, 1.0);
    }

    #[test]
    fn hand_computed_three_items() {
        // P_i = [1, 1, 0] → P̄ = 2/3; p = [1/2, 1/2] → P̄e = 1/2; κ = (2/3 - 1/2)/(1/2) = 1/3
        let r = fleiss_kappa(&[vec![2, 0], vec![0, 2], vec![1, 1]], 2).unwrap();
        assert!((r.kappa - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.observed_agreement - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.expected_agreement - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fleiss_kappa(&[vec![2, 0], vec![1, 0]], 2),
            Err(KappaError::RowSumMismatch { row: 1, .. })
        ));
        assert_eq!(
            fleiss_kappa(&[vec![2, 0], vec![2, 0]], 2),
            Err(KappaError::DegenerateAgreement)
        );
        assert!(matches!(
            fleiss_kappa(&[vec![2, 0]], 2),
            Err(KappaError::TooSmall { .. })
        ));
    }
}
