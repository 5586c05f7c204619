//! Sample covariance blocks: cross-set, lagged, and pairwise-complete.
//!
//! Every estimator divides by `n` (the full series length, also at lag
//! `k`), never `n − 1` or `n − k`. Eigen-ratios downstream compare blocks at
//! different lags, so the divisor must be the same for all of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::center_columns;
use crate::stdata::{Partition, SpatioTemporalFrame};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    CrossSets,
    AutoSet1,
    AutoSet2,
    CrossLagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovBlock {
    pub matrix: DMatrix<f64>,
    pub lag: i64,
    pub kind: CovKind,
}

/// `n⁻¹ Σ_t a_{t+k} b_tᵀ` over `t` with both indices in range, for already
/// centred series `a` (`n × p_a`) and `b` (`n × p_b`). Negative `k` pairs
/// `a_{t+k}` with a later `b_t`.
pub fn lagged_product(a: &DMatrix<f64>, b: &DMatrix<f64>, k: i64) -> DMatrix<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, b.nrows());
    let shift = k.unsigned_abs() as usize;
    if shift >= n {
        return DMatrix::zeros(a.ncols(), b.ncols());
    }
    let len = n - shift;
    let (a_rows, b_rows) = if k >= 0 {
        (a.rows(shift, len), b.rows(0, len))
    } else {
        (a.rows(0, len), b.rows(shift, len))
    };
    (a_rows.transpose() * b_rows) / n as f64
}

fn complete_columns(frame: &SpatioTemporalFrame, cols: &[usize], op: &'static str) -> Result<DMatrix<f64>> {
    if !frame.columns_complete(cols) {
        return Err(Error::MissingData(op));
    }
    Ok(frame.columns(cols))
}

/// `Σ̂ = n⁻¹ Σ_t (y_{t,1} − ȳ₁)(y_{t,2} − ȳ₂)ᵀ`, a `p₁ × p₂` block.
pub fn cross_covariance(frame: &SpatioTemporalFrame, partition: &Partition) -> Result<CovBlock> {
    let y1 = complete_columns(frame, &partition.set1, "cross_covariance")?;
    let y2 = complete_columns(frame, &partition.set2, "cross_covariance")?;
    Ok(CovBlock {
        matrix: lagged_product(&center_columns(&y1), &center_columns(&y2), 0),
        lag: 0,
        kind: CovKind::CrossSets,
    })
}

/// Autocovariances `Σ̂₁(j)`, `Σ̂₂(j)` and lagged cross covariances
/// `Σ̂₁₂(j)`, `Σ̂₁₂(−j)` for `j = 1..=k0`, returned in that order per lag.
pub fn lagged_covariances(frame: &SpatioTemporalFrame, partition: &Partition, k0: usize) -> Result<Vec<CovBlock>> {
    if k0 == 0 {
        return Err(Error::InvalidArgument("lag depth k0 must be at least 1".into()));
    }
    if 2 * k0 >= frame.n() {
        return Err(Error::LagTooLarge { lag: k0, n: frame.n() });
    }
    let y1 = center_columns(&complete_columns(frame, &partition.set1, "lagged_covariances")?);
    let y2 = center_columns(&complete_columns(frame, &partition.set2, "lagged_covariances")?);
    let mut out = Vec::with_capacity(4 * k0);
    for j in 1..=k0 as i64 {
        out.push(CovBlock {
            matrix: lagged_product(&y1, &y1, j),
            lag: j,
            kind: CovKind::AutoSet1,
        });
        out.push(CovBlock {
            matrix: lagged_product(&y2, &y2, j),
            lag: j,
            kind: CovKind::AutoSet2,
        });
        out.push(CovBlock {
            matrix: lagged_product(&y1, &y2, j),
            lag: j,
            kind: CovKind::CrossLagged,
        });
        out.push(CovBlock {
            matrix: lagged_product(&y1, &y2, -j),
            lag: -j,
            kind: CovKind::CrossLagged,
        });
    }
    Ok(out)
}

/// Pairwise-complete covariance: entry `(a, b)` uses only the times where
/// both `rows[a]` and `cols[b]` are observed, with means and divisor taken
/// on that joint subset. The result need not be positive semi-definite.
pub fn pairwise_covariance(frame: &SpatioTemporalFrame, rows: &[usize], cols: &[usize]) -> Result<CovBlock> {
    let matrix = pairwise_on_times(frame, rows, cols, None)?;
    Ok(CovBlock {
        matrix,
        lag: 0,
        kind: CovKind::CrossSets,
    })
}

/// Pairwise-complete covariance restricted to times where `restrict` (if
/// given) is also observed.
pub(crate) fn pairwise_on_times(
    frame: &SpatioTemporalFrame,
    rows: &[usize],
    cols: &[usize],
    restrict: Option<usize>,
) -> Result<DMatrix<f64>> {
    let n = frame.n();
    let y = frame.obs();
    let base: Vec<bool> = (0..n)
        .map(|t| restrict.is_none_or(|r| frame.is_observed(t, r)))
        .collect();
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let mut count = 0usize;
            let (mut si, mut sj) = (0.0, 0.0);
            for t in 0..n {
                if base[t] && frame.is_observed(t, i) && frame.is_observed(t, j) {
                    count += 1;
                    si += y[(t, i)];
                    sj += y[(t, j)];
                }
            }
            if count < 2 {
                return Err(Error::InsufficientOverlap(i, j));
            }
            let (mi, mj) = (si / count as f64, sj / count as f64);
            let mut acc = 0.0;
            for t in 0..n {
                if base[t] && frame.is_observed(t, i) && frame.is_observed(t, j) {
                    acc += (y[(t, i)] - mi) * (y[(t, j)] - mj);
                }
            }
            out[(a, b)] = acc / count as f64;
        }
    }
    Ok(out)
}

/// Full `p × p` sample covariance `Σ̂_y` of a complete frame (divisor `n`).
pub fn sample_covariance(frame: &SpatioTemporalFrame) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..frame.p()).collect();
    let y = center_columns(&complete_columns(frame, &all, "sample_covariance")?);
    Ok(lagged_product(&y, &y, 0))
}
