//! Error metrics and replicate summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean squared entrywise deviation `(np)⁻¹ Σ (ξ̂ − ξ)²`.
pub fn mse_xi(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty matrices".into()));
    }
    Ok((estimate - truth).norm_squared() / truth.len() as f64)
}

/// Mean squared prediction error against observations; same arithmetic as
/// [`mse_xi`], kept separate because the target includes the nugget.
pub fn mspe(predictions: &DMatrix<f64>, observed: &DMatrix<f64>) -> Result<f64> {
    mse_xi(predictions, observed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard deviation over replicates divided by `sqrt(count)`.
    pub se: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn mean_se(values: &[f64]) -> Option<MeanSe> {
    let count = values.len();
    if count == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let sd = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanSe {
        mean,
        se: sd / (count as f64).sqrt(),
        sd,
        count,
    })
}
