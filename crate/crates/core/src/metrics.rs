//! Reconstruction error and SNR measures.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::LaplacianEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference has zero energy ({0})")]
    ZeroReference(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), MetricsError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch(a.shape(), b.shape()))
    }
}

/// `(1/K) Σ_k ‖x̂_k - x_k‖² / ‖x_k‖²` over the K rows.
pub fn nmse_signal(estimates: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64, MetricsError> {
    same_shape(estimates, truth)?;
    let k = truth.nrows();
    if k == 0 {
        return Err(MetricsError::ZeroReference("no snapshots".into()));
    }
    let mut total = 0.0;
    for row in 0..k {
        let reference = truth.row(row).norm_squared();
        if reference == 0.0 {
            return Err(MetricsError::ZeroReference(format!("snapshot {row}")));
        }
        total += (estimates.row(row) - truth.row(row)).norm_squared() / reference;
    }
    Ok(total / k as f64)
}

/// `‖L̂ - L‖²_F / ‖L‖²_F`.
pub fn nmse_laplacian(
    estimate: &LaplacianEstimate,
    truth: &LaplacianEstimate,
) -> Result<f64, MetricsError> {
    same_shape(estimate.values(), truth.values())?;
    let reference = truth.values().norm_squared();
    if reference == 0.0 {
        return Err(MetricsError::ZeroReference("laplacian".into()));
    }
    Ok((estimate.values() - truth.values()).norm_squared() / reference)
}

/// `10 log10(Σ‖x_k‖² / Σ‖n_k‖²)` with `n = noisy - clean`.
pub fn empirical_snr_db(clean: &DMatrix<f64>, noisy: &DMatrix<f64>) -> Result<f64, MetricsError> {
    same_shape(clean, noisy)?;
    let noise = (noisy - clean).norm_squared();
    if noise == 0.0 {
        return Err(MetricsError::ZeroReference("noise is identically zero".into()));
    }
    Ok(10.0 * (clean.norm_squared() / noise).log10())
}
