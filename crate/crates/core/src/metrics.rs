//! Evaluation metrics against a held-out test set.
//!
//! SMSE and MSLL follow the GP-literature conventions: SMSE divides the mean
//! squared error by the population variance of the test targets (so the
//! mean predictor scores exactly 1), and MSLL subtracts the log loss of the
//! trivial model built from the training targets' mean and variance (so the
//! trivial predictor scores exactly 0 and better models go negative).

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric requires at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("test targets have zero variance")]
    ZeroTargetVariance,
    #[error("non-positive predictive variance {0}")]
    NonPositiveVariance(f64),
}

/// One evaluation snapshot of a run.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub num_samples: usize,
    pub smse: f64,
    pub msll: f64,
    pub nlpd: f64,
    pub rmse: f64,
    pub mae: f64,
    pub wall_time_s: f64,
}

fn check_lengths(y_true: &DVector<f64>, mu: &DVector<f64>) -> Result<(), MetricsError> {
    if y_true.len() != mu.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            mu.len()
        )));
    }
    Ok(())
}

fn population_variance(y: &DVector<f64>) -> f64 {
    let mean = y.sum() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64
}

/// Standardized mean squared error: `mean((y - mu)^2) / var(y)` with the
/// population variance convention.
pub fn smse(y_true: &DVector<f64>, mu: &DVector<f64>) -> Result<f64, MetricsError> {
    check_lengths(y_true, mu)?;
    if y_true.len() < 2 {
        return Err(MetricsError::TooFewPoints { required: 2, got: y_true.len() });
    }
    let var = population_variance(y_true);
    if var == 0.0 {
        return Err(MetricsError::ZeroTargetVariance);
    }
    let mse = y_true
        .iter()
        .zip(mu.iter())
        .map(|(y, m)| (y - m).powi(2))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse / var)
}

/// Mean negative log predictive density of independent Gaussians:
/// `mean(ln(2 pi v)/2 + (y - mu)^2 / (2 v))`.
pub fn nlpd(y_true: &DVector<f64>, mu: &DVector<f64>, variance: &DVector<f64>) -> Result<f64, MetricsError> {
    check_lengths(y_true, mu)?;
    if variance.len() != y_true.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} targets vs {} variances",
            y_true.len(),
            variance.len()
        )));
    }
    if y_true.is_empty() {
        return Err(MetricsError::TooFewPoints { required: 1, got: 0 });
    }
    let mut total = 0.0;
    for ((y, m), v) in y_true.iter().zip(mu.iter()).zip(variance.iter()) {
        if !(*v > 0.0) {
            return Err(MetricsError::NonPositiveVariance(*v));
        }
        total += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + (y - m).powi(2) / (2.0 * v);
    }
    Ok(total / y_true.len() as f64)
}

/// Mean standardized log loss: NLPD minus the NLPD of the trivial model that
/// predicts the training mean and variance everywhere.
pub fn msll(
    y_true: &DVector<f64>,
    mu: &DVector<f64>,
    variance: &DVector<f64>,
    train_mean: f64,
    train_var: f64,
) -> Result<f64, MetricsError> {
    if !(train_var > 0.0) {
        return Err(MetricsError::NonPositiveVariance(train_var));
    }
    let model_loss = nlpd(y_true, mu, variance)?;
    let n = y_true.len();
    let trivial_mu = DVector::from_element(n, train_mean);
    let trivial_var = DVector::from_element(n, train_var);
    let trivial_loss = nlpd(y_true, &trivial_mu, &trivial_var)?;
    Ok(model_loss - trivial_loss)
}

pub fn rmse(y_true: &DVector<f64>, mu: &DVector<f64>) -> Result<f64, MetricsError> {
    check_lengths(y_true, mu)?;
    if y_true.is_empty() {
        return Err(MetricsError::TooFewPoints { required: 1, got: 0 });
    }
    let mse = y_true
        .iter()
        .zip(mu.iter())
        .map(|(y, m)| (y - m).powi(2))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(y_true: &DVector<f64>, mu: &DVector<f64>) -> Result<f64, MetricsError> {
    check_lengths(y_true, mu)?;
    if y_true.is_empty() {
        return Err(MetricsError::TooFewPoints { required: 1, got: 0 });
    }
    Ok(y_true.iter().zip(mu.iter()).map(|(y, m)| (y - m).abs()).sum::<f64>() / y_true.len() as f64)
}
