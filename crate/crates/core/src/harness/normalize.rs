//! Input normalization and target standardization statistics.

use nalgebra::{DMatrix, DVector};

use super::HarnessError;

/// Affine maps fixed at the start of a run: inputs are scaled so the
/// workspace corners land exactly on -1/+1 per dimension, targets are shifted
/// and scaled by the mean and population standard deviation of the initial
/// sample batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalizer {
    pub fn from_bounds_and_targets(
        bounds: &[(f64, f64)],
        y_init: &DVector<f64>,
    ) -> Result<Self, HarnessError> {
        let mut shift = Vec::with_capacity(bounds.len());
        let mut scale = Vec::with_capacity(bounds.len());
        for (lo, hi) in bounds {
            if !(hi > lo) {
                return Err(HarnessError::Config(format!("degenerate workspace bounds [{lo}, {hi}]")));
            }
            shift.push(0.5 * (lo + hi));
            scale.push(0.5 * (hi - lo));
        }
        if y_init.is_empty() {
            return Err(HarnessError::Config("cannot standardize zero initial targets".into()));
        }
        let y_mean = y_init.sum() / y_init.len() as f64;
        let y_var = y_init.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y_init.len() as f64;
        let y_std = y_var.sqrt();
        if !(y_std > 0.0) {
            return Err(HarnessError::Config(
                "initial targets have zero variance; cannot standardize".into(),
            ));
        }
        Ok(Self { shift, scale, y_mean, y_std })
    }

    pub fn normalize_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.shift[j]) / self.scale[j])
    }

    pub fn standardize_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_std)
    }

    pub fn destandardize_mean(&self, mu: &DVector<f64>) -> DVector<f64> {
        mu.map(|v| v * self.y_std + self.y_mean)
    }

    pub fn destandardize_variance(&self, variance: &DVector<f64>) -> DVector<f64> {
        variance.map(|v| v * self.y_std * self.y_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn extent_corners_map_to_plus_minus_one() {
        let bounds = vec![(2.0, 8.0), (-5.0, 5.0)];
        let y = DVector::from_row_slice(&[1.0, 2.0, 4.0]);
        let norm = Normalizer::from_bounds_and_targets(&bounds, &y).unwrap();
        let corners = DMatrix::from_row_slice(4, 2, &[2.0, -5.0, 8.0, -5.0, 2.0, 5.0, 8.0, 5.0]);
        let n = norm.normalize_inputs(&corners);
        for i in 0..4 {
            for j in 0..2 {
                assert_eq!(n[(i, j)].abs(), 1.0);
            }
        }
    }

    #[test]
    fn standardized_initial_targets_have_zero_mean_unit_std() {
        let bounds = vec![(0.0, 1.0)];
        let y = DVector::from_row_slice(&[3.0, -1.0, 0.5, 7.2, 2.2, -0.4]);
        let norm = Normalizer::from_bounds_and_targets(&bounds, &y).unwrap();
        let s = norm.standardize_targets(&y);
        let mean = s.sum() / s.len() as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn destandardization_inverts_standardization() {
        let bounds = vec![(0.0, 2.0)];
        let y = DVector::from_row_slice(&[0.3, 1.9, -4.0, 2.2]);
        let norm = Normalizer::from_bounds_and_targets(&bounds, &y).unwrap();
        let round = norm.destandardize_mean(&norm.standardize_targets(&y));
        for (a, b) in y.iter().zip(round.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_targets_are_rejected() {
        let bounds = vec![(0.0, 1.0)];
        let y = DVector::from_element(5, 2.0);
        assert!(Normalizer::from_bounds_and_targets(&bounds, &y).is_err());
    }
}
