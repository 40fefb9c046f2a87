//! Stationary squared-exponential kernel with a single trainable lengthscale.

use nalgebra::DMatrix;

use super::{pairwise_sq_dists, GradContext, GramGrads, KernelError, KernelGrads};

/// `k(x, x') = alpha * exp(-|x - x'|^2 / (2 l^2))`; both parameters are
/// trained in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfParams {
    pub log_amplitude: f64,
    pub log_lengthscale: f64,
}

impl RbfParams {
    pub fn new(amplitude: f64, lengthscale: f64) -> Result<Self, KernelError> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(KernelError::InvalidParam(format!("amplitude must be positive, got {amplitude}")));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(KernelError::InvalidParam(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self { log_amplitude: amplitude.ln(), log_lengthscale: lengthscale.ln() })
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn gram(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        let d2 = pairwise_sq_dists(x1, x2)?;
        let alpha = self.log_amplitude.exp();
        let inv = -0.5 / (self.lengthscale() * self.lengthscale());
        Ok(d2.map(|d| alpha * (d * inv).exp()))
    }

    pub fn gram_with_grads(&self, x: &DMatrix<f64>) -> Result<GramGrads, KernelError> {
        let sq_dists = pairwise_sq_dists(x, x)?;
        let alpha = self.log_amplitude.exp();
        let inv = -0.5 / (self.lengthscale() * self.lengthscale());
        let gram = sq_dists.map(|d| alpha * (d * inv).exp());
        Ok(GramGrads {
            gram,
            ctx: GradContext::Rbf(RbfCtx { sq_dists, lengthscale: self.lengthscale() }),
        })
    }
}

pub(super) struct RbfCtx {
    sq_dists: DMatrix<f64>,
    lengthscale: f64,
}

impl RbfCtx {
    pub(super) fn backward(&self, gram: &DMatrix<f64>, upstream: &DMatrix<f64>) -> KernelGrads {
        // dG/d(log alpha) = G; dG/d(log l) = G .* d2 / l^2
        let d_log_alpha = upstream.component_mul(gram).sum();
        let inv_l2 = 1.0 / (self.lengthscale * self.lengthscale);
        let mut d_log_l = 0.0;
        for ((u, g), d) in upstream.iter().zip(gram.iter()).zip(self.sq_dists.iter()) {
            d_log_l += u * g * d * inv_l2;
        }
        KernelGrads { hyper: vec![d_log_alpha, d_log_l], net: Vec::new() }
    }
}
