//! Deep kernel learning: an RBF kernel applied to network features.
//!
//! The network warps inputs into a feature space; a stationary squared
//! exponential with one trainable base lengthscale acts there.

use nalgebra::DMatrix;
use rand::Rng;

use super::{pairwise_sq_dists, GradContext, GramGrads, KernelError, KernelGrads};
use crate::nn::{mlp_backward_trace, mlp_forward, mlp_forward_trace, MlpParams, MlpTrace};

#[derive(Debug, Clone)]
pub struct DklParams {
    pub log_amplitude: f64,
    pub net: MlpParams,
    pub log_base_lengthscale: f64,
}

impl DklParams {
    pub fn new_seeded(
        amplitude: f64,
        in_dim: usize,
        hidden_dim: usize,
        feature_dim: usize,
        base_lengthscale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, KernelError> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(KernelError::InvalidParam(format!("amplitude must be positive, got {amplitude}")));
        }
        if !(base_lengthscale > 0.0 && base_lengthscale.is_finite()) {
            return Err(KernelError::InvalidParam(format!(
                "base lengthscale must be positive, got {base_lengthscale}"
            )));
        }
        Ok(Self {
            log_amplitude: amplitude.ln(),
            net: MlpParams::new_seeded(in_dim, hidden_dim, feature_dim, rng),
            log_base_lengthscale: base_lengthscale.ln(),
        })
    }

    pub fn base_lengthscale(&self) -> f64 {
        self.log_base_lengthscale.exp()
    }

    pub fn gram(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        let f1 = mlp_forward(&self.net, x1)?;
        let f2 = mlp_forward(&self.net, x2)?;
        let d2 = pairwise_sq_dists(&f1, &f2)?;
        let alpha = self.log_amplitude.exp();
        let inv = -0.5 / (self.base_lengthscale() * self.base_lengthscale());
        Ok(d2.map(|d| alpha * (d * inv).exp()))
    }

    pub fn gram_with_grads(&self, x: &DMatrix<f64>) -> Result<GramGrads, KernelError> {
        let trace = mlp_forward_trace(&self.net, x)?;
        let features = trace.output.clone();
        let feat_dists = pairwise_sq_dists(&features, &features)?;
        let alpha = self.log_amplitude.exp();
        let base = self.base_lengthscale();
        let inv = -0.5 / (base * base);
        let gram = feat_dists.map(|d| alpha * (d * inv).exp());
        Ok(GramGrads {
            gram,
            ctx: GradContext::Dkl(DklCtx {
                params: self.clone(),
                x: x.clone(),
                trace,
                features,
                feat_dists,
                base,
            }),
        })
    }
}

pub(super) struct DklCtx {
    params: DklParams,
    x: DMatrix<f64>,
    trace: MlpTrace,
    features: DMatrix<f64>,
    feat_dists: DMatrix<f64>,
    base: f64,
}

impl DklCtx {
    pub(super) fn backward(
        &self,
        gram: &DMatrix<f64>,
        upstream: &DMatrix<f64>,
    ) -> Result<KernelGrads, KernelError> {
        let d_log_alpha = upstream.component_mul(gram).sum();

        let inv_l2 = 1.0 / (self.base * self.base);
        let mut d_log_base = 0.0;
        for ((u, g), d) in upstream.iter().zip(gram.iter()).zip(self.feat_dists.iter()) {
            d_log_base += u * g * d * inv_l2;
        }

        // dK_ij/dF_i = -K_ij (F_i - F_j) / l^2; contract both index slots:
        // dL/dF = (B F - diag(B 1) F) / l^2 with B = (upstream + upstream^t) .* K
        let b = (upstream + upstream.transpose()).component_mul(gram);
        let row_sums: Vec<f64> = (0..b.nrows()).map(|i| b.row(i).sum()).collect();
        let mut d_features = &b * &self.features;
        for i in 0..d_features.nrows() {
            for j in 0..d_features.ncols() {
                d_features[(i, j)] = (d_features[(i, j)] - row_sums[i] * self.features[(i, j)]) * inv_l2;
            }
        }
        let net = mlp_backward_trace(&self.params.net, &self.x, &self.trace, &d_features)?.flatten();

        Ok(KernelGrads { hyper: vec![d_log_alpha, d_log_base], net })
    }
}
