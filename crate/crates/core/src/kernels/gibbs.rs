//! Gibbs nonstationary kernel with a scalar lengthscale function.
//!
//! The lengthscale at each input is produced by a network and squashed into
//! `(l_min, l_max)` by a sigmoid:
//!
//! `k(x, x') = alpha * (2 l(x) l(x') / (l(x)^2 + l(x')^2))^(D/2)
//!             * exp(-|x - x'|^2 / (l(x)^2 + l(x')^2))`
//!
//! With a constant lengthscale function this reduces exactly to the RBF kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{pairwise_sq_dists, GradContext, GramGrads, KernelError, KernelGrads};
use crate::nn::{mlp_backward_trace, mlp_forward_trace, MlpParams, MlpTrace};

#[derive(Debug, Clone)]
pub struct GibbsParams {
    pub log_amplitude: f64,
    pub net: MlpParams,
    pub l_min: f64,
    pub l_max: f64,
}

impl GibbsParams {
    pub fn new_seeded(
        amplitude: f64,
        in_dim: usize,
        hidden_dim: usize,
        l_min: f64,
        l_max: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, KernelError> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(KernelError::InvalidParam(format!("amplitude must be positive, got {amplitude}")));
        }
        if !(l_min > 0.0 && l_max > l_min) {
            return Err(KernelError::InvalidParam(format!(
                "lengthscale bounds must satisfy 0 < l_min < l_max, got [{l_min}, {l_max}]"
            )));
        }
        Ok(Self {
            log_amplitude: amplitude.ln(),
            net: MlpParams::new_seeded(in_dim, hidden_dim, 1, rng),
            l_min,
            l_max,
        })
    }

    /// Lengthscale at each input row, squashed into `(l_min, l_max)`.
    pub fn lengthscales(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, KernelError> {
        let raw = crate::nn::mlp_forward(&self.net, x)?;
        Ok(DVector::from_fn(x.nrows(), |i, _| self.squash(raw[(i, 0)])))
    }

    fn squash(&self, raw: f64) -> f64 {
        self.l_min + (self.l_max - self.l_min) * sigmoid(raw)
    }

    pub fn gram(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        let d2 = pairwise_sq_dists(x1, x2)?;
        let l1 = self.lengthscales(x1)?;
        let l2 = self.lengthscales(x2)?;
        let alpha = self.log_amplitude.exp();
        let half_d = x1.ncols() as f64 / 2.0;
        Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
            gibbs_entry(alpha, half_d, l1[i], l2[j], d2[(i, j)])
        }))
    }

    pub fn gram_with_grads(&self, x: &DMatrix<f64>) -> Result<GramGrads, KernelError> {
        let sq_dists = pairwise_sq_dists(x, x)?;
        let trace = mlp_forward_trace(&self.net, x)?;
        let raw = trace.output.clone();
        let lengths = DVector::from_fn(x.nrows(), |i, _| self.squash(raw[(i, 0)]));
        let alpha = self.log_amplitude.exp();
        let half_d = x.ncols() as f64 / 2.0;
        let gram = DMatrix::from_fn(x.nrows(), x.nrows(), |i, j| {
            gibbs_entry(alpha, half_d, lengths[i], lengths[j], sq_dists[(i, j)])
        });
        Ok(GramGrads {
            gram,
            ctx: GradContext::Gibbs(GibbsCtx {
                params: self.clone(),
                x: x.clone(),
                sq_dists,
                trace,
                raw,
                lengths,
                half_d,
            }),
        })
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn gibbs_entry(alpha: f64, half_d: f64, li: f64, lj: f64, d2: f64) -> f64 {
    let q = li * li + lj * lj;
    let prefactor = (2.0 * li * lj / q).powf(half_d);
    alpha * prefactor * (-d2 / q).exp()
}

pub(super) struct GibbsCtx {
    params: GibbsParams,
    x: DMatrix<f64>,
    sq_dists: DMatrix<f64>,
    trace: MlpTrace,
    raw: DMatrix<f64>,
    lengths: DVector<f64>,
    half_d: f64,
}

impl GibbsCtx {
    pub(super) fn backward(
        &self,
        gram: &DMatrix<f64>,
        upstream: &DMatrix<f64>,
    ) -> Result<KernelGrads, KernelError> {
        let n = self.x.nrows();
        let d_log_alpha = upstream.component_mul(gram).sum();

        // dK_kj / d(l_k) = K_kj * ((D/2)(1/l_k - 2 l_k / q) + 2 l_k d2 / q^2)
        // summed against (upstream + upstream^t) so both index slots count.
        let mut d_lengths = DVector::zeros(n);
        for k in 0..n {
            let lk = self.lengths[k];
            let mut acc = 0.0;
            for j in 0..n {
                let lj = self.lengths[j];
                let q = lk * lk + lj * lj;
                let factor = self.half_d * (1.0 / lk - 2.0 * lk / q)
                    + 2.0 * lk * self.sq_dists[(k, j)] / (q * q);
                acc += (upstream[(k, j)] + upstream[(j, k)]) * gram[(k, j)] * factor;
            }
            d_lengths[k] = acc;
        }

        // chain through the sigmoid squashing into (l_min, l_max)
        let span = self.params.l_max - self.params.l_min;
        let d_raw = DMatrix::from_fn(n, 1, |i, _| {
            let s = sigmoid(self.raw[(i, 0)]);
            d_lengths[i] * span * s * (1.0 - s)
        });
        let net = mlp_backward_trace(&self.params.net, &self.x, &self.trace, &d_raw)?.flatten();

        Ok(KernelGrads { hyper: vec![d_log_alpha], net })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, RbfParams};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_lengthscale_degenerates_to_rbf() {
        // zero network weights give sigmoid(0) = 0.5 everywhere
        let params = GibbsParams {
            log_amplitude: 1.3f64.ln(),
            net: MlpParams::zeros(2, 4, 1),
            l_min: 0.1,
            l_max: 0.5,
        };
        let constant_l = 0.1 + 0.4 * 0.5;
        let rbf = RbfParams::new(1.3, constant_l).unwrap();
        let x1 = random_inputs(5, 2, 1);
        let x2 = random_inputs(4, 2, 2);
        let g = params.gram(&x1, &x2).unwrap();
        let r = rbf.gram(&x1, &x2).unwrap();
        for (a, b) in g.iter().zip(r.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-12);
        }
    }

    #[test]
    fn self_covariance_equals_amplitude() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let params = GibbsParams::new_seeded(2.2, 2, 4, 0.05, 0.7, &mut rng).unwrap();
        let x = random_inputs(4, 2, 4);
        let g = params.gram(&x, &x).unwrap();
        for i in 0..4 {
            assert_relative_eq!(g[(i, i)], 2.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_gram_is_psd_within_jitter() {
        for seed in 0..5 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let params = GibbsParams::new_seeded(1.0, 2, 4, 0.05, 0.7, &mut rng).unwrap();
            let x = random_inputs(5, 2, seed + 10);
            let mut g = params.gram(&x, &x).unwrap();
            for i in 0..5 {
                g[(i, i)] += 1e-8;
            }
            let eig = SymmetricEigen::new(g);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= 0.0, "minimum eigenvalue {min}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let params = GibbsParams::new_seeded(1.1, 2, 3, 0.05, 0.6, &mut rng).unwrap();
        let x = random_inputs(4, 2, 22);
        let upstream = random_inputs(4, 4, 23);

        let mut kernel = Kernel::Gibbs(params);
        let analytic = kernel.gram_with_grads(&x).unwrap().backward(&upstream).unwrap();
        let loss = |k: &Kernel| k.gram(&x, &x).unwrap().component_mul(&upstream).sum();
        let step = 1e-5;

        let hyper = kernel.hyper_params();
        {
            let mut plus = hyper.clone();
            plus[0] += step;
            kernel.set_hyper_params(&plus).unwrap();
            let up = loss(&kernel);
            let mut minus = hyper.clone();
            minus[0] -= step;
            kernel.set_hyper_params(&minus).unwrap();
            let down = loss(&kernel);
            kernel.set_hyper_params(&hyper).unwrap();
            let numeric = (up - down) / (2.0 * step);
            assert_relative_eq!(analytic.hyper[0], numeric, max_relative = 1e-6, epsilon = 1e-9);
        }

        let net = kernel.net_params();
        for idx in 0..net.len() {
            let mut plus = net.clone();
            plus[idx] += step;
            kernel.set_net_params(&plus).unwrap();
            let up = loss(&kernel);
            let mut minus = net.clone();
            minus[idx] -= step;
            kernel.set_net_params(&minus).unwrap();
            let down = loss(&kernel);
            kernel.set_net_params(&net).unwrap();

            let numeric = (up - down) / (2.0 * step);
            let denom = numeric.abs().max(1e-7);
            assert!(
                (analytic.net[idx] - numeric).abs() / denom < 1e-4,
                "net {idx}: analytic {} numeric {}",
                analytic.net[idx],
                numeric
            );
        }
    }
}
