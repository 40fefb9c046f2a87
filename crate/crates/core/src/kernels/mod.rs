//! Covariance functions producing Gram matrices and hyperparameter gradients.
//!
//! Four families are implemented: the stationary RBF baseline, the attentive
//! kernel (input-dependent lengthscale selection plus instance masking), the
//! Gibbs kernel with a network-parameterized lengthscale function, and deep
//! kernel learning (an RBF over network features). Positive scalars
//! (amplitude, lengthscales) are stored in log space so the optimizer can walk
//! them unconstrained.

mod ak;
mod dkl;
mod gibbs;
mod rbf;

pub use ak::{ak_gram_from_parts, AkParams, AkVariant};
pub use dkl::DklParams;
pub use gibbs::GibbsParams;
pub use rbf::RbfParams;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid lengthscale grid: {0}")]
    InvalidGrid(String),
    #[error("invalid kernel parameter: {0}")]
    InvalidParam(String),
    #[error("unknown kernel name {0:?}")]
    UnknownName(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A fixed grid of `M >= 2` base-kernel lengthscales, evenly spaced over
/// `[l_min, l_max]` in normalized-input units. The grid is not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthscaleGrid {
    l_min: f64,
    l_max: f64,
    lengthscales: Vec<f64>,
}

impl LengthscaleGrid {
    pub fn new(l_min: f64, l_max: f64, m: usize) -> Result<Self, KernelError> {
        if !(l_min > 0.0 && l_min.is_finite()) {
            return Err(KernelError::InvalidGrid(format!("l_min must be positive, got {l_min}")));
        }
        if !(l_max > l_min && l_max.is_finite()) {
            return Err(KernelError::InvalidGrid(format!(
                "l_max must exceed l_min, got l_min={l_min} l_max={l_max}"
            )));
        }
        if m < 2 {
            return Err(KernelError::InvalidGrid(format!("need at least 2 lengthscales, got {m}")));
        }
        let step = (l_max - l_min) / (m - 1) as f64;
        let lengthscales = (0..m).map(|i| l_min + step * i as f64).collect();
        Ok(Self { l_min, l_max, lengthscales })
    }

    pub fn l_min(&self) -> f64 {
        self.l_min
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn len(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }
}

/// Matrix of squared Euclidean distances between the rows of `x1` and `x2`,
/// computed in one shot from the Gram identity
/// `|a - b|^2 = |a|^2 + |b|^2 - 2 a.b` and clamped at zero.
pub fn pairwise_sq_dists(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    if x1.ncols() != x2.ncols() {
        return Err(KernelError::Shape(format!(
            "inputs have {} and {} columns",
            x1.ncols(),
            x2.ncols()
        )));
    }
    let sq1: Vec<f64> = x1.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let sq2: Vec<f64> = x2.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut d2 = x1 * x2.transpose();
    // column-major traversal matches the matrix layout
    for j in 0..d2.ncols() {
        for i in 0..d2.nrows() {
            d2[(i, j)] = (sq1[i] + sq2[j] - 2.0 * d2[(i, j)]).max(0.0);
        }
    }
    Ok(d2)
}

/// One unit-amplitude RBF Gram matrix per grid lengthscale, all derived from a
/// single shared pairwise-distance matrix.
pub fn base_kernel_stack(
    grid: &LengthscaleGrid,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>, KernelError> {
    let d2 = pairwise_sq_dists(x1, x2)?;
    Ok(base_kernel_stack_from_dists(grid, &d2))
}

pub(crate) fn base_kernel_stack_from_dists(
    grid: &LengthscaleGrid,
    sq_dists: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    grid.lengthscales()
        .iter()
        .map(|l| {
            let inv = -0.5 / (l * l);
            sq_dists.map(|d| (d * inv).exp())
        })
        .collect()
}

/// Hyperparameter gradients for one kernel, laid out to match
/// [`Kernel::hyper_params`] and [`Kernel::net_params`].
#[derive(Debug, Clone)]
pub struct KernelGrads {
    pub hyper: Vec<f64>,
    pub net: Vec<f64>,
}

/// A self-covariance Gram matrix bundled with the intermediates needed to
/// turn an upstream gradient `dL/dG` into parameter gradients.
pub struct GramGrads {
    pub gram: DMatrix<f64>,
    ctx: GradContext,
}

enum GradContext {
    Rbf(rbf::RbfCtx),
    Ak(ak::AkCtx),
    Gibbs(gibbs::GibbsCtx),
    Dkl(dkl::DklCtx),
}

impl GramGrads {
    /// Chain rule: contract `upstream = dL/dG` against `dG/dp` for every
    /// trainable parameter `p` of the kernel.
    pub fn backward(&self, upstream: &DMatrix<f64>) -> Result<KernelGrads, KernelError> {
        if upstream.shape() != self.gram.shape() {
            return Err(KernelError::Shape(format!(
                "upstream is {}x{}, gram is {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                self.gram.nrows(),
                self.gram.ncols()
            )));
        }
        match &self.ctx {
            GradContext::Rbf(ctx) => Ok(ctx.backward(&self.gram, upstream)),
            GradContext::Ak(ctx) => ctx.backward(&self.gram, upstream),
            GradContext::Gibbs(ctx) => ctx.backward(&self.gram, upstream),
            GradContext::Dkl(ctx) => ctx.backward(&self.gram, upstream),
        }
    }
}

/// Polymorphic covariance evaluator selected by name in experiment configs.
#[derive(Debug, Clone)]
pub enum Kernel {
    Rbf(RbfParams),
    Ak(AkParams),
    Gibbs(GibbsParams),
    Dkl(DklParams),
}

impl Kernel {
    /// Config name: `rbf`, `ak`, `ak-weight`, `ak-mask`, `ak-nnx2`, `gibbs`, `dkl`.
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Rbf(_) => "rbf",
            Kernel::Ak(p) => match p.variant {
                AkVariant::Full => "ak",
                AkVariant::WeightOnly => "ak-weight",
                AkVariant::MaskOnly => "ak-mask",
                AkVariant::TwoNets => "ak-nnx2",
            },
            Kernel::Gibbs(_) => "gibbs",
            Kernel::Dkl(_) => "dkl",
        }
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            Kernel::Rbf(p) => p.log_amplitude.exp(),
            Kernel::Ak(p) => p.log_amplitude.exp(),
            Kernel::Gibbs(p) => p.log_amplitude.exp(),
            Kernel::Dkl(p) => p.log_amplitude.exp(),
        }
    }

    /// Cross-covariance Gram matrix between the rows of `x1` and `x2`.
    pub fn gram(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        match self {
            Kernel::Rbf(p) => p.gram(x1, x2),
            Kernel::Ak(p) => p.gram(x1, x2),
            Kernel::Gibbs(p) => p.gram(x1, x2),
            Kernel::Dkl(p) => p.gram(x1, x2),
        }
    }

    /// Self-covariance Gram matrix over `x` plus everything needed to push an
    /// upstream `dL/dG` back onto the kernel parameters.
    pub fn gram_with_grads(&self, x: &DMatrix<f64>) -> Result<GramGrads, KernelError> {
        match self {
            Kernel::Rbf(p) => p.gram_with_grads(x),
            Kernel::Ak(p) => p.gram_with_grads(x),
            Kernel::Gibbs(p) => p.gram_with_grads(x),
            Kernel::Dkl(p) => p.gram_with_grads(x),
        }
    }

    /// Scalar log-space hyperparameters in declared order:
    /// rbf `[log alpha, log lengthscale]`, ak `[log alpha]`,
    /// gibbs `[log alpha]`, dkl `[log alpha, log base lengthscale]`.
    pub fn hyper_params(&self) -> Vec<f64> {
        match self {
            Kernel::Rbf(p) => vec![p.log_amplitude, p.log_lengthscale],
            Kernel::Ak(p) => vec![p.log_amplitude],
            Kernel::Gibbs(p) => vec![p.log_amplitude],
            Kernel::Dkl(p) => vec![p.log_amplitude, p.log_base_lengthscale],
        }
    }

    pub fn set_hyper_params(&mut self, hyper: &[f64]) -> Result<(), KernelError> {
        let expected = self.hyper_params().len();
        if hyper.len() != expected {
            return Err(KernelError::Shape(format!(
                "expected {expected} hyperparameters, got {}",
                hyper.len()
            )));
        }
        if hyper.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidParam("non-finite hyperparameter".into()));
        }
        match self {
            Kernel::Rbf(p) => {
                p.log_amplitude = hyper[0];
                p.log_lengthscale = hyper[1];
            }
            Kernel::Ak(p) => p.log_amplitude = hyper[0],
            Kernel::Gibbs(p) => p.log_amplitude = hyper[0],
            Kernel::Dkl(p) => {
                p.log_amplitude = hyper[0];
                p.log_base_lengthscale = hyper[1];
            }
        }
        Ok(())
    }

    /// Flattened network parameters (empty for rbf; both nets concatenated for
    /// the two-network attentive variant).
    pub fn net_params(&self) -> Vec<f64> {
        match self {
            Kernel::Rbf(_) => Vec::new(),
            Kernel::Ak(p) => {
                let mut v = p.net.flatten();
                if let Some(second) = &p.second_net {
                    v.extend(second.flatten());
                }
                v
            }
            Kernel::Gibbs(p) => p.net.flatten(),
            Kernel::Dkl(p) => p.net.flatten(),
        }
    }

    pub fn set_net_params(&mut self, net: &[f64]) -> Result<(), KernelError> {
        match self {
            Kernel::Rbf(_) => {
                if !net.is_empty() {
                    return Err(KernelError::Shape("rbf kernel has no network parameters".into()));
                }
                Ok(())
            }
            Kernel::Ak(p) => {
                let first = p.net.num_params();
                let total = first + p.second_net.as_ref().map_or(0, |n| n.num_params());
                if net.len() != total {
                    return Err(KernelError::Shape(format!(
                        "expected {total} network parameters, got {}",
                        net.len()
                    )));
                }
                p.net.assign_flat(&net[..first])?;
                if let Some(second) = &mut p.second_net {
                    second.assign_flat(&net[first..])?;
                }
                Ok(())
            }
            Kernel::Gibbs(p) => Ok(p.net.assign_flat(net)?),
            Kernel::Dkl(p) => Ok(p.net.assign_flat(net)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn grid_is_evenly_spaced_and_validated() {
        let grid = LengthscaleGrid::new(0.01, 0.5, 10).unwrap();
        let ls = grid.lengthscales();
        assert_eq!(ls.len(), 10);
        assert_relative_eq!(ls[0], 0.01);
        assert_relative_eq!(ls[9], 0.5);
        let step = ls[1] - ls[0];
        for w in ls.windows(2) {
            assert_relative_eq!(w[1] - w[0], step, epsilon = 1e-12);
        }
        assert!(LengthscaleGrid::new(0.0, 0.5, 10).is_err());
        assert!(LengthscaleGrid::new(0.5, 0.1, 10).is_err());
        assert!(LengthscaleGrid::new(0.01, 0.5, 1).is_err());
    }

    #[test]
    fn sq_dists_match_direct_loop() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x1 = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
        let x2 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let d2 = pairwise_sq_dists(&x1, &x2).unwrap();
        for i in 0..6 {
            for j in 0..4 {
                let direct: f64 = (0..3).map(|k| (x1[(i, k)] - x2[(j, k)]).powi(2)).sum();
                assert_relative_eq!(d2[(i, j)], direct, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn base_stack_single_point_is_all_ones() {
        let grid = LengthscaleGrid::new(0.1, 0.4, 2).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        let stack = base_kernel_stack(&grid, &x, &x).unwrap();
        assert_eq!(stack.len(), 2);
        for k in &stack {
            assert_eq!(k.shape(), (1, 1));
            assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn base_stack_grows_with_lengthscale() {
        let grid = LengthscaleGrid::new(0.05, 0.5, 5).unwrap();
        let x1 = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(1, 1, &[0.3]);
        let stack = base_kernel_stack(&grid, &x1, &x2).unwrap();
        for w in stack.windows(2) {
            assert!(w[1][(0, 0)] > w[0][(0, 0)]);
        }
    }

    #[test]
    fn base_stack_matches_per_lengthscale_rbf() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let grid = LengthscaleGrid::new(0.05, 0.8, 4).unwrap();
        let x1 = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let x2 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let stack = base_kernel_stack(&grid, &x1, &x2).unwrap();
        for (k, l) in stack.iter().zip(grid.lengthscales()) {
            let rbf = RbfParams::new(1.0, *l).unwrap();
            let direct = rbf.gram(&x1, &x2).unwrap();
            for (a, b) in k.iter().zip(direct.iter()) {
                assert_relative_eq!(a, b, epsilon = 1e-14, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn self_grams_are_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let grid = LengthscaleGrid::new(0.05, 0.6, 3).unwrap();
        let kernels = vec![
            Kernel::Rbf(RbfParams::new(1.2, 0.25).unwrap()),
            Kernel::Ak(AkParams::new_seeded(0.8, grid.clone(), 2, 4, AkVariant::Full, &mut rng).unwrap()),
            Kernel::Gibbs(GibbsParams::new_seeded(1.5, 2, 4, 0.05, 0.6, &mut rng).unwrap()),
            Kernel::Dkl(DklParams::new_seeded(1.1, 2, 4, 2, 0.3, &mut rng).unwrap()),
        ];
        let x = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        for k in kernels {
            let g = k.gram(&x, &x).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    assert!(
                        (g[(i, j)] - g[(j, i)]).abs() < 1e-12,
                        "{} gram not symmetric at ({i}, {j})",
                        k.name()
                    );
                }
            }
        }
    }

    #[test]
    fn kernel_names_round_trip_params() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let grid = LengthscaleGrid::new(0.01, 0.5, 3).unwrap();
        let kernels = vec![
            Kernel::Rbf(RbfParams::new(1.0, 0.2).unwrap()),
            Kernel::Ak(AkParams::new_seeded(1.0, grid.clone(), 2, 4, AkVariant::Full, &mut rng).unwrap()),
            Kernel::Ak(AkParams::new_seeded(1.0, grid.clone(), 2, 4, AkVariant::TwoNets, &mut rng).unwrap()),
            Kernel::Gibbs(GibbsParams::new_seeded(1.0, 2, 4, 0.01, 0.5, &mut rng).unwrap()),
            Kernel::Dkl(DklParams::new_seeded(1.0, 2, 4, 2, 0.3, &mut rng).unwrap()),
        ];
        for mut k in kernels {
            let hyper = k.hyper_params();
            let net = k.net_params();
            k.set_hyper_params(&hyper).unwrap();
            k.set_net_params(&net).unwrap();
            assert_eq!(k.hyper_params(), hyper);
            assert_eq!(k.net_params(), net);
        }
    }
}
