//! Exact Gaussian process regression: Cholesky-backed posterior prediction,
//! log marginal likelihood with analytic gradients, and gradient-ascent
//! hyperparameter training with separate learning rates for scalar
//! hyperparameters and network parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError};

#[derive(Debug, Error)]
pub enum GprError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model has no training data")]
    Empty,
    #[error("covariance matrix is not positive definite even with jitter {max_jitter:.3e}")]
    IllConditioned { max_jitter: f64 },
    #[error("non-finite marginal likelihood at iteration {iter}; parameters rolled back")]
    NonFiniteLoss { iter: usize },
    #[error("invalid noise scale {0}")]
    InvalidNoise(f64),
}

/// Posterior mean and variance at query points (standardized units).
///
/// `clamped`/`max_clamp` report how often and how far the raw variance dipped
/// below zero before being clamped.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub clamped: usize,
    pub max_clamp: f64,
}

/// Gradients of the log marginal likelihood, split by parameter group.
#[derive(Debug, Clone)]
pub struct LmlGrads {
    pub d_log_noise: f64,
    pub d_hyper: Vec<f64>,
    pub d_net: Vec<f64>,
}

#[derive(Clone)]
struct PosteriorCache {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Exact GP regressor over normalized inputs and standardized targets.
///
/// The Cholesky factor of `K + sigma^2 I` is cached after [`GprModel::refresh`]
/// and invalidated by anything that changes the data or the parameters.
#[derive(Clone)]
pub struct GprModel {
    x_train: DMatrix<f64>,
    y_train: DVector<f64>,
    kernel: Kernel,
    log_noise: f64,
    cache: Option<PosteriorCache>,
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

impl GprModel {
    pub fn new(kernel: Kernel, in_dim: usize, noise_std: f64) -> Result<Self, GprError> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(GprError::InvalidNoise(noise_std));
        }
        Ok(Self {
            x_train: DMatrix::zeros(0, in_dim),
            y_train: DVector::zeros(0),
            kernel,
            log_noise: noise_std.ln(),
            cache: None,
        })
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn y_train(&self) -> &DVector<f64> {
        &self.y_train
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Mutable access invalidates the posterior cache.
    pub fn kernel_mut(&mut self) -> &mut Kernel {
        self.cache = None;
        &mut self.kernel
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn log_noise(&self) -> f64 {
        self.log_noise
    }

    pub fn set_log_noise(&mut self, log_noise: f64) {
        self.log_noise = log_noise;
        self.cache = None;
    }

    /// Appends training rows; the posterior cache is invalidated. Adding zero
    /// rows leaves the model untouched.
    pub fn add_data(&mut self, x_new: &DMatrix<f64>, y_new: &DVector<f64>) -> Result<(), GprError> {
        if x_new.nrows() != y_new.len() {
            return Err(GprError::Shape(format!(
                "{} input rows but {} targets",
                x_new.nrows(),
                y_new.len()
            )));
        }
        if x_new.ncols() != self.x_train.ncols() {
            return Err(GprError::Shape(format!(
                "new inputs have {} columns, model expects {}",
                x_new.ncols(),
                self.x_train.ncols()
            )));
        }
        if x_new.nrows() == 0 {
            return Ok(());
        }
        let old_n = self.x_train.nrows();
        let n = old_n + x_new.nrows();
        let mut x = DMatrix::zeros(n, self.x_train.ncols());
        x.rows_mut(0, old_n).copy_from(&self.x_train);
        x.rows_mut(old_n, x_new.nrows()).copy_from(x_new);
        let mut y = DVector::zeros(n);
        y.rows_mut(0, old_n).copy_from(&self.y_train);
        y.rows_mut(old_n, y_new.len()).copy_from(y_new);
        self.x_train = x;
        self.y_train = y;
        self.cache = None;
        Ok(())
    }

    /// Factorizes `K + sigma^2 I`, escalating a relative jitter from 1e-8 to
    /// 1e-4 of the mean diagonal before giving up.
    fn factorize(&self) -> Result<PosteriorCache, GprError> {
        if self.n_train() == 0 {
            return Err(GprError::Empty);
        }
        let k = self.kernel.gram(&self.x_train, &self.x_train)?;
        let noise_var = self.noise_std() * self.noise_std();
        let n = k.nrows();
        let mut a = k;
        for i in 0..n {
            a[(i, i)] += noise_var;
        }
        let mean_diag = a.trace() / n as f64;

        if let Some(chol) = Cholesky::new(a.clone()) {
            let alpha = chol.solve(&self.y_train);
            return Ok(PosteriorCache { chol, alpha, jitter: 0.0 });
        }
        let mut jitter = JITTER_START * mean_diag;
        let max_jitter = JITTER_MAX * mean_diag;
        while jitter <= max_jitter {
            let mut aj = a.clone();
            for i in 0..n {
                aj[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(aj) {
                let alpha = chol.solve(&self.y_train);
                return Ok(PosteriorCache { chol, alpha, jitter });
            }
            jitter *= 10.0;
        }
        Err(GprError::IllConditioned { max_jitter })
    }

    /// Rebuilds the cached Cholesky factorization.
    pub fn refresh(&mut self) -> Result<(), GprError> {
        self.cache = Some(self.factorize()?);
        Ok(())
    }

    /// Jitter the cached factorization needed, if a cache exists.
    pub fn cached_jitter(&self) -> Option<f64> {
        self.cache.as_ref().map(|c| c.jitter)
    }

    fn with_cache<T>(&self, f: impl FnOnce(&PosteriorCache) -> T) -> Result<T, GprError> {
        match &self.cache {
            Some(cache) => Ok(f(cache)),
            None => {
                let cache = self.factorize()?;
                Ok(f(&cache))
            }
        }
    }

    /// Posterior mean and variance at the query rows. Variances are clamped
    /// at zero from below; the clamp count and magnitude are reported.
    pub fn predict(&self, x_query: &DMatrix<f64>) -> Result<Prediction, GprError> {
        if self.n_train() == 0 {
            return Err(GprError::Empty);
        }
        let k_star = self.kernel.gram(&self.x_train, x_query)?;
        let prior_diag = self.kernel.amplitude();
        self.with_cache(|cache| {
            let mean = k_star.transpose() * &cache.alpha;
            let solved = cache.chol.solve(&k_star);
            let mut variance = DVector::zeros(x_query.nrows());
            let mut clamped = 0;
            let mut max_clamp: f64 = 0.0;
            for j in 0..x_query.nrows() {
                let reduction = k_star.column(j).dot(&solved.column(j));
                let v = prior_diag - reduction;
                if v < 0.0 {
                    clamped += 1;
                    max_clamp = max_clamp.max(-v);
                    variance[j] = 0.0;
                } else {
                    variance[j] = v;
                }
            }
            Prediction { mean, variance, clamped, max_clamp }
        })
    }

    /// `-1/2 y' (K + s^2 I)^-1 y - 1/2 log det(K + s^2 I) - N/2 log 2 pi`.
    pub fn log_marginal_likelihood(&self) -> Result<f64, GprError> {
        self.with_cache(|cache| lml_from_cache(&self.y_train, cache))
    }

    /// Gradients of the log marginal likelihood with respect to the log noise
    /// scale and every kernel parameter, via
    /// `dL/dK = 1/2 (aa' - K^-1)` with `a = K^-1 y`.
    pub fn lml_gradients(&self) -> Result<LmlGrads, GprError> {
        Ok(self.lml_and_gradients()?.1)
    }

    fn lml_and_gradients(&self) -> Result<(f64, LmlGrads), GprError> {
        if self.n_train() == 0 {
            return Err(GprError::Empty);
        }
        let gg = self.kernel.gram_with_grads(&self.x_train)?;
        let noise_var = self.noise_std() * self.noise_std();
        let n = self.n_train();
        let mut a = gg.gram.clone();
        for i in 0..n {
            a[(i, i)] += noise_var;
        }
        let mean_diag = a.trace() / n as f64;
        let mut jitter = 0.0;
        let cache = loop {
            let mut aj = a.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    aj[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(aj) {
                let alpha = chol.solve(&self.y_train);
                break PosteriorCache { chol, alpha, jitter };
            }
            jitter = if jitter == 0.0 { JITTER_START * mean_diag } else { jitter * 10.0 };
            if jitter > JITTER_MAX * mean_diag {
                return Err(GprError::IllConditioned { max_jitter: JITTER_MAX * mean_diag });
            }
        };

        let lml = lml_from_cache(&self.y_train, &cache);
        let k_inv = cache.chol.inverse();
        // dL/dK, shared by the noise term and the kernel backward pass
        let mut upstream = &cache.alpha * cache.alpha.transpose();
        upstream -= &k_inv;
        upstream *= 0.5;

        let d_log_noise = 2.0 * noise_var * upstream.trace();
        let kernel_grads = gg.backward(&upstream)?;
        Ok((
            lml,
            LmlGrads { d_log_noise, d_hyper: kernel_grads.hyper, d_net: kernel_grads.net },
        ))
    }

    /// Flattened trainable parameters: `[log noise, hyper, net]`.
    pub fn opt_params(&self) -> Vec<f64> {
        let mut v = vec![self.log_noise];
        v.extend(self.kernel.hyper_params());
        v.extend(self.kernel.net_params());
        v
    }

    pub fn set_opt_params(&mut self, params: &[f64]) -> Result<(), GprError> {
        let n_hyper = self.kernel.hyper_params().len();
        let n_net = self.kernel.net_params().len();
        if params.len() != 1 + n_hyper + n_net {
            return Err(GprError::Shape(format!(
                "expected {} parameters, got {}",
                1 + n_hyper + n_net,
                params.len()
            )));
        }
        self.log_noise = params[0];
        self.kernel.set_hyper_params(&params[1..1 + n_hyper])?;
        self.kernel.set_net_params(&params[1 + n_hyper..])?;
        self.cache = None;
        Ok(())
    }

    /// `num_iters` Adam ascent steps on the log marginal likelihood. The noise
    /// and kernel hyperparameters move with `lr_hyper`, network parameters
    /// with `lr_net`. Returns the likelihood trace (one value per iteration,
    /// evaluated before that iteration's step).
    pub fn optimize(
        &mut self,
        num_iters: usize,
        lr_hyper: f64,
        lr_net: f64,
    ) -> Result<Vec<f64>, GprError> {
        let mut adam = AdamState::new(self.opt_params().len());
        self.optimize_with(&mut adam, num_iters, lr_hyper, lr_net, |_, _| {})
    }

    /// [`GprModel::optimize`] with an external Adam state and a per-iteration
    /// callback (invoked after each step with the updated model).
    pub fn optimize_with(
        &mut self,
        adam: &mut AdamState,
        num_iters: usize,
        lr_hyper: f64,
        lr_net: f64,
        mut on_iter: impl FnMut(usize, &mut GprModel),
    ) -> Result<Vec<f64>, GprError> {
        let mut trace = Vec::with_capacity(num_iters);
        if num_iters == 0 {
            return Ok(trace);
        }
        let n_hyper = self.kernel.hyper_params().len();
        let mut last_finite = self.opt_params();
        for iter in 0..num_iters {
            let (lml, grads) = match self.lml_and_gradients() {
                Ok(v) => v,
                Err(e) => {
                    self.set_opt_params(&last_finite)?;
                    return Err(e);
                }
            };
            let mut grad = Vec::with_capacity(last_finite.len());
            grad.push(grads.d_log_noise);
            grad.extend(grads.d_hyper);
            grad.extend(grads.d_net);
            if !lml.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                self.set_opt_params(&last_finite)?;
                return Err(GprError::NonFiniteLoss { iter });
            }
            trace.push(lml);
            let mut params = self.opt_params();
            last_finite = params.clone();
            let update = adam.direction(&grad);
            for (i, u) in update.iter().enumerate() {
                let lr = if i < 1 + n_hyper { lr_hyper } else { lr_net };
                params[i] += lr * u; // ascent
            }
            self.set_opt_params(&params)?;
            on_iter(iter, self);
        }
        self.refresh()?;
        Ok(trace)
    }
}

fn lml_from_cache(y: &DVector<f64>, cache: &PosteriorCache) -> f64 {
    let n = y.len() as f64;
    let data_fit = -0.5 * y.dot(&cache.alpha);
    let log_det: f64 = cache.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    data_fit - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// First/second-moment accumulators for Adam; learning rates are applied by
/// the caller so parameter groups can move at different speeds.
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Bias-corrected update direction `m_hat / (sqrt(v_hat) + eps)`.
    pub fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps)
            })
            .collect()
    }
}
