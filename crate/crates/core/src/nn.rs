//! Minimal two-hidden-layer perceptron with analytic backpropagation.
//!
//! The network maps `N x D` input batches to `N x out_dim` raw scores through
//! `input -> H -> H -> out_dim` with `tanh` on both hidden layers and an
//! identity output layer. It parameterizes the weighting/membership functions
//! of the attentive kernel, the lengthscale function of the Gibbs kernel, and
//! the feature map used by deep kernel learning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {0} has zero norm and cannot be normalized")]
    ZeroNormRow(usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Weights and biases of the fixed three-affine-layer network.
///
/// Layer shapes: `D x H`, `H x H`, `H x out_dim`; weights are stored fan-in by
/// fan-out so a batch forward pass is `X * W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Parameter gradients accumulated by [`mlp_backward`]; shapes mirror
/// [`MlpParams`] exactly.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Cached activations of one forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub hidden1: DMatrix<f64>,
    pub hidden2: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

impl MlpParams {
    /// Seeded initialization: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`,
    /// biases zero. Small weights keep the initial softmax outputs near-uniform.
    pub fn new_seeded(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        assert!(in_dim > 0 && hidden_dim > 0 && out_dim > 0, "dimensions must be positive");
        let dims = [(in_dim, hidden_dim), (hidden_dim, hidden_dim), (hidden_dim, out_dim)];
        let mut weights = Vec::with_capacity(3);
        let mut biases = Vec::with_capacity(3);
        for (fan_in, fan_out) in dims {
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_in, fan_out, |_, _| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Self { weights, biases }
    }

    /// All-zero parameters with the given layer dimensions.
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        assert!(in_dim > 0 && hidden_dim > 0 && out_dim > 0, "dimensions must be positive");
        Self {
            weights: vec![
                DMatrix::zeros(in_dim, hidden_dim),
                DMatrix::zeros(hidden_dim, hidden_dim),
                DMatrix::zeros(hidden_dim, out_dim),
            ],
            biases: vec![
                DVector::zeros(hidden_dim),
                DVector::zeros(hidden_dim),
                DVector::zeros(out_dim),
            ],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[2].ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens parameters in declared order: per layer, weight entries
    /// (column-major) followed by the bias entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`]. Rejects wrong lengths and non-finite entries.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::Shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("flat parameter vector"));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
            for v in b.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

impl MlpGradients {
    /// Zero gradients matching the shape of `params`.
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    /// Same flattening order as [`MlpParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn check_input(params: &MlpParams, x: &DMatrix<f64>) -> Result<(), NnError> {
    if x.ncols() != params.in_dim() {
        return Err(NnError::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            params.in_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("network input"));
    }
    Ok(())
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut z = x * w;
    let bt = b.transpose();
    for mut row in z.row_iter_mut() {
        row += &bt;
    }
    z
}

/// Batched forward pass producing raw (pre-softmax) scores, one row per input.
pub fn mlp_forward(params: &MlpParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
    Ok(mlp_forward_trace(params, x)?.output)
}

/// Forward pass that keeps the hidden activations for a later backward pass.
pub fn mlp_forward_trace(params: &MlpParams, x: &DMatrix<f64>) -> Result<MlpTrace, NnError> {
    check_input(params, x)?;
    let hidden1 = affine(x, &params.weights[0], &params.biases[0]).map(f64::tanh);
    let hidden2 = affine(&hidden1, &params.weights[1], &params.biases[1]).map(f64::tanh);
    let output = affine(&hidden2, &params.weights[2], &params.biases[2]);
    Ok(MlpTrace { hidden1, hidden2, output })
}

/// Exact gradient of `sum(upstream .* mlp_forward(params, x))` with respect to
/// every weight and bias.
pub fn mlp_backward(
    params: &MlpParams,
    x: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
) -> Result<MlpGradients, NnError> {
    let trace = mlp_forward_trace(params, x)?;
    mlp_backward_trace(params, x, &trace, upstream)
}

/// Backward pass reusing the activations from [`mlp_forward_trace`].
pub fn mlp_backward_trace(
    params: &MlpParams,
    x: &DMatrix<f64>,
    trace: &MlpTrace,
    upstream: &DMatrix<f64>,
) -> Result<MlpGradients, NnError> {
    if upstream.shape() != (x.nrows(), params.out_dim()) {
        return Err(NnError::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream.nrows(),
            upstream.ncols(),
            x.nrows(),
            params.out_dim()
        )));
    }

    let mut grads = MlpGradients::zeros_like(params);

    // Output layer is identity: delta3 = upstream.
    grads.weights[2] = trace.hidden2.transpose() * upstream;
    grads.biases[2] = column_sums(upstream);
    let d_hidden2 = upstream * params.weights[2].transpose();

    // tanh'(z) = 1 - tanh(z)^2, expressed through the stored activation.
    let delta2 = d_hidden2.zip_map(&trace.hidden2, |g, a| g * (1.0 - a * a));
    grads.weights[1] = trace.hidden1.transpose() * &delta2;
    grads.biases[1] = column_sums(&delta2);
    let d_hidden1 = delta2 * params.weights[1].transpose();

    let delta1 = d_hidden1.zip_map(&trace.hidden1, |g, a| g * (1.0 - a * a));
    grads.weights[0] = x.transpose() * &delta1;
    grads.biases[0] = column_sums(&delta1);

    Ok(grads)
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum())
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = raw.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward pass of [`softmax_rows`]: given `s = softmax(raw)` and the
/// gradient with respect to `s`, returns the gradient with respect to `raw`.
pub fn softmax_rows_backward(softmax_out: &DMatrix<f64>, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(softmax_out.shape(), upstream.shape(), "softmax backward shape mismatch");
    let mut out = DMatrix::zeros(softmax_out.nrows(), softmax_out.ncols());
    for i in 0..softmax_out.nrows() {
        let dot: f64 = softmax_out.row(i).iter().zip(upstream.row(i).iter()).map(|(s, g)| s * g).sum();
        for j in 0..softmax_out.ncols() {
            out[(i, j)] = softmax_out[(i, j)] * (upstream[(i, j)] - dot);
        }
    }
    out
}

/// Scales every row to unit Euclidean norm. Rows of all zeros are rejected
/// (softmax output is strictly positive, so this cannot happen downstream).
pub fn l2_normalize_rows(w: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
    let mut out = w.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(NnError::ZeroNormRow(i));
        }
        row /= norm;
    }
    Ok(out)
}

/// Backward pass of [`l2_normalize_rows`] given the original (pre-normalization)
/// rows and the gradient with respect to the normalized rows.
pub fn l2_normalize_rows_backward(input: &DMatrix<f64>, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(input.shape(), upstream.shape(), "l2 normalize backward shape mismatch");
    let mut out = DMatrix::zeros(input.nrows(), input.ncols());
    for i in 0..input.nrows() {
        let norm = input.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = input
            .row(i)
            .iter()
            .zip(upstream.row(i).iter())
            .map(|(x, g)| x * g)
            .sum();
        // d/dx (x / |x|) applied to the upstream row:
        // g/|x| - x (g . x) / |x|^3
        for j in 0..input.ncols() {
            out[(i, j)] = upstream[(i, j)] / norm - input[(i, j)] * dot / norm.powi(3);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_params(in_dim: usize, hidden: usize, out: usize, seed: u64) -> MlpParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        MlpParams::new_seeded(in_dim, hidden, out, &mut rng)
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    // Scalar-loop forward pass, independent of the matrix implementation.
    fn scalar_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let flat = params.flatten();
        let (d, h, o) = (params.in_dim(), params.hidden_dim(), params.out_dim());
        // column-major weight entries followed by bias, per layer
        let layer = |input: &[f64], fan_in: usize, fan_out: usize, offset: usize| -> (Vec<f64>, usize) {
            let mut z = vec![0.0; fan_out];
            for j in 0..fan_out {
                for i in 0..fan_in {
                    z[j] += input[i] * flat[offset + j * fan_in + i];
                }
            }
            let bias_offset = offset + fan_in * fan_out;
            for j in 0..fan_out {
                z[j] += flat[bias_offset + j];
            }
            (z, bias_offset + fan_out)
        };
        let (z1, off1) = layer(x, d, h, 0);
        let a1: Vec<f64> = z1.iter().map(|v| v.tanh()).collect();
        let (z2, off2) = layer(&a1, h, h, off1);
        let a2: Vec<f64> = z2.iter().map(|v| v.tanh()).collect();
        let (z3, _) = layer(&a2, h, o, off2);
        z3
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = MlpParams::zeros(3, 5, 4);
        let x = random_matrix(7, 3, 1);
        let y = mlp_forward(&params, &x).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let params = random_params(2, 6, 3, 2);
        let row = random_matrix(1, 2, 3);
        let n = 5;
        let x = DMatrix::from_fn(n, 2, |_, j| row[(0, j)]);
        let y = mlp_forward(&params, &x).unwrap();
        for i in 1..n {
            assert_eq!(y.row(i), y.row(0));
        }
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        for seed in 0..5 {
            let params = random_params(3, 7, 4, 100 + seed);
            let x = random_matrix(1, 3, 200 + seed);
            let batched = mlp_forward(&params, &x).unwrap();
            let scalar = scalar_forward(&params, x.row(0).transpose().as_slice());
            for j in 0..4 {
                assert_relative_eq!(batched[(0, j)], scalar[j], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let params = random_params(2, 4, 3, 9);
        let x = random_matrix(6, 2, 10);
        let a = mlp_forward(&params, &x).unwrap();
        let b = mlp_forward(&params, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = random_params(3, 4, 2, 11);
        let x = random_matrix(5, 2, 12);
        assert!(matches!(mlp_forward(&params, &x), Err(NnError::Shape(_))));
        let good_x = random_matrix(5, 3, 13);
        let bad_upstream = random_matrix(4, 2, 14);
        assert!(matches!(
            mlp_backward(&params, &good_x, &bad_upstream),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = random_params(2, 5, 3, 15);
        let x = random_matrix(4, 2, 16);
        let upstream = DMatrix::zeros(4, 3);
        let grads = mlp_backward(&params, &x, &upstream).unwrap();
        assert!(grads.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_input_rows_double_the_gradient() {
        let params = random_params(2, 4, 3, 17);
        let single = random_matrix(1, 2, 18);
        let upstream_single = random_matrix(1, 3, 19);
        let doubled = DMatrix::from_fn(2, 2, |_, j| single[(0, j)]);
        let upstream_doubled = DMatrix::from_fn(2, 3, |_, j| upstream_single[(0, j)]);

        let g1 = mlp_backward(&params, &single, &upstream_single).unwrap().flatten();
        let g2 = mlp_backward(&params, &doubled, &upstream_doubled).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    // Central finite differences over every parameter; the loss is
    // sum(upstream .* forward(x)).
    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..4 {
            let mut params = random_params(1, 2, 3, 30 + seed);
            let x = random_matrix(4, 1, 40 + seed);
            let upstream = random_matrix(4, 3, 50 + seed);

            let analytic = mlp_backward(&params, &x, &upstream).unwrap().flatten();
            let base = params.flatten();
            let step = 1e-6;
            for (idx, base_v) in base.iter().enumerate() {
                let mut flat = base.clone();
                flat[idx] = base_v + step;
                params.assign_flat(&flat).unwrap();
                let up = mlp_forward(&params, &x).unwrap().component_mul(&upstream).sum();
                flat[idx] = base_v - step;
                params.assign_flat(&flat).unwrap();
                let down = mlp_forward(&params, &x).unwrap().component_mul(&upstream).sum();
                params.assign_flat(&base).unwrap();

                let numeric = (up - down) / (2.0 * step);
                let denom = numeric.abs().max(1e-8);
                assert!(
                    (analytic[idx] - numeric).abs() / denom < 1e-6,
                    "param {idx}: analytic {} vs numeric {}",
                    analytic[idx],
                    numeric
                );
            }
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let raw = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let s = softmax_rows(&raw);
        assert_relative_eq!(s[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[(0, 1)], 0.5, epsilon = 1e-15);

        let raw = DMatrix::from_row_slice(1, 4, &[3.7, 3.7, 3.7, 3.7]);
        let s = softmax_rows(&raw);
        for j in 0..4 {
            assert_relative_eq!(s[(0, j)], 0.25, epsilon = 1e-15);
        }

        let raw = DMatrix::from_row_slice(1, 2, &[1.0_f64.ln(), 3.0_f64.ln()]);
        let s = softmax_rows(&raw);
        assert_relative_eq!(s[(0, 0)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(s[(0, 1)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_stay_positive() {
        let raw = random_matrix(20, 6, 60) * 50.0;
        let s = softmax_rows(&raw);
        for i in 0..s.nrows() {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn l2_normalize_closed_forms() {
        let w = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let n = l2_normalize_rows(&w).unwrap();
        assert_relative_eq!(n[(0, 0)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(n[(0, 1)], 0.8, epsilon = 1e-15);

        // unit rows are fixed points
        let repeat = l2_normalize_rows(&n).unwrap();
        assert_relative_eq!(repeat[(0, 0)], n[(0, 0)], epsilon = 1e-15);

        let w = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let n = l2_normalize_rows(&w).unwrap();
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(n[(0, 0)], expected, epsilon = 1e-15);
        assert_relative_eq!(n[(0, 1)], expected, epsilon = 1e-15);
    }

    #[test]
    fn l2_normalize_unit_norm_invariant() {
        let w = softmax_rows(&random_matrix(15, 5, 61));
        let n = l2_normalize_rows(&w).unwrap();
        for i in 0..n.nrows() {
            let norm: f64 = n.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_rejects_zero_rows() {
        let w = DMatrix::zeros(2, 3);
        assert!(matches!(l2_normalize_rows(&w), Err(NnError::ZeroNormRow(0))));
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let raw = random_matrix(3, 4, 62);
        let upstream = random_matrix(3, 4, 63);
        let s = softmax_rows(&raw);
        let analytic = softmax_rows_backward(&s, &upstream);
        let step = 1e-6;
        for i in 0..raw.nrows() {
            for j in 0..raw.ncols() {
                let mut plus = raw.clone();
                plus[(i, j)] += step;
                let mut minus = raw.clone();
                minus[(i, j)] -= step;
                let f = |m: &DMatrix<f64>| softmax_rows(m).component_mul(&upstream).sum();
                let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
                assert_relative_eq!(analytic[(i, j)], numeric, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn l2_normalize_backward_matches_finite_differences() {
        let w = softmax_rows(&random_matrix(3, 4, 64));
        let upstream = random_matrix(3, 4, 65);
        let analytic = l2_normalize_rows_backward(&w, &upstream);
        let step = 1e-6;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                let mut plus = w.clone();
                plus[(i, j)] += step;
                let mut minus = w.clone();
                minus[(i, j)] -= step;
                let f = |m: &DMatrix<f64>| {
                    l2_normalize_rows(m).unwrap().component_mul(&upstream).sum()
                };
                let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
                assert_relative_eq!(analytic[(i, j)], numeric, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }
}
