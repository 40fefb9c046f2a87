//! The attentive kernel: soft lengthscale selection over a fixed grid of base
//! kernels, gated by an instance-selection mask.
//!
//! For normalized weight vectors `w` and membership vectors `z` produced by a
//! network (softmax over raw scores, then scaled to unit Euclidean norm),
//!
//! `ak(x, x') = alpha * (z . z') * sum_m w_m k_m(x, x') w'_m`
//!
//! so the self-covariance is exactly `alpha` and every entry stays inside
//! `[0, alpha]`.

use nalgebra::DMatrix;
use rand::Rng;

use super::{
    base_kernel_stack_from_dists, pairwise_sq_dists, GradContext, GramGrads, KernelError,
    KernelGrads, LengthscaleGrid,
};
use crate::nn::{
    l2_normalize_rows, l2_normalize_rows_backward, mlp_backward_trace, mlp_forward_trace,
    softmax_rows, softmax_rows_backward, MlpParams, MlpTrace,
};

/// Ablation variants of the attentive kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AkVariant {
    /// Lengthscale selection and instance selection from one shared network.
    Full,
    /// Lengthscale selection only; the mask is replaced by all-ones.
    WeightOnly,
    /// Instance selection only; weights are uniform `1/sqrt(M)`.
    MaskOnly,
    /// Separate networks for the weighting and membership functions.
    TwoNets,
}

impl AkVariant {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "full" => Some(AkVariant::Full),
            "weight" => Some(AkVariant::WeightOnly),
            "mask" => Some(AkVariant::MaskOnly),
            "nnx2" => Some(AkVariant::TwoNets),
            _ => None,
        }
    }

    fn uses_weights(self) -> bool {
        !matches!(self, AkVariant::MaskOnly)
    }

    fn uses_mask(self) -> bool {
        !matches!(self, AkVariant::WeightOnly)
    }
}

#[derive(Debug, Clone)]
pub struct AkParams {
    pub log_amplitude: f64,
    pub grid: LengthscaleGrid,
    pub net: MlpParams,
    pub second_net: Option<MlpParams>,
    pub variant: AkVariant,
}

impl AkParams {
    pub fn new_seeded(
        amplitude: f64,
        grid: LengthscaleGrid,
        in_dim: usize,
        hidden_dim: usize,
        variant: AkVariant,
        rng: &mut impl Rng,
    ) -> Result<Self, KernelError> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(KernelError::InvalidParam(format!("amplitude must be positive, got {amplitude}")));
        }
        let net = MlpParams::new_seeded(in_dim, hidden_dim, grid.len(), rng);
        let second_net = match variant {
            AkVariant::TwoNets => Some(MlpParams::new_seeded(in_dim, hidden_dim, grid.len(), rng)),
            _ => None,
        };
        Ok(Self { log_amplitude: amplitude.ln(), grid, net, second_net, variant })
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.net.out_dim() != self.grid.len() {
            return Err(KernelError::InvalidParam(format!(
                "network output dimension {} does not match grid size {}",
                self.net.out_dim(),
                self.grid.len()
            )));
        }
        match (&self.second_net, self.variant) {
            (Some(second), AkVariant::TwoNets) if second.out_dim() != self.grid.len() => {
                Err(KernelError::InvalidParam(format!(
                    "second network output dimension {} does not match grid size {}",
                    second.out_dim(),
                    self.grid.len()
                )))
            }
            (None, AkVariant::TwoNets) => {
                Err(KernelError::InvalidParam("two-network variant requires a second network".into()))
            }
            (Some(_), v) if v != AkVariant::TwoNets => {
                Err(KernelError::InvalidParam("second network is only valid for the nnx2 variant".into()))
            }
            _ => Ok(()),
        }
    }

    /// Normalized attention rows for a batch: softmax over raw scores, then
    /// unit-norm scaling. Also returns the intermediates for backprop.
    fn attention(&self, net: &MlpParams, x: &DMatrix<f64>) -> Result<Attention, KernelError> {
        let trace = mlp_forward_trace(net, x)?;
        let soft = softmax_rows(&trace.output);
        let normalized = l2_normalize_rows(&soft)?;
        Ok(Attention { trace, soft, normalized })
    }

    fn uniform_weights(&self, n: usize) -> DMatrix<f64> {
        let m = self.grid.len();
        DMatrix::from_element(n, m, 1.0 / (m as f64).sqrt())
    }

    pub fn gram(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        self.validate()?;
        let d2 = pairwise_sq_dists(x1, x2)?;

        let same = std::ptr::eq(x1, x2) || x1 == x2;
        let (w1, w2) = if self.variant.uses_weights() {
            let a1 = self.attention(&self.net, x1)?;
            let a2 = if same { a1.clone() } else { self.attention(&self.net, x2)? };
            (a1.normalized, a2.normalized)
        } else {
            (self.uniform_weights(x1.nrows()), self.uniform_weights(x2.nrows()))
        };

        let mask = if self.variant.uses_mask() {
            let net = self.second_net.as_ref().unwrap_or(&self.net);
            let z1 = self.attention(net, x1)?.normalized;
            let z2 = if same { z1.clone() } else { self.attention(net, x2)?.normalized };
            Some((z1, z2))
        } else {
            None
        };

        // fused accumulation over the lengthscale grid: one pass over the
        // distance matrix instead of materializing M base-kernel matrices
        let inv: Vec<f64> = self.grid.lengthscales().iter().map(|l| -0.5 / (l * l)).collect();
        let m = inv.len();
        let (n1, n2) = d2.shape();
        let mut weighted = DMatrix::zeros(n1, n2);
        for j in 0..n2 {
            for i in 0..n1 {
                let d = d2[(i, j)];
                let mut acc = 0.0;
                for k in 0..m {
                    acc += w1[(i, k)] * (d * inv[k]).exp() * w2[(j, k)];
                }
                weighted[(i, j)] = acc;
            }
        }

        let alpha = self.log_amplitude.exp();
        Ok(match mask {
            Some((z1, z2)) => {
                let visibility = z1 * z2.transpose();
                visibility.component_mul(&weighted).map(|v| alpha * v)
            }
            None => weighted.map(|v| alpha * v),
        })
    }

    pub fn gram_with_grads(&self, x: &DMatrix<f64>) -> Result<GramGrads, KernelError> {
        self.validate()?;
        let n = x.nrows();
        let d2 = pairwise_sq_dists(x, x)?;
        let stack = base_kernel_stack_from_dists(&self.grid, &d2);

        let weight_att = if self.variant.uses_weights() {
            Some(self.attention(&self.net, x)?)
        } else {
            None
        };
        let mask_att = if self.variant.uses_mask() {
            match (self.variant, &self.second_net) {
                (AkVariant::TwoNets, Some(second)) => Some(self.attention(second, x)?),
                // shared network: the membership rows equal the weight rows
                _ => match &weight_att {
                    Some(a) => Some(a.clone()),
                    None => Some(self.attention(&self.net, x)?),
                },
            }
        } else {
            None
        };

        let wbar = weight_att
            .as_ref()
            .map(|a| a.normalized.clone())
            .unwrap_or_else(|| self.uniform_weights(n));
        let zbar = mask_att.as_ref().map(|a| a.normalized.clone());

        // weighted sum of base kernels, kept for the backward pass;
        // column-major traversal matches the matrix layout
        let m = self.grid.len();
        let mut weighted = DMatrix::zeros(n, n);
        for (k, base) in stack.iter().enumerate() {
            let col = wbar.column(k);
            for j in 0..n {
                let wj = col[j];
                for i in 0..n {
                    weighted[(i, j)] += col[i] * base[(i, j)] * wj;
                }
            }
        }

        let alpha = self.log_amplitude.exp();
        let gram = match &zbar {
            Some(z) => {
                let mask = z * z.transpose();
                (mask.component_mul(&weighted)).map(|v| alpha * v)
            }
            None => weighted.map(|v| alpha * v),
        };

        Ok(GramGrads {
            gram,
            ctx: GradContext::Ak(AkCtx {
                params: self.clone(),
                x: x.clone(),
                stack,
                weight_att,
                mask_att,
                wbar,
                zbar,
                weighted,
                alpha,
            }),
        })
    }
}

#[derive(Clone)]
struct Attention {
    trace: MlpTrace,
    soft: DMatrix<f64>,
    normalized: DMatrix<f64>,
}

/// Assembles the attentive Gram matrix from precomputed parts: normalized
/// weight rows for each side, an optional pair of normalized membership rows,
/// and the base-kernel stack. Exposed so tests and oracles can hand-set
/// attention vectors.
pub fn ak_gram_from_parts(
    alpha: f64,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    mask: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    stack: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let (n1, n2) = (w1.nrows(), w2.nrows());
    let mut weighted = DMatrix::zeros(n1, n2);
    for (k, base) in stack.iter().enumerate() {
        let c1 = w1.column(k);
        let c2 = w2.column(k);
        // column-major traversal matches the matrix layout
        for j in 0..n2 {
            let wj = c2[j];
            for i in 0..n1 {
                weighted[(i, j)] += c1[i] * base[(i, j)] * wj;
            }
        }
    }
    match mask {
        Some((z1, z2)) => {
            let visibility = z1 * z2.transpose();
            visibility.component_mul(&weighted).map(|v| alpha * v)
        }
        None => weighted.map(|v| alpha * v),
    }
}

pub(super) struct AkCtx {
    params: AkParams,
    x: DMatrix<f64>,
    stack: Vec<DMatrix<f64>>,
    weight_att: Option<Attention>,
    mask_att: Option<Attention>,
    wbar: DMatrix<f64>,
    zbar: Option<DMatrix<f64>>,
    weighted: DMatrix<f64>,
    alpha: f64,
}

impl AkCtx {
    pub(super) fn backward(
        &self,
        gram: &DMatrix<f64>,
        upstream: &DMatrix<f64>,
    ) -> Result<KernelGrads, KernelError> {
        let n = self.x.nrows();
        let m = self.params.grid.len();

        let d_log_alpha = upstream.component_mul(gram).sum();

        // dL/dS where G = alpha * mask .* S (mask absent => ones)
        let d_weighted = match &self.zbar {
            Some(z) => {
                let mask = z * z.transpose();
                upstream.component_mul(&mask).map(|v| self.alpha * v)
            }
            None => upstream.map(|v| self.alpha * v),
        };

        // gradient on the normalized weight rows: for each column k,
        // ((T + T^t) .* K_k) w_k with T = dL/dS
        let mut d_wbar = DMatrix::zeros(n, m);
        if self.params.variant.uses_weights() {
            let sym = &d_weighted + d_weighted.transpose();
            for k in 0..m {
                let scaled = sym.component_mul(&self.stack[k]);
                let col = &scaled * self.wbar.column(k);
                d_wbar.set_column(k, &col);
            }
        }

        // gradient on the normalized membership rows: (U + U^t) z with
        // U = dL/d(mask) = alpha * upstream .* S
        let d_zbar = self.zbar.as_ref().map(|z| {
            let d_mask = upstream.component_mul(&self.weighted).map(|v| self.alpha * v);
            (&d_mask + d_mask.transpose()) * z
        });

        let chain_to_net =
            |net: &MlpParams, att: &Attention, d_norm: &DMatrix<f64>| -> Result<Vec<f64>, KernelError> {
                let d_soft = l2_normalize_rows_backward(&att.soft, d_norm);
                let d_raw = softmax_rows_backward(&att.soft, &d_soft);
                Ok(mlp_backward_trace(net, &self.x, &att.trace, &d_raw)?.flatten())
            };

        let net = match self.params.variant {
            AkVariant::Full => {
                // shared network: both attention heads reuse one forward pass
                let att = self.weight_att.as_ref().expect("full variant has weights");
                let total = &d_wbar + d_zbar.as_ref().expect("full variant has mask");
                chain_to_net(&self.params.net, att, &total)?
            }
            AkVariant::WeightOnly => {
                let att = self.weight_att.as_ref().expect("weight variant has weights");
                chain_to_net(&self.params.net, att, &d_wbar)?
            }
            AkVariant::MaskOnly => {
                let att = self.mask_att.as_ref().expect("mask variant has memberships");
                chain_to_net(&self.params.net, att, d_zbar.as_ref().expect("mask variant has mask"))?
            }
            AkVariant::TwoNets => {
                let w_att = self.weight_att.as_ref().expect("nnx2 variant has weights");
                let z_att = self.mask_att.as_ref().expect("nnx2 variant has memberships");
                let second = self.params.second_net.as_ref().expect("nnx2 variant has a second network");
                let mut v = chain_to_net(&self.params.net, w_att, &d_wbar)?;
                v.extend(chain_to_net(second, z_att, d_zbar.as_ref().unwrap())?);
                v
            }
        };

        Ok(KernelGrads { hyper: vec![d_log_alpha], net })
    }
}
