//! Doubly-sparse variational GP over Kronecker-structured kernels.
//!
//! The prior over inducing values v is N(m₀(Z), K_ZZ) with
//! K_ZZ = K_a ⊗ K_x. The variational posterior is stored *whitened*: with
//! L_a = chol(K_a) and L_x = chol(K_x),
//!
//!   m − m₀(Z) = vec(L_a · W · L_xᵀ),      W ∈ R^{M×d}
//!   S = (L_a · C Cᵀ · L_aᵀ) ⊗ K_x,        C ∈ R^{M×M} lower
//!
//! so prior recovery is (W, C) = (0, I) and the KL collapses to a closed
//! form independent of the kernels. The spatial factor of every
//! cross-covariance cancels against K_ZZ⁻¹ (K_iZ K_ZZ⁻¹ = αᵢᵀ ⊗ I), which is
//! what keeps training at O(M³ + M²B + dK²): all per-sample work happens in
//! M-dimensional feature space plus banded spatial solves.

mod exact;
pub mod model;

pub use exact::{exact_gp_reference, ExactGpPosterior};
pub use model::{GpModel, ModelConfig};

use crate::error::{Error, Result};
use crate::kernel::{
    build_feature_kernel, KernelParams, SparseSpatialKernel,
};
use crate::linalg::{
    banded_cholesky_escalating, cholesky_escalating, chol_solve, tri_solve, BandedLower,
    DenseMatrix, LowerTriangular,
};

/// Packed lower-triangular variational factor; diagonal slots hold logs so
/// the factor stays positive under unconstrained optimization.
#[derive(Debug, Clone)]
pub struct TrilParam {
    pub m: usize,
    /// packed rows, diagonal entries in log scale
    pub data: Vec<f64>,
}

impl TrilParam {
    pub fn identity(m: usize) -> Self {
        TrilParam { m, data: vec![0.0; m * (m + 1) / 2] }
    }

    pub fn n_params(m: usize) -> usize {
        m * (m + 1) / 2
    }

    /// Materializes C with positive diagonal.
    pub fn to_lower(&self) -> LowerTriangular {
        let mut l = LowerTriangular::zeros(self.m);
        let mut at = 0;
        for i in 0..self.m {
            for j in 0..=i {
                let v = self.data[at];
                l.set(i, j, if i == j { v.exp() } else { v });
                at += 1;
            }
        }
        l
    }

    /// Inverse of [`Self::to_lower`] for a positive-diagonal factor.
    pub fn from_lower(l: &LowerTriangular) -> Self {
        let m = l.dim;
        let mut data = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                let v = l.get(i, j);
                data.push(if i == j { v.ln() } else { v });
            }
        }
        TrilParam { m, data }
    }
}

/// All trainable state of the variational approximation. Inducing inputs
/// live in input-function space (M fields on the training grid) and pass
/// through the embedding operator wherever the feature kernel needs them.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub n_inducing: usize,
    pub grid_len: usize,
    /// M×d inducing input functions
    pub z: Vec<f64>,
    /// M×d whitened variational mean offset
    pub w_mean: Vec<f64>,
    /// whitened variational covariance factor
    pub s_tril: TrilParam,
    pub log_noise_var: f64,
    pub feature_params: KernelParams,
    pub spatial_params: KernelParams,
    pub neighbor_count: usize,
    /// relative jitter for factorizations (escalates ×10 on failure)
    pub jitter_rel: f64,
}

impl VariationalState {
    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }
}

/// Per-step factorized blocks; everything downstream reads the effective
/// (jittered) kernels so the algebra is self-consistent to rounding error.
pub struct Blocks {
    pub k_a_zz: DenseMatrix,
    pub l_a: LowerTriangular,
    pub jitter_a: f64,
    /// B×M cross kernel between batch and inducing embeddings
    pub k_az: DenseMatrix,
    /// effective prior feature variance k_a(h,h) + jitter
    pub k_aa_diag: f64,
    pub l_x: BandedLower,
    pub jitter_x: f64,
    /// effective spatial prior diagonal
    pub kx_diag: Vec<f64>,
    pub spatial: SparseSpatialKernel,
}

/// Builds the factorized blocks for one batch: K_a over inducing
/// embeddings (M×M, factored), the B×M cross block, and the banded spatial
/// factor. `h_batch` is B×p and `h_z` M×p, both row-major.
pub fn build_blocks(
    state: &VariationalState,
    h_batch: &[f64],
    h_z: &[f64],
    latent_dim: usize,
    spatial: &SparseSpatialKernel,
) -> Result<Blocks> {
    let m = state.n_inducing;
    if h_z.len() != m * latent_dim {
        return Err(Error::DimensionMismatch {
            expected: m * latent_dim,
            got: h_z.len(),
            context: "build_blocks h_z",
        });
    }
    let k_a_raw = build_feature_kernel(h_z, h_z, latent_dim, &state.feature_params)?;
    let (l_a, jitter_a) = cholesky_escalating(&k_a_raw, state.jitter_rel)?;
    let mut k_a_zz = k_a_raw;
    for i in 0..m {
        let v = k_a_zz.get(i, i) + jitter_a;
        k_a_zz.set(i, i, v);
    }
    let k_az = build_feature_kernel(h_batch, h_z, latent_dim, &state.feature_params)?;
    let spatial = if spatial.params.log_lengthscale == state.spatial_params.log_lengthscale
        && spatial.params.log_variance == state.spatial_params.log_variance
    {
        spatial.clone()
    } else {
        spatial.with_params(&state.spatial_params)
    };
    let (l_x, jitter_x) = banded_cholesky_escalating(&spatial.to_banded(), state.jitter_rel)?;
    let kx_diag: Vec<f64> = spatial.diagonal().iter().map(|v| v + jitter_x).collect();
    let k_aa_diag = state.feature_params.variance() + jitter_a;
    Ok(Blocks { k_a_zz, l_a, jitter_a, k_az, k_aa_diag, l_x, jitter_x, kx_diag, spatial })
}

/// Feature-space weights of one sample: α = K_a⁻¹k, β = L_aᵀα, γ = Cᵀβ and
/// the scalar q = k(h,h) − ‖β‖² + ‖γ‖² that multiplies the spatial diagonal
/// in the marginal variance.
pub struct SampleWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub q: f64,
}

pub fn sample_weights(blocks: &Blocks, c: &LowerTriangular, k_row: &[f64]) -> Result<SampleWeights> {
    let alpha = chol_solve(&blocks.l_a, k_row)?;
    let beta = blocks.l_a.matvec_t(&alpha);
    let gamma = c.matvec_t(&beta);
    let q = blocks.k_aa_diag - crate::linalg::dot(&beta, &beta) + crate::linalg::dot(&gamma, &gamma);
    Ok(SampleWeights { alpha, beta, gamma, q })
}

/// The M×d matrix D with m − m₀(Z) = vec(D): D = L_a · W · L_xᵀ.
pub fn mean_offset(state: &VariationalState, blocks: &Blocks) -> (Vec<f64>, Vec<f64>) {
    let m = state.n_inducing;
    let d = state.grid_len;
    // T2 = W L_xᵀ (row j: L_x applied to row j of W)
    let mut t2 = vec![0.0; m * d];
    for j in 0..m {
        let row = blocks.l_x.matvec(&state.w_mean[j * d..(j + 1) * d]);
        t2[j * d..(j + 1) * d].copy_from_slice(&row);
    }
    // D = L_a T2
    let mut dmat = vec![0.0; m * d];
    for i in 0..m {
        let out = &mut dmat[i * d..(i + 1) * d];
        for j in 0..=i {
            let w = blocks.l_a.get(i, j);
            if w == 0.0 {
                continue;
            }
            let src = &t2[j * d..(j + 1) * d];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    (dmat, t2)
}

/// Marginal conditional moments q(fᵢ) for each batch sample:
/// μᵢ = m₀(āᵢ) + Dᵀαᵢ and diag Σᵢ = qᵢ·diag(K_x).
pub fn conditional_moments(
    state: &VariationalState,
    blocks: &Blocks,
    m0_batch: &[f64],
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let b = blocks.k_az.rows;
    let d = state.grid_len;
    let m = state.n_inducing;
    if m0_batch.len() != b * d {
        return Err(Error::DimensionMismatch {
            expected: b * d,
            got: m0_batch.len(),
            context: "conditional_moments m0",
        });
    }
    let c = state.s_tril.to_lower();
    let (dmat, _) = mean_offset(state, blocks);
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let w = sample_weights(blocks, &c, blocks.k_az.row(i))?;
        let mut mu = m0_batch[i * d..(i + 1) * d].to_vec();
        for j in 0..m {
            let a = w.alpha[j];
            if a == 0.0 {
                continue;
            }
            let src = &dmat[j * d..(j + 1) * d];
            for (o, s) in mu.iter_mut().zip(src) {
                *o += a * s;
            }
        }
        let var: Vec<f64> = blocks.kx_diag.iter().map(|k| w.q * k).collect();
        out.push((mu, var));
    }
    Ok(out)
}

/// KL(q‖p) in whitened coordinates:
/// ½[d(‖C‖²_F − M − 2Σⱼ log Cⱼⱼ) + ‖W‖²_F]. Zero exactly at (W, C) = (0, I).
pub fn kl_divergence(state: &VariationalState) -> f64 {
    let m = state.n_inducing;
    let d = state.grid_len as f64;
    let c = state.s_tril.to_lower();
    let mut frob = 0.0;
    for v in &c.data {
        frob += v * v;
    }
    let mut logdiag = 0.0;
    let mut at = 0;
    for i in 0..m {
        at += i;
        logdiag += state.s_tril.data[at]; // diagonal slot holds log C_jj
        at += 1;
    }
    let wsq: f64 = state.w_mean.iter().map(|v| v * v).sum();
    0.5 * (d * (frob - m as f64 - 2.0 * logdiag) + wsq)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ElboTerms {
    pub elbo: f64,
    pub data_term: f64,
    pub kl_term: f64,
}

/// Minibatch ELBO: (N/B)·Σᵢ E_q[log p(uᵢ|fᵢ)] − KL.
pub fn elbo(
    state: &VariationalState,
    blocks: &Blocks,
    m0_batch: &[f64],
    u_batch: &[f64],
    n_total: usize,
) -> Result<ElboTerms> {
    let b = blocks.k_az.rows;
    let d = state.grid_len;
    let moments = conditional_moments(state, blocks, m0_batch)?;
    let noise = state.noise_var();
    let scale = n_total as f64 / b as f64;
    let mut data = 0.0;
    for (i, (mu, var)) in moments.iter().enumerate() {
        let u = &u_batch[i * d..(i + 1) * d];
        let mut ssr = 0.0;
        for (m, t) in mu.iter().zip(u) {
            let r = t - m;
            ssr += r * r;
        }
        let trace: f64 = var.iter().sum();
        data += -0.5 * d as f64 * (2.0 * std::f64::consts::PI * noise).ln()
            - (ssr + trace) / (2.0 * noise);
    }
    let kl = kl_divergence(state);
    let e = scale * data - kl;
    Ok(ElboTerms { elbo: e, data_term: scale * data, kl_term: kl })
}

/// Predictive moments at a new input, given its mean field and embedding.
#[derive(Debug, Clone)]
pub struct PredictiveMoments {
    pub mean: Vec<f64>,
    /// marginal variance per grid point
    pub variance: Vec<f64>,
    /// count of points clamped from slightly negative values
    pub clamped: usize,
    /// most negative pre-clamp value seen (0 if none)
    pub worst_negative: f64,
}

pub fn predictive(
    state: &VariationalState,
    blocks: &Blocks,
    m0_star: &[f64],
    h_star: &[f64],
    latent_dim: usize,
    h_z: &[f64],
    include_noise: bool,
) -> Result<PredictiveMoments> {
    let k_star = build_feature_kernel(h_star, h_z, latent_dim, &state.feature_params)?;
    let c = state.s_tril.to_lower();
    let w = sample_weights(blocks, &c, k_star.row(0))?;
    let (dmat, _) = mean_offset(state, blocks);
    let d = state.grid_len;
    let m = state.n_inducing;
    let mut mean = m0_star.to_vec();
    for j in 0..m {
        let a = w.alpha[j];
        let src = &dmat[j * d..(j + 1) * d];
        for (o, s) in mean.iter_mut().zip(src) {
            *o += a * s;
        }
    }
    let noise = if include_noise { state.noise_var() } else { 0.0 };
    let mut clamped = 0;
    let mut worst = 0.0_f64;
    let variance: Vec<f64> = blocks
        .kx_diag
        .iter()
        .map(|k| {
            let v = w.q * k + noise;
            if v < 0.0 {
                clamped += 1;
                worst = worst.min(v);
                0.0
            } else {
                v
            }
        })
        .collect();
    if worst < -1e-10 {
        eprintln!(
            "predictive variance clamped below -1e-10 (worst {worst:.3e}, jitter_a {:.1e}, jitter_x {:.1e})",
            blocks.jitter_a, blocks.jitter_x
        );
    }
    Ok(PredictiveMoments { mean, variance, clamped, worst_negative: worst })
}

/// Maps an un-whitened mean offset (m − m₀(Z), as an M×d matrix) to W:
/// W = L_a⁻¹ · Δ · L_x⁻ᵀ. Used by tests and by closed-form initializers.
pub fn whiten_offset(blocks: &Blocks, delta: &[f64], m: usize, d: usize) -> Result<Vec<f64>> {
    // rows: solve L_a Y = Δ  (column-wise over d), then W = Y L_x⁻ᵀ row-wise
    let mut y = vec![0.0; m * d];
    let mut col = vec![0.0; m];
    for r in 0..d {
        for j in 0..m {
            col[j] = delta[j * d + r];
        }
        let sol = tri_solve(&blocks.l_a, &col, false)?;
        for j in 0..m {
            y[j * d + r] = sol[j];
        }
    }
    // W rows: L_x Wᵀ-row = y-row  =>  w_row = L_x⁻¹? — careful: T2 = W L_xᵀ
    // row-wise means t2_j = L_x w_j, so w_j = L_x⁻¹ y_j.
    let mut wmat = vec![0.0; m * d];
    for j in 0..m {
        let sol = blocks.l_x.solve(&y[j * d..(j + 1) * d], false);
        wmat[j * d..(j + 1) * d].copy_from_slice(&sol);
    }
    Ok(wmat)
}

/// Inverse of [`whiten_offset`]: Δ = L_a · W · L_xᵀ.
pub fn unwhiten_offset(blocks: &Blocks, w: &[f64], m: usize, d: usize) -> Vec<f64> {
    let mut t2 = vec![0.0; m * d];
    for j in 0..m {
        let row = blocks.l_x.matvec(&w[j * d..(j + 1) * d]);
        t2[j * d..(j + 1) * d].copy_from_slice(&row);
    }
    let mut delta = vec![0.0; m * d];
    for i in 0..m {
        let out = &mut delta[i * d..(i + 1) * d];
        for j in 0..=i {
            let lw = blocks.l_a.get(i, j);
            if lw == 0.0 {
                continue;
            }
            let src = &t2[j * d..(j + 1) * d];
            for (o, s) in out.iter_mut().zip(src) {
                *o += lw * s;
            }
        }
    }
    delta
}

#[cfg(test)]
mod tests;
