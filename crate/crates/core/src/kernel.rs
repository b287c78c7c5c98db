//! Covariance kernels: stationary base kernels, the KNN-truncated sparse
//! spatial kernel, the latent feature kernel, and their Kronecker composition.

use crate::data::Grid;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{
    banded_cholesky_escalating, cholesky_escalating, BandedLower, DenseMatrix, LinOp, SymBanded,
};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Matern52,
}

impl KernelFamily {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "rbf" => Ok(KernelFamily::Rbf),
            "matern52" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidConfig(format!("unknown kernel family '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

/// Stationary kernel hyperparameters, stored as logs so optimization is
/// unconstrained.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    pub family: KernelFamily,
    pub log_lengthscale: f64,
    pub log_variance: f64,
}

impl KernelParams {
    pub fn new(family: KernelFamily, lengthscale: f64, variance: f64) -> Self {
        assert!(lengthscale > 0.0 && variance > 0.0);
        KernelParams { family, log_lengthscale: lengthscale.ln(), log_variance: variance.ln() }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }
}

#[inline]
pub fn sq_dist(xi: &[f64], xj: &[f64]) -> f64 {
    debug_assert_eq!(xi.len(), xj.len());
    let mut s = 0.0;
    for (a, b) in xi.iter().zip(xj) {
        let d = a - b;
        s += d * d;
    }
    s
}

/// Kernel value from a squared distance; the single evaluation path shared
/// by dense and sparse construction.
pub fn kernel_from_sqdist(s: f64, p: &KernelParams) -> f64 {
    let ell = p.lengthscale();
    let var = p.variance();
    match p.family {
        KernelFamily::Rbf => var * (-s / (2.0 * ell * ell)).exp(),
        KernelFamily::Matern52 => {
            let r = s.sqrt();
            let c = 5.0_f64.sqrt() / ell;
            var * (1.0 + c * r + 5.0 * s / (3.0 * ell * ell)) * (-c * r).exp()
        }
    }
}

/// Value and derivative w.r.t. the squared distance. Both kernels are smooth
/// functions of s = ‖Δ‖², so the derivative is finite at s = 0. Derivatives
/// w.r.t. the log-hyperparameters follow as dk/dlogℓ = −2s·dk/ds and
/// dk/dlogσ² = k.
pub fn kernel_from_sqdist_with_grad(s: f64, p: &KernelParams) -> (f64, f64) {
    let ell = p.lengthscale();
    let var = p.variance();
    match p.family {
        KernelFamily::Rbf => {
            let k = var * (-s / (2.0 * ell * ell)).exp();
            (k, -k / (2.0 * ell * ell))
        }
        KernelFamily::Matern52 => {
            let r = s.sqrt();
            let c = 5.0_f64.sqrt() / ell;
            let e = (-c * r).exp();
            let k = var * (1.0 + c * r + 5.0 * s / (3.0 * ell * ell)) * e;
            let dk_ds = -var * e * (5.0 / (6.0 * ell * ell)) * (1.0 + c * r);
            (k, dk_ds)
        }
    }
}

/// k(xᵢ, xⱼ) for points of any (equal) dimension.
pub fn base_kernel_eval(xi: &[f64], xj: &[f64], p: &KernelParams) -> f64 {
    kernel_from_sqdist(sq_dist(xi, xj), p)
}

/// Immutable KNN sparsity pattern: built once per grid, value arrays are
/// re-evaluated from the stored squared distances whenever hyperparameters
/// move.
#[derive(Debug)]
pub struct SpatialPattern {
    pub dim: usize,
    pub neighbor_count: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub sq_dists: Vec<f64>,
    /// max |i − j| over stored entries
    pub bandwidth: usize,
}

/// KNN-truncated spatial covariance in CSR form. The pattern is the union
/// symmetrization of the K-nearest-neighbor sets (self always included), so
/// each row holds at most 2K entries.
#[derive(Debug, Clone)]
pub struct SparseSpatialKernel {
    pub pattern: Arc<SpatialPattern>,
    pub values: Vec<f64>,
    pub params: KernelParams,
}

static KNN_BUILDS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

/// Number of KNN pattern constructions since process start. The neighbor
/// search runs once per (grid, K); training must never re-run it.
pub fn knn_build_count() -> usize {
    KNN_BUILDS.load(std::sync::atomic::Ordering::Relaxed)
}

pub fn build_knn_pattern(grid: &Grid, k: usize) -> Result<Arc<SpatialPattern>> {
    let d = grid.len();
    if k < 1 || k > d {
        return Err(Error::InvalidNeighborCount { k, dim: d });
    }
    KNN_BUILDS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let pts = grid.points();
    let pd = grid.dims();
    // K nearest per row, ties broken by lowest index, self always present
    let neighbor_rows: Vec<Vec<usize>> = exec::map_indexed(d, |i| {
        let xi = &pts[i * pd..(i + 1) * pd];
        let mut dists: Vec<(f64, usize)> = (0..d)
            .map(|j| (sq_dist(xi, &pts[j * pd..(j + 1) * pd]), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists.truncate(k);
        dists.into_iter().map(|(_, j)| j).collect()
    });
    // union symmetrization
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (i, row) in neighbor_rows.iter().enumerate() {
        for &j in row {
            adjacency[i].push(j);
            if i != j {
                adjacency[j].push(i);
            }
        }
    }
    let mut row_offsets = Vec::with_capacity(d + 1);
    let mut col_indices = Vec::new();
    let mut sq_dists = Vec::new();
    let mut bandwidth = 0usize;
    row_offsets.push(0);
    for (i, adj) in adjacency.iter_mut().enumerate() {
        adj.sort_unstable();
        adj.dedup();
        let xi = &pts[i * pd..(i + 1) * pd];
        for &j in adj.iter() {
            col_indices.push(j);
            sq_dists.push(sq_dist(xi, &pts[j * pd..(j + 1) * pd]));
            bandwidth = bandwidth.max(i.abs_diff(j));
        }
        row_offsets.push(col_indices.len());
    }
    Ok(Arc::new(SpatialPattern {
        dim: d,
        neighbor_count: k,
        row_offsets,
        col_indices,
        sq_dists,
        bandwidth,
    }))
}

pub fn build_knn_sparse_kernel(grid: &Grid, k: usize, p: &KernelParams) -> Result<SparseSpatialKernel> {
    let pattern = build_knn_pattern(grid, k)?;
    Ok(SparseSpatialKernel::from_pattern(pattern, p))
}

impl SparseSpatialKernel {
    pub fn from_pattern(pattern: Arc<SpatialPattern>, p: &KernelParams) -> Self {
        let values = pattern.sq_dists.iter().map(|&s| kernel_from_sqdist(s, p)).collect();
        SparseSpatialKernel { pattern, values, params: *p }
    }

    /// Same pattern, values re-evaluated for new hyperparameters.
    pub fn with_params(&self, p: &KernelParams) -> Self {
        Self::from_pattern(Arc::clone(&self.pattern), p)
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<f64> {
        let lo = self.pattern.row_offsets[i];
        let hi = self.pattern.row_offsets[i + 1];
        let row = &self.pattern.col_indices[lo..hi];
        row.binary_search(&j).ok().map(|pos| self.values[lo + pos])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, i).unwrap_or(0.0)).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let d = self.dim();
        let mut m = DenseMatrix::zeros(d, d);
        for i in 0..d {
            let lo = self.pattern.row_offsets[i];
            let hi = self.pattern.row_offsets[i + 1];
            for idx in lo..hi {
                m.set(i, self.pattern.col_indices[idx], self.values[idx]);
            }
        }
        m
    }

    /// Lower half packed into banded storage for factorization.
    pub fn to_banded(&self) -> SymBanded {
        let d = self.dim();
        let mut b = SymBanded::zeros(d, self.pattern.bandwidth);
        for i in 0..d {
            let lo = self.pattern.row_offsets[i];
            let hi = self.pattern.row_offsets[i + 1];
            for idx in lo..hi {
                let j = self.pattern.col_indices[idx];
                if j <= i {
                    b.set(i, j, self.values[idx]);
                }
            }
        }
        b
    }

    /// Accumulates hyperparameter gradients from per-entry value gradients
    /// laid out as the lower in-band half (the layout produced by the banded
    /// factorization adjoint). Entries (i,j) with i≠j are mirrored, so the
    /// caller supplies the combined lower-half sensitivity.
    pub fn hyper_grads_from_banded(&self, bar: &SymBanded) -> (f64, f64) {
        let mut g_log_ell = 0.0;
        let mut g_log_var = 0.0;
        for i in 0..self.dim() {
            let lo = self.pattern.row_offsets[i];
            let hi = self.pattern.row_offsets[i + 1];
            for idx in lo..hi {
                let j = self.pattern.col_indices[idx];
                if j > i {
                    continue;
                }
                let vbar = bar.get(i, j);
                if vbar == 0.0 {
                    continue;
                }
                let s = self.pattern.sq_dists[idx];
                let (k, dk_ds) = kernel_from_sqdist_with_grad(s, &self.params);
                g_log_ell += vbar * (-2.0 * s * dk_ds);
                g_log_var += vbar * k;
            }
        }
        (g_log_ell, g_log_var)
    }
}

impl LinOp for SparseSpatialKernel {
    fn dim(&self) -> usize {
        self.pattern.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let lo = self.pattern.row_offsets[i];
            let hi = self.pattern.row_offsets[i + 1];
            let mut acc = 0.0;
            for idx in lo..hi {
                acc += self.values[idx] * x[self.pattern.col_indices[idx]];
            }
            *out = acc;
        }
    }
}

/// K_a(HA, HB): entry (i,j) = k(HA_i, HB_j) over latent rows.
pub fn build_feature_kernel(
    ha: &[f64],
    hb: &[f64],
    latent_dim: usize,
    p: &KernelParams,
) -> Result<DenseMatrix> {
    if latent_dim == 0 || ha.len() % latent_dim != 0 || hb.len() % latent_dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: latent_dim,
            got: ha.len().min(hb.len()),
            context: "build_feature_kernel",
        });
    }
    let n = ha.len() / latent_dim;
    let m = hb.len() / latent_dim;
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let hi = &ha[i * latent_dim..(i + 1) * latent_dim];
        for j in 0..m {
            let hj = &hb[j * latent_dim..(j + 1) * latent_dim];
            out.set(i, j, base_kernel_eval(hi, hj, p));
        }
    }
    Ok(out)
}

/// Spatial factor of a Kronecker kernel: dense for oracle-domain instances,
/// KNN-sparse otherwise.
#[derive(Debug, Clone)]
pub enum SpatialBlock {
    Dense(DenseMatrix),
    Sparse(SparseSpatialKernel),
}

impl SpatialBlock {
    pub fn dim(&self) -> usize {
        match self {
            SpatialBlock::Dense(m) => m.rows,
            SpatialBlock::Sparse(s) => s.dim(),
        }
    }
}

impl LinOp for SpatialBlock {
    fn dim(&self) -> usize {
        SpatialBlock::dim(self)
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            SpatialBlock::Dense(m) => m.apply(x, y),
            SpatialBlock::Sparse(s) => s.apply(x, y),
        }
    }
}

/// feature ⊗ spatial, never materialized.
#[derive(Debug, Clone)]
pub struct KroneckerKernel {
    pub feature_block: DenseMatrix,
    pub spatial_block: SpatialBlock,
}

enum SpatialFactor {
    Dense(crate::linalg::LowerTriangular),
    Banded(BandedLower),
}

impl SpatialFactor {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpatialFactor::Dense(l) => crate::linalg::chol_solve(l, b),
            SpatialFactor::Banded(l) => {
                let y = l.solve(b, false);
                Ok(l.solve(&y, true))
            }
        }
    }
}

impl KroneckerKernel {
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        crate::linalg::kron_matvec(&self.feature_block, &self.spatial_block, v)
    }
}

/// Solves (K_a ⊗ K_x + per-factor jitter) x = v by factoring each block once
/// and applying per-factor triangular solves.
pub fn kron_kernel_solve(kk: &KroneckerKernel, v: &[f64], jitter: f64) -> Result<Vec<f64>> {
    let n = kk.feature_block.rows;
    let m = kk.spatial_block.dim();
    if v.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: v.len(),
            context: "kron_kernel_solve",
        });
    }
    let (la, _) = cholesky_escalating(&kk.feature_block, jitter)?;
    let spatial = match &kk.spatial_block {
        SpatialBlock::Dense(mat) => {
            SpatialFactor::Dense(cholesky_escalating(mat, jitter)?.0)
        }
        SpatialBlock::Sparse(s) => {
            SpatialFactor::Banded(banded_cholesky_escalating(&s.to_banded(), jitter)?.0)
        }
    };
    // x = vec(K_a⁻¹ · X · K_x⁻ᵀ): spatial solve per row-block, then the
    // feature solve across blocks.
    let mut z = vec![0.0; n * m];
    for j in 0..n {
        let sol = spatial.solve(&v[j * m..(j + 1) * m])?;
        z[j * m..(j + 1) * m].copy_from_slice(&sol);
    }
    let mut out = vec![0.0; n * m];
    let mut col = vec![0.0; n];
    for c in 0..m {
        for j in 0..n {
            col[j] = z[j * m + c];
        }
        let sol = crate::linalg::chol_solve(&la, &col)?;
        for j in 0..n {
            out[j * m + c] = sol[j];
        }
    }
    Ok(out)
}
