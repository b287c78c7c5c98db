//! The full model: two wavelet neural operators (prior mean and latent
//! embedding) wired into the sparse variational GP, with a fused
//! forward/backward pass producing exact reverse-mode gradients of the
//! minibatch ELBO with respect to every trainable group.

use super::{
    build_blocks, elbo, kl_divergence, mean_offset, predictive, sample_weights, Blocks, ElboTerms,
    PredictiveMoments, TrilParam, VariationalState,
};
use crate::data::{Dataset, Grid};
use crate::error::{Error, Result};
use crate::exec;
use crate::kernel::{
    build_knn_sparse_kernel, kernel_from_sqdist_with_grad, sq_dist, KernelFamily, KernelParams,
    SparseSpatialKernel,
};
use crate::linalg::{banded_cholesky_backward, cholesky_backward, chol_solve, BandedLower, DenseMatrix, SymBanded};
use crate::wno::{WnoCache, WnoConfig, WnoMachine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::Range;
use std::sync::Arc;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub wno_mean: WnoConfig,
    pub wno_emb: WnoConfig,
    pub n_inducing: usize,
    pub neighbor_count: usize,
    pub feature_family: KernelFamily,
    pub spatial_family: KernelFamily,
    pub jitter_rel: f64,
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.wno_emb.out_channels
    }
}

/// Offsets of the trainable groups inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub theta_mean: Range<usize>,
    pub theta_emb: Range<usize>,
    pub z: Range<usize>,
    pub w_mean: Range<usize>,
    pub s_tril: Range<usize>,
    /// [log ℓ_a, log σ_a², log ℓ_x, log σ_x², log σ_n²]
    pub hypers: Range<usize>,
    pub total: usize,
}

pub const HYPER_LOG_ELL_A: usize = 0;
pub const HYPER_LOG_VAR_A: usize = 1;
pub const HYPER_LOG_ELL_X: usize = 2;
pub const HYPER_LOG_VAR_X: usize = 3;
pub const HYPER_LOG_NOISE: usize = 4;

pub struct GpModel {
    pub config: ModelConfig,
    pub grid: Arc<Grid>,
    pub mean_machine: WnoMachine,
    pub emb_machine: WnoMachine,
    /// KNN pattern built once per model; values refresh per hyperparameter
    /// move without re-running the neighbor search
    pub spatial: SparseSpatialKernel,
    pub layout: ParamLayout,
}

impl GpModel {
    pub fn new(config: ModelConfig, grid: Arc<Grid>) -> Result<Self> {
        let mean_machine = WnoMachine::new(config.wno_mean.clone(), &grid)?;
        let emb_machine = WnoMachine::new(config.wno_emb.clone(), &grid)?;
        let init_spatial = KernelParams::new(config.spatial_family, 0.1, 1.0);
        let spatial = build_knn_sparse_kernel(&grid, config.neighbor_count, &init_spatial)?;
        let d = grid.len();
        let m = config.n_inducing;
        let mut at = 0usize;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let layout = ParamLayout {
            theta_mean: take(mean_machine.n_params()),
            theta_emb: take(emb_machine.n_params()),
            z: take(m * d),
            w_mean: take(m * d),
            s_tril: take(TrilParam::n_params(m)),
            hypers: take(5),
            total: at,
        };
        Ok(GpModel { config, grid, mean_machine, emb_machine, spatial, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Initial parameter vector: operator weights from variance-scaled
    /// draws, inducing inputs as randomly chosen training inputs plus small
    /// noise, whitened variational state at the prior, hyperparameters from
    /// data scales (σ_n² starts at 1e-2 × output variance).
    pub fn init_params(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        let d = self.grid.len();
        let m = self.config.n_inducing;
        let mut p = vec![0.0; self.layout.total];
        p[self.layout.theta_mean.clone()]
            .copy_from_slice(&self.mean_machine.init_params(seed ^ 0x6d65616e));
        p[self.layout.theta_emb.clone()]
            .copy_from_slice(&self.emb_machine.init_params(seed ^ 0x656d6264));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a696e69);
        // output scale drives σ_a² and the noise floor
        let mut out_mean = 0.0;
        for v in &data.outputs {
            out_mean += v;
        }
        out_mean /= data.outputs.len() as f64;
        let mut out_var = 0.0;
        for v in &data.outputs {
            out_var += (v - out_mean) * (v - out_mean);
        }
        out_var = (out_var / data.outputs.len() as f64).max(1e-8);
        {
            let z = &mut p[self.layout.z.clone()];
            let noise_scale = 0.01 * out_var.sqrt();
            for j in 0..m {
                let pick = rng.gen_range(0..data.n);
                let src = data.input(pick);
                for r in 0..d {
                    z[j * d + r] = src[r] + noise_scale * rng.gen_range(-1.0..=1.0);
                }
            }
        }
        // s_tril starts at the identity; the whitened mean gets a small
        // kick because at the exact prior (W = 0, C = I) the embedding and
        // inducing-input gradients vanish structurally
        {
            let w = &mut p[self.layout.w_mean.clone()];
            for v in w.iter_mut() {
                *v = 0.01 * rng.gen_range(-1.0..=1.0);
            }
        }
        // lengthscale of the embedding kernel from median latent distances
        let theta_emb = &p[self.layout.theta_emb.clone()];
        let probe = data.n.min(16);
        let mut hs = Vec::with_capacity(probe);
        for i in 0..probe {
            hs.push(self.emb_machine.forward(theta_emb, data.input(i))?);
        }
        let mut dists = Vec::new();
        for i in 0..probe {
            for j in 0..i {
                dists.push(sq_dist(&hs[i], &hs[j]).sqrt());
            }
        }
        dists.sort_by(|a, b| a.total_cmp(b));
        let med = if dists.is_empty() { 1.0 } else { dists[dists.len() / 2].max(1e-3) };
        // hard KNN truncation turns indefinite once the lengthscale grows
        // past roughly 0.15·(K+1) grid cells (the truncated band's symbol
        // dips negative); start safely inside that region
        let spacing = self.grid.spacing(0);
        let ell_x = (0.12 * (self.config.neighbor_count + 1) as f64 * spacing).max(1e-4);
        let h = &mut p[self.layout.hypers.clone()];
        h[HYPER_LOG_ELL_A] = med.ln();
        h[HYPER_LOG_VAR_A] = out_var.ln();
        h[HYPER_LOG_ELL_X] = ell_x.ln();
        h[HYPER_LOG_VAR_X] = 0.0;
        h[HYPER_LOG_NOISE] = (1e-2 * out_var).ln();
        Ok(p)
    }

    /// Clones the variational slices of the flat vector into a state struct.
    pub fn state_view(&self, params: &[f64]) -> VariationalState {
        let h = &params[self.layout.hypers.clone()];
        VariationalState {
            n_inducing: self.config.n_inducing,
            grid_len: self.grid.len(),
            z: params[self.layout.z.clone()].to_vec(),
            w_mean: params[self.layout.w_mean.clone()].to_vec(),
            s_tril: TrilParam {
                m: self.config.n_inducing,
                data: params[self.layout.s_tril.clone()].to_vec(),
            },
            log_noise_var: h[HYPER_LOG_NOISE],
            feature_params: KernelParams {
                family: self.config.feature_family,
                log_lengthscale: h[HYPER_LOG_ELL_A],
                log_variance: h[HYPER_LOG_VAR_A],
            },
            spatial_params: KernelParams {
                family: self.config.spatial_family,
                log_lengthscale: h[HYPER_LOG_ELL_X],
                log_variance: h[HYPER_LOG_VAR_X],
            },
            neighbor_count: self.config.neighbor_count,
            jitter_rel: self.config.jitter_rel,
        }
    }

    fn batch_forward(
        &self,
        machine: &WnoMachine,
        theta: &[f64],
        fields: &[&[f64]],
    ) -> Result<Vec<(Vec<f64>, WnoCache)>> {
        let results = exec::map_indexed(fields.len(), |i| machine.forward_cached(theta, fields[i]));
        results.into_iter().collect()
    }

    /// Embeddings and blocks shared by the ELBO and prediction paths.
    fn assemble(
        &self,
        params: &[f64],
        batch_inputs: &[&[f64]],
    ) -> Result<(VariationalState, Vec<(Vec<f64>, WnoCache)>, Vec<(Vec<f64>, WnoCache)>, Vec<(Vec<f64>, WnoCache)>, Blocks)>
    {
        let state = self.state_view(params);
        let theta_mean = &params[self.layout.theta_mean.clone()];
        let theta_emb = &params[self.layout.theta_emb.clone()];
        let d = self.grid.len();
        let m = self.config.n_inducing;
        let mean_fwd = self.batch_forward(&self.mean_machine, theta_mean, batch_inputs)?;
        let emb_fwd = self.batch_forward(&self.emb_machine, theta_emb, batch_inputs)?;
        let z_fields: Vec<&[f64]> = (0..m).map(|j| &state.z[j * d..(j + 1) * d]).collect();
        let embz_fwd = self.batch_forward(&self.emb_machine, theta_emb, &z_fields)?;
        let latent = self.config.latent_dim();
        let mut h_batch = Vec::with_capacity(batch_inputs.len() * latent);
        for (h, _) in &emb_fwd {
            h_batch.extend_from_slice(h);
        }
        let mut h_z = Vec::with_capacity(m * latent);
        for (h, _) in &embz_fwd {
            h_z.extend_from_slice(h);
        }
        let blocks = build_blocks(&state, &h_batch, &h_z, latent, &self.spatial)?;
        Ok((state, mean_fwd, emb_fwd, embz_fwd, blocks))
    }

    /// Forward-only minibatch ELBO; shares every code path with the
    /// gradient version below.
    pub fn elbo_terms(
        &self,
        params: &[f64],
        batch_inputs: &[&[f64]],
        batch_outputs: &[&[f64]],
        n_total: usize,
    ) -> Result<ElboTerms> {
        let (state, mean_fwd, _, _, blocks) = self.assemble(params, batch_inputs)?;
        let d = self.grid.len();
        let mut m0 = Vec::with_capacity(batch_inputs.len() * d);
        for (f, _) in &mean_fwd {
            m0.extend_from_slice(f);
        }
        let mut u = Vec::with_capacity(batch_outputs.len() * d);
        for o in batch_outputs {
            u.extend_from_slice(o);
        }
        elbo(&state, &blocks, &m0, &u, n_total)
    }

    /// Fused forward/backward pass: returns the ELBO terms and the gradient
    /// of the *negative* ELBO (the training loss) for the whole flat
    /// parameter vector. Reductions fold per-sample contributions in index
    /// order, so results are deterministic under any thread count.
    pub fn elbo_with_grad(
        &self,
        params: &[f64],
        batch_inputs: &[&[f64]],
        batch_outputs: &[&[f64]],
        n_total: usize,
    ) -> Result<(ElboTerms, Vec<f64>)> {
        let b = batch_inputs.len();
        if b == 0 || batch_outputs.len() != b {
            return Err(Error::InvalidConfig("empty or mismatched batch".into()));
        }
        let d = self.grid.len();
        let m = self.config.n_inducing;
        let latent = self.config.latent_dim();
        let (state, mean_fwd, emb_fwd, embz_fwd, blocks) = self.assemble(params, batch_inputs)?;
        let c = state.s_tril.to_lower();
        let (dmat, t2) = mean_offset(&state, &blocks);
        let noise = state.noise_var();
        let scale = n_total as f64 / b as f64;
        let sum_kx: f64 = blocks.kx_diag.iter().sum();

        // per-sample weights, moments, residuals
        let mut weights = Vec::with_capacity(b);
        let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(b);
        let mut data_term = 0.0;
        for i in 0..b {
            let w = sample_weights(&blocks, &c, blocks.k_az.row(i))?;
            let m0_i = &mean_fwd[i].0;
            let u_i = batch_outputs[i];
            let mut r = vec![0.0; d];
            let mut ssr = 0.0;
            for p in 0..d {
                let mut mu = m0_i[p];
                for j in 0..m {
                    mu += w.alpha[j] * dmat[j * d + p];
                }
                let e = u_i[p] - mu;
                r[p] = e;
                ssr += e * e;
            }
            data_term += -0.5 * d as f64 * (2.0 * std::f64::consts::PI * noise).ln()
                - (ssr + w.q * sum_kx) / (2.0 * noise);
            residuals.push(r);
            weights.push(w);
        }
        let kl = kl_divergence(&state);
        let terms =
            ElboTerms { elbo: scale * data_term - kl, data_term: scale * data_term, kl_term: kl };

        // ----- backward of loss = KL − scale·Σ ELL -----
        let mut grads = vec![0.0; self.layout.total];
        let mut g_log_ell_a = 0.0;
        let mut g_log_var_a = 0.0;
        let mut g_log_noise = 0.0;

        // noise gradient: scale·Σᵢ[d/2 − (ssrᵢ + qᵢ·Σκ)/(2σ²)]
        for i in 0..b {
            let ssr: f64 = residuals[i].iter().map(|r| r * r).sum();
            g_log_noise +=
                scale * (d as f64 / 2.0 - (ssr + weights[i].q * sum_kx) / (2.0 * noise));
        }

        // KL gradients in whitened coordinates
        {
            let wbar = &mut grads[self.layout.w_mean.clone()];
            for (g, w) in wbar.iter_mut().zip(&state.w_mean) {
                *g += w;
            }
            let ddim = d as f64;
            let cbar = &mut grads[self.layout.s_tril.clone()];
            let mut at = 0;
            for i in 0..m {
                for j in 0..=i {
                    let v = c.get(i, j);
                    if i == j {
                        cbar[at] += ddim * (v * v - 1.0);
                    } else {
                        cbar[at] += ddim * v;
                    }
                    at += 1;
                }
            }
        }

        // accumulators for feature-space algebra
        let mut k_azz_bar = DenseMatrix::zeros(m, m);
        let mut l_a_bar = crate::linalg::LowerTriangular::zeros(m);
        let mut d_bar = vec![0.0; m * d];
        let mut k_rows_bar = DenseMatrix::zeros(b, m);
        let mut c_bar_data = vec![0.0; m * (m + 1) / 2];
        let q_bar_scale = scale * sum_kx / (2.0 * noise);
        let mut q_sum = 0.0;

        for i in 0..b {
            let w = &weights[i];
            q_sum += w.q;
            // ḡᵢ = ∂loss/∂μᵢ = −scale·rᵢ/σ²
            let gvec: Vec<f64> = residuals[i].iter().map(|r| -scale * r / noise).collect();
            // μ path: D̄ += αᵢ ḡᵢᵀ, ᾱᵢ = D ḡᵢ
            let mut alpha_bar = vec![0.0; m];
            for j in 0..m {
                let a = w.alpha[j];
                let drow = &dmat[j * d..(j + 1) * d];
                let dbrow = &mut d_bar[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for (p, g) in gvec.iter().enumerate() {
                    dbrow[p] += a * g;
                    acc += drow[p] * g;
                }
                alpha_bar[j] = acc;
            }
            // q path: β̄ = q̄(−2β + 2Cγ), C̄ += 2q̄ βγᵀ, σ_a² via k_aa_diag
            let q_bar = q_bar_scale;
            let c_gamma = c.matvec(&w.gamma);
            let beta_bar: Vec<f64> =
                w.beta.iter().zip(&c_gamma).map(|(bv, cg)| q_bar * (-2.0 * bv + 2.0 * cg)).collect();
            {
                let mut at = 0;
                for r in 0..m {
                    for cc in 0..=r {
                        c_bar_data[at] += 2.0 * q_bar * w.beta[r] * w.gamma[cc];
                        at += 1;
                    }
                }
            }
            g_log_var_a += q_bar * blocks.k_aa_diag;
            // β = L_aᵀ α
            let from_beta = blocks.l_a.matvec(&beta_bar);
            for j in 0..m {
                alpha_bar[j] += from_beta[j];
            }
            for r in 0..m {
                for cc in 0..=r {
                    l_a_bar.set(r, cc, l_a_bar.get(r, cc) + w.alpha[r] * beta_bar[cc]);
                }
            }
            // α = K_a⁻¹ k: k̄ = K_a⁻¹ᾱ, K̄_a −= (K_a⁻¹ᾱ)αᵀ
            let alpha_solved = chol_solve(&blocks.l_a, &alpha_bar)?;
            for j in 0..m {
                k_rows_bar.set(i, j, alpha_solved[j]);
                for jc in 0..m {
                    let v = k_azz_bar.get(j, jc) - alpha_solved[j] * w.alpha[jc];
                    k_azz_bar.set(j, jc, v);
                }
            }
        }

        // D = L_a T2 path
        for r in 0..m {
            for cc in 0..=r {
                let mut acc = 0.0;
                let dbrow = &d_bar[r * d..(r + 1) * d];
                let t2row = &t2[cc * d..(cc + 1) * d];
                for (x, y) in dbrow.iter().zip(t2row) {
                    acc += x * y;
                }
                l_a_bar.set(r, cc, l_a_bar.get(r, cc) + acc);
            }
        }
        // T̄2 = L_aᵀ D̄ (M×d)
        let mut t2_bar = vec![0.0; m * d];
        for j in 0..m {
            let out = &mut t2_bar[j * d..(j + 1) * d];
            for r in j..m {
                let lv = blocks.l_a.get(r, j);
                if lv == 0.0 {
                    continue;
                }
                let src = &d_bar[r * d..(r + 1) * d];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += lv * s;
                }
            }
        }
        // W̄ += T̄2 L_x (data) — KL part already added
        {
            let wbar = &mut grads[self.layout.w_mean.clone()];
            for j in 0..m {
                let add = blocks.l_x.matvec_t(&t2_bar[j * d..(j + 1) * d]);
                for (o, s) in wbar[j * d..(j + 1) * d].iter_mut().zip(&add) {
                    *o += s;
                }
            }
        }
        // L̄_x[r,c] = Σⱼ T̄2[j,r]·W[j,c] on the band
        let bw = blocks.l_x.bw;
        let mut l_x_bar = BandedLower::zeros(d, bw);
        for r in 0..d {
            for cc in r.saturating_sub(bw)..=r {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += t2_bar[j * d + r] * state.w_mean[j * d + cc];
                }
                l_x_bar.set(r, cc, acc);
            }
        }
        // spatial kernel gradient: chol adjoint, then the prior-diagonal path
        let mut kx_bar = SymBanded::zeros(d, bw);
        banded_cholesky_backward(&blocks.l_x, &l_x_bar, &mut kx_bar);
        // ELL has −qᵢκ_r/(2σ²) and loss = −ELBO, so ∂loss/∂κ_r = +scale·Σqᵢ/(2σ²)
        let kappa_bar = scale * q_sum / (2.0 * noise);
        for r in 0..d {
            let idx = kx_bar.idx(r, r);
            kx_bar.data[idx] += kappa_bar;
        }
        let (g_log_ell_x, gx_var_evals) = blocks.spatial.hyper_grads_from_banded(&kx_bar);
        let trace_kx_bar: f64 = (0..d).map(|r| kx_bar.get(r, r)).sum();
        let g_log_var_x = gx_var_evals + blocks.jitter_x * trace_kx_bar;

        // feature-kernel adjoints: fold the factorization sensitivity into K̄_a
        let mut k_azz_full = k_azz_bar;
        cholesky_backward(&blocks.l_a, &l_a_bar, &mut k_azz_full);
        let trace_ka_bar: f64 = (0..m).map(|j| k_azz_full.get(j, j)).sum();
        g_log_var_a += blocks.jitter_a * trace_ka_bar;

        let mut h_z_bar = vec![0.0; m * latent];
        let mut h_batch_bar = vec![0.0; b * latent];
        let h_z_flat: Vec<f64> = embz_fwd.iter().flat_map(|(h, _)| h.iter().copied()).collect();
        let h_b_flat: Vec<f64> = emb_fwd.iter().flat_map(|(h, _)| h.iter().copied()).collect();
        let fp = &state.feature_params;
        for i in 0..m {
            for j in 0..=i {
                let g = if i == j {
                    k_azz_full.get(i, i)
                } else {
                    k_azz_full.get(i, j) + k_azz_full.get(j, i)
                };
                if g == 0.0 {
                    continue;
                }
                let hi = &h_z_flat[i * latent..(i + 1) * latent];
                let hj = &h_z_flat[j * latent..(j + 1) * latent];
                let s = sq_dist(hi, hj);
                let (kv, dk_ds) = kernel_from_sqdist_with_grad(s, fp);
                g_log_ell_a += g * (-2.0 * s * dk_ds);
                g_log_var_a += g * kv;
                if i != j {
                    for l in 0..latent {
                        let diff = 2.0 * dk_ds * (hi[l] - hj[l]);
                        h_z_bar[i * latent + l] += g * diff;
                        h_z_bar[j * latent + l] -= g * diff;
                    }
                }
            }
        }
        for i in 0..b {
            for j in 0..m {
                let g = k_rows_bar.get(i, j);
                if g == 0.0 {
                    continue;
                }
                let hi = &h_b_flat[i * latent..(i + 1) * latent];
                let hj = &h_z_flat[j * latent..(j + 1) * latent];
                let s = sq_dist(hi, hj);
                let (kv, dk_ds) = kernel_from_sqdist_with_grad(s, fp);
                g_log_ell_a += g * (-2.0 * s * dk_ds);
                g_log_var_a += g * kv;
                for l in 0..latent {
                    let diff = 2.0 * dk_ds * (hi[l] - hj[l]);
                    h_batch_bar[i * latent + l] += g * diff;
                    h_z_bar[j * latent + l] -= g * diff;
                }
            }
        }

        // WNO backward passes, chunked so peak memory stays bounded while
        // the fold order stays fixed
        let theta_mean = &params[self.layout.theta_mean.clone()];
        let theta_emb = &params[self.layout.theta_emb.clone()];
        let chunk = 4;
        {
            // mean path over the batch: upstream is ḡᵢ
            let mut start = 0;
            while start < b {
                let end = (start + chunk).min(b);
                let pieces = exec::map_indexed(end - start, |k| {
                    let i = start + k;
                    let upstream: Vec<f64> =
                        residuals[i].iter().map(|r| -scale * r / noise).collect();
                    self.mean_machine.backward(theta_mean, &mean_fwd[i].1, &upstream).map(|(g, _)| g)
                });
                for piece in pieces {
                    let piece = piece?;
                    let dst = &mut grads[self.layout.theta_mean.clone()];
                    for (o, s) in dst.iter_mut().zip(&piece) {
                        *o += s;
                    }
                }
                start = end;
            }
        }
        {
            // embedding path over the batch
            let mut start = 0;
            while start < b {
                let end = (start + chunk).min(b);
                let pieces = exec::map_indexed(end - start, |k| {
                    let i = start + k;
                    let upstream = &h_batch_bar[i * latent..(i + 1) * latent];
                    self.emb_machine.backward(theta_emb, &emb_fwd[i].1, upstream).map(|(g, _)| g)
                });
                for piece in pieces {
                    let piece = piece?;
                    let dst = &mut grads[self.layout.theta_emb.clone()];
                    for (o, s) in dst.iter_mut().zip(&piece) {
                        *o += s;
                    }
                }
                start = end;
            }
        }
        {
            // embedding path over the inducing inputs: also yields Z̄
            let mut start = 0;
            while start < m {
                let end = (start + chunk).min(m);
                let pieces = exec::map_indexed(end - start, |k| {
                    let j = start + k;
                    let upstream = &h_z_bar[j * latent..(j + 1) * latent];
                    self.emb_machine.backward(theta_emb, &embz_fwd[j].1, upstream)
                });
                for (k, piece) in pieces.into_iter().enumerate() {
                    let (gtheta, gfield) = piece?;
                    let dst = &mut grads[self.layout.theta_emb.clone()];
                    for (o, s) in dst.iter_mut().zip(&gtheta) {
                        *o += s;
                    }
                    let j = start + k;
                    let zb = &mut grads[self.layout.z.clone()];
                    for (o, s) in zb[j * d..(j + 1) * d].iter_mut().zip(&gfield) {
                        *o += s;
                    }
                }
                start = end;
            }
        }

        // variational covariance factor: chain the data-path C̄ through the
        // raw parameterization (identity off-diagonal, ×C_jj on the log-diag)
        {
            let cbar = &mut grads[self.layout.s_tril.clone()];
            let mut at = 0;
            for i in 0..m {
                for j in 0..=i {
                    if i == j {
                        cbar[at] += c_bar_data[at] * c.get(i, i);
                    } else {
                        cbar[at] += c_bar_data[at];
                    }
                    at += 1;
                }
            }
        }
        {
            let h = &mut grads[self.layout.hypers.clone()];
            h[HYPER_LOG_ELL_A] += g_log_ell_a;
            h[HYPER_LOG_VAR_A] += g_log_var_a;
            h[HYPER_LOG_ELL_X] += g_log_ell_x;
            h[HYPER_LOG_VAR_X] += g_log_var_x;
            h[HYPER_LOG_NOISE] += g_log_noise;
        }
        Ok((terms, grads))
    }

    /// Predictive moments for a batch of test inputs on the training grid.
    pub fn predict(
        &self,
        params: &[f64],
        star_inputs: &[&[f64]],
        include_noise: bool,
    ) -> Result<Vec<PredictiveMoments>> {
        let (state, mean_fwd, emb_fwd, embz_fwd, blocks) = self.assemble(params, star_inputs)?;
        let latent = self.config.latent_dim();
        let h_z: Vec<f64> = embz_fwd.iter().flat_map(|(h, _)| h.iter().copied()).collect();
        let mut out = Vec::with_capacity(star_inputs.len());
        for i in 0..star_inputs.len() {
            out.push(predictive(
                &state,
                &blocks,
                &mean_fwd[i].0,
                &emb_fwd[i].0,
                latent,
                &h_z,
                include_noise,
            )?);
        }
        Ok(out)
    }
}

