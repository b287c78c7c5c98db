use super::*;
use crate::data::Grid;
use crate::kernel::{build_knn_sparse_kernel, KernelFamily, KernelParams};
use crate::linalg::{cholesky, chol_solve, dense_kron, DenseMatrix};

fn rand_seq(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

struct Tiny {
    state: VariationalState,
    blocks: Blocks,
    h_z: Vec<f64>,
    latent: usize,
    d: usize,
    m: usize,
}

/// A small instance with arbitrary embeddings fed straight into the blocks;
/// `k` controls spatial sparsity (k = d means a full spatial kernel).
fn tiny_instance(m: usize, d: usize, k: usize, seed: u64, randomize_q: bool) -> Tiny {
    let latent = 3;
    let grid = Grid::unit_1d(d);
    let feature_params = KernelParams::new(KernelFamily::Rbf, 0.9, 1.4);
    let spatial_params = KernelParams::new(KernelFamily::Rbf, 0.1, 0.8);
    let spatial = build_knn_sparse_kernel(&grid, k, &spatial_params).unwrap();
    let mut state = VariationalState {
        n_inducing: m,
        grid_len: d,
        z: rand_seq(m * d, seed ^ 1),
        w_mean: if randomize_q { rand_seq(m * d, seed ^ 2) } else { vec![0.0; m * d] },
        s_tril: TrilParam::identity(m),
        log_noise_var: (0.05_f64).ln(),
        feature_params,
        spatial_params,
        neighbor_count: k,
        jitter_rel: 1e-8,
    };
    if randomize_q {
        let raw = rand_seq(m * (m + 1) / 2, seed ^ 3);
        state.s_tril.data = raw.iter().map(|v| v * 0.3).collect();
    }
    let h_z = rand_seq(m * latent, seed ^ 4);
    let h_batch = rand_seq(2 * latent, seed ^ 5);
    let blocks = build_blocks(&state, &h_batch, &h_z, latent, &spatial).unwrap();
    Tiny { state, blocks, h_z, latent, d, m }
}

/// Dense effective spatial kernel as the blocks see it.
fn dense_kx_eff(t: &Tiny) -> DenseMatrix {
    let mut kx = t.blocks.spatial.to_dense();
    for i in 0..t.d {
        let v = kx.get(i, i) + t.blocks.jitter_x;
        kx.set(i, i, v);
    }
    kx
}

#[test]
fn prior_recovery_returns_prior_moments() {
    let t = tiny_instance(3, 6, 6, 11, false);
    let b = t.blocks.k_az.rows;
    let m0 = rand_seq(b * t.d, 9);
    let moments = conditional_moments(&t.state, &t.blocks, &m0).unwrap();
    for (i, (mu, var)) in moments.iter().enumerate() {
        for (p, v) in mu.iter().enumerate() {
            assert!((v - m0[i * t.d + p]).abs() < 1e-9, "prior mean");
        }
        // prior variance: k_aa_eff · diag(K_x_eff)
        for (p, v) in var.iter().enumerate() {
            let want = t.blocks.k_aa_diag * t.blocks.kx_diag[p];
            // the Nyström term K_iZ K_ZZ⁻¹ K_Zi does not vanish for finite M,
            // so the prior is recovered only through S = K_ZZ: check via the
            // dense identity instead of exact equality
            let _ = (v, want, p);
        }
    }
    // with (W, C) = (0, I): Σ = K_ii − Q_ii + Q_ii = K_ii exactly
    for (_, var) in &moments {
        for (p, v) in var.iter().enumerate() {
            let want = t.blocks.k_aa_diag * t.blocks.kx_diag[p];
            assert!((v - want).abs() < 1e-9 * want.max(1.0), "prior variance {v} vs {want}");
        }
    }
}

/// Conditional moments against the dense Gaussian-conditioning formula with
/// everything materialized via Kronecker products.
#[test]
fn conditional_matches_dense_oracle() {
    for k in [4usize, 2] {
        let t = tiny_instance(3, 4, k, 23, true);
        let b = t.blocks.k_az.rows;
        let m0 = rand_seq(b * t.d, 31);
        let got = conditional_moments(&t.state, &t.blocks, &m0).unwrap();

        let kx = dense_kx_eff(&t);
        let kzz = dense_kron(&t.blocks.k_a_zz, &kx);
        let lz = cholesky(&kzz, 0.0).unwrap();
        let c = t.state.s_tril.to_lower();
        // S = (L_a C Cᵀ L_aᵀ) ⊗ K_x
        let la = t.blocks.l_a.to_dense();
        let cc = c.to_dense();
        let sa = la.matmul(&cc).matmul(&cc.transpose()).matmul(&la.transpose());
        let s_full = dense_kron(&sa, &kx);
        // m − m0(Z) = vec(L_a W L_xᵀ)
        let delta = unwhiten_offset(&t.blocks, &t.state.w_mean, t.m, t.d);

        for i in 0..b {
            // cross block K_iZ = k_a(h_i, h_Z) ⊗ K_x  (d × Md)
            let mut cross = DenseMatrix::zeros(t.d, t.m * t.d);
            for j in 0..t.m {
                let ka = t.blocks.k_az.get(i, j);
                for r in 0..t.d {
                    for cc2 in 0..t.d {
                        cross.set(r, j * t.d + cc2, ka * kx.get(r, cc2));
                    }
                }
            }
            // A = K_iZ K_ZZ⁻¹ (rows solved through the dense factor)
            let mut a_rows = DenseMatrix::zeros(t.d, t.m * t.d);
            for r in 0..t.d {
                let sol = chol_solve(&lz, cross.row(r)).unwrap();
                for (cidx, v) in sol.iter().enumerate() {
                    a_rows.set(r, cidx, *v);
                }
            }
            // μ = m0 + A (m − m0Z)
            for r in 0..t.d {
                let mut mu = m0[i * t.d + r];
                for cidx in 0..t.m * t.d {
                    mu += a_rows.get(r, cidx) * delta[cidx];
                }
                assert!(
                    (mu - got[i].0[r]).abs() < 1e-8 * (1.0 + mu.abs()),
                    "mean {} vs {}",
                    got[i].0[r],
                    mu
                );
            }
            // Σ = K_ii − A K_ZZ Aᵀ + A S Aᵀ, diagonal
            for r in 0..t.d {
                let kii = t.blocks.k_aa_diag * kx.get(r, r);
                let mut quad_prior = 0.0;
                let mut quad_s = 0.0;
                for x in 0..t.m * t.d {
                    let mut kz_ax = 0.0;
                    let mut s_ax = 0.0;
                    for y in 0..t.m * t.d {
                        kz_ax += kzz.get(x, y) * a_rows.get(r, y);
                        s_ax += s_full.get(x, y) * a_rows.get(r, y);
                    }
                    quad_prior += a_rows.get(r, x) * kz_ax;
                    quad_s += a_rows.get(r, x) * s_ax;
                }
                let want = kii - quad_prior + quad_s;
                assert!(
                    (want - got[i].1[r]).abs() < 1e-8 * (1.0 + want.abs()),
                    "var k={k}: {} vs {}",
                    got[i].1[r],
                    want
                );
            }
        }
    }
}

#[test]
fn kl_zero_at_prior_and_mean_shift_closed_form() {
    let t = tiny_instance(3, 5, 5, 41, false);
    assert!(kl_divergence(&t.state).abs() < 1e-12);

    // m = m0Z + δ e₁: KL = ½ δ² [K_ZZ⁻¹]₁₁
    let delta_val = 0.37;
    let mut delta = vec![0.0; t.m * t.d];
    delta[0] = delta_val;
    let w = whiten_offset(&t.blocks, &delta, t.m, t.d).unwrap();
    let mut shifted = t.state.clone();
    shifted.w_mean = w;
    let got = kl_divergence(&shifted);

    let kx = dense_kx_eff(&t);
    let kzz = dense_kron(&t.blocks.k_a_zz, &kx);
    let lz = cholesky(&kzz, 0.0).unwrap();
    let mut e1 = vec![0.0; t.m * t.d];
    e1[0] = 1.0;
    let inv_e1 = chol_solve(&lz, &e1).unwrap();
    let want = 0.5 * delta_val * delta_val * inv_e1[0];
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

/// Whitened KL against the dense two-Gaussian formula.
#[test]
fn kl_matches_dense_formula() {
    let t = tiny_instance(3, 4, 4, 57, true);
    let got = kl_divergence(&t.state);

    let kx = dense_kx_eff(&t);
    let kzz = dense_kron(&t.blocks.k_a_zz, &kx);
    let lz = cholesky(&kzz, 0.0).unwrap();
    let la = t.blocks.l_a.to_dense();
    let c = t.state.s_tril.to_lower().to_dense();
    let sa = la.matmul(&c).matmul(&c.transpose()).matmul(&la.transpose());
    let s_full = dense_kron(&sa, &kx);
    let delta = unwhiten_offset(&t.blocks, &t.state.w_mean, t.m, t.d);
    let n = t.m * t.d;
    // ½[tr(K⁻¹S) + δᵀK⁻¹δ − n + log|K| − log|S|]
    let mut trace = 0.0;
    for col in 0..n {
        let mut s_col = vec![0.0; n];
        for r in 0..n {
            s_col[r] = s_full.get(r, col);
        }
        let sol = chol_solve(&lz, &s_col).unwrap();
        trace += sol[col];
    }
    let sol_d = chol_solve(&lz, &delta).unwrap();
    let quad = crate::linalg::dot(&delta, &sol_d);
    let ls = cholesky(&s_full, 0.0).unwrap();
    let want = 0.5 * (trace + quad - n as f64 + lz.log_det_doubled() - ls.log_det_doubled());
    assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()), "{got} vs {want}");
}

/// Full-batch ELBO can never exceed the exact log marginal likelihood.
#[test]
fn elbo_bounded_by_exact_log_marginal() {
    for trial in 0..20 {
        let m = 3;
        let d = 4;
        let latent = 3;
        let grid = Grid::unit_1d(d);
        let feature_params = KernelParams::new(KernelFamily::Rbf, 0.8, 1.2);
        let spatial_params = KernelParams::new(KernelFamily::Rbf, 0.3, 0.9);
        let spatial = build_knn_sparse_kernel(&grid, d, &spatial_params).unwrap();
        let h_train = rand_seq(m * latent, 100 + trial);
        let m0_train = rand_seq(m * d, 200 + trial);
        let u_train = rand_seq(m * d, 300 + trial);
        let mut state = VariationalState {
            n_inducing: m,
            grid_len: d,
            z: vec![0.0; m * d],
            w_mean: rand_seq(m * d, 400 + trial),
            s_tril: TrilParam::identity(m),
            log_noise_var: (0.1_f64).ln(),
            feature_params,
            spatial_params,
            neighbor_count: d,
            jitter_rel: 1e-10,
        };
        let raw = rand_seq(m * (m + 1) / 2, 500 + trial);
        state.s_tril.data = raw.iter().map(|v| v * 0.4).collect();
        // inducing embeddings = training embeddings (Z = training inputs)
        let blocks = build_blocks(&state, &h_train, &h_train, latent, &spatial).unwrap();
        let terms = elbo(&state, &blocks, &m0_train, &u_train, m).unwrap();
        let kx = {
            let mut kx = blocks.spatial.to_dense();
            for i in 0..d {
                let v = kx.get(i, i) + blocks.jitter_x;
                kx.set(i, i, v);
            }
            kx
        };
        let exact = exact_gp_reference(
            &h_train,
            &m0_train,
            &u_train,
            &h_train[..latent],
            &m0_train[..d],
            latent,
            &state.feature_params,
            blocks.jitter_a,
            &kx,
            state.noise_var(),
        )
        .unwrap();
        assert!(
            terms.elbo <= exact.log_marginal_likelihood + 1e-8,
            "trial {trial}: elbo {} > lml {}",
            terms.elbo,
            exact.log_marginal_likelihood
        );
    }
}

/// Titsias limit with a diagonal spatial factor (K = 1): the closed-form
/// optimal q is exactly representable, prediction must coincide with the
/// exact GP posterior and the ELBO must close the gap to the log marginal
/// likelihood.
#[test]
fn titsias_optimal_q_recovers_exact_posterior() {
    let n = 4;
    let d = 6;
    let latent = 3;
    let grid = Grid::unit_1d(d);
    let feature_params = KernelParams::new(KernelFamily::Rbf, 0.9, 1.3);
    let spatial_params = KernelParams::new(KernelFamily::Rbf, 0.25, 0.85);
    let spatial = build_knn_sparse_kernel(&grid, 1, &spatial_params).unwrap();
    let h_train = rand_seq(n * latent, 71);
    let m0_train = rand_seq(n * d, 72);
    let u_train = rand_seq(n * d, 73);
    let noise: f64 = 0.07;
    let mut state = VariationalState {
        n_inducing: n,
        grid_len: d,
        z: vec![0.0; n * d],
        w_mean: vec![0.0; n * d],
        s_tril: TrilParam::identity(n),
        log_noise_var: noise.ln(),
        feature_params,
        spatial_params,
        neighbor_count: 1,
        jitter_rel: 1e-10,
    };
    let blocks = build_blocks(&state, &h_train, &h_train, latent, &spatial).unwrap();
    let c_val = spatial_params.variance() + blocks.jitter_x; // K_x = c·I
    let m = n;

    // Ŝ_a = (K_a⁻¹/c + σ⁻²I)⁻¹ via dense solves
    let mut prec = DenseMatrix::zeros(m, m);
    for col in 0..m {
        let mut e = vec![0.0; m];
        e[col] = 1.0;
        let sol = chol_solve(&blocks.l_a, &e).unwrap();
        for r in 0..m {
            prec.set(r, col, sol[r] / c_val);
        }
    }
    for i in 0..m {
        let v = prec.get(i, i) + 1.0 / noise;
        prec.set(i, i, v);
    }
    let lprec = cholesky(&prec, 0.0).unwrap();
    let mut s_hat = DenseMatrix::zeros(m, m);
    for col in 0..m {
        let mut e = vec![0.0; m];
        e[col] = 1.0;
        let sol = chol_solve(&lprec, &e).unwrap();
        for r in 0..m {
            s_hat.set(r, col, sol[r]);
        }
    }
    // S_wa = L_a⁻¹ Ŝ_a L_a⁻ᵀ / c, C = chol(S_wa)
    let mut swa = DenseMatrix::zeros(m, m);
    for col in 0..m {
        let mut s_col = vec![0.0; m];
        for r in 0..m {
            s_col[r] = s_hat.get(r, col);
        }
        let y = crate::linalg::tri_solve(&blocks.l_a, &s_col, false).unwrap();
        for r in 0..m {
            swa.set(r, col, y[r]);
        }
    }
    // right-multiply by L_a⁻ᵀ: solve on rows
    let mut swa2 = DenseMatrix::zeros(m, m);
    for r in 0..m {
        let y = crate::linalg::tri_solve(&blocks.l_a, swa.row(r), false).unwrap();
        for (cidx, v) in y.iter().enumerate() {
            swa2.set(r, cidx, *v);
        }
    }
    for v in swa2.data.iter_mut() {
        *v /= c_val;
    }
    let c_factor = cholesky(&swa2, 0.0).unwrap();
    state.s_tril = TrilParam::from_lower(&c_factor);

    // m̂ − m0Z = σ⁻² Ŝ_a R (rows = per-sample residual fields)
    let mut delta = vec![0.0; m * d];
    for j in 0..m {
        for r in 0..d {
            let mut acc = 0.0;
            for i in 0..m {
                acc += s_hat.get(j, i) * (u_train[i * d + r] - m0_train[i * d + r]);
            }
            delta[j * d + r] = acc / noise;
        }
    }
    state.w_mean = whiten_offset(&blocks, &delta, m, d).unwrap();

    // rebuild blocks (state changed only in variational parts; blocks
    // depend on kernels alone, so reuse is fine) and compare to exact GP
    let h_star = rand_seq(latent, 99);
    let m0_star = rand_seq(d, 98);
    let pred = predictive(&state, &blocks, &m0_star, &h_star, latent, &h_train, false).unwrap();
    let kx_dense = {
        let mut kx = DenseMatrix::zeros(d, d);
        for i in 0..d {
            kx.set(i, i, c_val);
        }
        kx
    };
    let exact = exact_gp_reference(
        &h_train,
        &m0_train,
        &u_train,
        &h_star,
        &m0_star,
        latent,
        &state.feature_params,
        blocks.jitter_a,
        &kx_dense,
        noise,
    )
    .unwrap();
    for (a, b) in pred.mean.iter().zip(&exact.mean) {
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "mean {a} vs {b}");
    }
    for (a, b) in pred.variance.iter().zip(&exact.variance) {
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "var {a} vs {b}");
    }
    // at the optimum with Z = training inputs the bound is tight
    let terms = elbo(&state, &blocks, &m0_train, &u_train, n).unwrap();
    assert!(
        (terms.elbo - exact.log_marginal_likelihood).abs() < 1e-6,
        "elbo {} vs lml {}",
        terms.elbo,
        exact.log_marginal_likelihood
    );
}

/// The scaled minibatch data term is an unbiased estimator: averaging over
/// every 2-subset of a 6-sample set reproduces the full-batch term.
#[test]
fn minibatch_data_term_is_unbiased() {
    let t = tiny_instance(3, 4, 4, 83, true);
    let n = 6;
    let latent = t.latent;
    let h_all = rand_seq(n * latent, 301);
    let m0_all = rand_seq(n * t.d, 302);
    let u_all = rand_seq(n * t.d, 303);
    let spatial = t.blocks.spatial.clone();
    let full_blocks = build_blocks(&t.state, &h_all, &t.h_z, latent, &spatial).unwrap();
    let full = elbo(&t.state, &full_blocks, &m0_all, &u_all, n).unwrap();

    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            let mut h = Vec::new();
            h.extend_from_slice(&h_all[i * latent..(i + 1) * latent]);
            h.extend_from_slice(&h_all[j * latent..(j + 1) * latent]);
            let mut m0 = Vec::new();
            m0.extend_from_slice(&m0_all[i * t.d..(i + 1) * t.d]);
            m0.extend_from_slice(&m0_all[j * t.d..(j + 1) * t.d]);
            let mut u = Vec::new();
            u.extend_from_slice(&u_all[i * t.d..(i + 1) * t.d]);
            u.extend_from_slice(&u_all[j * t.d..(j + 1) * t.d]);
            let blocks = build_blocks(&t.state, &h, &t.h_z, latent, &spatial).unwrap();
            let terms = elbo(&t.state, &blocks, &m0, &u, n).unwrap();
            acc += terms.data_term;
            count += 1;
        }
    }
    let avg = acc / count as f64;
    assert!(
        (avg - full.data_term).abs() < 1e-10 * (1.0 + full.data_term.abs()),
        "{avg} vs {}",
        full.data_term
    );
}

/// Residual-free limit: u = μ and S ≈ 0 give a per-point expected
/// log-likelihood of −½log(2πσ_n²).
#[test]
fn elbo_perfect_fit_limit() {
    let n = 3;
    let d = 5;
    let latent = 3;
    let grid = Grid::unit_1d(d);
    let feature_params = KernelParams::new(KernelFamily::Rbf, 0.9, 1.3);
    let spatial_params = KernelParams::new(KernelFamily::Rbf, 0.3, 0.8);
    let spatial = build_knn_sparse_kernel(&grid, d, &spatial_params).unwrap();
    let h_train = rand_seq(n * latent, 401);
    let m0_train = rand_seq(n * d, 402);
    let mut state = VariationalState {
        n_inducing: n,
        grid_len: d,
        z: vec![0.0; n * d],
        w_mean: rand_seq(n * d, 403),
        s_tril: TrilParam::identity(n),
        log_noise_var: (0.2_f64).ln(),
        feature_params,
        spatial_params,
        neighbor_count: d,
        jitter_rel: 1e-10,
    };
    // C → 0: q_i = k_aa − ‖β‖² with Z = training inputs ⇒ exactly 0 + ‖Cᵀβ‖²
    let mut at = 0;
    for i in 0..n {
        at += i;
        state.s_tril.data[at] = (1e-9_f64).ln();
        at += 1;
    }
    let blocks = build_blocks(&state, &h_train, &h_train, latent, &spatial).unwrap();
    let moments = conditional_moments(&state, &blocks, &m0_train).unwrap();
    let mut u = Vec::new();
    for (mu, _) in &moments {
        u.extend_from_slice(mu);
    }
    let terms = elbo(&state, &blocks, &m0_train, &u, n).unwrap();
    let per_point = terms.data_term / (n * d) as f64;
    let want = -0.5 * (2.0 * std::f64::consts::PI * state.noise_var()).ln();
    assert!((per_point - want).abs() < 1e-6, "{per_point} vs {want}");
}

#[test]
fn predictive_variance_nonnegative_sweep() {
    for trial in 0..100 {
        let t = tiny_instance(4, 6, 3, 1000 + trial, true);
        let h_star = rand_seq(t.latent, 2000 + trial);
        let m0_star = rand_seq(t.d, 3000 + trial);
        let pred =
            predictive(&t.state, &t.blocks, &m0_star, &h_star, t.latent, &t.h_z, false).unwrap();
        for v in &pred.variance {
            assert!(*v >= 0.0);
        }
        assert!(pred.worst_negative > -1e-8, "pre-clamp violation {}", pred.worst_negative);
    }
}

/// End-to-end check of the fused ELBO gradient on a small model: every
/// parameter group sampled against central finite differences.
#[test]
fn model_elbo_gradients_match_fd() {
    use crate::data::{Dataset, DatasetMeta};
    use crate::wno::WnoConfig;
    let grid = Grid::unit_1d(16);
    let d = 16;
    let mut wno_mean = WnoConfig::new_mean_path(1, 2, 1, 1, 3);
    wno_mean.family = crate::signal::WaveletFamily::Haar;
    let mut wno_emb = WnoConfig::new_embedding_path(1, 2, 1, 1, 3, 4);
    wno_emb.family = crate::signal::WaveletFamily::Haar;
    let config = ModelConfig {
        wno_mean,
        wno_emb,
        n_inducing: 3,
        neighbor_count: 4,
        feature_family: KernelFamily::Rbf,
        spatial_family: KernelFamily::Rbf,
        jitter_rel: 1e-8,
    };
    let model = GpModel::new(config, grid.clone()).unwrap();
    let n = 4;
    let ds = Dataset {
        grid,
        n,
        inputs: rand_seq(n * d, 601),
        outputs: rand_seq(n * d, 602),
        meta: DatasetMeta { problem: "toy".into(), params: serde_json::json!({}), seed: 0 },
    };
    let mut params = model.init_params(&ds, 7).unwrap();
    // nonzero variational state so every path is active
    for (i, v) in rand_seq(model.layout.w_mean.len(), 603).iter().enumerate() {
        params[model.layout.w_mean.clone()][i] = 0.3 * v;
    }
    for (i, v) in rand_seq(model.layout.s_tril.len(), 604).iter().enumerate() {
        params[model.layout.s_tril.clone()][i] = 0.2 * v;
    }
    let batch_in: Vec<&[f64]> = (0..2).map(|i| ds.input(i)).collect();
    let batch_out: Vec<&[f64]> = (0..2).map(|i| ds.output(i)).collect();
    let (terms, grads) = model.elbo_with_grad(&params, &batch_in, &batch_out, n).unwrap();
    assert!(terms.elbo.is_finite());

    let loss = |p: &[f64]| -> f64 {
        -model.elbo_terms(p, &batch_in, &batch_out, n).unwrap().elbo
    };
    let h = 1e-5;
    let groups: [(&str, Range<usize>); 6] = [
        ("theta_mean", model.layout.theta_mean.clone()),
        ("theta_emb", model.layout.theta_emb.clone()),
        ("z", model.layout.z.clone()),
        ("w_mean", model.layout.w_mean.clone()),
        ("s_tril", model.layout.s_tril.clone()),
        ("hypers", model.layout.hypers.clone()),
    ];
    for (name, range) in groups {
        let stride = (range.len() / 12).max(1);
        let mut group_norm = 0.0;
        for i in range.clone().step_by(stride) {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let abs = (grads[i] - fd).abs();
            let rel = abs / (fd.abs() + 1e-8);
            assert!(
                rel < 1e-5 || abs < 1e-8,
                "{name}[{}]: analytic {} fd {fd} rel {rel}",
                i - range.start,
                grads[i]
            );
            group_norm += grads[i] * grads[i];
        }
        assert!(group_norm > 0.0, "{name}: silently detached (zero gradients)");
    }
}

use std::ops::Range;

#[test]
fn model_elbo_grad_is_deterministic() {
    use crate::data::{Dataset, DatasetMeta};
    use crate::wno::WnoConfig;
    let grid = Grid::unit_1d(16);
    let config = ModelConfig {
        wno_mean: WnoConfig::new_mean_path(1, 2, 1, 1, 3),
        wno_emb: WnoConfig::new_embedding_path(1, 2, 1, 1, 3, 4),
        n_inducing: 3,
        neighbor_count: 4,
        feature_family: KernelFamily::Rbf,
        spatial_family: KernelFamily::Rbf,
        jitter_rel: 1e-8,
    };
    let model = GpModel::new(config, grid.clone()).unwrap();
    let ds = Dataset {
        grid,
        n: 4,
        inputs: rand_seq(4 * 16, 701),
        outputs: rand_seq(4 * 16, 702),
        meta: DatasetMeta { problem: "toy".into(), params: serde_json::json!({}), seed: 0 },
    };
    let params = model.init_params(&ds, 3).unwrap();
    let batch_in: Vec<&[f64]> = (0..3).map(|i| ds.input(i)).collect();
    let batch_out: Vec<&[f64]> = (0..3).map(|i| ds.output(i)).collect();
    let (t1, g1) = model.elbo_with_grad(&params, &batch_in, &batch_out, 4).unwrap();
    let (t2, g2) = model.elbo_with_grad(&params, &batch_in, &batch_out, 4).unwrap();
    assert_eq!(t1.elbo.to_bits(), t2.elbo.to_bits());
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn whiten_unwhiten_round_trip() {
    let t = tiny_instance(4, 5, 5, 91, true);
    let delta = rand_seq(t.m * t.d, 92);
    let w = whiten_offset(&t.blocks, &delta, t.m, t.d).unwrap();
    let back = unwhiten_offset(&t.blocks, &w, t.m, t.d);
    for (a, b) in back.iter().zip(&delta) {
        assert!((a - b).abs() < 1e-9);
    }
}
