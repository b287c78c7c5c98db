//! Pseudo-spectral solver for the viscous Burgers equation on the periodic
//! unit interval: ∂ₜu + 0.5·∂ₓ(u²) = ν·∂ₓₓu. Diffusion is integrated exactly
//! per step through an integrating factor; the conservative nonlinear term is
//! evaluated spectrally with 2/3 dealiasing; time stepping is RK4.

use crate::data::grid::FunctionSample;
use crate::error::{Error, Result};
use crate::signal::fft;
use num_complex::Complex64;

struct SpectralOps {
    n: usize,
    /// i·k per bin, Nyquist zeroed.
    ik: Vec<Complex64>,
    /// 2/3-rule mask.
    dealias: Vec<f64>,
}

impl SpectralOps {
    fn new(n: usize) -> Self {
        let mut ik = Vec::with_capacity(n);
        let mut dealias = Vec::with_capacity(n);
        for j in 0..n {
            let m: i64 = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
            let k = 2.0 * std::f64::consts::PI * m as f64;
            if j == n / 2 {
                ik.push(Complex64::new(0.0, 0.0));
            } else {
                ik.push(Complex64::new(0.0, k));
            }
            dealias.push(if (m.unsigned_abs() as usize) > n / 3 { 0.0 } else { 1.0 });
        }
        SpectralOps { n, ik, dealias }
    }

    /// N̂(û) = −0.5·ik·F[u²] with dealiasing.
    fn nonlinear(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let mut u = spec.to_vec();
        fft::fft_in_place(&mut u, true).unwrap();
        let sq: Vec<Complex64> =
            u.iter().map(|c| Complex64::new(c.re * c.re, 0.0)).collect();
        let mut w = sq;
        fft::fft_in_place(&mut w, false).unwrap();
        (0..self.n).map(|j| -0.5 * self.ik[j] * w[j] * self.dealias[j]).collect()
    }
}

/// Integrates to `t_final` and returns intermediate slices every
/// `save_every` steps (plus the final state). `nonlinear = false` drops the
/// advection term, leaving the exactly-solvable heat equation.
pub fn burgers_trajectory(
    u0: &FunctionSample,
    nu: f64,
    t_final: f64,
    n_steps: usize,
    save_every: usize,
    nonlinear: bool,
) -> Result<Vec<FunctionSample>> {
    let grid = &u0.grid;
    assert_eq!(grid.dims(), 1, "Burgers solver is 1D");
    assert!(grid.periodic[0]);
    let n = grid.shape[0];
    if !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwoLength(n));
    }
    let ops = SpectralOps::new(n);
    let dt = t_final / n_steps as f64;
    // per-step decay factors of the diffusion semigroup
    let e_half: Vec<f64> = (0..n)
        .map(|j| {
            let m: i64 = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
            let k = 2.0 * std::f64::consts::PI * m as f64;
            (-nu * k * k * dt / 2.0).exp()
        })
        .collect();
    let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();

    let mut spec: Vec<Complex64> =
        u0.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::fft_in_place(&mut spec, false).unwrap();

    let zero_n = vec![Complex64::new(0.0, 0.0); n];
    let mut saved = Vec::new();
    for step in 1..=n_steps {
        let a = if nonlinear { ops.nonlinear(&spec) } else { zero_n.clone() };
        let va: Vec<Complex64> =
            (0..n).map(|j| e_half[j] * (spec[j] + 0.5 * dt * a[j])).collect();
        let b = if nonlinear { ops.nonlinear(&va) } else { zero_n.clone() };
        let vb: Vec<Complex64> =
            (0..n).map(|j| e_half[j] * spec[j] + 0.5 * dt * b[j]).collect();
        let c = if nonlinear { ops.nonlinear(&vb) } else { zero_n.clone() };
        let vc: Vec<Complex64> =
            (0..n).map(|j| e_full[j] * spec[j] + dt * e_half[j] * c[j]).collect();
        let d = if nonlinear { ops.nonlinear(&vc) } else { zero_n.clone() };
        for j in 0..n {
            spec[j] = e_full[j] * spec[j]
                + dt / 6.0
                    * (e_full[j] * a[j] + 2.0 * e_half[j] * (b[j] + c[j]) + d[j]);
        }
        if !spec.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::UnstableStep { step });
        }
        if (save_every > 0 && step % save_every == 0) || step == n_steps {
            let mut field = spec.clone();
            fft::fft_in_place(&mut field, true).unwrap();
            let values: Vec<f64> = field.iter().map(|c| c.re).collect();
            saved.push(FunctionSample { grid: grid.clone(), values });
        }
    }
    Ok(saved)
}

/// Solution at `t_final` of the full viscous Burgers equation.
pub fn solve_burgers(
    u0: &FunctionSample,
    nu: f64,
    t_final: f64,
    n_steps: usize,
) -> Result<FunctionSample> {
    let mut traj = burgers_trajectory(u0, nu, t_final, n_steps, 0, true)?;
    Ok(traj.pop().expect("final slice"))
}
