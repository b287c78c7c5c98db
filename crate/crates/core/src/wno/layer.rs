//! The spectral half of a WNO layer: per-subband Fourier-domain channel
//! mixing between wavelet analysis and synthesis, plus its exact adjoint.

use super::WnoMachine;
use crate::error::{Error, Result};
use crate::signal::{
    dwt2_forward, dwt2_inverse, dwt_forward, dwt_inverse, fft, WaveletPyramid, WaveletPyramid2,
};
use num_complex::Complex64;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubbandShape {
    One(usize),
    Two(usize, usize),
}

impl SubbandShape {
    pub fn len(&self) -> usize {
        match self {
            SubbandShape::One(m) => *m,
            SubbandShape::Two(m1, m2) => m1 * m2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Subband shapes in pyramid order: approx first, then detail levels coarse
/// to fine (one band per level in 1D, three in 2D).
pub fn subband_shapes(grid_shape: &[usize], levels: usize) -> Vec<SubbandShape> {
    match grid_shape {
        [n] => {
            let mut v = vec![SubbandShape::One(n >> levels)];
            for l in 0..levels {
                v.push(SubbandShape::One(n >> (levels - l)));
            }
            v
        }
        [n1, n2] => {
            let mut v = vec![SubbandShape::Two(n1 >> levels, n2 >> levels)];
            for l in 0..levels {
                let s = levels - l;
                for _ in 0..3 {
                    v.push(SubbandShape::Two(n1 >> s, n2 >> s));
                }
            }
            v
        }
        _ => unreachable!("grids are 1D or 2D"),
    }
}

/// One retained spectral mode: where its parameter lives, which bin it
/// writes, and the conjugate bin kept in lockstep so outputs stay real.
/// Self-paired bins (DC, Nyquist) are real and only see Re(R).
#[derive(Debug, Clone, Copy)]
pub struct PlanEntry {
    pub param_idx: usize,
    pub bin: usize,
    pub cbin: usize,
    pub self_paired: bool,
}

#[derive(Debug, Clone)]
pub struct ModePlan {
    pub entries: Vec<PlanEntry>,
}

impl ModePlan {
    /// Retained modes are capped at the subband's own spectrum, so one
    /// `modes` setting covers subbands of different lengths; parameter slots
    /// beyond a subband's spectrum are simply never applied (and receive
    /// zero gradients).
    pub fn build(shape: &SubbandShape, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidConfig("modes must be >= 1".into()));
        }
        let mut entries = Vec::new();
        match *shape {
            SubbandShape::One(m) => {
                let eff = modes.min(m / 2 + 1);
                for k in 0..eff {
                    let cbin = (m - k) % m;
                    entries.push(PlanEntry {
                        param_idx: k,
                        bin: k,
                        cbin,
                        self_paired: k == 0 || 2 * k == m,
                    });
                }
            }
            SubbandShape::Two(m1, m2) => {
                // axis-Nyquist planes stay out of the plan: |f1| < m1/2,
                // f2 < m2/2, which keeps every retained bin cleanly paired
                let eff1 = modes.min(m1 / 2);
                let eff2 = modes.min(m2 / 2);
                if eff1 == 0 || eff2 == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "subband {m1}×{m2} too small for spectral mixing"
                    )));
                }
                for p1 in 0..2 * modes - 1 {
                    let f1: i64 = if p1 < modes {
                        p1 as i64
                    } else {
                        p1 as i64 - (2 * modes as i64 - 1)
                    };
                    if f1.unsigned_abs() as usize >= eff1 {
                        continue;
                    }
                    for f2 in 0..eff2 {
                        // the (−f1, 0) slots duplicate conjugates of (f1, 0)
                        if f2 == 0 && f1 < 0 {
                            continue;
                        }
                        let b1 = f1.rem_euclid(m1 as i64) as usize;
                        let bin = b1 * m2 + f2;
                        let cb1 = (m1 - b1) % m1;
                        let cb2 = (m2 - f2) % m2;
                        let cbin = cb1 * m2 + cb2;
                        entries.push(PlanEntry {
                            param_idx: p1 * modes + f2,
                            bin,
                            cbin,
                            self_paired: bin == cbin,
                        });
                    }
                }
            }
        }
        Ok(ModePlan { entries })
    }
}

/// Splits a field into its subband buffers, pyramid order.
fn decompose(machine: &WnoMachine, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let cfg = &machine.config;
    match machine.grid_shape() {
        [_] => {
            let p = dwt_forward(x, cfg.family, cfg.levels)?;
            let mut out = Vec::with_capacity(cfg.levels + 1);
            out.push(p.approx);
            out.extend(p.details);
            Ok(out)
        }
        [n1, n2] => {
            let p = dwt2_forward(x, (*n1, *n2), cfg.family, cfg.levels)?;
            let mut out = Vec::with_capacity(3 * cfg.levels + 1);
            out.push(p.approx);
            for bands in p.details {
                out.extend(bands);
            }
            Ok(out)
        }
        _ => unreachable!(),
    }
}

fn reconstruct(machine: &WnoMachine, mut subbands: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let cfg = &machine.config;
    match machine.grid_shape() {
        [n] => {
            let details = subbands.split_off(1);
            let approx = subbands.pop().expect("approx band");
            dwt_inverse(&WaveletPyramid {
                levels: cfg.levels,
                approx,
                details,
                family: cfg.family,
                original_length: *n,
            })
        }
        [n1, n2] => {
            let mut rest = subbands.split_off(1);
            let approx = subbands.pop().expect("approx band");
            let mut details = Vec::with_capacity(cfg.levels);
            for _ in 0..cfg.levels {
                let mut tail = rest.split_off(3);
                std::mem::swap(&mut rest, &mut tail);
                let mut it = tail.into_iter();
                details.push([
                    it.next().unwrap(),
                    it.next().unwrap(),
                    it.next().unwrap(),
                ]);
            }
            dwt2_inverse(&WaveletPyramid2 {
                levels: cfg.levels,
                approx,
                details,
                family: cfg.family,
                original_shape: (*n1, *n2),
            })
        }
        _ => unreachable!(),
    }
}

fn fft_subband(shape: &SubbandShape, buf: &[f64]) -> Result<Vec<Complex64>> {
    let mut spec: Vec<Complex64> = buf.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    match *shape {
        SubbandShape::One(_) => fft::fft_in_place(&mut spec, false)?,
        SubbandShape::Two(m1, m2) => fft::fft2_in_place(&mut spec, m1, m2, false)?,
    }
    Ok(spec)
}

fn ifft_subband(shape: &SubbandShape, mut spec: Vec<Complex64>) -> Result<Vec<f64>> {
    match *shape {
        SubbandShape::One(_) => fft::fft_in_place(&mut spec, true)?,
        SubbandShape::Two(m1, m2) => fft::fft2_in_place(&mut spec, m1, m2, true)?,
    }
    Ok(spec.iter().map(|c| c.re).collect())
}

#[inline]
fn r_base(param_idx: usize, cout: usize, cin: usize, c: usize) -> usize {
    ((param_idx * c + cout) * c + cin) * 2
}

/// Spectral path of a layer: DWT each channel, mix retained modes with the
/// complex weights, inverse transforms. Output is channel-major C×n.
pub(super) fn spectral_conv_forward(
    machine: &WnoMachine,
    params: &[f64],
    subband_ranges: &[Range<usize>],
    v: &[f64],
) -> Result<Vec<f64>> {
    let c = machine.config.width;
    let n = machine.n_points;
    let shapes = machine.subbands();
    let mut spectra: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(c);
    for cin in 0..c {
        let sbs = decompose(machine, &v[cin * n..(cin + 1) * n])?;
        let mut per = Vec::with_capacity(sbs.len());
        for (s, buf) in sbs.iter().enumerate() {
            per.push(fft_subband(&shapes[s], buf)?);
        }
        spectra.push(per);
    }
    let mut out = vec![0.0; c * n];
    for cout in 0..c {
        let mut sbufs = Vec::with_capacity(shapes.len());
        for (s, shape) in shapes.iter().enumerate() {
            let r = &params[subband_ranges[s].clone()];
            let plan = &machine.plans()[s];
            let mut yspec = vec![Complex64::new(0.0, 0.0); shape.len()];
            for e in &plan.entries {
                if e.self_paired {
                    let mut acc = 0.0;
                    for cin in 0..c {
                        acc += r[r_base(e.param_idx, cout, cin, c)] * spectra[cin][s][e.bin].re;
                    }
                    yspec[e.bin] = Complex64::new(acc, 0.0);
                } else {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for cin in 0..c {
                        let b = r_base(e.param_idx, cout, cin, c);
                        acc += Complex64::new(r[b], r[b + 1]) * spectra[cin][s][e.bin];
                    }
                    yspec[e.bin] = acc;
                    yspec[e.cbin] = acc.conj();
                }
            }
            sbufs.push(ifft_subband(shape, yspec)?);
        }
        let rec = reconstruct(machine, sbufs)?;
        out[cout * n..(cout + 1) * n].copy_from_slice(&rec);
    }
    Ok(out)
}

/// Adjoint of [`spectral_conv_forward`]: accumulates weight gradients into
/// `grads` and the input-field gradient into `v_bar`. Upstream sensitivities
/// arrive in `pre_bar`; the layer input `v_in` is re-decomposed rather than
/// cached to keep per-sample memory flat.
#[allow(clippy::too_many_arguments)]
pub(super) fn spectral_conv_backward(
    machine: &WnoMachine,
    params: &[f64],
    subband_ranges: &[Range<usize>],
    v_in: &[f64],
    pre_bar: &[f64],
    grads: &mut [f64],
    v_bar: &mut [f64],
) -> Result<()> {
    let c = machine.config.width;
    let n = machine.n_points;
    let shapes = machine.subbands();
    // recompute input spectra
    let mut x_spec: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(c);
    for cin in 0..c {
        let sbs = decompose(machine, &v_in[cin * n..(cin + 1) * n])?;
        let mut per = Vec::with_capacity(sbs.len());
        for (s, buf) in sbs.iter().enumerate() {
            per.push(fft_subband(&shapes[s], buf)?);
        }
        x_spec.push(per);
    }
    // upstream spectra: the adjoint of synthesis is analysis
    let mut g_spec: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(c);
    for cout in 0..c {
        let sbs = decompose(machine, &pre_bar[cout * n..(cout + 1) * n])?;
        let mut per = Vec::with_capacity(sbs.len());
        for (s, buf) in sbs.iter().enumerate() {
            per.push(fft_subband(&shapes[s], buf)?);
        }
        g_spec.push(per);
    }
    // weight gradients
    for (s, shape) in shapes.iter().enumerate() {
        let m = shape.len() as f64;
        let gr = &mut grads[subband_ranges[s].clone()];
        let plan = &machine.plans()[s];
        for e in &plan.entries {
            if e.self_paired {
                let w = 1.0 / m;
                for cout in 0..c {
                    let g = g_spec[cout][s][e.bin].re;
                    if g == 0.0 {
                        continue;
                    }
                    for cin in 0..c {
                        gr[r_base(e.param_idx, cout, cin, c)] +=
                            w * x_spec[cin][s][e.bin].re * g;
                    }
                }
            } else {
                let w = 2.0 / m;
                for cout in 0..c {
                    let g = g_spec[cout][s][e.bin];
                    for cin in 0..c {
                        let x = x_spec[cin][s][e.bin];
                        let b = r_base(e.param_idx, cout, cin, c);
                        gr[b] += w * (x * g.conj()).re;
                        gr[b + 1] += w * (x.conj() * g).im;
                    }
                }
            }
        }
    }
    // input gradients: conjugate-transposed mixing applied to upstream spectra
    for cin in 0..c {
        let mut sbufs = Vec::with_capacity(shapes.len());
        for (s, shape) in shapes.iter().enumerate() {
            let r = &params[subband_ranges[s].clone()];
            let plan = &machine.plans()[s];
            let mut xbar = vec![Complex64::new(0.0, 0.0); shape.len()];
            for e in &plan.entries {
                if e.self_paired {
                    let mut acc = 0.0;
                    for cout in 0..c {
                        acc += r[r_base(e.param_idx, cout, cin, c)] * g_spec[cout][s][e.bin].re;
                    }
                    xbar[e.bin] = Complex64::new(acc, 0.0);
                } else {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for cout in 0..c {
                        let b = r_base(e.param_idx, cout, cin, c);
                        acc += Complex64::new(r[b], -r[b + 1]) * g_spec[cout][s][e.bin];
                    }
                    xbar[e.bin] = acc;
                    xbar[e.cbin] = acc.conj();
                }
            }
            sbufs.push(ifft_subband(shape, xbar)?);
        }
        let rec = reconstruct(machine, sbufs)?;
        for (o, v) in v_bar[cin * n..(cin + 1) * n].iter_mut().zip(&rec) {
            *o += v;
        }
    }
    Ok(())
}
