//! Radix-2 complex FFT with a process-wide twiddle cache.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

fn twiddles(n: usize) -> Arc<Vec<Complex64>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<Vec<Complex64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(t) = cache.read().unwrap().get(&n) {
        return Arc::clone(t);
    }
    let half = (n / 2).max(1);
    let mut t = Vec::with_capacity(half);
    for k in 0..half {
        let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        t.push(Complex64::new(ang.cos(), ang.sin()));
    }
    let t = Arc::new(t);
    cache.write().unwrap().entry(n).or_insert_with(|| Arc::clone(&t));
    t
}

/// In-place iterative Cooley–Tukey transform. Forward uses e^{-2πi kt/n};
/// the inverse conjugates twiddles and scales by 1/n.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwoLength(n));
    }
    if n == 1 {
        return Ok(());
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let tw = twiddles(n);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let mut w = tw[k * step];
                if inverse {
                    w = w.conj();
                }
                let t = w * buf[start + half + k];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + half + k] = u - t;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// Out-of-place transform of a complex sequence.
pub fn fft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let mut buf = x.to_vec();
    fft_in_place(&mut buf, inverse)?;
    Ok(buf)
}

/// Transform of a real sequence, returned as a full complex spectrum.
pub fn fft_real(x: &[f64], inverse: bool) -> Result<Vec<Complex64>> {
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&buf, inverse)
}

/// Separable 2D transform (rows then columns) of a row-major n1×n2 buffer.
pub fn fft2_in_place(buf: &mut [Complex64], n1: usize, n2: usize, inverse: bool) -> Result<()> {
    if buf.len() != n1 * n2 {
        return Err(Error::DimensionMismatch { expected: n1 * n2, got: buf.len(), context: "fft2" });
    }
    for r in 0..n1 {
        fft_in_place(&mut buf[r * n2..(r + 1) * n2], inverse)?;
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n1];
    for c in 0..n2 {
        for r in 0..n1 {
            col[r] = buf[r * n2 + c];
        }
        fft_in_place(&mut col, inverse)?;
        for r in 0..n1 {
            buf[r * n2 + c] = col[r];
        }
    }
    Ok(())
}
