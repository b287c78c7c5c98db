//! Dense and banded linear algebra: Cholesky factorizations, triangular
//! solves, Kronecker-structured matrix-vector products, and the reverse-mode
//! adjoints of the factorizations used by training.
//!
//! Everything is 64-bit and row-major. Matrices here are small (feature-space
//! blocks) or banded (spatial blocks); there is no general BLAS ambition.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Max relative asymmetry |A - Aᵀ| / max|A|.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Packed lower-triangular matrix; row i holds i+1 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    pub dim: usize,
    pub data: Vec<f64>,
}

#[inline]
fn tri_off(i: usize) -> usize {
    i * (i + 1) / 2
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular { dim, data: vec![0.0; tri_off(dim) + dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim);
        for i in 0..dim {
            l.data[tri_off(i) + i] = 1.0;
        }
        l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.data[tri_off(i) + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i);
        self.data[tri_off(i) + j] = v;
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                m.set(i, j, self.get(i, j));
            }
        }
        m
    }

    pub fn log_det_doubled(&self) -> f64 {
        // log|L Lᵀ| = 2 Σ log L_ii
        (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>() * 2.0
    }

    /// y = L x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let base = tri_off(i);
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.data[base + j] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// y = Lᵀ x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let base = tri_off(i);
            let xi = x[i];
            for j in 0..=i {
                y[j] += self.data[base + j] * xi;
            }
        }
        y
    }
}

/// Cholesky factorization of a symmetric matrix: L with L·Lᵀ = A + jitter·I.
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<LowerTriangular> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch { expected: a.rows, got: a.cols, context: "cholesky" });
    }
    let n = a.rows;
    let mut l = LowerTriangular::zeros(n);
    for j in 0..n {
        let mut s = a.get(j, j) + jitter;
        for k in 0..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        if !(s > 0.0) {
            return Err(Error::NotPositiveDefinite { dim: n, pivot: s, jitter });
        }
        let diag = s.sqrt();
        l.set(j, j, diag);
        for i in j + 1..n {
            let mut t = a.get(i, j);
            for k in 0..j {
                t -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, t / diag);
        }
    }
    Ok(l)
}

static MAX_LOGGED_REL: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Escalation events are worth noticing (they mean the sparsified kernel
/// lost definiteness); log each new high-water relative level once.
fn note_escalation(rel: f64) {
    use std::sync::atomic::Ordering;
    let bits = rel.to_bits();
    let prev = MAX_LOGGED_REL.fetch_max(bits, Ordering::Relaxed);
    if bits > prev {
        eprintln!("jitter escalated to {rel:.1e} of the mean diagonal");
    }
}

/// Cholesky with jitter escalation: starts at `rel_jitter` × mean(diag) and
/// multiplies by 10 until success or the relative level exceeds 1e-2.
/// Returns the factor and the absolute jitter that succeeded.
pub fn cholesky_escalating(a: &DenseMatrix, rel_jitter: f64) -> Result<(LowerTriangular, f64)> {
    let n = a.rows;
    let mean_diag = (0..n).map(|i| a.get(i, i)).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag.abs() > 0.0 { mean_diag.abs() } else { 1.0 };
    let mut rel = rel_jitter.max(0.0);
    if rel == 0.0 {
        return cholesky(a, 0.0).map(|l| (l, 0.0));
    }
    loop {
        match cholesky(a, rel * scale) {
            Ok(l) => {
                if rel > rel_jitter {
                    note_escalation(rel);
                }
                return Ok((l, rel * scale));
            }
            Err(e) => {
                if rel >= 1e-2 {
                    return Err(e);
                }
                rel *= 10.0;
            }
        }
    }
}

/// Solves L x = b (or Lᵀ x = b when `transposed`).
pub fn tri_solve(l: &LowerTriangular, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
    let n = l.dim;
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len(), context: "tri_solve" });
    }
    for i in 0..n {
        if l.get(i, i) == 0.0 {
            return Err(Error::NotPositiveDefinite { dim: n, pivot: 0.0, jitter: 0.0 });
        }
    }
    let mut x = b.to_vec();
    if !transposed {
        for i in 0..n {
            let base = tri_off(i);
            let mut acc = x[i];
            for j in 0..i {
                acc -= l.data[base + j] * x[j];
            }
            x[i] = acc / l.data[base + i];
        }
    } else {
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= l.get(j, i) * x[j];
            }
            x[i] = acc / l.get(i, i);
        }
    }
    Ok(x)
}

/// Solves (L Lᵀ) x = b.
pub fn chol_solve(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>> {
    let y = tri_solve(l, b, false)?;
    tri_solve(l, &y, true)
}

/// Anything that can apply itself to a vector; lets Kronecker products mix
/// dense feature blocks with sparse spatial blocks.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinOp for DenseMatrix {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.rows, self.cols);
        self.rows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let out = self.matvec(x);
        y.copy_from_slice(&out);
    }
}

/// (A ⊗ B) v without materializing the product, via vec(A X Bᵀ) with
/// row-major vec and X the n×m unstacking of v.
pub fn kron_matvec<B: LinOp>(a: &DenseMatrix, b: &B, v: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    let m = b.dim();
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch { expected: a.rows, got: a.cols, context: "kron_matvec A" });
    }
    if v.len() != n * m {
        return Err(Error::DimensionMismatch { expected: n * m, got: v.len(), context: "kron_matvec v" });
    }
    // Y_j = B x_j for each row-block j, then out_i = Σ_j A_ij Y_j.
    let mut yrows = vec![0.0; n * m];
    for j in 0..n {
        b.apply(&v[j * m..(j + 1) * m], &mut yrows[j * m..(j + 1) * m]);
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        let block = &mut out[i * m..(i + 1) * m];
        for (j, &aij) in arow.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let y = &yrows[j * m..(j + 1) * m];
            for (o, yv) in block.iter_mut().zip(y) {
                *o += aij * yv;
            }
        }
    }
    Ok(out)
}

/// Dense Kronecker product, for oracle-domain comparisons only.
pub fn dense_kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (n, m) = (a.rows, b.rows);
    let mut k = DenseMatrix::zeros(n * m, n * m);
    for i in 0..n {
        for j in 0..n {
            let aij = a.get(i, j);
            for p in 0..m {
                for q in 0..m {
                    k.set(i * m + p, j * m + q, aij * b.get(p, q));
                }
            }
        }
    }
    k
}

/// Reverse-mode adjoint of [`cholesky`]: given `l_bar` = ∂f/∂L, accumulates
/// ∂f/∂A into `a_bar` (lower-triangle slots of a full row-major buffer, since
/// the factorization reads only the lower triangle).
pub fn cholesky_backward(l: &LowerTriangular, l_bar: &LowerTriangular, a_bar: &mut DenseMatrix) {
    let n = l.dim;
    debug_assert_eq!(l_bar.dim, n);
    debug_assert_eq!(a_bar.rows, n);
    let mut lb = l_bar.clone();
    for j in (0..n).rev() {
        let dj = l.get(j, j);
        // off-diagonals of column j first: they consumed L[j][j]
        for i in (j + 1..n).rev() {
            let g = lb.get(i, j);
            if g != 0.0 {
                let t_bar = g / dj;
                lb.set(j, j, lb.get(j, j) - g * l.get(i, j) / dj);
                a_bar.data[i * n + j] += t_bar;
                for k in 0..j {
                    lb.set(i, k, lb.get(i, k) - t_bar * l.get(j, k));
                    lb.set(j, k, lb.get(j, k) - t_bar * l.get(i, k));
                }
            }
        }
        // diagonal: L[j][j] = sqrt(s)
        let s_bar = lb.get(j, j) / (2.0 * dj);
        a_bar.data[j * n + j] += s_bar;
        for k in 0..j {
            lb.set(j, k, lb.get(j, k) - 2.0 * s_bar * l.get(j, k));
        }
    }
}

/// Symmetric banded matrix, lower half stored: entry (i, j) with
/// i−bw ≤ j ≤ i lives at `data[i*(bw+1) + (j + bw − i)]`.
#[derive(Debug, Clone)]
pub struct SymBanded {
    pub dim: usize,
    pub bw: usize,
    pub data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(dim: usize, bw: usize) -> Self {
        SymBanded { dim, bw, data: vec![0.0; dim * (bw + 1)] }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            return self.get(j, i);
        }
        if i - j > self.bw {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i.saturating_sub(self.bw)..=i {
                m.set(i, j, self.get(i, j));
                m.set(j, i, self.get(i, j));
            }
        }
        m
    }
}

/// Lower-banded triangular factor, same storage layout as [`SymBanded`].
#[derive(Debug, Clone)]
pub struct BandedLower {
    pub dim: usize,
    pub bw: usize,
    pub data: Vec<f64>,
}

impl BandedLower {
    pub fn zeros(dim: usize, bw: usize) -> Self {
        BandedLower { dim, bw, data: vec![0.0; dim * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.bw {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn log_det_doubled(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>() * 2.0
    }

    /// y = L x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let mut acc = 0.0;
            for j in lo..=i {
                acc += self.data[self.idx(i, j)] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// y = Lᵀ x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let xi = x[i];
            for j in lo..=i {
                y[j] += self.data[self.idx(i, j)] * xi;
            }
        }
        y
    }

    /// Solves L x = b or Lᵀ x = b.
    pub fn solve(&self, b: &[f64], transposed: bool) -> Vec<f64> {
        let n = self.dim;
        let mut x = b.to_vec();
        if !transposed {
            for i in 0..n {
                let lo = i.saturating_sub(self.bw);
                let mut acc = x[i];
                for j in lo..i {
                    acc -= self.data[self.idx(i, j)] * x[j];
                }
                x[i] = acc / self.data[self.idx(i, i)];
            }
        } else {
            for i in (0..n).rev() {
                let hi = (i + self.bw).min(n - 1);
                let mut acc = x[i];
                for j in i + 1..=hi {
                    acc -= self.data[self.idx(j, i)] * x[j];
                }
                x[i] = acc / self.data[self.idx(i, i)];
            }
        }
        x
    }
}

impl LinOp for SymBanded {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim;
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[i * (self.bw + 1) + (j + self.bw - i)];
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
    }
}

/// Banded Cholesky: L with L·Lᵀ = A + jitter·I, O(d·bw²).
pub fn banded_cholesky(a: &SymBanded, jitter: f64) -> Result<BandedLower> {
    let n = a.dim;
    let bw = a.bw;
    let mut l = BandedLower::zeros(n, bw);
    for j in 0..n {
        let mut s = a.get(j, j) + jitter;
        let lo = j.saturating_sub(bw);
        for k in lo..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        if !(s > 0.0) {
            return Err(Error::NotPositiveDefinite { dim: n, pivot: s, jitter });
        }
        let diag = s.sqrt();
        l.set(j, j, diag);
        let hi = (j + bw).min(n - 1);
        for i in j + 1..=hi {
            let mut t = a.get(i, j);
            let klo = i.saturating_sub(bw).max(lo);
            for k in klo..j {
                t -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, t / diag);
        }
    }
    Ok(l)
}

/// Banded version of [`cholesky_escalating`].
pub fn banded_cholesky_escalating(a: &SymBanded, rel_jitter: f64) -> Result<(BandedLower, f64)> {
    let n = a.dim;
    let mean_diag = (0..n).map(|i| a.get(i, i)).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag.abs() > 0.0 { mean_diag.abs() } else { 1.0 };
    let mut rel = rel_jitter.max(0.0);
    if rel == 0.0 {
        return banded_cholesky(a, 0.0).map(|l| (l, 0.0));
    }
    loop {
        match banded_cholesky(a, rel * scale) {
            Ok(l) => {
                if rel > rel_jitter {
                    note_escalation(rel);
                }
                return Ok((l, rel * scale));
            }
            Err(e) => {
                if rel >= 1e-2 {
                    return Err(e);
                }
                rel *= 10.0;
            }
        }
    }
}

/// Reverse-mode adjoint of [`banded_cholesky`]: gradients w.r.t. the in-band
/// entries of A (out-of-band entries are structural zeros, not parameters).
pub fn banded_cholesky_backward(l: &BandedLower, l_bar: &BandedLower, a_bar: &mut SymBanded) {
    let n = l.dim;
    let bw = l.bw;
    debug_assert_eq!(a_bar.dim, n);
    debug_assert_eq!(a_bar.bw, bw);
    let mut lb = l_bar.clone();
    for j in (0..n).rev() {
        let dj = l.get(j, j);
        let hi = (j + bw).min(n - 1);
        let lo = j.saturating_sub(bw);
        for i in (j + 1..=hi).rev() {
            let g = lb.get(i, j);
            if g != 0.0 {
                let t_bar = g / dj;
                lb.set(j, j, lb.get(j, j) - g * l.get(i, j) / dj);
                let k = a_bar.idx(i, j);
                a_bar.data[k] += t_bar;
                let klo = i.saturating_sub(bw).max(lo);
                for kk in klo..j {
                    lb.set(i, kk, lb.get(i, kk) - t_bar * l.get(j, kk));
                    lb.set(j, kk, lb.get(j, kk) - t_bar * l.get(i, kk));
                }
            }
        }
        let s_bar = lb.get(j, j) / (2.0 * dj);
        let k = a_bar.idx(j, j);
        a_bar.data[k] += s_bar;
        for kk in lo..j {
            lb.set(j, kk, lb.get(j, kk) - 2.0 * s_bar * l.get(j, kk));
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_seq(seed: u64, n: usize) -> Vec<f64> {
        // splitmix-style deterministic values in [-1, 1]
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let vals = rng_seq(seed, n * n);
        let a = DenseMatrix { rows: n, cols: n, data: vals };
        let at = a.transpose();
        let mut spd = at.matmul(&a);
        for i in 0..n {
            spd.data[i * n + i] += n as f64;
        }
        spd
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(l.to_dense(), DenseMatrix::identity(3));
    }

    #[test]
    fn cholesky_hand_2x2() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = cholesky(&a, 0.0).unwrap();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((l.get(1, 1) - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_spd(6, 7);
        let l = cholesky(&a, 0.0).unwrap();
        let ld = l.to_dense();
        let rec = ld.matmul(&ld.transpose());
        let num: f64 = rec.data.iter().zip(&a.data).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = a.data.iter().map(|x| x * x).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(cholesky(&a, 0.0), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn escalation_repairs_near_indefinite() {
        // eigenvalue -1e-9 needs a couple of escalation rounds
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1e-9]]);
        let (_, used) = cholesky_escalating(&a, 1e-6).unwrap();
        assert!(used > 0.0);
    }

    #[test]
    fn tri_solve_identity_and_residual() {
        let l = LowerTriangular::identity(3);
        let x = tri_solve(&l, &[1.0, 2.0, 3.0], false).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);

        let a = random_spd(5, 3);
        let l = cholesky(&a, 0.0).unwrap();
        let b = rng_seq(11, 5);
        let x = chol_solve(&l, &b).unwrap();
        let r = a.matvec(&x);
        let num: f64 = r.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!(num / den < 1e-9);
    }

    #[test]
    fn tri_solve_zero_diagonal_errors() {
        let mut l = LowerTriangular::identity(3);
        l.set(1, 1, 0.0);
        assert!(tri_solve(&l, &[1.0, 1.0, 1.0], false).is_err());
    }

    #[test]
    fn kron_matvec_identity_and_scalar() {
        let a = DenseMatrix::identity(2);
        let b = DenseMatrix::identity(3);
        let v = rng_seq(5, 6);
        assert_eq!(kron_matvec(&a, &b, &v).unwrap(), v);

        let a = DenseMatrix::from_rows(&[vec![2.0]]);
        let y = kron_matvec(&a, &DenseMatrix::identity(3), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn kron_matvec_matches_dense_oracle() {
        let a = DenseMatrix { rows: 3, cols: 3, data: rng_seq(21, 9) };
        let b = DenseMatrix { rows: 4, cols: 4, data: rng_seq(22, 16) };
        let v = rng_seq(23, 12);
        let fast = kron_matvec(&a, &b, &v).unwrap();
        let full = dense_kron(&a, &b).matvec(&v);
        for (x, y) in fast.iter().zip(&full) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        let n = 12;
        let bw = 3;
        let mut a = SymBanded::zeros(n, bw);
        for i in 0..n {
            a.set(i, i, 4.0 + 0.1 * i as f64);
            for j in i.saturating_sub(bw)..i {
                a.set(i, j, 0.3 / (1 + i - j) as f64);
            }
        }
        let lb = banded_cholesky(&a, 0.0).unwrap();
        let ld = cholesky(&a.to_dense(), 0.0).unwrap();
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                assert!((lb.get(i, j) - ld.get(i, j)).abs() < 1e-12);
            }
        }
        // solve matches dense chol solve
        let b = rng_seq(9, n);
        let y = lb.solve(&b, false);
        let x = lb.solve(&y, true);
        let xd = chol_solve(&ld, &b).unwrap();
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    /// Finite-difference check of the dense Cholesky adjoint through a random
    /// linear functional of L.
    #[test]
    fn cholesky_backward_matches_fd() {
        let n = 5;
        let a = random_spd(n, 17);
        let w = rng_seq(31, n * (n + 1) / 2 + n);
        let loss = |m: &DenseMatrix| -> f64 {
            let l = cholesky(m, 0.0).unwrap();
            l.data.iter().zip(&w).map(|(x, c)| x * c).sum()
        };
        let l = cholesky(&a, 0.0).unwrap();
        let mut l_bar = LowerTriangular::zeros(n);
        l_bar.data.copy_from_slice(&w[..l.data.len()]);
        let mut a_bar = DenseMatrix::zeros(n, n);
        cholesky_backward(&l, &l_bar, &mut a_bar);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..=i {
                let mut ap = a.clone();
                let mut am = a.clone();
                // symmetric perturbation of the (i,j) evaluation
                ap.set(i, j, ap.get(i, j) + h);
                am.set(i, j, am.get(i, j) - h);
                if i != j {
                    ap.set(j, i, ap.get(j, i) + h);
                    am.set(j, i, am.get(j, i) - h);
                }
                let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
                // cholesky reads the lower triangle only
                let analytic = a_bar.get(i, j) + if i != j { a_bar.get(j, i) } else { 0.0 };
                assert!(
                    (fd - analytic).abs() < 1e-5 * (1.0 + fd.abs()),
                    "({i},{j}): fd {fd} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn banded_cholesky_backward_matches_fd() {
        let n = 9;
        let bw = 2;
        let mut a = SymBanded::zeros(n, bw);
        for i in 0..n {
            a.set(i, i, 3.0 + 0.2 * i as f64);
            for j in i.saturating_sub(bw)..i {
                a.set(i, j, 0.4 / (1 + i - j) as f64);
            }
        }
        let w = rng_seq(41, n * (bw + 1));
        let loss = |m: &SymBanded| -> f64 {
            let l = banded_cholesky(m, 0.0).unwrap();
            l.data.iter().zip(&w).map(|(x, c)| x * c).sum()
        };
        let l = banded_cholesky(&a, 0.0).unwrap();
        let mut l_bar = BandedLower::zeros(n, bw);
        l_bar.data.copy_from_slice(&w);
        // zero the padding slots that don't correspond to real entries
        for i in 0..n {
            for j in 0..bw.saturating_sub(i) {
                l_bar.data[i * (bw + 1) + j] = 0.0;
            }
        }
        let mut a_bar = SymBanded::zeros(n, bw);
        banded_cholesky_backward(&l, &l_bar, &mut a_bar);
        let h = 1e-6;
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap.set(i, j, ap.get(i, j) + h);
                am.set(i, j, am.get(i, j) - h);
                let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
                let analytic = a_bar.get(i, j);
                assert!(
                    (fd - analytic).abs() < 1e-5 * (1.0 + fd.abs()),
                    "({i},{j}): fd {fd} analytic {analytic}"
                );
            }
        }
    }
}
