//! Decimated discrete wavelet transform with periodic boundary handling.
//!
//! Filters are orthonormal (Haar and Daubechies 2–6), so the periodic
//! transform is an orthogonal map: the inverse is the transpose, perfect
//! reconstruction and Parseval hold to rounding error, and the adjoint used
//! by reverse-mode differentiation is the inverse transform itself.

use crate::error::{Error, Result};

/// Haar scaling filter.
const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

// Daubechies scaling filters, orthonormal normalization (Σh = √2).
const DB2: [f64; 4] = [
    0.48296291314453414337,
    0.83651630373780790558,
    0.22414386804201338103,
    -0.12940952255126038117,
];
const DB3: [f64; 6] = [
    0.33267055295008261600,
    0.80689150931109257649,
    0.45987750211849157010,
    -0.13501102001025458870,
    -0.08544127388202666169,
    0.03522629188570953660,
];
const DB4: [f64; 8] = [
    0.23037781330889650086,
    0.71484657055291564709,
    0.63088076792985890788,
    -0.02798376941685985421,
    -0.18703481171909308408,
    0.03084138183556076363,
    0.03288301166688519974,
    -0.01059740178506903210,
];
const DB5: [f64; 10] = [
    0.16010239797419291448,
    0.60382926979718967054,
    0.72430852843777292773,
    0.13842814590132073151,
    -0.24229488706638203186,
    -0.03224486958463837465,
    0.07757149384004571352,
    -0.00624149021279827427,
    -0.01258075199908199947,
    0.00333572528547377128,
];
const DB6: [f64; 12] = [
    0.11154074335010946362,
    0.49462389039845308568,
    0.75113390802109535068,
    0.31525035170919762909,
    -0.22626469396543982008,
    -0.12976686756726193556,
    0.09750160558732304910,
    0.02752286553030572863,
    -0.03158203931748602957,
    0.00055384220116149614,
    0.00477725751094551064,
    -0.00107730108530847956,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Db2,
    Db3,
    Db4,
    Db5,
    Db6,
}

impl WaveletFamily {
    pub fn scaling_filter(&self) -> &'static [f64] {
        match self {
            WaveletFamily::Haar => &HAAR,
            WaveletFamily::Db2 => &DB2,
            WaveletFamily::Db3 => &DB3,
            WaveletFamily::Db4 => &DB4,
            WaveletFamily::Db5 => &DB5,
            WaveletFamily::Db6 => &DB6,
        }
    }

    /// Quadrature-mirror highpass: g[n] = (−1)ⁿ h[L−1−n].
    pub fn wavelet_filter(&self) -> Vec<f64> {
        let h = self.scaling_filter();
        let l = h.len();
        (0..l).map(|n| if n % 2 == 0 { h[l - 1 - n] } else { -h[l - 1 - n] }).collect()
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "haar" | "db1" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Db2),
            "db3" => Ok(WaveletFamily::Db3),
            "db4" => Ok(WaveletFamily::Db4),
            "db5" => Ok(WaveletFamily::Db5),
            "db6" => Ok(WaveletFamily::Db6),
            other => Err(Error::InvalidConfig(format!("unknown wavelet family '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Db2 => "db2",
            WaveletFamily::Db3 => "db3",
            WaveletFamily::Db4 => "db4",
            WaveletFamily::Db5 => "db5",
            WaveletFamily::Db6 => "db6",
        }
    }
}

/// Multi-level 1D decomposition. `details[0]` is the coarsest band.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub levels: usize,
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub family: WaveletFamily,
    pub original_length: usize,
}

fn check_level(len: usize, flen: usize, requested: usize) -> Result<()> {
    if len < flen || len % 2 != 0 {
        return Err(Error::TooManyLevels { length: len, filter_len: flen, requested });
    }
    Ok(())
}

/// One analysis level: periodic correlation with h and g, downsampled by 2.
fn analyze_level(x: &[f64], h: &[f64], g: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (t, (&hv, &gv)) in h.iter().zip(g).enumerate() {
            let src = x[(2 * k + t) % n];
            a += hv * src;
            d += gv * src;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

/// One synthesis level: transpose of [`analyze_level`].
fn synthesize_level(approx: &[f64], detail: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for k in 0..approx.len() {
        let (a, d) = (approx[k], detail[k]);
        for (t, (&hv, &gv)) in h.iter().zip(g).enumerate() {
            out[(2 * k + t) % n] += hv * a + gv * d;
        }
    }
}

pub fn dwt_forward(x: &[f64], family: WaveletFamily, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::InvalidConfig("wavelet levels must be >= 1".into()));
    }
    let h = family.scaling_filter();
    let g = family.wavelet_filter();
    let mut cur = x.to_vec();
    let mut details_fine_first: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for _ in 0..levels {
        check_level(cur.len(), h.len(), levels)?;
        let half = cur.len() / 2;
        let mut a = vec![0.0; half];
        let mut d = vec![0.0; half];
        analyze_level(&cur, h, &g, &mut a, &mut d);
        details_fine_first.push(d);
        cur = a;
    }
    details_fine_first.reverse();
    Ok(WaveletPyramid {
        levels,
        approx: cur,
        details: details_fine_first,
        family,
        original_length: x.len(),
    })
}

pub fn dwt_inverse(p: &WaveletPyramid) -> Result<Vec<f64>> {
    if p.details.len() != p.levels {
        return Err(Error::InconsistentPyramid(format!(
            "{} detail bands for {} levels",
            p.details.len(),
            p.levels
        )));
    }
    let mut expect = p.original_length;
    for (rev, d) in p.details.iter().rev().enumerate() {
        if d.len() * 2 != expect {
            return Err(Error::InconsistentPyramid(format!(
                "detail band {} has length {}, expected {}",
                p.levels - 1 - rev,
                d.len(),
                expect / 2
            )));
        }
        expect /= 2;
    }
    if p.approx.len() != expect {
        return Err(Error::InconsistentPyramid(format!(
            "approx has length {}, expected {}",
            p.approx.len(),
            expect
        )));
    }
    let h = p.family.scaling_filter();
    let g = p.family.wavelet_filter();
    let mut cur = p.approx.clone();
    for d in &p.details {
        let mut out = vec![0.0; cur.len() * 2];
        synthesize_level(&cur, d, h, &g, &mut out);
        cur = out;
    }
    Ok(cur)
}

/// Separable 2D decomposition of a row-major n1×n2 field. Per level the
/// running lowpass block splits into four: `details[l] = [hl, lh, hh]` where
/// the first letter is the row-axis filter and the second the column-axis
/// filter; `details[0]` is the coarsest level.
#[derive(Debug, Clone)]
pub struct WaveletPyramid2 {
    pub levels: usize,
    pub approx: Vec<f64>,
    pub details: Vec<[Vec<f64>; 3]>,
    pub family: WaveletFamily,
    pub original_shape: (usize, usize),
}

impl WaveletPyramid2 {
    /// Shape of the blocks at detail level l (0 = coarsest).
    pub fn level_shape(&self, l: usize) -> (usize, usize) {
        let s = self.levels - l;
        (self.original_shape.0 >> s, self.original_shape.1 >> s)
    }
}

/// One separable analysis level on an n1×n2 block: returns (ll, hl, lh, hh)
/// each n1/2 × n2/2.
fn analyze_level_2d(
    x: &[f64],
    n1: usize,
    n2: usize,
    h: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h1, h2) = (n1 / 2, n2 / 2);
    // filter along columns (axis 1) within each row
    let mut lo = vec![0.0; n1 * h2];
    let mut hi = vec![0.0; n1 * h2];
    let mut arow = vec![0.0; h2];
    let mut drow = vec![0.0; h2];
    for r in 0..n1 {
        analyze_level(&x[r * n2..(r + 1) * n2], h, g, &mut arow, &mut drow);
        lo[r * h2..(r + 1) * h2].copy_from_slice(&arow);
        hi[r * h2..(r + 1) * h2].copy_from_slice(&drow);
    }
    // filter along rows (axis 0) within each column
    let mut ll = vec![0.0; h1 * h2];
    let mut hl = vec![0.0; h1 * h2];
    let mut lh = vec![0.0; h1 * h2];
    let mut hh = vec![0.0; h1 * h2];
    let mut col = vec![0.0; n1];
    let mut acol = vec![0.0; h1];
    let mut dcol = vec![0.0; h1];
    for c in 0..h2 {
        for r in 0..n1 {
            col[r] = lo[r * h2 + c];
        }
        analyze_level(&col, h, g, &mut acol, &mut dcol);
        for r in 0..h1 {
            ll[r * h2 + c] = acol[r];
            hl[r * h2 + c] = dcol[r];
        }
        for r in 0..n1 {
            col[r] = hi[r * h2 + c];
        }
        analyze_level(&col, h, g, &mut acol, &mut dcol);
        for r in 0..h1 {
            lh[r * h2 + c] = acol[r];
            hh[r * h2 + c] = dcol[r];
        }
    }
    (ll, hl, lh, hh)
}

fn synthesize_level_2d(
    ll: &[f64],
    hl: &[f64],
    lh: &[f64],
    hh: &[f64],
    n1: usize,
    n2: usize,
    h: &[f64],
    g: &[f64],
) -> Vec<f64> {
    let (h1, h2) = (n1 / 2, n2 / 2);
    // invert along rows (axis 0) first
    let mut lo = vec![0.0; n1 * h2];
    let mut hi = vec![0.0; n1 * h2];
    let mut acol = vec![0.0; h1];
    let mut dcol = vec![0.0; h1];
    let mut col = vec![0.0; n1];
    for c in 0..h2 {
        for r in 0..h1 {
            acol[r] = ll[r * h2 + c];
            dcol[r] = hl[r * h2 + c];
        }
        synthesize_level(&acol, &dcol, h, g, &mut col);
        for r in 0..n1 {
            lo[r * h2 + c] = col[r];
        }
        for r in 0..h1 {
            acol[r] = lh[r * h2 + c];
            dcol[r] = hh[r * h2 + c];
        }
        synthesize_level(&acol, &dcol, h, g, &mut col);
        for r in 0..n1 {
            hi[r * h2 + c] = col[r];
        }
    }
    // then along columns (axis 1)
    let mut out = vec![0.0; n1 * n2];
    let mut row = vec![0.0; n2];
    for r in 0..n1 {
        synthesize_level(&lo[r * h2..(r + 1) * h2], &hi[r * h2..(r + 1) * h2], h, g, &mut row);
        out[r * n2..(r + 1) * n2].copy_from_slice(&row);
    }
    out
}

pub fn dwt2_forward(
    x: &[f64],
    shape: (usize, usize),
    family: WaveletFamily,
    levels: usize,
) -> Result<WaveletPyramid2> {
    let (n1, n2) = shape;
    if x.len() != n1 * n2 {
        return Err(Error::DimensionMismatch { expected: n1 * n2, got: x.len(), context: "dwt2" });
    }
    if levels == 0 {
        return Err(Error::InvalidConfig("wavelet levels must be >= 1".into()));
    }
    let h = family.scaling_filter();
    let g = family.wavelet_filter();
    let mut cur = x.to_vec();
    let (mut c1, mut c2) = (n1, n2);
    let mut details_fine_first: Vec<[Vec<f64>; 3]> = Vec::with_capacity(levels);
    for _ in 0..levels {
        check_level(c1, h.len(), levels)?;
        check_level(c2, h.len(), levels)?;
        let (ll, hl, lh, hh) = analyze_level_2d(&cur, c1, c2, h, &g);
        details_fine_first.push([hl, lh, hh]);
        cur = ll;
        c1 /= 2;
        c2 /= 2;
    }
    details_fine_first.reverse();
    Ok(WaveletPyramid2 {
        levels,
        approx: cur,
        details: details_fine_first,
        family,
        original_shape: shape,
    })
}

pub fn dwt2_inverse(p: &WaveletPyramid2) -> Result<Vec<f64>> {
    if p.details.len() != p.levels {
        return Err(Error::InconsistentPyramid(format!(
            "{} detail levels for {} requested",
            p.details.len(),
            p.levels
        )));
    }
    let h = p.family.scaling_filter();
    let g = p.family.wavelet_filter();
    let mut cur = p.approx.clone();
    for (l, bands) in p.details.iter().enumerate() {
        let (b1, b2) = p.level_shape(l);
        if cur.len() != b1 * b2 || bands.iter().any(|b| b.len() != b1 * b2) {
            return Err(Error::InconsistentPyramid(format!("level {l} block size mismatch")));
        }
        cur = synthesize_level_2d(&cur, &bands[0], &bands[1], &bands[2], 2 * b1, 2 * b2, h, &g);
    }
    Ok(cur)
}
