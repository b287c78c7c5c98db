//! Wavelet neural operator: lift → J-level wavelet decomposition → global
//! Fourier-domain convolution per subband → inverse wavelet reconstruction,
//! with a residual channel-mixing path and pointwise nonlinearity, closed by
//! a two-stage pointwise projection.
//!
//! The same architecture runs twice in the full model: once producing the
//! prior mean field and once producing the latent embedding the feature
//! kernel compares (that instance mean-pools its output over the grid).
//!
//! Spectra of real subbands are handled as Hermitian half-spectra: retained
//! modes are written together with their conjugate bins and the DC/Nyquist
//! bins only ever see the real part of the weights, so outputs are real by
//! construction. All gradients are hand-derived adjoints; the wavelet
//! transform is orthogonal under periodic boundary handling, so its adjoint
//! is its inverse.

mod layer;

pub use layer::{ModePlan, PlanEntry, SubbandShape};

use crate::data::Grid;
use crate::error::{Error, Result};
use crate::signal::WaveletFamily;
use layer::{spectral_conv_backward, spectral_conv_forward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Identity,
}

/// tanh-form gelu and its derivative.
#[inline]
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn prime(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_prime(x),
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture hyperparameters; the trainable weights live in a flat
/// parameter vector laid out by [`WnoLayout`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WnoConfig {
    /// channel width C of the latent field
    pub width: usize,
    pub n_layers: usize,
    /// wavelet decomposition depth J
    pub levels: usize,
    /// retained Fourier modes per subband (per axis in 2D)
    pub modes: usize,
    pub family: WaveletFamily,
    /// spatial dimensionality of the grids this operator runs on
    pub dims: usize,
    /// input channels: the field plus one coordinate channel per axis
    pub in_channels: usize,
    pub out_channels: usize,
    pub proj_channels: usize,
    /// mean-pool the projected output over the grid (embedding path)
    pub pool_output: bool,
    /// per-layer nonlinearity; final spectral layer defaults to identity
    pub activations: Vec<Activation>,
}

impl WnoConfig {
    pub fn new_mean_path(dims: usize, width: usize, n_layers: usize, levels: usize, modes: usize) -> Self {
        Self::with_output(dims, width, n_layers, levels, modes, 1, false)
    }

    pub fn new_embedding_path(
        dims: usize,
        width: usize,
        n_layers: usize,
        levels: usize,
        modes: usize,
        latent_dim: usize,
    ) -> Self {
        Self::with_output(dims, width, n_layers, levels, modes, latent_dim, true)
    }

    fn with_output(
        dims: usize,
        width: usize,
        n_layers: usize,
        levels: usize,
        modes: usize,
        out_channels: usize,
        pool_output: bool,
    ) -> Self {
        let mut activations = vec![Activation::Gelu; n_layers];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        WnoConfig {
            width,
            n_layers,
            levels,
            modes,
            family: WaveletFamily::Db4,
            dims,
            in_channels: 1 + dims,
            out_channels,
            proj_channels: 2 * width,
            pool_output,
            activations,
        }
    }

    /// Number of wavelet subbands the spectral weights cover.
    pub fn n_subbands(&self) -> usize {
        match self.dims {
            1 => self.levels + 1,
            2 => 3 * self.levels + 1,
            _ => unreachable!(),
        }
    }

    /// Complex parameter slots per subband (resolution independent).
    pub fn modes_per_subband(&self) -> usize {
        match self.dims {
            1 => self.modes,
            2 => (2 * self.modes - 1) * self.modes,
            _ => unreachable!(),
        }
    }
}

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct WnoLayout {
    pub lift_w: Range<usize>,
    pub lift_b: Range<usize>,
    /// per layer: (per-subband complex weight ranges, bias range)
    pub layers: Vec<(Vec<Range<usize>>, Range<usize>)>,
    pub proj_w1: Range<usize>,
    pub proj_b1: Range<usize>,
    pub proj_w2: Range<usize>,
    pub proj_b2: Range<usize>,
    pub total: usize,
}

impl WnoLayout {
    pub fn new(cfg: &WnoConfig) -> Self {
        let c = cfg.width;
        let mut at = 0usize;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let lift_w = take(c * cfg.in_channels);
        let lift_b = take(c);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let per_subband = cfg.modes_per_subband() * c * c * 2;
        for _ in 0..cfg.n_layers {
            let mut subbands = Vec::with_capacity(cfg.n_subbands());
            for _ in 0..cfg.n_subbands() {
                subbands.push(take(per_subband));
            }
            let bias = take(c * c);
            layers.push((subbands, bias));
        }
        let proj_w1 = take(cfg.proj_channels * c);
        let proj_b1 = take(cfg.proj_channels);
        let proj_w2 = take(cfg.out_channels * cfg.proj_channels);
        let proj_b2 = take(cfg.out_channels);
        WnoLayout { lift_w, lift_b, layers, proj_w1, proj_b1, proj_w2, proj_b2, total: at }
    }
}

/// A WNO bound to one grid resolution: precomputed subband shapes and
/// spectral mode plans. The flat parameter vector is resolution independent,
/// so the same weights drive machines at different power-of-two resolutions.
#[derive(Debug)]
pub struct WnoMachine {
    pub config: WnoConfig,
    pub layout: WnoLayout,
    pub n_points: usize,
    grid_shape: Vec<usize>,
    subband_shapes: Vec<SubbandShape>,
    plans: Vec<ModePlan>,
    /// coordinate channels appended to the input field
    coord_channels: Vec<Vec<f64>>,
}

impl WnoMachine {
    pub fn new(config: WnoConfig, grid: &Grid) -> Result<Self> {
        if grid.dims() != config.dims {
            return Err(Error::ShapeMismatch(format!(
                "operator built for {}D, grid is {}D",
                config.dims,
                grid.dims()
            )));
        }
        if !grid.power_of_two_shape() {
            return Err(Error::NonPowerOfTwoLength(grid.len()));
        }
        let f_len = config.family.scaling_filter().len();
        for &n in &grid.shape {
            let mut cur = n;
            for _ in 0..config.levels {
                if cur < f_len || cur % 2 != 0 {
                    return Err(Error::TooManyLevels {
                        length: n,
                        filter_len: f_len,
                        requested: config.levels,
                    });
                }
                cur /= 2;
            }
        }
        let subband_shapes = layer::subband_shapes(&grid.shape, config.levels);
        let mut plans = Vec::with_capacity(subband_shapes.len());
        for shape in &subband_shapes {
            plans.push(ModePlan::build(shape, config.modes)?);
        }
        let n_points = grid.len();
        let pts = grid.points();
        let dims = config.dims;
        let mut coord_channels = vec![vec![0.0; n_points]; dims];
        for r in 0..n_points {
            for (ax, ch) in coord_channels.iter_mut().enumerate() {
                ch[r] = pts[r * dims + ax];
            }
        }
        let layout = WnoLayout::new(&config);
        Ok(WnoMachine {
            config,
            layout,
            n_points,
            grid_shape: grid.shape.clone(),
            subband_shapes,
            plans,
            coord_channels,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Variance-scaled uniform initialization; spectral weights shrink with
    /// fan-in × modes so the initial layer is near-isometric.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        fn fill_affine(
            rng: &mut ChaCha8Rng,
            p: &mut [f64],
            w: &Range<usize>,
            b: &Range<usize>,
            fan_in: usize,
        ) {
            let s = (1.0 / fan_in as f64).sqrt();
            for v in &mut p[w.clone()] {
                *v = rng.gen_range(-s..=s);
            }
            for v in &mut p[b.clone()] {
                *v = rng.gen_range(-s..=s);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.layout.total];
        let c = self.config.width;
        let layout = self.layout.clone();
        fill_affine(&mut rng, &mut p, &layout.lift_w, &layout.lift_b, self.config.in_channels);
        let spectral_scale = 1.0 / (c as f64 * self.config.modes_per_subband() as f64);
        for (subbands, bias) in &layout.layers {
            for r in subbands {
                for v in &mut p[r.clone()] {
                    *v = rng.gen_range(-1.0..=1.0) * spectral_scale;
                }
            }
            let s = (1.0 / c as f64).sqrt();
            for v in &mut p[bias.clone()] {
                *v = rng.gen_range(-s..=s);
            }
        }
        fill_affine(&mut rng, &mut p, &layout.proj_w1, &layout.proj_b1, c);
        fill_affine(&mut rng, &mut p, &layout.proj_w2, &layout.proj_b2, self.config.proj_channels);
        p
    }

    /// Builds the channel-major input buffer [field, coords…] for one sample.
    pub fn assemble_input(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.n_points {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, machine expects {}",
                field.len(),
                self.n_points
            )));
        }
        let n = self.n_points;
        let mut input = Vec::with_capacity(self.config.in_channels * n);
        input.extend_from_slice(field);
        for ch in &self.coord_channels {
            input.extend_from_slice(ch);
        }
        Ok(input)
    }

    pub fn forward(&self, params: &[f64], field: &[f64]) -> Result<Vec<f64>> {
        let (out, _) = self.forward_cached(params, field)?;
        Ok(out)
    }

    /// Pointwise affine lift of the assembled (field, coords…) channels to
    /// the C-channel latent field.
    pub fn lift(&self, params: &[f64], field: &[f64]) -> Result<Vec<f64>> {
        let input = self.assemble_input(field)?;
        Ok(self.apply_lift(params, &input))
    }

    fn apply_lift(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let n = self.n_points;
        let c = self.config.width;
        let wl = &params[self.layout.lift_w.clone()];
        let bl = &params[self.layout.lift_b.clone()];
        let mut v = vec![0.0; c * n];
        for co in 0..c {
            let row = &wl[co * self.config.in_channels..(co + 1) * self.config.in_channels];
            let out = &mut v[co * n..(co + 1) * n];
            for (ci, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &input[ci * n..(ci + 1) * n];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
            for o in out.iter_mut() {
                *o += bl[co];
            }
        }
        v
    }

    /// One full spectral layer on a latent field: wavelet-domain global
    /// convolution plus the residual channel-mixing path, then the layer's
    /// activation. Returns the pre-activation and activated fields.
    fn apply_layer(&self, params: &[f64], layer: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_points;
        let c = self.config.width;
        let (subband_ranges, bias_range) = &self.layout.layers[layer];
        let mut pre = spectral_conv_forward(self, params, subband_ranges, v)?;
        let wb = &params[bias_range.clone()];
        for co in 0..c {
            let row = &wb[co * c..(co + 1) * c];
            let out = &mut pre[co * n..(co + 1) * n];
            for (ci, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &v[ci * n..(ci + 1) * n];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let act = self.config.activations[layer];
        let out = pre.iter().map(|&x| act.apply(x)).collect();
        Ok((pre, out))
    }

    /// Public view of [`Self::apply_layer`] for direct layer-level checks.
    pub fn layer_forward(&self, params: &[f64], layer: usize, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_layer(params, layer, v)?.1)
    }

    /// Forward pass returning the cache the backward pass consumes. The
    /// output is a field (out_channels × n, channel-major) or, when pooling,
    /// a vector of length out_channels.
    pub fn forward_cached(&self, params: &[f64], field: &[f64]) -> Result<(Vec<f64>, WnoCache)> {
        assert_eq!(params.len(), self.layout.total, "parameter vector length");
        let input = self.assemble_input(field)?;
        let n = self.n_points;
        let c = self.config.width;
        let mut v = self.apply_lift(params, &input);

        let mut layer_inputs = Vec::with_capacity(self.config.n_layers);
        let mut pre_acts = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            layer_inputs.push(v.clone());
            let (pre, out) = self.apply_layer(params, l, &v)?;
            pre_acts.push(pre);
            v = out;
        }

        // projection: C -> P (gelu) -> out_channels, pointwise
        let proj_in = v;
        let pc = self.config.proj_channels;
        let w1 = &params[self.layout.proj_w1.clone()];
        let b1 = &params[self.layout.proj_b1.clone()];
        let mut hidden_pre = vec![0.0; pc * n];
        for po in 0..pc {
            let row = &w1[po * c..(po + 1) * c];
            let out = &mut hidden_pre[po * n..(po + 1) * n];
            for (ci, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &proj_in[ci * n..(ci + 1) * n];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
            for o in out.iter_mut() {
                *o += b1[po];
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&x| gelu(x)).collect();
        let oc = self.config.out_channels;
        let w2 = &params[self.layout.proj_w2.clone()];
        let b2 = &params[self.layout.proj_b2.clone()];
        let mut out_field = vec![0.0; oc * n];
        for co in 0..oc {
            let row = &w2[co * pc..(co + 1) * pc];
            let out = &mut out_field[co * n..(co + 1) * n];
            for (pi, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &hidden[pi * n..(pi + 1) * n];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
            for o in out.iter_mut() {
                *o += b2[co];
            }
        }

        let output = if self.config.pool_output {
            let inv = 1.0 / n as f64;
            (0..oc).map(|co| out_field[co * n..(co + 1) * n].iter().sum::<f64>() * inv).collect()
        } else {
            out_field
        };
        let cache = WnoCache { input, layer_inputs, pre_acts, proj_in, hidden_pre, hidden };
        Ok((output, cache))
    }

    /// Reverse-mode gradients. `upstream` matches the forward output shape
    /// (pooled vector or channel-major field). Returns (parameter gradients,
    /// gradient w.r.t. the input field).
    pub fn backward(
        &self,
        params: &[f64],
        cache: &WnoCache,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_points;
        let c = self.config.width;
        let oc = self.config.out_channels;
        let pc = self.config.proj_channels;
        if cache.layer_inputs.len() != self.config.n_layers {
            return Err(Error::MissingForwardCache);
        }
        let mut grads = vec![0.0; self.layout.total];

        // undo pooling
        let mut out_bar = vec![0.0; oc * n];
        if self.config.pool_output {
            assert_eq!(upstream.len(), oc);
            let inv = 1.0 / n as f64;
            for co in 0..oc {
                let g = upstream[co] * inv;
                for v in &mut out_bar[co * n..(co + 1) * n] {
                    *v = g;
                }
            }
        } else {
            assert_eq!(upstream.len(), oc * n);
            out_bar.copy_from_slice(upstream);
        }

        // projection backward
        let w2 = &params[self.layout.proj_w2.clone()];
        let mut hidden_bar = vec![0.0; pc * n];
        {
            let gw2 = &mut grads[self.layout.proj_w2.clone()];
            for co in 0..oc {
                let ob = &out_bar[co * n..(co + 1) * n];
                for pi in 0..pc {
                    let src = &cache.hidden[pi * n..(pi + 1) * n];
                    let mut acc = 0.0;
                    for (o, s) in ob.iter().zip(src) {
                        acc += o * s;
                    }
                    gw2[co * pc + pi] += acc;
                }
            }
        }
        {
            let gb2 = &mut grads[self.layout.proj_b2.clone()];
            for co in 0..oc {
                gb2[co] += out_bar[co * n..(co + 1) * n].iter().sum::<f64>();
            }
        }
        for pi in 0..pc {
            let hb = &mut hidden_bar[pi * n..(pi + 1) * n];
            for co in 0..oc {
                let w = w2[co * pc + pi];
                if w == 0.0 {
                    continue;
                }
                let ob = &out_bar[co * n..(co + 1) * n];
                for (h, o) in hb.iter_mut().zip(ob) {
                    *h += w * o;
                }
            }
        }
        // through the projection gelu
        let mut hpre_bar = hidden_bar;
        for (g, x) in hpre_bar.iter_mut().zip(&cache.hidden_pre) {
            *g *= gelu_prime(*x);
        }
        let w1 = &params[self.layout.proj_w1.clone()];
        let mut v_bar = vec![0.0; c * n];
        {
            let gw1 = &mut grads[self.layout.proj_w1.clone()];
            for po in 0..pc {
                let pb = &hpre_bar[po * n..(po + 1) * n];
                for ci in 0..c {
                    let src = &cache.proj_in[ci * n..(ci + 1) * n];
                    let mut acc = 0.0;
                    for (p, s) in pb.iter().zip(src) {
                        acc += p * s;
                    }
                    gw1[po * c + ci] += acc;
                }
            }
        }
        {
            let gb1 = &mut grads[self.layout.proj_b1.clone()];
            for po in 0..pc {
                gb1[po] += hpre_bar[po * n..(po + 1) * n].iter().sum::<f64>();
            }
        }
        for ci in 0..c {
            let vb = &mut v_bar[ci * n..(ci + 1) * n];
            for po in 0..pc {
                let w = w1[po * c + ci];
                if w == 0.0 {
                    continue;
                }
                let pb = &hpre_bar[po * n..(po + 1) * n];
                for (v, p) in vb.iter_mut().zip(pb) {
                    *v += w * p;
                }
            }
        }

        // spectral layers in reverse
        for l in (0..self.config.n_layers).rev() {
            let (subband_ranges, bias_range) = &self.layout.layers[l];
            let act = self.config.activations[l];
            let pre = &cache.pre_acts[l];
            let v_in = &cache.layer_inputs[l];
            let mut pre_bar = v_bar;
            for (g, x) in pre_bar.iter_mut().zip(pre) {
                *g *= act.prime(*x);
            }
            // residual path: bias weights and its input contribution
            let wb = &params[bias_range.clone()];
            let mut next_bar = vec![0.0; c * n];
            {
                let gwb = &mut grads[bias_range.clone()];
                for co in 0..c {
                    let pb = &pre_bar[co * n..(co + 1) * n];
                    for ci in 0..c {
                        let src = &v_in[ci * n..(ci + 1) * n];
                        let mut acc = 0.0;
                        for (p, s) in pb.iter().zip(src) {
                            acc += p * s;
                        }
                        gwb[co * c + ci] += acc;
                    }
                }
            }
            for ci in 0..c {
                let nb = &mut next_bar[ci * n..(ci + 1) * n];
                for co in 0..c {
                    let w = wb[co * c + ci];
                    if w == 0.0 {
                        continue;
                    }
                    let pb = &pre_bar[co * n..(co + 1) * n];
                    for (v, p) in nb.iter_mut().zip(pb) {
                        *v += w * p;
                    }
                }
            }
            // spectral path
            spectral_conv_backward(
                self,
                params,
                subband_ranges,
                v_in,
                &pre_bar,
                &mut grads,
                &mut next_bar,
            )?;
            v_bar = next_bar;
        }

        // lift backward
        let nin = self.config.in_channels;
        let wl = &params[self.layout.lift_w.clone()];
        let mut input_bar = vec![0.0; nin * n];
        {
            let gwl = &mut grads[self.layout.lift_w.clone()];
            for co in 0..c {
                let vb = &v_bar[co * n..(co + 1) * n];
                for ci in 0..nin {
                    let src = &cache.input[ci * n..(ci + 1) * n];
                    let mut acc = 0.0;
                    for (v, s) in vb.iter().zip(src) {
                        acc += v * s;
                    }
                    gwl[co * nin + ci] += acc;
                }
            }
        }
        {
            let gbl = &mut grads[self.layout.lift_b.clone()];
            for co in 0..c {
                gbl[co] += v_bar[co * n..(co + 1) * n].iter().sum::<f64>();
            }
        }
        for ci in 0..nin {
            let ib = &mut input_bar[ci * n..(ci + 1) * n];
            for co in 0..c {
                let w = wl[co * nin + ci];
                if w == 0.0 {
                    continue;
                }
                let vb = &v_bar[co * n..(co + 1) * n];
                for (o, v) in ib.iter_mut().zip(vb) {
                    *o += w * v;
                }
            }
        }
        // gradient w.r.t. the field is the first input channel
        let field_bar = input_bar[..n].to_vec();
        Ok((grads, field_bar))
    }

    pub(crate) fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub(crate) fn subbands(&self) -> &[SubbandShape] {
        &self.subband_shapes
    }

    pub(crate) fn plans(&self) -> &[ModePlan] {
        &self.plans
    }
}

/// Intermediates kept by [`WnoMachine::forward_cached`].
#[derive(Debug)]
pub struct WnoCache {
    input: Vec<f64>,
    layer_inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
    proj_in: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}
