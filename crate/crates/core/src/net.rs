//! Fully convolutional network with hand-written backpropagation and Adam.
//!
//! Every layer is a 3×3 same-padded convolution. Hidden layers are followed
//! by a rectifier; the last layer is linear and, with `residual` set, its
//! output is added to the input sinogram.

use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::Sinogram;

const KSIZE: usize = 9;
/// Upper bound on im2col buffer entries per tile.
#[cfg(not(test))]
const COL_BUDGET: usize = 1 << 15;
#[cfg(test)]
const COL_BUDGET: usize = 1 << 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub n_layers: usize,
    pub channels: usize,
    pub residual: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            n_layers: 5,
            channels: 32,
            residual: true,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        if self.channels == 0 {
            return Err(Error::InvalidParameter("channel count must be positive".into()));
        }
        Ok(())
    }

    /// `(in_channels, out_channels)` of each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let cin = if l == 0 { 1 } else { self.channels };
                let cout = if l + 1 == self.n_layers { 1 } else { self.channels };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerLayout {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: usize,
}

/// All weights and biases in one flat buffer, layer by layer, each layer's
/// weight (`out × in × 3 × 3`) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    spec: NetSpec,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec
            .layer_shapes()
            .iter()
            .map(|&(cin, cout)| cout * cin * KSIZE + cout)
            .sum();
        Ok(Self {
            spec,
            values: vec![0.0; n],
        })
    }

    /// Fan-in scaled uniform weights, zero biases, zero final layer.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let mut rng = rng::seeded(seed);
        let last = spec.n_layers - 1;
        for layout in p.layouts().into_iter().take(last) {
            let bound = (6.0 / (layout.cin * KSIZE) as f64).sqrt();
            for w in &mut p.values[layout.weight..layout.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn from_values(spec: NetSpec, values: Vec<f64>) -> Result<Self> {
        let zeros = Self::zeros(spec)?;
        if values.len() != zeros.values.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                zeros.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.spec
            .layer_shapes()
            .into_iter()
            .map(|(cin, cout)| {
                let weight = offset;
                let bias = weight + cout * cin * KSIZE;
                offset = bias + cout;
                LayerLayout {
                    cin,
                    cout,
                    weight,
                    bias,
                }
            })
            .collect()
    }

    pub fn layer_weight(&self, layer: usize) -> &[f64] {
        let l = self.layouts()[layer];
        &self.values[l.weight..l.bias]
    }

    pub fn layer_bias(&self, layer: usize) -> &[f64] {
        let l = self.layouts()[layer];
        &self.values[l.bias..l.bias + l.cout]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

/// Layer inputs recorded by [`forward`] for use by [`backward`].
#[derive(Clone, Debug)]
pub struct ActivationCache {
    spec: NetSpec,
    shape: (usize, usize),
    /// `inputs[l]` is the (post-rectifier) input of layer `l`,
    /// `channels × (h·w)` row-major.
    inputs: Vec<Vec<f64>>,
}

fn tile_len(cin: usize, pixels: usize) -> usize {
    (COL_BUDGET / (cin * KSIZE)).clamp(1, pixels.max(1))
}

/// Visit, for kernel offset `(ky, kx)`, every maximal run of tile pixels
/// that lie on one image row: `f(dst, src, len)` where `dst` indexes the
/// tile, `src` the plane (`None` where the neighbour falls outside).
fn for_each_run(
    (h, w): (usize, usize),
    p0: usize,
    p1: usize,
    (ky, kx): (usize, usize),
    mut f: impl FnMut(usize, Option<usize>, usize),
) {
    let mut p = p0;
    while p < p1 {
        let (i, j0) = (p / w, p % w);
        let j1 = w.min(j0 + p1 - p);
        let dst = p - p0;
        let ii = i as isize + ky as isize - 1;
        if ii < 0 || ii >= h as isize {
            f(dst, None, j1 - j0);
        } else {
            let row = ii as usize * w;
            // Source column is j + kx − 1; valid for j in [lo, hi).
            let lo = j0.max(1 - kx.min(1));
            let hi = j1.min(w + 1 - kx);
            if lo > j0 {
                f(dst, None, lo - j0);
            }
            if hi > lo {
                f(dst + lo - j0, Some(row + lo + kx - 1), hi - lo);
            }
            if j1 > hi.max(lo) {
                f(dst + hi.max(lo) - j0, None, j1 - hi.max(lo));
            }
        }
        p += j1 - j0;
    }
}

/// Gather 3×3 neighbourhoods of pixels `p0..p1` into `col`
/// (`cin·9 × (p1 − p0)`, row-major), zero outside the field.
fn im2col(input: &[f64], cin: usize, h: usize, w: usize, p0: usize, p1: usize, col: &mut [f64]) {
    let n = p1 - p0;
    for c in 0..cin {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 3 + ky) * 3 + kx) * n..][..n];
                for_each_run((h, w), p0, p1, (ky, kx), |dst, src, len| match src {
                    Some(src) => row[dst..dst + len].copy_from_slice(&plane[src..src + len]),
                    None => row[dst..dst + len].fill(0.0),
                });
            }
        }
    }
}

/// Scatter-add the adjoint of [`im2col`].
fn col2im(col: &[f64], cin: usize, h: usize, w: usize, p0: usize, p1: usize, out: &mut [f64]) {
    let n = p1 - p0;
    for c in 0..cin {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 3 + ky) * 3 + kx) * n..][..n];
                for_each_run((h, w), p0, p1, (ky, kx), |dst, src, len| {
                    if let Some(src) = src {
                        for (o, &v) in plane[src..src + len].iter_mut().zip(&row[dst..dst + len]) {
                            *o += v;
                        }
                    }
                });
            }
        }
    }
}

fn conv_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    cin: usize,
    cout: usize,
    (h, w): (usize, usize),
) -> Vec<f64> {
    let pixels = h * w;
    let mut out = vec![0.0; cout * pixels];
    let wmat = ArrayView2::from_shape((cout, cin * KSIZE), weight).expect("weight shape");
    let tile = tile_len(cin, pixels);
    let mut col = vec![0.0; cin * KSIZE * tile];
    {
        let mut omat = ArrayViewMut2::from_shape((cout, pixels), &mut out).expect("out shape");
        let mut p0 = 0;
        while p0 < pixels {
            let p1 = (p0 + tile).min(pixels);
            let n = p1 - p0;
            im2col(input, cin, h, w, p0, p1, &mut col[..cin * KSIZE * n]);
            let cmat = ArrayView2::from_shape((cin * KSIZE, n), &col[..cin * KSIZE * n])
                .expect("col shape");
            general_mat_mul(1.0, &wmat, &cmat, 0.0, &mut omat.slice_mut(s![.., p0..p1]));
            p0 = p1;
        }
    }
    for (plane, &b) in out.chunks_mut(pixels).zip(bias) {
        if b != 0.0 {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

fn run(params: &NetworkParams, x: &Sinogram, keep: bool) -> Result<(Sinogram, Vec<Vec<f64>>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let shape = x.dim();
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::InvalidParameter("empty network input".into()));
    }
    let layouts = params.layouts();
    let mut inputs = Vec::with_capacity(if keep { layouts.len() } else { 0 });
    let mut current: Vec<f64> = x.iter().copied().collect();
    let last = layouts.len() - 1;
    for (l, layout) in layouts.iter().enumerate() {
        let mut z = conv_forward(
            &current,
            &params.values[layout.weight..layout.bias],
            &params.values[layout.bias..layout.bias + layout.cout],
            layout.cin,
            layout.cout,
            shape,
        );
        if l < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let prev = std::mem::replace(&mut current, z);
        if keep {
            inputs.push(prev);
        }
    }
    let mut out = Array2::from_shape_vec(shape, current).expect("output shape");
    if params.spec.residual {
        out += x;
    }
    Ok((out, inputs))
}

/// Run the network on `x`. The output has the shape of `x`.
pub fn forward(params: &NetworkParams, x: &Sinogram) -> Result<(Sinogram, ActivationCache)> {
    let (out, inputs) = run(params, x, true)?;
    Ok((
        out,
        ActivationCache {
            spec: params.spec,
            shape: x.dim(),
            inputs,
        },
    ))
}

/// [`forward`] without keeping activations for a backward pass.
pub fn infer(params: &NetworkParams, x: &Sinogram) -> Result<Sinogram> {
    run(params, x, false).map(|(out, _)| out)
}

/// Gradient of `⟨grad_out, forward(params, x)⟩` with respect to every parameter.
pub fn backward(
    params: &NetworkParams,
    cache: &ActivationCache,
    grad_out: &Array2<f64>,
) -> Result<NetworkParams> {
    if cache.spec != params.spec {
        return Err(Error::CacheMismatch("network spec differs".into()));
    }
    if grad_out.dim() != cache.shape {
        return Err(Error::CacheMismatch(format!(
            "gradient shape {:?} vs cached {:?}",
            grad_out.dim(),
            cache.shape
        )));
    }
    let layouts = params.layouts();
    if cache.inputs.len() != layouts.len() {
        return Err(Error::CacheMismatch("layer count differs".into()));
    }
    let (h, w) = cache.shape;
    let pixels = h * w;
    let mut grads = NetworkParams::zeros(params.spec)?;
    let mut delta: Vec<f64> = grad_out.iter().copied().collect();
    for (l, layout) in layouts.iter().enumerate().rev() {
        let (cin, cout) = (layout.cin, layout.cout);
        let input = &cache.inputs[l];
        if input.len() != cin * pixels {
            return Err(Error::CacheMismatch(format!("layer {l} activation size")));
        }
        let gvals = &mut grads.values;
        for (c, plane) in delta.chunks(pixels).enumerate() {
            gvals[layout.bias + c] = plane.iter().sum();
        }
        let wmat = ArrayView2::from_shape((cout, cin * KSIZE), &params.values[layout.weight..layout.bias])
            .expect("weight shape");
        let dmat = ArrayView2::from_shape((cout, pixels), &delta).expect("delta shape");
        let mut dinput = if l > 0 { vec![0.0; cin * pixels] } else { Vec::new() };
        let tile = tile_len(cin, pixels);
        let mut col = vec![0.0; cin * KSIZE * tile];
        let mut dcol = if l > 0 { vec![0.0; cin * KSIZE * tile] } else { Vec::new() };
        {
            let mut gw = ArrayViewMut2::from_shape(
                (cout, cin * KSIZE),
                &mut gvals[layout.weight..layout.bias],
            )
            .expect("grad shape");
            let mut p0 = 0;
            while p0 < pixels {
                let p1 = (p0 + tile).min(pixels);
                let n = p1 - p0;
                let len = cin * KSIZE * n;
                im2col(input, cin, h, w, p0, p1, &mut col[..len]);
                let cmat = ArrayView2::from_shape((cin * KSIZE, n), &col[..len]).expect("col");
                let dtile = dmat.slice(s![.., p0..p1]);
                general_mat_mul(1.0, &dtile, &cmat.t(), 1.0, &mut gw);
                if l > 0 {
                    let mut dc = ArrayViewMut2::from_shape((cin * KSIZE, n), &mut dcol[..len])
                        .expect("dcol");
                    general_mat_mul(1.0, &wmat.t(), &dtile, 0.0, &mut dc);
                    col2im(&dcol[..len], cin, h, w, p0, p1, &mut dinput);
                }
                p0 = p1;
            }
        }
        if l > 0 {
            // input of layer l is relu(z_{l-1}); it is positive exactly where z was
            for (d, &a) in dinput.iter_mut().zip(input) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = dinput;
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rate.is_finite()
            && self.rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("Adam hyperparameters out of range".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn apply(&mut self, params: &mut NetworkParams, grads: &NetworkParams) {
        let AdamConfig {
            rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .values
            .iter_mut()
            .zip(&grads.values)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= rate * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

pub fn adam_step(
    params: &NetworkParams,
    grads: &NetworkParams,
    state: &AdamState,
) -> (NetworkParams, AdamState) {
    let mut params = params.clone();
    let mut state = state.clone();
    state.apply(&mut params, grads);
    (params, state)
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"NETP";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout: `"NETP"`, version, `n_layers`, `channels`, `residual`
/// (all u32 LE), then f64 LE parameters, Adam rate, β₁, β₂, guard, step, first
/// moments and second moments.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &NetworkParams,
    adam: &AdamState,
) -> std::io::Result<()> {
    let spec = params.spec;
    w.write_all(&CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        spec.n_layers as u32,
        spec.channels as u32,
        spec.residual as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let c = adam.config;
    let scalars = [c.rate, c.beta1, c.beta2, c.eps, adam.step as f64];
    for v in params
        .values
        .iter()
        .chain(&scalars)
        .chain(&adam.first)
        .chain(&adam.second)
    {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(NetworkParams, AdamState)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            expected: 20,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("u32"));
    if word(0) != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(word(0)));
    }
    let spec = NetSpec {
        n_layers: word(1) as usize,
        channels: word(2) as usize,
        residual: match word(3) {
            0 => false,
            1 => true,
            v => return Err(Error::InvalidParameter(format!("residual flag {v}"))),
        },
    };
    let n = NetworkParams::zeros(spec)?.len();
    let expected = 20 + 8 * (3 * n + 5);
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let floats: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = NetworkParams::from_values(spec, floats[..n].to_vec())?;
    let s = &floats[n..n + 5];
    let config = AdamConfig {
        rate: s[0],
        beta1: s[1],
        beta2: s[2],
        eps: s[3],
    };
    let adam = AdamState {
        config,
        first: floats[n + 5..2 * n + 5].to_vec(),
        second: floats[2 * n + 5..].to_vec(),
        step: s[4] as u64,
    };
    Ok((params, adam))
}
