//! Convolutional network over time-space images.
//!
//! Layers: same-padded 3x3 stride-1 convolution, ReLU, ceil-mode 2x2 max
//! pooling, flatten, and a dense head without activation. Feature maps are
//! `[channels, sections, time]`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::traffic_image::TaskSpec;

pub const KERNEL: usize = 3;
const KK: usize = KERNEL * KERNEL;

/// Filters of the depth-4 network; shallower presets keep the tail.
pub const PRESET_CHANNELS: [usize; 3] = [256, 128, 64];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[out_ch, in_ch, 3, 3]`
    pub weights: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros(&[out_ch, in_ch, KERNEL, KERNEL])?,
            bias: Tensor::zeros(&[out_ch])?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `[out_dim, in_dim]`
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros(&[out_dim, in_dim])?,
            bias: Tensor::zeros(&[out_dim])?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    Pool,
    Flatten,
    Dense(DenseLayer),
}

impl Layer {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => {
                if input.len() != 3 || input[0] != c.in_channels() {
                    return Err(Error::ShapeMismatch {
                        expected: vec![c.in_channels(), 0, 0],
                        got: input.to_vec(),
                    });
                }
                Ok(vec![c.out_channels(), input[1], input[2]])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Pool => {
                if input.len() != 3 {
                    return Err(Error::arg(format!("pooling needs [C, H, W], got {input:?}")));
                }
                Ok(vec![input[0], input[1].div_ceil(2), input[2].div_ceil(2)])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                if input != [d.in_dim()] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![d.in_dim()],
                        got: input.to_vec(),
                    });
                }
                Ok(vec![d.out_dim()])
            }
        }
    }

    fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }
}

/// Out-of-window pixels contribute zero.
fn im2col(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; channels * KK * hw];
    for k in 0..channels {
        let plane = &x[k * hw..(k + 1) * hw];
        for e in 0..KERNEL {
            for f in 0..KERNEL {
                let row = &mut cols[((k * KK) + e * KERNEL + f) * hw..][..hw];
                for r in 0..h {
                    let src = r as isize + e as isize - 1;
                    if src < 0 || src >= h as isize {
                        continue;
                    }
                    let src_row = &plane[src as usize * w..][..w];
                    let dst_row = &mut row[r * w..][..w];
                    let (c0, c1) = col_range(f, w);
                    let shift = f as isize - 1;
                    for c in c0..c1 {
                        dst_row[c] = src_row[(c as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of an im2col-shaped gradient back onto the input plane.
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; channels * hw];
    for k in 0..channels {
        let plane = &mut x[k * hw..(k + 1) * hw];
        for e in 0..KERNEL {
            for f in 0..KERNEL {
                let row = &cols[((k * KK) + e * KERNEL + f) * hw..][..hw];
                for r in 0..h {
                    let src = r as isize + e as isize - 1;
                    if src < 0 || src >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[src as usize * w..][..w];
                    let col_row = &row[r * w..][..w];
                    let (c0, c1) = col_range(f, w);
                    let shift = f as isize - 1;
                    for c in c0..c1 {
                        dst_row[(c as isize + shift) as usize] += col_row[c];
                    }
                }
            }
        }
    }
    x
}

/// Output columns whose tap `f` lands inside the input row.
fn col_range(f: usize, w: usize) -> (usize, usize) {
    match f {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Eight interleaved partial sums, so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a8, b8) = (a[..n].chunks_exact(8), b[..n].chunks_exact(8));
    let (ra, rb) = (a8.remainder(), b8.remainder());
    let mut acc = [0.0f64; 8];
    for (x, y) in a8.zip(b8) {
        let x: &[f64; 8] = x.try_into().unwrap();
        let y: &[f64; 8] = y.try_into().unwrap();
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[j,h,w] = bias[j] + sum_k sum_{e,f} W[j,k,e,f] * xpad[k, h+e-1, w+f-1]`
pub fn conv_forward(layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = conv_input_dims(layer, x)?;
    let cout = layer.out_channels();
    let hw = h * w;
    let cols = im2col(x.data(), cin, h, w);
    let wts = layer.weights.data();
    let k = cin * KK;
    let mut out = vec![0.0; cout * hw];
    for (j, plane) in out.chunks_exact_mut(hw).enumerate() {
        plane.fill(layer.bias.data()[j]);
    }
    // Row-outer order keeps the output block cache-resident while each
    // im2col row streams through once.
    for r in 0..k {
        let col = &cols[r * hw..(r + 1) * hw];
        for (j, plane) in out.chunks_exact_mut(hw).enumerate() {
            let wv = wts[j * k + r];
            if wv != 0.0 {
                axpy(plane, wv, col);
            }
        }
    }
    Tensor::from_vec(&[cout, h, w], out)
}

fn conv_input_dims(layer: &ConvLayer, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 || x.shape()[0] != layer.in_channels() {
        return Err(Error::ShapeMismatch {
            expected: vec![layer.in_channels(), 0, 0],
            got: x.shape().to_vec(),
        });
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

/// Accumulates weight and bias gradients into `dw`/`db` and, when
/// `need_dx`, returns the gradient with respect to `x`.
pub fn conv_backward(
    layer: &ConvLayer,
    x: &Tensor,
    d_out: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
    need_dx: bool,
) -> Result<Option<Tensor>> {
    let (cin, h, w) = conv_input_dims(layer, x)?;
    let cout = layer.out_channels();
    d_out.expect_shape(&[cout, h, w])?;
    dw.expect_shape(layer.weights.shape())?;
    db.expect_shape(layer.bias.shape())?;
    let hw = h * w;
    let cols = im2col(x.data(), cin, h, w);
    let g = d_out.data();
    let wts = layer.weights.data();
    let mut dcols = if need_dx { vec![0.0; cin * KK * hw] } else { Vec::new() };
    let k = cin * KK;
    for j in 0..cout {
        db.data_mut()[j] += g[j * hw..(j + 1) * hw].iter().sum::<f64>();
    }
    let dwd = dw.data_mut();
    for r in 0..k {
        let col = &cols[r * hw..(r + 1) * hw];
        for j in 0..cout {
            let gj = &g[j * hw..(j + 1) * hw];
            dwd[j * k + r] += dot(gj, col);
            if need_dx {
                let wv = wts[j * k + r];
                if wv != 0.0 {
                    axpy(&mut dcols[r * hw..(r + 1) * hw], wv, gj);
                }
            }
        }
    }
    if !need_dx {
        return Ok(None);
    }
    Ok(Some(Tensor::from_vec(&[cin, h, w], col2im(&dcols, cin, h, w))?))
}

/// Ceil-mode 2x2 max pooling. Returns the pooled tensor and, per output
/// cell, the flat input index of the winner (first in row-major order on ties).
pub fn pool_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.rank() != 3 {
        return Err(Error::arg(format!("pooling needs [C, H, W], got {:?}", x.shape())));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for k in 0..c {
        for r in 0..oh {
            for s in 0..ow {
                let mut best = usize::MAX;
                for rr in 2 * r..(2 * r + 2).min(h) {
                    for ss in 2 * s..(2 * s + 2).min(w) {
                        let i = (k * h + rr) * w + ss;
                        if best == usize::MAX || xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

pub fn pool_backward(input_shape: &[usize], argmax: &[usize], d_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != d_out.len() {
        return Err(Error::StaleCache);
    }
    let mut dx = Tensor::zeros(input_shape)?;
    let dxd = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        dxd[i] += g;
    }
    Ok(dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient masked by positivity of the ReLU input.
pub fn relu_backward(x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    x.zip(d_out, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn flatten(x: &Tensor) -> Tensor {
    x.clone().reshape(&[x.len()]).expect("non-empty tensor")
}

pub fn dense_forward(layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    x.expect_shape(&[layer.in_dim()])?;
    let n = layer.in_dim();
    let wd = layer.weights.data();
    let out = layer
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, b)| b + dot(&wd[o * n..(o + 1) * n], x.data()))
        .collect();
    Tensor::from_vec(&[layer.out_dim()], out)
}

pub fn dense_backward(
    layer: &DenseLayer,
    x: &Tensor,
    d_out: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
    need_dx: bool,
) -> Result<Option<Tensor>> {
    x.expect_shape(&[layer.in_dim()])?;
    d_out.expect_shape(&[layer.out_dim()])?;
    dw.expect_shape(layer.weights.shape())?;
    let n = layer.in_dim();
    let wd = layer.weights.data();
    let mut dx = if need_dx { vec![0.0; n] } else { Vec::new() };
    for (o, &g) in d_out.data().iter().enumerate() {
        db.data_mut()[o] += g;
        if g == 0.0 {
            continue;
        }
        axpy(&mut dw.data_mut()[o * n..(o + 1) * n], g, x.data());
        if need_dx {
            axpy(&mut dx, g, &wd[o * n..(o + 1) * n]);
        }
    }
    if !need_dx {
        return Ok(None);
    }
    Ok(Some(Tensor::from_vec(&[n], dx)?))
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer, in order.
    pub inputs: Vec<Tensor>,
    /// Winner indices for each pooling layer (`None` elsewhere).
    pub argmax: Vec<Option<Vec<usize>>>,
    pub(crate) version: u64,
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// Shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl Network {
    /// Validates that layer shapes chain and that the head is dense.
    pub fn new(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(input_shape.to_vec()));
        }
        if !matches!(layers.last(), Some(Layer::Dense(_))) {
            return Err(Error::arg("the last layer must be dense"));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self {
            layers,
            input_shape: input_shape.to_vec(),
            shapes,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Input shape followed by the output shape of every layer.
    pub fn shape_chain(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Parameter tensors in layer order, weights before bias.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Mutable parameter access. Invalidates every outstanding cache.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.version += 1;
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Glorot-uniform weights on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn initialize(&mut self, rng: &mut Rng) {
        self.version += 1;
        for layer in &mut self.layers {
            let (fan_in, fan_out) = match layer {
                Layer::Conv(c) => (c.in_channels() * KK, c.out_channels() * KK),
                Layer::Dense(d) => (d.in_dim(), d.out_dim()),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, b) = layer.params_mut().unwrap();
            for v in w.data_mut() {
                *v = rng.uniform(-limit, limit);
            }
            b.fill(0.0);
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        let out = self.run(x, |input, winners| {
            inputs.push(input.clone());
            argmax.push(winners);
        })?;
        Ok((
            out,
            ForwardCache {
                inputs,
                argmax,
                version: self.version,
            },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, |_, _| {})
    }

    fn run(&self, x: &Tensor, mut record: impl FnMut(&Tensor, Option<Vec<usize>>)) -> Result<Tensor> {
        x.expect_shape(&self.input_shape)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut winners = None;
            let next = match layer {
                Layer::Conv(c) => conv_forward(c, &cur)?,
                Layer::Relu => relu(&cur),
                Layer::Pool => {
                    let (y, am) = pool_forward(&cur)?;
                    winners = Some(am);
                    y
                }
                Layer::Flatten => flatten(&cur),
                Layer::Dense(d) => dense_forward(d, &cur)?,
            };
            record(&cur, winners);
            cur = next;
        }
        Ok(cur)
    }

    pub(crate) fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.version != self.version
            || cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.shapes)
                .any(|(t, s)| t.shape() != s.as_slice())
        {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    /// Compact architecture string, e.g. `conv(1,32);relu;pool;flatten;dense(96,160)`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            match layer {
                Layer::Conv(c) => write!(s, "conv({},{})", c.in_channels(), c.out_channels()),
                Layer::Relu => write!(s, "relu"),
                Layer::Pool => write!(s, "pool"),
                Layer::Flatten => write!(s, "flatten"),
                Layer::Dense(d) => write!(s, "dense({},{})", d.in_dim(), d.out_dim()),
            }
            .unwrap();
        }
        s
    }

    /// Rebuilds a zero-parameter network from [`Network::describe`] output.
    pub fn from_description(input_shape: &[usize], desc: &str) -> Result<Self> {
        let layers = desc
            .split(';')
            .map(|tok| {
                let tok = tok.trim();
                let args = |name: &str| -> Result<(usize, usize)> {
                    let inner = tok
                        .strip_prefix(name)
                        .and_then(|t| t.strip_prefix('('))
                        .and_then(|t| t.strip_suffix(')'))
                        .ok_or_else(|| Error::Format(format!("bad layer `{tok}`")))?;
                    let (a, b) = inner
                        .split_once(',')
                        .ok_or_else(|| Error::Format(format!("bad layer `{tok}`")))?;
                    let parse = |v: &str| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad layer `{tok}`")))
                    };
                    Ok((parse(a)?, parse(b)?))
                };
                Ok(match tok {
                    "relu" => Layer::Relu,
                    "pool" => Layer::Pool,
                    "flatten" => Layer::Flatten,
                    t if t.starts_with("conv") => {
                        let (i, o) = args("conv")?;
                        Layer::Conv(ConvLayer::zeros(i, o)?)
                    }
                    t if t.starts_with("dense") => {
                        let (i, o) = args("dense")?;
                        Layer::Dense(DenseLayer::zeros(i, o)?)
                    }
                    _ => return Err(Error::Format(format!("unknown layer `{tok}`"))),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(input_shape, layers)
    }
}

/// Depth-1..4 network from the preset table, with zero parameters.
///
/// Depth `d` stacks the last `d - 1` entries of [`PRESET_CHANNELS`] (each
/// divided by `divisor`, at least 1) as conv-ReLU-pool blocks in front of a
/// flatten and a dense head of `q * t_out` outputs.
pub fn build_preset(depth: usize, task: &TaskSpec, divisor: usize) -> Result<Network> {
    if !(1..=4).contains(&depth) {
        return Err(Error::arg(format!("depth must be 1-4, got {depth}")));
    }
    if divisor == 0 {
        return Err(Error::arg("channel divisor must be >= 1"));
    }
    let input = task.input_shape();
    let mut layers = Vec::new();
    let mut channels = 1;
    let (mut h, mut w) = (input[1], input[2]);
    for &base in &PRESET_CHANNELS[4 - depth..] {
        let out = (base / divisor).max(1);
        layers.push(Layer::Conv(ConvLayer::zeros(channels, out)?));
        layers.push(Layer::Relu);
        layers.push(Layer::Pool);
        channels = out;
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(DenseLayer::zeros(channels * h * w, task.output_dim())?));
    Network::new(&input, layers)
}
