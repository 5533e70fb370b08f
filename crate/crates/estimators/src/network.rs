//! Convolutional trunk and fully connected head with a hand-written
//! backward pass.
//!
//! Activations are stored channel-major as `[C][B][L]`, so a convolution
//! over the whole batch is one GEMM of the `[C_out, C_in·K]` weights against
//! an im2col buffer of shape `[C_in·K, B·L_out]`, and channel concatenation
//! is buffer concatenation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sqzt_core::homodyne::ParamRanges;

use crate::config::{CnnConfig, StageSpec};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Mat, MatMut, Scalar};

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub lin: usize,
    pub lout: usize,
    pub pad_left: usize,
    pub relu: bool,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.kernel
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LinearGeom {
    pub name: String,
    pub fin: usize,
    pub fout: usize,
    pub relu: bool,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Conv(usize),
    Block { first: usize, count: usize, dense: bool },
}

/// Named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Per-batch intermediate buffers kept for the backward pass. Reusing one
/// cache across batches avoids reallocating.
#[derive(Debug, Default)]
pub struct Cache<T> {
    batch: usize,
    col: Vec<T>,
    conv_in: Vec<Vec<T>>,
    conv_out: Vec<Vec<T>>,
    trunk_out: Vec<T>,
    lin_in: Vec<Vec<T>>,
    lin_out: Vec<Vec<T>>,
    scratch: Vec<T>,
}

impl<T: Scalar> Cache<T> {
    pub fn output(&self) -> &[T] {
        self.lin_out.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Sign pattern of every ReLU layer's output.
    pub(crate) fn relu_pattern(&self, model: &Model<T>) -> Vec<bool> {
        let mut out = Vec::new();
        for (g, y) in model.convs.iter().zip(&self.conv_out) {
            if g.relu {
                out.extend(y.iter().map(|v| *v > T::zero()));
            }
        }
        for (g, y) in model.linears.iter().zip(&self.lin_out) {
            if g.relu {
                out.extend(y.iter().map(|v| *v > T::zero()));
            }
        }
        out
    }
}

/// CNN with parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: CnnConfig,
    pub(crate) convs: Vec<ConvGeom>,
    ops: Vec<Op>,
    pub(crate) linears: Vec<LinearGeom>,
    trunk_channels: usize,
    trunk_len: usize,
    params: Vec<T>,
    /// Label normalization used to decode characteristic outputs.
    pub ranges: ParamRanges,
}

impl<T: Scalar> Model<T> {
    /// Builds the layer plan and draws weights from `seed`: He-normal for
    /// layers followed by ReLU, Glorot-normal for linear ones, zero biases.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans: Vec<(usize, usize, usize, usize, bool)> = model
            .convs
            .iter()
            .map(|g| (g.w_off, g.cout * g.rows(), g.rows(), g.cout * g.kernel, g.relu))
            .chain(model.linears.iter().map(|g| (g.w_off, g.fout * g.fin, g.fin, g.fout, g.relu)))
            .collect();
        for (off, len, fan_in, fan_out, relu) in fans {
            let std = if relu {
                (2.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).expect("positive std");
            for p in &mut model.params[off..off + len] {
                *p = T::of(dist.sample(&mut rng));
            }
        }
        Ok(model)
    }

    /// Layer plan with every parameter zero.
    pub fn zeros(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut ops = Vec::new();
        let mut offset = 0;
        let mut channels = config.input_channels();
        let mut len = config.input_len;

        let mut push_conv = |name: String, cin: usize, cout: usize, kernel: usize, stride: usize, lin: usize, relu: bool| {
            let lout = lin / stride;
            let pad = ((lout - 1) * stride + kernel).saturating_sub(lin);
            let g = ConvGeom {
                name,
                cin,
                cout,
                kernel,
                stride,
                lin,
                lout,
                pad_left: pad / 2,
                relu,
                w_off: offset,
                b_off: offset + cout * cin * kernel,
            };
            offset = g.b_off + cout;
            convs.push(g);
            convs.len() - 1
        };

        for stage in &config.stages {
            match stage {
                StageSpec::Conv {
                    name,
                    kernel,
                    channels: c,
                    stride,
                    relu,
                } => {
                    let cout = config.scaled(*c);
                    let idx = push_conv(name.clone(), channels, cout, *kernel, *stride, len, *relu);
                    ops.push(Op::Conv(idx));
                    channels = cout;
                    len /= stride;
                }
                StageSpec::Block {
                    name,
                    kernel,
                    channels: c,
                    convs: n,
                } => {
                    let cout = config.scaled(*c);
                    let mut cin = channels;
                    let mut first = None;
                    for i in 0..*n {
                        let idx = push_conv(format!("{name}.conv{}", i + 1), cin, cout, *kernel, 1, len, true);
                        first.get_or_insert(idx);
                        cin = cout;
                    }
                    ops.push(Op::Block {
                        first: first.expect("convs >= 1"),
                        count: *n,
                        dense: config.dense,
                    });
                    channels = if config.dense { channels + cout } else { cout };
                }
            }
        }

        let mut linears = Vec::new();
        let mut fin = channels * len;
        let widths = config.head.hidden.iter().map(|&w| (w, true));
        let last = std::iter::once((config.head.kind.output_len(), false));
        for (i, (fout, relu)) in widths.chain(last).enumerate() {
            let g = LinearGeom {
                name: format!("head.fc{}", i + 1),
                fin,
                fout,
                relu,
                w_off: offset,
                b_off: offset + fin * fout,
            };
            offset = g.b_off + fout;
            fin = fout;
            linears.push(g);
        }

        Ok(Self {
            config,
            convs,
            ops,
            linears,
            trunk_channels: channels,
            trunk_len: len,
            params: vec![T::zero(); offset],
            ranges: ParamRanges::default(),
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Length of the flattened trunk output, positions × channels.
    pub fn flatten_len(&self) -> usize {
        self.trunk_channels * self.trunk_len
    }

    pub fn trunk_shape(&self) -> (usize, usize) {
        (self.trunk_len, self.trunk_channels)
    }

    pub fn input_len(&self) -> usize {
        self.config.input_channels() * self.config.input_len
    }

    pub fn output_len(&self) -> usize {
        self.config.head.kind.output_len()
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for g in &self.convs {
            out.push(TensorInfo {
                name: format!("{}.weight", g.name),
                shape: vec![g.cout, g.cin, g.kernel],
                offset: g.w_off,
                len: g.cout * g.rows(),
            });
            out.push(TensorInfo {
                name: format!("{}.bias", g.name),
                shape: vec![g.cout],
                offset: g.b_off,
                len: g.cout,
            });
        }
        for g in &self.linears {
            out.push(TensorInfo {
                name: format!("{}.weight", g.name),
                shape: vec![g.fout, g.fin],
                offset: g.w_off,
                len: g.fout * g.fin,
            });
            out.push(TensorInfo {
                name: format!("{}.bias", g.name),
                shape: vec![g.fout],
                offset: g.b_off,
                len: g.fout,
            });
        }
        out
    }

    /// Sets the output layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let g = self.linears.last().expect("head has an output layer").clone();
        self.params[g.w_off..g.b_off + g.fout].fill(T::zero());
    }

    /// Forward pass over a batch laid out `[C][B][L]`; returns `[B][out]`.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        let mut cache = Cache::default();
        self.forward_cached(input, batch, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    pub fn forward_cached(&self, input: &[T], batch: usize, cache: &mut Cache<T>) -> Result<()> {
        if batch == 0 {
            return Err(Error::Config("batch size 0".into()));
        }
        if input.len() != batch * self.input_len() {
            return Err(Error::Shape {
                expected: batch * self.input_len(),
                got: input.len(),
            });
        }
        cache.batch = batch;
        cache.conv_in.resize_with(self.convs.len(), Vec::new);
        cache.conv_out.resize_with(self.convs.len(), Vec::new);
        cache.lin_in.resize_with(self.linears.len(), Vec::new);
        cache.lin_out.resize_with(self.linears.len(), Vec::new);

        let mut x: Vec<T> = input.to_vec();
        for op in &self.ops {
            match *op {
                Op::Conv(i) => {
                    self.conv_forward(i, &x, cache);
                    x.clone_from(&cache.conv_out[i]);
                }
                Op::Block { first, count, dense } => {
                    let mut h = x.clone();
                    for i in first..first + count {
                        self.conv_forward(i, &h, cache);
                        h.clone_from(&cache.conv_out[i]);
                    }
                    if dense {
                        x.extend_from_slice(&h);
                    } else {
                        x = h;
                    }
                }
            }
        }
        cache.trunk_out = x;

        // [C][B][L] → [B][C·L]
        let (c, l) = (self.trunk_channels, self.trunk_len);
        let mut flat = vec![T::zero(); batch * c * l];
        for ci in 0..c {
            for b in 0..batch {
                let src = &cache.trunk_out[(ci * batch + b) * l..][..l];
                flat[b * c * l + ci * l..][..l].copy_from_slice(src);
            }
        }

        let mut h = flat;
        for (i, g) in self.linears.iter().enumerate() {
            let mut y = vec![T::zero(); batch * g.fout];
            let bias = &self.params[g.b_off..g.b_off + g.fout];
            for row in y.chunks_exact_mut(g.fout) {
                row.copy_from_slice(bias);
            }
            let w = &self.params[g.w_off..g.b_off];
            gemm(Mat::new(&h, batch, g.fin), Mat::new(w, g.fout, g.fin).t(), T::one(), MatMut::new(&mut y, batch, g.fout));
            if g.relu {
                relu(&mut y);
            }
            cache.lin_in[i] = h;
            h = y.clone();
            cache.lin_out[i] = y;
        }
        Ok(())
    }

    fn conv_forward(&self, i: usize, x: &[T], cache: &mut Cache<T>) {
        let g = &self.convs[i];
        let batch = cache.batch;
        let n = batch * g.lout;
        let y = &mut cache.conv_out[i];
        y.clear();
        y.resize(g.cout * n, T::zero());
        for (co, row) in y.chunks_exact_mut(n).enumerate() {
            row.fill(self.params[g.b_off + co]);
        }
        let w = &self.params[g.w_off..g.b_off];
        if g.stride == 1 {
            // one GEMM per tap against the input shifted along the flattened
            // batch axis, then undo the taps that crossed a sample boundary
            for k in 0..g.kernel {
                let sh = Shift::new(g, k, batch);
                let (lo, hi) = sh.cols;
                gemm(
                    Mat::strided(w, k, g.cout, g.cin, g.rows(), g.kernel),
                    Mat::strided(x, sh.src(lo), g.cin, hi - lo, n, 1),
                    T::one(),
                    MatMut::strided(y, lo, g.cout, hi - lo, n, 1),
                );
                for p in sh.crossings() {
                    let q = sh.src(p);
                    for co in 0..g.cout {
                        let mut acc = T::zero();
                        for ci in 0..g.cin {
                            acc += w[co * g.rows() + ci * g.kernel + k] * x[ci * n + q];
                        }
                        y[co * n + p] -= acc;
                    }
                }
            }
        } else {
            let col = &mut cache.col;
            im2col(g, x, batch, col);
            gemm(Mat::new(w, g.cout, g.rows()), Mat::new(col, g.rows(), n), T::one(), MatMut::new(y, g.cout, n));
        }
        if g.relu {
            relu(y);
        }
        let stored = &mut cache.conv_in[i];
        stored.clear();
        stored.extend_from_slice(x);
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output` for the
    /// batch held in `cache`.
    pub fn backward(&self, cache: &mut Cache<T>, d_out: &[T], grad: &mut [T]) {
        let batch = cache.batch;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(d_out.len(), batch * self.output_len());

        let mut dy = d_out.to_vec();
        for (i, g) in self.linears.iter().enumerate().rev() {
            if g.relu {
                mask(&mut dy, &cache.lin_out[i]);
            }
            let x = &cache.lin_in[i];
            {
                let (gw, gb) = grad[g.w_off..g.b_off + g.fout].split_at_mut(g.fout * g.fin);
                gemm(Mat::new(&dy, batch, g.fout).t(), Mat::new(x, batch, g.fin), T::one(), MatMut::new(gw, g.fout, g.fin));
                for row in dy.chunks_exact(g.fout) {
                    for (a, &d) in gb.iter_mut().zip(row) {
                        *a += d;
                    }
                }
            }
            let mut dx = vec![T::zero(); batch * g.fin];
            let w = &self.params[g.w_off..g.b_off];
            gemm(Mat::new(&dy, batch, g.fout), Mat::new(w, g.fout, g.fin), T::zero(), MatMut::new(&mut dx, batch, g.fin));
            dy = dx;
        }

        // [B][C·L] → [C][B][L]
        let (c, l) = (self.trunk_channels, self.trunk_len);
        let mut dx = vec![T::zero(); c * batch * l];
        for ci in 0..c {
            for b in 0..batch {
                dx[(ci * batch + b) * l..][..l].copy_from_slice(&dy[b * c * l + ci * l..][..l]);
            }
        }

        for (k, op) in self.ops.iter().enumerate().rev() {
            let need_input_grad = k > 0;
            match *op {
                Op::Conv(i) => {
                    dx = self.conv_backward(i, dx, cache, grad, need_input_grad);
                }
                Op::Block { first, count, dense } => {
                    let g_last = &self.convs[first + count - 1];
                    let out_len = g_last.cout * batch * g_last.lout;
                    let (mut d_skip, mut dh) = if dense {
                        let split = dx.len() - out_len;
                        let dh = dx[split..].to_vec();
                        dx.truncate(split);
                        (Some(dx), dh)
                    } else {
                        (None, dx)
                    };
                    for i in (first..first + count).rev() {
                        dh = self.conv_backward(i, dh, cache, grad, need_input_grad || i > first);
                    }
                    if let Some(skip) = d_skip.take() {
                        if need_input_grad {
                            for (a, b) in dh.iter_mut().zip(&skip) {
                                *a += *b;
                            }
                        }
                    }
                    dx = dh;
                }
            }
        }
    }

    fn conv_backward(&self, i: usize, mut dy: Vec<T>, cache: &mut Cache<T>, grad: &mut [T], want_dx: bool) -> Vec<T> {
        let g = &self.convs[i];
        let batch = cache.batch;
        let n = batch * g.lout;
        if g.relu {
            mask(&mut dy, &cache.conv_out[i]);
        }
        let x = &cache.conv_in[i];
        let w = &self.params[g.w_off..g.b_off];
        let (gw, gb) = grad[g.w_off..g.b_off + g.cout].split_at_mut(g.cout * g.rows());
        for (co, row) in dy.chunks_exact(n).enumerate() {
            gb[co] += row.iter().copied().sum::<T>();
        }

        if g.stride == 1 {
            let mut dx = if want_dx { vec![T::zero(); g.cin * n] } else { Vec::new() };
            for k in 0..g.kernel {
                let sh = Shift::new(g, k, batch);
                let (lo, hi) = sh.cols;
                gemm(
                    Mat::strided(&dy, lo, g.cout, hi - lo, n, 1),
                    Mat::strided(x, sh.src(lo), g.cin, hi - lo, n, 1).t(),
                    T::one(),
                    MatMut::strided(gw, k, g.cout, g.cin, g.rows(), g.kernel),
                );
                if want_dx {
                    gemm(
                        Mat::strided(w, k, g.cout, g.cin, g.rows(), g.kernel).t(),
                        Mat::strided(&dy, lo, g.cout, hi - lo, n, 1),
                        T::one(),
                        MatMut::strided(&mut dx, sh.src(lo), g.cin, hi - lo, n, 1),
                    );
                }
                for p in sh.crossings() {
                    let q = sh.src(p);
                    for co in 0..g.cout {
                        let d = dy[co * n + p];
                        for ci in 0..g.cin {
                            gw[co * g.rows() + ci * g.kernel + k] -= d * x[ci * n + q];
                            if want_dx {
                                dx[ci * n + q] -= w[co * g.rows() + ci * g.kernel + k] * d;
                            }
                        }
                    }
                }
            }
            return dx;
        }

        let col = &mut cache.col;
        im2col(g, x, batch, col);
        gemm(
            Mat::new(&dy, g.cout, n),
            Mat::new(col, g.rows(), n).t(),
            T::one(),
            MatMut::new(gw, g.cout, g.rows()),
        );
        if !want_dx {
            return Vec::new();
        }
        let dcol = &mut cache.scratch;
        dcol.clear();
        dcol.resize(g.rows() * n, T::zero());
        gemm(
            Mat::new(w, g.cout, g.rows()).t(),
            Mat::new(&dy, g.cout, n),
            T::zero(),
            MatMut::new(dcol, g.rows(), n),
        );
        col2im(g, dcol, batch)
    }
}

/// Tap `k` of a stride-1 convolution seen as a shift `s = k − pad` along the
/// flattened `B·L` axis.
struct Shift {
    s: isize,
    len: usize,
    total: usize,
    /// Flattened output columns whose shifted source stays inside the buffer.
    cols: (usize, usize),
}

impl Shift {
    fn new(g: &ConvGeom, k: usize, batch: usize) -> Self {
        let s = k as isize - g.pad_left as isize;
        let total = batch * g.lout;
        let lo = (-s).max(0) as usize;
        let hi = (total as isize - s.max(0)).max(lo as isize) as usize;
        Self {
            s,
            len: g.lout,
            total,
            cols: (lo, hi),
        }
    }

    fn src(&self, p: usize) -> usize {
        (p as isize + self.s) as usize
    }

    /// Columns inside `cols` whose source lies in a neighbouring sample.
    fn crossings(&self) -> impl Iterator<Item = usize> + '_ {
        let (lo, hi) = self.cols;
        let l = self.len as isize;
        let edge: Vec<usize> = if self.s < 0 {
            (0..(-self.s) as usize).collect()
        } else {
            ((l - self.s).max(0) as usize..self.len).collect()
        };
        (0..self.total / self.len).flat_map(move |b| {
            let edge = edge.clone();
            edge.into_iter().map(move |t| b * self.len + t)
        })
        .filter(move |&p| p >= lo && p < hi)
    }
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

fn mask<T: Scalar>(d: &mut [T], out: &[T]) {
    for (g, &y) in d.iter_mut().zip(out) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Output positions `t` whose tap `k` lands inside the input:
/// `0 ≤ t·s + k − pad < L_in`.
fn tap_range(g: &ConvGeom, k: usize) -> (usize, usize) {
    let lo = g.pad_left.saturating_sub(k).div_ceil(g.stride);
    let hi = (g.lin + g.pad_left).saturating_sub(k).div_ceil(g.stride).min(g.lout);
    (lo, hi.max(lo))
}

/// `col[(ci·K + k)][b·L_out + t] = x[ci][b][t·s + k − pad]`, zero outside.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], batch: usize, col: &mut Vec<T>) {
    let n = batch * g.lout;
    col.resize(g.rows() * n, T::zero());
    for k in 0..g.kernel {
        let (lo, hi) = tap_range(g, k);
        for ci in 0..g.cin {
            let row = &mut col[(ci * g.kernel + k) * n..][..n];
            for b in 0..batch {
                let src = &x[(ci * batch + b) * g.lin..][..g.lin];
                let dst = &mut row[b * g.lout..][..g.lout];
                dst[..lo].fill(T::zero());
                dst[hi..].fill(T::zero());
                if lo == hi {
                    continue;
                }
                let s0 = lo * g.stride + k - g.pad_left;
                if g.stride == 1 {
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                } else {
                    for (d, v) in dst[lo..hi].iter_mut().zip(src[s0..].iter().step_by(g.stride)) {
                        *d = *v;
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, dcol: &[T], batch: usize) -> Vec<T> {
    let n = batch * g.lout;
    let mut dx = vec![T::zero(); g.cin * batch * g.lin];
    for k in 0..g.kernel {
        let (lo, hi) = tap_range(g, k);
        if lo == hi {
            continue;
        }
        let s0 = lo * g.stride + k - g.pad_left;
        for ci in 0..g.cin {
            let row = &dcol[(ci * g.kernel + k) * n..][..n];
            for b in 0..batch {
                let dst = &mut dx[(ci * batch + b) * g.lin..][..g.lin];
                let src = &row[b * g.lout + lo..b * g.lout + hi];
                if g.stride == 1 {
                    for (d, v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(src) {
                        *d += *v;
                    }
                } else {
                    for (d, v) in dst[s0..].iter_mut().step_by(g.stride).zip(src) {
                        *d += *v;
                    }
                }
            }
        }
    }
    dx
}

/// `weight · mean((out − target)²)` and its gradient with respect to `out`.
pub fn mse_loss<T: Scalar>(out: &[T], target: &[T], weight: T) -> (T, Vec<T>) {
    assert_eq!(out.len(), target.len());
    let n = T::of(out.len() as f64);
    let mut sum = T::zero();
    let mut grad = Vec::with_capacity(out.len());
    let two = T::of(2.0);
    for (&o, &t) in out.iter().zip(target) {
        let d = o - t;
        sum += d * d;
        grad.push(weight * two * d / n);
    }
    (weight * sum / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{HeadKind, HeadSpec};

    #[test]
    fn full_config_flattens_to_384() {
        let m = Model::<f32>::zeros(CnnConfig::table1(4096, 1.0, HeadSpec::characteristic())).unwrap();
        assert_eq!(m.trunk_shape(), (8, 48));
        assert_eq!(m.flatten_len(), 384);
        assert_eq!(m.convs.len(), 17);
        let kinds: Vec<(usize, usize, usize)> = m.convs.iter().map(|g| (g.kernel, g.cout, g.stride)).collect();
        assert_eq!(
            kinds,
            vec![
                (4, 96, 1),
                (4, 96, 1),
                (4, 96, 1),
                (1, 48, 4),
                (4, 64, 1),
                (4, 64, 1),
                (4, 64, 1),
                (4, 64, 1),
                (1, 64, 4),
                (4, 128, 1),
                (4, 128, 1),
                (4, 128, 1),
                (4, 128, 1),
                (1, 96, 4),
                (4, 96, 2),
                (2, 128, 2),
                (2, 48, 2),
            ]
        );
        // dense blocks widen the transition inputs
        assert_eq!(m.convs[3].cin, 96 + 96);
        assert_eq!(m.convs[8].cin, 48 + 64 + 64);
    }

    #[test]
    fn desk_config_flattens_to_24() {
        let m = Model::<f32>::zeros(CnnConfig::desk(HeadSpec::characteristic())).unwrap();
        assert_eq!(m.trunk_shape(), (2, 12));
        assert_eq!(m.flatten_len(), 24);
    }

    #[test]
    fn head_dimensions() {
        let c = Model::<f32>::zeros(CnnConfig::desk(HeadSpec::characteristic())).unwrap();
        assert_eq!(c.output_len(), 4);
        let r = Model::<f32>::zeros(CnnConfig::desk(HeadSpec::reconstruction(35))).unwrap();
        assert_eq!(r.output_len(), 1225);
    }

    #[test]
    fn same_padding_keeps_length() {
        let m = Model::<f64>::zeros(CnnConfig::tiny(HeadKind::Characteristic)).unwrap();
        for g in &m.convs {
            assert_eq!(g.lout * g.stride, g.lin);
        }
        // even kernel: one column of padding on the right only
        let g = m.convs.iter().find(|g| g.kernel == 4).unwrap();
        assert_eq!(g.pad_left, 1);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let cfg = CnnConfig {
            stages: vec![StageSpec::Conv {
                name: "c".into(),
                kernel: 3,
                channels: 2,
                stride: 2,
                relu: false,
            }],
            input_len: 8,
            head: HeadSpec {
                kind: HeadKind::Characteristic,
                hidden: vec![],
            },
            ..CnnConfig::tiny(HeadKind::Characteristic)
        };
        let model = Model::<f64>::new(cfg, 3).unwrap();
        let batch = 2;
        let x: Vec<f64> = (0..batch * 8).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut cache = Cache::default();
        model.forward_cached(&x, batch, &mut cache).unwrap();
        let g = &model.convs[0];
        let p = model.params();
        for co in 0..2 {
            for b in 0..batch {
                for t in 0..4 {
                    let mut want = p[g.b_off + co];
                    for k in 0..3 {
                        let pos = (t * 2 + k) as isize - g.pad_left as isize;
                        if (0..8).contains(&pos) {
                            want += p[g.w_off + co * 3 + k] * x[b * 8 + pos as usize];
                        }
                    }
                    let got = cache.conv_out[0][(co * batch + b) * 4 + t];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let model = Model::<f64>::new(CnnConfig::tiny(HeadKind::Characteristic), 1).unwrap();
        let l = model.input_len();
        let a: Vec<f64> = (0..l).map(|i| (i as f64 * 0.3).cos()).collect();
        let b: Vec<f64> = (0..l).map(|i| (i as f64 * 0.9).sin() * 2.0).collect();
        let ya = model.forward(&a, 1).unwrap();
        let yb = model.forward(&b, 1).unwrap();
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let y = model.forward(&both, 2).unwrap();
        for (u, v) in y.iter().zip(ya.iter().chain(&yb)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
