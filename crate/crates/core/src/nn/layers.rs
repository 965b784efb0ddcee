//! The eight layer kinds needed for the RNN and CNN architectures, each with
//! a hand-written forward and backward pass. Inputs are batched: the first
//! dimension is always the batch.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ChunkLayout {
    /// Chunk j collects time indices j, j + n_chunks, j + 2·n_chunks, ...
    /// so every chunk subsamples the whole sequence.
    Interleaved,
    /// Chunk j is the contiguous block [j·k, (j+1)·k).
    Contiguous,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Reshape(ReshapeChunks),
    Lstm(Lstm),
    Relu,
    BatchNorm(BatchNorm),
    Flatten,
    Dense(Dense),
    Conv1d(Conv1d),
    AvgPool1d(AvgPool1d),
}

pub enum Cache {
    Reshape { in_shape: Vec<usize> },
    Lstm(LstmCache),
    Relu { x: Tensor },
    BatchNorm(BnCache),
    Flatten { in_shape: Vec<usize> },
    Dense { x: Tensor },
    Conv1d { x: Tensor },
    AvgPool1d { in_shape: Vec<usize> },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Reshape(_) => "reshape",
            Layer::Lstm(_) => "lstm",
            Layer::Relu => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::AvgPool1d(_) => "avgpool1d",
        }
    }

    /// Per-item output shape (batch dimension excluded) as a pure function
    /// of the per-item input shape.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Reshape(r) => r.out_shape(in_shape),
            Layer::Lstm(l) => l.out_shape(in_shape),
            Layer::Relu => Ok(in_shape.to_vec()),
            Layer::BatchNorm(bn) => bn.out_shape(in_shape),
            Layer::Flatten => Ok(vec![in_shape.iter().product()]),
            Layer::Dense(d) => d.out_shape(in_shape),
            Layer::Conv1d(c) => c.out_shape(in_shape),
            Layer::AvgPool1d(p) => p.out_shape(in_shape),
        }
    }

    pub fn forward(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Reshape(r) => r.forward(x),
            Layer::Lstm(l) => l.forward(x),
            Layer::Relu => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok((y, Cache::Relu { x: x.clone() }))
            }
            Layer::BatchNorm(bn) => bn.forward(x, phase),
            Layer::Flatten => {
                let b = x.shape()[0];
                let rest: usize = x.shape()[1..].iter().product();
                let y = x.clone().reshaped(&[b, rest])?;
                Ok((
                    y,
                    Cache::Flatten {
                        in_shape: x.shape().to_vec(),
                    },
                ))
            }
            Layer::Dense(d) => d.forward(x),
            Layer::Conv1d(c) => c.forward(x),
            Layer::AvgPool1d(p) => p.forward(x),
        }
    }

    /// Returns (grad w.r.t. input, grads aligned with `params()` order).
    pub fn backward(&self, grad_out: &Tensor, cache: &Cache) -> Result<(Tensor, Vec<Tensor>)> {
        match (self, cache) {
            (Layer::Reshape(r), Cache::Reshape { in_shape }) => {
                Ok((r.backward(grad_out, in_shape)?, vec![]))
            }
            (Layer::Lstm(l), Cache::Lstm(c)) => l.backward(grad_out, c),
            (Layer::Relu, Cache::Relu { x }) => {
                let mut g = grad_out.clone();
                for (gv, xv) in g.data.iter_mut().zip(&x.data) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok((g, vec![]))
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm(c)) => bn.backward(grad_out, c),
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                Ok((grad_out.clone().reshaped(in_shape)?, vec![]))
            }
            (Layer::Dense(d), Cache::Dense { x }) => d.backward(grad_out, x),
            (Layer::Conv1d(cv), Cache::Conv1d { x }) => cv.backward(grad_out, x),
            (Layer::AvgPool1d(p), Cache::AvgPool1d { in_shape }) => {
                Ok((p.backward(grad_out, in_shape)?, vec![]))
            }
            _ => Err(Error::ShapeMismatch(format!(
                "cache kind does not match layer {}",
                self.name()
            ))),
        }
    }

    /// Folds train-phase batch statistics into running statistics. Only
    /// BatchNorm does anything here; the trainer calls it after each
    /// training forward pass.
    pub fn absorb_batch_stats(&mut self, cache: &Cache) {
        if let (Layer::BatchNorm(bn), Cache::BatchNorm(c)) = (self, cache) {
            bn.update_running(c);
        }
    }

    /// Trainable parameters (gradient order matches `backward`).
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Lstm(l) => vec![("w_ih", &l.w_ih), ("w_hh", &l.w_hh), ("b", &l.b)],
            Layer::BatchNorm(bn) => vec![("gamma", &bn.gamma), ("beta", &bn.beta)],
            Layer::Dense(d) => vec![("w", &d.w), ("b", &d.b)],
            Layer::Conv1d(c) => vec![("w", &c.w), ("b", &c.b)],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Lstm(l) => vec![("w_ih", &mut l.w_ih), ("w_hh", &mut l.w_hh), ("b", &mut l.b)],
            Layer::BatchNorm(bn) => vec![("gamma", &mut bn.gamma), ("beta", &mut bn.beta)],
            Layer::Dense(d) => vec![("w", &mut d.w), ("b", &mut d.b)],
            Layer::Conv1d(c) => vec![("w", &mut c.w), ("b", &mut c.b)],
            _ => vec![],
        }
    }

    /// Non-trainable state that still belongs in a weights file
    /// (BatchNorm running statistics).
    pub fn state(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ],
            _ => vec![],
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ],
            _ => vec![],
        }
    }

    /// Parameters followed by persistent state, all mutably.
    pub fn params_and_state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Lstm(l) => vec![("w_ih", &mut l.w_ih), ("w_hh", &mut l.w_hh), ("b", &mut l.b)],
            Layer::BatchNorm(bn) => vec![
                ("gamma", &mut bn.gamma),
                ("beta", &mut bn.beta),
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ],
            Layer::Dense(d) => vec![("w", &mut d.w), ("b", &mut d.b)],
            Layer::Conv1d(c) => vec![("w", &mut c.w), ("b", &mut c.b)],
            _ => vec![],
        }
    }
}

// ---------------------------------------------------------------------------
// Reshape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ReshapeChunks {
    pub n_chunks: usize,
    pub layout: ChunkLayout,
}

impl ReshapeChunks {
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let (t, c) = seq_dims(in_shape)?;
        if self.n_chunks == 0 || t % self.n_chunks != 0 {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {t} not divisible into {} chunks",
                self.n_chunks
            )));
        }
        Ok(vec![self.n_chunks, (t / self.n_chunks) * c])
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let in_shape = x.shape()[1..].to_vec();
        let out = reshape_chunks(x, self.n_chunks, self.layout)?;
        Ok((out, Cache::Reshape { in_shape }))
    }

    fn backward(&self, grad_out: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
        let b = grad_out.shape()[0];
        let mut full = vec![b];
        full.extend_from_slice(in_shape);
        reshape_chunks_inverse(grad_out, &full, self.layout)
    }
}

fn seq_dims(in_shape: &[usize]) -> Result<(usize, usize)> {
    match in_shape {
        [t] => Ok((*t, 1)),
        [t, c] => Ok((*t, *c)),
        s => Err(Error::ShapeMismatch(format!("expected [T] or [T, C] item, got {s:?}"))),
    }
}

/// Batched chunking: [B, T, C] -> [B, n_chunks, (T/n_chunks)·C]. Bijective.
pub fn reshape_chunks(x: &Tensor, n_chunks: usize, layout: ChunkLayout) -> Result<Tensor> {
    let b = x.shape()[0];
    let (t, c) = seq_dims(&x.shape()[1..])?;
    if n_chunks == 0 || t % n_chunks != 0 {
        return Err(Error::ShapeMismatch(format!(
            "sequence length {t} not divisible into {n_chunks} chunks"
        )));
    }
    let k = t / n_chunks;
    let mut out = Tensor::zeros(&[b, n_chunks, k * c]);
    for bi in 0..b {
        let src = &x.data[bi * t * c..(bi + 1) * t * c];
        let dst = &mut out.data[bi * t * c..(bi + 1) * t * c];
        for j in 0..n_chunks {
            for p in 0..k {
                let ti = match layout {
                    ChunkLayout::Interleaved => j + p * n_chunks,
                    ChunkLayout::Contiguous => j * k + p,
                };
                dst[j * k * c + p * c..j * k * c + (p + 1) * c]
                    .copy_from_slice(&src[ti * c..(ti + 1) * c]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`reshape_chunks`]; `orig_shape` is the full batched shape of
/// the original tensor.
pub fn reshape_chunks_inverse(
    y: &Tensor,
    orig_shape: &[usize],
    layout: ChunkLayout,
) -> Result<Tensor> {
    let b = orig_shape[0];
    let (t, c) = seq_dims(&orig_shape[1..])?;
    let n_chunks = y.shape()[1];
    if y.numel() != b * t * c {
        return Err(Error::ShapeMismatch("inverse reshape size mismatch".into()));
    }
    let k = t / n_chunks;
    let mut out = Tensor::zeros(orig_shape);
    for bi in 0..b {
        let src = &y.data[bi * t * c..(bi + 1) * t * c];
        let dst = &mut out.data[bi * t * c..(bi + 1) * t * c];
        for j in 0..n_chunks {
            for p in 0..k {
                let ti = match layout {
                    ChunkLayout::Interleaved => j + p * n_chunks,
                    ChunkLayout::Contiguous => j * k + p,
                };
                dst[ti * c..(ti + 1) * c]
                    .copy_from_slice(&src[j * k * c + p * c..j * k * c + (p + 1) * c]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor, // [n_out, n_in]
    pub b: Tensor, // [n_out]
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl rand::Rng) -> Dense {
        Dense {
            w: glorot_uniform(&[n_out, n_in], n_in, n_out, rng),
            b: Tensor::zeros(&[n_out]),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.w.shape()[0], self.w.shape()[1])
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let (n_out, n_in) = self.dims();
        if in_shape != [n_in] {
            return Err(Error::ShapeMismatch(format!(
                "dense expects [{n_in}], got {in_shape:?}"
            )));
        }
        Ok(vec![n_out])
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (n_out, _) = self.dims();
        self.out_shape(&x.shape()[1..])?;
        let mut y = matmul_nt(x, &self.w)?;
        for row in y.data.chunks_mut(n_out) {
            for (v, b) in row.iter_mut().zip(&self.b.data) {
                *v += b;
            }
        }
        Ok((y, Cache::Dense { x: x.clone() }))
    }

    fn backward(&self, g: &Tensor, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (n_out, _) = self.dims();
        let grad_x = matmul(g, &self.w)?;
        let grad_w = matmul_tn(g, x)?;
        let mut grad_b = Tensor::zeros(&[n_out]);
        for row in g.data.chunks(n_out) {
            for (acc, v) in grad_b.data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok((grad_x, vec![grad_w, grad_b]))
    }
}

// ---------------------------------------------------------------------------
// Conv1D (valid padding, cross-correlation convention)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Tensor, // [c_out, ks, c_in]
    pub b: Tensor, // [c_out]
    pub stride: usize,
}

impl Conv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        ks: usize,
        stride: usize,
        rng: &mut impl rand::Rng,
    ) -> Conv1d {
        Conv1d {
            w: glorot_uniform(&[c_out, ks, c_in], ks * c_in, ks * c_out, rng),
            b: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    fn hyper(&self) -> (usize, usize, usize) {
        (self.w.shape()[0], self.w.shape()[1], self.w.shape()[2])
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let (c_out, ks, c_in) = self.hyper();
        let (l, c) = seq_dims(in_shape)?;
        if c != c_in {
            return Err(Error::ShapeMismatch(format!(
                "conv1d expects {c_in} input channels, got {c}"
            )));
        }
        if l < ks {
            return Err(Error::ShapeMismatch(format!(
                "conv1d input length {l} shorter than kernel {ks}"
            )));
        }
        Ok(vec![(l - ks) / self.stride + 1, c_out])
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (c_out, ks, c_in) = self.hyper();
        let out_item = self.out_shape(&x.shape()[1..])?;
        let (l_out, b) = (out_item[0], x.shape()[0]);
        let l = x.shape()[1];
        let s = self.stride;
        let mut y = Tensor::zeros(&[b, l_out, c_out]);
        let w = &self.w.data;
        let bias = &self.b.data;
        y.data
            .par_chunks_mut(l_out * c_out)
            .enumerate()
            .for_each(|(bi, yb)| {
                let xb = &x.data[bi * l * c_in..(bi + 1) * l * c_in];
                for lo in 0..l_out {
                    let window = &xb[lo * s * c_in..(lo * s + ks) * c_in];
                    let yrow = &mut yb[lo * c_out..(lo + 1) * c_out];
                    for (o, yv) in yrow.iter_mut().enumerate() {
                        let kern = &w[o * ks * c_in..(o + 1) * ks * c_in];
                        let mut acc = bias[o];
                        for (xv, wv) in window.iter().zip(kern) {
                            acc += xv * wv;
                        }
                        *yv = acc;
                    }
                }
            });
        Ok((y, Cache::Conv1d { x: x.clone() }))
    }

    fn backward(&self, g: &Tensor, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (c_out, ks, c_in) = self.hyper();
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let l_out = g.shape()[1];
        let s = self.stride;
        let w = &self.w.data;

        let per_batch: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let xb = &x.data[bi * l * c_in..(bi + 1) * l * c_in];
                let gb = &g.data[bi * l_out * c_out..(bi + 1) * l_out * c_out];
                let mut gx = vec![0.0; l * c_in];
                let mut gw = vec![0.0; c_out * ks * c_in];
                let mut gbias = vec![0.0; c_out];
                for lo in 0..l_out {
                    let grow = &gb[lo * c_out..(lo + 1) * c_out];
                    let x0 = lo * s * c_in;
                    for (o, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        gbias[o] += gv;
                        let kern = &w[o * ks * c_in..(o + 1) * ks * c_in];
                        let gwk = &mut gw[o * ks * c_in..(o + 1) * ks * c_in];
                        let window = &xb[x0..x0 + ks * c_in];
                        let gxw = &mut gx[x0..x0 + ks * c_in];
                        for i in 0..ks * c_in {
                            gxw[i] += gv * kern[i];
                            gwk[i] += gv * window[i];
                        }
                    }
                }
                (gx, gw, gbias)
            })
            .collect();

        let mut grad_x = Tensor::zeros(x.shape());
        let mut grad_w = Tensor::zeros(self.w.shape());
        let mut grad_b = Tensor::zeros(&[c_out]);
        for (bi, (gx, gw, gbias)) in per_batch.into_iter().enumerate() {
            grad_x.data[bi * l * c_in..(bi + 1) * l * c_in].copy_from_slice(&gx);
            for (acc, v) in grad_w.data.iter_mut().zip(&gw) {
                *acc += v;
            }
            for (acc, v) in grad_b.data.iter_mut().zip(&gbias) {
                *acc += v;
            }
        }
        Ok((grad_x, vec![grad_w, grad_b]))
    }
}

// ---------------------------------------------------------------------------
// AvgPool1D
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AvgPool1d {
    pub window: usize,
    pub stride: usize,
}

impl AvgPool1d {
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let (l, c) = seq_dims(in_shape)?;
        if l < self.window {
            return Err(Error::ShapeMismatch(format!(
                "avgpool input length {l} shorter than window {}",
                self.window
            )));
        }
        Ok(vec![(l - self.window) / self.stride + 1, c])
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let out_item = self.out_shape(&x.shape()[1..])?;
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let c = x.shape()[2];
        let l_out = out_item[0];
        let inv = 1.0 / self.window as f64;
        let mut y = Tensor::zeros(&[b, l_out, c]);
        for bi in 0..b {
            let xb = &x.data[bi * l * c..(bi + 1) * l * c];
            let yb = &mut y.data[bi * l_out * c..(bi + 1) * l_out * c];
            for lo in 0..l_out {
                for k in 0..self.window {
                    let xi = (lo * self.stride + k) * c;
                    for ci in 0..c {
                        yb[lo * c + ci] += xb[xi + ci] * inv;
                    }
                }
            }
        }
        Ok((
            y,
            Cache::AvgPool1d {
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    fn backward(&self, g: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
        let (b, l, c) = (in_shape[0], in_shape[1], in_shape[2]);
        let l_out = g.shape()[1];
        let inv = 1.0 / self.window as f64;
        let mut gx = Tensor::zeros(in_shape);
        for bi in 0..b {
            let gb = &g.data[bi * l_out * c..(bi + 1) * l_out * c];
            let gxb = &mut gx.data[bi * l * c..(bi + 1) * l * c];
            for lo in 0..l_out {
                for k in 0..self.window {
                    let xi = (lo * self.stride + k) * c;
                    for ci in 0..c {
                        gxb[xi + ci] += gb[lo * c + ci] * inv;
                    }
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm (normalizes the last dimension over all leading dimensions)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(n_features: usize) -> BatchNorm {
        let mut running_var = Tensor::zeros(&[n_features]);
        running_var.data.iter_mut().for_each(|v| *v = 1.0);
        BatchNorm {
            gamma: {
                let mut g = Tensor::zeros(&[n_features]);
                g.data.iter_mut().for_each(|v| *v = 1.0);
                g
            },
            beta: Tensor::zeros(&[n_features]),
            running_mean: Tensor::zeros(&[n_features]),
            running_var,
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    fn n_features(&self) -> usize {
        self.gamma.numel()
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let c = *in_shape.last().ok_or_else(|| {
            Error::ShapeMismatch("batchnorm needs at least one dimension".into())
        })?;
        if c != self.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm expects {} features, got {c}",
                self.n_features()
            )));
        }
        Ok(in_shape.to_vec())
    }

    fn forward(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, Cache)> {
        self.out_shape(&x.shape()[1..])?;
        let c = self.n_features();
        let rows = x.numel() / c;
        match phase {
            Phase::Train => {
                if rows < 2 {
                    return Err(Error::InvalidConfig(
                        "batchnorm train mode needs at least 2 samples per feature".into(),
                    ));
                }
                let mut mean = vec![0.0; c];
                for row in x.data.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in x.data.chunks(c) {
                    for ((vv, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *vv += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let mut x_hat = Tensor::zeros(x.shape());
                for (xrow, hrow) in x.data.chunks(c).zip(x_hat.data.chunks_mut(c)) {
                    for i in 0..c {
                        hrow[i] = (xrow[i] - mean[i]) * inv_std[i];
                    }
                }
                let mut y = Tensor::zeros(x.shape());
                for (hrow, yrow) in x_hat.data.chunks(c).zip(y.data.chunks_mut(c)) {
                    for i in 0..c {
                        yrow[i] = self.gamma.data[i] * hrow[i] + self.beta.data[i];
                    }
                }
                Ok((
                    y,
                    Cache::BatchNorm(BnCache {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                    }),
                ))
            }
            Phase::Infer => {
                let inv_std: Vec<f64> = self
                    .running_var
                    .data
                    .iter()
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .collect();
                let mut y = Tensor::zeros(x.shape());
                for (xrow, yrow) in x.data.chunks(c).zip(y.data.chunks_mut(c)) {
                    for i in 0..c {
                        let h = (xrow[i] - self.running_mean.data[i]) * inv_std[i];
                        yrow[i] = self.gamma.data[i] * h + self.beta.data[i];
                    }
                }
                // Infer-mode cache carries enough for a backward pass through
                // the frozen affine transform (not used in training).
                Ok((
                    y.clone(),
                    Cache::BatchNorm(BnCache {
                        x_hat: {
                            let mut h = Tensor::zeros(x.shape());
                            for (xrow, hrow) in x.data.chunks(c).zip(h.data.chunks_mut(c)) {
                                for i in 0..c {
                                    hrow[i] =
                                        (xrow[i] - self.running_mean.data[i]) * inv_std[i];
                                }
                            }
                            h
                        },
                        inv_std,
                        batch_mean: self.running_mean.data.clone(),
                        batch_var: self.running_var.data.clone(),
                    }),
                ))
            }
        }
    }

    fn backward(&self, g: &Tensor, cache: &BnCache) -> Result<(Tensor, Vec<Tensor>)> {
        let c = self.n_features();
        let rows = g.numel() / c;
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        for (grow, hrow) in g.data.chunks(c).zip(cache.x_hat.data.chunks(c)) {
            for i in 0..c {
                dgamma.data[i] += grow[i] * hrow[i];
                dbeta.data[i] += grow[i];
            }
        }
        // dx = gamma * inv_std * (g - mean(g) - x_hat * mean(g*x_hat))
        let n = rows as f64;
        let mut gx = Tensor::zeros(g.shape());
        for (j, (grow, hrow)) in g.data.chunks(c).zip(cache.x_hat.data.chunks(c)).enumerate() {
            let out = &mut gx.data[j * c..(j + 1) * c];
            for i in 0..c {
                out[i] = self.gamma.data[i]
                    * cache.inv_std[i]
                    * (grow[i] - dbeta.data[i] / n - hrow[i] * dgamma.data[i] / n);
            }
        }
        Ok((gx, vec![dgamma, dbeta]))
    }

    fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for i in 0..self.n_features() {
            self.running_mean.data[i] =
                m * self.running_mean.data[i] + (1.0 - m) * cache.batch_mean[i];
            self.running_var.data[i] =
                m * self.running_var.data[i] + (1.0 - m) * cache.batch_var[i];
        }
    }
}

// ---------------------------------------------------------------------------
// LSTM (full-sequence output, BPTT backward)
// ---------------------------------------------------------------------------

/// Standard LSTM cell. Gate rows in the stacked matrices are ordered
/// [input, forget, candidate, output], each block of size H.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: Tensor, // [4H, D]
    pub w_hh: Tensor, // [4H, H]
    pub b: Tensor,    // [4H]
    pub hidden: usize,
}

pub struct LstmCache {
    x: Tensor,
    gates: Vec<Tensor>,  // per step, [B, 4H] post-activation
    cells: Vec<Tensor>,  // per step, [B, H]
    tanh_c: Vec<Tensor>, // per step, [B, H]
    hs: Vec<Tensor>,     // per step, [B, H]
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Lstm {
        let mut b = Tensor::zeros(&[4 * hidden]);
        // Forget-gate bias 1.0.
        for v in b.data[hidden..2 * hidden].iter_mut() {
            *v = 1.0;
        }
        Lstm {
            w_ih: glorot_uniform(&[4 * hidden, input], input, hidden, rng),
            w_hh: glorot_uniform(&[4 * hidden, hidden], hidden, hidden, rng),
            b,
            hidden,
        }
    }

    fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match in_shape {
            [t, d] if *d == self.input_dim() && *t >= 1 => Ok(vec![*t, self.hidden]),
            s => Err(Error::ShapeMismatch(format!(
                "lstm expects [T, {}], got {s:?}",
                self.input_dim()
            ))),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        self.out_shape(&x.shape()[1..])?;
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let h = self.hidden;
        let mut h_prev = Tensor::zeros(&[b, h]);
        let mut c_prev = Tensor::zeros(&[b, h]);
        let mut gates = Vec::with_capacity(t);
        let mut cells = Vec::with_capacity(t);
        let mut tanh_cs = Vec::with_capacity(t);
        let mut hs = Vec::with_capacity(t);
        for ti in 0..t {
            let xt = slice_step(x, ti, b, t, d);
            let mut pre = matmul_nt(&xt, &self.w_ih)?;
            let rec = matmul_nt(&h_prev, &self.w_hh)?;
            for (p, r) in pre.data.iter_mut().zip(&rec.data) {
                *p += r;
            }
            for row in pre.data.chunks_mut(4 * h) {
                for (v, bias) in row.iter_mut().zip(&self.b.data) {
                    *v += bias;
                }
            }
            // Activate in place: sigmoid for i, f, o; tanh for the candidate.
            let mut act = pre;
            for row in act.data.chunks_mut(4 * h) {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if (2 * h..3 * h).contains(&k) {
                        v.tanh()
                    } else {
                        sigmoid(*v)
                    };
                }
            }
            let mut c = Tensor::zeros(&[b, h]);
            let mut tanh_c = Tensor::zeros(&[b, h]);
            let mut h_new = Tensor::zeros(&[b, h]);
            for bi in 0..b {
                let row = &act.data[bi * 4 * h..(bi + 1) * 4 * h];
                let (gi, gf, gg, go) = (&row[0..h], &row[h..2 * h], &row[2 * h..3 * h], &row[3 * h..4 * h]);
                for j in 0..h {
                    let cv = gf[j] * c_prev.data[bi * h + j] + gi[j] * gg[j];
                    let tc = cv.tanh();
                    c.data[bi * h + j] = cv;
                    tanh_c.data[bi * h + j] = tc;
                    h_new.data[bi * h + j] = go[j] * tc;
                }
            }
            gates.push(act);
            cells.push(c.clone());
            tanh_cs.push(tanh_c);
            hs.push(h_new.clone());
            h_prev = h_new;
            c_prev = c;
        }
        let mut y = Tensor::zeros(&[b, t, h]);
        for (ti, ht) in hs.iter().enumerate() {
            for bi in 0..b {
                y.data[bi * t * h + ti * h..bi * t * h + (ti + 1) * h]
                    .copy_from_slice(&ht.data[bi * h..(bi + 1) * h]);
            }
        }
        Ok((
            y,
            Cache::Lstm(LstmCache {
                x: x.clone(),
                gates,
                cells,
                tanh_c: tanh_cs,
                hs,
            }),
        ))
    }

    fn backward(&self, grad_out: &Tensor, cache: &LstmCache) -> Result<(Tensor, Vec<Tensor>)> {
        let x = &cache.x;
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let h = self.hidden;
        let mut grad_x = Tensor::zeros(&[b, t, d]);
        let mut gw_ih = Tensor::zeros(self.w_ih.shape());
        let mut gw_hh = Tensor::zeros(self.w_hh.shape());
        let mut gb = Tensor::zeros(self.b.shape());
        let mut dh_next = Tensor::zeros(&[b, h]);
        let mut dc_next = Tensor::zeros(&[b, h]);
        for ti in (0..t).rev() {
            let act = &cache.gates[ti];
            let tanh_c = &cache.tanh_c[ti];
            let mut dpre = Tensor::zeros(&[b, 4 * h]);
            for bi in 0..b {
                let row = &act.data[bi * 4 * h..(bi + 1) * 4 * h];
                let (gi, gf, gg, go) = (&row[0..h], &row[h..2 * h], &row[2 * h..3 * h], &row[3 * h..4 * h]);
                let drow = &mut dpre.data[bi * 4 * h..(bi + 1) * 4 * h];
                for j in 0..h {
                    let dh = grad_out.data[bi * t * h + ti * h + j] + dh_next.data[bi * h + j];
                    let tc = tanh_c.data[bi * h + j];
                    let dc = dh * go[j] * (1.0 - tc * tc) + dc_next.data[bi * h + j];
                    let c_prev = if ti > 0 {
                        cache.cells[ti - 1].data[bi * h + j]
                    } else {
                        0.0
                    };
                    drow[j] = dc * gg[j] * gi[j] * (1.0 - gi[j]); // input gate
                    drow[h + j] = dc * c_prev * gf[j] * (1.0 - gf[j]); // forget gate
                    drow[2 * h + j] = dc * gi[j] * (1.0 - gg[j] * gg[j]); // candidate
                    drow[3 * h + j] = dh * tc * go[j] * (1.0 - go[j]); // output gate
                    dc_next.data[bi * h + j] = dc * gf[j];
                }
            }
            let xt = slice_step(x, ti, b, t, d);
            let h_prev = if ti > 0 {
                cache.hs[ti - 1].clone()
            } else {
                Tensor::zeros(&[b, h])
            };
            let gw_ih_t = matmul_tn(&dpre, &xt)?;
            let gw_hh_t = matmul_tn(&dpre, &h_prev)?;
            for (acc, v) in gw_ih.data.iter_mut().zip(&gw_ih_t.data) {
                *acc += v;
            }
            for (acc, v) in gw_hh.data.iter_mut().zip(&gw_hh_t.data) {
                *acc += v;
            }
            for row in dpre.data.chunks(4 * h) {
                for (acc, v) in gb.data.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let dxt = matmul(&dpre, &self.w_ih)?;
            for bi in 0..b {
                grad_x.data[bi * t * d + ti * d..bi * t * d + (ti + 1) * d]
                    .copy_from_slice(&dxt.data[bi * d..(bi + 1) * d]);
            }
            dh_next = matmul(&dpre, &self.w_hh)?;
        }
        Ok((grad_x, vec![gw_ih, gw_hh, gb]))
    }
}

fn slice_step(x: &Tensor, ti: usize, b: usize, t: usize, d: usize) -> Tensor {
    let mut xt = Tensor::zeros(&[b, d]);
    for bi in 0..b {
        xt.data[bi * d..(bi + 1) * d]
            .copy_from_slice(&x.data[bi * t * d + ti * d..bi * t * d + (ti + 1) * d]);
    }
    xt
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Uniform init in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl rand::Rng,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-bound..bound));
    t
}
