//! Fingerprint-to-(T1, T2) regression models: the RNN and CNN architectures
//! assembled over the kernel set, input preparation, inference, and the
//! MRFW weights format with a JSON architecture descriptor.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{AvgPool1d, BatchNorm, Conv1d, Dense, Lstm, ReshapeChunks};
use crate::nn::{forward_net, shape_trace, ChunkLayout, Layer, Phase, Tensor};
use crate::rng::seeded_rng;
use crate::sim::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    Magnitude,
    Complex,
}

impl InputMode {
    pub fn channels(&self) -> usize {
        match self {
            InputMode::Magnitude => 1,
            InputMode::Complex => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InputMode::Magnitude => "Magnitude",
            InputMode::Complex => "Complex",
        }
    }
}

/// Target scaling constants: T1/T2 are mapped into roughly [0, 1] for
/// training and de-scaled for reporting.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormConstants {
    pub t1_scale_ms: f64,
    pub t2_scale_ms: f64,
}

impl Default for NormConstants {
    fn default() -> Self {
        NormConstants {
            t1_scale_ms: 5000.0,
            t2_scale_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnSpec {
    pub mode: InputMode,
    pub n_seq: usize,
    pub n_chunks: usize,
    pub hidden: usize,
    pub dense_dims: Vec<usize>,
    pub layout: ChunkLayout,
    pub seed: u64,
}

impl RnnSpec {
    pub fn paper_default(mode: InputMode) -> RnnSpec {
        RnnSpec {
            mode,
            n_seq: 3000,
            n_chunks: 30,
            hidden: 300,
            dense_dims: vec![2000, 1333, 666, 2],
            layout: ChunkLayout::Interleaved,
            seed: 0,
        }
    }

    /// A small configuration for desk-scale experiments on short sequences.
    pub fn desk_scale(mode: InputMode, n_seq: usize) -> RnnSpec {
        RnnSpec {
            mode,
            n_seq,
            n_chunks: 10,
            hidden: 32,
            dense_dims: vec![128, 64, 2],
            // Contiguous chunks give each LSTM step a local window of the
            // time course, which resolves the T1 recovery envelope better
            // at this reduced size than whole-sequence subsampling.
            layout: ChunkLayout::Contiguous,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvSpec {
    pub ks: usize,
    pub stride: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnSpec {
    pub mode: InputMode,
    pub n_seq: usize,
    pub convs: Vec<ConvSpec>,
    pub pool: Option<PoolSpec>,
    pub dense_dims: Vec<usize>,
    pub seed: u64,
}

impl CnnSpec {
    pub fn paper_default(mode: InputMode) -> CnnSpec {
        // Strides (5, 3, 2, 2) and valid padding reproduce the printed
        // output shapes 598/197/97/48; the pool (window 4, stride 2)
        // reproduces 48 -> 23.
        CnnSpec {
            mode,
            n_seq: 3000,
            convs: vec![
                ConvSpec { ks: 15, stride: 5, filters: 30 },
                ConvSpec { ks: 10, stride: 3, filters: 60 },
                ConvSpec { ks: 5, stride: 2, filters: 120 },
                ConvSpec { ks: 3, stride: 2, filters: 240 },
            ],
            pool: Some(PoolSpec { window: 4, stride: 2 }),
            dense_dims: vec![1000, 500, 300, 2],
            seed: 0,
        }
    }

    /// A small configuration for desk-scale experiments on short sequences.
    pub fn desk_scale(mode: InputMode, n_seq: usize) -> CnnSpec {
        CnnSpec {
            mode,
            n_seq,
            convs: vec![
                ConvSpec { ks: 15, stride: 5, filters: 8 },
                ConvSpec { ks: 10, stride: 3, filters: 16 },
                ConvSpec { ks: 5, stride: 2, filters: 32 },
            ],
            pool: Some(PoolSpec { window: 3, stride: 2 }),
            dense_dims: vec![64, 2],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ArchSpec {
    Rnn(RnnSpec),
    Cnn(CnnSpec),
}

impl ArchSpec {
    pub fn mode(&self) -> InputMode {
        match self {
            ArchSpec::Rnn(s) => s.mode,
            ArchSpec::Cnn(s) => s.mode,
        }
    }

    pub fn n_seq(&self) -> usize {
        match self {
            ArchSpec::Rnn(s) => s.n_seq,
            ArchSpec::Cnn(s) => s.n_seq,
        }
    }

    pub fn arch_label(&self) -> &'static str {
        match self {
            ArchSpec::Rnn(_) => "RNN",
            ArchSpec::Cnn(_) => "CNN",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub arch: ArchSpec,
    pub norm: NormConstants,
}

/// Reshape -> LSTM -> ReLU -> BatchNorm -> Flatten -> [Dense -> ReLU ->
/// BatchNorm] x (n-1) -> Dense(out). The regression head has no activation
/// or normalization.
pub fn build_rnn(spec: &RnnSpec) -> Result<Model> {
    if spec.n_chunks == 0 || spec.n_seq % spec.n_chunks != 0 {
        return Err(Error::InvalidConfig(format!(
            "n_chunks {} must divide n_seq {}",
            spec.n_chunks, spec.n_seq
        )));
    }
    if spec.dense_dims.is_empty() {
        return Err(Error::InvalidConfig("dense_dims must be non-empty".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let chunk_width = (spec.n_seq / spec.n_chunks) * spec.mode.channels();
    let mut layers = vec![
        Layer::Reshape(ReshapeChunks {
            n_chunks: spec.n_chunks,
            layout: spec.layout,
        }),
        Layer::Lstm(Lstm::new(chunk_width, spec.hidden, &mut rng)),
        Layer::Relu,
        Layer::BatchNorm(BatchNorm::new(spec.hidden)),
        Layer::Flatten,
    ];
    let mut n_in = spec.n_chunks * spec.hidden;
    for (i, &dim) in spec.dense_dims.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(n_in, dim, &mut rng)));
        if i + 1 < spec.dense_dims.len() {
            layers.push(Layer::Relu);
            layers.push(Layer::BatchNorm(BatchNorm::new(dim)));
        }
        n_in = dim;
    }
    finish_model(layers, ArchSpec::Rnn(spec.clone()))
}

/// [Conv1D -> ReLU -> BatchNorm] per conv spec -> AvgPool -> Flatten ->
/// [Dense -> ReLU -> BatchNorm] x (n-1) -> Dense(out).
pub fn build_cnn(spec: &CnnSpec) -> Result<Model> {
    if spec.convs.is_empty() || spec.dense_dims.is_empty() {
        return Err(Error::InvalidConfig("conv and dense chains must be non-empty".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let mut layers = Vec::new();
    let mut channels = spec.mode.channels();
    for c in &spec.convs {
        layers.push(Layer::Conv1d(Conv1d::new(
            channels, c.filters, c.ks, c.stride, &mut rng,
        )));
        layers.push(Layer::Relu);
        layers.push(Layer::BatchNorm(BatchNorm::new(c.filters)));
        channels = c.filters;
    }
    if let Some(p) = spec.pool {
        layers.push(Layer::AvgPool1d(AvgPool1d {
            window: p.window,
            stride: p.stride,
        }));
    }
    layers.push(Layer::Flatten);
    // Flatten width comes from the traced conv chain.
    let trace = shape_trace(&layers, &[spec.n_seq, spec.mode.channels()]).map_err(|e| {
        Error::InvalidConfig(format!("n_seq {} too short for the conv chain: {e}", spec.n_seq))
    })?;
    let mut n_in = trace.last().unwrap()[0];
    for (i, &dim) in spec.dense_dims.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(n_in, dim, &mut rng)));
        if i + 1 < spec.dense_dims.len() {
            layers.push(Layer::Relu);
            layers.push(Layer::BatchNorm(BatchNorm::new(dim)));
        }
        n_in = dim;
    }
    finish_model(layers, ArchSpec::Cnn(spec.clone()))
}

fn finish_model(layers: Vec<Layer>, arch: ArchSpec) -> Result<Model> {
    let model = Model {
        layers,
        arch,
        norm: NormConstants::default(),
    };
    let trace = model.shape_trace()?;
    let out = trace.last().unwrap();
    if out != &[2] {
        return Err(Error::InvalidConfig(format!(
            "model head must emit 2 values, got {out:?}"
        )));
    }
    Ok(model)
}

impl Model {
    pub fn input_mode(&self) -> InputMode {
        self.arch.mode()
    }

    pub fn n_seq(&self) -> usize {
        self.arch.n_seq()
    }

    pub fn input_item_shape(&self) -> Vec<usize> {
        vec![self.n_seq(), self.input_mode().channels()]
    }

    /// Per-item shape trace from the input through every layer.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        shape_trace(&self.layers, &self.input_item_shape())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Inference on a batch of prepared inputs, de-scaled to
    /// (t1_ms, t2_ms) pairs. Uses BatchNorm running statistics.
    pub fn predict_prepared(&self, x: &Tensor) -> Result<Vec<(f64, f64)>> {
        let (y, _) = forward_net(&self.layers, x, Phase::Infer)?;
        Ok(y
            .data
            .chunks(2)
            .map(|p| (p[0] * self.norm.t1_scale_ms, p[1] * self.norm.t2_scale_ms))
            .collect())
    }

    pub fn predict_params(&self, fp: &Fingerprint) -> Result<(f64, f64)> {
        let x = prepare_batch(std::slice::from_ref(fp), self.input_mode())?;
        Ok(self.predict_prepared(&x)?[0])
    }

    pub fn predict_batch(&self, fps: &[Fingerprint]) -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(fps.len());
        for chunk in fps.chunks(256) {
            let x = prepare_batch(chunk, self.input_mode())?;
            out.extend(self.predict_prepared(&x)?);
        }
        Ok(out)
    }
}

/// Per-fingerprint input tensor: |s| as one channel (magnitude mode) or
/// (re, im) as two channels (complex mode), L2-normalized as a whole.
pub fn prepare_input(fp: &Fingerprint, mode: InputMode) -> Result<Tensor> {
    if fp.is_empty() {
        return Err(Error::InvalidConfig("empty fingerprint".into()));
    }
    let n = fp.len();
    let ch = mode.channels();
    let mut t = Tensor::zeros(&[n, ch]);
    match mode {
        InputMode::Magnitude => {
            for (i, s) in fp.samples.iter().enumerate() {
                t.data[i] = s.norm();
            }
        }
        InputMode::Complex => {
            for (i, s) in fp.samples.iter().enumerate() {
                t.data[2 * i] = s.re;
                t.data[2 * i + 1] = s.im;
            }
        }
    }
    let norm = t.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidConfig(
            "zero fingerprint cannot be normalized".into(),
        ));
    }
    t.data.iter_mut().for_each(|v| *v /= norm);
    Ok(t)
}

/// Stack prepared inputs into a [B, n_seq, channels] batch.
pub fn prepare_batch(fps: &[Fingerprint], mode: InputMode) -> Result<Tensor> {
    if fps.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let n = fps[0].len();
    let ch = mode.channels();
    let mut out = Tensor::zeros(&[fps.len(), n, ch]);
    for (bi, fp) in fps.iter().enumerate() {
        if fp.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "fingerprint {bi} length {} != {n}",
                fp.len()
            )));
        }
        let item = prepare_input(fp, mode)?;
        out.data[bi * n * ch..(bi + 1) * n * ch].copy_from_slice(&item.data);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// MRFW weights format + JSON architecture descriptor
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"MRFW";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    arch: ArchSpec,
    norm: NormConstants,
}

impl Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.params().into_iter().chain(layer.state()) {
                out.push((format!("{i}.{}.{name}", layer.name()), t));
            }
        }
        out
    }

    /// Writes `<stem>.mrfw` (weights incl. BatchNorm running statistics)
    /// and `<stem>.json` (architecture descriptor).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let records = self.named_tensors();
        let mut f = std::io::BufWriter::new(std::fs::File::create(with_ext(stem, "mrfw"))?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(records.len() as u32).to_le_bytes())?;
        for (name, t) in records {
            let bytes = name.as_bytes();
            f.write_all(&(bytes.len() as u32).to_le_bytes())?;
            f.write_all(bytes)?;
            f.write_all(&[DTYPE_F64])?;
            f.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                f.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        let desc = Descriptor {
            arch: self.arch.clone(),
            norm: self.norm,
        };
        std::fs::write(with_ext(stem, "json"), serde_json::to_string_pretty(&desc)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Model> {
        let desc: Descriptor =
            serde_json::from_str(&std::fs::read_to_string(with_ext(stem, "json"))?)?;
        let mut model = match &desc.arch {
            ArchSpec::Rnn(s) => build_rnn(s)?,
            ArchSpec::Cnn(s) => build_cnn(s)?,
        };
        model.norm = desc.norm;

        let mut f = std::io::BufReader::new(std::fs::File::open(with_ext(stem, "mrfw"))?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an MRFW file".into()));
        }
        let version = read_u32(&mut f)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported MRFW version {version}")));
        }
        let count = read_u32(&mut f)? as usize;
        let mut records = std::collections::HashMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut f)? as usize;
            let mut name = vec![0u8; name_len];
            f.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("non-UTF8 tensor name".into()))?;
            let mut dtype = [0u8; 1];
            f.read_exact(&mut dtype)?;
            if dtype[0] != DTYPE_F64 {
                return Err(Error::Format(format!("unsupported dtype tag {}", dtype[0])));
            }
            let rank = read_u32(&mut f)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut b = [0u8; 8];
            for _ in 0..numel {
                f.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            records.insert(name, Tensor::from_vec(&shape, data)?);
        }

        for (i, layer) in model.layers.iter_mut().enumerate() {
            let lname = layer.name();
            for (name, t) in layer.params_and_state_mut() {
                let key = format!("{i}.{lname}.{name}");
                let loaded = records.remove(&key).ok_or_else(|| {
                    Error::Format(format!("weights file is missing tensor {key}"))
                })?;
                if loaded.shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "tensor {key}: stored shape {:?} != model shape {:?}",
                        loaded.shape(),
                        t.shape()
                    )));
                }
                *t = loaded;
            }
        }
        if !records.is_empty() {
            return Err(Error::Format(format!(
                "weights file has {} unexpected tensors",
                records.len()
            )));
        }
        Ok(model)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut p = stem.to_path_buf();
    p.set_extension(ext);
    p
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn rnn_shape_trace_matches_table1_magnitude() {
        let m = build_rnn(&RnnSpec::paper_default(InputMode::Magnitude)).unwrap();
        let trace = m.shape_trace().unwrap();
        // Computational rows of the trace (activations/norms preserve shape).
        assert_eq!(trace[0], vec![3000, 1]);
        assert!(trace.contains(&vec![30, 100]));
        assert!(trace.contains(&vec![30, 300]));
        assert!(trace.contains(&vec![9000]));
        assert!(trace.contains(&vec![2000]));
        assert!(trace.contains(&vec![1333]));
        assert!(trace.contains(&vec![666]));
        assert_eq!(trace.last().unwrap(), &vec![2]);
    }

    #[test]
    fn rnn_shape_trace_matches_table1_complex() {
        let m = build_rnn(&RnnSpec::paper_default(InputMode::Complex)).unwrap();
        let trace = m.shape_trace().unwrap();
        assert_eq!(trace[0], vec![3000, 2]);
        assert!(trace.contains(&vec![30, 200]));
        assert!(trace.contains(&vec![30, 300]));
        assert!(trace.contains(&vec![9000]));
    }

    #[test]
    fn rnn_lstm_param_count_magnitude() {
        let m = build_rnn(&RnnSpec::paper_default(InputMode::Magnitude)).unwrap();
        let lstm_params: usize = m
            .layers
            .iter()
            .find(|l| matches!(l, Layer::Lstm(_)))
            .unwrap()
            .params()
            .iter()
            .map(|(_, t)| t.numel())
            .sum();
        assert_eq!(lstm_params, 4 * ((100 + 300) * 300 + 300)); // 481,200
    }

    #[test]
    fn cnn_shape_trace_matches_table2() {
        let m = build_cnn(&CnnSpec::paper_default(InputMode::Magnitude)).unwrap();
        let trace = m.shape_trace().unwrap();
        for expect in [
            vec![598, 30],
            vec![197, 60],
            vec![97, 120],
            vec![48, 240],
            vec![23, 240],
            vec![5520],
            vec![1000],
            vec![500],
            vec![300],
        ] {
            assert!(trace.contains(&expect), "missing {expect:?} in {trace:?}");
        }
        assert_eq!(trace.last().unwrap(), &vec![2]);
    }

    #[test]
    fn cnn_first_conv_param_count() {
        let m = build_cnn(&CnnSpec::paper_default(InputMode::Magnitude)).unwrap();
        let conv_params: usize = m.layers[0].params().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(conv_params, 15 * 1 * 30 + 30); // 480
    }

    #[test]
    fn cnn_rejects_too_short_input() {
        let spec = CnnSpec {
            n_seq: 10,
            ..CnnSpec::paper_default(InputMode::Magnitude)
        };
        assert!(build_cnn(&spec).is_err());
    }

    #[test]
    fn rnn_rejects_non_divisible_chunking() {
        let spec = RnnSpec {
            n_seq: 3001,
            ..RnnSpec::paper_default(InputMode::Magnitude)
        };
        assert!(build_rnn(&spec).is_err());
    }

    fn test_fp(n: usize, seed: u64) -> Fingerprint {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(seed);
        Fingerprint {
            samples: (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        }
    }

    #[test]
    fn prepare_input_modes() {
        let fp = test_fp(20, 1);
        let mag = prepare_input(&fp, InputMode::Magnitude).unwrap();
        let cplx = prepare_input(&fp, InputMode::Complex).unwrap();
        assert_eq!(mag.shape(), &[20, 1]);
        assert_eq!(cplx.shape(), &[20, 2]);
        // Magnitude channel equals the modulus of the complex channels,
        // up to the differing whole-tensor normalizations.
        let mag_norm: f64 = fp.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt();
        for (i, s) in fp.samples.iter().enumerate() {
            assert!((mag.data[i] * mag_norm - s.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn prepare_input_is_scale_invariant() {
        let fp = test_fp(20, 2);
        let scaled = Fingerprint {
            samples: fp.samples.iter().map(|s| s * 5.0).collect(),
        };
        for mode in [InputMode::Magnitude, InputMode::Complex] {
            let a = prepare_input(&fp, mode).unwrap();
            let b = prepare_input(&scaled, mode).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prepare_input_magnitude_is_phase_invariant() {
        let fp = test_fp(20, 3);
        let rotated = Fingerprint {
            samples: fp
                .samples
                .iter()
                .map(|s| s * Complex64::from_polar(1.0, 0.77))
                .collect(),
        };
        let a = prepare_input(&fp, InputMode::Magnitude).unwrap();
        let b = prepare_input(&rotated, InputMode::Magnitude).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn purely_real_fingerprint_has_zero_imag_channel() {
        let fp = Fingerprint {
            samples: (0..10).map(|i| Complex64::new(i as f64 + 1.0, 0.0)).collect(),
        };
        let t = prepare_input(&fp, InputMode::Complex).unwrap();
        for i in 0..10 {
            assert_eq!(t.data[2 * i + 1], 0.0);
        }
    }

    #[test]
    fn zero_fingerprint_rejected() {
        let fp = Fingerprint {
            samples: vec![Complex64::new(0.0, 0.0); 10],
        };
        assert!(prepare_input(&fp, InputMode::Magnitude).is_err());
    }

    #[test]
    fn predict_is_deterministic_and_finite() {
        let m = build_rnn(&RnnSpec::desk_scale(InputMode::Complex, 60)).unwrap();
        let fp = test_fp(60, 4);
        let a = m.predict_params(&fp).unwrap();
        let b = m.predict_params(&fp).unwrap();
        assert_eq!(a, b);
        assert!(a.0.is_finite() && a.1.is_finite());
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let m = build_cnn(&CnnSpec::desk_scale(InputMode::Magnitude, 300)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        m.save(&stem).unwrap();
        let loaded = Model::load(&stem).unwrap();
        let fp = test_fp(300, 5);
        assert_eq!(m.predict_params(&fp).unwrap(), loaded.predict_params(&fp).unwrap());
    }
}
