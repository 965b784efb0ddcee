//! Synthetic training data, the training loop with validation-best model
//! selection, error metrics, and the four-way architecture comparison.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_cnn, build_rnn, prepare_batch, CnnSpec, InputMode, Model, RnnSpec};
use crate::nn::{backward_net, forward_net, mse_loss, AdamHyper, AdamState, Phase, Tensor};
use crate::rng::substream;
use crate::sim::{add_complex_noise, simulate_fingerprint, Fingerprint, SequenceSchedule, TissueParams};

// ---------------------------------------------------------------------------
// Synthetic phantom slices
// ---------------------------------------------------------------------------

/// A 2-D piecewise-smooth tissue map. `None` voxels are background.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub height: usize,
    pub width: usize,
    pub voxels: Vec<Option<TissueParams>>,
}

impl Phantom {
    pub fn at(&self, row: usize, col: usize) -> Option<TissueParams> {
        self.voxels[row * self.width + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.voxels.iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Slice {
    pub phantom: Phantom,
    /// Aligned with `phantom.voxels`; `None` for background.
    pub fingerprints: Vec<Option<Fingerprint>>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    params: TissueParams,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

fn random_tissue(rng: &mut impl Rng) -> TissueParams {
    // Brain-like ranges, inside the reference dictionary ranges.
    let t1 = rng.gen_range(300.0..3000.0);
    let t2_max = f64::min(350.0, 0.6 * t1);
    let t2 = rng.gen_range(30.0..t2_max);
    let b1 = rng.gen_range(0.85..1.15);
    TissueParams { t1_ms: t1, t2_ms: t2, b1 }
}

/// Ellipse-based head phantom: one outer ellipse of base tissue plus a
/// handful of inner elliptical regions with their own parameters.
pub fn make_phantom(height: usize, width: usize, rng: &mut impl Rng) -> Result<Phantom> {
    if height < 16 || width < 16 {
        return Err(Error::InvalidConfig(format!(
            "phantom dims {height}x{width} below minimum 16x16"
        )));
    }
    let (h, w) = (height as f64, width as f64);
    let head = Ellipse {
        cy: h / 2.0,
        cx: w / 2.0,
        ry: 0.45 * h,
        rx: 0.42 * w,
        params: random_tissue(rng),
    };
    let n_regions = rng.gen_range(4..8);
    let regions: Vec<Ellipse> = (0..n_regions)
        .map(|_| Ellipse {
            cy: rng.gen_range(0.25 * h..0.75 * h),
            cx: rng.gen_range(0.25 * w..0.75 * w),
            ry: rng.gen_range(0.06 * h..0.22 * h),
            rx: rng.gen_range(0.06 * w..0.22 * w),
            params: random_tissue(rng),
        })
        .collect();
    let mut voxels = vec![None; height * width];
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            if !head.contains(y, x) {
                continue;
            }
            // Innermost (last drawn) region wins.
            let mut p = head.params;
            for e in &regions {
                if e.contains(y, x) {
                    p = e.params;
                }
            }
            voxels[r * width + c] = Some(p);
        }
    }
    let phantom = Phantom { height, width, voxels };
    if phantom.foreground_count() == 0 {
        return Err(Error::InvalidConfig("degenerate phantom: no foreground voxels".into()));
    }
    Ok(phantom)
}

/// Simulated, optionally noise-augmented fingerprint maps for `n_slices`
/// phantoms. `snr = None` disables noise. Deterministic per seed.
pub fn make_synthetic_slices(
    n_slices: usize,
    height: usize,
    width: usize,
    schedule: &SequenceSchedule,
    seed: u64,
    snr: Option<f64>,
) -> Result<Vec<Slice>> {
    schedule.validate()?;
    if n_slices == 0 {
        return Err(Error::InvalidConfig("n_slices must be >= 1".into()));
    }
    (0..n_slices)
        .map(|si| {
            let mut rng = substream(seed, si as u64);
            let phantom = make_phantom(height, width, &mut rng)?;
            let fingerprints: Vec<Option<Fingerprint>> = phantom
                .voxels
                .par_iter()
                .enumerate()
                .map(|(vi, p)| match p {
                    None => Ok(None),
                    Some(p) => {
                        let fp = simulate_fingerprint(p, schedule)?;
                        let fp = match snr {
                            Some(snr) => {
                                let noise_seed = seed
                                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                                    .wrapping_add((si * height * width + vi) as u64);
                                add_complex_noise(&fp, snr, noise_seed)?
                            }
                            None => fp,
                        };
                        Ok(Some(fp))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(Slice { phantom, fingerprints })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct DataItem {
    pub fp: Fingerprint,
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub split: Split,
    pub slice_id: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DataItem>,
    pub n_seq: usize,
}

impl Dataset {
    /// Pools foreground voxels; the last two slices become validation and
    /// test, everything before them trains (6/1/1 for 8 slices).
    pub fn from_slices(slices: &[Slice]) -> Result<Dataset> {
        if slices.len() < 3 {
            return Err(Error::InvalidConfig(
                "need at least 3 slices for a train/val/test split".into(),
            ));
        }
        let val_id = slices.len() - 2;
        let test_id = slices.len() - 1;
        let mut items = Vec::new();
        let mut n_seq = 0;
        for (si, slice) in slices.iter().enumerate() {
            let split = if si == val_id {
                Split::Val
            } else if si == test_id {
                Split::Test
            } else {
                Split::Train
            };
            for (p, fp) in slice.phantom.voxels.iter().zip(&slice.fingerprints) {
                if let (Some(p), Some(fp)) = (p, fp) {
                    if n_seq == 0 {
                        n_seq = fp.len();
                    } else if fp.len() != n_seq {
                        return Err(Error::ShapeMismatch("inconsistent fingerprint lengths".into()));
                    }
                    items.push(DataItem {
                        fp: fp.clone(),
                        t1_ms: p.t1_ms,
                        t2_ms: p.t2_ms,
                        split,
                        slice_id: si,
                    });
                }
            }
        }
        Ok(Dataset { items, n_seq })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be >= 2 (BatchNorm train mode)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    /// Weights snapshot of the minimum-validation-loss epoch.
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn scaled_targets(data: &Dataset, idx: &[usize], model: &Model) -> Tensor {
    let mut t = Tensor::zeros(&[idx.len(), 2]);
    for (row, &i) in idx.iter().enumerate() {
        t.data[2 * row] = data.items[i].t1_ms / model.norm.t1_scale_ms;
        t.data[2 * row + 1] = data.items[i].t2_ms / model.norm.t2_scale_ms;
    }
    t
}

fn batch_inputs(data: &Dataset, idx: &[usize], mode: InputMode) -> Result<Tensor> {
    let fps: Vec<Fingerprint> = idx.iter().map(|&i| data.items[i].fp.clone()).collect();
    prepare_batch(&fps, mode)
}

/// Loss in inference mode over a whole split, batched.
fn eval_loss(model: &Model, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(256) {
        let x = batch_inputs(data, chunk, model.input_mode())?;
        let t = scaled_targets(data, chunk, model);
        let (y, _) = forward_net(&model.layers, &x, Phase::Infer)?;
        let (loss, _) = mse_loss(&y, &t)?;
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// MSE training with Adam; after every epoch the validation loss is
/// evaluated in inference mode and the best snapshot is kept
/// (ties resolve to the earliest epoch). Deterministic per seed.
pub fn train(mut model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let train_idx = data.indices(Split::Train);
    let val_idx = data.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidConfig("train and val splits must be non-empty".into()));
    }

    let param_shapes: Vec<Vec<usize>> = model
        .layers
        .iter()
        .flat_map(|l| l.params())
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(&param_shapes, cfg.adam);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<crate::nn::Layer>)> = None;

    for epoch in 0..cfg.epochs {
        let mut perm = train_idx.clone();
        perm.shuffle(&mut substream(cfg.seed, 1000 + epoch as u64));

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in perm.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue; // BatchNorm train mode needs >= 2
            }
            let x = batch_inputs(data, batch, model.input_mode())?;
            let t = scaled_targets(data, batch, &model);
            let (y, caches) = forward_net(&model.layers, &x, Phase::Train)?;
            for (layer, cache) in model.layers.iter_mut().zip(&caches) {
                layer.absorb_batch_stats(cache);
            }
            let (loss, loss_grad) = mse_loss(&y, &t)?;
            let (_, param_grads) = backward_net(&model.layers, &caches, &loss_grad)?;

            let grads: Vec<Tensor> = param_grads.into_iter().flatten().collect();
            let mut params: Vec<&mut Tensor> = model
                .layers
                .iter_mut()
                .flat_map(|l| l.params_mut())
                .map(|(_, t)| t)
                .collect();
            adam.apply(&mut params, &grads)?;

            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = eval_loss(&model, data, &val_idx)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        history.push(EpochStats { train_loss, val_loss });
        if best.as_ref().map_or(true, |(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.layers.clone()));
        }
    }

    let (best_epoch, _, layers) = best.unwrap();
    model.layers = layers;
    Ok(TrainResult {
        model,
        history,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mean and population standard deviation of the absolute T1/T2 errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mu_abs_t1_ms: f64,
    pub sigma_abs_t1_ms: f64,
    pub mu_abs_t2_ms: f64,
    pub sigma_abs_t2_ms: f64,
    pub n_data: usize,
}

pub fn evaluate_metrics(predictions: &[(f64, f64)], ground_truth: &[(f64, f64)]) -> Result<Metrics> {
    if predictions.len() != ground_truth.len() || predictions.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "metrics: {} predictions vs {} ground-truth values",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let n = predictions.len() as f64;
    let abs_errs: Vec<(f64, f64)> = predictions
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| ((p.0 - g.0).abs(), (p.1 - g.1).abs()))
        .collect();
    let mu1 = abs_errs.iter().map(|e| e.0).sum::<f64>() / n;
    let mu2 = abs_errs.iter().map(|e| e.1).sum::<f64>() / n;
    let s1 = (abs_errs.iter().map(|e| (e.0 - mu1).powi(2)).sum::<f64>() / n).sqrt();
    let s2 = (abs_errs.iter().map(|e| (e.1 - mu2).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Metrics {
        mu_abs_t1_ms: mu1,
        sigma_abs_t1_ms: s1,
        mu_abs_t2_ms: mu2,
        sigma_abs_t2_ms: s2,
        n_data: predictions.len(),
    })
}

/// Test-split metrics of a trained model.
pub fn evaluate_on_split(model: &Model, data: &Dataset, split: Split) -> Result<Metrics> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation split".into()));
    }
    let fps: Vec<Fingerprint> = idx.iter().map(|&i| data.items[i].fp.clone()).collect();
    let preds = model.predict_batch(&fps)?;
    let gts: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (data.items[i].t1_ms, data.items[i].t2_ms))
        .collect();
    evaluate_metrics(&preds, &gts)
}

// ---------------------------------------------------------------------------
// Architecture comparison
// ---------------------------------------------------------------------------

/// Which builder configurations the comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelScale {
    /// The full published architectures (n_seq = 3000).
    Paper,
    /// Reduced configurations for desk-scale sequences.
    Desk,
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub arch: &'static str,
    pub mode: InputMode,
    pub metrics: Metrics,
    pub best_epoch: usize,
}

impl CompareRow {
    pub fn label(&self) -> String {
        format!("{} {}", self.arch, self.mode.label())
    }
}

fn build_for(scale: ModelScale, arch: &str, mode: InputMode, n_seq: usize, seed: u64) -> Result<Model> {
    match (scale, arch) {
        (ModelScale::Paper, "RNN") => build_rnn(&RnnSpec {
            seed,
            ..RnnSpec::paper_default(mode)
        }),
        (ModelScale::Paper, "CNN") => build_cnn(&CnnSpec {
            seed,
            ..CnnSpec::paper_default(mode)
        }),
        (ModelScale::Desk, "RNN") => build_rnn(&RnnSpec {
            seed,
            ..RnnSpec::desk_scale(mode, n_seq)
        }),
        (ModelScale::Desk, "CNN") => build_cnn(&CnnSpec {
            seed,
            ..CnnSpec::desk_scale(mode, n_seq)
        }),
        _ => unreachable!(),
    }
}

/// Trains and evaluates {CNN, RNN} x {magnitude, complex} on the identical
/// splits and seed; rows follow the published report order.
pub fn compare_architectures(
    data: &Dataset,
    cfg: &TrainConfig,
    scale: ModelScale,
) -> Result<Vec<CompareRow>> {
    let configs: [(&'static str, InputMode); 4] = [
        ("CNN", InputMode::Magnitude),
        ("RNN", InputMode::Magnitude),
        ("CNN", InputMode::Complex),
        ("RNN", InputMode::Complex),
    ];
    let mut rows = Vec::with_capacity(4);
    for (arch, mode) in configs {
        let model = build_for(scale, arch, mode, data.n_seq, cfg.seed)?;
        let result = train(model, data, cfg)?;
        let metrics = evaluate_on_split(&result.model, data, Split::Test)?;
        rows.push(CompareRow {
            arch,
            mode,
            metrics,
            best_epoch: result.best_epoch,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV / report emission
// ---------------------------------------------------------------------------

pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss")?;
    for (e, st) in history.iter().enumerate() {
        writeln!(f, "{e},{},{}", st.train_loss, st.val_loss)?;
    }
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "arch,mode,mu_t1,sigma_t1,mu_t2,sigma_t2,n")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.arch, r.mode.label(), m.mu_abs_t1_ms, m.sigma_abs_t1_ms, m.mu_abs_t2_ms, m.sigma_abs_t2_ms, m.n_data
        )?;
    }
    Ok(())
}

pub fn format_report(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>20} {:>20}\n",
        "Architecture", "T1 error [ms]", "T2 error [ms]"
    ));
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{:<16} {:>9.1} ± {:>8.1} {:>9.1} ± {:>8.1}\n",
            r.label(),
            m.mu_abs_t1_ms,
            m.sigma_abs_t1_ms,
            m.mu_abs_t2_ms,
            m.sigma_abs_t2_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::sim::{generate_schedule, ScheduleConfig};

    fn schedule(n: usize) -> SequenceSchedule {
        generate_schedule(&ScheduleConfig {
            n_reps: n,
            seed: 5,
            ..ScheduleConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn slices_split_six_one_one() {
        let slices = make_synthetic_slices(8, 16, 16, &schedule(30), 1, None).unwrap();
        let data = Dataset::from_slices(&slices).unwrap();
        let train_slices: std::collections::BTreeSet<usize> = data
            .indices(Split::Train)
            .iter()
            .map(|&i| data.items[i].slice_id)
            .collect();
        assert_eq!(train_slices.len(), 6);
        assert!(!data.indices(Split::Val).is_empty());
        assert!(!data.indices(Split::Test).is_empty());
        // Splits are disjoint and exhaustive.
        let total = data.indices(Split::Train).len()
            + data.indices(Split::Val).len()
            + data.indices(Split::Test).len();
        assert_eq!(total, data.items.len());
    }

    #[test]
    fn noiseless_slices_match_direct_simulation() {
        let sched = schedule(25);
        let slices = make_synthetic_slices(1, 16, 16, &sched, 2, None).unwrap();
        let s = &slices[0];
        for (p, fp) in s.phantom.voxels.iter().zip(&s.fingerprints) {
            if let (Some(p), Some(fp)) = (p, fp) {
                let direct = simulate_fingerprint(p, &sched).unwrap();
                assert_eq!(fp, &direct);
            }
        }
    }

    #[test]
    fn slices_are_deterministic_per_seed() {
        let sched = schedule(20);
        let a = make_synthetic_slices(2, 16, 16, &sched, 7, Some(30.0)).unwrap();
        let b = make_synthetic_slices(2, 16, 16, &sched, 7, Some(30.0)).unwrap();
        assert_eq!(a[1].fingerprints, b[1].fingerprints);
    }

    #[test]
    fn tiny_dims_rejected() {
        assert!(make_synthetic_slices(1, 8, 8, &schedule(20), 1, None).is_err());
    }

    #[test]
    fn metrics_zero_for_perfect_predictions() {
        let v = vec![(1000.0, 100.0), (2000.0, 200.0)];
        let m = evaluate_metrics(&v, &v).unwrap();
        assert_eq!(m.mu_abs_t1_ms, 0.0);
        assert_eq!(m.sigma_abs_t1_ms, 0.0);
        assert_eq!(m.mu_abs_t2_ms, 0.0);
        assert_eq!(m.sigma_abs_t2_ms, 0.0);
    }

    #[test]
    fn metrics_two_point_hand_case() {
        // Absolute T1 errors {1, 3} -> mu 2, sigma 1.
        let pred = vec![(101.0, 10.0), (203.0, 20.0)];
        let gt = vec![(100.0, 10.0), (200.0, 20.0)];
        let m = evaluate_metrics(&pred, &gt).unwrap();
        assert_eq!(m.mu_abs_t1_ms, 2.0);
        assert_eq!(m.sigma_abs_t1_ms, 1.0);
        assert_eq!(m.n_data, 2);
    }

    /// Independent naive two-pass oracle: collect absolute errors, then mean,
    /// then population standard deviation.
    fn metrics_oracle(pred: &[(f64, f64)], gt: &[(f64, f64)]) -> (f64, f64, f64, f64) {
        let mut e1 = Vec::new();
        let mut e2 = Vec::new();
        for i in 0..pred.len() {
            e1.push((pred[i].0 - gt[i].0).abs());
            e2.push((pred[i].1 - gt[i].1).abs());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64], m: f64| {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let (m1, m2) = (mean(&e1), mean(&e2));
        (m1, sd(&e1, m1), m2, sd(&e2, m2))
    }

    #[test]
    fn metrics_match_independent_oracle() {
        let mut rng = seeded_rng(10);
        let pred: Vec<(f64, f64)> = (0..10_000)
            .map(|_| (rng.gen_range(0.0..4000.0), rng.gen_range(0.0..600.0)))
            .collect();
        let gt: Vec<(f64, f64)> = (0..10_000)
            .map(|_| (rng.gen_range(0.0..4000.0), rng.gen_range(0.0..600.0)))
            .collect();
        let m = evaluate_metrics(&pred, &gt).unwrap();
        let (m1, s1, m2, s2) = metrics_oracle(&pred, &gt);
        assert!((m.mu_abs_t1_ms - m1).abs() / m1 < 1e-9);
        assert!((m.sigma_abs_t1_ms - s1).abs() / s1 < 1e-9);
        assert!((m.mu_abs_t2_ms - m2).abs() / m2 < 1e-9);
        assert!((m.sigma_abs_t2_ms - s2).abs() / s2 < 1e-9);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let mut rng = seeded_rng(11);
        let pairs: Vec<((f64, f64), (f64, f64))> = (0..100)
            .map(|_| {
                (
                    (rng.gen_range(0.0..4000.0), rng.gen_range(0.0..600.0)),
                    (rng.gen_range(0.0..4000.0), rng.gen_range(0.0..600.0)),
                )
            })
            .collect();
        let pred: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let gt: Vec<_> = pairs.iter().map(|p| p.1).collect();
        let a = evaluate_metrics(&pred, &gt).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut seeded_rng(12));
        let pred2: Vec<_> = shuffled.iter().map(|p| p.0).collect();
        let gt2: Vec<_> = shuffled.iter().map(|p| p.1).collect();
        let b = evaluate_metrics(&pred2, &gt2).unwrap();
        assert!((a.mu_abs_t1_ms - b.mu_abs_t1_ms).abs() < 1e-9);
        assert!((a.sigma_abs_t2_ms - b.sigma_abs_t2_ms).abs() < 1e-9);
    }

    #[test]
    fn metrics_length_mismatch_rejected() {
        assert!(evaluate_metrics(&[(1.0, 1.0)], &[]).is_err());
    }

    fn tiny_dataset(n_seq: usize, seed: u64) -> Dataset {
        let sched = schedule(n_seq);
        let slices = make_synthetic_slices(3, 16, 16, &sched, seed, Some(40.0)).unwrap();
        Dataset::from_slices(&slices).unwrap()
    }

    #[test]
    fn best_epoch_is_argmin_of_val_loss() {
        let data = tiny_dataset(60, 3);
        let model = build_rnn(&RnnSpec {
            hidden: 8,
            dense_dims: vec![16, 2],
            n_chunks: 6,
            ..RnnSpec::desk_scale(InputMode::Magnitude, 60)
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let res = train(model, &data, &cfg).unwrap();
        let argmin = res
            .history
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.val_loss.partial_cmp(&b.1.val_loss).unwrap())
            .unwrap()
            .0;
        assert_eq!(res.best_epoch, argmin);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(60, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let mk = || {
            build_rnn(&RnnSpec {
                hidden: 8,
                dense_dims: vec![16, 2],
                n_chunks: 6,
                seed: cfg.seed,
                ..RnnSpec::desk_scale(InputMode::Complex, 60)
            })
            .unwrap()
        };
        let a = train(mk(), &data, &cfg).unwrap();
        let b = train(mk(), &data, &cfg).unwrap();
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.val_loss, y.val_loss);
        }
        for (la, lb) in a.model.layers.iter().zip(&b.model.layers) {
            for ((_, ta), (_, tb)) in la.params().iter().zip(lb.params()) {
                assert_eq!(ta.data, tb.data);
            }
        }
    }

    #[test]
    fn single_batch_overfit() {
        // 32 items, 200 epochs, small RNN: final train loss < 1% of initial.
        let sched = schedule(60);
        let slices = make_synthetic_slices(3, 16, 16, &sched, 9, Some(50.0)).unwrap();
        let mut data = Dataset::from_slices(&slices).unwrap();
        let train_idx = data.indices(Split::Train);
        // Shrink the train split to one batch of 32.
        for &i in train_idx.iter().skip(32) {
            data.items[i].split = Split::Test;
        }
        let model = build_rnn(&RnnSpec {
            hidden: 16,
            dense_dims: vec![32, 2],
            n_chunks: 6,
            ..RnnSpec::desk_scale(InputMode::Complex, 60)
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 32,
            adam: AdamHyper {
                lr: 3e-3,
                ..AdamHyper::default()
            },
            ..TrainConfig::default()
        };
        let res = train(model, &data, &cfg).unwrap();
        let initial = res.history[0].train_loss;
        let last = res.history.last().unwrap().train_loss;
        assert!(
            last < 0.01 * initial,
            "no overfit: first {initial}, last {last}"
        );
    }

    #[test]
    fn compare_emits_four_labeled_rows() {
        // The desk-scale conv chain needs a few hundred time points.
        let data = tiny_dataset(300, 5);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let rows = compare_architectures(&data, &cfg, ModelScale::Desk).unwrap();
        let labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
        assert_eq!(
            labels,
            vec!["CNN Magnitude", "RNN Magnitude", "CNN Complex", "RNN Complex"]
        );
        for r in &rows {
            assert!(r.metrics.mu_abs_t1_ms >= 0.0);
            assert!(r.metrics.sigma_abs_t2_ms >= 0.0);
        }
    }
}
