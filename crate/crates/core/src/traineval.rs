//! Dataset windowing, training, metrics, baselines, ablations, and the
//! hyper-parameter sweep harness.
//!
//! Windows slide with stride 1 inside chronologically contiguous
//! train/validation/test segments, so no window straddles a split
//! boundary. Inputs are z-scored per channel with statistics from the
//! training segment only; targets stay in raw flow units and model
//! outputs are de-normalized before any metric is computed.

use std::io::Write;
use std::ops::Range;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::LossKind;
use crate::error::{Error, Result};
use crate::graph::SpectralOps;
use crate::model::{
    assemble_features, model_backward, model_forward, ChannelLabel, FeatureTensor, ModelConfig,
    NodeSignals, StModelParams, Variant,
};
use crate::spectral::TimeSeries;
use crate::tensor::Tensor;
use crate::timestamp::Timestamp;
use crate::vmd::{decompose_all, redemption, ModeSet, VmdConfig};

/// How the timeline is cut into splits before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Everything becomes training data (used for standalone window
    /// arithmetic and tiny fixtures).
    Single,
    /// Chronologically contiguous fractions; test takes the remainder.
    Chronological { train: f64, val: f64 },
}

impl SplitSpec {
    pub fn standard() -> Self {
        SplitSpec::Chronological {
            train: 0.6,
            val: 0.2,
        }
    }

    fn ranges(&self, len: usize) -> [Range<usize>; 3] {
        match *self {
            SplitSpec::Single => [0..len, 0..0, 0..0],
            SplitSpec::Chronological { train, val } => {
                let a = (train * len as f64).floor() as usize;
                let b = ((train + val) * len as f64).floor() as usize;
                [0..a, a..b.min(len), b.min(len)..len]
            }
        }
    }
}

/// One training/evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Z-scored features, [N, d, T_w].
    pub input: Tensor,
    /// Raw-scale flow targets, [N, N_H].
    pub target_raw: Tensor,
    /// Raw flow at the last observed step, per node.
    pub last_raw: Vec<f64>,
    /// Start index of the input window on the timeline.
    pub origin: usize,
    pub origin_timestamp: Timestamp,
}

/// Per-channel normalization statistics from the training segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub stats: ChannelStats,
    /// Raw-flow statistics from the training segment; predictions are
    /// de-normalized with these.
    pub flow_mean: f64,
    pub flow_std: f64,
    pub node_ids: Vec<String>,
    pub channel_map: Vec<ChannelLabel>,
    pub window: usize,
    pub horizon: usize,
}

impl WindowedDataset {
    pub fn feature(&self, sample: &WindowSample) -> FeatureTensor {
        FeatureTensor {
            data: sample.input.clone(),
            channel_map: self.channel_map.clone(),
        }
    }

    pub fn normalize_target(&self, raw: &Tensor) -> Tensor {
        raw.map(|v| (v - self.flow_mean) / self.flow_std)
    }

    pub fn denormalize_prediction(&self, pred: &Tensor) -> Tensor {
        pred.map(|v| v * self.flow_std + self.flow_mean)
    }
}

/// Slides stride-1 windows inside each split segment of the timeline.
pub fn make_windows(
    nodes: &[NodeSignals],
    variant: Variant,
    t_w: usize,
    horizon: usize,
    split: &SplitSpec,
) -> Result<WindowedDataset> {
    if nodes.is_empty() {
        return Err(Error::invalid_input("no nodes to window"));
    }
    let len = nodes[0].raw.len();
    if len < t_w + horizon {
        return Err(Error::invalid_input(format!(
            "series length {len} shorter than window {t_w} + horizon {horizon}"
        )));
    }
    let features = assemble_features(nodes, variant, 0..len)?;
    let n = nodes.len();
    let d = features.channel_map.len();

    let ranges = split.ranges(len);
    let train_range = if ranges[0].is_empty() {
        0..len
    } else {
        ranges[0].clone()
    };

    // Per-channel z-score statistics over the training segment.
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let count = (n * train_range.len()) as f64;
    for c in 0..d {
        let mut acc = 0.0;
        for ni in 0..n {
            for t in train_range.clone() {
                acc += features.data.at3(ni, c, t);
            }
        }
        mean[c] = acc / count;
        let mut vacc = 0.0;
        for ni in 0..n {
            for t in train_range.clone() {
                let dlt = features.data.at3(ni, c, t) - mean[c];
                vacc += dlt * dlt;
            }
        }
        var[c] = vacc / count;
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-8)).collect();

    let mut flow_acc = 0.0;
    for ns in nodes {
        for t in train_range.clone() {
            flow_acc += ns.raw.values[t];
        }
    }
    let flow_mean = flow_acc / count;
    let mut flow_var = 0.0;
    for ns in nodes {
        for t in train_range.clone() {
            let dlt = ns.raw.values[t] - flow_mean;
            flow_var += dlt * dlt;
        }
    }
    let flow_std = (flow_var / count).sqrt().max(1e-8);

    let build_range = |range: &Range<usize>| -> Vec<WindowSample> {
        let span = t_w + horizon;
        if range.len() < span {
            return Vec::new();
        }
        (range.start..=range.end - span)
            .map(|origin| {
                let mut input = Tensor::zeros(&[n, d, t_w]);
                for ni in 0..n {
                    for c in 0..d {
                        for (ti, t) in (origin..origin + t_w).enumerate() {
                            *input.at3_mut(ni, c, ti) =
                                (features.data.at3(ni, c, t) - mean[c]) / std[c];
                        }
                    }
                }
                let mut target = Tensor::zeros(&[n, horizon]);
                for (ni, ns) in nodes.iter().enumerate() {
                    for h in 0..horizon {
                        *target.at2_mut(ni, h) = ns.raw.values[origin + t_w + h];
                    }
                }
                let last_raw: Vec<f64> = nodes
                    .iter()
                    .map(|ns| ns.raw.values[origin + t_w - 1])
                    .collect();
                WindowSample {
                    input,
                    target_raw: target,
                    last_raw,
                    origin,
                    origin_timestamp: nodes[0].raw.timestamp_at(origin),
                }
            })
            .collect()
    };

    Ok(WindowedDataset {
        train: build_range(&ranges[0]),
        val: build_range(&ranges[1]),
        test: build_range(&ranges[2]),
        stats: ChannelStats { mean, std },
        flow_mean,
        flow_std,
        node_ids: nodes.iter().map(|ns| ns.raw.node_id.clone()).collect(),
        channel_map: features.channel_map,
        window: t_w,
        horizon,
    })
}

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Root mean square error.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok((pred
        .iter()
        .zip(target)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt())
}

/// Mean absolute percentage error (in percent), excluding target points
/// with |y| below `mask_threshold`. Returns the masked-point count too.
pub fn mape(pred: &[f64], target: &[f64], mask_threshold: f64) -> Result<(f64, usize)> {
    check_lengths(pred, target)?;
    let mut acc = 0.0;
    let mut used = 0usize;
    for (p, y) in pred.iter().zip(target) {
        if y.abs() < mask_threshold {
            continue;
        }
        acc += ((p - y) / y).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "every target point fell below the MAPE mask threshold".into(),
        ));
    }
    Ok((100.0 * acc / used as f64, pred.len() - used))
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape_mismatch(format!(
            "metric over {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub masked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Indexed by horizon step 1..=N_H.
    pub per_horizon: Vec<HorizonMetrics>,
    /// Unweighted mean of the per-horizon metrics.
    pub average: HorizonMetrics,
    /// Points per horizon (windows × nodes).
    pub sample_count: usize,
    pub masked_count: usize,
}

impl MetricsReport {
    pub fn horizon(&self, h: usize) -> Option<&HorizonMetrics> {
        self.per_horizon.get(h.checked_sub(1)?)
    }
}

/// Metrics of raw-scale predictions against raw-scale targets, per
/// horizon and averaged.
pub fn evaluate_predictions(
    preds: &[Tensor],
    targets: &[Tensor],
    mask_threshold: f64,
) -> Result<MetricsReport> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::invalid_input(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let shape = preds[0].shape().to_vec();
    let (n, horizon) = (shape[0], shape[1]);
    for (p, y) in preds.iter().zip(targets) {
        if p.shape() != shape || y.shape() != shape {
            return Err(Error::shape_mismatch(
                "prediction/target shapes differ across windows",
            ));
        }
    }
    let mut per_horizon = Vec::with_capacity(horizon);
    let mut masked_total = 0;
    for h in 0..horizon {
        let mut p_col = Vec::with_capacity(preds.len() * n);
        let mut y_col = Vec::with_capacity(preds.len() * n);
        for (p, y) in preds.iter().zip(targets) {
            for ni in 0..n {
                p_col.push(p.at2(ni, h));
                y_col.push(y.at2(ni, h));
            }
        }
        let (mape_v, masked) = mape(&p_col, &y_col, mask_threshold)?;
        masked_total += masked;
        per_horizon.push(HorizonMetrics {
            mae: mae(&p_col, &y_col)?,
            rmse: rmse(&p_col, &y_col)?,
            mape: mape_v,
            masked,
        });
    }
    let hcount = horizon as f64;
    let average = HorizonMetrics {
        mae: per_horizon.iter().map(|m| m.mae).sum::<f64>() / hcount,
        rmse: per_horizon.iter().map(|m| m.rmse).sum::<f64>() / hcount,
        mape: per_horizon.iter().map(|m| m.mape).sum::<f64>() / hcount,
        masked: masked_total,
    };
    Ok(MetricsReport {
        per_horizon,
        average,
        sample_count: preds.len() * n,
        masked_count: masked_total,
    })
}

/// Naive baseline: repeat the last observed raw flow across the horizon.
pub fn historical_last_baseline(sample: &WindowSample, horizon: usize) -> Tensor {
    let n = sample.last_raw.len();
    let mut out = Tensor::zeros(&[n, horizon]);
    for (ni, &v) in sample.last_raw.iter().enumerate() {
        for h in 0..horizon {
            *out.at2_mut(ni, h) = v;
        }
    }
    out
}

/// Raw-scale model predictions over a set of windows (parallel over
/// windows, read-only parameters).
pub fn predict_raw(
    params: &StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    samples: &[WindowSample],
) -> Result<Vec<Tensor>> {
    samples
        .par_iter()
        .map(|s| {
            let pred = model_forward(&dataset.feature(s), params, ops)?;
            Ok(dataset.denormalize_prediction(&pred))
        })
        .collect()
}

/// Test-split metrics of the model against raw targets.
pub fn evaluate_model(
    params: &StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    samples: &[WindowSample],
    mask_threshold: f64,
) -> Result<MetricsReport> {
    let preds = predict_raw(params, ops, dataset, samples)?;
    let targets: Vec<Tensor> = samples.iter().map(|s| s.target_raw.clone()).collect();
    evaluate_predictions(&preds, &targets, mask_threshold)
}

/// Baseline metrics over the same windows.
pub fn evaluate_baseline(
    dataset: &WindowedDataset,
    samples: &[WindowSample],
    mask_threshold: f64,
) -> Result<MetricsReport> {
    let preds: Vec<Tensor> = samples
        .iter()
        .map(|s| historical_last_baseline(s, dataset.horizon))
        .collect();
    let targets: Vec<Tensor> = samples.iter().map(|s| s.target_raw.clone()).collect();
    evaluate_predictions(&preds, &targets, mask_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation MAE.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            loss: LossKind::MeanAbsolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub diverged: bool,
}

/// Adaptive-moment optimizer with the standard two decay rates.
struct Adam {
    m: StModelParams,
    v: StModelParams,
    step_count: usize,
    lr: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &StModelParams, lr: f64) -> Self {
        let mut zero = params.clone();
        for t in zero.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        Adam {
            m: zero.clone(),
            v: zero,
            step_count: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut StModelParams, grads: &StModelParams) {
        self.step_count += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step_count as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step_count as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn mean_normalized_loss(
    params: &StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    samples: &[WindowSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid_input("no windows to evaluate"));
    }
    let losses: Result<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let pred = model_forward(&dataset.feature(s), params, ops)?;
            let target = dataset.normalize_target(&s.target_raw);
            let diff: f64 = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, y)| (p - y).abs())
                .sum();
            Ok(diff / pred.len() as f64)
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains with Adam and early stopping on validation MAE; the best
/// parameters seen on validation are restored before returning.
pub fn train(
    params: &mut StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::invalid_input(
            "training needs at least one train window and one validation window",
        ));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::invalid_config(
            "batch size and epoch cap must be positive",
        ));
    }
    let mut adam = Adam::new(params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut stale = 0usize;
    let mut diverged = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        // Fisher–Yates reshuffle each epoch, seeded once up front.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Per-window gradients in parallel on a read-only snapshot;
            // summation order is fixed by the batch index order.
            let results: Result<Vec<(f64, StModelParams)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &dataset.train[i];
                    let target = dataset.normalize_target(&s.target_raw);
                    model_backward(&dataset.feature(s), params, ops, &target, cfg.loss)
                })
                .collect();
            let results = match results {
                Ok(r) => r,
                Err(Error::Inconsistency(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let scale = 1.0 / batch.len() as f64;
            let mut grad_acc = results[0].1.clone();
            for t in grad_acc.tensors_mut() {
                t.scale_assign(scale);
            }
            loss_sum += results[0].0;
            for (loss, g) in &results[1..] {
                loss_sum += loss;
                grad_acc.add_scaled(g, scale);
            }
            loss_count += batch.len();
            if cfg.learning_rate != 0.0 {
                adam.step(params, &grad_acc);
            }
        }
        let train_mae = loss_sum / loss_count as f64;
        let val_mae = mean_normalized_loss(params, ops, dataset, &dataset.val)?;
        history.push(EpochStats {
            epoch,
            train_mae,
            val_mae,
        });
        if !train_mae.is_finite() || !val_mae.is_finite() {
            diverged = true;
            break;
        }
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *params = best_params;
    Ok(TrainResult {
        history,
        best_epoch,
        best_val_mae: best_val,
        diverged,
    })
}

/// Difference in metrics caused by zeroing feature channels in the
/// (normalized) inputs: ablated − intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    /// 1-based mode index, lowest frequency first.
    pub mode: usize,
    pub per_horizon: Vec<HorizonMetrics>,
    pub average: HorizonMetrics,
}

fn zero_channels(samples: &[WindowSample], channels: &[usize]) -> Vec<WindowSample> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            let shape = out.input.shape().to_vec();
            let (n, _d, t) = (shape[0], shape[1], shape[2]);
            for &c in channels {
                for ni in 0..n {
                    for ti in 0..t {
                        *out.input.at3_mut(ni, c, ti) = 0.0;
                    }
                }
            }
            out
        })
        .collect()
}

fn metrics_delta(
    ablated: &MetricsReport,
    intact: &MetricsReport,
) -> (Vec<HorizonMetrics>, HorizonMetrics) {
    let per_horizon = ablated
        .per_horizon
        .iter()
        .zip(&intact.per_horizon)
        .map(|(a, b)| HorizonMetrics {
            mae: a.mae - b.mae,
            rmse: a.rmse - b.rmse,
            mape: a.mape - b.mape,
            masked: a.masked,
        })
        .collect();
    let average = HorizonMetrics {
        mae: ablated.average.mae - intact.average.mae,
        rmse: ablated.average.rmse - intact.average.rmse,
        mape: ablated.average.mape - intact.average.mape,
        masked: ablated.average.masked,
    };
    (per_horizon, average)
}

/// Zeroes the k-th mode channel (1-based) in every window and reports
/// the signed metric change against intact inputs.
pub fn ablate_mode(
    params: &StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    samples: &[WindowSample],
    mode: usize,
    mask_threshold: f64,
) -> Result<AblationDelta> {
    let channel = dataset
        .channel_map
        .iter()
        .position(|c| *c == ChannelLabel::Mode(mode))
        .ok_or_else(|| Error::invalid_input(format!("mode {mode} is not a feature channel")))?;
    let intact = evaluate_model(params, ops, dataset, samples, mask_threshold)?;
    let ablated_samples = zero_channels(samples, &[channel]);
    let ablated = evaluate_model(params, ops, dataset, &ablated_samples, mask_threshold)?;
    let (per_horizon, average) = metrics_delta(&ablated, &intact);
    Ok(AblationDelta {
        mode,
        per_horizon,
        average,
    })
}

/// Zeroes every mode channel simultaneously; returns (ablated, intact).
pub fn ablate_all_modes(
    params: &StModelParams,
    ops: &SpectralOps,
    dataset: &WindowedDataset,
    samples: &[WindowSample],
    mask_threshold: f64,
) -> Result<(MetricsReport, MetricsReport)> {
    let channels: Vec<usize> = dataset
        .channel_map
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, ChannelLabel::Mode(_)))
        .map(|(i, _)| i)
        .collect();
    let intact = evaluate_model(params, ops, dataset, samples, mask_threshold)?;
    let ablated_samples = zero_channels(samples, &channels);
    let ablated = evaluate_model(params, ops, dataset, &ablated_samples, mask_threshold)?;
    Ok((ablated, intact))
}

/// Mean absolute difference of the summed reconstructions of two
/// decompositions of the same signal: (1/L)·Σ_t |Σ_i a_i(t) − Σ_i b_i(t)|.
pub fn mode_divergence(a: &ModeSet, b: &ModeSet) -> Result<f64> {
    if a.num_modes() != b.num_modes() || a.len() != b.len() {
        return Err(Error::shape_mismatch(format!(
            "mode sets {}×{} vs {}×{}",
            a.num_modes(),
            a.len(),
            b.num_modes(),
            b.len()
        )));
    }
    let ra = a.reconstruction();
    let rb = b.reconstruction();
    Ok(ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ra.len() as f64)
}

/// Everything needed to run decomposition → features → training →
/// evaluation end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub vmd: VmdConfig,
    pub variant: Variant,
    pub window: usize,
    pub horizon: usize,
    pub blocks: usize,
    pub cheb_order: usize,
    pub channels: usize,
    pub time_kernel: usize,
    pub train: TrainConfig,
    pub mask_threshold: f64,
    /// Remove the highest-frequency mode from the features (and from the
    /// reconstruction-loss accounting).
    pub drop_highest_mode: bool,
}

pub struct PipelineOutcome {
    pub mode_sets: Vec<ModeSet>,
    pub dataset: WindowedDataset,
    pub params: StModelParams,
    pub train_result: TrainResult,
    pub test_report: MetricsReport,
    /// Mean over nodes of mean|φ|/(max−min): scale-free reconstruction
    /// loss of the decomposition actually fed to the model.
    pub reconstruction_loss: f64,
}

/// Decomposes, assembles features, windows, trains, and evaluates on the
/// test split.
pub fn run_pipeline(
    series: &[TimeSeries],
    ops: &SpectralOps,
    settings: &PipelineSettings,
) -> Result<PipelineOutcome> {
    let mode_sets = decompose_all(series, &settings.vmd)?;
    run_pipeline_with_modes(series, mode_sets, ops, settings)
}

/// Same pipeline, reusing an existing decomposition (e.g. from a cache).
pub fn run_pipeline_with_modes(
    series: &[TimeSeries],
    mut mode_sets: Vec<ModeSet>,
    ops: &SpectralOps,
    settings: &PipelineSettings,
) -> Result<PipelineOutcome> {
    if mode_sets.len() != series.len() {
        return Err(Error::invalid_input(format!(
            "{} mode sets for {} series",
            mode_sets.len(),
            series.len()
        )));
    }
    if settings.drop_highest_mode {
        for ms in &mut mode_sets {
            if ms.num_modes() <= 1 {
                return Err(Error::invalid_config(
                    "cannot drop the highest mode of a single-mode decomposition",
                ));
            }
            ms.modes.pop();
            ms.omegas.pop();
        }
    }

    let mut recon_acc = 0.0;
    let mut phis = Vec::with_capacity(series.len());
    for (s, ms) in series.iter().zip(&mode_sets) {
        let phi = redemption(s, ms)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        recon_acc += phi.iter().map(|v| v.abs()).sum::<f64>() / phi.len() as f64 / range;
        phis.push(phi);
    }
    let reconstruction_loss = recon_acc / series.len() as f64;

    let nodes: Vec<NodeSignals> = series
        .iter()
        .zip(&mode_sets)
        .zip(&phis)
        .map(|((raw, modes), phi)| NodeSignals { modes, raw, phi })
        .collect();
    let dataset = make_windows(
        &nodes,
        settings.variant,
        settings.window,
        settings.horizon,
        &SplitSpec::standard(),
    )?;

    let model_cfg = ModelConfig {
        num_nodes: series.len(),
        input_channels: dataset.channel_map.len(),
        window: settings.window,
        horizon: settings.horizon,
        blocks: settings.blocks,
        cheb_order: settings.cheb_order,
        channels: settings.channels,
        time_kernel: settings.time_kernel,
    };
    let mut params = StModelParams::init(&model_cfg, settings.train.seed)?;
    let train_result = train(&mut params, ops, &dataset, &settings.train)?;
    let test_report = evaluate_model(
        &params,
        ops,
        &dataset,
        &dataset.test,
        settings.mask_threshold,
    )?;
    Ok(PipelineOutcome {
        mode_sets,
        dataset,
        params,
        train_result,
        test_report,
        reconstruction_loss,
    })
}

/// One sweep configuration: a label plus the settings overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub settings: PipelineSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub num_modes: usize,
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub variant: Variant,
    pub drop_highest_mode: bool,
    pub reconstruction_loss: Option<f64>,
    pub horizon3: Option<HorizonMetrics>,
    pub horizon6: Option<HorizonMetrics>,
    pub horizon12: Option<HorizonMetrics>,
    pub average: Option<HorizonMetrics>,
    pub status: String,
}

/// Trains and evaluates every entry; individual failures become rows
/// with an error status instead of aborting the sweep.
pub fn sweep(
    series: &[TimeSeries],
    ops: &SpectralOps,
    entries: &[SweepEntry],
) -> Result<Vec<SweepRow>> {
    if entries.is_empty() {
        return Err(Error::invalid_input(
            "sweep needs at least one configuration",
        ));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let s = &entry.settings;
        let mut row = SweepRow {
            label: entry.label.clone(),
            num_modes: s.vmd.num_modes,
            alpha: s.vmd.alpha,
            tau: s.vmd.tau,
            epsilon: s.vmd.epsilon,
            variant: s.variant,
            drop_highest_mode: s.drop_highest_mode,
            reconstruction_loss: None,
            horizon3: None,
            horizon6: None,
            horizon12: None,
            average: None,
            status: "ok".into(),
        };
        match run_pipeline(series, ops, s) {
            Ok(outcome) => {
                row.reconstruction_loss = Some(outcome.reconstruction_loss);
                row.horizon3 = outcome.test_report.horizon(3).cloned();
                row.horizon6 = outcome.test_report.horizon(6).cloned();
                row.horizon12 = outcome.test_report.horizon(12).cloned();
                row.average = Some(outcome.test_report.average.clone());
            }
            Err(e) => {
                row.status = format!("failed: {e}");
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "label,num_modes,alpha,tau,epsilon,variant,drop_highest_mode,reconstruction_loss,mae_h3,rmse_h3,mape_h3,mae_h6,rmse_h6,mape_h6,mae_h12,rmse_h12,mape_h12,mae_avg,rmse_avg,mape_avg,status";

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    let cell = |m: &Option<HorizonMetrics>, pick: fn(&HorizonMetrics) -> f64| -> String {
        m.as_ref().map(|v| pick(v).to_string()).unwrap_or_default()
    };
    for r in rows {
        let variant = match r.variant {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.num_modes,
            r.alpha,
            r.tau,
            r.epsilon,
            variant,
            r.drop_highest_mode,
            r.reconstruction_loss
                .map(|v| v.to_string())
                .unwrap_or_default(),
            cell(&r.horizon3, |m| m.mae),
            cell(&r.horizon3, |m| m.rmse),
            cell(&r.horizon3, |m| m.mape),
            cell(&r.horizon6, |m| m.mae),
            cell(&r.horizon6, |m| m.rmse),
            cell(&r.horizon6, |m| m.mape),
            cell(&r.horizon12, |m| m.mae),
            cell(&r.horizon12, |m| m.rmse),
            cell(&r.horizon12, |m| m.mape),
            cell(&r.average, |m| m.mae),
            cell(&r.average, |m| m.rmse),
            cell(&r.average, |m| m.mape),
            r.status,
        )?;
    }
    Ok(())
}

/// `history.csv`: epoch, train MAE, validation MAE.
pub fn write_history_csv(history: &[EpochStats], out: &mut impl Write) -> Result<()> {
    writeln!(out, "epoch,train_mae,val_mae")?;
    for h in history {
        writeln!(out, "{},{},{}", h.epoch, h.train_mae, h.val_mae)?;
    }
    Ok(())
}

/// `ablation.csv`: mode index, horizon, and signed metric deltas.
pub fn write_ablation_csv(deltas: &[AblationDelta], out: &mut impl Write) -> Result<()> {
    writeln!(out, "mode,horizon,delta_mae,delta_rmse,delta_mape")?;
    for d in deltas {
        for (h, m) in d.per_horizon.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", d.mode, h + 1, m.mae, m.rmse, m.mape)?;
        }
    }
    Ok(())
}

/// `metrics.json` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsExport {
    pub config_fingerprint: String,
    pub seed: u64,
    pub report: MetricsReport,
}

pub fn write_metrics_json(export: &MetricsExport, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, export)
        .map_err(|e| Error::Inconsistency(format!("metrics serialization: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `forecasts.csv`: node_id, origin_timestamp, horizon_step, y_true, y_pred.
pub fn write_forecasts_csv(
    dataset: &WindowedDataset,
    samples: &[WindowSample],
    preds: &[Tensor],
    out: &mut impl Write,
) -> Result<()> {
    if samples.len() != preds.len() {
        return Err(Error::invalid_input(format!(
            "{} windows but {} prediction tensors",
            samples.len(),
            preds.len()
        )));
    }
    writeln!(out, "node_id,origin_timestamp,horizon_step,y_true,y_pred")?;
    for (s, p) in samples.iter().zip(preds) {
        for (ni, node) in dataset.node_ids.iter().enumerate() {
            for h in 0..dataset.horizon {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    node,
                    s.origin_timestamp.unix_seconds(),
                    h + 1,
                    s.target_raw.at2(ni, h),
                    p.at2(ni, h)
                )?;
            }
        }
    }
    Ok(())
}
