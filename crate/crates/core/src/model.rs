//! The attention-based spatio-temporal graph convolutional forecaster.
//!
//! Each ST block rescales its input along time with a learned temporal
//! attention, computes a spatial attention over nodes, filters with an
//! attention-masked Chebyshev graph convolution, convolves along time,
//! and merges a 1×1-projected residual of the block input under layer
//! normalization. Stacked blocks feed a final projection that maps each
//! node's features to the forecast horizon.
//!
//! All forward paths run on the [`crate::autodiff`] tape, so the exact
//! gradients used in training come from the same code that produces
//! predictions.

use std::io::{Read, Write};
use std::ops::Range;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{LossKind, NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::SpectralOps;
use crate::spectral::TimeSeries;
use crate::tensor::Tensor;
use crate::vmd::ModeSet;

/// Feature-set variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raw signal + modes + calendar features.
    V1,
    /// Modes + calendar features.
    V2,
    /// Residual φ + modes + calendar features.
    V3,
}

/// What a feature channel holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLabel {
    /// 1-based mode index, lowest center frequency first.
    Mode(usize),
    TimeOfDay,
    DayOfWeek,
    Signal,
    Phi,
}

/// Model input over one window: data is [N, d, T_w].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub data: Tensor,
    pub channel_map: Vec<ChannelLabel>,
}

/// Per-node inputs to feature assembly.
pub struct NodeSignals<'a> {
    pub modes: &'a ModeSet,
    pub raw: &'a TimeSeries,
    pub phi: &'a [f64],
}

/// Stacks mode, calendar, and variant-specific channels for all nodes
/// over `window`. Channel order: mode_1..mode_K, time_of_day,
/// day_of_week, then the raw signal (v1) or φ (v3).
pub fn assemble_features(
    nodes: &[NodeSignals],
    variant: Variant,
    window: Range<usize>,
) -> Result<FeatureTensor> {
    if nodes.is_empty() {
        return Err(Error::invalid_input("no nodes to assemble"));
    }
    let k = nodes[0].modes.num_modes();
    let len = nodes[0].raw.len();
    for ns in nodes {
        if ns.modes.num_modes() != k {
            return Err(Error::invalid_config(format!(
                "node `{}` has {} modes, expected {k}",
                ns.raw.node_id,
                ns.modes.num_modes()
            )));
        }
        if ns.raw.len() != len || ns.modes.len() != len || ns.phi.len() != len {
            return Err(Error::invalid_input(format!(
                "node `{}` signals disagree on length",
                ns.raw.node_id
            )));
        }
        if ns.raw.start_time != nodes[0].raw.start_time
            || ns.raw.step_seconds != nodes[0].raw.step_seconds
        {
            return Err(Error::invalid_input(format!(
                "node `{}` clock differs from node `{}`",
                ns.raw.node_id, nodes[0].raw.node_id
            )));
        }
    }
    if window.end > len || window.start >= window.end {
        return Err(Error::invalid_input(format!(
            "window {window:?} out of bounds for length {len}"
        )));
    }

    let mut channel_map: Vec<ChannelLabel> = (1..=k).map(ChannelLabel::Mode).collect();
    channel_map.push(ChannelLabel::TimeOfDay);
    channel_map.push(ChannelLabel::DayOfWeek);
    match variant {
        Variant::V1 => channel_map.push(ChannelLabel::Signal),
        Variant::V2 => {}
        Variant::V3 => channel_map.push(ChannelLabel::Phi),
    }

    let n = nodes.len();
    let d = channel_map.len();
    let t_w = window.len();
    let mut data = Tensor::zeros(&[n, d, t_w]);
    for (ni, ns) in nodes.iter().enumerate() {
        for (ti, t) in window.clone().enumerate() {
            for ki in 0..k {
                *data.at3_mut(ni, ki, ti) = ns.modes.modes[ki][t];
            }
            let ts = ns.raw.timestamp_at(t);
            *data.at3_mut(ni, k, ti) = ts.time_of_day();
            *data.at3_mut(ni, k + 1, ti) = ts.day_of_week() as f64 / 6.0;
            match variant {
                Variant::V1 => *data.at3_mut(ni, k + 2, ti) = ns.raw.values[t],
                Variant::V2 => {}
                Variant::V3 => *data.at3_mut(ni, k + 2, ti) = ns.phi[t],
            }
        }
    }
    Ok(FeatureTensor { data, channel_map })
}

/// Shape configuration of the stacked model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_nodes: usize,
    /// Input channels d of the first block.
    pub input_channels: usize,
    /// Observed window length T_w.
    pub window: usize,
    /// Forecast horizon N_H.
    pub horizon: usize,
    /// Number of stacked ST blocks.
    pub blocks: usize,
    /// Chebyshev order M.
    pub cheb_order: usize,
    /// Channels per block output.
    pub channels: usize,
    /// Time-convolution kernel width K_w.
    pub time_kernel: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0
            || self.input_channels == 0
            || self.window == 0
            || self.horizon == 0
            || self.blocks == 0
            || self.cheb_order == 0
            || self.channels == 0
            || self.time_kernel == 0
        {
            return Err(Error::invalid_config("model dimensions must be positive"));
        }
        if self.time_kernel > self.window {
            return Err(Error::invalid_config(format!(
                "time kernel {} wider than window {}",
                self.time_kernel, self.window
            )));
        }
        Ok(())
    }

    fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.input_channels
        } else {
            self.channels
        }
    }
}

/// Learnable tensors of one ST block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StBlockParams {
    pub v_s: Tensor,
    pub b_s: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub w3: Tensor,
    pub v_e: Tensor,
    pub b_e: Tensor,
    pub u1: Tensor,
    pub u2: Tensor,
    pub u3: Tensor,
    pub theta: Tensor,
    pub time_kernel: Tensor,
    pub residual: Tensor,
}

/// All learnable tensors of the stacked model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StModelParams {
    pub blocks: Vec<StBlockParams>,
    pub final_w: Tensor,
    pub final_b: Tensor,
}

impl StBlockParams {
    fn zeros(cfg: &ModelConfig, block: usize) -> Self {
        let (n, t, m, c) = (cfg.num_nodes, cfg.window, cfg.cheb_order, cfg.channels);
        let d = cfg.block_in_channels(block);
        StBlockParams {
            v_s: Tensor::zeros(&[n, n]),
            b_s: Tensor::zeros(&[n, n]),
            w1: Tensor::zeros(&[t]),
            w2: Tensor::zeros(&[d, t]),
            w3: Tensor::zeros(&[d]),
            v_e: Tensor::zeros(&[t, t]),
            b_e: Tensor::zeros(&[t, t]),
            u1: Tensor::zeros(&[n]),
            u2: Tensor::zeros(&[n, d]),
            u3: Tensor::zeros(&[d]),
            theta: Tensor::zeros(&[m, d, c]),
            time_kernel: Tensor::zeros(&[c, c, cfg.time_kernel]),
            residual: Tensor::zeros(&[d, c]),
        }
    }

    fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.v_s,
            &self.b_s,
            &self.w1,
            &self.w2,
            &self.w3,
            &self.v_e,
            &self.b_e,
            &self.u1,
            &self.u2,
            &self.u3,
            &self.theta,
            &self.time_kernel,
            &self.residual,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.v_s,
            &mut self.b_s,
            &mut self.w1,
            &mut self.w2,
            &mut self.w3,
            &mut self.v_e,
            &mut self.b_e,
            &mut self.u1,
            &mut self.u2,
            &mut self.u3,
            &mut self.theta,
            &mut self.time_kernel,
            &mut self.residual,
        ]
    }
}

impl StModelParams {
    /// All-zero parameters with the right shapes.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|b| StBlockParams::zeros(cfg, b))
            .collect();
        Ok(StModelParams {
            blocks,
            final_w: Tensor::zeros(&[cfg.channels * cfg.window, cfg.horizon]),
            final_b: Tensor::zeros(&[cfg.horizon]),
        })
    }

    /// Seeded symmetric-uniform initialization scaled by fan-in; the
    /// attention biases start at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor, fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in t.data_mut() {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
        };
        let n = cfg.num_nodes;
        let t_w = cfg.window;
        for (b, block) in params.blocks.iter_mut().enumerate() {
            let d = cfg.block_in_channels(b);
            fill(&mut block.v_s, n);
            // b_s, b_e stay zero.
            fill(&mut block.w1, t_w);
            fill(&mut block.w2, d);
            fill(&mut block.w3, d);
            fill(&mut block.v_e, t_w);
            fill(&mut block.u1, n);
            fill(&mut block.u2, d);
            fill(&mut block.u3, d);
            fill(&mut block.theta, cfg.cheb_order * d);
            fill(&mut block.time_kernel, cfg.channels * cfg.time_kernel);
            fill(&mut block.residual, d);
        }
        fill(&mut params.final_w, cfg.channels * cfg.window);
        // final_b stays zero.
        Ok(params)
    }

    /// Parameter tensors in canonical (block-major) order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.final_w);
        out.push(&self.final_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_w);
        out.push(&mut self.final_b);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn add_scaled(&mut self, other: &StModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
    }
}

/// Tape node ids of one block's registered parameters.
struct BlockIds {
    v_s: NodeId,
    b_s: NodeId,
    w1: NodeId,
    w2: NodeId,
    w3: NodeId,
    v_e: NodeId,
    b_e: NodeId,
    u1: NodeId,
    u2: NodeId,
    u3: NodeId,
    theta: NodeId,
    time_kernel: NodeId,
    residual: NodeId,
}

impl BlockIds {
    fn flat(&self) -> [NodeId; 13] {
        [
            self.v_s,
            self.b_s,
            self.w1,
            self.w2,
            self.w3,
            self.v_e,
            self.b_e,
            self.u1,
            self.u2,
            self.u3,
            self.theta,
            self.time_kernel,
            self.residual,
        ]
    }
}

fn register_block(tape: &mut Tape, p: &StBlockParams) -> BlockIds {
    BlockIds {
        v_s: tape.input(p.v_s.clone()),
        b_s: tape.input(p.b_s.clone()),
        w1: tape.input(p.w1.clone()),
        w2: tape.input(p.w2.clone()),
        w3: tape.input(p.w3.clone()),
        v_e: tape.input(p.v_e.clone()),
        b_e: tape.input(p.b_e.clone()),
        u1: tape.input(p.u1.clone()),
        u2: tape.input(p.u2.clone()),
        u3: tape.input(p.u3.clone()),
        theta: tape.input(p.theta.clone()),
        time_kernel: tape.input(p.time_kernel.clone()),
        residual: tape.input(p.residual.clone()),
    }
}

/// S' = row-softmax(V_s·σ((X W₁)W₂(W₃X)ᵀ + b_s)).
fn build_spatial_attention(tape: &mut Tape, x: NodeId, ids: &BlockIds) -> Result<NodeId> {
    let lhs = tape.t3_dot_time(x, ids.w1)?;
    let lhs = tape.matmul(lhs, ids.w2)?;
    let rhs = tape.t3_dot_channel(x, ids.w3)?;
    let rhs = tape.transpose(rhs)?;
    let prod = tape.matmul(lhs, rhs)?;
    let prod = tape.add(prod, ids.b_s)?;
    let sig = tape.sigmoid(prod);
    let s = tape.matmul(ids.v_s, sig)?;
    tape.softmax_rows(s)
}

/// E' = row-softmax(V_e·σ((XᵀU₁)U₂ᵀ(U₃X) + b_e)).
fn build_temporal_attention(tape: &mut Tape, x: NodeId, ids: &BlockIds) -> Result<NodeId> {
    let nd = tape.t3_dot_node(x, ids.u1)?;
    let lhs = tape.transpose(nd)?;
    let u2t = tape.transpose(ids.u2)?;
    let lhs = tape.matmul(lhs, u2t)?;
    let rhs = tape.t3_dot_channel(x, ids.u3)?;
    let prod = tape.matmul(lhs, rhs)?;
    let prod = tape.add(prod, ids.b_e)?;
    let sig = tape.sigmoid(prod);
    let e = tape.matmul(ids.v_e, sig)?;
    tape.softmax_rows(e)
}

/// Temporal attention → spatial attention → masked Chebyshev filter →
/// rectifier → time convolution → residual merge under layer norm.
fn build_st_block(
    tape: &mut Tape,
    x: NodeId,
    ids: &BlockIds,
    basis: &Arc<Vec<Tensor>>,
) -> Result<NodeId> {
    let e_prime = build_temporal_attention(tape, x, ids)?;
    let x_t = tape.time_mix(x, e_prime)?;
    let s_prime = build_spatial_attention(tape, x_t, ids)?;
    let filtered = tape.cheb_conv(x_t, s_prime, ids.theta, Arc::clone(basis))?;
    let activated = tape.relu(filtered);
    let z = tape.time_conv(activated, ids.time_kernel, 1)?;
    let r = tape.conv1x1(x, ids.residual)?;
    let merged = tape.add(z, r)?;
    tape.layer_norm_channels(merged)
}

struct ModelGraph {
    output: NodeId,
    param_ids: Vec<NodeId>,
}

fn build_model(
    tape: &mut Tape,
    window: &Tensor,
    params: &StModelParams,
    ops: &SpectralOps,
) -> Result<ModelGraph> {
    let basis = Arc::new(ops.cheb_basis.clone());
    let mut param_ids = Vec::new();
    let mut x = tape.input(window.clone());
    for block in &params.blocks {
        let ids = register_block(tape, block);
        let next = build_st_block(tape, x, &ids, &basis)?;
        param_ids.extend(ids.flat());
        x = next;
    }
    let w = tape.input(params.final_w.clone());
    let b = tape.input(params.final_b.clone());
    let output = tape.final_proj(x, w, b)?;
    param_ids.push(w);
    param_ids.push(b);
    Ok(ModelGraph { output, param_ids })
}

/// Normalized spatial correlation matrix S' (rows sum to 1).
pub fn spatial_attention(x: &Tensor, p: &StBlockParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let ids = register_block(&mut tape, p);
    let s = build_spatial_attention(&mut tape, xid, &ids)?;
    Ok(tape.value(s).clone())
}

/// Normalized temporal correlation matrix E' (rows sum to 1).
pub fn temporal_attention(x: &Tensor, p: &StBlockParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let ids = register_block(&mut tape, p);
    let e = build_temporal_attention(&mut tape, xid, &ids)?;
    Ok(tape.value(e).clone())
}

/// Attention-masked Chebyshev filter Σ_m θ_m(T_m ⊙ S')x, without the
/// rectifier that follows it inside a block.
pub fn cheb_conv_attended(
    x: &Tensor,
    ops: &SpectralOps,
    s_prime: &Tensor,
    theta: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let sid = tape.input(s_prime.clone());
    let tid = tape.input(theta.clone());
    let out = tape.cheb_conv(xid, sid, tid, Arc::new(ops.cheb_basis.clone()))?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding preserving the window length at stride 1.
    Same,
    /// No padding; output shrinks per ⌊(T−K_w)/S_w⌋+1.
    Valid,
}

/// Convolution along the time axis per node. `Valid` padding is the
/// bench-mode variant used to check output-size arithmetic.
pub fn time_convolution(
    h: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    match padding {
        Padding::Same => {
            let mut tape = Tape::new();
            let hid = tape.input(h.clone());
            let kid = tape.input(kernel.clone());
            let out = tape.time_conv(hid, kid, stride)?;
            Ok(tape.value(out).clone())
        }
        Padding::Valid => {
            let (n, c_in, t) = match h.shape() {
                [n, c, t] => (*n, *c, *t),
                other => {
                    return Err(Error::shape_mismatch(format!(
                        "time convolution input {other:?}"
                    )))
                }
            };
            let (c_out, kc_in, k_w) = match kernel.shape() {
                [a, b, c] => (*a, *b, *c),
                other => {
                    return Err(Error::shape_mismatch(format!(
                        "time convolution kernel {other:?}"
                    )))
                }
            };
            if kc_in != c_in {
                return Err(Error::shape_mismatch(format!(
                    "kernel expects {kc_in} channels, input has {c_in}"
                )));
            }
            if k_w > t {
                return Err(Error::shape_mismatch(format!(
                    "kernel width {k_w} exceeds unpadded window {t}"
                )));
            }
            let t_out = crate::autodiff::conv_output_size(t, k_w, stride);
            let mut out = Tensor::zeros(&[n, c_out, t_out]);
            for i in 0..n {
                for co in 0..c_out {
                    for to in 0..t_out {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for kk in 0..k_w {
                                acc += kernel.at3(co, ci, kk) * h.at3(i, ci, to * stride + kk);
                            }
                        }
                        *out.at3_mut(i, co, to) = acc;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// One ST block applied outside of training.
pub fn st_block_forward(x: &Tensor, p: &StBlockParams, ops: &SpectralOps) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let ids = register_block(&mut tape, p);
    let basis = Arc::new(ops.cheb_basis.clone());
    let out = build_st_block(&mut tape, xid, &ids, &basis)?;
    Ok(tape.value(out).clone())
}

/// Forecast `horizon` steps for every node from one input window.
pub fn model_forward(
    window: &FeatureTensor,
    params: &StModelParams,
    ops: &SpectralOps,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let graph = build_model(&mut tape, &window.data, params, ops)?;
    Ok(tape.value(graph.output).clone())
}

/// Loss and exact parameter gradients for one window.
pub fn model_backward(
    window: &FeatureTensor,
    params: &StModelParams,
    ops: &SpectralOps,
    target: &Tensor,
    loss_kind: LossKind,
) -> Result<(f64, StModelParams)> {
    let mut tape = Tape::new();
    let graph = build_model(&mut tape, &window.data, params, ops)?;
    let loss = tape.loss_against(graph.output, target.clone(), loss_kind)?;
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(Error::Inconsistency(format!(
            "non-finite loss {loss_value}"
        )));
    }
    let grads = tape.backward(loss);
    let mut grad_params = params.clone();
    for (slot, id) in grad_params.tensors_mut().into_iter().zip(&graph.param_ids) {
        match &grads[*id] {
            Some(g) => *slot = g.clone(),
            None => *slot = Tensor::zeros(slot.shape()),
        }
    }
    Ok((loss_value, grad_params))
}

/// Self-describing checkpoint: config, seed, fingerprint, parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub fingerprint: u64,
    pub params: StModelParams,
}

impl Checkpoint {
    pub fn save(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *out, self)
            .map_err(|e| Error::Inconsistency(format!("checkpoint serialization: {e}")))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(input: &mut impl Read) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(input)
            .map_err(|e| Error::Inconsistency(format!("checkpoint parse: {e}")))?;
        let expected = StModelParams::zeros(&ck.config)?;
        for (have, want) in ck.params.tensors().iter().zip(expected.tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::shape_mismatch(format!(
                    "checkpoint tensor {:?} does not match config shape {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        if !ck.params.all_finite() {
            return Err(Error::Inconsistency(
                "checkpoint has non-finite values".into(),
            ));
        }
        Ok(ck)
    }
}
