//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A forward pass records coarse-grained tensor operations on a tape;
//! the backward pass walks the tape in reverse, handing each node's
//! output gradient to an op-specific rule that produces the parents'
//! gradients. Ops are tensor-granular (one node per matmul, not per
//! scalar), which keeps tape overhead negligible next to the arithmetic.
//!
//! Gradients accumulate in tape order, so repeated backward passes over
//! the same graph are bit-identical.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
}

/// Which scalar loss a graph terminates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanAbsolute,
    MeanSquared,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        backward: Option<BackwardFn>,
    ) -> NodeId {
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        self.nodes.len() - 1
    }

    /// Leaf node; gradients flow into it but not past it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.add(&self.nodes[b].value)?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.scale(c);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g, _, _| vec![g.scale(c)])),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(
            value,
            vec![a],
            Some(Box::new(|g, _, y| {
                vec![g
                    .zip_map(y, |gi, yi| gi * yi * (1.0 - yi))
                    .expect("shape fixed by forward")]
            })),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|x| x.max(0.0));
        self.push(
            value,
            vec![a],
            Some(Box::new(|g, parents, _| {
                vec![g
                    .zip_map(parents[0], |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                    .expect("shape fixed by forward")]
            })),
        )
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.nodes[a].value;
        if x.rank() != 2 {
            return Err(Error::shape_mismatch("softmax expects a matrix"));
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let mut value = Tensor::zeros(&[rows, cols]);
        for i in 0..rows {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..cols {
                mx = mx.max(x.at2(i, j));
            }
            let mut sum = 0.0;
            for j in 0..cols {
                let e = (x.at2(i, j) - mx).exp();
                *value.at2_mut(i, j) = e;
                sum += e;
            }
            for j in 0..cols {
                *value.at2_mut(i, j) /= sum;
            }
        }
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(move |g, _, y| {
                let mut dx = Tensor::zeros(&[rows, cols]);
                for i in 0..rows {
                    let mut dot = 0.0;
                    for j in 0..cols {
                        dot += g.at2(i, j) * y.at2(i, j);
                    }
                    for j in 0..cols {
                        *dx.at2_mut(i, j) = y.at2(i, j) * (g.at2(i, j) - dot);
                    }
                }
                vec![dx]
            })),
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.transposed()?;
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(|g, _, _| {
                vec![g.transposed().expect("gradient of a matrix is a matrix")]
            })),
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, parents, _| {
                let (a_val, b_val) = (parents[0], parents[1]);
                let da = g
                    .matmul(&b_val.transposed().expect("matrix"))
                    .expect("shapes fixed by forward");
                let db = a_val
                    .transposed()
                    .expect("matrix")
                    .matmul(g)
                    .expect("shapes fixed by forward");
                vec![da, db]
            })),
        ))
    }

    /// Contract a `[N,C,T]` tensor with a length-T vector: `out[n,c] = Σ_t x·w`.
    pub fn t3_dot_time(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        expect_vec(&self.nodes[w].value, t, "time-contraction weight")?;
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let mut value = Tensor::zeros(&[n, c]);
        for i in 0..n {
            for j in 0..c {
                let mut acc = 0.0;
                for k in 0..t {
                    acc += xv.at3(i, j, k) * wv.data()[k];
                }
                *value.at2_mut(i, j) = acc;
            }
        }
        Ok(self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, parents, _| {
                let (xv, wv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c, t]);
                let mut dw = Tensor::zeros(&[t]);
                for i in 0..n {
                    for j in 0..c {
                        let gi = g.at2(i, j);
                        for k in 0..t {
                            *dx.at3_mut(i, j, k) = gi * wv.data()[k];
                            dw.data_mut()[k] += gi * xv.at3(i, j, k);
                        }
                    }
                }
                vec![dx, dw]
            })),
        ))
    }

    /// Contract a `[N,C,T]` tensor with a length-C vector: `out[n,t] = Σ_c x·w`.
    pub fn t3_dot_channel(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        expect_vec(&self.nodes[w].value, c, "channel-contraction weight")?;
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let mut value = Tensor::zeros(&[n, t]);
        for i in 0..n {
            for j in 0..c {
                let wj = wv.data()[j];
                for k in 0..t {
                    *value.at2_mut(i, k) += wj * xv.at3(i, j, k);
                }
            }
        }
        Ok(self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, parents, _| {
                let (xv, wv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c, t]);
                let mut dw = Tensor::zeros(&[c]);
                for i in 0..n {
                    for j in 0..c {
                        let mut acc = 0.0;
                        for k in 0..t {
                            let gk = g.at2(i, k);
                            *dx.at3_mut(i, j, k) = gk * wv.data()[j];
                            acc += gk * xv.at3(i, j, k);
                        }
                        dw.data_mut()[j] += acc;
                    }
                }
                vec![dx, dw]
            })),
        ))
    }

    /// Contract a `[N,C,T]` tensor with a length-N vector: `out[c,t] = Σ_n x·w`.
    pub fn t3_dot_node(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        expect_vec(&self.nodes[w].value, n, "node-contraction weight")?;
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let mut value = Tensor::zeros(&[c, t]);
        for i in 0..n {
            let wi = wv.data()[i];
            for j in 0..c {
                for k in 0..t {
                    *value.at2_mut(j, k) += wi * xv.at3(i, j, k);
                }
            }
        }
        Ok(self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, parents, _| {
                let (xv, wv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c, t]);
                let mut dw = Tensor::zeros(&[n]);
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..c {
                        for k in 0..t {
                            let gk = g.at2(j, k);
                            *dx.at3_mut(i, j, k) = gk * wv.data()[i];
                            acc += gk * xv.at3(i, j, k);
                        }
                    }
                    dw.data_mut()[i] += acc;
                }
                vec![dx, dw]
            })),
        ))
    }

    /// Applies a time-mixing matrix to every (node, channel) row:
    /// `out[n,c,t] = Σ_{t'} x[n,c,t']·e[t,t']` — i.e. X·Eᵀ along time.
    pub fn time_mix(&mut self, x: NodeId, e: NodeId) -> Result<NodeId> {
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        if self.nodes[e].value.shape() != [t, t] {
            return Err(Error::shape_mismatch(format!(
                "time mixer {:?} for window {t}",
                self.nodes[e].value.shape()
            )));
        }
        let xv = &self.nodes[x].value;
        let ev = &self.nodes[e].value;
        let mut value = Tensor::zeros(&[n, c, t]);
        for i in 0..n {
            for j in 0..c {
                for to in 0..t {
                    let mut acc = 0.0;
                    for ti in 0..t {
                        acc += xv.at3(i, j, ti) * ev.at2(to, ti);
                    }
                    *value.at3_mut(i, j, to) = acc;
                }
            }
        }
        Ok(self.push(
            value,
            vec![x, e],
            Some(Box::new(move |g, parents, _| {
                let (xv, ev) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c, t]);
                let mut de = Tensor::zeros(&[t, t]);
                for i in 0..n {
                    for j in 0..c {
                        for to in 0..t {
                            let go = g.at3(i, j, to);
                            for ti in 0..t {
                                *dx.at3_mut(i, j, ti) += go * ev.at2(to, ti);
                                *de.at2_mut(to, ti) += go * xv.at3(i, j, ti);
                            }
                        }
                    }
                }
                vec![dx, de]
            })),
        ))
    }

    /// Attention-masked Chebyshev graph convolution:
    /// `out[:, co, t] = Σ_m (T_m ⊙ S) · X[:, :, t] · θ_m[:, co]`.
    pub fn cheb_conv(
        &mut self,
        x: NodeId,
        s: NodeId,
        theta: NodeId,
        basis: Arc<Vec<Tensor>>,
    ) -> Result<NodeId> {
        let (n, c_in, t) = dims3(&self.nodes[x].value)?;
        let theta_shape = self.nodes[theta].value.shape().to_vec();
        if theta_shape.len() != 3 || theta_shape[0] != basis.len() || theta_shape[1] != c_in {
            return Err(Error::shape_mismatch(format!(
                "chebyshev coefficients {:?} for basis of {} matrices and {c_in} input channels",
                theta_shape,
                basis.len()
            )));
        }
        if self.nodes[s].value.shape() != [n, n] {
            return Err(Error::shape_mismatch(format!(
                "attention mask {:?} for {n} nodes",
                self.nodes[s].value.shape()
            )));
        }
        for (m, b) in basis.iter().enumerate() {
            if b.shape() != [n, n] {
                return Err(Error::shape_mismatch(format!(
                    "basis matrix {m} has shape {:?}",
                    b.shape()
                )));
            }
        }
        let c_out = theta_shape[2];
        let order = basis.len();
        let xv = &self.nodes[x].value;
        let sv = &self.nodes[s].value;
        let thetav = &self.nodes[theta].value;

        let forward_basis = Arc::clone(&basis);
        let value = cheb_conv_forward(xv, sv, thetav, &forward_basis, n, c_in, c_out, t, order);

        Ok(self.push(
            value,
            vec![x, s, theta],
            Some(Box::new(move |g, parents, _| {
                let (xv, sv, thetav) = (parents[0], parents[1], parents[2]);
                let mut dx = Tensor::zeros(&[n, c_in, t]);
                let mut ds = Tensor::zeros(&[n, n]);
                let mut dtheta = Tensor::zeros(&[order, c_in, c_out]);
                for (m, t_m) in basis.iter().enumerate() {
                    // z_m[n',co,t] = Σ_ci x[n',ci,t]·θ_m[ci,co]
                    let mut z = Tensor::zeros(&[n, c_out, t]);
                    for np in 0..n {
                        for ci in 0..c_in {
                            let xval_row = ci;
                            for co in 0..c_out {
                                let th = thetav.at3(m, xval_row, co);
                                if th == 0.0 {
                                    continue;
                                }
                                for tt in 0..t {
                                    *z.at3_mut(np, co, tt) += xv.at3(np, ci, tt) * th;
                                }
                            }
                        }
                    }
                    for i in 0..n {
                        for np in 0..n {
                            let mask = t_m.at2(i, np);
                            if mask == 0.0 && sv.at2(i, np) == 0.0 {
                                continue;
                            }
                            let gm = mask * sv.at2(i, np);
                            // dS[i,n'] += T_m[i,n']·Σ_{co,t} g·z
                            let mut gz = 0.0;
                            for co in 0..c_out {
                                for tt in 0..t {
                                    gz += g.at3(i, co, tt) * z.at3(np, co, tt);
                                }
                            }
                            *ds.at2_mut(i, np) += mask * gz;
                            if gm == 0.0 {
                                continue;
                            }
                            // h_m[n',co,t] = Σ_i G_m[i,n']·g[i,co,t] folded
                            // directly into dx and dθ below.
                            for co in 0..c_out {
                                for tt in 0..t {
                                    let gc = gm * g.at3(i, co, tt);
                                    if gc == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c_in {
                                        *dx.at3_mut(np, ci, tt) += gc * thetav.at3(m, ci, co);
                                        *dtheta.at3_mut(m, ci, co) += gc * xv.at3(np, ci, tt);
                                    }
                                }
                            }
                        }
                    }
                }
                vec![dx, ds, dtheta]
            })),
        ))
    }

    /// 1-D convolution along time per node with 'same' zero padding and
    /// stride. Kernel is `[C_out, C_in, K_w]`.
    pub fn time_conv(&mut self, x: NodeId, kernel: NodeId, stride: usize) -> Result<NodeId> {
        let (n, c_in, t) = dims3(&self.nodes[x].value)?;
        let kshape = self.nodes[kernel].value.shape().to_vec();
        if kshape.len() != 3 || kshape[1] != c_in {
            return Err(Error::shape_mismatch(format!(
                "time-conv kernel {kshape:?} for {c_in} input channels"
            )));
        }
        let (c_out, k_w) = (kshape[0], kshape[2]);
        if stride == 0 {
            return Err(Error::invalid_config("conv stride must be positive"));
        }
        if k_w > t + k_w / 2 {
            return Err(Error::shape_mismatch(format!(
                "kernel width {k_w} exceeds padded window {t}"
            )));
        }
        let t_out = t.div_ceil(stride);
        let pad_total = ((t_out - 1) * stride + k_w).saturating_sub(t);
        let pad_left = pad_total / 2;

        let xv = &self.nodes[x].value;
        let kv = &self.nodes[kernel].value;
        let mut value = Tensor::zeros(&[n, c_out, t_out]);
        for i in 0..n {
            for co in 0..c_out {
                for to in 0..t_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for kk in 0..k_w {
                            let ti = (to * stride + kk) as isize - pad_left as isize;
                            if ti >= 0 && (ti as usize) < t {
                                acc += kv.at3(co, ci, kk) * xv.at3(i, ci, ti as usize);
                            }
                        }
                    }
                    *value.at3_mut(i, co, to) = acc;
                }
            }
        }
        Ok(self.push(
            value,
            vec![x, kernel],
            Some(Box::new(move |g, parents, _| {
                let (xv, kv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c_in, t]);
                let mut dk = Tensor::zeros(&[c_out, c_in, k_w]);
                for i in 0..n {
                    for co in 0..c_out {
                        for to in 0..t_out {
                            let go = g.at3(i, co, to);
                            if go == 0.0 {
                                continue;
                            }
                            for ci in 0..c_in {
                                for kk in 0..k_w {
                                    let ti = (to * stride + kk) as isize - pad_left as isize;
                                    if ti >= 0 && (ti as usize) < t {
                                        *dx.at3_mut(i, ci, ti as usize) += go * kv.at3(co, ci, kk);
                                        *dk.at3_mut(co, ci, kk) += go * xv.at3(i, ci, ti as usize);
                                    }
                                }
                            }
                        }
                    }
                }
                vec![dx, dk]
            })),
        ))
    }

    /// Pointwise channel projection (a 1×1 convolution): W is `[C_in, C_out]`.
    pub fn conv1x1(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, c_in, t) = dims3(&self.nodes[x].value)?;
        let wshape = self.nodes[w].value.shape().to_vec();
        if wshape.len() != 2 || wshape[0] != c_in {
            return Err(Error::shape_mismatch(format!(
                "1x1 projection {wshape:?} for {c_in} channels"
            )));
        }
        let c_out = wshape[1];
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let mut value = Tensor::zeros(&[n, c_out, t]);
        for i in 0..n {
            for ci in 0..c_in {
                for co in 0..c_out {
                    let wc = wv.at2(ci, co);
                    if wc == 0.0 {
                        continue;
                    }
                    for tt in 0..t {
                        *value.at3_mut(i, co, tt) += wc * xv.at3(i, ci, tt);
                    }
                }
            }
        }
        Ok(self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, parents, _| {
                let (xv, wv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c_in, t]);
                let mut dw = Tensor::zeros(&[c_in, c_out]);
                for i in 0..n {
                    for ci in 0..c_in {
                        for co in 0..c_out {
                            let mut acc = 0.0;
                            for tt in 0..t {
                                let go = g.at3(i, co, tt);
                                *dx.at3_mut(i, ci, tt) += go * wv.at2(ci, co);
                                acc += go * xv.at3(i, ci, tt);
                            }
                            *dw.at2_mut(ci, co) += acc;
                        }
                    }
                }
                vec![dx, dw]
            })),
        ))
    }

    /// Layer normalization over the channel axis per (node, time), no
    /// learned affine.
    pub fn layer_norm_channels(&mut self, x: NodeId) -> Result<NodeId> {
        const EPS: f64 = 1e-5;
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        let xv = &self.nodes[x].value;
        let mut value = Tensor::zeros(&[n, c, t]);
        for i in 0..n {
            for tt in 0..t {
                let mut mean = 0.0;
                for j in 0..c {
                    mean += xv.at3(i, j, tt);
                }
                mean /= c as f64;
                let mut var = 0.0;
                for j in 0..c {
                    let d = xv.at3(i, j, tt) - mean;
                    var += d * d;
                }
                var /= c as f64;
                let inv = 1.0 / (var + EPS).sqrt();
                for j in 0..c {
                    *value.at3_mut(i, j, tt) = (xv.at3(i, j, tt) - mean) * inv;
                }
            }
        }
        Ok(self.push(
            value,
            vec![x],
            Some(Box::new(move |g, parents, y| {
                let xv = parents[0];
                let mut dx = Tensor::zeros(&[n, c, t]);
                for i in 0..n {
                    for tt in 0..t {
                        let mut mean = 0.0;
                        for j in 0..c {
                            mean += xv.at3(i, j, tt);
                        }
                        mean /= c as f64;
                        let mut var = 0.0;
                        for j in 0..c {
                            let d = xv.at3(i, j, tt) - mean;
                            var += d * d;
                        }
                        var /= c as f64;
                        let inv = 1.0 / (var + EPS).sqrt();
                        let mut g_mean = 0.0;
                        let mut gy_mean = 0.0;
                        for j in 0..c {
                            g_mean += g.at3(i, j, tt);
                            gy_mean += g.at3(i, j, tt) * y.at3(i, j, tt);
                        }
                        g_mean /= c as f64;
                        gy_mean /= c as f64;
                        for j in 0..c {
                            *dx.at3_mut(i, j, tt) =
                                inv * (g.at3(i, j, tt) - g_mean - y.at3(i, j, tt) * gy_mean);
                        }
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// Final projection: flattens each node's `[C,T]` block and applies a
    /// shared linear map to the horizon width. W is `[C·T, H]`, b is `[H]`.
    pub fn final_proj(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, c, t) = dims3(&self.nodes[x].value)?;
        let wshape = self.nodes[w].value.shape().to_vec();
        if wshape.len() != 2 || wshape[0] != c * t {
            return Err(Error::shape_mismatch(format!(
                "final projection {wshape:?} for {c}x{t} features"
            )));
        }
        let h = wshape[1];
        expect_vec(&self.nodes[b].value, h, "final projection bias")?;
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let bv = &self.nodes[b].value;
        let mut value = Tensor::zeros(&[n, h]);
        for i in 0..n {
            for hh in 0..h {
                let mut acc = bv.data()[hh];
                for f in 0..c * t {
                    acc += xv.data()[i * c * t + f] * wv.at2(f, hh);
                }
                *value.at2_mut(i, hh) = acc;
            }
        }
        Ok(self.push(
            value,
            vec![x, w, b],
            Some(Box::new(move |g, parents, _| {
                let (xv, wv) = (parents[0], parents[1]);
                let mut dx = Tensor::zeros(&[n, c, t]);
                let mut dw = Tensor::zeros(&[c * t, h]);
                let mut db = Tensor::zeros(&[h]);
                for i in 0..n {
                    for hh in 0..h {
                        let go = g.at2(i, hh);
                        if go == 0.0 {
                            continue;
                        }
                        db.data_mut()[hh] += go;
                        for f in 0..c * t {
                            dx.data_mut()[i * c * t + f] += go * wv.at2(f, hh);
                            *dw.at2_mut(f, hh) += go * xv.data()[i * c * t + f];
                        }
                    }
                }
                vec![dx, dw, db]
            })),
        ))
    }

    /// Scalar loss of a prediction against a fixed target.
    pub fn loss_against(&mut self, pred: NodeId, target: Tensor, kind: LossKind) -> Result<NodeId> {
        if self.nodes[pred].value.shape() != target.shape() {
            return Err(Error::shape_mismatch(format!(
                "loss of {:?} against target {:?}",
                self.nodes[pred].value.shape(),
                target.shape()
            )));
        }
        let count = target.len() as f64;
        let pv = &self.nodes[pred].value;
        let loss = match kind {
            LossKind::MeanAbsolute => {
                pv.data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, y)| (p - y).abs())
                    .sum::<f64>()
                    / count
            }
            LossKind::MeanSquared => {
                pv.data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, y)| (p - y) * (p - y))
                    .sum::<f64>()
                    / count
            }
        };
        Ok(self.push(
            Tensor::scalar(loss),
            vec![pred],
            Some(Box::new(move |g, parents, _| {
                let scale = g.item() / count;
                let dp = parents[0]
                    .zip_map(&target, |p, y| match kind {
                        LossKind::MeanAbsolute => {
                            let d = p - y;
                            if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        }
                        LossKind::MeanSquared => 2.0 * (p - y) * scale,
                    })
                    .expect("shape checked at construction");
                vec![dp]
            })),
        ))
    }

    /// Gradients of `loss` with respect to every node, indexed by node id.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(back) = &node.backward {
                let parent_vals: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let deltas = back(&g, &parent_vals, &node.value);
                debug_assert_eq!(deltas.len(), node.parents.len());
                for (&p, d) in node.parents.iter().zip(deltas) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&d),
                        slot @ None => *slot = Some(d),
                    }
                }
            }
            grads[id] = Some(g);
        }
        grads
    }
}

#[allow(clippy::too_many_arguments)]
fn cheb_conv_forward(
    xv: &Tensor,
    sv: &Tensor,
    thetav: &Tensor,
    basis: &[Tensor],
    n: usize,
    c_in: usize,
    c_out: usize,
    t: usize,
    _order: usize,
) -> Tensor {
    let mut value = Tensor::zeros(&[n, c_out, t]);
    for (m, t_m) in basis.iter().enumerate() {
        // z_m[n',co,t] = Σ_ci x[n',ci,t]·θ_m[ci,co]
        let mut z = Tensor::zeros(&[n, c_out, t]);
        for np in 0..n {
            for ci in 0..c_in {
                for co in 0..c_out {
                    let th = thetav.at3(m, ci, co);
                    if th == 0.0 {
                        continue;
                    }
                    for tt in 0..t {
                        *z.at3_mut(np, co, tt) += xv.at3(np, ci, tt) * th;
                    }
                }
            }
        }
        // out[i] += Σ_{n'} (T_m ⊙ S)[i,n']·z[n']
        for i in 0..n {
            for np in 0..n {
                let gm = t_m.at2(i, np) * sv.at2(i, np);
                if gm == 0.0 {
                    continue;
                }
                for co in 0..c_out {
                    for tt in 0..t {
                        *value.at3_mut(i, co, tt) += gm * z.at3(np, co, tt);
                    }
                }
            }
        }
    }
    value
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    if t.rank() != 3 {
        return Err(Error::shape_mismatch(format!(
            "expected a rank-3 tensor, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1], t.shape()[2]))
}

fn expect_vec(t: &Tensor, len: usize, what: &str) -> Result<()> {
    if t.shape() != [len] {
        return Err(Error::shape_mismatch(format!(
            "{what} must be a length-{len} vector, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Size of an unpadded strided convolution output: ⌊(input−kernel)/stride⌋+1.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}
