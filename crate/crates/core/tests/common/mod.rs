//! Independent oracles shared by the integration suites: brute-force
//! transforms, a literal transcription of the alternating decomposition,
//! a dense Jacobi eigensolver, and a straight-line (tape-free) model
//! forward. None of these call into the production implementation paths
//! they are used to check.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modecast::graph::SpectralOps;
use modecast::model::{StBlockParams, StModelParams};
use modecast::spectral::TimeSeries;
use modecast::tensor::Tensor;
use modecast::timestamp::Timestamp;
use modecast::vmd::VmdConfig;

pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (m as f64) * (t as f64) / n as f64;
                acc += v * Complex64::new(ang.cos(), ang.sin());
            }
            acc
        })
        .collect()
}

pub fn naive_inverse_dft_real(bins: &[Complex64]) -> Vec<f64> {
    let n = bins.len();
    (0..n)
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, &b) in bins.iter().enumerate() {
                let ang = 2.0 * PI * (m as f64) * (t as f64) / n as f64;
                acc += b * Complex64::new(ang.cos(), ang.sin());
            }
            acc.re / n as f64
        })
        .collect()
}

pub struct NaiveVmdResult {
    pub modes: Vec<Vec<f64>>,
    pub omegas: Vec<f64>,
    pub iterations: usize,
}

/// Literal transcription of the alternating decomposition: mirror the
/// signal, take the naive DFT, keep ω ≥ 0, then sweep mode and center
/// frequency updates with explicit previous/current arrays and a dual
/// ascent step, until the relative spectral change drops below epsilon.
pub fn naive_vmd(values: &[f64], cfg: &VmdConfig) -> NaiveVmdResult {
    let len = values.len();
    let k = cfg.num_modes;

    // Mirror both ends: reversed first ⌊L/2⌋, signal, reversed last ⌈L/2⌉.
    let half = len / 2;
    let mut mirrored = Vec::with_capacity(2 * len);
    mirrored.extend(values[..half].iter().rev());
    mirrored.extend_from_slice(values);
    mirrored.extend(values[half..].iter().rev());
    let ext = mirrored.len();

    let full = naive_dft(&mirrored);
    let bins = ext / 2 + 1;
    let f_hat: Vec<Complex64> = full[..bins].to_vec();
    let freq: Vec<f64> = (0..bins).map(|m| m as f64 / ext as f64).collect();

    let mut omegas: Vec<f64> = (0..k).map(|i| 0.5 * i as f64 / k as f64).collect();
    let mut prev: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); bins]; k];
    let mut cur: Vec<Vec<Complex64>> = prev.clone();
    let mut lambda = vec![Complex64::new(0.0, 0.0); bins];

    let mut iterations = 0;
    for sweep in 0..cfg.max_iter {
        prev.clone_from(&cur);
        let omegas_prev = omegas.clone();
        for ki in 0..k {
            for m in 0..bins {
                let mut sum_done = Complex64::new(0.0, 0.0);
                for updated in cur.iter().take(ki) {
                    sum_done += updated[m];
                }
                let mut sum_todo = Complex64::new(0.0, 0.0);
                for pending in prev.iter().take(k).skip(ki + 1) {
                    sum_todo += pending[m];
                }
                let numer = f_hat[m] - sum_done - sum_todo + lambda[m] * 0.5;
                let d = freq[m] - omegas_prev[ki];
                cur[ki][m] = numer / (1.0 + 2.0 * cfg.alpha * d * d);
            }
            let mut weighted = 0.0;
            let mut total = 0.0;
            for m in 0..bins {
                let p = cur[ki][m].norm_sqr();
                weighted += freq[m] * p;
                total += p;
            }
            if total > 1e-30 {
                omegas[ki] = weighted / total;
            }
        }
        if cfg.tau != 0.0 {
            for m in 0..bins {
                let mut sum = Complex64::new(0.0, 0.0);
                for mode in cur.iter() {
                    sum += mode[m];
                }
                lambda[m] += cfg.tau * (f_hat[m] - sum);
            }
        }
        iterations = sweep + 1;
        if sweep > 0 {
            let mut metric = 0.0;
            for ki in 0..k {
                let denom: f64 = prev[ki].iter().map(|v| v.norm_sqr()).sum();
                if denom < 1e-30 {
                    continue;
                }
                let num: f64 = prev[ki]
                    .iter()
                    .zip(&cur[ki])
                    .map(|(a, b)| (b - a).norm_sqr())
                    .sum();
                metric += num / denom;
            }
            if metric < cfg.epsilon {
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| omegas[a].partial_cmp(&omegas[b]).unwrap());

    let mut modes = Vec::with_capacity(k);
    for &ki in &order {
        let mut spectrum = vec![Complex64::new(0.0, 0.0); ext];
        spectrum[..bins].copy_from_slice(&cur[ki]);
        for m in 1..ext.div_ceil(2) {
            spectrum[ext - m] = cur[ki][m].conj();
        }
        let time = naive_inverse_dft_real(&spectrum);
        let start = len / 2;
        modes.push(time[start..start + len].to_vec());
    }
    NaiveVmdResult {
        modes,
        omegas: order.iter().map(|&i| omegas[i]).collect(),
        iterations,
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors-as-columns), unsorted.
pub fn jacobi_eigen(a: &Tensor) -> (Vec<f64>, Tensor) {
    let n = a.shape()[0];
    let mut m = a.clone();
    let mut vecs = Tensor::eye(n);
    for _ in 0..200 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m.at2(p, q).abs());
            }
        }
        if off < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at2(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.at2(q, q) - m.at2(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m.at2(i, p);
                    let miq = m.at2(i, q);
                    *m.at2_mut(i, p) = c * mip - s * miq;
                    *m.at2_mut(i, q) = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m.at2(p, j);
                    let mqj = m.at2(q, j);
                    *m.at2_mut(p, j) = c * mpj - s * mqj;
                    *m.at2_mut(q, j) = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = vecs.at2(i, p);
                    let viq = vecs.at2(i, q);
                    *vecs.at2_mut(i, p) = c * vip - s * viq;
                    *vecs.at2_mut(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    ((0..n).map(|i| m.at2(i, i)).collect(), vecs)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_rows_inplace(m: &mut Tensor) {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    for i in 0..rows {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..cols {
            mx = mx.max(m.at2(i, j));
        }
        let mut sum = 0.0;
        for j in 0..cols {
            let e = (m.at2(i, j) - mx).exp();
            *m.at2_mut(i, j) = e;
            sum += e;
        }
        for j in 0..cols {
            *m.at2_mut(i, j) /= sum;
        }
    }
}

/// Straight-line, tape-free re-implementation of one ST block.
pub fn straightline_block(x: &Tensor, p: &StBlockParams, ops: &SpectralOps) -> Tensor {
    let (n, d, t_w) = (x.shape()[0], x.shape()[1], x.shape()[2]);

    // Temporal attention: E = V_e·σ((XᵀU₁)U₂ᵀ(U₃X) + b_e).
    let mut lhs = Tensor::zeros(&[t_w, n]);
    for to in 0..t_w {
        for ni in 0..n {
            // (XᵀU₁): contract nodes → [d, T]; transpose → [T, d]; ·U₂ᵀ.
            let mut acc = 0.0;
            for c in 0..d {
                let mut nd = 0.0;
                for i in 0..n {
                    nd += x.at3(i, c, to) * p.u1.data()[i];
                }
                acc += nd * p.u2.at2(ni, c);
            }
            *lhs.at2_mut(to, ni) = acc;
        }
    }
    let mut rhs = Tensor::zeros(&[n, t_w]);
    for i in 0..n {
        for to in 0..t_w {
            let mut acc = 0.0;
            for c in 0..d {
                acc += p.u3.data()[c] * x.at3(i, c, to);
            }
            *rhs.at2_mut(i, to) = acc;
        }
    }
    let mut e_pre = Tensor::zeros(&[t_w, t_w]);
    for a in 0..t_w {
        for b in 0..t_w {
            let mut acc = 0.0;
            for i in 0..n {
                acc += lhs.at2(a, i) * rhs.at2(i, b);
            }
            *e_pre.at2_mut(a, b) = sigmoid(acc + p.b_e.at2(a, b));
        }
    }
    let mut e = Tensor::zeros(&[t_w, t_w]);
    for a in 0..t_w {
        for b in 0..t_w {
            let mut acc = 0.0;
            for j in 0..t_w {
                acc += p.v_e.at2(a, j) * e_pre.at2(j, b);
            }
            *e.at2_mut(a, b) = acc;
        }
    }
    softmax_rows_inplace(&mut e);

    // Apply E' along time: Xt[n,c,t] = Σ_{t'} X[n,c,t']·E'[t,t'].
    let mut xt = Tensor::zeros(&[n, d, t_w]);
    for i in 0..n {
        for c in 0..d {
            for to in 0..t_w {
                let mut acc = 0.0;
                for ti in 0..t_w {
                    acc += x.at3(i, c, ti) * e.at2(to, ti);
                }
                *xt.at3_mut(i, c, to) = acc;
            }
        }
    }

    // Spatial attention on the temporally attended input.
    let mut sl = Tensor::zeros(&[n, t_w]);
    for i in 0..n {
        for to in 0..t_w {
            let mut acc = 0.0;
            for c in 0..d {
                let mut xw1 = 0.0;
                for ti in 0..t_w {
                    xw1 += xt.at3(i, c, ti) * p.w1.data()[ti];
                }
                acc += xw1 * p.w2.at2(c, to);
            }
            *sl.at2_mut(i, to) = acc;
        }
    }
    let mut sr = Tensor::zeros(&[t_w, n]);
    for to in 0..t_w {
        for j in 0..n {
            let mut acc = 0.0;
            for c in 0..d {
                acc += p.w3.data()[c] * xt.at3(j, c, to);
            }
            *sr.at2_mut(to, j) = acc;
        }
    }
    let mut s_pre = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for to in 0..t_w {
                acc += sl.at2(i, to) * sr.at2(to, j);
            }
            *s_pre.at2_mut(i, j) = sigmoid(acc + p.b_s.at2(i, j));
        }
    }
    let mut s = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for q in 0..n {
                acc += p.v_s.at2(i, q) * s_pre.at2(q, j);
            }
            *s.at2_mut(i, j) = acc;
        }
    }
    softmax_rows_inplace(&mut s);

    // Masked Chebyshev filter then rectifier.
    let order = ops.cheb_basis.len();
    let c_out = p.theta.shape()[2];
    let mut h = Tensor::zeros(&[n, c_out, t_w]);
    for m in 0..order {
        for i in 0..n {
            for j in 0..n {
                let g = ops.cheb_basis[m].at2(i, j) * s.at2(i, j);
                for co in 0..c_out {
                    for tt in 0..t_w {
                        let mut acc = 0.0;
                        for ci in 0..d {
                            acc += xt.at3(j, ci, tt) * p.theta.at3(m, ci, co);
                        }
                        *h.at3_mut(i, co, tt) += g * acc;
                    }
                }
            }
        }
    }
    for v in h.data_mut() {
        *v = v.max(0.0);
    }

    // Same-padded time convolution, stride 1.
    let k_w = p.time_kernel.shape()[2];
    let pad_left = (k_w - 1) / 2;
    let mut z = Tensor::zeros(&[n, c_out, t_w]);
    for i in 0..n {
        for co in 0..c_out {
            for to in 0..t_w {
                let mut acc = 0.0;
                for ci in 0..c_out {
                    for kk in 0..k_w {
                        let ti = (to + kk) as isize - pad_left as isize;
                        if ti >= 0 && (ti as usize) < t_w {
                            acc += p.time_kernel.at3(co, ci, kk) * h.at3(i, ci, ti as usize);
                        }
                    }
                }
                *z.at3_mut(i, co, to) = acc;
            }
        }
    }

    // Residual projection of the block input plus layer norm over
    // channels.
    let mut out = Tensor::zeros(&[n, c_out, t_w]);
    for i in 0..n {
        for co in 0..c_out {
            for tt in 0..t_w {
                let mut acc = z.at3(i, co, tt);
                for ci in 0..d {
                    acc += x.at3(i, ci, tt) * p.residual.at2(ci, co);
                }
                *out.at3_mut(i, co, tt) = acc;
            }
        }
    }
    for i in 0..n {
        for tt in 0..t_w {
            let mut mean = 0.0;
            for co in 0..c_out {
                mean += out.at3(i, co, tt);
            }
            mean /= c_out as f64;
            let mut var = 0.0;
            for co in 0..c_out {
                let dlt = out.at3(i, co, tt) - mean;
                var += dlt * dlt;
            }
            var /= c_out as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for co in 0..c_out {
                *out.at3_mut(i, co, tt) = (out.at3(i, co, tt) - mean) * inv;
            }
        }
    }
    out
}

/// Straight-line model forward: stacked blocks plus the final shared
/// linear projection.
pub fn straightline_forward(x: &Tensor, params: &StModelParams, ops: &SpectralOps) -> Tensor {
    let mut cur = x.clone();
    for block in &params.blocks {
        cur = straightline_block(&cur, block, ops);
    }
    let (n, c, t_w) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
    let h = params.final_b.len();
    let mut out = Tensor::zeros(&[n, h]);
    for i in 0..n {
        for hh in 0..h {
            let mut acc = params.final_b.data()[hh];
            for ci in 0..c {
                for tt in 0..t_w {
                    acc += cur.at3(i, ci, tt) * params.final_w.at2(ci * t_w + tt, hh);
                }
            }
            *out.at2_mut(i, hh) = acc;
        }
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt()).max(1e-300)
}

/// Standard normal draws from a seeded generator (Box–Muller).
pub struct NoiseGen {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseGen {
    pub fn new(seed: u64) -> Self {
        NoiseGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = self.rng.random::<f64>().max(1e-300);
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Ring-of-sensors synthetic dataset: daily sinusoid per node plus a
/// causal diffusion term from ring neighbors plus noise.
pub fn ring_dataset(n: usize, steps: usize, seed: u64) -> (Vec<TimeSeries>, Tensor) {
    let mut noise = NoiseGen::new(seed);
    let daily = 96.0; // 15-minute steps per day
    let mut base: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let phase = 2.0 * PI * i as f64 / n as f64;
            (0..steps)
                .map(|t| 200.0 + 80.0 * (2.0 * PI * t as f64 / daily + phase).sin())
                .collect()
        })
        .collect();
    // Causal neighbor coupling: each node picks up a share of its ring
    // neighbors' flow from two steps earlier.
    let coupled: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let left = (i + n - 1) % n;
            let right = (i + 1) % n;
            (0..steps)
                .map(|t| {
                    let lag = t.saturating_sub(2);
                    base[i][t] + 0.25 * (base[left][lag] + base[right][lag]) / 2.0
                })
                .collect()
        })
        .collect();
    for (i, series) in coupled.iter().enumerate() {
        base[i] = series
            .iter()
            .map(|v| (v + 4.0 * noise.normal()).max(0.0))
            .collect();
    }
    let start = Timestamp::parse("2019-01-07 00:00:00").unwrap();
    let series: Vec<TimeSeries> = base
        .into_iter()
        .enumerate()
        .map(|(i, values)| TimeSeries::new(format!("s{i:02}"), start, 900, values).unwrap())
        .collect();

    let mut dist = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (i as isize - j as isize).unsigned_abs();
                let ring = d.min(n - d);
                *dist.at2_mut(i, j) = ring as f64;
            }
        }
    }
    (series, dist)
}
