//! Variational mode decomposition of a single time series.
//!
//! The signal is split into K band-limited modes by minimizing the summed
//! bandwidth of the modes subject to the modes reconstructing the signal.
//! The constrained problem is relaxed with an augmented Lagrangian and
//! solved by alternating updates in the frequency domain: each mode gets a
//! Wiener-filter update around its current center frequency, each center
//! frequency moves to the power-weighted mean of its mode's spectrum, and
//! a dual ascent step nudges the Lagrange multiplier toward exact
//! reconstruction.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    forward_dft, inverse_dft_real, mirror_extend, to_half_spectrum, truncate_center, Layout,
    Spectrum, TimeSeries,
};

/// Center-frequency initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaInit {
    /// ω_k = 0.5·k/K — evenly spread over the half band.
    Uniform,
    /// All ω start at zero; the first mode is held at DC for the first
    /// sweep so it absorbs the trend before moving.
    Zero,
    /// Seeded uniform draws over (0, 0.5), sorted ascending.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmdConfig {
    /// Number of modes K.
    pub num_modes: usize,
    /// Bandwidth penalty α; larger values give narrower modes.
    pub alpha: f64,
    /// Dual ascent step τ; 0 disables the multiplier (noise-tolerant).
    pub tau: f64,
    /// Convergence tolerance ε on the relative spectral change.
    pub epsilon: f64,
    /// Iteration cap on the alternating sweeps.
    pub max_iter: usize,
    pub omega_init: OmegaInit,
}

impl Default for VmdConfig {
    fn default() -> Self {
        VmdConfig {
            num_modes: 3,
            alpha: 2000.0,
            tau: 0.0,
            epsilon: 1e-7,
            max_iter: 500,
            omega_init: OmegaInit::Uniform,
        }
    }
}

impl VmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modes < 1 {
            return Err(Error::invalid_config("num_modes must be at least 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid_config("alpha must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid_config("epsilon must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid_config("max_iter must be at least 1"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid_config("tau must be non-negative"));
        }
        Ok(())
    }
}

/// Result of decomposing one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    /// K time-domain modes, each the original signal length, ordered by
    /// ascending center frequency.
    pub modes: Vec<Vec<f64>>,
    /// Normalized center frequencies in [0, 0.5], ascending.
    pub omegas: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Mean absolute value of f − Σ u_k.
    pub reconstruction_residual: f64,
}

impl ModeSet {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn len(&self) -> usize {
        self.modes.first().map_or(0, |m| m.len())
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Σ_k u_k(t).
    pub fn reconstruction(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.len()];
        for mode in &self.modes {
            for (s, v) in sum.iter_mut().zip(mode) {
                *s += v;
            }
        }
        sum
    }
}

/// Lagrange multiplier state on the working half spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub lambda_hat: Vec<Complex64>,
}

/// Power threshold below which a mode is treated as degenerate: its
/// center frequency is left in place and its convergence term skipped.
const DEGENERATE_POWER: f64 = 1e-30;

#[inline]
fn bin_frequency(bin: usize, num_bins: usize) -> f64 {
    // Half spectrum of a length-2L signal has L+1 bins; bin m sits at
    // normalized frequency m / (2L).
    bin as f64 / (2 * (num_bins - 1)) as f64
}

/// Wiener-filter update of mode `k` on the half spectrum:
/// û_k(ω) = (f̂ − Σ_{i≠k} û_i + λ̂/2) / (1 + 2α(ω − ω_k)²).
///
/// Gauss–Seidel ordering comes from the caller: `modes_hat` holds the
/// current sweep's values for already-updated modes and the previous
/// sweep's values for the rest.
pub fn update_mode(
    mode_index: usize,
    signal_hat: &[Complex64],
    modes_hat: &[Vec<Complex64>],
    lambda_hat: &[Complex64],
    omegas: &[f64],
    alpha: f64,
) -> Vec<Complex64> {
    let bins = signal_hat.len();
    let omega_k = omegas[mode_index];
    let mut out = Vec::with_capacity(bins);
    for m in 0..bins {
        let mut others = Complex64::new(0.0, 0.0);
        for (i, mode) in modes_hat.iter().enumerate() {
            if i != mode_index {
                others += mode[m];
            }
        }
        let numer = signal_hat[m] - others + lambda_hat[m] * 0.5;
        let d = bin_frequency(m, bins) - omega_k;
        out.push(numer / (1.0 + 2.0 * alpha * d * d));
    }
    out
}

/// Power-weighted mean frequency of a half-spectrum mode. A mode with
/// total power below the degeneracy threshold keeps `fallback`.
pub fn update_center_frequency(mode_hat: &[Complex64], fallback: f64) -> f64 {
    let bins = mode_hat.len();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (m, v) in mode_hat.iter().enumerate() {
        let p = v.norm_sqr();
        weighted += bin_frequency(m, bins) * p;
        total += p;
    }
    if total > DEGENERATE_POWER {
        weighted / total
    } else {
        fallback
    }
}

/// Dual ascent: λ̂ ← λ̂ + τ·(f̂ − Σ_k û_k), per bin.
pub fn update_multiplier(
    lambda_hat: &[Complex64],
    signal_hat: &[Complex64],
    modes_hat: &[Vec<Complex64>],
    tau: f64,
) -> LagrangianState {
    let mut out = lambda_hat.to_vec();
    if tau != 0.0 {
        for (m, slot) in out.iter_mut().enumerate() {
            let mut sum = Complex64::new(0.0, 0.0);
            for mode in modes_hat {
                sum += mode[m];
            }
            *slot += tau * (signal_hat[m] - sum);
        }
    }
    LagrangianState { lambda_hat: out }
}

/// Relative spectral change between consecutive sweeps:
/// Σ_k ‖û_k' − û_k‖² / ‖û_k‖², skipping degenerate modes.
pub fn convergence_metric(prev_modes_hat: &[Vec<Complex64>], modes_hat: &[Vec<Complex64>]) -> f64 {
    let mut metric = 0.0;
    for (prev, cur) in prev_modes_hat.iter().zip(modes_hat) {
        let denom: f64 = prev.iter().map(|v| v.norm_sqr()).sum();
        if denom < DEGENERATE_POWER {
            continue;
        }
        let num: f64 = prev.iter().zip(cur).map(|(a, b)| (b - a).norm_sqr()).sum();
        metric += num / denom;
    }
    metric
}

fn initial_omegas(init: OmegaInit, k: usize) -> Vec<f64> {
    match init {
        OmegaInit::Uniform => (0..k).map(|i| 0.5 * i as f64 / k as f64).collect(),
        OmegaInit::Zero => vec![0.0; k],
        OmegaInit::Random(seed) => {
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut omegas: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 0.5).collect();
            omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            omegas
        }
    }
}

/// Decomposes one series into `cfg.num_modes` band-limited modes.
pub fn decompose(series: &TimeSeries, cfg: &VmdConfig) -> Result<ModeSet> {
    cfg.validate()?;
    let len = series.len();
    if len < 2 * cfg.num_modes {
        return Err(Error::invalid_config(format!(
            "signal of length {len} is too short for {} modes (need ≥ {})",
            cfg.num_modes,
            2 * cfg.num_modes
        )));
    }
    if series.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("signal contains non-finite values"));
    }

    // Pre-processing: mirror both ends, transform, keep ω ≥ 0.
    let extended = mirror_extend(&series.values)?;
    let f_hat = to_half_spectrum(&forward_dft(&extended)?)?;
    let bins = f_hat.bins.len();
    let k = cfg.num_modes;

    let mut omegas = initial_omegas(cfg.omega_init, k);
    let mut modes_hat: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); bins]; k];
    let mut lambda = vec![Complex64::new(0.0, 0.0); bins];

    let mut converged = false;
    let mut iterations = 0;
    let mut prev: Vec<Vec<Complex64>> = modes_hat.clone();
    for sweep in 0..cfg.max_iter {
        for (p, c) in prev.iter_mut().zip(&modes_hat) {
            p.copy_from_slice(c);
        }
        for ki in 0..k {
            modes_hat[ki] = update_mode(ki, &f_hat.bins, &modes_hat, &lambda, &omegas, cfg.alpha);
            let hold_dc = sweep == 0 && ki == 0 && cfg.omega_init == OmegaInit::Zero;
            if !hold_dc {
                omegas[ki] = update_center_frequency(&modes_hat[ki], omegas[ki]);
            }
        }
        lambda = update_multiplier(&lambda, &f_hat.bins, &modes_hat, cfg.tau).lambda_hat;
        iterations = sweep + 1;
        // The first sweep leaves nothing meaningful to compare against
        // (all previous spectra are zero and would be skipped as
        // degenerate), so the test starts at the second sweep.
        if sweep > 0 && convergence_metric(&prev, &modes_hat) < cfg.epsilon {
            converged = true;
            break;
        }
    }

    // Sort by ascending center frequency before post-processing.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| omegas[a].partial_cmp(&omegas[b]).unwrap());
    let omegas_sorted: Vec<f64> = order.iter().map(|&i| omegas[i]).collect();

    // Post-processing: Hermitian completion, inverse transform, cut the
    // mirror padding back off.
    let mut modes = Vec::with_capacity(k);
    for &i in &order {
        let sp = Spectrum {
            bins: modes_hat[i].clone(),
            sample_count: extended.len(),
            layout: Layout::Half,
        };
        let time = inverse_dft_real(&sp)?;
        modes.push(truncate_center(&time, len)?);
    }

    let mut residual = 0.0;
    for (t, &v) in series.values.iter().enumerate() {
        let sum: f64 = modes.iter().map(|m| m[t]).sum();
        residual += (v - sum).abs();
    }
    residual /= len as f64;

    Ok(ModeSet {
        modes,
        omegas: omegas_sorted,
        iterations_used: iterations,
        converged,
        reconstruction_residual: residual,
    })
}

/// Decomposes many nodes in parallel. Results keep the input order
/// regardless of which worker finishes first.
pub fn decompose_all(series: &[TimeSeries], cfg: &VmdConfig) -> Result<Vec<ModeSet>> {
    series
        .par_iter()
        .map(|s| decompose(s, cfg))
        .collect::<Result<Vec<_>>>()
}

/// φ(t) = f(t) − Σ_k u_k(t): whatever the modes failed to capture.
pub fn redemption(series: &TimeSeries, modes: &ModeSet) -> Result<Vec<f64>> {
    if modes.len() != series.len() {
        return Err(Error::invalid_input(format!(
            "mode length {} does not match series length {}",
            modes.len(),
            series.len()
        )));
    }
    let recon = modes.reconstruction();
    Ok(series
        .values
        .iter()
        .zip(&recon)
        .map(|(f, r)| f - r)
        .collect())
}

/// Mean |φ(t)|. Callers normalize the signal first when a scale-free
/// value is needed; see [`TimeSeries::min_max_normalized`].
pub fn reconstruction_loss(series: &TimeSeries, modes: &ModeSet) -> Result<f64> {
    let phi = redemption(series, modes)?;
    Ok(phi.iter().map(|v| v.abs()).sum::<f64>() / phi.len() as f64)
}
