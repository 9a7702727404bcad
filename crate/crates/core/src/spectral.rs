//! Real/complex signal utilities shared by the mode decomposition:
//! boundary mirroring, discrete Fourier transforms, half-spectrum
//! handling, and the truncation that undoes the mirror.
//!
//! A signal is mirrored on both ends before transforming so the DFT's
//! implicit periodization does not introduce endpoint discontinuities;
//! after the inverse transform the center section is cut back out.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timestamp::Timestamp;

/// One node's uniformly sampled flow signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub node_id: String,
    pub start_time: Timestamp,
    /// Sampling step in seconds (15-minute data uses 900).
    pub step_seconds: u32,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        node_id: impl Into<String>,
        start_time: Timestamp,
        step_seconds: u32,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::invalid_input(format!(
                "time series needs at least 4 samples, got {}",
                values.len()
            )));
        }
        if step_seconds == 0 {
            return Err(Error::invalid_input("sampling step must be positive"));
        }
        Ok(TimeSeries {
            node_id: node_id.into(),
            start_time,
            step_seconds,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, index: usize) -> Timestamp {
        self.start_time
            .add_seconds(index as i64 * self.step_seconds as i64)
    }

    /// Min-max normalization of the values to [0, 1]. A constant series
    /// maps to all zeros.
    pub fn min_max_normalized(&self) -> TimeSeries {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        let values = if range > 0.0 {
            self.values.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        TimeSeries {
            node_id: self.node_id.clone(),
            start_time: self.start_time,
            step_seconds: self.step_seconds,
            values,
        }
    }
}

/// Frequency-bin layout of a [`Spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// All `sample_count` DFT bins.
    Full,
    /// Non-negative frequencies only: bins `0..=sample_count/2`.
    Half,
}

/// DFT of a real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    /// Length of the time-domain signal the spectrum came from.
    pub sample_count: usize,
    pub layout: Layout,
}

impl Spectrum {
    /// Normalized frequency of bin `m`, in cycles per sample.
    pub fn bin_frequency(&self, m: usize) -> f64 {
        m as f64 / self.sample_count as f64
    }
}

/// Extends a signal to length 2L by mirroring both ends: the reversed
/// first ⌊L/2⌋ samples are prepended and the reversed last ⌈L/2⌉
/// samples appended. The original occupies positions ⌊L/2⌋ .. ⌊L/2⌋+L.
pub fn mirror_extend(values: &[f64]) -> Result<Vec<f64>> {
    let len = values.len();
    if len < 2 {
        return Err(Error::invalid_input(format!(
            "mirror extension needs at least 2 samples, got {len}"
        )));
    }
    let left = len / 2;
    let mut out = Vec::with_capacity(2 * len);
    out.extend(values[..left].iter().rev());
    out.extend_from_slice(values);
    out.extend(values[left..].iter().rev());
    debug_assert_eq!(out.len(), 2 * len);
    Ok(out)
}

/// Cuts the center L samples back out of a mirror-extended signal,
/// exactly inverting [`mirror_extend`].
pub fn truncate_center(extended: &[f64], original_len: usize) -> Result<Vec<f64>> {
    if extended.len() != 2 * original_len {
        return Err(Error::invalid_input(format!(
            "expected extended length {}, got {}",
            2 * original_len,
            extended.len()
        )));
    }
    let start = original_len / 2;
    Ok(extended[start..start + original_len].to_vec())
}

/// Forward DFT of a real signal: `bins[m] = Σ_t x[t]·exp(−j2πmt/L)`.
pub fn forward_dft(values: &[f64]) -> Result<Spectrum> {
    if values.is_empty() {
        return Err(Error::invalid_input("cannot transform an empty signal"));
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    Ok(Spectrum {
        bins: buf,
        sample_count: values.len(),
        layout: Layout::Full,
    })
}

/// Keeps the non-negative-frequency bins `0..=⌊L/2⌋` of a full spectrum.
/// The input must be Hermitian-symmetric (i.e. come from a real signal).
pub fn to_half_spectrum(sp: &Spectrum) -> Result<Spectrum> {
    if sp.layout != Layout::Full {
        return Err(Error::Inconsistency(
            "half-spectrum conversion expects a full layout".into(),
        ));
    }
    let n = sp.sample_count;
    let scale = sp
        .bins
        .iter()
        .fold(0.0_f64, |m, b| m.max(b.norm()))
        .max(1e-300);
    for m in 0..n {
        let err = (sp.bins[m] - sp.bins[(n - m) % n].conj()).norm();
        if err > 1e-10 * scale {
            return Err(Error::Inconsistency(format!(
                "spectrum is not Hermitian at bin {m} (relative error {:.3e})",
                err / scale
            )));
        }
    }
    Ok(Spectrum {
        bins: sp.bins[..=n / 2].to_vec(),
        sample_count: n,
        layout: Layout::Half,
    })
}

/// Rebuilds the full Hermitian spectrum from a half layout.
pub fn hermitian_complete(sp: &Spectrum) -> Result<Spectrum> {
    match sp.layout {
        Layout::Full => Ok(sp.clone()),
        Layout::Half => {
            let n = sp.sample_count;
            if sp.bins.len() != n / 2 + 1 {
                return Err(Error::Inconsistency(format!(
                    "half spectrum of a length-{n} signal needs {} bins, got {}",
                    n / 2 + 1,
                    sp.bins.len()
                )));
            }
            let mut bins = vec![Complex64::new(0.0, 0.0); n];
            bins[..sp.bins.len()].copy_from_slice(&sp.bins);
            for m in 1..n.div_ceil(2) {
                bins[n - m] = sp.bins[m].conj();
            }
            Ok(Spectrum {
                bins,
                sample_count: n,
                layout: Layout::Full,
            })
        }
    }
}

/// Inverse DFT back to a real signal. Half layouts are Hermitian-completed
/// first; any residual imaginary part is discarded.
pub fn inverse_dft_real(sp: &Spectrum) -> Result<Vec<f64>> {
    let full = hermitian_complete(sp)?;
    let mut buf = full.bins;
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.into_iter().map(|c| c.re * scale).collect())
}
