//! Choosing the number of modes for a region.
//!
//! Exhaustively tuning K through model training is expensive, so K is
//! picked from the decomposition alone: sample a fraction of the nodes,
//! decompose every sampled node for each candidate K, and take the
//! smallest K whose mean reconstruction loss (on min-max normalized
//! signals) drops below a threshold ζ.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::TimeSeries;
use crate::vmd::{decompose, reconstruction_loss, VmdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSelectConfig {
    /// Fraction of nodes to sample, in (0, 1].
    pub sample_fraction: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// Loss threshold ζ on unit-normalized signals.
    pub zeta: f64,
    pub seed: u64,
}

impl Default for ModeSelectConfig {
    fn default() -> Self {
        ModeSelectConfig {
            sample_fraction: 0.02,
            k_min: 2,
            k_max: 29,
            zeta: 1e-3,
            seed: 0,
        }
    }
}

impl ModeSelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::invalid_config("sample_fraction must lie in (0, 1]"));
        }
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(Error::invalid_config(
                "need 1 ≤ k_min ≤ k_max for the K sweep",
            ));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::invalid_config("zeta must be positive"));
        }
        Ok(())
    }
}

/// One point of the exported loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurvePoint {
    pub k: usize,
    pub mean_loss: f64,
    /// Whether this K met the ζ threshold.
    pub qualifying: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    /// Smallest qualifying K, or `k_max` when nothing qualified.
    pub chosen_k: usize,
    pub threshold_met: bool,
    pub curve: Vec<LossCurvePoint>,
    /// Node ids that were sampled, in draw order.
    pub sampled_nodes: Vec<String>,
}

/// Seeded uniform sample of `count` distinct indices out of `n`,
/// partial Fisher–Yates.
fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut picked = Vec::with_capacity(count);
    for i in 0..count.min(n) {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
        picked.push(pool[i]);
    }
    picked
}

/// Sweeps K over `[k_min, k_max]` on a sampled subset of the dataset and
/// returns the smallest K whose mean reconstruction loss beats ζ, along
/// with the full loss curve.
pub fn select_num_modes(
    dataset: &[TimeSeries],
    cfg: &ModeSelectConfig,
    vmd_base: &VmdConfig,
) -> Result<KSelection> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid_input("empty dataset"));
    }
    let sample_count = ((cfg.sample_fraction * dataset.len() as f64).ceil() as usize).max(1);
    let indices = sample_indices(dataset.len(), sample_count, cfg.seed);
    let sampled: Vec<TimeSeries> = indices
        .iter()
        .map(|&i| dataset[i].min_max_normalized())
        .collect();

    let ks: Vec<usize> = (cfg.k_min..=cfg.k_max).collect();
    // The (node × K) grid is embarrassingly parallel; losses land in a
    // fixed grid so aggregation order never affects the result.
    let grid: Vec<Result<f64>> = ks
        .par_iter()
        .flat_map(|&k| {
            sampled.par_iter().map(move |s| {
                let cfg_k = VmdConfig {
                    num_modes: k,
                    ..vmd_base.clone()
                };
                let ms = decompose(s, &cfg_k)?;
                reconstruction_loss(s, &ms)
            })
        })
        .collect();

    let n_nodes = sampled.len();
    let mut curve = Vec::with_capacity(ks.len());
    for (ki, &k) in ks.iter().enumerate() {
        let mut sum = 0.0;
        for ni in 0..n_nodes {
            sum += match &grid[ki * n_nodes + ni] {
                Ok(v) => *v,
                Err(e) => {
                    return Err(Error::invalid_input(format!(
                        "decomposition failed for node `{}` at K={k}: {e}",
                        sampled[ni].node_id
                    )))
                }
            };
        }
        let mean_loss = sum / n_nodes as f64;
        curve.push(LossCurvePoint {
            k,
            mean_loss,
            qualifying: mean_loss < cfg.zeta,
        });
    }

    let first_qualifying = curve.iter().find(|p| p.qualifying);
    let (chosen_k, threshold_met) = match first_qualifying {
        Some(p) => (p.k, true),
        None => (cfg.k_max, false),
    };
    Ok(KSelection {
        chosen_k,
        threshold_met,
        curve,
        sampled_nodes: indices
            .iter()
            .map(|&i| dataset[i].node_id.clone())
            .collect(),
    })
}

impl KSelection {
    /// Writes the loss curve as `k_selection.csv`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "K,mean_loss,qualifying")?;
        for p in &self.curve {
            writeln!(out, "{},{},{}", p.k, p.mean_loss, p.qualifying)?;
        }
        Ok(())
    }
}
