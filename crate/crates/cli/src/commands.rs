//! Command implementations. Each command is idempotent for a given
//! config fingerprint: if its cached artifact already exists the work is
//! skipped and the cache reused.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use modecast::graph::{write_matrix_csv, RoadGraph, SpectralOps};
use modecast::modecache::{read_mode_cache, write_mode_cache, ModeCache, ModeCacheEntry};
use modecast::model::{Checkpoint, ModelConfig, StModelParams, Variant};
use modecast::modeselect::select_num_modes;
use modecast::spectral::TimeSeries;
use modecast::tensor::Tensor;
use modecast::traineval::{
    ablate_mode, evaluate_baseline, evaluate_model, predict_raw, run_pipeline_with_modes, sweep,
    write_ablation_csv, write_forecasts_csv, write_history_csv, write_metrics_json,
    write_sweep_csv, AblationDelta, MetricsExport, PipelineSettings, SweepEntry, TrainConfig,
    WindowedDataset,
};
use modecast::vmd::{decompose_all, ModeSet, VmdConfig};
use modecast::{autodiff::LossKind, fingerprint};

use crate::cache;
use crate::config::{
    data_fingerprint, kselect_fingerprint, model_fingerprint, modes_fingerprint, RunConfig,
};
use crate::ingest::{ingest, IngestedData};

fn load_data(cfg: &RunConfig) -> Result<IngestedData> {
    ingest(
        &cfg.data.flows,
        &cfg.data.metadata,
        &cfg.data.distances,
        &cfg.data.aggregation,
    )
}

fn build_graph_ops(cfg: &RunConfig, data: &IngestedData) -> Result<(RoadGraph, SpectralOps)> {
    let graph = RoadGraph::new(
        data.node_ids.clone(),
        data.distances.clone(),
        data.metadata.clone(),
        cfg.graph.sigma,
        cfg.graph.r,
    )?;
    let ops = SpectralOps::build(&graph.adjacency, cfg.model.cheb_order)?;
    Ok((graph, ops))
}

/// Loads cached modes when the fingerprint matches, otherwise
/// decomposes and writes the cache.
fn modes_with_cache(
    cfg: &RunConfig,
    data: &IngestedData,
    data_fp: u64,
) -> Result<(Vec<ModeSet>, bool)> {
    let fp = modes_fingerprint(cfg, data_fp);
    let path = cache::modes_path(&cfg.cache_dir, fp);
    if path.exists() {
        let mut reader = std::io::BufReader::new(
            std::fs::File::open(&path)
                .with_context(|| format!("opening mode cache `{}`", path.display()))?,
        );
        let cached = read_mode_cache(&mut reader)?;
        if cached.fingerprint == fp && cached.entries.len() == data.series.len() {
            let ids_match = cached
                .entries
                .iter()
                .zip(&data.node_ids)
                .all(|(e, id)| &e.node_id == id);
            if ids_match {
                eprintln!("mode cache hit: {}", path.display());
                return Ok((
                    cached.entries.into_iter().map(|e| e.mode_set).collect(),
                    true,
                ));
            }
        }
        eprintln!("mode cache stale, recomputing: {}", path.display());
    }
    let vmd_cfg = cfg.vmd.to_config();
    let mode_sets = decompose_all(&data.series, &vmd_cfg)?;
    let cache_obj = ModeCache {
        fingerprint: fp,
        entries: data
            .node_ids
            .iter()
            .zip(&mode_sets)
            .map(|(id, ms)| ModeCacheEntry {
                node_id: id.clone(),
                config: vmd_cfg.clone(),
                mode_set: ms.clone(),
            })
            .collect(),
    };
    let mut buf = Vec::new();
    write_mode_cache(&mut buf, &cache_obj)?;
    cache::write_atomic(&path, &buf)?;
    eprintln!("mode cache written: {}", path.display());
    Ok((mode_sets, false))
}

pub fn cmd_decompose(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let data_fp = data_fingerprint(cfg)?;
    let (mode_sets, cache_hit) = modes_with_cache(cfg, &data, data_fp)?;
    let converged = mode_sets.iter().filter(|m| m.converged).count();
    let mean_residual: f64 = mode_sets
        .iter()
        .map(|m| m.reconstruction_residual)
        .sum::<f64>()
        / mode_sets.len() as f64;
    println!(
        "decomposed {} nodes into K={} modes (cache {}): {}/{} converged, mean residual {:.6}",
        mode_sets.len(),
        cfg.vmd.num_modes,
        if cache_hit { "hit" } else { "miss" },
        converged,
        mode_sets.len(),
        mean_residual
    );
    Ok(())
}

pub fn cmd_select_k(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let data_fp = data_fingerprint(cfg)?;
    let fp = kselect_fingerprint(cfg, data_fp);
    let path = cache::kselect_path(&cfg.cache_dir, fp);
    let csv = if path.exists() {
        eprintln!("k-selection cache hit: {}", path.display());
        std::fs::read(&path)?
    } else {
        let sel = select_num_modes(&data.series, &cfg.mode_select, &cfg.vmd.to_config())?;
        let mut buf = Vec::new();
        sel.write_csv(&mut buf)?;
        cache::write_atomic(&path, &buf)?;
        println!(
            "selected K = {} (threshold {} {}; sampled {} nodes)",
            sel.chosen_k,
            cfg.mode_select.zeta,
            if sel.threshold_met { "met" } else { "NOT met" },
            sel.sampled_nodes.len()
        );
        buf
    };
    let out = cfg.out_dir.join("k_selection.csv");
    cache::write_atomic(&out, &csv)?;
    println!("loss curve exported to {}", out.display());
    Ok(())
}

pub fn cmd_build_graph(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let (graph, ops) = build_graph_ops(cfg, &data)?;
    let n = graph.num_nodes();
    let edges: f64 = graph.adjacency.data().iter().sum::<f64>() / 2.0;
    println!(
        "graph: {n} nodes, {edges} edges, λ_max = {:.6}",
        ops.lambda_max
    );
    let mut buf = Vec::new();
    write_matrix_csv(&graph.adjacency, &graph.node_ids, &mut buf)?;
    cache::write_atomic(&cfg.out_dir.join("adjacency.csv"), &buf)?;
    let mut buf = Vec::new();
    write_matrix_csv(&ops.laplacian, &graph.node_ids, &mut buf)?;
    cache::write_atomic(&cfg.out_dir.join("laplacian.csv"), &buf)?;
    println!(
        "adjacency.csv and laplacian.csv written to {}",
        cfg.out_dir.display()
    );
    Ok(())
}

fn pipeline_settings(cfg: &RunConfig) -> PipelineSettings {
    PipelineSettings {
        vmd: cfg.vmd.to_config(),
        variant: cfg.model.variant,
        window: cfg.model.window,
        horizon: cfg.model.horizon,
        blocks: cfg.model.blocks,
        cheb_order: cfg.model.cheb_order,
        channels: cfg.model.channels,
        time_kernel: cfg.model.time_kernel,
        train: TrainConfig {
            learning_rate: cfg.training.learning_rate,
            batch_size: cfg.training.batch_size,
            max_epochs: cfg.training.max_epochs,
            patience: cfg.training.patience,
            seed: cfg.training.seed,
            loss: LossKind::MeanAbsolute,
        },
        mask_threshold: cfg.training.mape_mask_threshold,
        drop_highest_mode: false,
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let data_fp = data_fingerprint(cfg)?;
    let model_fp = model_fingerprint(cfg, data_fp);
    let ck_path = cache::checkpoint_path(&cfg.cache_dir, model_fp);
    if ck_path.exists() {
        let ck = Checkpoint::load(&mut std::fs::File::open(&ck_path)?)?;
        if ck.fingerprint == model_fp {
            println!(
                "checkpoint cache hit: {} ({} parameters); nothing to train",
                ck_path.display(),
                ck.params.num_scalars()
            );
            return Ok(());
        }
        eprintln!("checkpoint stale, retraining: {}", ck_path.display());
    }
    let (_, ops) = build_graph_ops(cfg, &data)?;
    let (mode_sets, _) = modes_with_cache(cfg, &data, data_fp)?;
    let settings = pipeline_settings(cfg);
    let started = Instant::now();
    let outcome = run_pipeline_with_modes(&data.series, mode_sets, &ops, &settings)?;
    let elapsed = started.elapsed().as_secs_f64();

    let ck = Checkpoint {
        config: ModelConfig {
            num_nodes: data.series.len(),
            input_channels: outcome.dataset.channel_map.len(),
            window: settings.window,
            horizon: settings.horizon,
            blocks: settings.blocks,
            cheb_order: settings.cheb_order,
            channels: settings.channels,
            time_kernel: settings.time_kernel,
        },
        seed: cfg.training.seed,
        fingerprint: model_fp,
        params: outcome.params.clone(),
    };
    let mut buf = Vec::new();
    ck.save(&mut buf)?;
    cache::write_atomic(&ck_path, &buf)?;

    let mut buf = Vec::new();
    write_history_csv(&outcome.train_result.history, &mut buf)?;
    cache::write_atomic(&cache::history_path(&cfg.cache_dir, model_fp), &buf)?;
    cache::write_atomic(&cfg.out_dir.join("history.csv"), &buf)?;

    let r = &outcome.train_result;
    println!(
        "trained {} epochs in {elapsed:.1}s (best epoch {}, val MAE {:.6}{}); reconstruction loss {:.3e}",
        r.history.len(),
        r.best_epoch,
        r.best_val_mae,
        if r.diverged { "; DIVERGED — best finite checkpoint kept" } else { "" },
        outcome.reconstruction_loss
    );
    println!(
        "test avg: MAE {:.4} RMSE {:.4} MAPE {:.2}%",
        outcome.test_report.average.mae,
        outcome.test_report.average.rmse,
        outcome.test_report.average.mape
    );
    println!("checkpoint: {}", ck_path.display());
    Ok(())
}

/// Rebuilds the windowed dataset exactly as training saw it.
fn rebuild_dataset(
    cfg: &RunConfig,
    data: &IngestedData,
    data_fp: u64,
) -> Result<(WindowedDataset, SpectralOps, Vec<ModeSet>)> {
    let (_, ops) = build_graph_ops(cfg, data)?;
    let (mode_sets, _) = modes_with_cache(cfg, data, data_fp)?;
    let phis: Vec<Vec<f64>> = data
        .series
        .iter()
        .zip(&mode_sets)
        .map(|(s, ms)| modecast::vmd::redemption(s, ms))
        .collect::<modecast::Result<_>>()?;
    let nodes: Vec<modecast::model::NodeSignals> = data
        .series
        .iter()
        .zip(&mode_sets)
        .zip(&phis)
        .map(|((raw, modes), phi)| modecast::model::NodeSignals { modes, raw, phi })
        .collect();
    let dataset = modecast::traineval::make_windows(
        &nodes,
        cfg.model.variant,
        cfg.model.window,
        cfg.model.horizon,
        &modecast::traineval::SplitSpec::standard(),
    )?;
    Ok((dataset, ops, mode_sets))
}

fn load_checkpoint(cfg: &RunConfig, model_fp: u64) -> Result<StModelParams> {
    let ck_path = cache::checkpoint_path(&cfg.cache_dir, model_fp);
    if !ck_path.exists() {
        bail!(
            "no checkpoint for this configuration at {}; run `modecast train` first",
            ck_path.display()
        );
    }
    let ck = Checkpoint::load(&mut std::fs::File::open(&ck_path)?)?;
    if ck.fingerprint != model_fp {
        bail!(
            "checkpoint fingerprint {} does not match configuration {}; run `modecast train`",
            fingerprint::to_hex(ck.fingerprint),
            fingerprint::to_hex(model_fp)
        );
    }
    Ok(ck.params)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let data_fp = data_fingerprint(cfg)?;
    let model_fp = model_fingerprint(cfg, data_fp);
    let params = load_checkpoint(cfg, model_fp)?;
    let (dataset, ops, _) = rebuild_dataset(cfg, &data, data_fp)?;

    let report = evaluate_model(
        &params,
        &ops,
        &dataset,
        &dataset.test,
        cfg.training.mape_mask_threshold,
    )?;
    let baseline = evaluate_baseline(&dataset, &dataset.test, cfg.training.mape_mask_threshold)?;

    let export = MetricsExport {
        config_fingerprint: fingerprint::to_hex(model_fp),
        seed: cfg.training.seed,
        report: report.clone(),
    };
    let mut buf = Vec::new();
    write_metrics_json(&export, &mut buf)?;
    cache::write_atomic(&cache::metrics_path(&cfg.cache_dir, model_fp), &buf)?;
    cache::write_atomic(&cfg.out_dir.join("metrics.json"), &buf)?;

    let preds = predict_raw(&params, &ops, &dataset, &dataset.test)?;
    let mut buf = Vec::new();
    write_forecasts_csv(&dataset, &dataset.test, &preds, &mut buf)?;
    cache::write_atomic(&cache::forecasts_path(&cfg.cache_dir, model_fp), &buf)?;
    cache::write_atomic(&cfg.out_dir.join("forecasts.csv"), &buf)?;

    println!("test windows: {}", dataset.test.len());
    for h in [3usize, 6, 12] {
        if let Some(m) = report.horizon(h) {
            let b = baseline.horizon(h).unwrap();
            println!(
                "horizon {h:>2}: MAE {:.4} RMSE {:.4} MAPE {:.2}%   (baseline MAE {:.4})",
                m.mae, m.rmse, m.mape, b.mae
            );
        }
    }
    println!(
        "average  : MAE {:.4} RMSE {:.4} MAPE {:.2}%   (baseline MAE {:.4})",
        report.average.mae, report.average.rmse, report.average.mape, baseline.average.mae
    );
    println!(
        "metrics.json and forecasts.csv written to {}",
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let data_fp = data_fingerprint(cfg)?;
    let model_fp = model_fingerprint(cfg, data_fp);
    let params = load_checkpoint(cfg, model_fp)?;
    let (dataset, ops, mode_sets) = rebuild_dataset(cfg, &data, data_fp)?;

    let k = mode_sets[0].num_modes();
    let mut deltas: Vec<AblationDelta> = Vec::with_capacity(k);
    for mode in 1..=k {
        let delta = ablate_mode(
            &params,
            &ops,
            &dataset,
            &dataset.test,
            mode,
            cfg.training.mape_mask_threshold,
        )?;
        println!(
            "mode {mode:>2}: ΔMAE(avg) {:+.4} ΔRMSE(avg) {:+.4} ΔMAPE(avg) {:+.3}%",
            delta.average.mae, delta.average.rmse, delta.average.mape
        );
        deltas.push(delta);
    }
    let mut buf = Vec::new();
    write_ablation_csv(&deltas, &mut buf)?;
    cache::write_atomic(&cache::ablation_path(&cfg.cache_dir, model_fp), &buf)?;
    cache::write_atomic(&cfg.out_dir.join("ablation.csv"), &buf)?;
    println!("ablation.csv written to {}", cfg.out_dir.display());
    Ok(())
}

pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub drop_highest: bool,
}

pub fn cmd_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<()> {
    let data = load_data(cfg)?;
    let (_, ops) = build_graph_ops(cfg, &data)?;
    let base = pipeline_settings(cfg);
    let mut entries = Vec::new();
    for &alpha in &grid.alphas {
        for &epsilon in &grid.epsilons {
            let mut settings = base.clone();
            settings.vmd.alpha = alpha;
            settings.vmd.epsilon = epsilon;
            entries.push(SweepEntry {
                label: format!("alpha{alpha}-eps{epsilon:e}"),
                settings,
            });
        }
    }
    if grid.drop_highest {
        let mut settings = base.clone();
        settings.drop_highest_mode = true;
        entries.push(SweepEntry {
            label: "drop-highest-mode".into(),
            settings,
        });
    }
    println!("sweeping {} configurations...", entries.len());
    let rows = sweep(&data.series, &ops, &entries)?;
    for row in &rows {
        match &row.average {
            Some(avg) => println!(
                "{:<28} recon {:.3e}  avg MAE {:.4} RMSE {:.4} MAPE {:.2}%",
                row.label,
                row.reconstruction_loss.unwrap_or(f64::NAN),
                avg.mae,
                avg.rmse,
                avg.mape
            ),
            None => println!("{:<28} {}", row.label, row.status),
        }
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    cache::write_atomic(&cfg.out_dir.join("sweep.csv"), &buf)?;
    println!("sweep.csv written to {}", cfg.out_dir.display());
    Ok(())
}

pub fn cmd_export_plots(cfg: &RunConfig) -> Result<()> {
    let data_fp = data_fingerprint(cfg)?;
    let model_fp = model_fingerprint(cfg, data_fp);
    let kselect_fp = kselect_fingerprint(cfg, data_fp);
    let jobs: [(&str, std::path::PathBuf, &str); 4] = [
        (
            "k_selection.csv",
            cache::kselect_path(&cfg.cache_dir, kselect_fp),
            "select-k",
        ),
        (
            "history.csv",
            cache::history_path(&cfg.cache_dir, model_fp),
            "train",
        ),
        (
            "ablation.csv",
            cache::ablation_path(&cfg.cache_dir, model_fp),
            "ablate",
        ),
        (
            "forecasts.csv",
            cache::forecasts_path(&cfg.cache_dir, model_fp),
            "evaluate",
        ),
    ];
    for (name, src, needed_cmd) in jobs {
        if !src.exists() {
            bail!("no cached {name} for this configuration; run `modecast {needed_cmd}` first");
        }
        let bytes = std::fs::read(&src)?;
        cache::write_atomic(&cfg.out_dir.join(name), &bytes)?;
        println!("exported {name}");
    }
    println!("plot data written to {}", cfg.out_dir.display());
    Ok(())
}

fn time_it(mut f: impl FnMut() -> Result<()>, reps: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / reps as f64)
}

pub fn cmd_bench(cfg: &RunConfig, quick: bool) -> Result<()> {
    use modecast::model::{model_forward, spatial_attention, FeatureTensor};
    use std::fmt::Write as _;

    let mut csv = String::from("section,params,seconds\n");

    // Decomposition cost vs (K, L, iterations). The per-K·L·iter rate
    // staying flat across the grid is the expected linear trend.
    println!("decomposition timing vs (K, L, iterations):");
    let ls: &[usize] = if quick {
        &[512, 2048]
    } else {
        &[512, 2048, 4096]
    };
    let ks: &[usize] = if quick { &[2, 4] } else { &[2, 4, 8] };
    let iter_counts: &[usize] = if quick { &[50] } else { &[50, 200] };
    for &l in ls {
        for &k in ks {
            for &iters in iter_counts {
                let values: Vec<f64> = (0..l)
                    .map(|t| {
                        let t = t as f64;
                        (0.03 * t).sin() + 0.5 * (0.31 * t).sin()
                    })
                    .collect();
                let s =
                    TimeSeries::new("bench", modecast::timestamp::Timestamp(0), 900, values)?;
                let vmd_cfg = VmdConfig {
                    num_modes: k,
                    alpha: 2000.0,
                    tau: 0.0,
                    epsilon: 1e-30,
                    max_iter: iters,
                    omega_init: modecast::vmd::OmegaInit::Uniform,
                };
                let secs = time_it(
                    || {
                        modecast::vmd::decompose(&s, &vmd_cfg)?;
                        Ok(())
                    },
                    1,
                )?;
                println!(
                    "  L={l:<5} K={k} iters={iters:<4}: {secs:.4}s  ({:.2} ns per K·L·iter)",
                    secs * 1e9 / (k * l * iters) as f64
                );
                writeln!(csv, "vmd,L={l} K={k} iters={iters},{secs}").ok();
            }
        }
    }

    // Forward pass and spatial attention vs N; spatial attention should
    // scale superlinearly (≳4× per doubling of N).
    println!("model forward / spatial attention timing vs N:");
    let ns: &[usize] = if quick { &[8, 16] } else { &[8, 16, 32, 64] };
    let mut prev_attention: Option<f64> = None;
    for &n in ns {
        let mut dist = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (i as isize - j as isize).unsigned_abs();
                    *dist.at2_mut(i, j) = d.min(n - d) as f64;
                }
            }
        }
        let adj = modecast::graph::build_adjacency(&dist, 2.0, 0.3)?;
        let ops = SpectralOps::build(&adj, 3)?;
        let mc = ModelConfig {
            num_nodes: n,
            input_channels: 8,
            window: 12,
            horizon: 12,
            blocks: 2,
            cheb_order: 3,
            channels: 16,
            time_kernel: 3,
        };
        let params = StModelParams::init(&mc, 1)?;
        let x = Tensor::from_vec(
            &[n, 8, 12],
            (0..n * 96)
                .map(|i| ((i * 37 % 100) as f64) / 50.0 - 1.0)
                .collect(),
        )?;
        let window = FeatureTensor {
            data: x.clone(),
            channel_map: (1..=8).map(modecast::model::ChannelLabel::Mode).collect(),
        };
        let fwd = time_it(
            || {
                model_forward(&window, &params, &ops)?;
                Ok(())
            },
            if quick { 3 } else { 10 },
        )?;
        let att = time_it(
            || {
                spatial_attention(&x, &params.blocks[0])?;
                Ok(())
            },
            if quick { 10 } else { 50 },
        )?;
        let ratio = prev_attention
            .map(|p| format!("{:.1}x vs previous N", att / p))
            .unwrap_or_else(|| "-".into());
        println!("  N={n:<3} forward {fwd:.5}s  spatial attention {att:.6}s  ({ratio})");
        writeln!(csv, "forward,N={n},{fwd}").ok();
        writeln!(csv, "spatial_attention,N={n},{att}").ok();
        prev_attention = Some(att);
    }

    // Unpadded convolution output arithmetic.
    println!("unpadded convolution output sizes (input, kernel, stride -> output):");
    for (input, kernel, stride) in [(12usize, 3usize, 1usize), (12, 3, 2), (64, 7, 3)] {
        let o = modecast::autodiff::conv_output_size(input, kernel, stride);
        println!("  ({input}, {kernel}, {stride}) -> {o}");
        writeln!(csv, "conv_output,in={input} k={kernel} s={stride},{o}").ok();
    }

    cache::write_atomic(&cfg.out_dir.join("bench.csv"), csv.as_bytes())?;
    println!("bench.csv written to {}", cfg.out_dir.display());
    Ok(())
}

/// Parses a `v1|v2|v3` flag value.
pub fn parse_variant(text: &str) -> Result<Variant> {
    match text {
        "v1" => Ok(Variant::V1),
        "v2" => Ok(Variant::V2),
        "v3" => Ok(Variant::V3),
        other => Err(anyhow!(
            "unknown variant `{other}` (expected v1, v2, or v3)"
        )),
    }
}
