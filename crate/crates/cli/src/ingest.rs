//! Raw data ingestion: 5-minute flow counts, node metadata, and pairwise
//! road distances, aggregated to a common 15-minute clock.
//!
//! Rules: each 15-minute block needs all three 5-minute samples, blocks
//! are aligned to the global grid spanned by the whole dataset, interior
//! single-block gaps are linearly interpolated, anything longer (or any
//! node missing more than 5% of its blocks) rejects the series.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use modecast::graph::NodeMeta;
use modecast::spectral::TimeSeries;
use modecast::tensor::Tensor;
use modecast::timestamp::Timestamp;

use crate::config::Aggregation;

const FIVE_MIN: i64 = 300;
const BLOCK: i64 = 900;
const MAX_MISSING_FRACTION: f64 = 0.05;

#[derive(Debug)]
pub struct IngestedData {
    /// Per-node series, ordered by node id.
    pub series: Vec<TimeSeries>,
    pub node_ids: Vec<String>,
    pub metadata: Vec<NodeMeta>,
    /// N×N road distances (km); absent pairs are infinite.
    pub distances: Tensor,
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(|f| f.trim()).collect()
}

fn is_header(fields: &[&str]) -> bool {
    fields
        .iter()
        .any(|f| f.eq_ignore_ascii_case("node_id") || f.eq_ignore_ascii_case("timestamp"))
}

/// Parses `timestamp,node_id,count` rows of 5-minute counts.
fn parse_flows(path: &Path) -> Result<BTreeMap<String, BTreeMap<i64, f64>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading flows `{}`", path.display()))?;
    let mut per_node: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if idx == 0 && is_header(&fields) {
            continue;
        }
        if fields.len() != 3 {
            bail!(
                "flows line {line_no}: expected 3 fields, got {}",
                fields.len()
            );
        }
        let ts = Timestamp::parse(fields[0]).map_err(|e| anyhow!("flows line {line_no}: {e}"))?;
        let node = fields[1].to_string();
        if node.is_empty() {
            bail!("flows line {line_no}: empty node id");
        }
        let count: f64 = fields[2]
            .parse()
            .map_err(|e| anyhow!("flows line {line_no}: bad count `{}`: {e}", fields[2]))?;
        if !count.is_finite() || count < 0.0 {
            bail!("flows line {line_no}: count must be a finite non-negative number");
        }
        if per_node
            .entry(node)
            .or_default()
            .insert(ts.unix_seconds(), count)
            .is_some()
        {
            bail!("flows line {line_no}: duplicate sample for this node and timestamp");
        }
    }
    if per_node.is_empty() {
        bail!("flows file `{}` holds no samples", path.display());
    }
    Ok(per_node)
}

/// Parses `node_id,lat,lon,lanes`.
fn parse_metadata(path: &Path) -> Result<BTreeMap<String, NodeMeta>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading metadata `{}`", path.display()))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if idx == 0 && is_header(&fields) {
            continue;
        }
        if fields.len() != 4 {
            bail!(
                "metadata line {line_no}: expected 4 fields, got {}",
                fields.len()
            );
        }
        let meta = NodeMeta {
            latitude: fields[1]
                .parse()
                .map_err(|e| anyhow!("metadata line {line_no}: bad lat: {e}"))?,
            longitude: fields[2]
                .parse()
                .map_err(|e| anyhow!("metadata line {line_no}: bad lon: {e}"))?,
            lane_count: fields[3]
                .parse()
                .map_err(|e| anyhow!("metadata line {line_no}: bad lanes: {e}"))?,
        };
        if out.insert(fields[0].to_string(), meta).is_some() {
            bail!("metadata line {line_no}: duplicate node `{}`", fields[0]);
        }
    }
    Ok(out)
}

/// Parses `id_a,id_b,distance_km` into a symmetric matrix over
/// `node_ids` order.
fn parse_distances(path: &Path, node_ids: &[String]) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading distances `{}`", path.display()))?;
    let index: BTreeMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = node_ids.len();
    let mut dist = Tensor::filled(&[n, n], f64::INFINITY);
    for i in 0..n {
        *dist.at2_mut(i, i) = 0.0;
    }
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if idx == 0 && is_header(&fields) || fields.first() == Some(&"id_a") {
            continue;
        }
        if fields.len() != 3 {
            bail!(
                "distances line {line_no}: expected 3 fields, got {}",
                fields.len()
            );
        }
        let (Some(&a), Some(&b)) = (index.get(fields[0]), index.get(fields[1])) else {
            // Distances may cover a wider network than the flow file.
            continue;
        };
        let d: f64 = fields[2]
            .parse()
            .map_err(|e| anyhow!("distances line {line_no}: bad distance: {e}"))?;
        if !(d >= 0.0) {
            bail!("distances line {line_no}: distance must be non-negative");
        }
        if a == b {
            continue;
        }
        *dist.at2_mut(a, b) = d;
        *dist.at2_mut(b, a) = d;
    }
    Ok(dist)
}

/// Aggregates one node's 5-minute samples onto the global 15-minute
/// grid. Returns the per-block values with `None` marking a missing
/// block.
fn aggregate_node(
    samples: &BTreeMap<i64, f64>,
    grid_start: i64,
    blocks: usize,
    aggregation: &Aggregation,
) -> Result<Vec<Option<f64>>> {
    for &ts in samples.keys() {
        if (ts - grid_start).rem_euclid(FIVE_MIN) != 0 {
            bail!(
                "sample at {} is not aligned to the 5-minute clock starting {}",
                Timestamp(ts),
                Timestamp(grid_start)
            );
        }
    }
    let mut out = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let start = grid_start + b as i64 * BLOCK;
        let mut acc = 0.0;
        let mut found = 0usize;
        for step in 0..3 {
            if let Some(v) = samples.get(&(start + step * FIVE_MIN)) {
                acc += v;
                found += 1;
            }
        }
        out.push(if found == 3 {
            Some(match aggregation {
                Aggregation::Sum => acc,
                Aggregation::Mean => acc / 3.0,
            })
        } else {
            None
        });
    }
    Ok(out)
}

/// Fills interior single-block gaps by linear interpolation; anything
/// else is an error naming the node.
fn fill_gaps(node: &str, values: Vec<Option<f64>>) -> Result<Vec<f64>> {
    let total = values.len();
    let missing = values.iter().filter(|v| v.is_none()).count();
    if missing as f64 > MAX_MISSING_FRACTION * total as f64 {
        bail!(
            "node `{node}`: {missing} of {total} intervals missing ({:.1}%, limit {:.0}%)",
            100.0 * missing as f64 / total as f64,
            100.0 * MAX_MISSING_FRACTION
        );
    }
    let mut out = Vec::with_capacity(total);
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(x) => out.push(*x),
            None => {
                let prev = if i > 0 { values[i - 1] } else { None };
                let next = if i + 1 < total { values[i + 1] } else { None };
                match (prev, next) {
                    (Some(a), Some(b)) => out.push((a + b) / 2.0),
                    _ => bail!(
                        "node `{node}`: gap at {i} is not an isolated interior interval \
                         (only single missing blocks between two present ones are filled)"
                    ),
                }
            }
        }
    }
    Ok(out)
}

/// Ingests the three CSV files into aligned series plus graph inputs.
pub fn ingest(
    flows_path: &Path,
    metadata_path: &Path,
    distances_path: &Path,
    aggregation: &Aggregation,
) -> Result<IngestedData> {
    let per_node = parse_flows(flows_path)?;
    let metadata_map = parse_metadata(metadata_path)?;

    // Global 15-minute grid across all nodes.
    let first = per_node
        .values()
        .filter_map(|m| m.keys().next())
        .min()
        .copied()
        .ok_or_else(|| anyhow!("no samples"))?;
    let last = per_node
        .values()
        .filter_map(|m| m.keys().next_back())
        .max()
        .copied()
        .ok_or_else(|| anyhow!("no samples"))?;
    let grid_start = first.div_euclid(BLOCK) * BLOCK;
    let blocks = ((last - grid_start) / BLOCK + 1) as usize;
    if blocks < 4 {
        bail!("dataset spans only {blocks} 15-minute blocks; need at least 4");
    }

    let node_ids: Vec<String> = per_node.keys().cloned().collect();
    let mut series = Vec::with_capacity(node_ids.len());
    let mut metadata = Vec::with_capacity(node_ids.len());
    let mut interpolated_total = 0usize;
    for id in &node_ids {
        let samples = &per_node[id];
        let meta = metadata_map
            .get(id)
            .ok_or_else(|| anyhow!("node `{id}` has flows but no metadata row"))?;
        let blocks_values = aggregate_node(samples, grid_start, blocks, aggregation)
            .with_context(|| format!("node `{id}`"))?;
        interpolated_total += blocks_values.iter().filter(|v| v.is_none()).count();
        let values = fill_gaps(id, blocks_values)?;
        series.push(TimeSeries::new(
            id.clone(),
            Timestamp(grid_start),
            BLOCK as u32,
            values,
        )?);
        metadata.push(meta.clone());
    }
    let distances = parse_distances(distances_path, &node_ids)?;
    eprintln!(
        "ingested {} nodes x {} blocks (15 min), {} interpolated points",
        node_ids.len(),
        blocks,
        interpolated_total
    );
    Ok(IngestedData {
        series,
        node_ids,
        metadata,
        distances,
    })
}
