//! On-disk cache of per-node mode decompositions.
//!
//! Columnar text container, one record per node. The header carries the
//! fingerprint of the decomposition configuration (plus whatever dataset
//! identity the caller folds in) so stale caches are detected instead of
//! silently reused. Floats are written in Rust's shortest round-trip
//! form, so a reload is bit-identical to the original computation.
//!
//! ```text
//! # mode cache v1
//! fingerprint <16 hex digits>
//! nodes <count>
//! node <id> k=<K> alpha=<α> tau=<τ> epsilon=<ε> len=<L> iterations=<n> converged=<bool> residual=<r>
//! omegas <ω_1> … <ω_K>
//! mode <u_1(0)> … <u_1(L−1)>        (K of these lines)
//! ```

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fingerprint;
use crate::vmd::{ModeSet, VmdConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCacheEntry {
    pub node_id: String,
    pub config: VmdConfig,
    pub mode_set: ModeSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCache {
    pub fingerprint: u64,
    pub entries: Vec<ModeCacheEntry>,
}

pub fn write_mode_cache(out: &mut impl Write, cache: &ModeCache) -> Result<()> {
    writeln!(out, "# mode cache v1")?;
    writeln!(
        out,
        "fingerprint {}",
        fingerprint::to_hex(cache.fingerprint)
    )?;
    writeln!(out, "nodes {}", cache.entries.len())?;
    for e in &cache.entries {
        if e.node_id.chars().any(|c| c.is_whitespace()) {
            return Err(Error::invalid_input(format!(
                "node id `{}` contains whitespace",
                e.node_id
            )));
        }
        let ms = &e.mode_set;
        writeln!(
            out,
            "node {} k={} alpha={} tau={} epsilon={} len={} iterations={} converged={} residual={}",
            e.node_id,
            e.config.num_modes,
            e.config.alpha,
            e.config.tau,
            e.config.epsilon,
            ms.len(),
            ms.iterations_used,
            ms.converged,
            ms.reconstruction_residual,
        )?;
        let omegas: Vec<String> = ms.omegas.iter().map(|w| w.to_string()).collect();
        writeln!(out, "omegas {}", omegas.join(" "))?;
        for mode in &ms.modes {
            let vals: Vec<String> = mode.iter().map(|v| v.to_string()).collect();
            writeln!(out, "mode {}", vals.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_mode_cache(input: &mut impl BufRead) -> Result<ModeCache> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(line))) => Ok((i + 1, line)),
            Some((i, Err(e))) => Err(Error::Parse {
                line: i + 1,
                message: e.to_string(),
            }),
            None => Err(Error::Parse {
                line: 0,
                message: format!("unexpected end of cache, expected {what}"),
            }),
        }
    };

    let (ln, header) = next("header")?;
    if header.trim() != "# mode cache v1" {
        return Err(Error::Parse {
            line: ln,
            message: "not a mode cache file".into(),
        });
    }
    let (ln, fp_line) = next("fingerprint")?;
    let fp_hex = fp_line
        .strip_prefix("fingerprint ")
        .ok_or_else(|| Error::Parse {
            line: ln,
            message: "missing fingerprint".into(),
        })?;
    let fp = u64::from_str_radix(fp_hex.trim(), 16).map_err(|e| Error::Parse {
        line: ln,
        message: format!("bad fingerprint: {e}"),
    })?;
    let (ln, nodes_line) = next("node count")?;
    let count: usize = nodes_line
        .strip_prefix("nodes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: ln,
            message: "missing node count".into(),
        })?;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, node_line) = next("node record")?;
        let mut parts = node_line.split_whitespace();
        if parts.next() != Some("node") {
            return Err(Error::Parse {
                line: ln,
                message: "expected `node` record".into(),
            });
        }
        let node_id = parts
            .next()
            .ok_or_else(|| Error::Parse {
                line: ln,
                message: "missing node id".into(),
            })?
            .to_string();
        let mut kv = std::collections::HashMap::new();
        for p in parts {
            if let Some((k, v)) = p.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let field = |name: &str| -> Result<String> {
            kv.get(name).cloned().ok_or_else(|| Error::Parse {
                line: ln,
                message: format!("missing field `{name}`"),
            })
        };
        let parse_f = |name: &str| -> Result<f64> {
            field(name)?.parse().map_err(|e| Error::Parse {
                line: ln,
                message: format!("bad `{name}`: {e}"),
            })
        };
        let parse_u = |name: &str| -> Result<usize> {
            field(name)?.parse().map_err(|e| Error::Parse {
                line: ln,
                message: format!("bad `{name}`: {e}"),
            })
        };
        let k = parse_u("k")?;
        let len = parse_u("len")?;
        let config = VmdConfig {
            num_modes: k,
            alpha: parse_f("alpha")?,
            tau: parse_f("tau")?,
            epsilon: parse_f("epsilon")?,
            ..Default::default()
        };

        let (oln, omega_line) = next("omegas")?;
        let omegas = parse_float_row(&omega_line, "omegas", oln)?;
        if omegas.len() != k {
            return Err(Error::Parse {
                line: oln,
                message: format!("expected {k} omegas, got {}", omegas.len()),
            });
        }
        let mut modes = Vec::with_capacity(k);
        for _ in 0..k {
            let (mln, mode_line) = next("mode row")?;
            let vals = parse_float_row(&mode_line, "mode", mln)?;
            if vals.len() != len {
                return Err(Error::Parse {
                    line: mln,
                    message: format!("expected {len} samples, got {}", vals.len()),
                });
            }
            modes.push(vals);
        }
        entries.push(ModeCacheEntry {
            node_id,
            config,
            mode_set: ModeSet {
                modes,
                omegas,
                iterations_used: parse_u("iterations")?,
                converged: field("converged")? == "true",
                reconstruction_residual: parse_f("residual")?,
            },
        });
    }
    Ok(ModeCache {
        fingerprint: fp,
        entries,
    })
}

fn parse_float_row(line: &str, tag: &str, ln: usize) -> Result<Vec<f64>> {
    let rest = line.strip_prefix(tag).ok_or_else(|| Error::Parse {
        line: ln,
        message: format!("expected `{tag}` row"),
    })?;
    rest.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|e| Error::Parse {
                line: ln,
                message: format!("bad float `{tok}`: {e}"),
            })
        })
        .collect()
}
