//! Cache-directory layout and atomic file writes.
//!
//! Every cached artifact carries its fingerprint in the file name (and,
//! where the format allows, in a header), so a configuration change
//! simply misses the cache instead of silently reusing stale results.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use modecast::fingerprint;

pub fn modes_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("modes-{}.txt", fingerprint::to_hex(fp)))
}

pub fn checkpoint_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("checkpoint-{}.json", fingerprint::to_hex(fp)))
}

pub fn history_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("history-{}.csv", fingerprint::to_hex(fp)))
}

pub fn kselect_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("kselect-{}.csv", fingerprint::to_hex(fp)))
}

pub fn metrics_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("metrics-{}.json", fingerprint::to_hex(fp)))
}

pub fn ablation_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("ablation-{}.csv", fingerprint::to_hex(fp)))
}

pub fn forecasts_path(cache_dir: &Path, fp: u64) -> PathBuf {
    cache_dir.join(format!("forecasts-{}.csv", fingerprint::to_hex(fp)))
}

/// Write-temp-then-rename so readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .context("cache path has no parent directory")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating `{}`", dir.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("cache"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing `{}`", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into `{}`", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_dirs_and_content() {
        let dir = std::env::temp_dir().join(format!(
            "modecast-cache-test-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let path = dir.join("sub").join("file.txt");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        write_atomic(&path, b"replaced").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"replaced");
        // No temp files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
