//! On-disk cache of standard SαS quantile tables.
//!
//! One binary file per (α, seed, n). A text header records the format
//! version and α as decimal text, followed by the 999 quantiles as
//! little-endian f64. Files are written to a temporary name and renamed, so
//! readers never see a partial table.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use opsrf_core::stable_core::{SasQuantileTable, QUANTILE_LEVELS};

use crate::error::CliError;

pub const CACHE_ENV: &str = "OPSRF_CACHE_DIR";
const MAGIC: &str = "opsrf-sas-quantiles";
const VERSION: u32 = 1;
/// Sample size of cached tables.
pub const DEFAULT_SAMPLES: usize = 10_000_000;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug)]
pub struct QuantileCache {
    dir: PathBuf,
    generate: bool,
}

impl QuantileCache {
    pub fn new(dir: impl Into<PathBuf>, generate: bool) -> Self {
        QuantileCache { dir: dir.into(), generate }
    }

    /// Directory from `OPSRF_CACHE_DIR`, else `<tmp>/opsrf-cache`.
    pub fn from_env(generate: bool) -> Self {
        let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("opsrf-cache"));
        Self::new(dir, generate)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, alpha: f64, seed: u64, n: usize) -> PathBuf {
        self.dir.join(format!("sas_a{alpha}_s{seed}_n{n}.bin"))
    }

    /// Loads the table, generating and storing it on a miss when allowed.
    pub fn get(&self, alpha: f64, seed: u64, n: usize) -> Result<SasQuantileTable, CliError> {
        let path = self.path_for(alpha, seed, n);
        if let Ok(bytes) = fs::read(&path) {
            return decode(&bytes, alpha, seed, n as u64)
                .map_err(|e| CliError::Runtime(format!("corrupt quantile cache {}: {e}", path.display())));
        }
        if !self.generate {
            return Err(CliError::Runtime(format!(
                "no cached SαS quantiles for α = {alpha} at {} and generation is disabled",
                path.display()
            )));
        }
        let table = SasQuantileTable::generate(alpha, n, seed)?;
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!(".{}.{}.tmp", path.file_name().and_then(|s| s.to_str()).unwrap_or("q"), std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encode(&table))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(table)
    }
}

pub fn encode(t: &SasQuantileTable) -> Vec<u8> {
    let mut out = format!("{MAGIC}\nversion={VERSION}\nalpha={}\nseed={}\nsamples={}\n\n", t.alpha, t.seed, t.samples).into_bytes();
    for q in t.levels() {
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], alpha: f64, seed: u64, n: u64) -> Result<SasQuantileTable, String> {
    let split = bytes.windows(2).position(|w| w == b"\n\n").ok_or("missing header terminator")?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| "header is not text")?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err("bad magic".into());
    }
    let mut fields = std::collections::BTreeMap::new();
    for l in lines {
        let (k, v) = l.split_once('=').ok_or("bad header line")?;
        fields.insert(k, v);
    }
    if fields.get("version") != Some(&VERSION.to_string().as_str()) {
        return Err("unsupported version".into());
    }
    let a: f64 = fields.get("alpha").and_then(|v| v.parse().ok()).ok_or("bad alpha")?;
    let s: u64 = fields.get("seed").and_then(|v| v.parse().ok()).ok_or("bad seed")?;
    let m: u64 = fields.get("samples").and_then(|v| v.parse().ok()).ok_or("bad sample count")?;
    if a != alpha || s != seed || m != n {
        return Err(format!("key mismatch: file holds (α={a}, seed={s}, n={m})"));
    }
    let body = &bytes[split + 2..];
    if body.len() != 8 * QUANTILE_LEVELS {
        return Err(format!("expected {} quantile bytes, found {}", 8 * QUANTILE_LEVELS, body.len()));
    }
    let q = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    SasQuantileTable::from_parts(a, m, s, q).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let off = QuantileCache::new(dir.path(), false);
        assert!(matches!(off.get(1.5, 3, 20_000), Err(CliError::Runtime(_))));
        let on = QuantileCache::new(dir.path(), true);
        let t = on.get(1.5, 3, 20_000).unwrap();
        // now a hit even with generation disabled
        let again = off.get(1.5, 3, 20_000).unwrap();
        assert_eq!(t, again);
        let bytes = fs::read(on.path_for(1.5, 3, 20_000)).unwrap();
        assert!(bytes.starts_with(b"opsrf-sas-quantiles\nversion=1\nalpha=1.5\n"));
        assert!(decode(&bytes, 1.2, 3, 20_000).is_err());
        assert!(decode(&bytes[..bytes.len() - 1], 1.5, 3, 20_000).is_err());
        assert!(t.quantile(0.5).unwrap().0.abs() < 0.05);
    }
}
