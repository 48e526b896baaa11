use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kernel::TransitionKernel;
use crate::error::{Error, Result};

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PLYKERN\0";

/// Sidecar describing a kernel blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub format_version: u32,
    pub d: usize,
    pub n_max: usize,
    pub radius: usize,
    pub entries: u64,
    /// SHA-256 of the blob, lowercase hex.
    pub checksum: String,
}

fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl TransitionKernel {
    /// Writes `path` (binary layers) and `path.json` (manifest).
    pub fn export(&self, path: &Path) -> Result<KernelManifest> {
        let entries: u64 = self.layers().iter().map(|l| l.len() as u64).sum();
        let mut blob = Vec::with_capacity(32 + 8 * entries as usize);
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&CACHE_FORMAT_VERSION.to_le_bytes());
        for v in [self.dim(), self.n_max(), self.radius()] {
            blob.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for layer in self.layers() {
            for v in layer {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = KernelManifest {
            format_version: CACHE_FORMAT_VERSION,
            d: self.dim(),
            n_max: self.n_max(),
            radius: self.radius(),
            entries,
            checksum: hex(&Sha256::digest(&blob)),
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::File::create(path)?.write_all(&blob)?;
        fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Reads a blob written by `export`, verifying manifest and checksum.
    pub fn import(path: &Path) -> Result<Self> {
        let manifest: KernelManifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
        if manifest.format_version != CACHE_FORMAT_VERSION {
            return Err(Error::Cache(format!(
                "format version {} (expected {CACHE_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut blob = Vec::new();
        fs::File::open(path)?.read_to_end(&mut blob)?;
        if hex(&Sha256::digest(&blob)) != manifest.checksum {
            return Err(Error::Cache("checksum mismatch".into()));
        }
        if blob.len() < 24 || &blob[..8] != MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(blob[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (d, n_max, radius) = (word(1), word(2), word(3));
        if (d, n_max, radius) != (manifest.d, manifest.n_max, manifest.radius) {
            return Err(Error::Cache("header disagrees with manifest".into()));
        }
        let body = &blob[24..];
        if body.len() as u64 != 8 * manifest.entries {
            return Err(Error::Cache("truncated body".into()));
        }
        let index = super::TupleIndex::new(d, radius)?;
        let mut layers = Vec::with_capacity(n_max + 1);
        let mut pos = 0usize;
        for n in 0..=n_max {
            let len = index.layer_len(n);
            if pos + 8 * len > body.len() {
                return Err(Error::Cache("truncated body".into()));
            }
            layers.push(
                body[pos..pos + 8 * len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            );
            pos += 8 * len;
        }
        TransitionKernel::from_layers(d, n_max, radius, layers)
    }

    /// Loads the cached kernel when it matches (d, n_max, radius), otherwise
    /// builds it and refreshes the cache.
    pub fn load_or_build(path: &Path, d: usize, n_max: usize, radius: usize) -> Result<Self> {
        let radius = radius.min(n_max);
        if let Ok(bytes) = fs::read(manifest_path(path)) {
            if let Ok(m) = serde_json::from_slice::<KernelManifest>(&bytes) {
                if (m.d, m.n_max, m.radius) == (d, n_max, radius) {
                    if let Ok(k) = Self::import(path) {
                        return Ok(k);
                    }
                }
            }
        }
        let k = Self::build(d, n_max, radius)?;
        k.export(path)?;
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = std::env::temp_dir().join(format!("kcache-{}", std::process::id()));
        let path = dir.join("k.bin");
        let k = TransitionKernel::build(3, 12, 10).unwrap();
        let m = k.export(&path).unwrap();
        assert_eq!((m.d, m.n_max, m.radius), (3, 12, 10));
        let back = TransitionKernel::import(&path).unwrap();
        for n in 0..=12 {
            assert_eq!(k.layer(n), back.layer(n));
        }
        let mut blob = fs::read(&path).unwrap();
        let last = blob.len() - 1;
        blob[last] ^= 1;
        fs::write(&path, &blob).unwrap();
        assert!(matches!(TransitionKernel::import(&path), Err(Error::Cache(_))));
        let rebuilt = TransitionKernel::load_or_build(&path, 3, 12, 10).unwrap();
        assert_eq!(rebuilt.layer(12), k.layer(12));
        fs::remove_dir_all(&dir).ok();
    }
}
