//! Run manifests written at the root of every output directory.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ratsir::synthdata::{DATA_BLOB, DATA_MANIFEST};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the effective configuration serialized as compact JSON.
    pub config_hash: String,
    /// SHA-256 over the dataset manifest followed by its blob.
    pub dataset_hash: Option<String>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn hash_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn hash_dataset(dir: &Path) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    for name in [DATA_MANIFEST, DATA_BLOB] {
        let mut f = fs::File::open(dir.join(name))?;
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config_hash: String) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config_hash,
            dataset_hash: None,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now_unix(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, out: &Path) -> anyhow::Result<()> {
        self.finished_unix = now_unix();
        fs::write(out.join(RUN_MANIFEST), serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}
