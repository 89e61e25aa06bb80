//! Per-stage manifests: what a stage consumed and produced.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Artifact name to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    pub fn read(dir: &Path, stage: &str) -> Option<StageManifest> {
        let text = std::fs::read_to_string(dir.join(Self::file_name(stage))).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(Self::file_name(&self.stage)), text)?;
        Ok(())
    }

    /// True when `self` records the same request and every output is still
    /// on disk unchanged.
    pub fn satisfies(&self, stage: &str, config_hash: &str, seed: Option<u64>, inputs: &BTreeMap<String, String>, dir: &Path) -> bool {
        self.stage == stage
            && self.config_hash == config_hash
            && self.seed == seed
            && &self.inputs == inputs
            && self.outputs.iter().all(|(name, h)| hash_file(&dir.join(name)).ok().as_deref() == Some(h.as_str()))
    }
}

pub fn hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    hex(h.finish())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = fnv::FnvHasher::default();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.write(&buf[..n]);
    }
    Ok(hex(h.finish()))
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    hash_bytes(&serde_json::to_vec(value).expect("config serializes"))
}
