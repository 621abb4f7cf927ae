//! Run manifest: content hashes of every stage's inputs and outputs.
//!
//! A stage refuses to run when an upstream artifact no longer matches the
//! hash recorded when it was written. The manifest carries no timestamps so
//! identical runs produce identical files.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{absolute, read_json, write_json, Layout};
use crate::config::RunConfig;
use crate::error::{CliError, Result, Stage};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Path (relative to the output root when inside it) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub cluster_seed: u64,
    /// Hash of the effective configuration, output directory excluded.
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.paths.out = Default::default();
    for p in [&mut c.paths.wifi, &mut c.paths.meter].into_iter().flatten() {
        *p = absolute(p);
    }
    let text = toml::to_string(&c).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Manifest {
    pub fn load_or_new(layout: &Layout, config: &RunConfig) -> Result<Self> {
        let path = layout.manifest();
        let mut m = if path.exists() { read_json(Stage::Ingest, &path)? } else { Manifest::default() };
        m.tool = env!("CARGO_PKG_NAME").to_string();
        m.version = env!("CARGO_PKG_VERSION").to_string();
        m.seed = config.seed;
        m.cluster_seed = config.cluster_seed();
        m.config_sha256 = config_hash(config);
        Ok(m)
    }

    pub fn save(&self, layout: &Layout) -> Result<()> {
        write_json(Stage::Report, &layout.manifest(), self)
    }

    /// Verifies that `paths`, written by `upstream`, still carry the hashes
    /// recorded for them.
    pub fn check_upstream(&self, layout: &Layout, stage: Stage, upstream: Stage, paths: &[&Path]) -> Result<()> {
        let record = self.stages.get(upstream.as_str()).ok_or_else(|| {
            CliError::stage(stage, format!("no manifest record for upstream stage {upstream}; run it first"))
        })?;
        for path in paths {
            let key = layout.relative(path);
            let expected = record.outputs.get(&key).ok_or_else(|| {
                CliError::stage(stage, format!("{key} is not an output of {upstream}; rerun {upstream}"))
            })?;
            let actual = sha256_file(path).map_err(|e| CliError::stage(stage, format!("{key}: {e}")))?;
            if &actual != expected {
                return Err(CliError::stage(
                    stage,
                    format!("stale upstream artifact {key}: hash mismatch with manifest; rerun {upstream}"),
                ));
            }
        }
        Ok(())
    }

    /// Records a stage's inputs and outputs, replacing any earlier record.
    pub fn record(&mut self, layout: &Layout, stage: Stage, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let hash_all = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let hash = sha256_file(p).map_err(|e| CliError::stage(stage, format!("{}: {e}", p.display())))?;
                    Ok((layout.relative(p), hash))
                })
                .collect()
        };
        let record = StageRecord { inputs: hash_all(inputs)?, outputs: hash_all(outputs)? };
        self.stages.insert(stage.as_str().to_string(), record);
        Ok(())
    }
}
