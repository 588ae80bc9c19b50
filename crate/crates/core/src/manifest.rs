//! Sidecar manifests written next to every stage output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::pooling::DistractorPick;
use crate::seeding::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// File name only, so manifests do not depend on the working directory.
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        })
    }
}

/// One answer candidate in the flattened response corpus of a build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub response_index: usize,
    pub video_id: String,
    pub choice_index: u32,
    pub text: String,
    pub pool_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub qid: String,
    pub answer_response_index: usize,
    pub answer_pool_id: usize,
    pub distractors: Vec<DistractorPick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub stage: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub providers: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<ResponseEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<RecordProvenance>>,
}

impl Manifest {
    pub fn new(stage: &str, config: &PipelineConfig) -> Self {
        Self {
            tool: concat!("cake-forge ", env!("CARGO_PKG_VERSION")).to_string(),
            stage: stage.to_string(),
            config_hash: config.hash(),
            master_seed: config.seed,
            stage_seeds: config.stage_seeds(),
            providers: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            responses: None,
            provenance: None,
        }
    }

    pub fn provider(mut self, role: &str, id: &str) -> Self {
        self.providers.insert(role.to_string(), id.to_string());
        self
    }

    pub fn input(mut self, path: &Path) -> std::io::Result<Self> {
        self.inputs.push(InputDigest::of(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        self
    }

    pub fn count(mut self, key: &str, value: usize) -> Self {
        self.counts.insert(key.to_string(), value as u64);
        self
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// `<output>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    sidecar(output, "manifest.json")
}

/// `<output>.<suffix>`
pub fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(manifest_path(Path::new("out/data.csv")), PathBuf::from("out/data.csv.manifest.json"));
        assert_eq!(sidecar(Path::new("x.csv"), "pools.jsonl"), PathBuf::from("x.csv.pools.jsonl"));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let m = Manifest::new("test", &PipelineConfig::default())
            .provider("completion", "mock")
            .input(&input)
            .unwrap()
            .count("records", 3);
        assert_eq!(m.inputs[0].name, "in.txt");
        assert_eq!(
            m.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
    }
}
