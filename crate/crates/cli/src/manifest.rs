use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use harmonize_core::pipeline::{AblationAxis, PipelineConfig, RunArtifacts};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub src: InputFile,
    pub mask: InputFile,
    pub tar: InputFile,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub config: PipelineConfig,
    pub inputs: Inputs,
    pub outputs: BTreeMap<&'static str, String>,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionEntry {
    pub name: String,
    pub axis: AblationAxis,
    pub config: PipelineConfig,
    pub outputs: BTreeMap<&'static str, String>,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

impl ConditionEntry {
    pub fn new(name: &str, axis: AblationAxis, run: &RunArtifacts, image: &Path) -> Self {
        Self {
            name: name.to_string(),
            axis,
            config: run.config.clone(),
            outputs: BTreeMap::from([("image", image.display().to_string())]),
            timings_ms: run.timings.as_millis(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationManifest {
    pub version: &'static str,
    pub axis: AblationAxis,
    pub config: PipelineConfig,
    pub inputs: Inputs,
    pub conditions: Vec<ConditionEntry>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
