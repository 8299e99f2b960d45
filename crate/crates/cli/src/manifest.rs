//! Per-run manifest, written into the output directory before any other
//! artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::Context;
use gradechat_core::digest::{sha256_hex, PartsDigest};
use gradechat_core::lm::sampling::sub_seed;
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::failure::{fail, Exit};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Named sub-seeds derived from the run seed. Each consumer of randomness
/// draws from its own stream.
pub fn sub_seeds(seed: u64) -> BTreeMap<String, u64> {
    ["tutor_lm", "student_lm", "ppl_lm", "predictor", "suite", "prompt", "chat"]
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), sub_seed(seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Hashes a file, or every file below a directory in sorted path order.
pub fn digest_input(path: &Path) -> anyhow::Result<InputDigest> {
    let sha256 = if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut d = PartsDigest::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            d.part(rel.to_string_lossy().as_bytes());
            d.part(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
        }
        d.finish()
    } else {
        sha256_hex(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
    };
    Ok(InputDigest { path: path.display().to_string(), sha256 })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub config: Settings,
    /// Subcommand arguments that are not part of [`Settings`].
    pub arguments: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &Settings, arguments: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            sub_seeds: sub_seeds(config.seed),
            config: config.clone(),
            arguments,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(digest_input(path)?);
        Ok(())
    }

    pub fn input_if_set(&mut self, path: Option<&Path>) -> anyhow::Result<()> {
        path.map_or(Ok(()), |p| self.input(p))
    }

    pub fn sub_seed(&self, name: &str) -> u64 {
        self.sub_seeds[name]
    }

    /// Creates `out` and writes the manifest into it.
    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Resolves a file name under `out`, refusing anything that would escape it.
pub fn output_path(out: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let rel = Path::new(name);
    let ok = !name.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
    if !ok {
        return Err(fail(
            Exit::Validation,
            format!("{name:?} must be a plain relative path inside the output directory"),
        ));
    }
    Ok(out.join(rel))
}
