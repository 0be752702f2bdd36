//! Scene files and dataset manifests.
//!
//! Scene files hold one JSON scene per line. A manifest is a JSON document
//! naming scene files by split.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{sample_scene, stable_hash, Scene};
use super::EnvConfig;
use crate::error::{CoreError, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub fn read_scenes(reader: impl BufRead) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene =
            serde_json::from_str(&line).map_err(|source| CoreError::Record { line: i + 1, source })?;
        scene
            .validate()
            .map_err(|e| CoreError::contract(format!("line {}: {e}", i + 1)))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn write_scenes<'a>(scenes: impl IntoIterator<Item = &'a Scene>, mut writer: impl Write) -> Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    read_scenes(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_scenes(scenes, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Hard,
}

impl Split {
    fn tag(self) -> &'static [u8] {
        match self {
            Split::Train => b"train",
            Split::Eval => b"eval",
            Split::Hard => b"hard",
        }
    }
}

/// `n` scenes for `split`. Each split draws from its own hashed seed space,
/// so splits built from one root seed never share a scene.
pub fn sample_split(cfg: &EnvConfig, split: Split, root_seed: u64, n: usize) -> Result<Vec<Scene>> {
    let cfg = if split == Split::Hard { cfg.hard() } else { cfg.clone() };
    (0..n as u64)
        .map(|i| sample_scene(&cfg, stable_hash(&[split.tag(), &root_seed.to_le_bytes(), &i.to_le_bytes()])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: Split,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub env: EnvConfig,
    pub files: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(env: EnvConfig) -> Self {
        DatasetManifest { format_version: MANIFEST_VERSION, env, files: Vec::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != MANIFEST_VERSION {
            return Err(CoreError::Version { what: "dataset manifest", found, expected: MANIFEST_VERSION });
        }
        let m: DatasetManifest = serde_json::from_value(raw)?;
        m.env.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// All scenes of `split`, in file order, with the per-file counts checked.
    pub fn scenes(&self, base: &Path, split: Split) -> Result<Vec<Scene>> {
        let mut out = Vec::new();
        for entry in self.files.iter().filter(|e| e.split == split) {
            let scenes = load_scenes(&base.join(&entry.path))?;
            if scenes.len() != entry.scenes {
                return Err(CoreError::contract(format!(
                    "{} holds {} scenes, manifest says {}",
                    entry.path.display(),
                    scenes.len(),
                    entry.scenes
                )));
            }
            out.extend(scenes);
        }
        Ok(out)
    }
}
