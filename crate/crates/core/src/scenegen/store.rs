//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json      generator parameters, seeds, file list, optional split
//! <dir>/scene_0000.png     rendered frame (scene description embedded as iTXt)
//! <dir>/scene_0000.json    ground-truth sidecar
//! ```
//!
//! The manifest's parameters regenerate every scene bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetParams, GroundTruth, SceneSpec, split_indices};
use crate::error::{Error, Result};
use crate::imaging::io::{SCENE_KEYWORD, encode_png};

pub const MANIFEST_FORMAT: &str = "seatwatch-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub params: DatasetParams,
    pub scenes: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub image: String,
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train_ratio: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-scene sidecar: the scene description plus its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub index: usize,
    pub seed: u64,
    pub scene: SceneSpec,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub index: usize,
    pub spec: SceneSpec,
    pub truth: GroundTruth,
    pub image_path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub scenes: Vec<LoadedScene>,
}

fn stem(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, train_ratio: Option<f64>) -> Result<Manifest> {
    let split = match train_ratio {
        Some(ratio) => {
            let (train, test) = split_indices(dataset.scenes.len(), ratio, dataset.params.seed)?;
            Some(SplitRecord { train_ratio: ratio, train, test })
        }
        None => None,
    };
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.scenes.len());
    for scene in &dataset.scenes {
        let image = format!("{}.png", stem(scene.index));
        let truth = format!("{}.json", stem(scene.index));
        let scene_json = serde_json::to_string(&scene.spec)?;
        std::fs::write(dir.join(&image), encode_png(&scene.image, &[(SCENE_KEYWORD, &scene_json)])?)?;
        let sidecar = TruthSidecar {
            index: scene.index,
            seed: scene.spec.seed,
            scene: scene.spec.clone(),
            truth: scene.truth.clone(),
        };
        std::fs::write(dir.join(&truth), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        entries.push(ManifestEntry { index: scene.index, seed: scene.spec.seed, image, truth });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        params: dataset.params.clone(),
        scenes: entries,
        split,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Dataset(format!(
            "unsupported manifest format '{}', expected '{MANIFEST_FORMAT}'",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Loads a dataset directory and cross-checks every sidecar against the
/// manifest.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = read_manifest(dir)?;
    if manifest.scenes.len() != manifest.params.n {
        return Err(Error::Dataset(format!(
            "manifest lists {} scenes but parameters say {}",
            manifest.scenes.len(),
            manifest.params.n
        )));
    }
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for entry in &manifest.scenes {
        let truth_path = dir.join(&entry.truth);
        let text = std::fs::read_to_string(&truth_path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", truth_path.display())))?;
        let sidecar: TruthSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", truth_path.display())))?;
        if sidecar.index != entry.index || sidecar.seed != entry.seed || sidecar.scene.seed != entry.seed {
            return Err(Error::Dataset(format!(
                "{} does not match manifest entry {} (seed {})",
                entry.truth, entry.index, entry.seed
            )));
        }
        if sidecar.scene.layout != manifest.params.layout {
            return Err(Error::Dataset(format!("{} uses a different seat layout than the manifest", entry.truth)));
        }
        let image_path = dir.join(&entry.image);
        if !image_path.is_file() {
            return Err(Error::Dataset(format!("missing scene image {}", image_path.display())));
        }
        scenes.push(LoadedScene { index: entry.index, spec: sidecar.scene, truth: sidecar.truth, image_path });
    }
    Ok(LoadedDataset { dir: dir.to_path_buf(), manifest, scenes })
}
