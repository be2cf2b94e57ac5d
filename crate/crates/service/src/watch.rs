//! Polling directory ingestor.
//!
//! Image files dropped into the watched directory are ingested into one room
//! in file-name order and then moved to `processed/` or `failed/`. A scene
//! description may accompany `x.png` as `x.scene.json`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::state::{AppState, IngestOptions, Upload};

#[derive(Clone, Debug)]
pub struct WatchConfig {
    pub dir: PathBuf,
    pub room_id: String,
    pub interval: Duration,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn pending(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn move_into(path: &Path, sub: &str) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    let target = parent.join(sub);
    std::fs::create_dir_all(&target)?;
    std::fs::rename(path, target.join(path.file_name().unwrap_or_default()))
}

/// Handles every file currently waiting; returns how many were ingested.
pub async fn scan_once(state: &AppState, cfg: &WatchConfig) -> std::io::Result<usize> {
    let mut ingested = 0;
    for path in pending(&cfg.dir)? {
        let bytes = std::fs::read(&path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string();
        let scene_path = path.with_file_name(format!("{stem}.scene.json"));
        let scene = std::fs::read_to_string(&scene_path).ok();
        let upload = Upload { bytes, scene };
        match state.ingest(&cfg.room_id, upload, IngestOptions { frame_id: Some(stem), timestamp: None }).await {
            Ok(_) => {
                ingested += 1;
                move_into(&path, "processed")?;
            }
            Err(e) => {
                tracing::warn!(file = %path.display(), error = %e, "watched frame rejected");
                move_into(&path, "failed")?;
            }
        }
        if scene_path.is_file() {
            move_into(&scene_path, "processed")?;
        }
    }
    Ok(ingested)
}

pub async fn run(state: AppState, cfg: WatchConfig) {
    let mut stop = state.shutdown_signal();
    loop {
        if let Err(e) = scan_once(&state, &cfg).await {
            tracing::warn!(dir = %cfg.dir.display(), error = %e, "watch scan failed");
        }
        tokio::select! {
            _ = tokio::time::sleep(cfg.interval) => {}
            _ = stop.changed() => return,
        }
    }
}
