//! On-disk dataset layout.
//!
//! ```text
//! <root>/train/clip_000/   noisy/ clean/ h1/ h2/ tracks.txt background.pgm
//! <root>/heldout/clip_000/ ...
//! ```
//!
//! Readers for the training path touch only `noisy/`, `h1/` and `h2/`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::TrainClip;
use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};
use crate::metrics::{truth_boxes_for, DetectionSet};
use crate::proxy::{proxy_clip, save_pairs, HedgingPair, ProxyConfig};
use crate::sonargen::{gen_scene, render_clip, ObjectTrack, RenderedClip, SceneConfig, SceneTruth};

pub const TRAIN: &str = "train";
pub const HELDOUT: &str = "heldout";

/// Scene seed of clip `i` in a split; held-out seeds never collide with
/// training seeds for fewer than 5000 clips.
pub fn clip_seed(base_seed: u64, split: &str, i: usize) -> u64 {
    let offset = if split == HELDOUT { 5000 } else { 0 };
    base_seed.wrapping_mul(10_000).wrapping_add(offset + i as u64)
}

pub fn clip_dir(root: &Path, split: &str, i: usize) -> PathBuf {
    root.join(split).join(format!("clip_{i:03}"))
}

/// Clip directories of a split in name order.
pub fn clip_dirs(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let entries = fs::read_dir(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("clip_")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Io(format!("{}: no clip_* directories", dir.display())));
    }
    Ok(out)
}

pub fn generate(cfg: &SceneConfig, seed: u64) -> Result<(SceneTruth, RenderedClip)> {
    let truth = gen_scene(cfg, seed)?;
    let clip = render_clip(&truth, cfg)?;
    Ok((truth, clip))
}

pub fn write_scene(dir: &Path, truth: &SceneTruth, clip: &RenderedClip) -> Result<()> {
    clip.noisy.save(&dir.join("noisy"), truth.seed)?;
    clip.clean.save(&dir.join("clean"), truth.seed)?;
    fs::write(dir.join("tracks.txt"), truth.tracks_to_text())?;
    fs::write(dir.join("background.pgm"), truth.static_background.to_pgm())?;
    Ok(())
}

pub fn read_noisy(dir: &Path) -> Result<Clip> {
    Ok(Clip::load(&dir.join("noisy"))?.0)
}

/// Evaluation only.
pub fn read_clean(dir: &Path) -> Result<Clip> {
    Ok(Clip::load(&dir.join("clean"))?.0)
}

pub fn write_pairs(dir: &Path, pairs: &[HedgingPair], fps: f64) -> Result<()> {
    save_pairs(pairs, fps, dir, 0)
}

/// Computes and writes the hedging pairs of one clip directory.
pub fn build_pairs(dir: &Path, cfg: &ProxyConfig) -> Result<()> {
    let noisy = read_noisy(dir)?;
    let pairs = proxy_clip(&noisy, cfg)?;
    write_pairs(dir, &pairs, noisy.fps)
}

pub fn read_pairs(dir: &Path) -> Result<Vec<HedgingPair>> {
    let (h1, _) = Clip::load(&dir.join("h1"))?;
    let (h2, _) = Clip::load(&dir.join("h2"))?;
    if h1.len() != h2.len() {
        return Err(Error::Format(format!("{}: h1 and h2 differ in length", dir.display())));
    }
    Ok(h1
        .frames
        .into_iter()
        .zip(h2.frames)
        .map(|(h1, h2)| HedgingPair { h1, h2 })
        .collect())
}

pub fn read_train_clip(dir: &Path) -> Result<TrainClip> {
    Ok(TrainClip {
        noisy: read_noisy(dir)?,
        pairs: read_pairs(dir)?,
    })
}

/// The parts of the generator truth evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTruth {
    pub background: Frame,
    pub tracks: Vec<ObjectTrack>,
}

impl EvalTruth {
    pub fn from_scene(truth: &SceneTruth) -> Self {
        Self {
            background: truth.static_background.clone(),
            tracks: truth.object_tracks.clone(),
        }
    }

    pub fn boxes(&self) -> DetectionSet {
        let n = self.tracks.first().map_or(0, |t| t.centers.len());
        truth_boxes_for(&self.tracks, n, self.background.width, self.background.height)
    }
}

pub fn read_truth(dir: &Path) -> Result<EvalTruth> {
    let bg_path = dir.join("background.pgm");
    let bg = fs::read(&bg_path).map_err(|e| Error::Io(format!("{}: {e}", bg_path.display())))?;
    let tr_path = dir.join("tracks.txt");
    let text = fs::read_to_string(&tr_path).map_err(|e| Error::Io(format!("{}: {e}", tr_path.display())))?;
    Ok(EvalTruth {
        background: Frame::from_pgm(&bg)?,
        tracks: SceneTruth::tracks_from_text(&text)?,
    })
}
