//! Static, dynamic and identical input pairs.
//!
//! Action recognition: static pairs keep the style and shuffle frame order,
//! dynamic pairs keep frame order and swap styles. VOS: static pairs keep the
//! styled RGB frame and jitter the flow frame, dynamic pairs keep the flow and
//! swap styles. Identical pairs duplicate one styled member. Every draw comes
//! from the crate's seeded [`SplitMix64`](crate::rng::SplitMix64).

pub mod flow;
pub mod pairs;
pub mod style;

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::tensorio::write_atomic;

pub use flow::{jitter_flow, FlowFrame, FlowJitterParams};
pub use pairs::{
    generate_dataset_pairs, make_pairs_action, make_pairs_vos, ActionPair, DatasetPairsConfig, JitterRanges,
    PairCounts, VosMember, VosPair,
};
pub use style::{builtin_style, BuiltinStyle, StyleKind, StyleTransform};

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub frames: Vec<RgbImage>,
    /// Frames per second as (numerator, denominator), when known.
    pub fps: Option<(u32, u32)>,
}

impl FrameSequence {
    pub fn new(video_id: &str, frames: Vec<RgbImage>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidArgument(format!("video {video_id} has no frames")));
        };
        let dims = first.dimensions();
        if let Some(i) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(Error::InvalidArgument(format!(
                "video {video_id}: frame {i} is {:?}, frame 0 is {dims:?}",
                frames[i].dimensions()
            )));
        }
        Ok(FrameSequence {
            video_id: video_id.to_string(),
            frames,
            fps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    pub fn reorder(&self, order: &[usize]) -> FrameSequence {
        FrameSequence {
            video_id: self.video_id.clone(),
            frames: order.iter().map(|&i| self.frames[i].clone()).collect(),
            fps: self.fps,
        }
    }
}

/// The frame order produced by `perm_seed` for a clip of `n` frames:
/// output frame `i` is input frame `order[i]`.
pub fn permutation_for(perm_seed: Seed, n: usize) -> Vec<usize> {
    perm_seed.rng().permutation(n)
}

/// Shuffle frames along time with a Fisher–Yates permutation drawn from
/// `perm_seed`. Returns the shuffled sequence and the order used.
pub fn shuffle_frames(seq: &FrameSequence, perm_seed: Seed) -> (FrameSequence, Vec<usize>) {
    let order = permutation_for(perm_seed, seq.len());
    (seq.reorder(&order), order)
}

fn frame_number(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

/// Numbered frame files (`000000.png`, ...) in `dir`, sorted by number.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            if let Some(n) = frame_number(&path) {
                files.push((n, path));
            }
        }
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frame(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

pub fn read_frame_dir(dir: &Path) -> Result<Vec<RgbImage>> {
    list_frame_files(dir)?.iter().map(|p| read_frame(p)).collect()
}

pub fn read_sequence(dir: &Path, video_id: &str) -> Result<FrameSequence> {
    FrameSequence::new(video_id, read_frame_dir(dir)?)
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    image
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))?;
    write_atomic(path, &bytes)
}

/// Write frames as `dir/%06d.png`.
pub fn write_frames(dir: &Path, frames: &[RgbImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_png(&dir.join(format!("{i:06}.png")), f)?;
    }
    Ok(())
}
