//! Style transforms for perturbing static appearance.
//!
//! Real studies feed frames from an external video stylizer
//! ([`StyleKind::ExternalPrecomputed`]). The built-in proxies are pointwise,
//! deterministic, and applied identically to every frame, so they never
//! perturb temporal structure.

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{read_frame_dir, FrameSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinStyle {
    /// Leaves pixels unchanged. Test style.
    IdentityCheck,
    /// `(r, g, b) -> (b, r, g)`.
    ChannelRotate,
    /// Four levels per channel: `floor(x / 64) * 64 + 32`.
    Posterize4,
    /// Luminance-preserving hue rotation by 120° (SVG `feColorMatrix` hueRotate).
    HueShift120,
    /// BT.601 luma mirrored around mid-gray, chroma kept.
    LuminanceInvert,
}

impl BuiltinStyle {
    pub const PROXIES: [&'static str; 4] = ["channel-rotate", "posterize-4", "hue-shift-120", "luminance-invert"];

    pub fn from_id(id: &str) -> Option<Self> {
        Some(match id {
            "identity-check" => BuiltinStyle::IdentityCheck,
            "channel-rotate" => BuiltinStyle::ChannelRotate,
            "posterize-4" => BuiltinStyle::Posterize4,
            "hue-shift-120" => BuiltinStyle::HueShift120,
            "luminance-invert" => BuiltinStyle::LuminanceInvert,
            _ => return None,
        })
    }

    pub fn apply_pixel(self, [r, g, b]: [u8; 3]) -> [u8; 3] {
        match self {
            BuiltinStyle::IdentityCheck => [r, g, b],
            BuiltinStyle::ChannelRotate => [b, r, g],
            BuiltinStyle::Posterize4 => [r, g, b].map(|x| (x / 64) * 64 + 32),
            BuiltinStyle::HueShift120 => {
                let m = &*HUE_ROTATE_120;
                let (r, g, b) = (r as f64, g as f64, b as f64);
                let q = |row: [f64; 3]| (row[0] * r + row[1] * g + row[2] * b).round().clamp(0.0, 255.0) as u8;
                [q(m[0]), q(m[1]), q(m[2])]
            }
            BuiltinStyle::LuminanceInvert => {
                let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                let shift = 255.0 - 2.0 * luma;
                [r, g, b].map(|x| (x as f64 + shift).round().clamp(0.0, 255.0) as u8)
            }
        }
    }

    pub fn apply(self, image: &RgbImage) -> RgbImage {
        let mut out = image.clone();
        for p in out.pixels_mut() {
            *p = Rgb(self.apply_pixel(p.0));
        }
        out
    }
}

static HUE_ROTATE_120: std::sync::LazyLock<[[f64; 3]; 3]> = std::sync::LazyLock::new(|| hue_rotate_matrix(120.0));

fn hue_rotate_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    [
        [0.213 + c * 0.787 - s * 0.213, 0.715 - c * 0.715 - s * 0.715, 0.072 - c * 0.072 + s * 0.928],
        [0.213 - c * 0.213 + s * 0.143, 0.715 + c * 0.285 + s * 0.140, 0.072 - c * 0.072 - s * 0.283],
        [0.213 - c * 0.213 - s * 0.787, 0.715 - c * 0.715 + s * 0.715, 0.072 + c * 0.928 + s * 0.072],
    ]
}

/// Apply a built-in style by id.
pub fn builtin_style(image: &RgbImage, style_id: &str) -> Result<RgbImage> {
    BuiltinStyle::from_id(style_id)
        .map(|s| s.apply(image))
        .ok_or_else(|| Error::UnknownStyle(style_id.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleKind {
    ExternalPrecomputed,
    BuiltinProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleTransform {
    pub style_id: String,
    pub kind: StyleKind,
    /// For external styles: `root`, the dataset directory holding
    /// `<video_id>/styles/<style_id>/` frame folders.
    pub params: BTreeMap<String, String>,
}

impl StyleTransform {
    pub fn builtin(style_id: &str) -> Result<Self> {
        BuiltinStyle::from_id(style_id).ok_or_else(|| Error::UnknownStyle(style_id.to_string()))?;
        Ok(StyleTransform {
            style_id: style_id.to_string(),
            kind: StyleKind::BuiltinProxy,
            params: BTreeMap::new(),
        })
    }

    pub fn external(style_id: &str, root: impl Into<PathBuf>) -> Self {
        let root: PathBuf = root.into();
        StyleTransform {
            style_id: style_id.to_string(),
            kind: StyleKind::ExternalPrecomputed,
            params: BTreeMap::from([("root".to_string(), root.to_string_lossy().into_owned())]),
        }
    }

    /// Built-in if the id names a proxy, otherwise precomputed frames under `root`.
    pub fn resolve(style_id: &str, root: impl Into<PathBuf>) -> Self {
        Self::builtin(style_id).unwrap_or_else(|_| Self::external(style_id, root))
    }

    fn external_dir(&self, video_id: &str) -> Result<PathBuf> {
        let root = self
            .params
            .get("root")
            .ok_or_else(|| Error::InvalidArgument(format!("external style {} has no root", self.style_id)))?;
        Ok(PathBuf::from(root).join(video_id).join("styles").join(&self.style_id))
    }

    /// Stylize a whole sequence, frame by frame.
    pub fn apply_sequence(&self, seq: &FrameSequence) -> Result<FrameSequence> {
        let frames = match self.kind {
            StyleKind::BuiltinProxy => {
                let style = BuiltinStyle::from_id(&self.style_id)
                    .ok_or_else(|| Error::UnknownStyle(self.style_id.clone()))?;
                seq.frames.iter().map(|f| style.apply(f)).collect()
            }
            StyleKind::ExternalPrecomputed => {
                let dir = self.external_dir(&seq.video_id)?;
                let frames = read_frame_dir(&dir)?;
                if frames.len() != seq.frames.len() {
                    return Err(Error::InvalidArgument(format!(
                        "style {} for {} has {} frames, source has {}",
                        self.style_id,
                        seq.video_id,
                        frames.len(),
                        seq.frames.len()
                    )));
                }
                frames
            }
        };
        FrameSequence::new(&seq.video_id, frames)
    }

    /// Stylize frame `index` of a video.
    pub fn apply_frame(&self, video_id: &str, index: usize, image: &RgbImage) -> Result<RgbImage> {
        match self.kind {
            StyleKind::BuiltinProxy => builtin_style(image, &self.style_id),
            StyleKind::ExternalPrecomputed => {
                let dir = self.external_dir(video_id)?;
                let mut frames = read_frame_dir(&dir)?;
                if index >= frames.len() {
                    return Err(Error::InvalidArgument(format!(
                        "style {} for {video_id} has no frame {index}",
                        self.style_id
                    )));
                }
                Ok(frames.swap_remove(index))
            }
        }
    }
}
