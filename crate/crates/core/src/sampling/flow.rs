//! RGB-encoded optical flow: hue carries direction, saturation carries magnitude.
//!
//! Encoding used throughout (value channel fixed at 1):
//!
//! ```text
//! hue        = atan2(v, u) in degrees, wrapped to [0, 360)
//! saturation = min(|(u, v)| / max_magnitude, 1)
//! ```

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::rng::Seed;

/// 8-bit RGB to (hue in degrees `[0, 360)`, saturation `[0, 1]`, value `[0, 1]`).
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { chroma / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Angular resolution, in degrees, of the hue of an 8-bit pixel. `None` for gray.
pub fn hue_step_degrees([r, g, b]: [u8; 3]) -> Option<f64> {
    let chroma = r.max(g).max(b) - r.min(g).min(b);
    (chroma > 0).then(|| 60.0 / chroma as f64)
}

/// Absolute difference of two angles in degrees, in `[0, 180]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowFrame(pub RgbImage);

impl FlowFrame {
    /// Render a dense flow field of `width × height` vectors.
    pub fn encode(width: u32, height: u32, max_magnitude: f64, field: impl Fn(u32, u32) -> (f64, f64)) -> Self {
        FlowFrame(RgbImage::from_fn(width, height, |x, y| {
            let (u, v) = field(x, y);
            Rgb(encode_vector(u, v, max_magnitude))
        }))
    }

    pub fn decode_pixel(&self, x: u32, y: u32, max_magnitude: f64) -> (f64, f64) {
        decode_vector(self.0.get_pixel(x, y).0, max_magnitude)
    }
}

pub fn encode_vector(u: f64, v: f64, max_magnitude: f64) -> [u8; 3] {
    let angle = v.atan2(u).to_degrees().rem_euclid(360.0);
    let sat = if max_magnitude > 0.0 {
        (u.hypot(v) / max_magnitude).min(1.0)
    } else {
        0.0
    };
    hsv_to_rgb(angle, sat, 1.0)
}

/// Returns (direction in degrees, magnitude).
pub fn decode_vector(rgb: [u8; 3], max_magnitude: f64) -> (f64, f64) {
    let (h, s, _) = rgb_to_hsv(rgb);
    (h, s * max_magnitude)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowJitterParams {
    /// Degrees in `[0, 360)`.
    pub hue_delta: f64,
    pub sat_scale: f64,
    /// Seed the parameters were drawn from, if sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
}

impl FlowJitterParams {
    pub fn new(hue_delta: f64, sat_scale: f64) -> Self {
        FlowJitterParams {
            hue_delta,
            sat_scale,
            seed: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hue_delta.rem_euclid(360.0) == 0.0 && self.sat_scale == 1.0
    }

    pub fn apply_pixel(&self, rgb: [u8; 3]) -> [u8; 3] {
        if self.is_identity() {
            return rgb;
        }
        let (h, s, v) = rgb_to_hsv(rgb);
        hsv_to_rgb(h + self.hue_delta, (s * self.sat_scale).clamp(0.0, 1.0), v)
    }
}

/// Rotate the hue and scale the saturation of every pixel; value is untouched.
pub fn jitter_flow(flow: &FlowFrame, params: &FlowJitterParams) -> FlowFrame {
    let mut out = flow.0.clone();
    if !params.is_identity() {
        for p in out.pixels_mut() {
            p.0 = params.apply_pixel(p.0);
        }
    }
    FlowFrame(out)
}
