use super::{ContributionMap, Method};
use serde::{Deserialize, Serialize};

pub const LIME_POSITIVE: [u8; 3] = [0, 255, 0];
pub const LIME_NEGATIVE: [u8; 3] = [255, 0, 0];
pub const SHAP_POSITIVE: [u8; 3] = [255, 0, 81];
pub const SHAP_NEGATIVE: [u8; 3] = [0, 139, 251];

/// Row-major RGBA pixels, one per observation cell; 3D slices are stacked vertically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbaImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbaImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = 4 * (y * self.width + x);
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }
}

/// Overlay for one action: sign picks the color, alpha is |v| over the map's largest |v|.
pub fn render_contributions(map: &ContributionMap, action: usize) -> RgbaImage {
    let (pos, neg) = match map.method {
        Method::Lime => (LIME_POSITIVE, LIME_NEGATIVE),
        Method::Shap => (SHAP_POSITIVE, SHAP_NEGATIVE),
    };
    let values = &map.values[action];
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut pixels = Vec::with_capacity(values.len() * 4);
    for &v in values {
        if max == 0.0 || v == 0.0 {
            pixels.extend_from_slice(&[0, 0, 0, 0]);
            continue;
        }
        let rgb = if v > 0.0 { pos } else { neg };
        let alpha = (255.0 * v.abs() / max).round() as u8;
        pixels.extend_from_slice(&[rgb[0], rgb[1], rgb[2], alpha]);
    }
    RgbaImage {
        width: map.side,
        height: map.side * map.slices,
        pixels,
    }
}
