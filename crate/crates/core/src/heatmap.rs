//! Per-frame attention heatmaps as 8-bit grayscale images.

use crate::geometry::BBox;
use crate::model::AttentionRecord;
use crate::segment::VideoSegment;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Gaussian width for a box: a quarter of its shorter side, at least 1 px.
pub fn box_sigma(b: &BBox) -> f64 {
    (0.25 * b.width().min(b.height())).max(1.0)
}

/// Sums one isotropic Gaussian per valid box, centered on the box with
/// amplitude `mass[i]`, sampled at pixel centers, then scales the maximum to
/// 255 and rounds. An all-zero field renders black.
pub fn render_heatmap(boxes: &[Option<BBox>], mass: &[f64], width: usize, height: usize) -> GrayImage {
    let mut field = vec![0.0f64; width * height];
    for (b, &m) in boxes.iter().zip(mass) {
        let Some(b) = b else { continue };
        let (cx, cy) = b.center();
        let two_s2 = 2.0 * box_sigma(b).powi(2);
        for y in 0..height {
            let dy = y as f64 + 0.5 - cy;
            for x in 0..width {
                let dx = x as f64 + 0.5 - cx;
                field[y * width + x] += m * (-(dx * dx + dy * dy) / two_s2).exp();
            }
        }
    }
    let max = field.iter().copied().fold(0.0, f64::max);
    let pixels = field
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
        .collect();
    GrayImage { width, height, pixels }
}

/// One heatmap per frame, sized to the feature-map extent in pixels, with
/// each box weighted by its incoming spatial attention. `None` when the
/// record has no spatial attention.
pub fn frame_heatmaps(segment: &VideoSegment, record: &AttentionRecord) -> Option<Vec<GrayImage>> {
    segment
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mass = record.box_mass(t)?;
            let ext = f.map.extent();
            let mut boxes = f.boxes.clone();
            boxes.resize(record.n, None);
            Some(render_heatmap(
                &boxes,
                &mass,
                ext.x2.round() as usize,
                ext.y2.round() as usize,
            ))
        })
        .collect()
}
