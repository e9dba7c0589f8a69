//! Browser demo: render a synthetic segment, pool a dragged box with
//! RoIAlign, and overlay the model's spatial attention as a heatmap.

use stag_core::autodiff::{sigmoid, Tape};
use stag_core::geometry::{roi_align, BBox, RoiAlignConfig};
use stag_core::heatmap::frame_heatmaps;
use stag_core::model::{run_taped, Architecture, InitOptions, ModelDims, StagParams};
use stag_core::synth::{generate_segment, WorldSpec};
use stag_core::tensor::Tensor;
use stag_core::{Result, VideoSegment};
use wasm_bindgen::prelude::*;

/// A generated segment with an untrained model's output on it.
pub struct Scene {
    pub segment: VideoSegment,
    /// One grayscale heatmap per frame, at pixel resolution.
    pub heatmaps: Vec<Vec<u8>>,
    pub probability: f64,
}

impl Scene {
    pub fn new(seed: u64, positive: bool) -> Result<Self> {
        let spec = WorldSpec::default().with_seed(seed);
        let segment = generate_segment(&spec, positive)?;
        let dims = ModelDims {
            channels: spec.channels,
            n: spec.capacity,
            t: spec.frames,
            ..ModelDims::default()
        };
        let params = StagParams::init(
            dims,
            seed,
            InitOptions {
                identity_nonlocal: false,
            },
        )?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = run_taped(&mut tape, &segment, &params, &vars, Architecture::default(), false)?;
        let probability = sigmoid(tape.value(out.logits).data()[0]);
        let heatmaps = frame_heatmaps(&segment, &out.attention)
            .unwrap_or_default()
            .into_iter()
            .map(|img| img.pixels)
            .collect();
        Ok(Scene {
            segment,
            heatmaps,
            probability,
        })
    }

    /// Pixel size of a frame.
    pub fn size(&self) -> (usize, usize) {
        let m = &self.segment.frames[0].map;
        let px = |cells: usize| (cells as f64 * m.stride).round() as usize;
        (px(m.width()), px(m.height()))
    }

    /// The frame's first three feature channels as RGBA at pixel resolution.
    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        let map = &self.segment.frames[t].map;
        let (w, h) = self.size();
        let mut out = Vec::with_capacity(w * h * 4);
        for y in 0..h {
            for x in 0..w {
                let cy = ((y as f64 + 0.5) / map.stride) as usize;
                let cx = ((x as f64 + 0.5) / map.stride) as usize;
                out.extend(rgba(&map.data, cy.min(map.height() - 1), cx.min(map.width() - 1)));
            }
        }
        out
    }

    /// Valid boxes of frame `t` as flat `x1, y1, x2, y2` quadruples.
    pub fn boxes(&self, t: usize) -> Vec<f64> {
        self.segment.frames[t]
            .boxes
            .iter()
            .flatten()
            .flat_map(|b| b.coords())
            .collect()
    }

    /// RoIAlign of one box on frame `t`, as a 7×7 RGBA image.
    pub fn roi_rgba(&self, t: usize, b: BBox) -> Result<Vec<u8>> {
        let cfg = RoiAlignConfig::default();
        let pooled = roi_align(&self.segment.frames[t].map, &b, cfg)?;
        let (ph, pw) = (pooled.shape()[1], pooled.shape()[2]);
        Ok((0..ph)
            .flat_map(|y| (0..pw).map(move |x| (y, x)))
            .flat_map(|(y, x)| rgba(&pooled, y, x))
            .collect())
    }

    /// Attention heatmap of frame `t` as RGBA, with alpha following intensity.
    pub fn heatmap_rgba(&self, t: usize) -> Vec<u8> {
        self.heatmaps
            .get(t)
            .map(|px| {
                px.iter()
                    .flat_map(|&v| [255, (v / 2).saturating_add(64), 0, v])
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Colour of cell `(y, x)` of a `C×H×W` tensor; feature values in
/// `[-0.5, 0.5]` span the full byte range.
fn rgba(data: &Tensor, y: usize, x: usize) -> [u8; 4] {
    let s = data.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let byte = |k: usize| {
        let v = if k < c { data.data()[(k * h + y) * w + x] } else { -0.5 };
        ((v + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let [r, g, b] = if c == 1 {
        [byte(0); 3]
    } else {
        [byte(0), byte(1), byte(2)]
    };
    [r, g, b, 255]
}

fn js(e: stag_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// The demo's JavaScript handle.
#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, positive: bool) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            scene: Scene::new(seed.into(), positive).map_err(js)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.scene.segment.frames.len()
    }

    pub fn width(&self) -> usize {
        self.scene.size().0
    }

    pub fn height(&self) -> usize {
        self.scene.size().1
    }

    /// Whether the segment contains a contact.
    pub fn label(&self) -> bool {
        self.scene.segment.labels[0] == 1.0
    }

    /// Untrained model's contact probability.
    pub fn probability(&self) -> f64 {
        self.scene.probability
    }

    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        self.scene.frame_rgba(t)
    }

    pub fn boxes(&self, t: usize) -> Vec<f64> {
        self.scene.boxes(t)
    }

    pub fn roi_rgba(&self, t: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> std::result::Result<Vec<u8>, JsError> {
        self.scene.roi_rgba(t, BBox::new(x1, y1, x2, y2)).map_err(js)
    }

    pub fn heatmap_rgba(&self, t: usize) -> Vec<u8> {
        self.scene.heatmap_rgba(t)
    }
}
