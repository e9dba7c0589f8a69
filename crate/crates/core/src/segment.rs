//! Video segments: per-frame feature maps, box slots and labels, plus the
//! on-disk dataset layout.
//!
//! A dataset directory holds one sub-directory per segment:
//!
//! ```text
//! seg_00000/
//!   frame_000.stg ...   C×H×W feature maps (STG1)
//!   boxes.json          per frame, one entry per slot: box object or null
//!   label.json          {"labels": [..]}
//!   meta.json           {"segment_id", "seed", "stride", "num_frames"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, FeatureMap};
use crate::tensor::Tensor;

/// One frame: its feature map and box slots. `None` slots are masked.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub map: FeatureMap,
    pub boxes: Vec<Option<BBox>>,
}

impl Frame {
    pub fn new(map: FeatureMap, boxes: Vec<BBox>) -> Self {
        Frame {
            map,
            boxes: boxes.into_iter().map(Some).collect(),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.boxes.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.boxes.iter().flatten().count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSegment {
    pub segment_id: String,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub labels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SegmentMeta {
    segment_id: String,
    seed: u64,
    stride: f64,
    num_frames: usize,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    labels: Vec<f64>,
}

impl VideoSegment {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn label_tensor(&self) -> Tensor {
        Tensor::vector(self.labels.clone())
    }

    /// Frame-major slot mask padded to `capacity` slots per frame.
    pub fn mask(&self, capacity: usize) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.frames.len() * capacity);
        for f in &self.frames {
            for i in 0..capacity {
                m.push(f.boxes.get(i).is_some_and(Option::is_some));
            }
        }
        m
    }

    /// Checks the structural contract against a box capacity and class count.
    pub fn validate(&self, capacity: usize, num_classes: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("segment", format!("{} has no frames", self.segment_id)));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.boxes.len() > capacity {
                return Err(Error::Capacity {
                    frame: t,
                    count: f.boxes.len(),
                    capacity,
                });
            }
            if let Some(b) = f.boxes.iter().flatten().find(|b| !b.is_valid()) {
                return Err(Error::invalid("segment", format!("invalid box {b:?} in frame {t}")));
            }
        }
        if self.labels.len() != num_classes {
            return Err(Error::invalid(
                "segment",
                format!("{} labels for {num_classes} classes", self.labels.len()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::NonBinaryLabel(bad));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let stride = self.frames.first().map_or(1.0, |f| f.map.stride);
        for (t, f) in self.frames.iter().enumerate() {
            if f.map.stride != stride {
                return Err(Error::invalid("segment save", "frames disagree on stride"));
            }
            f.map.data.save(dir.join(format!("frame_{t:03}.stg")))?;
        }
        let boxes: Vec<&Vec<Option<BBox>>> = self.frames.iter().map(|f| &f.boxes).collect();
        fs::write(dir.join("boxes.json"), serde_json::to_string(&boxes)?)?;
        fs::write(
            dir.join("label.json"),
            serde_json::to_string(&LabelFile {
                labels: self.labels.clone(),
            })?,
        )?;
        let meta = SegmentMeta {
            segment_id: self.segment_id.clone(),
            seed: self.seed,
            stride,
            num_frames: self.frames.len(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SegmentMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let boxes: Vec<Vec<Option<BBox>>> = serde_json::from_slice(&fs::read(dir.join("boxes.json"))?)?;
        let labels: LabelFile = serde_json::from_slice(&fs::read(dir.join("label.json"))?)?;
        if boxes.len() != meta.num_frames {
            return Err(Error::Format(format!(
                "{}: {} box frames vs {} frames",
                dir.display(),
                boxes.len(),
                meta.num_frames
            )));
        }
        let frames = boxes
            .into_iter()
            .enumerate()
            .map(|(t, b)| {
                let data = Tensor::load(dir.join(format!("frame_{t:03}.stg")))?;
                Ok(Frame {
                    map: FeatureMap::new(data, meta.stride)?,
                    boxes: b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoSegment {
            segment_id: meta.segment_id,
            seed: meta.seed,
            frames,
            labels: labels.labels,
        })
    }
}

/// Segment directories under `root`, sorted by name.
pub fn segment_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if p.is_dir() && p.join("meta.json").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<VideoSegment>> {
    segment_dirs(root)?.iter().map(|d| VideoSegment::load(d)).collect()
}
