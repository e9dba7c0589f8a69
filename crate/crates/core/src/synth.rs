//! Synthetic interaction world: boxes moving on straight lines. A segment is
//! positive when some pair of boxes reaches the contact IoU at some frame,
//! so the label depends only on pairwise geometry.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, FeatureMap};
use crate::rng::{self, StagRng};
use crate::segment::{Frame, VideoSegment};
use crate::tensor::Tensor;

/// How objects are drawn into the feature maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Plateau of 1 over the box with a Gaussian falloff outside, composited
    /// by maximum and shifted by −½. Channel `k` uses falloff width
    /// `stride·(k+1)/2`. An overlap leaves both box interiors unchanged, so
    /// contact is only visible from regions spanning both boxes.
    #[default]
    Occupancy,
    /// Gaussian blob per object (σ a quarter of each side) summed into the
    /// channel of the object's class.
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Arena width and height in pixels.
    pub arena: (f64, f64),
    /// Pixels per feature-map cell.
    pub stride: f64,
    pub channels: usize,
    pub frames: usize,
    /// Box slots per frame.
    pub capacity: usize,
    /// Inclusive object-count range.
    pub objects: (usize, usize),
    /// Box side length range in pixels.
    pub size: (f64, f64),
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Probability that a negative segment contains a near miss: one pair
    /// steered to pass close by without touching.
    pub collision_prob: f64,
    /// Pair IoU at or above which two boxes are in contact.
    pub contact_iou: f64,
    pub render: RenderMode,
    /// Standard deviation of additive Gaussian feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            arena: (64.0, 64.0),
            stride: 4.0,
            channels: 3,
            frames: 8,
            capacity: 6,
            objects: (3, 3),
            size: (10.0, 18.0),
            speed: (2.0, 5.0),
            collision_prob: 0.5,
            contact_iou: 0.1,
            render: RenderMode::Occupancy,
            noise: 0.05,
            seed: 0,
        }
    }
}

const MAX_ATTEMPTS: usize = 5000;
/// Center distance at the meeting frame, in units of half the summed box
/// sides, for touching pairs and for near misses.
const CONTACT_GAP: (f64, f64) = (0.0, 0.3);
const NEAR_MISS_GAP: (f64, f64) = (1.5, 2.0);

impl WorldSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        WorldSpec { seed, ..self.clone() }
    }

    /// Feature map `(height, width)` in cells.
    pub fn map_size(&self) -> (usize, usize) {
        (
            (self.arena.1 / self.stride).ceil() as usize,
            (self.arena.0 / self.stride).ceil() as usize,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::WorldSpec(m));
        if !(self.arena.0 > 0.0 && self.arena.1 > 0.0 && self.stride > 0.0) {
            return bad(format!("arena {:?} / stride {}", self.arena, self.stride));
        }
        if self.channels == 0 || self.frames == 0 || self.capacity == 0 {
            return bad("channels, frames and capacity must be at least 1".into());
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return bad(format!("object range {:?}", self.objects));
        }
        if self.objects.1 > self.capacity {
            return bad(format!(
                "up to {} objects exceed capacity {}",
                self.objects.1, self.capacity
            ));
        }
        if !(self.size.0 > 0.0 && self.size.0 <= self.size.1 && self.size.1 < self.arena.0.min(self.arena.1) / 2.0) {
            return bad(format!("box size range {:?}", self.size));
        }
        if !(self.speed.0 >= 0.0 && self.speed.0 <= self.speed.1) {
            return bad(format!("speed range {:?}", self.speed));
        }
        if !(0.0..=1.0).contains(&self.collision_prob) || !(self.contact_iou > 0.0 && self.contact_iou <= 1.0) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return bad(format!("noise {}", self.noise));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Track {
    /// Center at frame 0.
    start: (f64, f64),
    vel: (f64, f64),
    size: (f64, f64),
    class: usize,
}

impl Track {
    fn bbox(&self, t: usize) -> BBox {
        let cx = self.start.0 + self.vel.0 * t as f64;
        let cy = self.start.1 + self.vel.1 * t as f64;
        BBox::new(
            cx - self.size.0 / 2.0,
            cy - self.size.1 / 2.0,
            cx + self.size.0 / 2.0,
            cy + self.size.1 / 2.0,
        )
    }

    fn inside(&self, spec: &WorldSpec) -> bool {
        (0..spec.frames).all(|t| {
            let b = self.bbox(t);
            b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= spec.arena.0 && b.y2 <= spec.arena.1
        })
    }
}

/// Largest pair IoU over every frame of a box sequence.
pub fn peak_pair_iou(frames: &[Vec<BBox>]) -> f64 {
    let mut best: f64 = 0.0;
    for boxes in frames {
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                best = best.max(iou(&boxes[i], &boxes[j]));
            }
        }
    }
    best
}

fn random_track(spec: &WorldSpec, r: &mut StagRng) -> Track {
    let size = (
        r.random_range(spec.size.0..=spec.size.1),
        r.random_range(spec.size.0..=spec.size.1),
    );
    let speed = r.random_range(spec.speed.0..=spec.speed.1);
    let heading = r.random_range(0.0..std::f64::consts::TAU);
    Track {
        start: (
            r.random_range(size.0 / 2.0..=spec.arena.0 - size.0 / 2.0),
            r.random_range(size.1 / 2.0..=spec.arena.1 - size.1 / 2.0),
        ),
        vel: (speed * heading.cos(), speed * heading.sin()),
        size,
        class: r.random_range(0..spec.channels),
    }
}

/// Two independently moving tracks placed so their centers are
/// `gap_scale` half-side-sums apart at an interior frame.
fn steered_pair(spec: &WorldSpec, r: &mut StagRng, gap_scale: f64) -> (Track, Track) {
    let mut a = random_track(spec, r);
    let mut b = random_track(spec, r);
    let meet = if spec.frames >= 3 {
        r.random_range(1..spec.frames - 1)
    } else {
        0
    };
    let m = spec.size.1;
    let p = (
        r.random_range(m..=(spec.arena.0 - m).max(m)),
        r.random_range(m..=(spec.arena.1 - m).max(m)),
    );
    let dir = r.random_range(0.0..std::f64::consts::TAU);
    let reach = 0.5 * (a.size.0 + b.size.0).min(a.size.1 + b.size.1);
    let half = 0.5 * gap_scale * reach;
    for (k, sign) in [(&mut a, 1.0), (&mut b, -1.0)] {
        let c = (p.0 + sign * half * dir.cos(), p.1 + sign * half * dir.sin());
        k.start = (c.0 - k.vel.0 * meet as f64, c.1 - k.vel.1 * meet as f64);
    }
    (a, b)
}

fn render(spec: &WorldSpec, tracks: &[Track], t: usize, noise: &mut impl FnMut() -> f64) -> Result<FeatureMap> {
    let (h, w) = spec.map_size();
    let mut data = Tensor::zeros(&[spec.channels, h, w]);
    let d = data.data_mut();
    let boxes: Vec<BBox> = tracks.iter().map(|k| k.bbox(t)).collect();
    let centre = |i: usize| (i as f64 + 0.5) * spec.stride;
    match spec.render {
        RenderMode::Occupancy => {
            for c in 0..spec.channels {
                let sigma = spec.stride * (c + 1) as f64 / 2.0;
                for y in 0..h {
                    let py = centre(y);
                    for x in 0..w {
                        let px = centre(x);
                        let occ = boxes
                            .iter()
                            .map(|b| {
                                let dx = (b.x1 - px).max(px - b.x2).max(0.0);
                                let dy = (b.y1 - py).max(py - b.y2).max(0.0);
                                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
                            })
                            .fold(0.0, f64::max);
                        d[(c * h + y) * w + x] = occ - 0.5;
                    }
                }
            }
        }
        RenderMode::Blob => {
            for (k, b) in tracks.iter().zip(&boxes) {
                let (cx, cy) = b.center();
                let (sx, sy) = (b.width() / 4.0, b.height() / 4.0);
                for y in 0..h {
                    let gy = ((centre(y) - cy) / sy).powi(2);
                    for x in 0..w {
                        let gx = ((centre(x) - cx) / sx).powi(2);
                        d[(k.class * h + y) * w + x] += (-0.5 * (gx + gy)).exp();
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        for v in d.iter_mut() {
            *v += noise();
        }
    }
    FeatureMap::new(data, spec.stride)
}

/// Generates one segment from `spec.seed`.
///
/// Positives steer one pair into contact at an interior frame. Negatives are
/// rejection-sampled so that no two boxes ever overlap, and with probability
/// `collision_prob` steer one pair into a near miss. Boxes are emitted in a
/// shuffled slot order.
pub fn generate_segment(spec: &WorldSpec, positive: bool) -> Result<VideoSegment> {
    spec.validate()?;
    if positive && spec.objects.1 < 2 {
        return Err(Error::WorldSpec("positives need at least two objects".into()));
    }
    let mut r = rng::rng(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        let lo = if positive {
            spec.objects.0.max(2)
        } else {
            spec.objects.0
        };
        let count = r.random_range(lo..=spec.objects.1);
        let mut tracks = Vec::with_capacity(count);
        if positive || (count >= 2 && r.random_bool(spec.collision_prob)) {
            let range = if positive { CONTACT_GAP } else { NEAR_MISS_GAP };
            let gap = r.random_range(range.0..range.1);
            let (a, b) = steered_pair(spec, &mut r, gap);
            tracks.push(a);
            tracks.push(b);
        }
        while tracks.len() < count {
            tracks.push(random_track(spec, &mut r));
        }
        if !tracks.iter().all(|k| k.inside(spec)) {
            continue;
        }
        let boxes: Vec<Vec<BBox>> = (0..spec.frames)
            .map(|t| tracks.iter().map(|k| k.bbox(t)).collect())
            .collect();
        let peak = peak_pair_iou(&boxes);
        if (positive && peak < spec.contact_iou) || (!positive && peak > 0.0) {
            continue;
        }
        tracks.shuffle(&mut r);
        let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).unwrap();
        let mut noise_rng = rng::rng(rng::derive_named(spec.seed, "noise"));
        let mut noise = || normal.sample(&mut noise_rng);
        let frames = (0..spec.frames)
            .map(|t| {
                let map = render(spec, &tracks, t, &mut noise)?;
                Ok(Frame::new(map, tracks.iter().map(|k| k.bbox(t)).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(VideoSegment {
            segment_id: format!("seed_{:016x}", spec.seed),
            seed: spec.seed,
            frames,
            labels: vec![if positive { 1.0 } else { 0.0 }],
        });
    }
    Err(Error::WorldSpec(format!(
        "no {} segment found in {MAX_ATTEMPTS} attempts for seed {}",
        if positive { "positive" } else { "negative" },
        spec.seed
    )))
}

/// One planned segment of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedSegment {
    pub segment_id: String,
    pub spec: WorldSpec,
    pub positive: bool,
}

impl PlannedSegment {
    pub fn generate(&self) -> Result<VideoSegment> {
        let mut s = generate_segment(&self.spec, self.positive)?;
        s.segment_id = self.segment_id.clone();
        Ok(s)
    }
}

/// `n_pos` positives and `n_neg` negatives in a seeded shuffled order, with
/// ids `seg_00000…` and per-segment seeds derived from `spec.seed`. Each
/// entry generates independently.
pub fn dataset_plan(spec: &WorldSpec, n_pos: usize, n_neg: usize) -> Vec<PlannedSegment> {
    let mut labels: Vec<bool> = std::iter::repeat_n(true, n_pos)
        .chain(std::iter::repeat_n(false, n_neg))
        .collect();
    labels.shuffle(&mut rng::rng(rng::derive_named(spec.seed, "order")));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, positive)| PlannedSegment {
            segment_id: format!("seg_{i:05}"),
            spec: spec.with_seed(rng::derive(spec.seed, i as u64)),
            positive,
        })
        .collect()
}

pub fn generate_dataset(spec: &WorldSpec, n_pos: usize, n_neg: usize) -> Result<Vec<VideoSegment>> {
    dataset_plan(spec, n_pos, n_neg)
        .iter()
        .map(PlannedSegment::generate)
        .collect()
}

/// Train and eval splits of `n_train` and `n_eval` segments at a 1:3
/// positive ratio, drawn from independent streams of `spec.seed`.
pub fn benchmark_splits(
    spec: &WorldSpec,
    n_train: usize,
    n_eval: usize,
) -> Result<(Vec<VideoSegment>, Vec<VideoSegment>)> {
    let split =
        |name: &str, n: usize| generate_dataset(&spec.with_seed(rng::derive_named(spec.seed, name)), n / 4, n - n / 4);
    Ok((split("train", n_train)?, split("eval", n_eval)?))
}
