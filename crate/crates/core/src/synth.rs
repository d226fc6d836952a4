//! Deterministic synthetic radar scenes and a ground-truth-leaking oracle detector.
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64; uniform
//! reals are `(next_u64 >> 11) * 2^-53`, so scenes can be regenerated bit for
//! bit by any implementation of those two published generators.

use std::f64::consts::PI;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::normalize_angle;
use crate::metrics::GroundTruthBox;
use crate::pillar::{GridSpec, RadarFrame, RadarPoint};
use crate::postprocess::{ClassLabel, Detection};

/// Placement attempts per object before giving up.
const MAX_ATTEMPTS: usize = 10_000;

pub struct SceneRng(Xoshiro256PlusPlus);

impl SceneRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.unit() * (hi - lo + 1) as f64) as usize
    }
}

/// Typical footprint `(w, l)` in meters.
pub fn class_size(class: ClassLabel) -> (f64, f64) {
    match class {
        ClassLabel::Car => (1.8, 4.5),
        ClassLabel::Truck => (2.5, 8.0),
        ClassLabel::Pedestrian => (0.7, 0.7),
        ClassLabel::Bicycle => (0.6, 1.8),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub car: usize,
    pub truck: usize,
    pub pedestrian: usize,
    pub bicycle: usize,
}

impl ObjectCounts {
    pub fn get(&self, class: ClassLabel) -> usize {
        match class {
            ClassLabel::Car => self.car,
            ClassLabel::Truck => self.truck,
            ClassLabel::Pedestrian => self.pedestrian,
            ClassLabel::Bicycle => self.bicycle,
        }
    }

    pub fn total(&self) -> usize {
        self.car + self.truck + self.pedestrian + self.bicycle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: ObjectCounts,
    /// Returns per object, uniform in `min..=max`.
    pub points_per_object: [usize; 2],
    /// Uniform background points over the whole grid volume.
    pub clutter_points: usize,
    /// Minimum center-to-center distance between objects, in meters.
    pub min_separation: f64,
    pub point_features: usize,
    pub grid: GridSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: ObjectCounts { car: 3, truck: 1, pedestrian: 2, bicycle: 1 },
            points_per_object: [4, 12],
            clutter_points: 40,
            min_separation: 15.0,
            point_features: 2,
            grid: GridSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let [lo, hi] = self.points_per_object;
        if lo > hi {
            return Err(Error::config(format!("points_per_object min {lo} exceeds max {hi}")));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(Error::config("min_separation must be a finite non-negative distance"));
        }
        Ok(())
    }

    /// Scene settings for frame `index` of a sequence: same layout, derived seed.
    pub fn for_frame(&self, index: usize) -> Self {
        Self { seed: self.seed.wrapping_add(index as u64), ..self.clone() }
    }
}

/// Pushes an f64 coordinate into `[lo, hi)` after rounding to f32.
fn in_range_f32(v: f64, lo: f64, hi: f64, closed: bool) -> f32 {
    let mut x = v as f32;
    while (x as f64) < lo {
        x = x.next_up();
    }
    while (x as f64) > hi || (!closed && (x as f64) >= hi) {
        x = x.next_down();
    }
    x
}

fn random_features(rng: &mut SceneRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
}

/// One scene: points sampled inside every object footprint plus clutter.
pub fn generate_scene(spec: &SceneSpec) -> Result<(RadarFrame, Vec<GroundTruthBox>)> {
    spec.validate()?;
    let mut rng = SceneRng::new(spec.seed);
    let g = &spec.grid;
    let mut boxes: Vec<GroundTruthBox> = Vec::with_capacity(spec.objects.total());
    for class in ClassLabel::ALL {
        let (w, l) = class_size(class);
        let margin = 0.5 * w.hypot(l);
        for _ in 0..spec.objects.get(class) {
            let mut placed = None;
            for _ in 0..MAX_ATTEMPTS {
                let cx = rng.uniform(g.x_range[0] + margin, g.x_range[1] - margin);
                let cy = rng.uniform(g.y_range[0] + margin, g.y_range[1] - margin);
                let theta = normalize_angle(rng.uniform(-PI, PI));
                if boxes.iter().all(|b| (b.cx - cx).hypot(b.cy - cy) >= spec.min_separation) {
                    placed = Some(GroundTruthBox { cx, cy, w, l, theta, class_label: class });
                    break;
                }
            }
            boxes.push(placed.ok_or_else(|| {
                Error::config(format!(
                    "cannot place {} objects {} m apart inside the grid",
                    spec.objects.total(),
                    spec.min_separation
                ))
            })?);
        }
    }

    let mut frame = RadarFrame::new(spec.point_features);
    for b in &boxes {
        let n = rng.range_inclusive(spec.points_per_object[0], spec.points_per_object[1]);
        let (s, c) = b.theta.sin_cos();
        for _ in 0..n {
            // Stay a hair inside the footprint so f32 rounding cannot push a point out.
            let along = rng.uniform(-0.499, 0.499) * b.l;
            let across = rng.uniform(-0.499, 0.499) * b.w;
            let x = in_range_f32(b.cx + along * c - across * s, g.x_range[0], g.x_range[1], false);
            let y = in_range_f32(b.cy + along * s + across * c, g.y_range[0], g.y_range[1], false);
            let z = in_range_f32(rng.uniform(g.z_range[0], g.z_range[1]), g.z_range[0], g.z_range[1], true);
            frame.push(RadarPoint { x, y, z, features: random_features(&mut rng, spec.point_features) })?;
        }
    }
    for _ in 0..spec.clutter_points {
        let x = in_range_f32(rng.uniform(g.x_range[0], g.x_range[1]), g.x_range[0], g.x_range[1], false);
        let y = in_range_f32(rng.uniform(g.y_range[0], g.y_range[1]), g.y_range[0], g.y_range[1], false);
        let z = in_range_f32(rng.uniform(g.z_range[0], g.z_range[1]), g.z_range[0], g.z_range[1], true);
        frame.push(RadarPoint { x, y, z, features: random_features(&mut rng, spec.point_features) })?;
    }
    Ok((frame, boxes))
}

/// How the oracle detector scores its boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Constant { score: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel::Constant { score: 1.0 }
    }
}

/// Ground-truth boxes shifted by exactly `noise` meters in a random direction.
///
/// Only meant for exercising the evaluator with a known amount of error.
pub fn oracle_detector(gts: &[GroundTruthBox], noise: f64, scores: ScoreModel, seed: u64) -> Result<Vec<Detection>> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config(format!("oracle noise must be non-negative, got {noise}")));
    }
    let mut rng = SceneRng::new(seed);
    gts.iter()
        .map(|g| {
            let heading = rng.uniform(-PI, PI);
            let score = match scores {
                ScoreModel::Constant { score } => score,
                ScoreModel::Uniform { low, high } => rng.uniform(low, high),
            };
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::config(format!("oracle score {score} outside [0,1]")));
            }
            let (dx, dy) = if noise == 0.0 { (0.0, 0.0) } else { (noise * heading.cos(), noise * heading.sin()) };
            Ok(Detection {
                cx: g.cx + dx,
                cy: g.cy + dy,
                w: g.w,
                l: g.l,
                theta: g.theta,
                class_label: g.class_label,
                score,
            })
        })
        .collect()
}
