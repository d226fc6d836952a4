//! Shared fixtures for the criterion benchmarks.

use dsfec_core::pillar::RadarFrame;
use dsfec_core::postprocess::{ClassLabel, Detection};
use dsfec_core::synth::{generate_scene, SceneRng, SceneSpec};
use dsfec_core::FeatureMap;

/// Default synthetic scenes, one per seed offset.
pub fn synthetic_frames(n: usize, seed: u64) -> Vec<RadarFrame> {
    let spec = SceneSpec { seed, ..SceneSpec::default() };
    (0..n).map(|i| generate_scene(&spec.for_frame(i)).expect("default scene is valid").0).collect()
}

pub fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut rng = SceneRng::new(seed);
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.uniform(-1.0, 1.0) as f32)
}

pub fn random_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = SceneRng::new(seed);
    (0..n).map(|_| rng.uniform(-0.5, 0.5) as f32).collect()
}

/// Car-sized boxes scattered over a `spread` x `spread` area, so many overlap.
pub fn random_boxes(n: usize, spread: f64, seed: u64) -> Vec<Detection> {
    let mut rng = SceneRng::new(seed);
    (0..n)
        .map(|_| Detection {
            cx: rng.uniform(0.0, spread),
            cy: rng.uniform(0.0, spread),
            w: rng.uniform(1.5, 2.2),
            l: rng.uniform(3.8, 5.0),
            theta: rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
            class_label: ClassLabel::Car,
            score: rng.unit(),
        })
        .collect()
}
