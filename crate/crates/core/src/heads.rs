//! Car / Truck / VRU detection heads and oriented-box decoding.

use serde::{Deserialize, Serialize};

use crate::backbone::{dsconv_block_forward, DsConvParams};
use crate::config::{ActivationMap, HeadTaps};
use crate::error::{Error, Result};
use crate::graph::REGRESSION_CHANNELS;
use crate::pillar::GridSpec;
use crate::postprocess::{ClassLabel, Detection};
use crate::tensor::{apply_activation_in_place, pointwise_conv2d, Activation, FeatureMap, PointwiseSpec};

/// Log-size regressions are clamped to this magnitude before `exp`.
const MAX_LOG_SIZE: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Car,
    Truck,
    Vru,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Car, HeadKind::Truck, HeadKind::Vru];

    /// Classes in score-channel order.
    pub fn classes(self) -> &'static [ClassLabel] {
        match self {
            HeadKind::Car => &[ClassLabel::Car],
            HeadKind::Truck => &[ClassLabel::Truck],
            HeadKind::Vru => &[ClassLabel::Pedestrian, ClassLabel::Bicycle],
        }
    }

    pub fn node_prefix(self) -> &'static str {
        match self {
            HeadKind::Car => "head_car",
            HeadKind::Truck => "head_truck",
            HeadKind::Vru => "head_vru",
        }
    }

    pub fn tap(self, taps: &HeadTaps) -> usize {
        match self {
            HeadKind::Car => taps.car,
            HeadKind::Truck => taps.truck,
            HeadKind::Vru => taps.vru,
        }
    }

    pub fn activation(self, acts: &ActivationMap) -> Activation {
        match self {
            HeadKind::Car => acts.head_car,
            HeadKind::Truck => acts.head_truck,
            HeadKind::Vru => acts.head_vru,
        }
    }
}

/// Per-cell class confidences and box regressions.
///
/// Regression channels are `(cos θ, sin θ, dx, dy, log w, log l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub score_map: FeatureMap,
    pub regression_map: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub block: DsConvParams,
    pub score: PointwiseSpec,
    pub regression: PointwiseSpec,
}

/// One depthwise-separable block, then parallel 1×1 score (sigmoid) and
/// regression (linear) branches.
pub fn head_forward(stage_output: &FeatureMap, params: &HeadParams, activation: Activation) -> Result<HeadOutput> {
    if params.regression.out_channels() != REGRESSION_CHANNELS {
        return Err(Error::config(format!(
            "regression branch must emit {REGRESSION_CHANNELS} channels, got {}",
            params.regression.out_channels()
        )));
    }
    let features = dsconv_block_forward(stage_output, &params.block, activation)?;
    let mut score_map = pointwise_conv2d(&features, &params.score)?;
    apply_activation_in_place(&mut score_map, Activation::Sigmoid);
    let regression_map = pointwise_conv2d(&features, &params.regression)?;
    Ok(HeadOutput { score_map, regression_map })
}

/// Turns every cell/class with `score >= score_threshold` into a box.
///
/// `stage_stride` is the head's total downsampling relative to the grid; the
/// cell footprint is `cell_size * stage_stride` meters and `(dx, dy)` are in
/// footprint units from the footprint center.
pub fn decode_boxes(
    output: &HeadOutput,
    head: HeadKind,
    stage_stride: usize,
    grid: &GridSpec,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::config(format!("score threshold {score_threshold} outside [0,1]")));
    }
    let classes = head.classes();
    let (h, w, k) = output.score_map.shape();
    if k != classes.len() {
        return Err(Error::config(format!("{head:?} head expects {} score channels, got {k}", classes.len())));
    }
    if output.regression_map.shape() != (h, w, REGRESSION_CHANNELS) {
        return Err(Error::config("regression map does not match score map"));
    }
    let footprint = grid.cell_size * stage_stride as f64;
    let mut dets = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let scores = output.score_map.pixel(row, col);
            if !scores.iter().any(|&s| s as f64 >= score_threshold) {
                continue;
            }
            let reg = output.regression_map.pixel(row, col);
            let cx = grid.x_range[0] + (col as f64 + 0.5) * footprint + reg[2] as f64 * footprint;
            let cy = grid.y_range[0] + (row as f64 + 0.5) * footprint + reg[3] as f64 * footprint;
            let theta = normalize_angle((reg[1] as f64).atan2(reg[0] as f64));
            let width = (reg[4].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE) as f64).exp();
            let length = (reg[5].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE) as f64).exp();
            for (&score, &class_label) in scores.iter().zip(classes) {
                if (score as f64) < score_threshold {
                    continue;
                }
                dets.push(Detection { cx, cy, w: width, l: length, theta, class_label, score: score as f64 });
            }
        }
    }
    Ok(dets)
}

/// Maps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut t = theta % TAU;
    if t > PI {
        t -= TAU;
    } else if t <= -PI {
        t += TAU;
    }
    t
}
