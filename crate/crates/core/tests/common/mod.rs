//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dsfec_core::config::{ActivationMap, BlockKind, HeadTaps, ModelConfig};
use dsfec_core::graph::{LayerGraph, Op};
use dsfec_core::pillar::{FecConfig, GridSpec};
use dsfec_core::postprocess::{rotated_iou, ClassLabel, Detection};
use dsfec_core::synth::SceneRng;
use dsfec_core::tensor::{Activation, FeatureMap};
use dsfec_core::weights::WeightStore;

pub const BN_EPS: f64 = 1e-3;

/// Dense f64 NHWC tensor.
#[derive(Debug, Clone)]
pub struct Dense {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Dense {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, v: vec![0.0; h * w * c] }
    }

    pub fn from_map(m: &FeatureMap) -> Self {
        let (h, w, c) = m.shape();
        Self { h, w, c, v: m.data().iter().map(|&x| x as f64).collect() }
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.v[(y * self.w + x) * self.c + ch]
    }

    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f64 {
        &mut self.v[(y * self.w + x) * self.c + ch]
    }
}

/// Output extent and leading pad for "same" padding, computed from scratch.
pub fn same_geometry(input: usize, k: usize, s: usize) -> (usize, usize) {
    let out = input.div_ceil(s);
    let needed = (out - 1) * s + k;
    let pad_total = needed.saturating_sub(input);
    (out, pad_total / 2)
}

pub fn act64(a: Activation, x: f64) -> f64 {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    match a {
        Activation::Relu => x.max(0.0),
        Activation::LeakyRelu { slope } => {
            if x >= 0.0 {
                x
            } else {
                slope as f64 * x
            }
        }
        Activation::Swish => x * sig(x),
        Activation::Mish => x * (x.exp().ln_1p()).tanh(),
        Activation::Identity => x,
        Activation::Sigmoid => sig(x),
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
    pub elementwise: u64,
}

fn param(store: &WeightStore, name: &str, suffix: &str) -> Vec<f64> {
    store
        .get(&format!("{name}.{suffix}"))
        .unwrap_or_else(|| panic!("{name}.{suffix}"))
        .data
        .iter()
        .map(|&x| x as f64)
        .collect()
}

/// Walks every node with plain nested loops, counting one MAC per kernel tap
/// visited (padding taps included) and one op per elementwise output.
pub fn instrumented_forward(graph: &LayerGraph, store: &WeightStore, input: &Dense) -> (Vec<Dense>, OpCounter) {
    let mut vals: Vec<Dense> = Vec::with_capacity(graph.nodes.len());
    let mut n = OpCounter::default();
    for node in &graph.nodes {
        let out = match node.op {
            Op::Input => input.clone(),
            Op::Scatter => vals[node.inputs[0]].clone(),
            Op::Conv { kernel: k, stride: s, in_channels: cin, out_channels: cout, bias } => {
                let x = &vals[node.inputs[0]];
                let wts = param(store, &node.name, "weight");
                let b = if bias { param(store, &node.name, "bias") } else { vec![0.0; cout] };
                let (oh, pt) = same_geometry(x.h, k, s);
                let (ow, pl) = same_geometry(x.w, k, s);
                let mut y = Dense::zeros(oh, ow, cout);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..cout {
                            let mut acc = b[co];
                            for ci in 0..cin {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        n.macs += 1;
                                        let iy = (oy * s + ky) as isize - pt as isize;
                                        let ix = (ox * s + kx) as isize - pl as isize;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                            acc += wts[((co * cin + ci) * k + ky) * k + kx]
                                                * x.at(iy as usize, ix as usize, ci);
                                        }
                                    }
                                }
                            }
                            *y.at_mut(oy, ox, co) = acc;
                        }
                    }
                }
                y
            }
            Op::Depthwise { kernel: k, stride: s, channels } => {
                let x = &vals[node.inputs[0]];
                let wts = param(store, &node.name, "weight");
                let (oh, pt) = same_geometry(x.h, k, s);
                let (ow, pl) = same_geometry(x.w, k, s);
                let mut y = Dense::zeros(oh, ow, channels);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..channels {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                for kx in 0..k {
                                    n.macs += 1;
                                    let iy = (oy * s + ky) as isize - pt as isize;
                                    let ix = (ox * s + kx) as isize - pl as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += wts[(ch * k + ky) * k + kx] * x.at(iy as usize, ix as usize, ch);
                                    }
                                }
                            }
                            *y.at_mut(oy, ox, ch) = acc;
                        }
                    }
                }
                y
            }
            Op::Pointwise { in_channels: cin, out_channels: cout, bias } => {
                let x = &vals[node.inputs[0]];
                let wts = param(store, &node.name, "weight");
                let b = if bias { param(store, &node.name, "bias") } else { vec![0.0; cout] };
                let mut y = Dense::zeros(x.h, x.w, cout);
                for py in 0..x.h {
                    for px in 0..x.w {
                        for co in 0..cout {
                            let mut acc = b[co];
                            for ci in 0..cin {
                                n.macs += 1;
                                acc += wts[co * cin + ci] * x.at(py, px, ci);
                            }
                            *y.at_mut(py, px, co) = acc;
                        }
                    }
                }
                y
            }
            Op::BatchNorm { channels } => {
                let mut y = vals[node.inputs[0]].clone();
                let (g, b, m, v) = (
                    param(store, &node.name, "gamma"),
                    param(store, &node.name, "beta"),
                    param(store, &node.name, "running_mean"),
                    param(store, &node.name, "running_var"),
                );
                for (i, val) in y.v.iter_mut().enumerate() {
                    let c = i % channels;
                    n.elementwise += 1;
                    *val = (*val - m[c]) / (v[c] + BN_EPS).sqrt() * g[c] + b[c];
                }
                y
            }
            Op::Activation { activation } => {
                let mut y = vals[node.inputs[0]].clone();
                for val in y.v.iter_mut() {
                    n.elementwise += 1;
                    *val = act64(activation, *val);
                }
                y
            }
            Op::Add => {
                let mut y = vals[node.inputs[0]].clone();
                for (a, b) in y.v.iter_mut().zip(&vals[node.inputs[1]].v) {
                    n.elementwise += 1;
                    *a += b;
                }
                y
            }
        };
        vals.push(out);
    }
    (vals, n)
}

/// `max|a - b| / max|b|`, guarding against an all-zero reference.
pub fn norm_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn pick<T: Copy>(rng: &mut SceneRng, xs: &[T]) -> T {
    xs[rng.range_inclusive(0, xs.len() - 1)]
}

pub const ACTIVATIONS: [Activation; 6] = [
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.1 },
    Activation::Swish,
    Activation::Mish,
    Activation::Identity,
    Activation::Sigmoid,
];

/// A small random but valid model.
pub fn random_small_config(rng: &mut SceneRng) -> ModelConfig {
    let use_fec = rng.unit() < 0.5;
    let f3 = rng.range_inclusive(1, 3);
    let f1 = rng.range_inclusive(f3, f3 + 3);
    let f2 = rng.range_inclusive(f1 + 1, f1 + 4);
    let mut arr = |lo: usize, hi: usize| {
        [
            rng.range_inclusive(lo, hi),
            rng.range_inclusive(lo, hi),
            rng.range_inclusive(lo, hi),
            rng.range_inclusive(lo, hi),
        ]
    };
    let blocks = arr(1, 2);
    let widths = arr(1, 6);
    let strides = arr(1, 2);
    let taps = arr(1, 4);
    let mut act = || pick(rng, &ACTIVATIONS);
    let activations =
        ActivationMap { fec: act(), stem: act(), backbone: act(), head_car: act(), head_truck: act(), head_vru: act() };
    ModelConfig {
        grid: GridSpec::default(),
        point_features: rng.range_inclusive(0, 2),
        max_points_per_pillar: 20,
        use_fec,
        fec: FecConfig { f1, f2, f3 },
        stem_filters: rng.range_inclusive(1, 5),
        block_kind: if rng.unit() < 0.5 { BlockKind::Dsconv } else { BlockKind::Residual },
        blocks_per_stage: blocks,
        stage_widths: widths,
        stage_strides: strides,
        activations,
        head_taps: HeadTaps { car: taps[0], truck: taps[1], vru: taps[2] },
    }
}

pub fn random_map(rng: &mut SceneRng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.uniform(-1.0, 1.0) as f32)
}

pub fn random_box(rng: &mut SceneRng, spread: f64) -> Detection {
    Detection {
        cx: rng.uniform(-spread, spread),
        cy: rng.uniform(-spread, spread),
        w: rng.uniform(0.3, 3.0),
        l: rng.uniform(0.3, 6.0),
        theta: rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
        class_label: pick(rng, &ClassLabel::ALL),
        score: rng.uniform(0.0, 1.0),
    }
}

/// Reference NMS: repeatedly take the best remaining box and discard whatever
/// it overlaps, scanning the whole remaining set each time.
pub fn reference_nms(dets: &[Detection], threshold: f64, per_class: bool) -> Vec<Detection> {
    let better = |a: &(usize, Detection), b: &(usize, Detection)| {
        let (ia, da) = a;
        let (ib, db) = b;
        if da.score != db.score {
            return da.score > db.score;
        }
        if da.cx != db.cx {
            return da.cx < db.cx;
        }
        if da.cy != db.cy {
            return da.cy < db.cy;
        }
        ia < ib
    };
    let mut remaining: Vec<(usize, Detection)> = dets.iter().copied().enumerate().collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if better(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let (_, keep) = remaining.remove(best);
        remaining.retain(|(_, d)| {
            let same = !per_class || d.class_label == keep.class_label;
            !(same && rotated_iou(&keep, d) >= threshold)
        });
        out.push(keep);
    }
    out
}

/// Stratified Monte-Carlo IoU over the joint bounding rectangle of both boxes.
pub fn monte_carlo_iou(a: &Detection, b: &Detection, samples_per_side: usize, rng: &mut SceneRng) -> f64 {
    let corners: Vec<(f64, f64)> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (y0, y1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (dx, dy) = ((x1 - x0) / samples_per_side as f64, (y1 - y0) / samples_per_side as f64);
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for i in 0..samples_per_side {
        for j in 0..samples_per_side {
            let x = x0 + (i as f64 + rng.unit()) * dx;
            let y = y0 + (j as f64 + rng.unit()) * dy;
            let (pa, pb) = (a.contains(x, y), b.contains(x, y));
            in_a += pa as u64;
            in_b += pb as u64;
            both += (pa && pb) as u64;
        }
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Exact area under the interpolated precision/recall step function.
pub fn pr_area_oracle(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut curve = Vec::new();
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut recalls: Vec<f64> = curve.iter().map(|c| c.0).filter(|&r| r > 0.0).collect();
    recalls.sort_by(f64::total_cmp);
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = curve.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

/// 101-point interpolated AP, spelled out directly.
pub fn ap101_oracle(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut curve = Vec::new();
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        curve.push((tp, tp as f64 / (i + 1) as f64));
    }
    (0..=100).map(|k| curve.iter().filter(|c| c.0 * 100 >= k * n_gt).map(|c| c.1).fold(0.0, f64::max)).sum::<f64>()
        / 101.0
}
