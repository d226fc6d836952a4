//! Oriented-box overlap and greedy non-maximum suppression.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boxes with less area than this are treated as empty.
const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Car,
    Truck,
    Pedestrian,
    Bicycle,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [ClassLabel::Car, ClassLabel::Truck, ClassLabel::Pedestrian, ClassLabel::Bicycle];

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Car => "car",
            ClassLabel::Truck => "truck",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Bicycle => "bicycle",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown class `{s}`")))
    }
}

/// Oriented box in BEV meters. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
    #[serde(rename = "class")]
    pub class_label: ClassLabel,
    pub score: f64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let at = |a: f64, b: f64| (self.cx + a * c - b * s, self.cy + a * s + b * c);
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    /// Whether `(x, y)` lies inside the box (boundary included).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.l / 2.0 && across.abs() <= self.w / 2.0
    }

    fn radius(&self) -> f64 {
        0.5 * self.w.hypot(self.l)
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cx
            .total_cmp(&other.cx)
            .then(self.cy.total_cmp(&other.cy))
            .then(self.w.total_cmp(&other.w))
            .then(self.l.total_cmp(&other.l))
            .then(self.theta.total_cmp(&other.theta))
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Sutherland–Hodgman: clips `subject` by every edge of the convex CCW `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in != prev_in {
                let (dp, dc) = (cross(a, b, prev), cross(a, b, cur));
                let t = dp / (dp - dc);
                output.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// Intersection-over-union of two oriented boxes, in `[0, 1]`.
///
/// Symmetric bit-for-bit: the pair is put in a canonical order before clipping.
pub fn rotated_iou(a: &Detection, b: &Detection) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > MIN_AREA && area_b > MIN_AREA) {
        return 0.0;
    }
    if (a.cx - b.cx).hypot(a.cy - b.cy) > a.radius() + b.radius() {
        return 0.0;
    }
    let (first, second) = if a.key_cmp(b) == Ordering::Greater { (b, a) } else { (a, b) };
    let inter = polygon_area(&clip_polygon(&first.corners(), &second.corners()));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Score-descending order with ties broken by lower `cx`, then `cy`, then input position.
pub fn ranking(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .total_cmp(&dets[i].score)
            .then(dets[i].cx.total_cmp(&dets[j].cx))
            .then(dets[i].cy.total_cmp(&dets[j].cy))
            .then(i.cmp(&j))
    });
    order
}

/// Greedy NMS: keep the best remaining box, drop every other box with
/// IoU >= `iou_threshold` (same class only when `per_class`), repeat.
pub fn nms(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::config(format!("IoU threshold {iou_threshold} outside (0,1]")));
    }
    let order = ranking(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for &j in &order[rank + 1..] {
            if suppressed[j] || (per_class && dets[j].class_label != dets[i].class_label) {
                continue;
            }
            if rotated_iou(&dets[i], &dets[j]) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub per_class: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { score_threshold: 0.05, iou_threshold: 0.3, per_class: true }
    }
}
