//! Center-distance matching and 101-point interpolated average precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{ranking, ClassLabel, Detection};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Number of recall sample points (0.00, 0.01, ..., 1.00).
pub const RECALL_POINTS: usize = 101;

pub const EVAL_CONVENTION: &str =
    "AP = mean interpolated precision at 101 recall points; center-distance matching; no min-recall/min-precision clipping";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
    #[serde(rename = "class")]
    pub class_label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGroundTruth {
    pub frame_id: String,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: String,
    pub detections: Vec<Detection>,
}

/// One detection after matching, in processing (descending score) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub detection: Detection,
    pub gt: Option<usize>,
}

impl Match {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Greedy matching of the `class` detections against the `class` ground truth.
///
/// Detections are taken by descending score; each claims the nearest unclaimed
/// box within `threshold` meters (ties go to the earlier box).
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], class: ClassLabel, threshold: f64) -> Vec<Match> {
    let dets: Vec<Detection> = dets.iter().copied().filter(|d| d.class_label == class).collect();
    let mut taken = vec![false; gts.len()];
    ranking(&dets)
        .into_iter()
        .map(|i| {
            let d = dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.class_label != class {
                    continue;
                }
                let dist = (d.cx - g.cx).hypot(d.cy - g.cy);
                if dist <= threshold && best.is_none_or(|(_, b)| dist < b) {
                    best = Some((j, dist));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            Match { detection: d, gt: best.map(|(j, _)| j) }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApValue {
    pub ap: f64,
    /// Set when there was neither ground truth nor a detection; `ap` is 1 then.
    pub undefined: bool,
}

/// AP from true/false-positive flags in descending-score order.
pub fn average_precision(tp_flags: &[bool], n_ground_truth: usize) -> ApValue {
    if n_ground_truth == 0 {
        return ApValue { ap: if tp_flags.is_empty() { 1.0 } else { 0.0 }, undefined: tp_flags.is_empty() };
    }
    // Precision envelope from the right: best precision at any recall >= r.
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, tp as f64 / (i + 1) as f64));
    }
    let mut envelope = vec![0.0f64; points.len()];
    let mut best = 0.0f64;
    for i in (0..points.len()).rev() {
        best = best.max(points[i].1);
        envelope[i] = best;
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for k in 0..RECALL_POINTS {
        // Recall k/100 is reached once tp·100 >= k·n_gt.
        while cursor < points.len() && points[cursor].0 * 100 < k * n_ground_truth {
            cursor += 1;
        }
        if cursor < points.len() {
            sum += envelope[cursor];
        }
    }
    ApValue { ap: sum / RECALL_POINTS as f64, undefined: false }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassResult {
    pub ap: Vec<ThresholdAp>,
    pub map: f64,
    pub n_ground_truth: usize,
    pub n_detections: usize,
    pub undefined: bool,
}

impl ClassResult {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap.iter().find(|t| t.threshold == threshold).map(|t| t.ap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub convention: &'static str,
    pub frames: usize,
    pub thresholds: Vec<f64>,
    pub classes: BTreeMap<ClassLabel, ClassResult>,
    pub car_map: f64,
    /// Car AP at 4 m when 4 m is among the thresholds.
    pub car_ap4: Option<f64>,
}

fn check_frame_ids(dets: &[FrameDetections], gts: &[FrameGroundTruth]) -> Result<()> {
    let mut problems = Vec::new();
    let det_ids: Vec<&String> = dets.iter().map(|f| &f.frame_id).collect();
    let gt_ids: Vec<&String> = gts.iter().map(|f| &f.frame_id).collect();
    for (what, ids) in [("detections", &det_ids), ("ground truth", &gt_ids)] {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                problems.push(format!("duplicate frame `{id}` in {what}"));
            }
        }
    }
    let d: BTreeSet<&String> = det_ids.iter().copied().collect();
    let g: BTreeSet<&String> = gt_ids.iter().copied().collect();
    problems.extend(d.difference(&g).map(|id| format!("frame `{id}` has detections but no ground truth")));
    problems.extend(g.difference(&d).map(|id| format!("frame `{id}` has ground truth but no detections entry")));
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Eval(problems.join("; ")))
    }
}

/// Per-class AP at every threshold, pooled over frames. Frames are paired by
/// id and processed in id order, so input order does not affect the result.
pub fn evaluate(dets: &[FrameDetections], gts: &[FrameGroundTruth], thresholds: &[f64]) -> Result<EvalResult> {
    if thresholds.is_empty() || thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Eval(format!("distance thresholds must be positive, got {thresholds:?}")));
    }
    check_frame_ids(dets, gts)?;
    let mut det_frames: Vec<&FrameDetections> = dets.iter().collect();
    det_frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let gt_by_id: BTreeMap<&str, &FrameGroundTruth> = gts.iter().map(|f| (f.frame_id.as_str(), f)).collect();

    let mut classes = BTreeMap::new();
    for class in ClassLabel::ALL {
        let n_gt = gts.iter().flat_map(|f| &f.boxes).filter(|b| b.class_label == class).count();
        let n_det = dets.iter().flat_map(|f| &f.detections).filter(|d| d.class_label == class).count();
        let mut aps = Vec::with_capacity(thresholds.len());
        let mut undefined = false;
        for &threshold in thresholds {
            // (score, frame rank, rank within frame, tp)
            let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::with_capacity(n_det);
            for (fi, frame) in det_frames.iter().enumerate() {
                let gt = &gt_by_id[frame.frame_id.as_str()].boxes;
                for (ri, m) in match_detections(&frame.detections, gt, class, threshold).iter().enumerate() {
                    pooled.push((m.detection.score, fi, ri, m.is_tp()));
                }
            }
            pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
            let ap = average_precision(&flags, n_gt);
            undefined |= ap.undefined;
            aps.push(ThresholdAp { threshold, ap: ap.ap });
        }
        let map = aps.iter().map(|a| a.ap).sum::<f64>() / aps.len() as f64;
        classes.insert(class, ClassResult { ap: aps, map, n_ground_truth: n_gt, n_detections: n_det, undefined });
    }
    let car = &classes[&ClassLabel::Car];
    let (car_map, car_ap4) = (car.map, car.ap_at(4.0));
    Ok(EvalResult {
        convention: EVAL_CONVENTION,
        frames: gts.len(),
        thresholds: thresholds.to_vec(),
        classes,
        car_map,
        car_ap4,
    })
}

impl std::fmt::Display for EvalResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "# {}", self.convention)?;
        write!(f, "{:<12}", "class")?;
        for t in &self.thresholds {
            write!(f, "  {:>8}", format!("AP@{t}"))?;
        }
        writeln!(f, "  {:>8}  {:>6}  {:>6}", "mAP", "n_gt", "n_det")?;
        for (class, r) in &self.classes {
            write!(f, "{:<12}", class.name())?;
            for a in &r.ap {
                write!(f, "  {:>8.4}", a.ap)?;
            }
            let flag = if r.undefined { "  (no gt, no det)" } else { "" };
            writeln!(f, "  {:>8.4}  {:>6}  {:>6}{flag}", r.map, r.n_ground_truth, r.n_detections)?;
        }
        write!(f, "car mAP {:.4}", self.car_map)?;
        if let Some(ap4) = self.car_ap4 {
            write!(f, "  car AP@4 {ap4:.4}")?;
        }
        writeln!(f)
    }
}
