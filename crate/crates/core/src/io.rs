//! Radar frame CSV, detection JSON and ground-truth JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FrameDetections, FrameGroundTruth};
use crate::pillar::{RadarFrame, RadarPoint};
use crate::postprocess::Detection;

fn input_error(line: u64, message: impl Into<String>) -> Error {
    Error::InputData { line, message: message.into() }
}

/// Parses a frame from CSV with header `x,y,z,<feature columns...>`.
pub fn read_frame_csv(reader: impl Read) -> Result<RadarFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| input_error(e.position().map_or(1, |p| p.line()), e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "x" || &headers[1] != "y" || &headers[2] != "z" {
        return Err(input_error(
            1,
            format!("header must start with x,y,z, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let num_features = headers.len() - 3;
    let mut frame = RadarFrame::new(num_features);
    for record in rdr.records() {
        let record = record.map_err(|e| input_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| input_error(line, format!("column `{}`: `{field}` is not a number", &headers[col])))?;
            if !v.is_finite() {
                return Err(input_error(line, format!("column `{}` is not finite", &headers[col])));
            }
            values.push(v);
        }
        frame
            .push(RadarPoint { x: values[0], y: values[1], z: values[2], features: values[3..].to_vec() })
            .map_err(|e| input_error(line, e.to_string()))?;
    }
    Ok(frame)
}

pub fn load_frame_csv(path: impl AsRef<Path>) -> Result<RadarFrame> {
    read_frame_csv(std::fs::File::open(path)?)
}

pub fn write_frame_csv(mut writer: impl Write, frame: &RadarFrame) -> Result<()> {
    let mut header = String::from("x,y,z");
    for i in 0..frame.num_features() {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(writer, "{header}")?;
    for p in frame.points() {
        let mut line = format!("{},{},{}", p.x, p.y, p.z);
        for f in &p.features {
            line.push_str(&format!(",{f}"));
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn save_frame_csv(path: impl AsRef<Path>, frame: &RadarFrame) -> Result<()> {
    let mut buf = Vec::new();
    write_frame_csv(&mut buf, frame)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// A detection tagged with the frame it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramedDetection {
    pub frame_id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

pub fn detections_to_json(dets: &[FramedDetection]) -> String {
    serde_json::to_string_pretty(dets).expect("detections serialize") + "\n"
}

pub fn detections_from_json(text: &str) -> Result<Vec<FramedDetection>> {
    serde_json::from_str(text).map_err(|e| Error::Eval(format!("detections file: {e}")))
}

pub fn ground_truth_to_json(frames: &[FrameGroundTruth]) -> String {
    serde_json::to_string_pretty(frames).expect("ground truth serializes") + "\n"
}

pub fn ground_truth_from_json(text: &str) -> Result<Vec<FrameGroundTruth>> {
    serde_json::from_str(text).map_err(|e| Error::Eval(format!("ground-truth file: {e}")))
}

/// Groups flat detections by frame, with one entry per ground-truth frame
/// (frames without detections get an empty list). Detections for frames
/// absent from the ground truth are an error naming those frames.
pub fn group_by_frame(dets: Vec<FramedDetection>, gts: &[FrameGroundTruth]) -> Result<Vec<FrameDetections>> {
    let known: BTreeSet<&str> = gts.iter().map(|f| f.frame_id.as_str()).collect();
    let unknown: BTreeSet<&str> = dets.iter().map(|d| d.frame_id.as_str()).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        let list: Vec<String> = unknown.iter().map(|id| format!("`{id}`")).collect();
        return Err(Error::Eval(format!("detections reference frames missing from ground truth: {}", list.join(", "))));
    }
    let mut by_id: BTreeMap<String, Vec<Detection>> = gts.iter().map(|f| (f.frame_id.clone(), Vec::new())).collect();
    for d in dets {
        by_id.get_mut(&d.frame_id).expect("checked above").push(d.detection);
    }
    Ok(by_id.into_iter().map(|(frame_id, detections)| FrameDetections { frame_id, detections }).collect())
}
