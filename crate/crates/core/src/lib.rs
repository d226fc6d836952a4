//! Radar bird's-eye-view object detection with a depthwise-separable backbone.
//!
//! The pipeline runs `RadarFrame -> pillars -> pseudo-image -> backbone ->
//! heads -> oriented boxes`. Every network is described by a [`LayerGraph`],
//! which the executor, the weight loader and the cost [`analyzer`] share.

pub mod analyzer;
pub mod backbone;
pub mod config;
pub mod error;
pub mod graph;
pub mod heads;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pillar;
pub mod postprocess;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use analyzer::{analyze, AnalysisReport, BenchmarkStats};
pub use config::{ModelConfig, Preset};
pub use error::{Error, Result};
pub use graph::{build_graph, LayerGraph};
pub use heads::HeadKind;
pub use metrics::{EvalResult, FrameDetections, FrameGroundTruth, GroundTruthBox};
pub use model::Detector;
pub use pillar::{GridSpec, RadarFrame, RadarPoint};
pub use postprocess::{ClassLabel, Detection, PostprocessConfig};
pub use tensor::{Activation, FeatureMap};
pub use weights::WeightStore;
