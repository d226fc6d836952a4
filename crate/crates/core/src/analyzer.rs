//! Static cost model over a [`LayerGraph`] and a wall-clock benchmark harness.
//!
//! FLOPs are reported as 2 × multiply-accumulates for convolutions. Batch
//! norm, activations and residual adds contribute one FLOP per output element
//! and are included in the totals. Bias additions are not counted.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{build_graph, build_graph_for_input, LayerGraph, Op, Section, Shape};
use crate::model::Detector;
use crate::pillar::RadarFrame;

pub const BYTES_PER_ELEMENT: u64 = 4;
pub const BYTES_PER_MB: f64 = 1e6;
pub const FLOPS_CONVENTION: &str =
    "FLOPs = 2 x MACs for conv/depthwise/pointwise; BN, activation and add count 1 per output element";
pub const MEMORY_CONVENTION: &str =
    "peak activation memory is an upper-bound estimate (fp32, no in-place reuse, no fragmentation)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParamCount {
    /// Learned weights (conv kernels, biases, BN gamma/beta).
    pub trainable: u64,
    /// BN running mean/variance.
    pub running_stats: u64,
}

impl ParamCount {
    pub fn all_state(&self) -> u64 {
        self.trainable + self.running_stats
    }
}

pub fn node_params(op: &Op) -> ParamCount {
    let (k, cin, cout, bias) = match *op {
        Op::Conv { kernel, in_channels, out_channels, bias, .. } => (kernel * kernel, in_channels, out_channels, bias),
        Op::Depthwise { kernel, channels, .. } => (kernel * kernel, 1, channels, false),
        Op::Pointwise { in_channels, out_channels, bias } => (1, in_channels, out_channels, bias),
        Op::BatchNorm { channels } => {
            return ParamCount { trainable: 2 * channels as u64, running_stats: 2 * channels as u64 }
        }
        Op::Input | Op::Scatter | Op::Activation { .. } | Op::Add => return ParamCount::default(),
    };
    let trainable = (k * cin * cout + if bias { cout } else { 0 }) as u64;
    ParamCount { trainable, running_stats: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FlopCount {
    pub mac_flops: u64,
    pub elementwise_flops: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.mac_flops + self.elementwise_flops
    }
}

pub fn node_flops(op: &Op, out: &Shape) -> FlopCount {
    let cells = out.cells() as u64;
    let macs = match *op {
        Op::Conv { kernel, in_channels, out_channels, .. } => {
            (kernel * kernel * in_channels * out_channels) as u64 * cells
        }
        Op::Depthwise { kernel, channels, .. } => (kernel * kernel * channels) as u64 * cells,
        Op::Pointwise { in_channels, out_channels, .. } => (in_channels * out_channels) as u64 * cells,
        Op::BatchNorm { .. } | Op::Activation { .. } | Op::Add => {
            return FlopCount { mac_flops: 0, elementwise_flops: out.elements() as u64 }
        }
        Op::Input | Op::Scatter => 0,
    };
    FlopCount { mac_flops: 2 * macs, elementwise_flops: 0 }
}

pub fn count_params(graph: &LayerGraph) -> (Vec<ParamCount>, ParamCount) {
    let rows: Vec<ParamCount> = graph.nodes.iter().map(|n| node_params(&n.op)).collect();
    let total = rows.iter().fold(ParamCount::default(), |a, r| ParamCount {
        trainable: a.trainable + r.trainable,
        running_stats: a.running_stats + r.running_stats,
    });
    (rows, total)
}

pub fn count_flops(graph: &LayerGraph) -> (Vec<FlopCount>, FlopCount) {
    let rows: Vec<FlopCount> = graph.nodes.iter().map(|n| node_flops(&n.op, &n.shape)).collect();
    let total = rows.iter().fold(FlopCount::default(), |a, r| FlopCount {
        mac_flops: a.mac_flops + r.mac_flops,
        elementwise_flops: a.elementwise_flops + r.elementwise_flops,
    });
    (rows, total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    /// Output bytes of each node.
    pub output_bytes: Vec<u64>,
    /// Bytes resident while each node runs: its output plus every earlier
    /// output whose last consumer has not run yet.
    pub live_bytes: Vec<u64>,
    pub peak_bytes: u64,
}

/// Liveness-based activation memory. An output stays resident until its last
/// consumer has run; outputs with no consumer are freed right away.
pub fn estimate_activation_memory(graph: &LayerGraph) -> MemoryEstimate {
    let output_bytes: Vec<u64> = graph.nodes.iter().map(|n| BYTES_PER_ELEMENT * n.shape.elements() as u64).collect();
    let last_uses = graph.last_uses();
    // Release step for every output: the index after which it is dead.
    let mut frees: Vec<Vec<usize>> = vec![Vec::new(); graph.len()];
    for (id, last) in last_uses.iter().enumerate() {
        frees[last.unwrap_or(id)].push(id);
    }
    let mut resident = 0u64;
    let mut live_bytes = Vec::with_capacity(graph.len());
    for id in 0..graph.len() {
        resident += output_bytes[id];
        live_bytes.push(resident);
        for &dead in &frees[id] {
            resident -= output_bytes[dead];
        }
    }
    let peak_bytes = live_bytes.iter().copied().max().unwrap_or(0);
    MemoryEstimate { output_bytes, live_bytes, peak_bytes }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: &'static str,
    pub section: Section,
    pub output_shape: [usize; 3],
    pub params: u64,
    pub running_stats: u64,
    pub flops: u64,
    pub mac_flops: u64,
    pub activation_bytes: u64,
    pub live_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub params: u64,
    pub all_state_params: u64,
    pub flops: u64,
    pub mac_flops: u64,
    pub elementwise_flops: u64,
    pub gflops: f64,
    pub peak_activation_bytes: u64,
    pub peak_activation_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkStats {
    pub frames: usize,
    pub warmup: usize,
    pub reps: usize,
    /// Number of timed inferences (`reps × frames`).
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub model: String,
    pub input: [usize; 2],
    pub flops_convention: &'static str,
    pub memory_convention: &'static str,
    pub layers: Vec<LayerRow>,
    pub totals: Totals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkStats>,
}

pub fn analyze_graph(graph: &LayerGraph, model: impl Into<String>) -> AnalysisReport {
    let (params, param_total) = count_params(graph);
    let (flops, flop_total) = count_flops(graph);
    let mem = estimate_activation_memory(graph);
    let layers = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| LayerRow {
            name: n.name.clone(),
            kind: n.op.kind(),
            section: n.section,
            output_shape: [n.shape.height, n.shape.width, n.shape.channels],
            params: params[i].trainable,
            running_stats: params[i].running_stats,
            flops: flops[i].total(),
            mac_flops: flops[i].mac_flops,
            activation_bytes: mem.output_bytes[i],
            live_bytes: mem.live_bytes[i],
        })
        .collect();
    let input = graph.node(graph.pseudo_image).shape;
    AnalysisReport {
        model: model.into(),
        input: [input.height, input.width],
        flops_convention: FLOPS_CONVENTION,
        memory_convention: MEMORY_CONVENTION,
        layers,
        totals: Totals {
            params: param_total.trainable,
            all_state_params: param_total.all_state(),
            flops: flop_total.total(),
            mac_flops: flop_total.mac_flops,
            elementwise_flops: flop_total.elementwise_flops,
            gflops: flop_total.total() as f64 / 1e9,
            peak_activation_bytes: mem.peak_bytes,
            peak_activation_mb: mem.peak_bytes as f64 / BYTES_PER_MB,
        },
        benchmark: None,
    }
}

/// Analyzes `config` at its grid resolution, or at `input = (H, W)` if given.
pub fn analyze(
    config: &ModelConfig,
    input: Option<(usize, usize)>,
    model: impl Into<String>,
) -> Result<AnalysisReport> {
    let graph = match input {
        Some((h, w)) => build_graph_for_input(config, h, w)?,
        None => build_graph(config)?,
    };
    Ok(analyze_graph(&graph, model))
}

impl AnalysisReport {
    /// Total FLOPs of the nodes in `section`.
    pub fn section_flops(&self, section: Section) -> u64 {
        self.layers.iter().filter(|r| r.section == section).map(|r| r.flops).sum()
    }

    /// FLOPs of the first stem layer (its convolution, norm and activation).
    pub fn stem_layer_flops(&self) -> u64 {
        self.layers
            .iter()
            .filter(|r| matches!(r.name.as_str(), "stem.conv0" | "stem.bn0" | "stem.act0"))
            .map(|r| r.flops)
            .sum()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

fn shape_str(s: &[usize; 3]) -> String {
    format!("{}x{}x{}", s[0], s[1], s[2])
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}  input: {}x{}", self.model, self.input[0], self.input[1])?;
        writeln!(f, "# {}", self.flops_convention)?;
        writeln!(f, "# {}", self.memory_convention)?;
        let name_w = self.layers.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        writeln!(
            f,
            "{:<name_w$}  {:<10}  {:>13}  {:>10}  {:>14}  {:>12}",
            "layer", "kind", "output", "params", "flops", "act_bytes"
        )?;
        for r in &self.layers {
            writeln!(
                f,
                "{:<name_w$}  {:<10}  {:>13}  {:>10}  {:>14}  {:>12}",
                r.name,
                r.kind,
                shape_str(&r.output_shape),
                r.params,
                r.flops,
                r.activation_bytes
            )?;
        }
        let t = &self.totals;
        writeln!(f, "params (trainable): {}", t.params)?;
        writeln!(f, "params (all state): {}", t.all_state_params)?;
        writeln!(f, "GFLOPs: {:.4}  (mac {} + elementwise {})", t.gflops, t.mac_flops, t.elementwise_flops)?;
        writeln!(f, "peak activation: {:.3} MB (upper bound)", t.peak_activation_mb)?;
        if let Some(b) = &self.benchmark {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Display for BenchmarkStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "benchmark: {} frames x {} reps ({} warmup)  mean {:.3} ms  median {:.3} ms  p95 {:.3} ms  {:.2} FPS",
            self.frames, self.reps, self.warmup, self.mean_ms, self.median_ms, self.p95_ms, self.fps
        )
    }
}

/// Summary statistics over per-frame latencies in milliseconds.
pub fn summarize(samples_ms: &[f64], frames: usize, warmup: usize, reps: usize) -> BenchmarkStats {
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean_ms = sorted.iter().sum::<f64>() / n as f64;
    let median_ms = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    BenchmarkStats {
        frames,
        warmup,
        reps,
        samples: n,
        mean_ms,
        median_ms,
        p95_ms: sorted[rank - 1],
        fps: 1000.0 / mean_ms,
    }
}

fn check_bench_args(frames: &[RadarFrame], reps: usize) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Usage("benchmark needs at least one frame".into()));
    }
    if reps == 0 {
        return Err(Error::Usage("reps must be at least 1".into()));
    }
    Ok(())
}

/// Times end-to-end inference. `warmup` untimed inferences cycle through the
/// frames first; then every frame is timed once per rep.
pub fn benchmark(detector: &Detector, frames: &[RadarFrame], warmup: usize, reps: usize) -> Result<BenchmarkStats> {
    Ok(paired_benchmark(&[detector], frames, warmup, reps)?.remove(0))
}

/// Like [`benchmark`] for several detectors at once, interleaving them frame by
/// frame so slow drift in machine load affects all of them alike.
pub fn paired_benchmark(
    detectors: &[&Detector],
    frames: &[RadarFrame],
    warmup: usize,
    reps: usize,
) -> Result<Vec<BenchmarkStats>> {
    check_bench_args(frames, reps)?;
    for i in 0..warmup {
        for d in detectors {
            d.detect(&frames[i % frames.len()])?;
        }
    }
    let mut samples = vec![Vec::with_capacity(reps * frames.len()); detectors.len()];
    for _ in 0..reps {
        for frame in frames {
            for (d, s) in detectors.iter().zip(&mut samples) {
                let start = Instant::now();
                std::hint::black_box(d.detect(std::hint::black_box(frame))?);
                s.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
    }
    Ok(samples.iter().map(|s| summarize(s, frames.len(), warmup, reps)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    StemFilters,
    BlocksStage2,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::StemFilters => "stem_filters",
            AblationAxis::BlocksStage2 => "blocks_stage2",
        }
    }

    fn apply(self, config: &mut ModelConfig, value: usize) {
        match self {
            AblationAxis::StemFilters => config.stem_filters = value,
            AblationAxis::BlocksStage2 => config.blocks_per_stage[1] = value,
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stem_filters" => Ok(AblationAxis::StemFilters),
            "blocks_stage2" => Ok(AblationAxis::BlocksStage2),
            other => {
                Err(Error::Usage(format!("unknown ablation axis `{other}` (expected stem_filters or blocks_stage2)")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub value: usize,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub params: u64,
    pub gflops: f64,
    pub peak_activation_mb: f64,
    pub stem_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub flops_convention: &'static str,
    pub rows: Vec<AblationRow>,
}

/// One analysis row per value of `axis`, everything else held at `base`.
pub fn ablation_report(base: &ModelConfig, axis: AblationAxis, values: &[usize]) -> Result<AblationReport> {
    if values.is_empty() {
        return Err(Error::Usage("ablation needs at least one value".into()));
    }
    let rows = values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            axis.apply(&mut config, value);
            match analyze(&config, None, "") {
                Ok(r) => AblationRow {
                    value,
                    valid: true,
                    reason: None,
                    params: r.totals.params,
                    gflops: r.totals.gflops,
                    peak_activation_mb: r.totals.peak_activation_mb,
                    stem_flops: r.stem_layer_flops(),
                },
                Err(e) => AblationRow {
                    value,
                    valid: false,
                    reason: Some(e.to_string()),
                    params: 0,
                    gflops: 0.0,
                    peak_activation_mb: 0.0,
                    stem_flops: 0,
                },
            }
        })
        .collect();
    Ok(AblationReport { axis, flops_convention: FLOPS_CONVENTION, rows })
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {}", self.flops_convention)?;
        writeln!(
            f,
            "{:>14}  {:>10}  {:>9}  {:>10}  {:>14}",
            self.axis.name(),
            "params",
            "GFLOPs",
            "peak_MB",
            "stem_flops"
        )?;
        for r in &self.rows {
            if r.valid {
                writeln!(
                    f,
                    "{:>14}  {:>10}  {:>9.4}  {:>10.3}  {:>14}",
                    r.value, r.params, r.gflops, r.peak_activation_mb, r.stem_flops
                )?;
            } else {
                writeln!(f, "{:>14}  invalid: {}", r.value, r.reason.as_deref().unwrap_or(""))?;
            }
        }
        Ok(())
    }
}
