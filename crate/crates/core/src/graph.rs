//! Static layer graph for a [`ModelConfig`].
//!
//! The graph is the single description of the network that the executor, the
//! weight initializer/loader and the cost analyzer all walk. Nodes are stored
//! in execution order and may only consume earlier nodes, so the order is a
//! valid topological sort by construction.
//!
//! The encoder section is expressed as dense 1×1 layers over the grid (one
//! point per occupied pillar); the runtime evaluates it sparsely per pillar.

use serde::Serialize;

use crate::config::{BlockKind, ModelConfig};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::pillar::augmented_point_dim;
use crate::tensor::{Activation, Padding};

pub type NodeId = usize;

pub const BLOCK_KERNEL: usize = 3;

/// Regression channels per cell: cos θ, sin θ, dx, dy, log w, log l.
pub const REGRESSION_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn elements(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Input,
    /// Per-pillar vectors placed on the dense grid.
    Scatter,
    Conv {
        kernel: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    Depthwise {
        kernel: usize,
        stride: usize,
        channels: usize,
    },
    Pointwise {
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Activation {
        activation: Activation,
    },
    Add,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Scatter => "scatter",
            Op::Conv { .. } => "conv",
            Op::Depthwise { .. } => "depthwise",
            Op::Pointwise { .. } => "pointwise",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Activation { .. } => "activation",
            Op::Add => "add",
        }
    }

    /// Parameter tensors as `(suffix, dims)`; stored under `"{node}.{suffix}"`.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            Op::Conv { kernel, in_channels, out_channels, bias, .. } => {
                let mut v = vec![("weight", vec![out_channels, in_channels, kernel, kernel])];
                if bias {
                    v.push(("bias", vec![out_channels]));
                }
                v
            }
            Op::Depthwise { kernel, channels, .. } => vec![("weight", vec![channels, kernel, kernel])],
            Op::Pointwise { in_channels, out_channels, bias } => {
                let mut v = vec![("weight", vec![out_channels, in_channels])];
                if bias {
                    v.push(("bias", vec![out_channels]));
                }
                v
            }
            Op::BatchNorm { channels } => vec![
                ("gamma", vec![channels]),
                ("beta", vec![channels]),
                ("running_mean", vec![channels]),
                ("running_var", vec![channels]),
            ],
            Op::Input | Op::Scatter | Op::Activation { .. } | Op::Add => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Encoder,
    Stem,
    Backbone,
    Head(HeadKind),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Shape,
    pub section: Section,
    /// 1-based (stage, block) for backbone nodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeadNodes {
    pub kind: HeadKind,
    pub stage: usize,
    /// Total downsampling of the tapped stage relative to the grid.
    pub stride: usize,
    pub score: NodeId,
    pub regression: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerGraph {
    pub nodes: Vec<Node>,
    pub input: NodeId,
    pub pseudo_image: NodeId,
    pub stage_outputs: [NodeId; 4],
    /// Cumulative stride at each stage output.
    pub stage_strides: [usize; 4],
    pub heads: Vec<HeadNodes>,
}

impl LayerGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the last node reading each node's output (`None` if unread).
    pub fn last_uses(&self) -> Vec<Option<NodeId>> {
        let mut last = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &src in &node.inputs {
                last[src] = Some(id);
            }
        }
        last
    }

    /// Number of distinct blocks per stage, read back from node metadata.
    pub fn blocks_per_stage(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for n in &self.nodes {
            if let Some((stage, block)) = n.block {
                counts[stage - 1] = counts[stage - 1].max(block);
            }
        }
        counts
    }

    /// Every parameter tensor the graph needs, in node order.
    pub fn parameter_names(&self) -> Vec<(String, Vec<usize>)> {
        self.nodes
            .iter()
            .flat_map(|n| n.op.param_shapes().into_iter().map(move |(s, d)| (format!("{}.{s}", n.name), d)))
            .collect()
    }
}

struct Builder {
    nodes: Vec<Node>,
    section: Section,
    block: Option<(usize, usize)>,
}

impl Builder {
    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        let input_shapes: Vec<Shape> = inputs.iter().map(|&i| self.nodes[i].shape).collect();
        let shape = infer_shape(&name, &op, &input_shapes)?;
        self.nodes.push(Node { name, op, inputs, shape, section: self.section, block: self.block });
        Ok(self.nodes.len() - 1)
    }

    fn unary(&mut self, name: String, op: Op, input: NodeId) -> Result<NodeId> {
        self.push(name, op, vec![input])
    }

    fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].shape.channels
    }

    /// conv/bn/act triple with a k×k standard convolution.
    #[allow(clippy::too_many_arguments)]
    fn conv_bn_act(
        &mut self,
        prefix: &str,
        suffix: &str,
        input: NodeId,
        kernel: usize,
        stride: usize,
        out: usize,
        act: Option<Activation>,
    ) -> Result<NodeId> {
        let cin = self.channels(input);
        let conv = self.unary(
            format!("{prefix}.conv{suffix}"),
            Op::Conv { kernel, stride, in_channels: cin, out_channels: out, bias: false },
            input,
        )?;
        let bn = self.unary(format!("{prefix}.bn{suffix}"), Op::BatchNorm { channels: out }, conv)?;
        match act {
            Some(activation) => self.unary(format!("{prefix}.act{suffix}"), Op::Activation { activation }, bn),
            None => Ok(bn),
        }
    }

    fn dsconv_block(
        &mut self,
        prefix: &str,
        input: NodeId,
        stride: usize,
        out: usize,
        act: Activation,
    ) -> Result<NodeId> {
        let cin = self.channels(input);
        let dw =
            self.unary(format!("{prefix}.dw"), Op::Depthwise { kernel: BLOCK_KERNEL, stride, channels: cin }, input)?;
        let dw_bn = self.unary(format!("{prefix}.dw_bn"), Op::BatchNorm { channels: cin }, dw)?;
        let dw_act = self.unary(format!("{prefix}.dw_act"), Op::Activation { activation: act }, dw_bn)?;
        let pw = self.unary(
            format!("{prefix}.pw"),
            Op::Pointwise { in_channels: cin, out_channels: out, bias: false },
            dw_act,
        )?;
        let pw_bn = self.unary(format!("{prefix}.pw_bn"), Op::BatchNorm { channels: out }, pw)?;
        self.unary(format!("{prefix}.pw_act"), Op::Activation { activation: act }, pw_bn)
    }

    fn residual_block(
        &mut self,
        prefix: &str,
        input: NodeId,
        stride: usize,
        out: usize,
        act: Activation,
    ) -> Result<NodeId> {
        let cin = self.channels(input);
        let a = self.conv_bn_act(prefix, "1", input, BLOCK_KERNEL, stride, out, Some(act))?;
        let b = self.conv_bn_act(prefix, "2", a, BLOCK_KERNEL, 1, out, None)?;
        let shortcut = if stride != 1 || cin != out {
            let proj = self.unary(
                format!("{prefix}.proj"),
                Op::Conv { kernel: 1, stride, in_channels: cin, out_channels: out, bias: false },
                input,
            )?;
            self.unary(format!("{prefix}.proj_bn"), Op::BatchNorm { channels: out }, proj)?
        } else {
            input
        };
        let sum = self.push(format!("{prefix}.add"), Op::Add, vec![b, shortcut])?;
        self.unary(format!("{prefix}.act"), Op::Activation { activation: act }, sum)
    }
}

fn infer_shape(name: &str, op: &Op, inputs: &[Shape]) -> Result<Shape> {
    let mismatch = |what: String| Error::config(format!("node {name}: {what}"));
    let arity = match op {
        Op::Input => 0,
        Op::Add => 2,
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(mismatch(format!("expected {arity} inputs, got {}", inputs.len())));
    }
    let strided = |s: &Shape, kernel: usize, stride: usize, channels: usize| {
        let (h, _) = Padding::Same.output_extent(s.height, kernel, stride).expect("same padding");
        let (w, _) = Padding::Same.output_extent(s.width, kernel, stride).expect("same padding");
        Shape { height: h, width: w, channels }
    };
    Ok(match *op {
        Op::Input => unreachable!("input shapes are set by the builder"),
        Op::Scatter => inputs[0],
        Op::Conv { kernel, stride, in_channels, out_channels, .. } => {
            if inputs[0].channels != in_channels {
                return Err(mismatch(format!("conv expects {in_channels} channels, got {}", inputs[0].channels)));
            }
            strided(&inputs[0], kernel, stride, out_channels)
        }
        Op::Depthwise { kernel, stride, channels } => {
            if inputs[0].channels != channels {
                return Err(mismatch(format!("depthwise expects {channels} channels, got {}", inputs[0].channels)));
            }
            strided(&inputs[0], kernel, stride, channels)
        }
        Op::Pointwise { in_channels, out_channels, .. } => {
            if inputs[0].channels != in_channels {
                return Err(mismatch(format!("pointwise expects {in_channels} channels, got {}", inputs[0].channels)));
            }
            Shape { channels: out_channels, ..inputs[0] }
        }
        Op::BatchNorm { channels } => {
            if inputs[0].channels != channels {
                return Err(mismatch(format!("batch norm expects {channels} channels, got {}", inputs[0].channels)));
            }
            inputs[0]
        }
        Op::Activation { .. } => inputs[0],
        Op::Add => {
            if inputs[0] != inputs[1] {
                return Err(mismatch(format!("add of {:?} and {:?}", inputs[0], inputs[1])));
            }
            inputs[0]
        }
    })
}

/// Builds the graph at the grid resolution given by the config.
pub fn build_graph(config: &ModelConfig) -> Result<LayerGraph> {
    config.validate()?;
    let (rows, cols) = config.grid.dims()?;
    build_graph_for_input(config, rows, cols)
}

/// Builds the graph for an arbitrary pseudo-image resolution.
pub fn build_graph_for_input(config: &ModelConfig, height: usize, width: usize) -> Result<LayerGraph> {
    config.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::config("input dims must be positive"));
    }
    let mut b = Builder { nodes: Vec::new(), section: Section::Encoder, block: None };
    let point_dim = augmented_point_dim(config.point_features);
    b.nodes.push(Node {
        name: "input".into(),
        op: Op::Input,
        inputs: vec![],
        shape: Shape { height, width, channels: point_dim },
        section: Section::Encoder,
        block: None,
    });
    let input = 0;

    let fec_act = config.activations.fec;
    let f1 = config.fec.f1;
    let mut x = if config.use_fec {
        let pfn = b.unary(
            "encoder.pfn.linear".into(),
            Op::Pointwise { in_channels: point_dim, out_channels: f1, bias: true },
            input,
        )?;
        let mut x = b.unary("encoder.pfn.act".into(), Op::Activation { activation: fec_act }, pfn)?;
        for (name, width) in [("enhance", config.fec.f2), ("compress", config.fec.f3)] {
            let cin = b.channels(x);
            let lin = b.unary(
                format!("encoder.fec.{name}"),
                Op::Pointwise { in_channels: cin, out_channels: width, bias: true },
                x,
            )?;
            x = b.unary(format!("encoder.fec.{name}_act"), Op::Activation { activation: fec_act }, lin)?;
        }
        x
    } else {
        let pfn = b.unary(
            "encoder.pfn.linear".into(),
            Op::Pointwise { in_channels: point_dim, out_channels: f1, bias: false },
            input,
        )?;
        let bn = b.unary("encoder.pfn.bn".into(), Op::BatchNorm { channels: f1 }, pfn)?;
        b.unary("encoder.pfn.act".into(), Op::Activation { activation: fec_act }, bn)?
    };
    let pseudo_image = b.unary("pseudo_image".into(), Op::Scatter, x)?;
    x = pseudo_image;

    b.section = Section::Stem;
    let stem_convs = match config.block_kind {
        BlockKind::Dsconv => 1,
        BlockKind::Residual => 2,
    };
    for i in 0..stem_convs {
        x = b.conv_bn_act(
            "stem",
            &i.to_string(),
            x,
            BLOCK_KERNEL,
            1,
            config.stem_filters,
            Some(config.activations.stem),
        )?;
    }

    b.section = Section::Backbone;
    let mut stage_outputs = [0; 4];
    let mut stage_strides = [0; 4];
    let mut total_stride = 1;
    for stage in 0..4 {
        total_stride *= config.stage_strides[stage];
        stage_strides[stage] = total_stride;
        for block in 0..config.blocks_per_stage[stage] {
            let stride = if block == 0 { config.stage_strides[stage] } else { 1 };
            let prefix = format!("stage{}.block{}", stage + 1, block + 1);
            b.block = Some((stage + 1, block + 1));
            let act = config.activations.backbone;
            let width = config.stage_widths[stage];
            x = match config.block_kind {
                BlockKind::Dsconv => b.dsconv_block(&prefix, x, stride, width, act)?,
                BlockKind::Residual => b.residual_block(&prefix, x, stride, width, act)?,
            };
        }
        stage_outputs[stage] = x;
    }
    b.block = None;

    let mut heads = Vec::new();
    for kind in HeadKind::ALL {
        let stage = kind.tap(&config.head_taps);
        let tap = stage_outputs[stage - 1];
        let act = kind.activation(&config.activations);
        b.section = Section::Head(kind);
        let prefix = kind.node_prefix();
        let c = b.channels(tap);
        let feat = b.dsconv_block(&format!("{prefix}.block"), tap, 1, c, act)?;
        let logits = b.unary(
            format!("{prefix}.score"),
            Op::Pointwise { in_channels: c, out_channels: kind.classes().len(), bias: true },
            feat,
        )?;
        let score =
            b.unary(format!("{prefix}.score_sigmoid"), Op::Activation { activation: Activation::Sigmoid }, logits)?;
        let regression = b.unary(
            format!("{prefix}.regression"),
            Op::Pointwise { in_channels: c, out_channels: REGRESSION_CHANNELS, bias: true },
            feat,
        )?;
        heads.push(HeadNodes { kind, stage, stride: stage_strides[stage - 1], score, regression });
    }

    Ok(LayerGraph { nodes: b.nodes, input, pseudo_image, stage_outputs, stage_strides, heads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn count(graph: &LayerGraph, pred: impl Fn(&Node) -> bool) -> usize {
        graph.nodes.iter().filter(|n| pred(n)).count()
    }

    #[test]
    fn stem_conv_counts() {
        let ds = build_graph(&Preset::DsfecS.config()).unwrap();
        let res = build_graph(&Preset::Baseline.config()).unwrap();
        let stem_convs = |g: &LayerGraph| count(g, |n| n.section == Section::Stem && matches!(n.op, Op::Conv { .. }));
        assert_eq!(stem_convs(&ds), 1);
        assert_eq!(stem_convs(&res), 2);
    }

    #[test]
    fn block_counts_match_presets() {
        for p in Preset::ALL {
            let cfg = p.config();
            let g = build_graph(&cfg).unwrap();
            assert_eq!(g.blocks_per_stage(), cfg.blocks_per_stage, "{p}");
        }
        assert_eq!(build_graph(&Preset::DsfecS.config()).unwrap().blocks_per_stage().iter().sum::<usize>(), 7);
    }

    #[test]
    fn naming_is_deterministic() {
        let g = build_graph(&Preset::DsfecM.config()).unwrap();
        assert!(g.find("stage2.block3.pw_bn").is_some());
        assert!(g.find("stage2.block4.pw").is_none());
        assert!(g.find("head_vru.block.dw").is_some());
        let again = build_graph(&Preset::DsfecM.config()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn fec_encoder_has_no_batch_norm() {
        let g = build_graph(&Preset::DsfecL.config()).unwrap();
        assert_eq!(count(&g, |n| n.section == Section::Encoder && matches!(n.op, Op::BatchNorm { .. })), 0);
        assert_eq!(g.node(g.pseudo_image).shape, Shape { height: 160, width: 160, channels: 12 });
        let base = build_graph(&Preset::Baseline.config()).unwrap();
        assert_eq!(count(&base, |n| n.section == Section::Encoder && matches!(n.op, Op::BatchNorm { .. })), 1);
    }

    #[test]
    fn stage_shapes_follow_strides() {
        let g = build_graph(&Preset::DsfecS.config()).unwrap();
        let dims: Vec<_> = g.stage_outputs.iter().map(|&i| g.node(i).shape).collect();
        assert_eq!(
            dims,
            vec![
                Shape { height: 80, width: 80, channels: 32 },
                Shape { height: 40, width: 40, channels: 64 },
                Shape { height: 20, width: 20, channels: 128 },
                Shape { height: 10, width: 10, channels: 256 },
            ]
        );
        assert_eq!(g.stage_strides, [2, 4, 8, 16]);
    }

    #[test]
    fn inputs_precede_consumers() {
        let g = build_graph(&Preset::Baseline.config()).unwrap();
        for (i, n) in g.nodes.iter().enumerate() {
            assert!(n.inputs.iter().all(|&j| j < i), "{}", n.name);
        }
    }
}
