//! Stem + four-stage backbone: block kernels and the graph executor.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, NodeId, Op};
use crate::tensor::{
    add, apply_activation_in_place, batch_norm_infer, conv2d, depthwise_conv2d, pointwise_conv2d, Activation,
    BatchNormParams, ConvSpec, DepthwiseSpec, FeatureMap, Padding, PointwiseSpec,
};
use crate::weights::{Tensor, WeightStore};

/// Epsilon used for every batch norm; not stored in weight files.
pub const BN_EPSILON: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DsConvParams {
    pub depthwise: DepthwiseSpec,
    pub dw_norm: BatchNormParams,
    pub pointwise: PointwiseSpec,
    pub pw_norm: BatchNormParams,
}

/// depthwise 3×3 (stride) → BN → act → pointwise 1×1 → BN → act.
pub fn dsconv_block_forward(input: &FeatureMap, params: &DsConvParams, activation: Activation) -> Result<FeatureMap> {
    let mut x = depthwise_conv2d(input, &params.depthwise)?;
    x = batch_norm_infer(&x, &params.dw_norm)?;
    apply_activation_in_place(&mut x, activation);
    x = pointwise_conv2d(&x, &params.pointwise)?;
    x = batch_norm_infer(&x, &params.pw_norm)?;
    apply_activation_in_place(&mut x, activation);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    pub conv1: ConvSpec,
    pub norm1: BatchNormParams,
    pub conv2: ConvSpec,
    pub norm2: BatchNormParams,
    /// 1×1 strided projection used when the block changes shape.
    pub projection: Option<(ConvSpec, BatchNormParams)>,
}

/// conv3×3 (stride) → BN → act → conv3×3 → BN, plus shortcut, then act.
pub fn residual_block_forward(
    input: &FeatureMap,
    params: &ResidualParams,
    activation: Activation,
) -> Result<FeatureMap> {
    let mut x = conv2d(input, &params.conv1)?;
    x = batch_norm_infer(&x, &params.norm1)?;
    apply_activation_in_place(&mut x, activation);
    x = conv2d(&x, &params.conv2)?;
    x = batch_norm_infer(&x, &params.norm2)?;
    let mut out = match &params.projection {
        Some((proj, norm)) => {
            let shortcut = batch_norm_infer(&conv2d(input, proj)?, norm)?;
            add(&x, &shortcut)?
        }
        None => add(&x, input)?,
    };
    apply_activation_in_place(&mut out, activation);
    Ok(out)
}

/// Resolved parameters of one graph node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeParams {
    None,
    Conv(ConvSpec),
    Depthwise(DepthwiseSpec),
    Pointwise(PointwiseSpec),
    BatchNorm(BatchNormParams),
}

/// A layer graph with its weights bound, ready to execute.
#[derive(Debug, Clone)]
pub struct Network {
    graph: LayerGraph,
    params: Vec<NodeParams>,
    last_uses: Vec<Option<NodeId>>,
}

fn fetch<'a>(weights: &'a WeightStore, name: &str, dims: &[usize]) -> Result<&'a Tensor> {
    let t = weights.get(name).ok_or_else(|| Error::MissingWeights(vec![name.to_owned()]))?;
    if t.dims != dims {
        return Err(Error::WeightFormat(format!("tensor {name} has dims {:?}, expected {dims:?}", t.dims)));
    }
    Ok(t)
}

impl Network {
    /// Binds `weights` to `graph`. Every missing tensor is reported at once.
    pub fn new(graph: LayerGraph, weights: &WeightStore) -> Result<Self> {
        let missing = weights.missing_for(&graph);
        if !missing.is_empty() {
            return Err(Error::MissingWeights(missing));
        }
        let mut params = Vec::with_capacity(graph.len());
        for node in &graph.nodes {
            let name = &node.name;
            let shapes = node.op.param_shapes();
            let get = |suffix: &str| -> Result<Vec<f32>> {
                let dims = &shapes.iter().find(|(s, _)| *s == suffix).expect("declared parameter").1;
                Ok(fetch(weights, &format!("{name}.{suffix}"), dims)?.data.clone())
            };
            let p = match node.op {
                Op::Conv { kernel, stride, in_channels, out_channels, bias } => NodeParams::Conv(ConvSpec::new(
                    (kernel, kernel),
                    in_channels,
                    out_channels,
                    stride,
                    Padding::Same,
                    get("weight")?,
                    if bias { Some(get("bias")?) } else { None },
                )?),
                Op::Depthwise { kernel, stride, channels } => NodeParams::Depthwise(DepthwiseSpec::new(
                    (kernel, kernel),
                    channels,
                    stride,
                    Padding::Same,
                    get("weight")?,
                    None,
                )?),
                Op::Pointwise { in_channels, out_channels, bias } => NodeParams::Pointwise(PointwiseSpec::new(
                    in_channels,
                    out_channels,
                    get("weight")?,
                    if bias { Some(get("bias")?) } else { None },
                )?),
                Op::BatchNorm { .. } => NodeParams::BatchNorm(
                    BatchNormParams::new(
                        get("gamma")?,
                        get("beta")?,
                        get("running_mean")?,
                        get("running_var")?,
                        BN_EPSILON,
                    )
                    .map_err(|e| Error::WeightFormat(format!("{name}: {e}")))?,
                ),
                Op::Input | Op::Scatter | Op::Activation { .. } | Op::Add => NodeParams::None,
            };
            params.push(p);
        }
        let last_uses = graph.last_uses();
        Ok(Self { graph, params, last_uses })
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn params(&self, id: NodeId) -> &NodeParams {
        &self.params[id]
    }

    pub fn pointwise(&self, name: &str) -> Option<&PointwiseSpec> {
        match self.graph.find(name).map(|id| &self.params[id]) {
            Some(NodeParams::Pointwise(p)) => Some(p),
            _ => None,
        }
    }

    pub fn batch_norm(&self, name: &str) -> Option<&BatchNormParams> {
        match self.graph.find(name).map(|id| &self.params[id]) {
            Some(NodeParams::BatchNorm(p)) => Some(p),
            _ => None,
        }
    }

    fn depthwise(&self, name: &str) -> Option<&DepthwiseSpec> {
        match self.graph.find(name).map(|id| &self.params[id]) {
            Some(NodeParams::Depthwise(p)) => Some(p),
            _ => None,
        }
    }

    fn conv(&self, name: &str) -> Option<&ConvSpec> {
        match self.graph.find(name).map(|id| &self.params[id]) {
            Some(NodeParams::Conv(p)) => Some(p),
            _ => None,
        }
    }

    /// Parameters of the depthwise-separable block whose nodes start with `prefix`.
    pub fn dsconv_params(&self, prefix: &str) -> Option<DsConvParams> {
        Some(DsConvParams {
            depthwise: self.depthwise(&format!("{prefix}.dw"))?.clone(),
            dw_norm: self.batch_norm(&format!("{prefix}.dw_bn"))?.clone(),
            pointwise: self.pointwise(&format!("{prefix}.pw"))?.clone(),
            pw_norm: self.batch_norm(&format!("{prefix}.pw_bn"))?.clone(),
        })
    }

    pub fn residual_params(&self, prefix: &str) -> Option<ResidualParams> {
        let projection = match self.conv(&format!("{prefix}.proj")) {
            Some(p) => Some((p.clone(), self.batch_norm(&format!("{prefix}.proj_bn"))?.clone())),
            None => None,
        };
        Some(ResidualParams {
            conv1: self.conv(&format!("{prefix}.conv1"))?.clone(),
            norm1: self.batch_norm(&format!("{prefix}.bn1"))?.clone(),
            conv2: self.conv(&format!("{prefix}.conv2"))?.clone(),
            norm2: self.batch_norm(&format!("{prefix}.bn2"))?.clone(),
            projection,
        })
    }

    /// Feeds `input` as the output of node `start` and evaluates every later
    /// node up to and including `end`. Returns the outputs listed in `keep`.
    pub fn run(
        &self,
        start: NodeId,
        input: FeatureMap,
        end: NodeId,
        keep: &[NodeId],
    ) -> Result<HashMap<NodeId, FeatureMap>> {
        let expected = self.graph.node(start).shape;
        if input.shape() != (expected.height, expected.width, expected.channels) {
            return Err(Error::config(format!(
                "node {} expects a {}x{}x{} input, got {:?}",
                self.graph.node(start).name,
                expected.height,
                expected.width,
                expected.channels,
                input.shape()
            )));
        }
        let mut values: Vec<Option<FeatureMap>> = vec![None; self.graph.len()];
        values[start] = Some(input);
        let kept = |id: NodeId| keep.contains(&id);
        for id in start + 1..=end {
            let node = self.graph.node(id);
            // Unary elementwise nodes reuse their input buffer when nothing else reads it.
            let take_input = |values: &mut Vec<Option<FeatureMap>>| -> Result<FeatureMap> {
                let src = node.inputs[0];
                if self.last_uses[src] == Some(id) && !kept(src) {
                    values[src].take().ok_or_else(|| missing_input(&node.name))
                } else {
                    Ok(arg(values, node.inputs[0], &node.name)?.clone())
                }
            };
            let out = match (&node.op, &self.params[id]) {
                (Op::Scatter, _) => take_input(&mut values)?,
                (Op::Conv { .. }, NodeParams::Conv(spec)) => conv2d(arg(&values, node.inputs[0], &node.name)?, spec)?,
                (Op::Depthwise { .. }, NodeParams::Depthwise(spec)) => {
                    depthwise_conv2d(arg(&values, node.inputs[0], &node.name)?, spec)?
                }
                (Op::Pointwise { .. }, NodeParams::Pointwise(spec)) => {
                    pointwise_conv2d(arg(&values, node.inputs[0], &node.name)?, spec)?
                }
                (Op::BatchNorm { .. }, NodeParams::BatchNorm(bn)) => {
                    batch_norm_infer(arg(&values, node.inputs[0], &node.name)?, bn)?
                }
                (Op::Activation { activation }, _) => {
                    let mut x = take_input(&mut values)?;
                    apply_activation_in_place(&mut x, *activation);
                    x
                }
                (Op::Add, _) => {
                    add(arg(&values, node.inputs[0], &node.name)?, arg(&values, node.inputs[1], &node.name)?)?
                }
                (op, _) => return Err(Error::config(format!("node {} ({}) cannot be executed", node.name, op.kind()))),
            };
            values[id] = Some(out);
            for &src in &node.inputs {
                if self.last_uses[src] == Some(id) && !kept(src) {
                    values[src] = None;
                }
            }
        }
        Ok(keep.iter().filter_map(|&k| values[k].take().map(|v| (k, v))).collect())
    }
}

fn missing_input(node: &str) -> Error {
    Error::config(format!("node {node} reads a value that was not computed"))
}

fn arg<'a>(values: &'a [Option<FeatureMap>], src: NodeId, node: &str) -> Result<&'a FeatureMap> {
    values[src].as_ref().ok_or_else(|| missing_input(node))
}

/// Runs stem and stages on a pseudo-image and returns the four stage outputs.
pub fn backbone_forward(pseudo_image: FeatureMap, network: &Network) -> Result<[FeatureMap; 4]> {
    let g = network.graph();
    let keep = g.stage_outputs;
    let mut out = network.run(g.pseudo_image, pseudo_image, keep[3], &keep)?;
    let mut take = |i: usize| out.remove(&keep[i]).expect("stage output kept");
    Ok([take(0), take(1), take(2), take(3)])
}
