//! End-to-end detector: frame in, oriented boxes out.

use crate::backbone::Network;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{build_graph, NodeId};
use crate::heads::{decode_boxes, HeadKind, HeadOutput};
use crate::pillar::{
    fec_forward, pillarize, scatter_to_pseudo_image, FecStack, PillarFeatureNet, PillarSet, RadarFrame,
};
use crate::postprocess::{nms, Detection, PostprocessConfig};
use crate::tensor::{BatchNormParams, FeatureMap};
use crate::weights::WeightStore;

/// A head output with its kind and feature stride.
pub type TappedHead = (HeadKind, usize, HeadOutput);

/// Intermediate tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub pillars: PillarSet,
    pub pseudo_image_shape: (usize, usize, usize),
    pub stage_outputs: Vec<FeatureMap>,
    pub heads: Vec<TappedHead>,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: ModelConfig,
    network: Network,
    pfn: PillarFeatureNet,
    fec: Option<FecStack>,
    postprocess: PostprocessConfig,
}

fn missing(name: &str) -> Error {
    Error::MissingWeights(vec![name.to_owned()])
}

impl Detector {
    pub fn new(config: ModelConfig, weights: &WeightStore, postprocess: PostprocessConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&postprocess.score_threshold) {
            return Err(Error::config(format!("score threshold {} outside [0,1]", postprocess.score_threshold)));
        }
        if !(postprocess.iou_threshold > 0.0 && postprocess.iou_threshold <= 1.0) {
            return Err(Error::config(format!("IoU threshold {} outside (0,1]", postprocess.iou_threshold)));
        }
        let graph = build_graph(&config)?;
        let network = Network::new(graph, weights)?;
        let act = config.activations.fec;
        let linear = network.pointwise("encoder.pfn.linear").ok_or_else(|| missing("encoder.pfn.linear"))?.clone();
        let norm: Option<BatchNormParams> = network.batch_norm("encoder.pfn.bn").cloned();
        let fec = if config.use_fec {
            Some(FecStack {
                enhance: network
                    .pointwise("encoder.fec.enhance")
                    .ok_or_else(|| missing("encoder.fec.enhance"))?
                    .clone(),
                compress: network
                    .pointwise("encoder.fec.compress")
                    .ok_or_else(|| missing("encoder.fec.compress"))?
                    .clone(),
                activation: act,
            })
        } else {
            None
        };
        Ok(Self { config, network, pfn: PillarFeatureNet { linear, norm, activation: act }, fec, postprocess })
    }

    /// A detector with untrained, seed-determined weights.
    pub fn seeded(config: ModelConfig, seed: u64, postprocess: PostprocessConfig) -> Result<Self> {
        let graph = build_graph(&config)?;
        let weights = WeightStore::seeded(&graph, seed);
        Self::new(config, &weights, postprocess)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn postprocess(&self) -> &PostprocessConfig {
        &self.postprocess
    }

    /// Pillarizes `frame` and returns the dense pseudo-image.
    pub fn encode(&self, frame: &RadarFrame) -> Result<(PillarSet, FeatureMap)> {
        if frame.num_features() != self.config.point_features {
            return Err(Error::config(format!(
                "frame carries {} point features, model expects {}",
                frame.num_features(),
                self.config.point_features
            )));
        }
        let pillars = pillarize(frame, &self.config.grid, self.config.max_points_per_pillar)?;
        let mut features = self.pfn.forward(&pillars)?;
        if let Some(stack) = &self.fec {
            features = fec_forward(&features, &self.config.fec, stack)?;
        }
        let image = scatter_to_pseudo_image(&pillars, &features)?;
        Ok((pillars, image))
    }

    fn run_heads(&self, image: FeatureMap, keep_stages: bool) -> Result<(Vec<FeatureMap>, Vec<TappedHead>)> {
        let g = self.network.graph();
        let mut keep: Vec<NodeId> = g.heads.iter().flat_map(|h| [h.score, h.regression]).collect();
        if keep_stages {
            keep.extend(g.stage_outputs);
        }
        let end = *keep.iter().max().expect("graph has heads");
        let mut values = self.network.run(g.pseudo_image, image, end, &keep)?;
        let mut take = |id: NodeId| values.remove(&id).expect("kept node computed");
        let heads = g
            .heads
            .iter()
            .map(|h| {
                let out = HeadOutput { score_map: take(h.score), regression_map: take(h.regression) };
                (h.kind, h.stride, out)
            })
            .collect();
        let stages = if keep_stages { g.stage_outputs.iter().map(|&id| take(id)).collect() } else { Vec::new() };
        Ok((stages, heads))
    }

    /// Full forward pass keeping the stage outputs and raw head maps.
    pub fn forward(&self, frame: &RadarFrame) -> Result<ForwardOutput> {
        let (pillars, image) = self.encode(frame)?;
        let pseudo_image_shape = image.shape();
        let (stage_outputs, heads) = self.run_heads(image, true)?;
        Ok(ForwardOutput { pillars, pseudo_image_shape, stage_outputs, heads })
    }

    /// Boxes after decoding and NMS, sorted by descending score.
    pub fn detect(&self, frame: &RadarFrame) -> Result<Vec<Detection>> {
        let (_, image) = self.encode(frame)?;
        let (_, heads) = self.run_heads(image, false)?;
        let mut dets = Vec::new();
        for (kind, stride, out) in &heads {
            dets.extend(decode_boxes(out, *kind, *stride, &self.config.grid, self.postprocess.score_threshold)?);
        }
        nms(&dets, self.postprocess.iou_threshold, self.postprocess.per_class)
    }
}
