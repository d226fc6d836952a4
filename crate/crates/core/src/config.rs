//! Architecture description and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::pillar::{FecConfig, GridSpec};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3×3 convolutions with a skip connection.
    Residual,
    /// 3×3 depthwise + 1×1 pointwise.
    Dsconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationMap {
    pub fec: Activation,
    pub stem: Activation,
    pub backbone: Activation,
    pub head_car: Activation,
    pub head_truck: Activation,
    pub head_vru: Activation,
}

impl Default for ActivationMap {
    fn default() -> Self {
        Self {
            fec: Activation::Relu,
            stem: Activation::leaky_relu(),
            backbone: Activation::leaky_relu(),
            head_car: Activation::Swish,
            head_truck: Activation::Swish,
            head_vru: Activation::Relu,
        }
    }
}

impl ActivationMap {
    pub fn uniform(act: Activation) -> Self {
        Self { fec: act, stem: act, backbone: act, head_car: act, head_truck: act, head_vru: act }
    }

    fn validate(&self) -> Result<()> {
        for (name, act) in [
            ("fec", self.fec),
            ("stem", self.stem),
            ("backbone", self.backbone),
            ("head_car", self.head_car),
            ("head_truck", self.head_truck),
            ("head_vru", self.head_vru),
        ] {
            act.validate().map_err(|e| Error::config(format!("activations.{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Backbone stage (1-based) each detection head reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadTaps {
    pub car: usize,
    pub truck: usize,
    pub vru: usize,
}

impl Default for HeadTaps {
    fn default() -> Self {
        Self { car: 4, truck: 3, vru: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    /// Raw measurement channels per radar point.
    pub point_features: usize,
    pub max_points_per_pillar: usize,
    /// When false the encoder is the plain single-layer pillar net with batch norm
    /// and `fec.f1` output channels.
    pub use_fec: bool,
    pub fec: FecConfig,
    pub stem_filters: usize,
    pub block_kind: BlockKind,
    pub blocks_per_stage: [usize; 4],
    pub stage_widths: [usize; 4],
    pub stage_strides: [usize; 4],
    pub activations: ActivationMap,
    pub head_taps: HeadTaps,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Preset::DsfecL.config()
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.use_fec {
            self.fec.validate()?;
        } else if self.fec.f1 == 0 {
            return Err(Error::config("fec.f1 must be positive"));
        }
        if self.max_points_per_pillar == 0 {
            return Err(Error::config("max_points_per_pillar must be positive"));
        }
        if self.stem_filters == 0 {
            return Err(Error::config("stem_filters must be positive"));
        }
        for (field, values) in [
            ("blocks_per_stage", self.blocks_per_stage),
            ("stage_widths", self.stage_widths),
            ("stage_strides", self.stage_strides),
        ] {
            if let Some(i) = values.iter().position(|&v| v == 0) {
                return Err(Error::config(format!("{field}[{i}] must be positive")));
            }
        }
        for (name, tap) in [("car", self.head_taps.car), ("truck", self.head_taps.truck), ("vru", self.head_taps.vru)] {
            if !(1..=4).contains(&tap) {
                return Err(Error::config(format!("head_taps.{name} must be a stage in 1..=4, got {tap}")));
            }
        }
        self.activations.validate()
    }

    /// Channels of the pseudo-image handed to the stem.
    pub fn encoder_channels(&self) -> usize {
        if self.use_fec {
            self.fec.f3
        } else {
            self.fec.f1
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks_per_stage.iter().sum()
    }

    /// Parses a flat JSON config. A `"preset"` key selects a starting point and
    /// every other key overrides it; without one, every field must be present.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(mut fields) = value else {
            return Err(Error::config("config must be a JSON object"));
        };
        let merged = match fields.remove("preset") {
            Some(Value::String(name)) => {
                let mut base = serde_json::to_value(name.parse::<Preset>()?.config()).expect("config serializes");
                merge(&mut base, Value::Object(fields));
                base
            }
            Some(other) => return Err(Error::config(format!("preset must be a string, got {other}"))),
            None => Value::Object(fields),
        };
        let config: ModelConfig =
            serde_json::from_value(merged).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(base), Value::Object(overrides)) => {
            for (k, v) in overrides {
                match base.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        base.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Baseline,
    DsfecL,
    DsfecM,
    DsfecS,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Baseline, Preset::DsfecL, Preset::DsfecM, Preset::DsfecS];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::DsfecL => "dsfec-l",
            Preset::DsfecM => "dsfec-m",
            Preset::DsfecS => "dsfec-s",
        }
    }

    pub fn config(self) -> ModelConfig {
        let dsfec = |blocks| ModelConfig {
            grid: GridSpec::default(),
            point_features: 2,
            max_points_per_pillar: 20,
            use_fec: true,
            fec: FecConfig::default(),
            stem_filters: 12,
            block_kind: BlockKind::Dsconv,
            blocks_per_stage: blocks,
            stage_widths: [32, 64, 128, 256],
            stage_strides: [2, 2, 2, 2],
            activations: ActivationMap::default(),
            head_taps: HeadTaps::default(),
        };
        match self {
            // PointPillars encoder, two-conv 32-filter stem, residual blocks, ReLU throughout.
            Preset::Baseline => ModelConfig {
                use_fec: false,
                stem_filters: 32,
                block_kind: BlockKind::Residual,
                activations: ActivationMap::uniform(Activation::Relu),
                ..dsfec([3, 6, 6, 3])
            },
            Preset::DsfecL => dsfec([3, 6, 6, 3]),
            Preset::DsfecM => dsfec([3, 3, 2, 3]),
            Preset::DsfecS => dsfec([1, 1, 3, 2]),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s)).ok_or_else(|| {
            Error::Usage(format!("unknown preset `{s}` (expected one of baseline, dsfec-l, dsfec-m, dsfec-s)"))
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_block_counts() {
        assert_eq!(Preset::DsfecL.config().blocks_per_stage, [3, 6, 6, 3]);
        assert_eq!(Preset::DsfecM.config().total_blocks(), 11);
        assert_eq!(Preset::DsfecS.config().total_blocks(), 7);
        let base = Preset::Baseline.config();
        assert_eq!(base.block_kind, BlockKind::Residual);
        assert_eq!(base.blocks_per_stage, [3, 6, 6, 3]);
        for p in Preset::ALL {
            p.config().validate().unwrap();
        }
    }

    #[test]
    fn default_activation_assignment() {
        let a = Preset::DsfecS.config().activations;
        assert_eq!(a.fec, Activation::Relu);
        assert_eq!(a.head_vru, Activation::Relu);
        assert_eq!(a.stem.name(), "leaky_relu");
        assert_eq!(a.backbone.name(), "leaky_relu");
        assert_eq!(a.head_car, Activation::Swish);
        assert_eq!(a.head_truck, Activation::Swish);
    }

    #[test]
    fn preset_names_parse() {
        assert_eq!("dsfec-m".parse::<Preset>().unwrap(), Preset::DsfecM);
        assert!(matches!("nope".parse::<Preset>(), Err(Error::Usage(_))));
    }

    #[test]
    fn json_overrides_on_top_of_preset() {
        let cfg = ModelConfig::from_json(r#"{"preset":"dsfec-s","stem_filters":16,"fec":{"f2":96}}"#).unwrap();
        assert_eq!(cfg.stem_filters, 16);
        assert_eq!(cfg.fec, FecConfig { f1: 32, f2: 96, f3: 12 });
        assert_eq!(cfg.blocks_per_stage, [1, 1, 3, 2]);

        let round = serde_json::to_string(&Preset::DsfecM.config()).unwrap();
        assert_eq!(ModelConfig::from_json(&round).unwrap(), Preset::DsfecM.config());
    }

    #[test]
    fn json_errors_name_the_field() {
        let err = ModelConfig::from_json(r#"{"preset":"dsfec-s","stem_filter":16}"#).unwrap_err();
        assert!(err.to_string().contains("stem_filter"), "{err}");
        let err = ModelConfig::from_json(r#"{"preset":"dsfec-s","blocks_per_stage":[1,0,1,1]}"#).unwrap_err();
        assert!(err.to_string().contains("blocks_per_stage[1]"), "{err}");
        let err = ModelConfig::from_json(r#"{"preset":"dsfec-s","fec":{"f2":16}}"#).unwrap_err();
        assert!(err.to_string().contains("f1 < f2"), "{err}");
        let err = ModelConfig::from_json(r#"{"stem_filters":16}"#).unwrap_err();
        assert!(err.to_string().contains("missing field"), "{err}");
    }
}
