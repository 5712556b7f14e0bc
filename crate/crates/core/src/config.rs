//! Model and optimizer configuration, loadable as one JSON document:
//! `{"model": {...}, "optim": {...}}`. Missing fields take defaults; the
//! cascade kernel, feature weights and tap set default per modality.

use crate::error::{Error, Result};
use crate::skeleton::{PartitionStrategy, SkeletonGraph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    /// "body18", "body25" or "chain(N)".
    Named(String),
    Custom {
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
    },
}

impl TopologySpec {
    pub fn build(&self) -> Result<SkeletonGraph> {
        match self {
            TopologySpec::Named(name) => match name.as_str() {
                "body18" => Ok(SkeletonGraph::body18()),
                "body25" => Ok(SkeletonGraph::body25()),
                other => {
                    if let Some(inner) = other
                        .strip_prefix("chain(")
                        .and_then(|rest| rest.strip_suffix(')'))
                    {
                        let n: usize = inner.parse().map_err(|_| {
                            Error::Config(format!("topology: bad chain size in {other:?}"))
                        })?;
                        SkeletonGraph::chain(n)
                    } else {
                        Err(Error::Config(format!(
                            "topology: unknown name {other:?} (expected body18, body25 or chain(N))"
                        )))
                    }
                }
            },
            TopologySpec::Custom {
                num_joints,
                edges,
                center,
            } => SkeletonGraph::custom(*num_joints, edges.clone(), *center, "custom"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Joint,
    Bone,
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Modality::Joint),
            "bone" => Ok(Modality::Bone),
            other => Err(Error::Config(format!(
                "modality: expected joint or bone, got {other:?}"
            ))),
        }
    }
}

pub const DEFAULT_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_STRIDES: [usize; 10] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ModelConfigDe")]
pub struct ModelConfig {
    pub topology: TopologySpec,
    pub partition: PartitionStrategy,
    /// Output channels per backbone block.
    pub channels: Vec<usize>,
    /// Temporal stride per backbone block (1 or 2).
    pub strides: Vec<usize>,
    /// Temporal kernel inside backbone blocks (odd).
    pub kt_block: usize,
    /// Whether the cascade branch exists at all.
    pub cfsc: bool,
    /// Tapped block indices, 1-based, strictly increasing.
    pub taps: Vec<usize>,
    /// Cascade temporal kernel (odd).
    pub kt: usize,
    /// Weight on the previous cascade level during aggregation.
    pub lambda_internal: f64,
    /// Weight on the auxiliary feature in the final fusion.
    pub lambda_fusion: f64,
    pub modality: Modality,
    pub num_classes: usize,
    /// Clip length after replay padding.
    pub target_t: usize,
}

#[derive(Deserialize)]
struct ModelConfigDe {
    topology: Option<TopologySpec>,
    partition: Option<PartitionStrategy>,
    channels: Option<Vec<usize>>,
    strides: Option<Vec<usize>>,
    kt_block: Option<usize>,
    cfsc: Option<bool>,
    taps: Option<Vec<usize>>,
    kt: Option<usize>,
    lambda_internal: Option<f64>,
    lambda_fusion: Option<f64>,
    modality: Option<Modality>,
    num_classes: Option<usize>,
    target_t: Option<usize>,
    /// Convenience: sets both lambda_internal and lambda_fusion.
    lambda: Option<f64>,
}

impl From<ModelConfigDe> for ModelConfig {
    fn from(de: ModelConfigDe) -> Self {
        let modality = de.modality.unwrap_or(Modality::Joint);
        let mut cfg = ModelConfig::defaults(modality);
        if let Some(v) = de.topology {
            cfg.topology = v;
        }
        if let Some(v) = de.partition {
            cfg.partition = v;
        }
        if let Some(v) = de.channels {
            cfg.channels = v;
        }
        if let Some(v) = de.strides {
            cfg.strides = v;
        }
        if let Some(v) = de.kt_block {
            cfg.kt_block = v;
        }
        if let Some(v) = de.cfsc {
            cfg.cfsc = v;
        }
        if let Some(v) = de.taps {
            cfg.taps = v;
        }
        if let Some(v) = de.kt {
            cfg.kt = v;
        }
        if let Some(v) = de.lambda {
            cfg.lambda_internal = v;
            cfg.lambda_fusion = v;
        }
        if let Some(v) = de.lambda_internal {
            cfg.lambda_internal = v;
        }
        if let Some(v) = de.lambda_fusion {
            cfg.lambda_fusion = v;
        }
        if let Some(v) = de.num_classes {
            cfg.num_classes = v;
        }
        if let Some(v) = de.target_t {
            cfg.target_t = v;
        }
        cfg
    }
}

impl ModelConfig {
    /// Per-modality defaults: the cascade kernel and feature weight peak at
    /// different values for joint (kt 7, lambda 0.3, taps 1+10) and bone
    /// (kt 3, lambda 0.5, taps 4+7+10) inputs.
    pub fn defaults(modality: Modality) -> Self {
        let (kt, lambda, taps) = match modality {
            Modality::Joint => (7, 0.3, vec![1, 10]),
            Modality::Bone => (3, 0.5, vec![4, 7, 10]),
        };
        ModelConfig {
            topology: TopologySpec::Named("body18".into()),
            partition: PartitionStrategy::SpatialConfig,
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            kt_block: 9,
            cfsc: true,
            taps,
            kt,
            lambda_internal: lambda,
            lambda_fusion: lambda,
            modality,
            num_classes: 7,
            target_t: 150,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    /// Clip length actually fed to the backbone: `target_t` replay-padded up
    /// to the next multiple of the total stride product.
    pub fn effective_t(&self) -> usize {
        let align = self.stride_product().max(1);
        self.target_t.div_ceil(align) * align
    }

    /// Hard validation; returns soft warnings (tap-selection guidance).
    pub fn validate(&self) -> Result<Vec<String>> {
        let blocks = self.channels.len();
        if blocks == 0 {
            return Err(Error::Config("channels: empty backbone schedule".into()));
        }
        if self.strides.len() != blocks {
            return Err(Error::Config(format!(
                "strides: {} entries for {} blocks",
                self.strides.len(),
                blocks
            )));
        }
        if let Some(s) = self.strides.iter().find(|&&s| s != 1 && s != 2) {
            return Err(Error::Config(format!("strides: stride {s} not in {{1,2}}")));
        }
        if self.kt_block % 2 == 0 || self.kt_block == 0 {
            return Err(Error::Config(format!(
                "kt_block: must be odd and positive, got {}",
                self.kt_block
            )));
        }
        if self.kt % 2 == 0 || self.kt == 0 {
            return Err(Error::Config(format!(
                "kt: must be odd and positive, got {}",
                self.kt
            )));
        }
        for (field, v) in [
            ("lambda_internal", self.lambda_internal),
            ("lambda_fusion", self.lambda_fusion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{field}: {v} outside [0, 1]")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes: need at least 2, got {}",
                self.num_classes
            )));
        }
        if self.target_t == 0 {
            return Err(Error::Config("target_t: must be positive".into()));
        }
        self.topology.build().map_err(|e| {
            Error::Config(format!("topology: {e}"))
        })?;

        let mut warnings = Vec::new();
        if self.cfsc {
            if self.taps.is_empty() {
                return Err(Error::Config("taps: empty tap set".into()));
            }
            if !self.taps.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(format!(
                    "taps: must be strictly increasing, got {:?}",
                    self.taps
                )));
            }
            if self.taps[0] < 1 || *self.taps.last().unwrap() > blocks {
                return Err(Error::Config(format!(
                    "taps: {:?} outside block range 1..={blocks}",
                    self.taps
                )));
            }
            warnings.extend(tap_selection_warnings(&self.taps, blocks));
        }
        Ok(warnings)
    }
}

/// Soft checks on the tap set: depth-stage coverage, adjacent blocks,
/// and cascade size.
pub fn tap_selection_warnings(taps: &[usize], blocks: usize) -> Vec<String> {
    let mut warnings = Vec::new();
    let third = (blocks / 3).max(1);
    let shallow = 1..=third;
    let deep = (blocks - third + 1)..=blocks;
    let mut stages = [false; 3];
    for &t in taps {
        if shallow.contains(&t) {
            stages[0] = true;
        } else if deep.contains(&t) {
            stages[2] = true;
        } else {
            stages[1] = true;
        }
    }
    let covered = stages.iter().filter(|&&s| s).count();
    if covered < 2 {
        warnings.push(format!(
            "taps {taps:?} cover only {covered} of the shallow/middle/deep stages; \
             features from at least two depth stages are recommended"
        ));
    }
    if taps.windows(2).any(|w| w[1] == w[0] + 1) {
        warnings.push(format!(
            "taps {taps:?} include adjacent blocks, which tend to carry similar granularity"
        ));
    }
    if taps.len() > 4 {
        warnings.push(format!(
            "tap set of {} blocks is large; fusing many levels adds cost without gains",
            taps.len()
        ));
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_max: 0.1,
            lr_min: 0.0001,
            momentum: 0.9,
            weight_decay: 0.0004,
            epochs: 90,
            warmup_epochs: 5,
            batch: 16,
            seed: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min >= self.lr_max {
            return Err(Error::Config(format!(
                "lr_min {} must be below lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch: must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum: {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay: {} is negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
}

impl RunConfig {
    pub fn defaults(modality: Modality) -> Self {
        RunConfig {
            model: ModelConfig::defaults(modality),
            optim: OptimConfig::default(),
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.model.validate()?;
        self.optim.validate()?;
        Ok(warnings)
    }

    /// SHA-256 of the resolved config JSON; embedded in every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_modality() {
        let j = ModelConfig::defaults(Modality::Joint);
        assert_eq!((j.kt, j.lambda_internal), (7, 0.3));
        assert_eq!(j.taps, vec![1, 10]);
        let b = ModelConfig::defaults(Modality::Bone);
        assert_eq!((b.kt, b.lambda_internal), (3, 0.5));
        assert_eq!(b.taps, vec![4, 7, 10]);
    }

    #[test]
    fn default_schedule_shape() {
        let cfg = ModelConfig::defaults(Modality::Joint);
        assert_eq!(cfg.channels, DEFAULT_CHANNELS.to_vec());
        assert_eq!(cfg.strides[4], 2);
        assert_eq!(cfg.strides[7], 2);
        assert_eq!(cfg.stride_product(), 4);
        assert_eq!(cfg.effective_t(), 152); // 150 padded up to the stride multiple
    }

    #[test]
    fn json_round_trip_with_partial_fields() {
        let cfg = RunConfig::from_json_str(
            r#"{"model": {"modality": "bone", "lambda": 0.4, "num_classes": 10},
                "optim": {"seed": 42, "epochs": 30}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.kt, 3); // bone default
        assert_eq!(cfg.model.lambda_internal, 0.4);
        assert_eq!(cfg.model.lambda_fusion, 0.4);
        assert_eq!(cfg.model.num_classes, 10);
        assert_eq!(cfg.optim.seed, 42);
        assert_eq!(cfg.optim.lr_max, 0.1);
        cfg.validate().unwrap();

        let json = cfg.to_json();
        let back = RunConfig::from_json_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn validation_names_offending_field() {
        let mut cfg = RunConfig::defaults(Modality::Joint);
        cfg.model.kt = 4;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("kt"), "{err}");

        let mut cfg = RunConfig::defaults(Modality::Joint);
        cfg.model.taps = vec![3, 3];
        assert!(cfg.validate().unwrap_err().to_string().contains("taps"));

        let mut cfg = RunConfig::defaults(Modality::Joint);
        cfg.optim.lr_min = 1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("lr_min"));
    }

    #[test]
    fn tap_warnings_follow_selection_guidance() {
        assert!(tap_selection_warnings(&[4, 7, 10], 10).is_empty());
        assert!(tap_selection_warnings(&[1, 10], 10).is_empty());
        // only-deep coverage
        assert!(!tap_selection_warnings(&[9, 10], 10).is_empty());
        // more than 4 taps
        assert!(!tap_selection_warnings(&[1, 3, 5, 7, 10], 10).is_empty());
    }

    #[test]
    fn chain_topology_parses() {
        let spec = TopologySpec::Named("chain(5)".into());
        assert_eq!(spec.build().unwrap().num_joints(), 5);
        assert!(TopologySpec::Named("ring(5)".into()).build().is_err());
    }

    #[test]
    fn hash_is_sensitive_to_any_field() {
        let a = RunConfig::defaults(Modality::Joint);
        let mut b = a.clone();
        b.model.lambda_fusion = 0.31;
        assert_ne!(a.hash(), b.hash());
    }
}
