//! Whole-model assembly: input embedding, backbone blocks, optional
//! cascade branch, final fusion and classifier head.

pub mod backbone;
pub mod cascade;
pub mod checkpoint;
pub mod params;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::skeleton::{build_adjacency, AdjacencyStack, SkeletonGraph};
use crate::tensor::Tensor;
use backbone::{block_forward, block_shapes, build_schedule, register_block_params, BlockParams, BlockSpec, NORM_EPS};
use cascade::{cascade_forward, classify, fuse_final, plan_cascade, register_cascade_params, LevelTc};
use params::{ParamId, ParamStore};

/// Raw clips carry (x, y, confidence).
pub const INPUT_CHANNELS: usize = 3;

/// Parameter handles grouped by role.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub embed: (ParamId, ParamId),
    pub blocks: Vec<BlockParams>,
    pub cascade: Vec<(ParamId, Option<ParamId>)>,
    pub head: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub skeleton: SkeletonGraph,
    pub adjacency: AdjacencyStack,
    pub schedule: Vec<BlockSpec>,
    pub plan: Option<Vec<LevelTc>>,
    pub params: ParamStore,
    pub layout: ModelLayout,
    pub seed: u64,
}

/// Tape handles for one forward pass.
pub struct BoundModel {
    pub params: Vec<Var>,
    pub adjacency: Vec<Var>,
}

/// Nodes of interest from one clip's forward pass.
pub struct ForwardOutputs {
    /// One output per backbone block, shallow to deep.
    pub blocks: Vec<Var>,
    /// Auxiliary feature (present when the cascade branch exists).
    pub f_dis: Option<Var>,
    /// Normalized pre-ReLU cascade aggregate.
    pub pre_relu: Option<Var>,
    /// Classifier input after final fusion.
    pub fused: Var,
    pub logits: Var,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let skeleton = config.topology.build()?;
        let adjacency = build_adjacency(&skeleton, config.partition);
        let schedule = build_schedule(&config);
        let shapes = block_shapes(&schedule, config.effective_t())?;
        let plan = if config.cfsc {
            Some(plan_cascade(&shapes, &config.taps, config.kt)?)
        } else {
            None
        };

        let mut params = ParamStore::new();
        let lift = schedule[0].in_channels;
        let embed_w = params.add_uniform_fan_in(
            "embed.w",
            vec![lift, INPUT_CHANNELS, 1],
            INPUT_CHANNELS,
            seed,
        )?;
        let embed_b = params.add_zeros("embed.b", vec![lift], false)?;
        let blocks = schedule
            .iter()
            .map(|spec| {
                register_block_params(
                    &mut params,
                    spec,
                    skeleton.num_joints(),
                    adjacency.num_partitions(),
                    seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let cascade = match &plan {
            Some(p) => register_cascade_params(&mut params, p, seed)?,
            None => Vec::new(),
        };
        let c_last = schedule.last().unwrap().out_channels;
        let head_w = params.add_uniform_fan_in(
            "head.w",
            vec![config.num_classes, c_last],
            c_last,
            seed,
        )?;
        let head_b = params.add_zeros("head.b", vec![config.num_classes], false)?;

        Ok(Model {
            config,
            skeleton,
            adjacency,
            schedule,
            plan,
            params,
            layout: ModelLayout {
                embed: (embed_w, embed_b),
                blocks,
                cascade,
                head: (head_w, head_b),
            },
            seed,
        })
    }

    /// Registers parameters and adjacency constants on a fresh tape.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        self.bind_store(g, &self.params)
    }

    /// Binds an external parameter store with the same layout (used by the
    /// gradient checker, which perturbs its own copy of the parameters).
    pub fn bind_store(&self, g: &mut Graph, store: &ParamStore) -> BoundModel {
        BoundModel {
            params: store.bind(g),
            adjacency: self
                .adjacency
                .to_tensors()
                .into_iter()
                .map(|t| g.constant(t))
                .collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expect = [
            INPUT_CHANNELS,
            self.config.effective_t(),
            self.skeleton.num_joints(),
        ];
        if shape != expect {
            return Err(Error::Dimension {
                op: "model_forward",
                msg: format!("input shape {shape:?}, expected {expect:?}"),
            });
        }
        Ok(())
    }

    /// Full forward pass for one clip var of shape `3 x T x N`.
    pub fn forward(&self, g: &mut Graph, x: Var, bound: &BoundModel) -> Result<ForwardOutputs> {
        self.check_input(g.shape(x))?;
        // input embedding: normalize the raw clip, lift channels with a 1x1
        // convolution
        let normed = g.channel_norm(x, NORM_EPS)?;
        let (ew, eb) = self.layout.embed;
        let mut feat = g.conv_temporal(normed, bound.params[ew.0], bound.params[eb.0], 1, 0)?;

        let mut blocks = Vec::with_capacity(self.schedule.len());
        for (spec, block_params) in self.schedule.iter().zip(&self.layout.blocks) {
            feat = block_forward(g, feat, spec, &bound.adjacency, block_params, &bound.params)?;
            blocks.push(feat);
        }
        let f_last = *blocks.last().expect("non-empty schedule");

        let (f_dis, pre_relu, fused) = match (&self.plan, &self.layout.cascade) {
            (Some(plan), cascade_params) if self.config.cfsc => {
                let tapped: Vec<Var> = self.config.taps.iter().map(|&b| blocks[b - 1]).collect();
                let out = cascade_forward(
                    g,
                    &tapped,
                    plan,
                    self.config.lambda_internal,
                    cascade_params,
                    &bound.params,
                )?;
                let fused = fuse_final(g, f_last, out.f_dis, self.config.lambda_fusion)?;
                (Some(out.f_dis), Some(out.pre_relu), fused)
            }
            _ => (None, None, f_last),
        };

        let (hw, hb) = self.layout.head;
        let logits = classify(g, fused, bound.params[hw.0], bound.params[hb.0])?;
        Ok(ForwardOutputs {
            blocks,
            f_dis,
            pre_relu,
            fused,
            logits,
        })
    }

    /// Forwards every clip of a `B x 3 x T x N` batch on one tape and stacks
    /// the per-clip logits into a `B x K` node.
    pub fn batch_logits(&self, g: &mut Graph, batch: &Tensor, bound: &BoundModel) -> Result<Var> {
        let bsz = batch.shape()[0];
        let mut rows = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let clip = g.constant(batch.index_first(b)?);
            rows.push(self.forward(g, clip, bound)?.logits);
        }
        g.stack_rows(&rows)
    }

    /// No-training forward for one clip; returns plain tensors.
    pub fn infer(&self, clip: &Tensor) -> Result<Inference> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.constant(clip.clone());
        let out = self.forward(&mut g, x, &bound)?;
        Ok(Inference {
            logits: g.value(out.logits).data().to_vec(),
            f_last: g.value(*out.blocks.last().unwrap()).clone(),
            f_dis: out.f_dis.map(|v| g.value(v).clone()),
        })
    }
}

pub struct Inference {
    pub logits: Vec<f64>,
    pub f_last: Tensor,
    pub f_dis: Option<Tensor>,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Modality, TopologySpec};

    pub(crate) fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::defaults(Modality::Joint);
        cfg.topology = TopologySpec::Named("chain(5)".into());
        cfg.channels = vec![4, 4, 8, 8];
        cfg.strides = vec![1, 1, 2, 1];
        cfg.kt_block = 5;
        cfg.taps = vec![2, 4];
        cfg.kt = 3;
        cfg.lambda_internal = 0.3;
        cfg.lambda_fusion = 0.3;
        cfg.num_classes = 3;
        cfg.target_t = 16;
        cfg
    }

    fn random_clip(cfg: &ModelConfig, n: usize, label: u64) -> Tensor {
        let t = cfg.effective_t();
        let mut rng = crate::rng::substream(99, "clip", label);
        Tensor::new(
            vec![3, t, n],
            (0..3 * t * n).map(|_| crate::rng::normal(&mut rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn forward_shapes_follow_schedule() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 3).unwrap();
        let clip = random_clip(&cfg, 5, 0);
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let x = g.constant(clip);
        let out = model.forward(&mut g, x, &bound).unwrap();
        assert_eq!(g.shape(out.blocks[0]), &[4, 16, 5]);
        assert_eq!(g.shape(out.blocks[1]), &[4, 16, 5]);
        assert_eq!(g.shape(out.blocks[2]), &[8, 8, 5]);
        assert_eq!(g.shape(out.blocks[3]), &[8, 8, 5]);
        assert_eq!(g.shape(out.fused), &[8, 8, 5]);
        assert_eq!(g.shape(out.logits), &[3]);
        // joint axis preserved everywhere
        for &b in &out.blocks {
            assert_eq!(g.shape(b)[2], 5);
        }
    }

    #[test]
    fn default_backbone_trace_at_t64() {
        let mut cfg = ModelConfig::defaults(Modality::Joint);
        cfg.target_t = 64;
        cfg.taps = vec![4, 7, 10];
        cfg.kt = 3;
        let model = Model::new(cfg.clone(), 5).unwrap();
        let clip = random_clip(&cfg, 18, 1);
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let x = g.constant(clip);
        let out = model.forward(&mut g, x, &bound).unwrap();
        let channels: Vec<usize> = out.blocks.iter().map(|&b| g.shape(b)[0]).collect();
        assert_eq!(channels, vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256]);
        assert_eq!(g.shape(out.blocks[9]), &[256, 16, 18]);
        // temporal axis never grows
        let frames: Vec<usize> = out.blocks.iter().map(|&b| g.shape(b)[1]).collect();
        assert!(frames.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn permutation_equivariance_through_whole_backbone() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 11).unwrap();
        let clip = random_clip(&cfg, 5, 2);
        let perm = vec![3, 0, 4, 1, 2];

        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let x = g.constant(clip.clone());
        let base = model.forward(&mut g, x, &bound).unwrap();

        // permuted run: permute the input joints and the adjacency stack
        let mut permuted_model = model.clone();
        permuted_model.adjacency =
            crate::skeleton::permute_graph(&model.skeleton, &model.adjacency, &perm).unwrap();
        let mut g2 = Graph::new();
        let bound2 = permuted_model.bind(&mut g2);
        let xp = g2.constant(crate::skeleton::permute_joints(&clip, &perm).unwrap());
        let permuted = permuted_model.forward(&mut g2, xp, &bound2).unwrap();

        for (&a, &b) in base.blocks.iter().zip(&permuted.blocks) {
            let va = g.value(a);
            let vb = g2.value(b);
            let expected = crate::skeleton::permute_joints(va, &perm).unwrap();
            let max_diff = expected
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-12, "max diff {max_diff}");
        }
    }

    #[test]
    fn rejects_wrong_input_geometry() {
        let cfg = tiny_config();
        let model = Model::new(cfg, 3).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let bad = g.constant(Tensor::zeros(vec![3, 12, 5]));
        assert!(model.forward(&mut g, bad, &bound).is_err());
    }

    #[test]
    fn indivisible_temporal_length_rejected_at_build() {
        let mut cfg = tiny_config();
        cfg.target_t = 16;
        cfg.strides = vec![1, 2, 2, 2]; // product 8; effective_t pads 16 -> 16, 16/8 ok
        Model::new(cfg.clone(), 3).unwrap();
        // a schedule whose strides cannot divide any padded length evenly is
        // impossible by construction (padding aligns), so check the raw
        // helper instead
        let schedule = build_schedule(&cfg);
        assert!(block_shapes(&schedule, 12).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
