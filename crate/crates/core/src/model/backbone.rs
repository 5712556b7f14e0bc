//! The stacked spatiotemporal GCN backbone.
//!
//! Each block runs a partitioned spatial graph convolution with learnable
//! attention masks, then a temporal convolution, with channel normalization
//! after both stages, a residual shortcut, and ReLU activations. The default
//! schedule is ten blocks (64 x4, 128 x3, 256 x3 channels) with temporal
//! stride 2 at blocks 5 and 8, so the frame axis halves twice while the
//! joint axis is preserved throughout.

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::params::{ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    /// 1-based position in the schedule.
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub temporal_stride: usize,
    /// Block-internal temporal kernel (odd, same-padded).
    pub kernel: usize,
    pub residual: bool,
}

impl BlockSpec {
    /// A projection shortcut is needed whenever identity does not fit.
    pub fn needs_projection(&self) -> bool {
        self.residual && (self.in_channels != self.out_channels || self.temporal_stride != 1)
    }
}

/// Expands a model config into per-block specs. The input embedding lifts
/// the raw channels to `channels[0]`, so block 1 starts there; it carries no
/// shortcut since there is nothing meaningful to skip over the lift.
pub fn build_schedule(cfg: &ModelConfig) -> Vec<BlockSpec> {
    let mut specs = Vec::with_capacity(cfg.channels.len());
    let mut in_channels = cfg.channels[0];
    for (i, (&out, &stride)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        specs.push(BlockSpec {
            index: i + 1,
            in_channels,
            out_channels: out,
            temporal_stride: stride,
            kernel: cfg.kt_block,
            residual: i > 0,
        });
        in_channels = out;
    }
    specs
}

/// `(channels, frames)` after each block for an input of length `t_in`,
/// enforcing exact division at every stride.
pub fn block_shapes(schedule: &[BlockSpec], t_in: usize) -> Result<Vec<(usize, usize)>> {
    let mut t = t_in;
    let mut shapes = Vec::with_capacity(schedule.len());
    for spec in schedule {
        if t % spec.temporal_stride != 0 {
            return Err(Error::Dimension {
                op: "block_shapes",
                msg: format!(
                    "temporal length {t} not divisible by stride {} at block {}",
                    spec.temporal_stride, spec.index
                ),
            });
        }
        t /= spec.temporal_stride;
        shapes.push((spec.out_channels, t));
    }
    Ok(shapes)
}

/// Parameter handles for one block.
///
/// Neither the spatial 1x1 mixes nor the block's temporal convolution carry
/// a bias: both feed straight into parameter-free channel normalization,
/// which subtracts per-channel means, so such biases would be provably
/// inert. The shortcut projection adds after the normalization and keeps
/// its bias.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub gcn_w: Vec<ParamId>,
    pub masks: Vec<ParamId>,
    pub tcn_w: ParamId,
    pub shortcut: Option<(ParamId, ParamId)>,
}

pub fn register_block_params(
    store: &mut ParamStore,
    spec: &BlockSpec,
    num_joints: usize,
    num_partitions: usize,
    seed: u64,
) -> Result<BlockParams> {
    let prefix = format!("block{:02}", spec.index);
    let mut gcn_w = Vec::new();
    let mut masks = Vec::new();
    for k in 0..num_partitions {
        gcn_w.push(store.add_uniform_fan_in(
            &format!("{prefix}.gcn.w{k}"),
            vec![spec.out_channels, spec.in_channels],
            spec.in_channels,
            seed,
        )?);
        // attention masks start at all-ones and are decay-exempt
        masks.push(store.add_ones(
            &format!("{prefix}.mask{k}"),
            vec![num_joints, num_joints],
            false,
        )?);
    }
    let tcn_w = store.add_uniform_fan_in(
        &format!("{prefix}.tcn.w"),
        vec![spec.out_channels, spec.out_channels, spec.kernel],
        spec.out_channels * spec.kernel,
        seed,
    )?;
    let shortcut = if spec.needs_projection() {
        let w = store.add_uniform_fan_in(
            &format!("{prefix}.down.w"),
            vec![spec.out_channels, spec.in_channels, 1],
            spec.in_channels,
            seed,
        )?;
        let b = store.add_zeros(&format!("{prefix}.down.b"), vec![spec.out_channels], false)?;
        Some((w, b))
    } else {
        None
    };
    Ok(BlockParams {
        gcn_w,
        masks,
        tcn_w,
        shortcut,
    })
}

/// Partitioned spatial graph convolution:
/// `f_out = sum_k W_k(f_in . (A_k * M_k))` where `*` is the entrywise
/// attention mask and `W_k` a 1x1 convolution over channels.
pub fn spatial_gcn(
    g: &mut Graph,
    x: Var,
    adjacency: &[Var],
    masks: &[Var],
    weights: &[Var],
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for ((&a, &m), &w) in adjacency.iter().zip(masks).zip(weights) {
        let masked = g.mul(a, m)?;
        let mixed = g.joint_mix(x, masked)?;
        let zero_bias = g.constant(crate::tensor::Tensor::zeros(vec![g.shape(w)[0]]));
        let term = g.channel_mix(mixed, w, zero_bias)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    acc.ok_or_else(|| Error::Dimension {
        op: "spatial_gcn",
        msg: "empty adjacency stack".into(),
    })
}

/// One backbone block:
/// spatial gcn -> norm -> relu -> temporal conv (stride) -> norm
/// -> shortcut add -> relu.
pub fn block_forward(
    g: &mut Graph,
    x: Var,
    spec: &BlockSpec,
    adjacency: &[Var],
    params: &BlockParams,
    bound: &[Var],
) -> Result<Var> {
    let masks: Vec<Var> = params.masks.iter().map(|p| bound[p.0]).collect();
    let weights: Vec<Var> = params.gcn_w.iter().map(|p| bound[p.0]).collect();

    let spatial = spatial_gcn(g, x, adjacency, &masks, &weights)?;
    let normed = g.channel_norm(spatial, NORM_EPS)?;
    let activated = g.relu(normed)?;
    let pad = (spec.kernel - 1) / 2;
    let zero_bias = g.constant(crate::tensor::Tensor::zeros(vec![spec.out_channels]));
    let temporal = g.conv_temporal(
        activated,
        bound[params.tcn_w.0],
        zero_bias,
        spec.temporal_stride,
        pad,
    )?;
    let main = g.channel_norm(temporal, NORM_EPS)?;

    let with_shortcut = if !spec.residual {
        main
    } else if let Some((w, b)) = params.shortcut {
        let projected = g.conv_temporal(x, bound[w.0], bound[b.0], spec.temporal_stride, 0)?;
        g.add(main, projected)?
    } else {
        g.add(main, x)?
    };
    g.relu(with_shortcut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Modality;
    use crate::skeleton::{build_adjacency, PartitionStrategy, SkeletonGraph};
    use crate::tensor::Tensor;

    #[test]
    fn default_schedule_matches_channel_trace() {
        let cfg = ModelConfig::defaults(Modality::Joint);
        let schedule = build_schedule(&cfg);
        let trace: Vec<usize> = schedule.iter().map(|s| s.out_channels).collect();
        assert_eq!(trace, vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256]);
        assert!(!schedule[0].residual);
        assert!(schedule[4].needs_projection());
        assert!(schedule[7].needs_projection());
        assert!(!schedule[1].needs_projection());
    }

    #[test]
    fn shapes_halve_at_stride_blocks() {
        let cfg = ModelConfig::defaults(Modality::Joint);
        let schedule = build_schedule(&cfg);
        let shapes = block_shapes(&schedule, 64).unwrap();
        assert_eq!(shapes[3], (64, 64));
        assert_eq!(shapes[4], (128, 32));
        assert_eq!(shapes[7], (256, 16));
        assert_eq!(shapes[9], (256, 16));
        assert!(block_shapes(&schedule, 62).is_err()); // 62/2=31 fails at block 8
    }

    #[test]
    fn spatial_gcn_identity_case() {
        // K_v = 1, A = I, M = ones, W = I: output equals input
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap());
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.constant(Tensor::full(vec![2, 2], 1.0));
        let w = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = spatial_gcn(&mut g, x, &[a], &[m], &[w]).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn spatial_gcn_row_sum_oracle_on_chain() {
        // all-ones single-channel input, W = identity: joint j gets the
        // column sum of A (ones vector times A)
        let graph = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&graph, PartitionStrategy::Uniform);
        let a = &stack.partitions()[0];
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 2, 3], 1.0));
        let av = g.constant(stack.to_tensors().remove(0));
        let m = g.constant(Tensor::full(vec![3, 3], 1.0));
        let w = g.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let y = spatial_gcn(&mut g, x, &[av], &[m], &[w]).unwrap();
        for t in 0..2 {
            for j in 0..3 {
                let expect: f64 = (0..3).map(|i| a[i * 3 + j]).sum();
                assert!((g.value(y).data()[t * 3 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_mask_absorbs_everything() {
        let graph = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&graph, PartitionStrategy::Uniform);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 4, 3], 1.5));
        let av = g.constant(stack.to_tensors().remove(0));
        let m = g.constant(Tensor::zeros(vec![3, 3]));
        let w = g.constant(Tensor::new(vec![2, 2], vec![0.4, -0.1, 0.2, 0.8]).unwrap());
        let y = spatial_gcn(&mut g, x, &[av], &[m], &[w]).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_block_reduces_to_relu_of_input() {
        // stride 1, in == out, all weights zero: main path is zero, so the
        // output is relu(shortcut) = relu(x)
        let graph = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&graph, PartitionStrategy::SpatialConfig);
        let spec = BlockSpec {
            index: 2,
            in_channels: 2,
            out_channels: 2,
            temporal_stride: 1,
            kernel: 3,
            residual: true,
        };
        let mut store = ParamStore::new();
        let params = register_block_params(&mut store, &spec, 3, 3, 7).unwrap();
        for i in 0..store.len() {
            let id = ParamId(i);
            store.entry_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let adj: Vec<Var> = stack.to_tensors().into_iter().map(|t| g.constant(t)).collect();
        let data: Vec<f64> = (0..2 * 4 * 3).map(|i| i as f64 - 10.0).collect();
        let x = g.constant(Tensor::new(vec![2, 4, 3], data.clone()).unwrap());
        let y = block_forward(&mut g, x, &spec, &adj, &params, &bound).unwrap();
        let expect: Vec<f64> = data.iter().map(|&v| v.max(0.0)).collect();
        assert_eq!(g.value(y).data(), expect.as_slice());
    }

    #[test]
    fn stride_two_halves_frames() {
        let graph = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&graph, PartitionStrategy::SpatialConfig);
        let spec = BlockSpec {
            index: 5,
            in_channels: 2,
            out_channels: 4,
            temporal_stride: 2,
            kernel: 3,
            residual: true,
        };
        let mut store = ParamStore::new();
        let params = register_block_params(&mut store, &spec, 3, 3, 7).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let adj: Vec<Var> = stack.to_tensors().into_iter().map(|t| g.constant(t)).collect();
        let x = g.constant(Tensor::full(vec![2, 16, 3], 0.5));
        let y = block_forward(&mut g, x, &spec, &adj, &params, &bound).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 8, 3]);
    }

    #[test]
    fn single_block_gradient_check() {
        let graph = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&graph, PartitionStrategy::SpatialConfig);
        let spec = BlockSpec {
            index: 2,
            in_channels: 2,
            out_channels: 2,
            temporal_stride: 1,
            kernel: 3,
            residual: true,
        };
        let mut store = ParamStore::new();
        let params = register_block_params(&mut store, &spec, 3, 3, 11).unwrap();
        let mut rng = crate::rng::stream(31, "block-gc");
        let x = Tensor::new(
            vec![2, 8, 3],
            (0..48).map(|_| crate::rng::normal(&mut rng)).collect(),
        )
        .unwrap();
        let adj_tensors = stack.to_tensors();
        let report = crate::gradcheck::grad_check(&mut store, 1e-5, |g, p| {
            let bound = p.bind(g);
            let adj: Vec<Var> = adj_tensors.iter().map(|t| g.constant(t.clone())).collect();
            let xv = g.constant(x.clone());
            let out = block_forward(g, xv, &spec, &adj, &params, &bound)?;
            let pooled = g.global_avg_pool(out)?;
            let logits = g.stack_rows(&[pooled])?;
            let (loss, _) = g.softmax_cross_entropy(logits, &[1])?;
            Ok(loss)
        })
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
