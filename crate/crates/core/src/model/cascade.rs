//! Cross-block feature cascade.
//!
//! Tapped block outputs are aggregated shallow-to-deep: each level adds a
//! weighted copy of the previous level's result to the current tap, then
//! runs a per-level temporal convolution whose stride and output channels
//! align the result with the *next* aggregation operand (the following tap,
//! or the last block's output for the final level). The deepest aggregate is
//! channel-normalized and rectified into the auxiliary feature, which is
//! finally added to the last block's output with its own weight before
//! pooling and classification. The only nonlinearity inside the cascade is
//! that terminal ReLU.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::backbone::NORM_EPS;
use crate::model::params::{ParamId, ParamStore};

/// Geometry of one per-level temporal convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTc {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Derives the per-level convolution geometry from the backbone's
/// `(channels, frames)` trace. `shapes[b-1]` is block `b`'s output shape.
pub fn plan_cascade(
    shapes: &[(usize, usize)],
    taps: &[usize],
    kt: usize,
) -> Result<Vec<LevelTc>> {
    if taps.is_empty() {
        return Err(Error::Config("taps: empty tap set".into()));
    }
    if !taps.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(format!(
            "taps: must be strictly increasing, got {taps:?}"
        )));
    }
    if taps[0] < 1 || *taps.last().unwrap() > shapes.len() {
        return Err(Error::Config(format!(
            "taps: {taps:?} outside block range 1..={}",
            shapes.len()
        )));
    }
    let last = *shapes.last().unwrap();
    let mut plan = Vec::with_capacity(taps.len());
    for (v, &tap) in taps.iter().enumerate() {
        let src = shapes[tap - 1];
        // align with the next aggregation operand
        let tgt = if v + 1 < taps.len() {
            shapes[taps[v + 1] - 1]
        } else {
            last
        };
        if src.1 % tgt.1 != 0 {
            return Err(Error::Dimension {
                op: "plan_cascade",
                msg: format!(
                    "non-integer stride ratio {} / {} at level {}",
                    src.1,
                    tgt.1,
                    v + 1
                ),
            });
        }
        plan.push(LevelTc {
            kernel: kt,
            stride: src.1 / tgt.1,
            in_channels: src.0,
            out_channels: tgt.0,
        });
    }
    Ok(plan)
}

/// Per-level weights; every level carries a bias except the deepest, whose
/// output feeds the parameter-free normalizer directly (a bias there would
/// be provably inert: the normalization subtracts per-channel means).
pub fn register_cascade_params(
    store: &mut ParamStore,
    plan: &[LevelTc],
    seed: u64,
) -> Result<Vec<(ParamId, Option<ParamId>)>> {
    plan.iter()
        .enumerate()
        .map(|(v, tc)| {
            let w = store.add_uniform_fan_in(
                &format!("cfsc.tc{}.w", v + 1),
                vec![tc.out_channels, tc.in_channels, tc.kernel],
                tc.in_channels * tc.kernel,
                seed,
            )?;
            let b = if v + 1 < plan.len() {
                Some(store.add_zeros(
                    &format!("cfsc.tc{}.b", v + 1),
                    vec![tc.out_channels],
                    false,
                )?)
            } else {
                None
            };
            Ok((w, b))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CascadeOut {
    /// Auxiliary discriminative feature (post-ReLU, entrywise nonnegative).
    pub f_dis: Var,
    /// Normalized pre-ReLU aggregate.
    pub pre_relu: Var,
}

/// Runs the cascade over the tapped block outputs.
pub fn cascade_forward(
    g: &mut Graph,
    tapped: &[Var],
    plan: &[LevelTc],
    lambda: f64,
    params: &[(ParamId, Option<ParamId>)],
    bound: &[Var],
) -> Result<CascadeOut> {
    if tapped.len() != plan.len() || params.len() != plan.len() {
        return Err(Error::Dimension {
            op: "cascade_forward",
            msg: format!(
                "{} taps vs plan of {} levels",
                tapped.len(),
                plan.len()
            ),
        });
    }
    let mut carried: Option<Var> = None;
    for ((&tap, tc), &(w, b)) in tapped.iter().zip(plan).zip(params) {
        let aggregated = match carried {
            // shallowest level: direct temporal convolution
            None => tap,
            Some(prev) => {
                let weighted = g.scale(prev, lambda)?;
                g.add(tap, weighted)?
            }
        };
        let pad = (tc.kernel - 1) / 2;
        let bias = match b {
            Some(id) => bound[id.0],
            None => g.constant(crate::tensor::Tensor::zeros(vec![tc.out_channels])),
        };
        carried = Some(g.conv_temporal(aggregated, bound[w.0], bias, tc.stride, pad)?);
    }
    let deepest = carried.expect("plan is non-empty");
    let pre_relu = g.channel_norm(deepest, NORM_EPS)?;
    let f_dis = g.relu(pre_relu)?;
    Ok(CascadeOut { f_dis, pre_relu })
}

/// Final fusion: `F_d = f_last + lambda * F_dis`.
pub fn fuse_final(g: &mut Graph, f_last: Var, f_dis: Var, lambda: f64) -> Result<Var> {
    let weighted = g.scale(f_dis, lambda)?;
    g.add(f_last, weighted)
}

/// Global average pooling followed by a dense map to class logits.
pub fn classify(g: &mut Graph, features: Var, w: Var, b: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(features)?;
    if g.shape(pooled) != &g.shape(w)[1..] {
        return Err(Error::ShapeMismatch {
            op: "classify",
            lhs: g.shape(w).to_vec(),
            rhs: g.shape(pooled).to_vec(),
        });
    }
    g.affine(pooled, w, b)
}
