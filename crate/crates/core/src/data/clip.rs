//! Clip values, modality derivation, replay padding, and the JSON clip
//! file format.
//!
//! Clip file: `{"version":1, "num_joints":N, "channels":3, "fps":f,
//! "label":l, "subject":"s", "frames":[[[x,y,z] x N] x T]}`. Numbers are
//! printed at full precision, so 64-bit values survive a round trip
//! exactly.

use crate::error::{Error, Result};
use crate::skeleton::SkeletonGraph;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One labeled skeleton sequence. Values are `3 x T x N` with channels
/// (x, y, confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonClip {
    pub values: Tensor,
    pub label: usize,
    pub subject: String,
    pub fps: f64,
}

impl SkeletonClip {
    pub fn new(values: Tensor, label: usize, subject: &str, fps: f64) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Data(format!(
                "clip values must be 3 x T x N, got {shape:?}"
            )));
        }
        let (t, n) = (shape[1], shape[2]);
        let conf = &values.data()[2 * t * n..];
        if let Some(bad) = conf.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!(
                "confidence value {bad} outside [0, 1]"
            )));
        }
        Ok(SkeletonClip {
            values,
            label,
            subject: subject.to_string(),
            fps,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn num_joints(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Extends (or truncates) a `C x T x N` tensor along the frame axis: output
/// frame `t` is input frame `t mod T_raw`, so a short clip replays from its
/// beginning and a long one keeps its first `target_t` frames.
pub fn replay_pad(values: &Tensor, target_t: usize) -> Result<Tensor> {
    if target_t == 0 {
        return Err(Error::Data("replay_pad: target length must be >= 1".into()));
    }
    let shape = values.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "replay_pad",
            msg: format!("expected C x T x N values, got {shape:?}"),
        });
    }
    let (c, t_raw, n) = (shape[0], shape[1], shape[2]);
    if t_raw == target_t {
        return Ok(values.clone());
    }
    let mut out = vec![0.0; c * target_t * n];
    let xv = values.data();
    for ch in 0..c {
        for t in 0..target_t {
            let src = t % t_raw;
            let dst_row = (ch * target_t + t) * n;
            let src_row = (ch * t_raw + src) * n;
            out[dst_row..dst_row + n].copy_from_slice(&xv[src_row..src_row + n]);
        }
    }
    Tensor::new(vec![c, target_t, n], out)
}

/// Joint-to-bone conversion: each bone is the joint minus its parent on the
/// path toward the graph center (the center's bone is zero), and a bone's
/// confidence is the minimum of its endpoints'.
pub fn to_bone(values: &Tensor, graph: &SkeletonGraph) -> Result<Tensor> {
    let shape = values.shape();
    if shape.len() != 3 || shape[2] != graph.num_joints() {
        return Err(Error::Dimension {
            op: "to_bone",
            msg: format!(
                "values {shape:?} vs graph of {} joints",
                graph.num_joints()
            ),
        });
    }
    let (c, t, n) = (shape[0], shape[1], shape[2]);
    if c != 3 {
        return Err(Error::Dimension {
            op: "to_bone",
            msg: format!("expected 3 channels, got {c}"),
        });
    }
    let parents = graph.parents_toward_center();
    let xv = values.data();
    let mut out = vec![0.0; c * t * n];
    for frame in 0..t {
        for j in 0..n {
            let p = parents[j];
            for ch in 0..2 {
                let base = (ch * t + frame) * n;
                out[base + j] = xv[base + j] - xv[base + p];
            }
            let zbase = (2 * t + frame) * n;
            out[zbase + j] = xv[zbase + j].min(xv[zbase + p]);
        }
    }
    Tensor::new(vec![c, t, n], out)
}

#[derive(Serialize, Deserialize)]
struct ClipFile {
    version: u32,
    num_joints: usize,
    channels: usize,
    fps: f64,
    label: usize,
    subject: String,
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn clip_to_json(clip: &SkeletonClip) -> Result<String> {
    let (t, n) = (clip.num_frames(), clip.num_joints());
    let xv = clip.values.data();
    let frames: Vec<Vec<[f64; 3]>> = (0..t)
        .map(|frame| {
            (0..n)
                .map(|j| {
                    [
                        xv[frame * n + j],
                        xv[(t + frame) * n + j],
                        xv[(2 * t + frame) * n + j],
                    ]
                })
                .collect()
        })
        .collect();
    let file = ClipFile {
        version: 1,
        num_joints: n,
        channels: 3,
        fps: clip.fps,
        label: clip.label,
        subject: clip.subject.clone(),
        frames,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn clip_from_json(json: &str) -> Result<SkeletonClip> {
    let file: ClipFile = serde_json::from_str(json)?;
    if file.version != 1 {
        return Err(Error::Data(format!(
            "unsupported clip version {}",
            file.version
        )));
    }
    if file.channels != 3 {
        return Err(Error::Data(format!(
            "clip declares {} channels, expected 3",
            file.channels
        )));
    }
    let t = file.frames.len();
    if t == 0 {
        return Err(Error::Data("clip has no frames".into()));
    }
    let n = file.num_joints;
    for (i, frame) in file.frames.iter().enumerate() {
        if frame.len() != n {
            return Err(Error::Data(format!(
                "frame {i} has {} joints, header declares {n}",
                frame.len()
            )));
        }
    }
    let mut data = vec![0.0; 3 * t * n];
    for (frame_idx, frame) in file.frames.iter().enumerate() {
        for (j, xyz) in frame.iter().enumerate() {
            data[frame_idx * n + j] = xyz[0];
            data[(t + frame_idx) * n + j] = xyz[1];
            data[(2 * t + frame_idx) * n + j] = xyz[2];
        }
    }
    SkeletonClip::new(
        Tensor::new(vec![3, t, n], data)?,
        file.label,
        &file.subject,
        file.fps,
    )
}

pub fn write_clip(clip: &SkeletonClip, path: &Path) -> Result<()> {
    std::fs::write(path, clip_to_json(clip)?)?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<SkeletonClip> {
    clip_from_json(&std::fs::read_to_string(path)?)
}
