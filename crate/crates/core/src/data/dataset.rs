//! Dataset manifests, on-disk layout, and seeded batch iteration.
//!
//! Manifest file: `{"classes":[...], "topology":"body18", "target_t":150,
//! "clips":[{"path","label","subject","split"}...]}`. Train and validation
//! subjects must be disjoint; this is enforced at construction and checked
//! again on load.

use crate::config::Modality;
use crate::data::clip::{load_clip, replay_pad, to_bone, write_clip, SkeletonClip};
use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::SkeletonGraph;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!(
                "split: expected train or val, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: String,
    pub label: usize,
    pub subject: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub topology: String,
    pub target_t: usize,
    pub clips: Vec<ClipRecord>,
}

impl DatasetManifest {
    pub fn new(
        classes: Vec<String>,
        topology: String,
        target_t: usize,
        clips: Vec<ClipRecord>,
    ) -> Result<Self> {
        let manifest = DatasetManifest {
            classes,
            topology,
            target_t,
            clips,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Data("manifest declares no classes".into()));
        }
        for record in &self.clips {
            if record.label >= self.classes.len() {
                return Err(Error::Data(format!(
                    "clip {:?} has label {} but only {} classes exist",
                    record.path,
                    record.label,
                    self.classes.len()
                )));
            }
        }
        let train: BTreeSet<&str> = self
            .clips
            .iter()
            .filter(|c| c.split == Split::Train)
            .map(|c| c.subject.as_str())
            .collect();
        let val: BTreeSet<&str> = self
            .clips
            .iter()
            .filter(|c| c.split == Split::Val)
            .map(|c| c.subject.as_str())
            .collect();
        if let Some(shared) = train.intersection(&val).next() {
            return Err(Error::Data(format!(
                "subject {shared:?} appears in both train and val splits"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(json)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// A manifest plus its clips, loaded in memory (clips are parallel to
/// `manifest.clips`).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<SkeletonClip>,
}

impl Dataset {
    /// Reads a manifest and every clip it references (paths are relative to
    /// the manifest's directory). Cross-checks labels and subjects.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for record in &manifest.clips {
            let clip = load_clip(&base.join(&record.path))?;
            if clip.label != record.label {
                return Err(Error::Data(format!(
                    "clip {:?} has label {}, manifest says {}",
                    record.path, clip.label, record.label
                )));
            }
            if clip.subject != record.subject {
                return Err(Error::Data(format!(
                    "clip {:?} has subject {:?}, manifest says {:?}",
                    record.path, clip.subject, record.subject
                )));
            }
            clips.push(clip);
        }
        Ok(Dataset { manifest, clips })
    }

    /// Writes all clips plus `manifest.json` into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        for (record, clip) in self.manifest.clips.iter().zip(&self.clips) {
            write_clip(clip, &dir.join(&record.path))?;
        }
        let manifest_path = dir.join("manifest.json");
        self.manifest.save(&manifest_path)?;
        Ok(manifest_path)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn graph(&self) -> Result<SkeletonGraph> {
        match self.manifest.topology.as_str() {
            "body18" => Ok(SkeletonGraph::body18()),
            "body25" => Ok(SkeletonGraph::body25()),
            other => Err(Error::Data(format!(
                "manifest topology {other:?} is not built in"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `B x 3 x T x N`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub clip_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub batch: usize,
    pub target_t: usize,
    /// The frame count is replay-padded up to a multiple of this (the
    /// backbone's total stride product).
    pub align: usize,
    pub modality: Modality,
    pub seed: u64,
    pub epoch: usize,
}

/// Pads a raw clip to the target length, then up to the stride multiple.
pub fn prepare_input(
    values: &Tensor,
    target_t: usize,
    align: usize,
    modality: Modality,
    graph: &SkeletonGraph,
) -> Result<Tensor> {
    let padded = replay_pad(values, target_t)?;
    let aligned_t = target_t.div_ceil(align.max(1)) * align.max(1);
    let aligned = if aligned_t != target_t {
        replay_pad(&padded, aligned_t)?
    } else {
        padded
    };
    match modality {
        Modality::Joint => Ok(aligned),
        Modality::Bone => to_bone(&aligned, graph),
    }
}

/// Deterministic seeded epoch shuffling; the last partial batch is kept.
pub fn batch_iter(
    dataset: &Dataset,
    split: Split,
    graph: &SkeletonGraph,
    opts: &BatchOptions,
) -> Result<Vec<Batch>> {
    let mut order = dataset.indices(split);
    if order.is_empty() {
        return Err(Error::Data(format!("empty {split:?} split")));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch: must be positive".into()));
    }
    let mut r = rng::substream(opts.seed, "shuffle", opts.epoch as u64);
    rng::shuffle(&mut r, &mut order);

    let mut batches = Vec::new();
    for chunk in order.chunks(opts.batch) {
        let mut prepared = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            prepared.push(prepare_input(
                &dataset.clips[idx].values,
                opts.target_t,
                opts.align,
                opts.modality,
                graph,
            )?);
        }
        let shape = prepared[0].shape().to_vec();
        let mut data = Vec::with_capacity(chunk.len() * prepared[0].numel());
        for p in &prepared {
            if p.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "batch_iter",
                    msg: format!("clip shapes diverge: {:?} vs {shape:?}", p.shape()),
                });
            }
            data.extend_from_slice(p.data());
        }
        let mut full_shape = vec![chunk.len()];
        full_shape.extend_from_slice(&shape);
        batches.push(Batch {
            inputs: Tensor::new(full_shape, data)?,
            labels: chunk.iter().map(|&i| dataset.clips[i].label).collect(),
            clip_indices: chunk.to_vec(),
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthConfig};
    use crate::exec::ExecMode;

    fn small_dataset() -> Dataset {
        synth_dataset(
            &SynthConfig {
                seed: 7,
                classes: 3,
                train_per_class: 11,
                val_per_class: 2,
                train_subjects: 3,
                val_subjects: 2,
                t_min: 20,
                t_max: 40,
                noise: 0.0,
                target_t: 30,
            },
            ExecMode::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_cover_the_split() {
        // 33 train clips at batch 16: 16, 16, 1
        let ds = small_dataset();
        let graph = ds.graph().unwrap();
        let opts = BatchOptions {
            batch: 16,
            target_t: 30,
            align: 4,
            modality: Modality::Joint,
            seed: 5,
            epoch: 0,
        };
        let batches = batch_iter(&ds, Split::Train, &graph, &opts).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![16, 16, 1]);
        // 30 padded up to the next multiple of 4
        assert_eq!(batches[0].inputs.shape(), &[16, 3, 32, 18]);
    }

    #[test]
    fn shuffling_is_seed_and_epoch_deterministic() {
        let ds = small_dataset();
        let graph = ds.graph().unwrap();
        let opts = BatchOptions {
            batch: 8,
            target_t: 30,
            align: 4,
            modality: Modality::Joint,
            seed: 5,
            epoch: 3,
        };
        let a = batch_iter(&ds, Split::Train, &graph, &opts).unwrap();
        let b = batch_iter(&ds, Split::Train, &graph, &opts).unwrap();
        assert_eq!(a[0].clip_indices, b[0].clip_indices);
        let c = batch_iter(&ds, Split::Train, &graph, &BatchOptions { epoch: 4, ..opts }).unwrap();
        assert_ne!(a[0].clip_indices, c[0].clip_indices);
    }

    #[test]
    fn bone_modality_routes_through_conversion() {
        let ds = small_dataset();
        let graph = ds.graph().unwrap();
        let opts = BatchOptions {
            batch: 4,
            target_t: 32,
            align: 4,
            modality: Modality::Bone,
            seed: 1,
            epoch: 0,
        };
        let joint = batch_iter(
            &ds,
            Split::Val,
            &graph,
            &BatchOptions { modality: Modality::Joint, ..opts },
        )
        .unwrap();
        let bone = batch_iter(&ds, Split::Val, &graph, &opts).unwrap();
        assert_eq!(joint[0].clip_indices, bone[0].clip_indices);
        let expect = to_bone(&joint[0].inputs.index_first(0).unwrap(), &graph).unwrap();
        assert_eq!(bone[0].inputs.index_first(0).unwrap(), expect);
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut ds = small_dataset();
        ds.manifest.clips.retain(|c| c.split == Split::Train);
        ds.clips.truncate(ds.manifest.clips.len());
        let graph = ds.graph().unwrap();
        let opts = BatchOptions {
            batch: 4,
            target_t: 30,
            align: 4,
            modality: Modality::Joint,
            seed: 1,
            epoch: 0,
        };
        assert!(batch_iter(&ds, Split::Val, &graph, &opts).is_err());
    }

    #[test]
    fn manifest_rejects_subject_leakage_and_bad_labels() {
        let records = vec![
            ClipRecord { path: "a.json".into(), label: 0, subject: "s1".into(), split: Split::Train },
            ClipRecord { path: "b.json".into(), label: 0, subject: "s1".into(), split: Split::Val },
        ];
        let err = DatasetManifest::new(vec!["c0".into()], "body18".into(), 30, records)
            .unwrap_err()
            .to_string();
        assert!(err.contains("s1"), "{err}");

        let records = vec![ClipRecord {
            path: "a.json".into(),
            label: 3,
            subject: "s1".into(),
            split: Split::Train,
        }];
        assert!(DatasetManifest::new(vec!["c0".into()], "body18".into(), 30, records).is_err());
    }

    #[test]
    fn dataset_write_load_round_trip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = ds.write(dir.path()).unwrap();
        let loaded = Dataset::load(&manifest_path).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        for (a, b) in ds.clips.iter().zip(&loaded.clips) {
            assert_eq!(a, b);
        }
        // manifest file itself is byte-stable
        let first = std::fs::read(&manifest_path).unwrap();
        loaded.manifest.save(&manifest_path).unwrap();
        assert_eq!(std::fs::read(&manifest_path).unwrap(), first);
    }
}
