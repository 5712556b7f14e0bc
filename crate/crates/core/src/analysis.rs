//! Ablation grids and per-joint feature-response profiles.
//!
//! A grid runs one full train+eval per (value, seed) pair; grid points are
//! independent and may run in parallel. Per-run failures are recorded in
//! their row and excluded from that point's mean rather than aborting the
//! grid. The response profile is each joint's share of a feature map's L2
//! energy over channels and time; the output header labels this definition
//! as an interpretation since several reasonable ones exist.

use crate::config::RunConfig;
use crate::data::dataset::Dataset;
use crate::data::prepare_input;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::model::Model;
use crate::skeleton::SkeletonGraph;
use crate::tensor::Tensor;
use crate::train;
use serde::{Deserialize, Serialize};

// ---- ablation ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisValues {
    /// Feature weight applied both inside the cascade and at final fusion;
    /// zero makes the run an exact baseline.
    Lambda(Vec<f64>),
    /// Cascade temporal kernel sizes.
    Kernel(Vec<usize>),
    /// Tap sets.
    Taps(Vec<Vec<usize>>),
}

impl AxisValues {
    pub fn default_lambda() -> Self {
        AxisValues::Lambda((1..=9).map(|i| i as f64 / 10.0).collect())
    }

    pub fn default_kernel() -> Self {
        AxisValues::Kernel(vec![3, 5, 7, 9, 11])
    }

    pub fn default_taps() -> Self {
        AxisValues::Taps(vec![
            vec![1, 10],
            vec![4, 10],
            vec![7, 10],
            vec![4, 7, 10],
            vec![1, 5, 10],
            vec![1, 4, 7, 10],
        ])
    }

    pub fn axis_name(&self) -> &'static str {
        match self {
            AxisValues::Lambda(_) => "lambda",
            AxisValues::Kernel(_) => "kernel",
            AxisValues::Taps(_) => "taps",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AxisValues::Lambda(v) => v.len(),
            AxisValues::Kernel(v) => v.len(),
            AxisValues::Taps(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> String {
        match self {
            AxisValues::Lambda(v) => format!("{}", v[i]),
            AxisValues::Kernel(v) => format!("{}", v[i]),
            AxisValues::Taps(v) => v[i]
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join("+"),
        }
    }

    fn apply(&self, i: usize, cfg: &mut RunConfig) {
        match self {
            AxisValues::Lambda(v) => {
                cfg.model.lambda_internal = v[i];
                cfg.model.lambda_fusion = v[i];
            }
            AxisValues::Kernel(v) => cfg.model.kt = v[i],
            AxisValues::Taps(v) => cfg.model.taps = v[i].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateGrid {
    pub values: AxisValues,
    pub seeds: Vec<u64>,
}

impl AblateGrid {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("ablate values: empty grid".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("ablate seeds: empty seed list".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub value: String,
    pub seed: u64,
    pub config_hash: String,
    /// Best validation top-1 of the run, when it succeeded.
    pub val_top1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub value: String,
    /// Mean best-validation top-1 over successful seeds.
    pub mean_val_top1: f64,
    /// Population standard deviation over successful seeds.
    pub std_val_top1: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub axis: String,
    pub base_config_hash: String,
    pub metric: String,
    /// Sorted by mean accuracy, best first.
    pub summaries: Vec<PointSummary>,
    pub runs: Vec<RunRow>,
}

impl AblateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One table: `|values|` summary rows then `|values| * |seeds|` run rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# axis={} metric={} base_config_hash={}\n",
            self.axis, self.metric, self.base_config_hash
        );
        out.push_str("kind,value,seed,val_top1,mean_val_top1,std_val_top1,config_hash,error\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "summary,{},,,{},{},,\n",
                s.value, s.mean_val_top1, s.std_val_top1
            ));
        }
        for r in &self.runs {
            out.push_str(&format!(
                "run,{},{},{},,,{},{}\n",
                r.value,
                r.seed,
                r.val_top1.map(|v| v.to_string()).unwrap_or_default(),
                r.config_hash,
                r.error.clone().unwrap_or_default()
            ));
        }
        out
    }
}

/// Trains one run per (grid value, seed) and aggregates per-point means.
pub fn run_ablate(
    base: &RunConfig,
    grid: &AblateGrid,
    dataset: &Dataset,
    mode: ExecMode,
) -> Result<AblateReport> {
    grid.validate()?;
    base.validate()?;

    let mut jobs = Vec::new();
    for i in 0..grid.values.len() {
        for &seed in &grid.seeds {
            let mut cfg = base.clone();
            grid.values.apply(i, &mut cfg);
            cfg.optim.seed = seed;
            jobs.push((i, seed, cfg));
        }
    }

    let rows: Vec<RunRow> = exec::map(mode, &jobs, |(i, seed, cfg)| {
        let outcome = train::train(cfg, dataset, ExecMode::Sequential);
        match outcome {
            Ok(out) => RunRow {
                value: grid.values.label(*i),
                seed: *seed,
                config_hash: cfg.hash(),
                val_top1: Some(out.report.best_val_top1),
                error: None,
            },
            Err(e) => RunRow {
                value: grid.values.label(*i),
                seed: *seed,
                config_hash: cfg.hash(),
                val_top1: None,
                error: Some(e.to_string()),
            },
        }
    });

    let mut summaries = Vec::with_capacity(grid.values.len());
    for i in 0..grid.values.len() {
        let label = grid.values.label(i);
        let point: Vec<&RunRow> = rows.iter().filter(|r| r.value == label).collect();
        let ok: Vec<f64> = point.iter().filter_map(|r| r.val_top1).collect();
        let mean = if ok.is_empty() {
            0.0
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        let std = if ok.is_empty() {
            0.0
        } else {
            (ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ok.len() as f64).sqrt()
        };
        summaries.push(PointSummary {
            value: label,
            mean_val_top1: mean,
            std_val_top1: std,
            runs: ok.len(),
            failures: point.len() - ok.len(),
        });
    }
    summaries.sort_by(|a, b| b.mean_val_top1.partial_cmp(&a.mean_val_top1).unwrap());

    Ok(AblateReport {
        axis: grid.values.axis_name().into(),
        base_config_hash: base.hash(),
        metric: "best_val_top1".into(),
        summaries,
        runs: rows,
    })
}

// ---- feature response -------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    /// Last backbone block output.
    Baseline,
    /// Auxiliary cascade feature.
    Cfsc,
}

impl std::str::FromStr for ResponseSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ResponseSource::Baseline),
            "cfsc" => Ok(ResponseSource::Cfsc),
            other => Err(Error::Config(format!(
                "source: expected baseline or cfsc, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseProfile {
    pub source: ResponseSource,
    /// Per-joint energy share; nonnegative, sums to 1.
    pub response: Vec<f64>,
    /// Set when the feature map was all zeros and the profile fell back to
    /// uniform.
    pub uniform_fallback: bool,
    /// Named readouts for critical joints, when the topology defines them.
    pub named: Vec<(String, f64)>,
}

fn critical_joints(graph: &SkeletonGraph) -> Vec<(String, usize)> {
    match graph.name() {
        "body18" => vec![
            ("left_foot".into(), 13),
            ("right_foot".into(), 10),
            ("left_hand".into(), 7),
            ("right_hand".into(), 4),
        ],
        "body25" => vec![
            ("left_foot".into(), 14),
            ("right_foot".into(), 11),
            ("left_hand".into(), 7),
            ("right_hand".into(), 4),
        ],
        _ => Vec::new(),
    }
}

/// Per-joint share of a feature map's L2 energy.
pub fn response_from_feature(feature: &Tensor) -> Result<(Vec<f64>, bool)> {
    let shape = feature.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "joint_response",
            msg: format!("expected C x T x N feature, got {shape:?}"),
        });
    }
    let (c, t, n) = (shape[0], shape[1], shape[2]);
    let data = feature.data();
    let mut norms = vec![0.0; n];
    for row in 0..c * t {
        for (j, norm) in norms.iter_mut().enumerate() {
            let v = data[row * n + j];
            *norm += v * v;
        }
    }
    let norms: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Ok((vec![1.0 / n as f64; n], true));
    }
    Ok((norms.iter().map(|v| v / total).collect(), false))
}

/// Computes the profile for one raw clip against a trained model.
pub fn joint_response(
    model: &Model,
    clip_values: &Tensor,
    graph: &SkeletonGraph,
    source: ResponseSource,
) -> Result<ResponseProfile> {
    let input = prepare_input(
        clip_values,
        model.config.target_t,
        model.config.stride_product(),
        model.config.modality,
        graph,
    )?;
    let inference = model.infer(&input)?;
    let feature = match source {
        ResponseSource::Baseline => &inference.f_last,
        ResponseSource::Cfsc => inference.f_dis.as_ref().ok_or_else(|| {
            Error::Config("source: cfsc requested but the model has no cascade branch".into())
        })?,
    };
    let (response, uniform_fallback) = response_from_feature(feature)?;
    let named = critical_joints(graph)
        .into_iter()
        .map(|(name, j)| (name, response[j]))
        .collect();
    Ok(ResponseProfile {
        source,
        response,
        uniform_fallback,
        named,
    })
}

impl ResponseProfile {
    pub fn to_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut out = String::new();
        out.push_str(
            "# response definition (interpretation): per-joint share of the feature map's \
             L2 energy over channels and time\n",
        );
        out.push_str(&format!(
            "# config_hash={config_hash} seed={seed} source={} uniform_fallback={}\n",
            match self.source {
                ResponseSource::Baseline => "baseline",
                ResponseSource::Cfsc => "cfsc",
            },
            self.uniform_fallback
        ));
        out.push_str("joint,response\n");
        for (j, r) in self.response.iter().enumerate() {
            out.push_str(&format!("{j},{r}\n"));
        }
        for (name, r) in &self.named {
            out.push_str(&format!("{name},{r}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}
