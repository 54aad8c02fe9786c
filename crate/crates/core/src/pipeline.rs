//! End-to-end annotation of a captured sequence, and its evaluation against
//! ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    mean_frame_metrics, FrameMetrics, DEFAULT_BOUNDARY_TOL, DEFAULT_RECALL_TAU, DEFAULT_SAMPLE_STRIDE,
};
use crate::geometry::{backproject, to_world, InstanceMaskFrame, LabeledMaskFrame, PointCloud, ReferenceFrame};
use crate::io::{SimulationConfig, SuiteSpec};
use crate::matching::{
    match_instances, matching_precision, Assignment, FPolicy, MatchConfig, MatchResult, MatchedPair,
};
use crate::profiles::{DEFAULT_MAX_GAP, DEFAULT_SIGMA};
use crate::registration::{
    correspondence, nearest_objects, register, Observation, RegisteredInstance, RegistrationConfig, SceneMap,
};
use crate::reprojection::reproject;
use crate::simulator::{simulate, Sequence};

/// Depth beyond this range (m) is discarded before backprojection.
pub const DEFAULT_CULL_M: f64 = 1.5;

pub const DEFAULT_DEPTH_BAND_M: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub chamfer_threshold: f64,
    pub prune_fraction: f64,
    pub voxel: f64,
    pub sigma: f64,
    pub f_policy: FPolicy,
    pub max_gap: usize,
    pub cull_m: f64,
    /// Points whose camera depth differs from their instance's median depth
    /// by more than this (m) are dropped; `0` disables the filter.
    pub depth_band_m: f64,
    pub boundary_tol_px: usize,
    pub sample_stride: usize,
    pub recall_taus: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chamfer_threshold: 0.02,
            prune_fraction: 0.2,
            voxel: 0.005,
            sigma: DEFAULT_SIGMA,
            f_policy: FPolicy::PerInstant,
            max_gap: DEFAULT_MAX_GAP,
            cull_m: DEFAULT_CULL_M,
            depth_band_m: DEFAULT_DEPTH_BAND_M,
            boundary_tol_px: DEFAULT_BOUNDARY_TOL,
            sample_stride: DEFAULT_SAMPLE_STRIDE,
            recall_taus: vec![DEFAULT_RECALL_TAU],
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let config: PipelineConfig = crate::io::parse_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn registration(&self) -> RegistrationConfig {
        RegistrationConfig {
            chamfer_threshold: self.chamfer_threshold,
            prune_fraction: self.prune_fraction,
            voxel: self.voxel,
        }
    }

    pub fn matching(&self, use_weighting: bool) -> MatchConfig {
        MatchConfig {
            sigma: self.sigma,
            f_policy: self.f_policy,
            max_gap: self.max_gap,
            use_weighting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.registration().validate()?;
        if !(self.sigma >= 0.0 && self.sigma < 1.0) {
            return Err(Error::input("sigma must lie in [0, 1)"));
        }
        if !(self.depth_band_m >= 0.0) {
            return Err(Error::input("depth_band_m must be non-negative"));
        }
        if !(self.cull_m > 0.0) {
            return Err(Error::input("cull_m must be positive"));
        }
        if self.sample_stride == 0 {
            return Err(Error::input("sample_stride must be positive"));
        }
        if self.recall_taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::input("recall thresholds must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// What annotation produces for a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Registered instances, labeled where a tag was matched.
    pub scene: SceneMap,
    pub assignment: Assignment,
    /// One EPC mask per frame.
    pub labels: Vec<LabeledMaskFrame>,
}

/// Per-frame world-frame instance clouds from the segmenter's masks.
pub fn observations(
    seq: &Sequence,
    masks: &[InstanceMaskFrame],
    config: &PipelineConfig,
) -> Result<Vec<Vec<Observation>>> {
    if masks.len() != seq.len() || seq.depth.len() != seq.len() {
        return Err(Error::input("masks, depth frames and poses differ in count"));
    }
    (0..seq.len())
        .into_par_iter()
        .map(|t| {
            let clouds = backproject(&seq.depth[t], &masks[t], &seq.intrinsics, config.cull_m)?;
            clouds
                .into_iter()
                .map(|(local_id, cloud)| {
                    let cloud = depth_band(cloud, config.depth_band_m);
                    Ok(Observation {
                        local_id,
                        cloud: to_world(&cloud, &seq.poses[t])?.voxel_downsample(config.voxel),
                    })
                })
                .collect()
        })
        .collect()
}

/// Drops mask pixels that bled onto surfaces far behind or in front of the
/// instance, judged against the instance's median camera depth.
pub fn depth_band(mut cloud: PointCloud, band: f64) -> PointCloud {
    if band <= 0.0 || cloud.is_empty() {
        return cloud;
    }
    let mut z: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
    let mid = z.len() / 2;
    let median = *z.select_nth_unstable_by(mid, f64::total_cmp).1;
    cloud.points.retain(|p| (p.z - median).abs() <= band);
    cloud
}

/// Registration result shared by both weighting settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub observations: Vec<Vec<Observation>>,
    pub scene: SceneMap,
}

pub fn prepare(seq: &Sequence, config: &PipelineConfig) -> Result<Prepared> {
    config.validate()?;
    seq.validate()?;
    let observations = observations(seq, &seq.masks, config)?;
    let scene = register(&observations, &config.registration())?;
    if scene.instances.is_empty() {
        return Err(Error::Pipeline("no instance survived registration".into()));
    }
    Ok(Prepared { observations, scene })
}

/// Matches tags to the prepared instances and paints the labels.
pub fn finish(
    seq: &Sequence,
    prepared: &Prepared,
    config: &PipelineConfig,
    use_weighting: bool,
) -> Result<(Annotation, MatchResult)> {
    let matched = match_instances(
        &prepared.scene,
        &seq.tags,
        &seq.poses,
        &seq.antenna_offset,
        &seq.rf,
        &config.matching(use_weighting),
    )?;
    let mut scene = prepared.scene.clone();
    matched.assignment.apply(&mut scene);
    let labels = if scene.labeled().next().is_some() {
        reproject(&seq.masks, &prepared.observations, &scene, config.chamfer_threshold)?
    } else {
        seq.masks
            .iter()
            .map(|m| LabeledMaskFrame::background(m.timestamp, m.pixels.width(), m.pixels.height()))
            .collect()
    };
    Ok((
        Annotation {
            scene,
            assignment: matched.assignment.clone(),
            labels,
        },
        matched,
    ))
}

/// Full annotation: backproject, register, match, reproject.
pub fn annotate(seq: &Sequence, config: &PipelineConfig, use_weighting: bool) -> Result<(Annotation, MatchResult)> {
    let prepared = prepare(seq, config)?;
    finish(seq, &prepared, config, use_weighting)
}

/// Ground truth in the form the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthView {
    /// Accumulated world-frame cloud of each object, from the true masks.
    pub objects: Vec<(u8, PointCloud)>,
    pub epcs: BTreeMap<u8, String>,
    pub labels: Vec<LabeledMaskFrame>,
}

pub fn ground_truth_view(seq: &Sequence, config: &PipelineConfig) -> Result<GroundTruthView> {
    let gt = seq
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::input("sequence carries no ground truth"))?;
    let per_frame = observations(seq, &gt.masks, config)?;
    let mut points: BTreeMap<u8, Vec<_>> = BTreeMap::new();
    for frame in per_frame {
        for obs in frame {
            points.entry(obs.local_id).or_default().extend(obs.cloud.points);
        }
    }
    let objects = gt
        .instance_to_epc
        .keys()
        .filter_map(|id| {
            points.remove(id).map(|p| {
                (
                    *id,
                    PointCloud::new(p, ReferenceFrame::World).voxel_downsample(config.voxel),
                )
            })
        })
        .collect();
    Ok(GroundTruthView {
        objects,
        epcs: gt.instance_to_epc.clone(),
        labels: gt.labeled_masks(),
    })
}

/// A perfect prediction built from ground truth: one instance per object,
/// every object matched to its own tag.
pub fn oracle_annotation(gt: &GroundTruthView) -> Annotation {
    let instances: Vec<_> = gt
        .objects
        .iter()
        .map(|(id, cloud)| RegisteredInstance {
            id: u32::from(*id),
            cloud: cloud.clone(),
            frames_seen: gt.labels.iter().filter(|f| f.pixels.as_slice().contains(id)).count(),
            epc: gt.epcs.get(id).cloned(),
        })
        .collect();
    let pairs = instances
        .iter()
        .filter_map(|i| {
            i.epc.as_ref().map(|e| MatchedPair {
                instance: i.id,
                epc: e.clone(),
                score: 0.0,
            })
        })
        .collect();
    Annotation {
        scene: SceneMap { instances },
        assignment: Assignment {
            pairs,
            unmatched_instances: Vec::new(),
            unmatched_tags: Vec::new(),
        },
        labels: gt.labels.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: usize,
    pub evaluated_frames: usize,
    pub instance_recall: f64,
    pub matching_precision: f64,
    pub frame: FrameMetrics,
}

pub fn evaluate(pred: &Annotation, gt: &GroundTruthView, config: &PipelineConfig) -> Result<EvaluationReport> {
    config.validate()?;
    if pred.labels.len() != gt.labels.len() {
        return Err(Error::input(format!(
            "prediction has {} frames but ground truth has {}",
            pred.labels.len(),
            gt.labels.len()
        )));
    }
    let pairs = correspondence(&pred.scene, &gt.objects, config.chamfer_threshold)?;
    let instance_recall = if gt.epcs.is_empty() {
        1.0
    } else {
        pairs.len() as f64 / gt.epcs.len() as f64
    };
    let frame = mean_frame_metrics(
        &pred.labels,
        &gt.labels,
        config.sample_stride,
        config.boundary_tol_px,
        &config.recall_taus,
    )?;
    Ok(EvaluationReport {
        frames: gt.labels.len(),
        evaluated_frames: gt.labels.len().div_ceil(config.sample_stride),
        instance_recall,
        matching_precision: matching_precision(
            &pred.assignment,
            &nearest_objects(&pred.scene, &gt.objects, config.chamfer_threshold)?,
            &gt.epcs,
        ),
        frame,
    })
}

/// Differential profiles and weights as CSV: a `t` column, `w`, one
/// `instance_<id>` column per instance and one `tag_<epc>` column per tag.
/// Absent samples are empty cells.
pub fn profiles_csv(m: &MatchResult) -> String {
    let mut out = String::from("t,w");
    for id in &m.instance_ids {
        let _ = write!(out, ",instance_{id}");
    }
    for epc in &m.tag_epcs {
        let _ = write!(out, ",tag_{epc}");
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in 0..m.weights.len() {
        let _ = write!(out, "{t},{}", m.weights.w[t]);
        for p in m.instance_profiles.iter().chain(&m.tag_profiles) {
            let _ = write!(out, ",{}", cell(p.deltas[t]));
        }
        out.push('\n');
    }
    out
}

/// Scores of one annotation run, flattened for ensemble averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub instance_recall: f64,
    pub matching_precision: f64,
    pub mask_f: f64,
    pub boundary_f: f64,
    pub recall_at: BTreeMap<String, f64>,
}

impl From<&EvaluationReport> for RunMetrics {
    fn from(r: &EvaluationReport) -> Self {
        RunMetrics {
            instance_recall: r.instance_recall,
            matching_precision: r.matching_precision,
            mask_f: r.frame.mask_f,
            boundary_f: r.frame.boundary_f,
            recall_at: r.frame.recall_at.clone(),
        }
    }
}

impl RunMetrics {
    fn combine(items: &[RunMetrics], f: impl Fn(f64, f64) -> f64, other: Option<&[RunMetrics]>) -> RunMetrics {
        let n = items.len() as f64;
        let pick = |g: &dyn Fn(&RunMetrics) -> f64| -> f64 {
            match other {
                Some(o) => items.iter().zip(o).map(|(a, b)| f(g(a), g(b))).sum::<f64>() / n,
                None => items.iter().map(g).sum::<f64>() / n,
            }
        };
        let keys: Vec<String> = items[0].recall_at.keys().cloned().collect();
        RunMetrics {
            instance_recall: pick(&|m| m.instance_recall),
            matching_precision: pick(&|m| m.matching_precision),
            mask_f: pick(&|m| m.mask_f),
            boundary_f: pick(&|m| m.boundary_f),
            recall_at: keys
                .into_iter()
                .map(|k| {
                    let v = pick(&|m| m.recall_at.get(&k).copied().unwrap_or(0.0));
                    (k, v)
                })
                .collect(),
        }
    }

    pub fn mean(items: &[RunMetrics]) -> RunMetrics {
        Self::combine(items, |a, _| a, None)
    }

    /// Mean of the per-run differences `a - b`.
    pub fn paired_difference(a: &[RunMetrics], b: &[RunMetrics]) -> RunMetrics {
        Self::combine(a, |x, y| x - y, Some(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub with_weighting: RunMetrics,
    pub without_weighting: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub name: String,
    pub runs: usize,
    pub with_weighting: RunMetrics,
    pub without_weighting: RunMetrics,
    /// Mean over runs of (with - without).
    pub difference: RunMetrics,
    pub per_run: Vec<AblationRun>,
}

/// Simulates, annotates (with and without the weighting, sharing one
/// registration) and evaluates one seeded run.
pub fn ablation_run(sim: &SimulationConfig, config: &PipelineConfig) -> Result<AblationRun> {
    let inputs = sim.resolve()?;
    let seq = simulate(&inputs.scene, &inputs.trajectory, &inputs.noise, &inputs.rig)?;
    let prepared = prepare(&seq, config)?;
    let gt = ground_truth_view(&seq, config)?;
    let score = |w: bool| -> Result<RunMetrics> {
        let (ann, _) = finish(&seq, &prepared, config, w)?;
        Ok(RunMetrics::from(&evaluate(&ann, &gt, config)?))
    };
    Ok(AblationRun {
        seed: sim.seed,
        with_weighting: score(true)?,
        without_weighting: score(false)?,
    })
}

pub fn ablate(suite: &SuiteSpec) -> Result<AblationReport> {
    if suite.runs < 2 {
        return Err(Error::input(format!(
            "an ablation needs at least 2 runs, got {}",
            suite.runs
        )));
    }
    suite.pipeline.validate()?;
    let per_run = (0..suite.runs)
        .map(|i| ablation_run(&suite.run_config(i), &suite.pipeline))
        .collect::<Result<Vec<_>>>()?;
    let with: Vec<_> = per_run.iter().map(|r| r.with_weighting.clone()).collect();
    let without: Vec<_> = per_run.iter().map(|r| r.without_weighting.clone()).collect();
    Ok(AblationReport {
        name: suite.name.clone(),
        runs: suite.runs,
        with_weighting: RunMetrics::mean(&with),
        without_weighting: RunMetrics::mean(&without),
        difference: RunMetrics::paired_difference(&with, &without),
        per_run,
    })
}
