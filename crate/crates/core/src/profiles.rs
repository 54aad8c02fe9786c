//! Spatial profiles: antenna-to-target distance over time, their per-sample
//! differences, and the discriminativeness weighting derived from instances.

use crate::error::{Error, Result};
use crate::geometry::{apply_offset, Pose, RigidTransform};
use crate::registration::RegisteredInstance;
use crate::rf::{phase_delta_to_distance_delta, unwrap, RfParams, TagTrack};

/// Default weighting threshold on normalised cross-instance variance.
pub const DEFAULT_SIGMA: f64 = 0.1;
/// Default longest run (in samples between two present reads) that is bridged.
pub const DEFAULT_MAX_GAP: usize = 3;

/// Antenna-to-target distance per sample, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialProfile {
    pub values: Vec<Option<f64>>,
}

/// Per-sample distance change; entry `t` covers samples `t -> t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialProfile {
    pub deltas: Vec<Option<f64>>,
}

impl DifferentialProfile {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.deltas.iter().filter(|d| d.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub w: Vec<f64>,
    pub sigma: f64,
}

impl WeightProfile {
    /// Every sample weighted 1, i.e. weighting disabled.
    pub fn uniform(len: usize) -> Self {
        WeightProfile {
            w: vec![1.0; len],
            sigma: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Distance from the antenna to the instance's centroid at each pose.
pub fn instance_profile(
    instance: &RegisteredInstance,
    poses: &[Pose],
    offset: &RigidTransform,
) -> Result<SpatialProfile> {
    if poses.is_empty() {
        return Err(Error::input("instance profile needs at least one pose"));
    }
    let center = instance
        .cloud
        .centroid()
        .ok_or_else(|| Error::input(format!("instance {} has an empty cloud", instance.id)))?;
    let values = poses
        .iter()
        .map(|pose| Some((apply_offset(pose, offset).position() - center).norm()))
        .collect();
    Ok(SpatialProfile { values })
}

/// Consecutive differences of a spatial profile.
pub fn diff(profile: &SpatialProfile) -> Result<DifferentialProfile> {
    if profile.values.len() < 2 {
        return Err(Error::input("differencing needs at least two samples"));
    }
    let deltas = profile
        .values
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        })
        .collect();
    Ok(DifferentialProfile { deltas })
}

/// Differential distance profile of a tag from its wrapped phase readings.
///
/// Consecutive present reads `t1 < t2` with `t2 - t1 <= max_gap` spread their
/// unwrapped change evenly over the steps in between; longer gaps leave those
/// steps absent.
pub fn tag_profile(track: &TagTrack, params: &RfParams, max_gap: usize) -> Result<DifferentialProfile> {
    if track.present_count() < 2 {
        return Err(Error::input(format!(
            "tag {} has fewer than two present samples",
            track.epc
        )));
    }
    let unwrapped = unwrap(track, params)?;
    let mut deltas = vec![None; track.len() - 1];
    for pair in unwrapped.windows(2) {
        let span = pair[1].index - pair[0].index;
        if span > max_gap {
            continue;
        }
        let step = phase_delta_to_distance_delta(pair[1].phase - pair[0].phase, params) / span as f64;
        for d in &mut deltas[pair[0].index..pair[1].index] {
            *d = Some(step);
        }
    }
    Ok(DifferentialProfile { deltas })
}

/// Thresholded normalised cross-instance variance of the instance deltas.
///
/// `w(t) = 1` iff `v(t) / max v > sigma`, with `0/0 = 1`.
pub fn weighting(instances: &[DifferentialProfile], sigma: f64) -> Result<WeightProfile> {
    let first = instances
        .first()
        .ok_or_else(|| Error::input("weighting needs at least one instance profile"))?;
    let len = first.len();
    if instances.iter().any(|p| p.len() != len) {
        return Err(Error::input("instance profiles have different lengths"));
    }
    let variance: Vec<f64> = (0..len)
        .map(|t| {
            let vals: Vec<f64> = instances.iter().filter_map(|p| p.deltas[t]).collect();
            if vals.is_empty() {
                return 0.0;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect();
    let max = variance.iter().copied().fold(0.0, f64::max);
    let w = variance
        .iter()
        .map(|&v| {
            let ratio = if max == 0.0 { 1.0 } else { v / max };
            if ratio > sigma {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(WeightProfile { w, sigma })
}
