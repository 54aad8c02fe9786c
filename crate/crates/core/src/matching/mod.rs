//! Tag-to-instance matching on differential spatial profiles.

mod hungarian;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use hungarian::{hungarian, IndexAssignment};

use crate::error::{Error, Result};
use crate::geometry::{Pose, RigidTransform};
use crate::profiles::{
    diff, instance_profile, tag_profile, weighting, DifferentialProfile, WeightProfile, DEFAULT_MAX_GAP, DEFAULT_SIGMA,
};
use crate::registration::SceneMap;
use crate::rf::{RfParams, TagTrack};

/// Scaling factors equal to zero (a perfect match) are raised to this floor, meters.
pub const SCALE_FLOOR: f64 = 1e-9;

/// How the reward scaling factor `F` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FPolicy {
    /// Largest co-present deviation of the pair being scored.
    PerPair,
    /// Largest co-present deviation over every pair.
    Global,
    /// Largest deviation over every pair at the sample being scored, so each
    /// sample contributes on the same scale.
    #[default]
    PerInstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub sigma: f64,
    pub f_policy: FPolicy,
    pub max_gap: usize,
    /// When false every sample gets weight 1.
    pub use_weighting: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            sigma: DEFAULT_SIGMA,
            f_policy: FPolicy::PerInstant,
            max_gap: DEFAULT_MAX_GAP,
            use_weighting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub instance: u32,
    pub epc: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_instances: Vec<u32>,
    pub unmatched_tags: Vec<String>,
}

impl Assignment {
    pub fn epc_of(&self, instance: u32) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.instance == instance)
            .map(|p| p.epc.as_str())
    }

    /// Labels matched instances with their EPC and clears every other label.
    pub fn apply(&self, scene: &mut SceneMap) {
        for inst in &mut scene.instances {
            inst.epc = self.epc_of(inst.id).map(str::to_owned);
        }
    }
}

fn co_present<'a>(
    dx: &'a DifferentialProfile,
    dy: &'a DifferentialProfile,
) -> impl Iterator<Item = (usize, f64, f64)> + 'a {
    dx.deltas
        .iter()
        .zip(&dy.deltas)
        .enumerate()
        .filter_map(|(t, (a, b))| Some((t, (*a)?, (*b)?)))
}

/// Similarity reward: `Σ w(t)·(1 − min(1, |Δx − Δy| / f))` over samples where
/// both profiles are present.
pub fn reward(dx: &DifferentialProfile, dy: &DifferentialProfile, w: &WeightProfile, f: f64) -> Result<f64> {
    check_lengths(dx, dy, w)?;
    if !(f > 0.0) {
        return Err(Error::input("scaling factor must be positive"));
    }
    Ok(scaled_reward(dx, dy, w, |_| f))
}

fn check_lengths(dx: &DifferentialProfile, dy: &DifferentialProfile, w: &WeightProfile) -> Result<()> {
    if dx.len() != dy.len() || dx.len() != w.len() {
        return Err(Error::input(format!(
            "profile lengths differ: instance {}, tag {}, weights {}",
            dx.len(),
            dy.len(),
            w.len()
        )));
    }
    Ok(())
}

fn scaled_reward(
    dx: &DifferentialProfile,
    dy: &DifferentialProfile,
    w: &WeightProfile,
    f: impl Fn(usize) -> f64,
) -> f64 {
    co_present(dx, dy)
        .map(|(t, a, b)| w.w[t] * (1.0 - ((a - b).abs() / f(t)).min(1.0)))
        .sum()
}

/// Per-sample largest `|Δx − Δy|` over all pairs, floored at [`SCALE_FLOOR`].
fn instant_scales(instances: &[DifferentialProfile], tags: &[DifferentialProfile], len: usize) -> Vec<f64> {
    let mut scales = vec![SCALE_FLOOR; len];
    for dx in instances {
        for dy in tags {
            for (t, a, b) in co_present(dx, dy) {
                scales[t] = scales[t].max((a - b).abs());
            }
        }
    }
    scales
}

/// Largest co-present `|Δx − Δy|` for one pair, floored at [`SCALE_FLOOR`].
/// `None` when the profiles never overlap.
pub fn scaling_factor(dx: &DifferentialProfile, dy: &DifferentialProfile) -> Option<f64> {
    co_present(dx, dy)
        .map(|(_, a, b)| (a - b).abs())
        .reduce(f64::max)
        .map(|m| m.max(SCALE_FLOOR))
}

/// Reward matrix with one row per instance profile and one column per tag profile.
pub fn reward_matrix(
    instances: &[DifferentialProfile],
    tags: &[DifferentialProfile],
    w: &WeightProfile,
    policy: FPolicy,
) -> Result<Vec<Vec<f64>>> {
    for dx in instances {
        for dy in tags {
            check_lengths(dx, dy, w)?;
        }
    }
    let global = instances
        .iter()
        .flat_map(|dx| tags.iter().filter_map(move |dy| scaling_factor(dx, dy)))
        .reduce(f64::max);
    let instant = match policy {
        FPolicy::PerInstant => instant_scales(instances, tags, w.len()),
        _ => Vec::new(),
    };
    Ok(instances
        .iter()
        .map(|dx| {
            tags.iter()
                .map(|dy| match (policy, scaling_factor(dx, dy)) {
                    (_, None) => 0.0,
                    (FPolicy::PerPair, Some(f)) => scaled_reward(dx, dy, w, |_| f),
                    (FPolicy::Global, Some(_)) => scaled_reward(dx, dy, w, |_| global.unwrap_or(SCALE_FLOOR)),
                    (FPolicy::PerInstant, Some(_)) => scaled_reward(dx, dy, w, |t| instant[t]),
                })
                .collect()
        })
        .collect())
}

/// Everything `match_instances` computed, for inspection and debugging dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignment: Assignment,
    pub instance_ids: Vec<u32>,
    pub instance_profiles: Vec<DifferentialProfile>,
    pub tag_epcs: Vec<String>,
    pub tag_profiles: Vec<DifferentialProfile>,
    pub weights: WeightProfile,
    pub rewards: Vec<Vec<f64>>,
}

/// Profiles every instance and tag, weights, scores and solves the assignment.
///
/// Tags with fewer than two reads are left out of the solve and reported unmatched.
pub fn match_instances(
    scene: &SceneMap,
    tags: &[TagTrack],
    poses: &[Pose],
    offset: &RigidTransform,
    params: &RfParams,
    config: &MatchConfig,
) -> Result<MatchResult> {
    if scene.instances.is_empty() {
        return Err(Error::input("no registered instances to match"));
    }
    let mut instance_profiles = Vec::with_capacity(scene.instances.len());
    for inst in &scene.instances {
        instance_profiles.push(diff(&instance_profile(inst, poses, offset)?)?);
    }

    let mut tag_epcs = Vec::new();
    let mut tag_profiles = Vec::new();
    let mut skipped = Vec::new();
    for track in tags {
        if track.len() != poses.len() {
            return Err(Error::input(format!(
                "tag {} has {} samples but there are {} poses",
                track.epc,
                track.len(),
                poses.len()
            )));
        }
        if track.present_count() < 2 {
            skipped.push(track.epc.clone());
            continue;
        }
        tag_epcs.push(track.epc.clone());
        tag_profiles.push(tag_profile(track, params, config.max_gap)?);
    }

    let weights = if config.use_weighting {
        weighting(&instance_profiles, config.sigma)?
    } else {
        WeightProfile::uniform(instance_profiles[0].len())
    };
    let rewards = reward_matrix(&instance_profiles, &tag_profiles, &weights, config.f_policy)?;
    let solved = hungarian(&rewards)?;

    let instance_ids: Vec<u32> = scene.instances.iter().map(|i| i.id).collect();
    let mut unmatched_tags: Vec<String> = solved.unmatched_cols.iter().map(|&j| tag_epcs[j].clone()).collect();
    unmatched_tags.extend(skipped);
    let assignment = Assignment {
        pairs: solved
            .pairs
            .iter()
            .map(|&(i, j, score)| MatchedPair {
                instance: instance_ids[i],
                epc: tag_epcs[j].clone(),
                score,
            })
            .collect(),
        unmatched_instances: solved.unmatched_rows.iter().map(|&i| instance_ids[i]).collect(),
        unmatched_tags,
    };
    Ok(MatchResult {
        assignment,
        instance_ids,
        instance_profiles,
        tag_epcs,
        tag_profiles,
        weights,
        rewards,
    })
}

/// Fraction of assigned pairs that are correct, given which instance each
/// ground-truth object was registered as and each object's EPC. `0/0 = 1`.
pub fn matching_precision(
    assignment: &Assignment,
    object_to_instance: &[(u8, u32)],
    object_epcs: &BTreeMap<u8, String>,
) -> f64 {
    if assignment.pairs.is_empty() {
        return 1.0;
    }
    let correct = assignment
        .pairs
        .iter()
        .filter(|p| {
            object_to_instance
                .iter()
                .any(|(obj, inst)| *inst == p.instance && object_epcs.get(obj) == Some(&p.epc))
        })
        .count();
    correct as f64 / assignment.pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dp(v: &[f64]) -> DifferentialProfile {
        DifferentialProfile {
            deltas: v.iter().map(|&x| Some(x)).collect(),
        }
    }

    fn dpo(v: &[Option<f64>]) -> DifferentialProfile {
        DifferentialProfile { deltas: v.to_vec() }
    }

    #[test]
    fn reward_examples() {
        let x = dp(&[0.01, -0.02, 0.03, 0.0]);
        let w = WeightProfile::uniform(4);
        assert_eq!(reward(&x, &x, &w, 0.5).unwrap(), 4.0);

        let absent = dpo(&[None; 4]);
        assert_eq!(reward(&x, &absent, &w, 0.5).unwrap(), 0.0);

        let r = reward(
            &dp(&[0.01, -0.02]),
            &dp(&[0.02, -0.02]),
            &WeightProfile::uniform(2),
            0.01,
        )
        .unwrap();
        assert_eq!(r, 1.0);

        assert!(reward(&x, &dp(&[0.0]), &w, 0.1).is_err());
        assert!(reward(&x, &x, &w, 0.0).is_err());
    }

    #[test]
    fn scaling_factor_examples() {
        let x = dp(&[0.01, 0.02]);
        assert_eq!(scaling_factor(&x, &x), Some(SCALE_FLOOR));
        let w = WeightProfile::uniform(2);
        assert_eq!(reward(&x, &x, &w, scaling_factor(&x, &x).unwrap()).unwrap(), 2.0);

        assert!((scaling_factor(&dp(&[0.01]), &dp(&[0.03])).unwrap() - 0.02).abs() < 1e-15);

        let a = dpo(&[Some(0.0), Some(0.5), Some(0.1), None]);
        let b = dpo(&[Some(0.2), None, Some(0.0), Some(9.0)]);
        let masked_max = a
            .deltas
            .iter()
            .zip(&b.deltas)
            .filter_map(|(p, q)| Some((p.as_ref()? - q.as_ref()?).abs()))
            .fold(0.0, f64::max);
        assert_eq!(scaling_factor(&a, &b), Some(masked_max));
        assert_eq!(scaling_factor(&a, &dpo(&[None; 4])), None);
    }

    #[test]
    fn global_policy_uses_largest_pair() {
        let xs = vec![dp(&[0.0, 0.0]), dp(&[0.1, 0.0])];
        let ys = vec![dp(&[0.0, 0.0])];
        let w = WeightProfile::uniform(2);
        let per = reward_matrix(&xs, &ys, &w, FPolicy::PerPair).unwrap();
        let glob = reward_matrix(&xs, &ys, &w, FPolicy::Global).unwrap();
        assert_eq!(per, vec![vec![2.0], vec![1.0]]);
        assert_eq!(glob, vec![vec![2.0], vec![1.0]]);
        let ys = vec![dp(&[0.0, 0.0]), dp(&[0.05, 0.0])];
        let glob = reward_matrix(&xs, &ys, &w, FPolicy::Global).unwrap();
        // Global F = 0.1: x1 vs y2 deviates 0.05 at t=0.
        assert!((glob[1][1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn per_instant_policy_scales_each_sample() {
        let xs = vec![dp(&[0.0, 0.0]), dp(&[0.1, 0.01])];
        let ys = vec![dp(&[0.0, 0.0])];
        let w = WeightProfile::uniform(2);
        let m = reward_matrix(&xs, &ys, &w, FPolicy::PerInstant).unwrap();
        // Each sample's worst pair scores 0 there, whatever its magnitude.
        assert_eq!(m, vec![vec![2.0], vec![0.0]]);
        let glob = reward_matrix(&xs, &ys, &w, FPolicy::Global).unwrap();
        assert!((glob[1][0] - 0.9).abs() < 1e-12);

        let ys = vec![dp(&[0.0, 0.0]), dp(&[0.05, 0.01])];
        let m = reward_matrix(&xs, &ys, &w, FPolicy::PerInstant).unwrap();
        assert!((m[0][1] - 0.5).abs() < 1e-12);
        assert!((m[1][1] - 1.5).abs() < 1e-12);
        assert_eq!(FPolicy::default(), FPolicy::PerInstant);
    }

    #[test]
    fn precision_examples() {
        let epcs: BTreeMap<u8, String> = (1..=5).map(|i| (i, format!("E{i}"))).collect();
        let corr: Vec<(u8, u32)> = (1..=5).map(|i| (i, u32::from(i) + 10)).collect();
        let mut a = Assignment {
            pairs: (1..=5u8)
                .map(|i| MatchedPair {
                    instance: u32::from(i) + 10,
                    epc: format!("E{i}"),
                    score: 1.0,
                })
                .collect(),
            ..Default::default()
        };
        assert_eq!(matching_precision(&a, &corr, &epcs), 1.0);
        a.pairs[4].epc = "E9".into();
        assert_eq!(matching_precision(&a, &corr, &epcs), 0.8);
        assert_eq!(matching_precision(&Assignment::default(), &corr, &epcs), 1.0);
    }

    proptest! {
        #[test]
        fn reward_bounded_by_weight_total(
            x in prop::collection::vec(-0.05f64..0.05, 20),
            y in prop::collection::vec(prop::option::of(-0.05f64..0.05), 20),
            w in prop::collection::vec(0u8..2, 20),
        ) {
            let dx = dp(&x);
            let dy = dpo(&y);
            let wp = WeightProfile { w: w.iter().map(|&b| f64::from(b)).collect(), sigma: 0.1 };
            if let Some(f) = scaling_factor(&dx, &dy) {
                let r = reward(&dx, &dy, &wp, f).unwrap();
                prop_assert!(r >= 0.0 && r <= wp.total() + 1e-12);
            }
        }

        #[test]
        fn per_pair_reward_is_scale_free(
            x in prop::collection::vec(-0.05f64..0.05, 15),
            y in prop::collection::vec(-0.05f64..0.05, 15),
            k in 0.1f64..10.0,
        ) {
            let w = WeightProfile::uniform(15);
            let r0 = reward_matrix(&[dp(&x)], &[dp(&y)], &w, FPolicy::PerPair).unwrap()[0][0];
            let xs: Vec<f64> = x.iter().map(|v| v * k).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
            let r1 = reward_matrix(&[dp(&xs)], &[dp(&ys)], &w, FPolicy::PerPair).unwrap()[0][0];
            prop_assert!((r0 - r1).abs() < 1e-9);
        }

        #[test]
        fn assignment_invariant_under_positive_scaling(
            m in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 4),
            k in 0.01f64..100.0,
        ) {
            let a = hungarian(&m).unwrap();
            let scaled: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
            let b = hungarian(&scaled).unwrap();
            let pa: Vec<_> = a.pairs.iter().map(|p| (p.0, p.1)).collect();
            let pb: Vec<_> = b.pairs.iter().map(|p| (p.0, p.1)).collect();
            prop_assert_eq!(pa, pb);
        }

        #[test]
        fn assignment_equivariant_under_permutation(
            m in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 5), 5),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rp: Vec<usize> = (0..5).collect();
            let mut cp: Vec<usize> = (0..5).collect();
            rp.shuffle(&mut rng);
            cp.shuffle(&mut rng);
            let permuted: Vec<Vec<f64>> = rp.iter().map(|&i| cp.iter().map(|&j| m[i][j]).collect()).collect();
            let a = hungarian(&m).unwrap();
            let b = hungarian(&permuted).unwrap();
            let mut mapped: Vec<(usize, usize)> = b.pairs.iter().map(|&(i, j, _)| (rp[i], cp[j])).collect();
            mapped.sort();
            let orig: Vec<(usize, usize)> = a.pairs.iter().map(|p| (p.0, p.1)).collect();
            prop_assert_eq!(orig, mapped);
        }
    }
}
