//! Cross-frame instance registration.
//!
//! Frames are folded in time order. Each per-frame observation is matched to
//! the closest instance candidate by Chamfer distance (if under threshold) and
//! merged into it; otherwise it opens a new candidate. Candidates seen in too
//! few frames are pruned at the end.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounds_gap, chamfer, chamfer_indexed, KdTree, PointCloud, ReferenceFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Maximum Chamfer distance (m) for an observation to match a candidate.
    pub chamfer_threshold: f64,
    /// Candidates seen in fewer than this fraction of frames are discarded.
    pub prune_fraction: f64,
    /// Voxel edge (m) used to bound candidate cloud size.
    pub voxel: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            chamfer_threshold: 0.02,
            prune_fraction: 0.2,
            voxel: 0.005,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chamfer_threshold > 0.0) || !(self.voxel > 0.0) {
            return Err(Error::input("chamfer threshold and voxel size must be positive"));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction <= 1.0) {
            return Err(Error::input("prune fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One segmented instance in one frame, as a world-frame cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Per-frame mask id.
    pub local_id: u8,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCandidate {
    pub cloud: PointCloud,
    pub frames_seen: usize,
    pub first_seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredInstance {
    pub id: u32,
    pub cloud: PointCloud,
    pub frames_seen: usize,
    /// Tag assigned by matching, if any.
    pub epc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneMap {
    pub instances: Vec<RegisteredInstance>,
}

impl SceneMap {
    pub fn get(&self, id: u32) -> Option<&RegisteredInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &RegisteredInstance> {
        self.instances.iter().filter(|i| i.epc.is_some())
    }
}

/// Where each observation ended up.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLink {
    pub frame: usize,
    pub local_id: u8,
    /// Global id of the surviving instance, `None` if its candidate was pruned.
    pub instance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub scene: SceneMap,
    pub links: Vec<ObservationLink>,
}

struct Candidate {
    state: InstanceCandidate,
    bounds: (Vector3<f64>, Vector3<f64>),
    tree: KdTree,
}

/// Registers per-frame observations into a scene map.
pub fn register(frames: &[Vec<Observation>], config: &RegistrationConfig) -> Result<SceneMap> {
    register_with_links(frames, config).map(|r| r.scene)
}

/// [`register`], also reporting the instance each observation was merged into.
pub fn register_with_links(frames: &[Vec<Observation>], config: &RegistrationConfig) -> Result<Registration> {
    if frames.is_empty() {
        return Err(Error::input("registration needs at least one frame"));
    }
    config.validate()?;

    let mut candidates: Vec<Candidate> = Vec::new();
    // (frame, local id, candidate index)
    let mut raw_links: Vec<(usize, u8, usize)> = Vec::new();

    for (frame_idx, observations) in frames.iter().enumerate() {
        let obs: Vec<(u8, PointCloud)> = observations
            .iter()
            .filter(|o| !o.cloud.is_empty())
            .map(|o| {
                if o.cloud.frame != ReferenceFrame::World {
                    return Err(Error::input("registration expects world-frame clouds"));
                }
                Ok((o.local_id, o.cloud.voxel_downsample(config.voxel)))
            })
            .collect::<Result<_>>()?;

        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for (oi, (_, cloud)) in obs.iter().enumerate() {
            let ob = cloud.bounds().expect("non-empty cloud");
            let tree = KdTree::build(&cloud.points);
            for (ci, cand) in candidates.iter().enumerate() {
                if bounds_gap(&ob, &cand.bounds) >= config.chamfer_threshold {
                    continue;
                }
                if let Some(d) = chamfer_indexed(&tree, &cand.tree, config.chamfer_threshold) {
                    scored.push((d, ci, oi));
                }
            }
        }
        // Ascending distance; ties go to the lowest candidate id.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut obs_target: Vec<Option<usize>> = vec![None; obs.len()];
        let mut cand_taken = vec![false; candidates.len()];
        for &(_, ci, oi) in &scored {
            if obs_target[oi].is_none() && !cand_taken[ci] {
                obs_target[oi] = Some(ci);
                cand_taken[ci] = true;
            }
        }

        for (oi, (local_id, cloud)) in obs.into_iter().enumerate() {
            match obs_target[oi] {
                Some(ci) => {
                    let cand = &mut candidates[ci];
                    let mut merged = std::mem::take(&mut cand.state.cloud.points);
                    merged.extend_from_slice(&cloud.points);
                    cand.state.cloud = PointCloud::new(merged, ReferenceFrame::World).voxel_downsample(config.voxel);
                    cand.bounds = cand.state.cloud.bounds().expect("non-empty cloud");
                    cand.tree = KdTree::build(&cand.state.cloud.points);
                    cand.state.frames_seen += 1;
                    raw_links.push((frame_idx, local_id, ci));
                }
                None => {
                    let bounds = cloud.bounds().expect("non-empty cloud");
                    raw_links.push((frame_idx, local_id, candidates.len()));
                    let tree = KdTree::build(&cloud.points);
                    candidates.push(Candidate {
                        tree,
                        state: InstanceCandidate {
                            cloud,
                            frames_seen: 1,
                            first_seen: frame_idx,
                        },
                        bounds,
                    });
                }
            }
        }
    }

    let min_frames = config.prune_fraction * frames.len() as f64;
    let mut global_ids: Vec<Option<u32>> = Vec::with_capacity(candidates.len());
    let mut instances = Vec::new();
    for cand in candidates {
        if (cand.state.frames_seen as f64) < min_frames {
            global_ids.push(None);
            continue;
        }
        let id = instances.len() as u32 + 1;
        global_ids.push(Some(id));
        instances.push(RegisteredInstance {
            id,
            cloud: cand.state.cloud,
            frames_seen: cand.state.frames_seen,
            epc: None,
        });
    }
    let links = raw_links
        .into_iter()
        .map(|(frame, local_id, ci)| ObservationLink {
            frame,
            local_id,
            instance: global_ids[ci],
        })
        .collect();
    Ok(Registration {
        scene: SceneMap { instances },
        links,
    })
}

/// Pairs each ground-truth object with a registered instance when the match
/// is unambiguous: exactly one instance lies within `threshold` (Chamfer) of
/// the object, and that instance lies within `threshold` of no other object.
///
/// Returns `(object id, instance id)` pairs.
pub fn correspondence(scene: &SceneMap, objects: &[(u8, PointCloud)], threshold: f64) -> Result<Vec<(u8, u32)>> {
    let mut close = vec![vec![false; objects.len()]; scene.instances.len()];
    for (ii, inst) in scene.instances.iter().enumerate() {
        for (oi, (_, cloud)) in objects.iter().enumerate() {
            if inst.cloud.is_empty() || cloud.is_empty() {
                continue;
            }
            close[ii][oi] = chamfer(&inst.cloud, cloud)? < threshold;
        }
    }
    let mut pairs = Vec::new();
    for (oi, (oid, _)) in objects.iter().enumerate() {
        let matching: Vec<usize> = (0..scene.instances.len()).filter(|&ii| close[ii][oi]).collect();
        if let [ii] = matching[..] {
            if close[ii].iter().filter(|&&c| c).count() == 1 {
                pairs.push((*oid, scene.instances[ii].id));
            }
        }
    }
    Ok(pairs)
}

/// Each instance's nearest ground-truth object by Chamfer distance, when
/// that distance is below `threshold`. Several instances may share an object.
pub fn nearest_objects(scene: &SceneMap, objects: &[(u8, PointCloud)], threshold: f64) -> Result<Vec<(u8, u32)>> {
    let mut out = Vec::new();
    for inst in &scene.instances {
        let mut best: Option<(f64, u8)> = None;
        for (oid, cloud) in objects {
            if inst.cloud.is_empty() || cloud.is_empty() {
                continue;
            }
            let d = chamfer(&inst.cloud, cloud)?;
            if d < threshold && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *oid));
            }
        }
        if let Some((_, oid)) = best {
            out.push((oid, inst.id));
        }
    }
    Ok(out)
}

/// Fraction of ground-truth objects registered correctly and unambiguously.
/// An empty object list gives 1.
pub fn recall_of(scene: &SceneMap, objects: &[(u8, PointCloud)], threshold: f64) -> Result<f64> {
    if objects.is_empty() {
        return Ok(1.0);
    }
    Ok(correspondence(scene, objects, threshold)?.len() as f64 / objects.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(center: Vector3<f64>, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    center
                        + Vector3::new(
                            rng.random_range(-0.03..0.03),
                            rng.random_range(-0.03..0.03),
                            rng.random_range(-0.03..0.03),
                        )
                })
                .collect(),
            ReferenceFrame::World,
        )
    }

    fn obs(id: u8, cloud: PointCloud) -> Observation {
        Observation { local_id: id, cloud }
    }

    #[test]
    fn static_object_registers_once() {
        let c = blob(Vector3::zeros(), 300, 1);
        let frames: Vec<_> = (0..50).map(|_| vec![obs(1, c.clone())]).collect();
        let scene = register(&frames, &RegistrationConfig::default()).unwrap();
        assert_eq!(scene.instances.len(), 1);
        assert_eq!(scene.instances[0].frames_seen, 50);
        assert_eq!(scene.instances[0].id, 1);
    }

    #[test]
    fn single_frame_spurious_blob_is_pruned() {
        let a = blob(Vector3::zeros(), 300, 1);
        let b = blob(Vector3::new(0.5, 0.0, 0.0), 300, 2);
        let spur = blob(Vector3::new(0.0, 0.6, 0.0), 20, 3);
        let frames: Vec<_> = (0..200)
            .map(|t| {
                let mut f = vec![obs(1, a.clone()), obs(2, b.clone())];
                if t == 77 {
                    f.push(obs(3, spur.clone()));
                }
                f
            })
            .collect();
        let reg = register_with_links(&frames, &RegistrationConfig::default()).unwrap();
        assert_eq!(reg.scene.instances.len(), 2);
        let spur_link = reg.links.iter().find(|l| l.frame == 77 && l.local_id == 3).unwrap();
        assert_eq!(spur_link.instance, None);
    }

    #[test]
    fn swapped_ids_follow_geometry() {
        let a = blob(Vector3::zeros(), 300, 1);
        let b = blob(Vector3::new(0.5, 0.0, 0.0), 300, 2);
        let frames: Vec<_> = (0..20)
            .map(|t| {
                if t % 2 == 0 {
                    vec![obs(1, a.clone()), obs(2, b.clone())]
                } else {
                    vec![obs(1, b.clone()), obs(2, a.clone())]
                }
            })
            .collect();
        let reg = register_with_links(&frames, &RegistrationConfig::default()).unwrap();
        assert_eq!(reg.scene.instances.len(), 2);
        for l in &reg.links {
            let is_a = (l.frame % 2 == 0) == (l.local_id == 1);
            assert_eq!(l.instance, Some(if is_a { 1 } else { 2 }));
        }
    }

    #[test]
    fn one_update_per_candidate_per_frame() {
        let a = blob(Vector3::zeros(), 300, 1);
        let frames = vec![vec![obs(1, a.clone())], vec![obs(1, a.clone()), obs(2, a.clone())]];
        let cfg = RegistrationConfig {
            prune_fraction: 0.5,
            ..RegistrationConfig::default()
        };
        let reg = register_with_links(&frames, &cfg).unwrap();
        // Both observations are at distance 0; the duplicate opens a new candidate.
        assert_eq!(reg.scene.instances.len(), 2);
        assert_eq!(reg.scene.instances[0].frames_seen, 2);
    }

    #[test]
    fn registered_points_come_from_inputs() {
        let frames: Vec<_> = (0..10)
            .map(|t| vec![obs(1, blob(Vector3::new(0.001 * t as f64, 0.0, 0.0), 200, t))])
            .collect();
        let scene = register(&frames, &RegistrationConfig::default()).unwrap();
        let all: Vec<_> = frames.iter().flat_map(|f| f[0].cloud.points.clone()).collect();
        for inst in &scene.instances {
            assert!(inst.cloud.points.iter().all(|p| all.contains(p)));
        }
    }

    #[test]
    fn register_rejects_bad_input() {
        assert!(register(&[], &RegistrationConfig::default()).is_err());
        let cfg = RegistrationConfig {
            prune_fraction: 0.0,
            ..RegistrationConfig::default()
        };
        assert!(register(&[vec![]], &cfg).is_err());
        let cam = PointCloud::new(vec![Vector3::zeros()], ReferenceFrame::Camera);
        assert!(register(&[vec![obs(1, cam)]], &RegistrationConfig::default()).is_err());
    }

    fn scene_of(clouds: Vec<PointCloud>) -> SceneMap {
        SceneMap {
            instances: clouds
                .into_iter()
                .enumerate()
                .map(|(i, cloud)| RegisteredInstance {
                    id: i as u32 + 1,
                    cloud,
                    frames_seen: 1,
                    epc: None,
                })
                .collect(),
        }
    }

    #[test]
    fn recall_examples() {
        let objs: Vec<(u8, PointCloud)> = (0..4)
            .map(|i| (i as u8 + 1, blob(Vector3::new(0.3 * i as f64, 0.0, 0.0), 200, i)))
            .collect();
        let perfect = scene_of(objs.iter().map(|(_, c)| c.clone()).collect());
        assert_eq!(recall_of(&perfect, &objs, 0.02).unwrap(), 1.0);

        let missing = scene_of(objs[..3].iter().map(|(_, c)| c.clone()).collect());
        assert_eq!(recall_of(&missing, &objs, 0.02).unwrap(), 0.75);

        // Two objects close enough that their union is within threshold of both.
        let near: Vec<(u8, PointCloud)> = vec![
            (1, blob(Vector3::zeros(), 200, 10)),
            (2, blob(Vector3::new(0.02, 0.0, 0.0), 200, 11)),
            (3, blob(Vector3::new(0.6, 0.0, 0.0), 200, 12)),
            (4, blob(Vector3::new(0.9, 0.0, 0.0), 200, 13)),
        ];
        let mut union = near[0].1.clone();
        union.points.extend(near[1].1.points.iter().copied());
        assert!(chamfer(&union, &near[0].1).unwrap() < 0.02);
        assert!(chamfer(&union, &near[1].1).unwrap() < 0.02);
        let merged = scene_of(vec![union, near[2].1.clone(), near[3].1.clone()]);
        assert_eq!(recall_of(&merged, &near, 0.02).unwrap(), 0.5);
        assert_eq!(recall_of(&merged, &[], 0.02).unwrap(), 1.0);
    }
}
