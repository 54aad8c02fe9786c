//! Synthetic capture rig: ray-cast depth and instance masks, camera poses,
//! RFID phase readings and ground truth for tabletop scenes.

mod corrupt;
mod scene;
mod trajectory;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use corrupt::{adjacent_pairs, corrupt_masks, corrupt_masks_with};
pub use scene::{generate_scene, Arrangement, SceneObject, SceneSpec, Shape, CONTACT_TOLERANCE, TABLE_HALF_WIDTH};
pub use trajectory::{camera_poses, look_at, Path, TrajectorySpec};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_offset, CameraIntrinsics, DepthFrame, Grid, InstanceMaskFrame, LabeledMaskFrame, Pose, RigidTransform,
};
use crate::rf::{phase_from_distance, RfParams, TagTrack};
use crate::seed::rng_for;
use scene::SceneCaster;

const STREAM_DEPTH: u64 = 0xD0;
const STREAM_RF: u64 = 0xAF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Per-pixel Gaussian depth noise, millimeters.
    pub depth_sigma: f64,
    /// Per-pixel probability of a missing depth value.
    pub dropout_prob: f64,
    /// Per-read Gaussian phase noise, degrees.
    pub phase_sigma: f64,
    /// Read miss probability for a tag facing the antenna.
    pub miss_prob_base: f64,
    /// Extra miss probability per unit of `1 - cos(angle)` between the tag
    /// normal and the direction to the antenna.
    pub orientation_miss_gain: f64,
    /// Per-sample probability that a multipath episode starts.
    pub multipath_prob: f64,
    /// Spread of the constant phase error held during an episode, degrees.
    pub multipath_phase_sigma: f64,
    pub seg_spurious_prob: f64,
    pub seg_merge_prob: f64,
    pub seg_miss_prob: f64,
    pub boundary_jitter_px: u32,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            depth_sigma: 5.0,
            dropout_prob: 0.02,
            phase_sigma: 5.0,
            miss_prob_base: 0.1,
            orientation_miss_gain: 0.3,
            multipath_prob: 0.02,
            multipath_phase_sigma: 40.0,
            seg_spurious_prob: 0.05,
            seg_merge_prob: 0.3,
            seg_miss_prob: 0.05,
            boundary_jitter_px: 2,
            seed: 0,
        }
    }
}

/// Mean length, in samples, of a multipath episode.
pub const MULTIPATH_MEAN_SAMPLES: f64 = 5.0;

impl NoiseSpec {
    /// Every noise source disabled.
    pub fn zero() -> Self {
        NoiseSpec {
            depth_sigma: 0.0,
            dropout_prob: 0.0,
            phase_sigma: 0.0,
            miss_prob_base: 0.0,
            orientation_miss_gain: 0.0,
            multipath_prob: 0.0,
            multipath_phase_sigma: 0.0,
            seg_spurious_prob: 0.0,
            seg_merge_prob: 0.0,
            seg_miss_prob: 0.0,
            boundary_jitter_px: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("dropout_prob", self.dropout_prob),
            ("miss_prob_base", self.miss_prob_base),
            ("multipath_prob", self.multipath_prob),
            ("seg_spurious_prob", self.seg_spurious_prob),
            ("seg_merge_prob", self.seg_merge_prob),
            ("seg_miss_prob", self.seg_miss_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let nonneg = [
            ("depth_sigma", self.depth_sigma),
            ("phase_sigma", self.phase_sigma),
            ("orientation_miss_gain", self.orientation_miss_gain),
            ("multipath_phase_sigma", self.multipath_phase_sigma),
        ];
        for (name, s) in nonneg {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::input(format!("{name} must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

/// Sensor hardware: depth camera, reader and their mounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub intrinsics: CameraIntrinsics,
    pub rf: RfParams,
    /// Antenna pose in the camera frame.
    pub antenna_offset: RigidTransform,
}

impl Default for Rig {
    fn default() -> Self {
        Rig {
            intrinsics: CameraIntrinsics::default_vga(),
            rf: RfParams::default(),
            antenna_offset: RigidTransform::translation(0.0, -0.08, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub instance_to_epc: BTreeMap<u8, String>,
    /// Uncorrupted masks whose pixel ids are object ids.
    pub masks: Vec<InstanceMaskFrame>,
    /// True antenna-to-tag distance per sample, meters, keyed by EPC.
    pub distances: BTreeMap<String, Vec<f64>>,
}

impl GroundTruth {
    /// Ground-truth masks with object ids resolved to EPCs.
    pub fn labeled_masks(&self) -> Vec<LabeledMaskFrame> {
        self.masks
            .iter()
            .map(|m| {
                let present = m.ids();
                LabeledMaskFrame {
                    timestamp: m.timestamp,
                    pixels: m.pixels.clone(),
                    labels: present
                        .iter()
                        .filter_map(|id| self.instance_to_epc.get(id).map(|e| (*id, e.clone())))
                        .collect(),
                }
            })
            .collect()
    }
}

/// A synchronized capture: one pose, depth frame and mask per sample, and
/// one phase track per inventoried tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: CameraIntrinsics,
    pub rf: RfParams,
    pub antenna_offset: RigidTransform,
    /// Capture rate, Hz.
    pub rate: f64,
    pub poses: Vec<Pose>,
    pub depth: Vec<DepthFrame>,
    pub masks: Vec<InstanceMaskFrame>,
    /// Tracks in inventory order; a tag that was never read has all `None`.
    pub tags: Vec<TagTrack>,
    pub ground_truth: Option<GroundTruth>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Checks that counts, sizes and timestamps agree.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.rf.validate()?;
        let n = self.len();
        if n == 0 {
            return Err(Error::input("sequence has no samples"));
        }
        if self.depth.len() != n || self.masks.len() != n {
            return Err(Error::input(format!(
                "{} poses, {} depth frames, {} masks",
                n,
                self.depth.len(),
                self.masks.len()
            )));
        }
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        for (i, (d, m)) in self.depth.iter().zip(&self.masks).enumerate() {
            if d.pixels.width() != w || d.pixels.height() != h || !d.pixels.same_shape(&m.pixels) {
                return Err(Error::input(format!("frame {i} does not match the {w}x{h} camera")));
            }
        }
        for t in &self.tags {
            if t.len() != n {
                return Err(Error::input(format!(
                    "tag {} has {} samples, expected {n}",
                    t.epc,
                    t.len()
                )));
            }
            t.validate(&self.rf)?;
        }
        if let Some(gt) = &self.ground_truth {
            if gt.masks.len() != n || gt.distances.values().any(|d| d.len() != n) {
                return Err(Error::input("ground truth length differs from the sequence"));
            }
        }
        Ok(())
    }
}

fn render_frame(
    caster: &SceneCaster,
    k: &CameraIntrinsics,
    pose: &Pose,
    noise: &NoiseSpec,
    frame: usize,
) -> (DepthFrame, InstanceMaskFrame) {
    let mut rng = rng_for(noise.seed, STREAM_DEPTH, frame as u64);
    let depth_noise = Normal::new(0.0, noise.depth_sigma).expect("validated sigma");
    let mut depth = Grid::filled(k.width, k.height, 0u16);
    let mut mask = Grid::filled(k.width, k.height, 0u8);
    let origin = pose.position();
    let rot = pose.transform.rotation;
    for v in 0..k.height {
        for u in 0..k.width {
            // z-component 1, so the hit parameter is the depth.
            let dir_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let Some((t, id)) = caster.cast(&origin, &(rot * dir_cam)) else {
                continue;
            };
            mask.set(u, v, id);
            let mut mm = t * 1000.0;
            if noise.depth_sigma > 0.0 {
                mm += depth_noise.sample(&mut rng);
            }
            if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                continue;
            }
            let mm = mm.round();
            if mm >= 1.0 && mm <= f64::from(u16::MAX) {
                depth.set(u, v, mm as u16);
            }
        }
    }
    let timestamp = pose.timestamp;
    (
        DepthFrame {
            timestamp,
            pixels: depth,
        },
        InstanceMaskFrame {
            timestamp,
            pixels: mask,
        },
    )
}

fn read_tag(
    object: &SceneObject,
    antennas: &[Pose],
    rf: &RfParams,
    noise: &NoiseSpec,
    index: usize,
) -> Result<(TagTrack, Vec<f64>)> {
    let mut rng = rng_for(noise.seed, STREAM_RF, index as u64);
    let phase_noise = Normal::new(0.0, noise.phase_sigma).expect("validated sigma");
    let episode_noise = Normal::new(0.0, noise.multipath_phase_sigma).expect("validated sigma");
    let episode_len = Geometric::new(1.0 / MULTIPATH_MEAN_SAMPLES).expect("valid probability");
    let tag = object.tag_world();
    let normal = object.tag_normal_world();

    let mut distances = Vec::with_capacity(antennas.len());
    let mut readings = Vec::with_capacity(antennas.len());
    let mut episode: Option<(u64, f64)> = None;
    for antenna in antennas {
        let to_antenna = antenna.position() - tag;
        let d = to_antenna.norm();
        distances.push(d);

        if episode.is_none() && noise.multipath_prob > 0.0 && rng.random_bool(noise.multipath_prob) {
            let len = 1 + episode_len.sample(&mut rng);
            episode = Some((len, episode_noise.sample(&mut rng)));
        }
        let extra = match &mut episode {
            Some((left, offset)) => {
                let e = *offset;
                *left -= 1;
                if *left == 0 {
                    episode = None;
                }
                e
            }
            None => 0.0,
        };

        let cos_a = if d > 0.0 { normal.dot(&to_antenna) / d } else { 1.0 };
        let p_miss = (noise.miss_prob_base + noise.orientation_miss_gain * (1.0 - cos_a)).clamp(0.0, 1.0);
        let missed = p_miss > 0.0 && rng.random_bool(p_miss);

        let mut phase = phase_from_distance(d, rf)?;
        if noise.phase_sigma > 0.0 || extra != 0.0 {
            let n = if noise.phase_sigma > 0.0 {
                phase_noise.sample(&mut rng)
            } else {
                0.0
            };
            phase = (phase + n + extra).rem_euclid(rf.reader_modulus);
            if phase >= rf.reader_modulus {
                phase = 0.0;
            }
        }
        readings.push((!missed).then_some(phase));
    }
    Ok((TagTrack::new(object.epc.clone(), readings), distances))
}

/// Checks that consecutive antenna positions move less than the largest
/// unambiguous step of the reader.
pub fn check_speed(antennas: &[Pose], rf: &RfParams) -> Result<()> {
    let limit = rf.max_unambiguous_step();
    for (i, w) in antennas.windows(2).enumerate() {
        let displacement = (w[1].position() - w[0].position()).norm();
        if displacement >= limit {
            return Err(Error::SpeedBound {
                sample: i + 1,
                displacement,
                limit,
            });
        }
    }
    Ok(())
}

/// Renders a full sequence with ground truth. Deterministic given the seeds
/// in `traj` and `noise`; frames render in parallel.
pub fn simulate(scene: &SceneSpec, traj: &TrajectorySpec, noise: &NoiseSpec, rig: &Rig) -> Result<Sequence> {
    scene.validate()?;
    noise.validate()?;
    rig.intrinsics.validate()?;
    rig.rf.validate()?;

    let poses = camera_poses(traj, &scene.center())?;
    let antennas: Vec<Pose> = poses.iter().map(|p| apply_offset(p, &rig.antenna_offset)).collect();
    check_speed(&antennas, &rig.rf)?;

    let caster = SceneCaster::new(scene);
    let (depth, true_masks): (Vec<DepthFrame>, Vec<InstanceMaskFrame>) = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| render_frame(&caster, &rig.intrinsics, pose, noise, i))
        .unzip();
    let mergeable = scene.laterally_adjacent_pairs();
    let masks = corrupt_masks_with(&true_masks, noise, noise.seed, Some(&mergeable));

    let mut tags = Vec::with_capacity(scene.objects.len());
    let mut distances = BTreeMap::new();
    for (i, object) in scene.objects.iter().enumerate() {
        let (track, d) = read_tag(object, &antennas, &rig.rf, noise, i)?;
        distances.insert(object.epc.clone(), d);
        tags.push(track);
    }

    Ok(Sequence {
        intrinsics: rig.intrinsics,
        rf: rig.rf,
        antenna_offset: rig.antenna_offset,
        rate: traj.rate,
        poses,
        depth,
        masks,
        tags,
        ground_truth: Some(GroundTruth {
            instance_to_epc: scene.instance_to_epc(),
            masks: true_masks,
            distances,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rf::unwrap;

    fn small_rig() -> Rig {
        Rig {
            intrinsics: CameraIntrinsics::default_vga().scaled(160, 120),
            ..Rig::default()
        }
    }

    fn one_box() -> SceneSpec {
        SceneSpec {
            objects: vec![SceneObject {
                id: 1,
                epc: "E1".into(),
                shape: Shape::Box { size: [0.1, 0.1, 0.1] },
                position: [0.0, 0.0, 0.05],
                orientation: [1.0, 0.0, 0.0, 0.0],
                tag: [0.05, 0.0, 0.0],
            }],
            arrangement: Arrangement::Free,
            table_height: 0.0,
        }
    }

    #[test]
    fn static_noiseless_capture_is_constant() {
        let traj = TrajectorySpec {
            duration: 10.0,
            rate: 1.0,
            path: Path::Static {
                position: [0.6, 0.0, 0.4],
            },
            jitter: 0.0,
            ..TrajectorySpec::default()
        };
        let seq = simulate(&one_box(), &traj, &NoiseSpec::zero(), &small_rig()).unwrap();
        assert_eq!(seq.len(), 10);
        for t in 1..10 {
            assert_eq!(seq.depth[t].pixels, seq.depth[0].pixels);
            assert_eq!(seq.masks[t].pixels, seq.masks[0].pixels);
            assert_eq!(seq.tags[0].readings[t], seq.tags[0].readings[0]);
        }
        assert!(seq.tags[0].readings[0].is_some());
        assert_eq!(seq.masks[0].ids(), vec![1]);
    }

    #[test]
    fn retreat_along_tag_axis_gives_exact_phase_steps() {
        // Antenna at the camera, moving away along +x from a tag at (0.05, 0, 0.05).
        let step = 0.005;
        let points: Vec<[f64; 3]> = vec![[0.4, 0.0, 0.05], [0.4 + 19.0 * step, 0.0, 0.05]];
        let traj = TrajectorySpec {
            duration: 20.0,
            rate: 1.0,
            path: Path::Waypoints { points },
            target: Some([0.0, 0.0, 0.05]),
            jitter: 0.0,
            seed: 0,
        };
        let rig = Rig {
            antenna_offset: RigidTransform::identity(),
            ..small_rig()
        };
        let seq = simulate(&one_box(), &traj, &NoiseSpec::zero(), &rig).unwrap();
        let u = unwrap(&seq.tags[0], &rig.rf).unwrap();
        let expected = 360.0 * 2.0 * step / rig.rf.wavelength;
        for w in u.windows(2) {
            assert!((w[1].phase - w[0].phase - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_phase_matches_true_distance() {
        let scene = generate_scene(Arrangement::Free, 4, 3).unwrap();
        let seq = simulate(&scene, &TrajectorySpec::default(), &NoiseSpec::zero(), &small_rig()).unwrap();
        let gt = seq.ground_truth.as_ref().unwrap();
        for track in &seq.tags {
            for (r, d) in track.readings.iter().zip(&gt.distances[&track.epc]) {
                let expected = phase_from_distance(*d, &seq.rf).unwrap();
                assert!((r.unwrap() - expected).abs() < 1e-9);
            }
        }
        // Corrupted masks equal the truth up to renumbering.
        for (a, b) in gt.masks.iter().zip(&seq.masks) {
            let mut map = BTreeMap::new();
            for (x, y) in a.pixels.as_slice().iter().zip(b.pixels.as_slice()) {
                assert_eq!(*map.entry(*x).or_insert(*y), *y);
            }
            assert_eq!(a.ids().len(), b.ids().len());
        }
    }

    #[test]
    fn certain_miss_empties_every_track() {
        let noise = NoiseSpec {
            miss_prob_base: 1.0,
            ..NoiseSpec::zero()
        };
        let scene = generate_scene(Arrangement::Free, 3, 1).unwrap();
        let seq = simulate(&scene, &TrajectorySpec::default(), &noise, &small_rig()).unwrap();
        assert!(seq.tags.iter().all(|t| t.present_count() == 0));
    }

    #[test]
    fn speed_bound_names_offending_sample() {
        let traj = TrajectorySpec {
            duration: 5.0,
            rate: 1.0,
            path: Path::Waypoints {
                points: vec![[0.5, 0.0, 0.4], [0.5, 0.0, 0.4], [0.5, 0.5, 0.4]],
            },
            jitter: 0.0,
            ..TrajectorySpec::default()
        };
        match simulate(&one_box(), &traj, &NoiseSpec::zero(), &small_rig()) {
            Err(Error::SpeedBound { sample, limit, .. }) => {
                assert_eq!(sample, 3);
                assert!((limit - 0.3263 / 8.0).abs() < 1e-15);
            }
            other => panic!("expected speed bound error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_and_thread_count_independent() {
        let scene = generate_scene(Arrangement::Touching, 4, 2).unwrap();
        let traj = TrajectorySpec::default();
        let noise = NoiseSpec {
            seed: 11,
            ..NoiseSpec::default()
        };
        let a = simulate(&scene, &traj, &noise, &small_rig()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate(&scene, &traj, &noise, &small_rig()).unwrap());
        assert_eq!(a, b);
        let c = simulate(&scene, &traj, &NoiseSpec { seed: 12, ..noise }, &small_rig()).unwrap();
        assert_ne!(a.tags, c.tags);
    }

    #[test]
    fn merges_only_touching_neighbours() {
        let noise = NoiseSpec {
            seg_merge_prob: 1.0,
            ..NoiseSpec::zero()
        };
        let traj = TrajectorySpec::default();
        let free = generate_scene(Arrangement::Free, 4, 5).unwrap();
        let seq = simulate(&free, &traj, &noise, &small_rig()).unwrap();
        let gt = seq.ground_truth.unwrap();
        for (a, b) in gt.masks.iter().zip(&seq.masks) {
            assert_eq!(a.ids().len(), b.ids().len());
        }
    }

    #[test]
    fn two_touching_objects_always_fuse() {
        let mut scene = generate_scene(Arrangement::Touching, 2, 8).unwrap();
        scene.arrangement = Arrangement::Touching;
        let noise = NoiseSpec {
            seg_merge_prob: 1.0,
            ..NoiseSpec::zero()
        };
        let traj = TrajectorySpec::default();
        let seq = simulate(&scene, &traj, &noise, &small_rig()).unwrap();
        let gt = seq.ground_truth.unwrap();
        for (t, m) in gt.masks.iter().zip(&seq.masks) {
            // The oracle: both objects visible and 4-adjacent in the true mask.
            if adjacent_pairs(&t.pixels).contains(&(1, 2)) {
                assert_eq!(m.ids().len(), 1);
            }
        }
        assert!(gt.masks.iter().all(|t| adjacent_pairs(&t.pixels).contains(&(1, 2))));
    }
}
