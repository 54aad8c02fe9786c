//! Camera model, rigid transforms, point clouds and Chamfer distance.

mod image;
mod kdtree;

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use image::{DepthFrame, Grid, InstanceMaskFrame, LabeledMaskFrame};
pub(crate) use kdtree::KdTree;

/// Maximum deviation of a quaternion norm from 1 accepted by [`Pose::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::input("focal lengths must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::input("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// A RealSense-D435-like 640x480 depth camera.
    pub fn default_vga() -> Self {
        CameraIntrinsics {
            fx: 615.0,
            fy: 615.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z` meters.
    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Pixel coordinates and depth of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }
}

/// Rotation plus translation, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    /// Builds from a `(w, x, y, z)` quaternion, which must be unit within `tolerance`.
    /// The components are stored as given (no renormalisation).
    pub fn from_wxyz(q: [f64; 4], translation: [f64; 3], tolerance: f64) -> Result<Self> {
        Ok(RigidTransform {
            rotation: unit_quaternion(q, tolerance)?,
            translation: Vector3::from(translation),
        })
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

pub(crate) fn unit_quaternion(q: [f64; 4], tolerance: f64) -> Result<UnitQuaternion<f64>> {
    let [w, x, y, z] = q;
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > tolerance {
        return Err(Error::input(format!(
            "quaternion norm {norm} deviates from 1 by more than {tolerance}"
        )));
    }
    Ok(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)))
}

/// Camera-to-world transform at a capture instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub transform: RigidTransform,
    pub timestamp: f64,
}

impl Pose {
    pub fn new(q_wxyz: [f64; 4], translation: [f64; 3], timestamp: f64) -> Result<Self> {
        Ok(Pose {
            transform: RigidTransform::from_wxyz(q_wxyz, translation, UNIT_NORM_TOLERANCE)?,
            timestamp,
        })
    }

    pub fn from_transform(transform: RigidTransform, timestamp: f64) -> Self {
        Pose { transform, timestamp }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.transform.translation
    }
}

/// Antenna pose in the world: the camera pose composed with the fixed
/// antenna-to-camera offset.
pub fn apply_offset(pose: &Pose, offset: &RigidTransform) -> Pose {
    Pose {
        transform: pose.transform.compose(offset),
        timestamp: pose.timestamp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceFrame {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: ReferenceFrame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: ReferenceFrame) -> Self {
        PointCloud { points, frame }
    }

    pub fn empty(frame: ReferenceFrame) -> Self {
        PointCloud {
            points: Vec::new(),
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }

    /// Keeps the first point that falls into each cubic voxel, preserving
    /// input order. Output points are a subset of the input.
    pub fn voxel_downsample(&self, voxel: f64) -> PointCloud {
        let mut seen = HashSet::with_capacity(self.points.len());
        let points = self
            .points
            .iter()
            .filter(|p| {
                let key = (
                    (p.x / voxel).floor() as i64,
                    (p.y / voxel).floor() as i64,
                    (p.z / voxel).floor() as i64,
                );
                seen.insert(key)
            })
            .copied()
            .collect();
        PointCloud {
            points,
            frame: self.frame,
        }
    }
}

/// Splits a depth frame into per-instance camera-frame point clouds.
///
/// Pixels with zero depth, depth beyond `cull_m`, or background mask id are
/// skipped. Instances whose pixels all lack depth produce no entry.
pub fn backproject(
    depth: &DepthFrame,
    mask: &InstanceMaskFrame,
    k: &CameraIntrinsics,
    cull_m: f64,
) -> Result<BTreeMap<u8, PointCloud>> {
    if !depth.pixels.same_shape(&mask.pixels) {
        return Err(Error::input(format!(
            "depth is {}x{} but mask is {}x{}",
            depth.pixels.width(),
            depth.pixels.height(),
            mask.pixels.width(),
            mask.pixels.height()
        )));
    }
    if depth.pixels.width() != k.width || depth.pixels.height() != k.height {
        return Err(Error::input("frame size does not match camera intrinsics"));
    }
    if depth.timestamp != mask.timestamp {
        return Err(Error::input(format!(
            "depth timestamp {} differs from mask timestamp {}",
            depth.timestamp, mask.timestamp
        )));
    }
    if !(cull_m > 0.0) {
        return Err(Error::input("cull distance must be positive"));
    }
    let mut clouds: BTreeMap<u8, PointCloud> = BTreeMap::new();
    for ((u, v, d), &id) in depth.pixels.pixels().zip(mask.pixels.as_slice()) {
        if d == 0 || id == 0 {
            continue;
        }
        let z = f64::from(d) / 1000.0;
        if z > cull_m {
            continue;
        }
        clouds
            .entry(id)
            .or_insert_with(|| PointCloud::empty(ReferenceFrame::Camera))
            .points
            .push(k.backproject_pixel(u as f64, v as f64, z));
    }
    Ok(clouds)
}

/// Maps a camera-frame cloud into the world frame with a camera-to-world pose.
pub fn to_world(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud> {
    if cloud.frame != ReferenceFrame::Camera {
        return Err(Error::input("cloud is already in the world frame"));
    }
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| pose.transform.apply(p)).collect(),
        frame: ReferenceFrame::World,
    })
}

/// Sum of nearest distances from `from` into `to`, or `None` as soon as it
/// exceeds `cap`.
fn capped_nearest_sum(from: &[Vector3<f64>], to: &KdTree, cap: f64) -> Option<f64> {
    let mut sum = 0.0;
    for p in from {
        sum += to.nearest_squared(p).sqrt();
        if sum > cap {
            return None;
        }
    }
    Some(sum)
}

/// Chamfer distance between two indexed clouds, or `None` when it is
/// certainly at least `limit`. With an infinite limit it always returns.
pub(crate) fn chamfer_indexed(a: &KdTree, b: &KdTree, limit: f64) -> Option<f64> {
    let (na, nb) = (a.points().len() as f64, b.points().len() as f64);
    let sa = capped_nearest_sum(a.points(), b, 2.0 * limit * na)?;
    let da = sa / na;
    let sb = capped_nearest_sum(b.points(), a, (2.0 * limit - da) * nb)?;
    let d = 0.5 * (da + sb / nb);
    (d < limit || limit.is_infinite()).then_some(d)
}

/// Symmetric Chamfer distance: the average of the two directed mean
/// nearest-neighbour distances, in meters.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("chamfer distance of an empty cloud"));
    }
    if a.frame != b.frame {
        return Err(Error::input("chamfer distance across reference frames"));
    }
    let d = chamfer_indexed(&KdTree::build(&a.points), &KdTree::build(&b.points), f64::INFINITY);
    Ok(d.expect("an infinite limit never cuts off"))
}

/// Lower bound on the Chamfer distance: the gap between axis-aligned boxes.
pub(crate) fn bounds_gap(a: &(Vector3<f64>, Vector3<f64>), b: &(Vector3<f64>, Vector3<f64>)) -> f64 {
    let mut sq = 0.0;
    for i in 0..3 {
        let gap = (b.0[i] - a.1[i]).max(a.0[i] - b.1[i]).max(0.0);
        sq += gap * gap;
    }
    sq.sqrt()
}
