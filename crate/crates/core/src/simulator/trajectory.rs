//! Handheld camera trajectories.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, RigidTransform};
use crate::seed::rng_for;

const STREAM_JITTER: u64 = 0x6A17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Path {
    /// Sweep around the target at roughly constant range, with periodic
    /// pushes toward and away from it and a slow vertical bob.
    ///
    /// With `s` in `[0, 1]` and `c = cycles`:
    /// azimuth `start + sweep * (s - sin(4πcs) / (4πc))`,
    /// horizontal range `radius + radial_amplitude * sin(2πcs)`,
    /// height `height + vertical_amplitude * sin(πcs)`.
    /// The lateral motion pauses exactly when the radial motion is fastest.
    Arc {
        radius: f64,
        height: f64,
        start_deg: f64,
        sweep_deg: f64,
        radial_amplitude: f64,
        #[serde(default)]
        vertical_amplitude: f64,
        cycles: f64,
    },
    /// Piecewise-linear motion through world points at constant parameter speed.
    Waypoints {
        points: Vec<[f64; 3]>,
    },
    Static {
        position: [f64; 3],
    },
}

impl Default for Path {
    fn default() -> Self {
        Path::Arc {
            radius: 0.75,
            height: 0.45,
            start_deg: -50.0,
            sweep_deg: 100.0,
            radial_amplitude: 0.12,
            vertical_amplitude: 0.06,
            cycles: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    /// Seconds. The sample count is `round(duration * rate)`.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
    pub path: Path,
    /// World point the camera looks at; the scene center when absent.
    pub target: Option<[f64; 3]>,
    /// Amplitude (m) of smooth seeded hand tremor added to the position.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            duration: 200.0 / 15.0,
            rate: 15.0,
            path: Path::default(),
            target: None,
            jitter: 0.01,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    pub fn samples(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::input("trajectory rate must be positive"));
        }
        if !(self.duration > 0.0) || self.samples() < 2 {
            return Err(Error::input("trajectory must span at least two samples"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::input("trajectory jitter must be non-negative"));
        }
        match &self.path {
            Path::Arc { radius, cycles, .. } if !(*radius > 0.0 && *cycles > 0.0) => {
                Err(Error::input("arc radius and cycles must be positive"))
            }
            Path::Waypoints { points } if points.is_empty() => Err(Error::input("waypoint path is empty")),
            _ => Ok(()),
        }
    }
}

/// Camera-to-world rotation for a camera at `eye` looking at `target`, with
/// camera x right, y down, z forward and world z up.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let f = target - eye;
    if f.norm() < 1e-9 {
        return Err(Error::input("camera position coincides with its target"));
    }
    let f = f.normalize();
    let mut r = f.cross(&Vector3::z());
    if r.norm() < 1e-9 {
        // Looking straight up or down: any right vector works.
        r = Vector3::x();
    }
    let r = r.normalize();
    let d = f.cross(&r);
    let m = Matrix3::from_columns(&[r, d, f]);
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        m,
    )))
}

fn path_position(path: &Path, target: &Vector3<f64>, s: f64) -> Vector3<f64> {
    match path {
        Path::Arc {
            radius,
            height,
            start_deg,
            sweep_deg,
            radial_amplitude,
            vertical_amplitude,
            cycles,
        } => {
            let k = 2.0 * TAU * cycles;
            let az = (start_deg + sweep_deg * (s - (k * s).sin() / k)).to_radians();
            let r = radius + radial_amplitude * (TAU * cycles * s).sin();
            let z = height + vertical_amplitude * (PI * cycles * s).sin();
            Vector3::new(target.x + r * az.cos(), target.y + r * az.sin(), target.z + z)
        }
        Path::Waypoints { points } => {
            if points.len() == 1 {
                return Vector3::from(points[0]);
            }
            let x = s * (points.len() - 1) as f64;
            let i = (x.floor() as usize).min(points.len() - 2);
            let f = x - i as f64;
            Vector3::from(points[i]) * (1.0 - f) + Vector3::from(points[i + 1]) * f
        }
        Path::Static { position } => Vector3::from(*position),
    }
}

/// Camera poses for every sample, timestamped at `i / rate`.
pub fn camera_poses(spec: &TrajectorySpec, default_target: &Vector3<f64>) -> Result<Vec<Pose>> {
    spec.validate()?;
    let n = spec.samples();
    let target = spec.target.map(Vector3::from).unwrap_or(*default_target);
    let mut rng = rng_for(spec.seed, STREAM_JITTER, 0);
    // Three sinusoids per axis, 1 to 3 cycles over the sequence.
    let tremor: Vec<[(f64, f64); 3]> = (0..3)
        .map(|_| [0; 3].map(|_| (rng.random_range(1.0..3.0), rng.random_range(0.0..TAU))))
        .collect();
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let mut eye = path_position(&spec.path, &target, s);
            if spec.jitter > 0.0 {
                for axis in 0..3 {
                    let wobble: f64 = tremor[axis].iter().map(|(f, ph)| (TAU * f * s + ph).sin()).sum();
                    eye[axis] += spec.jitter * wobble / 3.0;
                }
            }
            let rotation = look_at(&eye, &target)?;
            Ok(Pose::from_transform(
                RigidTransform::new(rotation, eye),
                i as f64 / spec.rate,
            ))
        })
        .collect()
}
