//! JSON configuration documents for simulation runs and ablation suites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sequence::{parse_json, TransformRecord};
use crate::error::Result;
use crate::geometry::CameraIntrinsics;
use crate::pipeline::PipelineConfig;
use crate::rf::RfParams;
use crate::seed::child_seed;
use crate::simulator::{generate_scene, Arrangement, NoiseSpec, Rig, SceneSpec, TrajectorySpec};

const SEED_SCENE: u64 = 1;
const SEED_TRAJECTORY: u64 = 2;
const SEED_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    /// Generated from the run seed.
    Random {
        arrangement: Arrangement,
        objects: usize,
    },
    Explicit(SceneSpec),
}

fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::default_vga()
}

fn default_offset() -> TransformRecord {
    TransformRecord::from_transform(&Rig::default().antenna_offset)
}

/// A complete simulation run. The top-level `seed` determines the scene (when
/// random), the trajectory tremor and every noise draw; seeds inside
/// `trajectory` and `noise` are replaced by values derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub seed: u64,
    pub scene: SceneSource,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub rf: RfParams,
    #[serde(default = "default_offset")]
    pub antenna_offset: TransformRecord,
}

/// Everything [`crate::simulator::simulate`] needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationInputs {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub rig: Rig,
}

impl SimulationConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path)
    }

    pub fn resolve(&self) -> Result<SimulationInputs> {
        let scene = match &self.scene {
            SceneSource::Random { arrangement, objects } => {
                generate_scene(*arrangement, *objects, child_seed(self.seed, SEED_SCENE, 0))?
            }
            SceneSource::Explicit(spec) => {
                spec.validate()?;
                spec.clone()
            }
        };
        let trajectory = TrajectorySpec {
            seed: child_seed(self.seed, SEED_TRAJECTORY, 0),
            ..self.trajectory.clone()
        };
        let noise = NoiseSpec {
            seed: child_seed(self.seed, SEED_NOISE, 0),
            ..self.noise
        };
        trajectory.validate()?;
        noise.validate()?;
        self.camera.validate()?;
        self.rf.validate()?;
        Ok(SimulationInputs {
            scene,
            trajectory,
            noise,
            rig: Rig {
                intrinsics: self.camera,
                rf: self.rf,
                antenna_offset: self.antenna_offset.to_transform()?,
            },
        })
    }
}

/// Seeded ensemble comparing annotation with and without the weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default)]
    pub name: String,
    /// Number of runs; run `i` uses seed `base_seed + i`.
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Template for every run; its `seed` is ignored.
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl SuiteSpec {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path)
    }

    pub fn run_config(&self, index: usize) -> SimulationConfig {
        SimulationConfig {
            seed: self.base_seed + index as u64,
            ..self.simulation.clone()
        }
    }
}
