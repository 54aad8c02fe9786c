//! On-disk formats: sequence directories, annotation outputs and JSON configs.

mod annotation;
mod config;
pub mod pgm;
mod sequence;

pub use annotation::{read_annotation, write_annotation};
pub use config::{SceneSource, SimulationConfig, SimulationInputs, SuiteSpec};
pub(crate) use sequence::parse_json;
pub use sequence::{read_sequence, snapshot, write_sequence, TransformRecord, QUATERNION_TOLERANCE};
