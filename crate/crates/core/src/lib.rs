//! rf-annotate: automatic pixelwise annotation of RFID-tagged objects.
//!
//! A handheld rig captures synchronized depth frames, camera poses and RFID
//! phase readings of a static tabletop scene. Objects are segmented per frame,
//! registered into a world-frame scene, and each registered instance is
//! matched to the RFID tag whose phase-derived distance changes best agree
//! with the instance's geometric distance changes. The matched EPCs are then
//! painted back into every frame.
//!
//! Pipeline stages:
//!
//! 1. [`geometry`] – backprojection, rigid transforms, Chamfer distance.
//! 2. [`registration`] – cross-frame instance registration and pruning.
//! 3. [`rf`] / [`profiles`] – phase unwrapping and differential spatial profiles.
//! 4. [`matching`] – reward matrix and Hungarian assignment.
//! 5. [`reprojection`] – per-frame EPC label masks.
//!
//! [`simulator`] produces synthetic sequences with ground truth, [`evaluation`]
//! scores predictions, [`io`] defines the on-disk formats and [`pipeline`]
//! wires the stages together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod profiles;
pub mod registration;
pub mod reprojection;
pub mod rf;
pub mod simulator;

mod seed;

pub use error::{Error, Location, ParseError, ParseErrorKind, Result};
