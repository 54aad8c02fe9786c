//! Sequence directories.
//!
//! ```text
//! meta.json
//! poses.jsonl                 {"t","frame","position","quaternion"} per frame
//! tags.jsonl                  {"t","frame","epc","phase_deg"} per successful read
//! frames/NNNNNN.depth.pgm     P5, maxval 65535, millimeters
//! frames/NNNNNN.mask.pgm      P5, maxval 255, per-frame instance ids
//! gt/objects.json             {"instance_to_epc": {"<id>": "<epc>"}}
//! gt/distances.jsonl          {"epc","distances"} per tag
//! gt/NNNNNN.mask.pgm          true object ids
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::pgm;
use crate::error::{Error, Location, ParseError, ParseErrorKind, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, InstanceMaskFrame, Pose, RigidTransform};
use crate::rf::{RfParams, TagTrack};
use crate::simulator::{GroundTruth, Sequence};

/// Largest accepted deviation of a stored quaternion's norm from 1.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    pub translation: [f64; 3],
    /// `(w, x, y, z)`.
    pub quaternion: [f64; 4],
}

impl TransformRecord {
    pub fn from_transform(t: &RigidTransform) -> Self {
        TransformRecord {
            translation: t.translation.into(),
            quaternion: t.wxyz(),
        }
    }

    pub fn to_transform(self) -> Result<RigidTransform> {
        RigidTransform::from_wxyz(self.quaternion, self.translation, QUATERNION_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    frames: usize,
    rate: f64,
    intrinsics: CameraIntrinsics,
    wavelength: f64,
    reader_modulus: f64,
    antenna_offset: TransformRecord,
    /// Tag inventory, including tags that were never read.
    epcs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    t: f64,
    frame: usize,
    position: [f64; 3],
    quaternion: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRecord {
    t: f64,
    frame: usize,
    epc: String,
    phase_deg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Objects {
    instance_to_epc: BTreeMap<u8, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistanceRecord {
    epc: String,
    distances: Vec<f64>,
}

pub(crate) fn frame_name(index: usize, suffix: &str) -> String {
    format!("{index:06}.{suffix}.pgm")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

pub(crate) fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub(crate) fn json_error(file: &Path, line_offset: usize, e: &serde_json::Error) -> ParseError {
    ParseError::new(
        file,
        Location::Line(line_offset + e.line().max(1) - 1),
        ParseErrorKind::Json,
        e.to_string(),
    )
}

pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| json_error(path, 1, &e).into())
}

/// Non-empty lines of a JSONL file, with 1-based line numbers.
pub(crate) fn parse_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        ParseError::new(
            path,
            Location::Byte(e.valid_up_to() as u64),
            ParseErrorKind::Json,
            "file is not UTF-8",
        )
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| json_error(path, i + 1, &e).into())
        })
        .collect()
}

fn invalid(file: &Path, line: usize, message: impl Into<String>) -> Error {
    ParseError::new(file, Location::Line(line), ParseErrorKind::InvalidRecord, message).into()
}

fn check_frame_index(file: &Path, line: usize, expected: usize, frame: usize) -> Result<()> {
    if frame != expected {
        return Err(ParseError::new(
            file,
            Location::Line(line),
            ParseErrorKind::IndexGap,
            format!("expected frame {expected}, found {frame}"),
        )
        .into());
    }
    Ok(())
}

/// Writes `seq` into `dir`, creating it if needed. Existing files are overwritten.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    let n = seq.len();
    let meta = Meta {
        format_version: FORMAT_VERSION,
        frames: n,
        rate: seq.rate,
        intrinsics: seq.intrinsics,
        wavelength: seq.rf.wavelength,
        reader_modulus: seq.rf.reader_modulus,
        antenna_offset: TransformRecord::from_transform(&seq.antenna_offset),
        epcs: seq.tags.iter().map(|t| t.epc.clone()).collect(),
    };
    create_dir(dir)?;
    write_file(&dir.join("meta.json"), to_json_pretty(&meta).as_bytes())?;

    let mut poses = String::new();
    for (i, p) in seq.poses.iter().enumerate() {
        poses += &to_json(&PoseRecord {
            t: p.timestamp,
            frame: i,
            position: p.transform.translation.into(),
            quaternion: p.transform.wxyz(),
        });
        poses.push('\n');
    }
    write_file(&dir.join("poses.jsonl"), poses.as_bytes())?;

    let mut tags = String::new();
    for i in 0..n {
        for track in &seq.tags {
            if let Some(phase) = track.readings[i] {
                tags += &to_json(&TagRecord {
                    t: seq.poses[i].timestamp,
                    frame: i,
                    epc: track.epc.clone(),
                    phase_deg: phase,
                });
                tags.push('\n');
            }
        }
    }
    write_file(&dir.join("tags.jsonl"), tags.as_bytes())?;

    let frames = dir.join("frames");
    create_dir(&frames)?;
    (0..n).into_par_iter().try_for_each(|i| {
        write_file(
            &frames.join(frame_name(i, "depth")),
            &pgm::encode_u16(&seq.depth[i].pixels),
        )?;
        write_file(
            &frames.join(frame_name(i, "mask")),
            &pgm::encode_u8(&seq.masks[i].pixels),
        )
    })?;

    if let Some(gt) = &seq.ground_truth {
        let gdir = dir.join("gt");
        create_dir(&gdir)?;
        let objects = Objects {
            instance_to_epc: gt.instance_to_epc.clone(),
        };
        write_file(&gdir.join("objects.json"), to_json_pretty(&objects).as_bytes())?;
        let mut dist = String::new();
        for (epc, d) in &gt.distances {
            dist += &to_json(&DistanceRecord {
                epc: epc.clone(),
                distances: d.clone(),
            });
            dist.push('\n');
        }
        write_file(&gdir.join("distances.jsonl"), dist.as_bytes())?;
        gt.masks
            .par_iter()
            .enumerate()
            .try_for_each(|(i, m)| write_file(&gdir.join(frame_name(i, "mask")), &pgm::encode_u8(&m.pixels)))?;
    }
    Ok(())
}

fn read_masks(dir: &Path, n: usize, k: &CameraIntrinsics, poses: &[Pose]) -> Result<Vec<InstanceMaskFrame>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let path = dir.join(frame_name(i, "mask"));
            let pixels = pgm::decode_u8(&read_file(&path)?, &path)?;
            check_size(&path, pixels.width(), pixels.height(), k)?;
            Ok(InstanceMaskFrame {
                timestamp: poses[i].timestamp,
                pixels,
            })
        })
        .collect()
}

fn check_size(path: &Path, w: usize, h: usize, k: &CameraIntrinsics) -> Result<()> {
    if w != k.width || h != k.height {
        return Err(ParseError::new(
            path,
            Location::File,
            ParseErrorKind::MalformedHeader,
            format!("image is {w}x{h} but the camera is {}x{}", k.width, k.height),
        )
        .into());
    }
    Ok(())
}

/// Frame files beyond the declared count indicate a damaged directory.
fn check_no_extra(dir: &Path, n: usize, suffix: &str) -> Result<()> {
    let extra = dir.join(frame_name(n, suffix));
    if extra.exists() {
        return Err(ParseError::new(
            extra,
            Location::File,
            ParseErrorKind::IndexGap,
            format!("frame {n} exists but meta.json declares {n} frames"),
        )
        .into());
    }
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = parse_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(invalid(
            &meta_path,
            1,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    meta.intrinsics.validate()?;
    let rf = RfParams::new(meta.wavelength, meta.reader_modulus)?;
    let antenna_offset = meta
        .antenna_offset
        .to_transform()
        .map_err(|e| invalid(&meta_path, 1, e.to_string()))?;
    let n = meta.frames;
    if n == 0 {
        return Err(invalid(&meta_path, 1, "sequence declares zero frames"));
    }

    let poses_path = dir.join("poses.jsonl");
    let records: Vec<(usize, PoseRecord)> = parse_jsonl(&poses_path)?;
    let mut poses = Vec::with_capacity(n);
    for (expected, (line, r)) in records.into_iter().enumerate() {
        check_frame_index(&poses_path, line, expected, r.frame)?;
        let pose = Pose::from_transform(
            RigidTransform::from_wxyz(r.quaternion, r.position, QUATERNION_TOLERANCE)
                .map_err(|e| invalid(&poses_path, line, e.to_string()))?,
            r.t,
        );
        poses.push(pose);
    }
    if poses.len() != n {
        return Err(ParseError::new(
            &poses_path,
            Location::Line(poses.len() + 1),
            ParseErrorKind::IndexGap,
            format!("{} poses but meta.json declares {n} frames", poses.len()),
        )
        .into());
    }

    let tags_path = dir.join("tags.jsonl");
    let slot: HashMap<&str, usize> = meta.epcs.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    if slot.len() != meta.epcs.len() {
        return Err(invalid(&meta_path, 1, "duplicate epc in inventory"));
    }
    let mut tags: Vec<TagTrack> = meta
        .epcs
        .iter()
        .map(|e| TagTrack::new(e.clone(), vec![None; n]))
        .collect();
    for (line, r) in parse_jsonl::<TagRecord>(&tags_path)? {
        let Some(&k) = slot.get(r.epc.as_str()) else {
            return Err(invalid(
                &tags_path,
                line,
                format!("epc {} is not in the inventory", r.epc),
            ));
        };
        if r.frame >= n {
            return Err(ParseError::new(
                &tags_path,
                Location::Line(line),
                ParseErrorKind::IndexGap,
                format!("frame {} is beyond the {n} declared frames", r.frame),
            )
            .into());
        }
        if r.t.to_bits() != poses[r.frame].timestamp.to_bits() {
            return Err(invalid(
                &tags_path,
                line,
                format!("t {} disagrees with frame {}", r.t, r.frame),
            ));
        }
        if !(0.0..rf.reader_modulus).contains(&r.phase_deg) {
            return Err(invalid(
                &tags_path,
                line,
                format!("phase {} outside [0, {})", r.phase_deg, rf.reader_modulus),
            ));
        }
        let cell = &mut tags[k].readings[r.frame];
        if cell.is_some() {
            return Err(ParseError::new(
                &tags_path,
                Location::Line(line),
                ParseErrorKind::DuplicateRecord,
                format!("second read of {} in frame {}", r.epc, r.frame),
            )
            .into());
        }
        *cell = Some(r.phase_deg);
    }

    let frames = dir.join("frames");
    let depth = (0..n)
        .into_par_iter()
        .map(|i| {
            let path = frames.join(frame_name(i, "depth"));
            let pixels = pgm::decode_u16(&read_file(&path)?, &path)?;
            check_size(&path, pixels.width(), pixels.height(), &meta.intrinsics)?;
            Ok(DepthFrame {
                timestamp: poses[i].timestamp,
                pixels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let masks = read_masks(&frames, n, &meta.intrinsics, &poses)?;
    check_no_extra(&frames, n, "depth")?;
    check_no_extra(&frames, n, "mask")?;

    let gdir = dir.join("gt");
    let ground_truth = if gdir.is_dir() {
        let objects: Objects = parse_json(&gdir.join("objects.json"))?;
        let dist_path = gdir.join("distances.jsonl");
        let mut distances = BTreeMap::new();
        for (line, r) in parse_jsonl::<DistanceRecord>(&dist_path)? {
            if r.distances.len() != n {
                return Err(invalid(
                    &dist_path,
                    line,
                    format!("{} distances, expected {n}", r.distances.len()),
                ));
            }
            if distances.insert(r.epc.clone(), r.distances).is_some() {
                return Err(ParseError::new(
                    &dist_path,
                    Location::Line(line),
                    ParseErrorKind::DuplicateRecord,
                    format!("second record for {}", r.epc),
                )
                .into());
            }
        }
        let masks = read_masks(&gdir, n, &meta.intrinsics, &poses)?;
        check_no_extra(&gdir, n, "mask")?;
        Some(GroundTruth {
            instance_to_epc: objects.instance_to_epc,
            masks,
            distances,
        })
    } else {
        None
    };

    let seq = Sequence {
        intrinsics: meta.intrinsics,
        rf,
        antenna_offset,
        rate: meta.rate,
        poses,
        depth,
        masks,
        tags,
        ground_truth,
    };
    seq.validate()?;
    Ok(seq)
}

/// Every file under `dir`, relative path to contents, for comparisons.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, read_file(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
