//! Annotation output directories.
//!
//! ```text
//! assignment.json             {"pairs","unmatched_instances","unmatched_tags"}
//! scene.json                  registered instances with their world-frame points
//! labels.json                 {"frames","timestamps","labels": {"<id>": "<epc>"}}
//! labels/NNNNNN.label.pgm     P5, maxval 255, label ids
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pgm;
use super::sequence::{create_dir, frame_name, parse_json, read_file, to_json_pretty, write_file};
use crate::error::{Error, Location, ParseError, ParseErrorKind, Result};
use crate::geometry::{LabeledMaskFrame, PointCloud, ReferenceFrame};
use crate::matching::Assignment;
use crate::pipeline::Annotation;
use crate::registration::{RegisteredInstance, SceneMap};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: u32,
    epc: Option<String>,
    frames_seen: usize,
    points: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    instances: Vec<InstanceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelIndex {
    frames: usize,
    timestamps: Vec<f64>,
    labels: BTreeMap<u8, String>,
}

pub fn write_annotation(a: &Annotation, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("assignment.json"), to_json_pretty(&a.assignment).as_bytes())?;
    let scene = SceneRecord {
        instances: a
            .scene
            .instances
            .iter()
            .map(|i| InstanceRecord {
                id: i.id,
                epc: i.epc.clone(),
                frames_seen: i.frames_seen,
                points: i.cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            })
            .collect(),
    };
    write_file(&dir.join("scene.json"), to_json_pretty(&scene).as_bytes())?;
    let mut labels = BTreeMap::new();
    for f in &a.labels {
        for (id, epc) in &f.labels {
            if labels.insert(*id, epc.clone()).is_some_and(|prev| &prev != epc) {
                return Err(Error::input(format!(
                    "label id {id} names different epcs across frames"
                )));
            }
        }
    }
    let index = LabelIndex {
        frames: a.labels.len(),
        timestamps: a.labels.iter().map(|f| f.timestamp).collect(),
        labels,
    };
    write_file(&dir.join("labels.json"), to_json_pretty(&index).as_bytes())?;
    let ldir = dir.join("labels");
    create_dir(&ldir)?;
    a.labels
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_file(&ldir.join(frame_name(i, "label")), &pgm::encode_u8(&f.pixels)))
}

pub fn read_annotation(dir: &Path) -> Result<Annotation> {
    let assignment: Assignment = parse_json(&dir.join("assignment.json"))?;
    let scene: SceneRecord = parse_json(&dir.join("scene.json"))?;
    let index_path = dir.join("labels.json");
    let index: LabelIndex = parse_json(&index_path)?;
    if index.timestamps.len() != index.frames {
        return Err(ParseError::new(
            &index_path,
            Location::File,
            ParseErrorKind::IndexGap,
            format!("{} timestamps for {} frames", index.timestamps.len(), index.frames),
        )
        .into());
    }
    let ldir = dir.join("labels");
    let labels = (0..index.frames)
        .into_par_iter()
        .map(|i| {
            let path = ldir.join(frame_name(i, "label"));
            let pixels = pgm::decode_u8(&read_file(&path)?, &path)?;
            let mut used = [false; 256];
            for &id in pixels.as_slice() {
                used[id as usize] = true;
            }
            let frame = LabeledMaskFrame {
                timestamp: index.timestamps[i],
                labels: index
                    .labels
                    .iter()
                    .filter(|(id, _)| used[**id as usize])
                    .map(|(id, e)| (*id, e.clone()))
                    .collect(),
                pixels,
            };
            frame
                .validate()
                .map_err(|e| ParseError::new(&path, Location::File, ParseErrorKind::InvalidRecord, e.to_string()))?;
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Annotation {
        scene: SceneMap {
            instances: scene
                .instances
                .into_iter()
                .map(|r| RegisteredInstance {
                    id: r.id,
                    cloud: PointCloud::new(r.points.into_iter().map(Vector3::from).collect(), ReferenceFrame::World),
                    frames_seen: r.frames_seen,
                    epc: r.epc,
                })
                .collect(),
        },
        assignment,
        labels,
    })
}
