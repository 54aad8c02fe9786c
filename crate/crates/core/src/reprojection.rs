//! Paints matched EPCs back into every frame.
//!
//! Each per-frame instance cloud takes the label of the closest scene instance
//! (Chamfer distance) when that instance is labeled and close enough. Labels
//! are painted on the frame's own mask pixels, so nothing outside the
//! segmenter's support is ever labeled.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bounds_gap, chamfer_indexed, InstanceMaskFrame, KdTree, LabeledMaskFrame, ReferenceFrame};
use crate::registration::{Observation, SceneMap};

/// Stable label ids: EPCs of labeled instances in sorted order, numbered from 1.
pub fn label_table(scene: &SceneMap) -> Result<BTreeMap<String, u8>> {
    let mut epcs: Vec<&str> = scene.labeled().filter_map(|i| i.epc.as_deref()).collect();
    epcs.sort_unstable();
    epcs.dedup();
    if epcs.len() > 255 {
        return Err(Error::input("more than 255 labels do not fit an 8-bit mask"));
    }
    Ok(epcs
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e.to_owned(), i as u8 + 1))
        .collect())
}

struct IndexedScene {
    bounds: Vec<Option<(Vector3<f64>, Vector3<f64>)>>,
    trees: Vec<KdTree>,
}

fn reproject_frame(
    mask: &InstanceMaskFrame,
    observations: &[Observation],
    scene: &SceneMap,
    index: &IndexedScene,
    labels: &BTreeMap<String, u8>,
    threshold: f64,
) -> Result<LabeledMaskFrame> {
    let mut paint = [0u8; 256];
    for obs in observations {
        if obs.cloud.frame != ReferenceFrame::World {
            return Err(Error::input("reprojection expects world-frame clouds"));
        }
        let Some(ob) = obs.cloud.bounds() else { continue };
        let tree = KdTree::build(&obs.cloud.points);
        let mut best: Option<(f64, usize)> = None;
        for (k, ib) in index.bounds.iter().enumerate() {
            let Some(ib) = ib else { continue };
            let limit = best.map_or(threshold, |(d, _)| d.min(threshold));
            if bounds_gap(&ob, ib) >= limit {
                continue;
            }
            if let Some(d) = chamfer_indexed(&tree, &index.trees[k], limit) {
                best = Some((d, k));
            }
        }
        if let Some((_, k)) = best {
            if let Some(epc) = &scene.instances[k].epc {
                paint[obs.local_id as usize] = labels[epc];
            }
        }
    }
    let mut pixels = mask.pixels.clone();
    for id in pixels.as_mut_slice() {
        *id = paint[*id as usize];
    }
    let used: Vec<bool> = {
        let mut u = vec![false; 256];
        for &id in pixels.as_slice() {
            u[id as usize] = true;
        }
        u
    };
    Ok(LabeledMaskFrame {
        timestamp: mask.timestamp,
        pixels,
        labels: labels
            .iter()
            .filter(|(_, id)| used[**id as usize])
            .map(|(e, id)| (*id, e.clone()))
            .collect(),
    })
}

/// One labeled mask per frame. `observations[t]` holds frame `t`'s world-frame
/// instance clouds keyed by their id in `masks[t]`.
pub fn reproject(
    masks: &[InstanceMaskFrame],
    observations: &[Vec<Observation>],
    scene: &SceneMap,
    chamfer_threshold: f64,
) -> Result<Vec<LabeledMaskFrame>> {
    if masks.len() != observations.len() {
        return Err(Error::input(format!(
            "{} masks but {} observation frames",
            masks.len(),
            observations.len()
        )));
    }
    if scene.labeled().next().is_none() {
        return Err(Error::input("scene has no labeled instance to reproject"));
    }
    let labels = label_table(scene)?;
    let index = IndexedScene {
        bounds: scene.instances.iter().map(|i| i.cloud.bounds()).collect(),
        trees: scene.instances.iter().map(|i| KdTree::build(&i.cloud.points)).collect(),
    };
    masks
        .par_iter()
        .zip(observations)
        .map(|(m, obs)| reproject_frame(m, obs, scene, &index, &labels, chamfer_threshold))
        .collect()
}
