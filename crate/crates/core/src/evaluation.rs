//! Frame-level segmentation metrics: mask overlap, boundary overlap and
//! recall at an IoU threshold. All comparisons are label-aware: a predicted
//! pixel only counts when its EPC equals the ground truth's.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, LabeledMaskFrame};
use crate::matching::hungarian;

/// Default boundary match tolerance, pixels.
pub const DEFAULT_BOUNDARY_TOL: usize = 2;
/// Default spacing of evaluated frames.
pub const DEFAULT_SAMPLE_STRIDE: usize = 10;
/// IoU threshold reported by default.
pub const DEFAULT_RECALL_TAU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub f: f64,
    pub p: f64,
    pub r: f64,
}

impl Prf {
    /// Builds the harmonic mean with `0/0 = 0`.
    pub fn from_pr(p: f64, r: f64) -> Self {
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf { f, p, r }
    }

    const PERFECT: Prf = Prf { f: 1.0, p: 1.0, r: 1.0 };
    const ZERO: Prf = Prf { f: 0.0, p: 0.0, r: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mask_f: f64,
    pub mask_p: f64,
    pub mask_r: f64,
    pub boundary_f: f64,
    pub boundary_p: f64,
    pub boundary_r: f64,
    /// Keyed by the threshold printed with two decimals, e.g. `"0.75"`.
    pub recall_at: BTreeMap<String, f64>,
}

fn check_pair(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame) -> Result<()> {
    if !pred.pixels.same_shape(&gt.pixels) {
        return Err(Error::input(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.pixels.width(),
            pred.pixels.height(),
            gt.pixels.width(),
            gt.pixels.height()
        )));
    }
    pred.validate()?;
    gt.validate()
}

struct Overlap {
    pred_ids: Vec<u8>,
    gt_ids: Vec<u8>,
    pred_area: Vec<u64>,
    gt_area: Vec<u64>,
    /// `inter[i][j]`: pixels with pred id `pred_ids[i]` and gt id `gt_ids[j]`.
    inter: Vec<Vec<u64>>,
    same_epc: Vec<Vec<bool>>,
}

impl Overlap {
    fn new(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame) -> Self {
        let mut joint: BTreeMap<(u8, u8), u64> = BTreeMap::new();
        let mut pa = [0u64; 256];
        let mut ga = [0u64; 256];
        for (&p, &g) in pred.pixels.as_slice().iter().zip(gt.pixels.as_slice()) {
            pa[p as usize] += 1;
            ga[g as usize] += 1;
            if p != 0 && g != 0 {
                *joint.entry((p, g)).or_default() += 1;
            }
        }
        let pred_ids: Vec<u8> = (1..=255u8).filter(|&i| pa[i as usize] > 0).collect();
        let gt_ids: Vec<u8> = (1..=255u8).filter(|&i| ga[i as usize] > 0).collect();
        let inter = pred_ids
            .iter()
            .map(|p| {
                gt_ids
                    .iter()
                    .map(|g| joint.get(&(*p, *g)).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        let same_epc = pred_ids
            .iter()
            .map(|p| gt_ids.iter().map(|g| pred.labels.get(p) == gt.labels.get(g)).collect())
            .collect();
        Overlap {
            pred_area: pred_ids.iter().map(|&i| pa[i as usize]).collect(),
            gt_area: gt_ids.iter().map(|&i| ga[i as usize]).collect(),
            pred_ids,
            gt_ids,
            inter,
            same_epc,
        }
    }

    fn iou(&self, i: usize, j: usize) -> f64 {
        if !self.same_epc[i][j] {
            return 0.0;
        }
        let inter = self.inter[i][j];
        let union = self.pred_area[i] + self.gt_area[j] - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Pixel precision and recall after one-to-one matching of predicted and
/// ground-truth instances by maximum total IoU.
///
/// Both frames empty gives `(1, 1, 1)`; exactly one empty gives `(0, 0, 0)`.
pub fn mask_metrics(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame) -> Result<Prf> {
    check_pair(pred, gt)?;
    let o = Overlap::new(pred, gt);
    match (o.pred_ids.is_empty(), o.gt_ids.is_empty()) {
        (true, true) => return Ok(Prf::PERFECT),
        (true, false) | (false, true) => return Ok(Prf::ZERO),
        _ => {}
    }
    let ious: Vec<Vec<f64>> = (0..o.pred_ids.len())
        .map(|i| (0..o.gt_ids.len()).map(|j| o.iou(i, j)).collect())
        .collect();
    let assignment = hungarian(&ious)?;
    let tp: u64 = assignment
        .pairs
        .iter()
        .filter(|(i, j, _)| o.same_epc[*i][*j])
        .map(|(i, j, _)| o.inter[*i][*j])
        .sum();
    let pred_fg: u64 = o.pred_area.iter().sum();
    let gt_fg: u64 = o.gt_area.iter().sum();
    Ok(Prf::from_pr(tp as f64 / pred_fg as f64, tp as f64 / gt_fg as f64))
}

/// Foreground pixels with a 4-neighbour (inside the image) of a different id.
pub fn boundary(mask: &Grid<u8>) -> Vec<(usize, usize, u8)> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Vec::new();
    for (u, v, id) in mask.pixels() {
        if id == 0 {
            continue;
        }
        let differs = (u > 0 && mask.get(u - 1, v) != id)
            || (u + 1 < w && mask.get(u + 1, v) != id)
            || (v > 0 && mask.get(u, v - 1) != id)
            || (v + 1 < h && mask.get(u, v + 1) != id);
        if differs {
            out.push((u, v, id));
        }
    }
    out
}

/// Summed-area table over a boolean grid, for window counts.
struct Integral {
    w: usize,
    h: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(w: usize, h: usize, points: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for (u, v) in points {
            sums[(v + 1) * (w + 1) + u + 1] += 1;
        }
        for v in 1..=h {
            for u in 1..=w {
                let i = v * (w + 1) + u;
                sums[i] += sums[i - 1] + sums[i - (w + 1)] - sums[i - (w + 1) - 1];
            }
        }
        Integral { w, h, sums }
    }

    fn any_within(&self, u: usize, v: usize, tol: usize) -> bool {
        let (u0, v0) = (u.saturating_sub(tol), v.saturating_sub(tol));
        let (u1, v1) = ((u + tol + 1).min(self.w), (v + tol + 1).min(self.h));
        let at = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        at(u1, v1) + at(u0, v0) - at(u0, v1) - at(u1, v0) > 0
    }
}

/// Fraction of `from` boundary pixels with a same-EPC `to` boundary pixel
/// within `tol` (Chebyshev distance).
fn boundary_hits(
    from: &[(usize, usize, u8)],
    from_labels: &BTreeMap<u8, String>,
    to: &[(usize, usize, u8)],
    to_labels: &BTreeMap<u8, String>,
    w: usize,
    h: usize,
    tol: usize,
) -> usize {
    let mut by_epc: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for &(u, v, id) in to {
        by_epc.entry(to_labels[&id].as_str()).or_default().push((u, v));
    }
    let tables: BTreeMap<&str, Integral> = by_epc
        .into_iter()
        .map(|(e, pts)| (e, Integral::new(w, h, pts.into_iter())))
        .collect();
    from.iter()
        .filter(|(u, v, id)| {
            tables
                .get(from_labels[id].as_str())
                .is_some_and(|t| t.any_within(*u, *v, tol))
        })
        .count()
}

/// Boundary precision and recall with a pixel tolerance.
///
/// Both boundaries empty gives `(1, 1, 1)`; exactly one empty gives `(0, 0, 0)`.
pub fn boundary_metrics(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame, tol_px: usize) -> Result<Prf> {
    check_pair(pred, gt)?;
    let (w, h) = (gt.pixels.width(), gt.pixels.height());
    let pb = boundary(&pred.pixels);
    let gb = boundary(&gt.pixels);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok(Prf::PERFECT),
        (true, false) | (false, true) => return Ok(Prf::ZERO),
        _ => {}
    }
    let p = boundary_hits(&pb, &pred.labels, &gb, &gt.labels, w, h, tol_px) as f64 / pb.len() as f64;
    let r = boundary_hits(&gb, &gt.labels, &pb, &pred.labels, w, h, tol_px) as f64 / gb.len() as f64;
    Ok(Prf::from_pr(p, r))
}

/// Fraction of ground-truth instances whose best same-EPC prediction reaches
/// IoU `tau`. A frame without ground-truth instances gives 1.
pub fn recall_at(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::input(format!("IoU threshold must lie in (0, 1], got {tau}")));
    }
    check_pair(pred, gt)?;
    let o = Overlap::new(pred, gt);
    if o.gt_ids.is_empty() {
        return Ok(1.0);
    }
    let hit = (0..o.gt_ids.len())
        .filter(|&j| (0..o.pred_ids.len()).any(|i| o.iou(i, j) >= tau))
        .count();
    Ok(hit as f64 / o.gt_ids.len() as f64)
}

pub fn frame_metrics(
    pred: &LabeledMaskFrame,
    gt: &LabeledMaskFrame,
    tol_px: usize,
    taus: &[f64],
) -> Result<FrameMetrics> {
    let m = mask_metrics(pred, gt)?;
    let b = boundary_metrics(pred, gt, tol_px)?;
    let mut recall = BTreeMap::new();
    for &tau in taus {
        recall.insert(format!("{tau:.2}"), recall_at(pred, gt, tau)?);
    }
    Ok(FrameMetrics {
        mask_f: m.f,
        mask_p: m.p,
        mask_r: m.r,
        boundary_f: b.f,
        boundary_p: b.p,
        boundary_r: b.r,
        recall_at: recall,
    })
}

/// Mean frame metrics over frames `0, stride, 2 * stride, ...`.
pub fn mean_frame_metrics(
    preds: &[LabeledMaskFrame],
    gts: &[LabeledMaskFrame],
    stride: usize,
    tol_px: usize,
    taus: &[f64],
) -> Result<FrameMetrics> {
    if preds.len() != gts.len() {
        return Err(Error::input(format!(
            "{} predicted frames but {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if stride == 0 || preds.is_empty() {
        return Err(Error::input("need a positive stride and at least one frame"));
    }
    let per: Vec<FrameMetrics> = (0..preds.len())
        .step_by(stride)
        .map(|t| frame_metrics(&preds[t], &gts[t], tol_px, taus))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let mut recall = BTreeMap::new();
    for key in per[0].recall_at.keys() {
        recall.insert(key.clone(), per.iter().map(|m| m.recall_at[key]).sum::<f64>() / n);
    }
    Ok(FrameMetrics {
        mask_f: mean(|m| m.mask_f),
        mask_p: mean(|m| m.mask_p),
        mask_r: mean(|m| m.mask_r),
        boundary_f: mean(|m| m.boundary_f),
        boundary_p: mean(|m| m.boundary_p),
        boundary_r: mean(|m| m.boundary_r),
        recall_at: recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(w: usize, h: usize, labels: &[(u8, &str)], f: impl Fn(usize, usize) -> u8) -> LabeledMaskFrame {
        let mut g = Grid::filled(w, h, 0u8);
        for v in 0..h {
            for u in 0..w {
                g.set(u, v, f(u, v));
            }
        }
        LabeledMaskFrame {
            timestamp: 0.0,
            pixels: g,
            labels: labels.iter().map(|(i, e)| (*i, e.to_string())).collect(),
        }
    }

    fn square(w: usize, off: usize) -> LabeledMaskFrame {
        frame(w, w, &[(1, "A")], |u, v| {
            u8::from((10 + off..30 + off).contains(&u) && (10..30).contains(&v))
        })
    }

    #[test]
    fn identity_gives_perfect_scores() {
        let a = frame(8, 8, &[(1, "A"), (2, "B")], |u, v| {
            if u < 4 {
                1
            } else if v < 4 {
                2
            } else {
                0
            }
        });
        assert_eq!(mask_metrics(&a, &a).unwrap(), Prf::PERFECT);
        assert_eq!(boundary_metrics(&a, &a, 2).unwrap(), Prf::PERFECT);
        assert_eq!(recall_at(&a, &a, 0.75).unwrap(), 1.0);
    }

    #[test]
    fn empty_prediction_conventions() {
        let gt = frame(8, 8, &[(1, "A")], |u, _| u8::from(u < 4));
        let empty = frame(8, 8, &[], |_, _| 0);
        assert_eq!(mask_metrics(&empty, &gt).unwrap(), Prf::ZERO);
        assert_eq!(boundary_metrics(&empty, &gt, 2).unwrap(), Prf::ZERO);
        assert_eq!(recall_at(&empty, &gt, 0.75).unwrap(), 0.0);
        assert_eq!(mask_metrics(&empty, &empty).unwrap(), Prf::PERFECT);
        assert_eq!(recall_at(&gt, &empty, 0.75).unwrap(), 1.0);
    }

    #[test]
    fn half_overlap_by_hand() {
        // GT: 4x4 block at columns 0..4, rows 0..4 (16 px).
        // Pred: 4x4 block at columns 2..6, rows 0..4 (16 px); 8 px overlap.
        let gt = frame(8, 8, &[(1, "A")], |u, v| u8::from(u < 4 && v < 4));
        let pred = frame(
            8,
            8,
            &[(3, "A")],
            |u, v| if (2..6).contains(&u) && v < 4 { 3 } else { 0 },
        );
        let m = mask_metrics(&pred, &gt).unwrap();
        assert_eq!(m.p, 0.5);
        assert_eq!(m.r, 0.5);
        assert_eq!(m.f, 0.5);
        // IoU = 8 / 24.
        assert_eq!(recall_at(&pred, &gt, 0.33).unwrap(), 1.0);
        assert_eq!(recall_at(&pred, &gt, 0.34).unwrap(), 0.0);
        // Same pixels under a different EPC earn nothing.
        let wrong = frame(
            8,
            8,
            &[(3, "B")],
            |u, v| if (2..6).contains(&u) && v < 4 { 3 } else { 0 },
        );
        assert_eq!(mask_metrics(&wrong, &gt).unwrap(), Prf::ZERO);
    }

    #[test]
    fn recall_two_instances() {
        // GT A: columns 0..10 of row band (10 px per row, 1 row): use 1-row frame.
        // Pred A covers 8 of A's 10 px -> IoU 0.8. Pred B covers 5 of B's 10 -> IoU 0.5.
        let gt = frame(20, 1, &[(1, "A"), (2, "B")], |u, _| if u < 10 { 1 } else { 2 });
        let pred = frame(20, 1, &[(1, "A"), (2, "B")], |u, _| match u {
            0..=7 => 1,
            10..=14 => 2,
            _ => 0,
        });
        assert_eq!(recall_at(&pred, &gt, 0.75).unwrap(), 0.5);
    }

    #[test]
    fn one_pixel_shift_is_within_tolerance() {
        let gt = square(40, 0);
        let pred = square(40, 1);
        assert_eq!(boundary_metrics(&pred, &gt, 2).unwrap(), Prf::PERFECT);
    }

    fn brute_boundary(pred: &LabeledMaskFrame, gt: &LabeledMaskFrame, tol: usize) -> (f64, f64) {
        let pb = boundary(&pred.pixels);
        let gb = boundary(&gt.pixels);
        let near = |a: &(usize, usize, u8), b: &(usize, usize, u8), la: &LabeledMaskFrame, lb: &LabeledMaskFrame| {
            a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) <= tol && la.labels[&a.2] == lb.labels[&b.2]
        };
        let p = pb.iter().filter(|a| gb.iter().any(|b| near(a, b, pred, gt))).count() as f64 / pb.len() as f64;
        let r = gb.iter().filter(|a| pb.iter().any(|b| near(a, b, gt, pred))).count() as f64 / gb.len() as f64;
        (p, r)
    }

    #[test]
    fn three_pixel_shift_matches_brute_force() {
        let gt = square(40, 0);
        let pred = square(40, 3);
        let m = boundary_metrics(&pred, &gt, 2).unwrap();
        let (p, r) = brute_boundary(&pred, &gt, 2);
        assert_eq!((m.p, m.r), (p, r));
        // Hand count: 19 + 19 from the shifted top and bottom rows, 4 near the
        // corners of the leading column, none on the far column.
        assert_eq!(p, 42.0 / 76.0);
        assert_eq!(r, 42.0 / 76.0);
    }

    #[test]
    fn random_frames_match_brute_force_and_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let mk = |rng: &mut ChaCha8Rng| {
                let rects: Vec<(usize, usize, usize, usize)> = (0..3)
                    .map(|_| {
                        (
                            rng.random_range(0..20),
                            rng.random_range(0..20),
                            rng.random_range(2..10),
                            rng.random_range(2..10),
                        )
                    })
                    .collect();
                frame(24, 24, &[(1, "A"), (2, "B"), (3, "C")], |u, v| {
                    rects
                        .iter()
                        .enumerate()
                        .rev()
                        .find(|(_, r)| (r.0..r.0 + r.2).contains(&u) && (r.1..r.1 + r.3).contains(&v))
                        .map_or(0, |(i, _)| i as u8 + 1)
                })
            };
            let mut a = mk(&mut rng);
            let mut b = mk(&mut rng);
            for f in [&mut a, &mut b] {
                let present: Vec<u8> = f
                    .labels
                    .keys()
                    .copied()
                    .filter(|id| f.pixels.as_slice().contains(id))
                    .collect();
                f.labels.retain(|id, _| present.contains(id));
            }
            let m = boundary_metrics(&a, &b, 1).unwrap();
            if !boundary(&a.pixels).is_empty() && !boundary(&b.pixels).is_empty() {
                assert_eq!((m.p, m.r), brute_boundary(&a, &b, 1));
            }
            assert_eq!(mask_metrics(&a, &a).unwrap(), Prf::PERFECT);
        }
    }

    #[test]
    fn permuting_ids_with_labels_changes_nothing() {
        let gt = frame(10, 10, &[(1, "A"), (2, "B")], |u, v| {
            if u < 5 {
                1
            } else if v < 5 {
                2
            } else {
                0
            }
        });
        let pred = frame(10, 10, &[(1, "A"), (2, "B")], |u, v| {
            if u < 6 {
                1
            } else if v < 4 {
                2
            } else {
                0
            }
        });
        let swap = |f: &LabeledMaskFrame| {
            let mut g = f.clone();
            for id in g.pixels.as_mut_slice() {
                *id = match *id {
                    1 => 2,
                    2 => 1,
                    x => x,
                };
            }
            g.labels = f.labels.iter().map(|(k, v)| (3 - k, v.clone())).collect();
            g
        };
        assert_eq!(
            mask_metrics(&pred, &gt).unwrap(),
            mask_metrics(&swap(&pred), &swap(&gt)).unwrap()
        );
        assert_eq!(
            boundary_metrics(&pred, &gt, 1).unwrap(),
            boundary_metrics(&swap(&pred), &swap(&gt), 1).unwrap()
        );
    }

    #[test]
    fn erosion_lowers_recall_only() {
        let gt = square(40, 0);
        let eroded = frame(40, 40, &[(1, "A")], |u, v| {
            u8::from((11..29).contains(&u) && (11..29).contains(&v))
        });
        let m = mask_metrics(&eroded, &gt).unwrap();
        assert_eq!(m.p, 1.0);
        assert!(m.r < 1.0 && m.f < 1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = square(40, 0);
        let b = square(30, 0);
        assert!(mask_metrics(&a, &b).is_err());
        assert!(boundary_metrics(&a, &b, 2).is_err());
        assert!(recall_at(&a, &b, 0.75).is_err());
        assert!(recall_at(&a, &a, 0.0).is_err());
    }

    #[test]
    fn sequence_mean_uses_stride() {
        let good = square(40, 0);
        let empty = frame(40, 40, &[], |_, _| 0);
        let preds = vec![good.clone(), empty.clone(), good.clone(), empty];
        let gts = vec![good.clone(); 4];
        let m = mean_frame_metrics(&preds, &gts, 2, 2, &[0.75]).unwrap();
        assert_eq!(m.mask_f, 1.0);
        let m = mean_frame_metrics(&preds, &gts, 1, 2, &[0.75]).unwrap();
        assert_eq!(m.mask_f, 0.5);
        assert_eq!(m.recall_at["0.75"], 0.5);
    }
}
