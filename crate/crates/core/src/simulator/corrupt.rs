//! Segmentation corruption: fused neighbours, missed and spurious instances,
//! boundary jitter and per-frame renumbering.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::NoiseSpec;
use crate::geometry::{Grid, InstanceMaskFrame};
use crate::seed::rng_for;

const STREAM_CORRUPT: u64 = 0xC0;

/// Unordered id pairs `(a, b)`, `a < b`, that share a 4-neighbour edge.
pub fn adjacent_pairs(mask: &Grid<u8>) -> BTreeSet<(u8, u8)> {
    let (w, h) = (mask.width(), mask.height());
    let px = mask.as_slice();
    let mut pairs = BTreeSet::new();
    let mut note = |a: u8, b: u8| {
        if a != 0 && b != 0 && a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    };
    for v in 0..h {
        for u in 0..w {
            let a = px[v * w + u];
            if u + 1 < w {
                note(a, px[v * w + u + 1]);
            }
            if v + 1 < h {
                note(a, px[(v + 1) * w + u]);
            }
        }
    }
    pairs
}

fn present_ids(mask: &Grid<u8>) -> Vec<u8> {
    let mut seen = [false; 256];
    for &id in mask.as_slice() {
        seen[id as usize] = true;
    }
    (1..=255u8).filter(|&id| seen[id as usize]).collect()
}

fn neighbours(u: usize, v: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [(u.wrapping_sub(1), v), (u + 1, v), (u, v.wrapping_sub(1)), (u, v + 1)];
    cand.into_iter().filter(move |&(x, y)| x < w && y < h)
}

/// Grows `id` into adjacent background by one pixel.
fn dilate(mask: &mut Grid<u8>, id: u8) {
    let (w, h) = (mask.width(), mask.height());
    let grow: Vec<usize> = (0..w * h)
        .filter(|&i| mask.as_slice()[i] == 0 && neighbours(i % w, i / w, w, h).any(|(x, y)| mask.get(x, y) == id))
        .collect();
    let px = mask.as_mut_slice();
    for i in grow {
        px[i] = id;
    }
}

/// Shrinks `id` by one pixel, releasing its border to background.
fn erode(mask: &mut Grid<u8>, id: u8) {
    let (w, h) = (mask.width(), mask.height());
    let shrink: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (u, v) = (i % w, i / w);
            mask.as_slice()[i] == id
                && (u == 0
                    || v == 0
                    || u + 1 == w
                    || v + 1 == h
                    || neighbours(u, v, w, h).any(|(x, y)| mask.get(x, y) != id))
        })
        .collect();
    let px = mask.as_mut_slice();
    for i in shrink {
        px[i] = 0;
    }
}

fn corrupt_frame(
    mask: &Grid<u8>,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
    mergeable: Option<&BTreeSet<(u8, u8)>>,
) -> Grid<u8> {
    let mut out = mask.clone();

    if noise.seg_merge_prob > 0.0 && rng.random_bool(noise.seg_merge_prob) {
        let pairs: Vec<(u8, u8)> = adjacent_pairs(&out)
            .into_iter()
            .filter(|p| mergeable.is_none_or(|m| m.contains(p)))
            .collect();
        if !pairs.is_empty() {
            let (keep, gone) = pairs[rng.random_range(0..pairs.len())];
            for id in out.as_mut_slice() {
                if *id == gone {
                    *id = keep;
                }
            }
        }
    }

    if noise.seg_miss_prob > 0.0 && rng.random_bool(noise.seg_miss_prob) {
        let ids = present_ids(&out);
        if !ids.is_empty() {
            let gone = ids[rng.random_range(0..ids.len())];
            for id in out.as_mut_slice() {
                if *id == gone {
                    *id = 0;
                }
            }
        }
    }

    if noise.boundary_jitter_px > 0 {
        let j = noise.boundary_jitter_px as i64;
        for id in present_ids(&out) {
            let k = rng.random_range(-j..=j);
            for _ in 0..k.unsigned_abs() {
                if k > 0 {
                    dilate(&mut out, id);
                } else {
                    erode(&mut out, id);
                }
            }
        }
    }

    if noise.seg_spurious_prob > 0.0 && rng.random_bool(noise.seg_spurious_prob) {
        let fresh = present_ids(&out).last().copied().unwrap_or(0).checked_add(1);
        let r = rng.random_range(3..=6i64);
        let cu = rng.random_range(0..out.width()) as i64;
        let cv = rng.random_range(0..out.height()) as i64;
        if let Some(fresh) = fresh {
            for dv in -r..=r {
                for du in -r..=r {
                    let (u, v) = (cu + du, cv + dv);
                    if du * du + dv * dv > r * r || u < 0 || v < 0 {
                        continue;
                    }
                    let (u, v) = (u as usize, v as usize);
                    if u < out.width() && v < out.height() && out.get(u, v) == 0 {
                        out.set(u, v, fresh);
                    }
                }
            }
        }
    }

    // The segmenter numbers instances arbitrarily in every frame.
    let ids = present_ids(&out);
    let mut numbers: Vec<u8> = (1..=ids.len() as u8).collect();
    numbers.shuffle(rng);
    let mut table = [0u8; 256];
    for (id, n) in ids.iter().zip(numbers) {
        table[*id as usize] = n;
    }
    for id in out.as_mut_slice() {
        *id = table[*id as usize];
    }
    out
}

/// Applies segmentation corruption to each frame independently. Any two
/// 4-adjacent instances may be fused.
pub fn corrupt_masks(true_masks: &[InstanceMaskFrame], noise: &NoiseSpec, seed: u64) -> Vec<InstanceMaskFrame> {
    corrupt_masks_with(true_masks, noise, seed, None)
}

/// [`corrupt_masks`], fusing only pairs listed in `mergeable` when given.
pub fn corrupt_masks_with(
    true_masks: &[InstanceMaskFrame],
    noise: &NoiseSpec,
    seed: u64,
    mergeable: Option<&BTreeSet<(u8, u8)>>,
) -> Vec<InstanceMaskFrame> {
    true_masks
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let mut rng = rng_for(seed, STREAM_CORRUPT, i as u64);
            InstanceMaskFrame {
                timestamp: frame.timestamp,
                pixels: corrupt_frame(&frame.pixels, noise, &mut rng, mergeable),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> InstanceMaskFrame {
        let mut g = Grid::filled(w, h, 0u8);
        for v in 0..h {
            for u in 0..w {
                g.set(u, v, f(u, v));
            }
        }
        InstanceMaskFrame {
            timestamp: 0.0,
            pixels: g,
        }
    }

    fn two_blocks() -> InstanceMaskFrame {
        frame(40, 30, |u, v| match (u, v) {
            (5..=19, 5..=24) => 1,
            (20..=34, 5..=24) => 2,
            _ => 0,
        })
    }

    /// True when `b` is `a` with ids relabelled by some bijection.
    fn same_up_to_renumbering(a: &Grid<u8>, b: &Grid<u8>) -> bool {
        let mut fwd = BTreeMap::new();
        let mut back = BTreeMap::new();
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(&x, &y)| (x == 0) == (y == 0) && *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
    }

    #[test]
    fn zero_noise_only_renumbers() {
        let masks: Vec<_> = (0..20).map(|_| two_blocks()).collect();
        let out = corrupt_masks(&masks, &NoiseSpec::zero(), 3);
        for (a, b) in masks.iter().zip(&out) {
            assert!(same_up_to_renumbering(&a.pixels, &b.pixels));
            assert_eq!(b.ids(), vec![1, 2]);
        }
        assert!(
            out.iter().any(|f| f.pixels.get(5, 5) == 2),
            "ids should be shuffled sometimes"
        );
    }

    #[test]
    fn certain_miss_on_single_object_clears_frames() {
        let masks: Vec<_> = (0..10).map(|_| frame(20, 20, |u, _| u8::from(u > 10))).collect();
        let noise = NoiseSpec {
            seg_miss_prob: 1.0,
            ..NoiseSpec::zero()
        };
        for f in corrupt_masks(&masks, &noise, 1) {
            assert!(f.ids().is_empty());
        }
    }

    #[test]
    fn certain_merge_fuses_touching_pair() {
        let masks: Vec<_> = (0..10).map(|_| two_blocks()).collect();
        assert_eq!(adjacent_pairs(&masks[0].pixels), BTreeSet::from([(1, 2)]));
        let noise = NoiseSpec {
            seg_merge_prob: 1.0,
            ..NoiseSpec::zero()
        };
        for f in corrupt_masks(&masks, &noise, 1) {
            assert_eq!(f.ids(), vec![1]);
        }
        // Excluded by the merge policy.
        let none = BTreeSet::new();
        for f in corrupt_masks_with(&masks, &noise, 1, Some(&none)) {
            assert_eq!(f.ids().len(), 2);
        }
    }

    #[test]
    fn separated_instances_never_merge() {
        let masks: Vec<_> = (0..10)
            .map(|_| {
                frame(40, 30, |u, v| match (u, v) {
                    (2..=10, 2..=10) => 1,
                    (20..=30, 2..=10) => 2,
                    _ => 0,
                })
            })
            .collect();
        let noise = NoiseSpec {
            seg_merge_prob: 1.0,
            ..NoiseSpec::zero()
        };
        for f in corrupt_masks(&masks, &noise, 1) {
            assert_eq!(f.ids().len(), 2);
        }
    }

    #[test]
    fn spurious_blobs_add_a_fresh_instance_on_background() {
        let masks: Vec<_> = (0..30)
            .map(|_| frame(64, 48, |u, v| u8::from(u < 8 && v < 8)))
            .collect();
        let noise = NoiseSpec {
            seg_spurious_prob: 1.0,
            ..NoiseSpec::zero()
        };
        let out = corrupt_masks(&masks, &noise, 5);
        for (a, b) in masks.iter().zip(&out) {
            assert_eq!(b.ids().len(), 2);
            // Original object pixels keep a single consistent id.
            let obj = b.pixels.get(0, 0);
            for v in 0..8 {
                for u in 0..8 {
                    assert_eq!(b.pixels.get(u, v), obj);
                }
            }
            let blob = b.pixels.as_slice().iter().filter(|&&x| x != 0 && x != obj).count();
            assert!(blob > 0 && blob <= 13 * 13);
            assert_eq!(a.pixels.as_slice().iter().filter(|&&x| x != 0).count(), 64);
        }
    }

    #[test]
    fn jitter_moves_boundaries_by_at_most_the_limit() {
        let masks: Vec<_> = (0..20)
            .map(|_| frame(40, 40, |u, v| u8::from((10..30).contains(&u) && (10..30).contains(&v))))
            .collect();
        let noise = NoiseSpec {
            boundary_jitter_px: 2,
            ..NoiseSpec::zero()
        };
        for f in corrupt_masks(&masks, &noise, 9) {
            for v in 0..40 {
                for u in 0..40 {
                    let inside = |m: usize| (10 + m..30 - m).contains(&u) && (10 + m..30 - m).contains(&v);
                    if inside(2) {
                        assert_ne!(f.pixels.get(u, v), 0);
                    }
                    let d = |a: usize, lo: usize, hi: usize| {
                        if a < lo {
                            lo - a
                        } else if a >= hi {
                            a + 1 - hi
                        } else {
                            0
                        }
                    };
                    if d(u, 10, 30) + d(v, 10, 30) > 2 {
                        assert_eq!(f.pixels.get(u, v), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn corruption_is_deterministic() {
        let masks: Vec<_> = (0..10).map(|_| two_blocks()).collect();
        let noise = NoiseSpec::default();
        assert_eq!(corrupt_masks(&masks, &noise, 4), corrupt_masks(&masks, &noise, 4));
    }
}
