//! Point-to-pixel label extension: turn per-frame head annotations into
//! descriptor-level correspondence labels via a shared local offset window.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridCoord, PointAnnotation};

/// Ground-truth partition of descriptor indices for one frame pair:
/// one-to-one matched pairs, frame-t descriptors of departing identities,
/// and frame-(t+delta) descriptors of arriving identities. Retained cells
/// owned by no identity carry no label and stay out of the loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchLabels {
    pub matched: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl MatchLabels {
    pub fn len(&self) -> usize {
        self.matched.len() + self.unmatched_a.len() + self.unmatched_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grid cell holding a head center: the nearest cell coordinate. Rounding
/// (not flooring) keeps every above-threshold cell of an isolated head
/// within Chebyshev distance 1 of its center cell regardless of the
/// fractional position.
pub(crate) fn center_cell(p: &PointAnnotation, downsample: u32) -> (i64, i64) {
    (
        (p.x / downsample as f64).round() as i64,
        (p.y / downsample as f64).round() as i64,
    )
}

/// Owner of a retained cell: among the points whose center cell is within
/// Chebyshev distance `< r_lab`, the nearest center in continuous grid
/// coordinates; ties break toward the lower identity.
pub(crate) fn cell_owner(
    cell: GridCoord,
    points: &[PointAnnotation],
    r_lab: usize,
    downsample: u32,
) -> Option<usize> {
    let ds = downsample as f64;
    let mut best: Option<(f64, u64, usize)> = None;
    for (k, p) in points.iter().enumerate() {
        let (cx, cy) = center_cell(p, downsample);
        let dx = cell.x as i64 - cx;
        let dy = cell.y as i64 - cy;
        if dx.unsigned_abs().max(dy.unsigned_abs()) as usize >= r_lab {
            continue;
        }
        let fx = cell.x as f64 - p.x / ds;
        let fy = cell.y as f64 - p.y / ds;
        let d2 = fx * fx + fy * fy;
        let key = (d2, p.id, k);
        if best.map_or(true, |(bd, bid, _)| key.0 < bd || (key.0 == bd && key.1 < bid)) {
            best = Some(key);
        }
    }
    best.map(|(_, _, k)| k)
}

/// Rank of each true mask bit in row-major order.
fn descriptor_index(mask: &BinaryMask) -> HashMap<(usize, usize), usize> {
    let mut map = HashMap::new();
    let mut rank = 0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                map.insert((x, y), rank);
                rank += 1;
            }
        }
    }
    map
}

/// Extend point annotations into descriptor-level labels. For an identity
/// visible in both frames, every offset with infinity norm `< r_lab` whose
/// cells are retained and owned by that identity on both sides yields a
/// matched pair; retained cells owned by a frame-t-only identity go to
/// `unmatched_a`, frame-(t+delta)-only to `unmatched_b`.
pub fn extend_labels(
    points_a: &[PointAnnotation],
    points_b: &[PointAnnotation],
    mask_a: &BinaryMask,
    mask_b: &BinaryMask,
    r_lab: usize,
    downsample: u32,
) -> Result<MatchLabels> {
    if r_lab == 0 {
        return Err(Error::Invalid("r_lab must be >= 1".into()));
    }
    let idx_a = descriptor_index(mask_a);
    let idx_b = descriptor_index(mask_b);
    let ids_a: HashMap<u64, usize> = points_a.iter().enumerate().map(|(k, p)| (p.id, k)).collect();
    let ids_b: HashMap<u64, usize> = points_b.iter().enumerate().map(|(k, p)| (p.id, k)).collect();

    let r = r_lab as i64;
    let mut matched = Vec::new();
    for (id, &ka) in &ids_a {
        let kb = match ids_b.get(id) {
            Some(&kb) => kb,
            None => continue,
        };
        let (ax, ay) = center_cell(&points_a[ka], downsample);
        let (bx, by) = center_cell(&points_b[kb], downsample);
        for dy in -(r - 1)..=(r - 1) {
            for dx in -(r - 1)..=(r - 1) {
                let ca = (ax + dx, ay + dy);
                let cb = (bx + dx, by + dy);
                let ia = match lookup(&idx_a, ca, mask_a) {
                    Some(i) => i,
                    None => continue,
                };
                let ib = match lookup(&idx_b, cb, mask_b) {
                    Some(i) => i,
                    None => continue,
                };
                let ga = GridCoord::new(ca.0 as usize, ca.1 as usize);
                let gb = GridCoord::new(cb.0 as usize, cb.1 as usize);
                if cell_owner(ga, points_a, r_lab, downsample) != Some(ka) {
                    continue;
                }
                if cell_owner(gb, points_b, r_lab, downsample) != Some(kb) {
                    continue;
                }
                matched.push((ia, ib));
            }
        }
    }
    matched.sort_unstable();

    let only_a: HashSet<u64> = ids_a.keys().filter(|id| !ids_b.contains_key(id)).cloned().collect();
    let only_b: HashSet<u64> = ids_b.keys().filter(|id| !ids_a.contains_key(id)).cloned().collect();

    let mut unmatched_a = Vec::new();
    for y in 0..mask_a.height {
        for x in 0..mask_a.width {
            if !mask_a.get(x, y) {
                continue;
            }
            let cell = GridCoord::new(x, y);
            if let Some(k) = cell_owner(cell, points_a, r_lab, downsample) {
                if only_a.contains(&points_a[k].id) {
                    unmatched_a.push(idx_a[&(x, y)]);
                }
            }
        }
    }
    let mut unmatched_b = Vec::new();
    for y in 0..mask_b.height {
        for x in 0..mask_b.width {
            if !mask_b.get(x, y) {
                continue;
            }
            let cell = GridCoord::new(x, y);
            if let Some(k) = cell_owner(cell, points_b, r_lab, downsample) {
                if only_b.contains(&points_b[k].id) {
                    unmatched_b.push(idx_b[&(x, y)]);
                }
            }
        }
    }
    unmatched_a.sort_unstable();
    unmatched_b.sort_unstable();
    Ok(MatchLabels {
        matched,
        unmatched_a,
        unmatched_b,
    })
}

fn lookup(
    idx: &HashMap<(usize, usize), usize>,
    cell: (i64, i64),
    mask: &BinaryMask,
) -> Option<usize> {
    if cell.0 < 0 || cell.1 < 0 || cell.0 >= mask.width as i64 || cell.1 >= mask.height as i64 {
        return None;
    }
    idx.get(&(cell.0 as usize, cell.1 as usize)).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(w: usize, h: usize) -> BinaryMask {
        BinaryMask::all(w, h, true)
    }

    fn pt(id: u64, x: f64, y: f64) -> PointAnnotation {
        PointAnnotation { id, x, y }
    }

    #[test]
    fn identical_frames_produce_the_offset_grid() {
        let points = [pt(1, 64.0, 64.0)];
        let mask = full_mask(16, 16);
        let labels = extend_labels(&points, &points, &mask, &mask, 2, 8).unwrap();
        assert_eq!(labels.matched.len(), 9);
        assert!(labels.unmatched_a.is_empty());
        assert!(labels.unmatched_b.is_empty());
        // identical frames: every pair is (i, i)
        for (i, j) in &labels.matched {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn lone_identity_fills_the_unmatched_side() {
        let points_a = [pt(7, 64.0, 64.0)];
        let mask = full_mask(16, 16);
        let labels = extend_labels(&points_a, &[], &mask, &mask, 2, 8).unwrap();
        assert!(labels.matched.is_empty());
        assert_eq!(labels.unmatched_a.len(), 9);
        assert!(labels.unmatched_b.is_empty());
    }

    #[test]
    fn contested_cells_go_to_the_nearest_center() {
        // Two heads 2 cells apart; their radius-2 windows overlap.
        let points = [pt(1, 64.0, 64.0), pt(2, 80.0, 64.0)];
        let mask = full_mask(16, 16);
        let labels = extend_labels(&points, &points, &mask, &mask, 2, 8).unwrap();
        // Oracle: exhaustive per-cell ownership scan.
        let ds = 8.0;
        for y in 0..16usize {
            for x in 0..16usize {
                let owner = cell_owner(GridCoord::new(x, y), &points, 2, 8);
                let mut best: Option<(f64, u64)> = None;
                for p in &points {
                    let (cx, cy) = center_cell(p, 8);
                    let dx = (x as i64 - cx).unsigned_abs();
                    let dy = (y as i64 - cy).unsigned_abs();
                    if dx.max(dy) >= 2 {
                        continue;
                    }
                    let fx = x as f64 - p.x / ds;
                    let fy = y as f64 - p.y / ds;
                    let d2 = fx * fx + fy * fy;
                    match best {
                        Some((bd, bid)) if bd < d2 || (bd == d2 && bid < p.id) => {}
                        _ => best = Some((d2, p.id)),
                    }
                }
                assert_eq!(owner.map(|k| points[k].id), best.map(|(_, id)| id));
            }
        }
        // Both identities shared: everything labeled matched, one pair per
        // owned offset cell on each side.
        assert!(labels.unmatched_a.is_empty() && labels.unmatched_b.is_empty());
        assert!(!labels.matched.is_empty());
        // No duplicated descriptor index on either side.
        let mut lhs: Vec<usize> = labels.matched.iter().map(|(i, _)| *i).collect();
        lhs.sort_unstable();
        lhs.dedup();
        assert_eq!(lhs.len(), labels.matched.len());
    }

    #[test]
    fn swapping_frames_exchanges_the_unmatched_sets() {
        let points_a = [pt(1, 40.0, 40.0), pt(2, 100.0, 100.0)];
        let points_b = [pt(1, 48.0, 40.0), pt(3, 80.0, 72.0)];
        let mask = full_mask(16, 16);
        let fwd = extend_labels(&points_a, &points_b, &mask, &mask, 2, 8).unwrap();
        let rev = extend_labels(&points_b, &points_a, &mask, &mask, 2, 8).unwrap();
        let mut swapped: Vec<(usize, usize)> = fwd.matched.iter().map(|(i, j)| (*j, *i)).collect();
        swapped.sort_unstable();
        assert_eq!(rev.matched, swapped);
        assert_eq!(rev.unmatched_a, fwd.unmatched_b);
        assert_eq!(rev.unmatched_b, fwd.unmatched_a);
    }

    #[test]
    fn tie_breaks_toward_the_lower_id() {
        // Centers equidistant from the midpoint cell.
        let points = [pt(9, 56.0, 64.0), pt(4, 72.0, 64.0)];
        let owner = cell_owner(GridCoord::new(8, 8), &points, 2, 8);
        assert_eq!(owner.map(|k| points[k].id), Some(4));
    }
}
