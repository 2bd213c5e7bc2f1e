//! Descriptor-voting tracking: pixel-level matches vote for pedestrian-level
//! associations, the Hungarian algorithm resolves them, and identities
//! propagate across frames. Includes point-based MOTA / IDF1 scoring.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::grid::{local_maxima, DensityMap, GridCoord};

/// Detected pedestrian positions for one frame (density peaks).
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub coords: Vec<GridCoord>,
}

impl PeakSet {
    pub fn new(coords: Vec<GridCoord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &coords {
            if !seen.insert((c.x, c.y)) {
                return Err(Error::Invalid(format!(
                    "duplicate peak at ({}, {})",
                    c.x, c.y
                )));
            }
        }
        Ok(PeakSet { coords })
    }

    /// Detect peaks in a global density map.
    pub fn from_density(d: &DensityMap, min_value: f64, radius: usize) -> Result<Self> {
        Ok(PeakSet {
            coords: local_maxima(d, min_value, radius)?,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Index of the Euclidean-nearest peak; ties break toward the smaller index.
pub fn nearest_pedestrian(coord: GridCoord, peaks: &PeakSet) -> Result<usize> {
    if peaks.is_empty() {
        return Err(Error::Invalid("peak set is empty".into()));
    }
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (k, p) in peaks.coords.iter().enumerate() {
        let dx = coord.x as f64 - p.x as f64;
        let dy = coord.y as f64 - p.y as f64;
        let d2 = dx * dx + dy * dy;
        if d2 < best_d2 {
            best_d2 = d2;
            best = k;
        }
    }
    Ok(best)
}

/// Vote tally between frame-t and frame-(t+delta) pedestrians.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingMatrix {
    pub votes: Array2<u64>,
}

impl VotingMatrix {
    pub fn total(&self) -> u64 {
        self.votes.iter().sum()
    }
}

/// Accumulate votes from both match directions: every matched descriptor on
/// either side maps its two endpoints to their nearest peaks and votes once,
/// so a mutual pixel match contributes up to two votes.
pub fn build_votes(
    descs_a: &DescriptorSet,
    descs_b: &DescriptorSet,
    match_a: &[Option<usize>],
    match_b: &[Option<usize>],
    peaks_a: &PeakSet,
    peaks_b: &PeakSet,
) -> Result<VotingMatrix> {
    if match_a.len() != descs_a.len() || match_b.len() != descs_b.len() {
        return Err(Error::Invalid(
            "match arrays must cover their descriptor sets".into(),
        ));
    }
    let mut votes = Array2::zeros((peaks_a.len(), peaks_b.len()));
    if peaks_a.is_empty() || peaks_b.is_empty() {
        return Ok(VotingMatrix { votes });
    }
    for (i, m) in match_a.iter().enumerate() {
        if let Some(j) = m {
            if *j >= descs_b.len() {
                return Err(Error::Invalid(format!("match target {j} out of range")));
            }
            let ka = nearest_pedestrian(descs_a.items[i].coord, peaks_a)?;
            let kb = nearest_pedestrian(descs_b.items[*j].coord, peaks_b)?;
            votes[[ka, kb]] += 1;
        }
    }
    for (j, m) in match_b.iter().enumerate() {
        if let Some(i) = m {
            if *i >= descs_a.len() {
                return Err(Error::Invalid(format!("match target {i} out of range")));
            }
            let ka = nearest_pedestrian(descs_a.items[*i].coord, peaks_a)?;
            let kb = nearest_pedestrian(descs_b.items[j].coord, peaks_b)?;
            votes[[ka, kb]] += 1;
        }
    }
    Ok(VotingMatrix { votes })
}

/// Minimum-cost one-to-one assignment (shortest augmenting path); requires
/// `rows <= cols`. Returns the column chosen for each row.
fn jv_assign(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m, "jv_assign needs rows <= cols");
    let mut job: Vec<Option<usize>> = vec![None; m + 1];
    let mut ys = vec![0.0f64; n];
    let mut yt = vec![0.0f64; m + 1];
    for r in 0..n {
        let mut w_cur = m;
        job[w_cur] = Some(r);
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut prev: Vec<Option<usize>> = vec![None; m + 1];
        let mut in_tree = vec![false; m + 1];
        while let Some(j) = job[w_cur] {
            in_tree[w_cur] = true;
            let mut delta = f64::INFINITY;
            let mut w_next = w_cur;
            for w in 0..m {
                if in_tree[w] {
                    continue;
                }
                let reduced = cost[[j, w]] - ys[j] - yt[w];
                if reduced < min_to[w] {
                    min_to[w] = reduced;
                    prev[w] = Some(w_cur);
                }
                if min_to[w] < delta {
                    delta = min_to[w];
                    w_next = w;
                }
            }
            for w in 0..=m {
                if in_tree[w] {
                    ys[job[w].expect("tree columns carry jobs")] += delta;
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_cur = w_next;
        }
        while w_cur != m {
            let w = prev[w_cur].expect("augmenting path is connected");
            job[w_cur] = job[w];
            w_cur = w;
        }
    }
    let mut out = vec![0usize; n];
    for w in 0..m {
        if let Some(r) = job[w] {
            out[r] = w;
        }
    }
    out
}

/// Maximum-total-vote one-to-one assignment; pairs with zero votes carry no
/// evidence and are dropped from the result.
pub fn hungarian(v: &VotingMatrix) -> Vec<(usize, usize)> {
    let (n, m) = v.votes.dim();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let max_v = *v.votes.iter().max().expect("non-empty matrix") as f64;
    if max_v == 0.0 {
        return Vec::new();
    }
    let mut pairs = if n <= m {
        let cost = Array2::from_shape_fn((n, m), |(i, j)| max_v - v.votes[[i, j]] as f64);
        jv_assign(&cost)
            .into_iter()
            .enumerate()
            .map(|(r, c)| (r, c))
            .collect::<Vec<_>>()
    } else {
        let cost = Array2::from_shape_fn((m, n), |(j, i)| max_v - v.votes[[i, j]] as f64);
        jv_assign(&cost)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>()
    };
    pairs.retain(|&(r, c)| v.votes[[r, c]] > 0);
    pairs.sort_unstable();
    pairs
}

/// One tracked observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

/// Trajectories per identity plus the bookkeeping needed to extend them:
/// the identities aligned with the peak order of the last extended frame,
/// and a monotone fresh-id counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: BTreeMap<u64, Vec<TrackPoint>>,
    pub next_id: u64,
    pub last_frame_ids: Vec<u64>,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of distinct trajectories.
    pub fn track_count(&self) -> usize {
        self.tracks.len()
    }

    /// Sorted list of frames covered by any track.
    pub fn frames(&self) -> Vec<usize> {
        let mut fs: Vec<usize> = self
            .tracks
            .values()
            .flat_map(|t| t.iter().map(|p| p.frame))
            .collect();
        fs.sort_unstable();
        fs.dedup();
        fs
    }

    /// Observations at one frame as (id, x, y).
    pub fn at_frame(&self, frame: usize) -> Vec<(u64, f64, f64)> {
        let mut out = Vec::new();
        for (id, points) in &self.tracks {
            for p in points {
                if p.frame == frame {
                    out.push((*id, p.x, p.y));
                }
            }
        }
        out
    }

    fn push(&mut self, id: u64, frame: usize, x: f64, y: f64) {
        self.tracks.entry(id).or_default().push(TrackPoint { frame, x, y });
    }
}

/// Extend the track set at `frame` with the peaks of the new frame: matched
/// peaks inherit the identity of their frame-t counterpart, unmatched peaks
/// receive fresh identities from the monotone counter.
pub fn propagate_ids(
    assignment: &[(usize, usize)],
    mut prev: TrackSet,
    peaks_b: &PeakSet,
    frame: usize,
) -> Result<TrackSet> {
    let mut col_to_row: BTreeMap<usize, usize> = BTreeMap::new();
    for &(r, c) in assignment {
        if r >= prev.last_frame_ids.len() {
            return Err(Error::Invalid(format!(
                "assignment row {r} does not reference the previous frame's peaks"
            )));
        }
        if c >= peaks_b.len() {
            return Err(Error::Invalid(format!("assignment column {c} out of range")));
        }
        if col_to_row.insert(c, r).is_some() {
            return Err(Error::Invalid(format!(
                "column {c} assigned twice; assignment must be one-to-one"
            )));
        }
    }
    let mut new_ids = Vec::with_capacity(peaks_b.len());
    for (c, peak) in peaks_b.coords.iter().enumerate() {
        let id = match col_to_row.get(&c) {
            Some(&r) => prev.last_frame_ids[r],
            None => {
                let id = prev.next_id;
                prev.next_id += 1;
                id
            }
        };
        new_ids.push(id);
        prev.push(id, frame, peak.x as f64, peak.y as f64);
    }
    prev.last_frame_ids = new_ids;
    Ok(prev)
}

/// Point-based tracking quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub mota: f64,
    pub idf1: f64,
    pub id_switches: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub gt_detections: u64,
}

/// Greedy-free frame matching: persistent correspondences are kept while
/// within the gate, the remainder is assigned by minimum distance, and both
/// misses and spurious detections are tallied. IDF1 comes from the optimal
/// global identity pairing.
pub fn tracking_metrics(
    pred: &TrackSet,
    gt: &TrackSet,
    dist_threshold: f64,
) -> Result<TrackingReport> {
    let mut frames = gt.frames();
    for f in pred.frames() {
        if !frames.contains(&f) {
            frames.push(f);
        }
    }
    frames.sort_unstable();

    let big = 1e12;
    let mut idsw = 0u64;
    let mut false_neg = 0u64;
    let mut false_pos = 0u64;
    let mut gt_total = 0u64;
    let mut last_partner: BTreeMap<u64, u64> = BTreeMap::new();
    for &f in &frames {
        let gts = gt.at_frame(f);
        let preds = pred.at_frame(f);
        gt_total += gts.len() as u64;
        let mut gt_free: Vec<usize> = (0..gts.len()).collect();
        let mut pred_free: Vec<usize> = (0..preds.len()).collect();
        let mut matched: Vec<(usize, usize)> = Vec::new();

        // Keep persisted pairs that remain within the gate.
        gt_free.retain(|&gi| {
            let (gid, gx, gy) = gts[gi];
            if let Some(pid) = last_partner.get(&gid) {
                if let Some(pos) = pred_free.iter().position(|&pi| preds[pi].0 == *pid) {
                    let pi = pred_free[pos];
                    let d = ((gx - preds[pi].1).powi(2) + (gy - preds[pi].2).powi(2)).sqrt();
                    if d <= dist_threshold {
                        matched.push((gi, pi));
                        pred_free.remove(pos);
                        return false;
                    }
                }
            }
            true
        });

        // Assign the rest by minimum distance with gating.
        if !gt_free.is_empty() && !pred_free.is_empty() {
            let rows = gt_free.len();
            let cols = pred_free.len();
            let dist = |gi: usize, pi: usize| {
                let (_, gx, gy) = gts[gi];
                let (_, px, py) = preds[pi];
                ((gx - px).powi(2) + (gy - py).powi(2)).sqrt()
            };
            let assignment: Vec<(usize, usize)> = if rows <= cols {
                let cost = Array2::from_shape_fn((rows, cols), |(i, j)| {
                    let d = dist(gt_free[i], pred_free[j]);
                    if d <= dist_threshold {
                        d
                    } else {
                        big
                    }
                });
                jv_assign(&cost).into_iter().enumerate().collect()
            } else {
                let cost = Array2::from_shape_fn((cols, rows), |(j, i)| {
                    let d = dist(gt_free[i], pred_free[j]);
                    if d <= dist_threshold {
                        d
                    } else {
                        big
                    }
                });
                jv_assign(&cost).into_iter().enumerate().map(|(j, i)| (i, j)).collect()
            };
            for (i, j) in assignment {
                let gi = gt_free[i];
                let pi = pred_free[j];
                if dist(gi, pi) <= dist_threshold {
                    matched.push((gi, pi));
                }
            }
        }

        let matched_gt: Vec<usize> = matched.iter().map(|(g, _)| *g).collect();
        let matched_pred: Vec<usize> = matched.iter().map(|(_, p)| *p).collect();
        false_neg += (gts.len() - matched_gt.len()) as u64;
        false_pos += (preds.len() - matched_pred.len()) as u64;
        for (gi, pi) in matched {
            let gid = gts[gi].0;
            let pid = preds[pi].0;
            if let Some(prev) = last_partner.insert(gid, pid) {
                if prev != pid {
                    idsw += 1;
                }
            }
        }
    }
    let mota = if gt_total == 0 {
        0.0
    } else {
        1.0 - (false_neg + false_pos + idsw) as f64 / gt_total as f64
    };

    let idf1 = idf1_score(pred, gt, dist_threshold);
    Ok(TrackingReport {
        mota,
        idf1,
        id_switches: idsw,
        false_positives: false_pos,
        false_negatives: false_neg,
        gt_detections: gt_total,
    })
}

/// Globally optimal identity pairing: overlap(g, p) counts frames where both
/// appear within the gate; the best one-to-one pairing maximizes the total
/// overlap, and IDF1 = 2 * IDTP / (gt detections + pred detections).
fn idf1_score(pred: &TrackSet, gt: &TrackSet, gate: f64) -> f64 {
    let gt_ids: Vec<u64> = gt.tracks.keys().cloned().collect();
    let pred_ids: Vec<u64> = pred.tracks.keys().cloned().collect();
    let gt_len: usize = gt.tracks.values().map(|t| t.len()).sum();
    let pred_len: usize = pred.tracks.values().map(|t| t.len()).sum();
    if gt_len + pred_len == 0 {
        return 0.0;
    }
    if gt_ids.is_empty() || pred_ids.is_empty() {
        return 0.0;
    }
    let mut overlap = Array2::<f64>::zeros((gt_ids.len(), pred_ids.len()));
    for (gi, gid) in gt_ids.iter().enumerate() {
        let gtrack = &gt.tracks[gid];
        for (pi, pid) in pred_ids.iter().enumerate() {
            let ptrack = &pred.tracks[pid];
            let mut count = 0usize;
            for gp in gtrack {
                for pp in ptrack {
                    if gp.frame == pp.frame {
                        let d = ((gp.x - pp.x).powi(2) + (gp.y - pp.y).powi(2)).sqrt();
                        if d <= gate {
                            count += 1;
                        }
                    }
                }
            }
            overlap[[gi, pi]] = count as f64;
        }
    }
    let size = gt_ids.len().max(pred_ids.len());
    let max_o = overlap.iter().cloned().fold(0.0f64, f64::max);
    let cost = Array2::from_shape_fn((size, size), |(i, j)| {
        if i < gt_ids.len() && j < pred_ids.len() {
            max_o - overlap[[i, j]]
        } else {
            max_o
        }
    });
    let assign = jv_assign(&cost);
    let mut idtp = 0.0;
    for (i, &j) in assign.iter().enumerate() {
        if i < gt_ids.len() && j < pred_ids.len() {
            idtp += overlap[[i, j]];
        }
    }
    2.0 * idtp / (gt_len + pred_len) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{Descriptor, FrameTag};
    use crate::seeds::{stream_rng, Stream};
    use ndarray::Array1;
    use rand::Rng;

    fn peaks(coords: &[(usize, usize)]) -> PeakSet {
        PeakSet::new(coords.iter().map(|&(x, y)| GridCoord::new(x, y)).collect()).unwrap()
    }

    fn descs(coords: &[(usize, usize)]) -> DescriptorSet {
        DescriptorSet {
            items: coords
                .iter()
                .map(|&(x, y)| Descriptor {
                    vector: Array1::zeros(2),
                    coord: GridCoord::new(x, y),
                })
                .collect(),
            frame: FrameTag::First,
            grid_width: 32,
            grid_height: 32,
        }
    }

    #[test]
    fn nearest_single_peak_is_index_zero() {
        let p = peaks(&[(5, 5)]);
        assert_eq!(nearest_pedestrian(GridCoord::new(0, 0), &p).unwrap(), 0);
        assert_eq!(nearest_pedestrian(GridCoord::new(5, 5), &p).unwrap(), 0);
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = stream_rng(31, Stream::Test, 0);
        let coords: Vec<(usize, usize)> = (0..5)
            .map(|_| (rng.gen_range(0..20), rng.gen_range(0..20)))
            .collect();
        let p = peaks(&coords);
        for _ in 0..20 {
            let q = GridCoord::new(rng.gen_range(0..20), rng.gen_range(0..20));
            let got = nearest_pedestrian(q, &p).unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &(x, y)) in coords.iter().enumerate() {
                let d = ((q.x as f64 - x as f64).powi(2) + (q.y as f64 - y as f64).powi(2)).sqrt();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn nearest_rejects_empty_peaks() {
        let p = PeakSet::new(vec![]).unwrap();
        assert!(nearest_pedestrian(GridCoord::new(0, 0), &p).is_err());
    }

    #[test]
    fn no_matches_yield_zero_votes() {
        let a = descs(&[(1, 1), (2, 2)]);
        let b = descs(&[(3, 3)]);
        let v = build_votes(
            &a,
            &b,
            &[None, None],
            &[None],
            &peaks(&[(1, 1)]),
            &peaks(&[(3, 3)]),
        )
        .unwrap();
        assert_eq!(v.total(), 0);
    }

    #[test]
    fn isolated_pair_accumulates_all_votes_in_one_cell() {
        // One head per frame, three descriptors each, fully mutually matched.
        let a = descs(&[(4, 4), (5, 4), (4, 5)]);
        let b = descs(&[(8, 8), (9, 8), (8, 9)]);
        let match_a = vec![Some(0), Some(1), Some(2)];
        let match_b = vec![Some(0), Some(1), Some(2)];
        let v = build_votes(&a, &b, &match_a, &match_b, &peaks(&[(4, 4)]), &peaks(&[(8, 8)]))
            .unwrap();
        assert_eq!(v.votes[[0, 0]], 6);
        assert_eq!(v.total(), 6);
    }

    #[test]
    fn vote_budget_is_bounded_by_matched_descriptors() {
        let mut rng = stream_rng(32, Stream::Test, 1);
        let a = descs(&(0..10).map(|i| (i, 0)).collect::<Vec<_>>());
        let b = descs(&(0..8).map(|i| (i, 5)).collect::<Vec<_>>());
        let match_a: Vec<Option<usize>> = (0..10)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    Some(rng.gen_range(0..8))
                } else {
                    None
                }
            })
            .collect();
        let match_b: Vec<Option<usize>> = (0..8)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    Some(rng.gen_range(0..10))
                } else {
                    None
                }
            })
            .collect();
        let budget = match_a.iter().flatten().count() + match_b.iter().flatten().count();
        let v = build_votes(
            &a,
            &b,
            &match_a,
            &match_b,
            &peaks(&[(0, 0), (5, 0)]),
            &peaks(&[(0, 5), (5, 5)]),
        )
        .unwrap();
        assert!(v.total() as usize <= budget);
        assert_eq!(v.total() as usize, budget);
    }

    #[test]
    fn hungarian_diagonal_dominant_is_identity() {
        let mut votes = Array2::zeros((3, 3));
        for i in 0..3 {
            votes[[i, i]] = 10;
            for j in 0..3 {
                if i != j {
                    votes[[i, j]] = 1;
                }
            }
        }
        let v = VotingMatrix { votes };
        assert_eq!(hungarian(&v), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn hungarian_all_zero_is_empty() {
        let v = VotingMatrix {
            votes: Array2::zeros((3, 4)),
        };
        assert!(hungarian(&v).is_empty());
    }

    fn brute_force_best(votes: &Array2<u64>) -> u64 {
        // Enumerate all row->col injections.
        let (n, m) = votes.dim();
        fn rec(votes: &Array2<u64>, row: usize, used: &mut Vec<bool>, acc: u64, best: &mut u64) {
            let (n, m) = votes.dim();
            if row == n {
                *best = (*best).max(acc);
                return;
            }
            // allow leaving the row unassigned only when rows > cols
            if n > m {
                rec(votes, row + 1, used, acc, best);
            }
            for c in 0..m {
                if !used[c] {
                    used[c] = true;
                    rec(votes, row + 1, used, acc + votes[[row, c]], best);
                    used[c] = false;
                }
            }
        }
        let mut best = 0;
        rec(votes, 0, &mut vec![false; m], 0, &mut best);
        let _ = n;
        best
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_instances() {
        let mut rng = stream_rng(33, Stream::Test, 2);
        for _ in 0..30 {
            let n = rng.gen_range(1..=5);
            let m = rng.gen_range(1..=5);
            let votes = Array2::from_shape_fn((n, m), |_| rng.gen_range(0..20u64));
            let v = VotingMatrix {
                votes: votes.clone(),
            };
            let pairs = hungarian(&v);
            let total: u64 = pairs.iter().map(|&(r, c)| votes[[r, c]]).sum();
            assert_eq!(total, brute_force_best(&votes), "votes = {votes:?}");
        }
    }

    #[test]
    fn propagate_assigns_fresh_ids_to_new_peaks() {
        let ts = TrackSet::new();
        let out = propagate_ids(&[], ts, &peaks(&[(1, 1), (2, 2), (3, 3)]), 0).unwrap();
        assert_eq!(out.track_count(), 3);
        assert_eq!(out.last_frame_ids, vec![0, 1, 2]);
    }

    #[test]
    fn propagate_full_bijection_keeps_identities() {
        let ts = TrackSet::new();
        let ts = propagate_ids(&[], ts, &peaks(&[(1, 1), (5, 5)]), 0).unwrap();
        let before: Vec<u64> = ts.last_frame_ids.clone();
        let ts = propagate_ids(&[(0, 0), (1, 1)], ts, &peaks(&[(2, 1), (6, 5)]), 1).unwrap();
        assert_eq!(ts.last_frame_ids, before);
        assert_eq!(ts.track_count(), 2);
        // inherited + fresh = peak count
        let ts2 = propagate_ids(&[(0, 1)], ts, &peaks(&[(9, 9), (3, 1)]), 2).unwrap();
        assert_eq!(ts2.track_count(), 3);
    }

    #[test]
    fn propagate_rejects_duplicate_columns() {
        let ts = TrackSet::new();
        let ts = propagate_ids(&[], ts, &peaks(&[(1, 1), (5, 5)]), 0).unwrap();
        let err = propagate_ids(&[(0, 0), (1, 0)], ts, &peaks(&[(2, 2)]), 1);
        assert!(err.is_err());
    }

    fn two_track_sets(swap_at: Option<usize>) -> (TrackSet, TrackSet) {
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        for f in 0..10 {
            gt.push(100, f, 0.0, 0.0);
            gt.push(200, f, 0.0, 10.0);
            let (p1, p2) = match swap_at {
                Some(k) if f >= k => (2u64, 1u64),
                _ => (1u64, 2u64),
            };
            pred.push(p1, f, 0.0, 0.0);
            pred.push(p2, f, 0.0, 10.0);
        }
        gt.next_id = 201;
        pred.next_id = 3;
        (pred, gt)
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let (pred, gt) = two_track_sets(None);
        let r = tracking_metrics(&pred, &gt, 4.0).unwrap();
        assert_eq!(r.mota, 1.0);
        assert_eq!(r.idf1, 1.0);
        assert_eq!(r.id_switches, 0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let (_, gt) = two_track_sets(None);
        let pred = TrackSet::new();
        let r = tracking_metrics(&pred, &gt, 4.0).unwrap();
        assert_eq!(r.mota, 0.0);
        assert_eq!(r.idf1, 0.0);
        assert_eq!(r.false_negatives, r.gt_detections);
        assert_eq!(r.false_positives, 0);
        assert_eq!(r.id_switches, 0);
    }

    #[test]
    fn halfway_swap_costs_two_switches_and_half_idf1() {
        let (pred, gt) = two_track_sets(Some(5));
        let r = tracking_metrics(&pred, &gt, 4.0).unwrap();
        assert_eq!(r.id_switches, 2);
        assert!((r.idf1 - 0.5).abs() < 1e-12);
        assert_eq!(r.false_negatives, 0);
        assert_eq!(r.false_positives, 0);
    }
}
