//! Density map decomposition into shared and inflow/outflow components,
//! video-level count aggregation, and counting metrics.

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::grid::{density_sum, DensityMap};

/// Which residual the decomposition produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDirection {
    /// Residual holds mass of pedestrians leaving after frame t.
    Outflow,
    /// Residual holds mass of pedestrians arriving at frame t+delta.
    Inflow,
}

/// Cellwise split of a masked global map: every descriptor cell's value goes
/// to exactly one side, all other cells are zero in both.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDecomposition {
    pub shared: DensityMap,
    pub residual: DensityMap,
    pub direction: FlowDirection,
}

/// Route each descriptor cell's density: matched descriptors feed the shared
/// map, unmatched ones the residual.
pub fn decompose(
    global: &DensityMap,
    descs: &DescriptorSet,
    matches: &[Option<usize>],
    direction: FlowDirection,
) -> Result<FlowDecomposition> {
    if matches.len() != descs.len() {
        return Err(Error::Invalid(format!(
            "match array length {} does not cover {} descriptors",
            matches.len(),
            descs.len()
        )));
    }
    let mut shared = DensityMap::zeros(global.width, global.height, global.downsample);
    let mut residual = shared.clone();
    for (desc, m) in descs.items.iter().zip(matches) {
        let c = desc.coord;
        if c.x >= global.width || c.y >= global.height {
            return Err(Error::Invalid(format!(
                "descriptor coordinate ({}, {}) outside {}x{} grid",
                c.x, c.y, global.width, global.height
            )));
        }
        let v = global.at(c.x, c.y);
        if m.is_some() {
            *shared.at_mut(c.x, c.y) = v;
        } else {
            *residual.at_mut(c.x, c.y) = v;
        }
    }
    Ok(FlowDecomposition {
        shared,
        residual,
        direction,
    })
}

/// Video-level count: the first frame's global mass plus every subsequent
/// inflow mass.
pub fn video_count(first_global: &DensityMap, inflows: &[DensityMap]) -> f64 {
    density_sum(first_global) + inflows.iter().map(density_sum).sum::<f64>()
}

/// One evaluated clip: ground truth, prediction, sampled frame count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipCount {
    pub ground_truth: f64,
    pub predicted: f64,
    pub frames: usize,
}

/// One adjacent-pair flow comparison: ground-truth and predicted inflow and
/// outflow counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFlow {
    pub inflow: f64,
    pub inflow_predicted: f64,
    pub outflow: f64,
    pub outflow_predicted: f64,
}

/// Aggregate counting metrics.
///
/// MAE and RMSE are the plain mean absolute / root-mean-square video-level
/// errors. WRAE weights each clip's relative error by its share of sampled
/// frames: `100 * sum_i (T_i / sum_j T_j) * |y_i - yhat_i| / y_i`. MIAE and
/// MOAE are flat means of |inflow error| and |outflow error| over all
/// adjacent sampled frame pairs in all clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub mae: f64,
    pub rmse: f64,
    pub wrae_percent: f64,
    pub miae: f64,
    pub moae: f64,
    pub clips: Vec<ClipCount>,
}

/// Compute the aggregate metrics from per-clip counts and per-pair flows.
pub fn counting_metrics(clips: &[ClipCount], pairs: &[PairFlow]) -> Result<CountingReport> {
    if clips.is_empty() {
        return Err(Error::Invalid("counting metrics need at least one clip".into()));
    }
    let n = clips.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut frame_total = 0.0;
    for c in clips {
        if c.ground_truth <= 0.0 {
            return Err(Error::Invalid(format!(
                "weighted relative error undefined for ground-truth count {}",
                c.ground_truth
            )));
        }
        let e = c.ground_truth - c.predicted;
        abs_sum += e.abs();
        sq_sum += e * e;
        frame_total += c.frames as f64;
    }
    let mut wrae = 0.0;
    for c in clips {
        let w = c.frames as f64 / frame_total;
        wrae += w * (c.ground_truth - c.predicted).abs() / c.ground_truth;
    }
    let (mut miae, mut moae) = (0.0, 0.0);
    if !pairs.is_empty() {
        for p in pairs {
            miae += (p.inflow - p.inflow_predicted).abs();
            moae += (p.outflow - p.outflow_predicted).abs();
        }
        miae /= pairs.len() as f64;
        moae /= pairs.len() as f64;
    }
    Ok(CountingReport {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        wrae_percent: 100.0 * wrae,
        miae,
        moae,
        clips: clips.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{extract_descriptors, FrameTag};
    use crate::grid::{mask_from_density, render_density, PointAnnotation};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn pt(id: u64, x: f64, y: f64) -> PointAnnotation {
        PointAnnotation { id, x, y }
    }

    fn setup(points: &[PointAnnotation]) -> (crate::grid::DensityMap, DescriptorSet) {
        let global = render_density(points, 0.7, 16, 16, 8).unwrap();
        let mask = mask_from_density(&global, 0.004).unwrap();
        let grid = Array3::zeros((16, 16, 4));
        let descs = extract_descriptors(&grid, &mask, FrameTag::First).unwrap();
        (global, descs)
    }

    #[test]
    fn all_matched_puts_everything_in_shared() {
        let (global, descs) = setup(&[pt(1, 40.0, 40.0), pt(2, 90.0, 90.0)]);
        let matches = vec![Some(0); descs.len()];
        let out = decompose(&global, &descs, &matches, FlowDirection::Outflow).unwrap();
        assert_eq!(density_sum(&out.residual), 0.0);
        let masked: f64 = descs
            .items
            .iter()
            .map(|d| global.at(d.coord.x, d.coord.y))
            .sum();
        assert_abs_diff_eq!(density_sum(&out.shared), masked, epsilon = 1e-12);
    }

    #[test]
    fn all_unmatched_puts_everything_in_residual() {
        let (global, descs) = setup(&[pt(1, 40.0, 40.0)]);
        let matches = vec![None; descs.len()];
        let out = decompose(&global, &descs, &matches, FlowDirection::Inflow).unwrap();
        assert_eq!(density_sum(&out.shared), 0.0);
        assert!(density_sum(&out.residual) > 0.9);
    }

    #[test]
    fn decomposition_is_an_exact_partition_of_masked_cells() {
        let (global, descs) = setup(&[pt(1, 40.0, 40.0), pt(2, 60.0, 48.0), pt(3, 100.0, 100.0)]);
        let matches: Vec<Option<usize>> = (0..descs.len())
            .map(|i| if i % 3 == 0 { None } else { Some(i) })
            .collect();
        let out = decompose(&global, &descs, &matches, FlowDirection::Outflow).unwrap();
        for y in 0..global.height {
            for x in 0..global.width {
                let s = out.shared.at(x, y);
                let r = out.residual.at(x, y);
                let retained = descs.items.iter().any(|d| d.coord.x == x && d.coord.y == y);
                if retained {
                    assert!(s == 0.0 || r == 0.0);
                    assert_eq!(s + r, global.at(x, y));
                } else {
                    assert_eq!(s, 0.0);
                    assert_eq!(r, 0.0);
                }
            }
        }
    }

    #[test]
    fn decompose_rejects_wrong_match_length() {
        let (global, descs) = setup(&[pt(1, 40.0, 40.0)]);
        assert!(decompose(&global, &descs, &[], FlowDirection::Outflow).is_err());
    }

    #[test]
    fn video_count_without_inflows_is_the_first_frame() {
        let (global, _) = setup(&[pt(1, 40.0, 40.0), pt(2, 90.0, 90.0)]);
        assert_abs_diff_eq!(video_count(&global, &[]), density_sum(&global), epsilon = 1e-12);
    }

    #[test]
    fn video_count_accumulates_inflows() {
        let first = render_density(
            &(0..10).map(|i| pt(i, 12.0 * i as f64 + 6.0, 64.0)).collect::<Vec<_>>(),
            0.7,
            16,
            16,
            8,
        )
        .unwrap();
        let inflows: Vec<crate::grid::DensityMap> = [2usize, 0, 3]
            .iter()
            .map(|&k| {
                render_density(
                    &(0..k).map(|i| pt(100 + i as u64, 30.0 * i as f64 + 10.0, 30.0)).collect::<Vec<_>>(),
                    0.7,
                    16,
                    16,
                    8,
                )
                .unwrap()
            })
            .collect();
        assert_abs_diff_eq!(video_count(&first, &inflows), 15.0, epsilon = 0.2);
    }

    #[test]
    fn perfect_predictions_zero_all_metrics() {
        let clips = [ClipCount {
            ground_truth: 12.0,
            predicted: 12.0,
            frames: 5,
        }];
        let pairs = [PairFlow {
            inflow: 2.0,
            inflow_predicted: 2.0,
            outflow: 1.0,
            outflow_predicted: 1.0,
        }];
        let r = counting_metrics(&clips, &pairs).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.wrae_percent, 0.0);
        assert_eq!(r.miae, 0.0);
        assert_eq!(r.moae, 0.0);
    }

    #[test]
    fn single_clip_arithmetic() {
        let clips = [ClipCount {
            ground_truth: 10.0,
            predicted: 12.0,
            frames: 100,
        }];
        let r = counting_metrics(&clips, &[]).unwrap();
        assert_abs_diff_eq!(r.mae, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.wrae_percent, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn two_clip_weighted_metrics() {
        let clips = [
            ClipCount {
                ground_truth: 10.0,
                predicted: 12.0,
                frames: 100,
            },
            ClipCount {
                ground_truth: 20.0,
                predicted: 15.0,
                frames: 300,
            },
        ];
        let r = counting_metrics(&clips, &[]).unwrap();
        assert_abs_diff_eq!(r.mae, 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse, (29.0f64 / 2.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.wrae_percent, 23.75, epsilon = 1e-12);
        assert!(r.rmse >= r.mae);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let clips = [
            ClipCount { ground_truth: 10.0, predicted: 12.0, frames: 100 },
            ClipCount { ground_truth: 20.0, predicted: 15.0, frames: 300 },
            ClipCount { ground_truth: 30.0, predicted: 31.0, frames: 50 },
        ];
        let swapped = [clips[2], clips[0], clips[1]];
        let a = counting_metrics(&clips, &[]).unwrap();
        let b = counting_metrics(&swapped, &[]).unwrap();
        assert_abs_diff_eq!(a.mae, b.mae, epsilon = 1e-12);
        assert_abs_diff_eq!(a.rmse, b.rmse, epsilon = 1e-12);
        assert_abs_diff_eq!(a.wrae_percent, b.wrae_percent, epsilon = 1e-12);
    }

    #[test]
    fn zero_ground_truth_is_rejected() {
        let clips = [ClipCount {
            ground_truth: 0.0,
            predicted: 1.0,
            frames: 10,
        }];
        assert!(counting_metrics(&clips, &[]).is_err());
        assert!(counting_metrics(&[], &[]).is_err());
    }
}
