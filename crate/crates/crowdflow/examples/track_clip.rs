//! Descriptor-voting tracking on a noiseless clip with oracle matches:
//! density peaks give detections, matched descriptor pairs vote for
//! pedestrian-level associations, the Hungarian assignment resolves them,
//! and identities propagate frame to frame.
//!
//! Run with: cargo run --release --example track_clip

use crowdflow::config::Config;
use crowdflow::descriptors::{extract_descriptors, FrameTag};
use crowdflow::grid::mask_from_density;
use crowdflow::pipeline::oracle_matches;
use crowdflow::seeds::{sub_seed, Stream};
use crowdflow::sim::{generate_scene, ground_truth_tracks, render_pair, CameraPath};
use crowdflow::tracker::{
    build_votes, hungarian, propagate_ids, tracking_metrics, PeakSet, TrackSet,
};

fn main() -> crowdflow::Result<()> {
    let mut cfg = Config::default();
    cfg.noise = 0.0;
    cfg.ped_speed = 0.0;
    cfg.min_separation = 40.0;
    cfg.count_min = 12;
    cfg.count_max = 16;
    cfg.spawn_rate = 0.05;

    let scene = generate_scene(&cfg, sub_seed(cfg.seed, Stream::Scene, 9), 0)?;
    let camera = CameraPath::pan(&cfg);

    let mut tracks = TrackSet::new();
    let mut prev: Option<(crowdflow::sim::RenderedPair, PeakSet)> = None;
    for t in 0..cfg.ticks - 1 {
        let pair = render_pair(&scene, &camera, t, 1, &cfg, cfg.seed, 9)?;
        let peaks_a = match prev.take() {
            Some((_, peaks_b_prev)) => peaks_b_prev,
            None => {
                let p = PeakSet::from_density(&pair.density_a, cfg.peak_min, cfg.peak_radius)?;
                tracks = propagate_ids(&[], tracks, &p, t)?;
                p
            }
        };
        let peaks_b = PeakSet::from_density(&pair.density_b, cfg.peak_min, cfg.peak_radius)?;
        let set_a = extract_descriptors(
            &pair.features_a,
            &mask_from_density(&pair.density_a, cfg.tau)?,
            FrameTag::First,
        )?;
        let set_b = extract_descriptors(
            &pair.features_b,
            &mask_from_density(&pair.density_b, cfg.tau)?,
            FrameTag::Second,
        )?;
        let (match_a, match_b) = oracle_matches(
            &pair.frame_a.points,
            &pair.frame_b.points,
            &set_a,
            &set_b,
            cfg.footprint_radius + 1,
            cfg.r_ds,
        );
        let votes = build_votes(&set_a, &set_b, &match_a, &match_b, &peaks_a, &peaks_b)?;
        let assignment = hungarian(&votes);
        tracks = propagate_ids(&assignment, tracks, &peaks_b, t + 1)?;
        prev = Some((pair, peaks_b));
    }

    let sampled: Vec<usize> = (0..cfg.ticks).collect();
    let gt = ground_truth_tracks(&scene, &camera, &sampled, cfg.r_ds);
    let report = tracking_metrics(&tracks, &gt, cfg.track_gate)?;
    println!(
        "tracks: {} predicted vs {} ground-truth trajectories",
        tracks.track_count(),
        gt.track_count()
    );
    println!(
        "mota {:.3}  idf1 {:.3}  id-switches {}  fp {}  fn {}",
        report.mota, report.idf1, report.id_switches, report.false_positives, report.false_negatives
    );
    Ok(())
}
