//! Oracle video-level counting: decompose every sampled pair's global
//! density maps into shared and inflow/outflow parts using ground-truth
//! identities, then aggregate the video count and compare with the exact
//! unique-identity total.
//!
//! Run with: cargo run --release --example count_video

use std::collections::BTreeSet;

use crowdflow::config::Config;
use crowdflow::descriptors::{extract_descriptors, FrameTag};
use crowdflow::flow::{decompose, video_count, FlowDirection};
use crowdflow::grid::{density_sum, mask_from_density};
use crowdflow::pipeline::oracle_matches;
use crowdflow::seeds::{sub_seed, Stream};
use crowdflow::sim::{generate_scene, render_pair, CameraPath};

fn main() -> crowdflow::Result<()> {
    let mut cfg = Config::default();
    cfg.noise = 0.0;
    let scene = generate_scene(&cfg, sub_seed(cfg.seed, Stream::Scene, 3), 0)?;
    let camera = CameraPath::pan(&cfg);

    let interval = cfg.eval_interval;
    let sampled: Vec<usize> = (0..cfg.ticks).step_by(interval).collect();
    let mut unique: BTreeSet<u64> = BTreeSet::new();
    let mut inflows = Vec::new();
    let mut first_density = None;

    for w in 0..sampled.len() - 1 {
        let pair = render_pair(&scene, &camera, sampled[w], interval, &cfg, cfg.seed, 3)?;
        unique.extend(pair.frame_a.ids());
        unique.extend(pair.frame_b.ids());
        if first_density.is_none() {
            first_density = Some(pair.density_a.clone());
        }
        let mask_b = mask_from_density(&pair.density_b, cfg.tau)?;
        let set_a = extract_descriptors(
            &pair.features_a,
            &mask_from_density(&pair.density_a, cfg.tau)?,
            FrameTag::First,
        )?;
        let set_b = extract_descriptors(&pair.features_b, &mask_b, FrameTag::Second)?;
        let (_, match_b) = oracle_matches(
            &pair.frame_a.points,
            &pair.frame_b.points,
            &set_a,
            &set_b,
            cfg.footprint_radius + 1,
            cfg.r_ds,
        );
        let decomp = decompose(&pair.density_b, &set_b, &match_b, FlowDirection::Inflow)?;
        let inflow = density_sum(&decomp.residual);
        println!(
            "pair ({:2}, {:2}): true inflow {:2}, decomposed inflow mass {:6.3}",
            sampled[w],
            sampled[w] + interval,
            pair.inflow_ids.len(),
            inflow
        );
        inflows.push(decomp.residual);
    }

    let first = first_density.expect("at least one pair");
    let predicted = video_count(&first, &inflows);
    println!(
        "video count: predicted {predicted:.3} vs {} unique identities (first frame mass {:.3})",
        unique.len(),
        density_sum(&first)
    );
    Ok(())
}
