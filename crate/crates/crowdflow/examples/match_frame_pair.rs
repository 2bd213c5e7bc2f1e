//! Full pair matching on simulator output: render two frames, mask the
//! feature grids with the global density maps, extract descriptors, and
//! match them with the (untrained) attention matcher as well as the
//! identity oracle.
//!
//! Run with: cargo run --release --example match_frame_pair

use crowdflow::config::Config;
use crowdflow::descriptors::{extract_descriptors, FrameTag};
use crowdflow::grid::mask_from_density;
use crowdflow::pipeline::{match_pair, oracle_matches, MatcherParams};
use crowdflow::seeds::{stream_rng, sub_seed, Stream};
use crowdflow::sim::{generate_scene, render_pair, CameraPath};

fn main() -> crowdflow::Result<()> {
    let cfg = Config::default();
    let scene = generate_scene(&cfg, sub_seed(cfg.seed, Stream::Scene, 0), 0)?;
    let camera = CameraPath::pan(&cfg);
    let pair = render_pair(&scene, &camera, 10, 5, &cfg, cfg.seed, 0)?;

    println!(
        "frames {} and {}: {} vs {} heads ({} shared, {} inflow, {} outflow)",
        pair.frame_a.frame,
        pair.frame_b.frame,
        pair.frame_a.points.len(),
        pair.frame_b.points.len(),
        pair.shared_ids.len(),
        pair.inflow_ids.len(),
        pair.outflow_ids.len()
    );

    let mask_a = mask_from_density(&pair.density_a, cfg.tau)?;
    let mask_b = mask_from_density(&pair.density_b, cfg.tau)?;
    let set_a = extract_descriptors(&pair.features_a, &mask_a, FrameTag::First)?;
    let set_b = extract_descriptors(&pair.features_b, &mask_b, FrameTag::Second)?;
    println!("descriptors: {} vs {}", set_a.len(), set_b.len());

    let mut rng = stream_rng(cfg.seed, Stream::Init, 0);
    let params = MatcherParams::init(cfg.desc_dim, cfg.agnn_layers, cfg.encoder_layers, &mut rng);
    let outcome = match_pair(&set_a, &set_b, &params, &cfg.match_config())?;
    let matched = outcome.match_a.iter().flatten().count();
    println!(
        "untrained matcher: {matched}/{} descriptors matched, dustbin score {:.3}, \
         solver {} sweeps residual {:.1e}",
        set_a.len(),
        outcome.diag.dustbin_score,
        outcome.diag.iterations,
        outcome.diag.residual
    );

    let (oracle_a, oracle_b) = oracle_matches(
        &pair.frame_a.points,
        &pair.frame_b.points,
        &set_a,
        &set_b,
        cfg.footprint_radius + 1,
        cfg.r_ds,
    );
    println!(
        "oracle: {}/{} frame-t descriptors have a counterpart, {}/{} in frame t+d",
        oracle_a.iter().flatten().count(),
        set_a.len(),
        oracle_b.iter().flatten().count(),
        set_b.len()
    );

    // Agreement between the untrained matcher and the oracle on matched
    // pairs (the raw identity embeddings already carry most of the signal).
    let mut agree = 0usize;
    let mut total = 0usize;
    for (i, o) in oracle_a.iter().enumerate() {
        if let Some(j) = o {
            total += 1;
            if outcome.match_a[i] == Some(*j) {
                agree += 1;
            }
        }
    }
    println!("untrained matcher agrees with the oracle on {agree}/{total} matched descriptors");
    Ok(())
}
