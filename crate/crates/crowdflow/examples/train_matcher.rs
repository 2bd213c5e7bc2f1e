//! Overfit the matcher on a fixed set of simulated frame pairs, entirely in
//! memory: labels come from point-to-pixel extension, the loss reads the
//! transport plan's labeled entries, and gradients flow through the
//! unrolled solver.
//!
//! Run with: cargo run --release --example train_matcher [steps]

use crowdflow::config::Config;
use crowdflow::descriptors::{extract_descriptors, FrameTag};
use crowdflow::grid::mask_from_density;
use crowdflow::matching::reverse_topk_match;
use crowdflow::pipeline::MatcherParams;
use crowdflow::seeds::{stream_rng, sub_seed, Stream};
use crowdflow::sim::{generate_scene, render_pair, CameraPath};
use crowdflow::train::{pair_forward, train_step, OptimizerState, TrainPair};

fn main() -> crowdflow::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(120);
    let mut cfg = Config::default();
    cfg.count_min = 10;
    cfg.count_max = 14;

    let scene = generate_scene(&cfg, sub_seed(cfg.seed, Stream::Scene, 5), 0)?;
    let camera = CameraPath::pan(&cfg);

    // A fixed 4-pair batch.
    let mut batch = Vec::new();
    for (t, delta) in [(0usize, 4usize), (12, 6), (24, 3), (36, 8)] {
        let pair = render_pair(&scene, &camera, t, delta, &cfg, cfg.seed, 5)?;
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
        println!(
            "pair ({t:2}, +{delta}): {} vs {} descriptors, {} matched / {} out / {} in labels",
            set_a.len(),
            set_b.len(),
            pair.labels.matched.len(),
            pair.labels.unmatched_a.len(),
            pair.labels.unmatched_b.len()
        );
        batch.push(TrainPair {
            set_a,
            set_b,
            labels: pair.labels,
        });
    }

    let mut rng = stream_rng(cfg.seed, Stream::Init, 0);
    let mut params = MatcherParams::init(cfg.desc_dim, cfg.agnn_layers, cfg.encoder_layers, &mut rng);
    let mut opt = OptimizerState::new();
    let match_cfg = cfg.train_match_config();
    for step in 0..steps {
        let stats = train_step(&batch, &mut params, &mut opt, &match_cfg, cfg.lr_matcher)?;
        if step % 10 == 0 || step + 1 == steps {
            println!(
                "step {step:4}: loss {:8.3} (raw {:9.1}) grad-norm {:9.2} dustbin {:+.3}",
                stats.loss,
                stats.loss_raw,
                stats.grad_norm,
                stats.dustbin_scores.iter().sum::<f64>() / stats.dustbin_scores.len() as f64
            );
        }
    }

    // How many labeled matches does the trained plan recover?
    let pair = &batch[0];
    let fwd = pair_forward(&params, pair, &match_cfg)?;
    let plan = crowdflow::matching::MatchMatrix {
        plan: fwd.tape.value(fwd.plan).clone(),
        row_marginals: crowdflow::matching::augmented_marginals(pair.set_a.len(), pair.set_b.len()).0,
        col_marginals: crowdflow::matching::augmented_marginals(pair.set_a.len(), pair.set_b.len()).1,
    };
    let hard = reverse_topk_match(&plan, cfg.topk, cfg.theta)?;
    let recovered = pair
        .labels
        .matched
        .iter()
        .filter(|(i, j)| hard[*i] == Some(*j))
        .count();
    println!(
        "recovered {recovered}/{} labeled matches on the training pair",
        pair.labels.matched.len()
    );
    Ok(())
}
