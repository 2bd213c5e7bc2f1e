use crowdflow::checkpoint::Checkpoint;
use crowdflow::commands::{list_clips, load_frame};
use crowdflow::config::Config;
use crowdflow::descriptors::{extract_descriptors, FrameTag};
use crowdflow::flow::{decompose, FlowDirection};
use crowdflow::grid::{density_sum, mask_from_density};
use crowdflow::pipeline::{match_pair, oracle_matches};

fn main() {
    let dir = std::env::temp_dir().join("crowdflow_scratch_train");
    let ckpt = Checkpoint::load(&dir.join("ckpt.json")).unwrap();
    let mut cfg = Config::default();
    cfg.seed = 900;
    let clips = list_clips(&dir.join("held")).unwrap();

    for delta in [3usize, 8] {
        println!("=== interval {delta} ===");
        let mut total_err = 0.0;
        for clip in clips.iter().take(1) {
            let sampled: Vec<usize> = (0..clip.meta.frames).step_by(delta).collect();
            let mut clip_in_err = 0.0;
            for w in 0..sampled.len() - 1 {
                let (ann_a, den_a, f_a) = load_frame(clip, sampled[w]).unwrap();
                let (ann_b, den_b, f_b) = load_frame(clip, sampled[w + 1]).unwrap();
                let mask_a = mask_from_density(&den_a, cfg.tau).unwrap();
                let mask_b = mask_from_density(&den_b, cfg.tau).unwrap();
                let set_a = extract_descriptors(&f_a, &mask_a, FrameTag::First).unwrap();
                let set_b = extract_descriptors(&f_b, &mask_b, FrameTag::Second).unwrap();
                if set_a.is_empty() || set_b.is_empty() {
                    continue;
                }
                let ids_a = ann_a.ids();
                let ids_b = ann_b.ids();
                let gt_in = ids_b.difference(&ids_a).count();
                let gt_out = ids_a.difference(&ids_b).count();
                let outcome =
                    match_pair(&set_a, &set_b, &ckpt.params, &cfg.match_config()).unwrap();
                let (ora_a, ora_b) = oracle_matches(
                    &ann_a.points,
                    &ann_b.points,
                    &set_a,
                    &set_b,
                    cfg.footprint_radius + 1,
                    cfg.r_ds,
                );
                let inf = decompose(&den_b, &set_b, &outcome.match_b, FlowDirection::Inflow).unwrap();
                let out = decompose(&den_a, &set_a, &outcome.match_a, FlowDirection::Outflow).unwrap();
                let pred_in = density_sum(&inf.residual);
                let pred_out = density_sum(&out.residual);
                // disagreement with oracle on the matched/unmatched decision
                let dis_b = outcome
                    .match_b
                    .iter()
                    .zip(&ora_b)
                    .filter(|(m, o)| m.is_some() != o.is_some())
                    .count();
                let dis_a = outcome
                    .match_a
                    .iter()
                    .zip(&ora_a)
                    .filter(|(m, o)| m.is_some() != o.is_some())
                    .count();
                clip_in_err += pred_in - gt_in as f64;
                if w < 100 {
                    println!(
                        "  pair({:2},{:2}) n={:3} m={:3} | in {} pred {:5.2} | out {} pred {:5.2} | s {:+.2} res {:.1e} | dis a/b {:2}/{:2}",
                        sampled[w], sampled[w+1], set_a.len(), set_b.len(),
                        gt_in, pred_in, gt_out, pred_out,
                        outcome.diag.dustbin_score, outcome.diag.residual, dis_a, dis_b
                    );
                }
            }
            println!("  clip {}: cumulative inflow error {:+.2}", clip.meta.index, clip_in_err);
            total_err += clip_in_err.abs();
        }
        println!("  mean |cum err| over 3 clips: {:.2}", total_err / 3.0);
    }
}
