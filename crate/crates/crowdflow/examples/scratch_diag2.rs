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
        for clip in clips.iter().take(1) {
            let sampled: Vec<usize> = (0..clip.meta.frames).step_by(delta).collect();
            let mut learned_cum = 0.0;
            let mut oracle_cum = 0.0;
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
                let outcome = match_pair(&set_a, &set_b, &ckpt.params, &cfg.match_config()).unwrap();
                let (ora_a, ora_b) = oracle_matches(
                    &ann_a.points,
                    &ann_b.points,
                    &set_a,
                    &set_b,
                    cfg.footprint_radius + 1,
                    cfg.r_ds,
                );
                let _ = ora_a;
                let pred_in = density_sum(
                    &decompose(&den_b, &set_b, &outcome.match_b, FlowDirection::Inflow)
                        .unwrap()
                        .residual,
                );
                let ora_in = density_sum(
                    &decompose(&den_b, &set_b, &ora_b, FlowDirection::Inflow)
                        .unwrap()
                        .residual,
                );
                learned_cum += pred_in - gt_in as f64;
                oracle_cum += ora_in - gt_in as f64;
                // categorize disagreements on the B side
                let mut learned_dustbins_shared = 0; // oracle says match, learned says dustbin
                let mut learned_matches_inflow = 0; // oracle says dustbin, learned says match
                let mut mass_ld = 0.0;
                let mut mass_lm = 0.0;
                for (j, (m, o)) in outcome.match_b.iter().zip(&ora_b).enumerate() {
                    let c = set_b.items[j].coord;
                    let mass = den_b.at(c.x, c.y);
                    if m.is_none() && o.is_some() {
                        learned_dustbins_shared += 1;
                        mass_ld += mass;
                    }
                    if m.is_some() && o.is_none() {
                        learned_matches_inflow += 1;
                        mass_lm += mass;
                    }
                }
                if w < 30 {
                    println!(
                        "  ({:2},{:2}) in {} | learned {:5.2} oracle {:5.2} | b-cells learned-dustbin/oracle-match {:2} (mass {:4.2}), learned-match/oracle-dustbin {:2} (mass {:4.2})",
                        sampled[w], sampled[w+1], gt_in, pred_in, ora_in,
                        learned_dustbins_shared, mass_ld, learned_matches_inflow, mass_lm
                    );
                }
            }
            println!(
                "  clip {}: learned cum {:+.2}, oracle cum {:+.2}",
                clip.meta.index, learned_cum, oracle_cum
            );
        }
    }
}
