use crowdflow::commands::{cmd_eval_count, cmd_train, CommandOpts};
use crowdflow::config::Config;

fn main() {
    let dir = std::env::temp_dir().join("crowdflow_scratch_train");
    let train_dir = dir.join("train");
    let held_dir = dir.join("held");
    let opts = CommandOpts::default();
    for seed in [1u64, 2, 3] {
        let mut cfg = Config::default();
        cfg.clips = 30;
        cfg.seed = seed;
        let mut results = Vec::new();
        for adaptive in [true, false] {
            cfg.adaptive_dustbin = adaptive;
            let name = format!("abl_{}_{}.json", seed, adaptive);
            let ckpt = dir.join(&name);
            cmd_train(&cfg, &train_dir, &ckpt, None, &opts).unwrap();
            let mut ecfg = cfg.clone();
            ecfg.seed = 900;
            let report = cmd_eval_count(
                &ecfg,
                Some(&ckpt),
                &held_dir,
                &dir.join(format!("abl_eval_{}_{}", seed, adaptive)),
                &opts,
            )
            .unwrap();
            results.push((adaptive, report.mae, report.wrae_percent));
        }
        println!(
            "seed {seed}: adaptive mae={:.3} wrae={:.2}% | frozen mae={:.3} wrae={:.2}% | adaptive wins: {}",
            results[0].1, results[0].2, results[1].1, results[1].2, results[0].1 < results[1].1
        );
    }
}
