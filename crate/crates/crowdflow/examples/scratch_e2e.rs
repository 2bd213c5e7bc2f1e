use std::time::Instant;

use crowdflow::commands::{cmd_eval_count, cmd_simulate, cmd_train, CommandOpts};
use crowdflow::config::Config;

fn main() {
    let dir = std::env::temp_dir().join("crowdflow_scratch_e2e");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let mut cfg = Config::default();
    cfg.clips = 6;
    cfg.noise = 0.0;
    cfg.seed = 7;

    let t0 = Instant::now();
    let data = dir.join("data");
    cmd_simulate(&cfg, &data, &CommandOpts::default()).unwrap();
    println!("simulate: {:.2}s", t0.elapsed().as_secs_f64());

    // Oracle counting.
    let t0 = Instant::now();
    let out = dir.join("oracle_eval");
    let opts = CommandOpts {
        oracle: true,
        ..CommandOpts::default()
    };
    let report = cmd_eval_count(&cfg, None, &data, &out, &opts).unwrap();
    println!(
        "oracle eval: {:.2}s mae={:.4} rmse={:.4} wrae={:.3}% miae={:.4} moae={:.4}",
        t0.elapsed().as_secs_f64(),
        report.mae,
        report.rmse,
        report.wrae_percent,
        report.miae,
        report.moae
    );
    for c in &report.clips {
        println!(
            "  clip gt={} pred={:.3} frames={}",
            c.ground_truth, c.predicted, c.frames
        );
    }

    // Quick training sanity: few steps, noisy config.
    let mut tcfg = Config::default();
    tcfg.clips = 4;
    tcfg.seed = 11;
    tcfg.train_steps = 12;
    let tdata = dir.join("train_data");
    cmd_simulate(&tcfg, &tdata, &CommandOpts::default()).unwrap();
    let t0 = Instant::now();
    let ckpt = dir.join("ckpt.json");
    cmd_train(&tcfg, &tdata, &ckpt, None, &CommandOpts::default()).unwrap();
    println!("train 12 steps: {:.2}s", t0.elapsed().as_secs_f64());
    let log = std::fs::read_to_string(dir.join("ckpt.json.log.jsonl")).unwrap();
    for line in log.lines().take(13) {
        println!("  {line}");
    }

    // Learned eval with the barely-trained model, just to exercise the path.
    let t0 = Instant::now();
    let out2 = dir.join("learned_eval");
    let report = cmd_eval_count(&tcfg, Some(&ckpt), &tdata, &out2, &CommandOpts::default()).unwrap();
    println!(
        "learned eval (12-step model, train set): {:.2}s mae={:.3} wrae={:.2}%",
        t0.elapsed().as_secs_f64(),
        report.mae,
        report.wrae_percent
    );
}
