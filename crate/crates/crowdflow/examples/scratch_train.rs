use std::time::Instant;

use crowdflow::commands::{
    cmd_eval_count, cmd_simulate, cmd_train, list_clips, load_frame, CommandOpts,
};
use crowdflow::config::Config;
use crowdflow::grid::density_sum;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(250);
    let dir = std::env::temp_dir().join("crowdflow_scratch_train");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let mut cfg = Config::default();
    cfg.clips = 30;
    cfg.seed = 1;
    cfg.train_steps = steps;

    let train_dir = dir.join("train");
    let t0 = Instant::now();
    cmd_simulate(&cfg, &train_dir, &CommandOpts::default()).unwrap();
    println!("simulate train 30 clips: {:.1}s", t0.elapsed().as_secs_f64());

    let mut held = cfg.clone();
    held.seed = 900;
    held.clips = 10;
    let held_dir = dir.join("held");
    cmd_simulate(&held, &held_dir, &CommandOpts::default()).unwrap();

    let t0 = Instant::now();
    let ckpt = dir.join("ckpt.json");
    cmd_train(&cfg, &train_dir, &ckpt, None, &CommandOpts::default()).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    println!("train {steps} steps: {train_secs:.1}s");
    let log = std::fs::read_to_string(dir.join("ckpt.json.log.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if i <= 3 || i + 3 >= lines.len() || i % 40 == 0 {
            println!("  {line}");
        }
    }

    let t0 = Instant::now();
    let report = cmd_eval_count(
        &held,
        Some(&ckpt),
        &held_dir,
        &dir.join("eval_learned"),
        &CommandOpts::default(),
    )
    .unwrap();
    println!(
        "learned eval held-out: {:.1}s mae={:.3} rmse={:.3} wrae={:.2}% miae={:.3} moae={:.3}",
        t0.elapsed().as_secs_f64(),
        report.mae,
        report.rmse,
        report.wrae_percent,
        report.miae,
        report.moae
    );
    for c in &report.clips {
        println!("  gt={} pred={:.2}", c.ground_truth, c.predicted);
    }

    // Match-everything ablation: every descriptor matched means zero inflow,
    // so the video count collapses to the first frame's mass.
    let clips = list_clips(&held_dir).unwrap();
    let mut abl_err = 0.0;
    for clip in &clips {
        let sampled: Vec<usize> = (0..clip.meta.frames).step_by(held.eval_interval).collect();
        let (_, density, _) = load_frame(clip, 0).unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for &t in &sampled {
            let (ann, _, _) = load_frame(clip, t).unwrap();
            ids.extend(ann.ids());
        }
        abl_err += (ids.len() as f64 - density_sum(&density)).abs();
    }
    println!("match-everything ablation mae = {:.3}", abl_err / clips.len() as f64);

    let oracle = cmd_eval_count(
        &held,
        None,
        &held_dir,
        &dir.join("eval_oracle"),
        &CommandOpts {
            oracle: true,
            ..CommandOpts::default()
        },
    )
    .unwrap();
    println!("oracle eval held-out: mae={:.3} wrae={:.2}%", oracle.mae, oracle.wrae_percent);

    // Interval robustness.
    for delta in [3usize, 5, 8] {
        let mut c = held.clone();
        c.eval_interval = delta;
        let r = cmd_eval_count(
            &c,
            Some(&ckpt),
            &held_dir,
            &dir.join(format!("eval_d{delta}")),
            &CommandOpts::default(),
        )
        .unwrap();
        println!("  interval {delta}: mae={:.3} wrae={:.2}%", r.mae, r.wrae_percent);
    }
}
