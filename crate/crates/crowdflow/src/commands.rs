//! File-based command layer: simulation, training, counting and tracking
//! evaluation, and gradient checking, with run manifests and deterministic
//! outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::descriptors::{extract_descriptors, Descriptor, DescriptorSet, FrameTag};
use crate::error::{Error, Result};
use crate::flow::{
    counting_metrics, decompose, video_count, ClipCount, CountingReport, FlowDirection, PairFlow,
};
use crate::grid::{density_sum, mask_from_density, DensityMap, GridCoord};
use crate::pipeline::{match_pair, oracle_matches, MatcherParams};
use crate::seeds::{stream_rng, sub_seed, Stream};
use crate::sim::{generate_scene, render_frame, CameraPath, FrameAnnotation, WorldScene};
use crate::tracker::{
    build_votes, hungarian, propagate_ids, tracking_metrics, PeakSet, TrackPoint, TrackSet,
    TrackingReport,
};
use crate::train::{extend_labels, grad_check, train_step, OptimizerState, TrainPair};

/// Flags shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct CommandOpts {
    pub seed: Option<u64>,
    pub threads: usize,
    pub verbose: bool,
    pub oracle: bool,
}

impl Default for CommandOpts {
    fn default() -> Self {
        CommandOpts {
            seed: None,
            threads: 1,
            verbose: false,
            oracle: false,
        }
    }
}

fn effective_config(cfg: &Config, opts: &CommandOpts) -> Config {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written to the output directory before any other file; every data output
/// references it. Timings are filled in by a rewrite when the command ends,
/// so the manifest is the one output that varies between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub config: Config,
    pub outputs: Vec<String>,
    pub timings_seconds: Option<BTreeMap<String, f64>>,
}

impl RunManifest {
    fn new(command: &str, cfg: &Config, outputs: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            outputs,
            timings_seconds: None,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Clip storage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub manifest: String,
    pub seed: u64,
    pub config: Config,
    pub scene: WorldScene,
    pub camera: CameraPath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMeta {
    pub manifest: String,
    pub index: usize,
    pub frames: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub desc_dim: usize,
    pub downsample: u32,
    pub id_offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub manifest: String,
    pub frame: usize,
    pub annotation: FrameAnnotation,
    pub density: DensityMap,
}

/// A clip directory on disk.
#[derive(Debug, Clone)]
pub struct StoredClip {
    pub dir: PathBuf,
    pub meta: ClipMeta,
}

pub fn clip_dir_name(index: usize) -> String {
    format!("clip_{index:03}")
}

fn frame_json_name(frame: usize) -> String {
    format!("frame_{frame:04}.json")
}

fn frame_bin_name(frame: usize) -> String {
    format!("frame_{frame:04}.f32")
}

fn write_features(path: &Path, features: &Array3<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(features.len() * 4);
    for v in features.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_features(path: &Path, gh: usize, gw: usize, dim: usize) -> Result<Array3<f64>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read features {}: {e}", path.display())))?;
    let expect = gh * gw * dim * 4;
    if bytes.len() != expect {
        return Err(Error::Data(format!(
            "feature file {} has {} bytes, expected {expect}",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(gh * gw * dim);
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Array3::from_shape_vec((gh, gw, dim), values)
        .map_err(|e| Error::Data(format!("feature shape mismatch: {e}")))
}

/// Clip directories under `data_dir`, sorted by name.
pub fn list_clips(data_dir: &Path) -> Result<Vec<StoredClip>> {
    let mut clips = Vec::new();
    let entries = std::fs::read_dir(data_dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", data_dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map_or(false, |n| n.starts_with("clip_"))
        })
        .collect();
    dirs.sort();
    for dir in dirs {
        let meta_path = dir.join("clip.json");
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", meta_path.display())))?;
        let meta: ClipMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("malformed {}: {e}", meta_path.display())))?;
        clips.push(StoredClip { dir, meta });
    }
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no clip_* directories under {}",
            data_dir.display()
        )));
    }
    Ok(clips)
}

/// Load one stored frame: annotation, density, features.
pub fn load_frame(
    clip: &StoredClip,
    frame: usize,
) -> Result<(FrameAnnotation, DensityMap, Array3<f64>)> {
    let json_path = clip.dir.join(frame_json_name(frame));
    let text = std::fs::read_to_string(&json_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", json_path.display())))?;
    let record: FrameRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("malformed {}: {e}", json_path.display())))?;
    if record.annotation.frame != frame {
        return Err(Error::Data(format!(
            "{} holds frame {}, expected {frame}",
            json_path.display(),
            record.annotation.frame
        )));
    }
    let features = read_features(
        &clip.dir.join(frame_bin_name(frame)),
        clip.meta.grid_height,
        clip.meta.grid_width,
        clip.meta.desc_dim,
    )?;
    Ok((record.annotation, record.density, features))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Generate scenes and write rendered clips: per-frame annotation + density
/// JSON, raw f32 feature grids, and ground-truth tracks.
pub fn cmd_simulate(cfg: &Config, out_dir: &Path, opts: &CommandOpts) -> Result<RunManifest> {
    let cfg = effective_config(cfg, opts);
    cfg.validate()?;
    let start = Instant::now();
    let mut outputs = Vec::new();
    for k in 0..cfg.clips {
        outputs.push(format!("scene_{k:03}.json"));
        outputs.push(clip_dir_name(k));
    }
    let mut manifest = RunManifest::new("simulate", &cfg, outputs);
    manifest.write(out_dir)?;

    let pool = thread_pool(opts.threads)?;
    let results: Vec<Result<()>> = pool.install(|| {
        use rayon::prelude::*;
        (0..cfg.clips)
            .into_par_iter()
            .map(|k| write_clip(&cfg, out_dir, k))
            .collect()
    });
    for r in results {
        r?;
    }

    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.timings_seconds = Some(timings);
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn write_clip(cfg: &Config, out_dir: &Path, k: usize) -> Result<()> {
    let scene_seed = sub_seed(cfg.seed, Stream::Scene, k as u64);
    let id_offset = k as u64 * 1_000_000;
    let scene = generate_scene(cfg, scene_seed, id_offset)?;
    let camera = CameraPath::pan(cfg);
    let manifest_rel = format!("../{MANIFEST_FILE}");

    let scene_file = SceneFile {
        manifest: MANIFEST_FILE.to_string(),
        seed: scene_seed,
        config: cfg.clone(),
        scene: scene.clone(),
        camera: camera.clone(),
    };
    std::fs::write(
        out_dir.join(format!("scene_{k:03}.json")),
        serde_json::to_string(&scene_file)?,
    )?;

    let clip_dir = out_dir.join(clip_dir_name(k));
    std::fs::create_dir_all(&clip_dir)?;
    let meta = ClipMeta {
        manifest: manifest_rel.clone(),
        index: k,
        frames: cfg.ticks,
        grid_width: cfg.grid_width(),
        grid_height: cfg.grid_height(),
        desc_dim: cfg.desc_dim,
        downsample: cfg.r_ds,
        id_offset,
    };
    std::fs::write(clip_dir.join("clip.json"), serde_json::to_string(&meta)?)?;

    let mut tracks = std::fs::File::create(clip_dir.join("gt_tracks.jsonl"))?;
    writeln!(
        tracks,
        "{}",
        serde_json::json!({"type": "header", "manifest": manifest_rel})
    )?;
    for t in 0..cfg.ticks {
        let (ann, density, features) = render_frame(&scene, &camera, t, cfg, cfg.seed, k as u64)?;
        let record = FrameRecord {
            manifest: manifest_rel.clone(),
            frame: t,
            annotation: ann.clone(),
            density,
        };
        std::fs::write(
            clip_dir.join(frame_json_name(t)),
            serde_json::to_string(&record)?,
        )?;
        write_features(&clip_dir.join(frame_bin_name(t)), &features)?;
        for p in &ann.points {
            writeln!(
                tracks,
                "{}",
                serde_json::json!({"frame": t, "id": p.id, "x": p.x, "y": p.y})
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// descriptor plumbing shared by train / eval / track
// ---------------------------------------------------------------------------

struct LoadedFrame {
    annotation: FrameAnnotation,
    density: DensityMap,
    descriptors: DescriptorSet,
}

fn load_descriptor_frame(clip: &StoredClip, frame: usize, cfg: &Config, tag: FrameTag) -> Result<LoadedFrame> {
    let (annotation, density, features) = load_frame(clip, frame)?;
    let mask = mask_from_density(&density, cfg.tau)?;
    let descriptors = extract_descriptors(&features, &mask, tag)?;
    Ok(LoadedFrame {
        annotation,
        density,
        descriptors,
    })
}

/// Masked density total: what the decomposition can route at all.
fn masked_total(density: &DensityMap, descs: &DescriptorSet) -> f64 {
    descs
        .items
        .iter()
        .map(|d| density.at(d.coord.x, d.coord.y))
        .sum()
}

struct PairEval {
    inflow_pred: f64,
    outflow_pred: f64,
    match_a: Vec<Option<usize>>,
    match_b: Vec<Option<usize>>,
    diag: Option<crate::matching::SinkhornDiag>,
}

/// Match one frame pair and decompose both global maps. Empty frames are
/// handled before the matcher: everything on the other side is flow.
fn eval_pair(
    a: &LoadedFrame,
    b: &LoadedFrame,
    params: Option<&MatcherParams>,
    cfg: &Config,
    oracle: bool,
) -> Result<PairEval> {
    let n = a.descriptors.len();
    let m = b.descriptors.len();
    if n == 0 || m == 0 {
        return Ok(PairEval {
            inflow_pred: masked_total(&b.density, &b.descriptors),
            outflow_pred: masked_total(&a.density, &a.descriptors),
            match_a: vec![None; n],
            match_b: vec![None; m],
            diag: None,
        });
    }
    let (match_a, match_b, diag) = if oracle {
        let (ma, mb) = oracle_matches(
            &a.annotation.points,
            &b.annotation.points,
            &a.descriptors,
            &b.descriptors,
            cfg.footprint_radius + 1,
            cfg.r_ds,
        );
        (ma, mb, None)
    } else {
        let params = params.ok_or_else(|| {
            Error::Config("a checkpoint is required unless --oracle is given".into())
        })?;
        let outcome = match_pair(&a.descriptors, &b.descriptors, params, &cfg.match_config())?;
        (outcome.match_a, outcome.match_b, Some(outcome.diag))
    };
    let out = decompose(&a.density, &a.descriptors, &match_a, FlowDirection::Outflow)?;
    let inf = decompose(&b.density, &b.descriptors, &match_b, FlowDirection::Inflow)?;
    Ok(PairEval {
        inflow_pred: density_sum(&inf.residual),
        outflow_pred: density_sum(&out.residual),
        match_a,
        match_b,
        diag,
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct TrainLogLine {
    step: u64,
    loss: f64,
    loss_raw: f64,
    grad_norm: f64,
    dustbin_mean: f64,
    dustbin_min: f64,
    dustbin_max: f64,
}

/// Sample one training pair from the stored clips; `None` when the draw
/// produced an empty frame or no labels.
fn sample_pair(
    clips: &[StoredClip],
    cfg: &Config,
    rng: &mut impl Rng,
) -> Result<Option<TrainPair>> {
    let clip = &clips[rng.gen_range(0..clips.len())];
    let delta = rng.gen_range(cfg.interval_min..=cfg.interval_max);
    if clip.meta.frames <= delta {
        return Ok(None);
    }
    let t = rng.gen_range(0..clip.meta.frames - delta);
    let a = load_descriptor_frame(clip, t, cfg, FrameTag::First)?;
    let b = load_descriptor_frame(clip, t + delta, cfg, FrameTag::Second)?;
    if a.descriptors.is_empty() || b.descriptors.is_empty() {
        return Ok(None);
    }
    let mask_a = mask_from_density(&a.density, cfg.tau)?;
    let mask_b = mask_from_density(&b.density, cfg.tau)?;
    let labels = extend_labels(
        &a.annotation.points,
        &b.annotation.points,
        &mask_a,
        &mask_b,
        cfg.r_lab,
        cfg.r_ds,
    )?;
    if labels.is_empty() {
        return Ok(None);
    }
    Ok(Some(TrainPair {
        set_a: a.descriptors,
        set_b: b.descriptors,
        labels,
    }))
}

fn sample_batch(clips: &[StoredClip], cfg: &Config, step: u64) -> Result<Vec<TrainPair>> {
    let mut rng = stream_rng(cfg.seed, Stream::Batch, step);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut attempts = 0;
    while batch.len() < cfg.batch_size {
        attempts += 1;
        if attempts > 60 * cfg.batch_size {
            return Err(Error::Data(
                "could not sample a non-empty training batch; clips look empty".into(),
            ));
        }
        if let Some(pair) = sample_pair(clips, cfg, &mut rng)? {
            batch.push(pair);
        }
    }
    Ok(batch)
}

/// Train the matcher on rendered clips. Batches are derived per step from
/// the seed, so resuming from a checkpoint replays the exact run.
pub fn cmd_train(
    cfg: &Config,
    data_dir: &Path,
    out_checkpoint: &Path,
    resume: Option<&Path>,
    opts: &CommandOpts,
) -> Result<Checkpoint> {
    let cfg = effective_config(cfg, opts);
    cfg.validate()?;
    let start = Instant::now();
    let clips = list_clips(data_dir)?;
    let out_dir = out_checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let ckpt_name = out_checkpoint
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("checkpoint.json")
        .to_string();
    let log_name = format!("{ckpt_name}.log.jsonl");
    let mut manifest = RunManifest::new("train", &cfg, vec![ckpt_name, log_name.clone()]);
    manifest.write(&out_dir)?;

    let (mut params, mut opt, start_step) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            (ckpt.params, ckpt.optimizer, ckpt.step)
        }
        None => {
            let mut rng = stream_rng(cfg.seed, Stream::Init, 0);
            (
                MatcherParams::init(cfg.desc_dim, cfg.agnn_layers, cfg.encoder_layers, &mut rng),
                OptimizerState::new(),
                0,
            )
        }
    };

    let mut log = std::fs::File::create(out_dir.join(&log_name))?;
    writeln!(
        log,
        "{}",
        serde_json::json!({"type": "header", "manifest": MANIFEST_FILE})
    )?;
    let train_cfg = cfg.train_match_config();
    for step in start_step..cfg.train_steps as u64 {
        let batch = sample_batch(&clips, &cfg, step)?;
        let stats = train_step(&batch, &mut params, &mut opt, &train_cfg, cfg.lr_matcher)?;
        let line = TrainLogLine {
            step,
            loss: stats.loss,
            loss_raw: stats.loss_raw,
            grad_norm: stats.grad_norm,
            dustbin_mean: stats.dustbin_scores.iter().sum::<f64>()
                / stats.dustbin_scores.len() as f64,
            dustbin_min: stats
                .dustbin_scores
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min),
            dustbin_max: stats
                .dustbin_scores
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
        };
        writeln!(log, "{}", serde_json::to_string(&line)?)?;
        if opts.verbose {
            println!("{}", serde_json::to_string(&line)?);
        }
    }

    let ckpt = Checkpoint {
        version: crate::checkpoint::CHECKPOINT_VERSION,
        step: cfg.train_steps as u64,
        config: cfg.clone(),
        params,
        optimizer: opt,
        manifest: Some(MANIFEST_FILE.to_string()),
    };
    ckpt.save(out_checkpoint)?;

    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.timings_seconds = Some(timings);
    manifest.write(&out_dir)?;
    Ok(ckpt)
}

// ---------------------------------------------------------------------------
// eval-count
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct PairDiagLine {
    clip: usize,
    frame: usize,
    delta: usize,
    lambda: f64,
    iterations: usize,
    residual: f64,
    dustbin_score: f64,
}

struct ClipEvalOutcome {
    count: ClipCount,
    pairs: Vec<PairFlow>,
    diags: Vec<PairDiagLine>,
}

fn eval_clip_counting(
    clip: &StoredClip,
    params: Option<&MatcherParams>,
    cfg: &Config,
    oracle: bool,
    interval: usize,
) -> Result<ClipEvalOutcome> {
    let sampled: Vec<usize> = (0..clip.meta.frames).step_by(interval).collect();
    if sampled.is_empty() {
        return Err(Error::Data(format!(
            "clip {} has no frames to sample",
            clip.meta.index
        )));
    }
    let frames: Vec<LoadedFrame> = sampled
        .iter()
        .map(|&t| load_descriptor_frame(clip, t, cfg, FrameTag::First))
        .collect::<Result<_>>()?;
    let mut ids_union: BTreeSet<u64> = BTreeSet::new();
    for f in &frames {
        ids_union.extend(f.annotation.ids());
    }
    let mut inflows = Vec::new();
    let mut pairs = Vec::new();
    let mut diags = Vec::new();
    for w in 0..frames.len().saturating_sub(1) {
        let a = &frames[w];
        let b = &frames[w + 1];
        let ids_a = a.annotation.ids();
        let ids_b = b.annotation.ids();
        let gt_in = ids_b.difference(&ids_a).count() as f64;
        let gt_out = ids_a.difference(&ids_b).count() as f64;
        let ev = eval_pair(a, b, params, cfg, oracle)?;
        let mut inflow_map = DensityMap::zeros(b.density.width, b.density.height, b.density.downsample);
        inflow_map.values[0] = ev.inflow_pred;
        inflows.push(inflow_map);
        pairs.push(PairFlow {
            inflow: gt_in,
            inflow_predicted: ev.inflow_pred,
            outflow: gt_out,
            outflow_predicted: ev.outflow_pred,
        });
        if let Some(d) = ev.diag {
            diags.push(PairDiagLine {
                clip: clip.meta.index,
                frame: sampled[w],
                delta: sampled[w + 1] - sampled[w],
                lambda: d.lambda,
                iterations: d.iterations,
                residual: d.residual,
                dustbin_score: d.dustbin_score,
            });
        }
    }
    let predicted = video_count(&frames[0].density, &inflows);
    Ok(ClipEvalOutcome {
        count: ClipCount {
            ground_truth: ids_union.len() as f64,
            predicted,
            frames: sampled.len(),
        },
        pairs,
        diags,
    })
}

/// Count unique pedestrians per clip and write the CSV table plus the JSON
/// summary.
pub fn cmd_eval_count(
    cfg: &Config,
    checkpoint: Option<&Path>,
    data_dir: &Path,
    out_dir: &Path,
    opts: &CommandOpts,
) -> Result<CountingReport> {
    let cfg = effective_config(cfg, opts);
    cfg.validate()?;
    let start = Instant::now();
    let clips = list_clips(data_dir)?;
    let params = match checkpoint {
        Some(path) => Some(Checkpoint::load(path)?.params),
        None => None,
    };
    if params.is_none() && !opts.oracle {
        return Err(Error::Config(
            "eval-count needs --checkpoint or --oracle".into(),
        ));
    }
    let mut manifest = RunManifest::new(
        "eval-count",
        &cfg,
        vec!["report.csv".to_string(), "report.json".to_string()],
    );
    manifest.write(out_dir)?;

    let interval = cfg.eval_interval;
    let pool = thread_pool(opts.threads)?;
    let outcomes: Vec<Result<ClipEvalOutcome>> = pool.install(|| {
        use rayon::prelude::*;
        clips
            .par_iter()
            .map(|clip| eval_clip_counting(clip, params.as_ref(), &cfg, opts.oracle, interval))
            .collect()
    });
    let mut counts = Vec::new();
    let mut flows = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        if opts.verbose {
            for d in &outcome.diags {
                println!("{}", serde_json::to_string(&d)?);
            }
        }
        counts.push(outcome.count);
        flows.extend(outcome.pairs);
    }
    let report = counting_metrics(&counts, &flows)?;

    let mut csv = String::new();
    csv.push_str(&format!("# manifest: {MANIFEST_FILE}\n"));
    csv.push_str("# wrae_percent = 100 * sum_i (T_i / sum_j T_j) * |y_i - yhat_i| / y_i over clips; miae/moae = flat mean absolute inflow/outflow error over all adjacent sampled pairs\n");
    csv.push_str("clip,frames,ground_truth,predicted,abs_error\n");
    for (k, c) in report.clips.iter().enumerate() {
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            c.frames,
            c.ground_truth,
            c.predicted,
            (c.ground_truth - c.predicted).abs()
        ));
    }
    std::fs::write(out_dir.join("report.csv"), csv)?;

    let summary = serde_json::json!({
        "manifest": MANIFEST_FILE,
        "definitions": {
            "mae": "mean |y - yhat| over clips",
            "rmse": "sqrt of mean squared video-level error",
            "wrae_percent": "100 * sum_i (T_i / sum_j T_j) * |y_i - yhat_i| / y_i",
            "miae": "mean |inflow - predicted inflow| over all adjacent sampled pairs",
            "moae": "mean |outflow - predicted outflow| over all adjacent sampled pairs",
        },
        "mae": report.mae,
        "rmse": report.rmse,
        "wrae_percent": report.wrae_percent,
        "miae": report.miae,
        "moae": report.moae,
        "clips": report.clips,
    });
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.timings_seconds = Some(timings);
    manifest.write(out_dir)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// track / eval-track
// ---------------------------------------------------------------------------

/// Null out matches whose endpoints sit farther than the gate from their
/// nearest peaks (optional; off by default).
fn apply_vote_gate(
    matches: &mut [Option<usize>],
    from: &DescriptorSet,
    to: &DescriptorSet,
    peaks_from: &PeakSet,
    peaks_to: &PeakSet,
    gate: f64,
) -> Result<()> {
    if peaks_from.is_empty() || peaks_to.is_empty() {
        return Ok(());
    }
    for (i, m) in matches.iter_mut().enumerate() {
        if let Some(j) = *m {
            let pa = crate::tracker::nearest_pedestrian(from.items[i].coord, peaks_from)?;
            let pb = crate::tracker::nearest_pedestrian(to.items[j].coord, peaks_to)?;
            let da = cell_distance(from.items[i].coord, peaks_from.coords[pa]);
            let db = cell_distance(to.items[j].coord, peaks_to.coords[pb]);
            if da > gate || db > gate {
                *m = None;
            }
        }
    }
    Ok(())
}

fn cell_distance(a: GridCoord, b: GridCoord) -> f64 {
    ((a.x as f64 - b.x as f64).powi(2) + (a.y as f64 - b.y as f64).powi(2)).sqrt()
}

/// Track one clip over consecutive frames; returns cell-coordinate tracks.
pub fn track_clip(
    clip: &StoredClip,
    params: Option<&MatcherParams>,
    cfg: &Config,
    oracle: bool,
) -> Result<TrackSet> {
    let mut tracks = TrackSet::new();
    let mut prev: Option<(LoadedFrame, PeakSet)> = None;
    for t in 0..clip.meta.frames {
        let frame = load_descriptor_frame(clip, t, cfg, if t == 0 { FrameTag::First } else { FrameTag::Second })?;
        let peaks = PeakSet::from_density(&frame.density, cfg.peak_min, cfg.peak_radius)?;
        match prev {
            None => {
                tracks = propagate_ids(&[], tracks, &peaks, t)?;
            }
            Some((prev_frame, prev_peaks)) => {
                let assignment = if frame.descriptors.is_empty()
                    || prev_frame.descriptors.is_empty()
                    || prev_peaks.is_empty()
                    || peaks.is_empty()
                {
                    Vec::new()
                } else {
                    let ev = eval_pair(&prev_frame, &frame, params, cfg, oracle)?;
                    let mut match_a = ev.match_a;
                    let mut match_b = ev.match_b;
                    if cfg.vote_gating {
                        apply_vote_gate(
                            &mut match_a,
                            &prev_frame.descriptors,
                            &frame.descriptors,
                            &prev_peaks,
                            &peaks,
                            cfg.vote_gate,
                        )?;
                        apply_vote_gate(
                            &mut match_b,
                            &frame.descriptors,
                            &prev_frame.descriptors,
                            &peaks,
                            &prev_peaks,
                            cfg.vote_gate,
                        )?;
                    }
                    let votes = build_votes(
                        &prev_frame.descriptors,
                        &frame.descriptors,
                        &match_a,
                        &match_b,
                        &prev_peaks,
                        &peaks,
                    )?;
                    hungarian(&votes)
                };
                tracks = propagate_ids(&assignment, tracks, &peaks, t)?;
            }
        }
        prev = Some((frame, peaks));
    }
    Ok(tracks)
}

/// Track every clip and write JSON-lines files in frame-pixel coordinates.
pub fn cmd_track(
    cfg: &Config,
    checkpoint: Option<&Path>,
    data_dir: &Path,
    out_dir: &Path,
    opts: &CommandOpts,
) -> Result<Vec<PathBuf>> {
    let cfg = effective_config(cfg, opts);
    cfg.validate()?;
    let start = Instant::now();
    let clips = list_clips(data_dir)?;
    let params = match checkpoint {
        Some(path) => Some(Checkpoint::load(path)?.params),
        None => None,
    };
    if params.is_none() && !opts.oracle {
        return Err(Error::Config("track needs --checkpoint or --oracle".into()));
    }
    let outputs: Vec<String> = clips
        .iter()
        .map(|c| format!("{}_tracks.jsonl", clip_dir_name(c.meta.index)))
        .collect();
    let mut manifest = RunManifest::new("track", &cfg, outputs.clone());
    manifest.write(out_dir)?;

    let pool = thread_pool(opts.threads)?;
    let results: Vec<Result<TrackSet>> = pool.install(|| {
        use rayon::prelude::*;
        clips
            .par_iter()
            .map(|clip| track_clip(clip, params.as_ref(), &cfg, opts.oracle))
            .collect()
    });
    let ds = cfg.r_ds as f64;
    let mut written = Vec::new();
    for (clip, tracks) in clips.iter().zip(results) {
        let tracks = tracks?;
        let path = out_dir.join(format!("{}_tracks.jsonl", clip_dir_name(clip.meta.index)));
        let mut file = std::fs::File::create(&path)?;
        writeln!(
            file,
            "{}",
            serde_json::json!({"type": "header", "manifest": MANIFEST_FILE})
        )?;
        let mut rows: Vec<(usize, u64, f64, f64)> = Vec::new();
        for (id, points) in &tracks.tracks {
            for p in points {
                rows.push((p.frame, *id, (p.x + 0.5) * ds, (p.y + 0.5) * ds));
            }
        }
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (frame, id, x, y) in rows {
            writeln!(
                file,
                "{}",
                serde_json::json!({"frame": frame, "id": id, "x": x, "y": y})
            )?;
        }
        written.push(path);
    }

    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.timings_seconds = Some(timings);
    manifest.write(out_dir)?;
    Ok(written)
}

#[derive(Debug, Deserialize)]
struct TrackRow {
    #[serde(rename = "type")]
    kind: Option<String>,
    frame: Option<usize>,
    id: Option<u64>,
    x: Option<f64>,
    y: Option<f64>,
}

/// Read a JSON-lines track file (frame-pixel coordinates) into a track set
/// in grid-cell coordinates.
pub fn load_tracks(path: &Path, downsample: u32) -> Result<TrackSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let ds = downsample as f64;
    let mut ts = TrackSet::new();
    let mut max_id = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TrackRow = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}:{}: bad track row: {e}", path.display(), lineno + 1))
        })?;
        if row.kind.as_deref() == Some("header") {
            continue;
        }
        let (frame, id, x, y) = match (row.frame, row.id, row.x, row.y) {
            (Some(f), Some(i), Some(x), Some(y)) => (f, i, x, y),
            _ => {
                return Err(Error::Data(format!(
                    "{}:{}: track row missing fields",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        ts.tracks.entry(id).or_default().push(TrackPoint {
            frame,
            x: x / ds,
            y: y / ds,
        });
        max_id = max_id.max(id);
    }
    ts.next_id = max_id + 1;
    Ok(ts)
}

/// Score a predicted track file against a ground-truth one.
pub fn cmd_eval_track(
    cfg: &Config,
    pred_path: &Path,
    gt_path: &Path,
    out_dir: &Path,
    opts: &CommandOpts,
) -> Result<TrackingReport> {
    let cfg = effective_config(cfg, opts);
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("eval-track", &cfg, vec!["track_metrics.json".to_string()]);
    manifest.write(out_dir)?;

    let pred = load_tracks(pred_path, cfg.r_ds)?;
    let gt = load_tracks(gt_path, cfg.r_ds)?;
    let pf = pred.frames();
    let gf = gt.frames();
    if pf != gf {
        return Err(Error::Data(format!(
            "frame ranges differ: predictions cover {} frames ({:?}..{:?}), ground truth {} ({:?}..{:?})",
            pf.len(),
            pf.first(),
            pf.last(),
            gf.len(),
            gf.first(),
            gf.last()
        )));
    }
    let report = tracking_metrics(&pred, &gt, cfg.track_gate)?;
    let out = serde_json::json!({
        "manifest": MANIFEST_FILE,
        "gate_cells": cfg.track_gate,
        "mota": report.mota,
        "idf1": report.idf1,
        "id_switches": report.id_switches,
        "false_positives": report.false_positives,
        "false_negatives": report.false_negatives,
        "gt_detections": report.gt_detections,
    });
    std::fs::write(
        out_dir.join("track_metrics.json"),
        serde_json::to_string_pretty(&out)?,
    )?;

    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.timings_seconds = Some(timings);
    manifest.write(out_dir)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Verify reverse-mode gradients on a small synthetic instance. Prints a
/// JSON summary and returns the worst relative error.
pub fn cmd_gradcheck(cfg: &Config, eps: f64, opts: &CommandOpts) -> Result<f64> {
    let cfg = effective_config(cfg, opts);
    let start = Instant::now();
    let (params, pair, match_cfg) = gradcheck_instance(&cfg, cfg.seed);
    let err = grad_check(&params, &pair, &match_cfg, eps)?;
    let out = serde_json::json!({
        "max_relative_error": err,
        "eps": eps,
        "parameters": params.scalar_count(),
        "descriptors": [pair.set_a.len(), pair.set_b.len()],
        "dim": params.agnn.dim,
        "agnn_layers": params.agnn.layers,
        "encoder_layers": params.dustbin.layers,
        "sinkhorn_iters": match_cfg.sinkhorn_iters,
        "seconds": start.elapsed().as_secs_f64(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(err)
}

/// The small gradient-check instance: 3-vs-4 descriptors, 8 dimensions,
/// 2 attention layers, 1 encoder layer, 30 unrolled solver iterations.
pub fn gradcheck_instance(
    cfg: &Config,
    seed: u64,
) -> (MatcherParams, TrainPair, crate::pipeline::MatchConfig) {
    let dim = 8;
    let (n, m) = (3usize, 4usize);
    let mut rng = stream_rng(seed, Stream::Test, 0);
    let params = MatcherParams::init(dim, 2, 1, &mut rng);
    let mk = |count: usize, tag: FrameTag, rng: &mut rand_chacha::ChaCha8Rng| DescriptorSet {
        items: (0..count)
            .map(|i| Descriptor {
                vector: Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0)),
                coord: GridCoord::new(1 + 2 * (i % 3), 1 + 2 * (i / 3)),
            })
            .collect(),
        frame: tag,
        grid_width: 8,
        grid_height: 8,
    };
    let set_a = mk(n, FrameTag::First, &mut rng);
    let set_b = mk(m, FrameTag::Second, &mut rng);
    let labels = crate::train::MatchLabels {
        matched: vec![(0, 0), (1, 1)],
        unmatched_a: vec![2],
        unmatched_b: vec![2, 3],
    };
    let pair = TrainPair {
        set_a,
        set_b,
        labels,
    };
    let match_cfg = crate::pipeline::MatchConfig {
        lambda: cfg.lambda.min(10.0),
        sinkhorn_iters: 30,
        sinkhorn_tol: 0.0,
        topk: cfg.topk,
        theta: cfg.theta,
        adaptive_dustbin: true,
    };
    (params, pair, match_cfg)
}

/// Convenience for tests: clip ground truth from stored annotations.
pub fn stored_clip_ground_truth(clip: &StoredClip, interval: usize) -> Result<(usize, Vec<(usize, usize)>)> {
    let sampled: Vec<usize> = (0..clip.meta.frames).step_by(interval).collect();
    let mut sets = Vec::new();
    for &t in &sampled {
        let (ann, _, _) = load_frame(clip, t)?;
        sets.push(ann.ids());
    }
    let mut union: BTreeSet<u64> = BTreeSet::new();
    for s in &sets {
        union.extend(s.iter().cloned());
    }
    let pairs = sets
        .windows(2)
        .map(|w| {
            (
                w[1].difference(&w[0]).count(),
                w[0].difference(&w[1]).count(),
            )
        })
        .collect();
    Ok((union.len(), pairs))
}

/// Used by the determinism check: every data output of a command, as
/// relative path plus content bytes, excluding the manifest (whose timings
/// are wall-clock).
pub fn output_fingerprint(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.retain(|(name, _)| !name.ends_with(MANIFEST_FILE));
    files.sort();
    Ok(files)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .to_string();
            out.push((rel, std::fs::read(&path)?));
        }
    }
    Ok(())
}

