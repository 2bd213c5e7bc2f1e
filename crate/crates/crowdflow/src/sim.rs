//! Synthetic moving-camera crowd scenes with exact ground truth: pedestrian
//! trajectories with identities, a panning camera window, per-frame
//! annotations, rendered densities, descriptor feature fields, and oracle
//! flow sets and correspondence labels.
//!
//! Feature construction: every cell within the head footprint (Chebyshev
//! radius `footprint_radius` of the projected center, contested cells going
//! to the nearest center) carries `e_id + g(offset) + noise`, where `e_id`
//! is a seeded per-identity base vector and `g` is a seeded per-offset
//! vector shared across identities — so identity, not local texture, is the
//! only reliable matching cue. Background cells carry pure noise.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{mask_from_density, render_density, DensityMap, GridCoord, PointAnnotation};
use crate::seeds::{stream_rng, sub_seed, Stream};
use crate::train::labels::{extend_labels, MatchLabels};

/// One simulated pedestrian: identity, entry tick, and one position per
/// tick of its lifespan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u64,
    pub entry: usize,
    pub path: Vec<(f64, f64)>,
}

impl Pedestrian {
    /// World position at a tick, if alive then.
    pub fn position_at(&self, tick: usize) -> Option<(f64, f64)> {
        if tick < self.entry {
            return None;
        }
        self.path.get(tick - self.entry).copied()
    }

    pub fn exit(&self) -> usize {
        self.entry + self.path.len()
    }
}

/// The simulated world over a fixed tick range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldScene {
    pub seed: u64,
    pub ticks: usize,
    pub world_width: f64,
    pub world_height: f64,
    pub pedestrians: Vec<Pedestrian>,
}

/// Camera window origin per tick; the window never leaves the world.
///
/// The camera also owns the annotation geometry. Head positions are
/// quantized to the sensor cell grid (`cell` pixels per cell): descriptor
/// coordinates cannot resolve sub-cell positions, and quantized centers
/// keep every head's above-threshold mask at a constant cell count across
/// frames. Without that, a head's mask grows or shrinks with its
/// fractional position, and surplus cells on one side of a pair have no
/// partners — mass the transport marginals then force into the dustbin as
/// phantom flow. `margin_cells` restricts annotation to centers whose full
/// label window stays on the grid, for the same reason at the window
/// borders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub width: f64,
    pub height: f64,
    pub cell: f64,
    pub margin_cells: usize,
    pub origins: Vec<(f64, f64)>,
}

impl CameraPath {
    pub fn origin(&self, tick: usize) -> (f64, f64) {
        self.origins[tick]
    }

    /// Constant-velocity horizontal pan from the world origin.
    pub fn pan(cfg: &Config) -> CameraPath {
        CameraPath {
            width: cfg.window_width as f64,
            height: cfg.window_height as f64,
            cell: cfg.r_ds as f64,
            margin_cells: cfg.r_lab.saturating_sub(1),
            origins: (0..cfg.ticks).map(|t| (cfg.cam_speed * t as f64, 0.0)).collect(),
        }
    }
}

/// Visible pedestrians at one tick, in frame-pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame: usize,
    pub points: Vec<PointAnnotation>,
}

impl FrameAnnotation {
    pub fn ids(&self) -> BTreeSet<u64> {
        self.points.iter().map(|p| p.id).collect()
    }
}

/// Generate trajectories: an initial population plus Poisson-scheduled
/// arrivals, walked jointly tick by tick. Each pedestrian follows a heading
/// with Gaussian jitter; pairs closer than `min_separation` push each other
/// apart (heads do not interpenetrate at feature resolution), with the
/// total per-tick displacement capped at `ped_speed`. Deterministic in
/// (config, seed).
pub fn generate_scene(cfg: &Config, seed: u64, id_offset: u64) -> Result<WorldScene> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::from_seed_u64(seed);
    // Pedestrians inhabit the vertical interior band whose quantized cells
    // always pass the camera's annotation margin: visibility then changes
    // only through horizontal window motion, which the monotone pan makes
    // one-way.
    let ds = cfg.r_ds as f64;
    let mc = cfg.r_lab.saturating_sub(1) as f64;
    let y_lo = (mc - 0.5) * ds + 1e-9;
    let y_hi = ((cfg.world_height / ds - mc - 0.5) * ds - 1e-9).max(y_lo + 1e-6);

    struct Live {
        index: usize,
        pos: (f64, f64),
        heading: f64,
        speed: f64,
        exit: usize,
    }
    let mut pedestrians: Vec<Pedestrian> = Vec::new();
    let mut live: Vec<Live> = Vec::new();
    let jitter = Normal::new(0.0, cfg.heading_jitter.max(1e-12)).expect("valid std");
    let sep = cfg.min_separation;

    let mut spawn = |tick: usize,
                     rng: &mut rand_chacha::ChaCha8Rng,
                     pedestrians: &mut Vec<Pedestrian>,
                     live: &mut Vec<Live>| {
        let lifespan = rng.gen_range(cfg.lifespan_min..=cfg.lifespan_max);
        let mut pos = (0.0, 0.0);
        for _attempt in 0..100 {
            pos = (rng.gen_range(0.0..cfg.world_width), rng.gen_range(y_lo..y_hi));
            if sep <= 0.0 {
                break;
            }
            let clear = live.iter().all(|l| {
                let d2 = (l.pos.0 - pos.0).powi(2) + (l.pos.1 - pos.1).powi(2);
                d2 >= sep * sep
            });
            if clear {
                break;
            }
        }
        let speed = if cfg.ped_speed > 0.0 {
            rng.gen_range(0.4..1.0) * cfg.ped_speed
        } else {
            0.0
        };
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let index = pedestrians.len();
        pedestrians.push(Pedestrian {
            id: id_offset + index as u64,
            entry: tick,
            path: vec![pos],
        });
        live.push(Live {
            index,
            pos,
            heading,
            speed,
            exit: tick + lifespan,
        });
    };

    let initial = if cfg.count_max == 0 {
        0
    } else {
        rng.gen_range(cfg.count_min..=cfg.count_max)
    };
    for _ in 0..initial {
        spawn(0, &mut rng, &mut pedestrians, &mut live);
    }
    let poisson = if cfg.spawn_rate > 0.0 {
        Some(
            Poisson::new(cfg.spawn_rate)
                .map_err(|e| Error::Config(format!("invalid spawn_rate: {e}")))?,
        )
    } else {
        None
    };

    for tick in 1..cfg.ticks {
        live.retain(|l| l.exit > tick);
        // Heading step for everyone, then one symmetric separation pass.
        let mut proposed: Vec<(f64, f64)> = Vec::with_capacity(live.len());
        for l in live.iter_mut() {
            l.heading += jitter.sample(&mut rng);
            proposed.push((
                l.pos.0 + l.speed * l.heading.cos(),
                l.pos.1 + l.speed * l.heading.sin(),
            ));
        }
        if sep > 0.0 {
            for i in 0..proposed.len() {
                for j in (i + 1)..proposed.len() {
                    let dx = proposed[j].0 - proposed[i].0;
                    let dy = proposed[j].1 - proposed[i].1;
                    let d = (dx * dx + dy * dy).sqrt();
                    if d < sep && d > 1e-9 {
                        let push = 0.5 * (sep - d) / d;
                        proposed[i].0 -= dx * push;
                        proposed[i].1 -= dy * push;
                        proposed[j].0 += dx * push;
                        proposed[j].1 += dy * push;
                    }
                }
            }
        }
        for (l, mut p) in live.iter_mut().zip(proposed) {
            // Cap the total step at the walking speed, then stay in bounds.
            let step = ((p.0 - l.pos.0).powi(2) + (p.1 - l.pos.1).powi(2)).sqrt();
            if step > cfg.ped_speed && step > 0.0 {
                let scale = cfg.ped_speed / step;
                p.0 = l.pos.0 + (p.0 - l.pos.0) * scale;
                p.1 = l.pos.1 + (p.1 - l.pos.1) * scale;
            }
            p.0 = p.0.clamp(0.0, cfg.world_width - 1e-6);
            p.1 = p.1.clamp(y_lo, y_hi - 1e-6);
            l.pos = p;
            pedestrians[l.index].path.push(p);
        }
        if let Some(poisson) = &poisson {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                spawn(tick, &mut rng, &mut pedestrians, &mut live);
            }
        }
    }
    Ok(WorldScene {
        seed,
        ticks: cfg.ticks,
        world_width: cfg.world_width,
        world_height: cfg.world_height,
        pedestrians,
    })
}

// rand_chacha's SeedableRng::seed_from_u64 pulled in via a helper so call
// sites stay short.
trait SeedFromU64 {
    fn from_seed_u64(seed: u64) -> Self;
}

impl SeedFromU64 for rand_chacha::ChaCha8Rng {
    fn from_seed_u64(seed: u64) -> Self {
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)
    }
}

/// Project the world into the camera window at one tick. Head positions
/// are quantized to the sensor grid and kept only when the whole label
/// window fits on it (see [`CameraPath`]).
pub fn annotate(scene: &WorldScene, camera: &CameraPath, tick: usize) -> FrameAnnotation {
    let (ox, oy) = camera.origin(tick);
    let ds = camera.cell;
    let mc = camera.margin_cells as f64;
    let hi_x = camera.width / ds - 1.0 - mc;
    let hi_y = camera.height / ds - 1.0 - mc;
    let mut points = Vec::new();
    for ped in &scene.pedestrians {
        if let Some((wx, wy)) = ped.position_at(tick) {
            let cx = ((wx - ox) / ds).round();
            let cy = ((wy - oy) / ds).round();
            if cx >= mc && cx <= hi_x && cy >= mc && cy <= hi_y {
                points.push(PointAnnotation {
                    id: ped.id,
                    x: cx * ds,
                    y: cy * ds,
                });
            }
        }
    }
    FrameAnnotation { frame: tick, points }
}

/// Feature-footprint owner of a grid cell: the nearest projected center
/// within Chebyshev distance `radius` (inclusive), ties toward the lower
/// identity. This inclusive rule covers the full synthetic footprint, one
/// ring wider than the strict label-extension window.
pub fn footprint_owner(
    cell: GridCoord,
    points: &[PointAnnotation],
    radius: usize,
    downsample: u32,
) -> Option<usize> {
    let ds = downsample as f64;
    let mut best: Option<(f64, u64, usize)> = None;
    for (k, p) in points.iter().enumerate() {
        let cx = (p.x / ds).round() as i64;
        let cy = (p.y / ds).round() as i64;
        let dx = cell.x as i64 - cx;
        let dy = cell.y as i64 - cy;
        if dx.unsigned_abs().max(dy.unsigned_abs()) as usize > radius {
            continue;
        }
        let fx = cell.x as f64 - p.x / ds;
        let fy = cell.y as f64 - p.y / ds;
        let d2 = fx * fx + fy * fy;
        if best.map_or(true, |(bd, bid, _)| d2 < bd || (d2 == bd && p.id < bid)) {
            best = Some((d2, p.id, k));
        }
    }
    best.map(|(_, _, k)| k)
}

/// Expected norm of an identity embedding; offset encodings carry a
/// quarter of the energy so identity, not local offset texture, dominates
/// similarities. Unit scale keeps the transport logits (lambda times the
/// similarities) in the well-conditioned range.
pub const EMBED_NORM: f64 = 1.0;
pub const OFFSET_NORM: f64 = 0.5;

/// Deterministic per-identity base embedding with norm ~[`EMBED_NORM`].
pub fn identity_embedding(master_seed: u64, id: u64, dim: usize) -> Array1<f64> {
    let mut rng = stream_rng(master_seed, Stream::Identity, id);
    let normal = Normal::new(0.0, EMBED_NORM / (dim as f64).sqrt()).expect("valid std");
    Array1::from_shape_fn(dim, |_| normal.sample(&mut rng))
}

/// Deterministic per-offset encoding shared across identities, norm
/// ~[`OFFSET_NORM`].
pub fn offset_encoding(master_seed: u64, dx: i64, dy: i64, radius: usize, dim: usize) -> Array1<f64> {
    let r = radius as i64;
    let code = ((dy + r) * (2 * r + 1) + (dx + r)) as u64;
    let mut rng = stream_rng(master_seed, Stream::Offset, code);
    let normal = Normal::new(0.0, OFFSET_NORM / (dim as f64).sqrt()).expect("valid std");
    Array1::from_shape_fn(dim, |_| normal.sample(&mut rng))
}

/// Synthesize the feature grid for one annotated frame.
pub fn synth_features(
    annotation: &FrameAnnotation,
    cfg: &Config,
    master_seed: u64,
    noise_index: u64,
) -> Array3<f64> {
    let (gw, gh) = (cfg.grid_width(), cfg.grid_height());
    let dim = cfg.desc_dim;
    let ds = cfg.r_ds as f64;
    let radius = cfg.footprint_radius;
    let mut grid = Array3::zeros((gh, gw, dim));

    if cfg.noise > 0.0 {
        let mut rng = stream_rng(master_seed, Stream::Noise, noise_index);
        // `noise` is relative to the identity embedding norm.
        let normal = Normal::new(0.0, cfg.noise * EMBED_NORM / (dim as f64).sqrt())
            .expect("valid std");
        for y in 0..gh {
            for x in 0..gw {
                for d in 0..dim {
                    grid[[y, x, d]] = normal.sample(&mut rng);
                }
            }
        }
    }

    let mut id_cache: HashMap<u64, Array1<f64>> = HashMap::new();
    let mut offset_cache: HashMap<(i64, i64), Array1<f64>> = HashMap::new();
    for y in 0..gh {
        for x in 0..gw {
            let cell = GridCoord::new(x, y);
            if let Some(k) = footprint_owner(cell, &annotation.points, radius, cfg.r_ds) {
                let p = &annotation.points[k];
                let cx = (p.x / ds).round() as i64;
                let cy = (p.y / ds).round() as i64;
                let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                let e = id_cache
                    .entry(p.id)
                    .or_insert_with(|| identity_embedding(master_seed, p.id, dim));
                let g = offset_cache
                    .entry((dx, dy))
                    .or_insert_with(|| offset_encoding(master_seed, dx, dy, radius, dim));
                for d in 0..dim {
                    grid[[y, x, d]] += e[d] + g[d];
                }
            }
        }
    }
    grid
}

/// Everything the pipeline needs for one frame pair, with oracle flow sets
/// and correspondence labels.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub frame_a: FrameAnnotation,
    pub frame_b: FrameAnnotation,
    pub density_a: DensityMap,
    pub density_b: DensityMap,
    pub features_a: Array3<f64>,
    pub features_b: Array3<f64>,
    pub shared_ids: BTreeSet<u64>,
    pub inflow_ids: BTreeSet<u64>,
    pub outflow_ids: BTreeSet<u64>,
    pub labels: MatchLabels,
}

/// Render one frame: annotation, ground-truth density, feature field.
pub fn render_frame(
    scene: &WorldScene,
    camera: &CameraPath,
    tick: usize,
    cfg: &Config,
    master_seed: u64,
    clip_index: u64,
) -> Result<(FrameAnnotation, DensityMap, Array3<f64>)> {
    let ann = annotate(scene, camera, tick);
    let density = render_density(
        &ann.points,
        cfg.sigma,
        cfg.grid_width(),
        cfg.grid_height(),
        cfg.r_ds,
    )?;
    let noise_index = sub_seed(clip_index, Stream::Noise, tick as u64);
    let features = synth_features(&ann, cfg, master_seed, noise_index);
    Ok((ann, density, features))
}

/// Render a frame pair with its oracle flow sets and labels.
pub fn render_pair(
    scene: &WorldScene,
    camera: &CameraPath,
    tick: usize,
    delta: usize,
    cfg: &Config,
    master_seed: u64,
    clip_index: u64,
) -> Result<RenderedPair> {
    if tick + delta >= scene.ticks {
        return Err(Error::Invalid(format!(
            "pair ({tick}, {}) outside scene duration {}",
            tick + delta,
            scene.ticks
        )));
    }
    let (frame_a, density_a, features_a) =
        render_frame(scene, camera, tick, cfg, master_seed, clip_index)?;
    let (frame_b, density_b, features_b) =
        render_frame(scene, camera, tick + delta, cfg, master_seed, clip_index)?;
    let ids_a = frame_a.ids();
    let ids_b = frame_b.ids();
    let shared_ids: BTreeSet<u64> = ids_a.intersection(&ids_b).cloned().collect();
    let outflow_ids: BTreeSet<u64> = ids_a.difference(&ids_b).cloned().collect();
    let inflow_ids: BTreeSet<u64> = ids_b.difference(&ids_a).cloned().collect();
    let mask_a = mask_from_density(&density_a, cfg.tau)?;
    let mask_b = mask_from_density(&density_b, cfg.tau)?;
    let labels = extend_labels(
        &frame_a.points,
        &frame_b.points,
        &mask_a,
        &mask_b,
        cfg.r_lab,
        cfg.r_ds,
    )?;
    Ok(RenderedPair {
        frame_a,
        frame_b,
        density_a,
        density_b,
        features_a,
        features_b,
        shared_ids,
        inflow_ids,
        outflow_ids,
        labels,
    })
}

/// Exact counting ground truth over a sampled clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCounts {
    /// Identities visible in at least one sampled frame.
    pub unique: usize,
    /// Identity count of the first sampled frame.
    pub first_frame: usize,
    /// Per adjacent sampled pair: (inflow, outflow) by set difference.
    pub pairs: Vec<(usize, usize)>,
    /// Sampled tick indices.
    pub sampled: Vec<usize>,
}

/// Unique-identity count over sampled frames plus per-pair set-difference
/// flows.
pub fn ground_truth_counts(
    scene: &WorldScene,
    camera: &CameraPath,
    sample_interval: usize,
) -> Result<GroundTruthCounts> {
    if sample_interval == 0 {
        return Err(Error::Invalid("sample_interval must be >= 1".into()));
    }
    let sampled: Vec<usize> = (0..scene.ticks).step_by(sample_interval).collect();
    let id_sets: Vec<BTreeSet<u64>> = sampled
        .iter()
        .map(|&t| annotate(scene, camera, t).ids())
        .collect();
    let mut union: BTreeSet<u64> = BTreeSet::new();
    for s in &id_sets {
        union.extend(s.iter().cloned());
    }
    let pairs = id_sets
        .windows(2)
        .map(|w| {
            let inflow = w[1].difference(&w[0]).count();
            let outflow = w[0].difference(&w[1]).count();
            (inflow, outflow)
        })
        .collect();
    Ok(GroundTruthCounts {
        unique: union.len(),
        first_frame: id_sets.first().map(|s| s.len()).unwrap_or(0),
        pairs,
        sampled,
    })
}

/// Ground-truth tracks of sampled frames as a metric-ready track set, in
/// grid-cell coordinates.
pub fn ground_truth_tracks(
    scene: &WorldScene,
    camera: &CameraPath,
    sampled: &[usize],
    downsample: u32,
) -> crate::tracker::TrackSet {
    let mut ts = crate::tracker::TrackSet::new();
    let ds = downsample as f64;
    let mut max_id = 0u64;
    for &t in sampled {
        let ann = annotate(scene, camera, t);
        for p in &ann.points {
            ts.tracks
                .entry(p.id)
                .or_default()
                .push(crate::tracker::TrackPoint {
                    frame: t,
                    x: p.x / ds,
                    y: p.y / ds,
                });
            max_id = max_id.max(p.id);
        }
    }
    ts.next_id = max_id + 1;
    ts
}

/// Per-clip summary used when reporting scene statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneStats {
    pub pedestrians: usize,
    pub ticks: usize,
    pub mean_visible: f64,
}

pub fn scene_stats(scene: &WorldScene, camera: &CameraPath) -> SceneStats {
    let mut visible = 0usize;
    for t in 0..scene.ticks {
        visible += annotate(scene, camera, t).points.len();
    }
    SceneStats {
        pedestrians: scene.pedestrians.len(),
        ticks: scene.ticks,
        mean_visible: visible as f64 / scene.ticks.max(1) as f64,
    }
}
