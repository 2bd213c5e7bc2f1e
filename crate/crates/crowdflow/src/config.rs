//! Plain-text key-value configuration with exhaustive validation.
//!
//! The format is one `key = value` per line; `#` starts a comment. Unknown
//! and duplicated keys are hard errors, every field is range-checked at
//! load time, and `save` followed by `load` reproduces the value exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::MatchConfig;

/// All tunables with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Master seed; all randomness derives from it via named sub-streams.
    pub seed: u64,

    // Grid and density rendering.
    /// Cells-per-frame-pixel downsampling ratio.
    pub r_ds: u32,
    /// Gaussian blob width in cells for ground-truth density rendering.
    pub sigma: f64,
    /// Density threshold for descriptor retention.
    pub tau: f64,

    // Model dimensions.
    pub desc_dim: usize,
    pub agnn_layers: usize,
    pub encoder_layers: usize,

    // Transport matching.
    pub lambda: f64,
    pub sinkhorn_iters: usize,
    /// Early-stop residual for the standalone solver; 0 disables.
    pub sinkhorn_tol: f64,
    pub topk: usize,
    pub theta: f64,
    /// Predict the dustbin score per pair; false freezes it to a single
    /// learnable scalar.
    pub adaptive_dustbin: bool,

    // Label extension.
    pub r_lab: usize,

    // Training.
    /// Learning rate reserved for a trainable descriptor provider. The
    /// synthetic provider has no parameters, so this group is empty here.
    pub lr_provider: f64,
    /// Learning rate for the attention stack and the dustbin predictor.
    pub lr_matcher: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    /// Training frame-interval range, sampled uniformly per pair.
    pub interval_min: usize,
    pub interval_max: usize,

    // Tracking.
    /// Gating distance in cells for tracking metrics.
    pub track_gate: f64,
    /// Minimum density value for peak detection.
    pub peak_min: f64,
    /// Neighborhood radius in cells for peak detection.
    pub peak_radius: usize,
    /// Optional distance gating of votes (off by default: every matched
    /// descriptor pair votes).
    pub vote_gating: bool,
    /// Maximum endpoint-to-peak distance in cells when gating votes.
    pub vote_gate: f64,

    // Evaluation.
    /// Frame sampling interval at test time.
    pub eval_interval: usize,

    // Simulator.
    pub clips: usize,
    pub ticks: usize,
    pub window_width: u32,
    pub window_height: u32,
    pub world_width: f64,
    pub world_height: f64,
    /// Camera pan speed in frame pixels per tick.
    pub cam_speed: f64,
    /// Maximum pedestrian speed in frame pixels per tick.
    pub ped_speed: f64,
    /// Standard deviation of per-tick heading jitter (radians).
    pub heading_jitter: f64,
    pub count_min: usize,
    pub count_max: usize,
    /// Expected pedestrian spawns per tick.
    pub spawn_rate: f64,
    pub lifespan_min: usize,
    pub lifespan_max: usize,
    /// Minimum spawn separation in frame pixels; 0 disables.
    pub min_separation: f64,
    /// Feature noise level relative to unit-variance embedding entries.
    pub noise: f64,
    /// Chebyshev radius in cells of the synthetic head feature footprint.
    pub footprint_radius: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            r_ds: 8,
            sigma: 0.6,
            tau: 0.02,
            desc_dim: 32,
            agnn_layers: 4,
            encoder_layers: 1,
            lambda: 20.0,
            sinkhorn_iters: 300,
            sinkhorn_tol: 1e-9,
            topk: 4,
            theta: 0.2,
            adaptive_dustbin: true,
            r_lab: 2,
            lr_provider: 5e-5,
            lr_matcher: 1e-4,
            batch_size: 4,
            train_steps: 400,
            interval_min: 3,
            interval_max: 8,
            track_gate: 4.0,
            peak_min: 0.05,
            peak_radius: 2,
            vote_gating: false,
            vote_gate: 3.0,
            eval_interval: 5,
            clips: 1,
            ticks: 96,
            window_width: 192,
            window_height: 128,
            world_width: 640.0,
            world_height: 128.0,
            cam_speed: 4.5,
            ped_speed: 1.5,
            heading_jitter: 0.3,
            count_min: 10,
            count_max: 20,
            spawn_rate: 0.12,
            lifespan_min: 60,
            lifespan_max: 160,
            min_separation: 26.0,
            noise: 0.1,
            footprint_radius: 1,
        }
    }
}

macro_rules! config_fields {
    ($macro:ident) => {
        $macro! {
            seed: u64,
            r_ds: u32,
            sigma: f64,
            tau: f64,
            desc_dim: usize,
            agnn_layers: usize,
            encoder_layers: usize,
            lambda: f64,
            sinkhorn_iters: usize,
            sinkhorn_tol: f64,
            topk: usize,
            theta: f64,
            adaptive_dustbin: bool,
            r_lab: usize,
            lr_provider: f64,
            lr_matcher: f64,
            batch_size: usize,
            train_steps: usize,
            interval_min: usize,
            interval_max: usize,
            track_gate: f64,
            peak_min: f64,
            peak_radius: usize,
            vote_gating: bool,
            vote_gate: f64,
            eval_interval: usize,
            clips: usize,
            ticks: usize,
            window_width: u32,
            window_height: u32,
            world_width: f64,
            world_height: f64,
            cam_speed: f64,
            ped_speed: f64,
            heading_jitter: f64,
            count_min: usize,
            count_max: usize,
            spawn_rate: f64,
            lifespan_min: usize,
            lifespan_max: usize,
            min_separation: f64,
            noise: f64,
            footprint_radius: usize,
        }
    };
}

impl Config {
    pub fn from_str_strict(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            cfg.assign(key, value, lineno + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn assign(&mut self, key: &str, value: &str, lineno: usize) -> Result<()> {
        macro_rules! assign_fields {
            ($($name:ident : $ty:ty,)*) => {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.parse::<$ty>().map_err(|e| {
                            Error::Config(format!(
                                "line {lineno}: cannot parse '{value}' for key '{key}': {e}"
                            ))
                        })?;
                    })*
                    _ => {
                        return Err(Error::Config(format!(
                            "line {lineno}: unknown key '{key}'"
                        )))
                    }
                }
            };
        }
        config_fields!(assign_fields);
        Ok(())
    }

    /// Serialize in a stable order; `from_str_strict` inverts it exactly.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        macro_rules! write_fields {
            ($($name:ident : $ty:ty,)*) => {
                $(writeln!(out, "{} = {}", stringify!($name), self.$name).expect("string write");)*
            };
        }
        config_fields!(write_fields);
        out
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_strict(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        check(self.r_ds >= 1, format!("r_ds must be >= 1 (got {})", self.r_ds));
        check(self.sigma > 0.0, format!("sigma must be > 0 (got {})", self.sigma));
        check(self.tau >= 0.0, format!("tau must be >= 0 (got {})", self.tau));
        check(self.desc_dim >= 1, format!("desc_dim must be >= 1 (got {})", self.desc_dim));
        check(
            self.agnn_layers >= 1,
            format!("agnn_layers must be >= 1 (got {})", self.agnn_layers),
        );
        check(
            self.encoder_layers >= 1,
            format!("encoder_layers must be >= 1 (got {})", self.encoder_layers),
        );
        check(self.lambda > 0.0, format!("lambda must be > 0 (got {})", self.lambda));
        check(
            self.sinkhorn_iters >= 1,
            format!("sinkhorn_iters must be >= 1 (got {})", self.sinkhorn_iters),
        );
        check(
            self.sinkhorn_tol >= 0.0,
            format!("sinkhorn_tol must be >= 0 (got {})", self.sinkhorn_tol),
        );
        check(self.topk >= 1, format!("topk must be >= 1 (got {})", self.topk));
        check(
            (0.0..=1.0).contains(&self.theta),
            format!("theta must be in [0, 1] (got {})", self.theta),
        );
        check(self.r_lab >= 1, format!("r_lab must be >= 1 (got {})", self.r_lab));
        check(
            self.lr_provider >= 0.0,
            format!("lr_provider must be >= 0 (got {})", self.lr_provider),
        );
        check(
            self.lr_matcher >= 0.0,
            format!("lr_matcher must be >= 0 (got {})", self.lr_matcher),
        );
        check(self.batch_size >= 1, format!("batch_size must be >= 1 (got {})", self.batch_size));
        check(
            self.interval_min >= 1 && self.interval_min <= self.interval_max,
            format!(
                "interval range invalid ({}..{})",
                self.interval_min, self.interval_max
            ),
        );
        check(
            self.track_gate > 0.0,
            format!("track_gate must be > 0 (got {})", self.track_gate),
        );
        check(self.peak_min >= 0.0, format!("peak_min must be >= 0 (got {})", self.peak_min));
        check(
            self.peak_radius >= 1,
            format!("peak_radius must be >= 1 (got {})", self.peak_radius),
        );
        check(self.vote_gate > 0.0, format!("vote_gate must be > 0 (got {})", self.vote_gate));
        check(
            self.eval_interval >= 1,
            format!("eval_interval must be >= 1 (got {})", self.eval_interval),
        );
        check(self.clips >= 1, format!("clips must be >= 1 (got {})", self.clips));
        check(self.ticks >= 2, format!("ticks must be >= 2 (got {})", self.ticks));
        check(
            self.window_width >= self.r_ds && self.window_width % self.r_ds == 0,
            format!(
                "window_width must be a positive multiple of r_ds (got {} / {})",
                self.window_width, self.r_ds
            ),
        );
        check(
            self.window_height >= self.r_ds && self.window_height % self.r_ds == 0,
            format!(
                "window_height must be a positive multiple of r_ds (got {} / {})",
                self.window_height, self.r_ds
            ),
        );
        check(
            self.world_width >= self.window_width as f64,
            format!(
                "world_width {} smaller than window_width {}",
                self.world_width, self.window_width
            ),
        );
        check(
            self.world_height >= self.window_height as f64,
            format!(
                "world_height {} smaller than window_height {}",
                self.world_height, self.window_height
            ),
        );
        check(self.cam_speed >= 0.0, format!("cam_speed must be >= 0 (got {})", self.cam_speed));
        check(
            self.cam_speed * (self.ticks.saturating_sub(1)) as f64 + self.window_width as f64
                <= self.world_width + 1e-9,
            format!(
                "camera sweep {} + window {} exceeds world_width {}",
                self.cam_speed * (self.ticks.saturating_sub(1)) as f64,
                self.window_width,
                self.world_width
            ),
        );
        check(self.ped_speed >= 0.0, format!("ped_speed must be >= 0 (got {})", self.ped_speed));
        check(
            self.heading_jitter >= 0.0,
            format!("heading_jitter must be >= 0 (got {})", self.heading_jitter),
        );
        check(
            self.count_min <= self.count_max,
            format!("count range invalid ({}..{})", self.count_min, self.count_max),
        );
        check(
            self.spawn_rate >= 0.0,
            format!("spawn_rate must be >= 0 (got {})", self.spawn_rate),
        );
        check(
            self.lifespan_min >= 1 && self.lifespan_min <= self.lifespan_max,
            format!(
                "lifespan range invalid ({}..{})",
                self.lifespan_min, self.lifespan_max
            ),
        );
        check(
            self.min_separation >= 0.0,
            format!("min_separation must be >= 0 (got {})", self.min_separation),
        );
        check(self.noise >= 0.0, format!("noise must be >= 0 (got {})", self.noise));
        check(
            self.footprint_radius >= 1,
            format!("footprint_radius must be >= 1 (got {})", self.footprint_radius),
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Grid width in cells.
    pub fn grid_width(&self) -> usize {
        (self.window_width / self.r_ds) as usize
    }

    pub fn grid_height(&self) -> usize {
        (self.window_height / self.r_ds) as usize
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            lambda: self.lambda,
            sinkhorn_iters: self.sinkhorn_iters,
            sinkhorn_tol: self.sinkhorn_tol,
            topk: self.topk,
            theta: self.theta,
            adaptive_dustbin: self.adaptive_dustbin,
        }
    }

    /// Match configuration for the training forward pass: the unrolled
    /// solver always runs the full iteration count.
    pub fn train_match_config(&self) -> MatchConfig {
        MatchConfig {
            sinkhorn_tol: 0.0,
            ..self.match_config()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = Config::default();
        cfg.seed = 7;
        cfg.lambda = 12.5;
        cfg.adaptive_dustbin = false;
        let text = cfg.to_config_string();
        let back = Config::from_str_strict(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Config::from_str_strict("lambda = 3\nnot_a_key = 1\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = Config::from_str_strict("lambda = 3\nlambda = 4\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = Config::from_str_strict("# comment\n\nlambda = 9.5 # trailing\n").unwrap();
        assert_eq!(cfg.lambda, 9.5);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(Config::from_str_strict("theta = 1.5").is_err());
        assert!(Config::from_str_strict("sigma = 0").is_err());
        assert!(Config::from_str_strict("window_width = 100").is_err()); // not multiple of 8
        assert!(Config::from_str_strict("ticks = 1000").is_err()); // camera leaves the world
    }
}
