//! Density maps at feature resolution: rendering from point annotations,
//! threshold masking, peak detection, and summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell position on the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: usize,
    pub y: usize,
}

impl GridCoord {
    pub fn new(x: usize, y: usize) -> Self {
        GridCoord { x, y }
    }
}

/// One annotated head: identity plus frame-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

/// Nonnegative scalar field on a `width x height` grid of cells, each cell
/// covering `downsample x downsample` frame pixels. Values are stored
/// row-major, which is also the JSON wire layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub width: usize,
    pub height: usize,
    pub downsample: u32,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize, downsample: u32) -> Self {
        DensityMap {
            width,
            height,
            downsample,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.values[y * self.width + x]
    }

    /// Frame width in pixels covered by this grid.
    pub fn frame_width(&self) -> f64 {
        (self.width * self.downsample as usize) as f64
    }

    pub fn frame_height(&self) -> f64 {
        (self.height * self.downsample as usize) as f64
    }
}

/// Boolean grid with the same shape as the density map it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn all(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Render point annotations into a density map: one isotropic Gaussian blob
/// per point, centered at `(x, y) / downsample` in cell coordinates,
/// truncated at `4 * sigma` and normalized so each blob's on-grid cells sum
/// to exactly one. The total therefore equals the point count regardless of
/// how close a point sits to the grid border.
pub fn render_density(
    points: &[PointAnnotation],
    sigma: f64,
    width: usize,
    height: usize,
    downsample: u32,
) -> Result<DensityMap> {
    if sigma <= 0.0 {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Invalid("grid dimensions must be >= 1".into()));
    }
    let mut map = DensityMap::zeros(width, height, downsample);
    let fw = map.frame_width();
    let fh = map.frame_height();
    let ds = downsample as f64;
    let radius = 4.0 * sigma;
    for p in points {
        if !(0.0..fw).contains(&p.x) || !(0.0..fh).contains(&p.y) {
            return Err(Error::Invalid(format!(
                "point ({}, {}) outside {fw}x{fh} frame",
                p.x, p.y
            )));
        }
        let cx = p.x / ds;
        let cy = p.y / ds;
        let x0 = ((cx - radius).floor().max(0.0)) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(width - 1);
        let y0 = ((cy - radius).floor().max(0.0)) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(height - 1);
        let inv = 1.0 / (2.0 * sigma * sigma);
        let r2 = radius * radius;
        let mut weights = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
        let mut total = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r2 {
                    let w = (-d2 * inv).exp();
                    weights.push((x, y, w));
                    total += w;
                }
            }
        }
        // A point inside the frame always has its own cell within range.
        debug_assert!(total > 0.0);
        for (x, y, w) in weights {
            *map.at_mut(x, y) += w / total;
        }
    }
    Ok(map)
}

/// Threshold a density map: bit set iff the cell strictly exceeds `tau`.
pub fn mask_from_density(d: &DensityMap, tau: f64) -> Result<BinaryMask> {
    if tau < 0.0 {
        return Err(Error::Invalid(format!("tau must be >= 0, got {tau}")));
    }
    Ok(BinaryMask {
        width: d.width,
        height: d.height,
        bits: d.values.iter().map(|v| *v > tau).collect(),
    })
}

/// Cells that strictly dominate their `(2*radius+1)^2` neighborhood and
/// exceed `min_value`. Ties (equal neighbors) are rejected, so output is
/// duplicate-free; the row-major scan yields (y, x) order.
pub fn local_maxima(d: &DensityMap, min_value: f64, radius: usize) -> Result<Vec<GridCoord>> {
    if radius == 0 {
        return Err(Error::Invalid("radius must be >= 1".into()));
    }
    let mut peaks = Vec::new();
    for y in 0..d.height {
        for x in 0..d.width {
            let v = d.at(x, y);
            if v <= min_value {
                continue;
            }
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius).min(d.width - 1);
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(d.height - 1);
            let mut strict = true;
            'scan: for ny in y0..=y1 {
                for nx in x0..=x1 {
                    if (nx, ny) != (x, y) && d.at(nx, ny) >= v {
                        strict = false;
                        break 'scan;
                    }
                }
            }
            if strict {
                peaks.push(GridCoord::new(x, y));
            }
        }
    }
    Ok(peaks)
}

/// Arithmetic sum of all cells, in fixed row-major order.
pub fn density_sum(d: &DensityMap) -> f64 {
    d.values.iter().sum()
}
