//! Layered histogram-of-oriented-gradients features.
//!
//! Unlike a classic HOG descriptor, which flattens every block into one long
//! vector, the output here keeps one cell-grid matrix per orientation bin, so
//! each bin is a small image whose rows and columns follow the face geometry.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

/// Horizontal and vertical derivative images.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub gx: Array2<f64>,
    pub gy: Array2<f64>,
}

/// Orientation-binning and normalization parameters. Orientation is always
/// unsigned, in `[0, 180)` degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    pub bins: usize,
    /// Pixels per cell side.
    pub cell: usize,
    /// Cells per block side. Blocks do not overlap.
    pub block: usize,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig { bins: 9, cell: 4, block: 2, epsilon: 1e-5 }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::arg(format!("need at least 2 orientation bins, got {}", self.bins)));
        }
        if self.cell < 2 {
            return Err(Error::arg(format!("cell side must be >= 2 pixels, got {}", self.cell)));
        }
        if self.block < 1 {
            return Err(Error::arg("block side must be >= 1 cell"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::arg(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        180.0 / self.bins as f64
    }

    /// Cell-grid dimensions for an image, checking the non-overlapping block
    /// grid tiles the image exactly.
    pub fn cell_grid(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let span = self.cell * self.block;
        if !rows.is_multiple_of(span) || !cols.is_multiple_of(span) {
            return Err(Error::arg(format!(
                "image {rows}x{cols} is not divisible by cell*block = {span}"
            )));
        }
        Ok((rows / self.cell, cols / self.cell))
    }
}

/// One cell-grid matrix per orientation bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HogLayers {
    layers: Vec<Array2<f64>>,
}

impl HogLayers {
    /// Wraps per-bin matrices; all must share dims.
    pub fn from_layers(layers: Vec<Array2<f64>>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::arg("at least one layer required"))?;
        let dim = first.dim();
        if let Some((b, l)) = layers.iter().enumerate().find(|(_, l)| l.dim() != dim) {
            return Err(Error::arg(format!(
                "layer {b} is {:?}, expected {dim:?}",
                l.dim()
            )));
        }
        Ok(HogLayers { layers })
    }

    pub fn bins(&self) -> usize {
        self.layers.len()
    }

    /// (rows, cols) of every layer.
    pub fn layer_dims(&self) -> (usize, usize) {
        self.layers[0].dim()
    }

    pub fn layer(&self, bin: usize) -> &Array2<f64> {
        &self.layers[bin]
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    /// Shape string in the form `rows x cols x bins`, e.g. `14x12x9`.
    pub fn shape_string(&self) -> String {
        let (r, c) = self.layer_dims();
        format!("{r}x{c}x{}", self.bins())
    }
}

/// Centered `[-1, 0, 1]` differences with replicated borders.
pub fn gradients(img: &GrayImage) -> Result<GradientField> {
    img.ensure_pipeline_ready()?;
    let (rows, cols) = img.dims();
    let p = img.pixels();
    let gx = Array2::from_shape_fn((rows, cols), |(r, c)| {
        p[[r, (c + 1).min(cols - 1)]] - p[[r, c.saturating_sub(1)]]
    });
    let gy = Array2::from_shape_fn((rows, cols), |(r, c)| {
        p[[(r + 1).min(rows - 1), c]] - p[[r.saturating_sub(1), c]]
    });
    Ok(GradientField { gx, gy })
}

/// Unsigned orientation in degrees `[0, 180)` and gradient magnitude.
/// Orientation is 0 wherever the magnitude is 0.
pub fn orientation_magnitude(g: &GradientField) -> (Array2<f64>, Array2<f64>) {
    let mut theta = Array2::zeros(g.gx.dim());
    let mut mag = Array2::zeros(g.gx.dim());
    ndarray::Zip::from(&mut theta)
        .and(&mut mag)
        .and(&g.gx)
        .and(&g.gy)
        .for_each(|t, m, &gx, &gy| {
            let magnitude = gx.hypot(gy);
            *m = magnitude;
            *t = if magnitude == 0.0 {
                0.0
            } else {
                let mut deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
                // rem_euclid can round a tiny negative angle up to exactly 180
                if deg >= 180.0 {
                    deg -= 180.0;
                }
                deg
            };
        });
    (theta, mag)
}

/// Splits an angle between the two bins whose centers bracket it.
/// Returns `(lower_bin, upper_bin, weight_of_upper)`.
fn soft_bin(theta: f64, bins: usize) -> (usize, usize, f64) {
    let pos = theta / (180.0 / bins as f64) - 0.5;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = (lo as i64).rem_euclid(bins as i64) as usize;
    (lo, (lo + 1) % bins, frac)
}

/// Per-cell orientation histograms, shape `(cell_rows, cell_cols, bins)`.
///
/// Bin `k` is centered at `(k + 0.5) * 180 / bins` degrees and the range wraps
/// at 0/180.
pub fn cell_histograms(
    theta: &Array2<f64>,
    mag: &Array2<f64>,
    cfg: &HogConfig,
) -> Result<Array3<f64>> {
    cfg.validate()?;
    if theta.dim() != mag.dim() {
        return Err(Error::arg(format!(
            "orientation {:?} and magnitude {:?} dims differ",
            theta.dim(),
            mag.dim()
        )));
    }
    let (rows, cols) = mag.dim();
    if rows % cfg.cell != 0 || cols % cfg.cell != 0 {
        return Err(Error::arg(format!(
            "image {rows}x{cols} is not divisible by cell size {}",
            cfg.cell
        )));
    }
    let mut hist = Array3::zeros((rows / cfg.cell, cols / cfg.cell, cfg.bins));
    for r in 0..rows {
        for c in 0..cols {
            let m = mag[[r, c]];
            if m == 0.0 {
                continue;
            }
            let (lo, hi, w) = soft_bin(theta[[r, c]], cfg.bins);
            let (cr, cc) = (r / cfg.cell, c / cfg.cell);
            hist[[cr, cc, lo]] += m * (1.0 - w);
            hist[[cr, cc, hi]] += m * w;
        }
    }
    Ok(hist)
}

/// L2 normalization over disjoint `block x block` groups of cells:
/// `v / sqrt(|v|^2 + eps^2)`.
pub fn block_normalize(cells: &Array3<f64>, cfg: &HogConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    let (cell_rows, cell_cols, bins) = cells.dim();
    if cell_rows % cfg.block != 0 || cell_cols % cfg.block != 0 {
        return Err(Error::arg(format!(
            "cell grid {cell_rows}x{cell_cols} is not divisible by block size {}",
            cfg.block
        )));
    }
    let mut out = cells.clone();
    let eps2 = cfg.epsilon * cfg.epsilon;
    for br in (0..cell_rows).step_by(cfg.block) {
        for bc in (0..cell_cols).step_by(cfg.block) {
            let mut sumsq = 0.0;
            for r in br..br + cfg.block {
                for c in bc..bc + cfg.block {
                    for b in 0..bins {
                        sumsq += cells[[r, c, b]] * cells[[r, c, b]];
                    }
                }
            }
            let norm = (sumsq + eps2).sqrt();
            for r in br..br + cfg.block {
                for c in bc..bc + cfg.block {
                    for b in 0..bins {
                        out[[r, c, b]] = cells[[r, c, b]] / norm;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Slices the cell tensor into one matrix per bin.
pub fn to_layers(cells: &Array3<f64>) -> HogLayers {
    let bins = cells.dim().2;
    let layers = (0..bins)
        .map(|b| cells.index_axis(ndarray::Axis(2), b).to_owned())
        .collect();
    HogLayers { layers }
}

/// Full feature extraction: gradients, orientation binning, cell
/// aggregation, block normalization and layer assembly.
pub fn extract(img: &GrayImage, cfg: &HogConfig) -> Result<HogLayers> {
    cfg.cell_grid(img.rows(), img.cols())?;
    let g = gradients(img)?;
    let (theta, mag) = orientation_magnitude(&g);
    let raw = cell_histograms(&theta, &mag, cfg)?;
    let normalized = block_normalize(&raw, cfg)?;
    Ok(to_layers(&normalized))
}
