//! Grid classification of multi-scale context windows, fused and voted
//! into the regions of a class-agnostic segmentation.

mod classifier;
mod grid;
mod windows;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionError;
use crate::raster::{LabelMap, RasterError, RgbImage};
use crate::segmentation::{segment, RegionMap, SegmentError, SegmentParams};

pub use classifier::{Classifier, ClassifierError, ModelClassifier, OracleClassifier, PatchContext};
pub use grid::{
    build_grid_map, grid_shape, integrate_semantics, read_grid_map, write_grid_map, SemanticGridMap,
};
pub use windows::{extract_context_windows, reflect_index, ContextWindowSpec, Padding};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("invalid parser configuration: {0}")]
    Config(String),
    #[error("centre ({x}, {y}) lies outside the {width}x{height} raster")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("grid cell ({col}, {row}): classifier failed: {source}")]
    Classifier {
        col: usize,
        row: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("fusion stage: {0}")]
    Fusion(#[from] FusionError),
    #[error("segmentation stage: {0}")]
    Segment(#[from] SegmentError),
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ParseError>;

/// Context fusion weights in window-size order: the scale weight set with
/// its largest weight on the tightest window.
pub const DEFAULT_CONTEXT_WEIGHTS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseConfig {
    pub windows: ContextWindowSpec,
    /// Grid pitch in pixels; half the smallest window when unset.
    pub stride: Option<usize>,
    /// One weight per window size, in size order.
    pub fusion_weights: Vec<f64>,
    pub segmentation: SegmentParams,
    pub keep_probabilities: bool,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            windows: ContextWindowSpec::default(),
            stride: None,
            fusion_weights: DEFAULT_CONTEXT_WEIGHTS.to_vec(),
            segmentation: SegmentParams::default(),
            keep_probabilities: false,
        }
    }
}

impl ParseConfig {
    pub fn desk() -> Self {
        Self {
            windows: ContextWindowSpec::desk(),
            ..Self::default()
        }
    }

    pub fn effective_stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| (self.windows.sizes.first().copied().unwrap_or(2) / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        if self.stride == Some(0) {
            return Err(ParseError::Config("stride must be at least 1".into()));
        }
        if self.fusion_weights.len() != self.windows.sizes.len() {
            return Err(ParseError::Config(format!(
                "{} fusion weights for {} window sizes",
                self.fusion_weights.len(),
                self.windows.sizes.len()
            )));
        }
        self.segmentation.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutput {
    pub labels: LabelMap,
    pub grid: SemanticGridMap,
    pub regions: RegionMap,
}

/// Grid map, segmentation (with optional merging) and majority voting.
pub fn parse_image(raster: &RgbImage, classifier: &dyn Classifier, cfg: &ParseConfig) -> Result<ParseOutput> {
    cfg.validate()?;
    let regions = segment(raster, &cfg.segmentation)?;
    parse_with_regions(raster, classifier, cfg, regions)
}

/// As [`parse_image`] with a given region map in place of segmentation.
pub fn parse_with_regions(
    raster: &RgbImage,
    classifier: &dyn Classifier,
    cfg: &ParseConfig,
    regions: RegionMap,
) -> Result<ParseOutput> {
    cfg.validate()?;
    let grid = build_grid_map(
        raster,
        classifier,
        &cfg.windows,
        cfg.effective_stride(),
        &cfg.fusion_weights,
        cfg.keep_probabilities,
    )?;
    let labels = integrate_semantics(&grid, &regions)?;
    Ok(ParseOutput { labels, grid, regions })
}

/// Pixels farther than `band` (Chebyshev distance) from every boundary
/// pixel, a pixel with an 8-neighbour of a different label.
pub fn interior_mask(truth: &LabelMap, band: usize) -> Vec<bool> {
    let (w, h) = (truth.width(), truth.height());
    let mut mask = vec![true; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = truth.get(x, y);
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let boundary = (y0..=y1).any(|v| (x0..=x1).any(|u| truth.get(u, v) != l));
            if boundary {
                let (x0, x1) = (x.saturating_sub(band), (x + band).min(w - 1));
                for v in y.saturating_sub(band)..=(y + band).min(h - 1) {
                    mask[v * w + x0..=v * w + x1].iter_mut().for_each(|m| *m = false);
                }
            }
        }
    }
    mask
}
