use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_context_windows, Classifier, ContextWindowSpec, ParseError, PatchContext, Result};
use crate::fusion::fuse_probabilities;
use crate::raster::{read_pgm, write_pgm, LabelMap, Plane, RgbImage};
use crate::segmentation::{sidecar_path, RegionMap};

/// Class predicted for the context windows centred on each cell of a
/// regular lattice. Cell `(col, row)` covers pixels
/// `[col·stride, (col+1)·stride) × [row·stride, (row+1)·stride)` and is
/// centred at `(min(origin + col·stride, W−1), min(origin + row·stride, H−1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGridMap {
    pub stride: usize,
    pub origin: usize,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub labels: LabelMap,
    /// Fused probabilities per cell in raster order, when retained.
    pub probabilities: Option<Vec<Vec<f64>>>,
}

impl SemanticGridMap {
    pub fn cols(&self) -> usize {
        self.labels.width()
    }

    pub fn rows(&self) -> usize {
        self.labels.height()
    }

    /// Label of the cell containing pixel `(x, y)`.
    pub fn label_at(&self, x: usize, y: usize) -> u16 {
        let col = (x / self.stride).min(self.cols() - 1);
        let row = (y / self.stride).min(self.rows() - 1);
        self.labels.get(col, row)
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (usize, usize) {
        cell_center(self.origin, self.stride, self.width, self.height, col, row)
    }
}

fn cell_center(origin: usize, stride: usize, w: usize, h: usize, col: usize, row: usize) -> (usize, usize) {
    ((origin + col * stride).min(w - 1), (origin + row * stride).min(h - 1))
}

/// Lattice shape `(cols, rows)` covering a `w × h` raster.
pub fn grid_shape(w: usize, h: usize, stride: usize) -> (usize, usize) {
    (w.div_ceil(stride), h.div_ceil(stride))
}

/// Classifies the context windows of every cell, fuses their probability
/// vectors with `weights` (one per window size) and stores the argmax.
/// Cells are independent and evaluated on the current rayon pool.
pub fn build_grid_map(
    raster: &RgbImage,
    classifier: &dyn Classifier,
    spec: &ContextWindowSpec,
    stride: usize,
    weights: &[f64],
    keep_probabilities: bool,
) -> Result<SemanticGridMap> {
    spec.validate()?;
    if stride == 0 {
        return Err(ParseError::Config("grid stride must be at least 1".into()));
    }
    if raster.is_empty() {
        return Err(ParseError::Config("raster is empty".into()));
    }
    if weights.len() != spec.sizes.len() {
        return Err(ParseError::Config(format!(
            "{} fusion weights for {} window sizes",
            weights.len(),
            spec.sizes.len()
        )));
    }
    if let Some(n) = classifier.input_size() {
        if n != spec.canonical_input {
            return Err(ParseError::Config(format!(
                "classifier takes {n}x{n} patches, canonical input is {}",
                spec.canonical_input
            )));
        }
    }
    let classes = classifier.num_classes();
    if classes == 0 || classes > u16::MAX as usize + 1 {
        return Err(ParseError::Config(format!("unsupported class count {classes}")));
    }
    let (w, h) = (raster.width(), raster.height());
    let (cols, rows) = grid_shape(w, h, stride);
    let origin = stride / 2;
    let cells: Vec<(usize, Vec<f64>)> = (0..cols * rows)
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i % cols, i / cols);
            let center = cell_center(origin, stride, w, h, col, row);
            let windows = extract_context_windows(raster, center, spec)?;
            let probs = windows
                .iter()
                .zip(&spec.sizes)
                .map(|(patch, &window)| {
                    let p = classifier
                        .probabilities(patch, PatchContext { center, window })
                        .map_err(|source| ParseError::Classifier { col, row, source })?;
                    if p.len() != classes {
                        return Err(ParseError::Classifier {
                            col,
                            row,
                            source: super::ClassifierError(format!(
                                "{} probabilities for {classes} classes",
                                p.len()
                            )),
                        });
                    }
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()?;
            let fused = fuse_probabilities(&probs, weights)?;
            Ok((fused.label, fused.probs))
        })
        .collect::<Result<_>>()?;
    let labels = Plane::from_raw(cols, rows, cells.iter().map(|(l, _)| *l as u16).collect())?;
    Ok(SemanticGridMap {
        stride,
        origin,
        width: w,
        height: h,
        num_classes: classes,
        labels,
        probabilities: keep_probabilities.then(|| cells.into_iter().map(|(_, p)| p).collect()),
    })
}

/// Majority grid label inside every region, ties to the lowest class id.
/// Each pixel votes with the label of the cell that contains it.
pub fn integrate_semantics(grid: &SemanticGridMap, regions: &RegionMap) -> Result<LabelMap> {
    let (w, h) = (regions.width(), regions.height());
    if (grid.width, grid.height) != (w, h) || (grid.cols(), grid.rows()) != grid_shape(w, h, grid.stride) {
        return Err(ParseError::ExtentMismatch(format!(
            "grid covers {}x{} with {}x{} cells of stride {}, regions are {w}x{h}",
            grid.width,
            grid.height,
            grid.cols(),
            grid.rows(),
            grid.stride
        )));
    }
    let n = grid.num_classes;
    let mut votes = vec![0usize; regions.region_count() * n];
    for y in 0..h {
        for x in 0..w {
            votes[regions.get(x, y) * n + grid.label_at(x, y) as usize] += 1;
        }
    }
    let winner: Vec<u16> = votes
        .chunks(n)
        .map(|v| {
            // first maximum is the lowest class id
            let best = v.iter().enumerate().fold(0, |b, (i, &c)| if c > v[b] { i } else { b });
            best as u16
        })
        .collect();
    Ok(LabelMap::from_fn(w, h, |x, y| winner[regions.get(x, y)]))
}

#[derive(Serialize, Deserialize)]
struct GridSidecar {
    stride: usize,
    origin: usize,
    width: usize,
    height: usize,
    cols: usize,
    rows: usize,
    num_classes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    probabilities: Option<Vec<Vec<f64>>>,
}

/// Cell labels as `P5` plus a `<path>.json` record of the lattice geometry
/// and, when retained, the fused probabilities.
pub fn write_grid_map(path: impl AsRef<Path>, grid: &SemanticGridMap) -> Result<()> {
    let path = path.as_ref();
    let maxval = if grid.num_classes <= 256 { 255 } else { 65535 };
    write_pgm(path, &grid.labels, maxval)?;
    let record = GridSidecar {
        stride: grid.stride,
        origin: grid.origin,
        width: grid.width,
        height: grid.height,
        cols: grid.cols(),
        rows: grid.rows(),
        num_classes: grid.num_classes,
        probabilities: grid.probabilities.clone(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string(&record).expect("sidecar is serializable");
    fs::write(&side, json + "\n").map_err(|source| ParseError::Io { path: side, source })
}

pub fn read_grid_map(path: impl AsRef<Path>) -> Result<SemanticGridMap> {
    let path = path.as_ref();
    let (labels, _) = read_pgm(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|source| ParseError::Io {
        path: side.clone(),
        source,
    })?;
    let r: GridSidecar = serde_json::from_str(&text)
        .map_err(|e| ParseError::ExtentMismatch(format!("{}: malformed grid record: {e}", side.display())))?;
    if (r.cols, r.rows) != (labels.width(), labels.height())
        || (r.cols, r.rows) != grid_shape(r.width, r.height, r.stride.max(1))
    {
        return Err(ParseError::ExtentMismatch(format!(
            "{}: record does not match the {}x{} label raster",
            side.display(),
            labels.width(),
            labels.height()
        )));
    }
    Ok(SemanticGridMap {
        stride: r.stride,
        origin: r.origin,
        width: r.width,
        height: r.height,
        num_classes: r.num_classes,
        labels,
        probabilities: r.probabilities,
    })
}
