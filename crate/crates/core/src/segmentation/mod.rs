//! Class-agnostic over-segmentation: a graph-based initial partition followed
//! by optional greedy similarity merging.

mod graph;
mod merge;

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{read_pgm, write_pgm, Plane, RasterError, RgbImage};

pub use graph::{graph_segment, graph_segment_smoothed};
pub use merge::{merge_regions, region_similarity, SimilarityWeights, HIST_BINS};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("cannot segment an empty image")]
    EmptyImage,
    #[error("invalid segmentation configuration: {0}")]
    Config(String),
    #[error("invalid region map: {0}")]
    InvalidMap(String),
    #[error("{count} regions do not fit a 16-bit region raster")]
    TooManyRegions { count: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed region sidecar: {message}")]
    Sidecar { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, SegmentError>;

/// Region id per pixel. Ids are dense in `0..region_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMap {
    ids: Plane<u32>,
    region_count: usize,
}

impl RegionMap {
    /// Wraps `ids` after checking they are dense. Connectivity is not
    /// enforced here; see [`region_stats`].
    pub fn new(ids: Plane<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(SegmentError::EmptyImage);
        }
        let count = ids.as_slice().iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; count];
        ids.as_slice().iter().for_each(|&i| seen[i as usize] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SegmentError::InvalidMap(format!(
                "ids are not dense: {missing} is unused below maximum {}",
                count - 1
            )));
        }
        Ok(Self { ids, region_count: count })
    }

    /// One region per 4-connected component of equal values.
    pub fn from_components<T: Copy + Default + Eq>(values: &Plane<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(SegmentError::EmptyImage);
        }
        let (ids, region_count) = connected_components(values);
        Ok(Self { ids, region_count })
    }

    pub fn width(&self) -> usize {
        self.ids.width()
    }

    pub fn height(&self) -> usize {
        self.ids.height()
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.ids.get(x, y) as usize
    }

    pub fn ids(&self) -> &Plane<u32> {
        &self.ids
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.region_count];
        self.ids.as_slice().iter().for_each(|&i| areas[i as usize] += 1);
        areas
    }
}

/// 4-connected components of equal values, numbered in raster order of
/// their first pixel.
pub fn connected_components<T: Copy + Default + Eq>(values: &Plane<T>) -> (Plane<u32>, usize) {
    let (w, h) = (values.width(), values.height());
    let v = values.as_slice();
    let mut ids = vec![u32::MAX; v.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..v.len() {
        if ids[start] != u32::MAX {
            continue;
        }
        ids[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if ids[q] == u32::MAX && v[q] == v[p] {
                    ids[q] = next;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        next += 1;
    }
    (Plane::from_raw(w, h, ids).expect("same extent"), next as usize)
}

/// Renumbers arbitrary ids densely in raster order of first appearance.
pub(crate) fn relabel_dense(w: usize, h: usize, ids: &[usize]) -> RegionMap {
    let mut map = std::collections::HashMap::new();
    let dense: Vec<u32> = ids
        .iter()
        .map(|&i| {
            let n = map.len() as u32;
            *map.entry(i).or_insert(n)
        })
        .collect();
    RegionMap {
        ids: Plane::from_raw(w, h, dense).expect("same extent"),
        region_count: map.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegionStats {
    pub region_count: usize,
    pub areas: Vec<usize>,
    /// Every id occurs and forms a single 4-connected component.
    pub connectivity_ok: bool,
}

pub fn region_stats(rm: &RegionMap) -> RegionStats {
    let areas = rm.areas();
    let (_, components) = connected_components(&rm.ids);
    RegionStats {
        region_count: rm.region_count,
        connectivity_ok: components == rm.region_count && areas.iter().all(|&a| a > 0),
        areas,
    }
}

/// Segmentation parameters with their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    pub k: f64,
    pub min_size: usize,
    /// Gaussian pre-smoothing; 0 disables it.
    pub sigma: f64,
    /// Merge greedily down to this many regions; `None` keeps the initial partition.
    pub target_count: Option<usize>,
    pub similarity: SimilarityWeights,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            k: 300.0,
            min_size: 64,
            sigma: 0.8,
            target_count: None,
            similarity: SimilarityWeights::default(),
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(SegmentError::Config(format!("k must be positive, got {}", self.k)));
        }
        if self.min_size == 0 {
            return Err(SegmentError::Config("min_size must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SegmentError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if self.target_count == Some(0) {
            return Err(SegmentError::Config("target_count must be at least 1".into()));
        }
        self.similarity.validate()
    }
}

/// [`graph_segment_smoothed`] followed by [`merge_regions`] when a target is set.
pub fn segment(image: &RgbImage, params: &SegmentParams) -> Result<RegionMap> {
    params.validate()?;
    let rm = graph_segment_smoothed(image, params.k, params.min_size, params.sigma)?;
    match params.target_count {
        Some(t) => merge_regions(image, &rm, t, &params.similarity),
        None => Ok(rm),
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    region_count: usize,
}

/// `<path>.json`, the record stored next to a region or grid raster.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// 16-bit `P5` raster of region ids plus a `<path>.json` count record.
pub fn write_region_map(path: impl AsRef<Path>, rm: &RegionMap) -> Result<()> {
    let path = path.as_ref();
    if rm.region_count > 65536 {
        return Err(SegmentError::TooManyRegions { count: rm.region_count });
    }
    let ids = Plane::from_raw(
        rm.width(),
        rm.height(),
        rm.ids.as_slice().iter().map(|&i| i as u16).collect(),
    )?;
    write_pgm(path, &ids, 65535)?;
    let side = sidecar_path(path);
    let record = Sidecar {
        width: rm.width(),
        height: rm.height(),
        region_count: rm.region_count,
    };
    let json = serde_json::to_string_pretty(&record).expect("sidecar is serializable");
    fs::write(&side, json + "\n").map_err(|source| SegmentError::Io { path: side, source })
}

pub fn read_region_map(path: impl AsRef<Path>) -> Result<RegionMap> {
    let path = path.as_ref();
    let (plane, _) = read_pgm(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|source| SegmentError::Io {
        path: side.clone(),
        source,
    })?;
    let record: Sidecar = serde_json::from_str(&text).map_err(|e| SegmentError::Sidecar {
        path: side.clone(),
        message: e.to_string(),
    })?;
    let ids = Plane::from_raw(
        plane.width(),
        plane.height(),
        plane.as_slice().iter().map(|&i| i as u32).collect(),
    )?;
    let rm = RegionMap::new(ids)?;
    if (record.width, record.height, record.region_count) != (rm.width(), rm.height(), rm.region_count) {
        return Err(SegmentError::Sidecar {
            path: side,
            message: format!(
                "records {}x{} with {} regions, raster is {}x{} with {}",
                record.width,
                record.height,
                record.region_count,
                rm.width(),
                rm.height(),
                rm.region_count
            ),
        });
    }
    Ok(rm)
}
