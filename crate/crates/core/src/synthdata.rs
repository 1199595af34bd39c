//! Procedural rasters with exact ground truth, and texture tile datasets.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Scene pixels
//! draw their noise in raster order from stream 0; tile `k` of a dataset
//! (class-major order) uses stream `k + 1`, so tiles can be rendered in any
//! order or in parallel with identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{write_ppm, LabelMap, RasterError, RgbImage};
use crate::taxonomy::{DatasetManifest, LabelTaxonomy, SceneSample, TaxonomyError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic data configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Zero-mean ±1 modulation in global pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Pattern {
    Flat,
    Stripes { period: usize, orientation: Orientation },
    Checker { period: usize },
}

impl Pattern {
    fn value(self, x: usize, y: usize) -> f64 {
        let sign = |on: bool| if on { 1.0 } else { -1.0 };
        match self {
            Pattern::Flat => 0.0,
            Pattern::Stripes { period, orientation } => {
                let phase = match orientation {
                    Orientation::Horizontal => y,
                    Orientation::Vertical => x,
                    Orientation::Diagonal => x + y,
                };
                sign((phase / (period / 2).max(1)) % 2 == 0)
            }
            Pattern::Checker { period } => sign((x / period + y / period).is_multiple_of(2)),
        }
    }
}

/// Parametric texture: `base + contrast · pattern + N(0, noise_sigma²)` per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureClass {
    pub name: String,
    pub base: [u8; 3],
    pub contrast: f64,
    pub noise_sigma: f64,
    pub pattern: Pattern,
}

impl TextureClass {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(format!("texture {:?}: {m}", self.name)));
        if !(self.contrast.is_finite() && (0.0..=255.0).contains(&self.contrast)) {
            return bad(format!("contrast {} outside 0..=255", self.contrast));
        }
        if !(self.noise_sigma.is_finite() && (0.0..=255.0).contains(&self.noise_sigma)) {
            return bad(format!("noise sigma {} outside 0..=255", self.noise_sigma));
        }
        match self.pattern {
            Pattern::Stripes { period, .. } | Pattern::Checker { period } if period < 2 => {
                bad(format!("pattern period {period} must be at least 2"))
            }
            _ => Ok(()),
        }
    }

    fn noise(&self) -> Normal<f64> {
        Normal::new(0.0, self.noise_sigma).expect("sigma validated")
    }

    fn pixel(&self, x: usize, y: usize, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> [u8; 3] {
        let m = self.contrast * self.pattern.value(x, y);
        self.base.map(|b| {
            let n = if self.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            (b as f64 + m + n).round().clamp(0.0, 255.0) as u8
        })
    }
}

fn texture(name: &str, base: [u8; 3], contrast: f64, noise_sigma: f64, pattern: Pattern) -> TextureClass {
    TextureClass {
        name: name.to_string(),
        base,
        contrast,
        noise_sigma,
        pattern,
    }
}

/// Eight well separated land-cover style textures.
pub fn desk_palette() -> Vec<TextureClass> {
    use Orientation::*;
    use Pattern::*;
    vec![
        texture("cropland", [176, 150, 72], 28.0, 10.0, Stripes { period: 8, orientation: Vertical }),
        texture("forest", [38, 96, 44], 0.0, 16.0, Flat),
        texture("water", [40, 72, 150], 0.0, 6.0, Flat),
        texture("urban", [150, 150, 156], 40.0, 12.0, Checker { period: 6 }),
        texture("bare", [196, 168, 126], 0.0, 14.0, Flat),
        texture("road", [88, 88, 94], 34.0, 8.0, Stripes { period: 10, orientation: Horizontal }),
        texture("meadow", [118, 172, 84], 18.0, 10.0, Stripes { period: 6, orientation: Diagonal }),
        texture("industrial", [198, 108, 92], 30.0, 10.0, Checker { period: 10 }),
    ]
}

/// `n` random textures drawn from `seed`, named `"{prefix}-{i}"`.
pub fn texture_family(prefix: &str, n: usize, seed: u64) -> Vec<TextureClass> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base = [0; 3].map(|_: u8| rng.gen_range(40..=215u8));
            let period = [4, 6, 8, 10][rng.gen_range(0..4)];
            let pattern = match rng.gen_range(0..5) {
                0 => Pattern::Flat,
                1 => Pattern::Checker { period },
                k => Pattern::Stripes {
                    period,
                    orientation: [Orientation::Horizontal, Orientation::Vertical, Orientation::Diagonal][k - 2],
                },
            };
            texture(
                &format!("{prefix}-{i}"),
                base,
                rng.gen_range(15.0..45.0),
                rng.gen_range(4.0..14.0),
                pattern,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layout {
    /// Every pixel is class 0.
    Uniform,
    /// Left half (`x < width/2`) class 0, right half class 1.
    HalfSplit,
    /// Equal blocks; block `(r, c)` gets class `(r·cols + c) mod n`.
    GridBlocks { rows: usize, cols: usize },
    /// Nearest seed point `(x, y)`, ties to the lower seed index; seed `i`
    /// gets class `i mod n`.
    Voronoi { points: Vec<[usize; 2]> },
}

impl Layout {
    /// `count` distinct random seed points inside a `width × height` raster.
    pub fn random_voronoi(count: usize, width: usize, height: usize, seed: u64) -> Layout {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points: Vec<[usize; 2]> = Vec::with_capacity(count);
        while points.len() < count.min(width * height) {
            let p = [rng.gen_range(0..width), rng.gen_range(0..height)];
            if !points.contains(&p) {
                points.push(p);
            }
        }
        Layout::Voronoi { points }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub classes: Vec<TextureClass>,
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        let n = self.classes.len();
        if n == 0 {
            return bad("at least one class is required".into());
        }
        if n > u16::MAX as usize {
            return bad(format!("{n} classes exceed the label raster range"));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("raster size {}x{} is empty", self.width, self.height));
        }
        for c in &self.classes {
            c.validate()?;
        }
        match &self.layout {
            Layout::Uniform if n != 1 => bad(format!("uniform layout shows 1 class, spec has {n}")),
            Layout::HalfSplit if n != 2 || self.width < 2 => {
                bad(format!("half split needs 2 classes and width >= 2, got {n} classes"))
            }
            Layout::GridBlocks { rows, cols } => {
                if *rows == 0 || *cols == 0 || *rows > self.height || *cols > self.width {
                    bad(format!("grid {rows}x{cols} does not fit {}x{}", self.width, self.height))
                } else if rows * cols < n {
                    bad(format!("grid {rows}x{cols} cannot show {n} classes"))
                } else {
                    Ok(())
                }
            }
            Layout::Voronoi { points } => {
                if points.len() < n {
                    bad(format!("{} seed points cannot show {n} classes", points.len()))
                } else if points.iter().any(|p| p[0] >= self.width || p[1] >= self.height) {
                    bad("seed point outside the raster".into())
                } else if (1..points.len()).any(|i| points[..i].contains(&points[i])) {
                    bad("duplicate seed points".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Ground-truth class of every pixel.
    pub fn label_map(&self) -> Result<LabelMap, SynthError> {
        self.validate()?;
        let n = self.classes.len();
        let (w, h) = (self.width, self.height);
        Ok(match &self.layout {
            Layout::Uniform => LabelMap::new(w, h),
            Layout::HalfSplit => LabelMap::from_fn(w, h, |x, _| u16::from(x >= w / 2)),
            Layout::GridBlocks { rows, cols } => LabelMap::from_fn(w, h, |x, y| {
                let (r, c) = (y * rows / h, x * cols / w);
                ((r * cols + c) % n) as u16
            }),
            Layout::Voronoi { points } => LabelMap::from_fn(w, h, |x, y| {
                let mut best = (usize::MAX, 0);
                for (i, p) in points.iter().enumerate() {
                    let d = x.abs_diff(p[0]).pow(2) + y.abs_diff(p[1]).pow(2);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                (best.1 % n) as u16
            }),
        })
    }
}

/// RGB raster and pixel-aligned ground truth for `spec`.
pub fn generate_scene_raster(spec: &SceneSpec, seed: u64) -> Result<(RgbImage, LabelMap), SynthError> {
    let labels = spec.label_map()?;
    let noise: Vec<Normal<f64>> = spec.classes.iter().map(TextureClass::noise).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let c = labels.get(x, y) as usize;
            img.set(x, y, spec.classes[c].pixel(x, y, &noise[c], &mut rng));
        }
    }
    Ok((img, labels))
}

/// A `source × source` patch of `class` at a random pattern phase,
/// nearest-resized to `tile × tile`.
pub fn render_tile(class: &TextureClass, source: usize, tile: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let (ox, oy) = (rng.gen_range(0..1024), rng.gen_range(0..1024));
    let noise = class.noise();
    let mut img = RgbImage::new(source, source);
    for y in 0..source {
        for x in 0..source {
            img.set(x, y, class.pixel(ox + x, oy + y, &noise, rng));
        }
    }
    if source == tile {
        img
    } else {
        img.resize_nearest(tile, tile)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileDatasetSpec {
    pub classes: Vec<TextureClass>,
    /// Tiles per class, in class order.
    pub counts: Vec<usize>,
    pub tile_size: usize,
    /// Each tile is rendered at one of these sides before resizing.
    pub source_sizes: Vec<usize>,
}

impl TileDatasetSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.counts.len() != self.classes.len() {
            return bad(format!("{} counts for {} classes", self.counts.len(), self.classes.len()));
        }
        if self.tile_size == 0 || self.source_sizes.is_empty() || self.source_sizes.contains(&0) {
            return bad("tile and source sizes must be positive".into());
        }
        self.classes.iter().try_for_each(TextureClass::validate)
    }

    /// `(class, index within class)` in class-major order.
    fn items(&self) -> Vec<(usize, usize)> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| (0..k).map(move |i| (c, i)))
            .collect()
    }
}

/// Every tile of `spec` with its class index, in class-major order.
pub fn generate_tiles(spec: &TileDatasetSpec, seed: u64) -> Result<Vec<(RgbImage, usize)>, SynthError> {
    spec.validate()?;
    Ok(spec
        .items()
        .par_iter()
        .enumerate()
        .map(|(k, &(c, _))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let source = spec.source_sizes[rng.gen_range(0..spec.source_sizes.len())];
            (render_tile(&spec.classes[c], source, spec.tile_size, &mut rng), c)
        })
        .collect())
}

pub const TILE_MANIFEST: &str = "manifest.tsv";
pub const TILE_TAXONOMY: &str = "taxonomy.tsv";

/// Writes `tiles/<id>.ppm`, a flat taxonomy of the class names and a
/// manifest under `out_dir`. Tile ids are `<class name>-<index:05>`.
pub fn generate_tile_dataset(spec: &TileDatasetSpec, out_dir: &Path, seed: u64) -> Result<DatasetManifest, SynthError> {
    let tiles = generate_tiles(spec, seed)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let tile_dir = out_dir.join("tiles");
    fs::create_dir_all(&tile_dir).map_err(io(&tile_dir))?;
    let names: Vec<&str> = spec.classes.iter().map(|c| c.name.as_str()).collect();
    let taxonomy = LabelTaxonomy::flat(&names);
    let samples: Vec<SceneSample> = tiles
        .par_iter()
        .zip(spec.items())
        .map(|((img, c), (_, i))| {
            let id = format!("{}-{i:05}", names[*c]);
            let rel = format!("tiles/{id}.ppm");
            write_ppm(out_dir.join(&rel), img)?;
            Ok(SceneSample {
                sample_id: id,
                raster_path: rel,
                fine_label: *c,
                lon_lat: None,
            })
        })
        .collect::<Result<_, SynthError>>()?;
    let manifest = DatasetManifest::new(TILE_TAXONOMY, samples)?;
    let tax_path = out_dir.join(TILE_TAXONOMY);
    fs::write(&tax_path, taxonomy.to_text()).map_err(io(&tax_path))?;
    let man_path = out_dir.join(TILE_MANIFEST);
    fs::write(&man_path, manifest.to_text()).map_err(io(&man_path))?;
    Ok(manifest)
}

/// Zipf-like class counts: shares `∝ rank^(-exponent)`, floored, the
/// remainder handed out by largest fractional part (ties to the lower
/// rank), then any zero count raised to 1 at the expense of the largest.
pub fn long_tail_counts(n_classes: usize, total: usize, exponent: f64) -> Result<Vec<usize>, SynthError> {
    if n_classes == 0 || total < n_classes {
        return Err(SynthError::Config(format!(
            "need total >= classes >= 1, got {total} over {n_classes}"
        )));
    }
    if !(exponent.is_finite() && exponent >= 0.0) {
        return Err(SynthError::Config(format!("exponent must be non-negative, got {exponent}")));
    }
    let weights: Vec<f64> = (1..=n_classes).map(|r| (r as f64).powf(-exponent)).collect();
    let sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    while let Some(z) = counts.iter().position(|&c| c == 0) {
        let donor = (0..n_classes).fold(0, |best, i| if counts[i] > counts[best] { i } else { best });
        counts[donor] -= 1;
        counts[z] = 1;
    }
    Ok(counts)
}
