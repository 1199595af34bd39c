use super::{relabel_dense, RegionMap, Result, SegmentError};
use crate::raster::RgbImage;

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two roots; the larger one (ties to `a`) stays root.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        big
    }
}

/// Graph-based partition with the adaptive threshold `τ(C) = k / |C|`.
///
/// Edges of the 4-neighbour pixel graph, weighted by Euclidean RGB distance,
/// are taken in `(weight, pixel index)` order to build a minimum spanning
/// tree. Each tree edge joining `C1` and `C2` with weight `w` gets the scale
/// `max_i (w − Int(Ci))·|Ci|`, the smallest `k` for which
/// `w ≤ Int(Ci) + k/|Ci|` holds on both sides. Tree edges that the
/// small-region pass needs (merge in edge order while either side is below
/// `min_size`) get scale 0. Regions are the components of the tree edges
/// whose scale is at most `k`.
///
/// Partitions are nested in `k`, so the region count never grows with `k`;
/// every region is 4-connected and holds at least `min_size` pixels unless
/// it is the whole image.
pub fn graph_segment(image: &RgbImage, k: f64, min_size: usize) -> Result<RegionMap> {
    graph_segment_smoothed(image, k, min_size, 0.0)
}

/// [`graph_segment`] on the image blurred by a Gaussian of standard
/// deviation `sigma` (no blur at 0).
pub fn graph_segment_smoothed(image: &RgbImage, k: f64, min_size: usize, sigma: f64) -> Result<RegionMap> {
    if image.is_empty() {
        return Err(SegmentError::EmptyImage);
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(SegmentError::Config(format!("k must be positive, got {k}")));
    }
    if min_size == 0 {
        return Err(SegmentError::Config("min_size must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SegmentError::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    let raw: Vec<f64> = image.as_raw().iter().map(|&v| v as f64).collect();
    let colors = if sigma > 0.0 { gaussian_blur(&raw, w, h, sigma) } else { raw };
    let tree = spanning_tree(&colors, w, h);
    let mut ds = DisjointSet::new(n);
    for e in &tree {
        if e.scale <= k || e.forced(min_size) {
            ds.union(e.a, e.b);
        }
    }
    let roots: Vec<usize> = (0..n).map(|p| ds.find(p)).collect();
    Ok(relabel_dense(w, h, &roots))
}

struct TreeEdge {
    a: usize,
    b: usize,
    scale: f64,
    /// Smallest `min_size` for which the small-region pass keeps this edge.
    forced_below: usize,
}

impl TreeEdge {
    fn forced(&self, min_size: usize) -> bool {
        min_size > self.forced_below
    }
}

/// Minimum spanning tree edges in processing order with their scales.
///
/// The small-region pass merges across an edge exactly when the smaller of
/// the two sides, measured over the tree edges already accepted by that
/// same pass, is below `min_size`. Because the pass depends on `min_size`,
/// `forced_below` records the side size seen by single-linkage growth, the
/// limit of that pass: each component is then as large as possible, so an
/// edge is forced for every `min_size` above the smaller side.
fn spanning_tree(px: &[f64], w: usize, h: usize) -> Vec<TreeEdge> {
    let n = w * h;
    let dist = |a: usize, b: usize| -> f64 {
        (0..3).map(|c| (px[3 * a + c] - px[3 * b + c]).powi(2)).sum::<f64>().sqrt()
    };
    let mut edges: Vec<(f64, u32, u32)> = Vec::with_capacity(2 * n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edges.push((dist(p, p + 1), p as u32, p as u32 + 1));
            }
            if y + 1 < h {
                edges.push((dist(p, p + w), p as u32, (p + w) as u32));
            }
        }
    }
    edges.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut ds = DisjointSet::new(n);
    let mut internal = vec![0.0f64; n];
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for &(weight, a, b) in &edges {
        let (ra, rb) = (ds.find(a as usize), ds.find(b as usize));
        if ra == rb {
            continue;
        }
        let need = |r: usize| (weight - internal[r]) * ds.size[r] as f64;
        let scale = need(ra).max(need(rb)).max(0.0);
        let forced_below = ds.size[ra].min(ds.size[rb]);
        let root = ds.union(ra, rb);
        internal[root] = weight;
        tree.push(TreeEdge {
            a: a as usize,
            b: b as usize,
            scale,
            forced_below,
        });
    }
    tree
}

/// Separable Gaussian blur of interleaved RGB values, truncated at
/// `ceil(4σ)` and mirrored at the borders.
fn gaussian_blur(px: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let pass = |src: &[f64], len: usize, at: &dyn Fn(usize, usize) -> usize, lines: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            for i in 0..len {
                let mut acc = [0.0; 3];
                for (t, kv) in kernel.iter().enumerate() {
                    let j = crate::parser::reflect_index(i as isize + t as isize - radius, len);
                    let q = at(line, j);
                    for c in 0..3 {
                        acc[c] += kv * src[3 * q + c];
                    }
                }
                let p = at(line, i);
                out[3 * p..3 * p + 3].copy_from_slice(&acc);
            }
        }
        out
    };
    let rows = pass(px, w, &|y, x| y * w + x, h);
    pass(&rows, h, &|x, y| y * w + x, w)
}
