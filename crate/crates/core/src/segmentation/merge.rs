use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{relabel_dense, RegionMap, Result, SegmentError};
use crate::raster::RgbImage;

/// Histogram bins per colour channel.
pub const HIST_BINS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityWeights {
    pub color: f64,
    pub size: f64,
    pub fill: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            color: 0.6,
            size: 0.2,
            fill: 0.2,
        }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.color, self.size, self.fill];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().sum::<f64>() <= 0.0 {
            return Err(SegmentError::Config(format!(
                "similarity weights must be non-negative with a positive sum, got {all:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Region {
    size: usize,
    hist: [u32; 3 * HIST_BINS],
    /// Inclusive `[x0, y0, x1, y1]`.
    bbox: [usize; 4],
}

impl Region {
    fn absorb(&mut self, other: &Region) {
        self.size += other.size;
        self.hist.iter_mut().zip(&other.hist).for_each(|(a, b)| *a += b);
        self.bbox = [
            self.bbox[0].min(other.bbox[0]),
            self.bbox[1].min(other.bbox[1]),
            self.bbox[2].max(other.bbox[2]),
            self.bbox[3].max(other.bbox[3]),
        ];
    }
}

/// Selective-search similarity of two regions: colour histogram intersection
/// of L1-normalised histograms, size complement and bounding-box fill.
fn similarity(a: &Region, b: &Region, total: usize, w: &SimilarityWeights) -> f64 {
    let (na, nb) = (3.0 * a.size as f64, 3.0 * b.size as f64);
    let color: f64 = a
        .hist
        .iter()
        .zip(&b.hist)
        .map(|(&x, &y)| (x as f64 / na).min(y as f64 / nb))
        .sum();
    let n = total as f64;
    let joint = (a.size + b.size) as f64;
    let bw = a.bbox[2].max(b.bbox[2]) - a.bbox[0].min(b.bbox[0]) + 1;
    let bh = a.bbox[3].max(b.bbox[3]) - a.bbox[1].min(b.bbox[1]) + 1;
    let size = 1.0 - joint / n;
    let fill = 1.0 - ((bw * bh) as f64 - joint) / n;
    w.color * color + w.size * size + w.fill * fill
}

struct Candidate {
    sim: f64,
    a: usize,
    b: usize,
    gen: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // highest similarity first, then the lexicographically smallest pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

/// Greedily merges the most similar 4-adjacent pair of regions (ties to the
/// smallest id pair) until at most `target_count` regions remain.
pub fn merge_regions(
    image: &RgbImage,
    rm: &RegionMap,
    target_count: usize,
    weights: &SimilarityWeights,
) -> Result<RegionMap> {
    if target_count == 0 {
        return Err(SegmentError::Config("target_count must be at least 1".into()));
    }
    weights.validate()?;
    let (w, h) = (image.width(), image.height());
    if (w, h) != (rm.width(), rm.height()) {
        return Err(SegmentError::Config(format!(
            "region map is {}x{}, image is {w}x{h}",
            rm.width(),
            rm.height()
        )));
    }
    if rm.region_count() <= target_count {
        return Ok(rm.clone());
    }
    let n = rm.region_count();
    let ids = rm.ids().as_slice();
    let px = image.as_raw();
    let mut regions = vec![
        Region {
            size: 0,
            hist: [0; 3 * HIST_BINS],
            bbox: [usize::MAX, usize::MAX, 0, 0],
        };
        n
    ];
    let mut adj = vec![BTreeSet::new(); n];
    for (p, &r) in ids.iter().enumerate() {
        let r = r as usize;
        let (x, y) = (p % w, p / w);
        let reg = &mut regions[r];
        reg.size += 1;
        for c in 0..3 {
            reg.hist[c * HIST_BINS + px[3 * p + c] as usize * HIST_BINS / 256] += 1;
        }
        reg.bbox = [reg.bbox[0].min(x), reg.bbox[1].min(y), reg.bbox[2].max(x), reg.bbox[3].max(y)];
        for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
            let s = ids[q] as usize;
            if s != r {
                adj[r].insert(s);
                adj[s].insert(r);
            }
        }
    }

    let total = w * h;
    let mut gen = vec![0u32; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut heap = BinaryHeap::new();
    for a in 0..n {
        for &b in adj[a].range(a + 1..) {
            heap.push(Candidate {
                sim: similarity(&regions[a], &regions[b], total, weights),
                a,
                b,
                gen: (0, 0),
            });
        }
    }
    let mut count = n;
    while count > target_count {
        let Some(c) = heap.pop() else { break };
        if parent[c.a] != c.a || parent[c.b] != c.b || (gen[c.a], gen[c.b]) != c.gen {
            continue;
        }
        let (a, b) = (c.a, c.b);
        let absorbed = regions[b].clone();
        regions[a].absorb(&absorbed);
        parent[b] = a;
        gen[a] += 1;
        count -= 1;
        for m in std::mem::take(&mut adj[b]) {
            adj[m].remove(&b);
            if m != a {
                adj[m].insert(a);
                adj[a].insert(m);
            }
        }
        for &m in &adj[a] {
            let (lo, hi) = (a.min(m), a.max(m));
            heap.push(Candidate {
                sim: similarity(&regions[lo], &regions[hi], total, weights),
                a: lo,
                b: hi,
                gen: (gen[lo], gen[hi]),
            });
        }
    }
    let resolve = |mut r: usize| {
        while parent[r] != r {
            r = parent[r];
        }
        r
    };
    let root: Vec<usize> = (0..n).map(resolve).collect();
    let merged: Vec<usize> = ids.iter().map(|&r| root[r as usize]).collect();
    Ok(relabel_dense(w, h, &merged))
}

/// Public similarity of two regions of `rm`, for reporting and inspection.
pub fn region_similarity(
    image: &RgbImage,
    rm: &RegionMap,
    a: usize,
    b: usize,
    weights: &SimilarityWeights,
) -> Option<f64> {
    if a >= rm.region_count() || b >= rm.region_count() {
        return None;
    }
    let w = image.width();
    let px = image.as_raw();
    let build = |r: usize| {
        let mut reg = Region {
            size: 0,
            hist: [0; 3 * HIST_BINS],
            bbox: [usize::MAX, usize::MAX, 0, 0],
        };
        for (p, _) in rm.ids().as_slice().iter().enumerate().filter(|(_, &i)| i as usize == r) {
            let (x, y) = (p % w, p / w);
            reg.size += 1;
            for c in 0..3 {
                reg.hist[c * HIST_BINS + px[3 * p + c] as usize * HIST_BINS / 256] += 1;
            }
            reg.bbox = [reg.bbox[0].min(x), reg.bbox[1].min(y), reg.bbox[2].max(x), reg.bbox[3].max(y)];
        }
        reg
    };
    let (ra, rb) = (build(a), build(b));
    Some(similarity(&ra, &rb, image.width() * image.height(), weights))
}
