use serde::{Deserialize, Serialize};

use super::{ParseError, Result};
use crate::raster::RgbImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Mirror about the edge pixel without repeating it.
    #[default]
    Reflect,
}

/// Square context windows around a grid cell centre.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextWindowSpec {
    /// Window sides in pixels, strictly increasing.
    pub sizes: Vec<usize>,
    /// Side every window is resized to before classification.
    pub canonical_input: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for ContextWindowSpec {
    fn default() -> Self {
        Self {
            sizes: vec![56, 112, 224],
            canonical_input: 56,
            padding: Padding::Reflect,
        }
    }
}

impl ContextWindowSpec {
    /// Windows of 32, 64 and 128 pixels classified at 32×32.
    pub fn desk() -> Self {
        Self {
            sizes: vec![32, 64, 128],
            canonical_input: 32,
            padding: Padding::Reflect,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes[0] == 0 {
            return Err(ParseError::Config(format!(
                "window sizes must be non-empty and positive, got {:?}",
                self.sizes
            )));
        }
        if self.sizes.windows(2).any(|p| p[1] <= p[0]) {
            return Err(ParseError::Config(format!(
                "window sizes must be strictly increasing, got {:?}",
                self.sizes
            )));
        }
        if self.canonical_input == 0 {
            return Err(ParseError::Config("canonical input must be positive".into()));
        }
        Ok(())
    }
}

/// Index into `0..n` mirrored about the edge pixels: `-1 → 1`, `n → n-2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// One window per size, centred on `center` (the window's pixel
/// `(s/2, s/2)`), reflect-padded and nearest-resized to the canonical side.
pub fn extract_context_windows(
    raster: &RgbImage,
    center: (usize, usize),
    spec: &ContextWindowSpec,
) -> Result<Vec<RgbImage>> {
    spec.validate()?;
    let (w, h) = (raster.width(), raster.height());
    if center.0 >= w || center.1 >= h {
        return Err(ParseError::OutOfBounds {
            x: center.0,
            y: center.1,
            width: w,
            height: h,
        });
    }
    let c = spec.canonical_input;
    Ok(spec
        .sizes
        .iter()
        .map(|&s| {
            let x0 = center.0 as isize - (s / 2) as isize;
            let y0 = center.1 as isize - (s / 2) as isize;
            let xs: Vec<usize> = (0..c).map(|i| reflect_index(x0 + (i * s / c) as isize, w)).collect();
            let mut out = RgbImage::new(c, c);
            for j in 0..c {
                let sy = reflect_index(y0 + (j * s / c) as isize, h);
                for (i, &sx) in xs.iter().enumerate() {
                    out.set(i, j, raster.get(sx, sy));
                }
            }
            out
        })
        .collect())
}
