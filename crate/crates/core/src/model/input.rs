use serde::{Deserialize, Serialize};

use crate::raster::RgbImage;
use crate::tensor::Tensor;

/// `[3,H,W]` tensor with channel values mapped from `0..=255` to `[-1, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let raw = img.as_raw();
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// The dihedral transforms used for training-time augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::FlipHorizontal,
        Augmentation::FlipVertical,
        Augmentation::Rotate90,
        Augmentation::Rotate180,
        Augmentation::Rotate270,
    ];

    /// Source pixel `(x, y)` for output pixel `(ox, oy)` of a square side `n`.
    fn source(self, ox: usize, oy: usize, n: usize) -> (usize, usize) {
        let last = n - 1;
        match self {
            Augmentation::Identity => (ox, oy),
            Augmentation::FlipHorizontal => (last - ox, oy),
            Augmentation::FlipVertical => (ox, last - oy),
            // counter-clockwise quarter turn
            Augmentation::Rotate90 => (last - oy, ox),
            Augmentation::Rotate180 => (last - ox, last - oy),
            Augmentation::Rotate270 => (oy, last - ox),
        }
    }
}

/// Applies `aug` to a square `[C,N,N]` tensor.
pub fn augment(t: &Tensor, aug: Augmentation) -> Tensor {
    if aug == Augmentation::Identity {
        return t.clone();
    }
    let (c, h, w) = t.dims3().expect("augment expects [C,H,W]");
    assert_eq!(h, w, "augment expects a square tensor");
    let src = t.data();
    let plane = h * w;
    let mut out = vec![0.0; src.len()];
    for oy in 0..h {
        for ox in 0..w {
            let (x, y) = aug.source(ox, oy, w);
            for ch in 0..c {
                out[ch * plane + oy * w + ox] = src[ch * plane + y * w + x];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor {
        // [[0,1],[2,3]] in one channel
        Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn pixel_scaling() {
        let mut img = RgbImage::new(1, 1);
        img.set(0, 0, [0, 255, 51]);
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - (51.0 / 127.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn dihedral_transforms() {
        let t = ramp();
        let get = |a| augment(&t, a).into_data();
        assert_eq!(get(Augmentation::Identity), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(get(Augmentation::FlipHorizontal), vec![1.0, 0.0, 3.0, 2.0]);
        assert_eq!(get(Augmentation::FlipVertical), vec![2.0, 3.0, 0.0, 1.0]);
        assert_eq!(get(Augmentation::Rotate90), vec![1.0, 3.0, 0.0, 2.0]);
        assert_eq!(get(Augmentation::Rotate180), vec![3.0, 2.0, 1.0, 0.0]);
        assert_eq!(get(Augmentation::Rotate270), vec![2.0, 0.0, 3.0, 1.0]);
    }

    #[test]
    fn rotations_compose() {
        let t = Tensor::from_fn(&[2, 5, 5], |i| i as f64);
        let r90 = augment(&t, Augmentation::Rotate90);
        assert_eq!(augment(&r90, Augmentation::Rotate90), augment(&t, Augmentation::Rotate180));
        assert_eq!(augment(&r90, Augmentation::Rotate270), t);
        let h = augment(&t, Augmentation::FlipHorizontal);
        assert_eq!(augment(&h, Augmentation::FlipHorizontal), t);
    }
}
