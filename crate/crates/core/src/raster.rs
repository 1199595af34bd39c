//! In-memory rasters and binary netpbm I/O.
//!
//! Only the binary variants are supported: `P6` for RGB input rasters and
//! `P5` for label and region maps. Samples wider than 8 bits are stored
//! big-endian, as the netpbm format prescribes.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed netpbm data: {0}")]
    Format(String),
    #[error("value {value} exceeds maxval {maxval}")]
    Range { value: u32, maxval: u32 },
    #[error("raster must have non-zero extent, got {width}x{height}")]
    Empty { width: usize, height: usize },
}

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height * 3 {
            return Err(RasterError::Format(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    /// Copy of the `w`x`h` block whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * w * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }

    /// Nearest-neighbour resampling; source index is `floor(dst * src_len / dst_len)`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

/// Single-channel raster of integer samples (labels, region ids).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Plane<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::Format(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<T> {
        self.data
    }
}

/// Per-pixel class ids.
pub type LabelMap = Plane<u16>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, RasterError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(RasterError::Format("missing netpbm magic".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Format("expected decimal header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::Format("header field out of range".into()))?;
    }
    // exactly one whitespace byte separates header and raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(RasterError::Format("missing separator after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(RasterError::Format(format!("invalid maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(RasterError::Format("expected binary PPM (P6)".into()));
    }
    if h.maxval != 255 {
        return Err(RasterError::Format(format!(
            "only maxval 255 PPM is supported, got {}",
            h.maxval
        )));
    }
    let need = h.width * h.height * 3;
    let body = &bytes[h.data_offset..];
    if body.len() < need {
        return Err(RasterError::Format(format!(
            "truncated raster: need {need} bytes, have {}",
            body.len()
        )));
    }
    RgbImage::from_raw(h.width, h.height, body[..need].to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Decodes a binary PGM; returns the samples and the declared maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<(Plane<u16>, u16), RasterError> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(RasterError::Format("expected binary PGM (P5)".into()));
    }
    let wide = h.maxval > 255;
    let n = h.width * h.height;
    let need = if wide { 2 * n } else { n };
    let body = &bytes[h.data_offset..];
    if body.len() < need {
        return Err(RasterError::Format(format!(
            "truncated raster: need {need} bytes, have {}",
            body.len()
        )));
    }
    let data: Vec<u16> = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(&v) = data.iter().find(|&&v| v as u32 > h.maxval) {
        return Err(RasterError::Range {
            value: v as u32,
            maxval: h.maxval,
        });
    }
    Ok((Plane::from_raw(h.width, h.height, data)?, h.maxval as u16))
}

pub fn encode_pgm(plane: &Plane<u16>, maxval: u16) -> Result<Vec<u8>, RasterError> {
    if maxval == 0 {
        return Err(RasterError::Format("maxval must be positive".into()));
    }
    if let Some(&v) = plane.data.iter().find(|&&v| v > maxval) {
        return Err(RasterError::Range {
            value: v as u32,
            maxval: maxval as u32,
        });
    }
    let mut out = format!("P5\n{} {}\n{}\n", plane.width, plane.height, maxval).into_bytes();
    if maxval > 255 {
        for v in &plane.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(plane.data.iter().map(|&v| v as u8));
    }
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), RasterError> {
    let path = path.as_ref();
    write_bytes(path, &encode_ppm(img))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(Plane<u16>, u16), RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, plane: &Plane<u16>, maxval: u16) -> Result<(), RasterError> {
    let path = path.as_ref();
    write_bytes(path, &encode_pgm(plane, maxval)?)
}

/// Writes a label map with the narrowest sample width that holds every id.
pub fn write_label_map(path: impl AsRef<Path>, labels: &LabelMap) -> Result<(), RasterError> {
    let max = labels.as_slice().iter().copied().max().unwrap_or(0);
    let maxval = if max <= 255 { 255 } else { 65535 };
    write_pgm(path, labels, maxval)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_header_layout_is_fixed() {
        let img = RgbImage::filled(2, 1, [1, 2, 3]);
        assert_eq!(encode_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
    }

    #[test]
    fn pgm_16bit_is_big_endian() {
        let p = Plane::from_raw(2, 1, vec![0x0102u16, 7]).unwrap();
        let bytes = encode_pgm(&p, 65535).unwrap();
        assert_eq!(bytes, b"P5\n2 1\n65535\n\x01\x02\x00\x07".to_vec());
        assert_eq!(decode_pgm(&bytes).unwrap(), (p, 65535));
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n\x05\x06";
        let (p, maxval) = decode_pgm(bytes).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(p.as_slice(), &[5, 6]);
    }

    #[test]
    fn truncated_and_wrong_magic_rejected() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn out_of_range_sample_rejected_on_encode() {
        let p = Plane::from_raw(1, 1, vec![300u16]).unwrap();
        assert!(matches!(encode_pgm(&p, 255), Err(RasterError::Range { .. })));
    }

    #[test]
    fn resize_nearest_picks_floor_index() {
        let mut img = RgbImage::new(4, 1);
        for x in 0..4 {
            img.set(x, 0, [x as u8; 3]);
        }
        let half = img.resize_nearest(2, 1);
        assert_eq!(half.get(0, 0), [0; 3]);
        assert_eq!(half.get(1, 0), [2; 3]);
    }

    proptest! {
        #[test]
        fn ppm_roundtrip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let data: Vec<u8> = (0..w * h * 3)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 29) as u8)
                .collect();
            let img = RgbImage::from_raw(w, h, data).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }

        #[test]
        fn pgm_roundtrip(vals in proptest::collection::vec(any::<u16>(), 1..40)) {
            let p = Plane::from_raw(vals.len(), 1, vals).unwrap();
            let bytes = encode_pgm(&p, 65535).unwrap();
            prop_assert_eq!(decode_pgm(&bytes).unwrap().0, p);
        }
    }
}
