//! 8-bit grayscale and binary rasters, plus binary PGM (P5) I/O.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Result<Self, ImageError> {
        Self::from_vec(width, height, vec![fill; width.saturating_mul(height)])
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_vec(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Copies the `width`×`height` window whose top-left pixel is `(x0, y0)`.
    /// The window is clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self, ImageError> {
        let x1 = (x0 + width).min(self.width);
        let y1 = (y0 + height).min(self.height);
        let w = x1.saturating_sub(x0);
        let h = y1.saturating_sub(y0);
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y1 {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x1]);
        }
        Self::from_vec(w, h, pixels)
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }

    /// Draws the outline of an inclusive pixel rectangle, clipped to the image.
    pub fn draw_rect(&mut self, min: (usize, usize), max: (usize, usize), value: u8) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let (x0, y0) = (min.0.min(self.width - 1), min.1.min(self.height - 1));
        let (x1, y1) = (max.0.min(self.width - 1), max.1.min(self.height - 1));
        for x in x0..=x1 {
            self.set(x, y0, value);
            self.set(x, y1, value);
        }
        for y in y0..=y1 {
            self.set(x0, y, value);
            self.set(x1, y, value);
        }
    }
}

/// Foreground mask; `true` marks a defect candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Result<Self, ImageError> {
        Self::from_vec(width, height, vec![false; width.saturating_mul(height)])
    }

    pub fn from_vec(width: usize, height: usize, mask: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if mask.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: mask.len() });
        }
        Ok(Self { width, height, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.mask[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Foreground as 255, background as 0.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage { width: self.width, height: self.height, pixels }
    }
}

/// Writes a binary PGM: `P5\n<w> <h>\n255\n` followed by raw bytes.
pub fn write_pgm<W: Write>(mut out: W, img: &GrayImage) -> Result<(), ImageError> {
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.pixels)?;
    out.flush()?;
    Ok(())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(img.pixels.len() + 20);
    write_pgm(&mut buf, img).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a binary PGM (P5) with maxval ≤ 255. Header comments are skipped.
pub fn read_pgm<R: Read>(mut input: R) -> Result<GrayImage, ImageError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    decode_pgm(&data)
}

pub fn decode_pgm(data: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 0usize;
    let magic = next_token(data, &mut pos)?;
    if magic != b"P5" {
        return Err(ImageError::Pgm(format!(
            "unsupported magic {:?}, expected P5",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_header_number(data, &mut pos, "width")?;
    let height = parse_header_number(data, &mut pos, "height")?;
    let maxval = parse_header_number(data, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::Pgm(format!("maxval {maxval} not in 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Pgm("missing whitespace after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::Pgm("dimensions overflow".into()))?;
    let raster = &data[pos..];
    if raster.len() < expected {
        return Err(ImageError::Pgm(format!(
            "raster truncated: {} bytes, expected {expected}",
            raster.len()
        )));
    }
    let mut pixels = raster[..expected].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            if *p as usize > maxval {
                return Err(ImageError::Pgm(format!("sample {p} exceeds maxval {maxval}")));
            }
            *p = ((*p as usize * 255 + maxval / 2) / maxval) as u8;
        }
    }
    GrayImage::from_vec(width, height, pixels)
}

fn next_token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Pgm("unexpected end of header".into()));
    }
    Ok(&data[start..*pos])
}

fn parse_header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize, ImageError> {
    let tok = next_token(data, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| ImageError::Pgm(format!("invalid {what} {:?}", String::from_utf8_lossy(tok))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_is_exact() {
        let img = GrayImage::from_vec(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 253, 254, 255]);
    }

    #[test]
    fn pgm_reader_skips_comments() {
        let mut data = b"P5\n# made by hand\n2 # width\n1\n255\n".to_vec();
        data.extend_from_slice(&[10, 20]);
        let img = decode_pgm(&data).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[10, 20]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn crop_and_rect() {
        let img = GrayImage::from_fn(5, 4, |x, y| (y * 5 + x) as u8).unwrap();
        let c = img.crop(1, 1, 3, 2).unwrap();
        assert_eq!(c.pixels(), &[6, 7, 8, 11, 12, 13]);
        let mut canvas = GrayImage::new(5, 5, 0).unwrap();
        canvas.draw_rect((1, 1), (3, 3), 255);
        assert_eq!(canvas.histogram()[255], 8);
        assert_eq!(canvas.get(2, 2), 0);
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let img = GrayImage::from_fn(w, h, |x, y| {
                (seed.wrapping_mul(31).wrapping_add((x * 7919 + y * 104729) as u64) % 256) as u8
            }).unwrap();
            let back = decode_pgm(&encode_pgm(&img)).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
