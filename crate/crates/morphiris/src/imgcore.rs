//! Image primitives shared by the whole pipeline: an 8-bit grayscale
//! raster, bit-exact binary PGM I/O, segmentation label masks, and
//! bilinear sampling.
//!
//! Coordinate convention, inherited by every other module: origin at the
//! top-left pixel, x grows rightward along columns, y grows downward along
//! rows. Angles measured from the +x axis increase through +y, which is
//! clockwise on screen.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale raster.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("image dimensions {width}x{height} must be nonzero")));
        }
        let expect = width as usize * height as usize;
        if data.len() != expect {
            return Err(Error::Parameter(format!(
                "image data length {} does not match {width}x{height} = {expect}",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        GrayImage { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, value: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize] = value;
    }
}

/// Sub-pixel coordinate. Origin top-left, x rightward, y downward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    /// Coordinates must be finite; NaN here would silently poison every
    /// downstream geometric computation.
    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite(), "non-finite point ({x}, {y})");
        Point2D { x, y }
    }

    /// Linear interpolation: `t = 0` gives `a`, `t = 1` gives `b`.
    pub fn lerp(a: Point2D, b: Point2D, t: f64) -> Point2D {
        Point2D::new(t * b.x + (1.0 - t) * a.x, t * b.y + (1.0 - t) * a.y)
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_IRIS: u8 = 1;
pub const LABEL_PUPIL: u8 = 2;

/// Per-pixel class mask produced by segmentation: 0 = background or
/// occluded, 1 = iris, 2 = pupil.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("mask dimensions {width}x{height} must be nonzero")));
        }
        if labels.len() != width as usize * height as usize {
            return Err(Error::Parameter(format!(
                "mask label length {} does not match {width}x{height}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&v| v > LABEL_PUPIL) {
            return Err(Error::Parameter(format!("mask label {bad} outside {{0,1,2}}")));
        }
        Ok(LabelMask { width, height, labels })
    }

    /// Reinterprets an 8-bit image as a label mask. Intensities must
    /// already be class values in {0,1,2}.
    pub fn from_image(img: &GrayImage) -> Result<Self> {
        LabelMask::new(img.width(), img.height(), img.data().to_vec())
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.labels.clone() }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, label: u8) {
        debug_assert!(x < self.width && y < self.height && label <= LABEL_PUPIL);
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }
}

struct PgmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmParser<'a> {
    fn error(&self, reason: impl Into<String>) -> Error {
        Error::PgmParse { offset: self.pos, reason: reason.into() }
    }

    /// Skips whitespace and '#' comment lines between header tokens.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn next_number(&mut self, what: &str) -> Result<u64> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.error(format!("unreadable {what}")))
    }
}

/// Decodes a binary PGM (magic "P5", maxval 255).
///
/// The header accepts arbitrary whitespace between tokens and '#' comment
/// lines; exactly one whitespace byte separates the maxval from the pixel
/// payload. Parse errors report the byte offset at which they occurred.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut p = PgmParser { bytes, pos: 0 };
    if !bytes.starts_with(b"P5") {
        return Err(p.error("expected magic \"P5\""));
    }
    p.pos = 2;
    let width = p.next_number("width")?;
    let height = p.next_number("height")?;
    let maxval_at = {
        p.skip_separators();
        p.pos
    };
    let maxval = p.next_number("maxval")?;
    if maxval != 255 {
        p.pos = maxval_at;
        return Err(p.error(format!("maxval {maxval} unsupported, only 255")));
    }
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(p.error(format!("bad dimensions {width}x{height}")));
    }
    let expect = (width as usize)
        .checked_mul(height as usize)
        .filter(|&n| n <= 1 << 30)
        .ok_or_else(|| p.error(format!("implausible dimensions {width}x{height}")))?;
    match bytes.get(p.pos) {
        Some(b' ' | b'\t' | b'\r' | b'\n') => p.pos += 1,
        _ => return Err(p.error("expected single whitespace before pixel data")),
    }
    let payload = &bytes[p.pos..];
    if payload.len() < expect {
        p.pos = bytes.len();
        return Err(p.error(format!("payload truncated: got {} of {expect} pixels", payload.len())));
    }
    GrayImage::new(width as u32, height as u32, payload[..expect].to_vec())
}

/// Encodes a binary PGM. `read_pgm(write_pgm(img))` is bit-exact.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.data());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pgm(&bytes).map_err(|e| match e {
        Error::PgmParse { offset, reason } => {
            Error::PgmParse { offset, reason: format!("{}: {reason}", path.display()) }
        }
        other => other,
    })
}

pub fn save_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Bilinear interpolation of the four pixels around `p`.
///
/// Coordinates are clamped to the image rectangle first, so samples beyond
/// the border replicate the edge pixel. Integer coordinates return the
/// stored value exactly.
pub fn bilinear_sample(img: &GrayImage, p: Point2D) -> f64 {
    let x = p.x.clamp(0.0, f64::from(img.width() - 1));
    let y = p.y.clamp(0.0, f64::from(img.height() - 1));
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - f64::from(x0);
    let fy = y - f64::from(y0);
    let v00 = f64::from(img.get(x0, y0));
    let v10 = f64::from(img.get(x1, y0));
    let v01 = f64::from(img.get(x0, y1));
    let v11 = f64::from(img.get(x1, y1));
    let top = v00 + fx * (v10 - v00);
    let bottom = v01 + fx * (v11 - v01);
    top + fy * (bottom - top)
}
