//! Rubber-sheet normalization: unwraps the iris annulus into a fixed
//! R×C polar grid with a validity mask.
//!
//! Row i sits at radial fraction ρ = i/(R−1); column j at angle
//! θ = 2πj/C, measured from +x and increasing clockwise on screen (the
//! crate-wide convention for top-left rasters). The source point for a
//! cell interpolates linearly between the pupil and iris boundary points
//! at that angle, so row 0 traces the pupil boundary and the last row the
//! iris boundary, whatever the eye's size.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgcore::{bilinear_sample, GrayImage, LabelMask, Point2D, LABEL_BACKGROUND};
use crate::segmentation::IrisGeometry;

pub const DEFAULT_SHEET_ROWS: usize = 64;
pub const DEFAULT_SHEET_COLS: usize = 512;

/// Size-normalized iris texture plus per-cell validity.
#[derive(Clone, Debug, PartialEq)]
pub struct RubberSheet {
    rows: usize,
    cols: usize,
    intensity: Vec<f64>,
    valid: Vec<bool>,
}

impl RubberSheet {
    pub fn new(rows: usize, cols: usize, intensity: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if rows < 2 || cols < 4 {
            return Err(Error::Parameter(format!("sheet size {rows}x{cols} below the 2x4 minimum")));
        }
        if intensity.len() != rows * cols || valid.len() != rows * cols {
            return Err(Error::Parameter(format!(
                "sheet buffers must hold {} cells, got {} intensities and {} flags",
                rows * cols,
                intensity.len(),
                valid.len()
            )));
        }
        if !intensity.iter().all(|v| v.is_finite() && (0.0..=255.0).contains(v)) {
            return Err(Error::Parameter("sheet intensities must lie in [0, 255]".into()));
        }
        Ok(RubberSheet { rows, cols, intensity, valid })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.intensity[row * self.cols + col]
    }

    pub fn valid_at(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.intensity[row * self.cols..(row + 1) * self.cols]
    }

    pub fn valid_row(&self, row: usize) -> &[bool] {
        &self.valid[row * self.cols..(row + 1) * self.cols]
    }

    /// Fraction of cells marked valid.
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }
}

/// Unwraps `img` between the geometry's pupil and iris circles into an
/// `rows × cols` sheet. Cells whose source point leaves the image, or
/// lands on a background-labelled pixel of the optional occlusion mask,
/// are marked invalid; their intensity is still the clamped bilinear
/// sample so downstream stages need no special case.
pub fn unwrap(
    img: &GrayImage,
    geom: &IrisGeometry,
    rows: usize,
    cols: usize,
    occlusion_mask: Option<&LabelMask>,
) -> Result<RubberSheet> {
    // Geometry fields are public; revalidate before trusting them.
    let geom = IrisGeometry::new(geom.pupil, geom.iris)?;
    if rows < 2 || cols < 4 {
        return Err(Error::Parameter(format!("sheet size {rows}x{cols} below the 2x4 minimum")));
    }
    if let Some(mask) = occlusion_mask {
        if (mask.width(), mask.height()) != (img.width(), img.height()) {
            return Err(Error::Parameter(format!(
                "occlusion mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                img.width(),
                img.height()
            )));
        }
    }
    let (pc, ic) = (geom.pupil.center(), geom.iris.center());
    let (pr, ir) = (geom.pupil.effective_radius(), geom.iris.effective_radius());
    let (last_x, last_y) = (f64::from(img.width() - 1), f64::from(img.height() - 1));
    let mut intensity = Vec::with_capacity(rows * cols);
    let mut valid = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let rho = i as f64 / (rows - 1) as f64;
        for j in 0..cols {
            let theta = std::f64::consts::TAU * j as f64 / cols as f64;
            let (sin, cos) = theta.sin_cos();
            let p = Point2D::new(pc.x + pr * cos, pc.y + pr * sin);
            let q = Point2D::new(ic.x + ir * cos, ic.y + ir * sin);
            let src = Point2D::lerp(p, q, rho);
            let mut ok = (0.0..=last_x).contains(&src.x) && (0.0..=last_y).contains(&src.y);
            if ok {
                if let Some(mask) = occlusion_mask {
                    let mx = src.x.round().clamp(0.0, last_x) as u32;
                    let my = src.y.round().clamp(0.0, last_y) as u32;
                    ok = mask.get(mx, my) != LABEL_BACKGROUND;
                }
            }
            intensity.push(bilinear_sample(img, src));
            valid.push(ok);
        }
    }
    RubberSheet::new(rows, cols, intensity, valid)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = stem.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Persists a sheet as `<stem>.rs.pgm` (intensity, rounded) plus
/// `<stem>.rsmask.pgm` (validity, 255 = valid).
pub fn save_rubber_sheet(stem: impl AsRef<Path>, sheet: &RubberSheet) -> Result<()> {
    let stem = stem.as_ref();
    let (w, h) = (sheet.cols as u32, sheet.rows as u32);
    let img = GrayImage::from_fn(w, h, |x, y| sheet.get(y as usize, x as usize).round() as u8);
    let mask = GrayImage::from_fn(w, h, |x, y| if sheet.valid_at(y as usize, x as usize) { 255 } else { 0 });
    crate::imgcore::save_pgm(with_suffix(stem, ".rs.pgm"), &img)?;
    crate::imgcore::save_pgm(with_suffix(stem, ".rsmask.pgm"), &mask)
}

/// Loads a sheet persisted by [`save_rubber_sheet`]. Mask pixels must be
/// exactly 0 or 255.
pub fn load_rubber_sheet(stem: impl AsRef<Path>) -> Result<RubberSheet> {
    let stem = stem.as_ref();
    let img = crate::imgcore::load_pgm(with_suffix(stem, ".rs.pgm"))?;
    let mask = crate::imgcore::load_pgm(with_suffix(stem, ".rsmask.pgm"))?;
    if (img.width(), img.height()) != (mask.width(), mask.height()) {
        return Err(Error::format(
            "rubber sheet",
            format!(
                "{}: intensity {}x{} and mask {}x{} disagree",
                stem.display(),
                img.width(),
                img.height(),
                mask.width(),
                mask.height()
            ),
        ));
    }
    let intensity = img.data().iter().map(|&v| f64::from(v)).collect();
    let valid = mask
        .data()
        .iter()
        .map(|&v| match v {
            255 => Ok(true),
            0 => Ok(false),
            other => Err(Error::format("rubber sheet mask", format!("pixel value {other} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    RubberSheet::new(img.height() as usize, img.width() as usize, intensity, valid)
}
