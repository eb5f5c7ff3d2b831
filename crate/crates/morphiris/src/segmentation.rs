//! Threshold segmentation of periocular eye images and least-squares
//! circle fitting of the pupil and iris boundaries.
//!
//! The output geometry is the `[cx, cy, r_min, r_max]` parameter block per
//! boundary that normalization and morph generation consume. Circles are
//! fitted (not general ellipses); both radii of a fit are equal and the
//! effective radius of an external elliptical annotation is the mean of
//! its two radii.

use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, LabelMask, Point2D, LABEL_BACKGROUND, LABEL_IRIS, LABEL_PUPIL};

pub const DEFAULT_PUPIL_THRESH: u8 = 40;
pub const DEFAULT_IRIS_THRESH: u8 = 180;

/// Axis-aligned boundary parameters `[cx, cy, r_min, r_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl EllipseParams {
    pub fn new(cx: f64, cy: f64, r_min: f64, r_max: f64) -> Result<Self> {
        if ![cx, cy, r_min, r_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry("non-finite ellipse parameter".into()));
        }
        if !(r_min > 0.0 && r_min <= r_max) {
            return Err(Error::Geometry(format!("radii must satisfy 0 < r_min ≤ r_max, got {r_min}, {r_max}")));
        }
        Ok(EllipseParams { cx, cy, r_min, r_max })
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Result<Self> {
        EllipseParams::new(cx, cy, r, r)
    }

    pub fn center(&self) -> Point2D {
        Point2D::new(self.cx, self.cy)
    }

    /// Scalar radius used by all downstream stages.
    pub fn effective_radius(&self) -> f64 {
        0.5 * (self.r_min + self.r_max)
    }
}

/// Pupil and iris boundary circles of one eye.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrisGeometry {
    pub pupil: EllipseParams,
    pub iris: EllipseParams,
}

impl IrisGeometry {
    /// Validates that the pupil annulus sits strictly inside the iris.
    pub fn new(pupil: EllipseParams, iris: EllipseParams) -> Result<Self> {
        if pupil.r_max >= iris.r_min {
            return Err(Error::Geometry(format!(
                "pupil radius not below iris radius: pupil {pupil:?}, iris {iris:?}"
            )));
        }
        let center_gap = pupil.center().distance(iris.center());
        if center_gap >= iris.r_min - pupil.r_max {
            return Err(Error::Geometry(format!(
                "pupil not strictly inside iris (center offset {center_gap:.3}): pupil {pupil:?}, iris {iris:?}"
            )));
        }
        Ok(IrisGeometry { pupil, iris })
    }
}

/// Labels pixels by intensity bands, then keeps only the largest connected
/// component of each foreground class.
///
/// Below `pupil_thresh` → pupil (2); below `iris_thresh` → iris (1);
/// otherwise background (0). Components use 4-connectivity; among equally
/// sized components the one reached first in row-major scan order wins.
pub fn segment_threshold(img: &GrayImage, pupil_thresh: u8, iris_thresh: u8) -> Result<LabelMask> {
    if pupil_thresh >= iris_thresh {
        return Err(Error::Parameter(format!(
            "pupil threshold {pupil_thresh} must lie below iris threshold {iris_thresh}"
        )));
    }
    let labels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| {
            if v < pupil_thresh {
                LABEL_PUPIL
            } else if v < iris_thresh {
                LABEL_IRIS
            } else {
                LABEL_BACKGROUND
            }
        })
        .collect();
    let mut mask = LabelMask::new(img.width(), img.height(), labels)?;
    for (class, name) in [(LABEL_PUPIL, "pupil"), (LABEL_IRIS, "iris")] {
        keep_largest_component(&mut mask, class).map_err(|_| {
            Error::Segmentation(format!(
                "no {name} pixels under thresholds ({pupil_thresh}, {iris_thresh})"
            ))
        })?;
    }
    Ok(mask)
}

/// Relabels all but the largest 4-connected component of `class` to
/// background. Errs when the class is empty.
fn keep_largest_component(mask: &mut LabelMask, class: u8) -> Result<()> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let labels = mask.labels();
    // 0 = not this class, 1 = unvisited member, 2+k = member of component k.
    let mut comp = vec![0u32; w * h];
    for (i, &l) in labels.iter().enumerate() {
        if l == class {
            comp[i] = 1;
        }
    }
    let mut best: Option<(usize, u32)> = None;
    let mut next_id = 2u32;
    let mut stack = Vec::new();
    for start in 0..comp.len() {
        if comp[start] != 1 {
            continue;
        }
        let id = next_id;
        next_id += 1;
        let mut count = 0usize;
        stack.push(start);
        comp[start] = id;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % w, i / w);
            let mut try_push = |j: usize| {
                if comp[j] == 1 {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                try_push(i - 1);
            }
            if x + 1 < w {
                try_push(i + 1);
            }
            if y > 0 {
                try_push(i - w);
            }
            if y + 1 < h {
                try_push(i + w);
            }
        }
        // Strict comparison keeps the first-scanned component on ties.
        if best.is_none_or(|(best_count, _)| count > best_count) {
            best = Some((count, id));
        }
    }
    let Some((_, keep)) = best else {
        return Err(Error::Segmentation(format!("class {class} has no pixels")));
    };
    for (i, &c) in comp.iter().enumerate() {
        if c >= 2 && c != keep {
            let (x, y) = (i % w, i / w);
            mask.put(x as u32, y as u32, LABEL_BACKGROUND);
        }
    }
    Ok(())
}

/// Algebraic least-squares circle fit (Kåsa linearization).
///
/// Minimizes Σ((x−cx)² + (y−cy)² − r²)² through the linearized normal
/// equations, solved in centroid-centered coordinates for conditioning.
/// Exact for points sampled from a true circle.
pub fn fit_circle_lms(points: &[Point2D]) -> Result<EllipseParams> {
    if points.len() < 3 {
        return Err(Error::CircleFit(format!("need at least 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
    for p in points {
        let x = p.x - mx;
        let y = p.y - my;
        let z = x * x + y * y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
        sz += z;
    }
    // In centered coordinates the normal equations decouple: the center
    // solves the 2x2 scatter system, the radius follows from the mean
    // squared distance.
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx + syy) * (sxx + syy) {
        return Err(Error::CircleFit("points are collinear or nearly so".into()));
    }
    let cx = 0.5 * (syy * sxz - sxy * syz) / det;
    let cy = 0.5 * (sxx * syz - sxy * sxz) / det;
    let r2 = cx * cx + cy * cy + sz / n;
    // Negated so that a NaN radius is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(r2 > 0.0) {
        return Err(Error::CircleFit("degenerate radius".into()));
    }
    let r = r2.sqrt();
    EllipseParams::circle(cx + mx, cy + my, r).map_err(|e| Error::CircleFit(e.to_string()))
}

/// Sub-pixel boundary samples of the region `pred` selects: the midpoint
/// of every (member, non-member) 4-neighbour pixel pair. Pixels flush with
/// the image border contribute no samples along that border.
fn boundary_points(mask: &LabelMask, pred: impl Fn(u8) -> bool) -> Vec<Point2D> {
    let (w, h) = (mask.width(), mask.height());
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !pred(mask.get(x, y)) {
                continue;
            }
            let deltas: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
            for (dx, dy) in deltas {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                if !pred(mask.get(nx as u32, ny as u32)) {
                    pts.push(Point2D::new(
                        f64::from(x) + 0.5 * dx as f64,
                        f64::from(y) + 0.5 * dy as f64,
                    ));
                }
            }
        }
    }
    pts
}

/// Fits the pupil boundary and the outer iris boundary of a label mask.
///
/// The pupil circle is fitted to the edge of the pupil region, the iris
/// circle to the outer edge of the combined pupil-plus-iris region. The
/// result must satisfy the [`IrisGeometry`] invariants.
pub fn geometry_from_mask(mask: &LabelMask) -> Result<IrisGeometry> {
    let pupil_pts = boundary_points(mask, |l| l == LABEL_PUPIL);
    if pupil_pts.is_empty() {
        return Err(Error::Segmentation("mask has no pupil boundary".into()));
    }
    let iris_pts = boundary_points(mask, |l| l != LABEL_BACKGROUND);
    if iris_pts.is_empty() {
        return Err(Error::Segmentation("mask has no iris boundary".into()));
    }
    let pupil = fit_circle_lms(&pupil_pts)?;
    let iris = fit_circle_lms(&iris_pts)?;
    IrisGeometry::new(pupil, iris)
}
