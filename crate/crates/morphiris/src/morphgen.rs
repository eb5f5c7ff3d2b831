//! Morph generation: landmark synthesis from iris geometry, Delaunay
//! triangulation, piecewise-affine warping to an average shape, and
//! linear blending.
//!
//! Landmarks are 36 pupil-boundary points and 36 iris-boundary points at
//! 10° steps (θ measured from +x, clockwise on screen), plus the four
//! image corners, 76 in total. Corners pin the convex hull to the full
//! frame so the warp writes every output pixel.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::imgcore::{bilinear_sample, GrayImage, Point2D};
use crate::segmentation::IrisGeometry;

pub const LANDMARK_COUNT: usize = 76;
const BOUNDARY_POINTS: usize = 36;
/// Triangles thinner than this signed area are treated as degenerate.
const MIN_TRIANGLE_AREA: f64 = 1e-9;

fn coord(p: Point2D) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

fn signed_area(a: Point2D, b: Point2D, c: Point2D) -> f64 {
    0.5 * orient2d(coord(a), coord(b), coord(c))
}

/// Ordered set of exactly 76 morph landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point2D>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2D>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Landmark(format!("expected {LANDMARK_COUNT} points, got {}", points.len())));
        }
        if !points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Landmark("non-finite landmark coordinate".into()));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn get(&self, index: usize) -> Point2D {
        self.points[index]
    }

    /// Per-index weighted mean `alpha·a + (1−alpha)·b`: the average
    /// shape, weighted consistently with pixel blending.
    ///
    /// Coordinates equal in both shapes pass through exactly: the frame
    /// corners must stay pinned at every alpha (the weighted sum rounds
    /// them inward, e.g. 0.3·199 + 0.7·199 < 199) or the hull shrinks
    /// below the full frame and border pixels lose coverage.
    pub fn weighted_average(a: &LandmarkSet, b: &LandmarkSet, alpha: f64) -> Result<LandmarkSet> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("alpha {alpha} outside [0, 1]")));
        }
        let mix = |u: f64, v: f64| if u == v { u } else { alpha * u + (1.0 - alpha) * v };
        let points = a
            .points
            .iter()
            .zip(&b.points)
            .map(|(&pa, &pb)| Point2D::new(mix(pa.x, pb.x), mix(pa.y, pb.y)))
            .collect();
        LandmarkSet::new(points)
    }
}

/// Builds the 76-landmark set for one eye: indices 0..36 trace the pupil
/// boundary, 36..72 the iris boundary (10° apart, starting at θ=0 on the
/// +x axis), 72..76 are the corners top-left, top-right, bottom-left,
/// bottom-right.
pub fn generate_landmarks(geom: &IrisGeometry, width: u32, height: u32) -> Result<LandmarkSet> {
    let geom = IrisGeometry::new(geom.pupil, geom.iris)?;
    let (last_x, last_y) = (f64::from(width - 1), f64::from(height - 1));
    let ic = geom.iris.center();
    let ir = geom.iris.effective_radius();
    if ic.x - ir < 0.0 || ic.x + ir > last_x || ic.y - ir < 0.0 || ic.y + ir > last_y {
        return Err(Error::Landmark(format!(
            "iris circle at ({}, {}) radius {ir} extends beyond the {width}x{height} image",
            ic.x, ic.y
        )));
    }
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    for (center, radius) in [(geom.pupil.center(), geom.pupil.effective_radius()), (ic, ir)] {
        for k in 0..BOUNDARY_POINTS {
            let theta = (k as f64 * 10.0).to_radians();
            let (sin, cos) = theta.sin_cos();
            points.push(Point2D::new(center.x + radius * cos, center.y + radius * sin));
        }
    }
    points.push(Point2D::new(0.0, 0.0));
    points.push(Point2D::new(last_x, 0.0));
    points.push(Point2D::new(0.0, last_y));
    points.push(Point2D::new(last_x, last_y));
    LandmarkSet::new(points)
}

/// Vertex indices of one triangle, stored in increasing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triangle {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl Triangle {
    pub fn new(a: usize, b: usize, c: usize) -> Result<Self> {
        if a == b || b == c || a == c {
            return Err(Error::Triangulation(format!("triangle ({a}, {b}, {c}) repeats a vertex")));
        }
        let mut v = [a, b, c];
        v.sort_unstable();
        Ok(Triangle { a: v[0], b: v[1], c: v[2] })
    }

    pub fn vertices(&self) -> [usize; 3] {
        [self.a, self.b, self.c]
    }
}

/// Delaunay triangulation by incremental insertion (Bowyer-Watson) with
/// exact geometric predicates.
///
/// Points are inserted in index order and the in-circumcircle test is
/// strict, so quadruples of cocircular points resolve deterministically
/// in favour of the earlier-indexed diagonal. The returned triangles are
/// canonicalized and sorted.
pub fn delaunay(points: &[Point2D]) -> Result<Vec<Triangle>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Triangulation(format!("need at least 3 points, got {n}")));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Triangulation(format!("point {i} is not finite")));
        }
        for (j, q) in points.iter().enumerate().take(i) {
            if p.x == q.x && p.y == q.y {
                return Err(Error::Triangulation(format!("points {j} and {i} coincide at ({}, {})", p.x, p.y)));
            }
        }
    }
    // Points 0 and 1 are distinct (duplicates were rejected), so the set
    // is collinear iff every point sits on the line through them.
    let (l0, l1) = (points[0], points[1]);
    if points.iter().all(|&c| orient2d(coord(l0), coord(l1), coord(c)) == 0.0) {
        return Err(Error::Triangulation("all points are collinear".into()));
    }

    // Work list: real points then three far-away super-triangle vertices.
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let (cx, cy) = (0.5 * (min_x + max_x), 0.5 * (min_y + max_y));
    // Far enough out that circumcircles of plausible real triangles
    // cannot reach the super vertices; predicates stay exact at any
    // magnitude, and the tests validate hull coverage independently.
    let far = 5.0e6 * span;
    let mut work: Vec<Point2D> = points.to_vec();
    work.push(Point2D::new(cx - far, cy - 0.6 * far));
    work.push(Point2D::new(cx + far, cy - 0.6 * far));
    work.push(Point2D::new(cx, cy + 1.2 * far));

    // Triangles kept CCW in predicate orientation.
    let ccw = |t: [usize; 3], w: &[Point2D]| -> [usize; 3] {
        if orient2d(coord(w[t[0]]), coord(w[t[1]]), coord(w[t[2]])) < 0.0 {
            [t[0], t[2], t[1]]
        } else {
            t
        }
    };
    let mut tris: Vec<[usize; 3]> = vec![ccw([n, n + 1, n + 2], &work)];
    for p in 0..n {
        let pt = coord(work[p]);
        let mut bad = Vec::new();
        let mut good = Vec::new();
        for t in tris.drain(..) {
            let strictly_inside = incircle(coord(work[t[0]]), coord(work[t[1]]), coord(work[t[2]]), pt) > 0.0;
            if strictly_inside {
                bad.push(t);
            } else {
                good.push(t);
            }
        }
        if bad.is_empty() {
            return Err(Error::Triangulation(format!("point {p} fell outside the working triangulation")));
        }
        // Directed boundary edges of the cavity: edges whose reverse does
        // not appear among the bad triangles.
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &bad {
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((u, v)).or_insert(0) += 1;
            }
        }
        tris = good;
        for (&(u, v), _) in edges.iter().filter(|(_, &c)| c == 1) {
            if edges.contains_key(&(v, u)) {
                continue;
            }
            if orient2d(coord(work[u]), coord(work[v]), pt) <= 0.0 {
                return Err(Error::Triangulation(format!(
                    "degenerate cavity fan inserting point {p}: collinear with edge ({u}, {v})"
                )));
            }
            tris.push([u, v, p]);
        }
        // HashMap iteration order varies; restore determinism.
        tris.sort_unstable();
    }
    let mut out: Vec<Triangle> = tris
        .into_iter()
        .filter(|t| t.iter().all(|&v| v < n))
        .map(|t| Triangle::new(t[0], t[1], t[2]))
        .collect::<Result<_>>()?;
    out.sort_unstable();
    if out.is_empty() {
        return Err(Error::Triangulation("no triangles survive super-vertex removal".into()));
    }
    Ok(out)
}

/// Row-major 3×3 affine matrix; the bottom row is exactly (0, 0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    m: [[f64; 3]; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        Point2D::new(
            self.m[0][0] * p.x + self.m[0][1] * p.y + self.m[0][2],
            self.m[1][0] * p.x + self.m[1][1] * p.y + self.m[1][2],
        )
    }
}

/// Solves for the affine map sending each `src` vertex to the matching
/// `dst` vertex: T = A·X⁻¹ with X/A the homogeneous vertex matrices.
pub fn affine_from_triangles(src: [Point2D; 3], dst: [Point2D; 3]) -> Result<AffineTransform> {
    let area = signed_area(src[0], src[1], src[2]);
    if area.abs() <= MIN_TRIANGLE_AREA {
        return Err(Error::Geometry(format!(
            "source triangle {src:?} is degenerate (area {area:.3e}), affine map is singular"
        )));
    }
    // X = [[x0 x1 x2], [y0 y1 y2], [1 1 1]]; det(X) = 2·signed area.
    let det = 2.0 * area;
    let [p0, p1, p2] = src;
    // Adjugate of X, row-major: inv = adj / det.
    let adj = [
        [p1.y - p2.y, p2.x - p1.x, p1.x * p2.y - p2.x * p1.y],
        [p2.y - p0.y, p0.x - p2.x, p2.x * p0.y - p0.x * p2.y],
        [p0.y - p1.y, p1.x - p0.x, p0.x * p1.y - p1.x * p0.y],
    ];
    let a_rows = [[dst[0].x, dst[1].x, dst[2].x], [dst[0].y, dst[1].y, dst[2].y]];
    let mut m = [[0.0; 3]; 3];
    for (r, a_row) in a_rows.iter().enumerate() {
        for c in 0..3 {
            m[r][c] = (a_row[0] * adj[0][c] + a_row[1] * adj[1][c] + a_row[2] * adj[2][c]) / det;
        }
    }
    // The bottom row is (0,0,1) analytically; pin it to keep the
    // invariant exact.
    m[2] = [0.0, 0.0, 1.0];
    Ok(AffineTransform { m })
}

/// Warps `img` from the `src_lm` shape onto the `dst_lm` shape.
///
/// Each output pixel inside a destination triangle samples the input at
/// the inverse affine image of the pixel. Triangles claim pixels in list
/// order (first writer wins on shared edges); point-in-triangle tests use
/// exact predicates, so ownership is deterministic. Pixels outside every
/// triangle stay 0.
pub fn warp_to_shape(
    img: &GrayImage,
    src_lm: &LandmarkSet,
    dst_lm: &LandmarkSet,
    triangles: &[Triangle],
) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let (src, dst) = (src_lm.points(), dst_lm.points());
    let mut out = GrayImage::filled(w, h, 0);
    let mut written = vec![false; w as usize * h as usize];
    for tri in triangles {
        let [ia, ib, ic] = tri.vertices();
        if ia >= src.len() || ic >= src.len() {
            return Err(Error::Triangulation(format!("triangle ({ia}, {ib}, {ic}) indexes past the landmark list")));
        }
        let s = [src[ia], src[ib], src[ic]];
        let mut d = [dst[ia], dst[ib], dst[ic]];
        let d_area = signed_area(d[0], d[1], d[2]);
        if d_area.abs() <= MIN_TRIANGLE_AREA || signed_area(s[0], s[1], s[2]).abs() <= MIN_TRIANGLE_AREA {
            return Err(Error::Triangulation(format!("triangle ({ia}, {ib}, {ic}) is degenerate in one shape")));
        }
        let inv = affine_from_triangles(d, s)?;
        if d_area < 0.0 {
            d.swap(1, 2);
        }
        let xs = d.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let xe = d.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil().min(f64::from(w - 1)) as u32;
        let ys = d.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let ye = d.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil().min(f64::from(h - 1)) as u32;
        for y in ys..=ye {
            for x in xs..=xe {
                let idx = (y * w + x) as usize;
                if written[idx] {
                    continue;
                }
                let p = Point2D::new(f64::from(x), f64::from(y));
                let inside = orient2d(coord(d[0]), coord(d[1]), coord(p)) >= 0.0
                    && orient2d(coord(d[1]), coord(d[2]), coord(p)) >= 0.0
                    && orient2d(coord(d[2]), coord(d[0]), coord(p)) >= 0.0;
                if inside {
                    let value = bilinear_sample(img, inv.apply(p));
                    out.put(x, y, value.round().clamp(0.0, 255.0) as u8);
                    written[idx] = true;
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel linear blend `alpha·a + (1−alpha)·b`, rounded to nearest.
pub fn blend(a: &GrayImage, b: &GrayImage, alpha: f64) -> Result<GrayImage> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Parameter(format!(
            "blend inputs {}x{} vs {}x{} differ in size",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(GrayImage::from_fn(a.width(), a.height(), |x, y| {
        let v = alpha * f64::from(a.get(x, y)) + (1.0 - alpha) * f64::from(b.get(x, y));
        v.round().clamp(0.0, 255.0) as u8
    }))
}

/// A finished morph plus the shape it was rendered in.
#[derive(Clone, Debug)]
pub struct MorphResult {
    pub morph: GrayImage,
    pub avg_landmarks: LandmarkSet,
    pub alpha: f64,
    pub parent_a: String,
    pub parent_b: String,
}

/// Full morph pipeline: landmarks for both eyes, α-weighted average
/// shape, Delaunay triangulation of that shape, warp both images onto
/// it, blend. Errors are annotated with the parent ids.
pub fn morph_pair(
    img_a: &GrayImage,
    geom_a: &IrisGeometry,
    img_b: &GrayImage,
    geom_b: &IrisGeometry,
    alpha: f64,
    id_a: &str,
    id_b: &str,
) -> Result<MorphResult> {
    morph_pair_inner(img_a, geom_a, img_b, geom_b, alpha, id_a, id_b).map_err(|e| match e {
        already @ Error::Morph { .. } => already,
        source => Error::Morph { subject_a: id_a.to_string(), subject_b: id_b.to_string(), source: Box::new(source) },
    })
}

fn morph_pair_inner(
    img_a: &GrayImage,
    geom_a: &IrisGeometry,
    img_b: &GrayImage,
    geom_b: &IrisGeometry,
    alpha: f64,
    id_a: &str,
    id_b: &str,
) -> Result<MorphResult> {
    if (img_a.width(), img_a.height()) != (img_b.width(), img_b.height()) {
        return Err(Error::Parameter(format!(
            "parent images {}x{} vs {}x{} differ in size",
            img_a.width(),
            img_a.height(),
            img_b.width(),
            img_b.height()
        )));
    }
    let lm_a = generate_landmarks(geom_a, img_a.width(), img_a.height())?;
    let lm_b = generate_landmarks(geom_b, img_b.width(), img_b.height())?;
    let avg = LandmarkSet::weighted_average(&lm_a, &lm_b, alpha)?;
    let triangles = delaunay(avg.points())?;
    let warped_a = warp_to_shape(img_a, &lm_a, &avg, &triangles)?;
    let warped_b = warp_to_shape(img_b, &lm_b, &avg, &triangles)?;
    let morph = blend(&warped_a, &warped_b, alpha)?;
    Ok(MorphResult {
        morph,
        avg_landmarks: avg,
        alpha,
        parent_a: id_a.to_string(),
        parent_b: id_b.to_string(),
    })
}
