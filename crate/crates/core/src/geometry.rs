//! Planar projective geometry for the overhead camera: four-point homography
//! estimation, image rectification, and rectified-pixel to bed-millimetre mapping.
//!
//! Pixel convention: `u` grows to the right, `v` grows downward, and integer
//! coordinates address pixel centers (the top-left pixel center is `(0, 0)`).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate calibration quad: {0}")]
    DegenerateQuad(String),
    #[error("point ({u}, {v}) maps to infinity")]
    PointAtInfinity { u: f64, v: f64 },
    #[error("homography is not invertible (|det| = {det:e})")]
    NonInvertible { det: f64 },
    #[error("invalid bed mapping: {0}")]
    InvalidMapping(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl From<[f64; 2]> for PixelPoint {
    fn from([u, v]: [f64; 2]) -> Self {
        Self { u, v }
    }
}

impl From<PixelPoint> for [f64; 2] {
    fn from(p: PixelPoint) -> Self {
        [p.u, p.v]
    }
}

/// A point on the bed plane in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct BedPoint {
    pub x: f64,
    pub y: f64,
}

impl BedPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &BedPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for BedPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<BedPoint> for [f64; 2] {
    fn from(p: BedPoint) -> Self {
        [p.x, p.y]
    }
}

/// Projective map `p' ~ H p`, stored with `H[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(du: f64, dv: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, du, 0.0, 1.0, dv, 0.0, 0.0, 1.0))
    }

    /// Normalizes `m` so its bottom-right entry is 1 and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("homography matrix"));
        }
        let scale = m[(2, 2)];
        if scale.abs() <= f64::EPSILON * m.abs().max() {
            return Err(GeometryError::NonInvertible { det: m.determinant() });
        }
        let h = m / scale;
        let det = h.determinant();
        if det.abs() <= 1e-12 || !det.is_finite() {
            return Err(GeometryError::NonInvertible { det });
        }
        Ok(Self(h))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.0[(r, c)]))
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(GeometryError::NonInvertible { det: self.0.determinant() })?;
        Self::from_matrix(inv)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(self.0 * first.0)
    }

    pub fn apply(&self, p: PixelPoint) -> Result<PixelPoint, GeometryError> {
        apply_homography(self, p)
    }
}

pub fn apply_homography(h: &Homography, p: PixelPoint) -> Result<PixelPoint, GeometryError> {
    let m = &h.0;
    let w = m[(2, 0)] * p.u + m[(2, 1)] * p.v + m[(2, 2)];
    if w == 0.0 || !w.is_finite() {
        return Err(GeometryError::PointAtInfinity { u: p.u, v: p.v });
    }
    Ok(PixelPoint::new(
        (m[(0, 0)] * p.u + m[(0, 1)] * p.v + m[(0, 2)]) / w,
        (m[(1, 0)] * p.u + m[(1, 1)] * p.v + m[(1, 2)]) / w,
    ))
}

/// Four source → target correspondences. Source corners must form a strictly
/// convex quadrilateral listed in a consistent winding order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationQuad {
    pub source: [PixelPoint; 4],
    pub target: [PixelPoint; 4],
}

impl CalibrationQuad {
    pub fn new(source: [PixelPoint; 4], target: [PixelPoint; 4]) -> Result<Self, GeometryError> {
        let quad = Self { source, target };
        quad.validate()?;
        Ok(quad)
    }

    /// Maps raw corners onto the corners of a `size`×`size` rectified frame,
    /// in the order top-left, top-right, bottom-right, bottom-left.
    pub fn to_square(source: [PixelPoint; 4], size: usize) -> Result<Self, GeometryError> {
        Self::new(source, square_corners(size))
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.source.iter().chain(&self.target).any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite("calibration quad"));
        }
        let turns = turn_signs(&self.source);
        if turns.contains(&0) {
            return Err(GeometryError::DegenerateQuad(
                "three source corners are collinear or coincident".into(),
            ));
        }
        if turns.iter().any(|&t| t != turns[0]) {
            return Err(GeometryError::DegenerateQuad(
                "source corners are not a convex quad in consistent winding order".into(),
            ));
        }
        if turn_signs(&self.target).contains(&0) {
            return Err(GeometryError::DegenerateQuad(
                "three target corners are collinear or coincident".into(),
            ));
        }
        Ok(())
    }
}

/// `(0,0), (n−1,0), (n−1,n−1), (0,n−1)`.
pub fn square_corners(size: usize) -> [PixelPoint; 4] {
    let m = size.saturating_sub(1) as f64;
    [
        PixelPoint::new(0.0, 0.0),
        PixelPoint::new(m, 0.0),
        PixelPoint::new(m, m),
        PixelPoint::new(0.0, m),
    ]
}

/// Sign of the turn at each corner of the closed polygon, zero when (nearly) collinear.
fn turn_signs(pts: &[PixelPoint; 4]) -> [i8; 4] {
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        lo_u = lo_u.min(p.u);
        hi_u = hi_u.max(p.u);
        lo_v = lo_v.min(p.v);
        hi_v = hi_v.max(p.v);
    }
    let scale = (hi_u - lo_u).hypot(hi_v - lo_v);
    let eps = 1e-9 * scale * scale;
    std::array::from_fn(|i| {
        let a = pts[i];
        let b = pts[(i + 1) % 4];
        let c = pts[(i + 2) % 4];
        let cross = (b.u - a.u) * (c.v - b.v) - (b.v - a.v) * (c.u - b.u);
        if scale == 0.0 || cross.abs() <= eps {
            0
        } else if cross > 0.0 {
            1
        } else {
            -1
        }
    })
}

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn conditioning(pts: &[PixelPoint; 4]) -> Matrix3<f64> {
    let cu = pts.iter().map(|p| p.u).sum::<f64>() / 4.0;
    let cv = pts.iter().map(|p| p.v).sum::<f64>() / 4.0;
    let mean = pts.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<f64>() / 4.0;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cu, 0.0, s, -s * cv, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: PixelPoint) -> (f64, f64) {
    let q = t * Vector3::new(p.u, p.v, 1.0);
    (q.x / q.z, q.y / q.z)
}

/// Exact four-point direct linear transform with `h22` fixed to 1.
///
/// Points are conditioned first; the resulting 8×8 system is solved by LU
/// with partial pivoting and the solution is mapped back to pixel units.
pub fn estimate_homography(quad: &CalibrationQuad) -> Result<Homography, GeometryError> {
    quad.validate()?;
    let ts = conditioning(&quad.source);
    let tt = conditioning(&quad.target);

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = transform(&ts, quad.source[i]);
        let (u, v) = transform(&tt, quad.target[i]);
        let r = 2 * i;
        a.fixed_view_mut::<1, 8>(r, 0)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.fixed_view_mut::<1, 8>(r + 1, 0)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }

    let h = a
        .lu()
        .solve(&b)
        .filter(|h| h.iter().all(|x| x.is_finite()))
        .ok_or_else(|| GeometryError::DegenerateQuad("correspondence system is singular".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);

    let tt_inv = tt
        .try_inverse()
        .ok_or_else(|| GeometryError::DegenerateQuad("target corners coincide".into()))?;
    Homography::from_matrix(tt_inv * hn * ts)
}

/// Bilinear sample at a sub-pixel location; `None` outside the pixel-center hull.
fn sample_bilinear(img: &GrayImage, u: f64, v: f64) -> Option<f64> {
    const EDGE_TOL: f64 = 1e-6;
    let max_u = (img.width() - 1) as f64;
    let max_v = (img.height() - 1) as f64;
    if !(u >= -EDGE_TOL && u <= max_u + EDGE_TOL && v >= -EDGE_TOL && v <= max_v + EDGE_TOL) {
        return None;
    }
    let u = u.clamp(0.0, max_u);
    let v = v.clamp(0.0, max_v);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let p = |x, y| img.get(x, y) as f64;
    let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
    let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
    Some(top + fy * (bottom - top))
}

/// Inverse-mapping warp with bilinear sampling and background 0.
///
/// `h` maps input pixel coordinates to output pixel coordinates.
pub fn rectify(
    image: &GrayImage,
    h: &Homography,
    out_width: usize,
    out_height: usize,
) -> Result<GrayImage, GeometryError> {
    rectify_with_background(image, h, out_width, out_height, 0)
}

pub fn rectify_with_background(
    image: &GrayImage,
    h: &Homography,
    out_width: usize,
    out_height: usize,
    background: u8,
) -> Result<GrayImage, GeometryError> {
    let inv = h.inverse()?;
    let m = inv.matrix();
    let mut pixels = Vec::with_capacity(out_width * out_height);
    for y in 0..out_height {
        let yf = y as f64;
        for x in 0..out_width {
            let xf = x as f64;
            let w = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
            let value = if w.abs() > f64::MIN_POSITIVE {
                let u = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / w;
                let v = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / w;
                sample_bilinear(image, u, v)
                    .map(|s| (s + 0.5).floor().clamp(0.0, 255.0) as u8)
                    .unwrap_or(background)
            } else {
                background
            };
            pixels.push(value);
        }
    }
    GrayImage::from_vec(out_width, out_height, pixels)
        .map_err(|e| GeometryError::InvalidMapping(e.to_string()))
}

/// Scale and region of interest relating the rectified frame to bed millimetres.
/// Bed `(0, 0)` sits at the ROI origin; axes follow the pixel axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BedMapping {
    pub mm_per_pixel: f64,
    pub roi_origin: PixelPoint,
    pub roi_size: usize,
    pub frame_size: usize,
}

impl Default for BedMapping {
    fn default() -> Self {
        Self {
            mm_per_pixel: 0.67,
            roi_origin: PixelPoint::new(50.0, 50.0),
            roi_size: 300,
            frame_size: 400,
        }
    }
}

impl BedMapping {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.mm_per_pixel.is_finite() && self.mm_per_pixel > 0.0) {
            return Err(GeometryError::InvalidMapping(format!(
                "mm_per_pixel must be > 0, got {}",
                self.mm_per_pixel
            )));
        }
        if self.roi_size == 0 || self.frame_size == 0 {
            return Err(GeometryError::InvalidMapping("ROI and frame sizes must be ≥ 1".into()));
        }
        let o = self.roi_origin;
        if !o.is_finite() || o.u.fract() != 0.0 || o.v.fract() != 0.0 || o.u < 0.0 || o.v < 0.0 {
            return Err(GeometryError::InvalidMapping(format!(
                "ROI origin must be a non-negative whole pixel, got ({}, {})",
                o.u, o.v
            )));
        }
        let limit = self.frame_size as f64;
        if o.u + self.roi_size as f64 > limit || o.v + self.roi_size as f64 > limit {
            return Err(GeometryError::InvalidMapping(format!(
                "ROI of {} px at ({}, {}) exceeds the {} px frame",
                self.roi_size, o.u, o.v, self.frame_size
            )));
        }
        Ok(())
    }

    /// Bed extent covered by the ROI, in millimetres.
    pub fn roi_span_mm(&self) -> f64 {
        self.roi_size as f64 * self.mm_per_pixel
    }
}

pub fn pixel_to_bed(p: PixelPoint, m: &BedMapping) -> BedPoint {
    BedPoint::new(
        (p.u - m.roi_origin.u) * m.mm_per_pixel,
        (p.v - m.roi_origin.v) * m.mm_per_pixel,
    )
}

pub fn bed_to_pixel(p: BedPoint, m: &BedMapping) -> PixelPoint {
    PixelPoint::new(
        p.x / m.mm_per_pixel + m.roi_origin.u,
        p.y / m.mm_per_pixel + m.roi_origin.v,
    )
}
