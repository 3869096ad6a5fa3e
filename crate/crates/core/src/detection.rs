//! Layer defect detection: contrast stretch, Otsu binarization, connected-component
//! segmentation and localization of each region on the bed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BedMapping, BedPoint, GeometryError, Homography, PixelPoint};
use crate::image::{BinaryImage, GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Voids image darker than deposited material.
    #[default]
    DefectsDark,
    DefectsBright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectConfig {
    pub polarity: Polarity,
    pub min_area_px: usize,
    pub connectivity: Connectivity,
    /// Drop regions that touch the ROI edge (unprinted bed surrounding the part).
    pub reject_border_regions: bool,
    /// ROI intensity range below which the layer is treated as featureless.
    pub min_contrast: u8,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            polarity: Polarity::DefectsDark,
            min_area_px: 1,
            connectivity: Connectivity::Eight,
            reject_border_regions: true,
            min_contrast: 40,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.min_area_px < 1 {
            return Err(DetectError::InvalidConfig("min_area_px must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoundingBox {
    pub min_u: usize,
    pub min_v: usize,
    pub max_u: usize,
    pub max_v: usize,
}

impl BoundingBox {
    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= self.min_u as f64
            && p.u <= self.max_u as f64
            && p.v >= self.min_v as f64
            && p.v <= self.max_v as f64
    }

    fn offset(self, du: usize, dv: usize) -> Self {
        Self {
            min_u: self.min_u + du,
            min_v: self.min_v + dv,
            max_u: self.max_u + du,
            max_v: self.max_v + dv,
        }
    }
}

impl From<[usize; 4]> for BoundingBox {
    fn from([min_u, min_v, max_u, max_v]: [usize; 4]) -> Self {
        Self { min_u, min_v, max_u, max_v }
    }
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.min_u, b.min_v, b.max_u, b.max_v]
    }
}

/// A connected foreground component in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRegion {
    pub centroid_px: PixelPoint,
    pub area_px: usize,
    pub bbox: BoundingBox,
}

/// A localized defect with pixel and bed-frame measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectRegion {
    pub centroid_px: PixelPoint,
    pub centroid_mm: BedPoint,
    pub area_px: usize,
    pub equivalent_diameter_mm: f64,
    pub bbox: BoundingBox,
}

/// Linear min–max stretch to the full 0–255 range, rounding half up.
pub fn enhance_contrast(img: &GrayImage) -> GrayImage {
    let (lo, hi) = intensity_range(img);
    if lo == hi {
        return img.clone();
    }
    let range = (hi - lo) as u32;
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate().skip(lo as usize).take(range as usize + 1) {
        let d = i as u32 - lo as u32;
        // floor(255·d/range + 1/2) in integers.
        *slot = ((510 * d + range) / (2 * range)) as u8;
    }
    let pixels = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    GrayImage::from_vec(img.width(), img.height(), pixels).expect("same dimensions")
}

pub fn intensity_range(img: &GrayImage) -> (u8, u8) {
    img.pixels()
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)))
}

/// Otsu threshold: the lowest `t` maximizing between-class variance for the split
/// `{≤ t} / {> t}`. `None` when every split has zero between-class variance.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let n = total as f64;

    let mut best: Option<(u8, f64)> = None;
    let mut count_lo = 0u64;
    let mut sum_lo = 0.0f64;
    for t in 0..255usize {
        count_lo += hist[t];
        sum_lo += t as f64 * hist[t] as f64;
        let count_hi = total - count_lo;
        if count_lo == 0 || count_hi == 0 {
            continue;
        }
        let (w0, w1) = (count_lo as f64, count_hi as f64);
        let mean_diff = sum_lo / w0 - (total_sum - sum_lo) / w1;
        let variance = (w0 / n) * (w1 / n) * mean_diff * mean_diff;
        if variance > best.map_or(0.0, |(_, v)| v) {
            best = Some((t as u8, variance));
        }
    }
    best.map(|(t, _)| t)
}

/// Binarizes with Otsu's threshold; foreground is the defect side per polarity.
/// A unimodal image yields an all-background mask.
pub fn threshold(img: &GrayImage, cfg: &DetectConfig) -> BinaryImage {
    let mask = match otsu_threshold(&img.histogram()) {
        None => vec![false; img.pixels().len()],
        Some(t) => img
            .pixels()
            .iter()
            .map(|&p| match cfg.polarity {
                Polarity::DefectsDark => p <= t,
                Polarity::DefectsBright => p > t,
            })
            .collect(),
    };
    BinaryImage::from_vec(img.width(), img.height(), mask).expect("same dimensions")
}

/// Component labels per pixel; 0 is background, components are numbered
/// from 1 in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: u32,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find connected-component labeling.
pub fn label_components(bin: &BinaryImage, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (bin.width(), bin.height());
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !bin.get(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut k = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                push(labels[y * w + x - 1]);
            }
            if y > 0 {
                push(labels[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(labels[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(labels[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = if k == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..k] {
                    union(&mut parent, first, other);
                }
                first
            };
            labels[y * w + x] = label;
        }
    }

    // Resolve roots and renumber densely in raster order.
    let mut dense = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count;
        }
        *l = dense[root];
    }
    LabelMap { width: w, height: h, labels, count }
}

/// Connected components at least `min_area_px` in size, in label order.
pub fn segment(bin: &BinaryImage, cfg: &DetectConfig) -> Vec<PixelRegion> {
    let map = label_components(bin, cfg.connectivity);
    regions_from_labels(&map)
        .into_iter()
        .filter(|r| r.area_px >= cfg.min_area_px)
        .collect()
}

pub fn regions_from_labels(map: &LabelMap) -> Vec<PixelRegion> {
    struct Acc {
        area: u64,
        sum_u: u64,
        sum_v: u64,
        bbox: BoundingBox,
    }
    let mut acc: Vec<Acc> = (0..map.count)
        .map(|_| Acc {
            area: 0,
            sum_u: 0,
            sum_v: 0,
            bbox: BoundingBox { min_u: usize::MAX, min_v: usize::MAX, max_u: 0, max_v: 0 },
        })
        .collect();
    for (i, &l) in map.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % map.width, i / map.width);
        let a = &mut acc[l as usize - 1];
        a.area += 1;
        a.sum_u += x as u64;
        a.sum_v += y as u64;
        a.bbox.min_u = a.bbox.min_u.min(x);
        a.bbox.min_v = a.bbox.min_v.min(y);
        a.bbox.max_u = a.bbox.max_u.max(x);
        a.bbox.max_v = a.bbox.max_v.max(y);
    }
    acc.into_iter()
        .map(|a| PixelRegion {
            centroid_px: PixelPoint::new(
                a.sum_u as f64 / a.area as f64,
                a.sum_v as f64 / a.area as f64,
            ),
            area_px: a.area as usize,
            bbox: a.bbox,
        })
        .collect()
}

/// Converts regions to bed millimetres and sorts them column-major
/// (ascending x, ties by ascending y).
pub fn quantify(regions: &[PixelRegion], m: &BedMapping) -> Vec<DefectRegion> {
    let mut out: Vec<DefectRegion> = regions
        .iter()
        .map(|r| DefectRegion {
            centroid_px: r.centroid_px,
            centroid_mm: geometry::pixel_to_bed(r.centroid_px, m),
            area_px: r.area_px,
            equivalent_diameter_mm: 2.0 * (r.area_px as f64 / std::f64::consts::PI).sqrt()
                * m.mm_per_pixel,
            bbox: r.bbox,
        })
        .collect();
    out.sort_by(|a, b| {
        a.centroid_mm
            .x
            .total_cmp(&b.centroid_mm.x)
            .then(a.centroid_mm.y.total_cmp(&b.centroid_mm.y))
    });
    out
}

/// Every intermediate image of one detection pass.
#[derive(Debug, Clone)]
pub struct DetectionStages {
    pub rectified: GrayImage,
    pub roi: GrayImage,
    pub enhanced: GrayImage,
    pub mask: BinaryImage,
    pub defects: Vec<DefectRegion>,
}

impl DetectionStages {
    /// Rectified frame with each defect bounding box drawn at 255.
    pub fn overlay(&self) -> GrayImage {
        let mut img = self.rectified.clone();
        for d in &self.defects {
            img.draw_rect((d.bbox.min_u, d.bbox.min_v), (d.bbox.max_u, d.bbox.max_v), 255);
        }
        img
    }
}

pub fn detect(
    raw: &GrayImage,
    h: &Homography,
    m: &BedMapping,
    cfg: &DetectConfig,
) -> Result<Vec<DefectRegion>, DetectError> {
    detect_stages(raw, h, m, cfg).map(|s| s.defects)
}

/// rectify → crop ROI → enhance → threshold → segment → quantify.
pub fn detect_stages(
    raw: &GrayImage,
    h: &Homography,
    m: &BedMapping,
    cfg: &DetectConfig,
) -> Result<DetectionStages, DetectError> {
    m.validate()?;
    cfg.validate()?;
    let rectified = geometry::rectify(raw, h, m.frame_size, m.frame_size)?;
    let (ox, oy) = (m.roi_origin.u as usize, m.roi_origin.v as usize);
    let roi = rectified.crop(ox, oy, m.roi_size, m.roi_size)?;
    let enhanced = enhance_contrast(&roi);

    let (lo, hi) = intensity_range(&roi);
    let mask = if hi - lo < cfg.min_contrast {
        BinaryImage::new(roi.width(), roi.height())?
    } else {
        threshold(&enhanced, cfg)
    };

    let (w, hgt) = (mask.width(), mask.height());
    let regions: Vec<PixelRegion> = segment(&mask, cfg)
        .into_iter()
        .filter(|r| {
            !cfg.reject_border_regions
                || !(r.bbox.min_u == 0
                    || r.bbox.min_v == 0
                    || r.bbox.max_u + 1 == w
                    || r.bbox.max_v + 1 == hgt)
        })
        .map(|r| PixelRegion {
            centroid_px: PixelPoint::new(r.centroid_px.u + ox as f64, r.centroid_px.v + oy as f64),
            area_px: r.area_px,
            bbox: r.bbox.offset(ox, oy),
        })
        .collect();
    let defects = quantify(&regions, m);
    Ok(DetectionStages { rectified, roi, enhanced, mask, defects })
}
