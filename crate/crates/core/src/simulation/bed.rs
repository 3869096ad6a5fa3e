use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BedPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BedError {
    #[error("invalid bed: {0}")]
    Invalid(String),
    #[error("region [{x0}, {x1}]×[{y0}, {y1}] mm exceeds the {span_x}×{span_y} mm bed")]
    OutOfBed { x0: f64, y0: f64, x1: f64, y1: f64, span_x: f64, span_y: f64 },
    #[error("invalid defect spec: {0}")]
    InvalidDefects(String),
}

/// Axis-aligned rectangle on the bed, millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn contains(&self, p: BedPoint) -> bool {
        p.x >= self.x && p.x <= self.x + self.width && p.y >= self.y && p.y <= self.y + self.height
    }

    pub fn center(&self) -> BedPoint {
        BedPoint::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }
}

/// Circular voids left in a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub centers: Vec<BedPoint>,
    pub diameter: f64,
}

impl DefectSpec {
    pub fn none() -> Self {
        Self { centers: Vec::new(), diameter: 1.0 }
    }

    /// `n`×`n` voids on a uniform grid, one per cell of `region` split into `n` columns and rows.
    pub fn grid(region: &Rect, n: usize, diameter: f64) -> Self {
        let (px, py) = (region.width / n as f64, region.height / n as f64);
        let centers = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| {
                    BedPoint::new(region.x + (i as f64 + 0.5) * px, region.y + (j as f64 + 0.5) * py)
                })
            })
            .collect();
        Self { centers, diameter }
    }

    pub fn validate(&self, printed: &Rect) -> Result<(), BedError> {
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(BedError::InvalidDefects(format!("diameter must be > 0, got {}", self.diameter)));
        }
        if let Some(c) = self.centers.iter().find(|c| !printed.contains(**c)) {
            return Err(BedError::InvalidDefects(format!(
                "defect center ({}, {}) lies outside the printed region",
                c.x, c.y
            )));
        }
        Ok(())
    }
}

/// Ground-truth occupancy of the current layer on a square-cell grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VirtualBed {
    nx: usize,
    ny: usize,
    /// Cell pitch, stored as bits so the bed can be hashed and compared exactly.
    resolution_bits: u64,
    layer_z_bits: u64,
    occupancy: Vec<bool>,
}

impl VirtualBed {
    pub fn new(span_x: f64, span_y: f64, resolution: f64, layer_z: f64) -> Result<Self, BedError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(BedError::Invalid(format!("resolution must be > 0, got {resolution}")));
        }
        if !(layer_z >= 0.0 && layer_z.is_finite()) {
            return Err(BedError::Invalid(format!("layer_z must be ≥ 0, got {layer_z}")));
        }
        let cells = |span: f64, axis: &str| -> Result<usize, BedError> {
            let n = span / resolution;
            let rounded = n.round();
            if !(span > 0.0) || (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 1.0 {
                return Err(BedError::Invalid(format!(
                    "{axis} span {span} mm is not a whole number of {resolution} mm cells"
                )));
            }
            Ok(rounded as usize)
        };
        let (nx, ny) = (cells(span_x, "x")?, cells(span_y, "y")?);
        Ok(Self {
            nx,
            ny,
            resolution_bits: resolution.to_bits(),
            layer_z_bits: layer_z.to_bits(),
            occupancy: vec![false; nx * ny],
        })
    }

    pub fn resolution(&self) -> f64 {
        f64::from_bits(self.resolution_bits)
    }

    pub fn layer_z(&self) -> f64 {
        f64::from_bits(self.layer_z_bits)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nx as f64 * self.resolution(), self.ny as f64 * self.resolution())
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.occupancy[j * self.nx + i]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> BedPoint {
        let r = self.resolution();
        BedPoint::new((i as f64 + 0.5) * r, (j as f64 + 0.5) * r)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    /// Index range of cells whose centers may fall in `[lo, hi]` mm along an axis.
    fn cell_range(&self, lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
        let r = self.resolution();
        let start = ((lo / r - 0.5).floor().max(0.0) as usize).min(n);
        let end = (((hi / r - 0.5).ceil() + 1.0).max(0.0) as usize).min(n);
        start..end.max(start)
    }

    /// Sets every cell whose center satisfies `pred` within the bounding box to `value`.
    /// Returns how many cells changed.
    fn paint(
        &mut self,
        (x0, y0, x1, y1): (f64, f64, f64, f64),
        value: bool,
        pred: impl Fn(BedPoint) -> bool,
    ) -> usize {
        let mut changed = 0;
        for j in self.cell_range(y0, y1, self.ny) {
            for i in self.cell_range(x0, x1, self.nx) {
                if pred(self.cell_center(i, j)) {
                    let cell = &mut self.occupancy[j * self.nx + i];
                    if *cell != value {
                        *cell = value;
                        changed += 1;
                    }
                }
            }
        }
        changed
    }

    pub fn fill_rect(&mut self, r: &Rect) -> usize {
        self.paint((r.x, r.y, r.x + r.width, r.y + r.height), true, |p| r.contains(p))
    }

    pub fn set_disc(&mut self, center: BedPoint, radius: f64, value: bool) -> usize {
        let r2 = radius * radius;
        self.paint(
            (center.x - radius, center.y - radius, center.x + radius, center.y + radius),
            value,
            |p| {
                let (dx, dy) = (p.x - center.x, p.y - center.y);
                dx * dx + dy * dy <= r2
            },
        )
    }
}

/// Deposits `region` and leaves each defect disc empty (cell-center test).
pub fn deposit_layer(bed: &VirtualBed, region: &Rect, defects: &DefectSpec) -> Result<VirtualBed, BedError> {
    let (sx, sy) = bed.span();
    let fits = region.width >= 0.0
        && region.height >= 0.0
        && region.x >= 0.0
        && region.y >= 0.0
        && region.x + region.width <= sx + 1e-9
        && region.y + region.height <= sy + 1e-9;
    if !fits {
        return Err(BedError::OutOfBed {
            x0: region.x,
            y0: region.y,
            x1: region.x + region.width,
            y1: region.y + region.height,
            span_x: sx,
            span_y: sy,
        });
    }
    defects.validate(region)?;
    let mut out = bed.clone();
    out.fill_rect(region);
    for &c in &defects.centers {
        out.set_disc(c, defects.diameter / 2.0, false);
    }
    Ok(out)
}
