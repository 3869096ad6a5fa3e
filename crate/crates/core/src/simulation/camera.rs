use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::bed::VirtualBed;
use crate::geometry::{self, BedMapping, GeometryError, Homography};
use crate::image::GrayImage;

/// Rendered intensity of deposited material.
pub const MATERIAL_INTENSITY: u8 = 200;
/// Rendered intensity of voids and bare bed.
pub const VOID_INTENSITY: u8 = 40;

/// Overhead camera looking at the bed through a fixed perspective distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Rectified frame → raw sensor pixels.
    pub warp: Homography,
    pub raw_width: usize,
    pub raw_height: usize,
    /// Standard deviation of additive Gaussian noise, intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Top-down rectified view of the bed: each pixel averages the cells whose
/// centers fall inside its footprint, shading linearly from void to material.
pub fn render_ideal(bed: &VirtualBed, m: &BedMapping) -> GrayImage {
    let n = m.frame_size;
    let mut total = vec![0u32; n * n];
    let mut filled = vec![0u32; n * n];
    let (nx, ny) = bed.dims();
    let res = bed.resolution();
    let occupancy = bed.occupancy();
    let scale = res / m.mm_per_pixel;
    for j in 0..ny {
        let v = ((j as f64 + 0.5) * scale + m.roi_origin.v + 0.5).floor();
        if v < 0.0 || v >= n as f64 {
            continue;
        }
        let row = v as usize * n;
        for i in 0..nx {
            let u = ((i as f64 + 0.5) * scale + m.roi_origin.u + 0.5).floor();
            if u < 0.0 || u >= n as f64 {
                continue;
            }
            let idx = row + u as usize;
            total[idx] += 1;
            filled[idx] += u32::from(occupancy[j * nx + i]);
        }
    }
    let span = (MATERIAL_INTENSITY - VOID_INTENSITY) as u32;
    let pixels = total
        .iter()
        .zip(&filled)
        .map(|(&t, &f)| {
            if t == 0 {
                VOID_INTENSITY
            } else {
                // Round half up in integers.
                VOID_INTENSITY + ((2 * span * f + t) / (2 * t)) as u8
            }
        })
        .collect();
    GrayImage::from_vec(n, n, pixels).expect("frame_size ≥ 1")
}

/// Renders the bed, warps it into the raw sensor frame and adds seeded noise.
/// `frame` distinguishes successive captures that share a camera seed.
pub fn capture(
    bed: &VirtualBed,
    cam: &CameraModel,
    m: &BedMapping,
    frame: u64,
) -> Result<GrayImage, GeometryError> {
    let ideal = render_ideal(bed, m);
    let raw = geometry::rectify(&ideal, &cam.warp, cam.raw_width, cam.raw_height)?;
    if cam.noise_sigma <= 0.0 {
        return Ok(raw);
    }
    let normal = Normal::new(0.0, cam.noise_sigma)
        .map_err(|_| GeometryError::NonFinite("camera noise sigma"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cam.seed ^ frame.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let pixels = raw
        .pixels()
        .iter()
        .map(|&p| (p as f64 + rng.sample(normal)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(GrayImage::from_vec(raw.width(), raw.height(), pixels).expect("same dimensions"))
}
