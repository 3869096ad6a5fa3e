mod common;

use fabloop::geometry::{
    apply_homography, estimate_homography, rectify, square_corners, CalibrationQuad, GeometryError, Homography,
    PixelPoint,
};
use fabloop::image::GrayImage;
use proptest::prelude::*;

fn known_projective() -> [[f64; 3]; 3] {
    [[1.05, 0.08, 12.0], [-0.04, 0.97, 7.5], [2.0e-4, -1.5e-4, 1.0]]
}

fn quad_from(h0: [[f64; 3]; 3], src: [PixelPoint; 4]) -> CalibrationQuad {
    let dst = src.map(|p| {
        let (u, v) = common::project(h0, p.u, p.v);
        PixelPoint::new(u, v)
    });
    CalibrationQuad::new(src, dst).unwrap()
}

fn max_rel_err(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

#[test]
fn dlt_recovers_known_projective_matrix() {
    let h0 = known_projective();
    let quad = quad_from(h0, square_corners(400));
    let h = estimate_homography(&quad).unwrap();
    assert!(max_rel_err(h.to_rows(), h0) < 1e-9, "{:?}", h.to_rows());
    assert_eq!(h.to_rows()[2][2], 1.0);
}

#[test]
fn apply_then_inverse_matches_cofactor_oracle() {
    let h = Homography::from_rows(known_projective()).unwrap();
    let oracle = common::inverse3(known_projective());
    let inv = h.inverse().unwrap();
    for (u, v) in [(0.0, 0.0), (12.5, 3.0), (399.0, 250.0), (-40.0, 600.0)] {
        let fwd = apply_homography(&h, PixelPoint::new(u, v)).unwrap();
        let back = apply_homography(&inv, fwd).unwrap();
        assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
        let (ou, ov) = common::project(oracle, fwd.u, fwd.v);
        assert!((back.u - ou).abs() < 1e-9 && (back.v - ov).abs() < 1e-9);
    }
}

#[test]
fn axis_flip_mirrors_image() {
    let (w, h) = (7, 5);
    let img = GrayImage::from_fn(w, h, |x, y| (x * 31 + y * 7 + x * y) as u8).unwrap();
    let flip = Homography::from_rows([[-1.0, 0.0, (w - 1) as f64], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let out = rectify(&img, &flip, w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            assert_eq!(out.get(x, y), img.get(w - 1 - x, y));
        }
    }
}

#[test]
fn calibration_corners_land_on_frame_corners() {
    let raw = [
        PixelPoint::new(118.0, 42.0),
        PixelPoint::new(522.0, 58.0),
        PixelPoint::new(548.0, 452.0),
        PixelPoint::new(96.0, 438.0),
    ];
    let h = estimate_homography(&CalibrationQuad::to_square(raw, 400).unwrap()).unwrap();
    let want = [(0.0, 0.0), (399.0, 0.0), (399.0, 399.0), (0.0, 399.0)];
    for (p, (u, v)) in raw.iter().zip(want) {
        let q = h.apply(*p).unwrap();
        assert!((q.u - u).abs() < 1e-9 && (q.v - v).abs() < 1e-9, "{q:?}");
    }
}

#[test]
fn collinear_or_duplicate_quads_are_degenerate() {
    let square = square_corners(10);
    let collinear = [PixelPoint::new(0.0, 0.0), PixelPoint::new(5.0, 0.0), PixelPoint::new(10.0, 0.0), PixelPoint::new(0.0, 9.0)];
    assert!(matches!(CalibrationQuad::new(collinear, square), Err(GeometryError::DegenerateQuad(_))));
    let dup = [square[0], square[0], square[2], square[3]];
    assert!(matches!(CalibrationQuad::new(dup, square), Err(GeometryError::DegenerateQuad(_))));
}

prop_compose! {
    fn arb_convex_quad()(
        x0 in 0.0f64..80.0, y0 in 0.0f64..80.0,
        x1 in 320.0f64..400.0, y1 in 0.0f64..80.0,
        x2 in 320.0f64..400.0, y2 in 320.0f64..400.0,
        x3 in 0.0f64..80.0, y3 in 320.0f64..400.0,
    ) -> [PixelPoint; 4] {
        [PixelPoint::new(x0, y0), PixelPoint::new(x1, y1), PixelPoint::new(x2, y2), PixelPoint::new(x3, y3)]
    }
}

proptest! {
    #[test]
    fn reprojection_error_is_tiny(src in arb_convex_quad()) {
        let quad = CalibrationQuad::to_square(src, 400).unwrap();
        let h = estimate_homography(&quad).unwrap();
        for (s, t) in quad.source.iter().zip(quad.target) {
            let p = h.apply(*s).unwrap();
            prop_assert!(p.distance(&t) < 1e-9, "{}", p.distance(&t));
        }
    }

    #[test]
    fn recovery_from_own_correspondences(src in arb_convex_quad(), g in -2e-4f64..2e-4, k in -2e-4f64..2e-4) {
        let h0 = [[0.9, 0.05, 20.0], [0.02, 1.1, -15.0], [g, k, 1.0]];
        let h = estimate_homography(&quad_from(h0, src)).unwrap();
        prop_assert!(max_rel_err(h.to_rows(), h0) < 1e-9);
    }
}
