//! Independent oracles shared by the integration tests. None of these call
//! into the code under test beyond plain data types.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use fabloop::geometry::BedPoint;
use fabloop::simulation::Rect;
use rand::Rng;

/// Components of a row-major boolean grid found by breadth-first flood fill.
/// Each component is the sorted set of its pixel indices.
pub fn flood_fill_components(mask: &[bool], w: usize, h: usize, eight: bool) -> BTreeSet<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = BTreeSet::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable();
        out.insert(members);
    }
    out
}

/// Lowest threshold maximizing between-class variance, compared exactly in
/// integers: the variance of split t is proportional to
/// (N·S₀ − n₀·S)² / (n₀·n₁).
pub fn otsu_exhaustive(hist: &[u64; 256]) -> Option<u8> {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let mut best: Option<(u8, u128, u128)> = None; // (t, numerator, denominator)
    for t in 0..255usize {
        let n0: u128 = hist[..=t].iter().map(|&c| c as u128).sum();
        let s0: u128 = hist[..=t].iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n * s0).abs_diff(n0 * s);
        let (num, den) = (diff * diff, n0 * n1);
        if num == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}

/// Closed-form temperature of a first-order plant with constant heater state.
pub fn first_order_solution(t0: f64, ambient: f64, power: f64, loss: f64, capacity: f64, heater_on: bool, t: f64) -> f64 {
    let t_inf = ambient + if heater_on { power / loss } else { 0.0 };
    t_inf + (t0 - t_inf) * (-loss * t / capacity).exp()
}

/// Inverse of a 3×3 matrix by cofactors.
pub fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cof[j][i] / det;
        }
    }
    inv
}

/// Projective point map written out directly from the matrix rows.
pub fn project(m: [[f64; 3]; 3], u: f64, v: f64) -> (f64, f64) {
    let w = m[2][0] * u + m[2][1] * v + m[2][2];
    ((m[0][0] * u + m[0][1] * v + m[0][2]) / w, (m[1][0] * u + m[1][1] * v + m[1][2]) / w)
}

/// Uniform rejection-sampled defect centers inside `region`. Centers keep
/// `separation` apart and stay `margin` inside the region edge.
pub fn random_centers<R: Rng>(
    rng: &mut R,
    region: &Rect,
    count: usize,
    separation: f64,
    margin: f64,
) -> Vec<BedPoint> {
    let mut out: Vec<BedPoint> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        assert!(attempts < 1_000_000, "could not place {count} centers");
        let p = BedPoint::new(
            rng.random_range(region.x + margin..region.x + region.width - margin),
            rng.random_range(region.y + margin..region.y + region.height - margin),
        );
        if out.iter().all(|q| q.distance(&p) >= separation) {
            out.push(p);
        }
    }
    out
}

/// Greedy nearest matching is a bijection within `tol` when every detection
/// has exactly one center within `tol` and no center is claimed twice.
pub fn is_bijection_within(detected: &[BedPoint], injected: &[BedPoint], tol: f64) -> bool {
    if detected.len() != injected.len() {
        return false;
    }
    let mut claimed = vec![false; injected.len()];
    for d in detected {
        let near: Vec<usize> = (0..injected.len()).filter(|&i| injected[i].distance(d) <= tol).collect();
        if near.len() != 1 || claimed[near[0]] {
            return false;
        }
        claimed[near[0]] = true;
    }
    true
}
