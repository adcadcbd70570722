//! Measure-geometric experiments on the quadratic family: post-critical
//! clouds, box counting, porosity probes, Julia sampling, limit-set
//! distances, the `Omega` shadows of the renormalization tower and
//! eccentricity.
//!
//! Box grids and rasters live on the fixed square `[-2, 2]^2`. Raster pixel
//! `(row, col)` has centre `-2 + (col + 1/2) eps + i (2 - (row + 1/2) eps)`,
//! stored row-major with row 0 at the top (largest imaginary part).

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{cis, HoloMap, QuadraticMap, ESCAPE_RADIUS};
use crate::renorm::{eta, exp_inverse, Tower};
use crate::stats::median;

/// Half-width of the box-grid square.
pub const SQUARE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CloudSource {
    PostCritical,
    JuliaSample,
    OmegaBoundary,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitCloud {
    pub points: Vec<Complex64>,
    pub source: CloudSource,
    pub alpha: f64,
    pub n_iter: usize,
    pub seed: Option<u64>,
    /// Index of the first iterate past the escape radius, if any.
    pub escaped_at: Option<usize>,
    /// Square-root degeneracies perturbed during inverse iteration.
    pub jitter_events: usize,
}

impl OrbitCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `max |P(z_j) - z_{j+1}|` over consecutive points.
    pub fn recurrence_residual(&self, map: &dyn HoloMap) -> f64 {
        self.points.windows(2).map(|w| (map.eval(w[0]) - w[1]).norm()).fold(0.0, f64::max)
    }
}

/// The first `n_iter` iterates of the critical value of `P_alpha`.
pub fn postcritical_cloud(alpha: f64, n_iter: usize) -> Result<OrbitCloud> {
    if n_iter == 0 {
        return Err(Error::Domain("n_iter must be at least 1".into()));
    }
    let map = QuadraticMap::new(alpha);
    let mut points = Vec::with_capacity(n_iter);
    let mut z = map.critical_value();
    let mut escaped_at = None;
    for j in 0..n_iter {
        if !z.is_finite() || z.norm() > ESCAPE_RADIUS {
            escaped_at = Some(j);
            break;
        }
        points.push(z);
        z = map.eval(z);
    }
    Ok(OrbitCloud {
        points,
        source: CloudSource::PostCritical,
        alpha,
        n_iter,
        seed: None,
        escaped_at,
        jitter_events: 0,
    })
}

/// Closest approach of the second half of the cloud to `target`.
pub fn late_approach(cloud: &OrbitCloud, target: Complex64) -> f64 {
    let half = cloud.points.len() / 2;
    cloud.points[half..].iter().map(|z| (z - target).norm()).fold(f64::INFINITY, f64::min)
}

pub fn is_dyadic(eps: f64) -> bool {
    eps > 0.0 && {
        let m = -eps.log2();
        (m - m.round()).abs() < 1e-12
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !is_dyadic(eps) || !(2f64.powi(-14)..=0.25).contains(&eps) {
        return Err(Error::Domain(format!("box scale {eps} is not 2^-m with 2 <= m <= 14")));
    }
    Ok(())
}

/// Occupied `eps`-boxes of the grid anchored at the corner `-2 - 2i`.
#[derive(Debug, Clone)]
pub struct BoxGrid {
    pub eps: f64,
    pub occupied: HashSet<(i64, i64)>,
}

impl BoxGrid {
    pub fn new(points: &[Complex64], eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let occupied = points
            .iter()
            .map(|z| (((z.re + SQUARE) / eps).floor() as i64, ((z.im + SQUARE) / eps).floor() as i64))
            .collect();
        Ok(Self { eps, occupied })
    }

    pub fn count(&self) -> usize {
        self.occupied.len()
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.eps * self.eps
    }
}

/// `N_eps * eps^2`.
pub fn box_area(points: &[Complex64], eps: f64) -> Result<f64> {
    Ok(BoxGrid::new(points, eps)?.area())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoxScanRow {
    pub m: u32,
    pub eps: f64,
    pub count: usize,
    pub area: f64,
}

/// Box areas at `eps = 2^-m` for each `m` in `ms`.
pub fn box_scan(points: &[Complex64], ms: &[u32]) -> Result<Vec<BoxScanRow>> {
    ms.iter()
        .map(|&m| {
            let g = BoxGrid::new(points, 2f64.powi(-(m as i32)))?;
            Ok(BoxScanRow { m, eps: g.eps, count: g.count(), area: g.area() })
        })
        .collect()
}

/// A square boolean raster of `[-2, 2]^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub n: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize) -> Self {
        Self { n, data: vec![false; n * n] }
    }

    pub fn pixel(&self) -> f64 {
        2.0 * SQUARE / self.n as f64
    }

    /// Continuous pixel coordinates `(col, row)` of `z`.
    fn coords(&self, z: Complex64) -> (f64, f64) {
        let p = self.pixel();
        ((z.re + SQUARE) / p, (SQUARE - z.im) / p)
    }

    pub fn index(&self, z: Complex64) -> Option<usize> {
        let (x, y) = self.coords(z);
        if x < 0.0 || y < 0.0 || !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (c, r) = (x as usize, y as usize);
        (c < self.n && r < self.n).then_some(r * self.n + c)
    }

    pub fn center(&self, idx: usize) -> Complex64 {
        let p = self.pixel();
        let (r, c) = (idx / self.n, idx % self.n);
        Complex64::new(-SQUARE + (c as f64 + 0.5) * p, SQUARE - (r as f64 + 0.5) * p)
    }

    pub fn from_points(points: &[Complex64], n: usize) -> Self {
        let mut m = Self::new(n);
        for &z in points {
            m.set(z);
        }
        m
    }

    pub fn set(&mut self, z: Complex64) {
        if let Some(i) = self.index(z) {
            self.data[i] = true;
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.index(z).is_some_and(|i| self.data[i])
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Marks every pixel whose centre lies in the closed triangle, plus the
    /// pixels of the vertices (so sub-pixel triangles still leave a trace).
    pub fn fill_triangle(&mut self, a: Complex64, b: Complex64, c: Complex64) {
        for z in [a, b, c] {
            self.set(z);
        }
        let n = self.n as f64;
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let (cx, cy) = self.coords(c);
        let x0 = ax.min(bx).min(cx).floor().max(0.0);
        let x1 = ax.max(bx).max(cx).ceil().min(n);
        let y0 = ay.min(by).min(cy).floor().max(0.0);
        let y1 = ay.max(by).max(cy).ceil().min(n);
        if !(x0 < x1 && y0 < y1) {
            return;
        }
        let area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
        if area == 0.0 {
            return;
        }
        let edge = |px: f64, py: f64, ux: f64, uy: f64, vx: f64, vy: f64| ((vx - ux) * (py - uy) - (px - ux) * (vy - uy)) * area.signum();
        for row in y0 as usize..y1 as usize {
            let py = row as f64 + 0.5;
            for col in x0 as usize..x1 as usize {
                let px = col as f64 + 0.5;
                if edge(px, py, ax, ay, bx, by) >= 0.0 && edge(px, py, bx, by, cx, cy) >= 0.0 && edge(px, py, cx, cy, ax, ay) >= 0.0 {
                    self.data[row * self.n + col] = true;
                }
            }
        }
    }

    /// Marks every pixel whose square meets the triangle (edge tests
    /// shifted by half a pixel, so slightly generous at sharp vertices).
    pub fn cover_triangle(&mut self, a: Complex64, b: Complex64, c: Complex64) {
        let n = self.n as f64;
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let (cx, cy) = self.coords(c);
        let x0 = ax.min(bx).min(cx).floor().max(0.0);
        let x1 = (ax.max(bx).max(cx).floor() + 1.0).min(n);
        let y0 = ay.min(by).min(cy).floor().max(0.0);
        let y1 = (ay.max(by).max(cy).floor() + 1.0).min(n);
        if !(x0 < x1 && y0 < y1) {
            return;
        }
        let (c0, c1, r0, r1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
        if c1 - c0 == 1 && r1 - r0 == 1 {
            self.data[r0 * self.n + c0] = true;
            return;
        }
        let area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
        let sg = if area < 0.0 { -1.0 } else { 1.0 };
        // Edge u -> v as `e(p) = gx px + gy py + h >= 0`, shifted by half a pixel.
        let edge = |ux: f64, uy: f64, vx: f64, vy: f64| {
            let (nx, ny) = (vx - ux, vy - uy);
            (-sg * ny, sg * nx, sg * (ux * ny - nx * uy) + 0.5 * (nx.abs() + ny.abs()))
        };
        let es = [edge(ax, ay, bx, by), edge(bx, by, cx, cy), edge(cx, cy, ax, ay)];
        for row in r0..r1 {
            let py = row as f64 + 0.5;
            let px0 = c0 as f64 + 0.5;
            let mut v = es.map(|(gx, gy, h)| gx * px0 + gy * py + h);
            let base = row * self.n;
            for col in c0..c1 {
                if v[0] >= 0.0 && v[1] >= 0.0 && v[2] >= 0.0 {
                    self.data[base + col] = true;
                }
                for k in 0..3 {
                    v[k] += es[k].0;
                }
            }
        }
    }

    /// Distance from every pixel centre to the nearest pixel with value `target`.
    pub fn distance_to(&self, target: bool) -> Vec<f64> {
        let d2 = edt(&self.data, self.n, target);
        let p = self.pixel();
        d2.into_iter().map(|v| v.sqrt() * p).collect()
    }

    /// Set pixels with at least one 4-neighbour outside the set (or on the frame).
    pub fn boundary(&self) -> Vec<Complex64> {
        let n = self.n;
        let mut out = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if !self.data[r * n + c] {
                    continue;
                }
                let edge = r == 0
                    || c == 0
                    || r + 1 == n
                    || c + 1 == n
                    || !self.data[(r - 1) * n + c]
                    || !self.data[(r + 1) * n + c]
                    || !self.data[r * n + c - 1]
                    || !self.data[r * n + c + 1];
                if edge {
                    out.push(self.center(r * n + c));
                }
            }
        }
        out
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let values: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        pgm_bytes(self.n, self.n, &values)
    }
}

/// Binary (`P5`) PGM with maxval 255.
pub fn pgm_bytes(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

/// Exact squared Euclidean distance transform (in pixels) to the pixels equal to `target`.
fn edt(data: &[bool], n: usize, target: bool) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut f: Vec<f64> = data.iter().map(|&b| if b == target { 0.0 } else { INF }).collect();
    let mut buf = vec![0.0; n];
    for c in 0..n {
        for r in 0..n {
            buf[r] = f[r * n + c];
        }
        let d = edt_1d(&buf);
        for r in 0..n {
            f[r * n + c] = d[r];
        }
    }
    for r in 0..n {
        let d = edt_1d(&f[r * n..(r + 1) * n]);
        f[r * n..(r + 1) * n].copy_from_slice(&d);
    }
    f
}

/// Lower envelope of parabolas (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: replace the only parabola.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = (q as f64 - p as f64).powi(2) + f[p];
    }
    d
}

/// Points bucketed in square cells for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct PointIndex {
    pub cell: f64,
    cells: HashMap<(i64, i64), Vec<Complex64>>,
}

impl PointIndex {
    pub fn new(points: &[Complex64], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<Complex64>> = HashMap::new();
        for &z in points {
            cells.entry(Self::key(z, cell)).or_default().push(z);
        }
        Self { cell, cells }
    }

    fn key(z: Complex64, cell: f64) -> (i64, i64) {
        ((z.re / cell).floor() as i64, (z.im / cell).floor() as i64)
    }

    /// Distance to the nearest indexed point, searching no farther than `limit`.
    pub fn nearest(&self, z: Complex64, limit: f64) -> f64 {
        let (kx, ky) = Self::key(z, self.cell);
        let rings = (limit / self.cell).ceil() as i64 + 1;
        let mut best = f64::INFINITY;
        for ring in 0..=rings {
            // Anything in ring `ring` is at least `(ring - 1) * cell` away.
            if (ring - 1) as f64 * self.cell > best.min(limit) {
                break;
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(pts) = self.cells.get(&(kx + dx, ky + dy)) {
                        for p in pts {
                            best = best.min((p - z).norm());
                        }
                    }
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaleRecord {
    pub r: f64,
    pub hole_center: Complex64,
    pub hole_radius: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PorosityReport {
    pub z: Complex64,
    pub records: Vec<ScaleRecord>,
}

impl PorosityReport {
    pub fn scales_with(&self, lambda: f64) -> usize {
        self.records.iter().filter(|r| r.lambda >= lambda).count()
    }
}

pub const HOLE_ANGLES: usize = 16;
pub const HOLE_RADII: usize = 8;

/// Best hole `B(c, s) ⊂ B(z, r)` missing the cloud fattened by the index cell.
pub fn porosity_probe(z: Complex64, index: &PointIndex, scales: &[f64]) -> PorosityReport {
    let records = scales
        .iter()
        .map(|&r| {
            let mut best = ScaleRecord { r, hole_center: z, hole_radius: 0.0, lambda: 0.0 };
            for i in 0..HOLE_RADII {
                let rho = r * i as f64 / HOLE_RADII as f64;
                let angles = if i == 0 { 1 } else { HOLE_ANGLES };
                for j in 0..angles {
                    let c = z + rho * cis(2.0 * PI * j as f64 / HOLE_ANGLES as f64);
                    let room = r - rho;
                    let free = index.nearest(c, room + index.cell) - index.cell;
                    let s = room.min(free);
                    if s > best.hole_radius {
                        best = ScaleRecord { r, hole_center: c, hole_radius: s, lambda: s / r };
                    }
                }
            }
            best
        })
        .collect();
    PorosityReport { z, records }
}

/// Disk stand-in for the closed Siegel disk: the largest radius `t` on the
/// positive axis whose orbit keeps `| |z_j| - mean |z_j| | < tol`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SiegelStandIn {
    pub probe_radius: f64,
    pub mean_radius: f64,
    /// Largest orbit modulus of the accepted probe: the stand-in radius.
    pub radius: f64,
    pub iterations: usize,
    pub tol: f64,
}

fn circle_like(map: &QuadraticMap, t: f64, iterations: usize, tol: f64) -> Option<(f64, f64)> {
    let mut z = Complex64::new(t, 0.0);
    let mut radii = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        z = map.eval(z);
        if !z.is_finite() || z.norm() > ESCAPE_RADIUS {
            return None;
        }
        radii.push(z.norm());
    }
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    let hi = radii.iter().copied().fold(0.0, f64::max);
    radii.iter().all(|r| (r - mean).abs() < tol).then_some((mean, hi))
}

pub fn siegel_stand_in(alpha: f64, iterations: usize, tol: f64) -> SiegelStandIn {
    let map = QuadraticMap::new(alpha);
    let (mut lo, mut hi) = (0.0, map.critical_point().norm());
    let mut accepted = (0.0, 0.0);
    for _ in 0..40 {
        let t = 0.5 * (lo + hi);
        match circle_like(&map, t, iterations, tol) {
            Some(v) => {
                lo = t;
                accepted = v;
            }
            None => hi = t,
        }
    }
    SiegelStandIn { probe_radius: lo, mean_radius: accepted.0, radius: accepted.1, iterations, tol }
}

const BURN_IN: usize = 50;
const JITTER: f64 = 1e-15;

/// Backward orbit of `P_alpha` with uniformly random branch choices.
pub fn julia_sample(alpha: f64, count: usize, seed: u64) -> Result<OrbitCloud> {
    if count == 0 {
        return Err(Error::Domain("count must be at least 1".into()));
    }
    let lambda = cis(2.0 * PI * alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Complex64::new(1.0, 0.0);
    let mut jitter_events = 0;
    let mut points = Vec::with_capacity(count);
    for step in 0..BURN_IN + count {
        let mut disc = lambda * lambda + 4.0 * w;
        if disc.norm() < JITTER {
            disc += JITTER;
            jitter_events += 1;
        }
        let root = disc.sqrt();
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        w = (-lambda + sign * root) / 2.0;
        if step >= BURN_IN {
            points.push(w);
        }
    }
    Ok(OrbitCloud {
        points,
        source: CloudSource::JuliaSample,
        alpha,
        n_iter: count,
        seed: Some(seed),
        escaped_at: None,
        jitter_events,
    })
}

/// `(d1, d2)` between box covers at scale `eps`: `d1` is the farthest
/// target box from the tail, `d2` the farthest tail box from the target.
/// Points outside `[-2, 2]^2` count as infinitely far.
pub fn limit_set_distance(tail: &[Complex64], target: &[Complex64], eps: f64) -> Result<(f64, f64)> {
    check_eps(eps)?;
    if tail.is_empty() || target.is_empty() {
        return Err(Error::Domain("limit-set distance needs nonempty clouds".into()));
    }
    let n = (2.0 * SQUARE / eps).round() as usize;
    let outside = |pts: &[Complex64]| pts.iter().any(|z| !(z.re.abs() < SQUARE && z.im.abs() < SQUARE));
    let a = Mask::from_points(tail, n);
    let b = Mask::from_points(target, n);
    let da = a.distance_to(true);
    let db = b.distance_to(true);
    let far = |m: &Mask, d: &[f64]| m.data.iter().zip(d).filter(|p| *p.0).map(|p| *p.1).fold(0.0, f64::max);
    let d1 = if outside(target) { f64::INFINITY } else { far(&b, &da) };
    let d2 = if outside(tail) { f64::INFINITY } else { far(&a, &db) };
    Ok((d1, d2))
}

#[derive(Debug, Clone, Serialize)]
pub struct TypicalOrbitStats {
    pub samples: usize,
    pub steps: usize,
    pub eps: f64,
    pub threshold: f64,
    pub escaped: usize,
    pub escape_fraction: f64,
    pub median_d1: f64,
    pub median_d2: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Forward orbits of Julia samples against the post-critical cloud. An orbit
/// that escapes contributes `(inf, inf)`.
pub fn typical_orbit_statistics(
    julia: &OrbitCloud,
    target: &OrbitCloud,
    steps: usize,
    eps: f64,
) -> Result<TypicalOrbitStats> {
    check_eps(eps)?;
    let map = QuadraticMap::new(julia.alpha);
    let pairs: Vec<Result<(f64, f64)>> = julia
        .points
        .par_iter()
        .map(|&z0| {
            let mut z = z0;
            let mut tail = Vec::with_capacity(steps - steps / 2);
            for j in 0..steps {
                z = map.eval(z);
                if !z.is_finite() || z.norm() > ESCAPE_RADIUS {
                    return Ok((f64::INFINITY, f64::INFINITY));
                }
                if j >= steps / 2 {
                    tail.push(z);
                }
            }
            limit_set_distance(&tail, &target.points, eps)
        })
        .collect();
    let mut d1 = Vec::with_capacity(pairs.len());
    let mut d2 = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b) = p?;
        d1.push(a);
        d2.push(b);
    }
    let escaped = d1.iter().filter(|v| v.is_infinite()).count();
    Ok(TypicalOrbitStats {
        samples: d1.len(),
        steps,
        eps,
        threshold: 2.0 * eps * 2f64.sqrt(),
        escaped,
        escape_fraction: escaped as f64 / d1.len().max(1) as f64,
        median_d1: median(&d1),
        median_d2: median(&d2),
        d1,
        d2,
    })
}

pub fn point_in_polygon(poly: &[Complex64], z: Complex64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.im > z.im) != (b.im > z.im) {
            let x = a.re + (z.im - a.im) / (b.im - a.im) * (b.re - a.re);
            if z.re < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowOptions {
    /// Raster size over `[-2, 2]^2`.
    pub pixels: usize,
    /// A pushed triangle with an edge longer than this many pixels is
    /// bisected in its source.
    pub max_span: f64,
    /// Cap on successive bisections.
    pub max_depth: usize,
}

impl Default for ShadowOptions {
    fn default() -> Self {
        Self { pixels: 2048, max_span: 4.0, max_depth: 40 }
    }
}

pub fn polygon_area(poly: &[Complex64]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i].re * poly[(i + 1) % n].im - poly[(i + 1) % n].re * poly[i].im).sum::<f64>()
}

fn triangle_area(t: &[Complex64; 3]) -> f64 {
    0.5 * ((t[1] - t[0]).re * (t[2] - t[0]).im - (t[2] - t[0]).re * (t[1] - t[0]).im)
}

/// Ear-clipping triangulation of a simple polygon.
pub fn triangulate(poly: &[Complex64]) -> Result<Vec<[Complex64; 3]>> {
    let flat: Vec<f64> = poly.iter().flat_map(|z| [z.re, z.im]).collect();
    let idx = earcutr::earcut(&flat, &[], 2).map_err(|e| Error::Domain(format!("triangulation failed: {e:?}")))?;
    Ok(idx.chunks_exact(3).map(|t| [poly[t[0]], poly[t[1]], poly[t[2]]]).collect())
}

/// Raster of `Omega^n_0 = U_{i <= N} f_0^i(Psi_n(S_n))` for `n <= 1`.
#[derive(Debug, Clone, Serialize)]
pub struct OmegaShadow {
    pub level: usize,
    pub iterates: u64,
    /// Source triangles from the sector polygon.
    pub triangles: usize,
    /// `|sum of triangle areas / polygon area - 1|`.
    pub triangulation_error: f64,
    /// Leaf triangles after adaptive splitting.
    pub leaves: usize,
    /// Leaf triangles dropped because a vertex failed `Psi_n` or escaped.
    pub dropped: usize,
    pub partial: bool,
    /// Triangle images left wider than `max_span` at `max_depth` (fill
    /// events); only their vertices are marked.
    pub unresolved: usize,
    /// Largest final-step edge of a leaf triangle, in pixels.
    pub max_cell_span: f64,
    #[serde(skip)]
    pub mask: Mask,
}

impl OmegaShadow {
    pub fn boundary_cloud(&self, alpha: f64) -> OrbitCloud {
        let points = self.mask.boundary();
        OrbitCloud {
            n_iter: points.len(),
            points,
            source: CloudSource::OmegaBoundary,
            alpha,
            seed: None,
            escaped_at: None,
            jitter_events: 0,
        }
    }
}

/// `k_n + floor(1/alpha_n) - k_bold - 1` pushes at level `n`, carried to
/// level 0 as `q_n (...) + q_{n-1}`.
pub fn shadow_iterates(tower: &Tower, n: usize) -> Result<u64> {
    let level = tower.levels.get(n).ok_or(Error::Depth { requested: n, available: tower.levels.len().saturating_sub(1) })?;
    let k = level.k().ok_or(Error::Depth { requested: n, available: 0 })? as u64;
    let a = (1.0 / level.alpha).floor() as u64;
    let k_bold = tower.opts.constants.k_bold as u64;
    let base = (k + a).checked_sub(k_bold + 1).ok_or_else(|| Error::Config("k_bold too large".into()))?;
    Ok(if n == 0 { base } else { tower.angle.q(n) * base + tower.angle.q(n - 1) })
}

#[derive(Debug, Default, Clone, Copy)]
struct PushStats {
    leaves: usize,
    dropped: usize,
    unresolved: usize,
    max_span: f64,
}

impl PushStats {
    fn merge(self, o: Self) -> Self {
        Self {
            leaves: self.leaves + o.leaves,
            dropped: self.dropped + o.dropped,
            unresolved: self.unresolved + o.unresolved,
            max_span: self.max_span.max(o.max_span),
        }
    }
}

/// Source-to-level-0 lift of sector points, carrying the `eta` value so
/// midpoints can continue the branch without evaluating `Phi_n`.
enum Lift<'a> {
    Identity,
    Psi { tower: &'a Tower, chart0: &'a crate::fatou::FatouChart },
}

/// A lifted source vertex: `(eta, z)` (`eta = z` for the identity lift).
type Lifted = (Complex64, Complex64);

impl Lift<'_> {
    fn fresh(&self, w: Complex64) -> Option<Lifted> {
        match self {
            Lift::Identity => Some((w, w)),
            Lift::Psi { tower, chart0 } => {
                let (e, _) = eta(&tower.levels[1], w).ok()?;
                Some((e, chart0.phi_inverse(e).ok()?))
            }
        }
    }

    fn midpoint(&self, m: Complex64, a: Option<Lifted>, b: Option<Lifted>) -> Option<Lifted> {
        match (self, a, b) {
            (Lift::Identity, _, _) => Some((m, m)),
            (Lift::Psi { chart0, .. }, Some(a), Some(b)) if (a.0 - b.0).norm() < 0.5 => {
                let z0 = exp_inverse(m).ok()?;
                let e = z0 + (0.5 * (a.0 + b.0).re - z0.re).round();
                Some((e, chart0.phi_inverse(e).ok()?))
            }
            _ => self.fresh(m),
        }
    }
}

struct Pusher<'a> {
    f0: &'a dyn HoloMap,
    lift: Lift<'a>,
    iterates: u64,
    max_span: f64,
    max_depth: usize,
}

impl Pusher<'_> {
    fn step(&self, z: Complex64) -> Option<Complex64> {
        let w = self.f0.eval(z);
        (w.is_finite() && w.norm() <= ESCAPE_RADIUS).then_some(w)
    }

    /// Bisects the source triangle across the edge whose image is longest.
    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        src: [Complex64; 3],
        lifted: [Option<Lifted>; 3],
        img: Option<&[Complex64; 3]>,
        from: u64,
        depth: usize,
        mask: &mut Mask,
        st: &mut PushStats,
    ) {
        let pts = img.unwrap_or(&src);
        let i = (0..3).max_by(|&a, &b| (pts[a] - pts[(a + 1) % 3]).norm().total_cmp(&(pts[b] - pts[(b + 1) % 3]).norm())).unwrap_or(0);
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let m = (src[i] + src[j]) / 2.0;
        let lm = self.lift.midpoint(m, lifted[i], lifted[j]);
        self.push([src[i], m, src[k]], [lifted[i], lm, lifted[k]], from, depth + 1, mask, st);
        self.push([m, src[j], src[k]], [lm, lifted[j], lifted[k]], from, depth + 1, mask, st);
    }

    /// Pushes the triangle with source vertices `src` (lifted to level 0 as
    /// `lifted`) from step `from` on, covering each image.
    fn push(&self, src: [Complex64; 3], lifted: [Option<Lifted>; 3], from: u64, depth: usize, mask: &mut Mask, st: &mut PushStats) {
        let mut q = [Complex64::new(0.0, 0.0); 3];
        for k in 0..3 {
            let moved = lifted[k].and_then(|(_, mut z)| {
                for _ in 0..from {
                    z = self.step(z)?;
                }
                Some(z)
            });
            match moved {
                Some(z) => q[k] = z,
                None if depth < self.max_depth => return self.split(src, lifted, None, from, depth, mask, st),
                None => {
                    st.dropped += 1;
                    return;
                }
            }
        }
        let px = mask.pixel();
        let mut s = from;
        loop {
            let span2 = (q[0] - q[1]).norm_sqr().max((q[1] - q[2]).norm_sqr()).max((q[2] - q[0]).norm_sqr());
            let span = span2.sqrt() / px;
            if span > self.max_span {
                if depth < self.max_depth {
                    return self.split(src, lifted, Some(&q), s, depth, mask, st);
                }
                // Unresolved at the depth cap (the lift is singular at the
                // sector tip): only the exact vertex images are marked.
                st.unresolved += 1;
                for z in q {
                    mask.set(z);
                }
            } else {
                mask.cover_triangle(q[0], q[1], q[2]);
            }
            if s == self.iterates {
                st.leaves += 1;
                st.max_span = st.max_span.max(span);
                return;
            }
            for z in q.iter_mut() {
                match self.step(*z) {
                    Some(w) => *z = w,
                    None => {
                        st.dropped += 1;
                        return;
                    }
                }
            }
            s += 1;
        }
    }
}

pub fn omega_shadow(tower: &Tower, n: usize, opts: &ShadowOptions) -> Result<OmegaShadow> {
    let iterates = shadow_iterates(tower, n)?;
    let poly = tower.levels[n].sector()?.polygon();
    if poly.len() < 3 {
        return Err(Error::Domain(format!("empty sector sample at level {n}")));
    }
    let tris = triangulate(&poly)?;
    if tris.is_empty() {
        return Err(Error::Domain(format!("sector at level {n} has no interior")));
    }
    let covered: f64 = tris.iter().map(|t| triangle_area(t).abs()).sum();
    let triangulation_error = (covered / polygon_area(&poly).abs() - 1.0).abs();
    let lift = match n {
        0 => Lift::Identity,
        1 => Lift::Psi { tower, chart0: tower.levels[0].chart()? },
        _ => return Err(Error::Depth { requested: n, available: 1 }),
    };
    // Polygon vertices are lifted once; triangles share them.
    let lifted: HashMap<(u64, u64), Option<Lifted>> = poly
        .par_iter()
        .map(|w| ((w.re.to_bits(), w.im.to_bits()), lift.fresh(*w)))
        .collect();
    let f0 = tower.levels[0].map.clone();
    let pusher = Pusher { f0: f0.as_ref(), lift, iterates, max_span: opts.max_span, max_depth: opts.max_depth };
    let (mut mask, st) = tris
        .par_iter()
        .fold(
            || (Mask::new(opts.pixels), PushStats::default()),
            |(mut m, mut st), &t| {
                let l = t.map(|w| lifted[&(w.re.to_bits(), w.im.to_bits())]);
                pusher.push(t, l, 0, 0, &mut m, &mut st);
                (m, st)
            },
        )
        .reduce(
            || (Mask::new(opts.pixels), PushStats::default()),
            |(mut a, sa), (b, sb)| {
                a.union_with(&b);
                (a, sa.merge(sb))
            },
        );
    mask.set(Complex64::new(0.0, 0.0));
    Ok(OmegaShadow {
        level: n,
        iterates,
        triangles: tris.len(),
        triangulation_error,
        leaves: st.leaves,
        dropped: st.dropped,
        partial: st.dropped > 0,
        unresolved: st.unresolved,
        max_cell_span: st.max_span,
        mask,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingReport {
    /// Smallest distance from an inner pixel to the outer complement;
    /// negative (minus the farthest escape) when the inner set leaks.
    pub margin: f64,
    pub pixel: f64,
    pub inner_pixels: usize,
    pub leaked_pixels: usize,
}

pub fn nesting_check(outer: &OmegaShadow, inner: &OmegaShadow) -> Result<NestingReport> {
    if outer.mask.n != inner.mask.n {
        return Err(Error::Domain("shadows use different rasters".into()));
    }
    let to_out = outer.mask.distance_to(false);
    let to_in = outer.mask.distance_to(true);
    let (mut margin, mut leak, mut leaked, mut count) = (f64::INFINITY, 0.0f64, 0, 0);
    for (i, &b) in inner.mask.data.iter().enumerate() {
        if !b {
            continue;
        }
        count += 1;
        if outer.mask.data[i] {
            margin = margin.min(to_out[i]);
        } else {
            leaked += 1;
            leak = leak.max(to_in[i]);
        }
    }
    if count == 0 {
        return Err(Error::Domain("inner shadow is empty".into()));
    }
    let margin = if leaked > 0 { -leak } else { margin };
    Ok(NestingReport { margin, pixel: outer.mask.pixel(), inner_pixels: count, leaked_pixels: leaked })
}

pub fn containment_fraction(mask: &Mask, points: &[Complex64]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    points.iter().filter(|z| mask.contains(**z)).count() as f64 / points.len() as f64
}

/// Convex hull (counter-clockwise, no collinear points).
pub fn convex_hull(points: &[Complex64]) -> Vec<Complex64> {
    let mut p: Vec<Complex64> = points.to_vec();
    p.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: Complex64, a: Complex64, b: Complex64| (a - o).re * (b - o).im - (a - o).im * (b - o).re;
    let mut hull: Vec<Complex64> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Complex64>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &z in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], z) <= 0.0 {
                hull.pop();
            }
            hull.push(z);
        }
        hull.pop();
    }
    hull
}

/// Circumradius over inradius of a sampled region boundary, seen from `q`.
pub fn eccentricity(boundary: &[Complex64], q: Complex64) -> Result<f64> {
    let hull = convex_hull(boundary);
    if hull.len() < 3 || !point_in_polygon(&hull, q) {
        return Err(Error::Domain(format!("{q} is not inside the sample hull")));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for z in boundary {
        let d = (z - q).norm();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        return Err(Error::Domain(format!("{q} lies on the sampled boundary")));
    }
    Ok(hi / lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::QuadraticMap;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn first_postcritical_point() {
        let a = 0.0217;
        let cloud = postcritical_cloud(a, 5).unwrap();
        let expected = -cis(4.0 * PI * a) / 4.0;
        assert!((cloud.points[0] - expected).norm() < 1e-15);
        assert!(cloud.recurrence_residual(&QuadraticMap::new(a)) < 1e-12);
        assert_eq!(postcritical_cloud(a, 1).unwrap().len(), 1);
        assert!(postcritical_cloud(a, 0).is_err());
    }

    #[test]
    fn synthetic_box_areas() {
        let single = [c(0.3, -0.7)];
        for m in 2..=14 {
            let e = 2f64.powi(-m);
            assert_eq!(box_area(&single, e).unwrap(), e * e);
        }
        // A horizontal unit segment inside one box row.
        let seg: Vec<Complex64> = (0..1000).map(|i| c(0.1 + i as f64 / 999.0 * 0.999, 0.3)).collect();
        for m in 4..=8 {
            let e = 2f64.powi(-m);
            let a = box_area(&seg, e).unwrap();
            assert!((a / e - 1.0).abs() < 0.1, "eps {e}: {a}");
        }
        assert!(box_area(&single, 0.3).is_err());
        assert!(box_area(&single, 2f64.powi(-15)).is_err());
    }

    #[test]
    fn dense_disk_area() {
        let rho = 0.5;
        let mut pts = Vec::new();
        let h = 1.0 / 512.0;
        let n = (rho / h) as i64;
        for i in -n..=n {
            for j in -n..=n {
                let z = c(i as f64 * h + 0.3 * h, j as f64 * h + 0.1 * h);
                if z.norm() < rho {
                    pts.push(z);
                }
            }
        }
        for m in 4..=8 {
            let a = box_area(&pts, 2f64.powi(-m)).unwrap();
            assert!((a / (PI * rho * rho) - 1.0).abs() < 0.25, "m {m}: {a}");
        }
    }

    #[test]
    fn edt_matches_brute_force() {
        let n = 24;
        let mut m = Mask::new(n);
        for (r, cc) in [(3, 4), (10, 20), (20, 2), (12, 12)] {
            m.data[r * n + cc] = true;
        }
        let d = m.distance_to(true);
        for i in 0..n * n {
            let brute = m
                .data
                .iter()
                .enumerate()
                .filter(|p| *p.1)
                .map(|(j, _)| (m.center(i) - m.center(j)).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((d[i] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_fill_area() {
        let mut m = Mask::new(512);
        m.fill_triangle(c(-1.0, -1.0), c(1.0, -1.0), c(-1.0, 1.0));
        let area = m.count() as f64 * m.pixel() * m.pixel();
        assert!((area - 2.0).abs() < 0.02);
        let mut tiny = Mask::new(64);
        tiny.fill_triangle(c(0.01, 0.01), c(0.011, 0.01), c(0.01, 0.011));
        assert_eq!(tiny.count(), 1);
    }

    #[test]
    fn porosity_oracles() {
        let seg: Vec<Complex64> = (0..20001).map(|i| c(-1.0 + i as f64 / 10000.0, 0.0)).collect();
        let idx = PointIndex::new(&seg, 2f64.powi(-12));
        let scales = [0.25, 0.125, 0.0625];
        let rep = porosity_probe(c(0.1, 0.0), &idx, &scales);
        for r in &rep.records {
            assert!((r.lambda - 0.5).abs() < 0.01, "{r:?}");
        }
        let disk: Vec<Complex64> = (-200..=200)
            .flat_map(|i| (-200..=200).map(move |j| c(i as f64 / 400.0, j as f64 / 400.0)))
            .collect();
        let idx = PointIndex::new(&disk, 2f64.powi(-11));
        let rep = porosity_probe(c(0.0, 0.0), &idx, &[0.2, 0.1]);
        // Holes cannot exceed the sample spacing 1/400.
        assert!(rep.records.iter().all(|r| r.hole_radius < 1.0 / 400.0));
        assert!(porosity_probe(c(0.0, 0.0), &idx, &[]).records.is_empty());
    }

    #[test]
    fn julia_samples_bounded_and_reproducible() {
        let a = 0.0196;
        let s = julia_sample(a, 200, 11).unwrap();
        let map = QuadraticMap::new(a);
        for &z in &s.points {
            let mut w = z;
            for _ in 0..20 {
                w = map.eval(w);
            }
            assert!(w.norm() < 10.0);
        }
        assert_eq!(s.points, julia_sample(a, 200, 11).unwrap().points);
        assert_eq!(julia_sample(a, 1, 3).unwrap().len(), 1);
    }

    #[test]
    fn limit_set_distance_cases() {
        let e = 2f64.powi(-6);
        let cloud = postcritical_cloud(0.0196, 4000).unwrap().points;
        let (d1, d2) = limit_set_distance(&cloud, &cloud, e).unwrap();
        assert!(d1 <= e * 2f64.sqrt() && d2 <= e * 2f64.sqrt());
        let (_, d2) = limit_set_distance(&cloud[..2000], &cloud, e).unwrap();
        assert!(d2 <= e * 2f64.sqrt());
        let far: Vec<Complex64> = cloud.iter().map(|z| z * 0.1 + c(1.5, 1.5)).collect();
        let (d1, d2) = limit_set_distance(&far, &cloud, e).unwrap();
        assert!(d1 > 0.5 && d2 > 0.5);
    }

    #[test]
    fn eccentricity_oracles() {
        let circle: Vec<Complex64> = (0..720).map(|i| cis(2.0 * PI * i as f64 / 720.0)).collect();
        assert!((eccentricity(&circle, c(0.0, 0.0)).unwrap() - 1.0).abs() < 1e-3);
        let ellipse: Vec<Complex64> = circle.iter().map(|z| c(2.0 * z.re, z.im)).collect();
        assert!((eccentricity(&ellipse, c(0.0, 0.0)).unwrap() - 2.0).abs() < 0.1);
        assert!(eccentricity(&circle, c(3.0, 0.0)).is_err());
    }

    #[test]
    fn siegel_stand_in_is_small_disk() {
        let s = siegel_stand_in(0.0196, 2000, 1e-3);
        assert!(s.radius > 0.0 && s.radius < 0.5);
        assert!(s.probe_radius <= s.radius + 1e-3);
    }
    #[test]
    fn polygon_area_and_triangulation() {
        let square = [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0), c(0.0, 1.0)];
        assert!((polygon_area(&square) - 1.0).abs() < 1e-15);
        // L-shaped, non-convex.
        let ell = [c(0.0, 0.0), c(2.0, 0.0), c(2.0, 1.0), c(1.0, 1.0), c(1.0, 2.0), c(0.0, 2.0)];
        assert!((polygon_area(&ell) - 3.0).abs() < 1e-15);
        let tris = triangulate(&ell).unwrap();
        assert_eq!(tris.len(), 4);
        let total: f64 = tris.iter().map(triangle_area).sum();
        assert!((total - 3.0).abs() < 1e-12);
        for t in &tris {
            let g = (t[0] + t[1] + t[2]) / 3.0;
            assert!(point_in_polygon(&ell, g));
        }
    }

    #[test]
    fn cover_triangle_is_conservative() {
        let (a, b, cc) = (c(-0.6, -0.5), c(0.7, -0.3), c(0.1, 0.8));
        let mut fill = Mask::new(256);
        fill.fill_triangle(a, b, cc);
        let mut cover = Mask::new(256);
        cover.cover_triangle(a, b, cc);
        let px = cover.pixel();
        let area = triangle_area(&[a, b, cc]);
        assert!(cover.count() as f64 * px * px >= area);
        for i in 0..fill.data.len() {
            assert!(!fill.data[i] || cover.data[i]);
        }
        // Every pixel within the triangle, sampled finely, is covered.
        for i in 0..=60 {
            for j in 0..=(60 - i) {
                let (s, t) = (i as f64 / 60.0, j as f64 / 60.0);
                assert!(cover.contains(a + (b - a) * s + (cc - a) * t));
            }
        }
        // A degenerate sliver still marks its vertex pixels.
        let mut thin = Mask::new(64);
        thin.cover_triangle(c(0.01, 0.01), c(0.3, 0.01), c(0.3, 0.01));
        assert!(thin.contains(c(0.01, 0.01)) && thin.contains(c(0.3, 0.01)));
    }

}
