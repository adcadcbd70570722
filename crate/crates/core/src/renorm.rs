//! Near-parabolic renormalization.
//!
//! For a map `h` with chart `Phi`, the sector `S = C^{-k} u (C#)^{-k}` is
//! the `k`-fold pullback of `C u C#` attached to 0, with `k` the least pullback
//! count whose boundary sample sits in the strip `0 < Re Phi < floor(1/alpha) - k_bold - 1`.
//! The return map is `Phi o h^k o Phi^{-1}` on `Phi(S)`, and
//!
//! ```text
//! R(h)(u) = Exp(ret(zeta)),   Exp(zeta) = (-4/27) conj(e^{2 pi i zeta}),
//! ```
//!
//! with `zeta` the integer translate of `Exp^{-1}(u)` that lies in `Phi(S)`.
//! `R(h)` is holomorphic, fixes 0 with multiplier `e^{2 pi i / alpha}` and has
//! critical value `-4/27`. It is never tabulated: each value traces
//! `Exp^{-1}`, `Phi^{-1}`, `k` steps of `h` and `Phi`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::arith::HighTypeAngle;
use crate::error::{Error, Result};
use crate::fatou::{build_chart, ChartOptions, FatouChart, FittedConstants, SectorKind};
use crate::maps::{HoloMap, ESCAPE_RADIUS};
use crate::stats::linspace;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// The critical value of every renormalized map.
pub const EXP_SCALE: f64 = -4.0 / 27.0;

/// `Exp(zeta) = (-4/27) conj(e^{2 pi i zeta})`.
pub fn exp_map(zeta: Complex64) -> Complex64 {
    EXP_SCALE * (2.0 * PI * I * zeta).exp().conj()
}

/// The preimage of `u` under [`exp_map`] with `Re` in `(-1/2, 1/2]`.
pub fn exp_inverse(u: Complex64) -> Result<Complex64> {
    if u.norm() == 0.0 || !u.is_finite() {
        return Err(Error::Domain(format!("Exp^-1 at {u}")));
    }
    Ok((u / EXP_SCALE).conj().ln() / (2.0 * PI * I))
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorOptions {
    /// Arc-length spacing of the boundary sample in the `Phi` plane.
    pub ds: f64,
    /// Points on each of the two columns of `C#`.
    pub spike_points: usize,
    /// Top of the `C#` columns, in units of `1/alpha`.
    pub spike_height: f64,
    pub k_max: usize,
}

impl Default for SectorOptions {
    fn default() -> Self {
        Self { ds: 0.02, spike_points: 200, spike_height: 2.0, k_max: 20 }
    }
}

impl SectorOptions {
    pub fn refined(&self) -> Self {
        Self { ds: self.ds / 2.0, spike_points: self.spike_points * 2, ..self.clone() }
    }
}

/// Boundary sample of `S = C^{-k} u (C#)^{-k}` and its `Phi` image.
#[derive(Debug, Clone, Serialize)]
pub struct SectorSample {
    pub k: usize,
    /// Closed boundary curve of `C^{-k}`.
    pub loop_z: Vec<Complex64>,
    /// Lifts of the columns `Re = 1/2` and `Re = 3/2` of `C#`, top first.
    pub columns_z: [Vec<Complex64>; 2],
    pub phi_loop: Vec<Complex64>,
    pub phi_columns: [Vec<Complex64>; 2],
    /// Range of `Re Phi` over the sample.
    pub re_range: (f64, f64),
    pub strip_hi: f64,
    /// The point of `S` mapped to `cp` by `h^{k-1}`.
    pub critical: Complex64,
    /// Closure gap of the doubled lift around `cp`.
    pub closure_gap: f64,
}

impl SectorSample {
    pub fn points_z(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.loop_z.iter().chain(self.columns_z[0].iter()).chain(self.columns_z[1].iter()).copied()
    }

    pub fn phi_points(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.phi_loop.iter().chain(self.phi_columns[0].iter()).chain(self.phi_columns[1].iter()).copied()
    }

    pub fn center_re(&self) -> f64 {
        0.5 * (self.re_range.0 + self.re_range.1)
    }

    /// Closed boundary polygon of `S` in the `z` plane, through `0`.
    pub fn polygon(&self) -> Vec<Complex64> {
        // Right column reversed (top last) then 0, then the left column down
        // to the loop, which starts where the left column ends.
        let mut out = Vec::new();
        out.push(Complex64::new(0.0, 0.0));
        out.extend(self.columns_z[0].iter().copied());
        out.extend(self.loop_z.iter().copied());
        let right = &self.columns_z[1];
        // Join the loop to the right column at the nearest loop point.
        let end = right[right.len() - 1];
        let j = nearest_index(&self.loop_z, end);
        out.truncate(1 + self.columns_z[0].len() + j + 1);
        out.extend(right.iter().rev().copied());
        out
    }
}

fn nearest_index(pts: &[Complex64], z: Complex64) -> usize {
    pts.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - z).norm_sqr().total_cmp(&(b.1 - z).norm_sqr()))
        .map(|p| p.0)
        .unwrap_or(0)
}

fn lift_segment<M: HoloMap + ?Sized>(
    map: &M,
    a: Complex64,
    b: Complex64,
    za: Complex64,
    depth: usize,
) -> Result<Complex64> {
    let d = map.deriv(za);
    let guess = za + (b - a) / d;
    if let Ok(x) = map.preimage_near(b, guess) {
        if (x - guess).norm() <= 0.25 * (guess - za).norm() + 1e-13 {
            return Ok(x);
        }
    }
    if depth >= 40 {
        return Err(Error::Degenerate(format!("path lift stalled near {b}")));
    }
    let m = 0.5 * (a + b);
    let zm = lift_segment(map, a, m, za, depth + 1)?;
    lift_segment(map, m, b, zm, depth + 1)
}

/// Lifts the polyline `targets` by `map^{-1}`, starting at the preimage `start`
/// of `targets[0]` and following continuity (segments subdivided as needed).
pub fn lift_path<M: HoloMap + ?Sized>(map: &M, targets: &[Complex64], start: Complex64) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(targets.len());
    out.push(start);
    for w in targets.windows(2) {
        let za = out[out.len() - 1];
        out.push(lift_segment(map, w[0], w[1], za, 0)?);
    }
    Ok(out)
}

/// `Phi^{-1}` along a polyline by Newton continuation from its first point.
fn chart_path_inverse(chart: &FatouChart, zetas: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(zetas.len());
    let mut z = chart.phi_inverse(zetas[0])?;
    out.push(z);
    for w in zetas.windows(2) {
        let mut x = z;
        let mut target = w[0];
        // Substeps keep Newton inside the branch just followed.
        let sub = 4;
        for s in 1..=sub {
            let next = w[0] + (w[1] - w[0]) * (s as f64 / sub as f64);
            let (_, d) = chart.phi_d(x)?;
            x += (next - target) / d;
            for _ in 0..30 {
                let (v, d) = chart.phi_d(x)?;
                let step = (v - next) / d;
                x -= step;
                if step.norm() < 1e-15 * (1.0 + x.norm()) {
                    break;
                }
            }
            target = next;
        }
        z = x;
        out.push(z);
    }
    Ok(out)
}

fn polyline(points: &[Complex64], ds: f64) -> Vec<Complex64> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let n = ((w[1] - w[0]).norm() / ds).ceil().max(1.0) as usize;
        for j in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * (j as f64 / n as f64));
        }
    }
    out
}

fn in_strip(v: Complex64, hi: f64) -> bool {
    v.re > 0.0 && v.re < hi
}

/// The least `k` and the boundary sample of the corresponding sector.
pub fn compute_sector(chart: &FatouChart, opts: &SectorOptions) -> Result<SectorSample> {
    let map = chart.map().as_ref();
    let alpha = chart.alpha;
    let strip_hi = (1.0 / alpha).floor() - chart.opts.k_bold as f64 - 1.0;
    let top = opts.spike_height / alpha;
    let col = |x: f64| -> Vec<Complex64> {
        linspace(top, 2.0, opts.spike_points).into_iter().map(|y| Complex64::new(x, y)).collect()
    };
    let zeta_cols = [col(0.5), col(1.5)];
    let corners = [
        Complex64::new(0.5, 2.0),
        Complex64::new(0.5, -2.0),
        Complex64::new(1.5, -2.0),
        Complex64::new(1.5, 2.0),
        Complex64::new(0.5, 2.0),
    ];
    let zeta_loop = polyline(&corners, opts.ds);

    let mut cols = [chart_path_inverse(chart, &zeta_cols[0])?, chart_path_inverse(chart, &zeta_cols[1])?];
    let base_loop = chart_path_inverse(chart, &zeta_loop)?;
    let mut lp: Vec<Complex64> = Vec::new();
    let mut path_to_cp: Vec<Complex64> = Vec::new();
    let mut cp_index = 0usize;
    let mut closure_gap = 0.0;
    let cp = map.critical_point();

    for j in 1..=opts.k_max {
        let mut next_cols: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
        for (c, nc) in cols.iter().zip(next_cols.iter_mut()) {
            let start = map.preimage_fixing_zero(c[0])?;
            *nc = lift_path(map, c, start)?;
        }
        let start = next_cols[0][next_cols[0].len() - 1];
        if j == 1 {
            // The boundary of C winds once around cv: lift it twice.
            let mut twice = base_loop.clone();
            twice.extend_from_slice(&base_loop[1..]);
            lp = lift_path(map, &twice, start)?;
            closure_gap = (lp[lp.len() - 1] - lp[0]).norm();
            // A segment from the nearest boundary point to cp, lifted alongside the loop.
            cp_index = nearest_index(&lp, cp);
            let a = lp[cp_index];
            path_to_cp = linspace(0.0, 1.0, 64).into_iter().map(|s| a + (cp - a) * s).collect();
        } else {
            let new_lp = lift_path(map, &lp, start)?;
            path_to_cp = lift_path(map, &path_to_cp, new_lp[cp_index])?;
            lp = new_lp;
        }
        cols = next_cols;

        let all_in = lp.iter().chain(cols[0].iter()).chain(cols[1].iter()).all(|&z| match chart.phi(z) {
            Ok(v) => in_strip(v, strip_hi),
            Err(_) => false,
        });
        if all_in {
            let phi_all = |v: &[Complex64]| -> Result<Vec<Complex64>> { v.par_iter().map(|&z| chart.phi(z)).collect() };
            let phi_loop = phi_all(&lp)?;
            let phi_columns = [phi_all(&cols[0])?, phi_all(&cols[1])?];
            let (lo, hi) = phi_loop
                .iter()
                .chain(phi_columns[0].iter())
                .chain(phi_columns[1].iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v.re), a.1.max(v.re)));
            let critical = if j == 1 { cp } else { path_to_cp[path_to_cp.len() - 1] };
            return Ok(SectorSample {
                k: j,
                loop_z: lp,
                columns_z: cols,
                phi_loop,
                phi_columns,
                re_range: (lo, hi),
                strip_hi,
                critical,
                closure_gap,
            });
        }
    }
    Err(Error::Runaway(opts.k_max))
}

pub fn compute_k(chart: &FatouChart, opts: &SectorOptions) -> Result<usize> {
    Ok(compute_sector(chart, opts)?.k)
}

/// `Phi(h^k(Phi^{-1}(zeta)))` and its derivative.
pub fn return_map_d(chart: &FatouChart, k: usize, zeta: Complex64) -> Result<(Complex64, Complex64)> {
    let (mut z, mut d) = chart.phi_inverse_d(zeta)?;
    let map = chart.map();
    for i in 0..k {
        d *= map.deriv(z);
        z = map.eval_checked(z).map_err(|_| Error::Escape { index: i })?;
        if !z.is_finite() || z.norm() > ESCAPE_RADIUS {
            return Err(Error::Escape { index: i });
        }
    }
    let (v, dv) = chart.phi_d(z)?;
    Ok((v, d * dv))
}

pub fn return_map(chart: &FatouChart, k: usize, zeta: Complex64) -> Result<Complex64> {
    Ok(return_map_d(chart, k, zeta)?.0)
}

fn in_target(v: Complex64) -> bool {
    SectorKind::C.contains(v) || SectorKind::CSharp.contains(v)
}

/// Trace of one evaluation of `R(h)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Trace {
    /// The representative in `Phi(S)`.
    pub zeta: Complex64,
    pub shift: i64,
    /// `ret(zeta)`, in `C u C#`.
    pub image: Complex64,
    pub value: Complex64,
    pub deriv: Complex64,
}

/// `R(h)`, evaluated by tracing through the chart of `h`.
#[derive(Clone)]
pub struct RenormMap {
    pub parent: Arc<FatouChart>,
    pub k: usize,
    /// Rotation number of the new map, `frac(1/alpha)` from the continued fraction.
    pub alpha: f64,
    pub center: f64,
    pub strip_hi: f64,
    /// Bounding box of the sampled `Phi(S)`, widened by a margin.
    pub re_bounds: (f64, f64),
    pub im_min: f64,
    cp: Complex64,
}

impl std::fmt::Debug for RenormMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RenormMap").field("k", &self.k).field("alpha", &self.alpha).field("cp", &self.cp).finish()
    }
}

impl RenormMap {
    pub fn new(parent: Arc<FatouChart>, sector: &SectorSample, alpha: f64) -> Result<Self> {
        let cp = exp_map(parent.phi(sector.critical)?);
        let im_min = sector.phi_points().map(|v| v.im).fold(f64::INFINITY, f64::min);
        let margin = 0.25;
        Ok(Self {
            parent,
            k: sector.k,
            alpha,
            center: sector.center_re(),
            strip_hi: sector.strip_hi,
            re_bounds: (sector.re_range.0 - margin, sector.re_range.1 + margin),
            im_min: im_min - margin,
            cp,
        })
    }

    /// Finds the translate of `zeta0` in `Phi(S)`, nearest the sector center first.
    pub fn representative(&self, zeta0: Complex64) -> Result<(Complex64, i64, Complex64, Complex64)> {
        if zeta0.im < self.im_min {
            return Err(Error::Representative(zeta0));
        }
        let n0 = (self.center - zeta0.re).round() as i64;
        for dn in [0i64, -1, 1, -2, 2] {
            let n = n0 + dn;
            let zeta = zeta0 + n as f64;
            if !in_strip(zeta, self.strip_hi) || zeta.re < self.re_bounds.0 || zeta.re > self.re_bounds.1 {
                continue;
            }
            if let Ok((v, d)) = return_map_d(&self.parent, self.k, zeta) {
                if in_target(v) {
                    return Ok((zeta, n, v, d));
                }
            }
        }
        Err(Error::Representative(zeta0))
    }

    pub fn trace(&self, u: Complex64) -> Result<Trace> {
        let zeta0 = exp_inverse(u)?;
        let (zeta, shift, image, d) = self.representative(zeta0)?;
        let value = exp_map(image);
        // Exp o ret o Exp^{-1} has derivative (f(u)/u) conj(ret').
        let deriv = value / u * d.conj();
        Ok(Trace { zeta, shift, image, value, deriv })
    }
}

/// Newton continuation of the inverse branch fixing 0.
fn radial_preimage<M: HoloMap + ?Sized>(map: &M, z: Complex64, steps: usize) -> Result<Complex64> {
    let mut w = Complex64::new(0.0, 0.0);
    for s in 1..=steps {
        let target = z * (s as f64 / steps as f64);
        let guess = w + (target - map.eval(w)) / map.deriv(w);
        w = map.preimage_near(target, guess)?;
    }
    Ok(w)
}

impl HoloMap for RenormMap {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn eval(&self, z: Complex64) -> Complex64 {
        if z.norm() == 0.0 {
            return z;
        }
        match self.trace(z) {
            Ok(t) => t.value,
            Err(_) => Complex64::new(f64::NAN, f64::NAN),
        }
    }

    fn deriv(&self, z: Complex64) -> Complex64 {
        if z.norm() == 0.0 {
            return self.multiplier();
        }
        match self.trace(z) {
            Ok(t) => t.deriv,
            Err(_) => Complex64::new(f64::NAN, f64::NAN),
        }
    }

    fn critical_point(&self) -> Complex64 {
        self.cp
    }

    fn critical_value(&self) -> Complex64 {
        Complex64::new(EXP_SCALE, 0.0)
    }

    fn eval_checked(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() == 0.0 {
            return Ok(z);
        }
        Ok(self.trace(z)?.value)
    }

    /// Newton with one trace per step (value and derivative together).
    fn preimage_near(&self, z: Complex64, guess: Complex64) -> Result<Complex64> {
        let mut w = guess;
        let mut residual = f64::INFINITY;
        for _ in 0..40 {
            let t = match self.trace(w) {
                Ok(t) => t,
                Err(_) => break,
            };
            residual = (t.value - z).norm();
            let step = (t.value - z) / t.deriv;
            w -= step;
            if step.norm() < 1e-14 * (1.0 + w.norm()) {
                return Ok(w);
            }
        }
        if residual < 1e-12 * (1.0 + z.norm()) {
            Ok(w)
        } else {
            Err(Error::Inversion { best: w, residual })
        }
    }

    fn preimage_fixing_zero(&self, z: Complex64) -> Result<Complex64> {
        let guess = z / self.multiplier();
        if let Ok(w) = self.preimage_near(z, guess) {
            if (w - guess).norm() < 0.5 * z.norm() {
                return Ok(w);
            }
        }
        radial_preimage(self, z, 8)
    }
}

/// `f'(0)` from the 8-point circle average of `f(u)/u` at radius `r`.
pub fn derivative_at_zero<M: HoloMap + ?Sized>(map: &M, r: f64) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..8 {
        let u = Complex64::from_polar(r, 2.0 * PI * j as f64 / 8.0);
        acc += map.eval_checked(u)? / u;
    }
    Ok(acc / 8.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationCheck {
    pub level: usize,
    pub derivative: Complex64,
    pub measured: f64,
    pub expected: f64,
    pub error: f64,
    pub modulus_error: f64,
}

/// Compares `arg f'(0) / 2 pi` (mod 1) with the continued-fraction value.
pub fn rotation_check<M: HoloMap + ?Sized>(map: &M, level: usize, expected: f64) -> Result<RotationCheck> {
    let d = derivative_at_zero(map, 1e-4)?;
    let measured = (d.arg() / (2.0 * PI)).rem_euclid(1.0);
    let diff = (measured - expected).rem_euclid(1.0);
    Ok(RotationCheck {
        level,
        derivative: d,
        measured,
        expected,
        error: diff.min(1.0 - diff),
        modulus_error: (d.norm() - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerOptions {
    pub depth: usize,
    pub chart: ChartOptions,
    /// Transport cap for charts of traced maps, in periods.
    pub level_transport_periods: f64,
    pub sector: SectorOptions,
    pub constants: FittedConstants,
}

impl Default for TowerOptions {
    fn default() -> Self {
        Self {
            depth: 1,
            chart: ChartOptions::default(),
            level_transport_periods: 1.0,
            sector: SectorOptions::default(),
            constants: FittedConstants::default(),
        }
    }
}

pub struct RenormLevel {
    pub n: usize,
    pub alpha: f64,
    pub map: Arc<dyn HoloMap>,
    pub chart: Option<Arc<FatouChart>>,
    pub sector: Option<SectorSample>,
    pub rotation: Option<RotationCheck>,
    pub eta: Option<EtaBranch>,
}

impl RenormLevel {
    pub fn chart(&self) -> Result<&Arc<FatouChart>> {
        self.chart.as_ref().ok_or(Error::Depth { requested: self.n, available: 0 })
    }

    pub fn sector(&self) -> Result<&SectorSample> {
        self.sector.as_ref().ok_or(Error::Depth { requested: self.n, available: 0 })
    }

    pub fn k(&self) -> Option<usize> {
        self.sector.as_ref().map(|s| s.k)
    }
}

pub struct Tower {
    pub angle: HighTypeAngle,
    pub levels: Vec<RenormLevel>,
    pub opts: TowerOptions,
}

/// Levels with a chart: every level up to `min(depth, 1)`.
const CHARTED_LEVELS: usize = 1;

/// `f_0 = map`, `f_{n+1} = R(f_n)` for `n < depth`.
pub fn build_tower(angle: &HighTypeAngle, map: Arc<dyn HoloMap>, opts: TowerOptions) -> Result<Tower> {
    if opts.depth > 2 {
        return Err(Error::Config(format!("tower depth {} exceeds 2", opts.depth)));
    }
    if angle.tower.len() <= opts.depth {
        return Err(Error::Depth { requested: opts.depth, available: angle.tower.len().saturating_sub(1) });
    }
    let mut levels: Vec<RenormLevel> = Vec::new();
    for n in 0..=opts.depth {
        let alpha = angle.tower[n];
        let (map, rotation): (Arc<dyn HoloMap>, Option<RotationCheck>) = if n == 0 {
            (map.clone(), None)
        } else {
            let parent = &levels[n - 1];
            let f = RenormMap::new(parent.chart()?.clone(), parent.sector()?, alpha)?;
            let rot = rotation_check(&f, n, alpha)?;
            (Arc::new(f), Some(rot))
        };
        let (chart, sector) = if n <= CHARTED_LEVELS {
            let mut copts = opts.chart.clone();
            if n > 0 {
                copts.transport_periods = opts.level_transport_periods;
            }
            let chart = Arc::new(build_chart(map.clone(), copts)?);
            let sector = compute_sector(&chart, &opts.sector)?;
            if sector.k > opts.constants.k_double_prime as usize {
                return Err(Error::Runaway(sector.k));
            }
            (Some(chart), Some(sector))
        } else {
            (None, None)
        };
        let eta = match (&chart, n) {
            (Some(c), n) if n > 0 => Some(EtaBranch::new(c)?),
            _ => None,
        };
        levels.push(RenormLevel { n, alpha, map, chart, sector, rotation, eta });
    }
    Ok(Tower { angle: angle.clone(), levels, opts })
}

/// A continuous branch `eta_n` of `Exp^{-1}` on the level-`n` petal.
///
/// `Re eta` is unwrapped over the integer nodes of the chart's seed table by
/// breadth-first search from the node `Phi = 1` (where `eta(cv) = 1`); a query
/// takes the translate nearest the value at the node nearest `Phi(w)`.
#[derive(Debug, Clone)]
pub struct EtaBranch {
    nodes: HashMap<(i64, i64), f64>,
}

impl EtaBranch {
    pub fn new(chart: &FatouChart) -> Result<Self> {
        let mut pts: HashMap<(i64, i64), Complex64> = HashMap::new();
        for s in chart.seeds() {
            if let Ok(z) = chart.cov.tau(s.w) {
                pts.insert((s.zeta.re.round() as i64, s.zeta.im.round() as i64), z);
            }
        }
        let base = (1i64, 0i64);
        let z_base = *pts.get(&base).ok_or(Error::Degenerate("seed table lacks the node 1".into()))?;
        let mut nodes = HashMap::new();
        let v0 = exp_inverse(z_base)?.re;
        nodes.insert(base, v0 + (1.0 - v0).round());
        let mut queue = std::collections::VecDeque::from([base]);
        while let Some(key) = queue.pop_front() {
            let val = nodes[&key];
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nk = (key.0 + dx, key.1 + dy);
                if nodes.contains_key(&nk) {
                    continue;
                }
                if let Some(&z) = pts.get(&nk) {
                    let r = exp_inverse(z)?.re;
                    nodes.insert(nk, r + (val - r).round());
                    queue.push_back(nk);
                }
            }
        }
        Ok(Self { nodes })
    }

    /// `eta(w)` given `Phi_n(w)`, and the distance of `Re eta` from the node value.
    pub fn eval(&self, w: Complex64, phi: Complex64) -> Result<(Complex64, f64)> {
        let key = (phi.re.round() as i64, phi.im.round() as i64);
        let reference = match self.nodes.get(&key) {
            Some(&v) => v,
            None => {
                let (_, &v) = self
                    .nodes
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.0 .0 as f64 - phi.re).powi(2) + (a.0 .1 as f64 - phi.im).powi(2);
                        let db = (b.0 .0 as f64 - phi.re).powi(2) + (b.0 .1 as f64 - phi.im).powi(2);
                        da.total_cmp(&db)
                    })
                    .ok_or(Error::BranchWindow { z: w, lo: 0.0, hi: 0.0 })?;
                v
            }
        };
        let z0 = exp_inverse(w)?;
        let v = z0 + (reference - z0.re).round();
        Ok((v, (v.re - reference).abs()))
    }

    /// Range of `Re eta` over the nodes.
    pub fn re_range(&self) -> (f64, f64) {
        self.nodes.values().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)))
    }
}

/// `eta_n(w)` through the level's branch table.
pub fn eta(level: &RenormLevel, w: Complex64) -> Result<(Complex64, f64)> {
    let chart = level.chart()?;
    let branch = level.eta.as_ref().ok_or(Error::Depth { requested: level.n, available: 0 })?;
    branch.eval(w, chart.phi(w)?)
}

/// `psi_n = Phi_{n-1}^{-1} o eta_n`.
pub fn psi(tower: &Tower, n: usize, w: Complex64) -> Result<Complex64> {
    if n == 0 || n >= tower.levels.len() {
        return Err(Error::Depth { requested: n, available: tower.levels.len().saturating_sub(1) });
    }
    let (v, _) = eta(&tower.levels[n], w)?;
    tower.levels[n - 1].chart()?.phi_inverse(v)
}

/// `Psi_n = psi_1 o ... o psi_n`.
pub fn psi_map(tower: &Tower, n: usize, w: Complex64) -> Result<Complex64> {
    let mut z = w;
    for j in (1..=n).rev() {
        z = psi(tower, j, z)?;
    }
    Ok(z)
}

fn iterate<M: HoloMap + ?Sized>(map: &M, z: Complex64, n: u64) -> Result<Complex64> {
    let mut z = z;
    for i in 0..n {
        z = map.eval_checked(z)?;
        if !z.is_finite() || z.norm() > ESCAPE_RADIUS {
            return Err(Error::Escape { index: i as usize });
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyReport {
    pub level: usize,
    /// `q_n` and `k_n q_n + q_{n-1}`.
    pub exponents: (u64, u64),
    pub samples: (usize, usize),
    pub skipped: (usize, usize),
    pub residual_first: f64,
    pub residual_second: f64,
    /// Largest distance of `Re eta` from the nearest node value.
    pub eta_deviation: f64,
    pub eta_re_range: (f64, f64),
}

fn petal_samples(count: usize, seed: u64, re: (f64, f64), im: (f64, f64)) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Complex64::new(rng.gen_range(re.0..re.1), rng.gen_range(im.0..im.1))).collect()
}

/// Both conjugacy identities at level `n = 1`:
/// `f_0^{q_1} o Psi_1 = Psi_1 o f_1` and `f_0^{k_1 q_1 + q_0} o Psi_1 = Psi_1 o f_1^{k_1}`.
pub fn conjugacy_residual(tower: &Tower, samples: usize, seed: u64) -> Result<ConjugacyReport> {
    let n = 1;
    if tower.levels.len() <= n {
        return Err(Error::Depth { requested: n, available: tower.levels.len() - 1 });
    }
    let f0 = tower.levels[0].map.clone();
    let lvl = &tower.levels[n];
    let (f1, c1, s1) = (lvl.map.clone(), lvl.chart()?.clone(), lvl.sector()?);
    let q1 = tower.angle.q(n);
    let q0 = tower.angle.q(n - 1);
    let k1 = s1.k as u64;
    let second_exp = k1 * q1 + q0;

    let eta_stats = std::sync::Mutex::new((0.0f64, f64::INFINITY, f64::NEG_INFINITY));
    let psi1 = |w: Complex64| -> Result<Complex64> {
        let (v, dev) = eta(lvl, w)?;
        let mut st = eta_stats.lock().expect("eta stats");
        st.0 = st.0.max(dev);
        st.1 = st.1.min(v.re);
        st.2 = st.2.max(v.re);
        drop(st);
        tower.levels[0].chart()?.phi_inverse(v)
    };

    // First identity on the strip of the level-1 chart.
    let first: Vec<Option<f64>> = petal_samples(samples, seed, (1.0, c1.width - 2.0), (-1.0, 3.0))
        .par_iter()
        .map(|&zeta| {
            let w = c1.phi_inverse(zeta).ok()?;
            let lhs = iterate(f0.as_ref(), psi1(w).ok()?, q1).ok()?;
            let rhs = psi1(f1.eval_checked(w).ok()?).ok()?;
            Some((lhs - rhs).norm())
        })
        .collect();

    // Second identity on the level-1 sector.
    let (lo, hi) = s1.re_range;
    let candidates = petal_samples(4 * samples, seed ^ 0x5eed, (lo, hi), (-1.5, 3.0));
    let inside: Vec<Complex64> = candidates
        .par_iter()
        .filter_map(|&zeta| {
            let v = return_map(&c1, s1.k, zeta).ok()?;
            in_target(v).then_some(zeta)
        })
        .collect();
    let second: Vec<Option<f64>> = inside
        .iter()
        .take(samples)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&zeta| {
            let w = c1.phi_inverse(zeta).ok()?;
            let lhs = iterate(f0.as_ref(), psi1(w).ok()?, second_exp).ok()?;
            let rhs = psi1(iterate(f1.as_ref(), w, k1).ok()?).ok()?;
            Some((lhs - rhs).norm())
        })
        .collect();

    let summarize = |v: &[Option<f64>]| {
        let ok: Vec<f64> = v.iter().flatten().copied().collect();
        (ok.iter().copied().fold(0.0, f64::max), ok.len(), v.len() - ok.len())
    };
    let (r1, n1, sk1) = summarize(&first);
    let (r2, n2, sk2) = summarize(&second);
    let st = *eta_stats.lock().expect("eta stats");
    Ok(ConjugacyReport {
        level: n,
        exponents: (q1, second_exp),
        samples: (n1, n2),
        skipped: (sk1, sk2 + samples.saturating_sub(inside.len().min(samples))),
        residual_first: if n1 > 0 { r1 } else { f64::INFINITY },
        residual_second: if n2 > 0 { r2 } else { f64::INFINITY },
        eta_deviation: st.0,
        eta_re_range: (st.1, st.2),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutationReport {
    pub samples: usize,
    pub attempted: usize,
    pub max_residual: f64,
    pub ell_range: (usize, usize),
    /// The `ell` found for each sample.
    pub ells: Vec<usize>,
}

/// Two-path check at level `n`: for sampled `z` in the petal, some
/// `ell` in `[1, floor(1/alpha) - k_bold + k - 1]` gives
/// `Exp(Phi(f^ell(z))) = f_{n+1}(Exp(Phi(z)))`. The residual is relative
/// for values of modulus above 1.
pub fn lemma_renorm_check(tower: &Tower, n: usize, samples: usize, seed: u64) -> Result<CommutationReport> {
    if n + 1 >= tower.levels.len() {
        return Err(Error::Depth { requested: n + 1, available: tower.levels.len() - 1 });
    }
    let chart = tower.levels[n].chart()?;
    let k = tower.levels[n].sector()?.k;
    let next = tower.levels[n + 1].map.clone();
    let fmap = chart.map().clone();
    let ell_max = (1.0 / chart.alpha).floor() as usize - chart.opts.k_bold as usize + k - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ells = Vec::new();
    let mut worst: f64 = 0.0;
    let mut attempted = 0;
    while ells.len() < samples && attempted < 50 * samples {
        attempted += 1;
        let zeta = Complex64::new(rng.gen_range(0.5..chart.width - 1.5), rng.gen_range(-1.5..3.0));
        let Ok(z) = chart.phi_inverse(zeta) else { continue };
        let Ok(p) = chart.phi(z) else { continue };
        let Ok(target) = next.eval_checked(exp_map(p)) else { continue };
        let mut best = (0usize, f64::INFINITY);
        let mut zl = z;
        for ell in 1..=ell_max {
            let Ok(x) = fmap.eval_checked(zl) else { break };
            zl = x;
            let Ok(v) = chart.phi(zl) else { continue };
            let r = (exp_map(v) - target).norm() / target.norm().max(1.0);
            if r < best.1 {
                best = (ell, r);
            }
        }
        worst = worst.max(best.1);
        ells.push(best.0);
    }
    Ok(CommutationReport { samples: ells.len(), attempted, max_residual: worst, ell_range: (1, ell_max), ells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DescentBranch {
    Left,
    Dagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DescentClass {
    /// `Phi(z)` within `delta_1` of an integer.
    Ball,
    /// `Re Phi(z)` in `(k' + 1/2, 1/alpha - k)`.
    Strip,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentStep {
    pub level: usize,
    pub z: Complex64,
    pub zeta: Complex64,
    pub branch: DescentBranch,
    pub class: DescentClass,
    pub placement_ok: bool,
}

fn near_integer(zeta: Complex64, delta: f64) -> bool {
    (zeta - zeta.re.round()).norm() < delta
}

/// `z_{j+1} = Exp(zeta_j)` with `zeta_j = Phi_j^l(z_j)`, or `Phi_j^dagger(zeta_j) = z_j`
/// when the left extension violates the placement bound.
pub fn descend_pairs(tower: &Tower, z0: Complex64, depth: usize) -> Result<Vec<DescentStep>> {
    use crate::fatou::extensions::{phi_dagger, phi_left_extension};
    let c = &tower.opts.constants;
    let (kp, kb, d1) = (c.k_prime as f64, c.k_bold as f64, c.delta1);
    let mut out = Vec::new();
    let mut z = z0;
    for j in 0..=depth {
        let level = tower.levels.get(j).ok_or(Error::Depth { requested: j, available: tower.levels.len() - 1 })?;
        let chart = level.chart().map_err(|_| Error::Depth { requested: j, available: CHARTED_LEVELS })?;
        let kj = level.sector()?.k as f64;
        let inv = 1.0 / chart.alpha;
        let placement = |zeta: Complex64| near_integer(zeta, d1) || (zeta.re >= kp + 0.5 && zeta.re <= inv - kb + kj + kp);
        let left = phi_left_extension(chart, z, inv as usize).ok().map(|(v, _)| v).filter(|&v| placement(v));
        let (zeta, branch) = match left {
            Some(v) => (v, DescentBranch::Left),
            None => {
                let v = dagger_preimage(chart, z, inv as usize).ok_or(Error::DescentStuck(j))?;
                if !placement(v) || (phi_dagger(chart, v)? - z).norm() > 1e-7 {
                    return Err(Error::DescentStuck(j));
                }
                (v, DescentBranch::Dagger)
            }
        };
        let class = if near_integer(zeta, d1) {
            DescentClass::Ball
        } else if zeta.re > kp + 0.5 && zeta.re < inv - kb {
            DescentClass::Strip
        } else {
            DescentClass::Neither
        };
        out.push(DescentStep { level: j, z, zeta, branch, class, placement_ok: placement(zeta) });
        z = exp_map(zeta);
    }
    Ok(out)
}

/// `zeta` with `Phi^dagger(zeta) = z`: pull `z` back along the branch fixing 0
/// until it enters the strip, then add back the number of steps.
fn dagger_preimage(chart: &FatouChart, z: Complex64, max: usize) -> Option<Complex64> {
    let map = chart.map();
    let mut x = z;
    for m in 0..=max {
        if let Ok(v) = chart.phi(x) {
            if v.re >= 0.5 && v.re < chart.width - 1.0 {
                return Some(v + m as f64);
            }
        }
        x = map.preimage_fixing_zero(x).ok()?;
    }
    None
}

/// `Re Phi_n(z)` in `(0, W_n)`, the strip test used for level membership.
pub fn in_level_strip(chart: &FatouChart, z: Complex64) -> bool {
    chart.phi(z).map(|v| v.re > 0.0 && v.re < chart.width).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{cf_from_digits, CfDigits};
    use crate::maps::QuadraticMap;
    use std::sync::OnceLock;

    fn angle() -> HighTypeAngle {
        cf_from_digits(&CfDigits::periodic(&[50], 20).unwrap(), 20).unwrap()
    }

    fn tower() -> &'static Tower {
        static T: OnceLock<Tower> = OnceLock::new();
        T.get_or_init(|| {
            let a = angle();
            build_tower(&a, Arc::new(QuadraticMap::new(a.value)), TowerOptions::default()).unwrap()
        })
    }

    fn chart(alpha: f64) -> Arc<FatouChart> {
        Arc::new(build_chart(Arc::new(QuadraticMap::new(alpha)), ChartOptions::default()).unwrap())
    }

    #[test]
    fn exp_round_trip() {
        assert!((exp_map(Complex64::new(1.0, 0.0)) - EXP_SCALE).norm() < 1e-15);
        for z in [Complex64::new(0.3, 0.7), Complex64::new(-0.2, -1.1)] {
            let u = exp_map(z);
            let back = exp_inverse(u).unwrap();
            assert!((back - z).norm() < 1e-12);
            assert!((exp_map(z + 1.0) - u).norm() < 1e-12);
        }
    }

    #[test]
    fn k_is_positive_and_stable() {
        let c = chart(0.02);
        let opts = SectorOptions::default();
        let s = compute_sector(&c, &opts).unwrap();
        assert!(s.k >= 1);
        assert_eq!(s.k, compute_k(&c, &opts.refined()).unwrap());
        assert!(s.re_range.0 > 0.0 && s.re_range.1 < s.strip_hi);
        assert!(s.closure_gap < 1e-9);
        // z_c is carried to cp by k - 1 steps.
        let mut z = s.critical;
        for _ in 1..s.k {
            z = c.map().eval(z);
        }
        assert!((z - c.critical_point()).norm() < 1e-9);
    }

    #[test]
    fn k_bounded_across_alpha() {
        for alpha in [0.02, 0.01, 0.005] {
            let k = compute_k(&chart(alpha), &SectorOptions::default()).unwrap();
            assert!((1..=FittedConstants::default().k_double_prime as usize).contains(&k), "alpha {alpha}: k = {k}");
        }
    }

    #[test]
    fn return_map_translation_equivariance() {
        let c = chart(0.02);
        let s = compute_sector(&c, &SectorOptions::default()).unwrap();
        for y in [0.5, 1.0, 2.5, 6.0] {
            for x in linspace(s.re_range.0 - 0.4, s.re_range.0 + 0.4, 5) {
                let z = Complex64::new(x, y);
                let a = return_map(&c, s.k, z).unwrap();
                let b = return_map(&c, s.k, z + 1.0).unwrap();
                assert!((b - a - 1.0).norm() < 1e-6, "{z} {a} {b}");
            }
        }
    }

    #[test]
    fn return_map_matches_direct_orbit() {
        let c = chart(0.02);
        let s = compute_sector(&c, &SectorOptions::default()).unwrap();
        let z = s.loop_z[s.loop_z.len() / 3];
        let zeta = c.phi(z).unwrap();
        let mut w = z;
        for _ in 0..s.k {
            w = c.map().eval(w);
        }
        assert!((return_map(&c, s.k, zeta).unwrap() - c.phi(w).unwrap()).norm() < 1e-6);
    }

    #[test]
    fn return_map_is_translation_near_zero() {
        let c = chart(0.02);
        let s = compute_sector(&c, &SectorOptions::default()).unwrap();
        let zeta = Complex64::new(s.center_re(), 3.0 / c.alpha);
        let drift = return_map(&c, s.k, zeta).unwrap() - zeta - (s.k as f64 - c.period);
        assert!(drift.norm() < 0.1, "{drift}");
    }

    #[test]
    fn tower_levels_and_rotation() {
        let t = tower();
        assert_eq!(t.levels.len(), 2);
        assert_eq!(t.levels[0].alpha, angle().value);
        let r = t.levels[1].rotation.as_ref().unwrap();
        assert!(r.error < 1e-3);
        let f = &t.levels[1].map;
        assert!((f.critical_value() - f.eval(f.critical_point())).norm() < 1e-9);
        let u = Complex64::new(1e-6, 1e-6);
        assert!(f.eval(u).norm() < 1e-5);
    }

    #[test]
    fn depth_guards() {
        let a = angle();
        let m: Arc<dyn HoloMap> = Arc::new(QuadraticMap::new(a.value));
        let opts = TowerOptions { depth: 3, ..TowerOptions::default() };
        assert!(matches!(build_tower(&a, m.clone(), opts), Err(Error::Config(_))));
        let t = build_tower(&a, m, TowerOptions { depth: 0, ..TowerOptions::default() }).unwrap();
        assert_eq!(t.levels.len(), 1);
    }

    #[test]
    fn two_path_commutation() {
        let r = lemma_renorm_check(tower(), 0, 20, 3).unwrap();
        assert_eq!(r.samples, 20);
        assert!(r.max_residual < 1e-5);
        assert!(r.ells.iter().all(|&l| l >= 1 && l <= r.ell_range.1));
    }

    #[test]
    fn conjugacy_identities() {
        let t = tower();
        let r = conjugacy_residual(t, 20, 4).unwrap();
        assert_eq!(r.exponents, (50, 5 * 50 + 1));
        assert!(r.residual_first < 1e-4 && r.residual_second < 1e-4, "{r:?}");
        assert!(r.eta_re_range.0 >= 0.0 && r.eta_re_range.1 <= 3.0);
        // Psi_1 = psi_1.
        let w = t.levels[1].chart.as_ref().unwrap().phi_inverse(Complex64::new(10.0, 1.0)).unwrap();
        assert_eq!(psi_map(t, 1, w).unwrap(), psi(t, 1, w).unwrap());
    }

    #[test]
    fn descent_from_critical_value() {
        let t = tower();
        let cv = t.levels[0].map.critical_value();
        let d = descend_pairs(t, cv, 1).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|s| s.placement_ok));
        assert!(in_level_strip(t.levels[1].chart.as_ref().unwrap(), d[1].z));
        let d0 = descend_pairs(t, cv, 0).unwrap();
        assert!(t.levels[1].map.eval_checked(exp_map(d0[0].zeta)).is_ok());
    }
}
