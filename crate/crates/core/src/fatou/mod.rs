//! Perturbed Fatou coordinates.
//!
//! Work in the gate coordinate `xi = z / sigma`, where the two fixed points
//! sit at `xi = 0` and `xi = 1`. On the core disk `|xi - 1/2| < R_c` the chart
//! is
//!
//! ```text
//! Phi(xi) = c0 Log(xi) + c1 Log(1 - xi) + G(xi) - offset,
//! c0 = 1 / (2 pi i alpha),   c1 = 1 / Log(h'(sigma)),
//! ```
//!
//! with `G` a polynomial in `(xi - 1/2) / R_g` fitted by least squares to the
//! Abel equation `Phi(H(xi)) = Phi(xi) + 1`, `H(xi) = h(sigma xi) / sigma`.
//! The two log terms carry the monodromy around the fixed points exactly, so
//! the correction is single valued. Each value is shifted by a whole period
//! (`1/alpha` near 0, `-2 pi i c1` near `sigma`) into the window
//! `[lo, lo + 1/alpha)`, `lo = -(1/alpha - W)/2`.
//!
//! Outside the core a point is transported into it, forward by `h` on the
//! entry side of the gate and backward by the inverse branch fixing 0 on the
//! exit side. The side is read off the covering coordinate
//! `w = c0 Log(z/(z - sigma))` against a tabulated split curve halfway between
//! the forward-only line `Re Phi = 0` and the backward-only line
//! `Re Phi = W`.

pub mod constants;
pub mod extensions;
pub mod model;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lift::Covering;
use crate::maps::HoloMap;
use crate::stats::linspace;

pub use constants::FittedConstants;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Serialize)]
pub struct ChartOptions {
    pub abel_tol: f64,
    pub inv_tol: f64,
    pub alpha_max: f64,
    pub k_bold: u32,
    pub degree: usize,
    pub newton_cap: usize,
    pub validation_points: usize,
    pub seed: u64,
    /// Orbit length cap for transport into the core, in units of `1/alpha`.
    pub transport_periods: f64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        Self {
            abel_tol: 1e-6,
            inv_tol: 1e-8,
            alpha_max: 0.05,
            k_bold: 2,
            degree: 40,
            newton_cap: 100,
            validation_points: 1000,
            seed: 7,
            transport_periods: 8.0,
        }
    }
}

/// One node of the inverse seed table: `zeta = L(w)` and `L'(w)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeedNode {
    pub zeta: Complex64,
    pub w: Complex64,
    pub dl: Complex64,
}

#[derive(Clone)]
pub struct FatouChart {
    map: Arc<dyn HoloMap>,
    pub opts: ChartOptions,
    pub alpha: f64,
    pub sigma: Complex64,
    pub cov: Covering,
    pub c0: Complex64,
    pub c1: Complex64,
    pub period: f64,
    /// `2 pi i c1`, the monodromy of `Phi` around `sigma`.
    pub period_sigma: Complex64,
    pub rg: f64,
    pub rc: f64,
    pub coeffs: Vec<Complex64>,
    pub width: f64,
    pub lo: f64,
    pub offset: Complex64,
    /// Heights of the core image; the split table spans `1.5` times this.
    pub core_height: f64,
    split: Vec<(f64, f64)>,
    /// `L(w) - w` for `Im w` large.
    pub top_shift: Complex64,
    seeds: Vec<SeedNode>,
    seed_rows: (i64, i64),
    pub residual: f64,
    pub validation_count: usize,
    max_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartExport {
    pub version: u32,
    pub alpha: f64,
    pub sigma: Complex64,
    pub offset: Complex64,
    pub degree: usize,
    pub core_radius: f64,
    pub fit_radius: f64,
    pub width: f64,
    pub coeffs: Vec<Complex64>,
    pub split: Vec<(f64, f64)>,
    pub residual: f64,
    pub seeds: Vec<SeedNode>,
}

impl std::fmt::Debug for FatouChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FatouChart")
            .field("alpha", &self.alpha)
            .field("sigma", &self.sigma)
            .field("width", &self.width)
            .field("residual", &self.residual)
            .finish()
    }
}

fn ln(z: Complex64) -> Complex64 {
    z.ln()
}

pub fn build_chart(map: Arc<dyn HoloMap>, opts: ChartOptions) -> Result<FatouChart> {
    let alpha = map.alpha();
    if !(alpha > 0.0 && alpha <= opts.alpha_max) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, {}]", opts.alpha_max)));
    }
    let sigma = map.sigma()?;
    let cov = Covering { sigma, alpha };
    let mu = map.deriv(sigma);
    let c0 = 1.0 / (2.0 * PI * I * alpha);
    let c1 = 1.0 / ln(mu);
    let period = 1.0 / alpha;
    let rg = (1.0 / ((27.6 * alpha).exp() - 1.0)).clamp(1.0, 2.0);
    let rc = 0.9 * rg;
    let width = period.floor() - opts.k_bold as f64;
    let core_height = 2.0 * ((2.0 * rc + 1.0) / (2.0 * rc - 1.0)).ln() / (2.0 * PI * alpha);
    let mut chart = FatouChart {
        map,
        alpha,
        sigma,
        cov,
        c0,
        c1,
        period,
        period_sigma: 2.0 * PI * I * c1,
        rg,
        rc,
        coeffs: Vec::new(),
        width,
        lo: -(period - width) / 2.0,
        offset: Complex64::new(0.0, 0.0),
        core_height,
        split: Vec::new(),
        top_shift: Complex64::new(0.0, 0.0),
        seeds: Vec::new(),
        seed_rows: (0, 0),
        residual: f64::INFINITY,
        validation_count: 0,
        max_steps: (opts.transport_periods * period) as usize,
        opts,
    };
    chart.coeffs = chart.fit_core()?;
    let cp = chart.map.critical_point();
    chart.offset = chart.phi_dir(cp, true, true)?.0;
    chart.build_split()?;
    let top = chart.w_raw(cp).re + I * (4.0 / alpha);
    chart.top_shift = chart.linearizer(top)? - top;
    chart.build_seeds()?;
    let (res, count) = chart.validate()?;
    chart.residual = res;
    chart.validation_count = count;
    if res > chart.opts.abel_tol || count < chart.opts.validation_points {
        return Err(Error::ChartQuality { achieved: res, target: chart.opts.abel_tol });
    }
    Ok(chart)
}

impl FatouChart {
    pub fn map(&self) -> &Arc<dyn HoloMap> {
        &self.map
    }

    pub fn critical_point(&self) -> Complex64 {
        self.map.critical_point()
    }

    /// Inverse seed table: integer nodes of the strip with `L^{-1}` and `L'`.
    pub fn seeds(&self) -> &[SeedNode] {
        &self.seeds
    }

    pub fn critical_value(&self) -> Complex64 {
        self.map.critical_value()
    }

    fn fit_core(&self) -> Result<Vec<Complex64>> {
        let (rg, rc, s) = (self.rg, self.rc, self.sigma);
        let gate = |x: Complex64| self.map.eval(s * x) / s;
        let mut pts = Vec::new();
        for rad in linspace(0.02, rc, 40) {
            let n = 8.max((200.0 * rad / rc) as usize);
            for j in 0..n {
                let th = 2.0 * PI * j as f64 / n as f64 + 0.1 * rad;
                let x = 0.5 + Complex64::from_polar(rad, th);
                let hx = gate(x);
                let keep = (hx - 0.5).norm() < rg && x.norm() > 1e-3 && (x - 1.0).norm() > 1e-3;
                if keep && hx.is_finite() {
                    pts.push((x, hx));
                }
            }
        }
        let k = self.opts.degree;
        let t = |x: Complex64| (x - 0.5) / rg;
        let a = DMatrix::from_fn(pts.len(), k, |r, c| {
            let (x, hx) = pts[r];
            t(hx).powu(c as u32 + 1) - t(x).powu(c as u32 + 1)
        });
        let b = DVector::from_iterator(
            pts.len(),
            pts.iter().map(|&(x, hx)| 1.0 - self.c0 * ln(hx / x) - self.c1 * ln((1.0 - hx) / (1.0 - x))),
        );
        let svd = a.svd(true, true);
        let sol = svd.solve(&b, 1e-14).map_err(|e| Error::Degenerate(e.to_string()))?;
        Ok(sol.iter().copied().collect())
    }

    fn g_and_deriv(&self, x: Complex64) -> (Complex64, Complex64) {
        let t = (x - 0.5) / self.rg;
        let mut g = Complex64::new(0.0, 0.0);
        let mut dg = Complex64::new(0.0, 0.0);
        // Horner on sum_{k>=1} c_k t^k = t * (c_1 + t (c_2 + ...)).
        for &c in self.coeffs.iter().rev() {
            dg = dg * t + g;
            g = g * t + c;
        }
        // g now holds c_1 + c_2 t + ...; multiply by t.
        let val = g * t;
        let der = (g + dg * t) / self.rg;
        (val, der)
    }

    /// Core chart and its `xi`-derivative; `raw` skips the window shift.
    fn core(&self, x: Complex64, raw: bool) -> (Complex64, Complex64) {
        let (g, dg) = self.g_and_deriv(x);
        let v = self.c0 * ln(x) + self.c1 * ln(1.0 - x) + g - self.offset;
        let dv = self.c0 / x - self.c1 / (1.0 - x) + dg;
        if raw {
            return (v, dv);
        }
        let per = if x.norm() < (1.0 - x).norm() { Complex64::new(self.period, 0.0) } else { -self.period_sigma };
        let m = ((v.re - self.lo) / per.re).floor();
        (v - m * per, dv)
    }

    fn in_core(&self, z: Complex64) -> bool {
        (z / self.sigma - 0.5).norm() < self.rc
    }

    /// Transport into the core along one direction; returns `(Phi, Phi')`.
    fn phi_dir(&self, z: Complex64, forward: bool, raw: bool) -> Result<(Complex64, Complex64)> {
        let mut z = z;
        let mut dz = Complex64::new(1.0, 0.0);
        let mut n = 0usize;
        while !self.in_core(z) {
            if forward {
                dz *= self.map.deriv(z);
                z = self.map.eval_checked(z)?;
            } else {
                z = self.map.preimage_fixing_zero(z)?;
                dz /= self.map.deriv(z);
            }
            n += 1;
            if n > self.max_steps || !z.is_finite() || z.norm() > crate::maps::ESCAPE_RADIUS {
                return Err(Error::Transport { z });
            }
        }
        let (v, dv) = self.core(z / self.sigma, raw);
        let shift = if forward { -(n as f64) } else { n as f64 };
        Ok((v + shift, dv * dz / self.sigma))
    }

    pub fn w_raw(&self, z: Complex64) -> Complex64 {
        self.c0 * ln(z / (z - self.sigma))
    }

    fn split_at(&self, y: f64) -> f64 {
        let t = &self.split;
        if y <= t[0].0 {
            return t[0].1;
        }
        if y >= t[t.len() - 1].0 {
            return t[t.len() - 1].1;
        }
        let i = t.partition_point(|p| p.0 < y);
        let (y0, x0) = t[i - 1];
        let (y1, x1) = t[i];
        x0 + (x1 - x0) * (y - y0) / (y1 - y0)
    }

    fn is_forward(&self, z: Complex64) -> bool {
        let w = self.w_raw(z);
        let r = (w.re - self.split_at(w.im)).rem_euclid(self.period);
        r < 0.5 * self.period
    }

    /// `Phi(z)` and `Phi'(z)`.
    pub fn phi_d(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        if !z.is_finite() || z.norm() == 0.0 || (z - self.sigma).norm() == 0.0 {
            return Err(Error::Domain(format!("Fatou chart at {z}")));
        }
        if self.in_core(z) {
            let (v, dv) = self.core(z / self.sigma, false);
            return Ok((v, dv / self.sigma));
        }
        self.phi_dir(z, self.is_forward(z), false)
    }

    pub fn phi(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.phi_d(z)?.0)
    }

    /// `L = Phi o tau` and `L'`.
    pub fn linearizer_d(&self, w: Complex64) -> Result<(Complex64, Complex64)> {
        let z = self.cov.tau(w)?;
        let (v, dv) = self.phi_d(z)?;
        Ok((v, dv * self.cov.tau_deriv_at(z)))
    }

    pub fn linearizer(&self, w: Complex64) -> Result<Complex64> {
        Ok(self.linearizer_d(w)?.0)
    }

    fn solve_edge(&self, target: Complex64, mut w: Complex64, forward: bool) -> Result<Complex64> {
        for _ in 0..60 {
            let z = self.cov.tau(w)?;
            let (v, dv) = self.phi_dir(z, forward, false)?;
            let step = (v - target) / (dv * self.cov.tau_deriv_at(z));
            w -= step;
            if step.norm() < 1e-12 {
                return Ok(w);
            }
        }
        Ok(w)
    }

    fn build_split(&mut self) -> Result<()> {
        let w0 = self.w_raw(self.map.critical_point());
        let mut mids = Vec::new();
        for sgn in [1.0, -1.0] {
            let mut wl = w0 + 0.5 * I * sgn + 0.1;
            let mut wr = w0 + self.width - self.period + 0.5 * I * sgn;
            for eta in linspace(0.5, 1.5 * self.core_height, 16) {
                let eta = sgn * eta;
                wl = self.solve_edge(I * eta, wl, true)?;
                wr = self.solve_edge(self.width + I * eta, wr, false)?;
                let m = 0.5 * (wl + wr);
                mids.push((m.im, m.re));
            }
        }
        mids.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.split = mids;
        Ok(())
    }

    /// Newton in `w` on `L(w) = zeta`.
    fn newton_inverse(&self, zeta: Complex64, mut w: Complex64, cap: usize) -> Result<(Complex64, f64)> {
        let mut best = (w, f64::INFINITY);
        for _ in 0..cap {
            let (v, dv) = match self.linearizer_d(w) {
                Ok(x) => x,
                Err(_) => break,
            };
            let r = (v - zeta).norm();
            if r < best.1 {
                best = (w, r);
            }
            if r < 1e-3 * self.opts.inv_tol {
                return Ok(best);
            }
            let mut step = (v - zeta) / dv;
            // Damp steps that would jump across the gate.
            let lim = 0.25 * self.period;
            if step.norm() > lim {
                step *= lim / step.norm();
            }
            w -= step;
        }
        if best.1 < self.opts.inv_tol {
            Ok(best)
        } else {
            Err(Error::Inversion { best: self.cov.tau(best.0).unwrap_or(best.0), residual: best.1 })
        }
    }

    fn build_seeds(&mut self) -> Result<()> {
        let top = (self.core_height.ceil() as i64).max(4);
        let bottom = -4i64;
        let cols: Vec<i64> = (0..=self.width as i64).collect();
        let columns: Vec<Vec<SeedNode>> = cols
            .par_iter()
            .map(|&x| {
                let mut out = Vec::new();
                let mut zeta = Complex64::new(x as f64, top as f64 + 4.0);
                let mut w = zeta - self.top_shift;
                let mut dl = Complex64::new(1.0, 0.0);
                for y in (bottom..=top + 4).rev() {
                    let target = Complex64::new(x as f64, y as f64);
                    let guess = w + (target - zeta) / dl;
                    if let Ok((wn, _)) = self.newton_inverse(target, guess, self.opts.newton_cap) {
                        if let Ok((_, d)) = self.linearizer_d(wn) {
                            w = wn;
                            dl = d;
                            zeta = target;
                            if y <= top {
                                out.push(SeedNode { zeta, w, dl });
                            }
                        }
                    }
                }
                out
            })
            .collect();
        self.seeds = columns.into_iter().flatten().collect();
        self.seed_rows = (bottom, top);
        Ok(())
    }

    fn seed_for(&self, zeta: Complex64) -> Complex64 {
        if zeta.im > self.seed_rows.1 as f64 + 0.5 || self.seeds.is_empty() {
            return zeta - self.top_shift;
        }
        let node = self
            .seeds
            .iter()
            .min_by(|a, b| (a.zeta - zeta).norm_sqr().total_cmp(&(b.zeta - zeta).norm_sqr()))
            .expect("nonempty seeds");
        node.w + (zeta - node.zeta) / node.dl
    }

    /// `w` with `L(w) = zeta`.
    pub fn linearizer_inverse(&self, zeta: Complex64) -> Result<Complex64> {
        let seed = self.seed_for(zeta);
        match self.newton_inverse(zeta, seed, self.opts.newton_cap) {
            Ok((w, _)) => Ok(w),
            Err(e) => {
                // Fall back to a vertical continuation from the top.
                let mut w = zeta + 6.0 * I - self.top_shift;
                for k in (0..=6).rev() {
                    let target = zeta + k as f64 * I;
                    match self.newton_inverse(target, w, self.opts.newton_cap) {
                        Ok((wn, _)) => w = wn,
                        Err(_) => return Err(e),
                    }
                }
                Ok(w)
            }
        }
    }

    /// `Phi^{-1}(zeta)`.
    pub fn phi_inverse(&self, zeta: Complex64) -> Result<Complex64> {
        self.cov.tau(self.linearizer_inverse(zeta)?)
    }

    /// `(Phi^{-1})'(zeta)`.
    pub fn phi_inverse_d(&self, zeta: Complex64) -> Result<(Complex64, Complex64)> {
        let w = self.linearizer_inverse(zeta)?;
        let z = self.cov.tau(w)?;
        let (_, dl) = self.linearizer_d(w)?;
        Ok((z, self.cov.tau_deriv_at(z) / dl))
    }

    pub fn abel_residual(&self, z: Complex64) -> Result<f64> {
        let p = self.phi(z)?;
        let q = self.phi(self.map.eval_checked(z)?)?;
        Ok((q - p - 1.0).norm())
    }

    /// Bounding box of the seed table in the `z` plane, padded by 10%, clipped
    /// to the square of half-width `2 |cp|`.
    fn sample_box(&self) -> ((f64, f64), (f64, f64)) {
        let rho = 2.0 * self.map.critical_point().norm();
        let pts: Vec<Complex64> = self.seeds.iter().filter_map(|s| self.cov.tau(s.w).ok()).collect();
        if pts.is_empty() {
            return ((-rho, rho), (-rho, rho));
        }
        let fold = |f: fn(&Complex64) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.1 * (hi - lo);
            ((lo - pad).max(-rho), (hi + pad).min(rho))
        };
        (fold(|z| z.re), fold(|z| z.im))
    }

    /// Random points with `Re Phi` in `(1/2, W - 3/2)` and their residuals.
    pub fn validation_sample(&self, count: usize, seed: u64) -> Vec<(Complex64, f64)> {
        let (re, im) = self.sample_box();
        let chunk = 64usize;
        let mut out = Vec::new();
        let mut round = 0u64;
        while out.len() < count && round < 4000 {
            let batch: Vec<Option<(Complex64, f64)>> = (0..chunk)
                .into_par_iter()
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round * chunk as u64 + j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let z = Complex64::new(rng.gen_range(re.0..re.1), rng.gen_range(im.0..im.1));
                    let p = self.phi(z).ok()?;
                    if !(p.re > 0.5 && p.re < self.width - 1.5) {
                        return None;
                    }
                    let r = self.abel_residual(z).ok()?;
                    Some((z, r))
                })
                .collect();
            out.extend(batch.into_iter().flatten());
            round += 1;
        }
        out.truncate(count);
        out
    }

    fn validate(&self) -> Result<(f64, usize)> {
        let sample = self.validation_sample(self.opts.validation_points, self.opts.seed);
        let worst = sample.iter().map(|p| p.1).fold(0.0, f64::max);
        Ok((worst, sample.len()))
    }

    /// Sector membership computed through the chart.
    pub fn in_sector(&self, kind: SectorKind, z: Complex64) -> bool {
        match self.phi(z) {
            Ok(p) => kind.contains(p),
            Err(_) => false,
        }
    }

    pub fn export(&self) -> ChartExport {
        ChartExport {
            version: 1,
            alpha: self.alpha,
            sigma: self.sigma,
            offset: self.offset,
            degree: self.coeffs.len(),
            core_radius: self.rc,
            fit_radius: self.rg,
            width: self.width,
            coeffs: self.coeffs.clone(),
            split: self.split.clone(),
            residual: self.residual,
            seeds: self.seeds.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SectorKind {
    /// `1/2 <= Re <= 3/2`, `-2 < Im <= 2`.
    C,
    /// `1/2 <= Re <= 3/2`, `Im >= 2`.
    CSharp,
}

impl SectorKind {
    pub fn contains(&self, zeta: Complex64) -> bool {
        let strip = (0.5..=1.5).contains(&zeta.re);
        match self {
            SectorKind::C => strip && zeta.im > -2.0 && zeta.im <= 2.0,
            SectorKind::CSharp => strip && zeta.im >= 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::QuadraticMap;

    fn chart(alpha: f64) -> FatouChart {
        build_chart(Arc::new(QuadraticMap::new(alpha)), ChartOptions::default()).unwrap()
    }

    #[test]
    fn normalisation_and_abel_step() {
        let c = chart(0.02);
        let cp = c.critical_point();
        assert!(c.phi(cp).unwrap().norm() < 1e-9);
        assert!((c.phi(c.critical_value()).unwrap() - 1.0).norm() < 1e-6);
        assert!(c.residual < 1e-6, "residual {}", c.residual);
    }

    #[test]
    fn inverse_round_trip() {
        let c = chart(0.02);
        // Points with Re Phi < 1 include the lobe h^{-1}(h(P)) opposite the
        // critical point, where Phi is two-to-one.
        for (z, _) in c.validation_sample(80, 3).into_iter().filter(|(z, _)| c.phi(*z).unwrap().re >= 1.0) {
            let back = c.phi_inverse(c.phi(z).unwrap()).unwrap();
            assert!((back - z).norm() < 1e-7, "{z} -> {back}");
        }
        assert!((c.phi_inverse(Complex64::new(0.0, 0.0)).unwrap() - c.critical_point()).norm() < 1e-6);
        assert!((c.phi_inverse(Complex64::new(1.0, 0.0)).unwrap() - c.critical_value()).norm() < 1e-7);
    }

    #[test]
    fn imaginary_part_grows_toward_zero() {
        let c = chart(0.02);
        // Along the ray through the core centre toward 0.
        let mut last = f64::NEG_INFINITY;
        for k in 1..=20 {
            let z = c.sigma * 0.5 * (0.6f64).powi(k);
            let v = c.phi(z).unwrap().im;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let c = chart(0.02);
        for (z, _) in c.validation_sample(30, 11) {
            let h = 1e-7;
            let fd = (c.phi(z + h).unwrap() - c.phi(z - h).unwrap()) / (2.0 * h);
            let (_, d) = c.phi_d(z).unwrap();
            assert!((fd - d).norm() < 1e-5 * d.norm().max(1.0));
        }
    }

    #[test]
    fn sector_strips() {
        assert!(SectorKind::C.contains(Complex64::new(1.0, 0.0)));
        assert!(!SectorKind::C.contains(Complex64::new(1.0, 2.5)));
        assert!(SectorKind::CSharp.contains(Complex64::new(1.0, 2.5)));
        assert!(!SectorKind::CSharp.contains(Complex64::new(0.2, 2.5)));
    }
}
