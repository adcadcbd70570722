//! The covering `tau(w) = sigma / (1 - e^{-2 pi i alpha w})`, the projection
//! `Exp`, and the lift `F` of `h` through `tau`.
//!
//! `F(w) - w - 1` is computed without forming `F(w)` first: with
//! `q = 1 - sigma u/(1 + z u)` and `lambda = e^{2 pi i alpha}` we have
//! `q / lambda - 1 = sigma (u(0) - u + u(0) z u) / ((1 + z u) lambda)`,
//! which stays accurate as `z = tau(w)` tends to 0.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{HoloMap, Jet5};
use crate::stats::{fit_line, LineFit};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `log(1 + x)` keeping relative accuracy for small `x`.
pub fn ln_1p(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        let mut term = x;
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 1..12 {
            sum += term / k as f64;
            term *= -x;
        }
        sum
    } else {
        (1.0 + x).ln()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Covering {
    pub sigma: Complex64,
    pub alpha: f64,
}

impl Covering {
    pub fn new<M: HoloMap + ?Sized>(map: &M) -> Result<Self> {
        Ok(Self { sigma: map.sigma()?, alpha: map.alpha() })
    }

    pub fn period(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn tau(&self, w: Complex64) -> Result<Complex64> {
        let d = 1.0 - (-2.0 * PI * I * self.alpha * w).exp();
        if d.norm() < 1e-300 || !d.is_finite() {
            return Err(Error::Pole { w });
        }
        Ok(self.sigma / d)
    }

    pub fn tau_jet(&self, w: &Jet5) -> Jet5 {
        let one = Jet5::constant(Complex64::new(1.0, 0.0));
        let e = w.scale(-2.0 * PI * I * self.alpha).exp();
        (one - e).recip().scale(self.sigma)
    }

    /// `d tau / dw = -2 pi i alpha z (z - sigma) / sigma`.
    pub fn tau_deriv_at(&self, z: Complex64) -> Complex64 {
        -2.0 * PI * I * self.alpha * z * (z - self.sigma) / self.sigma
    }

    /// The unnormalised inverse `(1/(2 pi i alpha)) Log(z/(z - sigma))`.
    pub fn tau_inverse_principal(&self, z: Complex64) -> Complex64 {
        (z / (z - self.sigma)).ln() / (2.0 * PI * I * self.alpha)
    }

    pub fn tau_inverse(&self, z: Complex64, window: (f64, f64)) -> Result<Complex64> {
        if z.norm() == 0.0 || (z - self.sigma).norm() == 0.0 || !z.is_finite() {
            return Err(Error::Domain(format!("tau_inverse at excluded point {z}")));
        }
        let w0 = self.tau_inverse_principal(z);
        let p = self.period();
        let k = ((window.0 - w0.re) / p).ceil();
        let w = w0 + k * p;
        if w.re >= window.0 && w.re <= window.1 {
            Ok(w)
        } else {
            Err(Error::BranchWindow { z, lo: window.0, hi: window.1 })
        }
    }
}

/// `Theta(R)` or `Theta(r, alpha)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum ThetaRegion {
    Plain { radius: f64 },
    Scaled { r: f64 },
}

impl ThetaRegion {
    pub fn contains(&self, alpha: f64, w: Complex64) -> bool {
        let p = 1.0 / alpha;
        let n = (w.re / p).round();
        let dist = (w - n * p).norm();
        match *self {
            ThetaRegion::Plain { radius } => dist >= radius,
            ThetaRegion::Scaled { r } => w.im >= -2.0 / alpha && dist >= r / alpha,
        }
    }
}

pub fn in_theta(alpha: f64, w: Complex64, regions: &[ThetaRegion]) -> bool {
    regions.iter().all(|t| t.contains(alpha, w))
}

pub struct LiftedMap<'a, M: HoloMap + ?Sized> {
    pub map: &'a M,
    pub cov: Covering,
    u0: Complex64,
}

impl<'a, M: HoloMap + ?Sized> LiftedMap<'a, M> {
    pub fn new(map: &'a M) -> Result<Self> {
        let cov = Covering::new(map)?;
        let u0 = map.u(Complex64::new(0.0, 0.0), cov.sigma);
        Ok(Self { map, cov, u0 })
    }

    pub fn alpha(&self) -> f64 {
        self.cov.alpha
    }

    /// `F(w) - w - 1`.
    pub fn excess(&self, w: Complex64) -> Result<Complex64> {
        let z = self.cov.tau(w)?;
        if !self.map.in_domain(z) {
            return Err(Error::OutOfDomain { z });
        }
        let s = self.cov.sigma;
        let u = self.map.u(z, s);
        let denom = 1.0 + z * u;
        let arg = 1.0 - s * u / denom;
        if arg.im == 0.0 && arg.re <= 0.0 {
            return Err(Error::BranchCut { arg });
        }
        let lam = self.map.multiplier();
        let x = s * (self.u0 - u + self.u0 * z * u) / (denom * lam);
        // Log(arg) = Log(lambda) + log(1 + x) + 2 pi i m, with m matching the principal branch.
        let lam_log = lam.ln();
        let m = ((arg.ln() - lam_log - ln_1p(x)).im / (2.0 * PI)).round();
        let two_pi_i_alpha = 2.0 * PI * I * self.cov.alpha;
        Ok((lam_log - two_pi_i_alpha + ln_1p(x) + 2.0 * PI * I * m) / two_pi_i_alpha)
    }

    pub fn value(&self, w: Complex64) -> Result<Complex64> {
        Ok(w + 1.0 + self.excess(w)?)
    }

    /// Taylor jet of `F` at `w` (derivatives through order 4).
    pub fn jet(&self, w: Complex64) -> Result<Jet5> {
        let wj = Jet5::variable(w);
        let z = self.cov.tau_jet(&wj);
        if !z.value().is_finite() {
            return Err(Error::Pole { w });
        }
        if !self.map.in_domain(z.value()) {
            return Err(Error::OutOfDomain { z: z.value() });
        }
        let s = self.cov.sigma;
        let u = self.map.u_jet(&z, s);
        let one = Jet5::constant(Complex64::new(1.0, 0.0));
        let arg = one - (u / (one + z * u)).scale(s);
        if arg.value().im == 0.0 && arg.value().re <= 0.0 {
            return Err(Error::BranchCut { arg: arg.value() });
        }
        let mut f = wj + arg.ln().scale(1.0 / (2.0 * PI * I * self.cov.alpha));
        // Replace the value by the cancellation-free one.
        f.c[0] = self.value(w)?;
        Ok(f)
    }

    pub fn deriv(&self, w: Complex64) -> Result<Complex64> {
        Ok(self.jet(w)?.deriv(1))
    }

    pub fn iterate(&self, w: Complex64, n: usize) -> Result<Complex64> {
        let mut v = w;
        for _ in 0..n {
            v = self.value(v)?;
        }
        Ok(v)
    }

    /// `|h(tau(w)) - tau(F(w))|`.
    pub fn semiconjugacy_residual(&self, w: Complex64) -> Result<f64> {
        let z = self.cov.tau(w)?;
        let lhs = self.map.eval_checked(z)?;
        let rhs = self.cov.tau(self.value(w)?)?;
        Ok((lhs - rhs).norm())
    }

    /// The lift of the critical point of `h` nearest 0.
    pub fn critical_lift(&self) -> Result<Complex64> {
        let p = self.cov.period();
        self.cov.tau_inverse(self.map.critical_point(), (-0.5 * p, 0.5 * p))
    }
}

pub fn exp_projection(zeta: Complex64) -> Complex64 {
    (2.0 * PI * I * zeta).exp().conj() * (-4.0 / 27.0)
}

/// The `zeta` with `Exp(zeta) = z` and real part in `window`.
pub fn log_branch(z: Complex64, window: (f64, f64)) -> Result<Complex64> {
    if z.norm() == 0.0 || !z.is_finite() {
        return Err(Error::Domain(format!("log_branch at {z}")));
    }
    let base = (z * (-27.0 / 4.0)).conj().ln() / (2.0 * PI * I);
    let k = (window.0 - base.re).ceil();
    let zeta = base + k;
    if zeta.re <= window.1 {
        Ok(zeta)
    } else {
        Err(Error::BranchWindow { z, lo: window.0, hi: window.1 })
    }
}

/// Points in one period strip with `|Im(alpha w)| < height`, outside the
/// pole disks of radius `radius`.
pub fn theta_probe(alpha: f64, radius: f64, height: f64, n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1.0 / alpha;
    let region = ThetaRegion::Plain { radius };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = Complex64::new(rng.gen_range(0.0..p), rng.gen_range(-height..height) * p);
        if region.contains(alpha, w) {
            out.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CylReport {
    pub samples: usize,
    pub skipped: usize,
    pub max_excess: f64,
    pub max_deriv_excess: f64,
    pub slope: Option<LineFit>,
    pub slope_target: f64,
    pub slope_rel_err: f64,
    pub c2: f64,
    pub c3: Option<f64>,
    pub inconclusive: bool,
}

/// Bounds and decay fits for `F` on the given samples.
pub fn cylcond_check<M: HoloMap + ?Sized>(f: &LiftedMap<'_, M>, samples: &[Complex64], r: f64, orbit_len: usize) -> CylReport {
    let alpha = f.alpha();
    let evals: Vec<Option<(Complex64, f64, f64)>> = samples
        .par_iter()
        .map(|&w| {
            let e = f.excess(w).ok()?;
            let d = f.deriv(w).ok()?;
            Some((w, e.norm(), (d - 1.0).norm()))
        })
        .collect();
    let ok: Vec<(Complex64, f64, f64)> = evals.iter().flatten().copied().collect();
    let max_excess = ok.iter().map(|v| v.1).fold(0.0, f64::max);
    let max_deriv_excess = ok.iter().map(|v| v.2).fold(0.0, f64::max);
    let floor = 1e-14;
    let fit_pts: Vec<(f64, f64)> = ok.iter().filter(|v| v.1 > floor).map(|v| (v.0.im, v.1.ln())).collect();
    let inconclusive = fit_pts.len() < 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = fit_pts.iter().copied().unzip();
    let slope = fit_line(&xs, &ys);
    let target = -2.0 * PI * alpha;
    let slope_rel_err = slope.map(|s| ((s.slope - target) / target).abs()).unwrap_or(f64::INFINITY);
    let c2 = ok.iter().map(|v| v.1 * (r / alpha) * (2.0 * PI * alpha * v.0.im).exp()).fold(0.0, f64::max);
    let c3 = critical_drift(f, orbit_len).ok();
    CylReport {
        samples: samples.len(),
        skipped: samples.len() - ok.len(),
        max_excess,
        max_deriv_excess,
        slope,
        slope_target: target,
        slope_rel_err,
        c2,
        c3,
        inconclusive,
    }
}

/// `max_j |F^j(c) - c - j| / (1 + log j)` along the critical lift `c`.
pub fn critical_drift<M: HoloMap + ?Sized>(f: &LiftedMap<'_, M>, n: usize) -> Result<f64> {
    let c = f.critical_lift()?;
    let mut w = c;
    let mut best: f64 = 0.0;
    for j in 1..=n {
        w = f.value(w)?;
        let drift = (w - c - j as f64).norm();
        best = best.max(drift / (1.0 + (j as f64).ln()));
    }
    Ok(best)
}

/// Smallest pole radius (from `start`, step 0.5) for which both
/// `|F(w) - w - 1| < 1/4` and `|F'(w) - 1| < 1/4` hold on the probe.
pub fn refine_c1<M: HoloMap + ?Sized>(f: &LiftedMap<'_, M>, start: f64, n_probe: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let mut c1 = start;
    while c1 < 50.0 {
        let probe = theta_probe(f.alpha(), c1, 5.0, n_probe, seed);
        let worst = probe
            .par_iter()
            .map(|&w| -> (f64, f64) {
                match (f.excess(w), f.deriv(w)) {
                    (Ok(e), Ok(d)) => (e.norm(), (d - 1.0).norm()),
                    _ => (f64::INFINITY, f64::INFINITY),
                }
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        if worst.0 < 0.25 && worst.1 < 0.25 {
            return Ok((c1, worst.0, worst.1));
        }
        c1 += 0.5;
    }
    Err(Error::Degenerate("no pole radius below 50 satisfies the quarter bounds".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{CanonicalISMap, QuadraticMap};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tau_limits_and_period() {
        let q = QuadraticMap::new(0.02);
        let cov = Covering::new(&q).unwrap();
        let p = cov.period();
        let up = cov.tau(c(3.0, 40.0 * p)).unwrap();
        assert!(up.norm() < cov.sigma.norm() * 1e-100);
        let down = cov.tau(c(3.0, -40.0 * p)).unwrap();
        assert!((down - cov.sigma).norm() < 1e-15);
        let w = c(7.3, -2.1);
        assert!((cov.tau(w + p).unwrap() - cov.tau(w).unwrap()).norm() < 1e-13);
        assert!(cov.tau(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn tau_inverse_examples() {
        let q = QuadraticMap::new(0.02);
        let cov = Covering::new(&q).unwrap();
        let p = cov.period();
        let w0 = c(12.5, 3.0);
        let back = cov.tau_inverse(cov.tau(w0).unwrap(), (0.0, p)).unwrap();
        assert!((back - w0).norm() < 1e-11);
        let half = cov.tau_inverse(cov.sigma / 2.0, (0.0, p)).unwrap();
        assert!((half - c(0.5 * p, 0.0)).norm() < 1e-11);
        assert!(cov.tau_inverse(c(0.0, 0.0), (0.0, p)).is_err());
    }

    #[test]
    fn quadratic_lift_formula() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        let s = f.cov.sigma;
        for k in 0..20 {
            let w = c(3.0 + 2.1 * k as f64, -30.0 + 5.0 * k as f64);
            let z = f.cov.tau(w).unwrap();
            let direct = w + (1.0 - s / (1.0 + z)).ln() / (2.0 * PI * I * 0.02);
            assert!((f.value(w).unwrap() - direct).norm() < 1e-11);
        }
    }

    #[test]
    fn excess_vanishes_at_top() {
        for &a in &[0.02, 0.01] {
            let q = QuadraticMap::new(a);
            let f = LiftedMap::new(&q).unwrap();
            assert!(f.excess(c(5.0, 30.0 / a)).unwrap().norm() < 1e-12);
            let h = CanonicalISMap::new(a);
            let g = LiftedMap::new(&h).unwrap();
            assert!(g.excess(c(5.0, 30.0 / a)).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn lift_is_equivariant() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        for w in theta_probe(0.02, 6.0, 3.0, 200, 4) {
            let a = f.value(w + 50.0).unwrap();
            let b = f.value(w).unwrap() + 50.0;
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn jet_derivative_matches_differences() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        for w in theta_probe(0.02, 6.0, 2.0, 50, 9) {
            let h = 1e-6;
            let fd = (f.value(w + h).unwrap() - f.value(w - h).unwrap()) / (2.0 * h);
            assert!((fd - f.deriv(w).unwrap()).norm() < 1e-8);
        }
    }

    #[test]
    fn exp_projection_examples() {
        let z = c(0.3, 0.7);
        assert!((exp_projection(z + 1.0) - exp_projection(z)).norm() < 1e-15);
        assert!((exp_projection(c(0.0, 0.0)) - c(-4.0 / 27.0, 0.0)).norm() < 1e-16);
        let d = 1.0 + (16.0f64 / 9.0).ln() / (2.0 * PI);
        let e = exp_projection(c(0.0, d)).norm();
        assert!((e - 4.0 / 27.0 * 9.0 / 16.0 * (-2.0 * PI).exp()).abs() < 1e-15);
        assert!(e <= 1.0 / 12.0);
    }

    #[test]
    fn log_branch_examples() {
        let z0 = c(0.37, 0.52);
        let back = log_branch(exp_projection(z0), (z0.re - 0.5, z0.re + 0.5)).unwrap();
        assert!((back - z0).norm() < 1e-14);
        assert!(log_branch(c(-4.0 / 27.0, 0.0), (0.0, 1.0)).unwrap().norm() < 1e-15);
        let t = 0.8;
        let z = Complex64::from_polar(4.0 / 27.0 * (-2.0 * PI * t).exp(), 1.3);
        assert!((log_branch(z, (0.0, 1.0)).unwrap().im - t).abs() < 1e-14);
        assert!(log_branch(c(0.0, 0.0), (0.0, 1.0)).is_err());
    }
}
