//! Dynamical extensions of the chart, `chi = Log o Phi^dagger`, the
//! linearizer `L = Phi o tau`, and the decay estimates for `L'` and `chi'`.
//!
//! `chi` is antiholomorphic (it ends in `Log`, the inverse of the
//! antiholomorphic `Exp`). Its derivative is reported as
//! `chi' := -d chi / d w-bar = -conj(Z'/Z) / (2 pi i)` with `Z = Phi^dagger`,
//! which equals `alpha` for the model `Z = K e^{2 pi i alpha w}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::FatouChart;
use crate::error::{Error, Result};
use crate::lift::{log_branch, LiftedMap};
use crate::maps::HoloMap;
use crate::stats::{fit_line, linspace, LineFit};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `Phi^l(z) = Phi(h^j(z)) - j` for the smallest `j <= j_max` landing in the strip.
pub fn phi_left_extension(chart: &FatouChart, z: Complex64, j_max: usize) -> Result<(Complex64, usize)> {
    let map = chart.map();
    let mut zj = z;
    for j in 0..=j_max {
        if let Ok(p) = chart.phi(zj) {
            if p.re > 0.0 && p.re < chart.width {
                return Ok((p - j as f64, j));
            }
        }
        zj = map.eval_checked(zj)?;
    }
    Err(Error::ExtensionDomain(z))
}

/// `Phi^dagger(zeta) = h^j(Phi^{-1}(zeta - j))` for the smallest admissible `j`.
pub fn phi_dagger(chart: &FatouChart, zeta: Complex64) -> Result<Complex64> {
    Ok(phi_dagger_d(chart, zeta)?.0)
}

/// `Phi^dagger` and its derivative.
pub fn phi_dagger_d(chart: &FatouChart, zeta: Complex64) -> Result<(Complex64, Complex64)> {
    if zeta.re <= 0.0 {
        return Err(Error::ExtensionDomain(zeta));
    }
    let limit = chart.width - 1.0;
    let j = if zeta.re < limit { 0 } else { (zeta.re - limit).floor() as usize + 1 };
    let (mut z, mut dz) = chart.phi_inverse_d(zeta - j as f64)?;
    let map = chart.map();
    for _ in 0..j {
        dz *= map.deriv(z);
        z = map.eval_checked(z)?;
    }
    Ok((z, dz))
}

pub fn chi_value(chart: &FatouChart, w: Complex64, re_window: (f64, f64)) -> Result<Complex64> {
    let z = phi_dagger(chart, w)?;
    log_branch(z, re_window)
}

/// `chi'` in the orientation-normalised convention of the module docs.
pub fn chi_prime(chart: &FatouChart, w: Complex64) -> Result<Complex64> {
    let (z, dz) = phi_dagger_d(chart, w)?;
    Ok(-(dz / z).conj() / (2.0 * PI * I))
}

/// `|L(F(w)) - L(w) - 1|`.
pub fn equivariance_residual<M: HoloMap + ?Sized>(chart: &FatouChart, f: &LiftedMap<'_, M>, w: Complex64) -> Result<f64> {
    let a = chart.linearizer(w)?;
    let b = chart.linearizer(f.value(w)?)?;
    Ok((b - a - 1.0).norm())
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub constant: f64,
    pub fit: Option<LineFit>,
    pub target_slope: f64,
    pub slope_rel_err: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MainEstimates {
    pub alpha: f64,
    pub r: f64,
    /// `|L' - 1| <= (M / r) e^{-2 pi alpha Im w}`.
    pub l_prime: DecayFit,
    /// `|chi' - alpha| <= C (alpha / r) e^{-2 pi alpha Im w}`.
    pub chi_prime: DecayFit,
    /// Bounds on `|(L^{-1})'|` over the sampled strip.
    pub inverse_derivative_range: (f64, f64),
}

fn decay(alpha: f64, pts: &[(f64, f64)], scale: f64) -> DecayFit {
    let target = -2.0 * PI * alpha;
    let constant = pts.iter().map(|&(y, v)| v * scale * (2.0 * PI * alpha * y).exp()).fold(0.0, f64::max);
    let usable: Vec<(f64, f64)> = pts.iter().filter(|p| p.1 > 1e-14).map(|&(y, v)| (y, v.ln())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.iter().copied().unzip();
    let fit = fit_line(&xs, &ys);
    let slope_rel_err = fit.map(|f| ((f.slope - target) / target).abs()).unwrap_or(f64::INFINITY);
    DecayFit { constant, fit, target_slope: target, slope_rel_err, samples: usable.len() }
}

/// Samples `Re w` in `[k' + 1, 1/alpha - k - 1]`, `Im w` in `[0.5/alpha, 3/alpha]`.
pub fn main_estimates(chart: &FatouChart, k_prime: u32, r: f64) -> Result<MainEstimates> {
    let alpha = chart.alpha;
    let re_lo = k_prime as f64 + 1.0;
    let re_hi = 1.0 / alpha - chart.opts.k_bold as f64 - 1.0;
    let grid: Vec<Complex64> = linspace(re_lo, re_hi, 6)
        .into_iter()
        .flat_map(|x| linspace(0.5 / alpha, 3.0 / alpha, 24).into_iter().map(move |y| Complex64::new(x, y)))
        .collect();
    let values: Vec<Result<(f64, f64, f64, f64)>> = grid
        .par_iter()
        .map(|&w| {
            let (_, dl) = chart.linearizer_d(w)?;
            let cp = chi_prime(chart, w)?;
            let (_, dinv) = chart.phi_inverse_d(w)?;
            let winv = chart.linearizer_inverse(w)?;
            let z = chart.cov.tau(winv)?;
            let dlinv = dinv / chart.cov.tau_deriv_at(z);
            Ok((w.im, (dl - 1.0).norm(), (cp - alpha).norm(), dlinv.norm()))
        })
        .collect();
    let mut ok = Vec::with_capacity(values.len());
    for v in values {
        ok.push(v?);
    }
    let l_pts: Vec<(f64, f64)> = ok.iter().map(|v| (v.0, v.1)).collect();
    let c_pts: Vec<(f64, f64)> = ok.iter().map(|v| (v.0, v.2)).collect();
    let lo = ok.iter().map(|v| v.3).fold(f64::INFINITY, f64::min);
    let hi = ok.iter().map(|v| v.3).fold(0.0, f64::max);
    Ok(MainEstimates {
        alpha,
        r,
        l_prime: decay(alpha, &l_pts, r),
        chi_prime: decay(alpha, &c_pts, r / alpha),
        inverse_derivative_range: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatou::{build_chart, ChartOptions};
    use crate::lift::theta_probe;
    use crate::maps::QuadraticMap;
    use std::sync::Arc;

    fn chart(alpha: f64) -> FatouChart {
        build_chart(Arc::new(QuadraticMap::new(alpha)), ChartOptions::default()).unwrap()
    }

    #[test]
    fn extensions_reduce_to_chart() {
        let c = chart(0.02);
        let z = c.critical_value();
        let (v, j) = phi_left_extension(&c, z, 5).unwrap();
        assert_eq!(j, 0);
        assert!((v - 1.0).norm() < 1e-9);
        let zeta = Complex64::new(7.3, 1.2);
        assert!((phi_dagger(&c, zeta).unwrap() - c.phi_inverse(zeta).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn left_extension_one_step() {
        let c = chart(0.02);
        // A point just left of the strip: its image lies inside.
        let z = c.phi_inverse(Complex64::new(0.7, 3.0)).unwrap();
        let pre = c.map().preimage_fixing_zero(z).unwrap();
        let (v, j) = phi_left_extension(&c, pre, 5).unwrap();
        let direct = c.phi(c.map().eval(pre)).unwrap() - 1.0;
        assert!(j <= 1);
        assert!((v - direct).norm() < 1e-9);
    }

    #[test]
    fn dagger_equivariance() {
        let c = chart(0.02);
        for k in 0..10 {
            let zeta = Complex64::new(40.0 + 0.9 * k as f64, -1.0 + 0.7 * k as f64);
            let a = phi_dagger(&c, zeta + 1.0).unwrap();
            let b = c.map().eval(phi_dagger(&c, zeta).unwrap());
            assert!((a - b).norm() < 1e-7);
        }
    }

    #[test]
    fn chi_prime_matches_differences() {
        let c = chart(0.02);
        let w = Complex64::new(20.3, 2.0 / 0.02);
        let win = (-10.0, 10.0);
        let h = 1e-4;
        let dx = (chi_value(&c, w + h, win).unwrap() - chi_value(&c, w - h, win).unwrap()) / (2.0 * h);
        let dy = (chi_value(&c, w + I * h, win).unwrap() - chi_value(&c, w - I * h, win).unwrap()) / (2.0 * h);
        let dbar = 0.5 * (dx + I * dy);
        let dw = 0.5 * (dx - I * dy);
        assert!(dw.norm() < 1e-8);
        assert!((-dbar - chi_prime(&c, w).unwrap()).norm() < 1e-8);
        assert!((chi_prime(&c, w).unwrap() - 0.02).norm() < 1e-3);
    }

    #[test]
    fn linearizer_equivariance() {
        let q = QuadraticMap::new(0.02);
        let c = chart(0.02);
        let f = LiftedMap::new(&q).unwrap();
        let mut n = 0;
        for w in theta_probe(0.02, 6.0, 2.0, 400, 5) {
            let Ok(l) = c.linearizer(w) else { continue };
            if !(l.re > 0.5 && l.re < c.width - 1.5) {
                continue;
            }
            assert!(equivariance_residual(&c, &f, w).unwrap() < 1e-6);
            n += 1;
        }
        assert!(n > 50);
    }
}
