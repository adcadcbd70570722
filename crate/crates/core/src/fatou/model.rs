//! The explicit model `H(s, t)` interpolating between the vertical line
//! `A + it` and its image under `F`.
//!
//! `H(s, t) = A + it + sum_j c_j(t) B_j(s)` with `c_j = a_j + i b_j` and
//! `B = (s, (1 - cos pi s)/pi, sin(pi s)/pi, (1 - cos 2 pi s)/(2 pi), sin(2 pi s)/(2 pi))`,
//! the closed-form antiderivatives of the trigonometric basis of `X + iY`.
//!
//! Two coefficient rules are provided. [`CoefficientRule::Literal`] uses
//! `c_1 = -F''/2`, `c_3 = F''/4`, `c_0 = d + F''/pi` and the split
//! `a_4 = 1 - a_0 - a_2`, `b_4 = -a_0 - a_2`. Matching `H(s + 1, t) = F(H(s, t))`
//! to second order at `s = 1` instead forces
//!
//! ```text
//! c_0 = d + F''/pi^2,  c_1 = -F''/(2 pi),  c_2 = (1 - F')/2,
//! c_3 = F''/(4 pi),    c_4 = 1 - c_0 - c_2,
//! ```
//!
//! which is [`CoefficientRule::SeamMatched`]; `d = F(A + it) - A - it`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lift::{LiftedMap, ThetaRegion};
use crate::maps::HoloMap;
use crate::stats::{fit_line, linspace, LineFit};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoefficientRule {
    Literal,
    SeamMatched,
}

/// Coefficients `c_0..c_4` and their first two `t`-derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    pub c: [Complex64; 5],
    pub dt: [Complex64; 5],
    pub dtt: [Complex64; 5],
}

/// Partial derivatives of `H` at one point.
#[derive(Debug, Clone, Copy)]
pub struct Partials {
    pub value: Complex64,
    pub s: Complex64,
    pub t: Complex64,
    pub ss: Complex64,
    pub st: Complex64,
    pub tt: Complex64,
}

pub struct ModelH<'a, M: HoloMap + ?Sized> {
    pub f: &'a LiftedMap<'a, M>,
    pub anchor: Complex64,
    pub rule: CoefficientRule,
}

fn basis(s: f64) -> ([f64; 5], [f64; 5], [f64; 5]) {
    let (s1, c1) = (PI * s).sin_cos();
    let (s2, c2) = (2.0 * PI * s).sin_cos();
    (
        [s, (1.0 - c1) / PI, s1 / PI, (1.0 - c2) / (2.0 * PI), s2 / (2.0 * PI)],
        [1.0, s1, c1, s2, c2],
        [0.0, PI * c1, -PI * s1, 2.0 * PI * c2, -2.0 * PI * s2],
    )
}

fn combine(c: &[Complex64; 5], b: &[f64; 5]) -> Complex64 {
    c.iter().zip(b).map(|(c, b)| c * b).sum()
}

/// The default anchor: mid-strip, at height `0.5 / alpha`.
pub fn default_anchor(alpha: f64) -> Complex64 {
    Complex64::new(0.5 / alpha - 0.5, 0.5 / alpha)
}

pub fn model_build<'a, M: HoloMap + ?Sized>(
    f: &'a LiftedMap<'a, M>,
    anchor: Complex64,
    rule: CoefficientRule,
    c1: f64,
    r: f64,
) -> Result<ModelH<'a, M>> {
    let alpha = f.alpha();
    let regions = [ThetaRegion::Plain { radius: c1 + 1.0 }, ThetaRegion::Scaled { r }];
    // Probe the boundary curves of the strip: A + it, F(A + it), and the bottom segment.
    for t in linspace(0.0, 4.0 / alpha, 64) {
        let left = anchor + I * t;
        let right = f.value(left)?;
        for w in [left, right] {
            if !crate::lift::in_theta(alpha, w, &regions) {
                return Err(Error::Anchor(anchor));
            }
        }
    }
    let fa = f.value(anchor)?;
    for s in linspace(0.0, 1.0, 16) {
        if !crate::lift::in_theta(alpha, anchor + s * (fa - anchor), &regions) {
            return Err(Error::Anchor(anchor));
        }
    }
    Ok(ModelH { f, anchor, rule })
}

impl<'a, M: HoloMap + ?Sized> ModelH<'a, M> {
    pub fn coefficients(&self, t: f64) -> Result<Coefficients> {
        let w = self.anchor + I * t;
        let j = self.f.jet(w)?;
        let (f1, f2, f3, f4) = (j.deriv(1), j.deriv(2), j.deriv(3), j.deriv(4));
        let d = 1.0 + self.f.excess(w)?;
        // d/dt of g(A + it) is i g'; the second derivative is -g''.
        let (dd, ddd) = (I * (f1 - 1.0), -f2);
        let (pi_a, pi_b) = match self.rule {
            CoefficientRule::Literal => (PI, 1.0),
            CoefficientRule::SeamMatched => (PI * PI, PI),
        };
        let mut c = [
            d + f2 / pi_a,
            -f2 / (2.0 * pi_b),
            (1.0 - f1) / 2.0,
            f2 / (4.0 * pi_b),
            Complex64::new(0.0, 0.0),
        ];
        let mut dt = [dd + I * f3 / pi_a, -I * f3 / (2.0 * pi_b), -I * f2 / 2.0, I * f3 / (4.0 * pi_b), Complex64::new(0.0, 0.0)];
        let mut dtt = [ddd - f4 / pi_a, f4 / (2.0 * pi_b), f3 / 2.0, -f4 / (4.0 * pi_b), Complex64::new(0.0, 0.0)];
        match self.rule {
            CoefficientRule::SeamMatched => {
                c[4] = 1.0 - c[0] - c[2];
                dt[4] = -dt[0] - dt[2];
                dtt[4] = -dtt[0] - dtt[2];
            }
            CoefficientRule::Literal => {
                let k = Complex64::new(1.0, 1.0);
                c[4] = 1.0 - k * (c[0] + c[2]).re;
                dt[4] = -k * (dt[0] + dt[2]).re;
                dtt[4] = -k * (dtt[0] + dtt[2]).re;
            }
        }
        Ok(Coefficients { c, dt, dtt })
    }

    /// `H` and its partials on `[0, 1] x [0, inf)` from the closed form.
    pub fn partials_base(&self, s: f64, t: f64) -> Result<Partials> {
        let k = self.coefficients(t)?;
        let (b, b1, b2) = basis(s);
        Ok(Partials {
            value: self.anchor + I * t + combine(&k.c, &b),
            s: combine(&k.c, &b1),
            t: I + combine(&k.dt, &b),
            ss: combine(&k.c, &b2),
            st: combine(&k.dt, &b1),
            tt: combine(&k.dtt, &b),
        })
    }

    /// Partials on `(-1, 2)` using `H(s + 1, t) = F(H(s, t))` to leave `[0, 1]`.
    pub fn partials(&self, s: f64, t: f64) -> Result<Partials> {
        if s <= 1.0 {
            return self.partials_base(s, t);
        }
        let p = self.partials(s - 1.0, t)?;
        let j = self.f.jet(p.value)?;
        let (f1, f2) = (j.deriv(1), j.deriv(2));
        Ok(Partials {
            value: self.f.value(p.value)?,
            s: f1 * p.s,
            t: f1 * p.t,
            ss: f2 * p.s * p.s + f1 * p.ss,
            st: f2 * p.s * p.t + f1 * p.st,
            tt: f2 * p.t * p.t + f1 * p.tt,
        })
    }

    pub fn value(&self, s: f64, t: f64) -> Result<Complex64> {
        Ok(self.partials(s, t)?.value)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeamCheck {
    pub t: f64,
    /// Mismatch of one-sided `(d_s, d_t)` at `1 -/+ step`, per step.
    pub first: Vec<(f64, f64)>,
    /// Mismatch of one-sided `(d_ss, d_st, d_tt)` maxima, per step.
    pub second: Vec<(f64, f64)>,
    pub first_ratio: f64,
    pub second_ratio: f64,
    /// Richardson extrapolation of the one-sided mismatch to zero step.
    pub first_jump: f64,
    pub second_jump: f64,
    /// `|(H(1+e) - H(1))/e - (H(1) - H(1-e))/e|` at `e = 1e-4`.
    pub difference_mismatch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub rule: CoefficientRule,
    pub anchor: Complex64,
    pub h0_error: f64,
    pub h1_error: f64,
    pub coefficient_identity_error: f64,
    pub seams: Vec<SeamCheck>,
    pub ds_decay: Option<LineFit>,
    pub dt_decay: Option<LineFit>,
    pub second_decay: Option<LineFit>,
    pub target_slope: f64,
    pub ds_rel_err: f64,
    pub dt_rel_err: f64,
    pub dt_at_top: f64,
    pub seam_c1_ok: bool,
    pub seam_c2_ok: bool,
}

/// Largest extrapolated one-sided jump accepted as continuity.
const JUMP_TOL: f64 = 1e-7;

/// A ratio test passes when the mismatch shrinks about tenfold, or sits at the rounding floor.
fn ratio_ok(big: f64, small: f64, floor: f64) -> bool {
    let r = big / small;
    (small < floor && big < 10.0 * floor) || (5.0..=20.0).contains(&r)
}

pub fn model_checks<M: HoloMap + ?Sized>(h: &ModelH<'_, M>) -> Result<ModelReport> {
    let alpha = h.f.alpha();
    let ts = linspace(0.0, 2.5 / alpha, 24);
    let steps = [1e-3, 1e-4];
    let floor = 1e-11;

    let rows: Vec<Result<(f64, f64, f64, f64, f64, f64)>> = ts
        .par_iter()
        .map(|&t| {
            let p0 = h.partials_base(0.0, t)?;
            let p1 = h.partials_base(1.0, t)?;
            let fa = h.f.value(h.anchor + I * t)?;
            let k = h.coefficients(t)?;
            let ident = match h.rule {
                CoefficientRule::SeamMatched => (k.c[0] + k.c[2] + k.c[4] - 1.0).norm(),
                CoefficientRule::Literal => {
                    let a = (k.c[0].re + k.c[2].re + k.c[4].re - 1.0).abs();
                    let b = (k.c[4].im + k.c[0].re + k.c[2].re).abs();
                    a.max(b)
                }
            };
            let mut ds: f64 = 0.0;
            let mut dt: f64 = 0.0;
            let mut sec: f64 = 0.0;
            for s in linspace(0.0, 1.0, 9) {
                let p = h.partials_base(s, t)?;
                ds = ds.max((p.s - 1.0).norm());
                dt = dt.max((p.t - I).norm());
                sec = sec.max(p.ss.norm().max(p.st.norm()).max(p.tt.norm()));
            }
            Ok(((p0.value - h.anchor - I * t).norm(), (p1.value - fa).norm(), ident, ds, dt, sec))
        })
        .collect();
    let mut h0_error: f64 = 0.0;
    let mut h1_error: f64 = 0.0;
    let mut ident: f64 = 0.0;
    let (mut ds_pts, mut dt_pts, mut sec_pts) = (Vec::new(), Vec::new(), Vec::new());
    for (t, r) in ts.iter().zip(rows) {
        let r = r?;
        h0_error = h0_error.max(r.0);
        h1_error = h1_error.max(r.1);
        ident = ident.max(r.2);
        let y = t + h.anchor.im;
        if r.3 > 1e-14 {
            ds_pts.push((y, r.3.ln()));
        }
        if r.4 > 1e-14 {
            dt_pts.push((y, r.4.ln()));
        }
        if r.5 > 1e-14 {
            sec_pts.push((y, r.5.ln()));
        }
    }
    let fit = |pts: &[(f64, f64)]| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        fit_line(&x, &y)
    };
    let target = -2.0 * PI * alpha;
    let rel = |f: &Option<LineFit>| f.map(|f| ((f.slope - target) / target).abs()).unwrap_or(f64::INFINITY);
    let ds_decay = fit(&ds_pts);
    let dt_decay = fit(&dt_pts);
    let second_decay = fit(&sec_pts);

    let mut seams = Vec::new();
    for &t in &[0.0, 0.5 / alpha, 1.0 / alpha] {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for &e in &steps {
            let l = h.partials(1.0 - e, t)?;
            let r = h.partials(1.0 + e, t)?;
            let a = [l.s - r.s, l.t - r.t];
            let b = [l.ss - r.ss, l.st - r.st, l.tt - r.tt];
            first.push((e, a.iter().map(|z| z.norm()).fold(0.0, f64::max)));
            second.push((e, b.iter().map(|z| z.norm()).fold(0.0, f64::max)));
            d1.push(a);
            d2.push(b);
        }
        // The mismatch is J + O(e); steps differ by a factor 10.
        let jump = |x: &[Complex64], y: &[Complex64]| {
            x.iter().zip(y).map(|(x, y)| ((10.0 * y - x) / 9.0).norm()).fold(0.0, f64::max)
        };
        let first_jump = jump(&d1[0], &d1[1]);
        let second_jump = jump(&d2[0], &d2[1]);
        let e = 1e-4;
        let hm = h.value(1.0 - e, t)?;
        let h1 = h.value(1.0, t)?;
        let hp = h.value(1.0 + e, t)?;
        let difference_mismatch = ((hp - h1) / e - (h1 - hm) / e).norm();
        seams.push(SeamCheck {
            t,
            first_ratio: first[0].1 / first[1].1,
            second_ratio: second[0].1 / second[1].1,
            first,
            second,
            first_jump,
            second_jump,
            difference_mismatch,
        });
    }
    let seam_c1_ok = seams
        .iter()
        .all(|s| ratio_ok(s.first[0].1, s.first[1].1, floor) && s.first_jump < JUMP_TOL && s.difference_mismatch < 10.0 * 1e-4);
    let seam_c2_ok = seam_c1_ok && seams.iter().all(|s| ratio_ok(s.second[0].1, s.second[1].1, floor) && s.second_jump < JUMP_TOL);
    let dt_at_top = (h.partials_base(0.5, 3.0 / alpha)?.t - I).norm();
    Ok(ModelReport {
        rule: h.rule,
        anchor: h.anchor,
        h0_error,
        h1_error,
        coefficient_identity_error: ident,
        seams,
        ds_rel_err: rel(&ds_decay),
        dt_rel_err: rel(&dt_decay),
        ds_decay,
        dt_decay,
        second_decay,
        target_slope: target,
        dt_at_top,
        seam_c1_ok,
        seam_c2_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::QuadraticMap;

    #[test]
    fn boundary_values() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        let a = default_anchor(0.02);
        let h = model_build(&f, a, CoefficientRule::SeamMatched, 5.0, 0.5).unwrap();
        for t in [0.0, 3.0, 40.0] {
            assert_eq!(h.value(0.0, t).unwrap(), a + I * t);
            assert!((h.value(1.0, t).unwrap() - f.value(a + I * t).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn seam_matched_rule_is_c2() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        let h = model_build(&f, default_anchor(0.02), CoefficientRule::SeamMatched, 5.0, 0.5).unwrap();
        let rep = model_checks(&h).unwrap();
        assert!(rep.seam_c1_ok && rep.seam_c2_ok, "{:?}", rep.seams);
        assert!(rep.ds_rel_err < 0.1 && rep.dt_rel_err < 0.1, "{} {}", rep.ds_rel_err, rep.dt_rel_err);
        assert!(rep.dt_at_top < 1e-8);
        assert!(rep.coefficient_identity_error < 1e-14);
    }

    #[test]
    fn literal_rule_breaks_seam() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        let h = model_build(&f, default_anchor(0.02), CoefficientRule::Literal, 5.0, 0.5).unwrap();
        let rep = model_checks(&h).unwrap();
        assert!(!rep.seam_c1_ok && !rep.seam_c2_ok, "{:?}", rep.seams);
        assert!(rep.seams[0].first_jump > 1e-5);
        assert!(rep.coefficient_identity_error < 1e-14);
    }

    #[test]
    fn anchor_near_pole_rejected() {
        let q = QuadraticMap::new(0.02);
        let f = LiftedMap::new(&q).unwrap();
        assert!(model_build(&f, Complex64::new(0.5, 0.0), CoefficientRule::SeamMatched, 5.0, 0.5).is_err());
    }
}
