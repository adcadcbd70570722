//! Holomorphic maps with a fixed point of multiplier `e^{2 pi i alpha}` at 0.
//!
//! [`QuadraticMap`] is `P_alpha(z) = e^{2 pi i alpha} z + z^2`.
//! [`CanonicalISMap`] is `e^{2 pi i alpha} P(z)` with the model cubic
//! `P(z) = z (1 + z)^2`, restricted to the domain [`DomainU`].

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::jet::Jet;

pub type Jet5 = Jet<5>;

/// Escape radius used to truncate orbits.
pub const ESCAPE_RADIUS: f64 = 10.0;

pub fn cis(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

pub trait HoloMap: Send + Sync {
    fn alpha(&self) -> f64;
    fn eval(&self, z: Complex64) -> Complex64;
    fn deriv(&self, z: Complex64) -> Complex64;
    fn critical_point(&self) -> Complex64;

    fn multiplier(&self) -> Complex64 {
        cis(2.0 * PI * self.alpha())
    }

    fn critical_value(&self) -> Complex64 {
        self.eval(self.critical_point())
    }

    fn in_domain(&self, _z: Complex64) -> bool {
        true
    }

    fn eval_checked(&self, z: Complex64) -> Result<Complex64> {
        if self.in_domain(z) {
            Ok(self.eval(z))
        } else {
            Err(Error::OutOfDomain { z })
        }
    }

    fn second_deriv(&self, z: Complex64) -> Complex64 {
        let h = 1e-5;
        let d = Complex64::new(h, 0.0);
        (self.deriv(z + d) - self.deriv(z - d)) / (2.0 * h)
    }

    /// The nonzero fixed point nearest 0, by Newton on `(h(z) - z) / z`.
    fn sigma(&self) -> Result<Complex64> {
        let seed = Complex64::new(0.0, -4.0 * PI * self.alpha()) / self.second_deriv(Complex64::new(0.0, 0.0));
        newton_sigma(self, seed)
    }

    /// `u_h(z) = (h(z) - z) / (z (z - sigma))` as a jet.
    fn u_jet(&self, z: &Jet5, sigma: Complex64) -> Jet5 {
        let h = self.eval_jet(z);
        (h - *z) / (*z * z.add_const(-sigma))
    }

    /// Evaluation on jets; the default is a first-order expansion only.
    fn eval_jet(&self, z: &Jet5) -> Jet5 {
        let mut out = Jet5::constant(self.eval(z.value()));
        let d = self.deriv(z.value());
        for k in 1..5 {
            out.c[k] = d * z.c[k];
        }
        out
    }

    fn u(&self, z: Complex64, sigma: Complex64) -> Complex64 {
        self.u_jet(&Jet5::constant(z), sigma).value()
    }

    /// The preimage of `z` reached by Newton from `guess`.
    fn preimage_near(&self, z: Complex64, guess: Complex64) -> Result<Complex64> {
        let mut w = guess;
        for _ in 0..60 {
            let f = self.eval(w) - z;
            let step = f / self.deriv(w);
            w -= step;
            if step.norm() < 1e-15 * (1.0 + w.norm()) {
                return Ok(w);
            }
            if !w.is_finite() {
                break;
            }
        }
        let residual = (self.eval(w) - z).norm();
        if residual < 1e-12 * (1.0 + z.norm()) {
            Ok(w)
        } else {
            Err(Error::Inversion { best: w, residual })
        }
    }

    /// The inverse branch fixing 0, continued radially from `0`.
    fn preimage_fixing_zero(&self, z: Complex64) -> Result<Complex64> {
        let steps = 8;
        let mut w = Complex64::new(0.0, 0.0);
        for s in 1..=steps {
            let target = z * (s as f64 / steps as f64);
            let guess = w + (target - self.eval(w)) / self.deriv(w);
            w = self.preimage_near(target, guess)?;
        }
        Ok(w)
    }
}

fn newton_sigma<M: HoloMap + ?Sized>(map: &M, seed: Complex64) -> Result<Complex64> {
    let mut z = seed;
    for _ in 0..50 {
        let hz = map.eval(z);
        let g = (hz - z) / z;
        let dg = (map.deriv(z) - 1.0) / z - (hz - z) / (z * z);
        let step = g / dg;
        z -= step;
        if step.norm() < 1e-16 * z.norm().max(1e-300) {
            break;
        }
    }
    let residual = (map.eval(z) - z).norm();
    if z.is_finite() && residual < 1e-12 && z.norm() > 0.0 {
        Ok(z)
    } else {
        Err(Error::NoSigma { residual })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadraticMap {
    pub alpha: f64,
    pub multiplier: Complex64,
}

impl QuadraticMap {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, multiplier: cis(2.0 * PI * alpha) }
    }
}

impl HoloMap for QuadraticMap {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn multiplier(&self) -> Complex64 {
        self.multiplier
    }
    fn eval(&self, z: Complex64) -> Complex64 {
        z * (self.multiplier + z)
    }
    fn deriv(&self, z: Complex64) -> Complex64 {
        self.multiplier + 2.0 * z
    }
    fn second_deriv(&self, _z: Complex64) -> Complex64 {
        Complex64::new(2.0, 0.0)
    }
    fn critical_point(&self) -> Complex64 {
        -self.multiplier / 2.0
    }
    fn sigma(&self) -> Result<Complex64> {
        Ok(1.0 - self.multiplier)
    }
    fn eval_jet(&self, z: &Jet5) -> Jet5 {
        *z * z.add_const(self.multiplier)
    }
    fn u_jet(&self, _z: &Jet5, _sigma: Complex64) -> Jet5 {
        // h(z) - z = z (z - sigma) exactly.
        Jet5::constant(Complex64::new(1.0, 0.0))
    }
    fn preimage_fixing_zero(&self, z: Complex64) -> Result<Complex64> {
        let l = self.multiplier;
        Ok((-l + (l * l + 4.0 * z).sqrt()) / 2.0)
    }
}

/// `P(z) = z (1 + z)^2` with critical point `-1/3` and critical value `-4/27`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelCubic;

impl ModelCubic {
    pub const CP: f64 = -1.0 / 3.0;
    pub const CV: f64 = -4.0 / 27.0;

    pub fn eval(z: Complex64) -> Complex64 {
        let w = 1.0 + z;
        z * w * w
    }

    pub fn deriv(z: Complex64) -> Complex64 {
        (1.0 + z) * (1.0 + 3.0 * z)
    }
}

/// The ellipse `((x + 0.18)/1.24)^2 + (y/1.04)^2 <= 1`.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub offset: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for Ellipse {
    fn default() -> Self {
        Self { offset: 0.18, a: 1.24, b: 1.04 }
    }
}

impl Ellipse {
    pub fn level(&self, w: Complex64) -> f64 {
        ((w.re + self.offset) / self.a).powi(2) + (w.im / self.b).powi(2)
    }

    pub fn boundary(&self, theta: f64) -> Complex64 {
        Complex64::new(self.a * theta.cos() - self.offset, self.b * theta.sin())
    }
}

/// `U = g(C-hat minus E)` with `g(z) = -4z/(1+z)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DomainU {
    pub ellipse: Ellipse,
}

pub fn g_map(w: Complex64) -> Complex64 {
    let d = 1.0 + w;
    -4.0 * w / (d * d)
}

impl DomainU {
    /// Both preimages of `z` under `g`; `None` stands for the point at infinity.
    pub fn g_preimages(z: Complex64) -> [Option<Complex64>; 2] {
        // z w^2 + (2z + 4) w + z = 0.
        if z.norm() < 1e-300 {
            return [Some(Complex64::new(0.0, 0.0)), None];
        }
        let b = 2.0 * z + 4.0;
        let disc = (b * b - 4.0 * z * z).sqrt();
        let r1 = if (-b + disc).norm() > (-b - disc).norm() { (-b + disc) / (2.0 * z) } else { (-b - disc) / (2.0 * z) };
        // Product of the roots is 1.
        [Some(r1), Some(1.0 / r1)]
    }

    /// Signed margin: positive inside `U`, negative outside, near zero on `g(boundary E)`.
    pub fn margin(&self, z: Complex64) -> f64 {
        Self::g_preimages(z)
            .iter()
            .map(|w| match w {
                None => f64::INFINITY,
                Some(w) if !w.is_finite() => f64::INFINITY,
                Some(w) => self.ellipse.level(*w) - 1.0,
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.margin(z) > 0.0
    }
}

/// `V = P^{-1}(B(0, (4/27) e^{4 pi}))` minus `(-inf, -1]` and the component `B`.
#[derive(Debug, Clone, Copy)]
pub struct DomainV {
    pub outer: f64,
    pub inner: f64,
}

impl Default for DomainV {
    fn default() -> Self {
        Self { outer: 4.0 / 27.0 * (4.0 * PI).exp(), inner: 4.0 / 27.0 * (-4.0 * PI).exp() }
    }
}

impl DomainV {
    pub fn contains(&self, z: Complex64) -> bool {
        let p = ModelCubic::eval(z).norm();
        if p >= self.outer {
            return false;
        }
        if z.im == 0.0 && z.re <= -1.0 {
            return false;
        }
        // P^{-1} of the small disk has one component near 0 and one around the
        // double point -1; the latter is the excluded set.
        !(p < self.inner && z.re < -0.5)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CanonicalISMap {
    pub alpha: f64,
    pub multiplier: Complex64,
    pub domain: DomainU,
}

impl CanonicalISMap {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, multiplier: cis(2.0 * PI * alpha), domain: DomainU::default() }
    }
}

impl HoloMap for CanonicalISMap {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn multiplier(&self) -> Complex64 {
        self.multiplier
    }
    fn eval(&self, z: Complex64) -> Complex64 {
        self.multiplier * ModelCubic::eval(z)
    }
    fn deriv(&self, z: Complex64) -> Complex64 {
        self.multiplier * ModelCubic::deriv(z)
    }
    fn second_deriv(&self, z: Complex64) -> Complex64 {
        self.multiplier * (4.0 + 6.0 * z)
    }
    fn critical_point(&self) -> Complex64 {
        Complex64::new(ModelCubic::CP, 0.0)
    }
    fn in_domain(&self, z: Complex64) -> bool {
        self.domain.contains(z)
    }
    fn eval_jet(&self, z: &Jet5) -> Jet5 {
        let w = z.add_const(Complex64::new(1.0, 0.0));
        (*z * w * w).scale(self.multiplier)
    }
    fn u_jet(&self, z: &Jet5, sigma: Complex64) -> Jet5 {
        // Synthetic division of h(z) - z by z (z - sigma).
        z.add_const(2.0 + sigma).scale(self.multiplier)
    }
}

/// First `n` iterates of the critical value; the flag records escape past
/// [`ESCAPE_RADIUS`] (the orbit is truncated there).
pub fn critical_orbit<M: HoloMap + ?Sized>(map: &M, n: usize) -> (Vec<Complex64>, bool) {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return (out, false);
    }
    let mut z = map.critical_value();
    for _ in 0..n {
        if z.norm() > ESCAPE_RADIUS || !z.is_finite() {
            return (out, true);
        }
        out.push(z);
        z = map.eval(z);
    }
    (out, false)
}
