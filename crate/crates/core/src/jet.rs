//! Truncated Taylor series in one complex variable.
//!
//! A `Jet<N>` holds `f(w0), f'(w0), f''(w0)/2!, ...` up to order `N - 1`.
//! Arithmetic follows the usual power-series recurrences, so any expression
//! built from `+ - * /`, `exp` and `ln` yields exact derivatives up to
//! rounding.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [Complex64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: Complex64) -> Self {
        let mut c = [Complex64::new(0.0, 0.0); N];
        c[0] = v;
        Self { c }
    }

    /// The identity function expanded at `w0`.
    pub fn variable(w0: Complex64) -> Self {
        let mut j = Self::constant(w0);
        if N > 1 {
            j.c[1] = Complex64::new(1.0, 0.0);
        }
        j
    }

    pub fn value(&self) -> Complex64 {
        self.c[0]
    }

    /// The `k`-th derivative.
    pub fn deriv(&self, k: usize) -> Complex64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.c[k] * fact
    }

    pub fn scale(mut self, s: Complex64) -> Self {
        for v in &mut self.c {
            *v *= s;
        }
        self
    }

    pub fn add_const(mut self, s: Complex64) -> Self {
        self.c[0] += s;
        self
    }

    pub fn exp(&self) -> Self {
        // g = exp(f): g' = f' g, so k g_k = sum_{j=1..k} j f_j g_{k-j}.
        let mut g = [Complex64::new(0.0, 0.0); N];
        g[0] = self.c[0].exp();
        for k in 1..N {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 1..=k {
                s += self.c[j] * g[k - j] * j as f64;
            }
            g[k] = s / k as f64;
        }
        Self { c: g }
    }

    /// Principal logarithm of the series.
    pub fn ln(&self) -> Self {
        // g = ln f: f g' = f', so k f_0 g_k = k f_k - sum_{j=1..k-1} j g_j f_{k-j}.
        let mut g = [Complex64::new(0.0, 0.0); N];
        g[0] = self.c[0].ln();
        for k in 1..N {
            let mut s = self.c[k] * k as f64;
            for j in 1..k {
                s -= g[j] * self.c[k - j] * j as f64;
            }
            g[k] = s / (self.c[0] * k as f64);
        }
        Self { c: g }
    }

    pub fn recip(&self) -> Self {
        let mut g = [Complex64::new(0.0, 0.0); N];
        g[0] = 1.0 / self.c[0];
        for k in 1..N {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 1..=k {
                s += self.c[j] * g[k - j];
            }
            g[k] = -s * g[0];
        }
        Self { c: g }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(o.c) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(o.c) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [Complex64::new(0.0, 0.0); N];
        for i in 0..N {
            for j in 0..N - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Self { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}
