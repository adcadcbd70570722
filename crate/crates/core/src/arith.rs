//! Continued fractions, the Gauss tower, convergents and Brjuno sums.
//!
//! The digit sequence is the primary representation. Tower entries are
//! evaluated from digit tails, never by iterating `frac(1/x)` in floating
//! point, and convergents are kept as exact big integers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Digits `(a_1, a_2, ...)` of `[0; a_1, a_2, ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CfDigits {
    digits: Vec<u32>,
}

impl CfDigits {
    pub fn new(digits: Vec<u32>) -> Result<Self> {
        if digits.is_empty() {
            return Err(Error::Domain("empty digit sequence".into()));
        }
        if let Some(i) = digits.iter().position(|&d| d == 0) {
            return Err(Error::InvalidDigit { index: i, digit: 0 });
        }
        Ok(Self { digits })
    }

    /// Accepts signed input so that negative digits are reported, not wrapped.
    pub fn from_signed(digits: &[i64]) -> Result<Self> {
        let mut out = Vec::with_capacity(digits.len());
        for (index, &digit) in digits.iter().enumerate() {
            if digit < 1 || digit > u32::MAX as i64 {
                return Err(Error::InvalidDigit { index, digit });
            }
            out.push(digit as u32);
        }
        Self::new(out)
    }

    pub fn periodic(period: &[u32], depth: usize) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::Domain("empty period".into()));
        }
        Self::new(period.iter().copied().cycle().take(depth).collect())
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }
}

/// An exact convergent `p_k / q_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Convergent {
    pub p: BigInt,
    pub q: BigInt,
}

#[derive(Debug, Clone)]
pub struct HighTypeAngle {
    pub digits: CfDigits,
    pub value: f64,
    /// `alpha_0, ..., alpha_{depth-1}`, each evaluated from its digit tail.
    pub tower: Vec<f64>,
    /// `(p_k, q_k)` for `k = 0..=depth`, starting from `0/1`.
    pub convergents: Vec<Convergent>,
    pub type_floor: u32,
}

/// Evaluates `[0; d_0, d_1, ...]` from the innermost digit outward.
fn eval_tail(digits: &[u32]) -> f64 {
    digits.iter().rev().fold(0.0, |x, &a| 1.0 / (a as f64 + x))
}

pub fn cf_from_digits(digits: &CfDigits, depth: usize) -> Result<HighTypeAngle> {
    if depth == 0 || depth > digits.depth() {
        return Err(Error::Depth { requested: depth, available: digits.depth() });
    }
    let d = &digits.digits()[..depth];
    let value = eval_tail(d);
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::Boundary(value));
    }
    let tower = (0..depth).map(|i| eval_tail(&d[i..])).collect();

    let mut convergents = Vec::with_capacity(depth + 1);
    let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
    let (mut p, mut q) = (BigInt::zero(), BigInt::one());
    convergents.push(Convergent { p: p.clone(), q: q.clone() });
    for &a in d {
        let a = BigInt::from(a);
        let p_next = &a * &p + &p_prev;
        let q_next = &a * &q + &q_prev;
        p_prev = std::mem::replace(&mut p, p_next);
        q_prev = std::mem::replace(&mut q, q_next);
        convergents.push(Convergent { p: p.clone(), q: q.clone() });
    }
    let type_floor = d.iter().copied().min().unwrap_or(1);
    Ok(HighTypeAngle {
        digits: CfDigits { digits: d.to_vec() },
        value,
        tower,
        convergents,
        type_floor,
    })
}

impl HighTypeAngle {
    pub fn depth(&self) -> usize {
        self.digits.depth()
    }

    /// The exact rational value of the stored finite continued fraction.
    pub fn exact(&self) -> &Convergent {
        self.convergents.last().expect("at least one convergent")
    }

    /// `p_k q_{k-1} - p_{k-1} q_k`, computed exactly.
    pub fn determinant(&self, k: usize) -> BigInt {
        let c = &self.convergents;
        &c[k].p * &c[k - 1].q - &c[k - 1].p * &c[k].q
    }

    pub fn q(&self, k: usize) -> u64 {
        self.convergents[k].q.to_u64().unwrap_or(u64::MAX)
    }

    /// The angle whose digits are this one's shifted by `n`.
    pub fn shifted(&self, n: usize) -> Result<HighTypeAngle> {
        let rest = self.digits.digits()[n.min(self.depth())..].to_vec();
        let rest = CfDigits::new(rest)?;
        let depth = rest.depth();
        cf_from_digits(&rest, depth)
    }
}

/// Digits of `x` in (0, 1), stopping once the convergent is within `tol`.
///
/// The expansion runs in exact arithmetic on the binary value of `x`, so the
/// returned digits are those of the float itself. A float carries 53 bits,
/// which bounds how many digits of the original angle it can determine.
pub fn cf_expand(x: f64, max_depth: usize, tol: f64) -> Result<CfDigits> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("cf_expand needs 0 < x < 1, got {x}")));
    }
    let (p, q) = dyadic(x);
    expand_ratio(p, q, max_depth, |pk, qk| {
        let approx = pk.to_f64().unwrap_or(0.0) / qk.to_f64().unwrap_or(1.0);
        (approx - x).abs() < tol
    })
}

/// Exact expansion of `p / q` with `0 < p < q`.
pub fn cf_expand_exact(p: &BigInt, q: &BigInt, max_depth: usize) -> Result<CfDigits> {
    if !(p.is_positive() && p < q) {
        return Err(Error::Domain("cf_expand_exact needs 0 < p < q".into()));
    }
    expand_ratio(p.clone(), q.clone(), max_depth, |_, _| false)
}

fn dyadic(x: f64) -> (BigInt, BigInt) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 { (mant, -1074) } else { (mant | (1u64 << 52), exp - 1075) };
    let mut p = BigInt::from(m);
    let mut q = BigInt::one();
    if e < 0 {
        q <<= (-e) as usize;
    } else {
        p <<= e as usize;
    }
    let g = p.gcd(&q);
    (p / &g, q / g)
}

fn expand_ratio(
    mut num: BigInt,
    mut den: BigInt,
    max_depth: usize,
    mut close_enough: impl FnMut(&BigInt, &BigInt) -> bool,
) -> Result<CfDigits> {
    // value = num / den < 1; emit floor(den / num) repeatedly.
    let mut out = Vec::new();
    let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
    let (mut p, mut q) = (BigInt::zero(), BigInt::one());
    while out.len() < max_depth && !num.is_zero() {
        let (a, r) = den.div_rem(&num);
        let a_u = a.to_u32().ok_or_else(|| Error::Domain("digit overflow".into()))?;
        out.push(a_u);
        let p_next = &a * &p + &p_prev;
        let q_next = &a * &q + &q_prev;
        p_prev = std::mem::replace(&mut p, p_next);
        q_prev = std::mem::replace(&mut q, q_next);
        den = std::mem::replace(&mut num, r);
        if close_enough(&p, &q) {
            break;
        }
    }
    CfDigits::new(out)
}

pub fn gauss_tower(angle: &HighTypeAngle, n: usize) -> Result<Vec<f64>> {
    if n >= angle.tower.len() {
        return Err(Error::Depth { requested: n, available: angle.tower.len() - 1 });
    }
    Ok(angle.tower[..=n].to_vec())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BrjunoValue {
    pub value: f64,
    pub truncation_depth: usize,
    pub tail_bound: f64,
}

/// Partial sum `sum_{k<=depth} (prod_{i<k} alpha_i) log(1/alpha_k)`.
///
/// The remainder is bounded using `alpha_i alpha_{i+1} <= 1/2`, which gives
/// at most `4 * prod_{i<=depth} alpha_i * max_log`, where `max_log` is the
/// largest `log(1/alpha_k)` among stored tower entries.
pub fn brjuno_sum(angle: &HighTypeAngle, depth: usize) -> Result<BrjunoValue> {
    let tower = gauss_tower(angle, depth)?;
    let mut beta = 1.0;
    let mut value = 0.0;
    for &a in &tower {
        value += beta * (1.0 / a).ln();
        beta *= a;
    }
    let max_log = angle.tower.iter().map(|a| (1.0 / a).ln()).fold(0.0, f64::max);
    Ok(BrjunoValue { value, truncation_depth: depth, tail_bound: 4.0 * beta * max_log })
}

pub fn is_high_type(digits: &CfDigits, n: u32) -> bool {
    digits.digits().iter().all(|&d| d >= n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic(a: u32, depth: usize) -> HighTypeAngle {
        cf_from_digits(&CfDigits::periodic(&[a], depth).unwrap(), depth).unwrap()
    }

    #[test]
    fn silver_ratio() {
        let x = periodic(2, 30);
        assert!((x.value - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn periodic_fifty_matches_quadratic_root() {
        let x = periodic(50, 40);
        let root = 2.0 / (50.0 + 2504f64.sqrt());
        assert!((x.value - root).abs() < 1e-16);
        for a in &x.tower[..30] {
            assert!((a - root).abs() < 1e-16);
        }
    }

    #[test]
    fn single_one_is_boundary() {
        let d = CfDigits::new(vec![1]).unwrap();
        assert!(matches!(cf_from_digits(&d, 1), Err(Error::Boundary(_))));
    }

    #[test]
    fn zero_and_negative_digits_rejected() {
        assert!(matches!(CfDigits::new(vec![3, 0]), Err(Error::InvalidDigit { index: 1, .. })));
        assert!(matches!(CfDigits::from_signed(&[2, -4]), Err(Error::InvalidDigit { index: 1, digit: -4 })));
    }

    #[test]
    fn expand_examples() {
        assert_eq!(cf_expand(0.5, 30, 1e-15).unwrap().digits(), &[2]);
        let d = cf_expand(2f64.sqrt() - 1.0, 30, 1e-15).unwrap();
        assert!(d.depth() >= 15);
        assert!(d.digits().iter().all(|&a| a == 2));
        let root = 2.0 / (50.0 + 2504f64.sqrt());
        let d = cf_expand(root, 30, 1e-15).unwrap();
        assert!(d.depth() >= 4);
        assert!(d.digits().iter().all(|&a| a == 50));
        assert!(cf_expand(1.0, 5, 1e-15).is_err());
    }

    #[test]
    fn alternating_tower() {
        let d = CfDigits::periodic(&[2, 3], 30).unwrap();
        let x = cf_from_digits(&d, 30).unwrap();
        // Fixed point of x = 1/(2 + 1/(3 + x)) solved directly: 2x^2 + 6x - 3 = 0.
        let a0 = (-6.0 + (36.0f64 + 24.0).sqrt()) / 4.0;
        let a1 = 1.0 / a0 - 2.0;
        let t = gauss_tower(&x, 3).unwrap();
        assert!((t[0] - a0).abs() < 1e-15 && (t[2] - a0).abs() < 1e-15);
        assert!((t[1] - a1).abs() < 1e-15 && (t[3] - a1).abs() < 1e-15);
        assert_eq!(gauss_tower(&x, 0).unwrap().len(), 1);
        assert!(gauss_tower(&x, 30).is_err());
    }

    #[test]
    fn brjuno_periodic_closed_form() {
        let x = periodic(50, 40);
        let a = 2.0 / (50.0 + 2504f64.sqrt());
        let b = brjuno_sum(&x, 25).unwrap();
        let closed = (1.0 / a).ln() / (1.0 - a);
        assert!((b.value - closed).abs() < 1e-9);
        assert!((closed - 3.992236).abs() < 1e-6);
        let b0 = brjuno_sum(&x, 0).unwrap();
        assert_eq!(b0.value, (1.0 / x.tower[0]).ln());
    }

    #[test]
    fn brjuno_golden() {
        let x = periodic(1, 60);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let b = brjuno_sum(&x, 50).unwrap();
        assert!((b.value - (1.0 / g).ln() / (1.0 - g)).abs() < 1e-9);
        assert!(!is_high_type(&x.digits, 2));
        assert!(is_high_type(&x.digits, 1));
    }

    #[test]
    fn high_type_examples() {
        assert!(is_high_type(&CfDigits::new(vec![50, 50, 50]).unwrap(), 50));
        assert!(!is_high_type(&CfDigits::new(vec![50, 49, 50]).unwrap(), 50));
        assert!(is_high_type(&CfDigits::new(vec![2, 2, 2]).unwrap(), 1));
    }

    #[test]
    fn determinant_signs() {
        let d = CfDigits::new(vec![3, 7, 15, 1, 292, 2]).unwrap();
        let x = cf_from_digits(&d, 6).unwrap();
        for k in 1..=6 {
            let expect = if k % 2 == 1 { 1 } else { -1 };
            assert_eq!(x.determinant(k), BigInt::from(expect));
        }
    }
}
