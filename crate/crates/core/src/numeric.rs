//! Certified rational bounds for `ln` and `exp`.
//!
//! Every function returns an enclosing interval `[lo, hi]`; rounding is
//! always directed outward so the bounds stay valid.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::rational::{int, rat, Rational};

fn pow2(bits: u64) -> BigInt {
    BigInt::one() << bits
}

pub fn dyadic_floor(x: &Rational, bits: u64) -> Rational {
    let scale = pow2(bits);
    let scaled = x * Rational::from_integer(scale.clone());
    Rational::new(scaled.floor().to_integer(), scale)
}

pub fn dyadic_ceil(x: &Rational, bits: u64) -> Rational {
    let scale = pow2(bits);
    let scaled = x * Rational::from_integer(scale.clone());
    Rational::new(scaled.ceil().to_integer(), scale)
}

/// Bounds on `2 * atanh(y) = ln((1 + y) / (1 - y))` for `0 <= y <= 1/3`.
fn two_atanh_bounds(y: &Rational, bits: u64) -> (Rational, Rational) {
    debug_assert!(!y.is_negative() && *y <= rat(1, 3));
    if y.is_zero() {
        return (Rational::zero(), Rational::zero());
    }
    let y2 = y * y;
    let one_minus = Rational::one() - &y2;
    let eps = Rational::new(BigInt::one(), pow2(bits + 2));
    let mut sum = Rational::zero();
    let mut power = y.clone();
    let mut j: i64 = 0;
    loop {
        sum += &power / int(2 * j + 1);
        // Rounding the power up keeps `hi` valid; `lo` subtracts the
        // accumulated rounding below.
        power = dyadic_ceil(&(&power * &y2), bits + 16);
        j += 1;
        let tail = &power / (int(2 * j + 1) * &one_minus);
        if tail < eps {
            let lo = dyadic_floor(&(int(2) * (&sum - int(j * j + 1) * Rational::new(BigInt::one(), pow2(bits + 16)))), bits + 4);
            let hi = dyadic_ceil(&(int(2) * (&sum + &tail)), bits + 4);
            return (lo, hi);
        }
    }
}

/// Splits `x > 0` as `m * 2^k` with `1 <= m < 2`.
fn split_pow2(x: &Rational) -> (Rational, i64) {
    let mut k = x.numer().bits() as i64 - x.denom().bits() as i64;
    let mut m = scale_pow2(x, -k);
    while m >= int(2) {
        m /= int(2);
        k += 1;
    }
    while m < Rational::one() {
        m *= int(2);
        k -= 1;
    }
    (m, k)
}

fn scale_pow2(x: &Rational, k: i64) -> Rational {
    if k >= 0 {
        x * Rational::from_integer(pow2(k as u64))
    } else {
        x / Rational::from_integer(pow2((-k) as u64))
    }
}

/// `lo <= ln(x) <= hi` with `hi - lo <= 2^-bits` (for moderate `x`).
pub fn ln_bounds(x: &Rational, bits: u64) -> (Rational, Rational) {
    assert!(x.is_positive(), "ln of a non-positive number");
    if x.is_one() {
        return (Rational::zero(), Rational::zero());
    }
    let (m, k) = split_pow2(x);
    let extra = 64 - (k.unsigned_abs().max(1)).leading_zeros() as u64;
    let work = bits + extra + 4;
    let y = (&m - Rational::one()) / (&m + Rational::one());
    let (lm, hm) = two_atanh_bounds(&y, work);
    let (l2, h2) = two_atanh_bounds(&rat(1, 3), work);
    let kk = int(k);
    if k >= 0 {
        (&kk * l2 + lm, &kk * h2 + hm)
    } else {
        (&kk * h2 + lm, &kk * l2 + hm)
    }
}

/// Bounds on `e^a` for `0 <= a <= 1/2` via a Taylor polynomial and its
/// Lagrange remainder (using `e^a < 2`).
fn exp_small_bounds(a: &Rational, bits: u64) -> (Rational, Rational) {
    let eps = Rational::new(BigInt::one(), pow2(bits + 2));
    let mut sum = Rational::one();
    let mut term = Rational::one();
    let mut n: i64 = 0;
    loop {
        n += 1;
        term = dyadic_ceil(&(&term * a / int(n)), bits + 16);
        sum += &term;
        let rem = &term * a / int(n + 1) * int(2);
        if rem < eps {
            let lo = dyadic_floor(&(&sum - int(2 * n + 1) * Rational::new(BigInt::one(), pow2(bits + 16))), bits + 4);
            let hi = dyadic_ceil(&(&sum + rem), bits + 4);
            return (lo, hi);
        }
    }
}

/// `lo <= e^x <= hi`; the relative width is at most about `2^-bits`.
pub fn exp_bounds(x: &Rational, bits: u64) -> (Rational, Rational) {
    if x.is_negative() {
        let (lo, hi) = exp_bounds(&-x, bits + 2);
        let up = dyadic_ceil(&(Rational::one() / &lo), bits + 2 + hi.to_integer().bits());
        let down = dyadic_floor(&(Rational::one() / &hi), bits + 2 + hi.to_integer().bits());
        return (down, up);
    }
    // Halve until the argument is at most 1/2, then square back up.
    let mut k: u64 = 0;
    let mut a = x.clone();
    while a > rat(1, 2) {
        a /= int(2);
        k += 1;
    }
    let work = bits + k + 8;
    let (mut lo, mut hi) = exp_small_bounds(&a, work);
    for _ in 0..k {
        lo = dyadic_floor(&(&lo * &lo), work);
        hi = dyadic_ceil(&(&hi * &hi), work);
    }
    (lo, hi)
}

/// `ceil(factor * ln(x))` computed exactly for `factor >= 0`, `x >= 1`.
pub fn ceil_times_ln(factor: &Rational, x: &Rational) -> BigInt {
    assert!(!factor.is_negative());
    let mut bits = 64;
    loop {
        let (lo, hi) = ln_bounds(x, bits);
        let a = (factor * lo).ceil().to_integer();
        let b = (factor * hi).ceil().to_integer();
        if a == b || bits > 4096 {
            return b;
        }
        bits *= 2;
    }
}

/// Smallest integer `n` with `n >= x`, as a rational.
pub fn ceil_int(x: &Rational) -> BigInt {
    x.ceil().to_integer()
}

pub fn is_even(n: &BigInt) -> bool {
    n.is_even()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(r: &Rational, f: f64) -> bool {
        (crate::rational::to_f64(r) - f).abs() < 1e-12 * f.abs().max(1.0)
    }

    #[test]
    fn ln_brackets_known_values() {
        for (x, f) in [(rat(2, 1), 2f64.ln()), (rat(20, 1), 20f64.ln()), (rat(1, 3), (1.0f64 / 3.0).ln()), (rat(4096, 1), 4096f64.ln())] {
            let (lo, hi) = ln_bounds(&x, 80);
            assert!(lo <= hi);
            assert!(close(&lo, f) && close(&hi, f), "{x}");
            assert!(&hi - &lo < Rational::new(BigInt::one(), pow2(70)));
        }
    }

    #[test]
    fn exp_brackets_known_values() {
        for (x, f) in [(rat(0, 1), 1.0), (rat(3, 1), 3f64.exp()), (rat(-3, 1), (-3f64).exp()), (rat(1, 7), (1.0f64 / 7.0).exp())] {
            let (lo, hi) = exp_bounds(&x, 80);
            assert!(lo <= hi);
            assert!(close(&lo, f) && close(&hi, f), "{x}");
        }
    }

    #[test]
    fn exp_of_zero_contains_one() {
        let (lo, hi) = exp_bounds(&Rational::zero(), 64);
        assert!(lo <= Rational::one() && Rational::one() <= hi);
    }

    #[test]
    fn ceil_times_ln_matches_hand_values() {
        // 4096 * ln 4 = 5678.26...
        assert_eq!(ceil_times_ln(&int(4096), &int(4)), BigInt::from(5679));
        // 4096 * ln 20 = 12270.52...
        assert_eq!(ceil_times_ln(&int(4096), &int(20)), BigInt::from(12271));
        assert_eq!(ceil_times_ln(&int(7), &int(1)), BigInt::from(0));
    }
}
