//! Coefficient arithmetic shared by the polynomial layers.
//!
//! Program assembly works in exact rationals; the SDP solver and the
//! certification eigenvalue computations work in MPFR floats with a
//! configurable mantissa. Both are exposed through the [`Coeff`] trait so
//! polynomial code is written once.

use std::fmt::{Debug, Display};

use rug::ops::CompleteRound;
use rug::{Complete, Float, Rational};

/// Minimum mantissa bits accepted for extended-precision work.
pub const MIN_MANTISSA_BITS: u32 = 53;

/// Ring operations needed by [`crate::poly::Polynomial`].
///
/// Implementations must be exact for `Rational` and correctly rounded at the
/// operand precision for `Float` (binary operations round at the larger of
/// the two operand precisions, which keeps results deterministic).
pub trait Coeff: Clone + PartialEq + Debug + Display + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn neg(&self) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    /// Multiply by a small integer (derivative scaling).
    fn scale_int(&self, k: i64) -> Self;
    fn from_int(k: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coeff for Rational {
    fn zero() -> Self {
        Rational::new()
    }
    fn one() -> Self {
        Rational::from(1)
    }
    fn is_zero(&self) -> bool {
        *self == 0
    }
    fn neg(&self) -> Self {
        (-self).complete()
    }
    fn add(&self, rhs: &Self) -> Self {
        (self + rhs).complete()
    }
    fn sub(&self, rhs: &Self) -> Self {
        (self - rhs).complete()
    }
    fn mul(&self, rhs: &Self) -> Self {
        (self * rhs).complete()
    }
    fn scale_int(&self, k: i64) -> Self {
        self * Rational::from(k)
    }
    fn from_int(k: i64) -> Self {
        Rational::from(k)
    }
    fn to_f64(&self) -> f64 {
        self.to_f64()
    }
}

impl Coeff for Float {
    fn zero() -> Self {
        Float::new(MIN_MANTISSA_BITS)
    }
    fn one() -> Self {
        Float::with_val(MIN_MANTISSA_BITS, 1)
    }
    fn is_zero(&self) -> bool {
        self.is_zero()
    }
    fn neg(&self) -> Self {
        (-self).complete(self.prec())
    }
    fn add(&self, rhs: &Self) -> Self {
        (self + rhs).complete(self.prec().max(rhs.prec()))
    }
    fn sub(&self, rhs: &Self) -> Self {
        (self - rhs).complete(self.prec().max(rhs.prec()))
    }
    fn mul(&self, rhs: &Self) -> Self {
        (self * rhs).complete(self.prec().max(rhs.prec()))
    }
    fn scale_int(&self, k: i64) -> Self {
        self * Float::with_val(self.prec(), k)
    }
    fn from_int(k: i64) -> Self {
        Float::with_val(64, k)
    }
    fn to_f64(&self) -> f64 {
        self.to_f64()
    }
}

/// Parses a number literal into an exact rational.
///
/// Accepted forms: integers (`-3`), explicit fractions (`2/7`), decimals
/// (`0.25`), and decimals with a power-of-ten exponent (`1.5e-3`, `2E4`).
/// Decimal forms convert exactly, never through binary floating point.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: rug::Integer = num.trim().parse().ok()?;
        let d: rug::Integer = den.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Rational::from((n, d)));
    }
    let (mantissa, exp10) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let sign = if int_part.starts_with('-') { -1 } else { 1 };
    let digits: String = int_part
        .trim_start_matches(['-', '+'])
        .chars()
        .chain(frac_part.chars())
        .collect();
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut value = Rational::from(digits.parse::<rug::Integer>().ok()?);
    if sign < 0 {
        value = -value;
    }
    let shift = exp10 - frac_part.len() as i32;
    let ten = Rational::from(10);
    if shift > 0 {
        for _ in 0..shift {
            value *= &ten;
        }
    } else {
        for _ in 0..(-shift) {
            value /= &ten;
        }
    }
    Some(value)
}

/// Converts a rational to a float at `prec` bits (round to nearest).
pub fn rat_to_float(r: &Rational, prec: u32) -> Float {
    Float::with_val(prec, r)
}

/// Converts a float to the exact rational it represents.
///
/// Every finite MPFR float is a dyadic rational, so this is lossless.
pub fn float_to_rat(f: &Float) -> Rational {
    f.to_rational().expect("finite float converts exactly")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_forms_exactly() {
        assert_eq!(parse_rational("0.25").unwrap(), Rational::from((1, 4)));
        assert_eq!(parse_rational("1e-3").unwrap(), Rational::from((1, 1000)));
        assert_eq!(parse_rational("-2.5e2").unwrap(), Rational::from(-250));
        assert_eq!(parse_rational("3/4").unwrap(), Rational::from((3, 4)));
        assert_eq!(parse_rational("7").unwrap(), Rational::from(7));
        assert!(parse_rational("1/0").is_none());
        assert!(parse_rational("abc").is_none());
        assert!(parse_rational("").is_none());
    }

    #[test]
    fn float_roundtrip_is_exact() {
        let f = Float::with_val(128, 0.1);
        let r = float_to_rat(&f);
        let back = rat_to_float(&r, 128);
        assert_eq!(f, back);
    }
}
