//! Numeric abstraction used by the parameter-constraint engine.
//!
//! Constraint evaluation only needs field arithmetic and comparisons, so it is
//! written once against [`Scalar`] and instantiated for binary floats (`f64`,
//! `f32`) and for exact big rationals.

use std::fmt::Debug;

use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// A real-number stand-in: ordered field with conversions to and from `f64`.
pub trait Scalar: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive {
    /// Parses a plain decimal literal such as `0.01` or `12`.
    ///
    /// Exact types keep the decimal value exactly (`0.01` is `1/100`).
    fn from_decimal(text: &str) -> Option<Self>;

    fn from_u64_lossy(v: u64) -> Self {
        Self::from_u64(v).expect("every scalar type represents u64 values")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `self^exp` for a non-negative integer exponent.
    fn powi(&self, exp: u32) -> Self {
        num_traits::pow(self.clone(), exp as usize)
    }
}

impl Scalar for f64 {
    fn from_decimal(text: &str) -> Option<Self> {
        text.trim().parse().ok()
    }
}

impl Scalar for f32 {
    fn from_decimal(text: &str) -> Option<Self> {
        text.trim().parse().ok()
    }
}

impl Scalar for BigRational {
    fn from_decimal(text: &str) -> Option<Self> {
        parse_decimal_ratio(text.trim())
    }
}

fn parse_decimal_ratio(text: &str) -> Option<BigRational> {
    use num_rational::Ratio;
    use num_traits::Zero;

    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(pos) => (&body[..pos], body[pos + 1..].parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: num_rational::BigRational = Ratio::from_integer(digits.parse().ok()?);
    let ten = BigRational::from_integer(10.into());
    let scale = exponent - frac_part.len() as i32;
    let mut value = numer;
    let factor = num_traits::pow(ten, scale.unsigned_abs() as usize);
    if scale >= 0 {
        value *= factor;
    } else {
        value /= factor;
    }
    if value.is_zero() {
        return Some(BigRational::zero());
    }
    Some(if negative { -value } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!(BigRational::from_decimal("0.01"), Some(ratio(1, 100)));
        assert_eq!(BigRational::from_decimal("12"), Some(ratio(12, 1)));
        assert_eq!(BigRational::from_decimal("-0.5"), Some(ratio(-1, 2)));
        assert_eq!(BigRational::from_decimal("1e-3"), Some(ratio(1, 1000)));
        assert_eq!(BigRational::from_decimal(".25"), Some(ratio(1, 4)));
        assert_eq!(BigRational::from_decimal("abc"), None);
        assert_eq!(BigRational::from_decimal(""), None);
    }

    #[test]
    fn powi_matches_repeated_multiplication() {
        assert_eq!(3.0f64.powi(4), 81.0);
        assert_eq!(ratio(1, 2).powi(3), ratio(1, 8));
        assert_eq!(Scalar::powi(&2.0f32, 0), 1.0);
    }
}
