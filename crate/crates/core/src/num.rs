//! Exact rational arithmetic used throughout the crate.
//!
//! All distribution data, valuations and prices are exact rationals so that
//! indicator constraints and tie-breaking stay stable. Floating point only
//! appears inside the float-mode LP solver and in Monte Carlo accumulators.

use num_bigint::BigInt;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

pub type Rat = num_rational::BigRational;

pub fn rat(num: i64, den: i64) -> Rat {
    assert!(den != 0, "zero denominator");
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_i(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

pub fn rat_zero() -> Rat {
    Rat::zero()
}

pub fn rat_one() -> Rat {
    Rat::one()
}

pub fn rat_f64(x: &Rat) -> f64 {
    x.to_f64().expect("rational out of f64 range")
}

/// Exact conversion: every finite f64 is a binary rational.
pub fn rat_from_f64(x: f64) -> Rat {
    Rat::from_f64(x).expect("non-finite float")
}

pub fn rat_str(x: &Rat) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Parses `"p/q"`, integer, decimal, or scientific-notation literals exactly.
pub fn parse_rat(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty rational literal".into());
    }
    if let Some((p, q)) = s.split_once('/') {
        let num: BigInt = p
            .trim()
            .parse()
            .map_err(|_| format!("bad numerator in {s:?}"))?;
        let den: BigInt = q
            .trim()
            .parse()
            .map_err(|_| format!("bad denominator in {s:?}"))?;
        if den.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(Rat::new(num, den));
    }
    // Decimal / scientific literal: mantissa [.fraction] [e exponent]
    let (mantissa, exp10) = match s.split_once(['e', 'E']) {
        Some((m, e)) => {
            let e: i32 = e.parse().map_err(|_| format!("bad exponent in {s:?}"))?;
            (m, e)
        }
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let digits = format!(
        "{}{}",
        if int_part.is_empty() { "0" } else { int_part },
        frac_part
    );
    let num: BigInt = digits
        .parse()
        .map_err(|_| format!("bad number literal {s:?}"))?;
    let shift = exp10 - frac_part.len() as i32;
    let ten = BigInt::from(10);
    if shift >= 0 {
        Ok(Rat::from_integer(num * ten.pow(shift as u32)))
    } else {
        Ok(Rat::new(num, ten.pow((-shift) as u32)))
    }
}

pub fn rat_is_zero(x: &Rat) -> bool {
    x.is_zero()
}

pub fn rat_is_positive(x: &Rat) -> bool {
    x.is_positive()
}

/// Max of two rationals by value.
pub fn rat_max(a: Rat, b: Rat) -> Rat {
    if a >= b {
        a
    } else {
        b
    }
}

/// Positive part, `max(x, 0)`.
pub fn rat_pos(x: &Rat) -> Rat {
    if x.is_positive() {
        x.clone()
    } else {
        Rat::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_and_decimal_forms() {
        assert_eq!(parse_rat("2/5").unwrap(), rat(2, 5));
        assert_eq!(parse_rat("0.4").unwrap(), rat(2, 5));
        assert_eq!(parse_rat("3").unwrap(), rat_i(3));
        assert_eq!(parse_rat("1e-3").unwrap(), rat(1, 1000));
        assert_eq!(parse_rat("2.5e2").unwrap(), rat_i(250));
        assert_eq!(parse_rat("-1/2").unwrap(), rat(-1, 2));
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("abc").is_err());
    }

    #[test]
    fn renders_reduced_form() {
        assert_eq!(rat_str(&rat(4, 10)), "2/5");
        assert_eq!(rat_str(&rat_i(7)), "7");
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let x = 0.1f64;
        assert_eq!(rat_f64(&rat_from_f64(x)), x);
    }
}
