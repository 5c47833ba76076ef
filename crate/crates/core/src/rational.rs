//! Arbitrary precision rational scalars and small helpers.
//!
//! All quantities in the solver (prices, flows, surpluses, LP coefficients)
//! are `Rat` values. The representation keeps numerator and denominator in
//! lowest terms with a positive denominator, so equality and ordering are
//! exact.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

pub type Rat = num_rational::BigRational;

/// Shorthand for an integer-valued rational.
pub fn rat(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Shorthand for the fraction `p/q`. Panics if `q == 0`.
pub fn ratq(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Parses `"p"` or `"p/q"` with optional sign. Decimal points are rejected;
/// callers that want a float must not get one silently.
pub fn parse_rat(s: &str) -> Result<Rat, ParseRatError> {
    let t = s.trim();
    if t.is_empty() {
        return Err(ParseRatError(s.to_string()));
    }
    match t.split_once('/') {
        None => t
            .parse::<BigInt>()
            .map(Rat::from_integer)
            .map_err(|_| ParseRatError(s.to_string())),
        Some((num, den)) => {
            let n = num.parse::<BigInt>().map_err(|_| ParseRatError(s.to_string()))?;
            let d = den.parse::<BigInt>().map_err(|_| ParseRatError(s.to_string()))?;
            if d.is_zero() {
                return Err(ParseRatError(s.to_string()));
            }
            Ok(Rat::new(n, d))
        }
    }
}

/// Formats a rational as `"p"` or `"p/q"`; inverse of [`parse_rat`].
pub fn format_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRatError(pub String);

impl std::fmt::Display for ParseRatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "not a rational (expected \"p\" or \"p/q\"): {:?}", self.0)
    }
}

impl std::error::Error for ParseRatError {}

pub fn sum<'a, I: IntoIterator<Item = &'a Rat>>(it: I) -> Rat {
    it.into_iter().fold(Rat::zero(), |a, b| a + b)
}

pub fn product<'a, I: IntoIterator<Item = &'a Rat>>(it: I) -> Rat {
    it.into_iter().fold(Rat::one(), |a, b| a * b)
}

/// `r^k` for a non-negative integer exponent.
pub fn pow(r: &Rat, k: usize) -> Rat {
    let mut acc = Rat::one();
    let mut base = r.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    acc
}

pub fn abs(r: &Rat) -> Rat {
    r.abs()
}

/// Max of a non-empty iterator of rationals.
pub fn max_of<'a, I: IntoIterator<Item = &'a Rat>>(it: I) -> Rat {
    it.into_iter().cloned().reduce(|a, b| if b > a { b } else { a }).expect("max of empty set")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in ["0", "5", "-3", "7/2", "-9/4", "1000000000000000000000/7"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
    }

    #[test]
    fn parse_normalizes() {
        assert_eq!(parse_rat("4/6").unwrap(), ratq(2, 3));
        assert_eq!(parse_rat("3/-6").unwrap(), ratq(-1, 2));
        assert_eq!(format_rat(&parse_rat("3/-6").unwrap()), "-1/2");
        assert_eq!(parse_rat("8/4").unwrap(), rat(2));
        assert_eq!(format_rat(&parse_rat("8/4").unwrap()), "2");
    }

    #[test]
    fn parse_rejects_floats_and_junk() {
        for s in ["1.5", "", "x", "1/0", "2/2/2", "0x10", "1e3"] {
            assert!(parse_rat(s).is_err(), "accepted {:?}", s);
        }
    }

    #[test]
    fn pow_small() {
        assert_eq!(pow(&ratq(2, 3), 0), rat(1));
        assert_eq!(pow(&ratq(2, 3), 3), ratq(8, 27));
        assert_eq!(pow(&rat(-2), 3), rat(-8));
    }

    proptest::proptest! {
        #[test]
        fn format_parse_is_identity(p in proptest::num::i64::ANY, q in 1i64..=1_000_000) {
            let r = ratq(p, q);
            proptest::prop_assert_eq!(parse_rat(&format_rat(&r)).unwrap(), r);
        }

        // Anything parse_rat accepts must survive a reformat cycle, whatever
        // the input looked like.
        #[test]
        fn accepted_strings_reformat_stably(s in "[-+/0-9 .ex]{0,12}") {
            if let Ok(r) = parse_rat(&s) {
                let printed = format_rat(&r);
                proptest::prop_assert_eq!(parse_rat(&printed).unwrap(), r);
                proptest::prop_assert_eq!(format_rat(&parse_rat(&printed).unwrap()), printed);
            }
        }
    }
}
