//! Exact rational arithmetic for every cost magnitude in the library.
//!
//! All model quantities (connection costs, disconnection costs, facility
//! costs, prices, potentials) are arbitrary-precision rationals. Floating
//! point appears only in the LP layer, which is explicitly approximate.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational number. Always stored in reduced form with a positive
/// denominator (guaranteed by `BigRational`).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rat(BigRational);

/// Error produced when a rational literal cannot be parsed exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatParseError {
    input: String,
    reason: &'static str,
}

impl fmt::Display for RatParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid rational {:?}: {}", self.input, self.reason)
    }
}

impl std::error::Error for RatParseError {}

impl Rat {
    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn from_int(v: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(v)))
    }

    /// Construct p/q. Panics when q == 0; intended for literals in code and
    /// tests, not for untrusted input (use `FromStr` there).
    pub fn ratio(p: i64, q: i64) -> Self {
        assert!(q != 0, "zero denominator");
        Rat(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    pub fn from_big(numer: BigInt, denom: BigInt) -> Option<Self> {
        if denom.is_zero() {
            return None;
        }
        Some(Rat(BigRational::new(numer, denom)))
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn abs(&self) -> Self {
        Rat(self.0.abs())
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Nearest f64; lossy, for human-facing "approximately" fields only.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Exact finite decimal representation when the reduced denominator has
    /// no prime factor other than 2 and 5; `None` otherwise.
    pub fn decimal_string(&self) -> Option<String> {
        let mut den = self.0.denom().clone();
        let mut twos = 0u32;
        let mut fives = 0u32;
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        while (&den % &two).is_zero() {
            den /= &two;
            twos += 1;
        }
        while (&den % &five).is_zero() {
            den /= &five;
            fives += 1;
        }
        if den != BigInt::one() {
            return None;
        }
        let digits = twos.max(fives);
        if digits == 0 {
            return Some(self.0.numer().to_string());
        }
        // Scale to an integer over 10^digits.
        let scale = BigInt::from(10).pow(digits);
        let scaled = (self.0.numer() * &scale / self.0.denom()).abs();
        let s = scaled.to_string();
        let s = if s.len() <= digits as usize {
            format!("{}{}", "0".repeat(digits as usize + 1 - s.len()), s)
        } else {
            s
        };
        let (int_part, frac_part) = s.split_at(s.len() - digits as usize);
        let sign = if self.is_negative() { "-" } else { "" };
        Some(format!("{sign}{int_part}.{frac_part}"))
    }
}

impl fmt::Display for Rat {
    /// Canonical exact form: `p` when integral, `p/q` otherwise.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rat({self})")
    }
}

impl FromStr for Rat {
    type Err = RatParseError;

    /// Accepts three exact literal forms: integer (`-3`), finite decimal
    /// (`1.25`), and fraction (`4/3`). Whitespace is trimmed; anything else
    /// is rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| RatParseError {
            input: s.to_string(),
            reason,
        };
        let t = s.trim();
        if t.is_empty() {
            return Err(err("empty"));
        }
        let (neg, body) = match t.as_bytes()[0] {
            b'-' => (true, &t[1..]),
            b'+' => (false, &t[1..]),
            _ => (false, t),
        };
        if body.is_empty() {
            return Err(err("sign without digits"));
        }
        let all_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        let parse_int = |p: &str| -> Result<BigInt, RatParseError> {
            if !all_digits(p) {
                Err(err("expected digits"))
            } else {
                p.parse::<BigInt>().map_err(|_| err("expected digits"))
            }
        };
        let mag = if let Some((num, den)) = body.split_once('/') {
            let num = parse_int(num)?;
            let den = parse_int(den)?;
            if den.is_zero() {
                return Err(err("zero denominator"));
            }
            BigRational::new(num, den)
        } else if let Some((int_part, frac_part)) = body.split_once('.') {
            let int_part = parse_int(int_part)?;
            if !all_digits(frac_part) {
                return Err(err("expected digits after decimal point"));
            }
            let scale = BigInt::from(10).pow(frac_part.len() as u32);
            let frac = frac_part
                .parse::<BigInt>()
                .map_err(|_| err("expected digits after decimal point"))?;
            BigRational::new(int_part * &scale + frac, scale)
        } else {
            BigRational::from_integer(parse_int(body)?)
        };
        Ok(Rat(if neg { -mag } else { mag }))
    }
}

impl serde::Serialize for Rat {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Rat {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Rat;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an integer or an exact rational string like \"1.5\" or \"4/3\"")
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Rat, E> {
                Ok(Rat::from_int(v))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Rat, E> {
                Ok(Rat(BigRational::from_integer(BigInt::from(v))))
            }

            fn visit_f64<E: serde::de::Error>(self, _: f64) -> Result<Rat, E> {
                Err(E::custom(
                    "non-integer numbers are inexact; write them as decimal strings",
                ))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Rat, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat(self.0.$method(rhs.0))
            }
        }
        impl $trait<&Rat> for Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat(self.0.$method(&rhs.0))
            }
        }
        impl $trait<Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((&self.0).$method(rhs.0))
            }
        }
        impl $trait<&Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((&self.0).$method(&rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);

impl Div for Rat {
    type Output = Rat;
    fn div(self, rhs: Rat) -> Rat {
        assert!(!rhs.is_zero(), "division by zero");
        Rat(self.0 / rhs.0)
    }
}

impl Div<&Rat> for &Rat {
    type Output = Rat;
    fn div(self, rhs: &Rat) -> Rat {
        assert!(!rhs.is_zero(), "division by zero");
        Rat(&self.0 / &rhs.0)
    }
}

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

impl Neg for &Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-&self.0)
    }
}

impl AddAssign<&Rat> for Rat {
    fn add_assign(&mut self, rhs: &Rat) {
        self.0 += &rhs.0;
    }
}

impl AddAssign for Rat {
    fn add_assign(&mut self, rhs: Rat) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Rat> for Rat {
    fn sub_assign(&mut self, rhs: &Rat) {
        self.0 -= &rhs.0;
    }
}

impl Sum for Rat {
    fn sum<I: Iterator<Item = Rat>>(iter: I) -> Rat {
        iter.fold(Rat::zero(), |a, b| a + b)
    }
}

impl<'a> Sum<&'a Rat> for Rat {
    fn sum<I: Iterator<Item = &'a Rat>>(iter: I) -> Rat {
        iter.fold(Rat::zero(), |a, b| a + b)
    }
}

impl PartialEq<i64> for Rat {
    fn eq(&self, other: &i64) -> bool {
        *self == Rat::from_int(*other)
    }
}

impl PartialOrd<i64> for Rat {
    fn partial_cmp(&self, other: &i64) -> Option<Ordering> {
        self.partial_cmp(&Rat::from_int(*other))
    }
}
