//! Numeric constants carried by expression leaves.
//!
//! Literals are kept as exact rationals while the arithmetic stays inside
//! `i128`; anything that overflows (or involves a transcendental value)
//! degrades to an `f64`.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, One, Signed, Zero};

pub type Rational = Ratio<i128>;

#[derive(Clone, Copy, Debug)]
pub enum Num {
    Rat(Rational),
    Real(f64),
}

impl Num {
    pub const ZERO: Num = Num::Rat(Ratio::new_raw(0, 1));
    pub const ONE: Num = Num::Rat(Ratio::new_raw(1, 1));

    pub fn int(v: i64) -> Num {
        Num::Rat(Rational::from_integer(v as i128))
    }

    pub fn ratio(num: i64, den: i64) -> Num {
        assert!(den != 0, "zero denominator");
        Num::Rat(Rational::new(num as i128, den as i128))
    }

    pub fn real(v: f64) -> Num {
        Num::Real(v)
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Num::Rat(r) => {
                let (n, d) = (*r.numer(), *r.denom());
                if d == 1 {
                    n as f64
                } else {
                    n as f64 / d as f64
                }
            }
            Num::Real(v) => v,
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            Num::Rat(r) => r.is_zero(),
            Num::Real(v) => v == 0.0,
        }
    }

    pub fn is_one(self) -> bool {
        match self {
            Num::Rat(r) => r.is_one(),
            Num::Real(v) => v == 1.0,
        }
    }

    pub fn is_negative(self) -> bool {
        match self {
            Num::Rat(r) => r.is_negative(),
            Num::Real(v) => v < 0.0,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Num::Rat(_))
    }

    pub fn neg(self) -> Num {
        match self {
            Num::Rat(r) => Num::Rat(-r),
            Num::Real(v) => Num::Real(-v),
        }
    }

    pub fn abs(self) -> Num {
        if self.is_negative() {
            self.neg()
        } else {
            self
        }
    }

    pub fn add(self, other: Num) -> Num {
        match (self, other) {
            (Num::Rat(a), Num::Rat(b)) => match a.checked_add(&b) {
                Some(r) => Num::Rat(r),
                None => Num::Real(self.to_f64() + other.to_f64()),
            },
            _ => Num::Real(self.to_f64() + other.to_f64()),
        }
    }

    pub fn mul(self, other: Num) -> Num {
        match (self, other) {
            (Num::Rat(a), Num::Rat(b)) => match a.checked_mul(&b) {
                Some(r) => Num::Rat(r),
                None => Num::Real(self.to_f64() * other.to_f64()),
            },
            _ => Num::Real(self.to_f64() * other.to_f64()),
        }
    }

    /// `None` when dividing by an exact zero.
    pub fn div(self, other: Num) -> Option<Num> {
        if other.is_zero() {
            return None;
        }
        Some(match (self, other) {
            (Num::Rat(a), Num::Rat(b)) => match a.checked_div(&b) {
                Some(r) => Num::Rat(r),
                None => Num::Real(self.to_f64() / other.to_f64()),
            },
            _ => Num::Real(self.to_f64() / other.to_f64()),
        })
    }

    /// Integer power; `None` for a negative power of zero.
    pub fn powi(self, k: i32) -> Option<Num> {
        if k < 0 && self.is_zero() {
            return None;
        }
        match self {
            Num::Rat(r) => {
                let mut acc = Rational::one();
                let base = if k < 0 { r.recip() } else { r };
                for _ in 0..k.unsigned_abs() {
                    match acc.checked_mul(&base) {
                        Some(v) => acc = v,
                        None => return Some(Num::Real(self.to_f64().powi(k))),
                    }
                }
                Some(Num::Rat(acc))
            }
            Num::Real(v) => Some(Num::Real(v.powi(k))),
        }
    }

    /// Parse a decimal literal (`12`, `0.25`, `1.5e-3`), exactly when it fits.
    pub fn parse_decimal(text: &str) -> Option<Num> {
        let (mantissa, exponent) = match text.find(['e', 'E']) {
            Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
            None => (text, 0),
        };
        let (int_part, frac_part) = match mantissa.find('.') {
            Some(pos) => (&mantissa[..pos], &mantissa[pos + 1..]),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        let digits: String = format!("{int_part}{frac_part}");
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let scale = exponent - frac_part.len() as i32;
        let significant = digits.trim_start_matches('0');
        if significant.len() <= 30 && scale.abs() <= 30 {
            let n: i128 = if significant.is_empty() { 0 } else { significant.parse().ok()? };
            let p = 10i128.checked_pow(scale.unsigned_abs())?;
            let r = if scale >= 0 {
                Rational::from_integer(n.checked_mul(p)?)
            } else {
                Rational::new(n, p)
            };
            return Some(Num::Rat(r));
        }
        text.parse::<f64>().ok().map(Num::Real)
    }

    pub fn total_cmp(&self, other: &Num) -> Ordering {
        match (self, other) {
            (Num::Rat(a), Num::Rat(b)) => a.cmp(b),
            (Num::Rat(_), Num::Real(_)) => Ordering::Less,
            (Num::Real(_), Num::Rat(_)) => Ordering::Greater,
            (Num::Real(a), Num::Real(b)) => a.total_cmp(b),
        }
    }
}

impl PartialEq for Num {
    fn eq(&self, other: &Num) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for Num {}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Rat(r) => {
                if r.is_integer() {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Num::Real(v) => {
                // `{:?}` is the shortest representation that round-trips.
                let s = format!("{v:?}");
                f.write_str(&s)
            }
        }
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Num {
        Num::Real(v)
    }
}

impl From<i64> for Num {
    fn from(v: i64) -> Num {
        Num::int(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!(Num::parse_decimal("0.25"), Some(Num::ratio(1, 4)));
        assert_eq!(Num::parse_decimal("9.81"), Some(Num::ratio(981, 100)));
        assert_eq!(Num::parse_decimal("12"), Some(Num::int(12)));
        assert_eq!(Num::parse_decimal("1.5e-3"), Some(Num::ratio(3, 2000)));
        assert_eq!(Num::parse_decimal("2E2"), Some(Num::int(200)));
        assert!(Num::parse_decimal("1e-300").unwrap().to_f64() > 0.0);
        assert!(Num::parse_decimal(".").is_none());
    }

    #[test]
    fn overflow_degrades_to_real() {
        let big = Num::Rat(Rational::from_integer(i128::MAX / 2));
        let prod = big.mul(big);
        assert!(!prod.is_exact());
        assert!((prod.to_f64() - (i128::MAX / 2) as f64 * (i128::MAX / 2) as f64).abs() < 1e20);
    }

    #[test]
    fn powers() {
        assert_eq!(Num::ratio(2, 3).powi(-2), Some(Num::ratio(9, 4)));
        assert_eq!(Num::ZERO.powi(-1), None);
        assert_eq!(Num::int(5).powi(0), Some(Num::ONE));
    }

    #[test]
    fn display_round_trip() {
        assert_eq!(Num::ratio(-3, 7).to_string(), "-3/7");
        assert_eq!(Num::real(0.1).to_string(), "0.1");
        assert_eq!(Num::real(1e-20).to_string(), "1e-20");
    }
}
