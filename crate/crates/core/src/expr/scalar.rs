//! Exact scalar constants: rationals where possible, binary doubles otherwise.

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;

/// A numeric constant. Rational arithmetic is kept exact as long as both
/// operands are rational and nothing overflows; otherwise values degrade to
/// IEEE doubles.
#[derive(Debug, Clone, Copy)]
pub enum Scalar {
    Rat(Rational64),
    Float(f64),
}

#[allow(clippy::should_implement_trait)]
impl Scalar {
    pub const ZERO: Scalar = Scalar::Rat(Rational64::new_raw(0, 1));
    pub const ONE: Scalar = Scalar::Rat(Rational64::new_raw(1, 1));

    pub fn from_int(n: i64) -> Scalar {
        Scalar::Rat(Rational64::from_integer(n))
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Scalar::Rat(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Float(f) => f,
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_zero(),
            Scalar::Float(f) => f == 0.0,
        }
    }

    pub fn is_one(self) -> bool {
        match self {
            Scalar::Rat(r) => r == Rational64::from_integer(1),
            Scalar::Float(f) => f == 1.0,
        }
    }

    pub fn neg(self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(-r),
            Scalar::Float(f) => Scalar::Float(-f),
        }
    }

    pub fn add(self, other: Scalar) -> Scalar {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => match a.checked_add(&b) {
                Some(r) => Scalar::Rat(r),
                None => Scalar::Float(self.to_f64() + other.to_f64()),
            },
            _ => Scalar::Float(self.to_f64() + other.to_f64()),
        }
    }

    pub fn sub(self, other: Scalar) -> Scalar {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => match a.checked_sub(&b) {
                Some(r) => Scalar::Rat(r),
                None => Scalar::Float(self.to_f64() - other.to_f64()),
            },
            _ => Scalar::Float(self.to_f64() - other.to_f64()),
        }
    }

    pub fn mul(self, other: Scalar) -> Scalar {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => match a.checked_mul(&b) {
                Some(r) => Scalar::Rat(r),
                None => Scalar::Float(self.to_f64() * other.to_f64()),
            },
            _ => Scalar::Float(self.to_f64() * other.to_f64()),
        }
    }

    /// Exact division; `None` when the divisor is zero.
    pub fn div(self, other: Scalar) -> Option<Scalar> {
        if other.is_zero() {
            return None;
        }
        Some(match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => {
                let inv = Rational64::new(*b.denom(), *b.numer());
                match a.checked_mul(&inv) {
                    Some(r) => Scalar::Rat(r),
                    None => Scalar::Float(self.to_f64() / other.to_f64()),
                }
            }
            _ => Scalar::Float(self.to_f64() / other.to_f64()),
        })
    }

    /// Integer power; exponents are small in practice.
    pub fn powi(self, k: i32) -> Option<Scalar> {
        if k == 0 {
            return Some(Scalar::ONE);
        }
        match self {
            Scalar::Rat(r) => {
                if r.is_zero() && k < 0 {
                    return None;
                }
                let mut acc = Scalar::ONE;
                let base = if k > 0 {
                    Scalar::Rat(r)
                } else {
                    Scalar::Rat(Rational64::new(*r.denom(), *r.numer()))
                };
                for _ in 0..k.unsigned_abs() {
                    acc = acc.mul(base);
                }
                Some(acc)
            }
            Scalar::Float(f) => {
                if f == 0.0 && k < 0 {
                    return None;
                }
                Some(Scalar::Float(f.powi(k)))
            }
        }
    }

    pub fn abs(self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(r.abs()),
            Scalar::Float(f) => Scalar::Float(f.abs()),
        }
    }
}

/// Structural equality: rationals by value, floats by bit pattern.
impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a.cmp(b),
            (Scalar::Float(a), Scalar::Float(b)) => a.total_cmp(b),
            (Scalar::Rat(_), Scalar::Float(_)) => Ordering::Less,
            (Scalar::Float(_), Scalar::Rat(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::hash::Hash for Scalar {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Scalar::Rat(r) => {
                0u8.hash(state);
                r.numer().hash(state);
                r.denom().hash(state);
            }
            Scalar::Float(f) => {
                1u8.hash(state);
                f.to_bits().hash(state);
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Rat(r) => {
                if r.denom() == &1 {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Scalar::Float(x) => {
                if *x == std::f64::consts::PI {
                    write!(f, "pi")
                } else {
                    // `{:?}` round-trips doubles exactly through the parser.
                    write!(f, "{x:?}")
                }
            }
        }
    }
}
