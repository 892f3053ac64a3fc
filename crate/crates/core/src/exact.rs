//! Exact arithmetic: rationals, and the two-dimensional extension Q ⊕ Q·(1/π)
//! in which the planar potential kernel takes its values.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// 2^e for e ≥ 0.
pub fn pow2(e: u32) -> Q {
    Q::from_integer(BigInt::one() << e)
}

pub fn qpow(base: &Q, e: u32) -> Q {
    let mut out = Q::one();
    for _ in 0..e {
        out *= base;
    }
    out
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Very large numerators overflow the direct conversion.
        let n = x.numer().to_f64().unwrap_or(f64::INFINITY);
        let d = x.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

/// Nearest-ish rational to a finite float, exact binary expansion.
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).expect("finite float")
}

/// `rational + inv_pi / π`, both parts exact.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Exact {
    pub rational: Q,
    pub inv_pi: Q,
}

impl Exact {
    pub fn zero() -> Self {
        Exact {
            rational: Q::zero(),
            inv_pi: Q::zero(),
        }
    }

    pub fn one() -> Self {
        Exact::from(Q::one())
    }

    pub fn new(rational: Q, inv_pi: Q) -> Self {
        Exact { rational, inv_pi }
    }

    pub fn is_zero(&self) -> bool {
        self.rational.is_zero() && self.inv_pi.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.inv_pi.is_zero()
    }

    pub fn as_rational(&self) -> Option<&Q> {
        self.is_rational().then_some(&self.rational)
    }

    pub fn scale(&self, k: &Q) -> Self {
        Exact {
            rational: &self.rational * k,
            inv_pi: &self.inv_pi * k,
        }
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.rational) + to_f64(&self.inv_pi) / std::f64::consts::PI
    }

    /// Sign decided exactly when possible; otherwise by a float comparison of the
    /// two parts, which is unambiguous unless the value is within 1e-12 of zero.
    pub fn signum(&self) -> Ordering {
        if self.inv_pi.is_zero() {
            return self.rational.cmp(&Q::zero());
        }
        if self.rational.is_zero() {
            return self.inv_pi.cmp(&Q::zero());
        }
        if self.rational.is_positive() == self.inv_pi.is_positive() {
            return self.rational.cmp(&Q::zero());
        }
        self.to_f64().partial_cmp(&0.0).unwrap_or(Ordering::Equal)
    }

    pub fn abs(&self) -> Self {
        if self.signum() == Ordering::Less {
            -self.clone()
        } else {
            self.clone()
        }
    }
}

impl From<Q> for Exact {
    fn from(rational: Q) -> Self {
        Exact {
            rational,
            inv_pi: Q::zero(),
        }
    }
}

impl From<i64> for Exact {
    fn from(n: i64) -> Self {
        Exact::from(qi(n))
    }
}

impl Add for Exact {
    type Output = Exact;
    fn add(self, o: Exact) -> Exact {
        Exact {
            rational: self.rational + o.rational,
            inv_pi: self.inv_pi + o.inv_pi,
        }
    }
}

impl<'a> Add<&'a Exact> for &'a Exact {
    type Output = Exact;
    fn add(self, o: &Exact) -> Exact {
        Exact {
            rational: &self.rational + &o.rational,
            inv_pi: &self.inv_pi + &o.inv_pi,
        }
    }
}

impl AddAssign<&Exact> for Exact {
    fn add_assign(&mut self, o: &Exact) {
        self.rational += &o.rational;
        self.inv_pi += &o.inv_pi;
    }
}

impl Sub for Exact {
    type Output = Exact;
    fn sub(self, o: Exact) -> Exact {
        Exact {
            rational: self.rational - o.rational,
            inv_pi: self.inv_pi - o.inv_pi,
        }
    }
}

impl<'a> Sub<&'a Exact> for &'a Exact {
    type Output = Exact;
    fn sub(self, o: &Exact) -> Exact {
        Exact {
            rational: &self.rational - &o.rational,
            inv_pi: &self.inv_pi - &o.inv_pi,
        }
    }
}

impl Neg for Exact {
    type Output = Exact;
    fn neg(self) -> Exact {
        Exact {
            rational: -self.rational,
            inv_pi: -self.inv_pi,
        }
    }
}

impl Mul<&Q> for &Exact {
    type Output = Exact;
    fn mul(self, k: &Q) -> Exact {
        self.scale(k)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rational.is_zero(), self.inv_pi.is_zero()) {
            (_, true) => write!(f, "{}", self.rational),
            (true, false) => write!(f, "({})/pi", self.inv_pi),
            (false, false) => write!(f, "{} + ({})/pi", self.rational, self.inv_pi),
        }
    }
}
