//! Exact scalar arithmetic: big rationals, quadratic irrationals of the form
//! `a + b*sqrt(base)`, and certified rational bounds for `sqrt`, `exp` and `e`.
//!
//! Simulation code runs on `f64`; every inequality that a verification pass
//! asserts is evaluated here, either exactly (rationals, quadratic field
//! elements) or against a directed-rounded rational enclosure.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;

pub type Rat = BigRational;

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat_usize(n: usize) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion; every finite f64 is a dyadic rational.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_float(x)
}

pub fn rat_to_f64(x: &Rat) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Fall back to a scaled division when numerator/denominator overflow f64.
        let bits = 64i64;
        let num = x.numer();
        let den = x.denom();
        let shift = (den.bits() as i64 - bits).max(0) as u64;
        let n = (num >> shift).to_f64().unwrap_or(f64::MAX);
        let d = (den >> shift).to_f64().unwrap_or(f64::MAX);
        n / d
    })
}

/// Render as "p/q" (or "p" for integers); the inverse of [`parse_rat`].
pub fn rat_to_string(x: &Rat) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let num: BigInt = n.trim().parse().ok()?;
        let den: BigInt = d.trim().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        Some(Rat::new(num, den))
    } else if let Ok(n) = s.parse::<BigInt>() {
        Some(Rat::from_integer(n))
    } else {
        s.parse::<f64>().ok().and_then(Rat::from_float)
    }
}

/// Element `a + b*sqrt(base)` of a real quadratic extension of the rationals.
///
/// `base` is a fixed nonnegative rational per value; arithmetic requires both
/// operands to share it (a value with `b = 0` is compatible with any base).
/// Sign evaluation is exact, including bases that happen to be perfect
/// squares, so comparisons never round.
#[derive(Clone, Debug)]
pub struct Quad {
    pub a: Rat,
    pub b: Rat,
    pub base: Rat,
}

impl Quad {
    pub fn zero() -> Self {
        Quad {
            a: Rat::zero(),
            b: Rat::zero(),
            base: Rat::zero(),
        }
    }

    pub fn from_rat(a: Rat) -> Self {
        Quad {
            a,
            b: Rat::zero(),
            base: Rat::zero(),
        }
    }

    /// Folds `b*sqrt(base)` into the rational part when the base is a
    /// perfect rational square, so e.g. `sqrt(4)` compares as plain `2`.
    pub fn new(a: Rat, b: Rat, base: Rat) -> Self {
        assert!(!base.is_negative(), "quadratic base must be nonnegative");
        if !b.is_zero() {
            if let Some(root) = rat_sqrt_exact(&base) {
                return Quad {
                    a: a + b * root,
                    b: Rat::zero(),
                    base: Rat::zero(),
                };
            }
        }
        Quad { a, b, base }
    }

    pub fn sqrt_base(base: Rat) -> Self {
        assert!(!base.is_negative());
        Quad::new(Rat::zero(), Rat::one(), base)
    }

    fn unify_base(&self, other: &Quad) -> Rat {
        if self.b.is_zero() {
            other.base.clone()
        } else if other.b.is_zero() {
            self.base.clone()
        } else {
            assert_eq!(self.base, other.base, "mixed quadratic bases");
            self.base.clone()
        }
    }

    pub fn add(&self, other: &Quad) -> Quad {
        let base = self.unify_base(other);
        Quad {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
            base,
        }
    }

    pub fn sub(&self, other: &Quad) -> Quad {
        let base = self.unify_base(other);
        Quad {
            a: &self.a - &other.a,
            b: &self.b - &other.b,
            base,
        }
    }

    pub fn neg(&self) -> Quad {
        Quad {
            a: -self.a.clone(),
            b: -self.b.clone(),
            base: self.base.clone(),
        }
    }

    pub fn mul(&self, other: &Quad) -> Quad {
        let base = self.unify_base(other);
        // (a + b s)(c + d s) = ac + bd*base + (ad + bc) s
        let a = &self.a * &other.a + &self.b * &other.b * &base;
        let b = &self.a * &other.b + &self.b * &other.a;
        Quad { a, b, base }
    }

    pub fn scale(&self, k: &Rat) -> Quad {
        Quad {
            a: &self.a * k,
            b: &self.b * k,
            base: self.base.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign() == 0
    }

    /// Exact sign of `a + b*sqrt(base)`.
    pub fn sign(&self) -> i8 {
        let sa = rat_sign(&self.a);
        if self.b.is_zero() || self.base.is_zero() {
            return sa;
        }
        let sb = rat_sign(&self.b);
        if sa == 0 {
            return sb;
        }
        if sa == sb {
            return sa;
        }
        // Opposite signs: compare a^2 with b^2 * base.
        let lhs = &self.a * &self.a;
        let rhs = &self.b * &self.b * &self.base;
        match lhs.cmp(&rhs) {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            Ordering::Equal => 0,
        }
    }

    pub fn cmp_quad(&self, other: &Quad) -> Ordering {
        match self.sub(other).sign() {
            1 => Ordering::Greater,
            -1 => Ordering::Less,
            _ => Ordering::Equal,
        }
    }

    pub fn le(&self, other: &Quad) -> bool {
        self.cmp_quad(other) != Ordering::Greater
    }

    pub fn abs(&self) -> Quad {
        if self.sign() < 0 {
            self.neg()
        } else {
            self.clone()
        }
    }

    pub fn to_f64(&self) -> f64 {
        rat_to_f64(&self.a) + rat_to_f64(&self.b) * rat_to_f64(&self.base).sqrt()
    }

    /// Exact `mu^k` where `mu = sqrt(base)` and `k >= 0`.
    pub fn sqrt_pow(base: &Rat, k: u32) -> Quad {
        let half = base.pow((k / 2) as i32);
        if k.is_multiple_of(2) {
            Quad::from_rat(half)
        } else {
            Quad::new(Rat::zero(), half, base.clone())
        }
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.b.is_zero() {
            write!(f, "{}", rat_to_string(&self.a))
        } else {
            write!(
                f,
                "{} + {}*sqrt({})",
                rat_to_string(&self.a),
                rat_to_string(&self.b),
                rat_to_string(&self.base)
            )
        }
    }
}

pub fn rat_sign(x: &Rat) -> i8 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}

/// Exact rational square root, when one exists.
pub fn rat_sqrt_exact(x: &Rat) -> Option<Rat> {
    if x.is_negative() {
        return None;
    }
    let sq = |m: &BigUint| -> Option<BigUint> {
        let r = m.sqrt();
        (&r * &r == *m).then_some(r)
    };
    let n = sq(x.numer().magnitude())?;
    let d = sq(x.denom().magnitude())?;
    Some(Rat::new(
        BigInt::from_biguint(Sign::Plus, n),
        BigInt::from_biguint(Sign::Plus, d),
    ))
}

/// Rational enclosure `lo <= sqrt(x) <= hi` with `hi - lo <= 2^-prec_bits`.
pub fn sqrt_bounds(x: &Rat, prec_bits: u32) -> (Rat, Rat) {
    assert!(!x.is_negative());
    if x.is_zero() {
        return (Rat::zero(), Rat::zero());
    }
    // sqrt(p/q) = sqrt(p q) / q; floor-isqrt of p*q*4^k gives the scaled floor.
    let p = x.numer().magnitude().clone();
    let q = x.denom().magnitude().clone();
    let scale = BigUint::one() << (2 * prec_bits as usize);
    let s = (&p * &q * &scale).sqrt();
    let den = BigInt::from(q) * (BigInt::one() << prec_bits as usize);
    let lo = Rat::new(BigInt::from_biguint(Sign::Plus, s.clone()), den.clone());
    let hi = Rat::new(BigInt::from_biguint(Sign::Plus, s + BigUint::one()), den);
    (lo, hi)
}

/// Rational enclosure of `exp(c)` for `c >= 0` via the Taylor series with a
/// certified geometric tail bound. Requires `c < terms + 1`.
pub fn exp_bounds(c: &Rat, terms: usize) -> (Rat, Rat) {
    assert!(!c.is_negative());
    let mut sum = Rat::one();
    let mut term = Rat::one();
    for k in 1..=terms {
        term = term * c / rat_usize(k);
        sum += &term;
    }
    // Tail: sum_{k>K} c^k/k! <= term_{K} * (c/(K+1)) / (1 - c/(K+2)).
    let next = &term * c / rat_usize(terms + 1);
    let ratio = c / rat_usize(terms + 2);
    assert!(ratio < Rat::one(), "increase term count for exp_bounds");
    let tail = &next / (Rat::one() - ratio);
    (sum.clone(), sum + tail)
}

/// Rational enclosure of Euler's number.
pub fn euler_bounds(terms: usize) -> (Rat, Rat) {
    exp_bounds(&Rat::one(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_sign_exact() {
        // 7 - 3*sqrt(5) > 0 since 49 > 45; 2 - sqrt(5) < 0.
        let pos = Quad::new(rat_int(7), rat_int(-3), rat_int(5));
        assert_eq!(pos.sign(), 1);
        let neg = Quad::new(rat_int(2), rat_int(-1), rat_int(5));
        assert_eq!(neg.sign(), -1);
        // -2 + sqrt(4) = 0 exactly.
        let zero = Quad::new(rat_int(-2), rat_int(1), rat_int(4));
        assert_eq!(zero.sign(), 0);
    }

    #[test]
    fn quad_mul_matches_field_rule() {
        // (1 + sqrt(2))^2 = 3 + 2 sqrt(2)
        let x = Quad::new(rat_int(1), rat_int(1), rat_int(2));
        let sq = x.mul(&x);
        assert_eq!(sq.a, rat_int(3));
        assert_eq!(sq.b, rat_int(2));
    }

    #[test]
    fn sqrt_pow_parity() {
        let base = rat_int(5);
        assert_eq!(Quad::sqrt_pow(&base, 0).a, rat_int(1));
        assert_eq!(Quad::sqrt_pow(&base, 2).a, rat_int(5));
        let odd = Quad::sqrt_pow(&base, 3);
        assert_eq!(odd.b, rat_int(5));
        assert_eq!(odd.sign(), 1);
        assert!((odd.to_f64() - 5f64.powf(1.5)).abs() < 1e-12);
        // Perfect-square bases normalize to plain rationals.
        let sq = Quad::sqrt_pow(&rat_int(9), 3);
        assert_eq!(sq.a, rat_int(27));
        assert!(sq.b.is_zero());
    }

    #[test]
    fn sqrt_bounds_bracket() {
        let (lo, hi) = sqrt_bounds(&rat_int(5), 80);
        assert!(lo.clone() * lo.clone() <= rat_int(5));
        assert!(hi.clone() * hi.clone() >= rat_int(5));
        assert!(rat_to_f64(&(hi - lo)) < 1e-20);
    }

    #[test]
    fn euler_enclosure() {
        let (lo, hi) = euler_bounds(40);
        let e = std::f64::consts::E;
        assert!(rat_to_f64(&lo) <= e && e <= rat_to_f64(&hi));
        assert!(rat_to_f64(&(hi - lo)) < 1e-40);
    }

    #[test]
    fn rat_string_round_trip() {
        let x = rat(-22, 7);
        assert_eq!(parse_rat(&rat_to_string(&x)).unwrap(), x);
        assert_eq!(parse_rat("3").unwrap(), rat_int(3));
        assert_eq!(parse_rat("0.25").unwrap(), rat(1, 4));
    }
}
