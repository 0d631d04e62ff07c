//! The coefficient field: ratios of polynomials in `s1, s2, s3`.

use num_rational::BigRational;
use num_traits::Zero;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::poly::{Param, Poly, N_PARAMS};
use crate::scalar::{ExactField, ExactRing};

/// A reduced ratio of two parameter polynomials.
///
/// Invariants: the denominator is nonzero, numerator and denominator are
/// coprime, and the denominator is integer-primitive with a positive
/// lexicographically-leading coefficient. Structural equality is therefore
/// field equality.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RatFunc {
    num: Poly<BigRational>,
    den: Poly<BigRational>,
}

impl RatFunc {
    pub fn new(num: Poly<BigRational>, den: Poly<BigRational>) -> RatFunc {
        assert!(!den.is_zero(), "zero denominator");
        RatFunc { num, den }.normalized()
    }

    pub fn from_poly(num: Poly<BigRational>) -> RatFunc {
        RatFunc {
            num,
            den: Poly::one(),
        }
    }

    pub fn constant(c: BigRational) -> RatFunc {
        RatFunc::from_poly(Poly::constant(c))
    }

    pub fn from_i64(n: i64) -> RatFunc {
        use num_traits::FromPrimitive;
        RatFunc::constant(BigRational::from_i64(n).unwrap())
    }

    pub fn rational(p: i64, q: i64) -> RatFunc {
        use num_traits::FromPrimitive;
        RatFunc::constant(
            BigRational::from_i64(p).unwrap() / BigRational::from_i64(q).unwrap(),
        )
    }

    pub fn var(p: Param) -> RatFunc {
        RatFunc::from_poly(Poly::var(p))
    }

    pub fn zero() -> RatFunc {
        RatFunc::from_poly(Poly::zero())
    }

    pub fn one() -> RatFunc {
        RatFunc::from_poly(Poly::one())
    }

    fn normalized(self) -> RatFunc {
        let RatFunc { mut num, mut den } = self;
        if num.is_zero() {
            return RatFunc {
                num: Poly::zero(),
                den: Poly::one(),
            };
        }
        let g = num.gcd(&den);
        if !g.as_constant().map(|c| c.is_zero()).unwrap_or(false) && g != Poly::one() {
            num = num.div_exact(&g).expect("gcd divides numerator");
            den = den.div_exact(&g).expect("gcd divides denominator");
        }
        // Scale so the denominator is primitive with positive leading
        // coefficient.
        let canon = den.monic_primitive();
        let lead_den = den.leading().map(|(_, c)| c.clone()).unwrap();
        let lead_canon = canon.leading().map(|(_, c)| c.clone()).unwrap();
        let r = lead_den / lead_canon;
        debug_assert!(!r.is_zero());
        let rinv = BigRational::from_integer(1.into()) / r;
        num = num.scale(&rinv);
        RatFunc { num, den: canon }
    }

    pub fn num(&self) -> &Poly<BigRational> {
        &self.num
    }

    pub fn den(&self) -> &Poly<BigRational> {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num == Poly::one() && self.den == Poly::one()
    }

    pub fn is_constant(&self) -> bool {
        self.num.is_constant() && self.den.is_constant()
    }

    pub fn as_rational(&self) -> Option<BigRational> {
        match (self.num.as_constant(), self.den.as_constant()) {
            (Some(n), Some(d)) if !d.is_zero() => Some(n / d),
            _ => None,
        }
    }

    pub fn inv(&self) -> RatFunc {
        assert!(!self.is_zero(), "inverse of zero");
        RatFunc::new(self.den.clone(), self.num.clone())
    }

    pub fn pow(&self, n: i32) -> RatFunc {
        let base = if n < 0 { self.inv() } else { self.clone() };
        let mut acc = RatFunc::one();
        for _ in 0..n.unsigned_abs() {
            acc = &acc * &base;
        }
        acc
    }

    /// Evaluate at numeric parameter values; `None` when the denominator
    /// magnitude falls below `den_floor`.
    pub fn eval_guarded(&self, vals: &[f64; N_PARAMS], den_floor: f64) -> Option<f64> {
        let d = self.den.eval(vals);
        if d.abs() <= den_floor {
            return None;
        }
        Some(self.num.eval(vals) / d)
    }

    pub fn eval(&self, vals: &[f64; N_PARAMS]) -> f64 {
        self.num.eval(vals) / self.den.eval(vals)
    }

    /// Substitute exact rational values for a subset of parameters.
    pub fn substitute(&self, vals: &[Option<BigRational>; N_PARAMS]) -> RatFunc {
        let num = self.num.substitute(vals);
        let den = self.den.substitute(vals);
        assert!(
            !den.is_zero(),
            "parameter substitution hit a pole: {} at {:?}",
            self,
            vals
        );
        RatFunc::new(num, den)
    }

    /// A crude size measure (term counts), used for pivot selection.
    pub fn size(&self) -> usize {
        self.num.num_terms() + self.den.num_terms()
    }
}

impl Add for &RatFunc {
    type Output = RatFunc;
    fn add(self, rhs: &RatFunc) -> RatFunc {
        RatFunc::new(
            &(&self.num * &rhs.den) + &(&rhs.num * &self.den),
            &self.den * &rhs.den,
        )
    }
}

impl Sub for &RatFunc {
    type Output = RatFunc;
    fn sub(self, rhs: &RatFunc) -> RatFunc {
        RatFunc::new(
            &(&self.num * &rhs.den) - &(&rhs.num * &self.den),
            &self.den * &rhs.den,
        )
    }
}

impl Mul for &RatFunc {
    type Output = RatFunc;
    fn mul(self, rhs: &RatFunc) -> RatFunc {
        if self.is_zero() || rhs.is_zero() {
            return RatFunc::zero();
        }
        RatFunc::new(&self.num * &rhs.num, &self.den * &rhs.den)
    }
}

impl Div for &RatFunc {
    type Output = RatFunc;
    fn div(self, rhs: &RatFunc) -> RatFunc {
        self * &rhs.inv()
    }
}

impl Neg for &RatFunc {
    type Output = RatFunc;
    fn neg(self) -> RatFunc {
        RatFunc {
            num: -&self.num,
            den: self.den.clone(),
        }
    }
}

impl fmt::Display for RatFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == Poly::one() {
            write!(f, "{}", self.num)
        } else {
            let num_paren = self.num.num_terms() > 1;
            let den_paren = self.den.num_terms() > 1;
            match (num_paren, den_paren) {
                (false, false) => write!(f, "{}/{}", self.num, self.den),
                (true, false) => write!(f, "({})/{}", self.num, self.den),
                (false, true) => write!(f, "{}/({})", self.num, self.den),
                (true, true) => write!(f, "({})/({})", self.num, self.den),
            }
        }
    }
}

macro_rules! byvalue_ops {
    ($t:ty, $($op:ident :: $m:ident),*) => {
        $(impl std::ops::$op for $t {
            type Output = $t;
            fn $m(self, rhs: $t) -> $t {
                (&self).$m(&rhs)
            }
        })*
    };
}

byvalue_ops!(RatFunc, Add::add, Sub::sub, Mul::mul, Div::div);

impl Neg for RatFunc {
    type Output = RatFunc;
    fn neg(self) -> RatFunc {
        -&self
    }
}

impl num_traits::Zero for RatFunc {
    fn zero() -> Self {
        RatFunc::zero()
    }
    fn is_zero(&self) -> bool {
        RatFunc::is_zero(self)
    }
}

impl num_traits::One for RatFunc {
    fn one() -> Self {
        RatFunc::one()
    }
    fn is_one(&self) -> bool {
        RatFunc::is_one(self)
    }
}

impl ExactRing for RatFunc {
    fn div_exact(&self, rhs: &Self) -> Option<Self> {
        if RatFunc::is_zero(rhs) {
            None
        } else {
            Some(self / rhs)
        }
    }
    fn size(&self) -> usize {
        RatFunc::size(self)
    }
}

impl ExactField for RatFunc {
    fn inv(&self) -> Self {
        RatFunc::inv(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_canonical() {
        let s1 = RatFunc::var(Param::S1);
        let s2 = RatFunc::var(Param::S2);
        // (s1^2 - s2^2) / (s1 + s2) == s1 - s2
        let a = &(&(&s1 * &s1) - &(&s2 * &s2)) / &(&s1 + &s2);
        assert_eq!(a, &s1 - &s2);
    }

    #[test]
    fn denominator_sign_convention() {
        let s1 = RatFunc::var(Param::S1);
        // 1 / (-s1) must normalize to (-1)/s1.
        let a = &RatFunc::one() / &(-&s1);
        assert_eq!(a.den(), RatFunc::var(Param::S1).num());
        assert_eq!(&(-&a), &(&RatFunc::one() / &s1));
    }

    #[test]
    fn scale_normalization() {
        let s1 = RatFunc::var(Param::S1);
        let two = RatFunc::from_i64(2);
        // (2 s1) / 2 == s1 with denominator 1.
        let a = &(&two * &s1) / &two;
        assert_eq!(a, s1);
        // s1 / (2 s1 + 2) has primitive denominator s1 + 1.
        let b = &s1 / &(&(&two * &s1) + &two);
        assert_eq!(b.den().num_terms(), 2);
        assert_eq!(
            b,
            &RatFunc::rational(1, 2) * &(&s1 / &(&s1 + &RatFunc::one()))
        );
    }

    #[test]
    fn field_laws_spot() {
        let s1 = RatFunc::var(Param::S1);
        let s3 = RatFunc::var(Param::S3);
        let x = &(&s1 + &RatFunc::one()) / &s3;
        let y = &s3 / &(&s1 - &RatFunc::from_i64(2));
        let z = &x * &y;
        assert_eq!(&z / &y, x);
        assert_eq!(&(&x + &y) - &y, x);
    }
}
