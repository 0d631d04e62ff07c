//! Scalar traits for the generic algebraic core.
//!
//! The symbolic layers are generic over the coefficient scalar via
//! `num-traits`; the crate root pins concrete aliases (exact rationals for
//! all symbolic work, `f64` for the numeric oracle lane).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt::Debug;
use std::ops::{Div, Mul, Neg, Sub};

/// Coefficient scalar of the polynomial and trigonometric layers.
pub trait Coeff:
    Clone
    + PartialEq
    + Debug
    + Signed
    + Neg<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
}

impl<T> Coeff for T where
    T: Clone
        + PartialEq
        + Debug
        + Signed
        + Neg<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
{
}

/// Lossy conversion into `f64` for the numeric evaluation lane.
pub trait ToF64 {
    fn to_f64(&self) -> f64;
}

impl ToF64 for f64 {
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl ToF64 for BigInt {
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl ToF64 for BigRational {
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Ring element with exact equality, enough for fraction-free elimination.
pub trait ExactRing:
    Clone + PartialEq + Debug + Zero + One + Neg<Output = Self> + Sub<Output = Self>
{
    /// Exact division; `None` when `rhs` does not divide `self`.
    fn div_exact(&self, rhs: &Self) -> Option<Self>;
    /// A crude size measure used to pick small pivots.
    fn size(&self) -> usize {
        1
    }
}

/// Field element: division away from zero always succeeds.
pub trait ExactField: ExactRing {
    fn inv(&self) -> Self;
}

impl ExactRing for BigRational {
    fn div_exact(&self, rhs: &Self) -> Option<Self> {
        if rhs.is_zero() {
            None
        } else {
            Some(self / rhs)
        }
    }
    fn size(&self) -> usize {
        (self.numer().bits() + self.denom().bits()) as usize
    }
}

impl ExactField for BigRational {
    fn inv(&self) -> Self {
        BigRational::one() / self.clone()
    }
}
