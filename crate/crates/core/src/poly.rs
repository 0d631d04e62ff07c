//! Sparse polynomials in the three scale parameters `s1, s2, s3`.
//!
//! Generic over the coefficient scalar; the crate-level alias instantiates
//! them at arbitrary-precision rationals so every identity is decided exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::Coeff;

pub const N_PARAMS: usize = 3;

/// Parameter symbols.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Param {
    S1 = 0,
    S2 = 1,
    S3 = 2,
}

pub const ALL_PARAMS: [Param; N_PARAMS] = [Param::S1, Param::S2, Param::S3];

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::S1 => "s1",
            Param::S2 => "s2",
            Param::S3 => "s3",
        }
    }

    pub fn from_name(s: &str) -> Option<Param> {
        ALL_PARAMS.iter().copied().find(|p| p.name() == s)
    }
}

pub type ParamExp = [u8; N_PARAMS];

/// Sparse multivariate polynomial in `s1, s2, s3`.
///
/// Invariant: no zero coefficients are stored, so structural equality is
/// polynomial equality.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Poly<T> {
    terms: BTreeMap<ParamExp, T>,
}

impl<T: Coeff> Poly<T> {
    pub fn zero() -> Poly<T> {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: T) -> Poly<T> {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert([0, 0, 0], c);
        }
        Poly { terms }
    }

    pub fn one() -> Poly<T> {
        Poly::constant(T::one())
    }

    pub fn var(p: Param) -> Poly<T> {
        let mut exp = [0u8; N_PARAMS];
        exp[p as usize] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(exp, T::one());
        Poly { terms }
    }

    pub fn monomial(exp: ParamExp, c: T) -> Poly<T> {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(exp, c);
        }
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.terms.contains_key(&[0, 0, 0]))
    }

    pub fn as_constant(&self) -> Option<T> {
        if self.terms.is_empty() {
            return Some(T::zero());
        }
        if self.terms.len() == 1 {
            if let Some(c) = self.terms.get(&[0, 0, 0]) {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn terms(&self) -> impl Iterator<Item = (&ParamExp, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self, p: Param) -> u8 {
        self.terms
            .keys()
            .map(|e| e[p as usize])
            .max()
            .unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&d| d as u32).sum())
            .max()
            .unwrap_or(0)
    }

    fn insert_term(&mut self, exp: ParamExp, c: T) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exp) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get().clone() + c;
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    /// Leading term in lexicographic exponent order.
    pub fn leading(&self) -> Option<(&ParamExp, &T)> {
        self.terms.iter().next_back()
    }

    pub fn map_coeffs<U: Coeff, F: Fn(&T) -> U>(&self, f: F) -> Poly<U> {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            out.insert_term(*e, f(c));
        }
        out
    }

    pub fn scale(&self, c: &T) -> Poly<T> {
        if c.is_zero() {
            return Poly::zero();
        }
        self.map_coeffs(|x| x.clone() * c.clone())
    }

    pub fn pow(&self, n: u32) -> Poly<T> {
        let mut acc = Poly::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    pub fn eval(&self, vals: &[f64; N_PARAMS]) -> f64
    where
        T: crate::scalar::ToF64,
    {
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut t = c.to_f64();
            for (i, &d) in e.iter().enumerate() {
                t *= vals[i].powi(d as i32);
            }
            acc += t;
        }
        acc
    }

    /// Substitute exact values for a subset of the parameters.
    pub fn substitute(&self, vals: &[Option<T>; N_PARAMS]) -> Poly<T> {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let mut coeff = c.clone();
            let mut exp = *e;
            for i in 0..N_PARAMS {
                if let Some(v) = &vals[i] {
                    for _ in 0..e[i] {
                        coeff = coeff * v.clone();
                    }
                    exp[i] = 0;
                }
            }
            out.insert_term(exp, coeff);
        }
        out
    }

    /// Exact division; `None` if `self` is not a multiple of `d`.
    pub fn div_exact(&self, d: &Poly<T>) -> Option<Poly<T>> {
        assert!(!d.is_zero(), "division by the zero polynomial");
        let mut rem = self.clone();
        let mut quo = Poly::zero();
        let (dexp, dc) = d.leading().map(|(e, c)| (*e, c.clone())).unwrap();
        while !rem.is_zero() {
            let (rexp, rc) = rem.leading().map(|(e, c)| (*e, c.clone())).unwrap();
            let mut qexp = [0u8; N_PARAMS];
            for i in 0..N_PARAMS {
                if rexp[i] < dexp[i] {
                    return None;
                }
                qexp[i] = rexp[i] - dexp[i];
            }
            let qc = rc / dc.clone();
            let qt = Poly::monomial(qexp, qc);
            rem = &rem - &(&qt * d);
            if let Some((e2, _)) = rem.leading() {
                if *e2 >= rexp {
                    return None;
                }
            }
            quo = &quo + &qt;
        }
        Some(quo)
    }
}

impl<'a, T: Coeff> Add for &'a Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: &'a Poly<T>) -> Poly<T> {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.insert_term(*e, c.clone());
        }
        out
    }
}

impl<'a, T: Coeff> Sub for &'a Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: &'a Poly<T>) -> Poly<T> {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.insert_term(*e, -c.clone());
        }
        out
    }
}

impl<'a, T: Coeff> Mul for &'a Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &'a Poly<T>) -> Poly<T> {
        let mut out = Poly::zero();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let mut e = [0u8; N_PARAMS];
                for i in 0..N_PARAMS {
                    e[i] = e1[i]
                        .checked_add(e2[i])
                        .expect("parameter exponent overflow");
                }
                out.insert_term(e, c1.clone() * c2.clone());
            }
        }
        out
    }
}

impl<T: Coeff> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.map_coeffs(|c| -c.clone())
    }
}

impl<T: Coeff> fmt::Display for Poly<T>
where
    T: fmt::Display,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            let mut parts: Vec<String> = Vec::new();
            let trivial_coeff = {
                let mut probe = Poly::<T>::zero();
                probe.insert_term([0, 0, 0], c.clone());
                probe == Poly::one() && *e != [0, 0, 0]
            };
            if !trivial_coeff {
                parts.push(format!("{}", c));
            }
            for (i, &d) in e.iter().enumerate() {
                if d == 1 {
                    parts.push(ALL_PARAMS[i].name().to_string());
                } else if d > 1 {
                    parts.push(format!("{}^{}", ALL_PARAMS[i].name(), d));
                }
            }
            if parts.is_empty() {
                parts.push(format!("{}", c));
            }
            f.write_str(&parts.join("*"))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Exact gcd machinery, specific to rational coefficients.
// ---------------------------------------------------------------------------

type PolyZ = Poly<BigInt>;

impl Poly<BigRational> {
    /// Clear denominators: returns (integer polynomial, common denominator).
    fn to_integer(&self) -> (PolyZ, BigInt) {
        use num_integer::Integer;
        let mut den = BigInt::one();
        for c in self.terms.values() {
            den = den.lcm(c.denom());
        }
        let mut out = PolyZ::zero();
        for (e, c) in &self.terms {
            let v = c.numer() * (&den / c.denom());
            out.insert_term(*e, v);
        }
        (out, den)
    }

    fn from_integer(p: &PolyZ) -> Poly<BigRational> {
        p.map_coeffs(|c| BigRational::from(c.clone()))
    }

    /// Monic-free gcd: primitive, with positive lexicographically-leading
    /// coefficient. `gcd(0, 0) = 0`.
    pub fn gcd(&self, other: &Poly<BigRational>) -> Poly<BigRational> {
        if self.is_zero() {
            return other.monic_primitive();
        }
        if other.is_zero() {
            return self.monic_primitive();
        }
        let (a, _) = self.to_integer();
        let (b, _) = other.to_integer();
        let g = gcd_int(&a, &b, 0);
        Poly::from_integer(&g)
    }

    /// Primitive part with positive leading coefficient (sign convention).
    pub fn monic_primitive(&self) -> Poly<BigRational> {
        if self.is_zero() {
            return Poly::zero();
        }
        let (a, _) = self.to_integer();
        let mut p = primitive_part(&a);
        if p.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
            p = -&p;
        }
        Poly::from_integer(&p)
    }
}

fn content(p: &PolyZ) -> BigInt {
    use num_integer::Integer;
    let mut g = BigInt::zero();
    for c in p.terms.values() {
        g = g.gcd(c);
        if g.is_one() {
            break;
        }
    }
    g
}

fn primitive_part(p: &PolyZ) -> PolyZ {
    let c = content(p);
    if c.is_zero() || c.is_one() {
        return p.clone();
    }
    p.map_coeffs(|x| x / &c)
}

/// View an integer polynomial as univariate in parameter `v` with integer
/// polynomial coefficients (in the remaining parameters).
fn to_univariate(p: &PolyZ, v: usize) -> Vec<PolyZ> {
    let deg = p.terms.keys().map(|e| e[v]).max().unwrap_or(0) as usize;
    let mut coeffs = vec![PolyZ::zero(); deg + 1];
    for (e, c) in &p.terms {
        let mut e2 = *e;
        let d = e2[v] as usize;
        e2[v] = 0;
        coeffs[d].insert_term(e2, c.clone());
    }
    coeffs
}

fn from_univariate(coeffs: &[PolyZ], v: usize) -> PolyZ {
    let mut out = PolyZ::zero();
    for (d, c) in coeffs.iter().enumerate() {
        for (e, x) in &c.terms {
            let mut e2 = *e;
            e2[v] = d as u8;
            out.insert_term(e2, x.clone());
        }
    }
    out
}

fn deg_of(coeffs: &[PolyZ]) -> Option<usize> {
    coeffs.iter().rposition(|c| !c.is_zero())
}

/// Multivariate integer gcd by primitive pseudo-remainder sequences,
/// recursing over the parameters starting at index `v`.
fn gcd_int(a: &PolyZ, b: &PolyZ, v: usize) -> PolyZ {
    if a.is_zero() {
        return primitive_part(b);
    }
    if b.is_zero() {
        return primitive_part(a);
    }
    if v == N_PARAMS {
        // Both are constants here.
        use num_integer::Integer;
        let ca = content(a);
        let cb = content(b);
        return PolyZ::constant(ca.gcd(&cb));
    }
    let da = a.degree(ALL_PARAMS[v]);
    let db = b.degree(ALL_PARAMS[v]);
    if da == 0 && db == 0 {
        return gcd_int(a, b, v + 1);
    }

    // Univariate in v over the remaining parameters.
    let ua = to_univariate(a, v);
    let ub = to_univariate(b, v);
    let cont_a = vec_content(&ua, v);
    let cont_b = vec_content(&ub, v);
    let cont_g = gcd_int(&cont_a, &cont_b, v + 1);

    let mut p = vec_div(&ua, &cont_a);
    let mut q = vec_div(&ub, &cont_b);
    if deg_of(&p) < deg_of(&q) {
        std::mem::swap(&mut p, &mut q);
    }
    while deg_of(&q).is_some() {
        let r = pseudo_rem(&p, &q, v);
        p = q;
        q = vec_primitive(&r, v);
    }
    let g = from_univariate(&p, v);
    let mut out = primitive_part(&(&cont_g * &g));
    if out.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
        out = -&out;
    }
    out
}

fn vec_content(coeffs: &[PolyZ], v: usize) -> PolyZ {
    let mut g = PolyZ::zero();
    for c in coeffs {
        if !c.is_zero() {
            g = gcd_int(&g, c, v + 1);
        }
    }
    if g.is_zero() {
        PolyZ::one()
    } else {
        g
    }
}

fn vec_div(coeffs: &[PolyZ], d: &PolyZ) -> Vec<PolyZ> {
    coeffs
        .iter()
        .map(|c| {
            if c.is_zero() {
                PolyZ::zero()
            } else {
                c.div_exact(d).expect("content division is exact")
            }
        })
        .collect()
}

fn vec_primitive(coeffs: &[PolyZ], v: usize) -> Vec<PolyZ> {
    let c = vec_content(coeffs, v);
    vec_div(coeffs, &c)
}

/// Pseudo-remainder of univariate-in-v polynomial vectors.
fn pseudo_rem(p: &[PolyZ], q: &[PolyZ], _v: usize) -> Vec<PolyZ> {
    let dp = deg_of(p).expect("nonzero");
    let dq = deg_of(q).expect("nonzero");
    assert!(dp >= dq);
    let lq = q[dq].clone();
    let mut r: Vec<PolyZ> = p.to_vec();
    for k in (dq..=dp).rev() {
        let dr = match deg_of(&r) {
            None => break,
            Some(d) => d,
        };
        if dr < dq {
            break;
        }
        if dr < k {
            continue;
        }
        let lr = r[dr].clone();
        // r := lq * r - lr * q * v^(dr - dq)
        let shift = dr - dq;
        let mut nr = vec![PolyZ::zero(); r.len().max(dr + 1)];
        for (i, c) in r.iter().enumerate() {
            nr[i] = &(&lq * c) + &PolyZ::zero();
        }
        for (i, c) in q.iter().enumerate() {
            if i + shift < nr.len() {
                nr[i + shift] = &nr[i + shift] - &(&lr * c);
            }
        }
        r = nr;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;

    fn s(p: Param) -> Poly<BigRational> {
        Poly::var(p)
    }

    fn c(n: i64) -> Poly<BigRational> {
        Poly::constant(BigRational::from_i64(n).unwrap())
    }

    #[test]
    fn arithmetic_and_equality() {
        let s1 = s(Param::S1);
        let s2 = s(Param::S2);
        let a = &(&s1 + &s2) * &(&s1 - &s2);
        let b = &(&s1 * &s1) - &(&s2 * &s2);
        assert_eq!(a, b);
        assert!((&a - &b).is_zero());
    }

    #[test]
    fn div_exact_roundtrip() {
        let s1 = s(Param::S1);
        let s3 = s(Param::S3);
        let p = &(&s1 + &c(2)) * &(&s3 - &s1);
        let q = p.div_exact(&(&s1 + &c(2))).unwrap();
        assert_eq!(q, &s3 - &s1);
        assert!(p.div_exact(&(&s1 + &c(1))).is_none());
    }

    #[test]
    fn gcd_multivariate() {
        let s1 = s(Param::S1);
        let s2 = s(Param::S2);
        let g = &s1 + &s2;
        let a = &g * &s1;
        let b = &g * &(&s2 + &c(3));
        let got = a.gcd(&b);
        assert_eq!(got, g);

        // Coprime.
        let got2 = s1.gcd(&(&s2 + &c(1)));
        assert_eq!(got2, Poly::one());
    }

    #[test]
    fn gcd_with_content() {
        let s1 = s(Param::S1);
        let a = (&s1 * &s1).scale(&BigRational::from_i64(4).unwrap());
        let b = s1.scale(&BigRational::from_i64(6).unwrap());
        let g = a.gcd(&b);
        // Up to units: primitive convention yields s1 itself.
        assert_eq!(g, s1);
    }
}
