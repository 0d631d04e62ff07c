//! Exact trigonometric polynomials.
//!
//! A term is a Cartesian monomial times `cos` or `sin` of an integer linear
//! combination of angle variables, with a coefficient in the parameter field.
//! The canonical form stores each frequency vector with its first nonzero
//! entry positive (the sign is folded into the coefficient for `sin`), keeps
//! only a `cos` term for the zero frequency, and drops zero coefficients.
//! Two expressions are equal as functions iff their term maps are identical.

use num_rational::BigRational;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::numeric::NumericPoint;
use crate::ratfunc::RatFunc;
use crate::scalar::ExactRing;
use crate::vars::{AngVar, CartVar, ALL_ANG, ALL_CART, N_ANG, N_CART};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum TrigKind {
    Cos,
    Sin,
}

pub type CartExp = [u8; N_CART];
pub type Freq = [i16; N_ANG];

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TermKey {
    pub pows: CartExp,
    pub freq: Freq,
    pub kind: TrigKind,
}

pub const ZERO_FREQ: Freq = [0; N_ANG];

impl TermKey {
    pub fn monomial(pows: CartExp) -> TermKey {
        TermKey {
            pows,
            freq: ZERO_FREQ,
            kind: TrigKind::Cos,
        }
    }

    pub fn unit() -> TermKey {
        TermKey::monomial([0; N_CART])
    }
}

/// Canonical trigonometric polynomial with `RatFunc` coefficients.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TrigExpr {
    terms: BTreeMap<TermKey, RatFunc>,
}

fn freq_is_zero(f: &Freq) -> bool {
    f.iter().all(|&x| x == 0)
}

fn freq_neg(f: &Freq) -> Freq {
    let mut out = *f;
    for x in &mut out {
        *x = -*x;
    }
    out
}

fn freq_add(a: &Freq, b: &Freq) -> Freq {
    let mut out = [0i16; N_ANG];
    for i in 0..N_ANG {
        out[i] = a[i].checked_add(b[i]).expect("frequency overflow");
    }
    out
}

fn freq_sub(a: &Freq, b: &Freq) -> Freq {
    let mut out = [0i16; N_ANG];
    for i in 0..N_ANG {
        out[i] = a[i].checked_sub(b[i]).expect("frequency overflow");
    }
    out
}

/// Leading-sign normalization: returns (canonical frequency, flipped?).
fn freq_canon(f: &Freq) -> (Freq, bool) {
    for &x in f.iter() {
        if x > 0 {
            return (*f, false);
        }
        if x < 0 {
            return (freq_neg(f), true);
        }
    }
    (*f, false)
}

impl TrigExpr {
    pub fn zero() -> TrigExpr {
        TrigExpr {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> TrigExpr {
        TrigExpr::coeff(RatFunc::one())
    }

    pub fn coeff(c: RatFunc) -> TrigExpr {
        let mut t = TrigExpr::zero();
        t.add_term([0; N_CART], ZERO_FREQ, TrigKind::Cos, c);
        t
    }

    pub fn from_i64(n: i64) -> TrigExpr {
        TrigExpr::coeff(RatFunc::from_i64(n))
    }

    pub fn rational(p: i64, q: i64) -> TrigExpr {
        TrigExpr::coeff(RatFunc::rational(p, q))
    }

    pub fn param(p: crate::poly::Param) -> TrigExpr {
        TrigExpr::coeff(RatFunc::var(p))
    }

    pub fn cart(v: CartVar) -> TrigExpr {
        let mut pows = [0u8; N_CART];
        pows[v as usize] = 1;
        let mut t = TrigExpr::zero();
        t.add_term(pows, ZERO_FREQ, TrigKind::Cos, RatFunc::one());
        t
    }

    /// `cos` of an integer combination of angle variables.
    pub fn cos(freq: Freq) -> TrigExpr {
        let mut t = TrigExpr::zero();
        t.add_term([0; N_CART], freq, TrigKind::Cos, RatFunc::one());
        t
    }

    /// `sin` of an integer combination of angle variables.
    pub fn sin(freq: Freq) -> TrigExpr {
        let mut t = TrigExpr::zero();
        t.add_term([0; N_CART], freq, TrigKind::Sin, RatFunc::one());
        t
    }

    pub fn cos_var(v: AngVar) -> TrigExpr {
        let mut f = ZERO_FREQ;
        f[v as usize] = 1;
        TrigExpr::cos(f)
    }

    pub fn sin_var(v: AngVar) -> TrigExpr {
        let mut f = ZERO_FREQ;
        f[v as usize] = 1;
        TrigExpr::sin(f)
    }

    /// Insert a raw term, normalizing to canonical form.
    pub fn add_term(&mut self, pows: CartExp, freq: Freq, kind: TrigKind, coeff: RatFunc) {
        if coeff.is_zero() {
            return;
        }
        if freq_is_zero(&freq) {
            if kind == TrigKind::Sin {
                return; // sin(0) = 0
            }
            self.merge(TermKey::monomial(pows), coeff);
            return;
        }
        let (f, flipped) = freq_canon(&freq);
        let c = if flipped && kind == TrigKind::Sin {
            -&coeff
        } else {
            coeff
        };
        self.merge(
            TermKey {
                pows,
                freq: f,
                kind,
            },
            c,
        );
    }

    fn merge(&mut self, key: TermKey, coeff: RatFunc) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get() + &coeff;
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &RatFunc)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Crude size measure for pivot selection.
    pub fn size(&self) -> usize {
        self.terms.values().map(|c| c.size()).sum::<usize>() + self.terms.len()
    }

    /// The coefficient field element if the expression is a pure coefficient.
    pub fn as_coeff(&self) -> Option<RatFunc> {
        if self.terms.is_empty() {
            return Some(RatFunc::zero());
        }
        if self.terms.len() == 1 {
            if let Some(c) = self.terms.get(&TermKey::unit()) {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn scale(&self, c: &RatFunc) -> TrigExpr {
        if c.is_zero() {
            return TrigExpr::zero();
        }
        TrigExpr {
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (*k, v * c))
                .collect(),
        }
    }

    pub fn pow(&self, n: u32) -> TrigExpr {
        let mut acc = TrigExpr::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Partial derivative with respect to a chart variable.
    pub fn diff(&self, v: crate::vars::Var) -> TrigExpr {
        let mut out = TrigExpr::zero();
        match v {
            crate::vars::Var::Cart(cv) => {
                let i = cv as usize;
                for (k, c) in &self.terms {
                    let d = k.pows[i];
                    if d == 0 {
                        continue;
                    }
                    let mut pows = k.pows;
                    pows[i] -= 1;
                    out.add_term(pows, k.freq, k.kind, c * &RatFunc::from_i64(d as i64));
                }
            }
            crate::vars::Var::Ang(av) => {
                let i = av as usize;
                for (k, c) in &self.terms {
                    let n = k.freq[i];
                    if n == 0 {
                        continue;
                    }
                    let fac = RatFunc::from_i64(n as i64);
                    match k.kind {
                        TrigKind::Cos => {
                            // d cos(f) = -f_i sin(f)
                            out.add_term(k.pows, k.freq, TrigKind::Sin, -&(c * &fac));
                        }
                        TrigKind::Sin => {
                            out.add_term(k.pows, k.freq, TrigKind::Cos, c * &fac);
                        }
                    }
                }
            }
        }
        out
    }

    /// Numeric evaluation at a point; error if a coefficient denominator is
    /// smaller than `1e-12` in magnitude.
    pub fn eval(&self, p: &NumericPoint) -> Result<f64, EvalError> {
        let mut acc = 0.0;
        for (k, c) in &self.terms {
            let coeff = c
                .eval_guarded(&p.params, 1e-12)
                .ok_or(EvalError::DenominatorUnderflow)?;
            let mut t = coeff;
            for (i, &d) in k.pows.iter().enumerate() {
                if d > 0 {
                    t *= p.cart[i].powi(d as i32);
                }
            }
            if !freq_is_zero(&k.freq) {
                let mut arg = 0.0;
                for (i, &n) in k.freq.iter().enumerate() {
                    if n != 0 {
                        arg += n as f64 * p.ang[i];
                    }
                }
                t *= match k.kind {
                    TrigKind::Cos => arg.cos(),
                    TrigKind::Sin => arg.sin(),
                };
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Substitute exact rational parameter values (partially or fully).
    pub fn substitute_params(
        &self,
        vals: &[Option<BigRational>; crate::poly::N_PARAMS],
    ) -> TrigExpr {
        let mut out = TrigExpr::zero();
        for (k, c) in &self.terms {
            out.add_term(k.pows, k.freq, k.kind, c.substitute(vals));
        }
        out
    }

    /// Substitute trigonometric expressions for Cartesian variables.
    ///
    /// Variables not present in the map are left alone.
    pub fn substitute_cart(&self, map: &BTreeMap<CartVar, TrigExpr>) -> TrigExpr {
        let mut out = TrigExpr::zero();
        for (k, c) in &self.terms {
            let mut factor = TrigExpr::zero();
            factor.add_term([0; N_CART], k.freq, k.kind, c.clone());
            let mut rem_pows = [0u8; N_CART];
            for (i, &d) in k.pows.iter().enumerate() {
                if d == 0 {
                    continue;
                }
                let cv = ALL_CART[i];
                if let Some(rep) = map.get(&cv) {
                    factor = &factor * &rep.pow(d as u32);
                } else {
                    rem_pows[i] = d;
                }
            }
            let mono = {
                let mut t = TrigExpr::zero();
                t.add_term(rem_pows, ZERO_FREQ, TrigKind::Cos, RatFunc::one());
                t
            };
            out = &out + &(&factor * &mono);
        }
        out
    }

    /// Substitute angle variables by integer-affine combinations of other
    /// angle variables with an offset that is an integer multiple of pi:
    /// `old = sum_j M[old][j] * new_j + off[old] * pi`.
    ///
    /// Angle variables not present keep their identity row.
    pub fn substitute_angles(&self, map: &AngleAffineMap) -> TrigExpr {
        let mut out = TrigExpr::zero();
        for (k, c) in &self.terms {
            let mut freq = [0i64; N_ANG];
            let mut off: i64 = 0;
            for (i, &n) in k.freq.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                for j in 0..N_ANG {
                    freq[j] += n as i64 * map.linear[i][j] as i64;
                }
                off += n as i64 * map.pi_offset[i] as i64;
            }
            let mut f = [0i16; N_ANG];
            for j in 0..N_ANG {
                f[j] = i16::try_from(freq[j]).expect("frequency overflow");
            }
            // cos(x + k*pi) = (-1)^k cos(x); same for sin.
            let sign_flip = off.rem_euclid(2) == 1;
            let coeff = if sign_flip { -c } else { c.clone() };
            out.add_term(k.pows, f, k.kind, coeff);
        }
        out
    }

    /// Exact division within the trigonometric polynomial ring.
    ///
    /// Returns `None` when `self` is not a ring multiple of `d`.
    pub fn div_exact(&self, d: &TrigExpr) -> Option<TrigExpr> {
        assert!(!d.is_zero(), "division by zero trig expression");
        if self.is_zero() {
            return Some(TrigExpr::zero());
        }
        if let Some(c) = d.as_coeff() {
            return Some(self.scale(&c.inv()));
        }
        laurent::div_exact(self, d)
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("coefficient denominator magnitude below 1e-12")]
    DenominatorUnderflow,
}

/// Integer-affine substitution on angle variables with pi-multiple offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AngleAffineMap {
    /// `linear[old][new]` coefficient.
    pub linear: [[i16; N_ANG]; N_ANG],
    /// Offset of each old variable, in multiples of pi.
    pub pi_offset: [i16; N_ANG],
}

impl AngleAffineMap {
    pub fn identity() -> AngleAffineMap {
        let mut linear = [[0i16; N_ANG]; N_ANG];
        for (i, row) in linear.iter_mut().enumerate() {
            row[i] = 1;
        }
        AngleAffineMap {
            linear,
            pi_offset: [0; N_ANG],
        }
    }

    pub fn set(&mut self, old: AngVar, coeffs: &[(AngVar, i16)], pi_offset: i16) {
        let row = &mut self.linear[old as usize];
        *row = [0; N_ANG];
        for (v, c) in coeffs {
            row[*v as usize] = *c;
        }
        self.pi_offset[old as usize] = pi_offset;
    }
}

impl Add for &TrigExpr {
    type Output = TrigExpr;
    fn add(self, rhs: &TrigExpr) -> TrigExpr {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.merge(*k, c.clone());
        }
        out
    }
}

impl Sub for &TrigExpr {
    type Output = TrigExpr;
    fn sub(self, rhs: &TrigExpr) -> TrigExpr {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.merge(*k, -c);
        }
        out
    }
}

impl Neg for &TrigExpr {
    type Output = TrigExpr;
    fn neg(self) -> TrigExpr {
        TrigExpr {
            terms: self.terms.iter().map(|(k, c)| (*k, -c)).collect(),
        }
    }
}

impl Mul for &TrigExpr {
    type Output = TrigExpr;
    fn mul(self, rhs: &TrigExpr) -> TrigExpr {
        let mut out = TrigExpr::zero();
        let half = RatFunc::rational(1, 2);
        for (k1, c1) in &self.terms {
            for (k2, c2) in &rhs.terms {
                let mut pows = [0u8; N_CART];
                for i in 0..N_CART {
                    pows[i] = k1.pows[i]
                        .checked_add(k2.pows[i])
                        .expect("cartesian exponent overflow");
                }
                let c = c1 * c2;
                let z1 = freq_is_zero(&k1.freq);
                let z2 = freq_is_zero(&k2.freq);
                match (z1, z2) {
                    (true, true) => out.add_term(pows, ZERO_FREQ, TrigKind::Cos, c),
                    (true, false) => out.add_term(pows, k2.freq, k2.kind, c),
                    (false, true) => out.add_term(pows, k1.freq, k1.kind, c),
                    (false, false) => {
                        let ch = &c * &half;
                        let sum = freq_add(&k1.freq, &k2.freq);
                        let dif = freq_sub(&k1.freq, &k2.freq);
                        match (k1.kind, k2.kind) {
                            (TrigKind::Cos, TrigKind::Cos) => {
                                // cos a cos b = (cos(a-b) + cos(a+b)) / 2
                                out.add_term(pows, dif, TrigKind::Cos, ch.clone());
                                out.add_term(pows, sum, TrigKind::Cos, ch);
                            }
                            (TrigKind::Sin, TrigKind::Sin) => {
                                // sin a sin b = (cos(a-b) - cos(a+b)) / 2
                                out.add_term(pows, dif, TrigKind::Cos, ch.clone());
                                out.add_term(pows, sum, TrigKind::Cos, -&ch);
                            }
                            (TrigKind::Sin, TrigKind::Cos) => {
                                // sin a cos b = (sin(a+b) + sin(a-b)) / 2
                                out.add_term(pows, sum, TrigKind::Sin, ch.clone());
                                out.add_term(pows, dif, TrigKind::Sin, ch);
                            }
                            (TrigKind::Cos, TrigKind::Sin) => {
                                // cos a sin b = (sin(a+b) - sin(a-b)) / 2
                                out.add_term(pows, sum, TrigKind::Sin, ch.clone());
                                out.add_term(pows, dif, TrigKind::Sin, -&ch);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

macro_rules! trig_byvalue_ops {
    ($($op:ident :: $m:ident),*) => {
        $(impl std::ops::$op for TrigExpr {
            type Output = TrigExpr;
            fn $m(self, rhs: TrigExpr) -> TrigExpr {
                (&self).$m(&rhs)
            }
        })*
    };
}

trig_byvalue_ops!(Add::add, Sub::sub, Mul::mul);

impl Neg for TrigExpr {
    type Output = TrigExpr;
    fn neg(self) -> TrigExpr {
        -&self
    }
}

impl num_traits::Zero for TrigExpr {
    fn zero() -> Self {
        TrigExpr::zero()
    }
    fn is_zero(&self) -> bool {
        TrigExpr::is_zero(self)
    }
}

impl num_traits::One for TrigExpr {
    fn one() -> Self {
        TrigExpr::one()
    }
}

impl ExactRing for TrigExpr {
    fn div_exact(&self, rhs: &Self) -> Option<Self> {
        TrigExpr::div_exact(self, rhs)
    }
    fn size(&self) -> usize {
        TrigExpr::size(self)
    }
}

impl fmt::Display for TrigExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (k, c) in &self.terms {
            let mut factors: Vec<String> = Vec::new();
            let cs = format!("{}", c);
            let coeff_is_one = c.is_one();
            let coeff_is_neg_one = (-c).is_one();
            for (i, &d) in k.pows.iter().enumerate() {
                if d == 1 {
                    factors.push(ALL_CART[i].name().to_string());
                } else if d > 1 {
                    factors.push(format!("{}^{}", ALL_CART[i].name(), d));
                }
            }
            if !freq_is_zero(&k.freq) {
                let mut arg = String::new();
                let mut afirst = true;
                for (i, &n) in k.freq.iter().enumerate() {
                    if n == 0 {
                        continue;
                    }
                    let name = ALL_ANG[i].name();
                    if afirst {
                        if n == 1 {
                            arg.push_str(name);
                        } else if n == -1 {
                            arg.push_str(&format!("-{}", name));
                        } else {
                            arg.push_str(&format!("{}*{}", n, name));
                        }
                        afirst = false;
                    } else if n == 1 {
                        arg.push_str(&format!("+{}", name));
                    } else if n == -1 {
                        arg.push_str(&format!("-{}", name));
                    } else if n > 0 {
                        arg.push_str(&format!("+{}*{}", n, name));
                    } else {
                        arg.push_str(&format!("{}*{}", n, name));
                    }
                }
                let kind = match k.kind {
                    TrigKind::Cos => "cos",
                    TrigKind::Sin => "sin",
                };
                factors.push(format!("{}({})", kind, arg));
            }
            let body = factors.join("*");
            let term = if factors.is_empty() {
                if cs.starts_with('-') || cs.contains('+') || cs.contains(' ') {
                    format!("({})", cs)
                } else {
                    cs
                }
            } else if coeff_is_one {
                body
            } else if coeff_is_neg_one {
                format!("-{}", body)
            } else if cs.contains('+') || cs.contains(' ') || (cs.contains('-') && !cs.starts_with('-'))
            {
                format!("({})*{}", cs, body)
            } else {
                format!("{}*{}", cs, body)
            };
            if first {
                f.write_str(&term)?;
                first = false;
            } else if let Some(stripped) = term.strip_prefix('-') {
                write!(f, " - {}", stripped)?;
            } else {
                write!(f, " + {}", term)?;
            }
        }
        Ok(())
    }
}

/// Exact division through the complex Laurent representation.
///
/// Each angle variable contributes a formal unit `E_j = exp(i * ang_j)`, so a
/// real trigonometric polynomial is a Laurent polynomial whose coefficients
/// are complex combinations of `RatFunc`. Division of Laurent polynomials is
/// ordinary multivariate division after shifting exponents.
mod laurent {
    use super::*;

    #[derive(Clone, PartialEq, Eq, Debug)]
    struct CRat {
        re: RatFunc,
        im: RatFunc,
    }

    impl CRat {
        fn is_zero(&self) -> bool {
            self.re.is_zero() && self.im.is_zero()
        }
        fn add(&self, o: &CRat) -> CRat {
            CRat {
                re: &self.re + &o.re,
                im: &self.im + &o.im,
            }
        }
        fn mul(&self, o: &CRat) -> CRat {
            CRat {
                re: &(&self.re * &o.re) - &(&self.im * &o.im),
                im: &(&self.re * &o.im) + &(&self.im * &o.re),
            }
        }
        fn div(&self, o: &CRat) -> CRat {
            let n = &(&o.re * &o.re) + &(&o.im * &o.im);
            let ninv = n.inv();
            CRat {
                re: &(&(&self.re * &o.re) + &(&self.im * &o.im)) * &ninv,
                im: &(&(&self.im * &o.re) - &(&self.re * &o.im)) * &ninv,
            }
        }
    }

    /// Key: (cartesian exponents, shifted angle exponents).
    type LKey = (CartExp, [i32; N_ANG]);

    struct LPoly {
        terms: BTreeMap<LKey, CRat>,
    }

    impl LPoly {
        fn insert(&mut self, k: LKey, c: CRat) {
            if c.is_zero() {
                return;
            }
            match self.terms.entry(k) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(c);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let s = e.get().add(&c);
                    if s.is_zero() {
                        e.remove();
                    } else {
                        *e.get_mut() = s;
                    }
                }
            }
        }
    }

    fn to_laurent(t: &TrigExpr) -> LPoly {
        let half = RatFunc::rational(1, 2);
        let mut out = LPoly {
            terms: BTreeMap::new(),
        };
        for (k, c) in t.terms() {
            if freq_is_zero(&k.freq) {
                out.insert(
                    (k.pows, [0; N_ANG]),
                    CRat {
                        re: c.clone(),
                        im: RatFunc::zero(),
                    },
                );
                continue;
            }
            let mut fp = [0i32; N_ANG];
            let mut fm = [0i32; N_ANG];
            for i in 0..N_ANG {
                fp[i] = k.freq[i] as i32;
                fm[i] = -(k.freq[i] as i32);
            }
            let ch = c * &half;
            match k.kind {
                TrigKind::Cos => {
                    // cos f = (E^f + E^-f)/2
                    let cc = CRat {
                        re: ch.clone(),
                        im: RatFunc::zero(),
                    };
                    out.insert((k.pows, fp), cc.clone());
                    out.insert((k.pows, fm), cc);
                }
                TrigKind::Sin => {
                    // sin f = (E^f - E^-f)/(2i) = -i/2 E^f + i/2 E^-f
                    out.insert(
                        (k.pows, fp),
                        CRat {
                            re: RatFunc::zero(),
                            im: -&ch,
                        },
                    );
                    out.insert(
                        (k.pows, fm),
                        CRat {
                            re: RatFunc::zero(),
                            im: ch,
                        },
                    );
                }
            }
        }
        out
    }

    fn from_laurent(p: &LPoly) -> Option<TrigExpr> {
        let mut out = TrigExpr::zero();
        let two = RatFunc::from_i64(2);
        for (k, c) in &p.terms {
            let (pows, fr) = k;
            // Only keep lexicographically-positive representatives; their
            // mirror terms must be conjugate for a real result.
            let lead = fr.iter().find(|&&x| x != 0);
            match lead {
                None => {
                    if !c.im.is_zero() {
                        return None;
                    }
                    out.add_term(*pows, ZERO_FREQ, TrigKind::Cos, c.re.clone());
                }
                Some(&l) if l > 0 => {
                    let mut mirror = *fr;
                    for x in &mut mirror {
                        *x = -*x;
                    }
                    let conj = p.terms.get(&(*pows, mirror));
                    match conj {
                        Some(cc) if cc.re == c.re && cc.im == -&c.im => {}
                        _ => return None,
                    }
                    let mut f = [0i16; N_ANG];
                    for i in 0..N_ANG {
                        f[i] = i16::try_from(fr[i]).ok()?;
                    }
                    // c E^f + conj(c) E^-f = 2 re(c) cos f - 2 im(c) sin f
                    out.add_term(*pows, f, TrigKind::Cos, &c.re * &two);
                    out.add_term(*pows, f, TrigKind::Sin, -&(&c.im * &two));
                }
                _ => {}
            }
        }
        Some(out)
    }

    pub fn div_exact(n: &TrigExpr, d: &TrigExpr) -> Option<TrigExpr> {
        let ln = to_laurent(n);
        let ld = to_laurent(d);
        // Shift exponents to be nonnegative.
        let mut shift = [0i32; N_ANG];
        for k in ln.terms.keys().chain(ld.terms.keys()) {
            for i in 0..N_ANG {
                shift[i] = shift[i].min(k.1[i]);
            }
        }
        let reshift = |p: &LPoly, s: &[i32; N_ANG]| -> LPoly {
            let mut out = LPoly {
                terms: BTreeMap::new(),
            };
            for ((pw, f), c) in &p.terms {
                let mut nf = *f;
                for i in 0..N_ANG {
                    nf[i] -= s[i];
                }
                out.insert((*pw, nf), c.clone());
            }
            out
        };
        // Numerator gets the denominator shift only; quotient exponents may
        // still be negative, which is fine for a Laurent quotient.
        let num = reshift(&ln, &shift);
        let den = reshift(&ld, &shift);
        // The denominator shift applied to both cancels in the quotient; but
        // numerator keeps its own total shift. Instead divide and carry the
        // residual shift back at the end: num_shifted / den_shifted =
        // (n/d) * E^(shift_d - shift_n) -- since we used the SAME shift for
        // both, the quotient is exactly n/d.
        let mut rem = num;
        let mut quo = LPoly {
            terms: BTreeMap::new(),
        };
        let (dk, dc) = match den.terms.iter().next_back() {
            Some((k, c)) => (*k, c.clone()),
            None => return None,
        };
        // Support box of an exact quotient: grading by any single exponent
        // makes the top (bottom) homogeneous component of a product the
        // product of the tops (bottoms), so per coordinate the quotient
        // exponents lie exactly in [min_n - min_d, max_n - max_d]. A
        // candidate term outside the box certifies non-divisibility.
        let support =
            |p: &LPoly| -> Option<([i64; N_CART], [i64; N_CART], [i64; N_ANG], [i64; N_ANG])> {
                let mut it = p.terms.keys();
                let first = it.next()?;
                let mut clo = [0i64; N_CART];
                let mut chi = [0i64; N_CART];
                for i in 0..N_CART {
                    clo[i] = first.0[i] as i64;
                    chi[i] = clo[i];
                }
                let mut alo = [0i64; N_ANG];
                let mut ahi = [0i64; N_ANG];
                for i in 0..N_ANG {
                    alo[i] = first.1[i] as i64;
                    ahi[i] = alo[i];
                }
                for k in p.terms.keys() {
                    for i in 0..N_CART {
                        clo[i] = clo[i].min(k.0[i] as i64);
                        chi[i] = chi[i].max(k.0[i] as i64);
                    }
                    for i in 0..N_ANG {
                        alo[i] = alo[i].min(k.1[i] as i64);
                        ahi[i] = ahi[i].max(k.1[i] as i64);
                    }
                }
                Some((clo, chi, alo, ahi))
            };
        let (nclo, nchi, nalo, nahi) = support(&rem)?;
        let (dclo, dchi, dalo, dahi) = support(&den)?;
        let mut qclo = [0i64; N_CART];
        let mut qchi = [0i64; N_CART];
        for i in 0..N_CART {
            qclo[i] = nclo[i] - dclo[i];
            qchi[i] = nchi[i] - dchi[i];
            if qclo[i] > qchi[i] {
                return None;
            }
        }
        let mut qalo = [0i64; N_ANG];
        let mut qahi = [0i64; N_ANG];
        for i in 0..N_ANG {
            qalo[i] = nalo[i] - dalo[i];
            qahi[i] = nahi[i] - dahi[i];
            if qalo[i] > qahi[i] {
                return None;
            }
        }
        let max_steps = 100_000usize;
        let mut steps = 0usize;
        while let Some((rk, rc)) = rem.terms.iter().next_back().map(|(k, c)| (*k, c.clone())) {
            steps += 1;
            if steps > max_steps {
                return None;
            }
            let mut qpows = [0u8; N_CART];
            for i in 0..N_CART {
                if rk.0[i] < dk.0[i] {
                    return None;
                }
                qpows[i] = rk.0[i] - dk.0[i];
                let q = qpows[i] as i64;
                if q < qclo[i] || q > qchi[i] {
                    return None;
                }
            }
            let mut qf = [0i32; N_ANG];
            for i in 0..N_ANG {
                qf[i] = rk.1[i] - dk.1[i];
                let q = qf[i] as i64;
                if q < qalo[i] || q > qahi[i] {
                    return None;
                }
            }
            let qc = rc.div(&dc);
            let qk = (qpows, qf);
            quo.insert(qk, qc.clone());
            // rem -= q_term * den
            for (dk2, dc2) in &den.terms {
                let mut pw = [0u8; N_CART];
                for i in 0..N_CART {
                    pw[i] = qk.0[i].checked_add(dk2.0[i])?;
                }
                let mut f = [0i32; N_ANG];
                for i in 0..N_ANG {
                    f[i] = qk.1[i] + dk2.1[i];
                }
                let neg = CRat {
                    re: -&RatFunc::one(),
                    im: RatFunc::zero(),
                };
                rem.insert((pw, f), qc.mul(dc2).mul(&neg));
            }
        }
        from_laurent(&quo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vars::AngVar::*;

    fn th() -> Freq {
        let mut f = ZERO_FREQ;
        f[Theta as usize] = 1;
        f
    }

    #[test]
    fn pythagoras() {
        let s = TrigExpr::sin(th());
        let c = TrigExpr::cos(th());
        let e = &(&(&s * &s) + &(&c * &c)) - &TrigExpr::one();
        assert!(e.is_zero());
    }

    #[test]
    fn product_to_sum() {
        // sin t cos t = sin(2t)/2
        let s = TrigExpr::sin(th());
        let c = TrigExpr::cos(th());
        let p = &s * &c;
        let mut two = ZERO_FREQ;
        two[Theta as usize] = 2;
        let expected = TrigExpr::sin(two).scale(&RatFunc::rational(1, 2));
        assert_eq!(p, expected);
    }

    #[test]
    fn leading_sign_normalization() {
        // sin(-t) == -sin(t), cos(-t) == cos(t)
        let mut f = ZERO_FREQ;
        f[Theta as usize] = -1;
        assert_eq!(TrigExpr::sin(f), -&TrigExpr::sin(th()));
        assert_eq!(TrigExpr::cos(f), TrigExpr::cos(th()));
    }

    #[test]
    fn diff_chain_rule() {
        // d/dtheta sin(theta+phi) = cos(theta+phi)
        let mut f = ZERO_FREQ;
        f[Theta as usize] = 1;
        f[Phi as usize] = 1;
        let e = TrigExpr::sin(f);
        assert_eq!(e.diff(crate::vars::Var::Ang(Theta)), TrigExpr::cos(f));
    }

    #[test]
    fn div_exact_roundtrip() {
        let s = TrigExpr::sin(th());
        let c = TrigExpr::cos(th());
        let x = TrigExpr::cart(crate::vars::CartVar::X);
        let a = &(&s + &x) * &(&c + &TrigExpr::from_i64(3));
        let q = a.div_exact(&(&c + &TrigExpr::from_i64(3))).unwrap();
        assert_eq!(q, &s + &x);
        assert!(a.div_exact(&(&c + &TrigExpr::from_i64(2))).is_none());
    }
}
