//! Coordinate exterior calculus on a chart: vector fields, k-forms, Lie
//! brackets, exterior derivative, wedge products, pairings, and growth
//! vectors of bracket-generated filtrations.
//!
//! Convention: `(dx_i ∧ dx_j)(X, Y) = X_i Y_j - X_j Y_i`, the determinant
//! convention, under which `dα(X,Y) = X(α(Y)) - Y(α(X)) - α([X,Y])` holds
//! with no extra factor.

use std::collections::BTreeMap;
use std::fmt;

use crate::linalg::{Mat, MatF};
use crate::numeric::{NumericPoint, Rng};
use crate::trig::TrigExpr;
use crate::vars::{Chart, Var};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ExteriorError {
    #[error("chart mismatch")]
    ChartMismatch,
    #[error("degree overflow: {0} + {1} exceeds chart dimension")]
    DegreeOverflow(usize, usize),
    #[error("symbolic rank {symbolic:?} disagrees with generic numeric rank {numeric:?}")]
    RankMismatch {
        symbolic: Vec<usize>,
        numeric: Vec<usize>,
    },
    #[error(transparent)]
    Eval(#[from] crate::trig::EvalError),
}

/// A vector field on a chart, one component per chart variable.
#[derive(Clone, PartialEq, Debug)]
pub struct VectorField {
    pub chart: Chart,
    pub comps: Vec<TrigExpr>,
}

impl VectorField {
    pub fn zero(chart: &Chart) -> VectorField {
        VectorField {
            chart: chart.clone(),
            comps: vec![TrigExpr::zero(); chart.dim()],
        }
    }

    pub fn new(chart: &Chart, comps: Vec<TrigExpr>) -> VectorField {
        assert_eq!(chart.dim(), comps.len(), "component count != chart dim");
        VectorField {
            chart: chart.clone(),
            comps,
        }
    }

    /// The coordinate field `∂/∂v`.
    pub fn coordinate(chart: &Chart, v: Var) -> VectorField {
        let mut out = VectorField::zero(chart);
        let i = chart.index_of(v).expect("variable not in chart");
        out.comps[i] = TrigExpr::one();
        out
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, rhs: &VectorField) -> VectorField {
        assert_eq!(self.chart, rhs.chart);
        VectorField {
            chart: self.chart.clone(),
            comps: self
                .comps
                .iter()
                .zip(&rhs.comps)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &VectorField) -> VectorField {
        assert_eq!(self.chart, rhs.chart);
        VectorField {
            chart: self.chart.clone(),
            comps: self
                .comps
                .iter()
                .zip(&rhs.comps)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, f: &TrigExpr) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            comps: self.comps.iter().map(|c| c * f).collect(),
        }
    }

    /// Directional derivative `X(f)`.
    pub fn apply(&self, f: &TrigExpr) -> TrigExpr {
        let mut acc = TrigExpr::zero();
        for (i, c) in self.comps.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            acc = &acc + &(c * &f.diff(self.chart.var(i)));
        }
        acc
    }

    pub fn eval(&self, p: &NumericPoint) -> Result<Vec<f64>, crate::trig::EvalError> {
        self.comps.iter().map(|c| c.eval(p)).collect()
    }
}

/// Lie bracket `[X, Y]`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, ExteriorError> {
    if x.chart != y.chart {
        return Err(ExteriorError::ChartMismatch);
    }
    let mut comps = Vec::with_capacity(x.chart.dim());
    for i in 0..x.chart.dim() {
        comps.push(&x.apply(&y.comps[i]) - &y.apply(&x.comps[i]));
    }
    Ok(VectorField {
        chart: x.chart.clone(),
        comps,
    })
}

/// A differential k-form with canonical strictly-increasing index blades
/// (stored as bitmasks) and no zero coefficients.
#[derive(Clone, PartialEq, Debug)]
pub struct KForm {
    pub chart: Chart,
    pub degree: usize,
    terms: BTreeMap<u32, TrigExpr>,
}

fn blade_sign_insert(blade: u32, i: u32) -> Option<(u32, bool)> {
    if blade & (1 << i) != 0 {
        return None;
    }
    let below = (blade & ((1 << i) - 1)).count_ones();
    Some((blade | (1 << i), below % 2 == 1))
}

fn merge_sign(a: u32, b: u32) -> Option<(u32, bool)> {
    if a & b != 0 {
        return None;
    }
    let mut inversions = 0u32;
    let mut bb = b;
    while bb != 0 {
        let i = bb.trailing_zeros();
        inversions += (a >> (i + 1)).count_ones();
        bb &= bb - 1;
    }
    Some((a | b, inversions % 2 == 1))
}

impl KForm {
    pub fn zero(chart: &Chart, degree: usize) -> KForm {
        KForm {
            chart: chart.clone(),
            degree,
            terms: BTreeMap::new(),
        }
    }

    /// A function viewed as a 0-form.
    pub fn function(chart: &Chart, f: TrigExpr) -> KForm {
        let mut out = KForm::zero(chart, 0);
        out.add_blade(0, f);
        out
    }

    /// The coordinate 1-form `dv`.
    pub fn d_var(chart: &Chart, v: Var) -> KForm {
        let i = chart.index_of(v).expect("variable not in chart") as u32;
        let mut out = KForm::zero(chart, 1);
        out.add_blade(1 << i, TrigExpr::one());
        out
    }

    /// A 1-form from components (in chart order).
    pub fn one_form(chart: &Chart, comps: Vec<TrigExpr>) -> KForm {
        assert_eq!(chart.dim(), comps.len());
        let mut out = KForm::zero(chart, 1);
        for (i, c) in comps.into_iter().enumerate() {
            out.add_blade(1 << i, c);
        }
        out
    }

    pub fn add_blade(&mut self, blade: u32, coeff: TrigExpr) {
        debug_assert_eq!(blade.count_ones() as usize, self.degree);
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(blade) {
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

    pub fn blades(&self) -> impl Iterator<Item = (&u32, &TrigExpr)> {
        self.terms.iter()
    }

    pub fn coeff(&self, blade: u32) -> TrigExpr {
        self.terms
            .get(&blade)
            .cloned()
            .unwrap_or_else(TrigExpr::zero)
    }

    /// Component of a 1-form on chart variable `i`.
    pub fn comp(&self, i: usize) -> TrigExpr {
        assert_eq!(self.degree, 1);
        self.coeff(1 << i)
    }

    pub fn add(&self, rhs: &KForm) -> KForm {
        assert_eq!(self.chart, rhs.chart);
        assert_eq!(self.degree, rhs.degree);
        let mut out = self.clone();
        for (b, c) in &rhs.terms {
            out.add_blade(*b, c.clone());
        }
        out
    }

    pub fn sub(&self, rhs: &KForm) -> KForm {
        self.add(&rhs.neg())
    }

    pub fn neg(&self) -> KForm {
        KForm {
            chart: self.chart.clone(),
            degree: self.degree,
            terms: self.terms.iter().map(|(b, c)| (*b, -c)).collect(),
        }
    }

    pub fn scale(&self, f: &TrigExpr) -> KForm {
        let mut out = KForm::zero(&self.chart, self.degree);
        for (b, c) in &self.terms {
            out.add_blade(*b, c * f);
        }
        out
    }

    /// Exterior derivative.
    pub fn ext_d(&self) -> KForm {
        let dim = self.chart.dim();
        assert!(self.degree < dim, "exterior derivative beyond top degree");
        let mut out = KForm::zero(&self.chart, self.degree + 1);
        for (blade, coeff) in &self.terms {
            for i in 0..dim as u32 {
                if blade & (1 << i) != 0 {
                    continue;
                }
                let dc = coeff.diff(self.chart.var(i as usize));
                if dc.is_zero() {
                    continue;
                }
                let (nb, flip) = blade_sign_insert(*blade, i).unwrap();
                out.add_blade(nb, if flip { -&dc } else { dc });
            }
        }
        out
    }

    /// Wedge product.
    pub fn wedge(&self, rhs: &KForm) -> Result<KForm, ExteriorError> {
        if self.chart != rhs.chart {
            return Err(ExteriorError::ChartMismatch);
        }
        if self.degree + rhs.degree > self.chart.dim() {
            return Err(ExteriorError::DegreeOverflow(self.degree, rhs.degree));
        }
        let mut out = KForm::zero(&self.chart, self.degree + rhs.degree);
        for (a, ca) in &self.terms {
            for (b, cb) in &rhs.terms {
                if let Some((nb, flip)) = merge_sign(*a, *b) {
                    let c = ca * cb;
                    out.add_blade(nb, if flip { -&c } else { c });
                }
            }
        }
        Ok(out)
    }

    /// Pair a 1-form with a vector field.
    pub fn pair(&self, x: &VectorField) -> Result<TrigExpr, ExteriorError> {
        if self.chart != x.chart {
            return Err(ExteriorError::ChartMismatch);
        }
        assert_eq!(self.degree, 1, "pair expects a 1-form");
        let mut acc = TrigExpr::zero();
        for (b, c) in &self.terms {
            let i = b.trailing_zeros() as usize;
            acc = &acc + &(c * &x.comps[i]);
        }
        Ok(acc)
    }

    /// Pair a 2-form with two vector fields (determinant convention).
    pub fn pair2(&self, x: &VectorField, y: &VectorField) -> Result<TrigExpr, ExteriorError> {
        if self.chart != x.chart || self.chart != y.chart {
            return Err(ExteriorError::ChartMismatch);
        }
        assert_eq!(self.degree, 2, "pair2 expects a 2-form");
        let mut acc = TrigExpr::zero();
        for (b, c) in &self.terms {
            let i = b.trailing_zeros() as usize;
            let j = (31 - b.leading_zeros()) as usize;
            let det = &(&x.comps[i] * &y.comps[j]) - &(&x.comps[j] * &y.comps[i]);
            acc = &acc + &(c * &det);
        }
        Ok(acc)
    }

    pub fn eval_comp(&self, blade: u32, p: &NumericPoint) -> Result<f64, crate::trig::EvalError> {
        match self.terms.get(&blade) {
            None => Ok(0.0),
            Some(c) => c.eval(p),
        }
    }
}

impl fmt::Display for KForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (b, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            let mut names = Vec::new();
            for i in 0..32 {
                if b & (1 << i) != 0 {
                    names.push(format!("d{}", self.chart.var(i as usize).name()));
                }
            }
            if names.is_empty() {
                write!(f, "({})", c)?;
            } else {
                write!(f, "({}) {}", c, names.join("^"))?;
            }
        }
        Ok(())
    }
}

/// A distribution given by generating vector fields.
#[derive(Clone, Debug)]
pub struct Distribution {
    pub chart: Chart,
    pub generators: Vec<VectorField>,
}

impl Distribution {
    pub fn new(generators: Vec<VectorField>) -> Distribution {
        assert!(!generators.is_empty());
        let chart = generators[0].chart.clone();
        assert!(generators.iter().all(|g| g.chart == chart));
        assert!(
            generators.iter().all(|g| !g.is_zero()),
            "zero generator in distribution"
        );
        Distribution { chart, generators }
    }
}

/// Result of a growth-vector computation.
#[derive(Clone, Debug)]
pub struct GrowthResult {
    /// Generic (symbolic) ranks of the filtration.
    pub symbolic: Vec<usize>,
    /// Generic numeric ranks (maximum over sample points).
    pub numeric: Vec<usize>,
    /// Sampled points where the numeric rank drops below the generic rank.
    pub degenerate_points: Vec<NumericPoint>,
    /// Number of sample points used.
    pub samples: usize,
}

/// Ranks of the iterated bracket filtration `D ⊂ D + [D,D] ⊂ ...`, computed
/// symbolically (fraction-free elimination over the trig ring) and numerically
/// (singular values at random points, absolute threshold `1e-8`).
pub fn growth_vector(
    d: &Distribution,
    max_depth: usize,
    points: &[NumericPoint],
) -> Result<GrowthResult, ExteriorError> {
    assert!(max_depth >= 1);
    let dim = d.chart.dim();

    // Build the filtration generators level by level.
    let mut levels: Vec<Vec<VectorField>> = vec![d.generators.clone()];
    for _ in 1..max_depth {
        let last = levels.last().unwrap();
        let mut next = last.clone();
        for x in &d.generators {
            for y in last {
                let b = lie_bracket(x, y)?;
                if !b.is_zero() {
                    next.push(b);
                }
            }
        }
        levels.push(next);
    }

    // Symbolic ranks.
    let mut symbolic = Vec::new();
    for level in &levels {
        let mat = Mat::from_rows(level.iter().map(|g| g.comps.clone()).collect());
        let r = mat.rank_bareiss().min(dim);
        symbolic.push(r);
        if r == dim {
            break;
        }
    }

    // Numeric ranks at the sample points.
    let mut numeric = vec![0usize; symbolic.len()];
    let mut degenerate_points = Vec::new();
    for p in points {
        for (li, level) in levels.iter().take(symbolic.len()).enumerate() {
            let mut rows = Vec::new();
            for g in level {
                rows.push(g.eval(p)?);
            }
            let r = MatF::from_rows(&rows).rank_with_threshold(1e-8);
            numeric[li] = numeric[li].max(r);
            if r < symbolic[li] && !degenerate_points.iter().any(|q| q == p) {
                degenerate_points.push(*p);
            }
        }
    }

    if numeric != symbolic {
        return Err(ExteriorError::RankMismatch { symbolic, numeric });
    }

    Ok(GrowthResult {
        symbolic,
        numeric,
        degenerate_points,
        samples: points.len(),
    })
}

/// Uniform sample of the snake chart: angles in `[0, 2π)`, `x, y` in
/// `[-1, 1]`, with the given numeric parameters.
pub fn sample_snake_points(n: usize, params: [f64; 3], rng: &mut Rng) -> Vec<NumericPoint> {
    use crate::vars::{AngVar, CartVar};
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = NumericPoint::with_params(params[0], params[1], params[2]);
        p.set_cart(CartVar::X, rng.range(-1.0, 1.0));
        p.set_cart(CartVar::Y, rng.range(-1.0, 1.0));
        p.set_ang(AngVar::Theta, rng.range(0.0, std::f64::consts::TAU));
        p.set_ang(AngVar::Phi, rng.range(0.0, std::f64::consts::TAU));
        p.set_ang(AngVar::Psi, rng.range(0.0, std::f64::consts::TAU));
        out.push(p);
    }
    out
}

// ---------------------------------------------------------------------------
// Complex-valued forms as (real, imaginary) pairs.
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Debug)]
pub struct ComplexKForm {
    pub re: KForm,
    pub im: KForm,
}

impl ComplexKForm {
    pub fn real(re: KForm) -> ComplexKForm {
        let im = KForm::zero(&re.chart, re.degree);
        ComplexKForm { re, im }
    }

    pub fn new(re: KForm, im: KForm) -> ComplexKForm {
        assert_eq!(re.chart, im.chart);
        assert_eq!(re.degree, im.degree);
        ComplexKForm { re, im }
    }

    pub fn conj(&self) -> ComplexKForm {
        ComplexKForm {
            re: self.re.clone(),
            im: self.im.neg(),
        }
    }

    pub fn add(&self, rhs: &ComplexKForm) -> ComplexKForm {
        ComplexKForm {
            re: self.re.add(&rhs.re),
            im: self.im.add(&rhs.im),
        }
    }

    pub fn sub(&self, rhs: &ComplexKForm) -> ComplexKForm {
        ComplexKForm {
            re: self.re.sub(&rhs.re),
            im: self.im.sub(&rhs.im),
        }
    }

    pub fn neg(&self) -> ComplexKForm {
        ComplexKForm {
            re: self.re.neg(),
            im: self.im.neg(),
        }
    }

    /// Multiply by `i`.
    pub fn times_i(&self) -> ComplexKForm {
        ComplexKForm {
            re: self.im.neg(),
            im: self.re.clone(),
        }
    }

    pub fn ext_d(&self) -> ComplexKForm {
        ComplexKForm {
            re: self.re.ext_d(),
            im: self.im.ext_d(),
        }
    }

    pub fn wedge(&self, rhs: &ComplexKForm) -> Result<ComplexKForm, ExteriorError> {
        Ok(ComplexKForm {
            re: self.re.wedge(&rhs.re)?.sub(&self.im.wedge(&rhs.im)?),
            im: self.re.wedge(&rhs.im)?.add(&self.im.wedge(&rhs.re)?),
        })
    }

    pub fn pair(&self, x: &VectorField) -> Result<(TrigExpr, TrigExpr), ExteriorError> {
        Ok((self.re.pair(x)?, self.im.pair(x)?))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;
    use crate::vars::CartVar;

    fn chart3() -> Chart {
        Chart::new(vec![
            Var::Cart(CartVar::X),
            Var::Cart(CartVar::Y),
            Var::Cart(CartVar::U),
        ])
    }

    #[test]
    fn bracket_coordinate_example() {
        // [∂x, x ∂y] = ∂y
        let ch = chart3();
        let dx = VectorField::coordinate(&ch, Var::Cart(CartVar::X));
        let mut xdy = VectorField::zero(&ch);
        xdy.comps[1] = parse("x").unwrap();
        let b = lie_bracket(&dx, &xdy).unwrap();
        assert_eq!(b, VectorField::coordinate(&ch, Var::Cart(CartVar::Y)));
    }

    #[test]
    fn ext_d_of_sin_theta_dx() {
        // d(sin(theta) dx) = cos(theta) dtheta ∧ dx = -cos(theta) dx ∧ dtheta
        let ch = Chart::snake();
        let mut w = KForm::zero(&ch, 1);
        w.add_blade(1 << 0, parse("sin(theta)").unwrap());
        let dw = w.ext_d();
        let blade = (1 << 0) | (1 << 2);
        assert_eq!(dw.coeff(blade), parse("-cos(theta)").unwrap());
        assert!(dw.ext_d().is_zero());
    }

    #[test]
    fn wedge_antisymmetry_and_nilpotency() {
        let ch = chart3();
        let dx = KForm::d_var(&ch, Var::Cart(CartVar::X));
        let dy = KForm::d_var(&ch, Var::Cart(CartVar::Y));
        assert!(dx.wedge(&dx).unwrap().is_zero());
        let xy = dx.wedge(&dy).unwrap();
        let yx = dy.wedge(&dx).unwrap();
        assert_eq!(xy, yx.neg());
    }

    #[test]
    fn pair_examples() {
        let ch = chart3();
        let dx = KForm::d_var(&ch, Var::Cart(CartVar::X));
        let dy_vec = VectorField::coordinate(&ch, Var::Cart(CartVar::Y));
        assert!(dx.pair(&dy_vec).unwrap().is_zero());
    }

    #[test]
    fn cartan_formula_spot() {
        // dα(X,Y) = X(α(Y)) - Y(α(X)) - α([X,Y]) for α = x dy on (x,y,u)
        let ch = chart3();
        let mut alpha = KForm::zero(&ch, 1);
        alpha.add_blade(1 << 1, parse("x").unwrap());
        let mut x = VectorField::zero(&ch);
        x.comps[0] = parse("y").unwrap();
        x.comps[2] = parse("x*x").unwrap();
        let mut y = VectorField::zero(&ch);
        y.comps[1] = parse("u").unwrap();
        y.comps[0] = parse("1").unwrap();

        let da = alpha.ext_d();
        let lhs = da.pair2(&x, &y).unwrap();
        let rhs = &(&x.apply(&alpha.pair(&y).unwrap()) - &y.apply(&alpha.pair(&x).unwrap()))
            - &alpha.pair(&lie_bracket(&x, &y).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn growth_heisenberg() {
        // span{∂x, ∂y + x ∂u} on (x,y,u) has growth (2,3).
        let ch = chart3();
        let dx = VectorField::coordinate(&ch, Var::Cart(CartVar::X));
        let mut f2 = VectorField::coordinate(&ch, Var::Cart(CartVar::Y));
        f2.comps[2] = parse("x").unwrap();
        let d = Distribution::new(vec![dx.clone(), f2]);
        let mut rng = Rng::new(7);
        let pts: Vec<NumericPoint> = (0..20)
            .map(|_| {
                let mut p = NumericPoint::with_params(1.0, 0.5, 1.0);
                p.set_cart(CartVar::X, rng.range(-1.0, 1.0));
                p.set_cart(CartVar::Y, rng.range(-1.0, 1.0));
                p.set_cart(CartVar::U, rng.range(-1.0, 1.0));
                p
            })
            .collect();
        let g = growth_vector(&d, 2, &pts).unwrap();
        assert_eq!(g.symbolic, vec![2, 3]);

        // Involutive example: span{∂x, ∂y} has growth (2,2).
        let dy = VectorField::coordinate(&ch, Var::Cart(CartVar::Y));
        let d2 = Distribution::new(vec![dx, dy]);
        let g2 = growth_vector(&d2, 2, &pts).unwrap();
        assert_eq!(g2.symbolic, vec![2, 2]);
    }
}
