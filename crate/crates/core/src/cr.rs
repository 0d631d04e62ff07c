//! The constant complex structure compatible with the snake's distribution,
//! and everything built from it: holomorphic coordinates, the adapted chart
//! on the constraint locus, and the adapted coframe.
//!
//! The solver works in three exact stages. Tangency of `J D` along the
//! constraint locus is linear in the matrix entries, so expanding the
//! identities in the canonical trig basis gives an exact homogeneous linear
//! system. On its nullspace, `J^2 = -I` is a quadratic system with no linear
//! terms, hence linear in the symmetric moments `c_a c_b`; solving that
//! moment system exactly and factoring the rank-one moment matrix certifies
//! the full solution set (including emptiness) without any numerics.

use num_rational::BigRational;
use num_traits::Signed;
use std::collections::BTreeMap;

use crate::exterior::{ComplexKForm, KForm, VectorField};
use crate::linalg::{Mat, MatF};
use crate::numeric::NumericPoint;
use crate::parse::parse;
use crate::ratfunc::RatFunc;
use crate::snake::{push_forward, SnakeModel, SnakeParams};
use crate::trig::{AngleAffineMap, TrigExpr};
use crate::vars::{AngVar, CartVar, Chart, Var};

#[derive(thiserror::Error, Debug)]
pub enum CrError {
    #[error("point violates the constraints: |h| = {0:.3e}")]
    OffLocus(f64),
    #[error("operation requires s2 = 1/2, got {0}")]
    NeedsCentered(String),
    #[error("moment system is positive-dimensional; inconclusive")]
    Inconclusive,
    #[error("candidate moment matrix is not rank one")]
    NotRankOne,
    #[error("the complex structure does not map the distribution to itself")]
    NotInvariant,
    #[error("coordinate {0} is not compatible with the complex structure")]
    NotHolomorphic(usize),
    #[error("adapted coframe wedge vanishes identically")]
    DegenerateCoframe,
    #[error("beta chart does not annihilate constraint {0}")]
    BetaResidual(usize),
    #[error(transparent)]
    Exterior(#[from] crate::exterior::ExteriorError),
    #[error(transparent)]
    Eval(#[from] crate::trig::EvalError),
}

/// An 8x8 matrix over the parameter field, acting on ambient tangent vectors
/// in the basis `(x1, x2, x3, x4, y1, y2, y3, y4)`.
#[derive(Clone, PartialEq, Debug)]
pub struct JMat(pub Mat<RatFunc>);

impl JMat {
    pub fn zeros() -> JMat {
        JMat(Mat::zeros(8, 8))
    }

    pub fn from_i64_rows(rows: [[i64; 8]; 8]) -> JMat {
        let mut m = Mat::zeros(8, 8);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = RatFunc::from_i64(*v);
            }
        }
        JMat(m)
    }

    /// `J^2 = -I`, exactly.
    pub fn is_complex_structure(&self) -> bool {
        let sq = self.0.mul(&self.0);
        let minus_id = Mat::<RatFunc>::identity(8).neg();
        sq == minus_id
    }

    pub fn neg(&self) -> JMat {
        JMat(self.0.neg())
    }

    pub fn eval(&self, params: &[f64; 3]) -> MatF {
        let mut out = MatF::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                out.set(i, j, self.0[(i, j)].eval(params));
            }
        }
        out
    }

    /// Apply to a vector of trig expressions.
    pub fn apply_symbolic(&self, v: &[TrigExpr]) -> Vec<TrigExpr> {
        assert_eq!(v.len(), 8);
        (0..8)
            .map(|i| {
                let mut acc = TrigExpr::zero();
                for j in 0..8 {
                    let c = &self.0[(i, j)];
                    if !c.is_zero() {
                        acc = &acc + &v[j].scale(c);
                    }
                }
                acc
            })
            .collect()
    }
}

/// The classical display matrix for the centered snake, transcribed verbatim.
pub fn literal_j() -> JMat {
    JMat::from_i64_rows([
        [0, 0, 0, 0, -1, 1, 0, 0],
        [0, 0, 0, 0, 0, 1, 0, 0],
        [0, 0, 0, 0, 0, 0, -1, 0],
        [0, 0, 0, 0, 0, 0, -1, 1],
        [1, -1, 0, 0, 0, 0, 0, 0],
        [0, -1, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 0, 0, 0, 0, 0],
        [0, 0, 1, -1, 0, 0, 0, 0],
    ])
}

/// The standard block structure `J(x; y) = (-y; x)`.
pub fn standard_block_j() -> JMat {
    let mut m = Mat::zeros(8, 8);
    for k in 0..4 {
        m[(k, 4 + k)] = RatFunc::from_i64(-1);
        m[(4 + k, k)] = RatFunc::from_i64(1);
    }
    JMat(m)
}

/// Ambient gradients of the constraints, pulled back to the snake chart.
fn constraint_gradients(m: &SnakeModel) -> [Vec<TrigExpr>; 3] {
    let ambient = Chart::ambient();
    let emb = &m.embedding;
    let grad = |h: &TrigExpr| -> Vec<TrigExpr> {
        ambient
            .vars()
            .iter()
            .map(|v| h.diff(*v).substitute_cart(emb))
            .collect()
    };
    [
        grad(&m.constraints[0]),
        grad(&m.constraints[1]),
        grad(&m.constraints[2]),
    ]
}

/// Ambient representatives of the non-skidding forms: together with the
/// constraint gradients they span the annihilator of the distribution plane
/// inside the ambient cotangent space along the locus.
fn ambient_nonskid_covectors(m: &SnakeModel) -> [Vec<TrigExpr>; 3] {
    use crate::snake::MidWheelConvention;
    use CartVar::*;
    let get = |v: CartVar| m.embedding.get(&v).unwrap().clone();
    let (wa, wb) = match m.conventions.mid_wheel {
        MidWheelConvention::JointWeighted => ("1-s2", "s2"),
        MidWheelConvention::Alternative => ("s2", "1-s2"),
    };
    let wa = subs_params(m, &format!("({wa})"));
    let wb = subs_params(m, &format!("({wb})"));
    let wa = wa.as_coeff().unwrap();
    let wb = wb.as_coeff().unwrap();

    let mut u1 = vec![TrigExpr::zero(); 8];
    // Ambient order (x1, x2, x3, x4, y1, y2, y3, y4).
    u1[0] = &get(Y2) - &get(Y1);
    u1[4] = -&(&get(X2) - &get(X1));

    let mut u2 = vec![TrigExpr::zero(); 8];
    let dy = &get(Y2) - &get(Y3);
    let dx = &get(X2) - &get(X3);
    u2[1] = dy.scale(&wa);
    u2[2] = dy.scale(&wb);
    u2[5] = -&dx.scale(&wa);
    u2[6] = -&dx.scale(&wb);

    let mut u3 = vec![TrigExpr::zero(); 8];
    u3[3] = &get(Y4) - &get(Y3);
    u3[7] = -&(&get(X4) - &get(X3));

    [u1, u2, u3]
}

/// Stage 1: the exact homogeneous linear system for the 64 entries.
///
/// A solution of the full problem maps the distribution plane to itself:
/// from `J(TM) ∩ TM = D` and `J^2 = -I`, `w ∈ D` gives `Jw ∈ TM` and
/// `Jw = -J^2 w... ∈ J(TM)`, hence `Jw ∈ D`. That invariance is linear in
/// the entries: `η(J dPhi(xi_a)) = 0` identically for all six annihilator
/// covectors `η` (constraint gradients and non-skidding forms). Returns a
/// nullspace basis.
pub fn tangency_nullspace(m: &SnakeModel) -> Vec<Mat<RatFunc>> {
    let grads = constraint_gradients(m);
    let nonskid = ambient_nonskid_covectors(m);
    let v4 = push_forward(m, &m.xi4);
    let v5 = push_forward(m, &m.xi5);

    // Row map: canonical term key -> coefficient vector over the 64 unknowns.
    let mut rows: BTreeMap<(usize, usize, crate::trig::TermKey), Vec<RatFunc>> = BTreeMap::new();
    for (ci, g) in grads.iter().chain(nonskid.iter()).enumerate() {
        for (ai, v) in [&v4, &v5].iter().enumerate() {
            for j in 0..8 {
                if g[j].is_zero() {
                    continue;
                }
                for k in 0..8 {
                    if v[k].is_zero() {
                        continue;
                    }
                    let prod = &g[j] * &v[k];
                    for (key, coeff) in prod.terms() {
                        let row = rows
                            .entry((ci, ai, *key))
                            .or_insert_with(|| vec![RatFunc::zero(); 64]);
                        row[j * 8 + k] = &row[j * 8 + k] + coeff;
                    }
                }
            }
        }
    }

    let mat = Mat::from_rows(rows.into_values().collect());
    let null = mat.nullspace();
    null.into_iter()
        .map(|v| {
            let mut b = Mat::zeros(8, 8);
            for j in 0..8 {
                for k in 0..8 {
                    b[(j, k)] = v[j * 8 + k].clone();
                }
            }
            b
        })
        .collect()
}

/// Outcome of the exact solve.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub solutions: Vec<JMat>,
    /// Whether the returned set is certified to be the complete real
    /// solution set.
    pub certified_complete: bool,
    pub stage1_dim: usize,
    /// Dimension of the affine moment solution space (0 = unique moments).
    pub moment_freedom: usize,
}

/// Square root in the parameter field, when one exists with rational
/// structure: rational constants and even monomials.
fn ratfunc_sqrt(f: &RatFunc) -> Option<RatFunc> {
    use crate::poly::Poly;
    fn poly_sqrt(p: &Poly<BigRational>) -> Option<Poly<BigRational>> {
        if let Some(c) = p.as_constant() {
            let r = rational_sqrt(&c)?;
            return Some(Poly::constant(r));
        }
        // Single monomial with even exponents.
        let mut terms = p.terms();
        let (exp, c) = terms.next()?;
        if terms.next().is_some() {
            return None;
        }
        if exp.iter().any(|&d| d % 2 != 0) {
            return None;
        }
        let mut half = *exp;
        for d in &mut half {
            *d /= 2;
        }
        let r = rational_sqrt(c)?;
        Some(Poly::monomial(half, r))
    }
    let num = poly_sqrt(f.num())?;
    let den = poly_sqrt(f.den())?;
    Some(RatFunc::new(num, den))
}

fn rational_sqrt(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().sqrt();
    let d = r.denom().sqrt();
    if &(&n * &n) == r.numer() && &(&d * &d) == r.denom() {
        Some(BigRational::new(n, d))
    } else {
        None
    }
}

/// Stages 2 and 3: impose `J^2 = -I` on the stage-1 nullspace via the moment
/// linearization, then keep solutions whose intersection with the tangent
/// spaces is exactly the distribution at sample points.
pub fn solve_complex_structure(
    m: &SnakeModel,
    sample_points: &[NumericPoint],
) -> Result<SolveOutcome, CrError> {
    let basis = tangency_nullspace(m);
    let d = basis.len();
    if d == 0 {
        return Ok(SolveOutcome {
            solutions: Vec::new(),
            certified_complete: true,
            stage1_dim: 0,
            moment_freedom: 0,
        });
    }

    // Moment unknowns m_{ab} = c_a c_b for a <= b.
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (a..d).map(move |b| (a, b)))
        .collect();
    let mut kmats: Vec<Mat<RatFunc>> = Vec::new();
    for &(a, b) in &pairs {
        let k = if a == b {
            basis[a].mul(&basis[a])
        } else {
            basis[a].mul(&basis[b]).add(&basis[b].mul(&basis[a]))
        };
        kmats.push(k);
    }
    let mut rows: Vec<Vec<RatFunc>> = Vec::new();
    let mut rhs: Vec<RatFunc> = Vec::new();
    let mut diag_covered = [false; 8];
    for i in 0..8 {
        for j in 0..8 {
            let row: Vec<RatFunc> = kmats.iter().map(|k| k[(i, j)].clone()).collect();
            if row.iter().all(|c| c.is_zero()) {
                continue;
            }
            if i == j {
                diag_covered[i] = true;
            }
            rows.push(row);
            rhs.push(if i == j {
                RatFunc::from_i64(-1)
            } else {
                RatFunc::zero()
            });
        }
    }
    if diag_covered.iter().any(|c| !c) {
        // Some diagonal entry of J^2 is identically zero: 0 = -1, empty.
        return Ok(SolveOutcome {
            solutions: Vec::new(),
            certified_complete: true,
            stage1_dim: d,
            moment_freedom: 0,
        });
    }

    let amat = Mat::from_rows(rows);
    let null = amat.nullspace();
    let moment_freedom = null.len();
    let particular = match amat.solve(&rhs) {
        None => {
            // Inconsistent: certified empty.
            return Ok(SolveOutcome {
                solutions: Vec::new(),
                certified_complete: true,
                stage1_dim: d,
                moment_freedom,
            });
        }
        Some(s) => s,
    };

    // Candidate moment vectors: intersect the affine solution family with
    // the rank-one cone. Unique moments need no work; a one-parameter family
    // reduces to exact quadratics in the parameter (vanishing of the 2x2
    // minors). Higher freedom is reported as inconclusive.
    let candidates: Vec<Vec<RatFunc>> = match moment_freedom {
        0 => vec![particular],
        1 => rank_one_slice(&particular, &null[0], &pairs, d)?,
        _ => return Err(CrError::Inconclusive),
    };

    let mut solutions: Vec<JMat> = Vec::new();
    for moments in candidates {
        let mget = |a: usize, b: usize| -> RatFunc {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let idx = pairs.iter().position(|&p| p == (a, b)).unwrap();
            moments[idx].clone()
        };
        // Pivot: a nonzero diagonal moment; all-zero diagonal means c = 0.
        let pivot = match (0..d).find(|&a| !mget(a, a).is_zero()) {
            None => continue,
            Some(p) => p,
        };
        // Rank-one test: m_{ab} m_{pp} = m_{ap} m_{bp} for all a, b.
        let mut rank_one = true;
        for a in 0..d {
            for b in a..d {
                let lhs = &mget(a, b) * &mget(pivot, pivot);
                let rhs1 = &mget(a, pivot) * &mget(b, pivot);
                if lhs != rhs1 {
                    rank_one = false;
                    break;
                }
            }
            if !rank_one {
                break;
            }
        }
        if !rank_one {
            continue;
        }

        // J = M / t with M = sum_a m_{a,pivot} B_a and t^2 = m_{pivot,pivot}.
        let t2 = mget(pivot, pivot);
        if definitely_nonpositive(&t2) {
            // c_pivot^2 < 0 has no real solution: this branch is empty.
            continue;
        }
        let mut mmat = Mat::<RatFunc>::zeros(8, 8);
        for a in 0..d {
            let c = mget(a, pivot);
            if c.is_zero() {
                continue;
            }
            for i in 0..8 {
                for j in 0..8 {
                    mmat[(i, j)] = &mmat[(i, j)] + &(&basis[a][(i, j)] * &c);
                }
            }
        }
        // Verify M^2 = -t^2 I exactly; otherwise the branch has no solution.
        let msq = mmat.mul(&mmat);
        let mut expect = Mat::<RatFunc>::zeros(8, 8);
        for i in 0..8 {
            expect[(i, i)] = -&t2;
        }
        if msq != expect {
            continue;
        }
        let t = match ratfunc_sqrt(&t2) {
            Some(t) => t,
            None => return Err(CrError::Inconclusive),
        };
        let tinv = t.inv();
        let j = JMat(mmat.map(|e| e.clone() * tinv.clone()));
        debug_assert!(j.is_complex_structure());
        for cand in [j.clone(), j.neg()] {
            if !solutions.contains(&cand) {
                solutions.push(cand);
            }
        }
    }

    // Stage 3: keep solutions whose intersection equals the distribution at
    // the sample points.
    let mut filtered = Vec::new();
    for cand in solutions {
        let mut ok = true;
        for pt in sample_points {
            let r = cr_intersection(&cand, m, pt)?;
            if r.dimension != 2 || r.projector_distance > 1e-8 {
                ok = false;
                break;
            }
        }
        if ok {
            filtered.push(cand);
        }
    }

    Ok(SolveOutcome {
        solutions: filtered,
        certified_complete: true,
        stage1_dim: d,
        moment_freedom,
    })
}

/// A parameter-field element that is certainly `<= 0` on the open parameter
/// range `s1, s3 > 0`: a nonpositive rational, or a single even monomial
/// with a nonpositive coefficient (conservative test).
fn definitely_nonpositive(f: &RatFunc) -> bool {
    let sign_of_poly = |p: &crate::poly::Poly<BigRational>| -> Option<i8> {
        let mut terms = p.terms();
        let (exp, c) = terms.next()?;
        if terms.next().is_some() {
            return None;
        }
        if exp.iter().any(|&d| d % 2 != 0) {
            return None;
        }
        Some(if c.is_negative() { -1 } else { 1 })
    };
    match (sign_of_poly(f.num()), sign_of_poly(f.den())) {
        (Some(a), Some(b)) => a * b < 0 || f.is_zero(),
        _ => false,
    }
}

/// Intersect the one-parameter affine moment family `m* + τ ν` with the
/// rank-one cone, exactly. Returns the finitely many candidate moment
/// vectors, or `Inconclusive` when the intersection cannot be certified
/// (irrational branch or identically rank-deficient family).
fn rank_one_slice(
    particular: &[RatFunc],
    nu: &[RatFunc],
    pairs: &[(usize, usize)],
    d: usize,
) -> Result<Vec<Vec<RatFunc>>, CrError> {
    // Moment matrix entries as linear polynomials a + τ b.
    let at = |a: usize, b: usize| -> (RatFunc, RatFunc) {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let idx = pairs.iter().position(|&p| p == (a, b)).unwrap();
        (particular[idx].clone(), nu[idx].clone())
    };
    // All 2x2 minors m_{ac} m_{bd} - m_{ad} m_{bc} as quadratics in τ:
    // coefficients (c0, c1, c2).
    let mut quads: Vec<[RatFunc; 3]> = Vec::new();
    for a in 0..d {
        for b in (a + 1)..d {
            for c in 0..d {
                for e in (c + 1)..d {
                    let (p1, q1) = at(a, c);
                    let (p2, q2) = at(b, e);
                    let (p3, q3) = at(a, e);
                    let (p4, q4) = at(b, c);
                    let c0 = &(&p1 * &p2) - &(&p3 * &p4);
                    let c1 = &(&(&p1 * &q2) + &(&q1 * &p2)) - &(&(&p3 * &q4) + &(&q3 * &p4));
                    let c2 = &(&q1 * &q2) - &(&q3 * &q4);
                    if !(c0.is_zero() && c1.is_zero() && c2.is_zero()) {
                        quads.push([c0, c1, c2]);
                    }
                }
            }
        }
    }
    if quads.is_empty() {
        // Every family member is rank one: a continuum of solutions cannot
        // be enumerated exactly.
        return Err(CrError::Inconclusive);
    }
    // Roots of the first nontrivial quadratic, checked against the rest.
    let roots = quadratic_roots(&quads[0])?;
    let mut out = Vec::new();
    for tau in roots {
        let all_vanish = quads.iter().all(|[c0, c1, c2]| {
            let v = &(&(&(&(c2 * &tau) + c1) * &tau) + c0) * &RatFunc::one();
            v.is_zero()
        });
        if !all_vanish {
            continue;
        }
        let m: Vec<RatFunc> = particular
            .iter()
            .zip(nu)
            .map(|(p, q)| p + &(q * &tau))
            .collect();
        out.push(m);
    }
    Ok(out)
}

/// Real roots of `c2 τ^2 + c1 τ + c0` in the parameter field, when they can
/// be certified: exact roots through a field square root of the
/// discriminant, or certified-empty for a definitely negative discriminant.
fn quadratic_roots(c: &[RatFunc; 3]) -> Result<Vec<RatFunc>, CrError> {
    let [c0, c1, c2] = c;
    if c2.is_zero() {
        if c1.is_zero() {
            // Nonzero constant: no roots.
            return Ok(Vec::new());
        }
        return Ok(vec![-&(c0 / c1)]);
    }
    let disc = &(c1 * c1) - &(&RatFunc::from_i64(4) * &(c0 * c2));
    match ratfunc_sqrt(&disc) {
        Some(r) => {
            let half = RatFunc::rational(1, 2);
            let inv = c2.inv();
            let r1 = &(&(-&(c1 - &r)) * &half) * &inv;
            let r2 = &(&(-&(c1 + &r)) * &half) * &inv;
            let mut out = vec![r1.clone()];
            if r2 != r1 {
                out.push(r2);
            }
            Ok(out)
        }
        None => {
            if definitely_nonpositive(&disc) && !disc.is_zero() {
                Ok(Vec::new())
            } else {
                Err(CrError::Inconclusive)
            }
        }
    }
}

/// Result of the pointwise intersection test.
#[derive(Clone, Copy, Debug)]
pub struct IntersectionResult {
    /// `dim { w in T_q M : J w in T_q M }`.
    pub dimension: usize,
    /// Frobenius distance between the intersection projector and the
    /// distribution projector at the point.
    pub projector_distance: f64,
}

/// Compute the intersection `J(TM) ∩ TM` at a chart point (mapped through
/// the embedding) and compare it with the distribution plane.
pub fn cr_intersection(
    j: &JMat,
    m: &SnakeModel,
    chart_point: &NumericPoint,
) -> Result<IntersectionResult, CrError> {
    let ambient_pt = crate::snake::embed_point(m, chart_point)?;
    for h in &m.constraints {
        let v = h.eval(&ambient_pt)?;
        if v.abs() > 1e-10 {
            return Err(CrError::OffLocus(v.abs()));
        }
    }

    let grads = constraint_gradients(m);
    let params = ambient_pt.params;
    let jn = j.eval(&params);

    // Rows dh_i and dh_i ∘ J.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for g in &grads {
        let gv: Vec<f64> = g
            .iter()
            .map(|c| c.eval(chart_point))
            .collect::<Result<_, _>>()?;
        rows.push(gv);
    }
    for gi in 0..3 {
        let g = rows[gi].clone();
        let mut gj = vec![0.0; 8];
        for (k, slot) in gj.iter_mut().enumerate() {
            let mut s = 0.0;
            for (l, gl) in g.iter().enumerate() {
                s += gl * jn.get(l, k);
            }
            *slot = s;
        }
        rows.push(gj);
    }
    let a = MatF::from_rows(&rows);
    let rank = a.rank_with_threshold(1e-8);
    let dim = 8 - rank;
    let null = a.nullspace_basis(1e-8);

    // Distribution plane at the point.
    let v4 = push_forward(m, &m.xi4);
    let v5 = push_forward(m, &m.xi5);
    let mut dmat = MatF::zeros(8, 2);
    for i in 0..8 {
        dmat.set(i, 0, v4[i].eval(chart_point)?);
        dmat.set(i, 1, v5[i].eval(chart_point)?);
    }
    let p_d = dmat.column_projector();

    let mut nmat = MatF::zeros(8, null.len());
    for (jcol, v) in null.iter().enumerate() {
        for i in 0..8 {
            nmat.set(i, jcol, v[i]);
        }
    }
    let p_n = nmat.column_projector();
    let dist = p_d.frobenius_distance(&p_n);

    Ok(IntersectionResult {
        dimension: dim,
        projector_distance: dist,
    })
}

/// `dz = u + i v` as exact row covectors in the ambient basis.
pub type Covector = [i64; 8];

pub fn literal_z_covectors() -> [(Covector, Covector); 4] {
    // z1 = x1 + i (y2 - y1); z2 = x2 + i y2; z3 = x3 + i y3;
    // z4 = x4 + i (y4 - y3). Ambient order (x1..x4, y1..y4).
    [
        ([1, 0, 0, 0, 0, 0, 0, 0], [0, 0, 0, 0, -1, 1, 0, 0]),
        ([0, 1, 0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1, 0, 0]),
        ([0, 0, 1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, 1, 0]),
        ([0, 0, 0, 1, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, -1, 1]),
    ]
}

/// The literal list with the third coordinate conjugated; this is the
/// minimal repair that makes the compatibility signs globally equal.
pub fn repaired_z_covectors() -> [(Covector, Covector); 4] {
    let mut z = literal_z_covectors();
    for x in &mut z[2].1 {
        *x = -*x;
    }
    z
}

/// Per-coordinate compatibility of the joint coordinates with `J`:
/// `dz_k ∘ J = ε_k · i · dz_k` with `ε_k ∈ {+1, -1}`, or `None`. Exact.
pub fn holomorphic_check(j: &JMat) -> Vec<Option<i8>> {
    literal_z_covectors()
        .iter()
        .map(|(u, v)| coordinate_sign(j, u, v))
        .collect()
}

/// The same test after conjugating the third coordinate.
pub fn holomorphic_check_repaired(j: &JMat) -> Vec<Option<i8>> {
    repaired_z_covectors()
        .iter()
        .map(|(u, v)| coordinate_sign(j, u, v))
        .collect()
}

fn coordinate_sign(j: &JMat, u: &Covector, v: &Covector) -> Option<i8> {
    // dz ∘ J = ε i dz  <=>  u J = -ε v  and  v J = ε u.
    let apply = |w: &Covector| -> Vec<RatFunc> {
        (0..8)
            .map(|k| {
                let mut acc = RatFunc::zero();
                for l in 0..8 {
                    if w[l] != 0 {
                        acc = &acc + &(&RatFunc::from_i64(w[l]) * &j.0[(l, k)]);
                    }
                }
                acc
            })
            .collect()
    };
    let uj = apply(u);
    let vj = apply(v);
    for eps in [1i8, -1] {
        let e = RatFunc::from_i64(eps as i64);
        let ok = (0..8).all(|k| {
            uj[k] == -&(&e * &RatFunc::from_i64(v[k])) && vj[k] == &e * &RatFunc::from_i64(u[k])
        });
        if ok {
            return Some(eps);
        }
    }
    None
}

/// The adapted coframe on the snake chart.
#[derive(Clone, Debug)]
pub struct AdaptedCoframe {
    pub chart: Chart,
    /// `w1, w2, w3, w4, w5` with `w2 = conj(w1)`, `w5 = conj(w4)`, `w3` real.
    pub forms: [ComplexKForm; 5],
    /// The complex top-degree coefficient of `w1∧w2∧w3∧w4∧w5`.
    pub wedge_coeff: (TrigExpr, TrigExpr),
}

fn require_centered(params: &SnakeParams) -> Result<(), CrError> {
    let half = BigRational::new(1.into(), 2.into());
    if params.s2 != half {
        return Err(CrError::NeedsCentered(format!("{}", params.s2)));
    }
    Ok(())
}

/// Build `w1 = Y1 + i Y2`, `w2 = Y1 - i Y2`, `w3 = Y3`, `w4 = dz2`,
/// `w5 = conj(dz2)` on the snake chart and verify nondegeneracy.
pub fn adapted_coframe(m: &SnakeModel) -> Result<AdaptedCoframe, CrError> {
    require_centered(&m.params)?;
    let chart = Chart::snake();

    let y1 = ComplexKForm::real(m.pfaffian[0].clone());
    let y2 = ComplexKForm::real(m.pfaffian[1].clone());
    let y3 = ComplexKForm::real(m.pfaffian[2].clone());

    let w1 = y1.add(&y2.times_i());
    let w2 = w1.conj();
    let w3 = y3;

    // dz2 = d(x2) + i d(y2) pulled back through the embedding.
    let x2 = m.embedding.get(&CartVar::X2).unwrap().clone();
    let y2e = m.embedding.get(&CartVar::Y2).unwrap().clone();
    let w4 = ComplexKForm::new(
        KForm::function(&chart, x2).ext_d(),
        KForm::function(&chart, y2e).ext_d(),
    );
    let w5 = w4.conj();

    let forms = [w1, w2, w3, w4, w5];
    let mut wedge = forms[0].clone();
    for f in &forms[1..] {
        wedge = wedge.wedge(f)?;
    }
    let blade = (1u32 << chart.dim()) - 1;
    let wedge_coeff = (wedge.re.coeff(blade), wedge.im.coeff(blade));
    if wedge_coeff.0.is_zero() && wedge_coeff.1.is_zero() {
        return Err(CrError::DegenerateCoframe);
    }

    Ok(AdaptedCoframe {
        chart,
        forms,
        wedge_coeff,
    })
}

/// The chart adapted to the constraint locus, built from the arc
/// parametrization of the three segments.
#[derive(Clone, Debug)]
pub struct BetaChart {
    /// Ambient coordinates as functions on the beta chart.
    pub to_ambient: BTreeMap<CartVar, TrigExpr>,
    /// Affine relation expressing `(beta1, beta2, beta3)` through
    /// `(theta, phi, psi)` (integer linear part, offsets in multiples of pi).
    pub angles_from_snake: AngleAffineMap,
    /// `(u, v)` as functions on the snake chart.
    pub uv_from_snake: (TrigExpr, TrigExpr),
}

fn subs_params(m: &SnakeModel, src: &str) -> TrigExpr {
    let e = parse(src).expect("internal formula parses");
    e.substitute_params(&[
        match &m.params.s1 {
            crate::snake::ParamSpec::Symbolic => None,
            crate::snake::ParamSpec::Exact(r) => Some(r.clone()),
        },
        Some(m.params.s2.clone()),
        match &m.params.s3 {
            crate::snake::ParamSpec::Symbolic => None,
            crate::snake::ParamSpec::Exact(r) => Some(r.clone()),
        },
    ])
}

pub fn beta_chart(m: &SnakeModel) -> Result<BetaChart, CrError> {
    require_centered(&m.params)?;

    let mut to_ambient = BTreeMap::new();
    to_ambient.insert(CartVar::X2, subs_params(m, "u"));
    to_ambient.insert(CartVar::Y2, subs_params(m, "v"));
    to_ambient.insert(CartVar::X1, subs_params(m, "u + s1*cos(beta1)"));
    to_ambient.insert(CartVar::Y1, subs_params(m, "v - s1*sin(beta1)"));
    to_ambient.insert(CartVar::X3, subs_params(m, "u - cos(beta2)"));
    to_ambient.insert(CartVar::Y3, subs_params(m, "v - sin(beta2)"));
    to_ambient.insert(CartVar::X4, subs_params(m, "u - cos(beta2) + s3*cos(beta3)"));
    to_ambient.insert(CartVar::Y4, subs_params(m, "v - sin(beta2) + s3*sin(beta3)"));

    // The constraints must vanish identically on the beta chart.
    for (i, h) in m.constraints.iter().enumerate() {
        if !h.substitute_cart(&to_ambient).is_zero() {
            return Err(CrError::BetaResidual(i + 1));
        }
    }

    // Angle relation for the canonical embedding convention:
    // beta1 = pi - theta - phi, beta2 = theta, beta3 = theta + psi.
    let mut map = AngleAffineMap::identity();
    map.set(AngVar::Beta1, &[(AngVar::Theta, -1), (AngVar::Phi, -1)], 1);
    map.set(AngVar::Beta2, &[(AngVar::Theta, 1)], 0);
    map.set(AngVar::Beta3, &[(AngVar::Theta, 1), (AngVar::Psi, 1)], 0);

    let uv = (
        subs_params(m, "x + s2*cos(theta)"),
        subs_params(m, "y + s2*sin(theta)"),
    );

    // Verify the roundtrip: substituting the snake expressions into the beta
    // parametrization reproduces the embedding exactly.
    let mut cart_map = BTreeMap::new();
    cart_map.insert(CartVar::U, uv.0.clone());
    cart_map.insert(CartVar::V, uv.1.clone());
    for (v, f) in &to_ambient {
        let through = f.substitute_angles(&map).substitute_cart(&cart_map);
        let direct = m.embedding.get(v).unwrap();
        if &through != direct {
            return Err(CrError::BetaResidual(0));
        }
    }

    Ok(BetaChart {
        to_ambient,
        angles_from_snake: map,
        uv_from_snake: uv,
    })
}

/// The eigenfields of `J` on the distribution: `zeta_± = xi ∓ i J xi`.
#[derive(Clone, Debug)]
pub struct EigenFields {
    /// `J xi5 = a xi4 + b xi5` expansion coefficients.
    pub a: TrigExpr,
    pub b: TrigExpr,
    /// `J xi4 = c xi4 + d xi5` expansion coefficients.
    pub c: TrigExpr,
    pub d: TrigExpr,
    /// `zeta_+ = xi5 - i J xi5` as (real, imaginary) chart fields.
    pub zeta_plus: (VectorField, VectorField),
}

/// Express `J xi` back on the chart through the left inverse of the
/// embedding differential, verifying exact tangency.
fn pull_back_j_field(m: &SnakeModel, j: &JMat, xi: &VectorField) -> Result<VectorField, CrError> {
    let chart = Chart::snake();
    let v = push_forward(m, xi);
    let k = j.apply_symbolic(&v);

    // Indices in the ambient ordering (x1..x4, y1..y4).
    let (x2i, x3i, y2i, y3i) = (1usize, 2usize, 5usize, 6usize);
    let cth = TrigExpr::cos_var(AngVar::Theta);
    let sth = TrigExpr::sin_var(AngVar::Theta);

    // The middle joints depend only on (x, y, theta):
    //   K_{x2} - K_{x3} = -sin(theta) w_theta, K_{y2} - K_{y3} = cos(theta) w_theta.
    let s2 = RatFunc::constant(m.params.s2.clone());
    let w_theta = &(&cth * &(&k[y2i] - &k[y3i])) - &(&sth * &(&k[x2i] - &k[x3i]));
    let w_x = &k[x2i] + &(&sth * &w_theta).scale(&s2);
    let w_y = &k[y2i] - &(&cth * &w_theta).scale(&s2);

    let mut w = VectorField::zero(&chart);
    let ix = chart.index_of(Var::Cart(CartVar::X)).unwrap();
    let iy = chart.index_of(Var::Cart(CartVar::Y)).unwrap();
    let it = chart.index_of(Var::Ang(AngVar::Theta)).unwrap();
    let ip = chart.index_of(Var::Ang(AngVar::Phi)).unwrap();
    let iq = chart.index_of(Var::Ang(AngVar::Psi)).unwrap();
    w.comps[ix] = w_x;
    w.comps[iy] = w_y;
    w.comps[it] = w_theta;

    // Residual must be proportional to dPhi(∂phi) and dPhi(∂psi), which have
    // squared norms s1^2 and s3^2.
    let partial = push_forward(m, &w);
    let resid: Vec<TrigExpr> = (0..8).map(|i| &k[i] - &partial[i]).collect();
    let dphi = push_forward(m, &VectorField::coordinate(&chart, Var::Ang(AngVar::Phi)));
    let dpsi = push_forward(m, &VectorField::coordinate(&chart, Var::Ang(AngVar::Psi)));
    let s1inv = m.params.s1_field().inv();
    let s3inv = m.params.s3_field().inv();
    let mut dot1 = TrigExpr::zero();
    let mut dot3 = TrigExpr::zero();
    for i in 0..8 {
        dot1 = &dot1 + &(&resid[i] * &dphi[i]);
        dot3 = &dot3 + &(&resid[i] * &dpsi[i]);
    }
    w.comps[ip] = dot1.scale(&(&s1inv * &s1inv));
    w.comps[iq] = dot3.scale(&(&s3inv * &s3inv));

    // Exact verification: dPhi(w) = J dPhi(xi).
    let check = push_forward(m, &w);
    for i in 0..8 {
        if !(&check[i] - &k[i]).is_zero() {
            return Err(CrError::NotInvariant);
        }
    }
    Ok(w)
}

pub fn eigenfields(m: &SnakeModel, j: &JMat) -> Result<EigenFields, CrError> {
    require_centered(&m.params)?;
    let chart = Chart::snake();
    let it = chart.index_of(Var::Ang(AngVar::Theta)).unwrap();
    let ix = chart.index_of(Var::Cart(CartVar::X)).unwrap();
    let iy = chart.index_of(Var::Cart(CartVar::Y)).unwrap();
    let cth = TrigExpr::cos_var(AngVar::Theta);
    let sth = TrigExpr::sin_var(AngVar::Theta);

    let expand = |w: &VectorField| -> Result<(TrigExpr, TrigExpr), CrError> {
        // w = a xi4 + b xi5: a from theta, b from the heading projection.
        let a = w.comps[it].clone();
        let r = w.sub(&m.xi4.scale(&a));
        let b = &(&r.comps[ix] * &cth) + &(&r.comps[iy] * &sth);
        let resid = r.sub(&m.xi5.scale(&b));
        if !resid.is_zero() {
            return Err(CrError::NotInvariant);
        }
        Ok((a, b))
    };

    let j5 = pull_back_j_field(m, j, &m.xi5)?;
    let j4 = pull_back_j_field(m, j, &m.xi4)?;
    let (a, b) = expand(&j5)?;
    let (c, d) = expand(&j4)?;

    // zeta_+ = xi5 - i (a xi4 + b xi5).
    let im = m
        .xi4
        .scale(&a)
        .add(&m.xi5.scale(&b))
        .scale(&TrigExpr::from_i64(-1));
    let zeta_plus = (m.xi5.clone(), im);

    // J zeta_+ = i zeta_+ reduces to J(im) = re on the expansion
    // coefficients: -(a (c xi4 + d xi5) + b (a xi4 + b xi5)) = xi5.
    let coeff_xi4 = -&(&(&a * &c) + &(&b * &a));
    let coeff_xi5 = -&(&(&a * &d) + &(&b * &b));
    if !coeff_xi4.is_zero() || !(&coeff_xi5 - &TrigExpr::one()).is_zero() {
        return Err(CrError::NotInvariant);
    }

    Ok(EigenFields {
        a,
        b,
        c,
        d,
        zeta_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use num_traits::One;
    use crate::snake::{build_model, sample_point};

    fn centered_params() -> SnakeParams {
        SnakeParams::exact(
            BigRational::one(),
            BigRational::new(1.into(), 2.into()),
            BigRational::one(),
        )
        .unwrap()
    }

    #[test]
    fn literal_j_squares_to_minus_identity() {
        assert!(literal_j().is_complex_structure());
        assert!(standard_block_j().is_complex_structure());
        let mut ident = JMat::zeros();
        for i in 0..8 {
            ident.0[(i, i)] = RatFunc::one();
        }
        assert!(!ident.is_complex_structure());
    }

    #[test]
    fn tangency_holds_for_literal_j() {
        // dh_i(J dPhi(xi_a)) = 0 identically for the display matrix.
        let m = build_model(&centered_params()).unwrap();
        let j = literal_j();
        let grads = constraint_gradients(&m);
        for xi in [&m.xi4, &m.xi5] {
            let v = push_forward(&m, xi);
            let jv = j.apply_symbolic(&v);
            for g in &grads {
                let mut acc = TrigExpr::zero();
                for i in 0..8 {
                    acc = &acc + &(&g[i] * &jv[i]);
                }
                assert!(acc.is_zero());
            }
        }
    }

    #[test]
    fn holomorphic_signs() {
        let j = literal_j();
        let eps = holomorphic_check(&j);
        // Exact per-coordinate signs; the third literal coordinate is the
        // odd one out.
        assert_eq!(eps, vec![Some(-1), Some(-1), Some(1), Some(-1)]);
        let eps_rep = holomorphic_check_repaired(&j);
        assert_eq!(eps_rep, vec![Some(-1), Some(-1), Some(-1), Some(-1)]);
        // Negating J conjugates every sign.
        let eps_neg = holomorphic_check_repaired(&j.neg());
        assert_eq!(eps_neg, vec![Some(1), Some(1), Some(1), Some(1)]);
    }

    #[test]
    fn intersection_dimensions() {
        let m = build_model(&centered_params()).unwrap();
        let mut rng = Rng::new(11);
        let j = literal_j();
        for _ in 0..5 {
            let pt = sample_point(&m, &mut rng);
            let r = cr_intersection(&j, &m, &pt).unwrap();
            assert_eq!(r.dimension, 2);
            assert!(r.projector_distance < 1e-8, "{}", r.projector_distance);
        }
        // The standard block structure generically meets TM in a 2-plane,
        // but not the distribution plane.
        let jstd = standard_block_j();
        let mut distinct = 0;
        for _ in 0..5 {
            let pt = sample_point(&m, &mut rng);
            let r = cr_intersection(&jstd, &m, &pt).unwrap();
            assert_eq!(r.dimension, 2);
            if r.projector_distance > 1e-3 {
                distinct += 1;
            }
        }
        assert!(distinct >= 4);
    }

    #[test]
    fn off_center_has_wrong_intersection() {
        let params = SnakeParams::exact(
            BigRational::one(),
            BigRational::new(1.into(), 3.into()),
            BigRational::one(),
        )
        .unwrap();
        let m = build_model(&params).unwrap();
        let j = literal_j();
        let mut rng = Rng::new(5);
        let mut bad = 0;
        for _ in 0..5 {
            let pt = sample_point(&m, &mut rng);
            let r = cr_intersection(&j, &m, &pt).unwrap();
            if r.dimension != 2 || r.projector_distance > 1e-8 {
                bad += 1;
            }
        }
        assert!(bad >= 4);
    }

    #[test]
    fn eigenfields_of_literal_j() {
        let m = build_model(&centered_params()).unwrap();
        let j = literal_j();
        let e = eigenfields(&m, &j).unwrap();
        // zeta_± span the distribution plane at a point.
        let mut rng = Rng::new(3);
        let pt = sample_point(&m, &mut rng);
        let re = e.zeta_plus.0.eval(&pt).unwrap();
        let im = e.zeta_plus.1.eval(&pt).unwrap();
        let x4 = m.xi4.eval(&pt).unwrap();
        let x5 = m.xi5.eval(&pt).unwrap();
        let a = MatF::from_rows(&[re, im, x4, x5]);
        assert_eq!(a.rank_with_threshold(1e-8), 2);
    }

    #[test]
    fn beta_chart_annihilates_constraints() {
        let m = build_model(&centered_params()).unwrap();
        let bc = beta_chart(&m).unwrap();
        for h in &m.constraints {
            assert!(h.substitute_cart(&bc.to_ambient).is_zero());
        }
        // Degenerate request rejected.
        let params = SnakeParams::exact(
            BigRational::one(),
            BigRational::new(1.into(), 3.into()),
            BigRational::one(),
        )
        .unwrap();
        let m2 = build_model(&params).unwrap();
        assert!(matches!(beta_chart(&m2), Err(CrError::NeedsCentered(_))));
    }

    #[test]
    fn coframe_reality_and_wedge() {
        let m = build_model(&centered_params()).unwrap();
        let c = adapted_coframe(&m).unwrap();
        assert_eq!(c.forms[1], c.forms[0].conj());
        assert_eq!(c.forms[4], c.forms[3].conj());
        assert!(c.forms[2].im.is_zero());
        // Kernel of (w1, w2, w3) is the distribution.
        for f in &c.forms[..3] {
            let (re4, im4) = f.pair(&m.xi4).unwrap();
            let (re5, im5) = f.pair(&m.xi5).unwrap();
            assert!(re4.is_zero() && im4.is_zero() && re5.is_zero() && im5.is_zero());
        }
        // Numeric nondegeneracy.
        let mut rng = Rng::new(17);
        for _ in 0..5 {
            let pt = sample_point(&m, &mut rng);
            let re = c.wedge_coeff.0.eval(&pt).unwrap();
            let im = c.wedge_coeff.1.eval(&pt).unwrap();
            assert!((re * re + im * im).sqrt() > 1e-6);
        }
    }

    #[test]
    fn solve_finds_exactly_plus_minus_display_matrix() {
        let m = build_model(&centered_params()).unwrap();
        let mut rng = Rng::new(23);
        let pts: Vec<NumericPoint> = (0..6).map(|_| sample_point(&m, &mut rng)).collect();
        let out = solve_complex_structure(&m, &pts).unwrap();
        assert!(out.certified_complete);
        assert_eq!(out.solutions.len(), 2);
        let j = literal_j();
        assert!(out.solutions.iter().any(|s| *s == j));
        assert!(out.solutions.iter().any(|s| *s == j.neg()));
    }

    #[test]
    fn solve_is_empty_off_center() {
        for (p, q) in [(1i64, 4i64), (1, 3), (2, 3)] {
            let params = SnakeParams::exact(
                BigRational::one(),
                BigRational::new(p.into(), q.into()),
                BigRational::one(),
            )
            .unwrap();
            let m = build_model(&params).unwrap();
            let mut rng = Rng::new(29);
            let pts: Vec<NumericPoint> = (0..4).map(|_| sample_point(&m, &mut rng)).collect();
            let out = solve_complex_structure(&m, &pts).unwrap();
            assert!(out.certified_complete, "s2 = {p}/{q}");
            assert!(out.solutions.is_empty(), "s2 = {p}/{q}");
        }
    }
}
