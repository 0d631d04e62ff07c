//! The three-segment snake: constraints, embedding, non-skidding Pfaffian
//! system, velocity distribution, and planar symmetries.
//!
//! Everything is re-derived from first principles for the chosen embedding
//! convention and then reconciled against the literal display formulas
//! (`literal_model`), which are transcribed verbatim for comparison; the
//! classical transcription carries sign inconsistencies that the discrepancy
//! report documents.

use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use serde::Serialize;
use std::collections::BTreeMap;

use crate::exterior::{
    growth_vector, lie_bracket, Distribution, ExteriorError, GrowthResult, KForm, VectorField,
};
use crate::numeric::{NumericPoint, Rng};
use crate::parse::parse;
use crate::poly::{Param, N_PARAMS};
use crate::ratfunc::RatFunc;
use crate::trig::TrigExpr;
use crate::vars::{AngVar, CartVar, Chart, Var};

#[derive(thiserror::Error, Debug)]
pub enum SnakeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("constraint {0} does not vanish on the embedding (convention bug)")]
    ConstraintResidual(usize),
    #[error("Pfaffian kernel is not rank 2: {0}")]
    KernelRank(String),
    #[error("pairing Y{form} (xi{field}) != 0 in the derived model (convention bug)")]
    PairingResidual { form: usize, field: usize },
    #[error("symmetry bracket not in the distribution span")]
    SymmetryFailure,
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error("generic growth vector {0:?} is not (2,3,5)")]
    WrongGrowth(Vec<usize>),
}

/// A scale parameter: kept symbolic or pinned to an exact positive rational.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamSpec {
    Symbolic,
    Exact(BigRational),
}

impl ParamSpec {
    pub fn exact_i64(p: i64, q: i64) -> ParamSpec {
        ParamSpec::Exact(BigRational::new(p.into(), q.into()))
    }

    fn as_field(&self, sym: Param) -> RatFunc {
        match self {
            ParamSpec::Symbolic => RatFunc::var(sym),
            ParamSpec::Exact(r) => RatFunc::constant(r.clone()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamSpec::Symbolic => None,
            ParamSpec::Exact(r) => r.to_f64(),
        }
    }

    pub fn display(&self, sym: Param) -> String {
        match self {
            ParamSpec::Symbolic => sym.name().to_string(),
            ParamSpec::Exact(r) => format!("{}", r),
        }
    }
}

/// Scale parameters of the snake: outer segment lengths `s1, s3` and the
/// middle wheel placement `s2 in (0,1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnakeParams {
    pub s1: ParamSpec,
    pub s2: BigRational,
    pub s3: ParamSpec,
}

impl SnakeParams {
    pub fn new(s1: ParamSpec, s2: BigRational, s3: ParamSpec) -> Result<SnakeParams, SnakeError> {
        if s2 <= BigRational::zero() || s2 >= BigRational::from_i64(1).unwrap() {
            return Err(SnakeError::InvalidParams(format!(
                "s2 = {} outside (0,1)",
                s2
            )));
        }
        for (spec, name) in [(&s1, "s1"), (&s3, "s3")] {
            if let ParamSpec::Exact(r) = spec {
                if !r.is_positive() {
                    return Err(SnakeError::InvalidParams(format!("{} = {} <= 0", name, r)));
                }
            }
        }
        Ok(SnakeParams { s1, s2, s3 })
    }

    /// Symbolic `s1, s3` and exact `s2`.
    pub fn symbolic(s2: BigRational) -> Result<SnakeParams, SnakeError> {
        SnakeParams::new(ParamSpec::Symbolic, s2, ParamSpec::Symbolic)
    }

    /// All three exact.
    pub fn exact(
        s1: BigRational,
        s2: BigRational,
        s3: BigRational,
    ) -> Result<SnakeParams, SnakeError> {
        SnakeParams::new(ParamSpec::Exact(s1), s2, ParamSpec::Exact(s3))
    }

    fn substitutions(&self) -> [Option<BigRational>; N_PARAMS] {
        let s1 = match &self.s1 {
            ParamSpec::Symbolic => None,
            ParamSpec::Exact(r) => Some(r.clone()),
        };
        let s3 = match &self.s3 {
            ParamSpec::Symbolic => None,
            ParamSpec::Exact(r) => Some(r.clone()),
        };
        [s1, Some(self.s2.clone()), s3]
    }

    pub fn s1_field(&self) -> RatFunc {
        self.s1.as_field(Param::S1)
    }

    pub fn s2_field(&self) -> RatFunc {
        RatFunc::constant(self.s2.clone())
    }

    pub fn s3_field(&self) -> RatFunc {
        self.s3.as_field(Param::S3)
    }

    /// Numeric parameter triple; symbolic entries fall back to `fallback`.
    pub fn numeric_or(&self, fallback: [f64; 2]) -> [f64; 3] {
        [
            self.s1.as_f64().unwrap_or(fallback[0]),
            self.s2.to_f64().unwrap(),
            self.s3.as_f64().unwrap_or(fallback[1]),
        ]
    }
}

/// Where the middle-segment wheel sits between the joints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MidWheelConvention {
    /// Wheel at `(1-s2) q2 + s2 q3` (reproduces the display formulas).
    JointWeighted,
    /// Wheel at `s2 q2 + (1-s2) q3` (the alternative reading).
    Alternative,
}

/// Resolved sign conventions of the build, recorded in every report.
#[derive(Clone, Debug, Serialize)]
pub struct Conventions {
    pub mid_wheel: MidWheelConvention,
    /// Sign of the `s1` offset of `q1` relative to `q2` along `e(theta+phi)`.
    pub q1_offset_sign: i8,
    /// Sign of the `s3` offset of `q4` relative to `q3` along `e(theta+psi)`.
    pub q4_offset_sign: i8,
    /// Orientation of `phi` inside `e(theta +- phi)` for the first segment.
    pub phi_orientation: i8,
    /// Orientation of `psi` inside `e(theta +- psi)` for the third segment.
    pub psi_orientation: i8,
    /// Overall sign chosen for each derived Pfaffian form.
    pub form_signs: [i8; 3],
}

/// The derived model: everything downstream computes from this.
#[derive(Clone, Debug)]
pub struct SnakeModel {
    pub params: SnakeParams,
    pub conventions: Conventions,
    /// Constraint functions on the ambient chart.
    pub constraints: [TrigExpr; 3],
    /// Embedding: ambient coordinates as functions on the snake chart.
    pub embedding: BTreeMap<CartVar, TrigExpr>,
    /// Derived Pfaffian forms on the snake chart.
    pub pfaffian: [KForm; 3],
    /// Kernel frame of the Pfaffian system (normalized).
    pub xi4: VectorField,
    pub xi5: VectorField,
    /// Bracket frame: `xi3 = [xi5, xi4]`, `xi2 = [xi5, xi3]`, `xi1 = [xi4, xi3]`.
    pub xi3: VectorField,
    pub xi2: VectorField,
    pub xi1: VectorField,
    /// Planar symmetry generators.
    pub symmetries: [VectorField; 3],
    /// Determinant of the 5-frame `(xi4, xi5, xi3, xi2, xi1)`.
    pub frame_det: TrigExpr,
}

fn subst(e: &TrigExpr, params: &SnakeParams) -> TrigExpr {
    e.substitute_params(&params.substitutions())
}

fn p(src: &str) -> TrigExpr {
    parse(src).expect("internal formula parses")
}

/// Constraint functions, transcribed once; used by both the derived and the
/// literal model.
pub fn constraints(params: &SnakeParams) -> [TrigExpr; 3] {
    [
        subst(&p("(x2-x1)^2 + (y2-y1)^2 - s1^2"), params),
        subst(&p("(x3-x2)^2 + (y3-y2)^2 - 1"), params),
        subst(&p("(x4-x3)^2 + (y4-y3)^2 - s3^2"), params),
    ]
}

struct EmbeddingCandidate {
    map: BTreeMap<CartVar, TrigExpr>,
    q1_offset_sign: i8,
    q4_offset_sign: i8,
    phi_orientation: i8,
    psi_orientation: i8,
}

fn build_embedding(
    params: &SnakeParams,
    mid: MidWheelConvention,
    e1: i8,
    o1: i8,
    e3: i8,
    o3: i8,
) -> EmbeddingCandidate {
    use CartVar::*;
    let (w2, w3) = match mid {
        MidWheelConvention::JointWeighted => ("s2", "(1-s2)"),
        MidWheelConvention::Alternative => ("(1-s2)", "s2"),
    };
    let fmt_angle = |orient: i8, var: &str| -> String {
        if orient >= 0 {
            format!("theta+{var}")
        } else {
            format!("theta-{var}")
        }
    };
    let a1 = fmt_angle(o1, "phi");
    let a3 = fmt_angle(o3, "psi");
    let sgn = |s: i8| if s >= 0 { "+" } else { "-" };

    let x2 = format!("x + {w2}*cos(theta)");
    let y2 = format!("y + {w2}*sin(theta)");
    let x3 = format!("x - {w3}*cos(theta)");
    let y3 = format!("y - {w3}*sin(theta)");
    let x1 = format!("{x2} {} s1*cos({a1})", sgn(e1));
    let y1 = format!("{y2} {} s1*sin({a1})", sgn(e1));
    let x4 = format!("{x3} {} s3*cos({a3})", sgn(e3));
    let y4 = format!("{y3} {} s3*sin({a3})", sgn(e3));

    let mut map = BTreeMap::new();
    for (v, src) in [
        (X1, &x1),
        (X2, &x2),
        (X3, &x3),
        (X4, &x4),
        (Y1, &y1),
        (Y2, &y2),
        (Y3, &y3),
        (Y4, &y4),
    ] {
        map.insert(v, subst(&p(src), params));
    }
    EmbeddingCandidate {
        map,
        q1_offset_sign: e1,
        q4_offset_sign: e3,
        phi_orientation: o1,
        psi_orientation: o3,
    }
}

/// Derive the three non-skidding forms for an embedding: each wheel's
/// velocity must be parallel to its segment, so the 2x2 cross product of the
/// wheel displacement with the unit segment direction vanishes.
fn derive_pfaffian(
    chart: &Chart,
    emb: &BTreeMap<CartVar, TrigExpr>,
    params: &SnakeParams,
    mid: MidWheelConvention,
) -> [KForm; 3] {
    use CartVar::*;
    let get = |v: CartVar| emb.get(&v).unwrap().clone();
    let d_of = |f: &TrigExpr| -> KForm { KForm::function(chart, f.clone()).ext_d() };

    // Wheel point of the middle segment.
    let (w2x, w2y) = {
        let (a, b) = match mid {
            MidWheelConvention::JointWeighted => ("1-s2", "s2"),
            MidWheelConvention::Alternative => ("s2", "1-s2"),
        };
        let ax = subst(&p(&format!("({a})")), params);
        let bx = subst(&p(&format!("({b})")), params);
        (
            &(&ax * &get(X2)) + &(&bx * &get(X3)),
            &(&ax * &get(Y2)) + &(&bx * &get(Y3)),
        )
    };

    // (wheel, direction, length) per segment; directions q2-q1, q2-q3, q4-q3.
    let seg = [
        (
            (get(X1), get(Y1)),
            (&get(X2) - &get(X1), &get(Y2) - &get(Y1)),
            params.s1_field(),
        ),
        (
            (w2x, w2y),
            (&get(X2) - &get(X3), &get(Y2) - &get(Y3)),
            RatFunc::one(),
        ),
        (
            (get(X4), get(Y4)),
            (&get(X4) - &get(X3), &get(Y4) - &get(Y3)),
            params.s3_field(),
        ),
    ];

    let mut out = Vec::with_capacity(3);
    for ((wx, wy), (vx, vy), len) in seg {
        let inv = len.inv();
        let ux = vx.scale(&inv);
        let uy = vy.scale(&inv);
        // cross(dW, u) = u_y dW_x - u_x dW_y
        let dwx = d_of(&wx);
        let dwy = d_of(&wy);
        let form = dwx.scale(&uy).sub(&dwy.scale(&ux));
        out.push(form);
    }
    [out[0].clone(), out[1].clone(), out[2].clone()]
}

/// Term-level comparison verdict between a derived object and its literal
/// counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Match,
    SignFlip,
    Mismatch,
}

pub fn compare_trig(a: &TrigExpr, b: &TrigExpr) -> Verdict {
    if a == b {
        return Verdict::Match;
    }
    let keys_a: Vec<_> = a.terms().map(|(k, _)| *k).collect();
    let keys_b: Vec<_> = b.terms().map(|(k, _)| *k).collect();
    if keys_a != keys_b {
        return Verdict::Mismatch;
    }
    for ((_, ca), (_, cb)) in a.terms().zip(b.terms()) {
        if ca != cb && *ca != -cb {
            return Verdict::Mismatch;
        }
    }
    Verdict::SignFlip
}

pub fn compare_forms(a: &KForm, b: &KForm) -> Verdict {
    let mut worst = Verdict::Match;
    let blades: std::collections::BTreeSet<u32> = a
        .blades()
        .map(|(k, _)| *k)
        .chain(b.blades().map(|(k, _)| *k))
        .collect();
    for bl in blades {
        match compare_trig(&a.coeff(bl), &b.coeff(bl)) {
            Verdict::Match => {}
            Verdict::SignFlip => {
                if worst == Verdict::Match {
                    worst = Verdict::SignFlip;
                }
            }
            Verdict::Mismatch => return Verdict::Mismatch,
        }
    }
    worst
}

pub fn compare_fields(a: &VectorField, b: &VectorField) -> Verdict {
    let mut worst = Verdict::Match;
    for (ca, cb) in a.comps.iter().zip(&b.comps) {
        match compare_trig(ca, cb) {
            Verdict::Match => {}
            Verdict::SignFlip => {
                if worst == Verdict::Match {
                    worst = Verdict::SignFlip;
                }
            }
            Verdict::Mismatch => return Verdict::Mismatch,
        }
    }
    worst
}

fn score(v: Verdict) -> u32 {
    match v {
        Verdict::Match => 2,
        Verdict::SignFlip => 1,
        Verdict::Mismatch => 0,
    }
}

/// Build the model for the given parameters.
///
/// The embedding signs (offset direction of the outer joints and orientation
/// of the relative angles) are selected by deriving candidate Pfaffian
/// systems for every sign choice and keeping the one that agrees best with
/// the literal display formulas; the derived system itself is the ground
/// truth and must satisfy all kernel pairings exactly.
pub fn build_model(params: &SnakeParams) -> Result<SnakeModel, SnakeError> {
    build_model_with(params, MidWheelConvention::JointWeighted)
}

pub fn build_model_with(
    params: &SnakeParams,
    mid: MidWheelConvention,
) -> Result<SnakeModel, SnakeError> {
    let chart = Chart::snake();
    let lit = literal_model(params);
    let h = constraints(params);

    let mut best: Option<(EmbeddingCandidate, [KForm; 3], [i8; 3], u32)> = None;
    for &e1 in &[-1i8, 1] {
        for &o1 in &[1i8, -1] {
            for &e3 in &[1i8, -1] {
                for &o3 in &[1i8, -1] {
                    let cand = build_embedding(params, mid, e1, o1, e3, o3);
                    // The embedding must satisfy the constraints exactly.
                    if h.iter().any(|hi| !hi.substitute_cart(&cand.map).is_zero()) {
                        continue;
                    }
                    let raw = derive_pfaffian(&chart, &cand.map, params, mid);
                    let mut signs = [1i8; 3];
                    let mut forms = Vec::with_capacity(3);
                    let mut total = 0u32;
                    for (i, f) in raw.iter().enumerate() {
                        let plus = compare_forms(f, &lit.pfaffian[i]);
                        let neg = f.neg();
                        let minus = compare_forms(&neg, &lit.pfaffian[i]);
                        if score(minus) > score(plus) {
                            signs[i] = -1;
                            total += score(minus);
                            forms.push(neg);
                        } else {
                            total += score(plus);
                            forms.push(f.clone());
                        }
                    }
                    let forms = [forms[0].clone(), forms[1].clone(), forms[2].clone()];
                    if best.as_ref().map(|(_, _, _, s)| total > *s).unwrap_or(true) {
                        best = Some((cand, forms, signs, total));
                    }
                }
            }
        }
    }
    let (cand, pfaffian, form_signs, _) = best.expect("at least one embedding candidate");

    for (i, hi) in h.iter().enumerate() {
        if !hi.substitute_cart(&cand.map).is_zero() {
            return Err(SnakeError::ConstraintResidual(i + 1));
        }
    }

    let (xi4, xi5) = kernel_frame(&chart, &pfaffian)?;

    // Pairings must vanish identically.
    for (fi, f) in pfaffian.iter().enumerate() {
        for (vi, v) in [(4usize, &xi4), (5usize, &xi5)] {
            if !f.pair(v)?.is_zero() {
                return Err(SnakeError::PairingResidual {
                    form: fi + 1,
                    field: vi,
                });
            }
        }
    }

    let xi3 = lie_bracket(&xi5, &xi4)?;
    let xi2 = lie_bracket(&xi5, &xi3)?;
    let xi1 = lie_bracket(&xi4, &xi3)?;

    let symmetries = symmetry_fields(&chart);

    let frame_mat = crate::linalg::Mat::from_rows(vec![
        xi4.comps.clone(),
        xi5.comps.clone(),
        xi3.comps.clone(),
        xi2.comps.clone(),
        xi1.comps.clone(),
    ]);
    let frame_det = frame_mat.det_bareiss();

    Ok(SnakeModel {
        params: params.clone(),
        conventions: Conventions {
            mid_wheel: mid,
            q1_offset_sign: cand.q1_offset_sign,
            q4_offset_sign: cand.q4_offset_sign,
            phi_orientation: cand.phi_orientation,
            psi_orientation: cand.psi_orientation,
            form_signs,
        },
        constraints: h,
        embedding: cand.map,
        pfaffian,
        xi4,
        xi5,
        xi3,
        xi2,
        xi1,
        symmetries,
        frame_det,
    })
}

/// Solve the Pfaffian kernel and normalize: `xi4` has zero `x,y` components
/// and unit `theta` component; `xi5` has zero `theta` component and `x`
/// component `cos(theta)`.
fn kernel_frame(chart: &Chart, pf: &[KForm; 3]) -> Result<(VectorField, VectorField), SnakeError> {
    let ix = chart.index_of(Var::Cart(CartVar::X)).unwrap();
    let iy = chart.index_of(Var::Cart(CartVar::Y)).unwrap();
    let it = chart.index_of(Var::Ang(AngVar::Theta)).unwrap();
    let ip = chart.index_of(Var::Ang(AngVar::Phi)).unwrap();
    let iq = chart.index_of(Var::Ang(AngVar::Psi)).unwrap();

    // Structural expectations on the derived system, each a rank-2 guard.
    let c1_phi = pf[0]
        .comp(ip)
        .as_coeff()
        .ok_or_else(|| SnakeError::KernelRank("Y1 dphi coefficient not scalar".into()))?;
    let c3_psi = pf[2]
        .comp(iq)
        .as_coeff()
        .ok_or_else(|| SnakeError::KernelRank("Y3 dpsi coefficient not scalar".into()))?;
    if c1_phi.is_zero() || c3_psi.is_zero() {
        return Err(SnakeError::KernelRank(
            "degenerate dphi/dpsi coefficient".into(),
        ));
    }
    if !pf[1].comp(it).is_zero() || !pf[1].comp(ip).is_zero() || !pf[1].comp(iq).is_zero() {
        return Err(SnakeError::KernelRank(
            "middle form has angular components".into(),
        ));
    }
    if !pf[0].comp(iq).is_zero() || !pf[2].comp(ip).is_zero() {
        return Err(SnakeError::KernelRank("cross angular coupling".into()));
    }

    // xi4 = d/dtheta + a d/dphi + b d/dpsi.
    let mut xi4 = VectorField::zero(chart);
    xi4.comps[it] = TrigExpr::one();
    xi4.comps[ip] = -&pf[0].comp(it).scale(&c1_phi.inv());
    xi4.comps[iq] = -&pf[2].comp(it).scale(&c3_psi.inv());

    // xi5 = cos(theta) d/dx + sin(theta) d/dy + a' d/dphi + b' d/dpsi.
    let cth = TrigExpr::cos_var(AngVar::Theta);
    let sth = TrigExpr::sin_var(AngVar::Theta);
    let mid_pair = &(&pf[1].comp(ix) * &cth) + &(&pf[1].comp(iy) * &sth);
    if !mid_pair.is_zero() {
        return Err(SnakeError::KernelRank(
            "middle form does not annihilate the heading direction".into(),
        ));
    }
    let mut xi5 = VectorField::zero(chart);
    xi5.comps[ix] = cth.clone();
    xi5.comps[iy] = sth.clone();
    let a5 = &(&pf[0].comp(ix) * &cth) + &(&pf[0].comp(iy) * &sth);
    let b5 = &(&pf[2].comp(ix) * &cth) + &(&pf[2].comp(iy) * &sth);
    xi5.comps[ip] = -&a5.scale(&c1_phi.inv());
    xi5.comps[iq] = -&b5.scale(&c3_psi.inv());

    Ok((xi4, xi5))
}

/// The planar symmetry generators: translations and the rotation.
pub fn symmetry_fields(chart: &Chart) -> [VectorField; 3] {
    let s1 = VectorField::coordinate(chart, Var::Cart(CartVar::X));
    let s2 = VectorField::coordinate(chart, Var::Cart(CartVar::Y));
    let mut s3 = VectorField::zero(chart);
    let ix = chart.index_of(Var::Cart(CartVar::X)).unwrap();
    let iy = chart.index_of(Var::Cart(CartVar::Y)).unwrap();
    let it = chart.index_of(Var::Ang(AngVar::Theta)).unwrap();
    s3.comps[ix] = p("y");
    s3.comps[iy] = p("-x");
    s3.comps[it] = p("-1");
    [s1, s2, s3]
}

/// The literal display formulas, transcribed verbatim; no invariant is
/// assumed about them.
#[derive(Clone, Debug)]
pub struct LiteralModel {
    pub constraints: [TrigExpr; 3],
    pub pfaffian: [KForm; 3],
    pub xi4: VectorField,
    pub xi5: VectorField,
    pub xi3: VectorField,
    pub xi2: VectorField,
    pub xi1: VectorField,
}

pub fn literal_model(params: &SnakeParams) -> LiteralModel {
    let chart = Chart::snake();
    let form = |dx: &str, dy: &str, dth: &str, dph: &str, dps: &str| -> KForm {
        let comps = vec![
            subst(&p(dx), params),
            subst(&p(dy), params),
            subst(&p(dth), params),
            subst(&p(dph), params),
            subst(&p(dps), params),
        ];
        KForm::one_form(&chart, comps)
    };
    let field = |x: &str, y: &str, th: &str, ph: &str, ps: &str| -> VectorField {
        VectorField::new(
            &chart,
            vec![
                subst(&p(x), params),
                subst(&p(y), params),
                subst(&p(th), params),
                subst(&p(ph), params),
                subst(&p(ps), params),
            ],
        )
    };

    LiteralModel {
        constraints: constraints(params),
        pfaffian: [
            form(
                "sin(phi+theta)",
                "-cos(phi+theta)",
                "-(s2*cos(phi) - s1)",
                "s1",
                "0",
            ),
            form("sin(theta)", "-cos(theta)", "0", "0", "0"),
            form(
                "sin(psi+theta)",
                "-cos(psi+theta)",
                "-((1-s2)*cos(psi) - s3)",
                "0",
                "-s3",
            ),
        ],
        xi4: field(
            "0",
            "0",
            "1",
            "-(1 - (s2/s1)*cos(phi))",
            "-(1 - ((1-s2)/s3)*cos(psi))",
        ),
        xi5: field(
            "cos(theta)",
            "sin(theta)",
            "0",
            "(1/s1)*sin(phi)",
            "-(1/s3)*sin(psi)",
        ),
        xi3: field(
            "sin(theta)",
            "-cos(theta)",
            "0",
            "-(1/s1)*(s2/s1 - cos(phi))",
            "(1/s3)*((1-s2)/s3 - cos(psi))",
        ),
        xi2: field(
            "0",
            "0",
            "0",
            "-(1/s1^2)*(1 - (s2/s1)*cos(phi))",
            "-(1/s3^2)*(1 - ((1-s2)/s3)*cos(psi))",
        ),
        xi1: field(
            "cos(theta)",
            "sin(theta)",
            "0",
            "((s1^2-s2^2)/s1^3)*sin(phi)",
            "(((1-s2)^2-s3^2)/s3^3)*sin(psi)",
        ),
    }
}

/// One compared object.
#[derive(Clone, Debug, Serialize)]
pub struct DiscrepancyEntry {
    pub object: String,
    pub verdict: Verdict,
    pub literal: String,
    pub derived: String,
    /// literal - derived, canonical; zero iff verdict is Match.
    pub difference: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscrepancyReport {
    pub entries: Vec<DiscrepancyEntry>,
    /// The literal kernel pairings that fail, as canonical expressions.
    pub literal_pairing_failures: Vec<(String, String)>,
}

/// Compare the derived model against the literal transcription.
pub fn discrepancy_report(m: &SnakeModel, lit: &LiteralModel) -> DiscrepancyReport {
    let mut entries = Vec::new();

    for i in 0..3 {
        entries.push(DiscrepancyEntry {
            object: format!("h{}", i + 1),
            verdict: compare_trig(&lit.constraints[i], &m.constraints[i]),
            literal: format!("{}", lit.constraints[i]),
            derived: format!("{}", m.constraints[i]),
            difference: format!("{}", &lit.constraints[i] - &m.constraints[i]),
        });
    }
    for i in 0..3 {
        entries.push(DiscrepancyEntry {
            object: format!("Upsilon{}", i + 1),
            verdict: compare_forms(&m.pfaffian[i], &lit.pfaffian[i]),
            literal: format!("{}", lit.pfaffian[i]),
            derived: format!("{}", m.pfaffian[i]),
            difference: format!("{}", lit.pfaffian[i].sub(&m.pfaffian[i])),
        });
    }
    for (name, a, b) in [
        ("xi4", &m.xi4, &lit.xi4),
        ("xi5", &m.xi5, &lit.xi5),
        ("xi3", &m.xi3, &lit.xi3),
        ("xi2", &m.xi2, &lit.xi2),
        ("xi1", &m.xi1, &lit.xi1),
    ] {
        let fmt = |v: &VectorField| {
            format!(
                "({})",
                v.comps
                    .iter()
                    .map(|c| format!("{}", c))
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        entries.push(DiscrepancyEntry {
            object: name.to_string(),
            verdict: compare_fields(a, b),
            literal: fmt(b),
            derived: fmt(a),
            difference: fmt(&b.sub(a)),
        });
    }

    // The literal system's kernel failures.
    let mut literal_pairing_failures = Vec::new();
    for (fi, f) in lit.pfaffian.iter().enumerate() {
        for (vi, v) in [(4usize, &lit.xi4), (5usize, &lit.xi5)] {
            let pairing = f.pair(v).expect("same chart");
            if !pairing.is_zero() {
                literal_pairing_failures.push((
                    format!("Upsilon{}(xi{})", fi + 1, vi),
                    format!("{}", pairing),
                ));
            }
        }
    }

    DiscrepancyReport {
        entries,
        literal_pairing_failures,
    }
}

/// Growth vector check plus the frame determinant's numeric vanishing locus.
pub struct GrowthCheck {
    pub growth: GrowthResult,
    pub det_vanishing_fraction: f64,
}

pub fn check_growth(
    m: &SnakeModel,
    n_points: usize,
    rng: &mut Rng,
) -> Result<GrowthCheck, SnakeError> {
    let pts: Vec<NumericPoint> = (0..n_points).map(|_| sample_point(m, rng)).collect();
    let d = Distribution::new(vec![m.xi4.clone(), m.xi5.clone()]);
    let growth = growth_vector(&d, 3, &pts)?;
    if growth.symbolic != vec![2, 3, 5] {
        return Err(SnakeError::WrongGrowth(growth.symbolic));
    }

    let mut vanish = 0usize;
    for pt in &pts {
        let v = m.frame_det.eval(pt).map_err(ExteriorError::from)?;
        if v.abs() < 1e-8 {
            vanish += 1;
        }
    }
    Ok(GrowthCheck {
        growth,
        det_vanishing_fraction: vanish as f64 / n_points as f64,
    })
}

/// Uniform chart sample; symbolic parameters draw from `[1/2, 2]`.
pub fn sample_point(m: &SnakeModel, rng: &mut Rng) -> NumericPoint {
    let params = m.params.numeric_or([rng.range(0.5, 2.0), rng.range(0.5, 2.0)]);
    let mut pt = NumericPoint::with_params(params[0], params[1], params[2]);
    pt.set_cart(CartVar::X, rng.range(-1.0, 1.0));
    pt.set_cart(CartVar::Y, rng.range(-1.0, 1.0));
    pt.set_ang(AngVar::Theta, rng.range(0.0, std::f64::consts::TAU));
    pt.set_ang(AngVar::Phi, rng.range(0.0, std::f64::consts::TAU));
    pt.set_ang(AngVar::Psi, rng.range(0.0, std::f64::consts::TAU));
    pt
}

/// Exact symmetry check: every bracket `[sigma_i, xi_a]` must lie in the
/// `TrigExpr`-span of `(xi4, xi5)`; returns the expansion coefficients.
pub fn check_symmetries(m: &SnakeModel) -> Result<Vec<(String, TrigExpr, TrigExpr)>, SnakeError> {
    let chart = &m.xi4.chart;
    let ix = chart.index_of(Var::Cart(CartVar::X)).unwrap();
    let iy = chart.index_of(Var::Cart(CartVar::Y)).unwrap();
    let it = chart.index_of(Var::Ang(AngVar::Theta)).unwrap();
    let cth = TrigExpr::cos_var(AngVar::Theta);
    let sth = TrigExpr::sin_var(AngVar::Theta);

    let mut out = Vec::new();
    for (si, s) in m.symmetries.iter().enumerate() {
        for (name, xi) in [("xi4", &m.xi4), ("xi5", &m.xi5)] {
            let b = lie_bracket(s, xi)?;
            // Coefficient on xi4 from the theta component, on xi5 from the
            // (x, y) components projected on the heading direction.
            let a = b.comps[it].clone();
            let r = b.sub(&m.xi4.scale(&a));
            let c = &(&r.comps[ix] * &cth) + &(&r.comps[iy] * &sth);
            let resid = r.sub(&m.xi5.scale(&c));
            if !resid.is_zero() {
                return Err(SnakeError::SymmetryFailure);
            }
            out.push((format!("[sigma{}, {}]", si + 1, name), a, c));
        }
    }
    Ok(out)
}

/// Push a chart vector field forward along the embedding: 8 ambient
/// components in the order `x1..x4, y1..y4`.
pub fn push_forward(m: &SnakeModel, v: &VectorField) -> Vec<TrigExpr> {
    Chart::ambient()
        .vars()
        .iter()
        .map(|av| {
            let f = match av {
                Var::Cart(c) => m.embedding.get(c).unwrap(),
                _ => unreachable!(),
            };
            v.apply(f)
        })
        .collect()
}

/// Map a chart point through the embedding, filling the ambient slots.
pub fn embed_point(
    m: &SnakeModel,
    pt: &NumericPoint,
) -> Result<NumericPoint, crate::trig::EvalError> {
    let mut out = *pt;
    for (v, f) in &m.embedding {
        out.set_cart(*v, f.eval(pt)?);
    }
    Ok(out)
}

/// The intrinsic non-skidding statement: along `xi`, each wheel's velocity is
/// proportional to its segment direction (2x2 determinant vanishes).
pub fn non_skidding_determinants(m: &SnakeModel, xi: &VectorField) -> Vec<TrigExpr> {
    use CartVar::*;
    let get = |v: CartVar| m.embedding.get(&v).unwrap().clone();
    let (a, b) = match m.conventions.mid_wheel {
        MidWheelConvention::JointWeighted => ("1-s2", "s2"),
        MidWheelConvention::Alternative => ("s2", "1-s2"),
    };
    let ax = subst(&p(&format!("({a})")), &m.params);
    let bx = subst(&p(&format!("({b})")), &m.params);
    let w2x = &(&ax * &get(X2)) + &(&bx * &get(X3));
    let w2y = &(&ax * &get(Y2)) + &(&bx * &get(Y3));

    let wheels = [
        (
            (get(X1), get(Y1)),
            (&get(X2) - &get(X1), &get(Y2) - &get(Y1)),
        ),
        ((w2x, w2y), (&get(X3) - &get(X2), &get(Y3) - &get(Y2))),
        (
            (get(X4), get(Y4)),
            (&get(X4) - &get(X3), &get(Y4) - &get(Y3)),
        ),
    ];
    wheels
        .into_iter()
        .map(|((wx, wy), (vx, vy))| {
            let velx = xi.apply(&wx);
            let vely = xi.apply(&wy);
            &(&velx * &vy) - &(&vely * &vx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_default() -> SnakeParams {
        SnakeParams::symbolic(BigRational::new(1.into(), 2.into())).unwrap()
    }

    #[test]
    fn constraints_vanish_on_embedding_symbolically() {
        let m = build_model(&params_default()).unwrap();
        for h in &m.constraints {
            assert!(h.substitute_cart(&m.embedding).is_zero());
        }
    }

    #[test]
    fn derived_upsilon2_matches_display() {
        let m = build_model(&params_default()).unwrap();
        let lit = literal_model(&m.params);
        assert_eq!(
            compare_forms(&m.pfaffian[1], &lit.pfaffian[1]),
            Verdict::Match
        );
        // Y1 matches exactly as well; Y3 differs by one sign.
        assert_eq!(
            compare_forms(&m.pfaffian[0], &lit.pfaffian[0]),
            Verdict::Match
        );
        assert_eq!(
            compare_forms(&m.pfaffian[2], &lit.pfaffian[2]),
            Verdict::SignFlip
        );
    }

    #[test]
    fn all_six_pairings_vanish() {
        let m = build_model(&params_default()).unwrap();
        for f in &m.pfaffian {
            assert!(f.pair(&m.xi4).unwrap().is_zero());
            assert!(f.pair(&m.xi5).unwrap().is_zero());
        }
    }

    #[test]
    fn literal_pairing_failures_are_the_known_three() {
        let params = params_default();
        let m = build_model(&params).unwrap();
        let lit = literal_model(&params);
        let rep = discrepancy_report(&m, &lit);
        assert_eq!(rep.literal_pairing_failures.len(), 3);
        let failures: BTreeMap<String, String> =
            rep.literal_pairing_failures.iter().cloned().collect();
        assert_eq!(
            parse(&failures["Upsilon1(xi5)"]).unwrap(),
            subst(&p("2*sin(phi)"), &params)
        );
        assert_eq!(
            parse(&failures["Upsilon3(xi5)"]).unwrap(),
            subst(&p("2*sin(psi)"), &params)
        );
        assert_eq!(
            parse(&failures["Upsilon3(xi4)"]).unwrap(),
            subst(&p("2*s3 - 2*(1-s2)*cos(psi)"), &params)
        );
    }

    #[test]
    fn derived_frame_matches_display_up_to_sign_flips() {
        let m = build_model(&params_default()).unwrap();
        let lit = literal_model(&m.params);
        assert_eq!(compare_fields(&m.xi4, &lit.xi4), Verdict::Match);
        assert_eq!(compare_fields(&m.xi5, &lit.xi5), Verdict::SignFlip);
        assert_eq!(compare_fields(&m.xi3, &lit.xi3), Verdict::SignFlip);
        assert_eq!(compare_fields(&m.xi2, &lit.xi2), Verdict::Match);
        assert_eq!(compare_fields(&m.xi1, &lit.xi1), Verdict::SignFlip);
    }

    #[test]
    fn symmetries_all_commute() {
        let m = build_model(&params_default()).unwrap();
        let coeffs = check_symmetries(&m).unwrap();
        assert_eq!(coeffs.len(), 6);
        for (_, a, b) in coeffs {
            assert!(a.is_zero());
            assert!(b.is_zero());
        }
    }

    #[test]
    fn growth_vector_is_235() {
        let m = build_model(&params_default()).unwrap();
        let mut rng = Rng::new(42);
        let g = check_growth(&m, 40, &mut rng).unwrap();
        assert_eq!(g.growth.symbolic, vec![2, 3, 5]);
        assert!(g.det_vanishing_fraction < 0.05);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(SnakeParams::exact(
            BigRational::from_i64(1).unwrap(),
            BigRational::zero(),
            BigRational::from_i64(1).unwrap()
        )
        .is_err());
        assert!(SnakeParams::exact(
            BigRational::from_i64(0).unwrap(),
            BigRational::new(1.into(), 2.into()),
            BigRational::from_i64(1).unwrap()
        )
        .is_err());
    }

    #[test]
    fn non_skidding_intrinsic() {
        let m = build_model(&params_default()).unwrap();
        for xi in [&m.xi4, &m.xi5] {
            for det in non_skidding_determinants(&m, xi) {
                assert!(det.is_zero());
            }
        }
    }
}
