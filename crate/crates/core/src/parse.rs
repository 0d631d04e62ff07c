//! Expression front-end.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := ['-'] term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ['-'] atom ('^' ['-'] integer)?
//! atom   := integer | name | '(' expr ')' | ('sin'|'cos') '(' expr ')'
//! ```
//!
//! Names are the parameters `s1 s2 s3`, Cartesian variables
//! (`x y u v x1..x4 y1..y4`) and angle variables
//! (`theta phi psi beta1 beta2 beta3`). Arguments of `sin`/`cos` must reduce
//! to integer linear combinations of angle variables. Division is only by
//! subexpressions that reduce to a pure parameter-field element.
//!
//! The parse tree is kept around: evaluating it directly (no canonical form
//! anywhere on that path) provides an oracle independent of the canonical
//! arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::numeric::NumericPoint;
use crate::poly::Param;
use crate::ratfunc::RatFunc;
use crate::trig::{TrigExpr, TrigKind, ZERO_FREQ};
use crate::vars::{Var, N_ANG};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown name `{name}` at byte {pos}")]
    UnknownName { pos: usize, name: String },
    #[error("non-linear trigonometric argument at byte {pos}")]
    NonLinearTrigArg { pos: usize },
    #[error("division at byte {pos} by an expression that is not a pure parameter-field element")]
    BadDivision { pos: usize },
    #[error("division by zero at byte {pos}")]
    DivisionByZero { pos: usize },
    #[error("exponent out of range at byte {pos}")]
    BadExponent { pos: usize },
}

/// Raw parse tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Ast {
    Int(BigInt),
    Param(Param),
    Var(Var),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>, usize),
    Pow(Box<Ast>, i32, usize),
    Trig(TrigKind, Box<Ast>, usize),
}

impl Ast {
    /// Direct numeric evaluation of the raw tree (oracle lane).
    pub fn eval(&self, p: &NumericPoint) -> f64 {
        match self {
            Ast::Int(n) => n.to_f64().unwrap_or(f64::NAN),
            Ast::Param(s) => p.params[*s as usize],
            Ast::Var(v) => p.get(*v),
            Ast::Neg(a) => -a.eval(p),
            Ast::Add(a, b) => a.eval(p) + b.eval(p),
            Ast::Sub(a, b) => a.eval(p) - b.eval(p),
            Ast::Mul(a, b) => a.eval(p) * b.eval(p),
            Ast::Div(a, b, _) => a.eval(p) / b.eval(p),
            Ast::Pow(a, n, _) => a.eval(p).powi(*n),
            Ast::Trig(k, a, _) => {
                let x = a.eval(p);
                match k {
                    TrigKind::Cos => x.cos(),
                    TrigKind::Sin => x.sin(),
                }
            }
        }
    }

    /// Convert to canonical form.
    pub fn to_canonical(&self) -> Result<TrigExpr, ParseError> {
        match self {
            Ast::Int(n) => Ok(TrigExpr::coeff(RatFunc::constant(BigRational::from(
                n.clone(),
            )))),
            Ast::Param(s) => Ok(TrigExpr::param(*s)),
            Ast::Var(v) => match v {
                Var::Cart(c) => Ok(TrigExpr::cart(*c)),
                Var::Ang(_) => Err(ParseError::Syntax {
                    pos: 0,
                    msg: "angle variables may only appear inside sin/cos".into(),
                }),
            },
            Ast::Neg(a) => Ok(-&a.to_canonical()?),
            Ast::Add(a, b) => Ok(&a.to_canonical()? + &b.to_canonical()?),
            Ast::Sub(a, b) => Ok(&a.to_canonical()? - &b.to_canonical()?),
            Ast::Mul(a, b) => Ok(&a.to_canonical()? * &b.to_canonical()?),
            Ast::Div(a, b, pos) => {
                let den = b.to_canonical()?;
                let c = den.as_coeff().ok_or(ParseError::BadDivision { pos: *pos })?;
                if c.is_zero() {
                    return Err(ParseError::DivisionByZero { pos: *pos });
                }
                Ok(a.to_canonical()?.scale(&c.inv()))
            }
            Ast::Pow(a, n, pos) => {
                let base = a.to_canonical()?;
                if *n < 0 {
                    let c = base.as_coeff().ok_or(ParseError::BadDivision { pos: *pos })?;
                    if c.is_zero() {
                        return Err(ParseError::DivisionByZero { pos: *pos });
                    }
                    Ok(TrigExpr::coeff(c.pow(*n)))
                } else {
                    if *n > 60 {
                        return Err(ParseError::BadExponent { pos: *pos });
                    }
                    Ok(base.pow(*n as u32))
                }
            }
            Ast::Trig(k, a, pos) => {
                let freq = linear_angle_combination(a)
                    .ok_or(ParseError::NonLinearTrigArg { pos: *pos })?;
                Ok(match k {
                    TrigKind::Cos => TrigExpr::cos(freq),
                    TrigKind::Sin => TrigExpr::sin(freq),
                })
            }
        }
    }
}

/// Extract an integer linear combination of angle variables, if the subtree
/// is one.
fn linear_angle_combination(a: &Ast) -> Option<[i16; N_ANG]> {
    fn go(a: &Ast, scale: i64, acc: &mut [i64; N_ANG]) -> Option<()> {
        match a {
            Ast::Var(Var::Ang(v)) => {
                acc[*v as usize] += scale;
                Some(())
            }
            Ast::Neg(x) => go(x, -scale, acc),
            Ast::Add(x, y) => {
                go(x, scale, acc)?;
                go(y, scale, acc)
            }
            Ast::Sub(x, y) => {
                go(x, scale, acc)?;
                go(y, -scale, acc)
            }
            Ast::Mul(x, y) => match (int_value(x), int_value(y)) {
                (Some(n), None) => go(y, scale.checked_mul(n)?, acc),
                (None, Some(n)) => go(x, scale.checked_mul(n)?, acc),
                (Some(_), Some(_)) => None, // pure constant: not an angle term
                (None, None) => None,
            },
            _ => None,
        }
    }
    fn int_value(a: &Ast) -> Option<i64> {
        match a {
            Ast::Int(n) => n.to_i64(),
            Ast::Neg(x) => int_value(x).map(|v| -v),
            _ => None,
        }
    }
    let mut acc = [0i64; N_ANG];
    go(a, 1, &mut acc)?;
    let mut out = [0i16; N_ANG];
    for i in 0..N_ANG {
        out[i] = i16::try_from(acc[i]).ok()?;
    }
    Some(out)
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(BigInt),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' => {
                let mut end = self.pos;
                while end < self.src.len() && self.src[end].is_ascii_digit() {
                    end += 1;
                }
                let s = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                self.pos = end;
                Tok::Int(s.parse().unwrap())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let s = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                self.pos = end;
                Tok::Name(s.to_string())
            }
            other => {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok((tok, start))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    cur: Tok,
    cur_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Parser<'a>, ParseError> {
        let mut lex = Lexer::new(src);
        let (cur, cur_pos) = lex.next()?;
        Ok(Parser { lex, cur, cur_pos })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, p) = self.lex.next()?;
        self.cur = t;
        self.cur_pos = p;
        Ok(())
    }

    fn expr(&mut self) -> Result<Ast, ParseError> {
        let mut node = if self.cur == Tok::Minus {
            self.bump()?;
            Ast::Neg(Box::new(self.term()?))
        } else {
            self.term()?
        };
        loop {
            match self.cur {
                Tok::Plus => {
                    self.bump()?;
                    node = Ast::Add(Box::new(node), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump()?;
                    node = Ast::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Ast, ParseError> {
        let mut node = self.factor()?;
        loop {
            match self.cur {
                Tok::Star => {
                    self.bump()?;
                    node = Ast::Mul(Box::new(node), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    let pos = self.cur_pos;
                    self.bump()?;
                    node = Ast::Div(Box::new(node), Box::new(self.factor()?), pos);
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn factor(&mut self) -> Result<Ast, ParseError> {
        if self.cur == Tok::Minus {
            self.bump()?;
            return Ok(Ast::Neg(Box::new(self.factor()?)));
        }
        let mut node = self.atom()?;
        if self.cur == Tok::Caret {
            let pos = self.cur_pos;
            self.bump()?;
            let neg = if self.cur == Tok::Minus {
                self.bump()?;
                true
            } else {
                false
            };
            let n = match &self.cur {
                Tok::Int(n) => n.to_i32().ok_or(ParseError::BadExponent { pos })?,
                _ => {
                    return Err(ParseError::Syntax {
                        pos: self.cur_pos,
                        msg: "expected integer exponent".into(),
                    })
                }
            };
            self.bump()?;
            node = Ast::Pow(Box::new(node), if neg { -n } else { n }, pos);
        }
        Ok(node)
    }

    fn atom(&mut self) -> Result<Ast, ParseError> {
        match self.cur.clone() {
            Tok::Int(n) => {
                self.bump()?;
                Ok(Ast::Int(n))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr()?;
                if self.cur != Tok::RParen {
                    return Err(ParseError::Syntax {
                        pos: self.cur_pos,
                        msg: "expected `)`".into(),
                    });
                }
                self.bump()?;
                Ok(e)
            }
            Tok::Name(name) => {
                let pos = self.cur_pos;
                self.bump()?;
                if name == "sin" || name == "cos" {
                    if self.cur != Tok::LParen {
                        return Err(ParseError::Syntax {
                            pos: self.cur_pos,
                            msg: format!("expected `(` after `{}`", name),
                        });
                    }
                    self.bump()?;
                    let arg = self.expr()?;
                    if self.cur != Tok::RParen {
                        return Err(ParseError::Syntax {
                            pos: self.cur_pos,
                            msg: "expected `)`".into(),
                        });
                    }
                    self.bump()?;
                    let kind = if name == "sin" {
                        TrigKind::Sin
                    } else {
                        TrigKind::Cos
                    };
                    return Ok(Ast::Trig(kind, Box::new(arg), pos));
                }
                if let Some(p) = Param::from_name(&name) {
                    return Ok(Ast::Param(p));
                }
                if let Some(v) = Var::from_name(&name) {
                    return Ok(Ast::Var(v));
                }
                Err(ParseError::UnknownName { pos, name })
            }
            tok => Err(ParseError::Syntax {
                pos: self.cur_pos,
                msg: format!("unexpected token {:?}", tok),
            }),
        }
    }
}

/// Parse to the raw tree.
pub fn parse_ast(src: &str) -> Result<Ast, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if p.cur != Tok::End {
        return Err(ParseError::Syntax {
            pos: p.cur_pos,
            msg: "trailing input".into(),
        });
    }
    Ok(e)
}

/// Parse to canonical form.
pub fn parse(src: &str) -> Result<TrigExpr, ParseError> {
    parse_ast(src)?.to_canonical()
}

/// Canonical printer: `parse(print(e))` reproduces `e` exactly.
pub fn print(e: &TrigExpr) -> String {
    format!("{}", e)
}

#[allow(unused)]
fn zero_freq_probe() -> [i16; N_ANG] {
    ZERO_FREQ
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagorean_identity_canonicalizes_to_one() {
        let e = parse("sin(theta)^2 + cos(theta)^2").unwrap();
        assert_eq!(e, TrigExpr::one());
    }

    #[test]
    fn single_sin_term() {
        let e = parse("sin(phi+theta)").unwrap();
        assert_eq!(e.num_terms(), 1);
        let (k, c) = e.terms().next().unwrap();
        assert_eq!(k.kind, TrigKind::Sin);
        assert_eq!(k.freq[crate::vars::AngVar::Theta as usize], 1);
        assert_eq!(k.freq[crate::vars::AngVar::Phi as usize], 1);
        assert!(c.is_one());
    }

    #[test]
    fn product_to_sum_through_parser() {
        let e = parse("sin(theta)*cos(theta)").unwrap();
        let want = parse("sin(2*theta)/2").unwrap();
        assert_eq!(e, want);
    }

    #[test]
    fn syntax_error_position() {
        let err = parse("sin(theta) + )").unwrap_err();
        match err {
            ParseError::Syntax { pos, .. } => assert_eq!(pos, 13),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nonlinear_trig_argument_rejected() {
        let err = parse("sin(theta*theta)").unwrap_err();
        assert!(matches!(err, ParseError::NonLinearTrigArg { .. }));
        let err2 = parse("sin(x)").unwrap_err();
        assert!(matches!(err2, ParseError::NonLinearTrigArg { .. }));
    }

    #[test]
    fn division_restricted_to_coefficients() {
        assert!(parse("x / s1").is_ok());
        assert!(parse("(x+y) / (s1+s3)").is_ok());
        let err = parse("x / cos(theta)").unwrap_err();
        assert!(matches!(err, ParseError::BadDivision { .. }));
    }

    #[test]
    fn print_parse_roundtrip_spot() {
        for src in [
            "sin(phi+theta)",
            "1/2 + cos(2*theta)/2",
            "s1*x^2 - (s2/s3)*y*sin(theta-2*phi)",
            "x*y^3*cos(beta1)",
        ] {
            let e = parse(src).unwrap();
            let printed = print(&e);
            let e2 = parse(&printed)
                .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
            assert_eq!(e, e2, "roundtrip failed for `{src}` -> `{printed}`");
        }
    }
}
