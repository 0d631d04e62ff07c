//! The fixed variable universe shared by every chart.
//!
//! Cartesian variables carry polynomial degrees, angle variables only ever
//! appear inside `sin`/`cos` of integer linear combinations. The three scale
//! parameters `s1, s2, s3` live in a separate coefficient field and are not
//! chart variables.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of Cartesian variables in the universe.
pub const N_CART: usize = 12;
/// Number of angle variables in the universe.
pub const N_ANG: usize = 6;

/// Cartesian (polynomial) variables.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum CartVar {
    /// Wheel point of the middle segment, first coordinate.
    X = 0,
    /// Wheel point of the middle segment, second coordinate.
    Y = 1,
    /// Real part of the joint coordinate z2 in the beta chart.
    U = 2,
    /// Imaginary part of the joint coordinate z2 in the beta chart.
    V = 3,
    X1 = 4,
    X2 = 5,
    X3 = 6,
    X4 = 7,
    Y1 = 8,
    Y2 = 9,
    Y3 = 10,
    Y4 = 11,
}

/// Angle variables.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum AngVar {
    Theta = 0,
    Phi = 1,
    Psi = 2,
    Beta1 = 3,
    Beta2 = 4,
    Beta3 = 5,
}

/// Any chart variable.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Var {
    Cart(CartVar),
    Ang(AngVar),
}

pub const ALL_CART: [CartVar; N_CART] = [
    CartVar::X,
    CartVar::Y,
    CartVar::U,
    CartVar::V,
    CartVar::X1,
    CartVar::X2,
    CartVar::X3,
    CartVar::X4,
    CartVar::Y1,
    CartVar::Y2,
    CartVar::Y3,
    CartVar::Y4,
];

pub const ALL_ANG: [AngVar; N_ANG] = [
    AngVar::Theta,
    AngVar::Phi,
    AngVar::Psi,
    AngVar::Beta1,
    AngVar::Beta2,
    AngVar::Beta3,
];

impl CartVar {
    pub fn name(self) -> &'static str {
        match self {
            CartVar::X => "x",
            CartVar::Y => "y",
            CartVar::U => "u",
            CartVar::V => "v",
            CartVar::X1 => "x1",
            CartVar::X2 => "x2",
            CartVar::X3 => "x3",
            CartVar::X4 => "x4",
            CartVar::Y1 => "y1",
            CartVar::Y2 => "y2",
            CartVar::Y3 => "y3",
            CartVar::Y4 => "y4",
        }
    }

    pub fn from_name(s: &str) -> Option<CartVar> {
        ALL_CART.iter().copied().find(|v| v.name() == s)
    }
}

impl AngVar {
    pub fn name(self) -> &'static str {
        match self {
            AngVar::Theta => "theta",
            AngVar::Phi => "phi",
            AngVar::Psi => "psi",
            AngVar::Beta1 => "beta1",
            AngVar::Beta2 => "beta2",
            AngVar::Beta3 => "beta3",
        }
    }

    pub fn from_name(s: &str) -> Option<AngVar> {
        ALL_ANG.iter().copied().find(|v| v.name() == s)
    }
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Cart(c) => c.name(),
            Var::Ang(a) => a.name(),
        }
    }

    pub fn from_name(s: &str) -> Option<Var> {
        CartVar::from_name(s)
            .map(Var::Cart)
            .or_else(|| AngVar::from_name(s).map(Var::Ang))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CartVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for AngVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An ordered list of distinct chart variables, fixed for the chart's lifetime.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Chart {
    vars: Vec<Var>,
}

impl Chart {
    pub fn new(vars: Vec<Var>) -> Chart {
        for (i, v) in vars.iter().enumerate() {
            assert!(
                !vars[..i].contains(v),
                "duplicate chart variable {}",
                v.name()
            );
        }
        Chart { vars }
    }

    /// The configuration chart (x, y, theta, phi, psi) of the snake.
    pub fn snake() -> Chart {
        Chart::new(vec![
            Var::Cart(CartVar::X),
            Var::Cart(CartVar::Y),
            Var::Ang(AngVar::Theta),
            Var::Ang(AngVar::Phi),
            Var::Ang(AngVar::Psi),
        ])
    }

    /// The ambient chart (x1, x2, x3, x4, y1, y2, y3, y4) of joint positions.
    pub fn ambient() -> Chart {
        Chart::new(vec![
            Var::Cart(CartVar::X1),
            Var::Cart(CartVar::X2),
            Var::Cart(CartVar::X3),
            Var::Cart(CartVar::X4),
            Var::Cart(CartVar::Y1),
            Var::Cart(CartVar::Y2),
            Var::Cart(CartVar::Y3),
            Var::Cart(CartVar::Y4),
        ])
    }

    /// The chart (beta1, beta2, beta3, u, v) adapted to the constraint locus.
    pub fn beta() -> Chart {
        Chart::new(vec![
            Var::Ang(AngVar::Beta1),
            Var::Ang(AngVar::Beta2),
            Var::Ang(AngVar::Beta3),
            Var::Cart(CartVar::U),
            Var::Cart(CartVar::V),
        ])
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn index_of(&self, v: Var) -> Option<usize> {
        self.vars.iter().position(|w| *w == v)
    }
}
