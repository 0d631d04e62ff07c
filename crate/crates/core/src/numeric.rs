//! Numeric assignments for the fast evaluation lane.

use crate::poly::N_PARAMS;
use crate::vars::{AngVar, CartVar, Var, N_ANG, N_CART};

/// Double-precision values for every variable and parameter in the universe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericPoint {
    pub cart: [f64; N_CART],
    pub ang: [f64; N_ANG],
    pub params: [f64; N_PARAMS],
}

impl NumericPoint {
    pub fn new() -> NumericPoint {
        NumericPoint {
            cart: [0.0; N_CART],
            ang: [0.0; N_ANG],
            params: [0.0; N_PARAMS],
        }
    }

    pub fn with_params(s1: f64, s2: f64, s3: f64) -> NumericPoint {
        let mut p = NumericPoint::new();
        p.params = [s1, s2, s3];
        p
    }

    pub fn set(&mut self, v: Var, val: f64) -> &mut Self {
        match v {
            Var::Cart(c) => self.cart[c as usize] = val,
            Var::Ang(a) => self.ang[a as usize] = val,
        }
        self
    }

    pub fn set_cart(&mut self, v: CartVar, val: f64) -> &mut Self {
        self.cart[v as usize] = val;
        self
    }

    pub fn set_ang(&mut self, v: AngVar, val: f64) -> &mut Self {
        self.ang[v as usize] = val;
        self
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::Cart(c) => self.cart[c as usize],
            Var::Ang(a) => self.ang[a as usize],
        }
    }
}

impl Default for NumericPoint {
    fn default() -> Self {
        NumericPoint::new()
    }
}

/// Deterministic splitmix64 stream; stable across platforms and releases.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.f64()
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard-normal-ish via Box-Muller (deterministic).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.f64().max(1e-300);
        let u2 = self.f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
