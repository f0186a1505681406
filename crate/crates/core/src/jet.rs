//! Minimal forward-mode automatic differentiation: second-order jets in the
//! three variables (x, y, t). Scene formulas are written once over [`Real`]
//! and evaluated either on plain `f64` or on [`Jet3`] to obtain gradients,
//! time derivatives and Hessians in closed form.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Truncated second-order Taylor expansion in (x, y, t): value, gradient and
/// symmetric Hessian, propagated through arithmetic and elementary functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub v: f64,
    pub g: [f64; 3],
    /// Upper triangle (xx, xy, xt, yy, yt, tt).
    pub h: [f64; 6],
}

impl Jet3 {
    pub fn variable(v: f64, which: usize) -> Self {
        let mut g = [0.0; 3];
        g[which] = 1.0;
        Jet3 { v, g, h: [0.0; 6] }
    }

    pub fn seed(x: f64, y: f64, t: f64) -> [Self; 3] {
        [
            Jet3::variable(x, 0),
            Jet3::variable(y, 1),
            Jet3::variable(t, 2),
        ]
    }

    pub fn grad_xy(&self) -> [f64; 2] {
        [self.g[0], self.g[1]]
    }

    pub fn dt(&self) -> f64 {
        self.g[2]
    }

    /// Spatial Hessian [[xx, xy], [xy, yy]].
    pub fn hess_xy(&self) -> [[f64; 2]; 2] {
        [[self.h[0], self.h[1]], [self.h[1], self.h[3]]]
    }

    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        let mut h = [0.0; 6];
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (k, (i, j)) in pairs.iter().enumerate() {
            h[k] = df * self.h[k] + ddf * self.g[*i] * self.g[*j];
        }
        Jet3 {
            v: f,
            g: [df * self.g[0], df * self.g[1], df * self.g[2]],
            h,
        }
    }
}

impl Add for Jet3 {
    type Output = Jet3;
    fn add(self, rhs: Jet3) -> Jet3 {
        let mut out = self;
        out.v += rhs.v;
        for i in 0..3 {
            out.g[i] += rhs.g[i];
        }
        for i in 0..6 {
            out.h[i] += rhs.h[i];
        }
        out
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    fn sub(self, rhs: Jet3) -> Jet3 {
        self + (-rhs)
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        let mut out = self;
        out.v = -out.v;
        for i in 0..3 {
            out.g[i] = -out.g[i];
        }
        for i in 0..6 {
            out.h[i] = -out.h[i];
        }
        out
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    fn mul(self, rhs: Jet3) -> Jet3 {
        let mut h = [0.0; 6];
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (k, (i, j)) in pairs.iter().enumerate() {
            h[k] = self.h[k] * rhs.v
                + rhs.h[k] * self.v
                + self.g[*i] * rhs.g[*j]
                + self.g[*j] * rhs.g[*i];
        }
        Jet3 {
            v: self.v * rhs.v,
            g: [
                self.g[0] * rhs.v + rhs.g[0] * self.v,
                self.g[1] * rhs.v + rhs.g[1] * self.v,
                self.g[2] * rhs.v + rhs.g[2] * self.v,
            ],
            h,
        }
    }
}

impl Div for Jet3 {
    type Output = Jet3;
    fn div(self, rhs: Jet3) -> Jet3 {
        let inv = rhs.chain(
            1.0 / rhs.v,
            -1.0 / (rhs.v * rhs.v),
            2.0 / (rhs.v * rhs.v * rhs.v),
        );
        self * inv
    }
}

impl Real for Jet3 {
    fn constant(v: f64) -> Self {
        Jet3 {
            v,
            g: [0.0; 3],
            h: [0.0; 6],
        }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos(), -self.v.sin())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin(), -self.v.cos())
    }
    fn powi(self, n: i32) -> Self {
        let f = self.v.powi(n);
        let df = n as f64 * self.v.powi(n - 1);
        let ddf = (n * (n - 1)) as f64 * self.v.powi(n - 2);
        self.chain(f, df, ddf)
    }
}
