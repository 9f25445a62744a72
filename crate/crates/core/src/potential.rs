//! Electromagnetic potentials `(A, V)` as field expressions, plus the
//! built-in catalog.

use nalgebra::{Matrix3, Vector3};

use crate::expr::{Expr, ExprError, Params, Var, SPEED_PARAM};
use crate::state::Constants;

/// Catalog entries addressable by name.
pub const CATALOG: [&str; 4] = ["free", "uniform-B", "coulomb", "plane-wave"];

/// Vector potential `A` and scalar potential `V` with their parameter values.
#[derive(Debug, Clone)]
pub struct Potentials {
    a: [Expr; 3],
    v: Expr,
    params: Params,
    // ∂A_i/∂q_j, ∂A_i/∂t, ∂V/∂q_j, ∂V/∂t
    da: [[Expr; 3]; 3],
    da_dt: [Expr; 3],
    dv: [Expr; 3],
    dv_dt: Expr,
}

/// Potentials and their first derivatives at one point `(q, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPotentials {
    pub a: Vector3<f64>,
    pub v: f64,
    /// `da[(i, j)] = ∂A_i/∂q_j`
    pub da: Matrix3<f64>,
    pub da_dt: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dv_dt: f64,
}

impl LocalPotentials {
    /// `B = ∇×A`
    pub fn magnetic(&self) -> Vector3<f64> {
        let d = &self.da;
        Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)])
    }

    /// `E = −(1/c)∂A/∂t − ∇V`
    pub fn electric(&self, k: &Constants) -> Vector3<f64> {
        -self.da_dt / k.c - self.dv
    }
}

impl Potentials {
    pub fn new(a: [Expr; 3], v: Expr, params: Params) -> Self {
        let da = std::array::from_fn(|i| std::array::from_fn(|j| a[i].diff(Var::SPATIAL[j])));
        let da_dt = std::array::from_fn(|i| a[i].diff(Var::T));
        let dv = std::array::from_fn(|j| v.diff(Var::SPATIAL[j]));
        let dv_dt = v.diff(Var::T);
        Self { a, v, params, da, da_dt, dv, dv_dt }
    }

    /// Parses inline component expressions; `params` declares the names in scope.
    pub fn parse(a: [&str; 3], v: &str, params: Params) -> Result<Self, ExprError> {
        let names: Vec<&str> = params.keys().map(String::as_str).collect();
        let a = [Expr::parse(a[0], &names)?, Expr::parse(a[1], &names)?, Expr::parse(a[2], &names)?];
        let v = Expr::parse(v, &names)?;
        Ok(Self::new(a, v, params))
    }

    /// Builds a catalog entry. Missing parameters default to 1.
    pub fn catalog(name: &str, params: &Params) -> Option<Self> {
        let get = |key: &str| params.get(key).copied().unwrap_or(1.0);
        let one = |key: &str| Params::from([(key.to_string(), get(key))]);
        let pot = match name {
            "free" => Self::parse(["0", "0", "0"], "0", Params::new()),
            "uniform-B" => Self::parse(["-B0*q2/2", "B0*q1/2", "0"], "0", one("B0")),
            "coulomb" => Self::parse(["0", "0", "0"], "k/sqrt(q1^2 + q2^2 + q3^2)", one("k")),
            "plane-wave" => Self::parse(["0", "A0*sin(q1 - c*t)", "0"], "0", one("A0")),
            _ => return None,
        };
        Some(pot.expect("catalog expressions parse"))
    }

    pub fn free() -> Self {
        Self::catalog("free", &Params::new()).unwrap()
    }

    pub fn a(&self) -> &[Expr; 3] {
        &self.a
    }

    pub fn v(&self) -> &Expr {
        &self.v
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Parameter bindings with `c` taken from the constants.
    pub fn bindings(&self, k: &Constants) -> Params {
        let mut b = self.params.clone();
        b.insert(SPEED_PARAM.to_string(), k.c);
        b
    }

    pub fn local(&self, q: &Vector3<f64>, t: f64, k: &Constants) -> Result<LocalPotentials, ExprError> {
        let b = self.bindings(k);
        let q = [q.x, q.y, q.z];
        let ev = |e: &Expr| e.eval(q, t, &b);
        let mut da = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                da[(i, j)] = ev(&self.da[i][j])?;
            }
        }
        Ok(LocalPotentials {
            a: Vector3::new(ev(&self.a[0])?, ev(&self.a[1])?, ev(&self.a[2])?),
            v: ev(&self.v)?,
            da,
            da_dt: Vector3::new(ev(&self.da_dt[0])?, ev(&self.da_dt[1])?, ev(&self.da_dt[2])?),
            dv: Vector3::new(ev(&self.dv[0])?, ev(&self.dv[1])?, ev(&self.dv[2])?),
            dv_dt: ev(&self.dv_dt)?,
        })
    }
}
