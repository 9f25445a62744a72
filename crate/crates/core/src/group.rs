//! Galilei and α-deformed inertial transformations of the extended
//! phase-space.
//!
//! An algebra element `(ξ, d, v, τ)` acts on spacetime by
//!
//! ```text
//! δq = ξq − d − t·v,   δt = −α v·q/c² − τ
//! ```
//!
//! with the `α` term absent in the Galilei case. Its lift is a
//! [`QuadraticGenerator`] on the 4-dof chart `(q¹,q²,q³,q⁰; p₁,p₂,p₃,p₀)`
//! and the momentum map is the generating function itself,
//! `J = Xᵀq̃ − Yᵀp̃ − q̃ᵀ a p̃`. Inside the lift `τ` is measured in units of
//! `q⁰`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::canon::{PhasePoint, QuadraticGenerator};
use crate::error::{Error, Result};
use crate::numdiff::{grad8, poisson_canonical, ScalarField};
use crate::state::{canonical_coords, Canonical8, Constants, ExtendedState};

/// Threshold on `max |cocycle|` for an EQUIVARIANT verdict.
pub const EQUIVARIANCE_TOL: f64 = 1e-7;

/// An element `(ξ, d, v, τ)` of the Galilei algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalileiElement {
    xi: Matrix3<f64>,
    pub d: Vector3<f64>,
    pub v: Vector3<f64>,
    pub tau: f64,
}

/// `ξ_μν = Σ_σ θ_σ ε_σμν`, so that `ξq = q × θ`.
fn rotation_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, theta.z, -theta.y, -theta.z, 0.0, theta.x, theta.y, -theta.x, 0.0)
}

impl GalileiElement {
    pub fn new(xi: Matrix3<f64>, d: Vector3<f64>, v: Vector3<f64>, tau: f64) -> Result<Self> {
        if xi + xi.transpose() != Matrix3::zeros() {
            return Err(Error::Validation { field: "xi", reason: "must be antisymmetric".into() });
        }
        let g = Self { xi, d, v, tau };
        if !(xi.iter().chain(d.iter()).chain(v.iter()).all(|x| x.is_finite()) && tau.is_finite()) {
            return Err(Error::Validation { field: "element", reason: "non-finite entry".into() });
        }
        Ok(g)
    }

    pub fn zero() -> Self {
        Self { xi: Matrix3::zeros(), d: Vector3::zeros(), v: Vector3::zeros(), tau: 0.0 }
    }

    /// Full element with the rotation given by its axis vector `θ`.
    pub fn from_parts(theta: Vector3<f64>, d: Vector3<f64>, v: Vector3<f64>, tau: f64) -> Self {
        Self { xi: rotation_matrix(&theta), d, v, tau }
    }

    pub fn boost(v: Vector3<f64>) -> Self {
        Self { v, ..Self::zero() }
    }

    pub fn translation(d: Vector3<f64>) -> Self {
        Self { d, ..Self::zero() }
    }

    pub fn rotation(theta: Vector3<f64>) -> Self {
        Self { xi: rotation_matrix(&theta), ..Self::zero() }
    }

    pub fn time_shift(tau: f64) -> Self {
        Self { tau, ..Self::zero() }
    }

    pub fn xi(&self) -> &Matrix3<f64> {
        &self.xi
    }

    /// The axis vector `θ` of the rotation part.
    pub fn theta(&self) -> Vector3<f64> {
        Vector3::new(self.xi[(1, 2)], self.xi[(2, 0)], self.xi[(0, 1)])
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self { xi: self.xi * w, d: self.d * w, v: self.v * w, tau: self.tau * w }
    }

    pub fn plus(&self, o: &Self) -> Self {
        Self { xi: self.xi + o.xi, d: self.d + o.d, v: self.v + o.v, tau: self.tau + o.tau }
    }

    /// Largest absolute component.
    pub fn amax(&self) -> f64 {
        self.xi.amax().max(self.d.amax()).max(self.v.amax()).max(self.tau.abs())
    }
}

/// The Galilei action on `M`, on `Mᵉ`, or the α-deformed action on `Mᵉ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LiftKind {
    GalileiM,
    GalileiMe,
    AlphaMe(f64),
}

impl LiftKind {
    pub fn alpha(self) -> Option<f64> {
        match self {
            LiftKind::AlphaMe(a) => Some(a),
            _ => None,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            LiftKind::AlphaMe(a) if a != 1.0 && a != -1.0 => {
                Err(Error::InvalidLift { kind: self.to_string(), reason: "alpha must be +1 or -1" })
            }
            _ => Ok(()),
        }
    }

    fn check_mass(self, m: f64) -> Result<()> {
        if matches!(self, LiftKind::GalileiM | LiftKind::GalileiMe) && !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidLift { kind: self.to_string(), reason: "mass must be finite and > 0" });
        }
        Ok(())
    }
}

impl fmt::Display for LiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiftKind::GalileiM => f.write_str("galilei_M"),
            LiftKind::GalileiMe => f.write_str("galilei_Me"),
            LiftKind::AlphaMe(a) => write!(f, "alpha_Me({a})"),
        }
    }
}

/// `q′ = q + ε(ξq − d − t·v)`, `t′ = t − ε·τ`.
pub fn galilei_action_spacetime(g: &GalileiElement, q: &Vector3<f64>, t: f64, eps: f64) -> (Vector3<f64>, f64) {
    (q + (g.xi * q - g.d - g.v * t) * eps, t - eps * g.tau)
}

/// As [`galilei_action_spacetime`] with `t′ = t − ε(α v·q/c² + τ)`.
pub fn alpha_action_spacetime(
    g: &GalileiElement,
    alpha: f64,
    q: &Vector3<f64>,
    t: f64,
    eps: f64,
    k: &Constants,
) -> (Vector3<f64>, f64) {
    let (q_new, _) = galilei_action_spacetime(g, q, t, eps);
    (q_new, t + eps * (-alpha * g.v.dot(q) / (k.c * k.c) - g.tau))
}

/// Lift of `g` to a generator on the 4-dof extended chart.
pub fn lift(g: &GalileiElement, kind: LiftKind, k: &Constants, m: f64) -> Result<QuadraticGenerator> {
    kind.validate()?;
    kind.check_mass(m)?;
    let mut x = DVector::zeros(4);
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (3, 3)).copy_from(&g.xi);
    for i in 0..3 {
        a[(3, i)] = g.v[i] / k.c;
    }
    match kind {
        LiftKind::GalileiM => {
            return Err(Error::InvalidLift { kind: kind.to_string(), reason: "acts on M; use lift_on_phase_space" })
        }
        LiftKind::GalileiMe => x.rows_mut(0, 3).copy_from(&(g.v * m)),
        LiftKind::AlphaMe(alpha) => {
            for i in 0..3 {
                a[(i, 3)] = alpha * g.v[i] / k.c;
            }
        }
    }
    let y = DVector::from_column_slice(&[g.d.x, g.d.y, g.d.z, g.tau]);
    QuadraticGenerator::new(x, y, a, DMatrix::zeros(4, 4), DMatrix::zeros(4, 4))
}

/// The Galilei generator on `M` at the frozen time `t`: `X = mv`, `Y = d + t·v`, `a = ξ`.
pub fn lift_on_phase_space(g: &GalileiElement, m: f64, t: f64) -> Result<QuadraticGenerator> {
    LiftKind::GalileiM.check_mass(m)?;
    if g.tau != 0.0 {
        return Err(Error::UnsupportedSector { sector: "tau", kind: LiftKind::GalileiM.to_string() });
    }
    QuadraticGenerator::new(
        DVector::from_column_slice((g.v * m).as_slice()),
        DVector::from_column_slice((g.d + g.v * t).as_slice()),
        DMatrix::from_column_slice(3, 3, g.xi.as_slice()),
        DMatrix::zeros(3, 3),
        DMatrix::zeros(3, 3),
    )
}

fn split(z: &Canonical8) -> (DVector<f64>, DVector<f64>) {
    (DVector::from_column_slice(&z.as_slice()[..4]), DVector::from_column_slice(&z.as_slice()[4..]))
}

/// Momentum map `J_g` as an exact polynomial with exact gradient.
pub fn momentum_map(g: &GalileiElement, kind: LiftKind, k: &Constants, m: f64) -> Result<ScalarField> {
    let name = format!("J[{kind}]");
    if kind == LiftKind::GalileiM {
        // J = v·(mq − t p) − d·p − qᵀξp with t read from the state
        lift_on_phase_space(g, m, 0.0)?;
        let g = *g;
        let value = move |s: &ExtendedState, _: &Constants| {
            g.v.dot(&(s.q * m - s.p * s.t)) - g.d.dot(&s.p) - s.q.dot(&(g.xi * s.p))
        };
        let grad = move |s: &ExtendedState, k: &Constants| {
            let dq = g.v * m - g.xi * s.p;
            let dp = -(g.d + g.v * s.t) - g.xi.transpose() * s.q;
            let mut out = Canonical8::zeros();
            out.fixed_rows_mut::<3>(0).copy_from(&dq);
            out[3] = -g.v.dot(&s.p) / k.c;
            out.fixed_rows_mut::<3>(4).copy_from(&dp);
            out
        };
        return Ok(ScalarField::new(name, value).with_gradient(grad));
    }
    let gen = lift(g, kind, k, m)?;
    let gen2 = gen.clone();
    let value = move |s: &ExtendedState, k: &Constants| match canonical_coords(s, k) {
        Ok(z) => {
            let (q, p) = split(&z);
            gen.x.dot(&q) - gen.y.dot(&p) - q.dot(&(&gen.a * &p))
        }
        Err(_) => f64::NAN,
    };
    let grad = move |s: &ExtendedState, k: &Constants| match canonical_coords(s, k) {
        Ok(z) => {
            let (q, p) = split(&z);
            let dq = &gen2.x - &gen2.a * &p;
            let dp = -&gen2.y - gen2.a.transpose() * &q;
            Canonical8::from_fn(|i, _| if i < 4 { dq[i] } else { dp[i - 4] })
        }
        Err(_) => Canonical8::from_element(f64::NAN),
    };
    Ok(ScalarField::new(name, value).with_gradient(grad))
}

/// The lifted vector field of `g` at `s` in canonical slots. For
/// [`LiftKind::GalileiM`] the `q⁰`, `p₀` slots are zero.
pub fn vector_field(g: &GalileiElement, kind: LiftKind, k: &Constants, m: f64, s: &ExtendedState) -> Result<Canonical8> {
    if kind == LiftKind::GalileiM {
        let gen = lift_on_phase_space(g, m, s.t)?;
        let z = PhasePoint::from_slices(s.q.as_slice(), s.p.as_slice());
        let f = gen.vector_field(&z)?;
        return Ok(Canonical8::from_fn(|i, _| match i {
            0..=2 => f.q[i],
            4..=6 => f.p[i - 4],
            _ => 0.0,
        }));
    }
    let gen = lift(g, kind, k, m)?;
    let (q, p) = split(&canonical_coords(s, k)?);
    let f = gen.vector_field(&PhasePoint::new(q, p))?;
    Ok(Canonical8::from_fn(|i, _| if i < 4 { f.q[i] } else { f.p[i - 4] }))
}

/// `‖i_X ω₀ − dJ‖∞` for the lift of `g` at `s`. On `M` only the `q`, `p`
/// slots take part.
pub fn momentum_map_residual(g: &GalileiElement, kind: LiftKind, k: &Constants, m: f64, s: &ExtendedState) -> Result<f64> {
    let x = vector_field(g, kind, k, m, s)?;
    let dj = grad8(&momentum_map(g, kind, k, m)?, s, k)?;
    // i_X(dq∧dp) = X_q dp − X_p dq
    let contracted = Canonical8::from_fn(|i, _| if i < 4 { -x[i + 4] } else { x[i - 4] });
    let slots: &[usize] = if kind == LiftKind::GalileiM { &[0, 1, 2, 4, 5, 6] } else { &[0, 1, 2, 3, 4, 5, 6, 7] };
    Ok(slots.iter().fold(0.0, |r, &i| r.max((contracted[i] - dj[i]).abs())))
}

/// Bracket of the algebra, normalised as the commutator `[X_g, X_h]` of
/// the lifted vector fields.
pub fn algebra_bracket(g: &GalileiElement, h: &GalileiElement, kind: LiftKind, k: &Constants) -> GalileiElement {
    let alpha = kind.alpha().unwrap_or(0.0);
    let c = k.c;
    let xi = h.xi * g.xi - g.xi * h.xi + (h.v * g.v.transpose() - g.v * h.v.transpose()) * (alpha / (c * c));
    GalileiElement {
        xi: (xi - xi.transpose()) / 2.0,
        d: h.xi * g.d - g.xi * h.d - (h.v * g.tau - g.v * h.tau) / c,
        v: h.xi * g.v - g.xi * h.v,
        tau: alpha / c * (g.v.dot(&h.d) - h.v.dot(&g.d)),
    }
}

/// `[X_g, X_h]` at `s` from central differences of the lifted fields.
pub fn vector_field_commutator(
    g: &GalileiElement,
    h: &GalileiElement,
    kind: LiftKind,
    k: &Constants,
    m: f64,
    s: &ExtendedState,
) -> Result<Canonical8> {
    let z = canonical_coords(s, k)?;
    let at = |w: &Canonical8| crate::state::from_canonical(w, k);
    // directional derivative of the field of `a` along `dir`
    let along = |a: &GalileiElement, dir: &Canonical8| -> Result<Canonical8> {
        let step = 1e-3;
        let fwd = vector_field(a, kind, k, m, &at(&(z + dir * step))?)?;
        let bwd = vector_field(a, kind, k, m, &at(&(z - dir * step))?)?;
        Ok((fwd - bwd) / (2.0 * step))
    };
    let xg = vector_field(g, kind, k, m, s)?;
    let xh = vector_field(h, kind, k, m, s)?;
    Ok(along(h, &xg)? - along(g, &xh)?)
}

/// `{J_g, J_h} − J_{[g,h]}` at `z`, where `[g, h]` is the bracket for which
/// `g ↦ J_g` is a homomorphism into the Poisson algebra, i.e. minus
/// [`algebra_bracket`].
pub fn cocycle(g: &GalileiElement, h: &GalileiElement, kind: LiftKind, k: &Constants, m: f64, z: &ExtendedState) -> Result<f64> {
    let jg = momentum_map(g, kind, k, m)?;
    let jh = momentum_map(h, kind, k, m)?;
    let jk = momentum_map(&algebra_bracket(g, h, kind, k), kind, k, m)?;
    Ok(poisson_canonical(&jg, &jh, z, k)? + jk.eval(z, k))
}

/// The basis `v_x, v_y, v_z, d_x, d_y, d_z, r_x, r_y, r_z, τ` with labels;
/// `τ` is left out for [`LiftKind::GalileiM`].
pub fn basis(kind: LiftKind) -> Vec<(&'static str, GalileiElement)> {
    let e = |i: usize| Vector3::from_fn(|j, _| if i == j { 1.0 } else { 0.0 });
    let mut out = vec![
        ("v_x", GalileiElement::boost(e(0))),
        ("v_y", GalileiElement::boost(e(1))),
        ("v_z", GalileiElement::boost(e(2))),
        ("d_x", GalileiElement::translation(e(0))),
        ("d_y", GalileiElement::translation(e(1))),
        ("d_z", GalileiElement::translation(e(2))),
        ("r_x", GalileiElement::rotation(e(0))),
        ("r_y", GalileiElement::rotation(e(1))),
        ("r_z", GalileiElement::rotation(e(2))),
    ];
    if kind != LiftKind::GalileiM {
        out.push(("tau", GalileiElement::time_shift(1.0)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub kind: String,
    pub equivariant: bool,
    pub max_abs_cocycle: f64,
    /// Largest spread of one pair's cocycle over the samples.
    pub max_spread: f64,
    pub witness: (String, String),
    pub witness_value: f64,
    pub tolerance: f64,
}

/// Cocycle over every basis pair and sample. EQUIVARIANT iff the largest
/// magnitude is at most [`EQUIVARIANCE_TOL`]. The witness is the first pair
/// attaining it, with its value at the first sample.
pub fn equivariance_verdict(kind: LiftKind, k: &Constants, m: f64, samples: &[ExtendedState]) -> Result<EquivarianceReport> {
    if samples.is_empty() {
        return Err(Error::Validation { field: "samples", reason: "need at least one state".into() });
    }
    let basis = basis(kind);
    let mut report = EquivarianceReport {
        kind: kind.to_string(),
        equivariant: true,
        max_abs_cocycle: 0.0,
        max_spread: 0.0,
        witness: (basis[0].0.into(), basis[0].0.into()),
        witness_value: 0.0,
        tolerance: EQUIVARIANCE_TOL,
    };
    for (i, (ni, gi)) in basis.iter().enumerate() {
        for (nj, gj) in &basis[i + 1..] {
            let values = samples.iter().map(|z| cocycle(gi, gj, kind, k, m, z)).collect::<Result<Vec<_>>>()?;
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            report.max_spread = report.max_spread.max(hi - lo);
            let worst = lo.abs().max(hi.abs());
            if worst > report.max_abs_cocycle {
                report.max_abs_cocycle = worst;
                report.witness = (ni.to_string(), nj.to_string());
                report.witness_value = values[0];
            }
        }
    }
    report.equivariant = report.max_abs_cocycle <= EQUIVARIANCE_TOL;
    Ok(report)
}

fn boost_axis(vel: &Vector3<f64>, alpha: f64, k: &Constants) -> Result<Option<(Vector3<f64>, f64)>> {
    if alpha != 1.0 && alpha != -1.0 {
        return Err(Error::Validation { field: "alpha", reason: format!("must be +1 or -1, got {alpha}") });
    }
    let speed = vel.norm();
    if !speed.is_finite() || (alpha == 1.0 && speed >= k.c) {
        return Err(Error::BoostDomain { speed, c: k.c });
    }
    Ok((speed > 0.0).then(|| (vel / speed, speed)))
}

/// Finite boost by velocity `V`: Lorentz for `α = 1`, a rotation of
/// `(q·n, ct)` for `α = −1`.
pub fn boost_finite(vel: &Vector3<f64>, alpha: f64, q: &Vector3<f64>, t: f64, k: &Constants) -> Result<(Vector3<f64>, f64)> {
    let Some((n, speed)) = boost_axis(vel, alpha, k)? else {
        return Ok((*q, t));
    };
    let gamma = 1.0 / (1.0 - alpha * speed * speed / (k.c * k.c)).sqrt();
    let qn = q.dot(&n);
    let q_new = q - n * qn + n * (gamma * (qn - speed * t));
    let t_new = gamma * (t - alpha * vel.dot(q) / (k.c * k.c));
    Ok((q_new, t_new))
}

/// Finite boost of `(p, p₀)`, the exponential of `δp = αp₀v/c`, `δp₀ = v·p/c`.
pub fn boost_momentum_finite(vel: &Vector3<f64>, alpha: f64, p: &Vector3<f64>, p0: f64, k: &Constants) -> Result<(Vector3<f64>, f64)> {
    let Some((n, speed)) = boost_axis(vel, alpha, k)? else {
        return Ok((*p, p0));
    };
    let pn = p.dot(&n);
    let (pn_new, p0_new) = if alpha == 1.0 {
        let phi = (speed / k.c).atanh();
        (pn * phi.cosh() + p0 * phi.sinh(), p0 * phi.cosh() + pn * phi.sinh())
    } else {
        let phi = (speed / k.c).atan();
        (pn * phi.cos() - p0 * phi.sin(), p0 * phi.cos() + pn * phi.sin())
    };
    Ok((p - n * pn + n * pn_new, p0_new))
}

/// The same finite boost assembled from `steps` midpoint steps of the
/// α-lift flow. Returns the boosted state in canonical slots.
pub fn boost_by_composition(vel: &Vector3<f64>, alpha: f64, s: &ExtendedState, steps: usize, k: &Constants) -> Result<Canonical8> {
    let z = canonical_coords(s, k)?;
    let Some((n, speed)) = boost_axis(vel, alpha, k)? else {
        return Ok(z);
    };
    let angle = if alpha == 1.0 { (speed / k.c).atanh() } else { (speed / k.c).atan() };
    let gen = lift(&GalileiElement::boost(n * (k.c * angle)), LiftKind::AlphaMe(alpha), k, 0.0)?;
    let (q, p) = split(&z);
    let out = crate::canon::compose_infinitesimal(&gen, &PhasePoint::new(q, p), 1.0, steps)?;
    Ok(Canonical8::from_fn(|i, _| if i < 4 { out.q[i] } else { out.p[i - 4] }))
}

/// `p·p − α p₀²`.
pub fn invariant_quadratic(p: &Vector3<f64>, p0: f64, alpha: f64) -> f64 {
    p.dot(p) - alpha * p0 * p0
}
