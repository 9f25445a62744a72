//! Canonical transformations from generating functions.
//!
//! The action field is `S(q, p′, t) = qᵀp′ + Φ(q, p′, t)`, which defines the
//! map implicitly through `p = p′ + ∂Φ/∂q` and `q′ = q + ∂Φ/∂p′`. For the
//! quadratic family
//!
//! ```text
//! Φ = Xᵀq − Yᵀp′ + ½(qᵀbq + p′ᵀcp′) − qᵀap′
//! ```
//!
//! the first-order map is `q′ = q − Y − aᵀq + cp`, `p′ = p − X − bq + ap`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

/// Residual tolerance of the Newton solves.
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

/// A point `(q, p)` of a `2n`-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have the same length");
        Self { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    /// Flattens particles into `q = [q₁, q₂, …]`, `p = [p₁, p₂, …]`.
    pub fn from_particles(particles: &[(Vector3<f64>, Vector3<f64>)]) -> Self {
        let q = DVector::from_iterator(3 * particles.len(), particles.iter().flat_map(|(q, _)| q.iter().copied()));
        let p = DVector::from_iterator(3 * particles.len(), particles.iter().flat_map(|(_, p)| p.iter().copied()));
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `[q; p]` as one vector of length `2n`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.p[i - n] })
    }

    pub fn from_stacked(z: &DVector<f64>) -> Self {
        let n = z.len() / 2;
        Self { q: z.rows(0, n).into_owned(), p: z.rows(n, n).into_owned() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }
}

/// Coefficients `(X, Y, a, b, c)` of a quadratic generating function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGenerator {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
}

impl QuadraticGenerator {
    pub fn new(x: DVector<f64>, y: DVector<f64>, a: DMatrix<f64>, b: DMatrix<f64>, c_mat: DMatrix<f64>) -> Result<Self> {
        let n = x.len();
        for (len, shape) in [(y.len(), (n, 1)), (a.nrows(), a.shape()), (b.nrows(), b.shape()), (c_mat.nrows(), c_mat.shape())]
        {
            if len != n || (shape.1 != 1 && shape.1 != n) {
                return Err(Error::Dimension { expected: n, found: if len != n { len } else { shape.1 } });
            }
        }
        if b != b.transpose() {
            return Err(Error::Validation { field: "b", reason: "must be symmetric".into() });
        }
        if c_mat != c_mat.transpose() {
            return Err(Error::Validation { field: "c_mat", reason: "must be symmetric".into() });
        }
        let g = Self { x, y, a, b, c_mat };
        if !g.all_finite() {
            return Err(Error::Validation { field: "generator", reason: "non-finite entry".into() });
        }
        Ok(g)
    }

    pub fn zero(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, n),
            c_mat: DMatrix::zeros(n, n),
        }
    }

    fn all_finite(&self) -> bool {
        [self.x.as_slice(), self.y.as_slice(), self.a.as_slice(), self.b.as_slice(), self.c_mat.as_slice()]
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self {
            x: &self.x * w,
            y: &self.y * w,
            a: &self.a * w,
            b: &self.b * w,
            c_mat: &self.c_mat * w,
        }
    }

    /// The Hamiltonian matrix `[[−aᵀ, c], [−b, a]]` of the linear part.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(-self.a.transpose()));
        m.view_mut((0, n), (n, n)).copy_from(&self.c_mat);
        m.view_mut((n, 0), (n, n)).copy_from(&(-&self.b));
        m.view_mut((n, n), (n, n)).copy_from(&self.a);
        m
    }

    /// The constant part `[−Y; −X]`.
    pub fn offset(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { -self.y[i] } else { -self.x[i - n] })
    }

    /// The generated vector field at `z`.
    pub fn vector_field(&self, z: &PhasePoint) -> Result<PhasePoint> {
        self.check_dim(z)?;
        Ok(PhasePoint::new(
            -&self.y - self.a.transpose() * &z.q + &self.c_mat * &z.p,
            -&self.x - &self.b * &z.q + &self.a * &z.p,
        ))
    }

    fn check_dim(&self, z: &PhasePoint) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: z.dim() });
        }
        Ok(())
    }
}

/// First-order map `z + eps·X_g(z)`.
pub fn infinitesimal_map(g: &QuadraticGenerator, z: &PhasePoint, eps: f64) -> Result<PhasePoint> {
    let v = g.vector_field(z)?;
    Ok(PhasePoint::new(&z.q + v.q * eps, &z.p + v.p * eps))
}

/// Composes `steps` midpoint steps of the flow of `g` over a total parameter
/// `eps`. Each step is the Cayley transform of the linear part, so the
/// result is symplectic and approaches the exact flow as `1/steps²`.
pub fn compose_infinitesimal(g: &QuadraticGenerator, z: &PhasePoint, eps: f64, steps: usize) -> Result<PhasePoint> {
    g.check_dim(z)?;
    if steps == 0 {
        return Err(Error::Validation { field: "steps", reason: "must be >= 1".into() });
    }
    let h = eps / steps as f64;
    let m = g.matrix();
    let id = DMatrix::<f64>::identity(m.nrows(), m.ncols());
    let lhs = (&id - &m * (0.5 * h)).lu();
    let rhs = &id + &m * (0.5 * h);
    let shift = g.offset() * h;
    let mut state = z.stacked();
    for _ in 0..steps {
        state = lhs.solve(&(&rhs * &state + &shift)).ok_or(Error::SingularJacobian)?;
    }
    Ok(PhasePoint::from_stacked(&state))
}

/// A generating function `Φ(q, p′, t)` through its partial derivatives.
pub trait GeneratingFunction {
    fn dim(&self) -> usize;
    fn grad_q(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> DVector<f64>;
    fn grad_p(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> DVector<f64>;
    fn d_dt(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> f64;

    /// `∂²Φ/∂qᵢ∂p′ⱼ` (central differences unless overridden).
    fn mixed_hessian(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * p_new[j].abs().max(1.0);
            let (mut up, mut dn) = (p_new.clone(), p_new.clone());
            up[j] += h;
            dn[j] -= h;
            let col = (self.grad_q(q, &up, t) - self.grad_q(q, &dn, t)) / (2.0 * h);
            out.set_column(j, &col);
        }
        out
    }
}

/// The quadratic family scaled by `eps`.
#[derive(Debug, Clone)]
pub struct QuadraticPhi {
    pub generator: QuadraticGenerator,
    pub eps: f64,
}

impl GeneratingFunction for QuadraticPhi {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn grad_q(&self, q: &DVector<f64>, p_new: &DVector<f64>, _t: f64) -> DVector<f64> {
        let g = &self.generator;
        (&g.x + &g.b * q - &g.a * p_new) * self.eps
    }

    fn grad_p(&self, q: &DVector<f64>, p_new: &DVector<f64>, _t: f64) -> DVector<f64> {
        let g = &self.generator;
        (-&g.y + &g.c_mat * p_new - g.a.transpose() * q) * self.eps
    }

    fn d_dt(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }

    fn mixed_hessian(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        &self.generator.a * (-self.eps)
    }
}

/// `Φ_v = V·(m q_cm − t P′) = Σᵢ V·(mᵢqᵢ − t p′ᵢ)`: passage to a frame moving with velocity `V`.
#[derive(Debug, Clone)]
pub struct GalileiBoostPhi {
    pub velocity: Vector3<f64>,
    pub masses: Vec<f64>,
}

impl GeneratingFunction for GalileiBoostPhi {
    fn dim(&self) -> usize {
        3 * self.masses.len()
    }

    fn grad_q(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.masses[i / 3] * self.velocity[i % 3])
    }

    fn grad_p(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, t: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| -t * self.velocity[i % 3])
    }

    fn d_dt(&self, _q: &DVector<f64>, p_new: &DVector<f64>, _t: f64) -> f64 {
        -(0..self.dim()).map(|i| self.velocity[i % 3] * p_new[i]).sum::<f64>()
    }

    fn mixed_hessian(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }
}

/// `Φ_r = −δt·Ω·L` with `L = Σᵢ qᵢ × p′ᵢ`: passage to a frame rotating with
/// angular velocity `Ω`. Its time derivative is `−Ω·L`.
#[derive(Debug, Clone)]
pub struct RotationPhi {
    pub omega: Vector3<f64>,
    pub dt: f64,
    pub particles: usize,
}

fn particle(v: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
}

impl RotationPhi {
    fn angular_momentum(&self, q: &DVector<f64>, p_new: &DVector<f64>) -> Vector3<f64> {
        (0..self.particles).map(|i| particle(q, i).cross(&particle(p_new, i))).sum()
    }

    fn per_particle(&self, f: impl Fn(usize) -> Vector3<f64>) -> DVector<f64> {
        DVector::from_iterator(3 * self.particles, (0..self.particles).flat_map(|i| f(i).iter().copied().collect::<Vec<_>>()))
    }
}

impl GeneratingFunction for RotationPhi {
    fn dim(&self) -> usize {
        3 * self.particles
    }

    fn grad_q(&self, _q: &DVector<f64>, p_new: &DVector<f64>, _t: f64) -> DVector<f64> {
        // ∂(Ω·(q×p))/∂q = p×Ω
        self.per_particle(|i| -particle(p_new, i).cross(&self.omega) * self.dt)
    }

    fn grad_p(&self, q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> DVector<f64> {
        // ∂(Ω·(q×p))/∂p = Ω×q
        self.per_particle(|i| -self.omega.cross(&particle(q, i)) * self.dt)
    }

    fn d_dt(&self, q: &DVector<f64>, p_new: &DVector<f64>, _t: f64) -> f64 {
        -self.omega.dot(&self.angular_momentum(q, p_new))
    }

    fn mixed_hessian(&self, _q: &DVector<f64>, _p_new: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        // ∂(p×Ω)ᵢ/∂pⱼ = [Ω]ₓᵀ
        let w = self.omega;
        let cross = nalgebra::Matrix3::new(0.0, w.z, -w.y, -w.z, 0.0, w.x, w.y, -w.x, 0.0);
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.particles {
            out.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&(cross * -self.dt));
        }
        out
    }
}

type PhiValue = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> f64 + Send + Sync;

/// A generating function given only by its value; derivatives come from
/// fourth-order central differences.
pub struct FnPhi {
    n: usize,
    f: Box<PhiValue>,
}

impl FnPhi {
    pub fn new(n: usize, f: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { n, f: Box::new(f) }
    }

    fn partial(&self, g: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-3 * x.abs().max(1.0);
        (-g(2.0 * h) + 8.0 * g(h) - 8.0 * g(-h) + g(-2.0 * h)) / (12.0 * h)
    }
}

impl GeneratingFunction for FnPhi {
    fn dim(&self) -> usize {
        self.n
    }

    fn grad_q(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            self.partial(
                |d| {
                    let mut w = q.clone();
                    w[i] += d;
                    (self.f)(&w, p_new, t)
                },
                q[i],
            )
        })
    }

    fn grad_p(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            self.partial(
                |d| {
                    let mut w = p_new.clone();
                    w[i] += d;
                    (self.f)(q, &w, t)
                },
                p_new[i],
            )
        })
    }

    fn d_dt(&self, q: &DVector<f64>, p_new: &DVector<f64>, t: f64) -> f64 {
        self.partial(|d| (self.f)(q, p_new, t + d), t)
    }
}

/// Damped Newton iteration for `r(x) = 0` with Jacobian `jac`.
fn newton(
    mut x: DVector<f64>,
    residual: impl Fn(&DVector<f64>) -> DVector<f64>,
    jac: impl Fn(&DVector<f64>) -> DMatrix<f64>,
) -> Result<DVector<f64>> {
    let mut r = residual(&x);
    let mut norm = r.amax();
    let scale = x.amax().max(1.0);
    for _ in 0..NEWTON_MAX_ITER {
        if norm <= NEWTON_TOL * scale {
            // one polishing step, kept only if it helps
            if norm > 0.0 {
                if let Some(dx) = jac(&x).lu().solve(&r) {
                    let trial = &x - dx;
                    if residual(&trial).amax() < norm {
                        x = trial;
                    }
                }
            }
            return Ok(x);
        }
        let dx = jac(&x).lu().solve(&r).ok_or(Error::SingularJacobian)?;
        let mut lambda = 1.0;
        loop {
            let trial = &x - &dx * lambda;
            let rt = residual(&trial);
            let nt = rt.amax();
            if nt < norm || lambda < 1e-6 {
                x = trial;
                r = rt;
                norm = nt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm <= NEWTON_TOL * scale {
        Ok(x)
    } else {
        Err(Error::NewtonDivergence { iterations: NEWTON_MAX_ITER, residual: norm })
    }
}

/// Solves `p = p′ + ∂Φ/∂q(q, p′, t)` for `p′` and returns `(q′, p′)` with
/// `q′ = q + ∂Φ/∂p′`.
pub fn apply_generating_function(phi: &dyn GeneratingFunction, z: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if z.dim() != phi.dim() {
        return Err(Error::Dimension { expected: phi.dim(), found: z.dim() });
    }
    let n = z.dim();
    let p_new = newton(
        z.p.clone(),
        |pn| pn + phi.grad_q(&z.q, pn, t) - &z.p,
        |pn| DMatrix::identity(n, n) + phi.mixed_hessian(&z.q, pn, t),
    )?;
    let q_new = &z.q + phi.grad_p(&z.q, &p_new, t);
    Ok(PhasePoint::new(q_new, p_new))
}

/// Recovers the old point `(q, p)` from new coordinates `(q′, p′)`.
pub fn invert_generating_function(phi: &dyn GeneratingFunction, z_new: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if z_new.dim() != phi.dim() {
        return Err(Error::Dimension { expected: phi.dim(), found: z_new.dim() });
    }
    let n = z_new.dim();
    let q = newton(
        z_new.q.clone(),
        |q| q + phi.grad_p(q, &z_new.p, t) - &z_new.q,
        |q| DMatrix::identity(n, n) + phi.mixed_hessian(q, &z_new.p, t).transpose(),
    )?;
    let p = &z_new.p + phi.grad_q(&q, &z_new.p, t);
    Ok(PhasePoint::new(q, p))
}

/// `H′(q′, p′, t) = H(q, p, t) + ∂Φ/∂t`, with `(q, p)` recovered from the new point.
pub fn transformed_hamiltonian(
    h: &dyn Fn(&PhasePoint, f64) -> f64,
    phi: &dyn GeneratingFunction,
    z_new: &PhasePoint,
    t: f64,
) -> Result<f64> {
    let old = invert_generating_function(phi, z_new, t)?;
    Ok(h(&old, t) + phi.d_dt(&old.q, &z_new.p, t))
}

/// One step `q′ = q − δt·Ω×q`, `p′ = p − δt·Ω×p` into a rotating frame,
/// applied to every particle of `z`.
pub fn rotating_frame_step(omega: &Vector3<f64>, dt: f64, z: &PhasePoint) -> PhasePoint {
    let rot = |v: &DVector<f64>| {
        let mut out = v.clone();
        for i in 0..v.len() / 3 {
            let w = particle(v, i);
            out.rows_mut(3 * i, 3).copy_from(&(w - omega.cross(&w) * dt));
        }
        out
    };
    PhasePoint::new(rot(&z.q), rot(&z.p))
}

/// Numerical Jacobian of `map` at `z` (fourth-order central differences).
pub fn numerical_jacobian(map: &dyn Fn(&PhasePoint) -> Result<PhasePoint>, z: &PhasePoint) -> Result<DMatrix<f64>> {
    let x = z.stacked();
    let dim = x.len();
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let h = 1e-4 * x[j].abs().max(1.0);
        let at = |d: f64| -> Result<DVector<f64>> {
            let mut w = x.clone();
            w[j] += d;
            Ok(map(&PhasePoint::from_stacked(&w))?.stacked())
        };
        let col = (at(-2.0 * h)? - at(2.0 * h)? + (at(h)? - at(-h)?) * 8.0) / (12.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// The canonical block form `[[0, I], [−I, 0]]`.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        omega[(i, n + i)] = 1.0;
        omega[(n + i, i)] = -1.0;
    }
    omega
}

/// `‖JᵀΩJ − Ω‖∞` for the numerical Jacobian `J` of `map` at `z`.
pub fn symplecticity_residual(map: &dyn Fn(&PhasePoint) -> Result<PhasePoint>, z: &PhasePoint) -> Result<f64> {
    let jac = numerical_jacobian(map, z)?;
    let omega = symplectic_form(z.dim());
    Ok((jac.transpose() * &omega * &jac - omega).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_dof(x: f64, y: f64, a: f64, b: f64, c: f64) -> QuadraticGenerator {
        QuadraticGenerator::new(
            DVector::from_element(1, x),
            DVector::from_element(1, y),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    fn random_generator(rng: &mut ChaCha8Rng, n: usize) -> QuadraticGenerator {
        let mut r = |_: usize, _: usize| rng.gen_range(-1.0..1.0);
        let b = DMatrix::from_fn(n, n, &mut r);
        let c = DMatrix::from_fn(n, n, &mut r);
        QuadraticGenerator::new(
            DVector::from_fn(n, &mut r),
            DVector::from_fn(n, &mut r),
            DMatrix::from_fn(n, n, &mut r),
            &b + b.transpose(),
            &c + c.transpose(),
        )
        .unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> PhasePoint {
        PhasePoint::new(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)), DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn rejects_asymmetric_blocks() {
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = 1.0;
        let err = QuadraticGenerator::new(DVector::zeros(2), DVector::zeros(2), DMatrix::zeros(2, 2), b, DMatrix::zeros(2, 2));
        assert!(matches!(err, Err(Error::Validation { field: "b", .. })));
        let err = QuadraticGenerator::new(DVector::zeros(2), DVector::zeros(3), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn infinitesimal_examples() {
        let z = PhasePoint::from_slices(&[0.3, -1.0], &[2.0, 0.5]);
        assert_eq!(infinitesimal_map(&QuadraticGenerator::zero(2), &z, 0.7).unwrap(), z);

        let out = infinitesimal_map(&one_dof(1.0, 0.0, 0.0, 0.0, 0.0), &PhasePoint::from_slices(&[0.0], &[0.0]), 1.0).unwrap();
        assert_eq!(out, PhasePoint::from_slices(&[0.0], &[-1.0]));

        let theta = 1e-3;
        let out = infinitesimal_map(&one_dof(0.0, 0.0, theta, 0.0, 0.0), &PhasePoint::from_slices(&[1.0], &[0.0]), 1.0).unwrap();
        assert_abs_diff_eq!(out.q[0], 1.0 - theta, epsilon = 1e-15);
        assert_eq!(out.p[0], 0.0);

        assert!(matches!(
            infinitesimal_map(&QuadraticGenerator::zero(3), &z, 1.0),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn generating_function_examples() {
        let z = PhasePoint::from_slices(&[0.4, -0.2, 1.0], &[1.5, 0.0, -0.3]);
        let zero = FnPhi::new(3, |_, _, _| 0.0);
        let out = apply_generating_function(&zero, &z, 0.0).unwrap();
        assert_eq!(out, z);

        let v = Vector3::new(0.8, 0.0, 0.0);
        let m = 2.0;
        let t = 1.5;
        let boost = GalileiBoostPhi { velocity: v, masses: vec![m] };
        let out = apply_generating_function(&boost, &z, t).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(out.p[i], z.p[i] - m * v[i], epsilon = 1e-14);
            assert_abs_diff_eq!(out.q[i], z.q[i] - t * v[i], epsilon = 1e-14);
        }

        let kappa = 0.05;
        let scaling = FnPhi::new(1, move |q, p, _| kappa * q[0] * p[0]);
        let z = PhasePoint::from_slices(&[0.7], &[1.3]);
        let out = apply_generating_function(&scaling, &z, 0.0).unwrap();
        assert_abs_diff_eq!(out.q[0], (1.0 + kappa) * 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(out.p[0], 1.3 / (1.0 + kappa), epsilon = 1e-10);
    }

    #[test]
    fn newton_failures_are_reported() {
        // p′ + p′² = −10 has no real root
        let no_root = FnPhi::new(1, |q, p, _| q[0] * p[0] * p[0]);
        let z = PhasePoint::from_slices(&[0.0], &[-10.0]);
        assert!(matches!(apply_generating_function(&no_root, &z, 0.0), Err(Error::NewtonDivergence { .. })));

        let degenerate = QuadraticPhi { generator: one_dof(1.0, 0.0, 1.0, 0.0, 0.0), eps: 1.0 };
        let z = PhasePoint::from_slices(&[0.0], &[0.5]);
        assert_eq!(apply_generating_function(&degenerate, &z, 0.0), Err(Error::SingularJacobian));
    }

    #[test]
    fn transformed_hamiltonians() {
        // time-independent Φ leaves H unchanged
        let h = |z: &PhasePoint, _t: f64| z.p.norm_squared() / 2.0 + z.q[0] * z.q[1];
        let z_new = PhasePoint::from_slices(&[0.2, 0.4, -0.1], &[1.0, 0.3, 0.0]);
        let zero = FnPhi::new(3, |_, _, _| 0.0);
        assert_abs_diff_eq!(transformed_hamiltonian(&h, &zero, &z_new, 0.3).unwrap(), h(&z_new, 0.3), epsilon = 1e-14);

        // Galilei boost: H′(q′, p′, t) = H(q′ + tV, p′ + mV) − V·p′
        let m = 1.7;
        let v = Vector3::new(0.3, -0.4, 0.9);
        let t = 2.1;
        let kinetic = move |z: &PhasePoint, _t: f64| z.p.norm_squared() / (2.0 * m);
        let boost = GalileiBoostPhi { velocity: v, masses: vec![m] };
        let p_new = Vector3::new(z_new.p[0], z_new.p[1], z_new.p[2]);
        let want = (p_new + v * m).norm_squared() / (2.0 * m) - v.dot(&p_new);
        assert_abs_diff_eq!(transformed_hamiltonian(&kinetic, &boost, &z_new, t).unwrap(), want, epsilon = 1e-13);

        // rotation: H′ = H − Ω·L
        let omega = Vector3::new(0.0, 0.2, 1.0);
        let rot = RotationPhi { omega, dt: 1e-3, particles: 1 };
        let old = invert_generating_function(&rot, &z_new, 0.0).unwrap();
        let l = Vector3::new(old.q[0], old.q[1], old.q[2]).cross(&p_new);
        let want = h(&old, 0.0) - omega.dot(&l);
        assert_abs_diff_eq!(transformed_hamiltonian(&h, &rot, &z_new, 0.0).unwrap(), want, epsilon = 1e-13);
    }

    #[test]
    fn rotation_phi_reproduces_rotating_frame_step() {
        let omega = Vector3::new(0.3, -0.2, 1.0);
        let dt = 1e-4;
        let rot = RotationPhi { omega, dt, particles: 2 };
        let z = PhasePoint::from_particles(&[
            (Vector3::new(1.0, 0.0, 0.5), Vector3::new(0.0, 1.0, 0.0)),
            (Vector3::new(-0.3, 2.0, 0.1), Vector3::new(0.4, 0.0, -1.0)),
        ]);
        let exact = apply_generating_function(&rot, &z, 0.0).unwrap();
        let first = rotating_frame_step(&omega, dt, &z);
        assert!((exact.stacked() - first.stacked()).amax() < 1e-7);
    }

    #[test]
    fn rotating_frame_examples() {
        let z = PhasePoint::from_slices(&[1.0, 2.0, 3.0], &[0.5, 0.0, 1.0]);
        assert_eq!(rotating_frame_step(&Vector3::zeros(), 0.1, &z), z);
        let out = rotating_frame_step(&Vector3::new(0.0, 0.0, 1.0), 1e-3, &PhasePoint::from_slices(&[1.0, 0.0, 0.0], &[0.0; 3]));
        assert_abs_diff_eq!(out.q[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.q[1], -1e-3, epsilon = 1e-15);
        assert_eq!(out.q[2], 0.0);
    }

    #[test]
    fn rotating_frame_composes_to_full_turn() {
        let steps = 100_000;
        let dt = 2.0 * std::f64::consts::PI * 1e-5;
        let omega = Vector3::new(0.0, 0.0, 1.0);
        let mut z = PhasePoint::from_slices(&[1.0, 0.5, 0.2], &[0.0, 0.0, 0.0]);
        let start = z.q.clone();
        for _ in 0..steps {
            z = rotating_frame_step(&omega, dt, &z);
        }
        // exact rotation by −2π about z is the identity
        let oracle = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -(steps as f64) * dt);
        let want = oracle * Vector3::new(start[0], start[1], start[2]);
        for i in 0..3 {
            assert!((z.q[i] - want[i]).abs() < 1e-3, "{} vs {}", z.q[i], want[i]);
        }
    }

    #[test]
    fn identity_is_symplectic() {
        let z = PhasePoint::from_slices(&[0.1, 0.2], &[0.3, 0.4]);
        let r = symplecticity_residual(&|z: &PhasePoint| Ok(z.clone()), &z).unwrap();
        assert!(r <= 1e-10);
    }

    #[test]
    fn non_symplectic_map_is_detected() {
        let z = PhasePoint::from_slices(&[0.1], &[0.3]);
        let r = symplecticity_residual(&|z: &PhasePoint| Ok(PhasePoint::new(&z.q * 2.0, z.p.clone())), &z).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn generating_function_maps_are_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let g = random_generator(&mut rng, 4);
            let phi = QuadraticPhi { generator: g, eps: 0.1 };
            let z = random_point(&mut rng, 4);
            let map = |w: &PhasePoint| apply_generating_function(&phi, w, 0.0);
            assert!(symplecticity_residual(&map, &z).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn newton_map_agrees_with_first_order_map_to_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_generator(&mut rng, 4);
        let z = random_point(&mut rng, 4);
        let gap = |eps: f64| {
            let exact = apply_generating_function(&QuadraticPhi { generator: g.clone(), eps }, &z, 0.0).unwrap();
            (exact.stacked() - infinitesimal_map(&g, &z, eps).unwrap().stacked()).amax()
        };
        let epss = [1e-2, 5e-3, 2.5e-3];
        let gaps: Vec<f64> = epss.iter().map(|&e| gap(e)).collect();
        let slope = (gaps[0] / gaps[2]).ln() / (epss[0] / epss[2]).ln();
        assert!(slope >= 1.9, "slope {slope}, gaps {gaps:?}");
    }

    #[test]
    fn infinitesimal_map_symplectic_defect_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_generator(&mut rng, 3);
        let z = random_point(&mut rng, 3);
        let defect = |eps: f64| symplecticity_residual(&|w: &PhasePoint| infinitesimal_map(&g, w, eps), &z).unwrap();
        let (d1, d2) = (defect(1e-2), defect(5e-3));
        assert!((d1 / d2 - 4.0).abs() < 0.1, "{d1} {d2}");
        assert!(defect(1e-5) <= 1e-8);
    }

    #[test]
    fn map_and_negation_compose_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_generator(&mut rng, 4);
        let z = random_point(&mut rng, 4);
        let err = |eps: f64| {
            let there = infinitesimal_map(&g, &z, eps).unwrap();
            let back = infinitesimal_map(&g.scaled(-1.0), &there, eps).unwrap();
            (back.stacked() - z.stacked()).amax()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn composition_converges_quadratically_to_newton_for_linear_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_generator(&mut rng, 2);
        let z = random_point(&mut rng, 2);
        let fine = compose_infinitesimal(&g, &z, 0.5, 20_000).unwrap();
        let e1 = (compose_infinitesimal(&g, &z, 0.5, 50).unwrap().stacked() - fine.stacked()).amax();
        let e2 = (compose_infinitesimal(&g, &z, 0.5, 100).unwrap().stacked() - fine.stacked()).amax();
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{e1} {e2}");
        // a pure shift generator is linear in (q, p′): both routes agree exactly
        let shift = one_dof(0.7, -0.2, 0.0, 0.0, 0.0);
        let z = PhasePoint::from_slices(&[0.4], &[0.1]);
        let newton = apply_generating_function(&QuadraticPhi { generator: shift.clone(), eps: 1.0 }, &z, 0.0).unwrap();
        let composed = compose_infinitesimal(&shift, &z, 1.0, 10).unwrap();
        assert!((newton.stacked() - composed.stacked()).amax() < 1e-14);
    }
}
