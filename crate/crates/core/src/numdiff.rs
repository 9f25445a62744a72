//! Scalar fields on the extended phase-space, their gradients in the
//! canonical chart, and the two Poisson brackets.

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::potential::Potentials;
use crate::state::{canonical_coords, from_canonical, Canonical8, Constants, ExtendedState, SLOT_NAMES};

/// Relative step of the finite-difference stencil.
pub const DEFAULT_STEP: f64 = 1e-5;

type Evaluator = dyn Fn(&ExtendedState, &Constants) -> f64 + Send + Sync;
type Gradient = dyn Fn(&ExtendedState, &Constants) -> Canonical8 + Send + Sync;

/// A real observable on the extended phase-space.
///
/// The evaluator must be pure. An attached gradient is returned by
/// [`grad8`] instead of finite differences and must agree with them.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    eval: Arc<Evaluator>,
    grad: Option<Arc<Gradient>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("name", &self.name).field("exact_gradient", &self.grad.is_some()).finish()
    }
}

impl ScalarField {
    pub fn new(name: impl Into<String>, eval: impl Fn(&ExtendedState, &Constants) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval), grad: None }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&ExtendedState, &Constants) -> Canonical8 + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// Drops the exact gradient, forcing finite differences.
    pub fn numeric(&self) -> Self {
        Self { name: self.name.clone(), eval: self.eval.clone(), grad: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_exact_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, s: &ExtendedState, k: &Constants) -> f64 {
        (self.eval)(s, k)
    }

    /// The canonical coordinate in `slot` (0..8, order `q¹ q² q³ q⁰ p₁ p₂ p₃ p₀`).
    pub fn coordinate(slot: usize) -> Self {
        assert!(slot < 8);
        Self::new(SLOT_NAMES[slot], move |s, k| canonical_coords(s, k).map_or(f64::NAN, |z| z[slot]))
            .with_gradient(move |_, _| Canonical8::from_fn(|i, _| if i == slot { 1.0 } else { 0.0 }))
    }

    pub fn q(i: usize) -> Self {
        Self::coordinate(i)
    }

    pub fn p(i: usize) -> Self {
        Self::coordinate(4 + i)
    }

    pub fn q0() -> Self {
        Self::coordinate(3)
    }

    pub fn p0() -> Self {
        Self::coordinate(7)
    }

    /// `H = p²/2m`.
    pub fn kinetic(m: f64) -> Self {
        Self::new("kinetic", move |s, _| s.p.norm_squared() / (2.0 * m)).with_gradient(move |s, _| {
            let mut g = Canonical8::zeros();
            g.fixed_rows_mut::<3>(4).copy_from(&(s.p / m));
            g
        })
    }

    /// `H = α·c·√(m²c² + α·p²)`.
    pub fn relativistic(m: f64, alpha: f64) -> Self {
        Self::new("relativistic", move |s, k| alpha * k.c * (m * m * k.c * k.c + alpha * s.p.norm_squared()).sqrt())
            .with_gradient(move |s, k| {
                let root = (m * m * k.c * k.c + alpha * s.p.norm_squared()).sqrt();
                let mut g = Canonical8::zeros();
                g.fixed_rows_mut::<3>(4).copy_from(&(s.p * (k.c / root)));
                g
            })
    }

    pub fn scaled(&self, w: f64) -> Self {
        let (f, g) = (self.eval.clone(), self.grad.clone());
        let out = Self::new(format!("{w}*{}", self.name), move |s, k| w * f(s, k));
        match g {
            Some(g) => out.with_gradient(move |s, k| g(s, k) * w),
            None => out,
        }
    }

    pub fn sum(&self, other: &Self) -> Self {
        let (f1, f2) = (self.eval.clone(), other.eval.clone());
        let out = Self::new(format!("{}+{}", self.name, other.name), move |s, k| f1(s, k) + f2(s, k));
        match (self.grad.clone(), other.grad.clone()) {
            (Some(g1), Some(g2)) => out.with_gradient(move |s, k| g1(s, k) + g2(s, k)),
            _ => out,
        }
    }
}

/// Partials of `f` along `(q¹, q², q³, q⁰, p₁, p₂, p₃, p₀)` at `s`.
pub fn grad8(f: &ScalarField, s: &ExtendedState, k: &Constants) -> Result<Canonical8> {
    match &f.grad {
        Some(g) => {
            let out = g(s, k);
            match out.iter().position(|x| !x.is_finite()) {
                Some(i) => Err(Error::Differentiation { coordinate: SLOT_NAMES[i] }),
                None => Ok(out),
            }
        }
        None => grad8_numeric(f, s, k, DEFAULT_STEP),
    }
}

/// Fourth-order central differences with step `h·max(1, |xᵢ|)`.
pub fn grad8_numeric(f: &ScalarField, s: &ExtendedState, k: &Constants, h: f64) -> Result<Canonical8> {
    let z = canonical_coords(s, k)?;
    let mut out = Canonical8::zeros();
    for i in 0..8 {
        let step = h * z[i].abs().max(1.0);
        let at = |dx: f64| -> Result<f64> {
            let mut w = z;
            w[i] += dx;
            let v = f.eval(&from_canonical(&w, k)?, k);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Differentiation { coordinate: SLOT_NAMES[i] })
            }
        };
        out[i] = (-at(2.0 * step)? + 8.0 * at(step)? - 8.0 * at(-step)? + at(-2.0 * step)?) / (12.0 * step);
    }
    Ok(out)
}

fn bracket_of_gradients(df: &Canonical8, dg: &Canonical8) -> f64 {
    (0..4).map(|mu| df[mu] * dg[mu + 4] - df[mu + 4] * dg[mu]).sum()
}

/// `{f, g}` for `ωᵉ₀ = Σ dqⁱ∧dpᵢ + dq⁰∧dp₀`, so that `{qᵘ, p_ν} = δᵘ_ν`.
pub fn poisson_canonical(f: &ScalarField, g: &ScalarField, s: &ExtendedState, k: &Constants) -> Result<f64> {
    Ok(bracket_of_gradients(&grad8(f, s, k)?, &grad8(g, s, k)?))
}

/// Re-expresses a gradient taken in the `(q, q⁰, p, p₀)` chart in the
/// minimally coupled chart `(q, q⁰, p + eA/c, p₀ − eV/c)`.
fn to_coupled_chart(df: &Canonical8, loc: &crate::potential::LocalPotentials, k: &Constants) -> Canonical8 {
    let ec = k.e / k.c;
    let dp = df.fixed_rows::<3>(4).into_owned();
    let dp0 = df[7];
    let mut out = *df;
    for i in 0..3 {
        let da_col = Vector3::new(loc.da[(0, i)], loc.da[(1, i)], loc.da[(2, i)]);
        out[i] = df[i] - ec * dp.dot(&da_col) + ec * dp0 * loc.dv[i];
    }
    out[3] = df[3] - ec * dp.dot(&loc.da_dt) / k.c + ec * dp0 * loc.dv_dt / k.c;
    out
}

/// The field-dependent bracket `{f, g}ᵉ_f`: the canonical bracket of the
/// minimally coupled chart, with `f` and `g` given in the original chart.
pub fn poisson_field(
    f: &ScalarField,
    g: &ScalarField,
    pot: &Potentials,
    s: &ExtendedState,
    k: &Constants,
) -> Result<f64> {
    let loc = pot.local(&s.q, s.t, k)?;
    let df = to_coupled_chart(&grad8(f, s, k)?, &loc, k);
    let dg = to_coupled_chart(&grad8(g, s, k)?, &loc, k);
    Ok(bracket_of_gradients(&df, &dg))
}

/// Force `ṗ_μ = {p_μ, Hᵉ}ᵉ_f` with `Hᵉ = H − E`, read off the field bracket.
pub fn bracket_force(h: &ScalarField, pot: &Potentials, s: &ExtendedState, k: &Constants) -> Result<Vector3<f64>> {
    let he = h.sum(&ScalarField::p0().scaled(k.c));
    let mut out = Vector3::zeros();
    for mu in 0..3 {
        out[mu] = poisson_field(&ScalarField::p(mu), &he, pot, s, k)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Params;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> ExtendedState {
        let mut v = || Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (q, p) = (v(), v());
        ExtendedState::new(q, p, rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
    }

    fn poly(name: &str, f: impl Fn(&Canonical8) -> f64 + Send + Sync + 'static) -> ScalarField {
        ScalarField::new(name, move |s, k| f(&canonical_coords(s, k).unwrap()))
    }

    #[test]
    fn linear_field_gradients() {
        let k = Constants::default();
        let s = ExtendedState::new(Vector3::new(3.0, -1.0, 2.0), Vector3::new(0.5, 1.0, -2.0), 0.7, 1.3);
        let g = grad8(&ScalarField::q(0), &s, &k).unwrap();
        assert_eq!(g, Canonical8::from_fn(|i, _| (i == 0) as u8 as f64));
        let g = grad8_numeric(&ScalarField::p0().numeric(), &s, &k, DEFAULT_STEP).unwrap();
        for i in 0..8 {
            assert_abs_diff_eq!(g[i], if i == 7 { 1.0 } else { 0.0 }, epsilon = 1e-10);
        }
    }

    #[test]
    fn square_gradient() {
        let k = Constants::default();
        let s = ExtendedState::new(Vector3::new(3.0, 0.0, 0.0), Vector3::zeros(), 0.0, 0.0);
        let g = grad8(&poly("q1^2", |z| z[0] * z[0]), &s, &k).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-9);
        for i in 1..8 {
            assert_abs_diff_eq!(g[i], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn non_finite_stencil_names_coordinate() {
        let k = Constants::default();
        let f = poly("sqrt(-q0)", |z| (-z[3]).sqrt());
        let err = grad8(&f, &ExtendedState::origin(), &k).unwrap_err();
        assert_eq!(err, Error::Differentiation { coordinate: "q0" });
    }

    #[test]
    fn canonical_pairs() {
        let k = Constants { c: 2.5, ..Constants::default() };
        let s = ExtendedState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.0, 4.0), 0.3, 5.0);
        assert_eq!(poisson_canonical(&ScalarField::q(0), &ScalarField::p(0), &s, &k).unwrap(), 1.0);
        assert_eq!(poisson_canonical(&ScalarField::q0(), &ScalarField::p0(), &s, &k).unwrap(), 1.0);
        assert_abs_diff_eq!(
            poisson_canonical(&ScalarField::q0().numeric(), &ScalarField::p0().numeric(), &s, &k).unwrap(),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn boost_translation_bracket() {
        // {v·(mq − tp), −d·p} with m = 1, v = d = x̂
        let k = Constants::default();
        let jv = ScalarField::new("jv", |s: &ExtendedState, _: &Constants| s.q.x - s.t * s.p.x);
        let jd = ScalarField::new("jd", |s: &ExtendedState, _: &Constants| -s.p.x);
        for t in [0.0, 1.7, -3.0] {
            let s = ExtendedState::new(Vector3::new(0.3, 0.1, 0.0), Vector3::new(2.0, 0.0, 1.0), t, 0.4);
            assert_abs_diff_eq!(poisson_canonical(&jv, &jd, &s, &k).unwrap(), -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_bilinear() {
        let k = Constants { c: 1.3, ..Constants::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = poly("f", |z| z[0] * z[5] + z[3] * z[3] * z[7] - z[1]);
        let g = poly("g", |z| z[4] * z[4] * z[2] + z[6] * z[3]);
        let h = poly("h", |z| z[7] * z[0] + z[1] * z[1]);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            let fg = poisson_canonical(&f, &g, &s, &k).unwrap();
            let gf = poisson_canonical(&g, &f, &s, &k).unwrap();
            assert!((fg + gf).abs() < 1e-5);
            let lin = poisson_canonical(&f.scaled(2.0).sum(&h.scaled(-3.0)), &g, &s, &k).unwrap();
            let want = 2.0 * fg - 3.0 * poisson_canonical(&h, &g, &s, &k).unwrap();
            assert!((lin - want).abs() < 1e-5, "{lin} vs {want}");
        }
    }

    #[test]
    fn jacobi_identity_numeric() {
        let k = Constants::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = poly("f", |z| z[0] * z[4] + z[3] * z[7] * z[7]);
        let g = poly("g", |z| z[1] * z[0] - z[5] * z[3]);
        let h = poly("h", |z| z[4] * z[4] + z[2] * z[7]);
        let br = |a: &ScalarField, b: &ScalarField| {
            let (a, b) = (a.clone(), b.clone());
            ScalarField::new("br", move |s, k| poisson_canonical(&a, &b, s, k).unwrap())
        };
        // the outer stencil differentiates an already-differenced field, so it
        // uses a wider step to keep the inner roundoff below the tolerance
        let outer = |a: &ScalarField, b: &ScalarField, s: &ExtendedState| {
            let da = grad8_numeric(a, s, &k, 1e-3).unwrap();
            let db = grad8_numeric(b, s, &k, 1e-3).unwrap();
            bracket_of_gradients(&da, &db)
        };
        for _ in 0..20 {
            let s = random_state(&mut rng);
            let j = outer(&f, &br(&g, &h), &s) + outer(&g, &br(&h, &f), &s) + outer(&h, &br(&f, &g), &s);
            assert!(j.abs() < 1e-6, "jacobi residual {j}");
        }
    }

    #[test]
    fn exact_hamiltonian_gradients_match_differences() {
        let k = Constants { c: 2.0, ..Constants::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for h in [ScalarField::kinetic(1.5), ScalarField::relativistic(1.2, 1.0), ScalarField::relativistic(3.0, -1.0)] {
            for _ in 0..20 {
                let s = random_state(&mut rng);
                let exact = grad8(&h, &s, &k).unwrap();
                let approx = grad8(&h.numeric(), &s, &k).unwrap();
                for i in 0..8 {
                    assert!((exact[i] - approx[i]).abs() <= 1e-6 * exact[i].abs().max(1.0), "{}", h.name());
                }
            }
        }
    }

    #[test]
    fn field_bracket_relations() {
        let k = Constants::default();
        let b0 = Params::from([("B0".into(), 1.0)]);
        let pot = Potentials::catalog("uniform-B", &b0).unwrap();
        let s = ExtendedState::new(Vector3::new(0.4, -1.1, 2.0), Vector3::new(1.0, 0.5, 0.0), 0.2, 0.7);
        assert_eq!(poisson_field(&ScalarField::q(0), &ScalarField::p(0), &pot, &s, &k).unwrap(), 1.0);
        assert_eq!(poisson_field(&ScalarField::q(0), &ScalarField::q(1), &pot, &s, &k).unwrap(), 0.0);
        // {p₁, p₂}ᵉ_f = +eB₃/c with {q, p} = +1 and p' = p + eA/c
        assert_abs_diff_eq!(
            poisson_field(&ScalarField::p(0), &ScalarField::p(1), &pot, &s, &k).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let e1 = 0.75;
        let static_e = Potentials::parse(["0", "0", "0"], "-E1*q1", Params::from([("E1".into(), e1)])).unwrap();
        for q1 in [-2.0, 0.0, 3.5] {
            let s = ExtendedState::new(Vector3::new(q1, 0.2, 0.1), Vector3::zeros(), 0.0, 0.0);
            let v = poisson_field(&ScalarField::p(0), &ScalarField::p0(), &static_e, &s, &k).unwrap();
            assert_abs_diff_eq!(v, e1, epsilon = 1e-12);
        }
    }

    #[test]
    fn bracket_force_is_lorentz_force() {
        let k = Constants { c: 2.0, e: 0.7, ..Constants::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = ScalarField::kinetic(1.3);
        for name in crate::potential::CATALOG {
            let pot = Potentials::catalog(name, &Params::new()).unwrap();
            for _ in 0..20 {
                let mut s = random_state(&mut rng);
                s.q += Vector3::new(3.0, 3.0, 3.0);
                let loc = pot.local(&s.q, s.t, &k).unwrap();
                let v = s.p / 1.3;
                let lorentz = k.e * (v.cross(&loc.magnetic()) / k.c + loc.electric(&k));
                let f = bracket_force(&h, &pot, &s, &k).unwrap();
                assert!((f - lorentz).amax() < 1e-12, "{name}: {f} vs {lorentz}");
            }
        }
    }
}
