//! Extended phase-space points and the `(t, E) <-> (q⁰, p₀)` chart.
//!
//! A state carries the physical coordinates `(q, p, t, E)`. The canonical
//! chart used by every bracket and symplectic check is the 8-vector
//! `(q¹, q², q³, q⁰, p₁, p₂, p₃, p₀)` with `q⁰ = c·t` and `p₀ = −E/c`.

use nalgebra::{SVector, Vector3};

use crate::error::{Error, Result};

/// Canonical 8-vector `(q¹, q², q³, q⁰, p₁, p₂, p₃, p₀)`.
pub type Canonical8 = SVector<f64, 8>;

/// Slot names of [`Canonical8`], used in diagnostics.
pub const SLOT_NAMES: [&str; 8] = ["q1", "q2", "q3", "q0", "p1", "p2", "p3", "p0"];

/// Physical constants of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c: f64,
    pub e: f64,
    pub m: f64,
    pub alpha: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self { c: 1.0, e: 1.0, m: 1.0, alpha: 1.0 }
    }
}

impl Constants {
    pub fn new(c: f64, e: f64, m: f64, alpha: f64) -> Result<Self> {
        let k = Self { c, e, m, alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Validation { field: "c", reason: format!("must be finite and > 0, got {}", self.c) });
        }
        if !self.e.is_finite() {
            return Err(Error::Validation { field: "e", reason: "must be finite".into() });
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(Error::Validation { field: "m", reason: format!("must be finite and >= 0, got {}", self.m) });
        }
        if self.alpha != 1.0 && self.alpha != -1.0 {
            return Err(Error::Validation { field: "alpha", reason: format!("must be +1 or -1, got {}", self.alpha) });
        }
        Ok(())
    }
}

/// A point `(q, p, t, E)` of the extended phase-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState {
    pub q: Vector3<f64>,
    pub p: Vector3<f64>,
    pub t: f64,
    pub energy: f64,
}

impl ExtendedState {
    pub fn new(q: Vector3<f64>, p: Vector3<f64>, t: f64, energy: f64) -> Self {
        Self { q, p, t, energy }
    }

    pub fn origin() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite()) && self.t.is_finite() && self.energy.is_finite()
    }

    /// `q⁰ = c·t`.
    pub fn q0(&self, k: &Constants) -> f64 {
        k.c * self.t
    }

    /// `p₀ = −E/c`.
    pub fn p0(&self, k: &Constants) -> f64 {
        -self.energy / k.c
    }

    /// Adds `h·dz` component-wise.
    pub fn advanced(&self, dz: &Tangent8, h: f64) -> Self {
        Self {
            q: self.q + dz.dq * h,
            p: self.p + dz.dp * h,
            t: self.t + dz.dt * h,
            energy: self.energy + dz.de * h,
        }
    }
}

/// A tangent vector `d_s(q, p, t, E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent8 {
    pub dq: Vector3<f64>,
    pub dp: Vector3<f64>,
    pub dt: f64,
    pub de: f64,
}

impl Tangent8 {
    pub fn zero() -> Self {
        Self { dq: Vector3::zeros(), dp: Vector3::zeros(), dt: 0.0, de: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.dq.iter().chain(self.dp.iter()).all(|x| x.is_finite()) && self.dt.is_finite() && self.de.is_finite()
    }

    /// The same vector expressed in the canonical chart.
    pub fn to_canonical(&self, k: &Constants) -> Canonical8 {
        let mut out = Canonical8::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.dq);
        out[3] = k.c * self.dt;
        out.fixed_rows_mut::<3>(4).copy_from(&self.dp);
        out[7] = -self.de / k.c;
        out
    }

    pub fn linear_combination(terms: &[(f64, &Tangent8)]) -> Self {
        terms.iter().fold(Self::zero(), |acc, (w, v)| Self {
            dq: acc.dq + v.dq * *w,
            dp: acc.dp + v.dp * *w,
            dt: acc.dt + v.dt * *w,
            de: acc.de + v.de * *w,
        })
    }
}

/// Maps a state to `(q¹, q², q³, q⁰, p₁, p₂, p₃, p₀)`.
pub fn canonical_coords(s: &ExtendedState, k: &Constants) -> Result<Canonical8> {
    k.validate()?;
    if !s.is_finite() {
        return Err(Error::Validation { field: "state", reason: "non-finite component".into() });
    }
    let mut z = Canonical8::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&s.q);
    z[3] = s.q0(k);
    z.fixed_rows_mut::<3>(4).copy_from(&s.p);
    z[7] = s.p0(k);
    Ok(z)
}

/// Inverse of [`canonical_coords`].
pub fn from_canonical(z: &Canonical8, k: &Constants) -> Result<ExtendedState> {
    k.validate()?;
    if !z.iter().all(|x| x.is_finite()) {
        return Err(Error::Validation { field: "canonical", reason: "non-finite component".into() });
    }
    Ok(ExtendedState {
        q: z.fixed_rows::<3>(0).into_owned(),
        p: z.fixed_rows::<3>(4).into_owned(),
        t: z[3] / k.c,
        energy: -z[7] * k.c,
    })
}

/// `Hᵉ = H + c·p₀`, i.e. `H − E`.
pub fn extended_hamiltonian(h: f64, s: &ExtendedState, k: &Constants) -> f64 {
    h + k.c * s.p0(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ulps(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn origin_maps_to_zero() {
        let z = canonical_coords(&ExtendedState::origin(), &Constants::default()).unwrap();
        assert_eq!(z, Canonical8::zeros());
    }

    #[test]
    fn time_and_energy_slots() {
        let s = ExtendedState::new(Vector3::zeros(), Vector3::zeros(), 2.0, 3.0);
        let z = canonical_coords(&s, &Constants::default()).unwrap();
        assert_eq!((z[3], z[7]), (2.0, -3.0));

        let k = Constants { c: 3.0, ..Constants::default() };
        let s = ExtendedState::new(Vector3::zeros(), Vector3::zeros(), 1.0, 6.0);
        let z = canonical_coords(&s, &k).unwrap();
        assert_eq!((z[3], z[7]), (3.0, -2.0));
    }

    #[test]
    fn rejects_bad_input() {
        let s = ExtendedState::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros(), 0.0, 0.0);
        assert!(canonical_coords(&s, &Constants::default()).is_err());
        let k = Constants { c: 0.0, ..Constants::default() };
        assert!(canonical_coords(&ExtendedState::origin(), &k).is_err());
        assert!(Constants::new(1.0, 1.0, 1.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn chart_round_trip(q in prop::array::uniform3(-1e6f64..1e6), p in prop::array::uniform3(-1e6f64..1e6),
                            t in -1e6f64..1e6, e in -1e6f64..1e6, c in 0.01f64..1e3) {
            let k = Constants { c, ..Constants::default() };
            let s = ExtendedState::new(Vector3::from(q), Vector3::from(p), t, e);
            let back = from_canonical(&canonical_coords(&s, &k).unwrap(), &k).unwrap();
            prop_assert_eq!(back.q, s.q);
            prop_assert_eq!(back.p, s.p);
            prop_assert!(ulps(back.t, s.t) <= 1);
            prop_assert!(ulps(back.energy, s.energy) <= 1);
        }

        #[test]
        fn extended_hamiltonian_is_h_minus_e(h in -1e3f64..1e3, e in -1e3f64..1e3, c in 0.1f64..10.0) {
            let k = Constants { c, ..Constants::default() };
            let s = ExtendedState::new(Vector3::zeros(), Vector3::zeros(), 0.0, e);
            prop_assert!((extended_hamiltonian(h, &s, &k) - (h - e)).abs() <= 1e-12 * (1.0 + e.abs()));
        }
    }
}
