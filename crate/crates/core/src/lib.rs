//! Classical dynamics on an extended phase-space where time and energy are a
//! canonical pair `(q⁰, p₀) = (c·t, −E/c)`.
//!
//! Modules:
//! - [`state`]: points, tangent vectors and the canonical chart.
//! - [`expr`]: the field-expression language.
//! - [`potential`]: electromagnetic potentials built from expressions.
//! - [`numdiff`]: scalar fields, gradients and Poisson brackets.
//! - [`canon`]: generating functions and canonical maps.
//! - [`em`]: electromagnetic coupling through the symplectic form.
//! - [`group`]: Galilei and α-deformed inertial group actions.
//! - [`scenario`]: JSON scenarios and the runner behind the `xphase` CLI.

pub mod canon;
pub mod em;
pub mod error;
pub mod expr;
pub mod group;
pub mod numdiff;
pub mod potential;
pub mod scenario;
pub mod state;

pub use error::{Error, Result};
pub use state::{Canonical8, Constants, ExtendedState, Tangent8};
