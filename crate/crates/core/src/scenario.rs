//! JSON scenarios and the runner behind the `xphase` binary.
//!
//! A scenario file names one of six kinds and carries the inputs it needs.
//! Loading validates every key. Running writes artifacts to an output
//! directory and returns a report whose gates decide the exit status.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canon::{
    apply_generating_function, invert_generating_function, symplecticity_residual, transformed_hamiltonian,
    GalileiBoostPhi, GeneratingFunction, PhasePoint, QuadraticPhi, RotationPhi,
};
use crate::em::{self, Method};
use crate::error::Error;
use crate::expr::{Expr, ExprError, Params};
use crate::group::{self, GalileiElement, LiftKind};
use crate::numdiff::ScalarField;
use crate::potential::{Potentials, CATALOG};
use crate::state::{canonical_coords, Canonical8, Constants, ExtendedState};

pub const SCHEMA_VERSION: &str = "xphase/1";

/// Tolerance of the quasi-isotropy check on α boost-table states.
pub const QUASI_ISOTROPY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("invalid `{key}`: {message}")]
    Schema { key: String, message: String },

    #[error("expression in `{key}`: {source}")]
    Expression { key: String, source: ExprError },

    #[error("{context}: {source}")]
    Runtime { context: &'static str, source: Error },
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Io { .. } => "io",
            ScenarioError::Schema { .. } => "schema",
            ScenarioError::Expression { .. } => "expression",
            ScenarioError::Runtime { .. } => "runtime",
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ScenarioError::Schema { key, .. } | ScenarioError::Expression { key, .. } => Some(key),
            _ => None,
        }
    }

    /// The single-line error object printed on stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.code(), "message": self.to_string() });
        if let Some(key) = self.key() {
            v["key"] = json!(key);
        }
        if let ScenarioError::Expression { source, .. } = self {
            v["expression_error"] = json!(source.code());
            if let Some(offset) = source.offset() {
                v["offset"] = json!(offset);
            }
        }
        v
    }
}

fn schema(key: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { key: key.into(), message: message.into() }
}

fn runtime(context: &'static str) -> impl FnOnce(Error) -> ScenarioError {
    move |source| ScenarioError::Runtime { context, source }
}

type SResult<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Simulate,
    Transform,
    Cocycle,
    Equivariance,
    MaxwellCheck,
    BoostTable,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Simulate,
        ScenarioKind::Transform,
        ScenarioKind::Cocycle,
        ScenarioKind::Equivariance,
        ScenarioKind::MaxwellCheck,
        ScenarioKind::BoostTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Simulate => "simulate",
            ScenarioKind::Transform => "transform",
            ScenarioKind::Cocycle => "cocycle",
            ScenarioKind::Equivariance => "equivariance",
            ScenarioKind::MaxwellCheck => "maxwell-check",
            ScenarioKind::BoostTable => "boost-table",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// file schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: String,
    kind: ScenarioKind,
    #[serde(default)]
    constants: RawConstants,
    #[serde(default)]
    hamiltonian: RawHamiltonian,
    potential: Option<RawPotential>,
    #[serde(default)]
    initial: Vec<RawState>,
    integrator: Option<RawIntegrator>,
    transform: Option<RawTransform>,
    group: Option<RawGroup>,
    boosts: Option<RawBoosts>,
    #[serde(default)]
    samples: SampleSpec,
    #[serde(default)]
    gates: GateOverrides,
    #[serde(default)]
    seed: u64,
    output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConstants {
    c: f64,
    e: f64,
    m: f64,
    alpha: f64,
}

impl Default for RawConstants {
    fn default() -> Self {
        let k = Constants::default();
        Self { c: k.c, e: k.e, m: k.m, alpha: k.alpha }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum HamiltonianForm {
    #[default]
    Kinetic,
    Relativistic,
    Harmonic,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHamiltonian {
    #[serde(default)]
    form: HamiltonianForm,
    #[serde(default)]
    params: Params,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    catalog: Option<String>,
    a: Option<[String; 3]>,
    v: Option<String>,
    #[serde(default)]
    params: Params,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    q: [f64; 3],
    #[serde(default)]
    p: [f64; 3],
    #[serde(default)]
    t: f64,
    #[serde(rename = "E")]
    energy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MethodName {
    #[default]
    Rk4,
    ImplicitMidpoint,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    #[serde(default)]
    method: MethodName,
    ds: f64,
    steps: Option<usize>,
    duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum LiftName {
    #[serde(rename = "galilei_M")]
    GalileiM,
    #[serde(rename = "galilei_Me")]
    GalileiMe,
    #[serde(rename = "alpha_Me")]
    AlphaMe,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    #[serde(default)]
    theta: [f64; 3],
    #[serde(default)]
    d: [f64; 3],
    #[serde(default)]
    v: [f64; 3],
    #[serde(default)]
    tau: f64,
}

impl RawElement {
    fn element(&self) -> GalileiElement {
        GalileiElement::from_parts(self.theta.into(), self.d.into(), self.v.into(), self.tau)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
enum RawTransform {
    GalileiBoost {
        velocity: [f64; 3],
        #[serde(default)]
        t: f64,
    },
    Rotation {
        omega: [f64; 3],
        dt: f64,
        #[serde(default)]
        t: f64,
    },
    Lift {
        lift: LiftName,
        element: RawElement,
        eps: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    lift: LiftName,
    alpha: Option<f64>,
    m: Option<f64>,
    #[serde(default)]
    pairs: Vec<[RawElement; 2]>,
}

fn default_composition_steps() -> Vec<usize> {
    vec![100, 1000, 10_000]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoosts {
    velocities: Vec<[f64; 3]>,
    #[serde(default = "default_composition_steps")]
    composition_steps: Vec<usize>,
}

/// Box from which random states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub count: usize,
    pub half_width: f64,
    pub momentum_half_width: f64,
    pub time_half_width: f64,
    /// Points closer than this to the origin are redrawn.
    pub min_radius: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { count: 50, half_width: 2.0, momentum_half_width: 1.0, time_half_width: 1.0, min_radius: 0.0 }
    }
}

/// Optional gate tolerances; `drift` always applies to simulations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateOverrides {
    pub drift: Option<f64>,
    #[serde(rename = "return")]
    pub return_to_initial: Option<f64>,
    pub energy: Option<f64>,
    pub vacuum: Option<f64>,
}

// ---------------------------------------------------------------------------
// validated scenario

#[derive(Debug, Clone, Copy)]
pub struct IntegratorSpec {
    pub method: Method,
    pub ds: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub enum TransformSpec {
    GalileiBoost { velocity: Vector3<f64>, t: f64 },
    Rotation { omega: Vector3<f64>, dt: f64, t: f64 },
    Lift { lift: LiftKind, element: GalileiElement, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub lift: LiftKind,
    pub m: f64,
    pub pairs: Vec<(GalileiElement, GalileiElement)>,
}

#[derive(Debug, Clone)]
pub struct BoostSpec {
    pub velocities: Vec<Vector3<f64>>,
    pub composition_steps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub constants: Constants,
    pub hamiltonian: ScalarField,
    pub potentials: Potentials,
    pub potential_label: String,
    pub initial: Vec<ExtendedState>,
    pub integrator: Option<IntegratorSpec>,
    pub transform: Option<TransformSpec>,
    pub group: Option<GroupSpec>,
    pub boosts: Option<BoostSpec>,
    pub samples: SampleSpec,
    pub gates: GateOverrides,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> SResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_scenario(&text)
}

/// Validates scenario JSON text.
pub fn parse_scenario(text: &str) -> SResult<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "(root)".to_string() } else { path };
        schema(key, e.into_inner().to_string())
    })?;
    raw.validate()
}

fn finite(key: &str, x: f64) -> SResult<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(schema(key, format!("must be finite, got {x}")))
    }
}

fn positive(key: &str, x: f64) -> SResult<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(schema(key, format!("must be finite and > 0, got {x}")))
    }
}

fn lift_kind(key: &str, name: LiftName, alpha: f64) -> SResult<LiftKind> {
    Ok(match name {
        LiftName::GalileiM => LiftKind::GalileiM,
        LiftName::GalileiMe => LiftKind::GalileiMe,
        LiftName::AlphaMe if alpha == 1.0 || alpha == -1.0 => LiftKind::AlphaMe(alpha),
        LiftName::AlphaMe => return Err(schema(key, format!("alpha must be +1 or -1, got {alpha}"))),
    })
}

fn hamiltonian(raw: &RawHamiltonian, k: &Constants) -> SResult<ScalarField> {
    let m = k.m;
    let allowed: &[&str] = match raw.form {
        HamiltonianForm::Harmonic => &["k"],
        _ => &[],
    };
    if let Some(name) = raw.params.keys().find(|n| !allowed.contains(&n.as_str())) {
        return Err(schema(format!("hamiltonian.params.{name}"), "not a parameter of this form"));
    }
    if m <= 0.0 && !matches!(raw.form, HamiltonianForm::Relativistic) {
        return Err(schema("constants.m", "must be > 0 for this hamiltonian"));
    }
    Ok(match raw.form {
        HamiltonianForm::Kinetic => ScalarField::kinetic(m),
        HamiltonianForm::Relativistic => ScalarField::relativistic(m, k.alpha),
        HamiltonianForm::Harmonic => {
            let spring = finite("hamiltonian.params.k", raw.params.get("k").copied().unwrap_or(1.0))?;
            let well = ScalarField::new("harmonic", move |s, _| 0.5 * spring * s.q.norm_squared()).with_gradient(move |s, _| {
                let mut g = Canonical8::zeros();
                g.fixed_rows_mut::<3>(0).copy_from(&(s.q * spring));
                g
            });
            ScalarField::kinetic(m).sum(&well)
        }
    })
}

fn potentials(raw: Option<&RawPotential>) -> SResult<(Potentials, String)> {
    let Some(raw) = raw else {
        return Ok((Potentials::free(), "free".into()));
    };
    for (name, value) in &raw.params {
        finite(&format!("potential.params.{name}"), *value)?;
    }
    match (&raw.catalog, &raw.a, &raw.v) {
        (Some(name), None, None) => {
            let pot = Potentials::catalog(name, &raw.params)
                .ok_or_else(|| schema("potential.catalog", format!("unknown entry `{name}`, expected one of {CATALOG:?}")))?;
            if let Some(extra) = raw.params.keys().find(|n| !pot.params().contains_key(*n)) {
                return Err(schema(format!("potential.params.{extra}"), format!("not a parameter of `{name}`")));
            }
            Ok((pot, name.clone()))
        }
        (None, a, v) if a.is_some() || v.is_some() => {
            let names: Vec<&str> = raw.params.keys().map(String::as_str).collect();
            let parse = |key: String, src: &str| Expr::parse(src, &names).map_err(|source| ScenarioError::Expression { key, source });
            let zero = ["0".to_string(), "0".to_string(), "0".to_string()];
            let a = a.as_ref().unwrap_or(&zero);
            let a = [parse("potential.a[0]".into(), &a[0])?, parse("potential.a[1]".into(), &a[1])?, parse("potential.a[2]".into(), &a[2])?];
            let v = parse("potential.v".into(), v.as_deref().unwrap_or("0"))?;
            Ok((Potentials::new(a, v, raw.params.clone()), "inline".into()))
        }
        _ => Err(schema("potential", "give either `catalog` or inline `a`/`v`")),
    }
}

fn state(raw: &RawState) -> ExtendedState {
    ExtendedState::new(raw.q.into(), raw.p.into(), raw.t, raw.energy.unwrap_or(0.0))
}

impl RawScenario {
    fn validate(self) -> SResult<Scenario> {
        if self.version != SCHEMA_VERSION {
            return Err(schema("version", format!("expected \"{SCHEMA_VERSION}\", got \"{}\"", self.version)));
        }
        let rc = &self.constants;
        let k = Constants { c: rc.c, e: rc.e, m: rc.m, alpha: rc.alpha };
        k.validate().map_err(|e| match e {
            Error::Validation { field, reason } => schema(format!("constants.{field}"), reason),
            other => schema("constants", other.to_string()),
        })?;
        finite("constants.e", k.e)?;
        let hamiltonian = hamiltonian(&self.hamiltonian, &k)?;
        let (potentials, potential_label) = potentials(self.potential.as_ref())?;

        let mut initial = Vec::with_capacity(self.initial.len());
        for (i, raw) in self.initial.iter().enumerate() {
            let s = state(raw);
            if !s.is_finite() {
                return Err(schema(format!("initial[{i}]"), "non-finite entry"));
            }
            initial.push(s);
        }

        let need = |present: bool, key: &str| if present { Ok(()) } else { Err(schema(key, format!("required for kind {}", self.kind))) };
        let integrator = match &self.integrator {
            None => None,
            Some(raw) => Some(integrator(raw)?),
        };
        match self.kind {
            ScenarioKind::Simulate => {
                need(integrator.is_some(), "integrator")?;
                need(!initial.is_empty(), "initial")?;
                // Hᵉ = 0 on the initial state unless E is given
                for (s, raw) in initial.iter_mut().zip(&self.initial) {
                    if raw.energy.is_none() {
                        s.energy = hamiltonian.eval(s, &k);
                    }
                }
            }
            ScenarioKind::Transform => {
                need(self.transform.is_some(), "transform")?;
                need(!initial.is_empty(), "initial")?;
            }
            ScenarioKind::Cocycle => {
                need(self.group.as_ref().is_some_and(|g| !g.pairs.is_empty()), "group.pairs")?;
            }
            ScenarioKind::Equivariance => need(self.group.is_some(), "group")?,
            ScenarioKind::MaxwellCheck => need(self.potential.is_some(), "potential")?,
            ScenarioKind::BoostTable => {
                need(self.boosts.is_some(), "boosts")?;
                need(!initial.is_empty(), "initial")?;
                quasi_isotropic_states(&mut initial, &self.initial, &k)?;
            }
        }
        if self.samples.count == 0 {
            return Err(schema("samples.count", "must be >= 1"));
        }
        positive("samples.half_width", self.samples.half_width)?;
        positive("samples.momentum_half_width", self.samples.momentum_half_width)?;
        positive("samples.time_half_width", self.samples.time_half_width)?;
        if !(self.samples.min_radius >= 0.0 && self.samples.min_radius < self.samples.half_width) {
            return Err(schema("samples.min_radius", "must lie in [0, half_width)"));
        }
        for (key, tol) in [
            ("gates.drift", self.gates.drift),
            ("gates.return", self.gates.return_to_initial),
            ("gates.energy", self.gates.energy),
            ("gates.vacuum", self.gates.vacuum),
        ] {
            if let Some(t) = tol {
                positive(key, t)?;
            }
        }

        let transform = match self.transform {
            None => None,
            Some(RawTransform::GalileiBoost { velocity, t }) => {
                Some(TransformSpec::GalileiBoost { velocity: velocity.into(), t: finite("transform.t", t)? })
            }
            Some(RawTransform::Rotation { omega, dt, t }) => Some(TransformSpec::Rotation {
                omega: omega.into(),
                dt: finite("transform.dt", dt)?,
                t: finite("transform.t", t)?,
            }),
            Some(RawTransform::Lift { lift, element, eps }) => Some(TransformSpec::Lift {
                lift: lift_kind("transform.lift", lift, k.alpha)?,
                element: element.element(),
                eps: finite("transform.eps", eps)?,
            }),
        };
        if let Some(TransformSpec::Lift { lift: LiftKind::GalileiM, element, .. }) = &transform {
            if element.tau != 0.0 {
                return Err(schema("transform.element.tau", "no time shift on M"));
            }
        }
        let group = match self.group {
            None => None,
            Some(raw) => {
                let alpha = raw.alpha.unwrap_or(k.alpha);
                let lift = lift_kind("group.alpha", raw.lift, alpha)?;
                let m = raw.m.unwrap_or(k.m);
                if matches!(lift, LiftKind::GalileiM | LiftKind::GalileiMe) && !(m.is_finite() && m > 0.0) {
                    return Err(schema("group.m", format!("must be finite and > 0 for {lift}, got {m}")));
                }
                let pairs: Vec<_> = raw.pairs.iter().map(|[g, h]| (g.element(), h.element())).collect();
                if lift == LiftKind::GalileiM {
                    if let Some(i) = pairs.iter().position(|(g, h)| g.tau != 0.0 || h.tau != 0.0) {
                        return Err(schema(format!("group.pairs[{i}]"), "no time shift on M"));
                    }
                }
                Some(GroupSpec { lift, m, pairs })
            }
        };
        let boosts = match self.boosts {
            None => None,
            Some(raw) => {
                if raw.velocities.is_empty() {
                    return Err(schema("boosts.velocities", "must not be empty"));
                }
                for (i, v) in raw.velocities.iter().enumerate() {
                    let v = Vector3::from(*v);
                    if !v.iter().all(|x| x.is_finite()) || (k.alpha == 1.0 && v.norm() >= k.c) {
                        return Err(schema(format!("boosts.velocities[{i}]"), format!("speed {} not allowed for alpha = {}", v.norm(), k.alpha)));
                    }
                }
                if raw.composition_steps.contains(&0) {
                    return Err(schema("boosts.composition_steps", "entries must be >= 1"));
                }
                Some(BoostSpec { velocities: raw.velocities.into_iter().map(Vector3::from).collect(), composition_steps: raw.composition_steps })
            }
        };

        Ok(Scenario {
            kind: self.kind,
            constants: k,
            hamiltonian,
            potentials,
            potential_label,
            initial,
            integrator,
            transform,
            group,
            boosts,
            samples: self.samples,
            gates: self.gates,
            seed: self.seed,
            output: self.output.map(PathBuf::from),
        })
    }
}

fn integrator(raw: &RawIntegrator) -> SResult<IntegratorSpec> {
    let ds = positive("integrator.ds", raw.ds)?;
    let method = match raw.method {
        MethodName::Rk4 => Method::Rk4,
        MethodName::ImplicitMidpoint => Method::ImplicitMidpoint,
    };
    match (raw.steps, raw.duration) {
        (Some(0), None) => Err(schema("integrator.steps", "must be >= 1")),
        (Some(steps), None) => Ok(IntegratorSpec { method, ds, steps }),
        (None, Some(duration)) => {
            // the step is shrunk so that the run ends exactly at `duration`
            let duration = positive("integrator.duration", duration)?;
            let steps = (duration / ds).ceil() as usize;
            Ok(IntegratorSpec { method, ds: duration / steps as f64, steps })
        }
        _ => Err(schema("integrator", "give exactly one of `steps` or `duration`")),
    }
}

/// For α kinds a state must satisfy `p² − αp₀² = −αm²c²`. A missing energy
/// is filled in from that relation.
fn quasi_isotropic_states(states: &mut [ExtendedState], raw: &[RawState], k: &Constants) -> SResult<()> {
    let mc2 = (k.m * k.c).powi(2);
    for (i, (s, r)) in states.iter_mut().zip(raw).enumerate() {
        match r.energy {
            None => {
                let radicand = mc2 + k.alpha * s.p.norm_squared();
                if radicand < 0.0 {
                    return Err(schema(format!("initial[{i}].p"), format!("|p| exceeds m·c = {}", k.m * k.c)));
                }
                s.energy = k.alpha * k.c * radicand.sqrt();
            }
            Some(_) => {
                let defect = group::invariant_quadratic(&s.p, s.p0(k), k.alpha) + k.alpha * mc2;
                if defect.abs() > QUASI_ISOTROPY_TOL * mc2.max(1.0) {
                    return Err(schema(
                        format!("initial[{i}].E"),
                        format!("violates p² − αp₀² = −αm²c² by {defect:e}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

impl Scenario {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

// ---------------------------------------------------------------------------
// running

/// One pass/fail check of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub comparison: &'static str,
    pub pass: bool,
}

impl Gate {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, comparison: "<=", pass: value <= limit }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, comparison: ">=", pass: value >= limit }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub gates: Vec<Gate>,
    pub report: Value,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    /// One human-readable line.
    pub fn summary(&self, kind: ScenarioKind) -> String {
        let failed: Vec<&str> = self.gates.iter().filter(|g| !g.pass).map(|g| g.name.as_str()).collect();
        let status = if self.passed { "PASS".to_string() } else { format!("FAIL ({})", failed.join(", ")) };
        let files: Vec<String> = self.artifacts.iter().map(|p| p.display().to_string()).collect();
        format!("{kind}: {status}; {} gates; wrote {}", self.gates.len(), files.join(", "))
    }
}

fn state_json(s: &ExtendedState) -> Value {
    json!({ "q": s.q.as_slice(), "p": s.p.as_slice(), "t": s.t, "E": s.energy })
}

fn point_json(z: &PhasePoint) -> Value {
    json!({ "q": z.q.as_slice(), "p": z.p.as_slice() })
}

fn element_json(g: &GalileiElement) -> Value {
    json!({ "theta": g.theta().as_slice(), "d": g.d.as_slice(), "v": g.v.as_slice(), "tau": g.tau })
}

fn random_states(rng: &mut ChaCha8Rng, spec: &SampleSpec) -> SResult<Vec<ExtendedState>> {
    let (w, pw, tw) = (spec.half_width, spec.momentum_half_width, spec.time_half_width);
    let mut out = Vec::with_capacity(spec.count);
    while out.len() < spec.count {
        let mut q = Vector3::zeros();
        let mut tries = 0;
        loop {
            q = q.map(|_| rng.gen_range(-w..w));
            if q.norm() >= spec.min_radius {
                break;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(schema("samples.min_radius", "rejection sampling did not terminate"));
            }
        }
        let p = Vector3::from_fn(|_, _| rng.gen_range(-pw..pw));
        out.push(ExtendedState::new(q, p, rng.gen_range(-tw..tw), rng.gen_range(-pw..pw)));
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &[u8]) -> SResult<()> {
    fs::write(path, contents).map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Runs `sc`, writing artifacts and `report.json` under `out_dir`.
pub fn run(sc: &Scenario, out_dir: &Path) -> SResult<RunOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| ScenarioError::Io { path: out_dir.display().to_string(), message: e.to_string() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut artifacts = Vec::new();
    let (gates, results) = match sc.kind {
        ScenarioKind::Simulate => run_simulate(sc, out_dir, &mut artifacts)?,
        ScenarioKind::Transform => run_transform(sc)?,
        ScenarioKind::Cocycle => run_cocycle(sc, &mut rng)?,
        ScenarioKind::Equivariance => run_equivariance(sc, &mut rng)?,
        ScenarioKind::MaxwellCheck => run_maxwell(sc, &mut rng)?,
        ScenarioKind::BoostTable => run_boost_table(sc, out_dir, &mut artifacts)?,
    };
    let passed = gates.iter().all(|g| g.pass);
    let k = &sc.constants;
    let report = json!({
        "schema": SCHEMA_VERSION,
        "kind": sc.kind,
        "seed": sc.seed,
        "constants": { "c": k.c, "e": k.e, "m": k.m, "alpha": k.alpha },
        "hamiltonian": sc.hamiltonian.name(),
        "potential": sc.potential_label,
        "passed": passed,
        "gates": gates,
        "results": results,
    });
    let path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    artifacts.push(path);
    Ok(RunOutcome { passed, gates, report, artifacts })
}

type Section = (Vec<Gate>, Value);

fn run_simulate(sc: &Scenario, out_dir: &Path, artifacts: &mut Vec<PathBuf>) -> SResult<Section> {
    let spec = sc.integrator.expect("validated");
    let k = &sc.constants;
    let rhs = |s: &ExtendedState| em::em_rhs(&sc.hamiltonian, &sc.potentials, s, k);
    let mut rows = Vec::new();
    let (mut drift, mut ret, mut energy): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, s0) in sc.initial.iter().enumerate() {
        let tr = em::integrate(&rhs, &sc.hamiltonian, s0, spec.ds, spec.steps, spec.method, k).map_err(runtime("integration"))?;
        let name = if i == 0 { "trajectory.csv".to_string() } else { format!("trajectory_{i}.csv") };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).expect("writing to memory");
        let path = out_dir.join(&name);
        write_file(&path, &buf)?;
        artifacts.push(path);
        let end = tr.last();
        let return_residual = (end.q - s0.q).amax().max((end.p - s0.p).amax());
        let energy_change = tr.samples.iter().fold(0.0f64, |m, (_, s)| m.max((s.energy - s0.energy).abs()));
        drift = drift.max(tr.max_abs_drift());
        ret = ret.max(return_residual);
        energy = energy.max(energy_change);
        rows.push(json!({
            "file": name,
            "initial_state": state_json(s0),
            "final_state": state_json(end),
            "max_abs_drift": tr.max_abs_drift(),
            "return_residual": return_residual,
            "max_energy_change": energy_change,
            "max_stage_residual": tr.max_stage_residual,
        }));
    }
    let mut gates = vec![Gate::at_most("H_e_drift", drift, sc.gates.drift.unwrap_or(1e-6))];
    if let Some(tol) = sc.gates.return_to_initial {
        gates.push(Gate::at_most("return_residual", ret, tol));
    }
    if let Some(tol) = sc.gates.energy {
        gates.push(Gate::at_most("energy_change", energy, tol));
    }
    let results = json!({
        "method": spec.method.name(),
        "ds": spec.ds,
        "steps": spec.steps,
        "duration": spec.ds * spec.steps as f64,
        "max_abs_drift": drift,
        "return_residual": ret,
        "max_energy_change": energy,
        "trajectories": rows,
    });
    Ok((gates, results))
}

fn map_checks(phi: &dyn GeneratingFunction, z: &PhasePoint, t: f64) -> SResult<(PhasePoint, f64, f64)> {
    let after = apply_generating_function(phi, z, t).map_err(runtime("transform"))?;
    let back = invert_generating_function(phi, &after, t).map_err(runtime("inverse transform"))?;
    let round_trip = (&back.q - &z.q).amax().max((&back.p - &z.p).amax());
    let map = |w: &PhasePoint| apply_generating_function(phi, w, t);
    let sym = symplecticity_residual(&map, z).map_err(runtime("symplecticity"))?;
    Ok((after, round_trip, sym))
}

fn run_transform(sc: &Scenario) -> SResult<Section> {
    let k = &sc.constants;
    let m = k.m;
    let kinetic = move |z: &PhasePoint, _t: f64| z.p.norm_squared() / (2.0 * m);
    let mut rows = Vec::new();
    let (mut worst_trip, mut worst_sym): (f64, f64) = (0.0, 0.0);
    let mut record = |label: String, z: PhasePoint, after: PhasePoint, trip: f64, sym: f64, extra: Value| {
        worst_trip = worst_trip.max(trip);
        worst_sym = worst_sym.max(sym);
        rows.push(json!({
            "label": label,
            "before": point_json(&z),
            "after": point_json(&after),
            "round_trip_residual": trip,
            "symplecticity_residual": sym,
            "extra": extra,
        }));
    };
    match sc.transform.as_ref().expect("validated") {
        TransformSpec::GalileiBoost { velocity, t } => {
            let particles: Vec<_> = sc.initial.iter().map(|s| (s.q, s.p)).collect();
            let z = PhasePoint::from_particles(&particles);
            let phi = GalileiBoostPhi { velocity: *velocity, masses: vec![m; particles.len()] };
            let (after, trip, sym) = map_checks(&phi, &z, *t)?;
            let h_new = transformed_hamiltonian(&kinetic, &phi, &after, *t).map_err(runtime("transformed hamiltonian"))?;
            let extra = json!({ "H_before": kinetic(&z, *t), "H_after": h_new });
            record("galilei-boost".into(), z, after, trip, sym, extra);
        }
        TransformSpec::Rotation { omega, dt, t } => {
            let particles: Vec<_> = sc.initial.iter().map(|s| (s.q, s.p)).collect();
            let z = PhasePoint::from_particles(&particles);
            let phi = RotationPhi { omega: *omega, dt: *dt, particles: particles.len() };
            let (after, trip, sym) = map_checks(&phi, &z, *t)?;
            let h_new = transformed_hamiltonian(&kinetic, &phi, &after, *t).map_err(runtime("transformed hamiltonian"))?;
            let extra = json!({ "H_before": kinetic(&z, *t), "H_after": h_new });
            record("rotation".into(), z, after, trip, sym, extra);
        }
        TransformSpec::Lift { lift, element, eps } => {
            for (i, s) in sc.initial.iter().enumerate() {
                let (generator, z) = if *lift == LiftKind::GalileiM {
                    let g = group::lift_on_phase_space(element, m, s.t).map_err(runtime("lift"))?;
                    (g, PhasePoint::from_slices(s.q.as_slice(), s.p.as_slice()))
                } else {
                    let g = group::lift(element, *lift, k, m).map_err(runtime("lift"))?;
                    let c = canonical_coords(s, k).map_err(runtime("canonical chart"))?;
                    (g, PhasePoint::from_slices(&c.as_slice()[..4], &c.as_slice()[4..]))
                };
                let phi = QuadraticPhi { generator, eps: *eps };
                let (after, trip, sym) = map_checks(&phi, &z, s.t)?;
                record(format!("{lift}[{i}]"), z, after, trip, sym, Value::Null);
            }
        }
    }
    let gates = vec![Gate::at_most("symplecticity", worst_sym, 1e-8), Gate::at_most("round_trip", worst_trip, 1e-10)];
    Ok((gates, json!({ "maps": rows })))
}

fn momentum_map_gate(lift: LiftKind, k: &Constants, m: f64, elements: &[GalileiElement], states: &[ExtendedState]) -> SResult<f64> {
    let mut worst: f64 = 0.0;
    for g in elements {
        for s in states {
            worst = worst.max(group::momentum_map_residual(g, lift, k, m, s).map_err(runtime("momentum map"))?);
        }
    }
    Ok(worst)
}

fn run_cocycle(sc: &Scenario, rng: &mut ChaCha8Rng) -> SResult<Section> {
    let spec = sc.group.as_ref().expect("validated");
    let k = &sc.constants;
    let states = random_states(rng, &sc.samples)?;
    let mut rows = Vec::new();
    let mut spread: f64 = 0.0;
    let mut elements = Vec::new();
    for (g, h) in &spec.pairs {
        let values = states
            .iter()
            .map(|z| group::cocycle(g, h, spec.lift, k, spec.m, z))
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime("cocycle"))?;
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(*v), u.max(*v)));
        spread = spread.max(hi - lo);
        rows.push(json!({
            "g": element_json(g),
            "h": element_json(h),
            "bracket": element_json(&group::algebra_bracket(g, h, spec.lift, k)),
            "value": values[0],
            "spread": hi - lo,
        }));
        elements.extend([*g, *h]);
    }
    let mm = momentum_map_gate(spec.lift, k, spec.m, &elements, &states)?;
    let gates = vec![Gate::at_most("cocycle_spread", spread, 1e-8), Gate::at_most("momentum_map", mm, 1e-9)];
    Ok((gates, json!({ "lift": spec.lift.to_string(), "m": spec.m, "samples": states.len(), "pairs": rows })))
}

fn run_equivariance(sc: &Scenario, rng: &mut ChaCha8Rng) -> SResult<Section> {
    let spec = sc.group.as_ref().expect("validated");
    let k = &sc.constants;
    let states = random_states(rng, &sc.samples)?;
    let report = group::equivariance_verdict(spec.lift, k, spec.m, &states).map_err(runtime("equivariance"))?;
    let basis: Vec<_> = group::basis(spec.lift).into_iter().map(|(_, g)| g).collect();
    let mm = momentum_map_gate(spec.lift, k, spec.m, &basis, &states)?;
    let gates = vec![Gate::at_most("cocycle_spread", report.max_spread, 1e-8), Gate::at_most("momentum_map", mm, 1e-9)];
    let results = json!({
        "lift": report.kind,
        "m": spec.m,
        "samples": states.len(),
        "verdict": if report.equivariant { "EQUIVARIANT" } else { "NOT-EQUIVARIANT" },
        "max_abs_cocycle": report.max_abs_cocycle,
        "tolerance": report.tolerance,
        "witness": [report.witness.0, report.witness.1],
        "witness_value": report.witness_value,
        "max_spread": report.max_spread,
    });
    Ok((gates, results))
}

fn run_maxwell(sc: &Scenario, rng: &mut ChaCha8Rng) -> SResult<Section> {
    let k = &sc.constants;
    let states = random_states(rng, &sc.samples)?;
    let points: Vec<_> = states.iter().map(|s| (s.q, s.t)).collect();
    let (div_b, faraday) = em::maxwell_homogeneous_residual(&sc.potentials, &points, k).map_err(runtime("maxwell"))?;
    let vacuum = em::vacuum_residual(&sc.potentials, &points, k).map_err(runtime("vacuum"))?;
    let mut interior: f64 = 0.0;
    for s in &states {
        interior = interior.max(em::interior_product_residual(&sc.hamiltonian, &sc.potentials, s, k).map_err(runtime("interior product"))?);
    }
    let mut gates = vec![
        Gate::at_most("div_B", div_b, 1e-12),
        Gate::at_most("faraday", faraday, 1e-12),
        Gate::at_most("interior_product", interior, 1e-7),
    ];
    if let Some(tol) = sc.gates.vacuum {
        gates.push(Gate::at_most("vacuum_gauge", vacuum.gauge_residual, tol));
        gates.push(Gate::at_most("vacuum_wave", vacuum.wave_residual, tol));
    }
    let results = json!({
        "samples": points.len(),
        "div_B": div_b,
        "faraday": faraday,
        "gauge_residual": vacuum.gauge_residual,
        "wave_residual": vacuum.wave_residual,
        "interior_product_residual": interior,
    });
    Ok((gates, results))
}

/// Column names of `boost_table.csv`.
pub const BOOST_TABLE_HEADER: &str = "state,V1,V2,V3,q1,q2,q3,t,p1,p2,p3,E,invariant,invariant_change";

fn run_boost_table(sc: &Scenario, out_dir: &Path, artifacts: &mut Vec<PathBuf>) -> SResult<Section> {
    let spec = sc.boosts.as_ref().expect("validated");
    let k = &sc.constants;
    let alpha = k.alpha;
    let mut csv = String::from(BOOST_TABLE_HEADER);
    csv.push('\n');
    let mut worst_invariant: f64 = 0.0;
    let mut discrepancy = vec![0.0f64; spec.composition_steps.len()];
    for (i, s) in sc.initial.iter().enumerate() {
        for vel in &spec.velocities {
            let (q, t) = group::boost_finite(vel, alpha, &s.q, s.t, k).map_err(runtime("boost"))?;
            let (p, p0) = group::boost_momentum_finite(vel, alpha, &s.p, s.p0(k), k).map_err(runtime("boost"))?;
            let before = group::invariant_quadratic(&s.p, s.p0(k), alpha);
            let after = group::invariant_quadratic(&p, p0, alpha);
            let change = (after - before).abs() / before.abs().max(1.0);
            worst_invariant = worst_invariant.max(change);
            let row = [vel.x, vel.y, vel.z, q.x, q.y, q.z, t, p.x, p.y, p.z, -k.c * p0, after, change];
            let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            csv.push_str(&format!("{i},{}\n", cells.join(",")));
            let closed = Canonical8::from_column_slice(&[q.x, q.y, q.z, k.c * t, p.x, p.y, p.z, p0]);
            for (slot, &n) in spec.composition_steps.iter().enumerate() {
                let composed = group::boost_by_composition(vel, alpha, s, n, k).map_err(runtime("boost composition"))?;
                discrepancy[slot] = discrepancy[slot].max((composed - closed).amax());
            }
        }
    }
    let path = out_dir.join("boost_table.csv");
    write_file(&path, csv.as_bytes())?;
    artifacts.push(path);

    let mut gates = vec![Gate::at_most("invariant", worst_invariant, 1e-10)];
    let order = composition_order(&spec.composition_steps, &discrepancy);
    if let Some(order) = order {
        gates.push(Gate::at_least("composition_order", order, 1.9));
    }
    let table: Vec<Value> = spec.composition_steps.iter().zip(&discrepancy).map(|(n, d)| json!({ "steps": n, "discrepancy": d })).collect();
    let results = json!({
        "alpha": alpha,
        "rows": sc.initial.len() * spec.velocities.len(),
        "max_invariant_change": worst_invariant,
        "composition": table,
        "composition_order": order,
    });
    Ok((gates, results))
}

/// Least-squares slope of `−log d` against `log K`, over the entries that
/// stay above round-off.
pub fn composition_order(steps: &[usize], discrepancy: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(discrepancy)
        .filter(|(_, d)| **d > 1e-13)
        .map(|(n, d)| ((*n as f64).ln(), -d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Output directory: `--out` wins over the scenario's `output` key, which
/// wins over `xphase-out`.
pub fn resolve_out_dir(sc: &Scenario, cli_out: Option<&Path>) -> PathBuf {
    cli_out.map(Path::to_path_buf).or_else(|| sc.output.clone()).unwrap_or_else(|| PathBuf::from("xphase-out"))
}
