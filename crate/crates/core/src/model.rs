//! Problem definitions: vector-field families, switching chains, spatial
//! domains, initial densities, and the assembled [`ModelSpec`].
//!
//! The built-in families cover one-parameter bifurcation examples
//! (transcritical, fold via the inducible-operon field, pitchfork, Hopf in
//! polar coordinates) plus a plain polynomial field for custom problems.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use thiserror::Error;

use crate::matexp::SmallMat;
use crate::quad::adaptive_gk;

pub const MAX_POLY_DEGREE: usize = 6;

/// Tolerance on the initial-density normalization check.
pub const DENSITY_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("point {x} lies outside the domain")]
    OutOfDomain { x: f64 },
    #[error("initial density has non-positive mass on the domain")]
    NotNormalizable,
}

/// One state's drift field. Scalar families drive an interval coordinate;
/// `HopfPolar` drives (theta, r) with `eval`/`derivative` acting on the
/// radial component and the angular rate exposed separately.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorField {
    /// b(x) = (beta - c x) x - mu x
    Transcritical { beta: f64, c: f64, mu: f64 },
    /// b(x) = x^n / (1 + x^n) - gamma x
    Goodwin { gamma: f64, n: u32 },
    /// b(x) = alpha x - x^3
    Pitchfork { alpha: f64 },
    /// theta' = omega + b r^2, r' = mu r - r^3 (the analysis requires b = 0)
    HopfPolar { omega: f64, mu: f64, b: f64 },
    /// b(x) = sum_k coeffs[k] x^k, degree at most 6
    Polynomial { coeffs: Vec<f64> },
}

impl VectorField {
    /// Drift value; the radial component for `HopfPolar`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            VectorField::Transcritical { beta, c, mu } => (beta - c * x) * x - mu * x,
            VectorField::Goodwin { gamma, n } => {
                let xn = x.powi(*n as i32);
                xn / (1.0 + xn) - gamma * x
            }
            VectorField::Pitchfork { alpha } => alpha * x - x * x * x,
            VectorField::HopfPolar { mu, .. } => mu * x - x * x * x,
            VectorField::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
        }
    }

    /// Spatial derivative of the drift; radial derivative for `HopfPolar`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            VectorField::Transcritical { beta, c, mu } => beta - mu - 2.0 * c * x,
            VectorField::Goodwin { gamma, n } => {
                let nf = *n as f64;
                let xn = x.powi(*n as i32);
                let xm = x.powi(*n as i32 - 1);
                nf * xm / ((1.0 + xn) * (1.0 + xn)) - gamma
            }
            VectorField::Pitchfork { alpha } => alpha - 3.0 * x * x,
            VectorField::HopfPolar { mu, .. } => mu - 3.0 * x * x,
            VectorField::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c),
        }
    }

    /// Constant angular rate for polar fields.
    pub fn angular_rate(&self) -> Option<f64> {
        match self {
            VectorField::HopfPolar { omega, .. } => Some(*omega),
            _ => None,
        }
    }

    pub fn is_polar(&self) -> bool {
        matches!(self, VectorField::HopfPolar { .. })
    }

    /// Largest strictly positive stationary point, in closed form where the
    /// family has one and numerically for the Goodwin field.
    pub fn positive_stationary_point(&self) -> Option<f64> {
        match self {
            VectorField::Transcritical { beta, c, mu } => {
                let a = (beta - mu) / c;
                (a > 0.0).then_some(a)
            }
            VectorField::Pitchfork { alpha } | VectorField::HopfPolar { mu: alpha, .. } => {
                (*alpha > 0.0).then(|| alpha.sqrt())
            }
            VectorField::Goodwin { gamma, n } => goodwin_largest_root(*gamma, *n),
            VectorField::Polynomial { .. } => None,
        }
    }

    fn validate_into(&self, state: usize, diags: &mut Vec<Diagnostic>) {
        match self {
            VectorField::Transcritical { c, mu, .. } => {
                if *c <= 0.0 || *mu <= 0.0 {
                    diags.push(Diagnostic::FieldConstraint {
                        state,
                        what: "transcritical family requires c > 0 and mu > 0".into(),
                    });
                }
            }
            VectorField::Goodwin { gamma, n } => {
                if *gamma <= 0.0 {
                    diags.push(Diagnostic::FieldConstraint {
                        state,
                        what: "goodwin family requires gamma > 0".into(),
                    });
                }
                if *n <= 1 {
                    diags.push(Diagnostic::FieldConstraint {
                        state,
                        what: "goodwin exponent n must exceed 1".into(),
                    });
                }
            }
            VectorField::Pitchfork { .. } => {}
            VectorField::HopfPolar { b, .. } => {
                if *b != 0.0 {
                    diags.push(Diagnostic::HopfBNonzero { state, b: *b });
                }
            }
            VectorField::Polynomial { coeffs } => {
                if coeffs.len() > MAX_POLY_DEGREE + 1 {
                    diags.push(Diagnostic::FieldConstraint {
                        state,
                        what: format!(
                            "polynomial degree capped at {MAX_POLY_DEGREE}, got {}",
                            coeffs.len() - 1
                        ),
                    });
                }
            }
        }
    }
}

/// Largest positive root of x^n/(1+x^n) = gamma x, if any.
fn goodwin_largest_root(gamma: f64, n: u32) -> Option<f64> {
    // Roots satisfy h(x) = x^(n-1) - gamma (1 + x^n) = 0. Scan from the
    // upper bound 1/gamma (beyond it h < 0) down to 0 for the first
    // bracketing interval, then bisect.
    let h = |x: f64| x.powi(n as i32 - 1) - gamma * (1.0 + x.powi(n as i32));
    let hi = 1.0 / gamma;
    let steps = 4096;
    let mut prev = hi;
    let mut prev_h = h(hi);
    for k in 1..=steps {
        let x = hi * (1.0 - k as f64 / steps as f64);
        let hx = h(x);
        if prev_h <= 0.0 && hx > 0.0 {
            // Bisect [x, prev] for the sign change.
            let (mut lo, mut up) = (x, prev);
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                if h(mid) > 0.0 {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            return Some(0.5 * (lo + up));
        }
        prev = x;
        prev_h = hx;
    }
    None
}

/// Continuous-time Markov chain on a finite state set, stored as the
/// intensity matrix [q_ij] with zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingChain {
    q: Vec<Vec<f64>>,
}

impl SwitchingChain {
    /// Two-state chain with exit rates q0 (state 0 -> 1) and q1 (1 -> 0).
    pub fn two_state(q0: f64, q1: f64) -> Result<Self, ModelError> {
        if !(q0 > 0.0 && q1 > 0.0) {
            return Err(ModelError::ConstraintViolation(
                "two-state chain requires q0 > 0 and q1 > 0".into(),
            ));
        }
        Ok(Self { q: vec![vec![-q0, q0], vec![q1, -q1]] })
    }

    /// Builds a chain from a full intensity matrix, diagnosing violations.
    pub fn from_matrix(q: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let chain = Self { q };
        let mut diags = Vec::new();
        chain.validate_into(&mut diags);
        if let Some(d) = diags.first() {
            return Err(ModelError::ConstraintViolation(d.to_string()));
        }
        Ok(chain)
    }

    /// Unchecked construction for callers that validate separately.
    pub fn from_matrix_unchecked(q: Vec<Vec<f64>>) -> Self {
        Self { q }
    }

    pub fn n_states(&self) -> usize {
        self.q.len()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.q[from][to]
    }

    /// Total exit rate q_i out of state i.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.q[i]
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| v)
            .sum()
    }

    /// Intensity matrix Q as a dense matrix.
    pub fn generator(&self) -> SmallMat {
        SmallMat::from_rows(&self.q)
    }

    /// Q transposed, the coupling operator acting on state-indexed vectors.
    pub fn generator_transpose(&self) -> SmallMat {
        self.generator().transpose()
    }

    pub fn validate_into(&self, diags: &mut Vec<Diagnostic>) {
        let k = self.q.len();
        if k == 0 || self.q.iter().any(|row| row.len() != k) {
            diags.push(Diagnostic::ChainShape);
            return;
        }
        let scale = self
            .q
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1.0);
        for (i, row) in self.q.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j && v < 0.0 {
                    diags.push(Diagnostic::NegativeIntensity { from: i, to: j, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 * scale {
                diags.push(Diagnostic::RowSumNonzero { state: i, sum });
            }
            if self.exit_rate(i) <= 0.0 {
                diags.push(Diagnostic::AbsorbingState { state: i });
            }
        }
    }
}

/// Spatial domain of the transported densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// Open interval (x_lo, x_hi) with 0 <= x_lo < x_hi.
    Interval { x_lo: f64, x_hi: f64 },
    /// S^1 x (r_lo, r_hi): the angular coordinate lives on [0, 2 pi).
    PolarAnnulus { r_lo: f64, r_hi: f64 },
}

impl Domain {
    pub fn is_polar(&self) -> bool {
        matches!(self, Domain::PolarAnnulus { .. })
    }

    /// Bounds of the non-periodic coordinate (x, or r for polar domains).
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Interval { x_lo, x_hi } => (x_lo, x_hi),
            Domain::PolarAnnulus { r_lo, r_hi } => (r_lo, r_hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.bounds();
        x > lo && x < hi
    }

    fn validate_into(&self, diags: &mut Vec<Diagnostic>) {
        let (lo, hi) = self.bounds();
        if !(lo >= 0.0 && lo < hi) {
            diags.push(Diagnostic::DomainDegenerate { lo, hi });
        }
    }
}

/// Shape of an initial density before normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// Piecewise-linear through (xs, values); zero outside the sample range.
    GridSamples { xs: Vec<f64>, values: Vec<f64> },
    /// Compactly supported C-infinity bump exp(-1/(1-u^2)), u = (x-center)/width.
    SmoothBump { center: f64, width: f64 },
    /// Gaussian profile restricted to the domain.
    TruncatedGaussian { center: f64, sigma: f64 },
    /// g(theta, r) = g1(theta) g2(r); only meaningful on polar domains.
    ProductOfMarginals { angular: Box<InitialDensity>, radial: Box<InitialDensity> },
}

/// Normalized initial density over a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    kind: DensityKind,
    norm: f64,
}

impl InitialDensity {
    /// Normalizes a scalar density kind over the given 1D range.
    pub fn new(kind: DensityKind, lo: f64, hi: f64) -> Result<Self, ModelError> {
        if matches!(kind, DensityKind::ProductOfMarginals { .. }) {
            return Err(ModelError::ConstraintViolation(
                "product densities are built with InitialDensity::product".into(),
            ));
        }
        if let DensityKind::GridSamples { xs, values } = &kind {
            if xs.len() != values.len() || xs.len() < 2 {
                return Err(ModelError::ConstraintViolation(
                    "grid samples need at least two matching (x, value) pairs".into(),
                ));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModelError::ConstraintViolation(
                    "grid sample abscissae must be strictly increasing".into(),
                ));
            }
            if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(ModelError::ConstraintViolation(
                    "grid sample values must be finite and nonnegative".into(),
                ));
            }
        }
        let mut d = Self { kind, norm: 1.0 };
        let mass = d.integral(lo, hi)?;
        if !(mass > 0.0) {
            return Err(ModelError::NotNormalizable);
        }
        d.norm = 1.0 / mass;
        Ok(d)
    }

    /// Product density g1(theta) g2(r) for a polar annulus.
    pub fn product(angular: InitialDensity, radial: InitialDensity) -> Self {
        Self {
            kind: DensityKind::ProductOfMarginals {
                angular: Box::new(angular),
                radial: Box::new(radial),
            },
            norm: 1.0,
        }
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    fn raw(&self, x: f64) -> f64 {
        match &self.kind {
            DensityKind::GridSamples { xs, values } => {
                if x < xs[0] || x > *xs.last().unwrap() {
                    return 0.0;
                }
                let idx = match xs.binary_search_by(|p| p.total_cmp(&x)) {
                    Ok(i) => return values[i],
                    Err(i) => i,
                };
                let (x0, x1) = (xs[idx - 1], xs[idx]);
                let w = (x - x0) / (x1 - x0);
                values[idx - 1] * (1.0 - w) + values[idx] * w
            }
            DensityKind::SmoothBump { center, width } => {
                let u = (x - center) / width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - u * u)).exp()
                }
            }
            DensityKind::TruncatedGaussian { center, sigma } => {
                let z = (x - center) / sigma;
                (-0.5 * z * z).exp()
            }
            DensityKind::ProductOfMarginals { .. } => {
                unreachable!("scalar eval on a product density")
            }
        }
    }

    /// Normalized density at a scalar point.
    pub fn eval(&self, x: f64) -> f64 {
        self.norm * self.raw(x)
    }

    /// Normalized density at a polar point.
    pub fn eval_polar(&self, theta: f64, r: f64) -> f64 {
        match &self.kind {
            DensityKind::ProductOfMarginals { angular, radial } => {
                angular.eval(theta.rem_euclid(TAU)) * radial.eval(r)
            }
            _ => self.eval(r),
        }
    }

    /// Integral of the (normalized) density over [lo, hi].
    pub fn integral(&self, lo: f64, hi: f64) -> Result<f64, ModelError> {
        match &self.kind {
            DensityKind::GridSamples { xs, values } => {
                // Exact integral of the piecewise-linear interpolant.
                let mut total = 0.0;
                for w in xs.windows(2).zip(values.windows(2)) {
                    let (seg, val) = w;
                    let (a, b) = (seg[0].max(lo), seg[1].min(hi));
                    if a >= b {
                        continue;
                    }
                    let interp = |x: f64| {
                        let t = (x - seg[0]) / (seg[1] - seg[0]);
                        val[0] * (1.0 - t) + val[1] * t
                    };
                    total += 0.5 * (interp(a) + interp(b)) * (b - a);
                }
                Ok(self.norm * total)
            }
            DensityKind::SmoothBump { center, width } => {
                let a = lo.max(center - width);
                let b = hi.min(center + width);
                if a >= b {
                    return Ok(0.0);
                }
                adaptive_gk(&|x| self.eval(x), a, b, 1e-13, 1e-300, 512)
                    .map_err(|_| ModelError::NotNormalizable)
            }
            DensityKind::TruncatedGaussian { center, sigma } => {
                let a = lo.max(center - 12.0 * sigma);
                let b = hi.min(center + 12.0 * sigma);
                if a >= b {
                    return Ok(0.0);
                }
                adaptive_gk(&|x| self.eval(x), a, b, 1e-13, 1e-300, 512)
                    .map_err(|_| ModelError::NotNormalizable)
            }
            DensityKind::ProductOfMarginals { .. } => Err(ModelError::ConstraintViolation(
                "scalar integral of a product density".into(),
            )),
        }
    }
}

/// A complete problem: one field per chain state, the switching chain, the
/// domain, the initial density, and the initial chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub fields: Vec<VectorField>,
    pub chain: SwitchingChain,
    pub domain: Domain,
    pub g: InitialDensity,
    pub initial_state: usize,
}

impl ModelSpec {
    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn field(&self, state: usize) -> &VectorField {
        &self.fields[state]
    }

    pub fn is_polar(&self) -> bool {
        self.domain.is_polar()
    }

    /// Drift of state `i` at `x`, rejecting points outside the domain.
    pub fn eval_field(&self, state: usize, x: f64) -> Result<f64, ModelError> {
        if !self.domain.contains(x) {
            return Err(ModelError::OutOfDomain { x });
        }
        Ok(self.fields[state].eval(x))
    }

    /// Drift derivative of state `i` at `x`, rejecting outside points.
    pub fn eval_field_derivative(&self, state: usize, x: f64) -> Result<f64, ModelError> {
        if !self.domain.contains(x) {
            return Err(ModelError::OutOfDomain { x });
        }
        Ok(self.fields[state].derivative(x))
    }

    /// Largest positive stationary point over all fields, used for the
    /// default domain truncation and the stationary-support endpoint.
    pub fn largest_stationary_point(&self) -> Option<f64> {
        self.fields
            .iter()
            .filter_map(|f| f.positive_stationary_point())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

/// Named model-validation findings; an empty list means the spec is valid.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    ChainShape,
    RowSumNonzero { state: usize, sum: f64 },
    NegativeIntensity { from: usize, to: usize, value: f64 },
    AbsorbingState { state: usize },
    FieldCountMismatch { fields: usize, states: usize },
    InitialStateOutOfRange { state: usize, states: usize },
    DomainDegenerate { lo: f64, hi: f64 },
    DomainKindMismatch { state: usize },
    HopfBNonzero { state: usize, b: f64 },
    FieldConstraint { state: usize, what: String },
    DensityNotNormalized { mass: f64 },
    DensityKindMismatch,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ChainShape => write!(f, "intensity matrix is not square"),
            Diagnostic::RowSumNonzero { state, sum } => {
                write!(f, "RowSumNonzero: row {state} sums to {sum:.3e}")
            }
            Diagnostic::NegativeIntensity { from, to, value } => {
                write!(f, "negative intensity q[{from}][{to}] = {value}")
            }
            Diagnostic::AbsorbingState { state } => {
                write!(f, "state {state} has zero exit rate")
            }
            Diagnostic::FieldCountMismatch { fields, states } => {
                write!(f, "{fields} fields for {states} chain states")
            }
            Diagnostic::InitialStateOutOfRange { state, states } => {
                write!(f, "initial state {state} not in 0..{states}")
            }
            Diagnostic::DomainDegenerate { lo, hi } => {
                write!(f, "domain ({lo}, {hi}) has no width")
            }
            Diagnostic::DomainKindMismatch { state } => {
                write!(f, "field {state} does not match the domain kind")
            }
            Diagnostic::HopfBNonzero { state, b } => {
                write!(f, "HopfBNonzero: state {state} has b = {b}, analysis requires b = 0")
            }
            Diagnostic::FieldConstraint { state, what } => {
                write!(f, "field {state}: {what}")
            }
            Diagnostic::DensityNotNormalized { mass } => {
                write!(f, "initial density integrates to {mass} over the domain")
            }
            Diagnostic::DensityKindMismatch => {
                write!(f, "polar domains need a product-of-marginals density")
            }
        }
    }
}

/// Checks every structural invariant of a spec; each violation is named.
pub fn validate(spec: &ModelSpec) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    spec.chain.validate_into(&mut diags);
    spec.domain.validate_into(&mut diags);
    let states = spec.chain.n_states();
    if spec.fields.len() != states {
        diags.push(Diagnostic::FieldCountMismatch { fields: spec.fields.len(), states });
    }
    if spec.initial_state >= states {
        diags.push(Diagnostic::InitialStateOutOfRange { state: spec.initial_state, states });
    }
    for (i, field) in spec.fields.iter().enumerate() {
        field.validate_into(i, &mut diags);
        if field.is_polar() != spec.domain.is_polar() {
            diags.push(Diagnostic::DomainKindMismatch { state: i });
        }
    }
    let polar_density =
        matches!(spec.g.kind(), DensityKind::ProductOfMarginals { .. });
    if spec.domain.is_polar() != polar_density {
        diags.push(Diagnostic::DensityKindMismatch);
    }
    match spec.g.kind() {
        DensityKind::ProductOfMarginals { angular, radial } => {
            let (r_lo, r_hi) = spec.domain.bounds();
            let ok_ang = angular.integral(0.0, TAU);
            let ok_rad = radial.integral(r_lo, r_hi);
            match (ok_ang, ok_rad) {
                (Ok(ma), Ok(mr)) => {
                    let mass = ma * mr;
                    if (mass - 1.0).abs() > DENSITY_NORM_TOL {
                        diags.push(Diagnostic::DensityNotNormalized { mass });
                    }
                }
                _ => diags.push(Diagnostic::DensityKindMismatch),
            }
        }
        _ => {
            let (lo, hi) = spec.domain.bounds();
            match spec.g.integral(lo, hi) {
                Ok(mass) if (mass - 1.0).abs() <= DENSITY_NORM_TOL => {}
                Ok(mass) => diags.push(Diagnostic::DensityNotNormalized { mass }),
                Err(_) => diags.push(Diagnostic::DensityKindMismatch),
            }
        }
    }
    diags
}

/// Built-in two-state example families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    Transcritical,
    Goodwin,
    Pitchfork,
    HopfPolar,
}

impl BuiltinModel {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "transcritical" => Some(Self::Transcritical),
            "goodwin" => Some(Self::Goodwin),
            "pitchfork" => Some(Self::Pitchfork),
            "hopf" | "hopf-polar" | "hopfpolar" => Some(Self::HopfPolar),
            _ => None,
        }
    }
}

fn take(params: &BTreeMap<String, f64>, key: &str) -> Result<f64, ModelError> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| ModelError::MissingParam(key.into()))
}

fn take_or(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Builds a validated two-state spec for a named family.
///
/// Required keys: `q0`, `q1` plus the family parameters (`beta0`, `beta1`,
/// `c`, `mu` | `gamma0`, `gamma1`, `n` | `alpha0`, `alpha1` | `omega0`,
/// `omega1`, `mu0`, `mu1`). Optional keys: `x_lo`, `x_hi` (domain
/// truncation; `x_hi` defaults to 1.5 times the largest stationary point),
/// `g_center`, `g_sigma` (truncated-Gaussian initial density), `l`
/// (initial chain state, default 0), and `b` for the Hopf family.
pub fn build_builtin(
    name: BuiltinModel,
    params: &BTreeMap<String, f64>,
) -> Result<ModelSpec, ModelError> {
    let q0 = take(params, "q0")?;
    let q1 = take(params, "q1")?;
    let chain = SwitchingChain::two_state(q0, q1)?;

    let fields = match name {
        BuiltinModel::Transcritical => {
            let c = take(params, "c")?;
            let mu = take(params, "mu")?;
            vec![
                VectorField::Transcritical { beta: take(params, "beta0")?, c, mu },
                VectorField::Transcritical { beta: take(params, "beta1")?, c, mu },
            ]
        }
        BuiltinModel::Goodwin => {
            let n = take_or(params, "n", 2.0);
            if n.fract() != 0.0 || n < 2.0 {
                return Err(ModelError::ConstraintViolation(
                    "goodwin exponent n must be an integer greater than 1".into(),
                ));
            }
            vec![
                VectorField::Goodwin { gamma: take(params, "gamma0")?, n: n as u32 },
                VectorField::Goodwin { gamma: take(params, "gamma1")?, n: n as u32 },
            ]
        }
        BuiltinModel::Pitchfork => vec![
            VectorField::Pitchfork { alpha: take(params, "alpha0")? },
            VectorField::Pitchfork { alpha: take(params, "alpha1")? },
        ],
        BuiltinModel::HopfPolar => {
            let b = take_or(params, "b", 0.0);
            vec![
                VectorField::HopfPolar { omega: take(params, "omega0")?, mu: take(params, "mu0")?, b },
                VectorField::HopfPolar { omega: take(params, "omega1")?, mu: take(params, "mu1")?, b },
            ]
        }
    };

    let largest = fields
        .iter()
        .filter_map(|f| f.positive_stationary_point())
        .fold(f64::NAN, f64::max);
    let default_hi = if largest.is_nan() { 1.0 } else { 1.5 * largest };
    let x_lo = take_or(params, "x_lo", 1e-4);
    let x_hi = take_or(params, "x_hi", default_hi);
    let domain = if name == BuiltinModel::HopfPolar {
        Domain::PolarAnnulus { r_lo: x_lo, r_hi: x_hi }
    } else {
        Domain::Interval { x_lo, x_hi }
    };

    let g_center = take_or(params, "g_center", x_lo + 0.3 * (x_hi - x_lo));
    let g_sigma = take_or(params, "g_sigma", 0.1 * (x_hi - x_lo));
    let g = if name == BuiltinModel::HopfPolar {
        let angular = InitialDensity::new(
            DensityKind::TruncatedGaussian {
                center: take_or(params, "g_theta_center", std::f64::consts::PI),
                sigma: take_or(params, "g_theta_sigma", 0.8),
            },
            0.0,
            TAU,
        )?;
        let radial = InitialDensity::new(
            DensityKind::TruncatedGaussian { center: g_center, sigma: g_sigma },
            x_lo,
            x_hi,
        )?;
        InitialDensity::product(angular, radial)
    } else {
        InitialDensity::new(
            DensityKind::TruncatedGaussian { center: g_center, sigma: g_sigma },
            x_lo,
            x_hi,
        )?
    };

    let l = take_or(params, "l", 0.0);
    if l.fract() != 0.0 || l < 0.0 || l as usize >= chain.n_states() {
        return Err(ModelError::ConstraintViolation(
            "initial state l must be a valid state index".into(),
        ));
    }

    let spec = ModelSpec { fields, chain, domain, g, initial_state: l as usize };
    let diags = validate(&spec);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(ModelError::ConstraintViolation(msgs.join("; ")));
    }
    Ok(spec)
}
