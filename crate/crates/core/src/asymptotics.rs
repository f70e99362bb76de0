//! Large-time behaviour of the mean: the growth indicator lambda, stationary
//! density pairs by quadrature and in closed form, the normalization
//! constant kappa, the limiting mean profile, and the stability-or-sweeping
//! classification for the built-in families.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use thiserror::Error;

use crate::chain::stationary_weights;
use crate::fpe::{FieldState, Grid1D, Grid2D};
use crate::model::{ModelSpec, VectorField};
use crate::quad::{adaptive_gk, graded_two_sided, CumulativeIntegral, GradedOutcome, QuadError};

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("analysis requires a two-state chain")]
    NotTwoState,
    #[error("drift derivative at 0 vanishes for state {state}")]
    DegenerateDerivative { state: usize },
    #[error("drift of state {state} vanishes inside (0, a) near x = {x}")]
    SingularInterior { state: usize, x: f64 },
    #[error("no positive stationary support endpoint for this model")]
    NoSupportEndpoint,
    #[error("lambda is negative ({lambda}); the large-time mean is zero")]
    NegativeLambda { lambda: f64 },
    #[error("drift must vanish at 0 for the growth-rate analysis")]
    DriftNotVanishing,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Exact rational drift derivative at the origin, where the family admits
/// one (all built-in families do; polynomials need a vanishing constant
/// term).
fn derivative_at_zero_exact(field: &VectorField) -> Result<BigRational, AsymptoticsError> {
    let rat = |v: f64| BigRational::from_float(v).expect("finite parameter");
    match field {
        VectorField::Transcritical { beta, mu, .. } => Ok(rat(*beta) - rat(*mu)),
        VectorField::Goodwin { gamma, .. } => Ok(-rat(*gamma)),
        VectorField::Pitchfork { alpha } => Ok(rat(*alpha)),
        VectorField::HopfPolar { mu, .. } => Ok(rat(*mu)),
        VectorField::Polynomial { coeffs } => {
            if coeffs.first().copied().unwrap_or(0.0) != 0.0 {
                return Err(AsymptoticsError::DriftNotVanishing);
            }
            Ok(rat(coeffs.get(1).copied().unwrap_or(0.0)))
        }
    }
}

/// Mean small-population growth rate p0 b0'(0) + p1 b1'(0) in exact
/// rational arithmetic (every finite double is a rational).
pub fn lambda_exact(spec: &ModelSpec) -> Result<BigRational, AsymptoticsError> {
    if spec.n_states() != 2 {
        return Err(AsymptoticsError::NotTwoState);
    }
    let d0 = derivative_at_zero_exact(spec.field(0))?;
    let d1 = derivative_at_zero_exact(spec.field(1))?;
    if d0.is_zero() {
        return Err(AsymptoticsError::DegenerateDerivative { state: 0 });
    }
    if d1.is_zero() {
        return Err(AsymptoticsError::DegenerateDerivative { state: 1 });
    }
    let rat = |v: f64| BigRational::from_float(v).expect("finite rate");
    let q0 = rat(spec.chain.rate(0, 1));
    let q1 = rat(spec.chain.rate(1, 0));
    let total = &q0 + &q1;
    let p0 = q1 / total.clone();
    let p1 = q0 / total;
    Ok(p0 * d0 + p1 * d1)
}

/// lambda as a double; see [`lambda_exact`].
pub fn lambda(spec: &ModelSpec) -> Result<f64, AsymptoticsError> {
    let exact = lambda_exact(spec)?;
    Ok(exact.to_f64().expect("rational fits a double"))
}

/// lambda via the floating-point formula, used as a cross-check.
pub fn lambda_float(spec: &ModelSpec) -> Result<f64, AsymptoticsError> {
    if spec.n_states() != 2 {
        return Err(AsymptoticsError::NotTwoState);
    }
    let (p0, p1) = stationary_weights(&spec.chain).map_err(|_| AsymptoticsError::NotTwoState)?;
    Ok(p0 * spec.field(0).derivative(0.0) + p1 * spec.field(1).derivative(0.0))
}

/// The pair of stationary profiles f_i = exp(-R)/|b_i| on (0, a), up to one
/// common multiplicative constant, built by adaptive quadrature of
/// r(s) = q0/b0(s) + q1/b1(s) from the reference point x0.
pub struct StationaryPair {
    pub a: f64,
    pub x0: f64,
    pub grid: Grid1D,
    /// Samples on the grid cells whose centers fall inside (0, a).
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    q0: f64,
    q1: f64,
    b0: VectorField,
    b1: VectorField,
    cum: CumulativeIntegral<Box<dyn Fn(f64) -> f64>>,
}

impl StationaryPair {
    /// Unnormalized (f0, f1) at an arbitrary point of (0, a).
    pub fn eval(&mut self, x: f64) -> Result<(f64, f64), AsymptoticsError> {
        if x <= 0.0 || x >= self.a {
            return Ok((0.0, 0.0));
        }
        let big_r = self.cum.eval(x)?;
        let e = (-big_r).exp();
        Ok((e / self.b0.eval(x).abs(), e / self.b1.eval(x).abs()))
    }

    pub fn rate_integrand(&self, s: f64) -> f64 {
        self.q0 / self.b0.eval(s) + self.q1 / self.b1.eval(s)
    }
}

/// Builds the quadrature-backed stationary pair for a two-state model.
///
/// The drifts must not vanish strictly inside (0, a); vanishing at the
/// endpoints themselves is expected.
pub fn stationary_pair(
    spec: &ModelSpec,
    x0: f64,
    a: f64,
    grid: &Grid1D,
) -> Result<StationaryPair, AsymptoticsError> {
    if spec.n_states() != 2 {
        return Err(AsymptoticsError::NotTwoState);
    }
    debug_assert!(x0 > 0.0 && x0 < a);
    let b0 = spec.field(0).clone();
    let b1 = spec.field(1).clone();
    // Scan for interior sign changes (stationary points of either drift
    // strictly inside the support would make r non-integrable there).
    let samples = 2048;
    let margin = 1e-6 * a;
    for (state, b) in [(0usize, &b0), (1usize, &b1)] {
        let mut sign = 0.0_f64;
        for k in 0..=samples {
            let x = margin + (a - 2.0 * margin) * k as f64 / samples as f64;
            let v = b.eval(x);
            if v == 0.0 {
                return Err(AsymptoticsError::SingularInterior { state, x });
            }
            if sign == 0.0 {
                sign = v.signum();
            } else if v.signum() != sign {
                return Err(AsymptoticsError::SingularInterior { state, x });
            }
        }
    }

    let q0 = spec.chain.rate(0, 1);
    let q1 = spec.chain.rate(1, 0);
    let rb0 = b0.clone();
    let rb1 = b1.clone();
    let r: Box<dyn Fn(f64) -> f64> =
        Box::new(move |s: f64| q0 / rb0.eval(s) + q1 / rb1.eval(s));
    let mut pair = StationaryPair {
        a,
        x0,
        grid: grid.clone(),
        f0: vec![0.0; grid.n_cells],
        f1: vec![0.0; grid.n_cells],
        q0,
        q1,
        b0,
        b1,
        cum: CumulativeIntegral::new(r, x0),
    };
    for j in 0..grid.n_cells {
        let x = grid.center(j);
        let (f0, f1) = pair.eval(x)?;
        pair.f0[j] = f0;
        pair.f1[j] = f1;
    }
    Ok(pair)
}

/// Finiteness classification of the normalization integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

/// Density samples on a 1D grid (zero outside the stated support).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDensity {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub support_end: f64,
}

/// kappa = integral of (f0 + f1) over (0, a) by endpoint-graded quadrature,
/// and the normalized large-time mean profile when kappa is finite.
pub fn kappa_and_vstar(
    pair: &mut StationaryPair,
) -> Result<(Kappa, Option<SampledDensity>), AsymptoticsError> {
    let a = pair.a;
    // The graded rule wants a plain callable; failures inside R become NaN
    // and surface as divergence, which is the conservative verdict.
    let f_sum = std::cell::RefCell::new(pair);
    let integrand = |x: f64| -> f64 {
        let mut p = f_sum.borrow_mut();
        match p.eval(x) {
            Ok((f0, f1)) => f0 + f1,
            Err(_) => f64::NAN,
        }
    };
    match graded_two_sided(&integrand, 0.0, a) {
        GradedOutcome::Divergent => Ok((Kappa::Infinite, None)),
        GradedOutcome::Finite(kappa) => {
            let pair = f_sum.into_inner();
            let values: Vec<f64> = pair
                .f0
                .iter()
                .zip(&pair.f1)
                .map(|(a, b)| (a + b) / kappa)
                .collect();
            let density =
                SampledDensity { grid: pair.grid.clone(), values, support_end: pair.a };
            Ok((Kappa::Finite(kappa), Some(density)))
        }
    }
}

/// Closed-form stationary pairs for the transcritical and pitchfork
/// families (up to one common multiplicative constant).
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedFormPair {
    Transcritical { q0: f64, q1: f64, c: f64, a0: f64, a1: f64 },
    Pitchfork { q0: f64, q1: f64, alpha0: f64, alpha1: f64 },
}

impl ClosedFormPair {
    /// Available when both drifts are the same closed-form family in the
    /// bistable-direction setup (state 0 decaying at the origin, state 1
    /// growing, so a0 < 0 < a1 resp. alpha0 < 0 < alpha1).
    pub fn from_spec(spec: &ModelSpec) -> Option<Self> {
        if spec.n_states() != 2 {
            return None;
        }
        let q0 = spec.chain.rate(0, 1);
        let q1 = spec.chain.rate(1, 0);
        match (spec.field(0), spec.field(1)) {
            (
                VectorField::Transcritical { beta: b0, c: c0, mu: m0 },
                VectorField::Transcritical { beta: b1, c: c1, mu: m1 },
            ) if c0 == c1 && m0 == m1 => {
                let a0 = (b0 - m0) / c0;
                let a1 = (b1 - m1) / c1;
                (a0 < 0.0 && a1 > 0.0)
                    .then_some(ClosedFormPair::Transcritical { q0, q1, c: *c0, a0, a1 })
            }
            (VectorField::Pitchfork { alpha: alpha0 }, VectorField::Pitchfork { alpha: alpha1 }) => {
                (*alpha0 < 0.0 && *alpha1 > 0.0).then_some(ClosedFormPair::Pitchfork {
                    q0,
                    q1,
                    alpha0: *alpha0,
                    alpha1: *alpha1,
                })
            }
            // The Hopf radial factor is the pitchfork profile.
            (
                VectorField::HopfPolar { mu: mu0, .. },
                VectorField::HopfPolar { mu: mu1, .. },
            ) => (*mu0 < 0.0 && *mu1 > 0.0).then_some(ClosedFormPair::Pitchfork {
                q0,
                q1,
                alpha0: *mu0,
                alpha1: *mu1,
            }),
            _ => None,
        }
    }

    pub fn support_end(&self) -> f64 {
        match self {
            ClosedFormPair::Transcritical { a1, .. } => *a1,
            ClosedFormPair::Pitchfork { alpha1, .. } => alpha1.sqrt(),
        }
    }

    /// (f0, f1) at x, up to one common multiplicative constant.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        if x <= 0.0 || x >= self.support_end() {
            return (0.0, 0.0);
        }
        match *self {
            ClosedFormPair::Transcritical { q0, q1, c, a0, a1 } => {
                let e0 = q0 / (c * a0);
                let e1 = q1 / (c * a1);
                let common = x.powf(-(e0 + e1)) * (x - a0).powf(e0) * (a1 - x).powf(e1);
                (
                    common / (x * (x - a0).abs()),
                    common / (x * (a1 - x).abs()),
                )
            }
            ClosedFormPair::Pitchfork { q0, q1, alpha0, alpha1 } => {
                let x2 = x * x;
                let common = x.powf(-q0 / alpha0 - q1 / alpha1)
                    * (x2 - alpha0).powf(q0 / (2.0 * alpha0))
                    * (alpha1 - x2).powf(q1 / (2.0 * alpha1));
                (
                    common / (x * (alpha0 - x2).abs()),
                    common / (x * (alpha1 - x2).abs()),
                )
            }
        }
    }
}

/// Condition n^n gamma^n > (n-1)^(n-1) under which 0 is the only stationary
/// point of the saturating-production drift (strict inequality).
pub fn fold_condition(gamma: f64, n: u32) -> bool {
    let nf = n as f64;
    nf.powi(n as i32) * gamma.powi(n as i32) > (nf - 1.0).powi(n as i32 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    AsymptoticallyStable,
    Sweeping,
    Inconclusive,
}

/// Outcome of the large-time classification.
#[derive(Debug, Clone)]
pub struct LargeTimeReport {
    pub lambda: f64,
    /// Exact rational lambda when the formula applies.
    pub lambda_exact: Option<BigRational>,
    pub verdict: Verdict,
    pub kappa: Option<Kappa>,
    pub v_star: Option<SampledDensity>,
    pub notes: Vec<String>,
}

/// Renders an exact rational as "p/q".
pub fn rational_string(r: &BigRational) -> String {
    if r.denom() == &BigInt::from(1) {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// 1D bracket condition: the drift difference b1 - b0 must vanish only at
/// isolated points. Returns (holds, note).
fn hormander_1d(spec: &ModelSpec) -> (bool, String) {
    if spec.is_polar() {
        let w0 = spec.field(0).angular_rate().unwrap_or(0.0);
        let w1 = spec.field(1).angular_rate().unwrap_or(0.0);
        return if w0 != w1 {
            (true, format!("bracket condition holds: rotation rates differ ({w0} vs {w1})"))
        } else {
            (
                false,
                "equal rotation rates: the angle decouples and the mean keeps rotating"
                    .to_string(),
            )
        };
    }
    let (lo, hi) = spec.domain.bounds();
    let n = 4096;
    let scale = (0..=n)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / n as f64;
            (spec.field(1).eval(x) - spec.field(0).eval(x)).abs()
        })
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return (false, "drift difference b1 - b0 vanishes identically".to_string());
    }
    let mut consecutive_zero = 0usize;
    let mut worst_run = 0usize;
    for k in 0..=n {
        let x = lo + (hi - lo) * k as f64 / n as f64;
        let d = (spec.field(1).eval(x) - spec.field(0).eval(x)).abs();
        if d < 1e-12 * scale {
            consecutive_zero += 1;
            worst_run = worst_run.max(consecutive_zero);
        } else {
            consecutive_zero = 0;
        }
    }
    if worst_run > 1 {
        (false, "drift difference vanishes on an interval".to_string())
    } else {
        (true, "bracket condition holds: b1 - b0 vanishes only at isolated points".to_string())
    }
}

/// Classifies the large-time mean on a default 1024-cell grid.
pub fn classify(spec: &ModelSpec) -> LargeTimeReport {
    let (lo, hi) = spec.domain.bounds();
    let grid = Grid1D::new(1024, lo, hi).expect("default grid");
    classify_on(spec, &grid)
}

/// Classification with the caller's sampling grid for the limit profile.
pub fn classify_on(spec: &ModelSpec, grid: &Grid1D) -> LargeTimeReport {
    let mut notes = Vec::new();
    let (hormander_ok, h_note) = hormander_1d(spec);
    notes.push(h_note);
    notes.push(
        "accessibility of the second stationary point is assumed, per the built-in analysis"
            .to_string(),
    );
    if let (
        VectorField::Goodwin { gamma: g0, n },
        VectorField::Goodwin { gamma: g1, .. },
    ) = (spec.field(0), spec.field(1))
    {
        notes.push(format!(
            "saturating-production regimes: gamma0 single-point {}, gamma1 single-point {}",
            fold_condition(*g0, *n),
            fold_condition(*g1, *n)
        ));
    }

    let exact = match lambda_exact(spec) {
        Ok(e) => e,
        Err(err) => {
            notes.push(format!("growth rate unavailable: {err}"));
            return LargeTimeReport {
                lambda: f64::NAN,
                lambda_exact: None,
                verdict: Verdict::Inconclusive,
                kappa: None,
                v_star: None,
                notes,
            };
        }
    };
    let lam = exact.to_f64().unwrap_or(f64::NAN);
    notes.push(format!("lambda = {} exactly", rational_string(&exact)));

    if exact.is_zero() {
        notes.push("lambda = 0 sits outside the dichotomy".to_string());
        return LargeTimeReport {
            lambda: lam,
            lambda_exact: Some(exact),
            verdict: Verdict::Inconclusive,
            kappa: None,
            v_star: None,
            notes,
        };
    }
    if exact.is_negative() {
        return LargeTimeReport {
            lambda: lam,
            lambda_exact: Some(exact),
            verdict: Verdict::Sweeping,
            kappa: None,
            v_star: None,
            notes,
        };
    }
    if !hormander_ok {
        notes.push("positive lambda but the bracket condition fails".to_string());
        return LargeTimeReport {
            lambda: lam,
            lambda_exact: Some(exact),
            verdict: Verdict::Inconclusive,
            kappa: None,
            v_star: None,
            notes,
        };
    }

    // Positive growth rate: normalize the stationary pair on (0, a).
    let Some(a) = spec.largest_stationary_point() else {
        notes.push("positive lambda but no positive stationary point found".to_string());
        return LargeTimeReport {
            lambda: lam,
            lambda_exact: Some(exact),
            verdict: Verdict::Inconclusive,
            kappa: None,
            v_star: None,
            notes,
        };
    };
    let pair = stationary_pair(spec, 0.5 * a, a, grid);
    match pair.and_then(|mut p| kappa_and_vstar(&mut p)) {
        Ok((Kappa::Finite(kappa), Some(v_star))) => LargeTimeReport {
            lambda: lam,
            lambda_exact: Some(exact),
            verdict: Verdict::AsymptoticallyStable,
            kappa: Some(Kappa::Finite(kappa)),
            v_star: Some(v_star),
            notes,
        },
        Ok(_) => {
            notes.push("normalization integral diverges despite positive lambda".to_string());
            LargeTimeReport {
                lambda: lam,
                lambda_exact: Some(exact),
                verdict: Verdict::Inconclusive,
                kappa: Some(Kappa::Infinite),
                v_star: None,
                notes,
            }
        }
        Err(err) => {
            notes.push(format!("stationary profile unavailable: {err}"));
            LargeTimeReport {
                lambda: lam,
                lambda_exact: Some(exact),
                verdict: Verdict::Inconclusive,
                kappa: None,
                v_star: None,
                notes,
            }
        }
    }
}

/// Large-time mean on the annulus for a polar model with positive lambda:
/// uniform in the angle, pitchfork radial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfVStar {
    pub grid: Grid2D,
    /// Row-major (theta, r) samples.
    pub values: Vec<f64>,
    pub kappa: f64,
}

pub fn hopf_vstar(spec: &ModelSpec, grid: &Grid2D) -> Result<HopfVStar, AsymptoticsError> {
    if !spec.is_polar() {
        return Err(AsymptoticsError::NoSupportEndpoint);
    }
    let lam = lambda(spec)?;
    if lam <= 0.0 {
        return Err(AsymptoticsError::NegativeLambda { lambda: lam });
    }
    let a = spec
        .largest_stationary_point()
        .ok_or(AsymptoticsError::NoSupportEndpoint)?;
    // Radial factor: the generic quadrature pipeline on the radial drifts.
    let mut pair = stationary_pair(spec, 0.5 * a, a, &grid.y)?;
    let (kappa, radial) = kappa_and_vstar(&mut pair)?;
    let Kappa::Finite(kappa) = kappa else {
        return Err(AsymptoticsError::Quadrature(QuadError::NonFinite));
    };
    let radial = radial.expect("finite kappa yields a profile");
    let (ntheta, nr) = (grid.x.n_cells, grid.y.n_cells);
    let mut values = vec![0.0; ntheta * nr];
    let inv_two_pi = 1.0 / std::f64::consts::TAU;
    for it in 0..ntheta {
        for ir in 0..nr {
            values[it * nr + ir] = inv_two_pi * radial.values[ir];
        }
    }
    Ok(HopfVStar { grid: grid.clone(), values, kappa })
}

/// Mass trace of the summed moment field inside a compact window.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepingReport {
    pub masses: Vec<(f64, f64)>,
    /// True when the window mass is non-increasing from some snapshot on
    /// (with at least two snapshots in the decreasing tail).
    pub eventually_decreasing: bool,
}

pub fn sweeping_diagnostic(
    snapshots: &[FieldState],
    grid: &Grid1D,
    window: (f64, f64),
) -> SweepingReport {
    let (w0, w1) = window;
    let masses: Vec<(f64, f64)> = snapshots
        .iter()
        .map(|s| {
            let total = s.total();
            let mut m = 0.0;
            if w1 > w0 {
                for (j, v) in total.iter().enumerate() {
                    let (c0, c1) = (grid.edge(j), grid.edge(j + 1));
                    let overlap = (c1.min(w1) - c0.max(w0)).max(0.0);
                    m += v * overlap;
                }
            }
            (s.time, m)
        })
        .collect();
    let slack = 1e-12;
    let mut tail_start = masses.len();
    for k in (1..masses.len()).rev() {
        if masses[k].1 <= masses[k - 1].1 + slack {
            tail_start = k - 1;
        } else {
            break;
        }
    }
    SweepingReport {
        eventually_decreasing: masses.len() >= 2 && tail_start + 1 < masses.len(),
        masses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DensityKind, Domain, InitialDensity, SwitchingChain};
    use num_bigint::BigInt;

    fn transcritical_spec(q0: f64, q1: f64) -> ModelSpec {
        ModelSpec {
            fields: vec![
                VectorField::Transcritical { beta: 1.0, c: 2.0, mu: 2.0 },
                VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 },
            ],
            chain: SwitchingChain::two_state(q0, q1).unwrap(),
            domain: Domain::Interval { x_lo: 1e-4, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.35, sigma: 0.12 },
                1e-4,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        }
    }

    fn pitchfork_spec() -> ModelSpec {
        ModelSpec {
            fields: vec![
                VectorField::Pitchfork { alpha: -0.5 },
                VectorField::Pitchfork { alpha: 1.0 },
            ],
            chain: SwitchingChain::two_state(4.0, 2.0).unwrap(),
            domain: Domain::Interval { x_lo: 1e-4, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.3, sigma: 0.1 },
                1e-4,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        }
    }

    fn goodwin_spec() -> ModelSpec {
        ModelSpec {
            fields: vec![
                VectorField::Goodwin { gamma: 2.0, n: 2 },
                VectorField::Goodwin { gamma: 0.25, n: 2 },
            ],
            chain: SwitchingChain::two_state(6.0, 2.0).unwrap(),
            domain: Domain::Interval { x_lo: 1e-4, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.18, sigma: 0.05 },
                1e-4,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        }
    }

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn lambda_is_exact_for_the_figure_parameter_sets() {
        assert_eq!(lambda_exact(&transcritical_spec(5.0, 3.0)).unwrap(), ratio(7, 8));
        assert_eq!(lambda_exact(&transcritical_spec(2.0, 6.0)).unwrap(), ratio(-1, 4));
        assert_eq!(lambda_exact(&pitchfork_spec()).unwrap(), ratio(1, 2));
        // Goodwin has both derivatives negative, so lambda < 0 always.
        let lam = lambda_exact(&goodwin_spec()).unwrap();
        assert_eq!(lam, ratio(-11, 16));
    }

    #[test]
    fn lambda_float_agrees_with_exact() {
        for spec in [transcritical_spec(5.0, 3.0), pitchfork_spec(), goodwin_spec()] {
            let e = lambda(&spec).unwrap();
            let f = lambda_float(&spec).unwrap();
            assert!((e - f).abs() < 1e-14);
        }
    }

    #[test]
    fn lambda_sign_invariant_under_rate_rescaling() {
        for scale in [0.5, 2.0, 7.0] {
            let spec = transcritical_spec(5.0 * scale, 3.0 * scale);
            assert_eq!(lambda_exact(&spec).unwrap(), ratio(7, 8));
        }
    }

    #[test]
    fn fold_condition_examples() {
        assert!(fold_condition(2.0, 2)); // 16 > 1
        assert!(!fold_condition(0.25, 2)); // 0.25 < 1
        // Boundary equality is excluded: gamma = (n-1)^((n-1)/n) / n.
        let n = 2;
        let gamma = 0.5; // 2^2 * 0.5^2 = 1 = (2-1)^1
        assert!(!fold_condition(gamma, n));
    }

    #[test]
    fn quadrature_pair_matches_transcritical_closed_form() {
        let spec = transcritical_spec(5.0, 3.0);
        let closed = ClosedFormPair::from_spec(&spec).unwrap();
        let a = closed.support_end();
        assert_eq!(a, 1.0);
        let grid = Grid1D::new(256, 1e-4, 1.0).unwrap();
        let mut pair = stationary_pair(&spec, 0.5 * a, a, &grid).unwrap();
        // One common constant must relate the two routes on the central 90%.
        let (nf0, nf1) = pair.eval(0.5).unwrap();
        let (cf0, _) = closed.eval(0.5);
        let scale = nf0 / cf0;
        assert!(scale.is_finite() && scale > 0.0);
        let _ = nf1;
        for j in 0..grid.n_cells {
            let x = grid.center(j);
            if x < 0.05 * a || x > 0.95 * a {
                continue;
            }
            let (n0, n1) = pair.eval(x).unwrap();
            let (c0, c1) = closed.eval(x);
            assert!(
                ((n0 / (c0 * scale)) - 1.0).abs() < 1e-6,
                "f0 mismatch at {x}: {n0} vs {}",
                c0 * scale
            );
            assert!(
                ((n1 / (c1 * scale)) - 1.0).abs() < 1e-6,
                "f1 mismatch at {x}",
            );
        }
    }

    #[test]
    fn quadrature_pair_matches_pitchfork_closed_form() {
        let spec = pitchfork_spec();
        let closed = ClosedFormPair::from_spec(&spec).unwrap();
        let a = closed.support_end();
        let grid = Grid1D::new(256, 1e-4, 1.0).unwrap();
        let mut pair = stationary_pair(&spec, 0.5 * a, a, &grid).unwrap();
        let (nf0, _) = pair.eval(0.5).unwrap();
        let (cf0, _) = closed.eval(0.5);
        let scale = nf0 / cf0;
        for j in 0..grid.n_cells {
            let x = grid.center(j);
            if x < 0.05 * a || x > 0.95 * a {
                continue;
            }
            let (n0, n1) = pair.eval(x).unwrap();
            let (c0, c1) = closed.eval(x);
            assert!(((n0 / (c0 * scale)) - 1.0).abs() < 1e-6, "f0 at {x}");
            assert!(((n1 / (c1 * scale)) - 1.0).abs() < 1e-6, "f1 at {x}");
        }
    }

    #[test]
    fn vstar_is_invariant_to_the_reference_point() {
        let spec = pitchfork_spec();
        let grid = Grid1D::new(128, 1e-4, 1.0).unwrap();
        let mut va = None;
        for x0 in [0.3, 0.5, 0.7] {
            let mut pair = stationary_pair(&spec, x0, 1.0, &grid).unwrap();
            let (_, v) = kappa_and_vstar(&mut pair).unwrap();
            let v = v.unwrap();
            match &va {
                None => va = Some(v),
                Some(prev) => {
                    for (a, b) in prev.values.iter().zip(&v.values) {
                        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn kappa_is_finite_and_vstar_normalized_for_stable_cases() {
        for spec in [transcritical_spec(5.0, 3.0), pitchfork_spec()] {
            let a = spec.largest_stationary_point().unwrap();
            let grid = Grid1D::new(512, 1e-4, 1.0).unwrap();
            let mut pair = stationary_pair(&spec, 0.5 * a, a, &grid).unwrap();
            let (kappa, v) = kappa_and_vstar(&mut pair).unwrap();
            let Kappa::Finite(k) = kappa else { panic!("kappa should be finite") };
            assert!(k > 0.0);
            // Continuum normalization check on a fine midpoint mesh
            // (independent of the graded rule that produced kappa).
            let v = v.unwrap();
            let n = 100_000;
            let h = a / n as f64;
            let mut pair2 = stationary_pair(&spec, 0.5 * a, a, &grid).unwrap();
            let mut total = 0.0;
            for j in 0..n {
                let (f0, f1) = pair2.eval((j as f64 + 0.5) * h).unwrap();
                total += (f0 + f1) * h;
            }
            let integral = total / k;
            assert!((integral - 1.0).abs() <= 1e-5, "vstar integral {integral}");
            let _ = v;
        }
    }

    #[test]
    fn classify_matches_the_figure_narratives() {
        let r = classify(&transcritical_spec(5.0, 3.0));
        assert_eq!(r.verdict, Verdict::AsymptoticallyStable);
        assert_eq!(r.lambda, 0.875);
        assert!(matches!(r.kappa, Some(Kappa::Finite(_))));
        assert!(r.v_star.is_some());

        let r = classify(&transcritical_spec(2.0, 6.0));
        assert_eq!(r.verdict, Verdict::Sweeping);
        assert_eq!(r.lambda, -0.25);

        let r = classify(&pitchfork_spec());
        assert_eq!(r.verdict, Verdict::AsymptoticallyStable);
        assert_eq!(r.lambda, 0.5);

        let r = classify(&goodwin_spec());
        assert_eq!(r.verdict, Verdict::Sweeping);
    }

    #[test]
    fn sweeping_diagnostic_reports_window_masses() {
        let grid = Grid1D::new(16, 0.0, 1.0).unwrap();
        let flat = |t: f64, level: f64| FieldState {
            time: t,
            values: vec![vec![level; 16]],
            shed: 0.0,
        };
        let snaps = vec![flat(0.0, 1.0), flat(1.0, 0.5), flat(2.0, 0.2)];
        let rep = sweeping_diagnostic(&snaps, &grid, (0.25, 0.75));
        assert!((rep.masses[0].1 - 0.5).abs() < 1e-12);
        assert!((rep.masses[2].1 - 0.1).abs() < 1e-12);
        assert!(rep.eventually_decreasing);
        // Empty window: all masses zero.
        let rep = sweeping_diagnostic(&snaps, &grid, (0.8, 0.2));
        assert!(rep.masses.iter().all(|&(_, m)| m == 0.0));
    }

    #[test]
    fn hopf_vstar_is_uniform_in_angle() {
        let spec = ModelSpec {
            fields: vec![
                VectorField::HopfPolar { omega: 1.0, mu: -0.5, b: 0.0 },
                VectorField::HopfPolar { omega: 2.0, mu: 1.0, b: 0.0 },
            ],
            chain: SwitchingChain::two_state(4.0, 2.0).unwrap(),
            domain: Domain::PolarAnnulus { r_lo: 1e-4, r_hi: 1.5 },
            g: InitialDensity::product(
                InitialDensity::new(
                    DensityKind::TruncatedGaussian {
                        center: std::f64::consts::PI,
                        sigma: 0.8,
                    },
                    0.0,
                    std::f64::consts::TAU,
                )
                .unwrap(),
                InitialDensity::new(
                    DensityKind::TruncatedGaussian { center: 0.7, sigma: 0.15 },
                    1e-4,
                    1.5,
                )
                .unwrap(),
            ),
            initial_state: 0,
        };
        let grid = Grid2D::new(
            Grid1D::new(32, 0.0, std::f64::consts::TAU).unwrap(),
            Grid1D::new(128, 1e-4, 1.0).unwrap(),
        );
        let v = hopf_vstar(&spec, &grid).unwrap();
        // Angular slices are identical up to the shared radial profile.
        for ir in 0..128 {
            let base = v.values[ir];
            for it in 1..32 {
                assert!((v.values[it * 128 + ir] - base).abs() <= 1e-12 * base.max(1.0));
            }
        }
        // The radial marginal (times 2 pi) matches the pitchfork profile
        // with alpha_i = mu_i computed by the same pipeline.
        let pf = pitchfork_spec();
        let mut pair = stationary_pair(&pf, 0.5, 1.0, &grid.y).unwrap();
        let (_, want) = kappa_and_vstar(&mut pair).unwrap();
        let want = want.unwrap();
        for ir in 0..128 {
            let radial = v.values[ir] * std::f64::consts::TAU;
            assert!(
                (radial - want.values[ir]).abs() <= 1e-7 * want.values[ir].max(1.0),
                "ir={ir}: {radial} vs {}",
                want.values[ir]
            );
        }
    }

    #[test]
    fn interior_singularity_is_detected() {
        // Both betas above mu put a stationary point of b0 inside (0, a1).
        let spec = ModelSpec {
            fields: vec![
                VectorField::Transcritical { beta: 3.0, c: 2.0, mu: 2.0 },
                VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 },
            ],
            chain: SwitchingChain::two_state(5.0, 3.0).unwrap(),
            domain: Domain::Interval { x_lo: 1e-4, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.35, sigma: 0.12 },
                1e-4,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        };
        let grid = Grid1D::new(64, 1e-4, 1.0).unwrap();
        assert!(matches!(
            stationary_pair(&spec, 0.5, 1.0, &grid),
            Err(AsymptoticsError::SingularInterior { .. })
        ));
    }
}
