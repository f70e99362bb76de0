//! Characteristic flows of the per-state drift fields, integrated together
//! with the variational equation so that each trajectory carries the log
//! derivative of its flow map (the density-transport Jacobian factor).
//!
//! Fixed-step RK4 keeps results reproducible across platforms; adaptive
//! stepping buys nothing at these problem sizes and would cost bitwise
//! determinism.

use thiserror::Error;

use crate::model::{Domain, VectorField};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("characteristic diverged to a non-finite value")]
    Diverged,
}

/// Endpoint of a 1D characteristic plus the accumulated log-Jacobian of the
/// flow map along it. `exited` marks departure from the domain (or flight
/// beyond the escape radius), in which case the transported density
/// contribution is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub endpoint: f64,
    pub log_jacobian: f64,
    pub exited: bool,
}

/// Polar analogue: the angle advances at the constant rate, the radius
/// follows the radial drift, and only the radial direction contributes to
/// the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarFlowResult {
    pub theta: f64,
    pub r: f64,
    pub log_jacobian: f64,
    pub exited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Target RK4 substep length.
    pub base_step: f64,
    /// Cap on substeps per call; beyond it the step length grows.
    pub max_substeps: usize,
    /// Relative drift threshold below which the state is held fixed.
    pub stationary_guard: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { base_step: 0.01, max_substeps: 100_000, stationary_guard: 1e-14 }
    }
}

/// Trajectories fleeing the domain are abandoned this far beyond its upper
/// bound; the transported contribution is already zero out there.
const ESCAPE_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Backward,
}

/// Integrates x' = b(x) (or its time reversal) over `dt` together with
/// L' = b'(x) sharing the RK4 stages; in 1D the flow-map derivative is
/// exp(L) forward and exp(-L') backward, both captured by the signed
/// accumulation here.
fn integrate(
    field: &VectorField,
    lo: f64,
    hi: f64,
    x0: f64,
    dt: f64,
    cfg: &IntegratorConfig,
    dir: Direction,
) -> Result<FlowResult, FlowError> {
    debug_assert!(dt >= 0.0);
    let sgn = match dir {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let escape = ESCAPE_FACTOR * hi.abs().max(1.0);
    let mut x = x0;
    let mut log_jac = 0.0;
    if dt > 0.0 {
        let n = ((dt / cfg.base_step).ceil() as usize).clamp(1, cfg.max_substeps);
        let h = dt / n as f64;
        for _ in 0..n {
            if !x.is_finite() {
                return Err(FlowError::Diverged);
            }
            if x.abs() > escape {
                return Ok(FlowResult { endpoint: x, log_jacobian: log_jac, exited: true });
            }
            let b0 = field.eval(x);
            if b0.abs() < cfg.stationary_guard * x.abs().max(1.0) {
                // Frozen at a stationary point; the Jacobian still grows.
                log_jac += sgn * field.derivative(x) * h;
                continue;
            }
            let k1 = sgn * b0;
            let d1 = sgn * field.derivative(x);
            let x2 = x + 0.5 * h * k1;
            let k2 = sgn * field.eval(x2);
            let d2 = sgn * field.derivative(x2);
            let x3 = x + 0.5 * h * k2;
            let k3 = sgn * field.eval(x3);
            let d3 = sgn * field.derivative(x3);
            let x4 = x + h * k3;
            let k4 = sgn * field.eval(x4);
            let d4 = sgn * field.derivative(x4);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            log_jac += h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        }
    }
    if !x.is_finite() || !log_jac.is_finite() {
        return Err(FlowError::Diverged);
    }
    Ok(FlowResult { endpoint: x, log_jacobian: log_jac, exited: x < lo || x > hi })
}

/// Forward characteristic endpoint and log flow-map derivative.
pub fn advance(
    field: &VectorField,
    domain: &Domain,
    x0: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowResult, FlowError> {
    let (lo, hi) = domain.bounds();
    integrate(field, lo, hi, x0, dt, cfg, Direction::Forward)
}

/// Backward characteristic: evaluates the inverse flow and the log
/// derivative of the inverse flow map (the transport pullback factor).
pub fn backward(
    field: &VectorField,
    domain: &Domain,
    x: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowResult, FlowError> {
    let (lo, hi) = domain.bounds();
    integrate(field, lo, hi, x, dt, cfg, Direction::Backward)
}

fn polar(
    field: &VectorField,
    domain: &Domain,
    theta0: f64,
    r0: f64,
    dt: f64,
    cfg: &IntegratorConfig,
    dir: Direction,
) -> Result<PolarFlowResult, FlowError> {
    let omega = field
        .angular_rate()
        .expect("polar integration needs a polar field");
    let (lo, hi) = domain.bounds();
    let sgn = match dir {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let radial = integrate(field, lo, hi, r0, dt, cfg, dir)?;
    // With b = 0 the angle decouples and advances exactly.
    let theta = (theta0 + sgn * omega * dt).rem_euclid(std::f64::consts::TAU);
    Ok(PolarFlowResult {
        theta,
        r: radial.endpoint,
        log_jacobian: radial.log_jacobian,
        exited: radial.exited,
    })
}

/// Forward polar characteristic (exact angular rotation, RK4 radius).
pub fn advance_polar(
    field: &VectorField,
    domain: &Domain,
    theta0: f64,
    r0: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<PolarFlowResult, FlowError> {
    polar(field, domain, theta0, r0, dt, cfg, Direction::Forward)
}

/// Backward polar characteristic.
pub fn backward_polar(
    field: &VectorField,
    domain: &Domain,
    theta: f64,
    r: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<PolarFlowResult, FlowError> {
    polar(field, domain, theta, r, dt, cfg, Direction::Backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, VectorField};
    use proptest::prelude::*;

    fn interval(hi: f64) -> Domain {
        Domain::Interval { x_lo: 1e-4, x_hi: hi }
    }

    fn linear(alpha: f64) -> VectorField {
        VectorField::Polynomial { coeffs: vec![0.0, alpha] }
    }

    /// Closed-form pitchfork flow for alpha = 1:
    /// x(t) = x0 e^t / sqrt(1 + x0^2 (e^{2t} - 1)).
    fn pitchfork_exact(x0: f64, t: f64) -> f64 {
        x0 * t.exp() / (1.0 + x0 * x0 * ((2.0 * t).exp() - 1.0)).sqrt()
    }

    #[test]
    fn linear_field_matches_exponential() {
        let cfg = IntegratorConfig::default();
        let r = advance(&linear(1.0), &interval(5.0), 0.5, 1.0, &cfg).unwrap();
        assert!((r.endpoint - 0.5 * 1.0_f64.exp()).abs() < 1e-8);
        assert!((r.endpoint - 1.35914).abs() < 1e-5);
        // b' is constant so the Jacobian quadrature is exact.
        assert!((r.log_jacobian - 1.0).abs() < 1e-12);
        assert!(!r.exited);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let f = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let cfg = IntegratorConfig::default();
        let r = advance(&f, &interval(1.5), 1.0, 3.0, &cfg).unwrap();
        assert_eq!(r.endpoint, 1.0);
        assert!(!r.exited);
        // d(pi)/dx at the attracting point grows like exp(b'(a) t).
        assert!((r.log_jacobian - f.derivative(1.0) * 3.0).abs() < 1e-12);
    }

    #[test]
    fn pitchfork_closed_form_oracle() {
        let f = VectorField::Pitchfork { alpha: 1.0 };
        let cfg = IntegratorConfig::default();
        let r = advance(&f, &interval(1.5), 0.5, 2.0, &cfg).unwrap();
        assert!((r.endpoint - pitchfork_exact(0.5, 2.0)).abs() < 1e-8);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let f = VectorField::Pitchfork { alpha: 1.0 };
        let exact = pitchfork_exact(0.4, 1.0);
        let err_at = |step: f64| {
            let cfg = IntegratorConfig { base_step: step, ..Default::default() };
            (advance(&f, &interval(1.5), 0.4, 1.0, &cfg).unwrap().endpoint - exact).abs()
        };
        let coarse = err_at(0.05);
        let fine = err_at(0.025);
        let ratio = coarse / fine;
        assert!((10.0..26.0).contains(&ratio), "order ratio {ratio}, errs {coarse:e}/{fine:e}");
    }

    #[test]
    fn backward_inverts_advance() {
        let cfg = IntegratorConfig::default();
        let dom = interval(5.0);
        let f = linear(0.8);
        let fwd = advance(&f, &dom, 0.7, 1.3, &cfg).unwrap();
        let back = backward(&f, &dom, fwd.endpoint, 1.3, &cfg).unwrap();
        assert!((back.endpoint - 0.7).abs() < 1e-10);
        assert!((fwd.log_jacobian + back.log_jacobian).abs() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let f = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let cfg = IntegratorConfig::default();
        let dom = interval(1.5);
        for &(x, t) in &[(0.3, 0.8), (0.7, 1.5), (1.2, 0.5)] {
            let r = advance(&f, &dom, x, t, &cfg).unwrap();
            let h = 1e-5;
            let up = advance(&f, &dom, x + h, t, &cfg).unwrap().endpoint;
            let dn = advance(&f, &dom, x - h, t, &cfg).unwrap().endpoint;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (r.log_jacobian.exp() - fd).abs() <= 1e-5,
                "x={x} t={t}: exp(L)={} fd={fd}",
                r.log_jacobian.exp()
            );
        }
    }

    #[test]
    fn group_property() {
        let cfg = IntegratorConfig::default();
        let dom = interval(1.5);
        let fields = [
            VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 },
            VectorField::Pitchfork { alpha: 1.0 },
            VectorField::Goodwin { gamma: 0.25, n: 2 },
        ];
        for f in &fields {
            for &(s, t) in &[(0.3, 0.4), (1.0, 0.5), (0.25, 1.0)] {
                let two_leg = {
                    let first = advance(f, &dom, 0.45, s, &cfg).unwrap();
                    advance(f, &dom, first.endpoint, t, &cfg).unwrap().endpoint
                };
                let direct = advance(f, &dom, 0.45, s + t, &cfg).unwrap().endpoint;
                assert!((two_leg - direct).abs() < 1e-8, "{f:?} s={s} t={t}");
            }
        }
    }

    #[test]
    fn backward_near_stable_point_expands() {
        // State-1 transcritical field: a1 = 1 is attracting, so backward
        // trajectories drift away from it with positive log-Jacobian.
        let f = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let cfg = IntegratorConfig::default();
        let r = backward(&f, &interval(1.5), 0.97, 0.8, &cfg).unwrap();
        assert!(r.endpoint < 0.97);
        assert!(r.log_jacobian > 0.0);
    }

    #[test]
    fn backward_escape_is_flagged_not_fatal() {
        // Above a1 the state-1 field decays, so its backward flow blows up
        // toward +infinity and must be reported as exited.
        let f = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let cfg = IntegratorConfig::default();
        let r = backward(&f, &interval(1.5), 1.2, 4.0, &cfg).unwrap();
        assert!(r.exited);
    }

    #[test]
    fn volume_preserving_field_has_zero_jacobian() {
        let f = VectorField::Polynomial { coeffs: vec![0.4] };
        let cfg = IntegratorConfig::default();
        let r = advance(&f, &interval(5.0), 1.0, 2.0, &cfg).unwrap();
        assert_eq!(r.log_jacobian, 0.0);
        assert!((r.endpoint - 1.8).abs() < 1e-12);
    }

    #[test]
    fn polar_rotation_is_exact_and_radius_follows_pitchfork() {
        let f = VectorField::HopfPolar { omega: 2.0, mu: 1.0, b: 0.0 };
        let dom = Domain::PolarAnnulus { r_lo: 1e-4, r_hi: 1.5 };
        let cfg = IntegratorConfig::default();
        let r = advance_polar(&f, &dom, 1.0, 0.5, 2.0, &cfg).unwrap();
        let want_theta = 5.0_f64.rem_euclid(std::f64::consts::TAU);
        assert!((r.theta - want_theta).abs() < 1e-12);
        assert!((r.r - pitchfork_exact(0.5, 2.0)).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn backward_inverts_advance_on_pitchfork(
            x0 in 0.05_f64..0.9,
            dt in 0.01_f64..1.0,
        ) {
            let f = VectorField::Pitchfork { alpha: 1.0 };
            let cfg = IntegratorConfig::default();
            let dom = interval(1.5);
            let fwd = advance(&f, &dom, x0, dt, &cfg).unwrap();
            prop_assume!(!fwd.exited);
            let back = backward(&f, &dom, fwd.endpoint, dt, &cfg).unwrap();
            prop_assert!((back.endpoint - x0).abs() < 1e-9);
            prop_assert!((fwd.log_jacobian + back.log_jacobian).abs() < 1e-9);
        }
    }
}
