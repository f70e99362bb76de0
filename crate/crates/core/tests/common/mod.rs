//! Shared model fixtures for the integration tests: the bifurcation
//! example configurations with the initial densities used throughout.

use switchpde::model::{
    DensityKind, Domain, InitialDensity, ModelSpec, SwitchingChain, VectorField,
};

pub fn transcritical(q0: f64, q1: f64, initial_state: usize) -> ModelSpec {
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
        initial_state,
    }
}

/// Growth-indicator-positive configuration (converges to the limit profile).
pub fn fig1() -> ModelSpec {
    transcritical(5.0, 3.0, 1)
}

/// Swapped rates make the growth indicator negative (sweeping).
pub fn fig2a() -> ModelSpec {
    transcritical(2.0, 6.0, 1)
}

/// Saturating-production model in the fold-switching regime.
pub fn fig2b() -> ModelSpec {
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

pub fn fig3() -> ModelSpec {
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

/// Polar limit-cycle model; equal rotation rates give the rotating-mean
/// regime, unequal rates the mixing regime.
pub fn hopf(omega0: f64, omega1: f64) -> ModelSpec {
    ModelSpec {
        fields: vec![
            VectorField::HopfPolar { omega: omega0, mu: -0.5, b: 0.0 },
            VectorField::HopfPolar { omega: omega1, mu: 1.0, b: 0.0 },
        ],
        chain: SwitchingChain::two_state(4.0, 2.0).unwrap(),
        domain: Domain::PolarAnnulus { r_lo: 1e-4, r_hi: 1.5 },
        g: InitialDensity::product(
            InitialDensity::new(
                DensityKind::TruncatedGaussian { center: std::f64::consts::PI, sigma: 1.0 },
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
        initial_state: 1,
    }
}

pub fn l1_distance(a: &[f64], b: &[f64], cell: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * cell
}
