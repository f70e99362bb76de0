//! Sampling of the switching environment and its exact marginal law.
//!
//! Paths are drawn with exponential holding times and embedded-chain jumps;
//! occupation probabilities come from the matrix exponential of the
//! intensity matrix, which doubles as an oracle for mass bookkeeping in the
//! solvers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::matexp::{expm, SmallMat};
use crate::model::SwitchingChain;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("operation requires a two-state chain, got {0} states")]
    NotTwoState(usize),
}

/// One sampled environment trajectory on [0, horizon].
///
/// `jumps` lists (jump time, state entered) pairs with strictly increasing
/// times in (0, horizon]; the path occupies `initial_state` before the
/// first jump.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub initial_state: usize,
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl ChainPath {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let mut state = self.initial_state;
        for &(tn, s) in &self.jumps {
            if tn <= t {
                state = s;
            } else {
                break;
            }
        }
        state
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// Time spent in `state` up to the horizon.
    pub fn occupation_time(&self, state: usize) -> f64 {
        let mut total = 0.0;
        let mut cur = self.initial_state;
        let mut last = 0.0;
        for &(tn, s) in &self.jumps {
            if cur == state {
                total += tn - last;
            }
            cur = s;
            last = tn;
        }
        if cur == state {
            total += self.horizon - last;
        }
        total
    }
}

/// Exact marginal law of the environment at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationVector {
    pub probs: Vec<f64>,
    pub t: f64,
}

/// Deterministic per-path generator: a fixed master seed with the path
/// index as the stream, so results do not depend on scheduling order.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Samples one environment path; reproducible from the seed.
pub fn sample_path(chain: &SwitchingChain, i0: usize, horizon: f64, seed: u64) -> ChainPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_path_with(chain, i0, horizon, &mut rng)
}

/// Samples one path from a caller-owned generator.
pub fn sample_path_with(
    chain: &SwitchingChain,
    i0: usize,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> ChainPath {
    assert!(i0 < chain.n_states(), "initial state out of range");
    let mut jumps = Vec::new();
    let mut t = 0.0;
    let mut state = i0;
    loop {
        let qi = chain.exit_rate(state);
        debug_assert!(qi > 0.0, "absorbing state rejected by chain validation");
        let hold: f64 = Exp::new(qi).expect("positive rate").sample(rng);
        t += hold;
        if t > horizon {
            break;
        }
        // Embedded chain: next state j != i with probability q_ij / q_i.
        let u: f64 = rng.gen::<f64>() * qi;
        let mut acc = 0.0;
        let mut next = state;
        for j in 0..chain.n_states() {
            if j == state {
                continue;
            }
            acc += chain.rate(state, j);
            if u < acc {
                next = j;
                break;
            }
        }
        if next == state {
            // Rounding pushed u past the last cumulative bin; take the
            // final non-diagonal state.
            next = (0..chain.n_states()).rev().find(|&j| j != state).unwrap();
        }
        jumps.push((t, next));
        state = next;
    }
    ChainPath { initial_state: i0, jumps, horizon }
}

/// Row `i0` of exp(tQ): the law of i(t) started from `i0`.
pub fn occupation_probabilities(chain: &SwitchingChain, i0: usize, t: f64) -> OccupationVector {
    assert!(t >= 0.0, "time must be nonnegative");
    assert!(i0 < chain.n_states(), "initial state out of range");
    let e = expm(&chain.generator().scale(t));
    let probs = (0..chain.n_states()).map(|j| e.get(i0, j)).collect();
    OccupationVector { probs, t }
}

/// exp(tQ) itself, for propagating occupation vectors.
pub fn occupation_matrix(chain: &SwitchingChain, t: f64) -> SmallMat {
    expm(&chain.generator().scale(t))
}

/// Stationary weights (p0, p1) = (q1, q0) / (q0 + q1) of a two-state chain.
pub fn stationary_weights(chain: &SwitchingChain) -> Result<(f64, f64), ChainError> {
    if chain.n_states() != 2 {
        return Err(ChainError::NotTwoState(chain.n_states()));
    }
    let q0 = chain.rate(0, 1);
    let q1 = chain.rate(1, 0);
    Ok((q1 / (q0 + q1), q0 / (q0 + q1)))
}
