//! Pathwise transport operators along sampled environment paths and the
//! Monte Carlo estimators built from them.
//!
//! One sampled path turns into a [`SwitchSchedule`]; evaluating the
//! transported density at a point walks the schedule backwards, pulling the
//! point through each segment's inverse flow while accumulating
//! log-Jacobians. Estimators reuse each sampled path across all grid nodes
//! (common random numbers) and reduce over fixed-size path chunks in index
//! order, so results are bitwise independent of the worker count.

use thiserror::Error;

use crate::chain::{path_rng, sample_path_with, ChainPath};
use crate::flow::{backward, FlowError, IntegratorConfig};
use crate::fpe::{Grid1D, Grid2D};
use crate::model::ModelSpec;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("Monte Carlo estimators need an interval domain")]
    PolarUnsupported,
    #[error("n_paths must be at least 1")]
    NoPaths,
}

/// Environment history up to an evaluation time, as (state, duration)
/// segments in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchSchedule {
    pub segments: Vec<(usize, f64)>,
}

impl SwitchSchedule {
    /// Truncates a sampled path at time `t`; durations are positive and sum
    /// to `t`.
    pub fn from_path(path: &ChainPath, t: f64) -> Self {
        debug_assert!(t <= path.horizon + 1e-12);
        let mut segments = Vec::with_capacity(path.jumps.len() + 1);
        let mut state = path.initial_state;
        let mut start = 0.0;
        for &(tn, next) in &path.jumps {
            if tn >= t {
                break;
            }
            if tn > start {
                segments.push((state, tn - start));
            }
            state = next;
            start = tn;
        }
        if t > start {
            segments.push((state, t - start));
        }
        Self { segments }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.1).sum()
    }
}

/// Monte Carlo estimate of the per-state moment components on a 1D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub t: f64,
    pub n_paths: usize,
    pub grid: Grid1D,
    /// values[state][node]
    pub values: Vec<Vec<f64>>,
    /// Pointwise standard error per state.
    pub std_err: Vec<Vec<f64>>,
    /// Pointwise standard error of the summed estimator.
    pub total_std_err: Vec<f64>,
    /// Empirical terminal-state frequencies.
    pub occupancy: Vec<f64>,
    /// Mass not accounted for on the grid (boundary truncation).
    pub shed_mass: f64,
}

impl McEstimate {
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values[0].len()];
        for vs in &self.values {
            for (o, v) in out.iter_mut().zip(vs) {
                *o += v;
            }
        }
        out
    }

    pub fn state_mass(&self, state: usize) -> f64 {
        self.values[state].iter().sum::<f64>() * self.grid.dx()
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.values.len()).map(|i| self.state_mass(i)).sum()
    }
}

/// Monte Carlo estimate of the per-state correlations on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct McCorrelation {
    pub t: f64,
    pub n_paths: usize,
    pub grid: Grid2D,
    /// values[state][cell], row-major per [`Grid2D::index`].
    pub values: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub occupancy: Vec<f64>,
    pub shed_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub integrator: IntegratorConfig,
    /// Paths per reduction chunk; reductions run in chunk order.
    pub chunk_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { integrator: IntegratorConfig::default(), chunk_size: 128 }
    }
}

/// Transported density u(t, x) along one schedule: walks segments in
/// reverse, composing inverse flows; returns g(y) exp(sum log-Jacobians),
/// or zero once any segment leaves the domain.
pub fn pullback_evaluate(
    spec: &ModelSpec,
    schedule: &SwitchSchedule,
    x: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, FlowError> {
    Ok(pullback_many(spec, schedule, &[x], cfg)?[0])
}

/// Vectorized pullback over many evaluation points sharing one schedule.
/// Each point follows exactly the arithmetic of [`pullback_evaluate`].
pub fn pullback_many(
    spec: &ModelSpec,
    schedule: &SwitchSchedule,
    xs: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, FlowError> {
    let n = xs.len();
    let mut ys = xs.to_vec();
    let mut log_jac = vec![0.0_f64; n];
    let mut alive = vec![true; n];
    for &(state, duration) in schedule.segments.iter().rev() {
        let field = spec.field(state);
        for k in 0..n {
            if !alive[k] {
                continue;
            }
            let r = backward(field, &spec.domain, ys[k], duration, cfg)?;
            if r.exited {
                alive[k] = false;
            } else {
                ys[k] = r.endpoint;
                log_jac[k] += r.log_jacobian;
            }
        }
    }
    Ok((0..n)
        .map(|k| {
            if alive[k] {
                spec.g.eval(ys[k]) * log_jac[k].exp()
            } else {
                0.0
            }
        })
        .collect())
}

struct ChunkAccum {
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl ChunkAccum {
    fn new(states: usize, cells: usize) -> Self {
        Self {
            sum: vec![vec![0.0; cells]; states],
            sum_sq: vec![vec![0.0; cells]; states],
            counts: vec![0; states],
        }
    }

    fn merge(&mut self, other: &ChunkAccum) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Runs `per_path` over path indices 0..n_paths in fixed-size chunks and
/// merges the chunk accumulators in index order. With the `parallel`
/// feature the chunks run on the rayon pool; the reduction order (and so
/// the bit pattern of every sum) is the same either way.
fn run_chunks<F>(
    n_paths: usize,
    chunk_size: usize,
    states: usize,
    cells: usize,
    per_path: F,
) -> Result<ChunkAccum, TransportError>
where
    F: Fn(usize, &mut ChunkAccum) -> Result<(), TransportError> + Sync,
{
    let ranges: Vec<(usize, usize)> = (0..n_paths)
        .step_by(chunk_size.max(1))
        .map(|s| (s, (s + chunk_size.max(1)).min(n_paths)))
        .collect();
    let run_one = |&(start, end): &(usize, usize)| -> Result<ChunkAccum, TransportError> {
        let mut acc = ChunkAccum::new(states, cells);
        for p in start..end {
            per_path(p, &mut acc)?;
        }
        Ok(acc)
    };

    #[cfg(feature = "parallel")]
    let partials: Vec<Result<ChunkAccum, TransportError>> = {
        use rayon::prelude::*;
        ranges.par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Result<ChunkAccum, TransportError>> = ranges.iter().map(run_one).collect();

    let mut total = ChunkAccum::new(states, cells);
    for partial in partials {
        total.merge(&partial?);
    }
    Ok(total)
}

fn std_errs(sum: &[Vec<f64>], sum_sq: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    sum.iter()
        .zip(sum_sq)
        .map(|(s1, s2)| {
            s1.iter()
                .zip(s2)
                .map(|(a, b)| {
                    let mean = a / nf;
                    let var = (b / nf - mean * mean).max(0.0);
                    (var / nf).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Monte Carlo estimator of the per-state moment components V_i(t, x) on
/// the grid nodes, deterministic given the master seed.
pub fn mc_mean(
    spec: &ModelSpec,
    grid: &Grid1D,
    t: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<McEstimate, TransportError> {
    mc_mean_with(spec, grid, t, n_paths, master_seed, &McConfig::default())
}

pub fn mc_mean_with(
    spec: &ModelSpec,
    grid: &Grid1D,
    t: f64,
    n_paths: usize,
    master_seed: u64,
    cfg: &McConfig,
) -> Result<McEstimate, TransportError> {
    if spec.is_polar() {
        return Err(TransportError::PolarUnsupported);
    }
    if n_paths == 0 {
        return Err(TransportError::NoPaths);
    }
    let states = spec.n_states();
    let nodes = grid.centers();
    let acc = run_chunks(n_paths, cfg.chunk_size, states, nodes.len(), |p, acc| {
        let mut rng = path_rng(master_seed, p as u64);
        let path = sample_path_with(&spec.chain, spec.initial_state, t, &mut rng);
        let schedule = SwitchSchedule::from_path(&path, t);
        let terminal = path.state_at(t);
        let vals = pullback_many(spec, &schedule, &nodes, &cfg.integrator)?;
        acc.counts[terminal] += 1;
        for (j, v) in vals.iter().enumerate() {
            acc.sum[terminal][j] += v;
            acc.sum_sq[terminal][j] += v * v;
        }
        Ok(())
    })?;

    let nf = n_paths as f64;
    let values: Vec<Vec<f64>> = acc.sum.iter().map(|s| s.iter().map(|v| v / nf).collect()).collect();
    let std_err = std_errs(&acc.sum, &acc.sum_sq, n_paths);
    // A path contributes its value to exactly one state, so totals over
    // states are the plain per-path sums.
    let total_std_err: Vec<f64> = (0..nodes.len())
        .map(|j| {
            let s1: f64 = acc.sum.iter().map(|s| s[j]).sum();
            let s2: f64 = acc.sum_sq.iter().map(|s| s[j]).sum();
            let mean = s1 / nf;
            ((s2 / nf - mean * mean).max(0.0) / nf).sqrt()
        })
        .collect();
    let occupancy: Vec<f64> = acc.counts.iter().map(|&c| c as f64 / nf).collect();
    let mass: f64 = values.iter().flatten().sum::<f64>() * grid.dx();
    Ok(McEstimate {
        t,
        n_paths,
        grid: grid.clone(),
        values,
        std_err,
        total_std_err,
        occupancy,
        shed_mass: (1.0 - mass).max(0.0),
    })
}

/// Monte Carlo estimator of the per-state correlations C_i(t, x, y):
/// per path the tensor values are the outer product of two pullbacks
/// sharing the schedule (one pullback when the axes coincide).
pub fn mc_correlation(
    spec: &ModelSpec,
    grid: &Grid2D,
    t: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<McCorrelation, TransportError> {
    mc_correlation_with(spec, grid, t, n_paths, master_seed, &McConfig::default())
}

pub fn mc_correlation_with(
    spec: &ModelSpec,
    grid: &Grid2D,
    t: f64,
    n_paths: usize,
    master_seed: u64,
    cfg: &McConfig,
) -> Result<McCorrelation, TransportError> {
    if spec.is_polar() {
        return Err(TransportError::PolarUnsupported);
    }
    if n_paths == 0 {
        return Err(TransportError::NoPaths);
    }
    let states = spec.n_states();
    let xs = grid.x.centers();
    let ys = grid.y.centers();
    let shared_axis = grid.x == grid.y;
    let (nx, ny) = (xs.len(), ys.len());
    let acc = run_chunks(n_paths, cfg.chunk_size, states, nx * ny, |p, acc| {
        let mut rng = path_rng(master_seed, p as u64);
        let path = sample_path_with(&spec.chain, spec.initial_state, t, &mut rng);
        let schedule = SwitchSchedule::from_path(&path, t);
        let terminal = path.state_at(t);
        let vx = pullback_many(spec, &schedule, &xs, &cfg.integrator)?;
        let vy = if shared_axis {
            vx.clone()
        } else {
            pullback_many(spec, &schedule, &ys, &cfg.integrator)?
        };
        acc.counts[terminal] += 1;
        for ix in 0..nx {
            if vx[ix] == 0.0 {
                continue;
            }
            for iy in 0..ny {
                let w = vx[ix] * vy[iy];
                let cell = ix * ny + iy;
                acc.sum[terminal][cell] += w;
                acc.sum_sq[terminal][cell] += w * w;
            }
        }
        Ok(())
    })?;

    let nf = n_paths as f64;
    let values: Vec<Vec<f64>> = acc.sum.iter().map(|s| s.iter().map(|v| v / nf).collect()).collect();
    let std_err = std_errs(&acc.sum, &acc.sum_sq, n_paths);
    let occupancy: Vec<f64> = acc.counts.iter().map(|&c| c as f64 / nf).collect();
    let mass: f64 = values.iter().flatten().sum::<f64>() * grid.cell_volume();
    Ok(McCorrelation {
        t,
        n_paths,
        grid: grid.clone(),
        values,
        std_err,
        occupancy,
        shed_mass: (1.0 - mass).max(0.0),
    })
}
