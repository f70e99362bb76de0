//! Conservative first-order upwind finite-volume solver for the coupled
//! moment system in 1D and for correlation / polar systems on 2D tensor
//! grids, with the chain coupling applied exactly per cell through the
//! matrix exponential of the transposed intensity matrix.

use std::collections::HashMap;

use thiserror::Error;

use crate::matexp::{expm, SmallMat};
use crate::model::{validate, ModelSpec, VectorField};
use crate::sparse::CooMatrix;

pub const MIN_CELLS: usize = 16;
/// Assembled-generator size caps (cells per axis).
pub const GENERATOR_CAP_1D: usize = 256;
pub const GENERATOR_CAP_2D: usize = 64;

#[derive(Debug, Error)]
pub enum FpeError {
    #[error("grid needs at least {MIN_CELLS} cells, got {0}")]
    GridTooCoarse(usize),
    #[error("grid bounds are degenerate")]
    BadGridBounds,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("generator size cap exceeded: {n} cells > {cap}")]
    SizeCap { n: usize, cap: usize },
    #[error("operation not supported on this domain: {0}")]
    UnsupportedDomain(&'static str),
}

/// Uniform cell-centered 1D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub n_cells: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Grid1D {
    pub fn new(n_cells: usize, x_lo: f64, x_hi: f64) -> Result<Self, FpeError> {
        if n_cells < MIN_CELLS {
            return Err(FpeError::GridTooCoarse(n_cells));
        }
        if !(x_hi > x_lo) || !x_lo.is_finite() || !x_hi.is_finite() {
            return Err(FpeError::BadGridBounds);
        }
        Ok(Self { n_cells, x_lo, x_hi })
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.x_lo + (j as f64 + 0.5) * self.dx()
    }

    pub fn edge(&self, j: usize) -> f64 {
        self.x_lo + j as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }
}

/// Tensor product of two 1D axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn new(x: Grid1D, y: Grid1D) -> Self {
        Self { x, y }
    }

    /// Square tensor grid sharing one axis, the correlation-system layout.
    pub fn square(axis: Grid1D) -> Self {
        Self { x: axis.clone(), y: axis }
    }

    pub fn n_cells(&self) -> usize {
        self.x.n_cells * self.y.n_cells
    }

    pub fn cell_volume(&self) -> f64 {
        self.x.dx() * self.y.dx()
    }

    /// Row-major flat index (x outer, y inner).
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.y.n_cells + iy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Outflow,
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitting {
    Lie,
    Strang,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Courant number in (0, 1].
    pub cfl: f64,
    pub t_end: f64,
    /// Times at which snapshots are returned; must be sorted, within
    /// [0, t_end].
    pub snapshot_times: Vec<f64>,
    /// Boundary handling at the (lower, upper) edge of each non-periodic
    /// axis. Angular axes of polar domains are always periodic.
    pub boundary: (BoundaryKind, BoundaryKind),
    pub splitting: Splitting,
}

impl SolverConfig {
    pub fn new(t_end: f64, snapshot_times: Vec<f64>) -> Self {
        Self {
            cfl: 0.9,
            t_end,
            snapshot_times,
            boundary: (BoundaryKind::Outflow, BoundaryKind::Outflow),
            splitting: Splitting::Lie,
        }
    }

    fn check(&self) -> Result<(), FpeError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(FpeError::BadConfig(format!("cfl {} not in (0, 1]", self.cfl)));
        }
        if !(self.t_end >= 0.0) {
            return Err(FpeError::BadConfig("t_end must be nonnegative".into()));
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(FpeError::BadConfig("snapshot times must be sorted".into()));
        }
        if self
            .snapshot_times
            .iter()
            .any(|&t| t < 0.0 || t > self.t_end + 1e-12)
        {
            return Err(FpeError::BadConfig("snapshot times outside [0, t_end]".into()));
        }
        Ok(())
    }
}

/// Per-state cell averages at one instant, plus the outflow mass shed
/// through open boundaries up to that time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    /// values[state][cell]; 2D cells are row-major per [`Grid2D::index`].
    pub values: Vec<Vec<f64>>,
    pub shed: f64,
}

impl FieldState {
    pub fn state_mass(&self, state: usize, cell_volume: f64) -> f64 {
        self.values[state].iter().sum::<f64>() * cell_volume
    }

    pub fn total_mass(&self, cell_volume: f64) -> f64 {
        (0..self.values.len())
            .map(|i| self.state_mass(i, cell_volume))
            .sum()
    }

    /// Pointwise sum over states (the mean field V).
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values[0].len()];
        for vs in &self.values {
            for (o, v) in out.iter_mut().zip(vs) {
                *o += v;
            }
        }
        out
    }
}

/// Per-run numerical health counters, used by the verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub steps: usize,
    /// Most negative cell value produced by any update before clamping
    /// (roundoff dust only, by construction of the scheme).
    pub min_cell: f64,
    /// Largest per-step drift of (interior mass + shed mass).
    pub max_mass_drift: f64,
    pub shed_total: f64,
}

impl SolveStats {
    fn new() -> Self {
        Self { steps: 0, min_cell: 0.0, max_mass_drift: 0.0, shed_total: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bc {
    Outflow,
    Reflecting,
    Periodic,
}

impl From<BoundaryKind> for Bc {
    fn from(b: BoundaryKind) -> Self {
        match b {
            BoundaryKind::Outflow => Bc::Outflow,
            BoundaryKind::Reflecting => Bc::Reflecting,
        }
    }
}

/// Donor-cell sweep of one contiguous lane; returns the net outflux rate
/// through the lane's two boundary edges (zero unless outflow).
fn upwind_sweep(
    u: &mut [f64],
    edge_v: &[f64],
    lam: f64,
    bc: (Bc, Bc),
    flux: &mut Vec<f64>,
    min_cell: &mut f64,
) -> f64 {
    let n = u.len();
    debug_assert_eq!(edge_v.len(), n + 1);
    flux.clear();
    flux.resize(n + 1, 0.0);
    for j in 1..n {
        let v = edge_v[j];
        flux[j] = if v >= 0.0 { v * u[j - 1] } else { v * u[j] };
    }
    match bc.0 {
        Bc::Outflow => flux[0] = edge_v[0].min(0.0) * u[0],
        Bc::Reflecting => flux[0] = 0.0,
        Bc::Periodic => {
            let v = edge_v[0];
            flux[0] = if v >= 0.0 { v * u[n - 1] } else { v * u[0] };
        }
    }
    match bc.1 {
        Bc::Outflow => flux[n] = edge_v[n].max(0.0) * u[n - 1],
        Bc::Reflecting => flux[n] = 0.0,
        // One shared edge: reuse the wrapped flux so the sweep telescopes.
        Bc::Periodic => flux[n] = flux[0],
    }
    for j in 0..n {
        let mut unew = u[j] - lam * (flux[j + 1] - flux[j]);
        if unew < 0.0 {
            // Donor-cell updates are nonnegative in exact arithmetic;
            // anything below zero here is rounding dust.
            *min_cell = min_cell.min(unew);
            debug_assert!(unew > -1e-11, "genuine negativity {unew}");
            unew = 0.0;
        }
        u[j] = unew;
    }
    match (bc.0, bc.1) {
        (Bc::Periodic, _) | (_, Bc::Periodic) => 0.0,
        _ => flux[n].max(0.0) - flux[0].min(0.0),
    }
}

/// Cache of exp(dt Q^T) keyed by the bit pattern of dt.
struct CouplingCache {
    qt: SmallMat,
    cache: HashMap<u64, SmallMat>,
}

impl CouplingCache {
    fn new(qt: SmallMat) -> Self {
        Self { qt, cache: HashMap::new() }
    }

    fn get(&mut self, dt: f64) -> &SmallMat {
        self.cache
            .entry(dt.to_bits())
            .or_insert_with(|| expm(&self.qt.scale(dt)))
    }
}

fn apply_coupling(values: &mut [Vec<f64>], e: &SmallMat, scratch_in: &mut Vec<f64>, scratch_out: &mut Vec<f64>) {
    let states = values.len();
    let cells = values[0].len();
    scratch_in.resize(states, 0.0);
    scratch_out.resize(states, 0.0);
    for c in 0..cells {
        for i in 0..states {
            scratch_in[i] = values[i][c];
        }
        e.matvec(scratch_in, scratch_out);
        for i in 0..states {
            values[i][c] = scratch_out[i];
        }
    }
}

fn sample_initial_1d(spec: &ModelSpec, grid: &Grid1D) -> Vec<Vec<f64>> {
    let states = spec.n_states();
    let mut values = vec![vec![0.0; grid.n_cells]; states];
    let l = spec.initial_state;
    for (j, v) in values[l].iter_mut().enumerate() {
        *v = spec.g.eval(grid.center(j));
    }
    // Cell averages should form a discrete probability vector; sampling the
    // normalized density at centers is off by O(dx^2), corrected here.
    let mass: f64 = values[l].iter().sum::<f64>() * grid.dx();
    if mass > 0.0 {
        for v in values[l].iter_mut() {
            *v /= mass;
        }
    }
    values
}

fn check_finite(values: &[Vec<f64>], t: f64) -> Result<(), FpeError> {
    for vs in values {
        if vs.iter().any(|v| !v.is_finite()) {
            return Err(FpeError::NonFiniteState { t });
        }
    }
    Ok(())
}

/// Merged, deduplicated stop times: snapshots plus the end time.
fn stop_times(cfg: &SolverConfig) -> Vec<f64> {
    let mut stops = cfg.snapshot_times.clone();
    stops.push(cfg.t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops
}

fn is_snapshot(cfg: &SolverConfig, t: f64) -> bool {
    cfg.snapshot_times.iter().any(|&s| s == t)
}

/// Solves the coupled moment system on a 1D interval grid.
///
/// Each step advects every state's cell averages with a donor-cell flux
/// (edge velocities evaluated analytically from the fields) and then
/// applies the exact coupling exp(dt Q^T) per cell. The step length obeys
/// dt = cfl dx / max |b|, shrunk to land exactly on snapshot times.
pub fn solve_moment(
    spec: &ModelSpec,
    grid: &Grid1D,
    cfg: &SolverConfig,
) -> Result<Vec<FieldState>, FpeError> {
    solve_moment_with_stats(spec, grid, cfg).map(|(snaps, _)| snaps)
}

pub fn solve_moment_with_stats(
    spec: &ModelSpec,
    grid: &Grid1D,
    cfg: &SolverConfig,
) -> Result<(Vec<FieldState>, SolveStats), FpeError> {
    check_spec(spec)?;
    if spec.is_polar() {
        return Err(FpeError::UnsupportedDomain(
            "use solve_moment_polar for polar-annulus models",
        ));
    }
    let init = sample_initial_1d(spec, grid);
    solve_moment_from(spec, grid, cfg, init)
}

/// Restarts the 1D moment solve from caller-supplied per-state cell
/// averages instead of the spec's initial density.
pub fn solve_moment_from(
    spec: &ModelSpec,
    grid: &Grid1D,
    cfg: &SolverConfig,
    mut values: Vec<Vec<f64>>,
) -> Result<(Vec<FieldState>, SolveStats), FpeError> {
    cfg.check()?;
    check_spec(spec)?;
    let states = spec.n_states();
    if values.len() != states || values.iter().any(|v| v.len() != grid.n_cells) {
        return Err(FpeError::BadConfig("initial state does not match the grid".into()));
    }
    let n = grid.n_cells;
    let dx = grid.dx();
    let edge_v: Vec<Vec<f64>> = (0..states)
        .map(|i| (0..=n).map(|j| spec.field(i).eval(grid.edge(j))).collect())
        .collect();
    let vmax = edge_v
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut coupling = CouplingCache::new(spec.chain.generator_transpose());
    let mut stats = SolveStats::new();
    let mut snapshots = Vec::new();
    let mut shed = 0.0;
    let mut flux = Vec::new();
    let (mut s_in, mut s_out) = (Vec::new(), Vec::new());
    let bc = (Bc::from(cfg.boundary.0), Bc::from(cfg.boundary.1));

    let dt_nominal = if vmax > 0.0 { cfg.cfl * dx / vmax } else { f64::INFINITY };
    let mut t = 0.0;
    if is_snapshot(cfg, 0.0) {
        snapshots.push(FieldState { time: 0.0, values: values.clone(), shed });
    }
    for stop in stop_times(cfg) {
        while t < stop {
            let dt = dt_nominal.min(stop - t);
            let mass_before: f64 =
                values.iter().flatten().sum::<f64>() * dx + shed;
            match cfg.splitting {
                Splitting::Lie => {
                    if vmax > 0.0 {
                        for (i, vs) in values.iter_mut().enumerate() {
                            let out = upwind_sweep(vs, &edge_v[i], dt / dx, bc, &mut flux, &mut stats.min_cell);
                            shed += out * dt;
                        }
                    }
                    apply_coupling(&mut values, coupling.get(dt), &mut s_in, &mut s_out);
                }
                Splitting::Strang => {
                    apply_coupling(&mut values, coupling.get(0.5 * dt), &mut s_in, &mut s_out);
                    if vmax > 0.0 {
                        for (i, vs) in values.iter_mut().enumerate() {
                            let out = upwind_sweep(vs, &edge_v[i], dt / dx, bc, &mut flux, &mut stats.min_cell);
                            shed += out * dt;
                        }
                    }
                    apply_coupling(&mut values, coupling.get(0.5 * dt), &mut s_in, &mut s_out);
                }
            }
            let mass_after: f64 = values.iter().flatten().sum::<f64>() * dx + shed;
            stats.max_mass_drift = stats.max_mass_drift.max((mass_after - mass_before).abs());
            stats.steps += 1;
            t += dt;
            // Land exactly on the stop even after accumulation error.
            if stop - t < 1e-13 * stop.max(1.0) {
                t = stop;
            }
            check_finite(&values, t)?;
        }
        if is_snapshot(cfg, stop) && stop != 0.0 {
            snapshots.push(FieldState { time: stop, values: values.clone(), shed });
        }
    }
    stats.shed_total = shed;
    Ok((snapshots, stats))
}

fn check_spec(spec: &ModelSpec) -> Result<(), FpeError> {
    // Structural requirements only; absorbing chain states are fine for the
    // deterministic solver (the coupling exponential handles zero rates).
    if spec.fields.len() != spec.n_states() {
        let msgs: Vec<String> = validate(spec).iter().map(|d| d.to_string()).collect();
        return Err(FpeError::InvalidModel(msgs.join("; ")));
    }
    Ok(())
}

/// Axis description for dimension-split 2D solves.
struct Axis2D {
    grid: Grid1D,
    bc: (Bc, Bc),
    /// edge velocities per state along this axis
    vel: Vec<Vec<f64>>,
}

fn solve_2d(
    chain_qt: SmallMat,
    axes: [Axis2D; 2],
    mut values: Vec<Vec<f64>>,
    cfg: &SolverConfig,
) -> Result<(Vec<FieldState>, SolveStats), FpeError> {
    cfg.check()?;
    let (nx, ny) = (axes[0].grid.n_cells, axes[1].grid.n_cells);
    let (dx, dy) = (axes[0].grid.dx(), axes[1].grid.dx());
    let vol = dx * dy;
    let vxmax = axes[0].vel.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let vymax = axes[1].vel.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let dt_nominal = {
        let dtx = if vxmax > 0.0 { cfg.cfl * dx / vxmax } else { f64::INFINITY };
        let dty = if vymax > 0.0 { cfg.cfl * dy / vymax } else { f64::INFINITY };
        dtx.min(dty)
    };

    let mut coupling = CouplingCache::new(chain_qt);
    let mut stats = SolveStats::new();
    let mut snapshots = Vec::new();
    let mut shed = 0.0;
    let mut flux = Vec::new();
    let mut lane = vec![0.0; nx.max(ny)];
    let (mut s_in, mut s_out) = (Vec::new(), Vec::new());

    let advect = |values: &mut Vec<Vec<f64>>,
                      dt: f64,
                      shed: &mut f64,
                      flux: &mut Vec<f64>,
                      lane: &mut Vec<f64>,
                      stats: &mut SolveStats| {
        // x-direction sweeps: lanes are strided (fixed iy).
        for (i, vs) in values.iter_mut().enumerate() {
            for iy in 0..ny {
                for ix in 0..nx {
                    lane[ix] = vs[ix * ny + iy];
                }
                let out = upwind_sweep(
                    &mut lane[..nx],
                    &axes[0].vel[i],
                    dt / dx,
                    axes[0].bc,
                    flux,
                    &mut stats.min_cell,
                );
                *shed += out * dt * dy;
                for ix in 0..nx {
                    vs[ix * ny + iy] = lane[ix];
                }
            }
        }
        // y-direction sweeps: lanes are contiguous (fixed ix).
        for (i, vs) in values.iter_mut().enumerate() {
            for ix in 0..nx {
                let row = &mut vs[ix * ny..(ix + 1) * ny];
                let out = upwind_sweep(
                    row,
                    &axes[1].vel[i],
                    dt / dy,
                    axes[1].bc,
                    flux,
                    &mut stats.min_cell,
                );
                *shed += out * dt * dx;
            }
        }
    };

    let mut t = 0.0;
    if is_snapshot(cfg, 0.0) {
        snapshots.push(FieldState { time: 0.0, values: values.clone(), shed });
    }
    for stop in stop_times(cfg) {
        while t < stop {
            let dt = dt_nominal.min(stop - t);
            let mass_before: f64 = values.iter().flatten().sum::<f64>() * vol + shed;
            match cfg.splitting {
                Splitting::Lie => {
                    if dt_nominal.is_finite() {
                        advect(&mut values, dt, &mut shed, &mut flux, &mut lane, &mut stats);
                    }
                    apply_coupling(&mut values, coupling.get(dt), &mut s_in, &mut s_out);
                }
                Splitting::Strang => {
                    apply_coupling(&mut values, coupling.get(0.5 * dt), &mut s_in, &mut s_out);
                    if dt_nominal.is_finite() {
                        advect(&mut values, dt, &mut shed, &mut flux, &mut lane, &mut stats);
                    }
                    apply_coupling(&mut values, coupling.get(0.5 * dt), &mut s_in, &mut s_out);
                }
            }
            let mass_after: f64 = values.iter().flatten().sum::<f64>() * vol + shed;
            stats.max_mass_drift = stats.max_mass_drift.max((mass_after - mass_before).abs());
            stats.steps += 1;
            t += dt;
            if stop - t < 1e-13 * stop.max(1.0) {
                t = stop;
            }
            check_finite(&values, t)?;
        }
        if is_snapshot(cfg, stop) && stop != 0.0 {
            snapshots.push(FieldState { time: stop, values: values.clone(), shed });
        }
    }
    stats.shed_total = shed;
    Ok((snapshots, stats))
}

/// Initial correlation state C_l(0, x, y) = g(x) g(y), other states zero.
pub fn correlation_initial(spec: &ModelSpec, grid: &Grid2D) -> FieldState {
    let states = spec.n_states();
    let (nx, ny) = (grid.x.n_cells, grid.y.n_cells);
    let mut values = vec![vec![0.0; nx * ny]; states];
    let gx: Vec<f64> = grid.x.centers().iter().map(|&x| spec.g.eval(x)).collect();
    let gy: Vec<f64> = grid.y.centers().iter().map(|&y| spec.g.eval(y)).collect();
    // Normalize each factor on its axis so the tensor mass is exactly one.
    let mx: f64 = gx.iter().sum::<f64>() * grid.x.dx();
    let my: f64 = gy.iter().sum::<f64>() * grid.y.dx();
    let l = spec.initial_state;
    for ix in 0..nx {
        for iy in 0..ny {
            let mut v = gx[ix] * gy[iy];
            if mx > 0.0 && my > 0.0 {
                v /= mx * my;
            }
            values[l][grid.index(ix, iy)] = v;
        }
    }
    FieldState { time: 0.0, values, shed: 0.0 }
}

/// Solves the second-order correlation system on a tensor grid, state `i`
/// advected with velocity (b_i(x), b_i(y)) and coupled exactly per cell.
pub fn solve_correlation(
    spec: &ModelSpec,
    grid: &Grid2D,
    cfg: &SolverConfig,
    init: &FieldState,
) -> Result<Vec<FieldState>, FpeError> {
    solve_correlation_with_stats(spec, grid, cfg, init).map(|(s, _)| s)
}

pub fn solve_correlation_with_stats(
    spec: &ModelSpec,
    grid: &Grid2D,
    cfg: &SolverConfig,
    init: &FieldState,
) -> Result<(Vec<FieldState>, SolveStats), FpeError> {
    check_spec(spec)?;
    if spec.is_polar() {
        return Err(FpeError::UnsupportedDomain("correlations are 1D-interval only"));
    }
    let states = spec.n_states();
    if init.values.len() != states || init.values.iter().any(|v| v.len() != grid.n_cells()) {
        return Err(FpeError::BadConfig("initial state does not match the grid".into()));
    }
    let init_mass: f64 = init.values.iter().flatten().sum::<f64>() * grid.cell_volume();
    if init_mass > 1.0 + 1e-6 {
        return Err(FpeError::BadConfig(format!("initial correlation mass {init_mass} > 1")));
    }
    let bc = (Bc::from(cfg.boundary.0), Bc::from(cfg.boundary.1));
    let mk_axis = |axis: &Grid1D| Axis2D {
        grid: axis.clone(),
        bc,
        vel: (0..states)
            .map(|i| (0..=axis.n_cells).map(|j| spec.field(i).eval(axis.edge(j))).collect())
            .collect(),
    };
    let axes = [mk_axis(&grid.x), mk_axis(&grid.y)];
    solve_2d(spec.chain.generator_transpose(), axes, init.values.clone(), cfg)
}

/// Solves the moment system of a polar-annulus model on a (theta, r) tensor
/// grid: the angular axis is periodic with the constant per-state rotation
/// rate, the radial axis carries the radial drift.
pub fn solve_moment_polar(
    spec: &ModelSpec,
    grid: &Grid2D,
    cfg: &SolverConfig,
) -> Result<Vec<FieldState>, FpeError> {
    solve_moment_polar_with_stats(spec, grid, cfg).map(|(s, _)| s)
}

pub fn solve_moment_polar_with_stats(
    spec: &ModelSpec,
    grid: &Grid2D,
    cfg: &SolverConfig,
) -> Result<(Vec<FieldState>, SolveStats), FpeError> {
    check_spec(spec)?;
    if !spec.is_polar() {
        return Err(FpeError::UnsupportedDomain("model domain is not a polar annulus"));
    }
    let states = spec.n_states();
    let (ntheta, nr) = (grid.x.n_cells, grid.y.n_cells);
    let theta_axis = Axis2D {
        grid: grid.x.clone(),
        bc: (Bc::Periodic, Bc::Periodic),
        vel: (0..states)
            .map(|i| {
                let w = spec.field(i).angular_rate().unwrap_or(0.0);
                vec![w; ntheta + 1]
            })
            .collect(),
    };
    let r_axis = Axis2D {
        grid: grid.y.clone(),
        bc: (Bc::from(cfg.boundary.0), Bc::from(cfg.boundary.1)),
        vel: (0..states)
            .map(|i| (0..=nr).map(|j| spec.field(i).eval(grid.y.edge(j))).collect())
            .collect(),
    };

    let mut values = vec![vec![0.0; ntheta * nr]; states];
    let l = spec.initial_state;
    for it in 0..ntheta {
        let theta = grid.x.center(it);
        for ir in 0..nr {
            values[l][grid.index(it, ir)] = spec.g.eval_polar(theta, grid.y.center(ir));
        }
    }
    let mass: f64 = values[l].iter().sum::<f64>() * grid.cell_volume();
    if mass > 0.0 {
        for v in values[l].iter_mut() {
            *v /= mass;
        }
    }
    solve_2d(spec.chain.generator_transpose(), [theta_axis, r_axis], values, cfg)
}

/// Upwind advection generator of one field on a 1D grid: du/dt = A u.
pub fn advection_matrix_1d(
    field: &VectorField,
    grid: &Grid1D,
    boundary: (BoundaryKind, BoundaryKind),
) -> CooMatrix {
    let n = grid.n_cells;
    let dx = grid.dx();
    let mut a = CooMatrix::new(n, n);
    let edge_v: Vec<f64> = (0..=n).map(|j| field.eval(grid.edge(j))).collect();
    for j in 0..=n {
        let v = edge_v[j];
        let (vp, vm) = (v.max(0.0), v.min(0.0));
        // Flux at edge j enters cell j and leaves cell j-1.
        if j == 0 {
            match boundary.0 {
                BoundaryKind::Outflow => {
                    // Inflow donor lies outside: only the vm u[0] outflux.
                    a.push(0, 0, vm / dx);
                }
                BoundaryKind::Reflecting => {}
            }
        } else if j == n {
            match boundary.1 {
                BoundaryKind::Outflow => {
                    a.push(n - 1, n - 1, -vp / dx);
                }
                BoundaryKind::Reflecting => {}
            }
        } else {
            // F_j = vp u[j-1] + vm u[j].
            a.push(j, j - 1, vp / dx);
            a.push(j, j, vm / dx);
            a.push(j - 1, j - 1, -vp / dx);
            a.push(j - 1, j, -vm / dx);
        }
    }
    a.canonicalize();
    a
}

/// Full discrete generator of the 1D moment system: advection blocks per
/// state plus the Q^T coupling acting cellwise across states.
pub fn assemble_generator_1d(
    spec: &ModelSpec,
    grid: &Grid1D,
    boundary: (BoundaryKind, BoundaryKind),
) -> Result<CooMatrix, FpeError> {
    check_spec(spec)?;
    let n = grid.n_cells;
    if n > GENERATOR_CAP_1D {
        return Err(FpeError::SizeCap { n, cap: GENERATOR_CAP_1D });
    }
    let states = spec.n_states();
    let mut full = CooMatrix::new(states * n, states * n);
    for i in 0..states {
        let a = advection_matrix_1d(spec.field(i), grid, boundary);
        for &(r, c, v) in a.entries() {
            full.push(i * n + r, i * n + c, v);
        }
    }
    for i in 0..states {
        for j in 0..states {
            let q_ji = spec.chain.rate(j, i);
            if q_ji != 0.0 || i == j {
                for c in 0..n {
                    full.push(i * n + c, j * n + c, q_ji);
                }
            }
        }
    }
    full.canonicalize();
    Ok(full)
}

/// 2D advection generator of one field on a square tensor grid, assembled
/// directly from the dimension-split stencil (velocity b(x) along x and
/// b(y) along y).
pub fn advection_matrix_2d(
    field: &VectorField,
    grid: &Grid2D,
    boundary: (BoundaryKind, BoundaryKind),
) -> CooMatrix {
    let (nx, ny) = (grid.x.n_cells, grid.y.n_cells);
    let nn = nx * ny;
    let mut a = CooMatrix::new(nn, nn);
    let ax = advection_matrix_1d(field, &grid.x, boundary);
    let ay = advection_matrix_1d(field, &grid.y, boundary);
    // x-direction part acts on the outer index for every fixed iy, the
    // y-direction part on the inner index for every fixed ix.
    for &(r, c, v) in ax.entries() {
        for iy in 0..ny {
            a.push(r * ny + iy, c * ny + iy, v);
        }
    }
    for ix in 0..nx {
        for &(r, c, v) in ay.entries() {
            a.push(ix * ny + r, ix * ny + c, v);
        }
    }
    a.canonicalize();
    a
}

/// Full discrete generator of the correlation system on a tensor grid.
pub fn assemble_generator_2d(
    spec: &ModelSpec,
    grid: &Grid2D,
    boundary: (BoundaryKind, BoundaryKind),
) -> Result<CooMatrix, FpeError> {
    check_spec(spec)?;
    let (nx, ny) = (grid.x.n_cells, grid.y.n_cells);
    if nx > GENERATOR_CAP_2D || ny > GENERATOR_CAP_2D {
        return Err(FpeError::SizeCap { n: nx.max(ny), cap: GENERATOR_CAP_2D });
    }
    let states = spec.n_states();
    let nn = nx * ny;
    let mut full = CooMatrix::new(states * nn, states * nn);
    for i in 0..states {
        let a = advection_matrix_2d(spec.field(i), grid, boundary);
        for &(r, c, v) in a.entries() {
            full.push(i * nn + r, i * nn + c, v);
        }
    }
    for i in 0..states {
        for j in 0..states {
            let q_ji = spec.chain.rate(j, i);
            if q_ji != 0.0 || i == j {
                for c in 0..nn {
                    full.push(i * nn + c, j * nn + c, q_ji);
                }
            }
        }
    }
    full.canonicalize();
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DensityKind, Domain, InitialDensity, SwitchingChain};
    use crate::sparse::CooMatrix;

    /// Single "state" translated at constant speed; the chain never leaves
    /// it (zero rates are fine for the deterministic solver).
    fn translation_spec(speed: f64) -> ModelSpec {
        ModelSpec {
            fields: vec![VectorField::Polynomial { coeffs: vec![speed] }],
            chain: SwitchingChain::from_matrix_unchecked(vec![vec![0.0]]),
            domain: Domain::Interval { x_lo: 0.0, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.3, sigma: 0.05 },
                0.0,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        }
    }

    fn frozen_two_state(q0: f64, q1: f64) -> ModelSpec {
        ModelSpec {
            fields: vec![
                VectorField::Polynomial { coeffs: vec![0.0] },
                VectorField::Polynomial { coeffs: vec![0.0] },
            ],
            chain: SwitchingChain::two_state(q0, q1).unwrap(),
            domain: Domain::Interval { x_lo: 0.0, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.5, sigma: 0.1 },
                0.0,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        }
    }

    #[test]
    fn constant_advection_translates_the_bump() {
        let spec = translation_spec(0.25);
        let grid = Grid1D::new(512, 0.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, vec![1.0]);
        let snaps = solve_moment(&spec, &grid, &cfg).unwrap();
        let got = &snaps[0].values[0];
        // Exact translation of the initial density by speed * t.
        let l1: f64 = (0..grid.n_cells)
            .map(|j| {
                let x = grid.center(j);
                (got[j] - spec.g.eval(x - 0.25)).abs() * grid.dx()
            })
            .sum();
        assert!(l1 <= 0.05, "translation L1 error {l1}");
    }

    #[test]
    fn zero_drift_coupling_matches_kolmogorov_closed_form() {
        let spec = frozen_two_state(1.0, 1.0);
        let grid = Grid1D::new(64, 0.0, 1.0).unwrap();
        let times = [0.3, 0.7, 2.0];
        let cfg = SolverConfig::new(2.0, times.to_vec());
        let snaps = solve_moment(&spec, &grid, &cfg).unwrap();
        for (snap, &t) in snaps.iter().zip(&times) {
            let m0 = snap.state_mass(0, grid.dx());
            let m1 = snap.state_mass(1, grid.dx());
            let want0 = 0.5 * (1.0 + (-2.0 * t).exp());
            assert!((m0 - want0).abs() < 1e-8, "t={t} m0={m0}");
            assert!((m1 - (1.0 - want0)).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn reflecting_walls_conserve_mass_per_step() {
        // Quadratic drift vanishing at both walls so reflecting boundaries
        // see zero velocity.
        let spec = ModelSpec {
            fields: vec![VectorField::Polynomial { coeffs: vec![0.0, 0.5, -0.5] }],
            chain: SwitchingChain::from_matrix_unchecked(vec![vec![0.0]]),
            domain: Domain::Interval { x_lo: 0.0, x_hi: 1.0 },
            g: InitialDensity::new(
                DensityKind::TruncatedGaussian { center: 0.4, sigma: 0.1 },
                0.0,
                1.0,
            )
            .unwrap(),
            initial_state: 0,
        };
        let grid = Grid1D::new(128, 0.0, 1.0).unwrap();
        let mut cfg = SolverConfig::new(1.5, vec![1.5]);
        cfg.boundary = (BoundaryKind::Reflecting, BoundaryKind::Reflecting);
        let (snaps, stats) = solve_moment_with_stats(&spec, &grid, &cfg).unwrap();
        assert!(stats.max_mass_drift <= 1e-12, "drift {}", stats.max_mass_drift);
        assert_eq!(stats.shed_total, 0.0);
        let mass = snaps[0].total_mass(grid.dx());
        assert!((mass - 1.0).abs() < 1e-11);
        assert!(stats.min_cell > -1e-12);
    }

    #[test]
    fn strang_splitting_stays_close_to_lie() {
        let spec = frozen_two_state(2.0, 3.0);
        let grid = Grid1D::new(32, 0.0, 1.0).unwrap();
        let mut cfg = SolverConfig::new(1.0, vec![1.0]);
        cfg.splitting = Splitting::Strang;
        let strang = solve_moment(&spec, &grid, &cfg).unwrap();
        cfg.splitting = Splitting::Lie;
        let lie = solve_moment(&spec, &grid, &cfg).unwrap();
        // With zero drift both splittings reduce to the exact coupling.
        for (a, b) in strang[0].values.iter().zip(&lie[0].values) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snapshot_times_are_hit_exactly() {
        let spec = translation_spec(0.3);
        let grid = Grid1D::new(64, 0.0, 1.0).unwrap();
        let cfg = SolverConfig::new(0.77, vec![0.0, 0.13, 0.5, 0.77]);
        let snaps = solve_moment(&spec, &grid, &cfg).unwrap();
        let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.13, 0.5, 0.77]);
    }

    fn fig1_spec() -> ModelSpec {
        ModelSpec {
            fields: vec![
                VectorField::Transcritical { beta: 1.0, c: 2.0, mu: 2.0 },
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
        }
    }

    #[test]
    fn generator_columns_telescope() {
        let grid = Grid1D::new(32, 1e-4, 1.0).unwrap();
        let field = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let a = advection_matrix_1d(
            &field,
            &grid,
            (BoundaryKind::Outflow, BoundaryKind::Outflow),
        );
        let sums = a.column_sums();
        for (j, s) in sums.iter().enumerate() {
            let interior = j > 0 && j < grid.n_cells - 1;
            if interior {
                assert!(s.abs() < 1e-12, "interior column {j} sums to {s}");
            } else {
                assert!(*s <= 1e-12, "boundary column {j} sums to {s}");
            }
        }
        // Full generator columns stay nonpositive (substochastic).
        let full = assemble_generator_1d(
            &fig1_spec(),
            &grid,
            (BoundaryKind::Outflow, BoundaryKind::Outflow),
        )
        .unwrap();
        for s in full.column_sums() {
            assert!(s <= 1e-12, "generator column sum {s}");
        }
    }

    #[test]
    fn two_dimensional_block_is_a_kronecker_sum() {
        let axis = Grid1D::new(24, 1e-4, 1.0).unwrap();
        let grid = Grid2D::square(axis.clone());
        let field = VectorField::Transcritical { beta: 4.0, c: 2.0, mu: 2.0 };
        let bc = (BoundaryKind::Outflow, BoundaryKind::Outflow);
        let block = advection_matrix_2d(&field, &grid, bc);
        let a1 = advection_matrix_1d(&field, &axis, bc);
        let kron = CooMatrix::kron_sum(&a1, &a1);
        assert_eq!(block.max_abs_diff(&kron), 0.0);
    }

    #[test]
    fn generator_size_caps_are_enforced() {
        let spec = fig1_spec();
        let grid = Grid1D::new(512, 1e-4, 1.0).unwrap();
        assert!(matches!(
            assemble_generator_1d(&spec, &grid, (BoundaryKind::Outflow, BoundaryKind::Outflow)),
            Err(FpeError::SizeCap { .. })
        ));
    }

    #[test]
    fn correlation_keeps_symmetry_and_marginals_at_t0() {
        let spec = fig1_spec();
        let axis = Grid1D::new(32, 1e-4, 1.0).unwrap();
        let grid = Grid2D::square(axis);
        let init = correlation_initial(&spec, &grid);
        let cfg = SolverConfig::new(0.0, vec![0.0]);
        let snaps = solve_correlation(&spec, &grid, &cfg, &init).unwrap();
        assert_eq!(snaps[0], init);
    }

    #[test]
    fn correlation_2d_reflecting_conserves_mass() {
        let mut spec = fig1_spec();
        // Drift vanishing at both walls keeps reflecting boundaries exact.
        spec.fields = vec![
            VectorField::Polynomial { coeffs: vec![0.0, 0.3, -0.3] },
            VectorField::Polynomial { coeffs: vec![0.0, -0.2, 0.2] },
        ];
        spec.domain = Domain::Interval { x_lo: 0.0, x_hi: 1.0 };
        spec.g = InitialDensity::new(
            DensityKind::TruncatedGaussian { center: 0.5, sigma: 0.12 },
            0.0,
            1.0,
        )
        .unwrap();
        let grid = Grid2D::square(Grid1D::new(32, 0.0, 1.0).unwrap());
        let mut cfg = SolverConfig::new(0.5, vec![0.5]);
        cfg.boundary = (BoundaryKind::Reflecting, BoundaryKind::Reflecting);
        let init = correlation_initial(&spec, &grid);
        let (_, stats) = solve_correlation_with_stats(&spec, &grid, &cfg, &init).unwrap();
        assert!(stats.max_mass_drift <= 1e-12, "drift {}", stats.max_mass_drift);
        assert!(stats.min_cell > -1e-12);
    }

    #[test]
    fn polar_rotation_conserves_mass_with_periodic_angle() {
        let spec = ModelSpec {
            fields: vec![
                VectorField::HopfPolar { omega: 1.0, mu: -0.5, b: 0.0 },
                VectorField::HopfPolar { omega: 1.0, mu: 1.0, b: 0.0 },
            ],
            chain: SwitchingChain::two_state(4.0, 2.0).unwrap(),
            domain: Domain::PolarAnnulus { r_lo: 1e-4, r_hi: 1.5 },
            g: InitialDensity::product(
                InitialDensity::new(
                    DensityKind::TruncatedGaussian {
                        center: std::f64::consts::PI,
                        sigma: 0.6,
                    },
                    0.0,
                    std::f64::consts::TAU,
                )
                .unwrap(),
                InitialDensity::new(
                    DensityKind::TruncatedGaussian { center: 0.8, sigma: 0.15 },
                    1e-4,
                    1.5,
                )
                .unwrap(),
            ),
            initial_state: 1,
        };
        let grid = Grid2D::new(
            Grid1D::new(48, 0.0, std::f64::consts::TAU).unwrap(),
            Grid1D::new(48, 1e-4, 1.5).unwrap(),
        );
        let cfg = SolverConfig::new(0.5, vec![0.5]);
        let (snaps, stats) = solve_moment_polar_with_stats(&spec, &grid, &cfg).unwrap();
        let mass = snaps[0].total_mass(grid.cell_volume()) + snaps[0].shed;
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        assert!(stats.min_cell > -1e-12);
    }

    #[test]
    fn grid_rejects_too_few_cells() {
        assert!(matches!(Grid1D::new(8, 0.0, 1.0), Err(FpeError::GridTooCoarse(8))));
        assert!(matches!(Grid1D::new(32, 1.0, 1.0), Err(FpeError::BadGridBounds)));
    }
}
