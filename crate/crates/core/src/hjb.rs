//! Projected backward-Euler solver for the one-dimensional obstacle problem
//! and the European backward equation on a uniform `(t, s)` mesh.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::model::PutPayoff;

/// Coefficients of the one-dimensional surrogate `dS = r S dt + b(t,S) dW`.
pub trait LocalVolatility {
    fn rate(&self) -> f64;
    /// Squared volatility `b^2(t, s)`.
    fn vol_sq(&self, t: f64, s: f64) -> f64;
    /// Spatial interval on which the coefficients are defined, if bounded.
    fn s_range(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Closure-backed coefficients, mostly for tests and one-asset checks.
pub struct FnVolatility<F: Fn(f64, f64) -> f64> {
    pub rate: f64,
    pub vol_sq: F,
}

impl<F: Fn(f64, f64) -> f64> LocalVolatility for FnVolatility<F> {
    fn rate(&self) -> f64 {
        self.rate
    }
    fn vol_sq(&self, t: f64, s: f64) -> f64 {
        (self.vol_sq)(t, s)
    }
}

/// Uniform mesh `t_n = n T / N_t`, `s_m = s_min + m ds`, `m = 0..N_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n_t: usize,
    n_s: usize,
    s_min: f64,
    s_max: f64,
    maturity: f64,
}

impl Grid {
    pub fn new(n_t: usize, n_s: usize, s_min: f64, s_max: f64, maturity: f64) -> Result<Self> {
        if n_t < 1 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        if n_s < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 space nodes, got {n_s}")));
        }
        if !(s_max > s_min) || !(maturity > 0.0) {
            return Err(Error::InvalidArgument("empty grid rectangle".into()));
        }
        Ok(Self { n_t, n_s, s_min, s_max, maturity })
    }

    /// Space resolution tied to time resolution by `N_s^2 = c N_t`.
    pub fn coupled(n_t: usize, coupling: f64, s_min: f64, s_max: f64, maturity: f64) -> Result<Self> {
        let n_s = (coupling * n_t as f64).sqrt().round() as usize;
        Self::new(n_t, n_s.max(3), s_min, s_max, maturity)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_s(&self) -> usize {
        self.n_s
    }
    pub fn s_min(&self) -> f64 {
        self.s_min
    }
    pub fn s_max(&self) -> f64 {
        self.s_max
    }
    pub fn maturity(&self) -> f64 {
        self.maturity
    }
    pub fn dt(&self) -> f64 {
        self.maturity / self.n_t as f64
    }
    pub fn ds(&self) -> f64 {
        (self.s_max - self.s_min) / (self.n_s - 1) as f64
    }
    pub fn time(&self, n: usize) -> f64 {
        self.maturity * n as f64 / self.n_t as f64
    }
    pub fn node(&self, m: usize) -> f64 {
        if m + 1 == self.n_s { self.s_max } else { self.s_min + m as f64 * self.ds() }
    }

    /// Index of a grid time; `None` if `t` is not on the grid.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let n = x.round();
        if n < 0.0 || n as usize > self.n_t || (x - n).abs() > 1e-9 * self.n_t as f64 {
            return None;
        }
        Some(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    American,
    European,
}

/// Discrete value function `u(t_n, s_m)`.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    grid: Grid,
    flavor: Flavor,
    payoff: PutPayoff,
    /// Row-major by time level.
    values: Vec<f64>,
}

impl ValueGrid {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn flavor(&self) -> Flavor {
        self.flavor
    }
    pub fn payoff(&self) -> &PutPayoff {
        &self.payoff
    }
    pub fn level(&self, n: usize) -> &[f64] {
        let ns = self.grid.n_s;
        &self.values[n * ns..(n + 1) * ns]
    }
    pub fn at(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.grid.n_s + m]
    }

    /// Linear interpolation in `s` at grid time `t`. Queries outside the
    /// rectangle are clamped to the Dirichlet value at the nearest edge.
    pub fn value_at(&self, t: f64, s: f64) -> Result<f64> {
        let n = self
            .grid
            .time_index(t)
            .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a grid time")))?;
        let row = self.level(n);
        if s < self.grid.s_min || s > self.grid.s_max {
            log::warn!("value query at s = {s} outside [{}, {}] clamped", self.grid.s_min, self.grid.s_max);
        }
        Ok(interpolate(row, self.grid.s_min, self.grid.ds(), s))
    }

    /// Finite-difference delta at grid level `n`: node deltas (central in
    /// the interior, one-sided at the edges) interpolated linearly in `s`.
    pub fn delta(&self, n: usize, s: f64) -> f64 {
        let d = node_deltas(self.level(n), self.grid.ds());
        interpolate(&d, self.grid.s_min, self.grid.ds(), s)
    }

    /// Node deltas for every time level, laid out like the values.
    pub fn delta_table(&self) -> DeltaTable {
        let ns = self.grid.n_s;
        let ds = self.grid.ds();
        let mut data = Vec::with_capacity(self.values.len());
        for n in 0..=self.grid.n_t {
            data.extend(node_deltas(self.level(n), ds));
        }
        DeltaTable { n_s: ns, s_min: self.grid.s_min, ds, data }
    }

    /// Writes `t s u` rows, one per node.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# t s value")?;
        for n in 0..=self.grid.n_t {
            let t = self.grid.time(n);
            for m in 0..self.grid.n_s {
                writeln!(out, "{t:.10e} {:.10e} {:.10e}", self.grid.node(m), self.at(n, m))?;
            }
        }
        Ok(())
    }
}

/// Precomputed node deltas, for fast lookups inside path loops.
#[derive(Debug, Clone)]
pub struct DeltaTable {
    n_s: usize,
    s_min: f64,
    ds: f64,
    data: Vec<f64>,
}

impl DeltaTable {
    /// Identically zero delta (no martingale correction).
    pub fn zeros(grid: &Grid) -> Self {
        Self { n_s: grid.n_s, s_min: grid.s_min, ds: grid.ds(), data: vec![0.0; (grid.n_t + 1) * grid.n_s] }
    }

    /// Every `factor`-th time level.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let levels = self.data.len() / self.n_s;
        if factor == 0 || (levels - 1) % factor != 0 {
            return Err(Error::InvalidArgument(format!("cannot subsample {} steps by {factor}", levels - 1)));
        }
        let data = self.data.chunks(self.n_s).step_by(factor).flatten().copied().collect();
        Ok(Self { data, ..*self })
    }

    #[inline]
    pub fn delta(&self, n: usize, s: f64) -> f64 {
        interpolate(&self.data[n * self.n_s..(n + 1) * self.n_s], self.s_min, self.ds, s)
    }
}

fn coarsen(grid: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 || grid.n_t % factor != 0 {
        return Err(Error::InvalidArgument(format!("cannot subsample {} steps by {factor}", grid.n_t)));
    }
    Ok(Grid { n_t: grid.n_t / factor, ..*grid })
}

fn node_deltas(row: &[f64], ds: f64) -> Vec<f64> {
    let n = row.len();
    let mut d = vec![0.0; n];
    d[0] = (row[1] - row[0]) / ds;
    d[n - 1] = (row[n - 1] - row[n - 2]) / ds;
    for m in 1..n - 1 {
        d[m] = (row[m + 1] - row[m - 1]) / (2.0 * ds);
    }
    d
}

#[inline]
fn interpolate(row: &[f64], s_min: f64, ds: f64, s: f64) -> f64 {
    let n = row.len();
    let x = (s - s_min) / ds;
    if !(x > 0.0) {
        return row[0];
    }
    if x >= (n - 1) as f64 {
        return row[n - 1];
    }
    let m = x as usize;
    let w = x - m as f64;
    row[m] * (1.0 - w) + row[m + 1] * w
}

/// Solves backward from `u(T, .) = g` with Dirichlet rows `g(s_min)`,
/// `g(s_max)`. Each level solves `(I - dt L) u^{n-1} = u^n` with
/// coefficients frozen at `t_{n-1}`; the American flavor then projects onto
/// the obstacle `u >= g`.
pub fn solve<C: LocalVolatility + ?Sized>(
    coefficients: &C,
    payoff: &PutPayoff,
    grid: &Grid,
    flavor: Flavor,
) -> Result<ValueGrid> {
    if let Some((lo, hi)) = coefficients.s_range() {
        let slack = 1e-9 * (hi - lo).abs().max(1.0);
        if grid.s_min < lo - slack || grid.s_max > hi + slack {
            return Err(Error::Solver(format!(
                "grid [{}, {}] not inside coefficient range [{lo}, {hi}]",
                grid.s_min, grid.s_max
            )));
        }
    }
    let ns = grid.n_s;
    let nt = grid.n_t;
    let dt = grid.dt();
    let ds = grid.ds();
    let r = coefficients.rate();
    let nodes: Vec<f64> = (0..ns).map(|m| grid.node(m)).collect();
    let obstacle: Vec<f64> = nodes.iter().map(|&s| payoff.value(s)).collect();

    let mut values = vec![0.0; (nt + 1) * ns];
    values[nt * ns..].copy_from_slice(&obstacle);

    let k = ns - 2;
    let mut lower = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    for n in (1..=nt).rev() {
        let t = grid.time(n - 1);
        for j in 0..k {
            let s = nodes[j + 1];
            let b2 = coefficients.vol_sq(t, s);
            let diffusion = b2 / (2.0 * ds * ds);
            let advection = r * s / (2.0 * ds);
            // Central drift while it keeps the matrix an M-matrix, upwind
            // where the cell Peclet number exceeds one.
            let (lo, up, centre) = if diffusion >= advection.abs() {
                (diffusion - advection, diffusion + advection, r + 2.0 * diffusion)
            } else if advection > 0.0 {
                (diffusion, diffusion + 2.0 * advection, r + 2.0 * diffusion + 2.0 * advection)
            } else {
                (diffusion - 2.0 * advection, diffusion, r + 2.0 * diffusion - 2.0 * advection)
            };
            lower[j] = -dt * lo;
            upper[j] = -dt * up;
            diag[j] = 1.0 + dt * centre;
            if !(diag[j].abs() >= lower[j].abs() + upper[j].abs()) {
                return Err(Error::Solver(format!(
                    "system not diagonally dominant at (t={t}, s={s}, b2={b2})"
                )));
            }
            rhs[j] = values[n * ns + j + 1];
        }
        rhs[0] -= lower[0] * obstacle[0];
        rhs[k - 1] -= upper[k - 1] * obstacle[ns - 1];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch)?;
        let row = &mut values[(n - 1) * ns..n * ns];
        row[0] = obstacle[0];
        row[ns - 1] = obstacle[ns - 1];
        for j in 0..k {
            let u = rhs[j];
            if !u.is_finite() {
                return Err(Error::Solver(format!("non-finite value at level {}", n - 1)));
            }
            row[j + 1] = match flavor {
                Flavor::American => u.max(obstacle[j + 1]),
                Flavor::European => u,
            };
        }
    }
    Ok(ValueGrid { grid: *grid, flavor, payoff: *payoff, values })
}

/// Absolute tolerance on `u - g` for membership in the exercise region.
pub const EXERCISE_TOL: f64 = 1e-9;

/// Upper edge of the discrete exercise region per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseBoundary {
    grid: Grid,
    nodes: Vec<Option<usize>>,
}

impl ExerciseBoundary {
    /// Node index of the boundary at level `n`; `None` if the region is empty.
    pub fn node(&self, n: usize) -> Option<usize> {
        self.nodes[n]
    }

    /// Basket level of the boundary at level `n`.
    pub fn level(&self, n: usize) -> Option<f64> {
        self.nodes[n].map(|m| self.grid.node(m))
    }

    pub fn levels(&self) -> Vec<Option<f64>> {
        (0..self.nodes.len()).map(|n| self.level(n)).collect()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Boundary that never triggers (European exercise at maturity only).
    pub fn empty(grid: Grid) -> Self {
        Self { grid, nodes: vec![None; grid.n_t + 1] }
    }

    /// Boundary at a fixed node for every level.
    pub fn constant(grid: Grid, node: usize) -> Self {
        Self { grid, nodes: vec![Some(node.min(grid.n_s - 1)); grid.n_t + 1] }
    }

    /// The same boundary seen on the coarser grid with `N_t / factor` steps.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let grid = coarsen(&self.grid, factor)?;
        Ok(Self { grid, nodes: self.nodes.iter().step_by(factor).copied().collect() })
    }

    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# t s_boundary")?;
        for n in 0..self.nodes.len() {
            if let Some(s) = self.level(n) {
                writeln!(out, "{:.10e} {:.10e}", self.grid.time(n), s)?;
            }
        }
        Ok(())
    }
}

/// Largest node below the strike (excluding the pinned lower edge) where
/// `u - g <= tol * max(1, |g|)`.
pub fn exercise_boundary(vg: &ValueGrid, tol: f64) -> Result<ExerciseBoundary> {
    if vg.flavor != Flavor::American {
        return Err(Error::InvalidArgument("exercise boundary needs an American value grid".into()));
    }
    let grid = vg.grid;
    let k = vg.payoff.strike();
    let nodes = (0..=grid.n_t)
        .map(|n| {
            let row = vg.level(n);
            (1..grid.n_s).rev().find(|&m| {
                let s = grid.node(m);
                if s >= k {
                    return false;
                }
                let g = vg.payoff.value(s);
                row[m] - g <= tol * g.abs().max(1.0)
            })
        })
        .collect();
    Ok(ExerciseBoundary { grid, nodes })
}
