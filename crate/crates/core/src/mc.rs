//! Forward-Euler path simulation and the hitting-time / dual-martingale
//! price bounds.

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hjb::{DeltaTable, ExerciseBoundary, ValueGrid};
use crate::model::{ModelKind, ModelSpec, Portfolio, PutPayoff};

/// Paths per work unit. Partial sums are merged in block order, so results
/// do not depend on the number of threads.
pub const BLOCK: usize = 256;

/// Per-path Gaussian stream. Path `i` under seed `s` is ChaCha8 stream `i`
/// keyed by `s`; each step consumes a fixed number of words, so any step can
/// be reached directly.
pub struct PathRng {
    inner: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path);
        Self { inner }
    }

    /// Generator positioned at the first draw of `step` for `k` factors.
    pub fn at_step(seed: u64, path: u64, step: u64, k: usize) -> Self {
        let mut rng = Self::new(seed, path);
        rng.inner.set_word_pos(step as u128 * words_per_step(k) as u128);
        rng
    }

    /// Fills `out` with independent standard normals (one step's worth).
    pub fn normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.box_muller();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.box_muller().0;
        }
    }

    fn box_muller(&mut self) -> (f64, f64) {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.inner.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        (r * cos, r * sin)
    }
}

/// 32-bit words consumed per step with `k` Wiener factors.
pub fn words_per_step(k: usize) -> usize {
    4 * k.div_ceil(2)
}

/// Euler stepper with the loadings flattened for the inner loop.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: ModelKind,
    rate: f64,
    d: usize,
    k: usize,
    sigma: Vec<f64>,
}

impl Stepper {
    pub fn new(model: &ModelSpec) -> Self {
        let (d, k) = (model.dim(), model.factors());
        let s = model.sigma();
        let sigma = (0..d).flat_map(|i| (0..k).map(move |j| s[(i, j)])).collect();
        Self { kind: model.kind(), rate: model.rate(), d, k, sigma }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn factors(&self) -> usize {
        self.k
    }

    /// Writes `b(x) dW` into `incr` without moving `x`.
    #[inline]
    pub fn diffusion_increment(&self, x: &[f64], dw: &[f64], incr: &mut [f64]) {
        for i in 0..self.d {
            let row = &self.sigma[i * self.k..(i + 1) * self.k];
            let e: f64 = row.iter().zip(dw).map(|(a, b)| a * b).sum();
            incr[i] = match self.kind {
                ModelKind::Bachelier => e,
                ModelKind::BlackScholes => x[i] * e,
            };
        }
    }

    /// `x <- x + r x dt + incr`, absorbing Black-Scholes states at 0.
    #[inline]
    pub fn apply(&self, x: &mut [f64], dt: f64, incr: &[f64]) {
        let growth = 1.0 + self.rate * dt;
        for (xi, e) in x.iter_mut().zip(incr) {
            *xi = *xi * growth + e;
            if self.kind == ModelKind::BlackScholes && *xi < 0.0 {
                *xi = 0.0;
            }
        }
    }
}

/// One Euler step `x + r x dt + b(x) dW`.
pub fn step(model: &ModelSpec, x: &DVector<f64>, dt: f64, dw: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(x.len())?;
    if dw.len() != model.factors() {
        return Err(Error::Dimension { expected: model.factors(), got: dw.len() });
    }
    let stepper = Stepper::new(model);
    let mut out = x.as_slice().to_vec();
    let mut incr = vec![0.0; x.len()];
    stepper.diffusion_increment(&out, dw.as_slice(), &mut incr);
    stepper.apply(&mut out, dt, &incr);
    Ok(DVector::from_vec(out))
}

pub fn discounted_payoff(payoff: &PutPayoff, r: f64, t: f64, s: f64) -> f64 {
    (-r * t).exp() * payoff.value(s)
}

/// Gaussian CLT interval `mean -/+ z se`.
pub fn confidence_interval(mean: f64, se: f64, level: f64) -> (f64, f64) {
    let z = z_score(level);
    (mean - z * se, mean + z * se)
}

pub fn z_score(level: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 * (1.0 + level))
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let m = n as f64;
        let mean = sum / m;
        let var = if n > 1 { ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
        Self { mean, se: (var / m).sqrt() }
    }
}

/// Estimated forward-discretization bias `|A(2N) - A(N)|` and the standard
/// error of the difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bias {
    pub value: f64,
    pub se: f64,
}

/// Lower/upper bound estimates for one strike at one time resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBounds {
    pub a_minus: f64,
    pub se_minus: f64,
    pub a_plus: f64,
    pub se_plus: f64,
    /// European price from the same paths (exercise at maturity).
    pub european: f64,
    pub se_european: f64,
    pub ci_level: f64,
    pub n_t: usize,
    pub paths: usize,
    pub bias_minus: Option<Bias>,
    pub bias_plus: Option<Bias>,
}

impl PriceBounds {
    /// `[A- - z se-, A+ + z se+]`.
    pub fn interval(&self) -> (f64, f64) {
        let z = z_score(self.ci_level);
        (self.a_minus - z * self.se_minus, self.a_plus + z * self.se_plus)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a_minus + self.a_plus)
    }

    /// `(A+ - A-) / midpoint`.
    pub fn relative_gap(&self) -> f64 {
        (self.a_plus - self.a_minus) / self.midpoint()
    }

    /// `A- <= A+ + z (se- + se+)`.
    pub fn is_ordered(&self) -> bool {
        self.a_minus <= self.a_plus + z_score(self.ci_level) * (self.se_minus + self.se_plus)
    }
}

/// Fresh-seed bias diagnostic `|A(2N) - A(N)|` for both bounds.
pub fn bias_estimate(coarse: &PriceBounds, fine: &PriceBounds) -> (Bias, Bias) {
    let b = |a: f64, sa: f64, c: f64, sc: f64| Bias { value: (c - a).abs(), se: sa.hypot(sc) };
    (
        b(coarse.a_minus, coarse.se_minus, fine.a_minus, fine.se_minus),
        b(coarse.a_plus, coarse.se_plus, fine.a_plus, fine.se_plus),
    )
}

/// Stopping rule and martingale for one strike on one time grid.
pub struct StrikeJob<'a> {
    pub payoff: PutPayoff,
    pub boundary: &'a ExerciseBoundary,
    pub deltas: &'a DeltaTable,
}

/// All strikes simulated at one time resolution.
pub struct TierJob<'a> {
    pub n_t: usize,
    pub strikes: Vec<StrikeJob<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub paths: usize,
    pub seed: u64,
    pub ci_level: f64,
}

/// Simulates every tier on one batch of Brownian paths. Coarse tiers use
/// aggregated increments of the finest tier, so consecutive tiers are
/// coupled and the bias of each tier `N` against the next tier `2N` is the
/// mean of per-path differences. Results are indexed `[tier][strike]`.
pub fn simulate_tiers(
    model: &ModelSpec,
    p: &Portfolio,
    tiers: &[TierJob<'_>],
    opts: &SimulationOptions,
) -> Result<Vec<Vec<PriceBounds>>> {
    model.check_dim(p.dim())?;
    if tiers.is_empty() || opts.paths < 2 {
        return Err(Error::InvalidArgument("need at least one tier and two paths".into()));
    }
    let fine = tiers.iter().map(|t| t.n_t).max().unwrap();
    let n_strikes = tiers[0].strikes.len();
    for tier in tiers {
        if tier.n_t == 0 || fine % tier.n_t != 0 {
            return Err(Error::InvalidArgument(format!("tier {} does not divide {fine}", tier.n_t)));
        }
        if tier.strikes.len() != n_strikes {
            return Err(Error::InvalidArgument("every tier needs the same strikes".into()));
        }
        for job in &tier.strikes {
            let g = job.boundary.grid();
            if g.n_t() != tier.n_t || (g.maturity() - model.maturity()).abs() > 1e-12 * model.maturity() {
                return Err(Error::InvalidArgument("exercise boundary not on the simulation grid".into()));
            }
        }
    }
    let plans: Vec<TierPlan> = tiers.iter().map(|t| TierPlan::new(model, t, fine)).collect();
    let layout = Layout { tiers: tiers.len(), strikes: n_strikes };
    let kernel = Kernel { stepper: Stepper::new(model), weights: p.weights().as_slice(), x0: model.x0().as_slice(), fine, plans: &plans, tiers, layout, seed: opts.seed };

    let n_blocks = opts.paths.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| kernel.block(b * BLOCK, ((b + 1) * BLOCK).min(opts.paths)))
        .collect();
    let mut total = vec![0.0; layout.len()];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }

    let m = opts.paths;
    let mut out = Vec::with_capacity(tiers.len());
    for (ti, tier) in tiers.iter().enumerate() {
        let mut row = Vec::with_capacity(n_strikes);
        for j in 0..n_strikes {
            let est = |q: usize| {
                let o = layout.stat(ti, j, q);
                Estimate::from_sums(total[o], total[o + 1], m)
            };
            let bias = |q: usize| {
                (ti + 1 < tiers.len()).then(|| {
                    let o = layout.diff(ti, j, q);
                    let e = Estimate::from_sums(total[o], total[o + 1], m);
                    Bias { value: e.mean.abs(), se: e.se }
                })
            };
            let (lo, up, eu) = (est(0), est(1), est(2));
            row.push(PriceBounds {
                a_minus: lo.mean,
                se_minus: lo.se,
                a_plus: up.mean,
                se_plus: up.se,
                european: eu.mean,
                se_european: eu.se,
                ci_level: opts.ci_level,
                n_t: tier.n_t,
                paths: m,
                bias_minus: bias(0),
                bias_plus: bias(1),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Bounds for several strikes at a single time resolution.
pub fn price_bounds(
    model: &ModelSpec,
    p: &Portfolio,
    tier: TierJob<'_>,
    opts: &SimulationOptions,
) -> Result<Vec<PriceBounds>> {
    Ok(simulate_tiers(model, p, std::slice::from_ref(&tier), opts)?.remove(0))
}

/// Hitting-time lower bound alone.
pub fn lower_bound(
    model: &ModelSpec,
    p: &Portfolio,
    payoff: &PutPayoff,
    boundary: &ExerciseBoundary,
    paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let deltas = DeltaTable::zeros(boundary.grid());
    let job = StrikeJob { payoff: *payoff, boundary, deltas: &deltas };
    let tier = TierJob { n_t: boundary.grid().n_t(), strikes: vec![job] };
    let b = &price_bounds(model, p, tier, &SimulationOptions { paths, seed, ci_level: 0.95 })?[0];
    Ok(Estimate { mean: b.a_minus, se: b.se_minus })
}

/// Dual-martingale upper bound alone, with the martingale built from the
/// finite-difference delta of `vg`.
pub fn upper_bound(
    model: &ModelSpec,
    p: &Portfolio,
    payoff: &PutPayoff,
    vg: &ValueGrid,
    paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let deltas = vg.delta_table();
    let boundary = ExerciseBoundary::empty(*vg.grid());
    let job = StrikeJob { payoff: *payoff, boundary: &boundary, deltas: &deltas };
    let tier = TierJob { n_t: vg.grid().n_t(), strikes: vec![job] };
    let b = &price_bounds(model, p, tier, &SimulationOptions { paths, seed, ci_level: 0.95 })?[0];
    Ok(Estimate { mean: b.a_plus, se: b.se_plus })
}

/// Path functionals of the basket at one time resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFunctionals {
    pub n_t: usize,
    /// First grid time with basket value at or below the boundary (`T` if
    /// never reached).
    pub hitting_time: Estimate,
    /// Maximum of the basket over the grid times.
    pub maximum: Estimate,
    /// Coupled difference against the next tier.
    pub bias_hitting: Option<Bias>,
    pub bias_maximum: Option<Bias>,
}

/// Expected hitting time of the exercise region and expected running
/// maximum of the basket, on coupled tiers (each boundary must live on the
/// grid of its tier).
pub fn path_functionals(
    model: &ModelSpec,
    p: &Portfolio,
    boundaries: &[&ExerciseBoundary],
    paths: usize,
    seed: u64,
) -> Result<Vec<PathFunctionals>> {
    model.check_dim(p.dim())?;
    if boundaries.is_empty() || paths < 2 {
        return Err(Error::InvalidArgument("need at least one tier and two paths".into()));
    }
    let tiers: Vec<usize> = boundaries.iter().map(|b| b.grid().n_t()).collect();
    let fine = *tiers.iter().max().unwrap();
    if tiers.iter().any(|n| fine % n != 0) {
        return Err(Error::InvalidArgument("tiers must divide the finest tier".into()));
    }
    let stepper = Stepper::new(model);
    let (d, k) = (stepper.d, stepper.k);
    let w = p.weights().as_slice();
    let x0 = model.x0().as_slice();
    let maturity = model.maturity();
    let sqrt_fine = (maturity / fine as f64).sqrt();
    let levels: Vec<Vec<f64>> =
        boundaries.iter().map(|b| b.levels().into_iter().map(|l| l.unwrap_or(f64::NEG_INFINITY)).collect()).collect();
    let nt = tiers.len();
    // Per tier: (sum, sq) of hitting time and maximum; per pair: same for differences.
    let len = nt * 4 + nt.saturating_sub(1) * 4;
    let block = |start: usize, end: usize| -> Vec<f64> {
        let mut acc = vec![0.0; len];
        let mut normals = vec![0.0; fine * k];
        let mut x = vec![0.0; d];
        let mut dw = vec![0.0; k];
        let mut incr = vec![0.0; d];
        let mut res = vec![[0.0; 2]; nt];
        for path in start..end {
            let mut rng = PathRng::new(seed, path as u64);
            for chunk in normals.chunks_exact_mut(k) {
                rng.normals(chunk);
            }
            for (ti, &n_t) in tiers.iter().enumerate() {
                let ratio = fine / n_t;
                let dt = maturity / n_t as f64;
                x.copy_from_slice(x0);
                let mut hit = None;
                let mut max = f64::NEG_INFINITY;
                for n in 0..=n_t {
                    let s = dot(w, &x);
                    max = max.max(s);
                    if hit.is_none() && s <= levels[ti][n] {
                        hit = Some(n as f64 * dt);
                    }
                    if n == n_t {
                        break;
                    }
                    dw.iter_mut().for_each(|v| *v = 0.0);
                    for f in n * ratio..(n + 1) * ratio {
                        for (a, z) in dw.iter_mut().zip(&normals[f * k..(f + 1) * k]) {
                            *a += z;
                        }
                    }
                    dw.iter_mut().for_each(|v| *v *= sqrt_fine);
                    stepper.diffusion_increment(&x, &dw, &mut incr);
                    stepper.apply(&mut x, dt, &incr);
                }
                res[ti] = [hit.unwrap_or(maturity), max];
            }
            for ti in 0..nt {
                for q in 0..2 {
                    let v = res[ti][q];
                    acc[ti * 4 + 2 * q] += v;
                    acc[ti * 4 + 2 * q + 1] += v * v;
                    if ti + 1 < nt {
                        let diff = res[ti + 1][q] - v;
                        let o = nt * 4 + ti * 4 + 2 * q;
                        acc[o] += diff;
                        acc[o + 1] += diff * diff;
                    }
                }
            }
        }
        acc
    };
    let partials: Vec<Vec<f64>> = (0..paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| block(b * BLOCK, ((b + 1) * BLOCK).min(paths)))
        .collect();
    let mut total = vec![0.0; len];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    Ok((0..nt)
        .map(|ti| {
            let est = |o: usize| Estimate::from_sums(total[o], total[o + 1], paths);
            let bias = |q: usize| {
                (ti + 1 < nt).then(|| {
                    let e = est(nt * 4 + ti * 4 + 2 * q);
                    Bias { value: e.mean.abs(), se: e.se }
                })
            };
            PathFunctionals {
                n_t: tiers[ti],
                hitting_time: est(ti * 4),
                maximum: est(ti * 4 + 2),
                bias_hitting: bias(0),
                bias_maximum: bias(1),
            }
        })
        .collect())
}

/// Per-time min/max of basket values over `paths` Euler paths.
pub fn basket_envelope(
    model: &ModelSpec,
    p: &Portfolio,
    paths: usize,
    n_t: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_dim(p.dim())?;
    if paths == 0 || n_t == 0 {
        return Err(Error::InvalidArgument("envelope needs paths and steps".into()));
    }
    let stepper = Stepper::new(model);
    let w = p.weights().as_slice();
    let dt = model.maturity() / n_t as f64;
    let sqrt_dt = dt.sqrt();
    let (d, k) = (stepper.d, stepper.k);
    let s0 = dot(w, model.x0().as_slice());
    let mut lo = vec![f64::INFINITY; n_t + 1];
    let mut hi = vec![f64::NEG_INFINITY; n_t + 1];
    lo[0] = s0;
    hi[0] = s0;
    let mut x = vec![0.0; d];
    let mut dw = vec![0.0; k];
    let mut incr = vec![0.0; d];
    for path in 0..paths {
        let mut rng = PathRng::new(seed, path as u64);
        x.copy_from_slice(model.x0().as_slice());
        for n in 0..n_t {
            rng.normals(&mut dw);
            dw.iter_mut().for_each(|v| *v *= sqrt_dt);
            stepper.diffusion_increment(&x, &dw, &mut incr);
            stepper.apply(&mut x, dt, &incr);
            let s = dot(w, &x);
            lo[n + 1] = lo[n + 1].min(s);
            hi[n + 1] = hi[n + 1].max(s);
        }
    }
    Ok((lo, hi))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flat accumulator layout: per (tier, strike) three estimators with
/// (sum, sum of squares); per consecutive tier pair and strike two
/// differences.
#[derive(Clone, Copy)]
struct Layout {
    tiers: usize,
    strikes: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.tiers * self.strikes * 6 + self.tiers.saturating_sub(1) * self.strikes * 4
    }
    fn stat(&self, tier: usize, strike: usize, q: usize) -> usize {
        (tier * self.strikes + strike) * 6 + 2 * q
    }
    fn diff(&self, tier: usize, strike: usize, q: usize) -> usize {
        self.tiers * self.strikes * 6 + (tier * self.strikes + strike) * 4 + 2 * q
    }
}

struct TierPlan {
    ratio: usize,
    dt: f64,
    discount: Vec<f64>,
    /// `[strike][n]` boundary levels, `-inf` where there is none.
    levels: Vec<Vec<f64>>,
}

impl TierPlan {
    fn new(model: &ModelSpec, tier: &TierJob<'_>, fine: usize) -> Self {
        let dt = model.maturity() / tier.n_t as f64;
        let r = model.rate();
        Self {
            ratio: fine / tier.n_t,
            dt,
            discount: (0..=tier.n_t).map(|n| (-r * dt * n as f64).exp()).collect(),
            levels: tier
                .strikes
                .iter()
                .map(|j| j.boundary.levels().into_iter().map(|l| l.unwrap_or(f64::NEG_INFINITY)).collect())
                .collect(),
        }
    }
}

struct Kernel<'a> {
    stepper: Stepper,
    weights: &'a [f64],
    x0: &'a [f64],
    fine: usize,
    plans: &'a [TierPlan],
    tiers: &'a [TierJob<'a>],
    layout: Layout,
    seed: u64,
}

impl Kernel<'_> {
    fn block(&self, start: usize, end: usize) -> Vec<f64> {
        let (d, k) = (self.stepper.d, self.stepper.k);
        let n_strikes = self.layout.strikes;
        let mut acc = vec![0.0; self.layout.len()];
        let mut normals = vec![0.0; self.fine * k];
        let mut x = vec![0.0; d];
        let mut dw = vec![0.0; k];
        let mut incr = vec![0.0; d];
        let mut results = vec![[0.0; 3]; self.tiers.len() * n_strikes];
        let mut stopped = vec![None::<f64>; n_strikes];
        let mut mart = vec![0.0; n_strikes];
        let mut best = vec![0.0; n_strikes];
        let sqrt_fine = (self.plans.iter().map(|p| p.dt).fold(f64::INFINITY, f64::min)).sqrt();

        for path in start..end {
            let mut rng = PathRng::new(self.seed, path as u64);
            for chunk in normals.chunks_exact_mut(k) {
                rng.normals(chunk);
            }
            for (ti, (plan, tier)) in self.plans.iter().zip(self.tiers).enumerate() {
                x.copy_from_slice(self.x0);
                stopped.iter_mut().for_each(|v| *v = None);
                mart.iter_mut().for_each(|v| *v = 0.0);
                best.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
                let n_t = tier.n_t;
                for n in 0..=n_t {
                    let s = dot(self.weights, &x);
                    let disc = plan.discount[n];
                    for (j, job) in tier.strikes.iter().enumerate() {
                        let z = disc * job.payoff.value(s);
                        best[j] = best[j].max(z - mart[j]);
                        if stopped[j].is_none() && (n == n_t || s <= plan.levels[j][n]) {
                            stopped[j] = Some(z);
                        }
                    }
                    if n == n_t {
                        for j in 0..n_strikes {
                            let z = disc * tier.strikes[j].payoff.value(s);
                            results[ti * n_strikes + j] = [stopped[j].unwrap(), best[j], z];
                        }
                        break;
                    }
                    dw.iter_mut().for_each(|v| *v = 0.0);
                    for f in n * plan.ratio..(n + 1) * plan.ratio {
                        for (a, z) in dw.iter_mut().zip(&normals[f * k..(f + 1) * k]) {
                            *a += z;
                        }
                    }
                    dw.iter_mut().for_each(|v| *v *= sqrt_fine);
                    self.stepper.diffusion_increment(&x, &dw, &mut incr);
                    let ds = dot(self.weights, &incr);
                    for (j, job) in tier.strikes.iter().enumerate() {
                        mart[j] += disc * job.deltas.delta(n, s) * ds;
                    }
                    self.stepper.apply(&mut x, plan.dt, &incr);
                }
            }
            for ti in 0..self.tiers.len() {
                for j in 0..n_strikes {
                    let r = results[ti * n_strikes + j];
                    for q in 0..3 {
                        let o = self.layout.stat(ti, j, q);
                        acc[o] += r[q];
                        acc[o + 1] += r[q] * r[q];
                    }
                    if ti + 1 < self.tiers.len() {
                        let next = results[(ti + 1) * n_strikes + j];
                        for q in 0..2 {
                            let diff = next[q] - r[q];
                            let o = self.layout.diff(ti, j, q);
                            acc[o] += diff;
                            acc[o + 1] += diff * diff;
                        }
                    }
                }
            }
        }
        acc
    }
}
