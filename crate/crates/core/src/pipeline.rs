//! End-to-end runs: project, solve, simulate, and report.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{preset, ExperimentConfig};
use crate::density::Coordinates;
use crate::error::{Error, Result};
use crate::hjb::{exercise_boundary, solve, DeltaTable, ExerciseBoundary, Flavor, FnVolatility, Grid, EXERCISE_TOL};
use crate::mc::{path_functionals, PathFunctionals, simulate_tiers, z_score, PriceBounds, SimulationOptions, StrikeJob, TierJob};
use crate::model::{ModelKind, ModelSpec, Portfolio, PutPayoff};
use crate::oracle::{binned_conditional_vol, binomial_american_put, black_scholes_put, quadrature_projected_vol, BinSpec, QuadratureSpec};
use crate::projection::{bachelier_projected_vol_sq, projected_vol_sq, ProjectionOptions};
use crate::surface::{build_surface, CoefficientSurface, Envelope, SurfaceBuild, SurfaceOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named pass/fail gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Fixed-width table of checks.
pub fn format_checks(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(s, "{tag}  {:width$}  {}", c.name, c.detail).unwrap();
    }
    s
}

/// One strike at one time resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StrikeTier {
    pub strike: f64,
    pub bounds: PriceBounds,
    pub hjb_american: f64,
    pub hjb_european: f64,
}

/// Laplace value against the quadrature oracle at one `(t, s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionCheck {
    pub t: f64,
    pub s: f64,
    pub laplace: f64,
    pub quadrature: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    /// Ordered by (strike, tier).
    pub rows: Vec<StrikeTier>,
    pub projection: Vec<ProjectionCheck>,
    pub checks: Vec<Check>,
    pub surface: CoefficientSurface,
    pub envelope: Envelope,
    /// Exercise boundaries at the finest tier, one per strike.
    pub boundaries: Vec<ExerciseBoundary>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }

    /// Rows at the finest tier.
    pub fn top_tier(&self) -> Vec<&StrikeTier> {
        let top = self.rows.iter().map(|r| r.bounds.n_t).max().unwrap_or(0);
        self.rows.iter().filter(|r| r.bounds.n_t == top).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} (config {}, seed {}, version {})", self.name, &self.config_hash[..12], self.seed, self.version).unwrap();
        for p in &self.projection {
            writeln!(s, "projected vol at (t={}, s={}): laplace {:.4}, quadrature {:.4}", p.t, p.s, p.laplace, p.quadrature).unwrap();
        }
        writeln!(s, "{:>10} {:>6} {:>11} {:>11} {:>11} {:>20} {:>20} {:>9} {:>9} {:>8}", "strike", "n_t", "hjb_am", "hjb_eu", "mc_eu", "lower", "upper", "bias-", "bias+", "gap").unwrap();
        for r in &self.rows {
            let b = &r.bounds;
            let bias = |x: Option<crate::mc::Bias>| x.map_or("-".to_string(), |b| format!("{:.4}", b.value));
            writeln!(
                s,
                "{:>10.2} {:>6} {:>11.5} {:>11.5} {:>11.5} {:>11.5} ± {:<6.4} {:>11.5} ± {:<6.4} {:>9} {:>9} {:>7.3}%",
                r.strike, b.n_t, r.hjb_american, r.hjb_european, b.european, b.a_minus, b.se_minus, b.a_plus, b.se_plus,
                bias(b.bias_minus), bias(b.bias_plus), 100.0 * b.relative_gap()
            )
            .unwrap();
        }
        s.push_str(&format_checks(&self.checks));
        writeln!(s, "{}", if self.passed() { "pass" } else { "FAIL" }).unwrap();
        s
    }

    pub fn write_outputs(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let o = &cfg.outputs;
        write_file(&dir.join("provenance.csv"), |w| {
            writeln!(w, "key,value")?;
            writeln!(w, "name,{}", self.name)?;
            writeln!(w, "config_hash,{}", self.config_hash)?;
            writeln!(w, "seed,{}", self.seed)?;
            writeln!(w, "version,{}", self.version)?;
            Ok(())
        })?;
        write_file(&dir.join("config.ini"), |w| Ok(w.write_all(cfg.serialize().as_bytes())?))?;
        write_file(&dir.join("checks.csv"), |w| {
            writeln!(w, "name,passed,detail")?;
            for c in &self.checks {
                writeln!(w, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"))?;
            }
            Ok(())
        })?;
        if o.csv {
            write_file(&dir.join("bounds.csv"), |w| write_bounds_csv(w, &self.rows))?;
            write_file(&dir.join("convergence.csv"), |w| write_convergence_csv(w, &self.rows))?;
        }
        if o.surface {
            write_file(&dir.join("surface.txt"), |w| self.surface.write_table(w))?;
        }
        if o.plots {
            write_file(&dir.join("envelope.dat"), |w| self.envelope.write_table(w))?;
            let z = z_score(cfg.numerics.ci_level);
            for (k, b) in cfg.strikes.iter().zip(&self.boundaries) {
                write_file(&dir.join(format!("boundary_K{k}.dat")), |w| {
                    writeln!(w, "# t s_boundary 0")?;
                    for n in 0..=b.grid().n_t() {
                        if let Some(s) = b.level(n) {
                            writeln!(w, "{} {} 0", b.grid().time(n), s)?;
                        }
                    }
                    Ok(())
                })?;
                let rows: Vec<&StrikeTier> = self.rows.iter().filter(|r| r.strike == *k).collect();
                for (label, pick) in [
                    ("lower", (|b: &PriceBounds| (b.a_minus, b.se_minus)) as fn(&PriceBounds) -> (f64, f64)),
                    ("upper", |b| (b.a_plus, b.se_plus)),
                    ("european", |b| (b.european, b.se_european)),
                ] {
                    write_file(&dir.join(format!("{label}_K{k}.dat")), |w| {
                        writeln!(w, "# n_t {label} half_width")?;
                        for r in &rows {
                            let (m, se) = pick(&r.bounds);
                            writeln!(w, "{} {} {}", r.bounds.n_t, m, z * se)?;
                        }
                        Ok(())
                    })?;
                }
            }
            write_file(&dir.join("american_prices.dat"), |w| {
                writeln!(w, "# strike midpoint half_interval")?;
                for r in self.top_tier() {
                    let (lo, hi) = r.bounds.interval();
                    writeln!(w, "{} {} {}", r.strike, 0.5 * (lo + hi), 0.5 * (hi - lo))?;
                }
                Ok(())
            })?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn write_bounds_csv<W: Write>(w: &mut W, rows: &[StrikeTier]) -> Result<()> {
    writeln!(w, "strike,n_t,paths,ci_level,european,se_european,a_minus,se_minus,a_plus,se_plus,ci_lo,ci_hi,bias_minus,se_bias_minus,bias_plus,se_bias_plus,hjb_american,hjb_european,relative_gap")?;
    for r in rows {
        let b = &r.bounds;
        let (lo, hi) = b.interval();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strike, b.n_t, b.paths, b.ci_level, b.european, b.se_european, b.a_minus, b.se_minus, b.a_plus, b.se_plus,
            lo, hi,
            opt_num(b.bias_minus.map(|x| x.value)), opt_num(b.bias_minus.map(|x| x.se)),
            opt_num(b.bias_plus.map(|x| x.value)), opt_num(b.bias_plus.map(|x| x.se)),
            r.hjb_american, r.hjb_european, b.relative_gap()
        )?;
    }
    Ok(())
}

pub fn write_convergence_csv<W: Write>(w: &mut W, rows: &[StrikeTier]) -> Result<()> {
    writeln!(w, "strike,n_t,paths,a_minus,se_minus,a_plus,se_plus,bias_minus,bias_plus")?;
    for r in rows {
        let b = &r.bounds;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.strike, b.n_t, b.paths, b.a_minus, b.se_minus, b.a_plus, b.se_plus,
            opt_num(b.bias_minus.map(|x| x.value)), opt_num(b.bias_plus.map(|x| x.value))
        )?;
    }
    Ok(())
}

/// Builds the coefficient surface for a config.
pub fn surface(cfg: &ExperimentConfig) -> Result<SurfaceBuild> {
    let model = cfg.model_spec()?;
    let p = cfg.portfolio()?;
    build_surface(&model, &p, &cfg.surface_options()).map_err(|e| e.in_stage("surface"))
}

struct Solved {
    boundary: ExerciseBoundary,
    deltas: DeltaTable,
    american: f64,
    european: f64,
    obstacle_ok: bool,
}

/// Full pipeline. When `out_dir` is given, each stage's files are written
/// as soon as the stage completes.
pub fn run(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    let model = cfg.model_spec()?;
    let p = cfg.portfolio()?;
    let payoffs = cfg.payoffs()?;
    let n = &cfg.numerics;
    let s0 = p.weights().dot(model.x0());

    let build = build_surface(&model, &p, &cfg.surface_options()).map_err(|e| e.in_stage("surface"))?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        if cfg.outputs.surface {
            write_file(&dir.join("surface.txt"), |w| build.surface.write_table(w))?;
        }
    }
    let surf = &build.surface;
    let frame = *surf.frame();

    let mut projection = Vec::new();
    if model.dim() == 2 && model.kind() == ModelKind::BlackScholes {
        let t = model.maturity();
        let laplace = projected_vol_sq(&model, &p, t, s0, &cfg.projection_options()).map_err(|e| e.in_stage("projection"))?;
        let quadrature = quadrature_projected_vol(&model, &p, t, s0, &QuadratureSpec::default()).map_err(|e| e.in_stage("oracle"))?;
        projection.push(ProjectionCheck { t, s: s0, laplace, quadrature });
    }

    let jobs: Vec<(usize, usize)> = (0..n.tiers.len()).flat_map(|i| (0..payoffs.len()).map(move |j| (i, j))).collect();
    let solved: Vec<Solved> = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<Solved> {
            let grid = Grid::coupled(n.tiers[i], n.coupling, frame.s_min, frame.s_max, model.maturity())?;
            let g = &payoffs[j];
            let am = solve(surf, g, &grid, Flavor::American)?;
            let eu = solve(surf, g, &grid, Flavor::European)?;
            let obstacle_ok = (0..=grid.n_t()).all(|k| {
                let row = am.level(k);
                row[0] == g.value(grid.s_min())
                    && row[grid.n_s() - 1] == g.value(grid.s_max())
                    && (0..grid.n_s()).all(|m| row[m] - g.value(grid.node(m)) >= -1e-12)
            });
            Ok(Solved {
                boundary: exercise_boundary(&am, EXERCISE_TOL)?,
                deltas: am.delta_table(),
                american: am.value_at(0.0, s0)?,
                european: eu.value_at(0.0, s0)?,
                obstacle_ok,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("hjb"))?;
    let at = |i: usize, j: usize| &solved[i * payoffs.len() + j];

    let tiers: Vec<TierJob> = (0..n.tiers.len())
        .map(|i| TierJob {
            n_t: n.tiers[i],
            strikes: (0..payoffs.len())
                .map(|j| StrikeJob { payoff: payoffs[j], boundary: &at(i, j).boundary, deltas: &at(i, j).deltas })
                .collect(),
        })
        .collect();
    let opts = SimulationOptions { paths: n.paths, seed: n.seed, ci_level: n.ci_level };
    let bounds = simulate_tiers(&model, &p, &tiers, &opts).map_err(|e| e.in_stage("mc"))?;

    let mut rows = Vec::new();
    for j in 0..payoffs.len() {
        for i in 0..n.tiers.len() {
            rows.push(StrikeTier {
                strike: payoffs[j].strike(),
                bounds: bounds[i][j].clone(),
                hjb_american: at(i, j).american,
                hjb_european: at(i, j).european,
            });
        }
    }

    let mut checks = Vec::new();
    let ordered = rows.iter().filter(|r| !r.bounds.is_ordered()).count();
    checks.push(Check::new("bounds ordered", ordered == 0, format!("{ordered} of {} rows violate A- <= A+ + z(se- + se+)", rows.len())));
    checks.push(Check::new("obstacle and dirichlet rows", solved.iter().all(|s| s.obstacle_ok), "u_A >= g, edges pinned to g"));
    let dom = rows.iter().filter(|r| r.hjb_american < r.hjb_european - 1e-10).count();
    checks.push(Check::new("hjb american >= european", dom == 0, format!("{dom} violations")));
    for pc in &projection {
        let rel = ((pc.laplace - pc.quadrature) / pc.quadrature).abs();
        checks.push(Check::new("laplace vs quadrature", rel < 1e-3, format!("relative difference {rel:.2e}")));
    }
    if model.kind() == ModelKind::Bachelier {
        let exact = bachelier_projected_vol_sq(&model, &p);
        let dev = surface_deviation(surf, exact);
        checks.push(Check::new("bachelier surface exact", dev <= 1e-12 * exact, format!("max deviation {dev:e}")));
        let z = 3.0;
        for r in rows.iter().filter(|r| r.bounds.n_t == *n.tiers.last().unwrap()) {
            let b = &r.bounds;
            let eu_ok = (b.european - r.hjb_european).abs() <= z * b.se_european;
            checks.push(Check::new(
                format!("bachelier european K={}", r.strike),
                eu_ok,
                format!("mc {:.5} ± {:.5} vs hjb {:.5}", b.european, b.se_european, r.hjb_european),
            ));
            let br = b.a_minus - z * b.se_minus <= r.hjb_american && r.hjb_american <= b.a_plus + z * b.se_plus;
            checks.push(Check::new(
                format!("bachelier bracket K={}", r.strike),
                br,
                format!("[{:.5}, {:.5}] vs hjb {:.5}", b.a_minus, b.a_plus, r.hjb_american),
            ));
        }
    }

    let report = RunReport {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: n.seed,
        version: VERSION,
        rows,
        projection,
        checks,
        envelope: build.envelope.clone(),
        surface: build.surface,
        boundaries: (0..payoffs.len()).map(|j| at(n.tiers.len() - 1, j).boundary.clone()).collect(),
    };
    if let Some(dir) = out_dir {
        report.write_outputs(dir, cfg)?;
    }
    Ok(report)
}

/// Largest `|eval - c|` over a 101 x 101 lattice of the rectangle.
pub fn surface_deviation(surface: &CoefficientSurface, c: f64) -> f64 {
    let f = surface.frame();
    let mut worst: f64 = 0.0;
    for i in 0..=100 {
        for j in 0..=100 {
            let t = f.maturity * i as f64 / 100.0;
            let s = f.s_min + (f.s_max - f.s_min) * j as f64 / 100.0;
            worst = worst.max((surface.eval(t, s).map(|v| v.1).unwrap_or(f64::NAN) - c).abs());
        }
    }
    worst
}

/// Decay rate of `bias ~ N^-slope`, per bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Slopes {
    pub strike: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub run: RunReport,
    /// Price-bound bias slopes (diagnostic).
    pub slopes: Vec<Slopes>,
    pub forward: Vec<ForwardBias>,
    pub checks: Vec<Check>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.run.passed() && all_passed(&self.checks)
    }

    pub fn summary(&self) -> String {
        let mut s = self.run.summary();
        let f = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.3}"));
        for sl in &self.slopes {
            writeln!(s, "K={}: price bias decay slope lower {}, upper {}", sl.strike, f(sl.lower), f(sl.upper)).unwrap();
        }
        for fb in &self.forward {
            writeln!(s, "K={}: forward bias slope hitting time {}, maximum {}", fb.strike, f(fb.slope_hitting), f(fb.slope_maximum)).unwrap();
        }
        s.push_str(&format_checks(&self.checks));
        s
    }
}

/// Least-squares slope of `-log(bias)` against `log(N)`; `None` when fewer
/// than two biases are available or any of them is not positive.
pub fn decay_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Runs every tier and fits the bias decay per strike.
pub fn convergence(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ConvergenceReport> {
    if cfg.numerics.tiers.len() < 3 {
        return Err(Error::Config("convergence needs at least three tiers".into()));
    }
    let run = run(cfg, out_dir)?;
    let slopes: Vec<Slopes> = cfg
        .strikes
        .iter()
        .map(|&k| {
            let rows: Vec<&StrikeTier> = run.rows.iter().filter(|r| r.strike == k).collect();
            let pts = |f: fn(&PriceBounds) -> Option<crate::mc::Bias>| -> Vec<(usize, f64)> {
                rows.iter().filter_map(|r| f(&r.bounds).map(|b| (r.bounds.n_t, b.value))).collect()
            };
            Slopes { strike: k, lower: decay_slope(&pts(|b| b.bias_minus)), upper: decay_slope(&pts(|b| b.bias_plus)) }
        })
        .collect();
    let forward = forward_bias(cfg, &run.boundaries)?;
    let (lo, hi) = FORWARD_SLOPE_RANGE;
    let in_range = |x: Option<f64>| x.is_some_and(|v| (lo..=hi).contains(&v));
    let f = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    let checks: Vec<Check> = forward
        .iter()
        .map(|fb| Check {
            name: format!("forward bias order K={}", fb.strike),
            passed: in_range(fb.slope_hitting) && in_range(fb.slope_maximum),
            detail: format!("hitting {}, maximum {} (window [{lo}, {hi}])", f(fb.slope_hitting), f(fb.slope_maximum)),
        })
        .collect();
    if let Some(dir) = out_dir {
        write_file(&dir.join("slopes.csv"), |w| {
            writeln!(w, "strike,slope_lower,slope_upper,slope_hitting,slope_maximum")?;
            for (s, fb) in slopes.iter().zip(&forward) {
                writeln!(w, "{},{},{},{},{}", s.strike, opt_num(s.lower), opt_num(s.upper), opt_num(fb.slope_hitting), opt_num(fb.slope_maximum))?;
            }
            Ok(())
        })?;
        write_file(&dir.join("forward_bias.csv"), |w| {
            writeln!(w, "strike,n_t,hitting_time,se_hitting,maximum,se_maximum,bias_hitting,se_bias_hitting,bias_maximum,se_bias_maximum")?;
            for fb in &forward {
                for t in &fb.tiers {
                    let b = |x: Option<crate::mc::Bias>| (opt_num(x.map(|b| b.value)), opt_num(x.map(|b| b.se)));
                    let (bh, sbh) = b(t.bias_hitting);
                    let (bm, sbm) = b(t.bias_maximum);
                    writeln!(w, "{},{},{},{},{},{},{bh},{sbh},{bm},{sbm}", fb.strike, t.n_t, t.hitting_time.mean, t.hitting_time.se, t.maximum.mean, t.maximum.se)?;
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("convergence_checks.csv"), |w| {
            writeln!(w, "name,passed,detail")?;
            for c in &checks {
                writeln!(w, "{},{},\"{}\"", c.name, c.passed, c.detail)?;
            }
            Ok(())
        })?;
    }
    Ok(ConvergenceReport { run, slopes, forward, checks })
}

/// Forward-simulation bias of the hitting time and running maximum, with
/// the exercise boundary frozen from the finest tier's solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBias {
    pub strike: f64,
    pub tiers: Vec<PathFunctionals>,
    pub slope_hitting: Option<f64>,
    pub slope_maximum: Option<f64>,
}

/// Simulates the path functionals on every tier, each boundary frozen from
/// the finest solve and subsampled to the tier's grid.
pub fn forward_bias(cfg: &ExperimentConfig, boundaries: &[ExerciseBoundary]) -> Result<Vec<ForwardBias>> {
    let model = cfg.model_spec()?;
    let p = cfg.portfolio()?;
    let n = &cfg.numerics;
    boundaries
        .iter()
        .zip(&cfg.strikes)
        .map(|(reference, &strike)| {
            let fine = reference.grid().n_t();
            if n.tiers.iter().any(|&t| t == 0 || fine % t != 0) {
                return Err(Error::Config("tiers must divide the finest tier".into()));
            }
            let bs = n.tiers.iter().map(|&t| reference.subsample(fine / t)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ExerciseBoundary> = bs.iter().collect();
            let tiers = path_functionals(&model, &p, &refs, n.paths, n.seed).map_err(|e| e.in_stage("mc"))?;
            let pts = |f: fn(&PathFunctionals) -> Option<crate::mc::Bias>| -> Vec<(usize, f64)> {
                tiers.iter().filter_map(|t| f(t).map(|b| (t.n_t, b.value))).collect()
            };
            Ok(ForwardBias {
                strike,
                slope_hitting: decay_slope(&pts(|t| t.bias_hitting)),
                slope_maximum: decay_slope(&pts(|t| t.bias_maximum)),
                tiers,
            })
        })
        .collect()
}

/// Slope window for the forward bias $N_t^{-1/2}$ decay.
pub const FORWARD_SLOPE_RANGE: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Overrides the volatility floor of the one-dimensional solver check.
    pub floor: Option<f64>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 1, floor: None }
    }
}

/// Oracle cross-checks and invariant suites; failures are reported, not
/// raised.
pub fn validate(opts: &ValidateOptions) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, r: Result<(bool, String)>| {
        checks.push(match r {
            Ok((ok, detail)) => Check::new(name, ok, detail),
            Err(e) => Check::new(name, false, format!("error: {e}")),
        })
    };
    push("two-asset laplace", check_sum2d());
    push("one-dimensional hjb vs oracles", check_one_dimensional(opts.floor));
    push("binned vs surface", check_binned(opts.seed));
    push("bachelier exactness", check_bachelier(opts.seed));
    push("monte carlo invariants", check_mc_invariants(opts.seed));
    checks
}

fn sum2d_model() -> Result<(ModelSpec, Portfolio)> {
    let cfg = preset("sum2d")?;
    Ok((cfg.model_spec()?, cfg.portfolio()?))
}

fn check_sum2d() -> Result<(bool, String)> {
    let (m, p) = sum2d_model()?;
    let lp = projected_vol_sq(&m, &p, 1.0, 200.0, &ProjectionOptions::default())?;
    let pr = projected_vol_sq(&m, &p, 1.0, 200.0, &ProjectionOptions { coordinates: Some(Coordinates::Price), ..Default::default() })?;
    let q = quadrature_projected_vol(&m, &p, 1.0, 200.0, &QuadratureSpec::default())?;
    let ok = (lp - 200.99).abs() <= 0.05 && (q - 200.98).abs() <= 0.02 && ((lp - pr) / pr).abs() <= 1e-3;
    Ok((ok, format!("laplace {lp:.4} (price coords {pr:.4}), quadrature {q:.4}")))
}

fn check_one_dimensional(floor: Option<f64>) -> Result<(bool, String)> {
    let (sigma, r, k, t) = (0.2, 0.05, 100.0, 0.5);
    let floor = floor.unwrap_or(0.0);
    let coeff = FnVolatility { rate: r, vol_sq: move |_, s: f64| (sigma * sigma * s * s).max(floor) };
    let grid = Grid::new(1024, 801, 0.0, 400.0, t)?;
    let g = PutPayoff::new(k)?;
    let am = solve(&coeff, &g, &grid, Flavor::American)?.value_at(0.0, 100.0)?;
    let eu = solve(&coeff, &g, &grid, Flavor::European)?.value_at(0.0, 100.0)?;
    let tree = binomial_american_put(100.0, sigma, r, k, t, 10_000)?;
    let exact = black_scholes_put(100.0, k, r, sigma, t).0;
    let (ea, ee) = ((am - tree).abs() / tree, (eu - exact).abs() / exact);
    let ok = ea <= 5e-3 && ee <= 2e-3 && am >= eu;
    Ok((ok, format!("american {am:.5} vs tree {tree:.5} ({:.3}%), european {eu:.5} vs closed form {exact:.5} ({:.3}%)", 100.0 * ea, 100.0 * ee)))
}

fn check_binned(seed: u64) -> Result<(bool, String)> {
    let (m, p) = sum2d_model()?;
    let bins = BinSpec { count: 9, range: Some((173.0, 227.0)), min_samples: 50 };
    let out = binned_conditional_vol(&m, &p, 1.0, 200_000, &bins, seed)?;
    let mut worst: f64 = 0.0;
    for b in &out {
        let lap = projected_vol_sq(&m, &p, 1.0, b.s_mean, &ProjectionOptions::default())?;
        worst = worst.max((b.estimate - lap).abs() / (3.0 * b.se + 1e-3 * lap));
    }
    Ok((worst <= 1.0 && !out.is_empty(), format!("{} bins, worst |binned - laplace| / (3 se + 0.1%) = {worst:.3}", out.len())))
}

fn check_bachelier(seed: u64) -> Result<(bool, String)> {
    let mut cfg = preset("bachelier-exact")?;
    cfg.numerics.seed = seed;
    let m = cfg.model_spec()?;
    let p = cfg.portfolio()?;
    let build = build_surface(&m, &p, &SurfaceOptions { seed, ..cfg.surface_options() })?;
    let exact = bachelier_projected_vol_sq(&m, &p);
    let dev = surface_deviation(&build.surface, exact);
    Ok((dev <= 1e-12 * exact, format!("constant {exact:.6}, max deviation {dev:e}")))
}

fn check_mc_invariants(seed: u64) -> Result<(bool, String)> {
    let m = ModelSpec::new(ModelKind::BlackScholes, 0.05, nalgebra::dmatrix![0.2], DVector::from_element(1, 100.0), 0.5)?;
    let p = Portfolio::new(vec![1.0])?;
    let coeff = FnVolatility { rate: 0.05, vol_sq: |_, s: f64| 0.04 * s * s };
    let grid = Grid::coupled(256, 16.0, 0.0, 300.0, 0.5)?;
    let g = PutPayoff::new(100.0)?;
    let am = solve(&coeff, &g, &grid, Flavor::American)?;
    let boundary = exercise_boundary(&am, EXERCISE_TOL)?;
    let deltas = am.delta_table();
    let opts = SimulationOptions { paths: 5000, seed, ci_level: 0.95 };
    let once = || {
        let job = StrikeJob { payoff: g, boundary: &boundary, deltas: &deltas };
        simulate_tiers(&m, &p, &[TierJob { n_t: 256, strikes: vec![job] }], &opts)
    };
    let a = once()?;
    let b = once()?;
    let bounds = &a[0][0];
    let ok = a == b && bounds.is_ordered();
    Ok((ok, format!("rerun identical: {}, A- {:.4} <= A+ {:.4}", a == b, bounds.a_minus, bounds.a_plus)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit() {
        let pts: Vec<(usize, f64)> = [512usize, 1024, 2048].iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((decay_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(decay_slope(&[(512, 0.0), (1024, 0.0)]), None);
        assert_eq!(decay_slope(&[(512, 1.0)]), None);
    }

    #[test]
    fn check_table() {
        let c = vec![Check::new("a", true, "fine"), Check::new("longer", false, "bad")];
        let t = format_checks(&c);
        assert!(t.contains("PASS  a       fine") && t.contains("FAIL  longer  bad"));
        assert!(!all_passed(&c));
    }
}
