//! Pilot envelope, per-slice polynomial fit of the projected volatility,
//! and the floored coefficient surface used by the one-dimensional solver.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::LocalVolatility;
use crate::linalg::Cholesky;
use crate::mc::basket_envelope;
use crate::model::{ModelKind, ModelSpec, Portfolio};
use crate::projection::{bachelier_projected_vol_sq, projected_vol_sq, ProjectionOptions};

/// Per-time range of pilot basket values.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Envelope {
    /// Envelope at the pilot time closest to `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let n = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(n, _)| n)
            .unwrap_or(0);
        (self.lower[n], self.upper[n])
    }

    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# t s_lower s_upper")?;
        for n in 0..self.times.len() {
            writeln!(out, "{:.10e} {:.10e} {:.10e}", self.times[n], self.lower[n], self.upper[n])?;
        }
        Ok(())
    }
}

pub fn estimate_envelope(model: &ModelSpec, p: &Portfolio, pilot_paths: usize, n_t: usize, seed: u64) -> Result<Envelope> {
    if pilot_paths < 2 {
        return Err(Error::InvalidArgument("pilot simulation needs at least two paths".into()));
    }
    let (lower, upper) = basket_envelope(model, p, pilot_paths, n_t, seed)?;
    let times = (0..=n_t).map(|n| model.maturity() * n as f64 / n_t as f64).collect();
    Ok(Envelope { times, lower, upper })
}

/// Where the surface is defined and what drives the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFrame {
    pub rate: f64,
    pub maturity: f64,
    pub s_min: f64,
    pub s_max: f64,
}

/// Polynomial in `u = (s - center) / halfwidth`, coefficients ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub time: f64,
    pub center: f64,
    pub halfwidth: f64,
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
}

impl Slice {
    pub fn value(&self, s: f64) -> f64 {
        let u = (s - self.center) / self.halfwidth;
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }
}

/// `(t, s) -> (r s, max(b^2, floor))` on `[0, T] x [s_min, s_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSurface {
    frame: SurfaceFrame,
    floor: f64,
    slices: Vec<Slice>,
}

impl CoefficientSurface {
    pub fn new(frame: SurfaceFrame, floor: f64, slices: Vec<Slice>) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::Fit(format!("floor must be positive, got {floor}")));
        }
        if slices.is_empty() || slices.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::Fit("slice times must be strictly increasing".into()));
        }
        if !(frame.s_max > frame.s_min) || !(frame.maturity > 0.0) {
            return Err(Error::Fit("empty surface rectangle".into()));
        }
        Ok(Self { frame, floor, slices })
    }

    /// Exactly constant surface (every slice a degree-0 polynomial).
    pub fn constant(frame: SurfaceFrame, value: f64, floor: f64, slice_times: &[f64]) -> Result<Self> {
        let slices = slice_times
            .iter()
            .map(|&time| Slice { time, center: 0.0, halfwidth: 1.0, coefficients: vec![value], residual_rms: 0.0 })
            .collect();
        Self::new(frame, floor, slices)
    }

    pub fn frame(&self) -> &SurfaceFrame {
        &self.frame
    }
    pub fn floor(&self) -> f64 {
        self.floor
    }
    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    /// Replaces the floor (used for fault-injection checks).
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::Fit(format!("floor must be positive, got {floor}")));
        }
        self.floor = floor;
        Ok(self)
    }

    /// Drift and floored squared volatility. Before the first slice the
    /// first slice is used; between slices the polynomial values are
    /// interpolated linearly in time.
    pub fn eval(&self, t: f64, s: f64) -> Result<(f64, f64)> {
        let tol = 1e-12 * self.frame.maturity;
        if !(t >= -tol && t <= self.frame.maturity + tol) {
            return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", self.frame.maturity)));
        }
        Ok((self.frame.rate * s, self.vol_sq_unchecked(t, s)))
    }

    fn vol_sq_unchecked(&self, t: f64, s: f64) -> f64 {
        let slices = &self.slices;
        let i = slices.partition_point(|sl| sl.time <= t);
        let raw = if i == 0 {
            slices[0].value(s)
        } else if i == slices.len() || slices[i - 1].time == t {
            slices[i - 1].value(s)
        } else {
            let (a, b) = (&slices[i - 1], &slices[i]);
            let w = (t - a.time) / (b.time - a.time);
            let (va, vb) = (a.value(s), b.value(s));
            va + w * (vb - va)
        };
        raw.max(self.floor)
    }

    /// Plain-text table; see [`CoefficientSurface::read_table`].
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let f = &self.frame;
        writeln!(out, "# coefficient surface v1")?;
        writeln!(out, "# slice: time center halfwidth residual_rms c0 c1 ... (in u = (s - center) / halfwidth)")?;
        writeln!(out, "rate {:e}", f.rate)?;
        writeln!(out, "maturity {:e}", f.maturity)?;
        writeln!(out, "floor {:e}", self.floor)?;
        writeln!(out, "rectangle {:e} {:e}", f.s_min, f.s_max)?;
        for sl in &self.slices {
            write!(out, "slice {:e} {:e} {:e} {:e}", sl.time, sl.center, sl.halfwidth, sl.residual_rms)?;
            for c in &sl.coefficients {
                write!(out, " {c:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("surface table: {msg}"));
        let mut scalars: HashMap<String, Vec<f64>> = HashMap::new();
        let mut slices = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap().to_string();
            let nums = parts
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if key == "slice" {
                if nums.len() < 5 {
                    return Err(bad(format!("line {}: slice needs at least 5 numbers", lineno + 1)));
                }
                slices.push(Slice {
                    time: nums[0],
                    center: nums[1],
                    halfwidth: nums[2],
                    residual_rms: nums[3],
                    coefficients: nums[4..].to_vec(),
                });
            } else {
                scalars.insert(key, nums);
            }
        }
        let get = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v = scalars.get(k).ok_or_else(|| bad(format!("missing '{k}'")))?;
            if v.len() != n {
                return Err(bad(format!("'{k}' needs {n} values")));
            }
            Ok(v.clone())
        };
        let rect = get("rectangle", 2)?;
        let frame = SurfaceFrame { rate: get("rate", 1)?[0], maturity: get("maturity", 1)?[0], s_min: rect[0], s_max: rect[1] };
        Self::new(frame, get("floor", 1)?[0], slices).map_err(|e| bad(e.to_string()))
    }
}

impl LocalVolatility for CoefficientSurface {
    fn rate(&self) -> f64 {
        self.frame.rate
    }
    fn vol_sq(&self, t: f64, s: f64) -> f64 {
        self.vol_sq_unchecked(t, s)
    }
    fn s_range(&self) -> Option<(f64, f64)> {
        Some((self.frame.s_min, self.frame.s_max))
    }
}

/// A pointwise projected-volatility value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub t: f64,
    pub s: f64,
    pub vol_sq: f64,
}

/// Least-squares polynomial of `degree` per slice time. Evaluations are
/// matched to slices by time (relative tolerance `1e-12`).
pub fn fit_surface(
    evaluations: &[Evaluation],
    degree: usize,
    slice_times: &[f64],
    floor: f64,
    frame: SurfaceFrame,
) -> Result<CoefficientSurface> {
    let tol = 1e-12 * frame.maturity;
    let slices = slice_times
        .iter()
        .map(|&time| {
            let pts: Vec<(f64, f64)> =
                evaluations.iter().filter(|e| (e.t - time).abs() <= tol).map(|e| (e.s, e.vol_sq)).collect();
            fit_slice(time, &pts, degree)
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientSurface::new(frame, floor, slices)
}

fn fit_slice(time: f64, pts: &[(f64, f64)], degree: usize) -> Result<Slice> {
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::Fit(format!(
            "slice t = {time}: {} distinct abscissae for degree {degree}",
            distinct.len()
        )));
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let center = 0.5 * (lo + hi);
    let halfwidth = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let n = degree + 1;
    let v = DMatrix::from_fn(pts.len(), n, |i, j| ((pts[i].0 - center) / halfwidth).powi(j as i32));
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let normal = v.transpose() * &v;
    let chol = Cholesky::with_tolerance(&normal, 1e-13)
        .map_err(|_| Error::Fit(format!("slice t = {time}: rank-deficient normal equations")))?;
    let c = chol.solve(&(v.transpose() * &y));
    let resid = &v * &c - &y;
    let residual_rms = (resid.norm_squared() / pts.len() as f64).sqrt();
    Ok(Slice { time, center, halfwidth, coefficients: c.iter().copied().collect(), residual_rms })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOptions {
    pub degree: usize,
    pub slices: usize,
    pub abscissae: usize,
    pub pilot_paths: usize,
    pub pilot_steps: usize,
    /// `None` selects the model-scaled default floor.
    pub floor: Option<f64>,
    pub projection: ProjectionOptions,
    pub seed: u64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            slices: 16,
            abscissae: 24,
            pilot_paths: 100,
            pilot_steps: 64,
            floor: None,
            projection: ProjectionOptions::default(),
            seed: 0,
        }
    }
}

/// Small positive volatility floor in the units of `b^2`.
pub fn default_floor(model: &ModelSpec, p: &Portfolio) -> f64 {
    let s0 = p.weights().dot(model.x0());
    match model.kind() {
        ModelKind::BlackScholes => {
            let d = model.dim();
            let vol = (0..d).map(|i| model.omega()[(i, i)].sqrt()).sum::<f64>() / d as f64;
            1e-4 * s0 * s0 * vol * vol
        }
        ModelKind::Bachelier => 1e-4 * s0 * s0 / model.maturity(),
    }
}

/// Computational rectangle around the terminal envelope.
pub fn rectangle(model: &ModelSpec, p: &Portfolio, envelope: &Envelope) -> (f64, f64) {
    let lo = *envelope.lower.last().unwrap();
    let hi = *envelope.upper.last().unwrap();
    let mut width = hi - lo;
    if !(width > 0.0) {
        width = 0.1 * lo.abs().max(1.0);
    }
    let mut s_min = lo - 0.5 * width;
    if model.kind() == ModelKind::BlackScholes && p.all_positive() {
        s_min = s_min.max(0.0);
    }
    (s_min, hi + 0.5 * width)
}

/// Everything produced while building a surface.
#[derive(Debug, Clone)]
pub struct SurfaceBuild {
    pub surface: CoefficientSurface,
    pub envelope: Envelope,
    pub evaluations: Vec<Evaluation>,
    /// Abscissae where the Laplace evaluation failed and was skipped.
    pub skipped: usize,
}

/// Pilot envelope, pointwise Laplace evaluations, and per-slice fits.
pub fn build_surface(model: &ModelSpec, p: &Portfolio, opts: &SurfaceOptions) -> Result<SurfaceBuild> {
    if opts.slices == 0 || opts.abscissae < 2 {
        return Err(Error::InvalidArgument("need at least one slice and two abscissae".into()));
    }
    let envelope = estimate_envelope(model, p, opts.pilot_paths, opts.pilot_steps, opts.seed)?;
    let (s_min, s_max) = rectangle(model, p, &envelope);
    let maturity = model.maturity();
    let frame = SurfaceFrame { rate: model.rate(), maturity, s_min, s_max };
    let floor = opts.floor.unwrap_or_else(|| default_floor(model, p));
    let times: Vec<f64> = (1..=opts.slices).map(|k| maturity * k as f64 / opts.slices as f64).collect();

    if model.kind() == ModelKind::Bachelier {
        let c = bachelier_projected_vol_sq(model, p);
        let surface = CoefficientSurface::constant(frame, c, floor, &times)?;
        return Ok(SurfaceBuild { surface, envelope, evaluations: Vec::new(), skipped: 0 });
    }

    let points: Vec<(f64, f64)> = times
        .iter()
        .flat_map(|&t| {
            let (lo, hi) = envelope.at(t);
            let n = opts.abscissae;
            (0..n).map(move |i| (t, lo + (hi - lo) * i as f64 / (n - 1) as f64))
        })
        .collect();
    let results: Vec<Option<Evaluation>> = points
        .par_iter()
        .map(|&(t, s)| match projected_vol_sq(model, p, t, s, &opts.projection) {
            Ok(v) => Some(Evaluation { t, s, vol_sq: v }),
            Err(e) => {
                log::warn!("skipping projected volatility at (t={t}, s={s}): {e}");
                None
            }
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let evaluations: Vec<Evaluation> = results.into_iter().flatten().collect();
    let surface = fit_surface(&evaluations, opts.degree, &times, floor, frame)?;
    Ok(SurfaceBuild { surface, envelope, evaluations, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn frame() -> SurfaceFrame {
        SurfaceFrame { rate: 0.05, maturity: 1.0, s_min: 0.0, s_max: 400.0 }
    }

    fn evals(times: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<Evaluation> {
        times
            .iter()
            .flat_map(|&t| (0..24).map(move |i| (t, 150.0 + 100.0 * i as f64 / 23.0)))
            .map(|(t, s)| Evaluation { t, s, vol_sq: f(t, s) })
            .collect()
    }

    #[test]
    fn constant_fit() {
        let times = [0.5, 1.0];
        let s = fit_surface(&evals(&times, |_, _| 7.5), 3, &times, 1e-6, frame()).unwrap();
        for sl in s.slices() {
            assert!(sl.residual_rms < 1e-12);
            assert!((sl.value(123.0) - 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_recovered() {
        let cubic = |s: f64| 2.0 - 0.5 * s + 1e-3 * s * s + 2e-6 * s * s * s;
        let times = [1.0];
        let s = fit_surface(&evals(&times, |_, s| cubic(s)), 3, &times, 1e-9, frame()).unwrap();
        for x in [0.0, 150.0, 233.3, 400.0] {
            assert!((s.slices()[0].value(x) - cubic(x)).abs() < 1e-8 * cubic(x).abs().max(1.0));
        }
    }

    #[test]
    fn rank_deficient_fit() {
        let e: Vec<Evaluation> = (0..10).map(|_| Evaluation { t: 1.0, s: 200.0, vol_sq: 1.0 }).collect();
        assert!(matches!(fit_surface(&e, 3, &[1.0], 1e-6, frame()), Err(Error::Fit(_))));
    }

    #[test]
    fn floor_and_time_interpolation() {
        let dip = Slice { time: 0.5, center: 0.0, halfwidth: 1.0, coefficients: vec![-5.0], residual_rms: 0.0 };
        let flat = Slice { time: 1.0, center: 0.0, halfwidth: 1.0, coefficients: vec![3.0], residual_rms: 0.0 };
        let s = CoefficientSurface::new(frame(), 1.0, vec![dip, flat]).unwrap();
        assert_eq!(s.eval(0.5, 10.0).unwrap(), (0.5, 1.0));
        assert_eq!(s.eval(0.2, 10.0).unwrap().1, 1.0);
        assert_eq!(s.eval(1.0, 10.0).unwrap().1, 3.0);
        // Halfway the raw value is -1 and gets floored.
        assert_eq!(s.eval(0.75, 10.0).unwrap().1, 1.0);
        assert!((s.eval(0.9375, 10.0).unwrap().1 - 2.0).abs() < 1e-12);
        assert!(s.eval(1.5, 10.0).is_err());
        assert!(s.eval(-0.1, 10.0).is_err());
        let bad = vec![
            Slice { time: 1.0, center: 0.0, halfwidth: 1.0, coefficients: vec![1.0], residual_rms: 0.0 },
            Slice { time: 0.5, center: 0.0, halfwidth: 1.0, coefficients: vec![1.0], residual_rms: 0.0 },
        ];
        assert!(CoefficientSurface::new(frame(), 1.0, bad).is_err());
        assert!(CoefficientSurface::constant(frame(), 1.0, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn table_round_trip() {
        let times = [0.25, 0.5, 1.0];
        let s = fit_surface(&evals(&times, |t, s| 1.0 + t * s + 1e-3 * s * s), 3, &times, 1e-3, frame()).unwrap();
        let mut buf = Vec::new();
        s.write_table(&mut buf).unwrap();
        let back = CoefficientSurface::read_table(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(CoefficientSurface::read_table(&b"rate 1\n"[..]).is_err());
    }

    #[test]
    fn deterministic_envelope() {
        let m = ModelSpec::new(ModelKind::BlackScholes, 0.05, dmatrix![0.0, 0.0; 0.0, 0.0], dvector![100.0, 100.0], 1.0).unwrap();
        let e = estimate_envelope(&m, &Portfolio::equal(2), 5, 16, 0).unwrap();
        for n in 0..=16 {
            assert_eq!(e.lower[n], e.upper[n]);
            assert!((e.lower[n] - 200.0 * (1.0 + 0.05 / 16.0f64).powi(n as i32)).abs() < 1e-10);
        }
        assert!(estimate_envelope(&m, &Portfolio::equal(2), 1, 16, 0).is_err());
    }

    #[test]
    fn sum2d_envelope_contains_start() {
        let m = ModelSpec::new(ModelKind::BlackScholes, 0.0, dmatrix![0.1, 0.0; 0.0, 0.1], dvector![100.0, 100.0], 1.0).unwrap();
        let e = estimate_envelope(&m, &Portfolio::equal(2), 100, 64, 3).unwrap();
        assert_eq!(e.lower[0], 200.0);
        assert!(e.lower.iter().zip(&e.upper).all(|(a, b)| *a <= 200.0 && 200.0 <= *b));
    }

    #[test]
    fn bachelier_surface_exact() {
        let sigma = dmatrix![20.0, 1.3, -0.4; 0.0, 20.0, 0.7; 0.0, 0.0, 20.0];
        let m = ModelSpec::new(ModelKind::Bachelier, 0.05, sigma, dvector![100.0, 100.0, 100.0], 0.25).unwrap();
        let p = Portfolio::equal(3);
        let build = build_surface(&m, &p, &SurfaceOptions::default()).unwrap();
        let c = bachelier_projected_vol_sq(&m, &p);
        let f = *build.surface.frame();
        for i in 0..=20 {
            for j in 0..=20 {
                let t = 0.25 * i as f64 / 20.0;
                let s = f.s_min + (f.s_max - f.s_min) * j as f64 / 20.0;
                assert_eq!(build.surface.eval(t, s).unwrap().1, c);
            }
        }
    }

    #[test]
    fn black_scholes_surface_floor_and_rectangle() {
        let m = ModelSpec::new(ModelKind::BlackScholes, 0.0, dmatrix![0.1, 0.0; 0.0, 0.1], dvector![100.0, 100.0], 1.0).unwrap();
        let p = Portfolio::equal(2);
        let opts = SurfaceOptions { slices: 4, ..SurfaceOptions::default() };
        let build = build_surface(&m, &p, &opts).unwrap();
        let s = &build.surface;
        assert_eq!(build.skipped, 0);
        assert!((s.floor() - 1e-4 * 200.0 * 200.0 * 0.01).abs() < 1e-12);
        assert!(s.frame().s_min >= 0.0);
        let (v, b2) = (s.eval(1.0, 200.0).unwrap().0, s.eval(1.0, 200.0).unwrap().1);
        assert_eq!(v, 0.0);
        assert!((b2 - 200.99).abs() < 0.5, "{b2}");
        for sl in s.slices() {
            let mean = build.evaluations.iter().filter(|e| e.t == sl.time).map(|e| e.vol_sq).sum::<f64>() / 24.0;
            assert!(sl.residual_rms <= 0.01 * mean);
        }
    }
}
