//! Reference computations used only for validation: one-dimensional
//! quadrature of the conditional expectation, a CRR tree, a sampled binned
//! estimator, and closed-form Black-Scholes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::density::Coordinates;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::mc::PathRng;
use crate::model::{ModelKind, ModelSpec, Portfolio};

/// Composite Gauss-Legendre rule over an interval in the free coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub panels: usize,
    pub nodes_per_panel: usize,
    /// Half-width in conditional standard deviations around the mode.
    pub half_width_sd: f64,
    /// Explicit interval; must contain the mode.
    pub interval: Option<(f64, f64)>,
    pub coordinates: Coordinates,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { panels: 16, nodes_per_panel: 32, half_width_sd: 12.0, interval: None, coordinates: Coordinates::Price }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Two-asset restriction to `w1 x1 + w2 x2 = s`, parametrized by the
/// second asset (or its log-return), with densities written out directly.
struct Line<'a> {
    model: &'a ModelSpec,
    w: [f64; 2],
    s: f64,
    t: f64,
    coords: Coordinates,
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl<'a> Line<'a> {
    fn new(model: &'a ModelSpec, p: &Portfolio, t: f64, s: f64, coords: Coordinates) -> Result<Self> {
        if model.dim() != 2 || p.dim() != 2 {
            return Err(Error::Oracle("quadrature oracle needs exactly two assets".into()));
        }
        if coords == Coordinates::LogPrice && model.kind() == ModelKind::Bachelier {
            return Err(Error::Oracle("log-price coordinates need positive prices".into()));
        }
        let w = [p.weights()[0], p.weights()[1]];
        if w[0] == 0.0 {
            return Err(Error::Oracle("first weight must be nonzero".into()));
        }
        let r = model.rate();
        let om = model.omega();
        let (mean, cov) = match model.kind() {
            ModelKind::Bachelier => {
                let v = if r == 0.0 { t } else { ((2.0 * r * t).exp() - 1.0) / (2.0 * r) };
                (model.x0() * (r * t).exp(), om * v)
            }
            ModelKind::BlackScholes => {
                (DVector::from_fn(2, |i, _| (r - 0.5 * om[(i, i)]) * t), om * t)
            }
        };
        let precision = cov.try_inverse().ok_or_else(|| Error::Oracle("singular covariance".into()))?;
        Ok(Self { model, w, s, t, coords, mean, precision })
    }

    fn point(&self, z: f64) -> [f64; 2] {
        let x2 = match self.coords {
            Coordinates::Price => z,
            Coordinates::LogPrice => self.model.x0()[1] * z.exp(),
        };
        [(self.s - self.w[1] * x2) / self.w[0], x2]
    }

    /// Log of (density along the line) including the coordinate Jacobian.
    fn log_weight(&self, z: f64) -> f64 {
        let x = self.point(z);
        let u = match self.model.kind() {
            ModelKind::Bachelier => DVector::from_fn(2, |i, _| x[i] - self.mean[i]),
            ModelKind::BlackScholes => {
                if !(x[0] > 0.0 && x[1] > 0.0) {
                    return f64::NEG_INFINITY;
                }
                DVector::from_fn(2, |i, _| (x[i] / self.model.x0()[i]).ln() - self.mean[i])
            }
        };
        let mut v = -0.5 * u.dot(&(&self.precision * &u));
        if self.model.kind() == ModelKind::BlackScholes {
            v -= x[0].ln() + x[1].ln();
        }
        if self.coords == Coordinates::LogPrice {
            v += x[1].ln();
        }
        v
    }

    fn basket_vol_sq(&self, z: f64) -> f64 {
        let x = self.point(z);
        let om = self.model.omega();
        let a: [f64; 2] = match self.model.kind() {
            ModelKind::Bachelier => self.w,
            ModelKind::BlackScholes => [self.w[0] * x[0], self.w[1] * x[1]],
        };
        (0..2).map(|i| (0..2).map(|j| a[i] * om[(i, j)] * a[j]).sum::<f64>()).sum()
    }

    /// Scan range for the free coordinate.
    fn scan_range(&self) -> (f64, f64) {
        let om = self.model.omega();
        let sd = (om[(1, 1)] * self.t).sqrt().max(1e-12);
        match (self.model.kind(), self.coords) {
            (ModelKind::BlackScholes, Coordinates::LogPrice) => (self.mean[1] - 40.0 * sd, self.mean[1] + 40.0 * sd),
            (ModelKind::BlackScholes, Coordinates::Price) => {
                (0.0, self.model.x0()[1] * (self.mean[1] + 40.0 * sd).exp())
            }
            (ModelKind::Bachelier, _) => {
                let v = self.precision.clone().try_inverse().unwrap();
                let sd = v[(1, 1)].sqrt();
                (self.mean[1] - 40.0 * sd, self.mean[1] + 40.0 * sd)
            }
        }
    }

    /// Mode by a grid scan followed by golden-section refinement.
    fn mode(&self) -> Result<f64> {
        let (lo, hi) = self.scan_range();
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let best = (1..n)
            .map(|i| lo + h * i as f64)
            .map(|z| (z, self.log_weight(z)))
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Oracle("integrand vanishes on the scan range".into()))?;
        let (mut a, mut b) = (best.0 - h, best.0 + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.log_weight(c) > self.log_weight(d) {
                b = d;
            } else {
                a = c;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Ratio of `int phi * (P b b^T P^T)` to `int phi` along the hyperplane for a
/// two-asset model.
pub fn quadrature_projected_vol(model: &ModelSpec, p: &Portfolio, t: f64, s: f64, spec: &QuadratureSpec) -> Result<f64> {
    if spec.panels == 0 || spec.nodes_per_panel == 0 || spec.panels * spec.nodes_per_panel < 200 {
        return Err(Error::Oracle("quadrature needs at least 200 nodes".into()));
    }
    let line = Line::new(model, p, t, s, spec.coordinates)?;
    let mode = line.mode()?;
    let peak = line.log_weight(mode);
    let h = 1e-4 * mode.abs().max(1e-2);
    let curv = (line.log_weight(mode + h) - 2.0 * peak + line.log_weight(mode - h)) / (h * h);
    if !(curv < 0.0) {
        return Err(Error::Oracle("integrand mode is not a strict maximum".into()));
    }
    let sd = (-1.0 / curv).sqrt();
    let (a, b) = match spec.interval {
        Some((a, b)) => {
            if !(a < mode && mode < b) {
                return Err(Error::Oracle(format!("interval [{a}, {b}] does not contain the mode {mode}")));
            }
            (a, b)
        }
        None => (mode - spec.half_width_sd * sd, mode + spec.half_width_sd * sd),
    };
    let (nodes, weights) = gauss_legendre(spec.nodes_per_panel);
    let width = (b - a) / spec.panels as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..spec.panels {
        let mid = a + width * (k as f64 + 0.5);
        for (x, wt) in nodes.iter().zip(&weights) {
            let z = mid + 0.5 * width * x;
            let lw = line.log_weight(z);
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let phi = wt * (lw - peak).exp();
            den += phi;
            num += phi * line.basket_vol_sq(z);
        }
    }
    if !(den > 0.0) {
        return Err(Error::Oracle("zero quadrature mass".into()));
    }
    Ok(num / den)
}

/// Cox-Ross-Rubinstein American put with early exercise at every node.
pub fn binomial_american_put(spot: f64, vol: f64, r: f64, strike: f64, maturity: f64, steps: usize) -> Result<f64> {
    if steps < 2 {
        return Err(Error::Oracle("tree needs at least two steps".into()));
    }
    let payoff = |s: f64| (strike - s).max(0.0);
    let dt = maturity / steps as f64;
    if vol == 0.0 || maturity == 0.0 {
        return Ok((0..=steps)
            .map(|n| {
                let t = dt * n as f64;
                (-r * t).exp() * payoff(spot * (r * t).exp())
            })
            .fold(f64::NEG_INFINITY, f64::max));
    }
    let u = (vol * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (r * dt).exp();
    let q = (growth - d) / (u - d);
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Oracle(format!("risk-neutral probability {q} outside [0, 1]; refine the tree")));
    }
    let disc = 1.0 / growth;
    let mut v: Vec<f64> = (0..=steps).map(|j| payoff(spot * u.powi(2 * j as i32 - steps as i32))).collect();
    for n in (0..steps).rev() {
        for j in 0..=n {
            let cont = disc * (q * v[j + 1] + (1.0 - q) * v[j]);
            let s = spot * u.powi(2 * j as i32 - n as i32);
            v[j] = cont.max(payoff(s));
        }
    }
    Ok(v[0])
}

/// Closed-form European put price and delta.
pub fn black_scholes_put(spot: f64, strike: f64, r: f64, vol: f64, maturity: f64) -> (f64, f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    let sd = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + (r + 0.5 * vol * vol) * maturity) / sd;
    let d2 = d1 - sd;
    (strike * (-r * maturity).exp() * n.cdf(-d2) - spot * n.cdf(-d1), n.cdf(d1) - 1.0)
}

/// Binning of basket values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub count: usize,
    /// Explicit `[lo, hi]`; by default the 1%-99% sample quantiles.
    pub range: Option<(f64, f64)>,
    pub min_samples: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { count: 20, range: None, min_samples: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    /// Bin centre.
    pub s: f64,
    /// Mean basket value of the samples in the bin.
    pub s_mean: f64,
    pub estimate: f64,
    pub se: f64,
    pub samples: usize,
}

/// Sample `X(t)` exactly in law and average `P b b^T P^T` per basket bin.
/// Bins with fewer than `min_samples` samples are dropped.
pub fn binned_conditional_vol(
    model: &ModelSpec,
    p: &Portfolio,
    t: f64,
    samples: usize,
    bins: &BinSpec,
    seed: u64,
) -> Result<Vec<Bin>> {
    model.check_dim(p.dim())?;
    if samples < 10_000 || bins.count == 0 || !(t > 0.0) {
        return Err(Error::Oracle("binned estimator needs t > 0, bins, and at least 1e4 samples".into()));
    }
    let d = model.dim();
    let r = model.rate();
    let om = model.omega();
    let w = p.weights();
    let (mean, cov) = match model.kind() {
        ModelKind::Bachelier => {
            let v = if r == 0.0 { t } else { ((2.0 * r * t).exp() - 1.0) / (2.0 * r) };
            (model.x0() * (r * t).exp(), om * v)
        }
        ModelKind::BlackScholes => (DVector::from_fn(d, |i, _| (r - 0.5 * om[(i, i)]) * t), om * t),
    };
    let root = Cholesky::new(&cov).map_err(|e| Error::Oracle(format!("sampling covariance: {e}")))?.into_l();
    let mut z = vec![0.0; d];
    let mut data = Vec::with_capacity(samples);
    for i in 0..samples {
        PathRng::new(seed, i as u64).normals(&mut z);
        let g = &mean + &root * DVector::from_column_slice(&z);
        let x = match model.kind() {
            ModelKind::Bachelier => g,
            ModelKind::BlackScholes => DVector::from_fn(d, |j, _| model.x0()[j] * g[j].exp()),
        };
        let a = match model.kind() {
            ModelKind::Bachelier => w.clone(),
            ModelKind::BlackScholes => w.component_mul(&x),
        };
        data.push((w.dot(&x), a.dot(&(om * &a))));
    }
    let (lo, hi) = match bins.range {
        Some(r) => r,
        None => {
            let mut s: Vec<f64> = data.iter().map(|v| v.0).collect();
            s.sort_by(f64::total_cmp);
            (s[samples / 100], s[samples - 1 - samples / 100])
        }
    };
    if !(hi > lo) {
        return Err(Error::Oracle("empty bin range".into()));
    }
    let width = (hi - lo) / bins.count as f64;
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); bins.count];
    for (s, v) in data {
        if s < lo || s >= hi {
            continue;
        }
        let k = (((s - lo) / width) as usize).min(bins.count - 1);
        acc[k].0 += 1;
        acc[k].1 += v;
        acc[k].2 += v * v;
        acc[k].3 += s;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 >= bins.min_samples.max(2))
        .map(|(k, (n, sum, sq, s_sum))| {
            let m = n as f64;
            let mean = sum / m;
            let var = ((sq - m * mean * mean) / (m - 1.0)).max(0.0);
            Bin { s: lo + width * (k as f64 + 0.5), s_mean: s_sum / m, estimate: mean, se: (var / m).sqrt(), samples: n }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn sum2d() -> ModelSpec {
        ModelSpec::new(ModelKind::BlackScholes, 0.0, dmatrix![0.1, 0.0; 0.0, 0.1], dvector![100.0, 100.0], 1.0).unwrap()
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let int = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((int(14) - 2.0 / 15.0).abs() < 1e-13);
        assert!(int(7).abs() < 1e-14);
    }

    #[test]
    fn sum2d_quadrature() {
        let m = sum2d();
        let p = Portfolio::equal(2);
        let price = quadrature_projected_vol(&m, &p, 1.0, 200.0, &QuadratureSpec::default()).unwrap();
        let logp = quadrature_projected_vol(&m, &p, 1.0, 200.0, &QuadratureSpec { coordinates: Coordinates::LogPrice, ..Default::default() }).unwrap();
        assert!((price - 200.98).abs() < 0.02, "{price}");
        assert!(((price - logp) / price).abs() < 1e-6);
        let doubled = quadrature_projected_vol(&m, &p, 1.0, 200.0, &QuadratureSpec { panels: 32, ..Default::default() }).unwrap();
        assert!(((price - doubled) / price).abs() < 1e-6);
        let bad = QuadratureSpec { interval: Some((120.0, 150.0)), ..Default::default() };
        assert!(quadrature_projected_vol(&m, &p, 1.0, 200.0, &bad).is_err());
        let three = ModelSpec::new(ModelKind::BlackScholes, 0.0, DMatrix::identity(3, 3), dvector![1.0, 1.0, 1.0], 1.0).unwrap();
        assert!(quadrature_projected_vol(&three, &Portfolio::equal(3), 1.0, 3.0, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn bachelier_quadrature_constant() {
        let m = ModelSpec::new(ModelKind::Bachelier, 0.05, dmatrix![20.0, 3.0; 0.0, 15.0], dvector![100.0, 100.0], 1.0).unwrap();
        let p = Portfolio::new(vec![1.0, 2.0]).unwrap();
        let exact = {
            let w = p.weights();
            w.dot(&(m.omega() * w))
        };
        for s in [250.0, 300.0, 340.0] {
            let v = quadrature_projected_vol(&m, &p, 1.0, s, &QuadratureSpec::default()).unwrap();
            assert!(((v - exact) / exact).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_limits_and_monotonicity() {
        assert!((binomial_american_put(90.0, 1e-9, 0.0, 100.0, 1.0, 100).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(binomial_american_put(90.0, 0.0, 0.0, 100.0, 1.0, 100).unwrap(), 10.0);
        assert!((binomial_american_put(90.0, 0.2, 0.05, 100.0, 1e-10, 10).unwrap() - 10.0).abs() < 1e-6);
        let base = binomial_american_put(100.0, 0.2, 0.05, 100.0, 0.5, 2000).unwrap();
        assert!(binomial_american_put(100.0, 0.25, 0.05, 100.0, 0.5, 2000).unwrap() > base);
        assert!(binomial_american_put(100.0, 0.2, 0.05, 100.0, 0.75, 2000).unwrap() > base);
        let euro = black_scholes_put(100.0, 100.0, 0.05, 0.2, 0.5).0;
        assert!(base > euro);
        let fine = binomial_american_put(100.0, 0.2, 0.05, 100.0, 0.5, 4000).unwrap();
        assert!((fine - base).abs() < 2e-3);
        assert!(binomial_american_put(100.0, 0.2, 0.05, 100.0, 0.5, 1).is_err());
    }

    #[test]
    fn closed_form_put() {
        let (p, d) = black_scholes_put(100.0, 100.0, 0.05, 0.2, 0.5);
        assert!((p - 4.419720).abs() < 1e-6, "{p}");
        assert!((d + 0.402266).abs() < 1e-6, "{d}");
    }

    #[test]
    fn binned_bachelier_constant() {
        let m = ModelSpec::new(ModelKind::Bachelier, 0.05, dmatrix![20.0, 3.0; 0.0, 15.0], dvector![100.0, 100.0], 0.25).unwrap();
        let p = Portfolio::equal(2);
        let bins = binned_conditional_vol(&m, &p, 0.25, 20_000, &BinSpec::default(), 1).unwrap();
        let w = p.weights();
        let c = w.dot(&(m.omega() * w));
        assert!(!bins.is_empty());
        for b in bins {
            assert!((b.estimate - c).abs() < 1e-9 * c);
            assert!(b.samples >= 50);
        }
    }

    #[test]
    fn binned_sum2d() {
        let bins = BinSpec { count: 21, range: Some((179.0, 221.0)), min_samples: 50 };
        let out = binned_conditional_vol(&sum2d(), &Portfolio::equal(2), 1.0, 400_000, &bins, 7).unwrap();
        let b = out.iter().find(|b| (b.s - 200.0).abs() < 1e-9).unwrap();
        assert!((b.estimate - 200.98).abs() < 3.0 * b.se + 0.01, "{b:?}");
    }
}
