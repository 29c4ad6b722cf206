//! Closed-form transition densities and the log-integrands of the projected
//! volatility, expressed in coordinates on the hyperplane `{P x = s}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{ModelKind, ModelSpec, Portfolio};

/// Coordinates used for the free variables of the hyperplane chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coordinates {
    /// Free variables are the asset prices themselves.
    Price,
    /// Free variables are `log(x_j / x0_j)`; Black-Scholes only.
    #[default]
    LogPrice,
}

impl Coordinates {
    pub fn name(self) -> &'static str {
        match self {
            Coordinates::Price => "price",
            Coordinates::LogPrice => "log_price",
        }
    }
}

/// Gaussian (or log-Gaussian) law of `X(t)` given `X(0) = x0`.
#[derive(Debug, Clone)]
pub struct TransitionDensity {
    kind: ModelKind,
    x0: DVector<f64>,
    /// Mean of `X(t)` (Bachelier) or of `log(X(t)/x0)` (Black-Scholes).
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl TransitionDensity {
    pub fn new(model: &ModelSpec, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("density needs t > 0, got {t}")));
        }
        let d = model.dim();
        let r = model.rate();
        let (mean, cov) = match model.kind() {
            ModelKind::Bachelier => {
                let growth = (r * t).exp();
                let var_factor = if (r * t).abs() < 1e-8 {
                    t * (1.0 + r * t)
                } else {
                    ((2.0 * r * t).exp() - 1.0) / (2.0 * r)
                };
                (model.x0() * growth, model.omega() * var_factor)
            }
            ModelKind::BlackScholes => {
                let omega = model.omega();
                let mean = DVector::from_fn(d, |i, _| (r - 0.5 * omega[(i, i)]) * t);
                (mean, omega * t)
            }
        };
        let chol = Cholesky::new(&cov)
            .map_err(|e| Error::InvalidModel(format!("singular transition covariance: {e}")))?;
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det());
        Ok(Self {
            kind: model.kind(),
            x0: model.x0().clone(),
            mean,
            precision: chol.inverse(),
            cov,
            log_norm,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `log phi(y)`, `-inf` outside the support.
    pub fn log_pdf(&self, y: &DVector<f64>) -> f64 {
        match self.kind {
            ModelKind::Bachelier => {
                let u = y - &self.mean;
                self.log_norm - 0.5 * u.dot(&(&self.precision * &u))
            }
            ModelKind::BlackScholes => {
                if y.iter().any(|&v| !(v > 0.0)) {
                    return f64::NEG_INFINITY;
                }
                let u = DVector::from_fn(y.len(), |i, _| (y[i] / self.x0[i]).ln() - self.mean[i]);
                let jac: f64 = y.iter().map(|v| v.ln()).sum();
                self.log_norm - 0.5 * u.dot(&(&self.precision * &u)) - jac
            }
        }
    }

    /// Value, gradient and Hessian of `log phi` in price space.
    fn log_pdf_derivs(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        match self.kind {
            ModelKind::Bachelier => {
                let u = x - &self.mean;
                let au = &self.precision * &u;
                Some((self.log_norm - 0.5 * u.dot(&au), -au, -self.precision.clone()))
            }
            ModelKind::BlackScholes => {
                if x.iter().any(|&v| !(v > 0.0)) {
                    return None;
                }
                let d = x.len();
                let u = DVector::from_fn(d, |i, _| (x[i] / self.x0[i]).ln() - self.mean[i]);
                let au = &self.precision * &u;
                let jac: f64 = x.iter().map(|v| v.ln()).sum();
                let value = self.log_norm - 0.5 * u.dot(&au) - jac;
                let grad = DVector::from_fn(d, |i, _| -(au[i] + 1.0) / x[i]);
                let mut hess = DMatrix::from_fn(d, d, |i, k| -self.precision[(i, k)] / (x[i] * x[k]));
                for i in 0..d {
                    hess[(i, i)] += (au[i] + 1.0) / (x[i] * x[i]);
                }
                Some((value, grad, hess))
            }
        }
    }
}

/// `log phi(y; x0)` of `X(t)`.
pub fn log_density(model: &ModelSpec, t: f64, y: &DVector<f64>) -> Result<f64> {
    model.check_dim(y.len())?;
    Ok(TransitionDensity::new(model, t)?.log_pdf(y))
}

/// `P b(t,x) b(t,x)^T P^T`.
pub fn pbbt(model: &ModelSpec, p: &Portfolio, t: f64, x: &DVector<f64>) -> Result<f64> {
    model.check_dim(p.dim())?;
    let b = model.diffusion(t, x)?;
    let pb = b.tr_mul(p.weights());
    Ok(pb.norm_squared())
}

/// Affine parametrization of `{x : P x = s}` by the `d - 1` free prices.
#[derive(Debug, Clone)]
pub struct HyperplaneChart {
    weights: DVector<f64>,
    s: f64,
    pivot: usize,
    free: Vec<usize>,
}

/// Weights with magnitude below this (relative to the largest) cannot pivot.
const PIVOT_WEIGHT_TOL: f64 = 1e-12;

impl HyperplaneChart {
    pub fn new(p: &Portfolio, s: f64) -> Result<Self> {
        let w = p.weights();
        let (pivot, wmax) = w
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if !(wmax > PIVOT_WEIGHT_TOL) {
            return Err(Error::InvalidPortfolio("all weights below the pivot threshold".into()));
        }
        let free = (0..w.len()).filter(|&i| i != pivot).collect();
        Ok(Self { weights: w.clone(), s, pivot, free })
    }

    pub fn level(&self) -> f64 {
        self.s
    }

    /// Index of the eliminated (dependent) asset.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// Indices of the free assets, in chart order.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_dim(&self) -> usize {
        self.free.len()
    }

    /// Maps free prices to the full state vector.
    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.weights.len());
        let mut acc = self.s;
        for (j, &i) in self.free.iter().enumerate() {
            x[i] = z[j];
            acc -= self.weights[i] * z[j];
        }
        x[self.pivot] = acc / self.weights[self.pivot];
        x
    }

    /// Free prices of a full state vector (the pivot entry is dropped).
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| x[i]))
    }

    /// `d(x)/d(z_j)`: the constant column `e_j - (w_j / w_p) e_p`.
    fn tangent(&self, j: usize) -> (usize, f64) {
        let i = self.free[j];
        (i, -self.weights[i] / self.weights[self.pivot])
    }
}

pub fn chart(p: &Portfolio, s: f64) -> Result<HyperplaneChart> {
    HyperplaneChart::new(p, s)
}

/// A smooth log-integrand on `R^m` that may be `-inf` outside its support.
pub trait LogFunction {
    fn dim(&self) -> usize;
    fn value(&self, z: &DVector<f64>) -> f64;
    /// `None` outside the support.
    fn derivatives(&self, z: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>;
}

/// The numerator and denominator log-integrands of the projected volatility
/// at one `(t, s)`.
#[derive(Debug, Clone)]
pub struct LogIntegrands {
    density: TransitionDensity,
    chart: HyperplaneChart,
    coords: Coordinates,
    kind: ModelKind,
    x0: DVector<f64>,
    omega: DMatrix<f64>,
    weights: DVector<f64>,
}

impl LogIntegrands {
    pub fn new(model: &ModelSpec, p: &Portfolio, t: f64, s: f64, coords: Coordinates) -> Result<Self> {
        model.check_dim(p.dim())?;
        if coords == Coordinates::LogPrice && model.kind() == ModelKind::Bachelier {
            return Err(Error::InvalidArgument(
                "log-price coordinates need strictly positive prices (Black-Scholes only)".into(),
            ));
        }
        Ok(Self {
            density: TransitionDensity::new(model, t)?,
            chart: HyperplaneChart::new(p, s)?,
            coords,
            kind: model.kind(),
            x0: model.x0().clone(),
            omega: model.omega().clone(),
            weights: p.weights().clone(),
        })
    }

    pub fn chart(&self) -> &HyperplaneChart {
        &self.chart
    }

    pub fn coordinates(&self) -> Coordinates {
        self.coords
    }

    pub fn density(&self) -> &TransitionDensity {
        &self.density
    }

    /// Full state for chart coordinates `z`.
    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.coords {
            Coordinates::Price => self.chart.point(z),
            Coordinates::LogPrice => {
                let prices = DVector::from_fn(z.len(), |j, _| self.x0[self.chart.free[j]] * z[j].exp());
                self.chart.point(&prices)
            }
        }
    }

    /// Chart coordinates of a state on the hyperplane.
    pub fn coordinates_of(&self, x: &DVector<f64>) -> DVector<f64> {
        let prices = self.chart.project(x);
        match self.coords {
            Coordinates::Price => prices,
            Coordinates::LogPrice => DVector::from_fn(prices.len(), |j, _| {
                (prices[j] / self.x0[self.chart.free[j]]).ln()
            }),
        }
    }

    /// Numerator integrand `f = log(phi * P b b^T P^T)`.
    pub fn f(&self) -> Integrand<'_> {
        Integrand { parent: self, with_vol: true }
    }

    /// Denominator integrand `f~ = log phi`.
    pub fn ftilde(&self) -> Integrand<'_> {
        Integrand { parent: self, with_vol: false }
    }

    fn log_pbbt(&self, x: &DVector<f64>) -> f64 {
        let q = match self.kind {
            ModelKind::Bachelier => self.weights.dot(&(&self.omega * &self.weights)),
            ModelKind::BlackScholes => {
                let v = self.weights.component_mul(x);
                v.dot(&(&self.omega * &v))
            }
        };
        if q > 0.0 { q.ln() } else { f64::NEG_INFINITY }
    }

    fn log_pbbt_derivs(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = x.len();
        match self.kind {
            ModelKind::Bachelier => {
                Some((self.log_pbbt(x), DVector::zeros(d), DMatrix::zeros(d, d)))
            }
            ModelKind::BlackScholes => {
                let v = self.weights.component_mul(x);
                let ov = &self.omega * &v;
                let q = v.dot(&ov);
                if !(q > 0.0) {
                    return None;
                }
                let gq = DVector::from_fn(d, |i, _| 2.0 * self.weights[i] * ov[i]);
                let hq = DMatrix::from_fn(d, d, |i, k| 2.0 * self.weights[i] * self.weights[k] * self.omega[(i, k)]);
                let grad = &gq / q;
                let hess = hq / q - (&gq * gq.transpose()) / (q * q);
                Some((q.ln(), grad, hess))
            }
        }
    }

    fn value(&self, z: &DVector<f64>, with_vol: bool) -> f64 {
        let x = self.point(z);
        let mut v = self.density.log_pdf(&x);
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        if with_vol {
            v += self.log_pbbt(&x);
        }
        if self.coords == Coordinates::LogPrice {
            v += self.chart.free.iter().map(|&i| x[i].ln()).sum::<f64>();
        }
        v
    }

    fn derivatives(&self, z: &DVector<f64>, with_vol: bool) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let x = self.point(z);
        let (mut v, mut gx, mut hx) = self.density.log_pdf_derivs(&x)?;
        if with_vol {
            let (qv, qg, qh) = self.log_pbbt_derivs(&x)?;
            v += qv;
            gx += qg;
            hx += qh;
        }
        if !v.is_finite() {
            return None;
        }
        let m = self.chart.free_dim();
        let p = self.chart.pivot;
        // Jacobian columns have two nonzeros: entry `i` and the pivot.
        let cols: Vec<(usize, f64, f64)> = (0..m)
            .map(|j| {
                let (i, dp) = self.chart.tangent(j);
                let scale = match self.coords {
                    Coordinates::Price => 1.0,
                    Coordinates::LogPrice => x[i],
                };
                (i, scale, scale * dp)
            })
            .collect();
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (j, &(ij, aj, bj)) in cols.iter().enumerate() {
            grad[j] = aj * gx[ij] + bj * gx[p];
            for (k, &(ik, ak, bk)) in cols.iter().enumerate().take(j + 1) {
                let h = aj * ak * hx[(ij, ik)]
                    + aj * bk * hx[(ij, p)]
                    + bj * ak * hx[(p, ik)]
                    + bj * bk * hx[(p, p)];
                hess[(j, k)] = h;
                hess[(k, j)] = h;
            }
        }
        if self.coords == Coordinates::LogPrice {
            // Second derivative of the chart is diagonal and equals the first.
            for j in 0..m {
                hess[(j, j)] += grad[j];
            }
            // Jacobian of the change of variables contributes sum z_j + const.
            for j in 0..m {
                grad[j] += 1.0;
            }
            v += self.chart.free.iter().map(|&i| x[i].ln()).sum::<f64>();
        }
        Some((v, grad, hess))
    }
}

/// One of the two log-integrands, borrowed from [`LogIntegrands`].
#[derive(Debug, Clone, Copy)]
pub struct Integrand<'a> {
    parent: &'a LogIntegrands,
    with_vol: bool,
}

impl LogFunction for Integrand<'_> {
    fn dim(&self) -> usize {
        self.parent.chart.free_dim()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        self.parent.value(z, self.with_vol)
    }

    fn derivatives(&self, z: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        self.parent.derivatives(z, self.with_vol)
    }
}

pub fn log_integrands(
    model: &ModelSpec,
    p: &Portfolio,
    t: f64,
    s: f64,
    coords: Coordinates,
) -> Result<LogIntegrands> {
    LogIntegrands::new(model, p, t, s, coords)
}

/// Central finite-difference gradient and Hessian with per-coordinate steps
/// `h_j = rel_step * max(|z_j|, scale)`.
pub fn finite_difference_derivatives<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    z: &DVector<f64>,
    rel_step: f64,
    scale: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let m = z.len();
    let h: Vec<f64> = (0..m).map(|j| rel_step * z[j].abs().max(scale)).collect();
    let f0 = f(z);
    let shifted = |pairs: &[(usize, f64)]| {
        let mut w = z.clone();
        for &(j, d) in pairs {
            w[j] += d;
        }
        f(&w)
    };
    let mut grad = DVector::zeros(m);
    let mut hess = DMatrix::zeros(m, m);
    for j in 0..m {
        let fp = shifted(&[(j, h[j])]);
        let fm = shifted(&[(j, -h[j])]);
        grad[j] = (fp - fm) / (2.0 * h[j]);
        hess[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
        for k in 0..j {
            let fpp = shifted(&[(j, h[j]), (k, h[k])]);
            let fpm = shifted(&[(j, h[j]), (k, -h[k])]);
            let fmp = shifted(&[(j, -h[j]), (k, h[k])]);
            let fmm = shifted(&[(j, -h[j]), (k, -h[k])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k]);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
    (grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn sum2d(rate: f64) -> ModelSpec {
        ModelSpec::new(ModelKind::BlackScholes, rate, DMatrix::identity(2, 2) * 0.1, v(&[100.0, 100.0]), 1.0).unwrap()
    }

    fn bs3d() -> ModelSpec {
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.3, 0.8, 1.0, 0.1, 0.3, 0.1, 1.0]);
        ModelSpec::from_correlation(ModelKind::BlackScholes, 0.05, &[0.2, 0.15, 0.1], &corr, v(&[100.0, 100.0, 100.0]), 0.5).unwrap()
    }

    fn bach3d() -> ModelSpec {
        let sigma = DMatrix::from_row_slice(3, 3, &[20.0, 0.5, -1.2, 0.0, 20.0, 0.7, 0.0, 0.0, 20.0]);
        ModelSpec::new(ModelKind::Bachelier, 0.05, sigma, v(&[100.0, 100.0, 100.0]), 0.25).unwrap()
    }

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn gaussian_peak() {
        let sigma = 3.0;
        let m = ModelSpec::new(ModelKind::Bachelier, 0.0, DMatrix::from_element(1, 1, sigma), v(&[5.0]), 1.0).unwrap();
        let got = log_density(&m, 1.0, &v(&[5.0])).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        assert!((got - expect).abs() < 1e-14);
        assert!(log_density(&m, 0.0, &v(&[5.0])).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let bach = ModelSpec::new(ModelKind::Bachelier, 0.05, DMatrix::from_element(1, 1, 20.0), v(&[100.0]), 1.0).unwrap();
        let bs = ModelSpec::new(ModelKind::BlackScholes, 0.05, DMatrix::from_element(1, 1, 0.3), v(&[100.0]), 1.0).unwrap();
        for (m, lo, hi) in [(&bach, -100.0, 320.0), (&bs, 1e-9, 2000.0)] {
            let dens = TransitionDensity::new(m, 0.7).unwrap();
            let pdf = |y: f64| dens.log_pdf(&v(&[y])).exp();
            let total = adaptive_simpson(&pdf, lo, hi, 1e-10);
            assert!((total - 1.0).abs() < 1e-6, "{:?}: {total}", m.kind());
        }
    }

    #[test]
    fn sum2d_density_on_hyperplane() {
        let sigma: f64 = 0.1;
        // Log-means vanish when r = sigma^2 / 2; the printed integrand
        // assumes exactly that.
        let m = sum2d(0.5 * sigma * sigma);
        let dens = TransitionDensity::new(&m, 1.0).unwrap();
        let chart = HyperplaneChart::new(&Portfolio::equal(2), 200.0).unwrap();
        let printed = |s2: f64| {
            -(2.0 - s2 / 100.0).ln().powi(2) / (2.0 * sigma * sigma)
                - (s2 / 100.0).ln().powi(2) / (2.0 * sigma * sigma)
                - (200.0 - s2).ln()
                - s2.ln()
        };
        let offset = -(2.0 * std::f64::consts::PI * sigma * sigma).ln();
        for s2 in [60.0, 95.0, 100.0, 113.0, 150.0] {
            let x = chart.point(&v(&[s2]));
            assert!((dens.log_pdf(&x) - printed(s2) - offset).abs() < 1e-10);
        }
        // With r = 0 the Ito correction adds -log(x1 x2 / 1e4) / 2 - sigma^2 / 4.
        let dens0 = TransitionDensity::new(&sum2d(0.0), 1.0).unwrap();
        for s2 in [60.0, 100.0, 150.0] {
            let x = chart.point(&v(&[s2]));
            let shift = -0.5 * (x[0] * x[1] / 1e4).ln() - 0.25 * sigma * sigma;
            assert!((dens0.log_pdf(&x) - printed(s2) - offset - shift).abs() < 1e-10);
        }
        assert_eq!(dens0.log_pdf(&v(&[-1.0, 201.0])), f64::NEG_INFINITY);
    }

    #[test]
    fn chart_examples() {
        let c = chart(&Portfolio::equal(2), 200.0).unwrap();
        assert_eq!(c.point(&v(&[100.0])), v(&[100.0, 100.0]));
        let x = c.point(&v(&[150.0]));
        assert!((x[0] - 50.0).abs() < 1e-12 && (x[1] - 150.0).abs() < 1e-12);
        let c3 = chart(&Portfolio::new(vec![2.0, 1.0, 1.0]).unwrap(), 400.0).unwrap();
        assert_eq!(c3.pivot(), 0);
        assert_eq!(c3.point(&v(&[100.0, 100.0])), v(&[100.0, 100.0, 100.0]));
        // Largest weight is eliminated.
        let c4 = chart(&Portfolio::new(vec![0.5, -3.0, 1.0]).unwrap(), 10.0).unwrap();
        assert_eq!(c4.pivot(), 1);
        assert_eq!(c4.free(), &[0, 2]);
    }

    #[test]
    fn chart_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = rng.gen_range(1..8);
            let w: Vec<f64> = (0..d).map(|_| {
                let a: f64 = rng.gen_range(0.01..3.0);
                if rng.gen_bool(0.3) { -a } else { a }
            }).collect();
            let Ok(p) = Portfolio::new(w) else { continue };
            let s = rng.gen_range(-500.0..500.0);
            let c = chart(&p, s).unwrap();
            let z = DVector::from_fn(d - 1, |_, _| rng.gen_range(-300.0..300.0));
            let back = p.value(&c.point(&z)).unwrap();
            assert!((back - s).abs() <= 1e-10 * s.abs().max(1.0), "{back} vs {s}");
        }
    }

    #[test]
    fn pbbt_examples() {
        let bach = ModelSpec::new(ModelKind::Bachelier, 0.0, DMatrix::identity(2, 2) * 20.0, v(&[0.0, 0.0]), 1.0).unwrap();
        assert!((pbbt(&bach, &Portfolio::equal(2), 0.0, &v(&[3.0, -40.0])).unwrap() - 800.0).abs() < 1e-10);
        let bs = sum2d(0.0);
        assert!((pbbt(&bs, &Portfolio::equal(2), 0.0, &v(&[100.0, 100.0])).unwrap() - 200.0).abs() < 1e-10);
        let p = Portfolio::new(vec![1.0, -1.0]).unwrap();
        let a = 37.0;
        assert!((pbbt(&bs, &p, 0.0, &v(&[a, a])).unwrap() - 2.0 * a * a * 0.01).abs() < 1e-10);
        assert!(pbbt(&bs, &Portfolio::equal(3), 0.0, &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn sum2d_log_price_curvature() {
        // Second derivatives at the symmetric point, derived by hand from
        // the log-normal density with its Ito drift:
        //   f~'' = -2/sigma^2 + 3,   f'' = f~'' + 2.
        let li = log_integrands(&sum2d(0.0), &Portfolio::equal(2), 1.0, 200.0, Coordinates::LogPrice).unwrap();
        let z = v(&[0.0]);
        let (_, _, ht) = li.ftilde().derivatives(&z).unwrap();
        let (_, _, hf) = li.f().derivatives(&z).unwrap();
        assert!((ht[(0, 0)] + 197.0).abs() < 1e-9, "{}", ht[(0, 0)]);
        assert!((hf[(0, 0)] + 195.0).abs() < 1e-9, "{}", hf[(0, 0)]);
    }

    #[test]
    fn symmetric_point_is_critical_in_price_coordinates() {
        let li = log_integrands(&sum2d(0.0), &Portfolio::equal(2), 1.0, 200.0, Coordinates::Price).unwrap();
        let (_, g, _) = li.ftilde().derivatives(&v(&[100.0])).unwrap();
        assert!(g[0].abs() < 1e-14);
        let (_, g, _) = li.f().derivatives(&v(&[100.0])).unwrap();
        assert!(g[0].abs() < 1e-14);
    }

    #[test]
    fn log_price_rejected_for_bachelier() {
        assert!(log_integrands(&bach3d(), &Portfolio::equal(3), 0.1, 300.0, Coordinates::LogPrice).is_err());
    }

    fn check_against_fd(li: &LogIntegrands, z: &DVector<f64>, scale: f64) {
        for func in [li.f(), li.ftilde()] {
            let Some((val, g, h)) = func.derivatives(z) else { panic!("outside support at {z}") };
            assert!((val - func.value(z)).abs() <= 1e-10 * val.abs().max(1.0));
            let (gfd, hfd) = finite_difference_derivatives(|w| func.value(w), z, 1e-4, scale);
            let gs = g.amax().max(hfd.amax() * scale);
            let hs = h.amax();
            assert!((&g - &gfd).amax() <= 1e-5 * gs, "grad {g} vs {gfd}");
            assert!((&h - &hfd).amax() <= 1e-5 * hs, "hess {h} vs {hfd}");
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases: Vec<(ModelSpec, Portfolio, Coordinates)> = vec![
            (bs3d(), Portfolio::equal(3), Coordinates::Price),
            (bs3d(), Portfolio::new(vec![1.0, 2.0, 0.5]).unwrap(), Coordinates::LogPrice),
            (bach3d(), Portfolio::new(vec![1.0, -0.5, 2.0]).unwrap(), Coordinates::Price),
        ];
        for (model, p, coords) in &cases {
            let mut checked = 0;
            while checked < 100 {
                let t = rng.gen_range(0.05..0.5);
                let s = p.value(model.x0()).unwrap() * rng.gen_range(0.85..1.15);
                let li = log_integrands(model, p, t, s, *coords).unwrap();
                let x = DVector::from_fn(3, |i, _| model.x0()[i] * rng.gen_range(0.8..1.2));
                // Slide the random point onto the hyperplane along the pivot.
                let mut x = x;
                let piv = li.chart().pivot();
                let w = p.weights();
                let rest: f64 = (0..3).filter(|&i| i != piv).map(|i| w[i] * x[i]).sum();
                x[piv] = (s - rest) / w[piv];
                if model.kind() == ModelKind::BlackScholes && x[piv] <= 1.0 {
                    continue;
                }
                let z = li.coordinates_of(&x);
                let scale = if *coords == Coordinates::Price { 100.0 } else { 1.0 };
                check_against_fd(&li, &z, scale);
                checked += 1;
            }
        }
    }

    #[test]
    fn bachelier_numerator_minus_denominator_is_constant() {
        let li = log_integrands(&bach3d(), &Portfolio::equal(3), 0.2, 310.0, Coordinates::Price).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..15 {
            for j in 0..15 {
                let z = v(&[60.0 + 6.0 * i as f64, 70.0 + 5.0 * j as f64]);
                let diff = li.f().value(&z) - li.ftilde().value(&z);
                lo = lo.min(diff);
                hi = hi.max(diff);
            }
        }
        assert!(hi - lo < 1e-12);
    }
}
