//! Pointwise projected coefficients of the one-dimensional surrogate.
//!
//! The drift projects exactly to `r s`. The squared volatility is the ratio
//! of two hyperplane integrals, each replaced by a Gaussian centred at the
//! maximizer of its log-integrand:
//!
//! ```text
//! b~^2(t,s) = exp(f(z*) - f~(z')) * sqrt(det(-H f~(z')) / det(-H f(z*)))
//! ```

use nalgebra::{DMatrix, DVector};

use crate::density::{Coordinates, LogFunction, LogIntegrands, TransitionDensity};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{ModelKind, ModelSpec, Portfolio};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Bound on the Newton decrement `sqrt(g^T (-H)^{-1} g)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

/// Decrement below which a stalled line search is accepted as converged.
const STALL_DECREMENT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Maximizer {
    pub z: DVector<f64>,
    pub value: f64,
    /// `log det(-H)` at `z`.
    pub logdet_neg_hessian: f64,
    pub iterations: usize,
}

/// Damped Newton ascent. The step is `(-H)^{-1} g`, halved until the
/// objective does not decrease; an indefinite Hessian away from the optimum
/// is handled by a diagonal shift.
pub fn newton_maximize<F: LogFunction>(
    f: &F,
    z0: &DVector<f64>,
    opts: NewtonOptions,
) -> Result<Maximizer> {
    let mut z = z0.clone();
    let Some((mut value, mut grad, mut hess)) = f.derivatives(&z) else {
        return Err(Error::Newton("start point outside the support".into()));
    };
    // Once the predicted gain drops below the resolution of the objective the
    // line search can no longer judge steps; full steps are taken until the
    // decrement stops shrinking.
    let mut polish_decrement: Option<f64> = None;
    for iter in 0..=opts.max_iter {
        let neg_h = -&hess;
        let exact = Cholesky::new(&neg_h).ok();
        let (chol, shifted) = match exact {
            Some(c) => (c, false),
            None => (shifted_factor(&neg_h)?, true),
        };
        let step = chol.solve(&grad);
        let decrement = grad.dot(&step).max(0.0).sqrt();
        let stalled = polish_decrement.is_some_and(|prev| decrement > 0.5 * prev);
        if !shifted && (decrement <= opts.tol || stalled) {
            return Ok(Maximizer { z, value, logdet_neg_hessian: chol.log_det(), iterations: iter });
        }
        if iter == opts.max_iter {
            break;
        }
        let resolvable = 16.0 * f64::EPSILON * value.abs().max(1.0);
        if !shifted && 0.5 * decrement * decrement <= resolvable {
            let next = &z + &step;
            if let Some((v, g, h)) = f.derivatives(&next) {
                z = next;
                value = v;
                grad = g;
                hess = h;
                polish_decrement = Some(decrement);
                continue;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &z + &step * alpha;
            let v = f.value(&trial);
            if v.is_finite() && v >= value {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => {
                let Some((v, g, h)) = f.derivatives(&next) else {
                    return Err(Error::Newton("iterate left the support".into()));
                };
                z = next;
                value = v;
                grad = g;
                hess = h;
            }
            None if !shifted && decrement <= STALL_DECREMENT => {
                return Ok(Maximizer { z, value, logdet_neg_hessian: chol.log_det(), iterations: iter });
            }
            None => return Err(Error::Newton(format!("line search failed (decrement {decrement:e})"))),
        }
    }
    if Cholesky::new(&-&hess).is_err() {
        return Err(Error::Newton("Hessian not negative definite at the terminal point".into()));
    }
    Err(Error::Newton(format!("no convergence in {} iterations", opts.max_iter)))
}

fn shifted_factor(neg_h: &DMatrix<f64>) -> Result<Cholesky> {
    let n = neg_h.nrows();
    let scale = (0..n).map(|i| neg_h[(i, i)].abs()).fold(1e-300, f64::max);
    let mut shift = 1e-6 * scale;
    for _ in 0..40 {
        let trial = neg_h + DMatrix::identity(n, n) * shift;
        if let Ok(c) = Cholesky::new(&trial) {
            return Ok(c);
        }
        shift *= 10.0;
    }
    Err(Error::Newton("cannot regularize Hessian".into()))
}

/// Maximizers of both log-integrands at one `(t, s)`.
#[derive(Debug, Clone)]
pub struct LaplacePoint {
    pub z_star: DVector<f64>,
    pub z_dagger: DVector<f64>,
    pub f_star: f64,
    pub ftilde_dagger: f64,
    pub logdet_hf: f64,
    pub logdet_hftilde: f64,
    pub iterations: (usize, usize),
}

impl LaplacePoint {
    /// Laplace ratio of the two integrals.
    pub fn ratio(&self) -> f64 {
        (self.f_star - self.ftilde_dagger + 0.5 * (self.logdet_hftilde - self.logdet_hf)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionOptions {
    /// `None` selects the default for the model kind.
    pub coordinates: Option<Coordinates>,
    pub newton: NewtonOptions,
}

/// Resolves the expansion coordinates for a model kind.
pub fn expansion_coordinates(requested: Option<Coordinates>, kind: ModelKind) -> Result<Coordinates> {
    match (requested, kind) {
        (Some(Coordinates::LogPrice), ModelKind::Bachelier) => Err(Error::InvalidArgument(
            "log-price expansion is undefined for Bachelier (prices may be negative)".into(),
        )),
        (Some(c), _) => Ok(c),
        (None, ModelKind::BlackScholes) => Ok(Coordinates::LogPrice),
        (None, ModelKind::Bachelier) => Ok(Coordinates::Price),
    }
}

pub fn projected_drift(model: &ModelSpec, _p: &Portfolio, _t: f64, s: f64) -> f64 {
    model.rate() * s
}

/// The Bachelier projection is exact and state independent: `P Sigma Sigma^T P^T`.
pub fn bachelier_projected_vol_sq(model: &ModelSpec, p: &Portfolio) -> f64 {
    let w = p.weights();
    w.dot(&(model.omega() * w))
}

/// Conditional mean of the Gaussian comparison law on the hyperplane, in
/// chart coordinates.
pub fn gaussian_start(li: &LogIntegrands, model: &ModelSpec, p: &Portfolio) -> Result<DVector<f64>> {
    let dens: &TransitionDensity = li.density();
    let w = p.weights();
    let s = li.chart().level();
    let c = dens.covariance();
    let x = match model.kind() {
        ModelKind::Bachelier => {
            let m = dens.mean();
            let cw = c * w;
            m + &cw * ((s - w.dot(m)) / w.dot(&cw))
        }
        ModelKind::BlackScholes => {
            // Gaussian in log-prices conditioned on the constraint linearized
            // at the current point; a few passes move the linearization onto
            // the conditional mean.
            let mu = dens.mean();
            let x0 = model.x0();
            let mut y = mu.clone();
            for _ in 0..4 {
                let xy = DVector::from_fn(y.len(), |i, _| x0[i] * y[i].exp());
                let a = w.component_mul(&xy);
                let ca = c * &a;
                let denom = a.dot(&ca);
                if !(denom > 0.0) {
                    break;
                }
                let resid = s - w.dot(&xy) + a.dot(&(&y - mu));
                y = mu + ca * (resid / denom);
            }
            DVector::from_fn(y.len(), |i, _| x0[i] * y[i].exp())
        }
    };
    let z = li.coordinates_of(&x);
    if li.ftilde().value(&z).is_finite() {
        return Ok(z);
    }
    // Proportional scaling of the forward point stays in the positive orthant
    // whenever the basket is reachable with positive prices.
    if model.kind() == ModelKind::BlackScholes {
        let fwd = DVector::from_fn(model.dim(), |i, _| model.x0()[i] * dens.mean()[i].exp());
        let base = w.dot(&fwd);
        if base * s > 0.0 {
            let z = li.coordinates_of(&(fwd * (s / base)));
            if li.ftilde().value(&z).is_finite() {
                return Ok(z);
            }
        }
    }
    Err(Error::Newton(format!("no Newton start inside the support at s = {s}")))
}

/// Maximizes both log-integrands at `(t, s)`.
pub fn laplace_point(
    model: &ModelSpec,
    p: &Portfolio,
    t: f64,
    s: f64,
    coords: Coordinates,
    newton: NewtonOptions,
) -> Result<LaplacePoint> {
    let li = LogIntegrands::new(model, p, t, s, coords)?;
    let z0 = gaussian_start(&li, model, p)?;
    let den = newton_maximize(&li.ftilde(), &z0, newton)?;
    let num = newton_maximize(&li.f(), &den.z, newton)?;
    Ok(LaplacePoint {
        z_star: num.z,
        z_dagger: den.z,
        f_star: num.value,
        ftilde_dagger: den.value,
        logdet_hf: num.logdet_neg_hessian,
        logdet_hftilde: den.logdet_neg_hessian,
        iterations: (num.iterations, den.iterations),
    })
}

/// Projected squared volatility `b~^2(t, s)`.
pub fn projected_vol_sq(
    model: &ModelSpec,
    p: &Portfolio,
    t: f64,
    s: f64,
    opts: &ProjectionOptions,
) -> Result<f64> {
    model.check_dim(p.dim())?;
    let coords = expansion_coordinates(opts.coordinates, model.kind())?;
    if model.kind() == ModelKind::Bachelier {
        return Ok(bachelier_projected_vol_sq(model, p));
    }
    let value = laplace_point(model, p, t, s, coords, opts.newton)?.ratio();
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::Newton(format!("non-finite projected volatility at (t={t}, s={s})")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::log_integrands;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn sum2d() -> ModelSpec {
        ModelSpec::new(ModelKind::BlackScholes, 0.0, DMatrix::identity(2, 2) * 0.1, v(&[100.0, 100.0]), 1.0).unwrap()
    }

    struct Quadratic {
        center: DVector<f64>,
        a: DMatrix<f64>,
    }

    impl LogFunction for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn value(&self, z: &DVector<f64>) -> f64 {
            let u = z - &self.center;
            -0.5 * u.dot(&(&self.a * &u)) + 3.0
        }
        fn derivatives(&self, z: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
            let u = z - &self.center;
            Some((self.value(z), -(&self.a * u), -self.a.clone()))
        }
    }

    #[test]
    fn drift_projection() {
        let m = ModelSpec::new(ModelKind::BlackScholes, 0.05, DMatrix::identity(2, 2) * 0.1, v(&[100.0, 100.0]), 1.0).unwrap();
        let p = Portfolio::equal(2);
        assert!((projected_drift(&m, &p, 0.3, 100.0) - 5.0).abs() < 1e-12);
        assert!((projected_drift(&m, &p, 0.3, 300.0) - 15.0).abs() < 1e-12);
        assert_eq!(projected_drift(&sum2d(), &p, 0.3, 123.0), 0.0);
    }

    #[test]
    fn newton_on_quadratic_takes_one_step() {
        let q = Quadratic {
            center: v(&[1.0, -2.0, 0.5]),
            a: DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 4.0]),
        };
        for start in [v(&[0.0, 0.0, 0.0]), v(&[100.0, -40.0, 7.0])] {
            let m = newton_maximize(&q, &start, NewtonOptions::default()).unwrap();
            assert_eq!(m.iterations, 1);
            assert!((&m.z - &q.center).amax() < 1e-12);
        }
    }

    #[test]
    fn newton_errors() {
        let q = Quadratic { center: v(&[0.0]), a: DMatrix::from_element(1, 1, -1.0) };
        assert!(newton_maximize(&q, &v(&[1.0]), NewtonOptions { tol: 1e-10, max_iter: 5 }).is_err());
        let li = log_integrands(&sum2d(), &Portfolio::equal(2), 1.0, 200.0, Coordinates::Price).unwrap();
        assert!(newton_maximize(&li.ftilde(), &v(&[250.0]), NewtonOptions::default()).is_err());
    }

    #[test]
    fn sum2d_maximizer_is_symmetric_point() {
        let li = log_integrands(&sum2d(), &Portfolio::equal(2), 1.0, 200.0, Coordinates::Price).unwrap();
        let m = newton_maximize(&li.ftilde(), &v(&[130.0]), NewtonOptions::default()).unwrap();
        assert!((m.z[0] - 100.0).abs() < 1e-8);
        // Log-price chart: the Jacobian of the free coordinate breaks the
        // symmetry slightly; the maximizer stays within a few 1e-3.
        let li = log_integrands(&sum2d(), &Portfolio::equal(2), 1.0, 200.0, Coordinates::LogPrice).unwrap();
        let m = newton_maximize(&li.ftilde(), &v(&[0.3]), NewtonOptions::default()).unwrap();
        assert!(m.z[0].abs() < 1e-2, "{}", m.z[0]);
        let x = li.point(&m.z);
        assert!((x[0] + x[1] - 200.0).abs() < 1e-10);
    }

    #[test]
    fn bachelier_maximizer_is_conditional_mean() {
        let sigma = DMatrix::from_row_slice(3, 3, &[20.0, 1.5, -0.7, 0.0, 18.0, 0.4, 0.0, 0.0, 25.0]);
        let m = ModelSpec::new(ModelKind::Bachelier, 0.05, sigma, v(&[100.0, 90.0, 110.0]), 1.0).unwrap();
        let p = Portfolio::new(vec![1.0, 2.0, -0.5]).unwrap();
        let (t, s) = (0.4, 260.0);
        let li = log_integrands(&m, &p, t, s, Coordinates::Price).unwrap();
        let opt = newton_maximize(&li.ftilde(), &li.coordinates_of(&v(&[50.0, 50.0, 40.0])), NewtonOptions::default()).unwrap();
        let x = li.point(&opt.z);
        // Closed-form conditioning of N(mean, cov) on w.x = s.
        let growth = (0.05f64 * t).exp();
        let mean = v(&[100.0, 90.0, 110.0]) * growth;
        let cov = m.omega() * (((2.0 * 0.05 * t) as f64).exp() - 1.0) / (2.0 * 0.05);
        let w = p.weights();
        let cw = &cov * w;
        let expect = &mean + &cw * ((s - w.dot(&mean)) / w.dot(&cw));
        assert!((x - expect).amax() < 1e-8);
    }

    #[test]
    fn sum2d_value_in_both_coordinates() {
        let p = Portfolio::equal(2);
        let mut values = Vec::new();
        for coords in [Coordinates::Price, Coordinates::LogPrice] {
            let opts = ProjectionOptions { coordinates: Some(coords), ..Default::default() };
            let b2 = projected_vol_sq(&sum2d(), &p, 1.0, 200.0, &opts).unwrap();
            assert!((b2 - 200.99).abs() <= 0.05, "{coords:?}: {b2}");
            values.push(b2);
        }
        assert!((values[0] - values[1]).abs() / values[1] < 1e-3);
        // Default for Black-Scholes is the log-price chart.
        let d = projected_vol_sq(&sum2d(), &p, 1.0, 200.0, &ProjectionOptions::default()).unwrap();
        assert_eq!(d, values[1]);
    }

    #[test]
    fn coordinate_resolution() {
        assert_eq!(expansion_coordinates(None, ModelKind::BlackScholes).unwrap(), Coordinates::LogPrice);
        assert_eq!(expansion_coordinates(None, ModelKind::Bachelier).unwrap(), Coordinates::Price);
        assert!(expansion_coordinates(Some(Coordinates::LogPrice), ModelKind::Bachelier).is_err());
    }

    #[test]
    fn bachelier_projection_is_constant() {
        let m = ModelSpec::new(ModelKind::Bachelier, 0.0, DMatrix::identity(2, 2) * 20.0, v(&[100.0, 100.0]), 1.0).unwrap();
        let p = Portfolio::equal(2);
        for (t, s) in [(0.1, 150.0), (0.9, 260.0)] {
            assert_eq!(projected_vol_sq(&m, &p, t, s, &ProjectionOptions::default()).unwrap(), 800.0);
        }
        // The Laplace route reproduces the constant: Gaussian integrands are exact.
        let lp = laplace_point(&m, &p, 0.5, 230.0, Coordinates::Price, NewtonOptions::default()).unwrap();
        assert!((lp.ratio() - 800.0).abs() / 800.0 < 1e-12);
    }

    #[test]
    fn black_scholes_scaling() {
        let p = Portfolio::new(vec![1.0, 0.5, 2.0]).unwrap();
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.3, 0.8, 1.0, 0.1, 0.3, 0.1, 1.0]);
        let base = v(&[100.0, 80.0, 120.0]);
        for coords in [Coordinates::Price, Coordinates::LogPrice] {
            let opts = ProjectionOptions { coordinates: Some(coords), ..Default::default() };
            let m1 = ModelSpec::from_correlation(ModelKind::BlackScholes, 0.05, &[0.2, 0.15, 0.1], &corr, base.clone(), 0.5).unwrap();
            let b1 = projected_vol_sq(&m1, &p, 0.3, 330.0, &opts).unwrap();
            for lambda in [0.5, 3.0] {
                let m2 = ModelSpec::from_correlation(ModelKind::BlackScholes, 0.05, &[0.2, 0.15, 0.1], &corr, &base * lambda, 0.5).unwrap();
                let b2 = projected_vol_sq(&m2, &p, 0.3, 330.0 * lambda, &opts).unwrap();
                let rel = (b2 - lambda * lambda * b1).abs() / (lambda * lambda * b1);
                assert!(rel < 1e-8, "{coords:?} lambda={lambda}: rel {rel:e}");
            }
        }
    }
}
