//! Market model, basket, and put payoff.
//!
//! Everything downstream (densities, projection, simulation) reads the model
//! only through this module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, PIVOT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Arithmetic Brownian motion with constant loadings.
    Bachelier,
    /// Geometric Brownian motion; row `i` of the loadings scales with `x_i`.
    BlackScholes,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bachelier => "bachelier",
            ModelKind::BlackScholes => "black_scholes",
        }
    }
}

/// Risk-neutral multivariate dynamics `dX = r X dt + b(X) dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    kind: ModelKind,
    rate: f64,
    sigma: DMatrix<f64>,
    omega: DMatrix<f64>,
    x0: DVector<f64>,
    maturity: f64,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        rate: f64,
        sigma: DMatrix<f64>,
        x0: DVector<f64>,
        maturity: f64,
    ) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() == 0 {
            return Err(Error::InvalidModel("volatility matrix must be at least 1x1".into()));
        }
        if x0.len() != d {
            return Err(Error::Dimension { expected: d, got: x0.len() });
        }
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::InvalidModel(format!("maturity must be positive, got {maturity}")));
        }
        if !rate.is_finite() || sigma.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        if kind == ModelKind::BlackScholes && x0.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidModel(
                "Black-Scholes initial prices must be strictly positive".into(),
            ));
        }
        let omega = &sigma * sigma.transpose();
        check_psd(&omega)?;
        Ok(Self { kind, rate, sigma, omega, x0, maturity })
    }

    /// Builds `Sigma = diag(vols) * G` with `G` the Cholesky factor of `correlation`.
    pub fn from_correlation(
        kind: ModelKind,
        rate: f64,
        vols: &[f64],
        correlation: &DMatrix<f64>,
        x0: DVector<f64>,
        maturity: f64,
    ) -> Result<Self> {
        let d = vols.len();
        if correlation.nrows() != d || correlation.ncols() != d {
            return Err(Error::Dimension { expected: d, got: correlation.nrows() });
        }
        for i in 0..d {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("correlation diagonal {i} is not 1")));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidModel("correlation matrix is not symmetric".into()));
                }
            }
        }
        let g = Cholesky::new(correlation)
            .map_err(|e| Error::InvalidModel(format!("correlation factorization: {e}")))?
            .into_l();
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(vols)) * g;
        Self::new(kind, rate, sigma, x0, maturity)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn rate(&self) -> f64 {
        self.rate
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    /// `Sigma * Sigma^T`.
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn maturity(&self) -> f64 {
        self.maturity
    }
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
    pub fn factors(&self) -> usize {
        self.sigma.ncols()
    }

    /// Same model with a different maturity.
    pub fn with_maturity(&self, maturity: f64) -> Result<Self> {
        Self::new(self.kind, self.rate, self.sigma.clone(), self.x0.clone(), maturity)
    }

    /// Risk-neutral drift `r x`.
    pub fn drift(&self, _t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(x * self.rate)
    }

    /// Diffusion matrix `b(t, x)`, `d x k`.
    pub fn diffusion(&self, _t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.len())?;
        match self.kind {
            ModelKind::Bachelier => Ok(self.sigma.clone()),
            ModelKind::BlackScholes => {
                if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "Black-Scholes diffusion needs positive prices, x[{i}] = {}",
                        x[i]
                    )));
                }
                let mut b = self.sigma.clone();
                for (i, mut row) in b.row_iter_mut().enumerate() {
                    row *= x[i];
                }
                Ok(b)
            }
        }
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got });
        }
        Ok(())
    }
}

fn check_psd(omega: &DMatrix<f64>) -> Result<()> {
    let scale = omega.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(());
    }
    let eig = omega.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PIVOT_TOL * scale {
        return Err(Error::InvalidModel(format!(
            "covariance is not positive semi-definite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Basket weights `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    weights: DVector<f64>,
}

impl Portfolio {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidPortfolio("no weights".into()));
        }
        if weights.iter().any(|w| *w == 0.0 || !w.is_finite()) {
            return Err(Error::InvalidPortfolio("every weight must be finite and nonzero".into()));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidPortfolio("at least one weight must be positive".into()));
        }
        Ok(Self { weights: DVector::from_vec(weights) })
    }

    pub fn equal(d: usize) -> Self {
        Self { weights: DVector::from_element(d, 1.0) }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn all_positive(&self) -> bool {
        self.weights.iter().all(|w| *w > 0.0)
    }

    /// `P x`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(self.weights.dot(x))
    }
}

/// Shorthand for [`Portfolio::value`].
pub fn basket_value(p: &Portfolio, x: &DVector<f64>) -> Result<f64> {
    p.value(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutPayoff {
    strike: f64,
}

impl PutPayoff {
    pub fn new(strike: f64) -> Result<Self> {
        if !(strike > 0.0) || !strike.is_finite() {
            return Err(Error::InvalidArgument(format!("strike must be positive, got {strike}")));
        }
        Ok(Self { strike })
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        (self.strike - s).max(0.0)
    }
}
