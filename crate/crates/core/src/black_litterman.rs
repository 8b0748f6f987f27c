//! Equilibrium prior and posterior expected returns.
//!
//! The posterior is the generalized least squares solution of the stacked
//! system `[π; q] = [I; P] μ + ε` with `ε ~ N(0, blockdiag(τΣ, Ω))`, computed
//! in precision form:
//!
//! ```text
//! μ = [(τΣ)⁻¹ + Pᵀ Ω⁻¹ P]⁻¹ [(τΣ)⁻¹ π + Pᵀ Ω⁻¹ q]
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::views::ViewSet;

/// Relative eigenvalue floor: `floor = EIGEN_FLOOR_REL * trace / n`.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;
/// Absolute eigenvalue floor for all-zero input (e.g. constant returns).
pub const EIGEN_FLOOR_ABS: f64 = 1e-16;
pub const DEFAULT_DELTA: f64 = 2.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlError {
    #[error("input: {0}")]
    Input(String),
    #[error("numerical: {message} (condition estimate {condition:e})")]
    Numerical { message: String, condition: f64 },
}

/// A symmetric positive semidefinite covariance matrix, fraction² units.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Wrap a matrix that is already symmetric to 1e-12 and PSD to -1e-10.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self, BlError> {
        if !sigma.is_square() {
            return Err(BlError::Input(format!("covariance is {}x{}", sigma.nrows(), sigma.ncols())));
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(BlError::Input("covariance has non-finite entries".into()));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(BlError::Input(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = SymmetricEigen::new(sigma.clone()).eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(BlError::Input(format!("covariance has eigenvalue {min_eig:e}")));
        }
        Ok(Self(sigma))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Mean of all n×n entries.
    pub fn mean_entry(&self) -> f64 {
        self.0.mean()
    }
}

/// Symmetrize and floor eigenvalues so the result is positive definite.
pub fn condition_covariance(raw: &DMatrix<f64>) -> Result<CovarianceMatrix, BlError> {
    if !raw.is_square() || raw.nrows() == 0 {
        return Err(BlError::Input(format!("covariance is {}x{}", raw.nrows(), raw.ncols())));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(BlError::Input("covariance has non-finite entries".into()));
    }
    let n = raw.nrows();
    let sym = (raw + raw.transpose()) * 0.5;
    let floor = (EIGEN_FLOOR_REL * sym.trace() / n as f64).max(EIGEN_FLOOR_ABS);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        return Ok(CovarianceMatrix(sym));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok(CovarianceMatrix((&rebuilt + rebuilt.transpose()) * 0.5))
}

/// Unbiased sample covariance of `columns[asset][t]`.
pub fn sample_covariance(columns: &[&[f64]]) -> Result<DMatrix<f64>, BlError> {
    let n = columns.len();
    let t = columns.first().map_or(0, |c| c.len());
    if n == 0 || t < 2 || columns.iter().any(|c| c.len() != t) {
        return Err(BlError::Input(format!("need >= 2 aligned observations per asset, got {t}")));
    }
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / t as f64).collect();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..t).map(|k| (columns[i][k] - means[i]) * (columns[j][k] - means[j])).sum();
            let v = s / (t - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPrior {
    pub pi: DVector<f64>,
    pub market_weights: DVector<f64>,
    pub delta: f64,
}

/// Reverse optimization: `w = caps / Σcaps`, `π = δ Σ w`.
pub fn implied_equilibrium(market_caps: &[f64], sigma: &CovarianceMatrix, delta: f64) -> Result<EquilibriumPrior, BlError> {
    if market_caps.len() != sigma.dim() {
        return Err(BlError::Input(format!(
            "{} caps for a {}-asset covariance",
            market_caps.len(),
            sigma.dim()
        )));
    }
    if let Some(bad) = market_caps.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(BlError::Input(format!("market cap must be positive, got {bad}")));
    }
    if !delta.is_finite() {
        return Err(BlError::Input("delta must be finite".into()));
    }
    let total: f64 = market_caps.iter().sum();
    let market_weights = DVector::from_iterator(market_caps.len(), market_caps.iter().map(|c| c / total));
    let pi = sigma.matrix() * &market_weights * delta;
    Ok(EquilibriumPrior {
        pi,
        market_weights,
        delta,
    })
}

#[derive(Debug, Clone)]
pub struct BlInputs {
    pub prior: EquilibriumPrior,
    pub sigma: CovarianceMatrix,
    pub tau: f64,
    pub views: ViewSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorReturns {
    pub mu: DVector<f64>,
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym).eigenvalues.map(f64::abs);
    let (lo, hi) = (e.min(), e.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn spd_factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>, BlError> {
    let condition = condition_estimate(&m);
    Cholesky::new(m).ok_or_else(|| BlError::Numerical {
        message: format!("{what} is not positive definite"),
        condition,
    })
}

impl BlInputs {
    fn check(&self) -> Result<(), BlError> {
        let n = self.sigma.dim();
        let v = &self.views;
        if self.prior.pi.len() != n || v.q.len() != v.p.nrows() || v.p.ncols() != n || v.omega.shape() != (v.q.len(), v.q.len()) {
            return Err(BlError::Input("dimension mismatch between prior, covariance, and views".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(BlError::Input(format!("tau must be positive, got {}", self.tau)));
        }
        if self.prior.pi.iter().chain(v.q.iter()).any(|x| !x.is_finite()) {
            return Err(BlError::Input("non-finite prior or view".into()));
        }
        Ok(())
    }
}

/// Posterior expected returns in precision form via Cholesky factorizations.
pub fn posterior(inputs: &BlInputs) -> Result<PosteriorReturns, BlError> {
    inputs.check()?;
    let views = &inputs.views;
    let prior_cov = inputs.sigma.matrix() * inputs.tau;
    let prior_precision = spd_factor(prior_cov, "τΣ")?.inverse();
    let omega_precision = spd_factor(views.omega.clone(), "Ω")?.inverse();
    let pt_omega_inv = views.p.transpose() * &omega_precision;

    let a = &prior_precision + &pt_omega_inv * &views.p;
    let a = (&a + a.transpose()) * 0.5;
    let b = &prior_precision * &inputs.prior.pi + &pt_omega_inv * &views.q;
    let mu = spd_factor(a, "posterior precision")?.solve(&b);
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(BlError::Numerical {
            message: "posterior is not finite".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(PosteriorReturns { mu })
}
