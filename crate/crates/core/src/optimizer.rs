//! Long-only, fully invested mean-variance optimization.
//!
//! Solves `min wᵀΣw − λ μᵀw` subject to `Σw = 1, w ≥ 0` with a primal
//! active-set method started from equal weights. Each step solves the
//! equality-constrained subproblem on the free assets:
//!
//! ```text
//! [2Σ_FF  −1] [w_F]   [λμ_F]
//! [ 1ᵀ     0] [ ν ] = [  1 ]
//! ```

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::black_litterman::{condition_covariance, sample_covariance, BlError, CovarianceMatrix};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const MAX_ITERATIONS: usize = 10_000;
/// Tolerance on stationarity and dual feasibility of a returned solution.
pub const KKT_TOLERANCE: f64 = 1e-6;
pub const SUM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizationError {
    #[error("input: {0}")]
    Input(String),
    #[error("no convergence in {iterations} iterations (stationarity {stationarity:e}, dual {dual:e})")]
    NotConverged {
        iterations: usize,
        stationarity: f64,
        dual: f64,
    },
    #[error("singular subproblem on {free} free assets")]
    Singular { free: usize },
    #[error("weights: {0}")]
    Weights(String),
}

/// Long-only weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub as_of: NaiveDate,
    pub tickers: Vec<String>,
    pub w: DVector<f64>,
}

impl PortfolioWeights {
    /// Validate, clamping negatives no larger than 1e-12 in magnitude to zero.
    pub fn new(as_of: NaiveDate, tickers: Vec<String>, mut w: DVector<f64>) -> Result<Self, OptimizationError> {
        if tickers.len() != w.len() {
            return Err(OptimizationError::Weights(format!("{} tickers for {} weights", tickers.len(), w.len())));
        }
        for x in w.iter_mut() {
            if !x.is_finite() || *x < -1e-12 {
                return Err(OptimizationError::Weights(format!("invalid weight {x}")));
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let sum = w.sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(OptimizationError::Weights(format!("weights sum to {sum}")));
        }
        Ok(Self { as_of, tickers, w })
    }
}

pub fn equal_weight(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

#[derive(Debug, Clone)]
pub struct MvoProblem {
    pub mu: DVector<f64>,
    pub sigma: CovarianceMatrix,
    pub lambda: f64,
}

/// KKT residuals at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    /// Multiplier on the budget constraint.
    pub nu: f64,
    /// Largest `|g_i − ν|` over assets held.
    pub stationarity: f64,
    /// Largest `ν − g_i` over assets not held, floored at zero.
    pub dual: f64,
}

impl KktCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.dual <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvoSolution {
    pub w: DVector<f64>,
    pub certificate: KktCertificate,
    pub iterations: usize,
}

fn gradient(problem: &MvoProblem, w: &DVector<f64>) -> DVector<f64> {
    problem.sigma.matrix() * w * 2.0 - &problem.mu * problem.lambda
}

/// Certificate with ν taken as the mean gradient over held assets.
pub fn kkt_certificate(problem: &MvoProblem, w: &DVector<f64>, held_threshold: f64) -> KktCertificate {
    let g = gradient(problem, w);
    let held: Vec<usize> = (0..w.len()).filter(|&i| w[i] > held_threshold).collect();
    let nu = held.iter().map(|&i| g[i]).sum::<f64>() / held.len().max(1) as f64;
    let stationarity = held.iter().map(|&i| (g[i] - nu).abs()).fold(0.0, f64::max);
    let dual = (0..w.len())
        .filter(|&i| w[i] <= held_threshold)
        .map(|i| nu - g[i])
        .fold(0.0, f64::max);
    KktCertificate { nu, stationarity, dual }
}

/// Solve the free-set equality subproblem; returns (w_F, ν).
fn solve_free(problem: &MvoProblem, free: &[usize]) -> Option<(Vec<f64>, f64)> {
    let m = free.len();
    let s = problem.sigma.matrix();
    let mut k = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            k[(a, b)] = 2.0 * s[(i, j)];
        }
        k[(a, m)] = -1.0;
        k[(m, a)] = 1.0;
        rhs[a] = problem.lambda * problem.mu[i];
    }
    rhs[m] = 1.0;
    let lu = k.clone().lu();
    let mut x = lu.solve(&rhs)?;
    // one step of iterative refinement for ill-conditioned Σ
    let r = &rhs - &k * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((x.rows(0, m).iter().copied().collect(), x[m]))
}

pub fn solve_mvo(problem: &MvoProblem) -> Result<MvoSolution, OptimizationError> {
    let n = problem.mu.len();
    if n == 0 || problem.sigma.dim() != n {
        return Err(OptimizationError::Input(format!("{} returns for a {}-asset covariance", n, problem.sigma.dim())));
    }
    if !problem.lambda.is_finite() || problem.lambda < 0.0 || problem.mu.iter().any(|x| !x.is_finite()) {
        return Err(OptimizationError::Input("lambda and mu must be finite, lambda >= 0".into()));
    }
    let scale = problem.sigma.matrix().abs().max() * 2.0 + problem.lambda * problem.mu.abs().max();
    let step_tol = 1e-14;
    let dual_tol = 1e-13 * scale.max(f64::MIN_POSITIVE);

    let mut w = equal_weight(n);
    let mut fixed = vec![false; n];
    let mut iterations = 0;
    loop {
        if iterations >= MAX_ITERATIONS {
            let c = kkt_certificate(problem, &w, 0.0);
            return Err(OptimizationError::NotConverged {
                iterations,
                stationarity: c.stationarity,
                dual: c.dual,
            });
        }
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let (target, nu) = solve_free(problem, &free).ok_or(OptimizationError::Singular { free: free.len() })?;
        let step: Vec<f64> = free.iter().zip(&target).map(|(&i, t)| t - w[i]).collect();
        let step_norm = step.iter().map(|d| d.abs()).fold(0.0, f64::max);

        if step_norm <= step_tol {
            let g = gradient(problem, &w);
            let release = (0..n)
                .filter(|&i| fixed[i])
                .map(|i| (i, g[i] - nu))
                .filter(|&(_, s)| s < -dual_tol)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => fixed[i] = false,
                None => break,
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (&i, &d) in free.iter().zip(&step) {
            if d < 0.0 {
                let a = w[i] / -d;
                if a < alpha {
                    alpha = a;
                    blocking = Some(i);
                }
            }
        }
        for (&i, &d) in free.iter().zip(&step) {
            w[i] += alpha * d;
        }
        if let Some(i) = blocking {
            w[i] = 0.0;
            fixed[i] = true;
        }
    }

    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum = w.sum();
    w /= sum;
    let certificate = kkt_certificate(problem, &w, 0.0);
    if !certificate.holds(KKT_TOLERANCE) {
        return Err(OptimizationError::NotConverged {
            iterations,
            stationarity: certificate.stationarity,
            dual: certificate.dual,
        });
    }
    Ok(MvoSolution {
        w,
        certificate,
        iterations,
    })
}

/// Historical-mean inputs for the plain mean-variance baseline.
pub fn mvo_baseline_inputs(window: &[&[f64]], lambda: f64) -> Result<MvoProblem, BlError> {
    let raw = sample_covariance(window)?;
    let sigma = condition_covariance(&raw)?;
    let mu = DVector::from_iterator(window.len(), window.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64));
    Ok(MvoProblem { mu, sigma, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn problem(mu: &[f64], sigma: DMatrix<f64>, lambda: f64) -> MvoProblem {
        MvoProblem {
            mu: DVector::from_column_slice(mu),
            sigma: CovarianceMatrix::new(sigma).unwrap(),
            lambda,
        }
    }

    fn objective(p: &MvoProblem, w: &DVector<f64>) -> f64 {
        (w.transpose() * p.sigma.matrix() * w)[0] - p.lambda * p.mu.dot(w)
    }

    #[test]
    fn symmetric_two_asset_split() {
        let p = problem(&[0.01, 0.01], DMatrix::identity(2, 2) * 0.04, 0.1);
        let s = solve_mvo(&p).unwrap();
        assert!((s.w[0] - 0.5).abs() < 1e-12 && (s.w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_form_interior_two_asset() {
        // w1 = 1/2 + λ(μ1 − μ2)/(4σ²) with λ = 0.1, σ² = 0.01
        let p = problem(&[0.002, 0.0], DMatrix::identity(2, 2) * 0.01, 0.1);
        let s = solve_mvo(&p).unwrap();
        assert!((s.w[0] - 0.505).abs() < 1e-10, "{}", s.w[0]);
        assert!((s.w[1] - 0.495).abs() < 1e-10);
    }

    #[test]
    fn corner_solution_matches_grid_oracle() {
        let sigma = DMatrix::from_row_slice(3, 3, &[0.04, 0.006, 0.002, 0.006, 0.09, 0.01, 0.002, 0.01, 0.01]);
        let p = problem(&[0.5, -0.3, 0.05], sigma, 0.1);
        let s = solve_mvo(&p).unwrap();
        let mut best = f64::INFINITY;
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w = DVector::from_column_slice(&[
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ]);
                best = best.min(objective(&p, &w));
            }
        }
        assert!(objective(&p, &s.w) <= best + 1e-12);
        assert!(s.certificate.holds(KKT_TOLERANCE));
        assert!(s.w.iter().any(|&x| x == 0.0), "expected a corner: {:?}", s.w);
    }

    #[test]
    fn zero_lambda_is_minimum_variance() {
        let sigma = DMatrix::from_row_slice(3, 3, &[0.04, 0.01, 0.0, 0.01, 0.02, 0.0, 0.0, 0.0, 0.09]);
        let p = problem(&[0.3, -0.2, 0.9], sigma.clone(), 0.0);
        let s = solve_mvo(&p).unwrap();
        let g = &sigma * &s.w * 2.0;
        for i in 0..3 {
            if s.w[i] > 0.0 {
                assert!((g[i] - s.certificate.nu).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = problem(&[0.01], DMatrix::identity(2, 2), 0.1);
        assert!(solve_mvo(&p).is_err());
        let p = problem(&[0.01, f64::NAN], DMatrix::identity(2, 2), 0.1);
        assert!(solve_mvo(&p).is_err());
        let d = NaiveDate::from_ymd_opt(2024, 1, 2).unwrap();
        assert!(PortfolioWeights::new(d, vec!["A".into()], DVector::from_element(1, 0.9)).is_err());
        let w = PortfolioWeights::new(d, vec!["A".into(), "B".into()], DVector::from_column_slice(&[1.0, -1e-13])).unwrap();
        assert_eq!(w.w[1], 0.0);
    }

    fn random_problem(seed: u64, n: usize) -> MvoProblem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random::<f64>() - 0.5) * 0.05;
        let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 1e-5;
        let mu = DVector::from_fn(n, |_, _| (rng.random::<f64>() - 0.5) * 0.02);
        MvoProblem {
            mu,
            sigma: CovarianceMatrix::new((&sigma + sigma.transpose()) * 0.5).unwrap(),
            lambda: rng.random::<f64>() * 2.0,
        }
    }

    proptest! {
        #[test]
        fn solutions_are_certified_and_feasible(seed in 0u64..5000, n in 1usize..12) {
            let p = random_problem(seed, n);
            let s = solve_mvo(&p).unwrap();
            prop_assert!((s.w.sum() - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(s.w.iter().all(|&x| x >= 0.0));
            prop_assert!(s.certificate.holds(KKT_TOLERANCE));
            // never worse than any vertex or the equal-weight point
            let f = objective(&p, &s.w);
            prop_assert!(f <= objective(&p, &equal_weight(n)) + 1e-12);
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                prop_assert!(f <= objective(&p, &e) + 1e-12);
            }
        }

        #[test]
        fn common_shift_in_mu_is_irrelevant(seed in 0u64..5000, n in 1usize..8, c in -0.05f64..0.05) {
            let p = random_problem(seed, n);
            let shifted = MvoProblem { mu: p.mu.add_scalar(c), ..p.clone() };
            let a = solve_mvo(&p).unwrap().w;
            let b = solve_mvo(&shifted).unwrap().w;
            prop_assert!((a - b).abs().max() <= 1e-8);
        }

        #[test]
        fn deterministic(seed in 0u64..1000) {
            let p = random_problem(seed, 6);
            prop_assert_eq!(solve_mvo(&p).unwrap(), solve_mvo(&p).unwrap());
        }
    }
}
