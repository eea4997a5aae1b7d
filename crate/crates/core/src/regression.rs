//! Dense least squares and LASSO.
//!
//! The LASSO objective is `(1/2n)‖y − Xw‖² + λ‖w‖₁` on a standardized design
//! (mean-zero, unit-variance columns with divisor `n`; centered response).
//! Thresholded LASSO composes [`lasso_fit`], [`threshold_support`] and
//! [`ols_restricted`].

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Floor on the smallest eigenvalue of a restricted Gram matrix.
pub const GRAM_EIG_FLOOR: f64 = 1e-10;
const CONSTANT_COLUMN_SD: f64 = 1e-12;
const STANDARDIZED_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    design: DMatrix<f64>,
    response: DVector<f64>,
    standardized: bool,
}

impl RegressionProblem {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "design must have at least one row and one column".into(),
            ));
        }
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has length {}",
                design.nrows(),
                response.len()
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            design,
            response,
            standardized: false,
        })
    }

    /// Build from row-major data.
    pub fn from_rows(rows: &[Vec<f64>], response: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged design rows".into()));
        }
        let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(design, DVector::from_column_slice(response))
    }

    /// Wrap data that is already standardized. Checks the column moments.
    pub fn new_standardized(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let mut problem = Self::new(design, response)?;
        for (j, col) in problem.design.column_iter().enumerate() {
            let (mean, sd) = column_moments(col.as_slice());
            if mean.abs() > STANDARDIZED_TOL || (sd - 1.0).abs() > STANDARDIZED_TOL {
                return Err(Error::InvalidArgument(format!(
                    "column {j} is not standardized (mean {mean:e}, sd {sd})"
                )));
            }
        }
        problem.standardized = true;
        Ok(problem)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Same design with a different response.
    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        if response.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "expected response of length {}, got {}",
                self.n(),
                response.len()
            )));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            design: self.design.clone(),
            response,
            standardized: self.standardized,
        })
    }

    fn ensure_standardized(&self) -> Result<()> {
        if self.standardized {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "operation requires a standardized problem".into(),
            ))
        }
    }
}

/// Mean and divisor-n standard deviation.
fn column_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
    pub response_mean: f64,
}

impl StandardizationStats {
    /// Map standardized-scale coefficients to the original scale.
    /// Returns `(coefficients, intercept)`.
    pub fn to_original_scale(&self, standardized_coef: &[f64]) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = standardized_coef
            .iter()
            .zip(&self.column_sds)
            .map(|(w, sd)| w / sd)
            .collect();
        let shift: f64 = coef.iter().zip(&self.column_means).map(|(w, m)| w * m).sum();
        (coef, self.response_mean - shift)
    }
}

pub fn standardize(problem: &RegressionProblem) -> Result<(RegressionProblem, StandardizationStats)> {
    let n = problem.n();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "standardization needs at least two rows".into(),
        ));
    }
    let mut design = problem.design.clone();
    let mut column_means = Vec::with_capacity(problem.p());
    let mut column_sds = Vec::with_capacity(problem.p());
    for (j, mut col) in design.column_iter_mut().enumerate() {
        let (mean, sd) = column_moments(col.as_slice());
        if !(sd > CONSTANT_COLUMN_SD) {
            return Err(Error::ConstantColumn(j));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        column_means.push(mean);
        column_sds.push(sd);
    }
    let response_mean = problem.response.mean();
    let response = problem.response.map(|v| v - response_mean);
    let stats = StandardizationStats {
        column_means,
        column_sds,
        response_mean,
    };
    Ok((
        RegressionProblem {
            design,
            response,
            standardized: true,
        },
        stats,
    ))
}

/// `sign(z) · max(|z| − t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Standardized-scale coefficients.
    pub coefficients: Vec<f64>,
    pub penalty: f64,
    /// Number of full coordinate-descent sweeps.
    pub iterations: usize,
    pub max_coef_delta_at_exit: f64,
    pub kkt_violation: f64,
}

impl LassoFit {
    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|w| w.abs()).sum()
    }
}

/// Cyclic coordinate descent with covariance updates.
///
/// Maintains `G·w` where `G = XᵀX/n`, so a sweep costs `O(p²)` after the
/// one-off `O(np²)` Gram computation.
pub fn lasso_fit(
    problem: &RegressionProblem,
    penalty: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoFit> {
    problem.ensure_standardized()?;
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty must be >= 0, got {penalty}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }

    let p = problem.p();
    let gram = linalg::scaled_gram(&problem.design);
    let cross = linalg::scaled_cross(&problem.design, &problem.response);
    let mut w = DVector::<f64>::zeros(p);
    let mut gw = DVector::<f64>::zeros(p);
    let mut iterations = 0;
    let mut max_delta = f64::INFINITY;

    #[cfg(debug_assertions)]
    let yy = problem.response.norm_squared() / problem.n() as f64;
    #[cfg(debug_assertions)]
    let mut last_objective = objective(yy, &cross, &gw, &w, penalty);

    while iterations < max_iters {
        iterations += 1;
        max_delta = 0.0_f64;
        for j in 0..p {
            let gjj = gram[(j, j)];
            let old = w[j];
            let z = cross[j] - gw[j] + gjj * old;
            let new = soft_threshold(z, penalty) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                w[j] = new;
                gw.axpy(delta, &gram.column(j), 1.0);
                max_delta = max_delta.max(delta.abs());
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = objective(yy, &cross, &gw, &w, penalty);
            debug_assert!(
                obj <= last_objective + 1e-10 * last_objective.abs().max(1.0),
                "objective increased: {last_objective} -> {obj}"
            );
            last_objective = obj;
        }
        if max_delta <= tol {
            break;
        }
    }

    let mut fit = LassoFit {
        coefficients: w.iter().copied().collect(),
        penalty,
        iterations,
        max_coef_delta_at_exit: max_delta,
        kkt_violation: 0.0,
    };
    fit.kkt_violation = verify_kkt(problem, &fit);
    if max_delta > tol {
        return Err(Error::DidNotConverge(Box::new(fit)));
    }
    Ok(fit)
}

#[cfg(debug_assertions)]
fn objective(yy: f64, cross: &DVector<f64>, gw: &DVector<f64>, w: &DVector<f64>, penalty: f64) -> f64 {
    0.5 * (yy - 2.0 * cross.dot(w) + w.dot(gw)) + penalty * w.lp_norm(1)
}

/// Largest violation of the LASSO optimality conditions.
///
/// With `gⱼ = xⱼᵀ(y − Xw)/n`, stationarity requires `gⱼ = λ·sign(wⱼ)` on
/// active coordinates and `|gⱼ| ≤ λ` elsewhere. The residual is computed from
/// the problem data directly, independent of the solver's cached state.
pub fn verify_kkt(problem: &RegressionProblem, fit: &LassoFit) -> f64 {
    let w = DVector::from_column_slice(&fit.coefficients);
    let residual = &problem.response - &problem.design * &w;
    let grad = linalg::scaled_cross(&problem.design, &residual);
    let lambda = fit.penalty;
    grad.iter()
        .zip(&fit.coefficients)
        .map(|(&g, &wj)| {
            if wj != 0.0 {
                (g - lambda * wj.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Coordinate indices in strictly increasing order, bound to an ambient dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupportSet {
    indices: Vec<usize>,
    dim: usize,
}

impl SupportSet {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate support index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidArgument(format!(
                "support index {bad} out of range for dimension {dim}"
            )));
        }
        Ok(Self { indices, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            dim,
        }
    }

    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
            dim,
        }
    }

    /// `{0, …, k−1}` within `dim`.
    pub fn prefix(k: usize, dim: usize) -> Result<Self> {
        Self::new((0..k).collect(), dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn union(&self, other: &SupportSet) -> SupportSet {
        let mut indices: Vec<usize> = self.indices.iter().chain(&other.indices).copied().collect();
        indices.sort_unstable();
        indices.dedup();
        SupportSet {
            indices,
            dim: self.dim.max(other.dim),
        }
    }

    pub fn intersection_len(&self, other: &SupportSet) -> usize {
        self.indices.iter().filter(|&&j| other.contains(j)).count()
    }
}

/// `{ j : |wⱼ| > threshold }`, strict.
pub fn threshold_support(fit: &LassoFit, threshold: f64) -> SupportSet {
    let indices = fit
        .coefficients
        .iter()
        .enumerate()
        .filter(|(_, w)| w.abs() > threshold)
        .map(|(j, _)| j)
        .collect();
    SupportSet {
        indices,
        dim: fit.coefficients.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients_on_support: Vec<f64>,
    pub support: SupportSet,
    pub residual_variance: f64,
}

impl OlsFit {
    /// Coefficients embedded into the ambient dimension, zero off-support.
    pub fn dense_coefficients(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.support.dim()];
        for (&j, &w) in self.support.indices().iter().zip(&self.coefficients_on_support) {
            dense[j] = w;
        }
        dense
    }
}

/// Least squares on the columns in `support`, via Cholesky of the restricted
/// Gram matrix `X_Sᵀ X_S / n`.
pub fn ols_restricted(problem: &RegressionProblem, support: &SupportSet) -> Result<OlsFit> {
    let n = problem.n();
    if support.dim() != problem.p() {
        return Err(Error::DimensionMismatch(format!(
            "support over dimension {} for a problem with {} columns",
            support.dim(),
            problem.p()
        )));
    }
    let k = support.len();
    if k == 0 {
        return Ok(OlsFit {
            coefficients_on_support: Vec::new(),
            support: support.clone(),
            residual_variance: problem.response.norm_squared() / n as f64,
        });
    }
    if k > n {
        return Err(Error::SingularGram { min_eigenvalue: 0.0 });
    }
    let restricted = problem.design.select_columns(support.indices());
    let gram = linalg::scaled_gram(&restricted);
    let cross = linalg::scaled_cross(&restricted, &problem.response);
    let w = linalg::solve_spd(&gram, &cross, GRAM_EIG_FLOOR)?;
    let rss = (&problem.response - &restricted * &w).norm_squared();
    let residual_variance = if n > k { rss / (n - k) as f64 } else { 0.0 };
    Ok(OlsFit {
        coefficients_on_support: w.iter().copied().collect(),
        support: support.clone(),
        residual_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedLasso {
    pub support: SupportSet,
    pub ols: OlsFit,
    pub lasso: LassoFit,
}

/// LASSO, then keep coefficients with `|w| > threshold`, then refit by OLS.
pub fn thresholded_lasso(
    problem: &RegressionProblem,
    penalty: f64,
    threshold: f64,
    tol: f64,
    max_iters: usize,
) -> Result<ThresholdedLasso> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    let lasso = lasso_fit(problem, penalty, tol, max_iters)?;
    let support = threshold_support(&lasso, threshold);
    let ols = ols_restricted(problem, &support)?;
    Ok(ThresholdedLasso {
        support,
        ols,
        lasso,
    })
}

/// Settings for the simulated-quantile penalty rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelector {
    pub alpha: f64,
    pub c: f64,
    pub num_sim: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PenaltySelector {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            c: 1.1,
            num_sim: 500,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    /// Final penalty `c·σ̂₁·q`.
    pub penalty: f64,
    /// First-pass penalty `c·σ̂₀·q`.
    pub initial_penalty: f64,
    /// Sample sd of the response.
    pub sigma_initial: f64,
    /// Residual sd of the LASSO fit at the first-pass penalty.
    pub sigma_refined: f64,
    /// Simulated `(1−α)` quantile of `‖Xᵀe/n‖_∞`.
    pub quantile: f64,
}

impl PenaltySelector {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.c > 1.0) {
            return Err(Error::InvalidArgument(format!("c must be > 1, got {}", self.c)));
        }
        if self.num_sim == 0 {
            return Err(Error::InvalidArgument("num_sim must be >= 1".into()));
        }
        Ok(())
    }

    /// Two-stage rule: `λ₀ = c·σ̂₀·q`, fit, then `λ = c·σ̂₁·q` with `σ̂₁` the
    /// residual sd at `λ₀`. One refinement pass.
    pub fn select(&self, problem: &RegressionProblem, seed: u64) -> Result<PenaltySelection> {
        self.validate()?;
        problem.ensure_standardized()?;
        let quantile = max_correlation_quantile(problem, self.alpha, self.num_sim, seed)?;
        let n = problem.n() as f64;
        let (_, sigma_initial) = column_moments(problem.response.as_slice());
        let initial_penalty = self.c * sigma_initial * quantile;
        let first = lasso_fit(problem, initial_penalty, self.tol, self.max_iters)?;
        let w = DVector::from_column_slice(&first.coefficients);
        let sigma_refined = ((&problem.response - &problem.design * w).norm_squared() / n).sqrt();
        Ok(PenaltySelection {
            penalty: self.c * sigma_refined * quantile,
            initial_penalty,
            sigma_initial,
            sigma_refined,
            quantile,
        })
    }
}

pub fn select_penalty(
    problem: &RegressionProblem,
    alpha: f64,
    c: f64,
    num_sim: usize,
    seed: u64,
) -> Result<f64> {
    let selector = PenaltySelector {
        alpha,
        c,
        num_sim,
        ..PenaltySelector::default()
    };
    selector.select(problem, seed).map(|s| s.penalty)
}

/// Empirical `(1−α)` quantile of `‖Xᵀe/n‖_∞` for `e ~ N(0, I_n)`.
///
/// `Xᵀe/n` is Gaussian with covariance `G/n`, `G = XᵀX/n`, so draws are
/// generated as `L z / √n` with `L Lᵀ = G` and `z ~ N(0, I_p)`; the cost per
/// draw is `O(p²)` instead of `O(np)`.
pub fn max_correlation_quantile(
    problem: &RegressionProblem,
    alpha: f64,
    num_sim: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || num_sim == 0 {
        return Err(Error::InvalidArgument(
            "need alpha in (0,1) and num_sim >= 1".into(),
        ));
    }
    let p = problem.p();
    let root = linalg::psd_sqrt(&linalg::scaled_gram(&problem.design));
    let scale = 1.0 / (problem.n() as f64).sqrt();
    let mut rng = rng::stream(seed, &[0x51_4D_41_58]);
    let mut z = DVector::<f64>::zeros(p);
    let mut maxima: Vec<f64> = (0..num_sim)
        .map(|_| {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            (&root * &z).amax() * scale
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * num_sim as f64).ceil() as usize;
    Ok(maxima[rank.clamp(1, num_sim) - 1])
}
