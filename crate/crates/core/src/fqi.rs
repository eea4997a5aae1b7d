//! Reward-filtered fitted-Q iteration and evaluation.
//!
//! Both estimators run the same backward recursion over stages
//! `t = T−1, …, 0`: build Bellman targets from the stage-`t+1` fit, then for
//! every action regress the targets on the stage-`t` states restricted to a
//! recovered support. They differ only in where that support comes from:
//!
//! * reward-filtered: thresholded LASSO of the *rewards* on the states;
//! * naive: thresholded LASSO of the *Bellman targets* on the states.
//!
//! Regressions include an intercept (via centering); coefficients are
//! reported on the original state scale.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::mdp::{self, MdpSpec, Policy, TrajectoryBatch};
use crate::regression::{
    ols_restricted, standardize, thresholded_lasso, PenaltySelection, PenaltySelector, RegressionProblem, SupportSet,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::rng;
use crate::{Error, Result};

/// Linear Q-function for a single stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageQ {
    /// Per action, length `d`, zero off `support[a]`.
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    pub support: Vec<SupportSet>,
}

impl StageQ {
    pub fn zeros(d: usize, num_actions: usize) -> Self {
        Self {
            coef: vec![vec![0.0; d]; num_actions],
            intercept: vec![0.0; num_actions],
            support: vec![SupportSet::empty(d); num_actions],
        }
    }
}

/// `q_t(s, a) = intercept[t][a] + coef[t][a] · s` for stages `t = 0..horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub d: usize,
    pub num_actions: usize,
    pub stages: Vec<StageQ>,
}

impl LinearQ {
    pub fn zeros(d: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            d,
            num_actions,
            stages: vec![StageQ::zeros(d, num_actions); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn value(&self, t: usize, action: usize, state: &[f64]) -> f64 {
        let stage = &self.stages[t];
        stage.intercept[action]
            + stage.coef[action]
                .iter()
                .zip(state)
                .map(|(w, s)| w * s)
                .sum::<f64>()
    }

    pub fn values(&self, t: usize, state: &[f64]) -> Vec<f64> {
        (0..self.num_actions).map(|a| self.value(t, a, state)).collect()
    }

    /// `argmax_a q_t(s, a)`, lowest index on ties.
    pub fn greedy_action(&self, t: usize, state: &[f64]) -> usize {
        let values = self.values(t, state);
        let mut best = 0;
        for (a, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = a;
            }
        }
        best
    }

    /// Union of the per-action supports at stage `t`.
    pub fn state_support(&self, t: usize) -> SupportSet {
        self.stages[t]
            .support
            .iter()
            .fold(SupportSet::empty(self.d), |acc, s| acc.union(s))
    }

    /// Every coefficient outside its recorded support is exactly zero.
    pub fn is_support_consistent(&self) -> bool {
        self.stages.iter().all(|stage| {
            stage.coef.iter().zip(&stage.support).all(|(coef, support)| {
                coef.iter()
                    .enumerate()
                    .all(|(j, &w)| w == 0.0 || support.contains(j))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FqiMode {
    /// Targets use `max_a' q_{t+1}(s', a')`.
    Iteration,
    /// Targets use `Σ_a' π(a' | s') q_{t+1}(s', a')`.
    Evaluation(Policy),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyRule {
    Fixed(f64),
    DataDriven(PenaltySelector),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    Fixed(f64),
    /// `τ₀ = C · λ`, where the data-driven `λ` already carries the `σ̂` factor.
    ScaledToPenalty(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportPooling {
    UnionOverActions,
    PerAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqiConfig {
    pub mode: FqiMode,
    pub penalty_rule: PenaltyRule,
    pub threshold_rule: ThresholdRule,
    pub discount: f64,
    pub lasso_tol: f64,
    pub lasso_max_iters: usize,
    pub support_pooling: SupportPooling,
    /// Used for the coverage check: every (stage, action) cell needs at least
    /// `max(10, 2 · expected_support)` samples.
    pub expected_support: usize,
    /// Root seed for penalty simulations.
    pub seed: u64,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self {
            mode: FqiMode::Iteration,
            penalty_rule: PenaltyRule::DataDriven(PenaltySelector::default()),
            threshold_rule: ThresholdRule::ScaledToPenalty(2.0),
            discount: 0.9,
            lasso_tol: DEFAULT_TOL,
            lasso_max_iters: DEFAULT_MAX_ITERS,
            support_pooling: SupportPooling::UnionOverActions,
            expected_support: 0,
            seed: 0,
        }
    }
}

impl FqiConfig {
    pub fn validate(&self) -> Result<()> {
        match self.threshold_rule {
            ThresholdRule::ScaledToPenalty(c) if !(c > 0.0) => {
                return Err(Error::InvalidConfig("threshold scale C must be > 0".into()))
            }
            ThresholdRule::Fixed(t) if !(t >= 0.0) => {
                return Err(Error::InvalidConfig("fixed threshold must be >= 0".into()))
            }
            _ => {}
        }
        if let PenaltyRule::Fixed(l) = self.penalty_rule {
            if !(l >= 0.0) {
                return Err(Error::InvalidConfig("fixed penalty must be >= 0".into()));
            }
        }
        if !(self.discount >= 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidConfig("discount must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn min_cell_samples(&self) -> usize {
        (2 * self.expected_support).max(10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepDiagnostics {
    pub t: usize,
    /// Largest penalty over the per-action LASSO fits.
    pub penalty_used: f64,
    pub threshold_used: f64,
    /// Size of the union of per-action supports.
    pub support_size: usize,
    /// Total sweeps over the per-action LASSO fits.
    pub lasso_iterations: usize,
    pub kkt_violation: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FqiResult {
    pub qfun: Arc<LinearQ>,
    pub greedy_policy: Policy,
    /// Ordered by stage.
    pub per_timestep_diagnostics: Vec<TimestepDiagnostics>,
}

/// Result of one thresholded-LASSO selection on a (stage, action) cell.
#[derive(Debug, Clone)]
struct Selection {
    support: SupportSet,
    penalty: f64,
    threshold: f64,
    iterations: usize,
    kkt_violation: f64,
}

/// Rows of stage `t` for each action, after the coverage check.
fn action_cells(batch: &TrajectoryBatch, t: usize, config: &FqiConfig) -> Result<Vec<Vec<usize>>> {
    let required = config.min_cell_samples();
    (0..batch.num_actions())
        .map(|a| {
            let rows = batch.action_cell(t, a);
            if rows.len() < required {
                Err(Error::EmptyActionCell {
                    action: a,
                    t,
                    count: rows.len(),
                    required,
                })
            } else {
                Ok(rows)
            }
        })
        .collect()
}

fn cell_problem(batch: &TrajectoryBatch, t: usize, rows: &[usize], response: &[f64]) -> Result<RegressionProblem> {
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| response[i]));
    RegressionProblem::new(batch.state_matrix(t, rows), y)
}

fn select_support(problem: &RegressionProblem, config: &FqiConfig, seed: u64) -> Result<Selection> {
    let (standardized, _) = standardize(problem)?;
    let penalty = match config.penalty_rule {
        PenaltyRule::Fixed(l) => l,
        PenaltyRule::DataDriven(selector) => selector.select(&standardized, seed)?.penalty,
    };
    let threshold = match config.threshold_rule {
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::ScaledToPenalty(c) => c * penalty,
    };
    let fit = thresholded_lasso(
        &standardized,
        penalty,
        threshold,
        config.lasso_tol,
        config.lasso_max_iters,
    )?;
    Ok(Selection {
        support: fit.support,
        penalty,
        threshold,
        iterations: fit.lasso.iterations,
        kkt_violation: fit.lasso.kkt_violation,
    })
}

/// OLS with intercept on the columns in `support`. Returns `(coef, intercept)`
/// on the original scale.
fn refit(problem: &RegressionProblem, support: &SupportSet) -> Result<(Vec<f64>, f64)> {
    let (standardized, stats) = standardize(problem)?;
    let ols = ols_restricted(&standardized, support)?;
    Ok(stats.to_original_scale(&ols.dense_coefficients()))
}

fn penalty_seed(config: &FqiConfig, t: usize, action: usize) -> u64 {
    rng::derive_seed(config.seed, &[t as u64, action as u64])
}

fn pool(selections: &[Selection], pooling: SupportPooling, d: usize) -> Vec<SupportSet> {
    match pooling {
        SupportPooling::PerAction => selections.iter().map(|s| s.support.clone()).collect(),
        SupportPooling::UnionOverActions => {
            let union = selections
                .iter()
                .fold(SupportSet::empty(d), |acc, s| acc.union(&s.support));
            vec![union; selections.len()]
        }
    }
}

fn select_all(
    batch: &TrajectoryBatch,
    t: usize,
    cells: &[Vec<usize>],
    response: &[f64],
    config: &FqiConfig,
) -> Result<Vec<Selection>> {
    cells
        .iter()
        .enumerate()
        .map(|(a, rows)| {
            cell_problem(batch, t, rows, response)
                .and_then(|p| select_support(&p, config, penalty_seed(config, t, a)))
                .map_err(|e| e.at_stage(t, a))
        })
        .collect()
}

/// Per-action supports recovered from the stage-`t` rewards, pooled per
/// `config.support_pooling`.
pub fn reward_supports(batch: &TrajectoryBatch, t: usize, config: &FqiConfig) -> Result<Vec<SupportSet>> {
    let cells = action_cells(batch, t, config)?;
    let rewards = stage_rewards(batch, t);
    let selections = select_all(batch, t, &cells, &rewards, config)?;
    Ok(pool(&selections, config.support_pooling, batch.d()))
}

/// Data-driven penalty selection on each action's stage-`t` reward
/// regression, with the same seeds the fitting routines use. Falls back to
/// the default selector when `config.penalty_rule` is fixed.
pub fn reward_penalty_selections(batch: &TrajectoryBatch, t: usize, config: &FqiConfig) -> Result<Vec<PenaltySelection>> {
    let selector = match config.penalty_rule {
        PenaltyRule::DataDriven(s) => s,
        PenaltyRule::Fixed(_) => PenaltySelector::default(),
    };
    let rewards = stage_rewards(batch, t);
    action_cells(batch, t, config)?
        .iter()
        .enumerate()
        .map(|(a, rows)| {
            let problem = cell_problem(batch, t, rows, &rewards)?;
            let (standardized, _) = standardize(&problem)?;
            selector
                .select(&standardized, penalty_seed(config, t, a))
                .map_err(|e| e.at_stage(t, a))
        })
        .collect()
}

/// State coordinates recovered from the stage-`t` rewards (union over actions).
pub fn reward_support(batch: &TrajectoryBatch, t: usize, config: &FqiConfig) -> Result<SupportSet> {
    Ok(reward_supports(batch, t, config)?
        .iter()
        .fold(SupportSet::empty(batch.d()), |acc, s| acc.union(s)))
}

fn stage_rewards(batch: &TrajectoryBatch, t: usize) -> Vec<f64> {
    (0..batch.len()).map(|i| batch.reward(i, t)).collect()
}

/// Regression responses for stage `t`, one per trajectory.
///
/// At the last stage these are the rewards; otherwise
/// `r + γ · agg_{a'} q_{t+1}(s', a')` with the aggregate given by the mode.
pub fn bellman_targets(
    batch: &TrajectoryBatch,
    t: usize,
    q_next: Option<&LinearQ>,
    config: &FqiConfig,
) -> Result<Vec<f64>> {
    let last = batch.horizon() - 1;
    match (t == last, q_next) {
        (true, None) => return Ok(stage_rewards(batch, t)),
        (false, Some(q)) if q.horizon() > t + 1 => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "q_next must be given exactly for stages before {last} (got stage {t})"
            )))
        }
    }
    let q = q_next.expect("checked above");
    let gamma = config.discount;
    let num_actions = batch.num_actions();
    Ok((0..batch.len())
        .map(|i| {
            let next = batch.state(i, t + 1);
            let values = q.values(t + 1, next);
            let continuation = match &config.mode {
                FqiMode::Iteration => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                FqiMode::Evaluation(policy) => policy
                    .probs(next, t + 1, num_actions)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum(),
            };
            batch.reward(i, t) + gamma * continuation
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SupportSource {
    Rewards,
    Targets,
    /// All coordinates, no selection.
    Full,
}

fn run_backward(batch: &TrajectoryBatch, config: &FqiConfig, source: SupportSource) -> Result<FqiResult> {
    config.validate()?;
    let horizon = batch.horizon();
    let d = batch.d();
    let num_actions = batch.num_actions();
    let mut q = LinearQ::zeros(d, num_actions, horizon);
    let mut diagnostics = Vec::with_capacity(horizon);

    for t in (0..horizon).rev() {
        let cells = action_cells(batch, t, config)?;
        let q_next = (t + 1 < horizon).then_some(&q);
        let targets = bellman_targets(batch, t, q_next, config)?;

        let selections = match source {
            SupportSource::Rewards => Some(select_all(batch, t, &cells, &stage_rewards(batch, t), config)?),
            SupportSource::Targets => Some(select_all(batch, t, &cells, &targets, config)?),
            SupportSource::Full => None,
        };
        let supports = match &selections {
            Some(sel) => pool(sel, config.support_pooling, d),
            None => vec![SupportSet::full(d); num_actions],
        };

        let mut stage = StageQ::zeros(d, num_actions);
        let mut warnings = Vec::new();
        for (a, rows) in cells.iter().enumerate() {
            if supports[a].is_empty() {
                warnings.push(format!("stage {t}, action {a}: empty recovered support"));
            }
            let problem = cell_problem(batch, t, rows, &targets).map_err(|e| e.at_stage(t, a))?;
            let (coef, intercept) = refit(&problem, &supports[a]).map_err(|e| e.at_stage(t, a))?;
            stage.coef[a] = coef;
            stage.intercept[a] = intercept;
        }
        stage.support = supports;
        q.stages[t] = stage;

        let union = q.state_support(t);
        let diag = match &selections {
            Some(sel) => TimestepDiagnostics {
                t,
                penalty_used: sel.iter().map(|s| s.penalty).fold(0.0, f64::max),
                threshold_used: sel.iter().map(|s| s.threshold).fold(0.0, f64::max),
                support_size: union.len(),
                lasso_iterations: sel.iter().map(|s| s.iterations).sum(),
                kkt_violation: sel.iter().map(|s| s.kkt_violation).fold(0.0, f64::max),
                warnings,
            },
            None => TimestepDiagnostics {
                t,
                penalty_used: 0.0,
                threshold_used: 0.0,
                support_size: union.len(),
                lasso_iterations: 0,
                kkt_violation: 0.0,
                warnings,
            },
        };
        diagnostics.push(diag);
    }
    diagnostics.reverse();
    debug_assert!(q.is_support_consistent());
    let qfun = Arc::new(q);
    Ok(FqiResult {
        greedy_policy: Policy::Greedy(Arc::clone(&qfun)),
        qfun,
        per_timestep_diagnostics: diagnostics,
    })
}

/// Reward-filtered fitted-Q: supports come from thresholded LASSO on rewards,
/// Q-functions are refit by least squares on those supports.
pub fn run_reward_filtered(batch: &TrajectoryBatch, config: &FqiConfig) -> Result<FqiResult> {
    run_backward(batch, config, SupportSource::Rewards)
}

/// Baseline: thresholded LASSO directly on the Bellman targets.
pub fn run_naive_thresholded(batch: &TrajectoryBatch, config: &FqiConfig) -> Result<FqiResult> {
    run_backward(batch, config, SupportSource::Targets)
}

/// Unrestricted per-action least squares on all coordinates.
pub fn run_unrestricted(batch: &TrajectoryBatch, config: &FqiConfig) -> Result<FqiResult> {
    run_backward(batch, config, SupportSource::Full)
}

/// Reference Q-function from a fresh, large uniform-behavior batch fitted
/// without any support restriction. Requires `n_oracle ≥ 20·d`.
pub fn run_oracle_q(
    spec: &MdpSpec,
    n_oracle: usize,
    initial_sd: f64,
    seed: u64,
    config: &FqiConfig,
) -> Result<LinearQ> {
    if n_oracle < 20 * spec.d {
        return Err(Error::InvalidArgument(format!(
            "n_oracle = {n_oracle} is below 20·d = {}",
            20 * spec.d
        )));
    }
    let batch = mdp::simulate(spec, &Policy::Uniform, n_oracle, initial_sd, seed)?;
    let result = run_unrestricted(&batch, config)?;
    Ok(Arc::try_unwrap(result.qfun).unwrap_or_else(|q| (*q).clone()))
}
