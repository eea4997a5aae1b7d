//! Metrics and structural diagnostics.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::fqi::LinearQ;
use crate::linalg;
use crate::mdp::{self, MdpSpec, Policy, TrajectoryBatch};
use crate::regression::{standardize, RegressionProblem, SupportSet};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    RewardFiltered,
    NaiveThresholded,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::RewardFiltered, Method::NaiveThresholded];

    pub fn name(self) -> &'static str {
        match self {
            Method::RewardFiltered => "RewardFiltered",
            Method::NaiveThresholded => "NaiveThresholded",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RewardFiltered" | "reward_filtered" => Ok(Method::RewardFiltered),
            "NaiveThresholded" | "naive_thresholded" | "naive" => Ok(Method::NaiveThresholded),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// One row of `results.csv`. Failed cells carry NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub q_mse: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub fp_count: f64,
    pub wall_time_ms: f64,
}

impl MetricsRecord {
    pub const HEADER: [&'static str; 8] = [
        "method",
        "n",
        "replication",
        "q_mse",
        "tpr",
        "fpr",
        "fp_count",
        "wall_time_ms",
    ];

    pub fn failed(method: Method, n: usize, replication: usize) -> Self {
        Self {
            method,
            n,
            replication,
            q_mse: f64::NAN,
            tpr: f64::NAN,
            fpr: f64::NAN,
            fp_count: f64::NAN,
            wall_time_ms: f64::NAN,
        }
    }

    pub fn is_failed(&self) -> bool {
        !self.q_mse.is_finite()
    }
}

/// Mean over `eval_states` and actions of `(q̂_t(s,a) − q_t(s,a))²`.
pub fn q_mse(estimate: &LinearQ, oracle: &LinearQ, eval_states: &[Vec<f64>], t: usize) -> Result<f64> {
    if eval_states.is_empty() {
        return Err(Error::InvalidArgument("eval_states is empty".into()));
    }
    if estimate.d != oracle.d || estimate.num_actions != oracle.num_actions {
        return Err(Error::DimensionMismatch("estimate and oracle shapes differ".into()));
    }
    if t >= estimate.horizon() || t >= oracle.horizon() {
        return Err(Error::InvalidArgument(format!("stage {t} out of range")));
    }
    if eval_states.iter().any(|s| s.len() != estimate.d) {
        return Err(Error::DimensionMismatch("eval state has wrong dimension".into()));
    }
    let total: f64 = eval_states
        .iter()
        .flat_map(|s| {
            (0..estimate.num_actions).map(move |a| {
                let diff = estimate.value(t, a, s) - oracle.value(t, a, s);
                diff * diff
            })
        })
        .sum();
    Ok(total / (eval_states.len() * estimate.num_actions) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tpr: f64,
    /// False positives over `d − |truth|`.
    pub fpr: f64,
    pub fp_count: usize,
}

pub fn support_metrics(estimated: &SupportSet, truth: &SupportSet, d: usize) -> Result<SupportMetrics> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if estimated.indices().iter().chain(truth.indices()).any(|&j| j >= d) {
        return Err(Error::InvalidArgument("support index out of range".into()));
    }
    let hits = estimated.intersection_len(truth);
    let fp_count = estimated.len() - hits;
    let negatives = d - truth.len();
    Ok(SupportMetrics {
        tpr: hits as f64 / truth.len() as f64,
        fpr: if negatives == 0 {
            0.0
        } else {
            fp_count as f64 / negatives as f64
        },
        fp_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReDiagnostic {
    pub subset_size: usize,
    pub num_sampled: usize,
    pub min_restricted_eig: f64,
    pub max_restricted_eig: f64,
}

/// Sampled restricted-eigenvalue proxy.
///
/// Draws `num_sampled` uniformly random coordinate subsets of size
/// `subset_size` and reports the extreme eigenvalues of `X_Sᵀ X_S / n` over
/// them; `forced`, when given, is evaluated as an extra subset. Subset `i` is
/// drawn from its own stream, so a run with more samples sees a superset of
/// the subsets of a smaller run with the same seed.
pub fn re_diagnostic(
    design: &DMatrix<f64>,
    subset_size: usize,
    num_sampled: usize,
    seed: u64,
    forced: Option<&SupportSet>,
) -> Result<ReDiagnostic> {
    let (n, d) = design.shape();
    if subset_size == 0 || subset_size > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "subset_size must be in [1, min(n, d)] = [1, {}]",
            n.min(d)
        )));
    }
    let mut min_eig = f64::INFINITY;
    let mut max_eig = 0.0_f64;
    let mut record = |cols: &[usize]| {
        let gram = linalg::scaled_gram(&design.select_columns(cols));
        let (lo, hi) = linalg::extreme_eigenvalues(&gram);
        min_eig = min_eig.min(lo.max(0.0));
        max_eig = max_eig.max(hi);
    };
    let mut count = 0;
    if let Some(subset) = forced {
        if !subset.is_empty() {
            record(subset.indices());
            count += 1;
        }
    }
    for i in 0..num_sampled {
        let mut r = rng::stream(seed, &[i as u64]);
        let mut cols = index::sample(&mut r, d, subset_size).into_vec();
        cols.sort_unstable();
        record(&cols);
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no subsets to evaluate".into()));
    }
    Ok(ReDiagnostic {
        subset_size,
        num_sampled: count,
        min_restricted_eig: min_eig,
        max_restricted_eig: max_eig.max(min_eig),
    })
}

/// Standardized stage-`t` state design of a batch (all trajectories).
pub fn stage_design(batch: &TrajectoryBatch, t: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = (0..batch.len()).collect();
    let design = batch.state_matrix(t, &rows);
    let n = design.nrows();
    let problem = RegressionProblem::new(design, nalgebra::DVector::zeros(n))?;
    Ok(standardize(&problem)?.0.design().clone())
}

/// `min |β_{a,j}|` over actions and on-support coordinates, minus `λσ`.
/// Positive when the beta-min condition holds at `(penalty, sigma)`.
pub fn beta_min_margin(spec: &MdpSpec, penalty: f64, sigma: f64) -> f64 {
    spec.min_signal() - penalty * sigma
}

/// Universal penalty level `√(2 ln d / n)`, without the noise scale.
pub fn theoretical_penalty(d: usize, n: usize) -> f64 {
    (2.0 * (d as f64).ln() / n as f64).sqrt()
}

/// Monte-Carlo estimate of the expected discounted return of `policy` from
/// the initial-state law.
pub fn policy_value(spec: &MdpSpec, policy: &Policy, n_rollouts: usize, initial_sd: f64, seed: u64) -> Result<f64> {
    let batch = mdp::simulate(spec, policy, n_rollouts, initial_sd, seed)?;
    let total: f64 = (0..batch.len())
        .map(|i| {
            (0..batch.horizon())
                .map(|t| spec.discount.powi(t as i32) * batch.reward(i, t))
                .sum::<f64>()
        })
        .sum();
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fqi::StageQ;
    use proptest::prelude::*;

    fn linear_q(coef: Vec<Vec<f64>>) -> LinearQ {
        let d = coef[0].len();
        let k = coef.len();
        LinearQ {
            d,
            num_actions: k,
            stages: vec![StageQ {
                intercept: vec![0.0; k],
                support: vec![SupportSet::full(d); k],
                coef,
            }],
        }
    }

    #[test]
    fn identical_functions_have_zero_mse() {
        let q = linear_q(vec![vec![1.0, -2.0], vec![0.5, 0.5]]);
        let states = vec![vec![1.0, 2.0], vec![-3.0, 0.25]];
        assert_eq!(q_mse(&q, &q, &states, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_state_arithmetic() {
        let est = linear_q(vec![vec![2.0], vec![0.0]]);
        let ora = linear_q(vec![vec![0.0], vec![0.0]]);
        assert_eq!(q_mse(&est, &ora, &[vec![1.0]], 0).unwrap(), 2.0);
    }

    #[test]
    fn coefficient_shift_matches_brute_force() {
        let ora = linear_q(vec![vec![0.3, -0.1, 0.7], vec![0.0, 1.0, -1.0]]);
        let mut est = ora.clone();
        let c = 0.25;
        for w in &mut est.stages[0].coef[1] {
            *w += c;
        }
        let states: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.1, -(i as f64)])
            .collect();
        let brute: f64 = states
            .iter()
            .map(|s| {
                let shift: f64 = s.iter().map(|v| c * v).sum();
                shift * shift / 2.0
            })
            .sum::<f64>()
            / states.len() as f64;
        assert!((q_mse(&est, &ora, &states, 0).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn support_metric_cases() {
        let truth = SupportSet::prefix(10, 50).unwrap();
        let m = support_metrics(&truth, &truth, 50).unwrap();
        assert_eq!((m.tpr, m.fpr, m.fp_count), (1.0, 0.0, 0));
        let m = support_metrics(&SupportSet::full(50), &truth, 50).unwrap();
        assert_eq!((m.tpr, m.fpr, m.fp_count), (1.0, 1.0, 40));
        let m = support_metrics(&SupportSet::prefix(5, 50).unwrap(), &truth, 50).unwrap();
        assert_eq!((m.tpr, m.fpr), (0.5, 0.0));
        assert!(matches!(
            support_metrics(&truth, &SupportSet::empty(50), 50),
            Err(Error::EmptyTruth)
        ));
    }

    #[test]
    fn orthonormal_design_has_unit_restricted_eigenvalues() {
        let x = DMatrix::from_fn(8, 7, |i, j| {
            if (i & (j + 1)).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let r = re_diagnostic(&x, 3, 20, 1, None).unwrap();
        assert!((r.min_restricted_eig - 1.0).abs() < 1e-8);
        assert!((r.max_restricted_eig - 1.0).abs() < 1e-8);
    }

    #[test]
    fn duplicated_column_is_detected() {
        let mut x = DMatrix::from_fn(30, 4, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let c0 = x.column(0).clone_owned();
        x.set_column(3, &c0);
        let forced = SupportSet::new(vec![0, 3], 4).unwrap();
        let r = re_diagnostic(&x, 2, 0, 0, Some(&forced)).unwrap();
        assert!(r.min_restricted_eig <= 1e-8);
    }

    #[test]
    fn oversized_subset_rejected() {
        let x = DMatrix::<f64>::identity(3, 3);
        assert!(re_diagnostic(&x, 4, 1, 0, None).is_err());
    }

    #[test]
    fn beta_margin_cases() {
        let spec = mdp::generate_mdp(&mdp::MdpParams::default(), 0).unwrap();
        assert!(beta_min_margin(&spec, 0.1, 1.0) >= 0.4);
        assert!(beta_min_margin(&spec, 100.0, 1.0) < 0.0);
        assert_eq!(beta_min_margin(&spec, 0.0, 0.7), spec.min_signal());
        assert!(spec.min_signal() >= 0.5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn support_metrics_permutation_invariant(mask in proptest::collection::vec(any::<bool>(), 12), truth_mask in proptest::collection::vec(any::<bool>(), 12), shift in 0usize..12) {
            prop_assume!(truth_mask.iter().any(|&b| b));
            let d = 12;
            let pick = |m: &[bool], perm: &dyn Fn(usize) -> usize| {
                SupportSet::new((0..d).filter(|&j| m[j]).map(perm).collect(), d).unwrap()
            };
            let id = |j: usize| j;
            let rot = move |j: usize| (j + shift) % d;
            let a = support_metrics(&pick(&mask, &id), &pick(&truth_mask, &id), d).unwrap();
            let b = support_metrics(&pick(&mask, &rot), &pick(&truth_mask, &rot), d).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn q_mse_nonnegative_and_order_invariant(states in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 1..20), w in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let est = linear_q(vec![w[..2].to_vec(), w[2..].to_vec()]);
            let ora = linear_q(vec![vec![0.1, 0.2], vec![-0.3, 0.4]]);
            let forward = q_mse(&est, &ora, &states, 0).unwrap();
            let mut reversed = states.clone();
            reversed.reverse();
            let backward = q_mse(&est, &ora, &reversed, 0).unwrap();
            prop_assert!(forward >= 0.0);
            prop_assert!((forward - backward).abs() <= 1e-12 * forward.max(1.0));
        }

        #[test]
        fn re_min_monotone_in_samples(seed in any::<u64>(), k in 1usize..20) {
            let x = DMatrix::from_fn(40, 10, |i, j| (((i * 31 + j * 17 + (seed % 97) as usize) % 23) as f64 - 11.0) / 7.0);
            let small = re_diagnostic(&x, 3, k, seed, None).unwrap();
            let large = re_diagnostic(&x, 3, k + 5, seed, None).unwrap();
            prop_assert!(large.min_restricted_eig <= small.min_restricted_eig);
            prop_assert!(large.max_restricted_eig >= small.max_restricted_eig);
        }
    }
}
