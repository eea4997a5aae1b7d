use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluation::Method;
use crate::fqi::{FqiConfig, FqiMode, PenaltyRule, SupportPooling, ThresholdRule};
use crate::mdp::{MdpParams, Policy};
use crate::regression::{PenaltySelector, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    /// Evaluate a fixed logistic policy; the Q-MSE reference is `q^{π_e}`.
    Fqe,
    /// Greedy fitted-Q-iteration; the Q-MSE reference is the optimal `q*`.
    Fqi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    DataDriven,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    ScaledToPenalty,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    Union,
    PerAction,
}

/// Every field is one `key = value` line of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub support_size: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub discount: f64,
    pub state_noise_sd: f64,
    pub reward_noise_sd: f64,
    pub beta_min_floor: f64,
    pub spectral_cap: f64,
    pub initial_sd: f64,

    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub n_oracle: usize,
    pub num_eval_states: usize,
    pub methods: Vec<Method>,

    pub mode: ExperimentMode,
    pub penalty_rule: PenaltyKind,
    /// Penalty for `penalty_rule = "fixed"`.
    pub penalty_value: f64,
    pub penalty_alpha: f64,
    pub penalty_c: f64,
    pub penalty_num_sim: usize,
    pub threshold_rule: ThresholdKind,
    /// `C` in `τ = C·λ` for the scaled rule, the threshold itself otherwise.
    pub threshold_value: f64,
    pub support_pooling: PoolingKind,
    pub lasso_tol: f64,
    pub lasso_max_iters: usize,

    /// Redraw behavior and evaluation policies in every replication.
    pub redraw_policies: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Off by default so that `results.csv` is a pure function of the config.
    pub record_wall_time: bool,
    /// Worker cap; `0` defers to `RFQI_THREADS`, then to the rayon default.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mdp = MdpParams::default();
        let selector = PenaltySelector::default();
        Self {
            d: mdp.d,
            support_size: mdp.support_size,
            num_actions: mdp.num_actions,
            horizon: mdp.horizon,
            discount: mdp.discount,
            state_noise_sd: mdp.state_noise_sd,
            reward_noise_sd: mdp.reward_noise_sd,
            beta_min_floor: mdp.beta_min_floor,
            spectral_cap: mdp.spectral_cap,
            initial_sd: 1.0,
            sample_sizes: vec![100, 250, 500, 1000, 2000, 4000],
            replications: 50,
            n_oracle: 20_000,
            num_eval_states: 1000,
            methods: Method::ALL.to_vec(),
            mode: ExperimentMode::Fqe,
            penalty_rule: PenaltyKind::DataDriven,
            penalty_value: 0.1,
            penalty_alpha: selector.alpha,
            penalty_c: selector.c,
            penalty_num_sim: selector.num_sim,
            threshold_rule: ThresholdKind::ScaledToPenalty,
            threshold_value: 2.0,
            support_pooling: PoolingKind::Union,
            lasso_tol: DEFAULT_TOL,
            lasso_max_iters: DEFAULT_MAX_ITERS,
            redraw_policies: true,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            record_wall_time: false,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn mdp_params(&self) -> MdpParams {
        MdpParams {
            d: self.d,
            support_size: self.support_size,
            num_actions: self.num_actions,
            horizon: self.horizon,
            discount: self.discount,
            state_noise_sd: self.state_noise_sd,
            reward_noise_sd: self.reward_noise_sd,
            beta_min_floor: self.beta_min_floor,
            spectral_cap: self.spectral_cap,
        }
    }

    pub fn penalty_selector(&self) -> PenaltySelector {
        PenaltySelector {
            alpha: self.penalty_alpha,
            c: self.penalty_c,
            num_sim: self.penalty_num_sim,
            tol: self.lasso_tol,
            max_iters: self.lasso_max_iters,
        }
    }

    /// FQI settings for one cell. `evaluation` is ignored in FQI mode.
    pub fn fqi_config(&self, evaluation: &Policy, seed: u64) -> FqiConfig {
        FqiConfig {
            mode: match self.mode {
                ExperimentMode::Fqe => FqiMode::Evaluation(evaluation.clone()),
                ExperimentMode::Fqi => FqiMode::Iteration,
            },
            penalty_rule: match self.penalty_rule {
                PenaltyKind::DataDriven => PenaltyRule::DataDriven(self.penalty_selector()),
                PenaltyKind::Fixed => PenaltyRule::Fixed(self.penalty_value),
            },
            threshold_rule: match self.threshold_rule {
                ThresholdKind::ScaledToPenalty => ThresholdRule::ScaledToPenalty(self.threshold_value),
                ThresholdKind::Fixed => ThresholdRule::Fixed(self.threshold_value),
            },
            discount: self.discount,
            lasso_tol: self.lasso_tol,
            lasso_max_iters: self.lasso_max_iters,
            support_pooling: match self.support_pooling {
                PoolingKind::Union => SupportPooling::UnionOverActions,
                PoolingKind::PerAction => SupportPooling::PerAction,
            },
            expected_support: self.support_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        self.mdp_params().validate()?;
        if self.replications == 0 {
            return bad("replications must be >= 1");
        }
        if self.sample_sizes.is_empty() {
            return bad("sample_sizes must not be empty");
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample_sizes must be strictly increasing");
        }
        if self.sample_sizes[0] == 0 {
            return bad("sample sizes must be positive");
        }
        if self.n_oracle < 20 * self.d {
            return bad("n_oracle must be >= 20·d");
        }
        if self.num_eval_states == 0 {
            return bad("num_eval_states must be >= 1");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("methods must not repeat");
        }
        if !(self.initial_sd > 0.0 && self.initial_sd.is_finite()) {
            return bad("initial_sd must be positive");
        }
        if !(self.penalty_alpha > 0.0 && self.penalty_alpha < 1.0) {
            return bad("penalty_alpha must be in (0, 1)");
        }
        if !(self.penalty_c > 0.0) || self.penalty_num_sim == 0 {
            return bad("penalty_c must be > 0 and penalty_num_sim >= 1");
        }
        self.fqi_config(&Policy::Uniform, 0).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        let text = config.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), config);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let config = ExperimentConfig::from_toml_str(
            "d = 20\nsupport_size = 4\nsample_sizes = [50, 80]\nmode = \"fqi\"\nmethods = [\"RewardFiltered\"]\n",
        )
        .unwrap();
        assert_eq!(config.d, 20);
        assert_eq!(config.mode, ExperimentMode::Fqi);
        assert_eq!(config.replications, 50);
        assert_eq!(config.methods, vec![Method::RewardFiltered]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "replications = 0",
            "sample_sizes = [100, 100]",
            "n_oracle = 10",
            "unknown_key = 1",
            "threshold_value = -1.0",
            "methods = []",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(Error::InvalidConfig(_))),
                "{text}"
            );
        }
    }
}
