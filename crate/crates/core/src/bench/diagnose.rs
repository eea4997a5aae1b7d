use serde::Serialize;

use super::{ExperimentConfig, ReplicationSeeds};
use crate::evaluation::{self, ReDiagnostic};
use crate::fqi;
use crate::mdp::{self, Policy};
use crate::regression::PenaltySelection;
use crate::rng;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct MarginAtN {
    pub n: usize,
    /// `√(2 ln d / n)`.
    pub penalty: f64,
    pub sigma: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataDrivenMargin {
    pub action: usize,
    pub selection: PenaltySelection,
    /// `min |β| − c·q·σ̂₁`.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub spec_fingerprint: String,
    pub n: usize,
    pub beta_min_floor: f64,
    pub min_signal: f64,
    /// Margins at the universal penalty and the true reward noise, one per
    /// configured sample size.
    pub theoretical_margins: Vec<MarginAtN>,
    /// Margins at the data-driven `(λ, σ̂)` of each stage-0 reward cell.
    pub data_driven_margins: Vec<DataDrivenMargin>,
    pub restricted_eigenvalues: ReDiagnostic,
}

/// Structural report for replication 0 of `config`: beta-min margins and a
/// sampled restricted-eigenvalue proxy on a stage-0 behavior batch of size `n`.
/// The true support is always among the evaluated subsets.
pub fn diagnose(config: &ExperimentConfig, n: usize, subset_size: usize, num_sampled: usize) -> Result<DiagnoseReport> {
    config.validate()?;
    let seeds = ReplicationSeeds::new(config.master_seed, 0, config.redraw_policies);
    let spec = mdp::generate_mdp(&config.mdp_params(), seeds.spec)?;
    let behavior = Policy::random_logistic(config.d, &mut rng::stream(seeds.behavior, &[]));
    let batch = mdp::simulate(&spec, &behavior, n, config.initial_sd, seeds.batch(n))?;

    let theoretical_margins = config
        .sample_sizes
        .iter()
        .map(|&m| {
            let penalty = evaluation::theoretical_penalty(config.d, m);
            MarginAtN {
                n: m,
                penalty,
                sigma: config.reward_noise_sd,
                margin: evaluation::beta_min_margin(&spec, penalty, config.reward_noise_sd),
            }
        })
        .collect();

    let fqi_config = config.fqi_config(&Policy::Uniform, seeds.penalty(n));
    let data_driven_margins = fqi::reward_penalty_selections(&batch, 0, &fqi_config)?
        .into_iter()
        .enumerate()
        .map(|(action, selection)| DataDrivenMargin {
            action,
            margin: evaluation::beta_min_margin(&spec, config.penalty_c * selection.quantile, selection.sigma_refined),
            selection,
        })
        .collect();

    let design = evaluation::stage_design(&batch, 0)?;
    let restricted_eigenvalues = evaluation::re_diagnostic(
        &design,
        subset_size,
        num_sampled,
        rng::derive_seed(seeds.root, &[u64::MAX]),
        Some(&spec.support),
    )?;

    Ok(DiagnoseReport {
        spec_fingerprint: spec.fingerprint(),
        n,
        beta_min_floor: spec.beta_min_floor,
        min_signal: spec.min_signal(),
        theoretical_margins,
        data_driven_margins,
        restricted_eigenvalues,
    })
}
