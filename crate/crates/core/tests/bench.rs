use rfqi::bench::{self, summary, ExperimentConfig, RESULTS_FILE, SUMMARY_FILE};
use rfqi::evaluation::{self, Method};
use rfqi::mdp::{self, MdpParams, Policy};
use rfqi::rng;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        sample_sizes: vec![100, 400],
        replications: 3,
        n_oracle: 2000,
        num_eval_states: 200,
        penalty_num_sim: 100,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn one_replication_gives_one_row_per_method() {
    let config = ExperimentConfig {
        sample_sizes: vec![100],
        replications: 1,
        n_oracle: 2000,
        num_eval_states: 100,
        penalty_num_sim: 100,
        ..ExperimentConfig::default()
    };
    let grid = bench::run_grid(&config).unwrap();
    assert_eq!(grid.records.len(), Method::ALL.len());
    assert!(grid.failures.is_empty());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = bench::run_experiment(&small_config(a.path())).unwrap();
    let second = bench::run_experiment(&small_config(b.path())).unwrap();
    assert_eq!(std::fs::read(first).unwrap(), std::fs::read(second).unwrap());
}

#[test]
fn summary_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let results = bench::run_experiment(&small_config(dir.path())).unwrap();
    let records = summary::read_results_csv(std::fs::File::open(&results).unwrap()).unwrap();
    let rows = summary::read_summary_csv(std::fs::File::open(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(dir.path().join(RESULTS_FILE).exists());
    for row in &rows {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.method == row.method && r.n == row.n && !r.is_failed())
            .map(|r| summary::metric_value(r, &row.metric).unwrap())
            .collect();
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        assert!((row.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((row.standard_error - sd / k.sqrt()).abs() <= 1e-12 * sd.max(1.0));
    }
}

#[test]
fn plot_of_a_real_run_is_valid_svg() {
    let dir = tempfile::tempdir().unwrap();
    bench::run_experiment(&small_config(dir.path())).unwrap();
    for metric in summary::METRICS {
        let out = dir.path().join(format!("{metric}.svg"));
        bench::plot::plot(&dir.path().join(SUMMARY_FILE), metric, &out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        roxmltree::Document::parse(&text).unwrap();
    }
}

#[test]
fn default_design_is_well_conditioned_on_sparse_subsets() {
    let params = MdpParams::default();
    let spec = mdp::generate_mdp(&params, 5).unwrap();
    let behavior = Policy::random_logistic(spec.d, &mut rng::stream(6, &[]));
    let batch = mdp::simulate(&spec, &behavior, 2000, 1.0, 7).unwrap();
    let design = evaluation::stage_design(&batch, 0).unwrap();
    let re = evaluation::re_diagnostic(&design, 20, 200, 8, Some(&spec.support)).unwrap();
    assert!(re.min_restricted_eig > 0.05, "{re:?}");
    assert_eq!(re.num_sampled, 201);
}
