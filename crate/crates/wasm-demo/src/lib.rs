//! Browser bindings for three small views of the library: a LASSO path on a
//! simulated reward regression, a side-by-side support map of both fitting
//! methods, and a miniature replication grid. Each entry point returns an SVG
//! string. The `*_svg` functions in the crate root are plain Rust so they can
//! be tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use std::fmt::Write as _;

use rfqi::bench::{self, ExperimentConfig, PenaltyKind};
use rfqi::evaluation::Method;
use rfqi::fqi::{self, FqiConfig, FqiMode, LinearQ, PenaltyRule, ThresholdRule};
use rfqi::mdp::{self, MdpParams, MdpSpec, Policy, TrajectoryBatch};
use rfqi::regression::{self, PenaltySelector, RegressionProblem, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use rfqi::{rng, Error, Result};
use wasm_bindgen::prelude::*;

const PATH_POINTS: usize = 40;
const THRESHOLD_SCALE: f64 = 2.0;

fn setup(seed: u64, n: usize, d: usize, support_size: usize, reward_noise_sd: f64) -> Result<(MdpSpec, TrajectoryBatch)> {
    let params = MdpParams {
        d,
        support_size,
        reward_noise_sd,
        ..MdpParams::default()
    };
    let spec = mdp::generate_mdp(&params, rng::derive_seed(seed, &[1]))?;
    let behavior = Policy::random_logistic(d, &mut rng::stream(seed, &[2]));
    let batch = mdp::simulate(&spec, &behavior, n, 1.0, rng::derive_seed(seed, &[3]))?;
    Ok((spec, batch))
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12"><rect width="{width}" height="{height}" fill="white"/>"#
    )
}

/// Coefficient paths of the stage-0, action-0 reward regression over a
/// log-spaced penalty grid. True-support coordinates are drawn in blue. The
/// vertical line marks the data-driven penalty and the dashed band the
/// threshold `±2λ` applied to the coefficients at that penalty.
pub fn lasso_path_svg(seed: u64, n: usize, d: usize, support_size: usize, reward_noise_sd: f64) -> Result<String> {
    let (spec, batch) = setup(seed, n, d, support_size, reward_noise_sd)?;
    let rows = batch.action_cell(0, 0);
    let x = batch.state_matrix(0, &rows);
    let y = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|&i| batch.reward(i, 0)));
    let (problem, _) = regression::standardize(&RegressionProblem::new(x, y)?)?;
    let selection = PenaltySelector::default().select(&problem, rng::derive_seed(seed, &[4]))?;

    let lambda_max = (problem.design().transpose() * problem.response()).amax() / problem.n() as f64;
    let lambda_min = lambda_max * 1e-2;
    let grid: Vec<f64> = (0..PATH_POINTS)
        .map(|k| lambda_max * (lambda_min / lambda_max).powf(k as f64 / (PATH_POINTS - 1) as f64))
        .collect();
    let mut paths = vec![Vec::with_capacity(PATH_POINTS); problem.p()];
    for &lambda in &grid {
        let fit = regression::lasso_fit(&problem, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
        for (path, w) in paths.iter_mut().zip(fit.coefficients) {
            path.push(w);
        }
    }

    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 30.0, 50.0);
    let y_abs = paths
        .iter()
        .flatten()
        .fold(THRESHOLD_SCALE * selection.penalty, |m: f64, v| m.max(v.abs()))
        * 1.05;
    let lx = |lambda: f64| {
        let f = (lambda_max.ln() - lambda.ln()) / (lambda_max.ln() - lambda_min.ln());
        left + f * (w - left - right)
    };
    let ly = |v: f64| top + (y_abs - v) / (2.0 * y_abs) * (h - top - bottom);

    let mut s = svg_open(w, h);
    let _ = write!(
        s,
        r#"<line x1="{left}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="black"/>"#,
        ly(0.0),
        w - right
    );
    let tau = THRESHOLD_SCALE * selection.penalty;
    let _ = write!(
        s,
        r#"<rect x="{left}" y="{:.2}" width="{}" height="{:.2}" fill="orange" fill-opacity="0.15"/>"#,
        ly(tau),
        w - left - right,
        ly(-tau) - ly(tau)
    );
    for (j, path) in paths.iter().enumerate() {
        let on = spec.support.contains(j);
        let pts: Vec<String> = grid.iter().zip(path).map(|(&l, &v)| format!("{:.2},{:.2}", lx(l), ly(v))).collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            pts.join(" "),
            if on { "#1f77b4" } else { "#999999" },
            if on { 1.8 } else { 0.8 }
        );
    }
    if selection.penalty <= lambda_max && selection.penalty >= lambda_min {
        let px = lx(selection.penalty);
        let _ = write!(
            s,
            r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="4 3"/>"##,
            h - bottom
        );
    }
    let _ = write!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">penalty, log scale, decreasing to the right (max {:.3})</text>"#,
        (left + w - right) / 2.0,
        h - 18.0,
        lambda_max
    );
    let _ = write!(
        s,
        r#"<text x="{left}" y="18">selected penalty {:.3}, threshold {:.3}; blue = true support, band = threshold</text></svg>"#,
        selection.penalty, tau
    );
    Ok(s)
}

fn fit_config(spec: &MdpSpec, penalty: f64, seed: u64) -> FqiConfig {
    let mut config = FqiConfig {
        mode: FqiMode::Evaluation(Policy::Uniform),
        discount: spec.discount,
        expected_support: spec.support.len(),
        seed,
        ..FqiConfig::default()
    };
    if penalty > 0.0 {
        config.penalty_rule = PenaltyRule::Fixed(penalty);
        config.threshold_rule = ThresholdRule::ScaledToPenalty(THRESHOLD_SCALE);
    }
    config
}

/// Largest absolute coefficient over actions, per stage and coordinate.
fn magnitudes(q: &LinearQ) -> Vec<Vec<f64>> {
    q.stages
        .iter()
        .map(|stage| {
            (0..q.d)
                .map(|j| stage.coef.iter().map(|c| c[j].abs()).fold(0.0, f64::max))
                .collect()
        })
        .collect()
}

/// Support map of both methods on one batch. Rows are stages, columns state
/// coordinates; the shade is the largest coefficient magnitude across
/// actions. A non-positive `penalty` selects the data-driven rule.
pub fn support_map_svg(
    seed: u64,
    n: usize,
    d: usize,
    support_size: usize,
    reward_noise_sd: f64,
    penalty: f64,
) -> Result<String> {
    let (spec, batch) = setup(seed, n, d, support_size, reward_noise_sd)?;
    let config = fit_config(&spec, penalty, rng::derive_seed(seed, &[5]));
    let panels = [
        (Method::RewardFiltered, fqi::run_reward_filtered(&batch, &config)?),
        (Method::NaiveThresholded, fqi::run_naive_thresholded(&batch, &config)?),
    ];
    let horizon = spec.horizon;
    let cell = (560.0 / d as f64).clamp(4.0, 24.0);
    let row = 18.0;
    let left = 110.0;
    let panel_h = horizon as f64 * row + 40.0;
    let w = left + d as f64 * cell + 20.0;
    let h = 30.0 + 2.0 * panel_h;
    let mut s = svg_open(w, h);
    let _ = write!(s, r#"<text x="10" y="18">bar above each panel marks the true support</text>"#);
    for (k, (method, fit)) in panels.iter().enumerate() {
        let y0 = 30.0 + k as f64 * panel_h;
        let mags = magnitudes(&fit.qfun);
        let scale = mags.iter().flatten().fold(1e-12, |m: f64, v| m.max(*v));
        let _ = write!(s, r#"<text x="10" y="{:.2}" font-weight="bold">{method}</text>"#, y0 + 12.0);
        for j in spec.support.indices() {
            let _ = write!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="4" fill="#2ca02c"/>"##,
                left + *j as f64 * cell,
                y0 + 16.0
            );
        }
        for (t, stage) in mags.iter().enumerate() {
            let y = y0 + 22.0 + t as f64 * row;
            let _ = write!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">stage {t} ({})</text>"#,
                left - 6.0,
                y + 13.0,
                fit.qfun.state_support(t).len()
            );
            for (j, m) in stage.iter().enumerate() {
                let shade = 255.0 - 215.0 * (m / scale).sqrt();
                let fill = if *m == 0.0 {
                    "#f4f4f4".to_string()
                } else {
                    format!("rgb({0:.0},{0:.0},255)", shade)
                };
                let _ = write!(
                    s,
                    r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    left + j as f64 * cell,
                    cell - 1.0,
                    row - 2.0
                );
            }
        }
    }
    s.push_str("</svg>");
    Ok(s)
}

/// Small replication grid rendered as one summary metric against `n`.
/// `sample_sizes` is a comma-separated list.
pub fn experiment_svg(
    seed: u64,
    replications: usize,
    sample_sizes: &str,
    d: usize,
    support_size: usize,
    penalty: f64,
    metric: &str,
) -> Result<String> {
    let sizes = sample_sizes
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidConfig(format!("sample sizes: {e}")))?;
    let mut config = ExperimentConfig {
        master_seed: seed,
        replications,
        sample_sizes: sizes,
        d,
        support_size,
        n_oracle: (20 * d).max(2000),
        num_eval_states: 200,
        penalty_num_sim: 100,
        ..ExperimentConfig::default()
    };
    if penalty > 0.0 {
        config.penalty_rule = PenaltyKind::Fixed;
        config.penalty_value = penalty;
    }
    config.validate()?;
    let grid = bench::run_grid(&config)?;
    let rows = bench::summary::summarize_records(&grid.records);
    bench::plot::render_svg(&rows, metric)
}

fn js(e: Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.code()))
}

#[wasm_bindgen(js_name = lassoPath)]
pub fn lasso_path(seed: u32, n: usize, d: usize, support_size: usize, reward_noise_sd: f64) -> std::result::Result<String, JsError> {
    lasso_path_svg(seed.into(), n, d, support_size, reward_noise_sd).map_err(js)
}

#[wasm_bindgen(js_name = supportMap)]
pub fn support_map(
    seed: u32,
    n: usize,
    d: usize,
    support_size: usize,
    reward_noise_sd: f64,
    penalty: f64,
) -> std::result::Result<String, JsError> {
    support_map_svg(seed.into(), n, d, support_size, reward_noise_sd, penalty).map_err(js)
}

#[wasm_bindgen(js_name = miniExperiment)]
pub fn mini_experiment(
    seed: u32,
    replications: usize,
    sample_sizes: &str,
    d: usize,
    support_size: usize,
    penalty: f64,
    metric: &str,
) -> std::result::Result<String, JsError> {
    experiment_svg(seed.into(), replications, sample_sizes, d, support_size, penalty, metric).map_err(js)
}
