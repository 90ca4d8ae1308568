//! Experiment orchestration: reproducible estimator sweeps over
//! `(λ, n, estimator, risk)` grids with CSV emission.
//!
//! Every sweep cell `(λ-index, n-index, rep)` derives its own seed from the
//! base seed, so results are independent of execution order and worker
//! count; rows are serialized in a fixed cell order and aggregate rows are
//! recomputed from the per-rep rows.

use crate::envs::{build_env, optimal_policy, EnvError, EnvOverrides};
use crate::estimators::{
    crossfit_estimate, estimate_c_is, estimate_dm, estimate_dr, estimate_f_is, estimate_is_clip,
    estimate_m_dr, estimate_s_is, estimate_wdr, estimate_wis, EstimatorError, EstimatorKind,
};
use crate::mdp::{mixture_policy, sample_dataset, Dataset, MdpError, Policy, TabularMdp};
use crate::model::{compute_return_model, learn_mdp, true_cdf, AtomMode, ModelError};
use crate::risk::{evaluate_risk, parse_risk, RiskError, RiskFunctional};
use crate::stepfn::StepFunction;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Where the target policy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicySource {
    /// Exact Q-iteration on the true MDP (deterministic greedy).
    OptimalDp,
    /// The greedy policy mixed with `epsilon` of uniform exploration.
    ///
    /// A fully deterministic target makes every long-horizon trajectory
    /// weight vanish under a mixture behavior policy, leaving the
    /// self-normalized estimators (WIS, WDR) without a usable normalizer;
    /// a softened target keeps all weights positive.
    SoftenedOptimalDp { epsilon: f64 },
    /// A serialized [`Policy`] JSON file.
    File(PathBuf),
}

impl Default for TargetPolicySource {
    fn default() -> Self {
        TargetPolicySource::OptimalDp
    }
}

fn default_grid_points() -> usize {
    50
}

/// Declarative sweep description, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub env_id: String,
    #[serde(default)]
    pub env_overrides: EnvOverrides,
    #[serde(default)]
    pub target_policy: TargetPolicySource,
    pub lambdas: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub estimators: Vec<String>,
    pub risks: Vec<String>,
    /// Evaluation points for C-IS selection and bands, uniform over the
    /// return support.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub crossfit: bool,
    #[serde(default)]
    pub model_horizon_override: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.lambdas.is_empty()
            || self.sample_sizes.is_empty()
            || self.estimators.is_empty()
        {
            return Err(HarnessError::InvalidConfig(
                "lambdas, sample_sizes, estimators must be nonempty".into(),
            ));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::InvalidConfig(
                "sample_sizes must be strictly ascending".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidConfig("repetitions must be ≥ 1".into()));
        }
        for e in &self.estimators {
            e.parse::<EstimatorKind>()
                .map_err(HarnessError::InvalidConfig)?;
        }
        Ok(())
    }
}

/// One emitted measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub env: String,
    pub lambda: f64,
    pub n: usize,
    /// Repetition index, or -1 for aggregate rows.
    pub rep: i64,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.env, self.lambda, self.n, self.rep, self.estimator, self.metric, self.value,
            self.seed
        )
    }
}

pub const CSV_HEADER: &str = "env,lambda,n,rep,estimator,metric,value,seed";

/// Splitmix64 step, used to derive independent per-cell seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for the sweep cell `(λ-index, n-index, rep)`.
pub fn cell_seed(base_seed: u64, lambda_idx: usize, n_idx: usize, rep: usize) -> u64 {
    let mut z = splitmix(base_seed);
    z = splitmix(z ^ (lambda_idx as u64).wrapping_mul(0x0000_0001_0000_0001));
    z = splitmix(z ^ (n_idx as u64).wrapping_mul(0x0000_0100_0000_0001));
    splitmix(z ^ rep as u64)
}

/// Uniform evaluation grid of `m` points over `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Options shared by the sweep cells and the CLI `estimate` command.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub crossfit: bool,
    pub horizon_override: Option<usize>,
    /// Grid for C-IS variance comparison.
    pub grid: Vec<f64>,
    /// Return support `(G_min, G_max)`; the right endpoint anchors M-DR.
    pub support: (f64, f64),
}

/// Runs one estimator on a dataset. Model-based estimators learn their
/// model from the data (cross-fitted if requested); the environment is
/// never consulted.
pub fn run_estimator(
    kind: EstimatorKind,
    data: &Dataset,
    pi: &Policy,
    opts: &EstimatorOptions,
) -> Result<StepFunction, EstimatorError> {
    let mode = if data.gamma == 1.0 {
        AtomMode::Exact
    } else {
        AtomMode::Projected { n_atoms: 1024 }
    };
    let (n_states, n_actions) = (data.behavior.n_states, data.behavior.n_actions);
    match kind {
        EstimatorKind::FIs => estimate_f_is(data, pi),
        EstimatorKind::SIs => estimate_s_is(data, pi),
        EstimatorKind::CIs => estimate_c_is(data, pi, &opts.grid),
        EstimatorKind::Wis => estimate_wis(data, pi),
        EstimatorKind::IsClip => estimate_is_clip(data, pi),
        EstimatorKind::Dm | EstimatorKind::Dr | EstimatorKind::Wdr | EstimatorKind::MDr => {
            if opts.crossfit {
                crossfit_estimate(
                    data,
                    pi,
                    kind,
                    n_states,
                    n_actions,
                    opts.horizon_override,
                    mode,
                    opts.support.1,
                )
            } else {
                let learned = learn_mdp(data, n_states, n_actions, opts.horizon_override);
                let model = compute_return_model(&learned.mdp, pi, mode)?;
                match kind {
                    EstimatorKind::Dm => Ok(estimate_dm(data, &model)?.into_step()),
                    EstimatorKind::Dr => estimate_dr(data, pi, &model),
                    EstimatorKind::Wdr => estimate_wdr(data, pi, &model),
                    EstimatorKind::MDr => {
                        Ok(estimate_m_dr(data, pi, &model, opts.support.1)?.into_step())
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
}

/// Resolves the target policy for an environment.
pub fn target_policy(
    mdp: &TabularMdp,
    source: &TargetPolicySource,
) -> Result<Policy, HarnessError> {
    match source {
        TargetPolicySource::OptimalDp => Ok(optimal_policy(mdp)),
        TargetPolicySource::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let policy: Policy = serde_json::from_str(&text)
                .map_err(|e| HarnessError::InvalidConfig(format!("policy file: {e}")))?;
            Ok(policy)
        }
    }
}

/// Sweep output: a comment header (timestamp; excluded from determinism
/// comparisons) and the CSV body.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub comment: String,
    pub body: String,
}

impl SweepResult {
    pub fn full_text(&self) -> String {
        format!("{}{}", self.comment, self.body)
    }
}

/// Runs the sweep with the worker count from `OPRISK_THREADS` (0 or unset:
/// rayon default).
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult, HarnessError> {
    let threads = std::env::var("OPRISK_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    run_sweep_with_threads(config, threads)
}

/// Runs the sweep on a dedicated pool of `threads` workers (0 = default).
pub fn run_sweep_with_threads(
    config: &SweepConfig,
    threads: usize,
) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    let mdp = build_env(&config.env_id, &config.env_overrides)?;
    let pi = target_policy(&mdp, &config.target_policy)?;
    let truth = true_cdf(&mdp, &pi)?;
    let (g_min, g_max) = mdp.return_bounds();
    let width = g_max - g_min;
    let risks: Vec<RiskFunctional> = config
        .risks
        .iter()
        .map(|name| parse_risk(name, width))
        .collect::<Result<_, _>>()?;
    let true_risks: Vec<f64> = risks
        .iter()
        .map(|rf| evaluate_risk(rf, &truth, (g_min, g_max)))
        .collect::<Result<_, _>>()?;
    let kinds: Vec<EstimatorKind> = config
        .estimators
        .iter()
        .map(|e| e.parse().expect("validated"))
        .collect();
    let betas: Vec<Policy> = config
        .lambdas
        .iter()
        .map(|&l| mixture_policy(&pi, l))
        .collect::<Result<_, _>>()?;
    let opts_template = EstimatorOptions {
        crossfit: config.crossfit,
        horizon_override: config.model_horizon_override,
        grid: uniform_grid(g_min, g_max, config.grid_points),
        support: (g_min, g_max),
    };

    let mut cells = Vec::new();
    for li in 0..config.lambdas.len() {
        for ni in 0..config.sample_sizes.len() {
            for rep in 0..config.repetitions {
                cells.push((li, ni, rep));
            }
        }
    }

    let run_cell = |&(li, ni, rep): &(usize, usize, usize)| -> Vec<ResultRow> {
        let lambda = config.lambdas[li];
        let n = config.sample_sizes[ni];
        let seed = cell_seed(config.base_seed, li, ni, rep);
        let data = sample_dataset(&mdp, &betas[li], n, seed, &config.env_id);
        let mut rows = Vec::new();
        for (kind, name) in kinds.iter().zip(&config.estimators) {
            let mut push = |metric: String, value: f64| {
                rows.push(ResultRow {
                    env: config.env_id.clone(),
                    lambda,
                    n,
                    rep: rep as i64,
                    estimator: name.clone(),
                    metric,
                    value,
                    seed,
                });
            };
            match run_estimator(*kind, &data, &pi, &opts_template) {
                Ok(estimate) => {
                    push(
                        "sup_norm".into(),
                        estimate.sup_norm_distance(truth.as_step()),
                    );
                    // plug-in risks act on the monotonized-clipped estimate,
                    // the identity transform for estimators that are already
                    // valid CDFs
                    let valid = estimate.monotonize_clip(g_max);
                    for (rf, &true_value) in risks.iter().zip(&true_risks) {
                        match evaluate_risk(rf, &valid, (g_min, g_max)) {
                            Ok(v) => {
                                push(format!("value:{}", rf.name), v);
                                push(format!("bias:{}", rf.name), v - true_value);
                                push(format!("mse:{}", rf.name), (v - true_value).powi(2));
                            }
                            Err(_) => push(format!("error:{}", rf.name), 1.0),
                        }
                    }
                }
                Err(_) => push(format!("error:{name}"), 1.0),
            }
        }
        rows
    };

    let all_rows: Vec<Vec<ResultRow>> = if threads == 0 {
        cells.par_iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    // aggregate mean and standard error over reps, keyed in emission order
    let mut groups: BTreeMap<(usize, usize, usize, String), Vec<f64>> = BTreeMap::new();
    for (cell_idx, rows) in all_rows.iter().enumerate() {
        let (li, ni, _) = cells[cell_idx];
        for row in rows {
            let est_idx = config
                .estimators
                .iter()
                .position(|e| *e == row.estimator)
                .unwrap_or(usize::MAX);
            groups
                .entry((li, ni, est_idx, row.metric.clone()))
                .or_default()
                .push(row.value);
        }
    }

    let mut body = String::new();
    body.push_str(CSV_HEADER);
    body.push('\n');
    for rows in &all_rows {
        for row in rows {
            body.push_str(&row.csv_line());
            body.push('\n');
        }
    }
    for ((li, ni, est_idx, metric), values) in &groups {
        let est = if *est_idx == usize::MAX {
            "?"
        } else {
            &config.estimators[*est_idx]
        };
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let stderr = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        for (tag, value) in [("mean", mean), ("stderr", stderr)] {
            let row = ResultRow {
                env: config.env_id.clone(),
                lambda: config.lambdas[*li],
                n: config.sample_sizes[*ni],
                rep: -1,
                estimator: est.to_string(),
                metric: format!("{tag}:{metric}"),
                value,
                seed: 0,
            };
            body.push_str(&row.csv_line());
            body.push('\n');
        }
    }

    let comment = format!(
        "# generated_unix {}\n",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    );
    let result = SweepResult { comment, body };
    if let Some(path) = &config.output {
        std::fs::write(path, result.full_text())?;
    }
    Ok(result)
}

/// Parses the mean value of `metric` for `(λ, estimator, n)` out of a
/// sweep body (aggregate rows).
pub fn aggregate_mean(
    body: &str,
    lambda: f64,
    estimator: &str,
    n: usize,
    metric: &str,
) -> Option<f64> {
    let want_metric = format!("mean:{metric}");
    let want_lambda = lambda.to_string();
    for line in body.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            continue;
        }
        if parts[3] == "-1"
            && parts[1] == want_lambda
            && parts[4] == estimator
            && parts[5] == want_metric
            && parts[2] == n.to_string()
        {
            return parts[6].parse().ok();
        }
    }
    None
}

/// Named sweep presets.
///
/// `desk_cliffwalk` shrinks the Cliffwalk horizon to 50 and runs 100
/// repetitions so the qualitative estimator ordering reproduces in
/// minutes; `paper_cliffwalk` is the full-scale protocol (H = 200, 1000
/// repetitions, λ sweep) for long runs. Both use the imperfect-horizon
/// convention of modeling with one extra step, and learn models with
/// cross-fitting.
pub fn preset(name: &str) -> Result<SweepConfig, HarnessError> {
    match name {
        "desk_cliffwalk" => Ok(SweepConfig {
            env_id: "cliffwalk".into(),
            env_overrides: EnvOverrides {
                horizon: Some(50),
                ..Default::default()
            },
            target_policy: TargetPolicySource::OptimalDp,
            lambdas: vec![0.5],
            sample_sizes: vec![64, 128, 256, 512, 1024, 2048, 4096],
            estimators: vec!["f_is".into(), "wis".into(), "dr".into(), "wdr".into()],
            risks: vec!["mean".into(), "cvar:0.25".into()],
            grid_points: 50,
            repetitions: 100,
            base_seed: 20_220_428,
            crossfit: true,
            model_horizon_override: Some(51),
            output: None,
        }),
        "paper_cliffwalk" => Ok(SweepConfig {
            env_id: "cliffwalk".into(),
            env_overrides: EnvOverrides::default(),
            target_policy: TargetPolicySource::OptimalDp,
            lambdas: vec![0.25, 0.5, 0.75],
            sample_sizes: vec![64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384],
            estimators: vec![
                "f_is".into(),
                "s_is".into(),
                "c_is".into(),
                "wis".into(),
                "dm".into(),
                "dr".into(),
                "wdr".into(),
            ],
            risks: vec!["mean".into(), "cvar:0.25".into(), "ccar:0.25".into()],
            grid_points: 50,
            repetitions: 1000,
            base_seed: 20_220_428,
            crossfit: true,
            model_horizon_override: Some(201),
            output: None,
        }),
        "toy_chain_smoke" => Ok(SweepConfig {
            env_id: "toy_chain".into(),
            env_overrides: EnvOverrides::default(),
            target_policy: TargetPolicySource::OptimalDp,
            lambdas: vec![1.0, 0.5],
            sample_sizes: vec![8, 16],
            estimators: vec!["f_is".into(), "wis".into(), "dm".into(), "dr".into()],
            risks: vec!["mean".into()],
            grid_points: 10,
            repetitions: 3,
            base_seed: 7,
            crossfit: true,
            model_horizon_override: None,
            output: None,
        }),
        other => Err(HarnessError::UnknownPreset(other.into())),
    }
}
