//! Command-line interface: dataset generation, estimation, risk reports,
//! confidence bands, Cramer-Rao tables, and experiment sweeps.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use oprisk::envs::{build_env, EnvOverrides};
use oprisk::estimators::{confidence_band, EstimatorKind};
use oprisk::harness::{
    preset, run_sweep, target_policy, uniform_grid, EstimatorOptions, SweepConfig,
    TargetPolicySource,
};
use oprisk::mdp::{mixture_policy, sample_dataset, Dataset};
use oprisk::model::{compute_return_model, AtomMode};
use oprisk::oracle::{
    cramer_rao_bound, enumerate_trajectories, exact_estimator_moments, DEFAULT_ATLAS_CAP,
};
use oprisk::risk::{opra, parse_risk};
use oprisk::stepfn::StepFunction;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "oprisk",
    about = "Off-policy CDF and risk estimation in finite-horizon tabular MDPs",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// Environment id: cliffwalk | toy_bandit | toy_chain | udag:<seed>:<LxSxAxR>
    #[arg(long)]
    env: String,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    slip_prob: Option<f64>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    cliff_cost: Option<f64>,
    #[arg(long)]
    step_cost: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl EnvArgs {
    fn overrides(&self) -> EnvOverrides {
        EnvOverrides {
            horizon: self.horizon,
            slip_prob: self.slip_prob,
            rows: self.rows,
            cols: self.cols,
            cliff_cost: self.cliff_cost,
            step_cost: self.step_cost,
            gamma: self.gamma,
        }
    }
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// Path to a serialized target-policy JSON; defaults to exact
    /// Q-iteration on the environment.
    #[arg(long)]
    target_file: Option<PathBuf>,
}

impl TargetArgs {
    fn source(&self) -> TargetPolicySource {
        match &self.target_file {
            Some(p) => TargetPolicySource::File(p.clone()),
            None => TargetPolicySource::OptimalDp,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset under the mixture behavior policy and write JSONL.
    Generate {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        target: TargetArgs,
        /// Mixture coefficient: beta = lambda*pi + (1-lambda)*uniform.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run one estimator on a dataset and write the CDF estimate as JSON.
    Estimate {
        /// f_is | s_is | c_is | wis | is_clip | dm | dr | wdr | m_dr
        #[arg(long)]
        kind: String,
        #[arg(long)]
        data: PathBuf,
        /// Model source for dm/dr/wdr/m_dr: "data" (learned) or "truth".
        #[arg(long, default_value = "data")]
        model_from: String,
        #[arg(long)]
        crossfit: bool,
        /// Horizon the learned model assumes (imperfect-horizon convention).
        #[arg(long)]
        model_horizon: Option<usize>,
        #[arg(long, default_value_t = 50)]
        grid_points: usize,
        #[command(flatten)]
        target: TargetArgs,
        /// Environment overrides that are not recorded in the dataset
        /// header (e.g. a non-default slip probability).
        #[arg(long)]
        slip_prob: Option<f64>,
        /// Write the model's per-(state, horizon) distributions here.
        #[arg(long)]
        dump_model: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate risk functionals on a CDF JSON and print an OPRA report.
    Risks {
        #[arg(long)]
        cdf: PathBuf,
        /// Risk names, repeatable: mean, cvar:<a>, ccar:<a>, var:<a>,
        /// variance, mean_variance:<l>, prop_hazard:<a>, cpt:<c>, wang:<a>.
        #[arg(long = "risk", required = true)]
        risks: Vec<String>,
        /// CDF sup-norm error budget from a band or diagnostic bound.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Return support [lo hi]; defaults to the CDF breakpoint span.
        #[arg(long, num_args = 2)]
        support: Option<Vec<f64>>,
    },
    /// Empirical-Bernstein confidence band for F-IS or S-IS.
    Band {
        #[arg(long)]
        data: PathBuf,
        /// f_is | s_is
        #[arg(long, default_value = "f_is")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Cramer-Rao bound vs exact IS and DR variances, as CSV rows.
    CrBound {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 7)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_ATLAS_CAP)]
        max_atlas: usize,
    },
    /// Run an experiment sweep from a JSON config or a named preset.
    Sweep {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// desk_cliffwalk | paper_cliffwalk | toy_chain_smoke
        #[arg(long)]
        preset: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load_dataset(path: &PathBuf) -> Result<Dataset> {
    Dataset::load_jsonl_path(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Rebuilds the dataset's environment from its header fields plus any
/// overrides the header does not record.
fn env_for_dataset(data: &Dataset, slip_prob: Option<f64>) -> Result<oprisk::mdp::TabularMdp> {
    let overrides = EnvOverrides {
        horizon: Some(data.horizon),
        gamma: Some(data.gamma),
        slip_prob,
        ..Default::default()
    };
    Ok(build_env(&data.env_id, &overrides)?)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate {
            env,
            target,
            lambda,
            n,
            seed,
            output,
        } => {
            let mdp = build_env(&env.env, &env.overrides())?;
            let pi = target_policy(&mdp, &target.source())?;
            let beta = mixture_policy(&pi, lambda)?;
            let data = sample_dataset(&mdp, &beta, n, seed, &env.env);
            data.save_jsonl_path(&output)?;
            eprintln!(
                "wrote {} trajectories (H = {}) to {}",
                n,
                mdp.horizon,
                output.display()
            );
        }
        Cmd::Estimate {
            kind,
            data,
            model_from,
            crossfit,
            model_horizon,
            grid_points,
            target,
            slip_prob,
            dump_model,
            output,
        } => {
            let kind: EstimatorKind = kind.parse().map_err(anyhow::Error::msg)?;
            let data = load_dataset(&data)?;
            let mdp = env_for_dataset(&data, slip_prob)?;
            let pi = target_policy(&mdp, &target.source())?;
            let (g_min, g_max) = mdp.return_bounds();
            let opts = EstimatorOptions {
                crossfit,
                horizon_override: model_horizon,
                grid: uniform_grid(g_min, g_max, grid_points),
                support: (g_min, g_max),
            };
            let mode = if data.gamma == 1.0 {
                AtomMode::Exact
            } else {
                AtomMode::Projected { n_atoms: 1024 }
            };
            let estimate = match (kind.needs_model(), model_from.as_str()) {
                (true, "truth") => {
                    let model = compute_return_model(&mdp, &pi, mode)?;
                    if let Some(path) = &dump_model {
                        std::fs::write(path, model.dump_json_lines())?;
                    }
                    match kind {
                        EstimatorKind::Dm => {
                            oprisk::estimators::estimate_dm(&data, &model)?.into_step()
                        }
                        EstimatorKind::Dr => oprisk::estimators::estimate_dr(&data, &pi, &model)?,
                        EstimatorKind::Wdr => {
                            oprisk::estimators::estimate_wdr(&data, &pi, &model)?
                        }
                        EstimatorKind::MDr => {
                            oprisk::estimators::estimate_m_dr(&data, &pi, &model, g_max)?
                                .into_step()
                        }
                        _ => unreachable!(),
                    }
                }
                (true, "data") | (false, _) => {
                    if kind.needs_model() {
                        if let Some(path) = &dump_model {
                            let learned = oprisk::model::learn_mdp(
                                &data,
                                data.behavior.n_states,
                                data.behavior.n_actions,
                                model_horizon,
                            );
                            let model = compute_return_model(&learned.mdp, &pi, mode)?;
                            std::fs::write(path, model.dump_json_lines())?;
                        }
                    }
                    oprisk::harness::run_estimator(kind, &data, &pi, &opts)?
                }
                (true, other) => bail!("--model-from must be \"data\" or \"truth\", got {other:?}"),
            };
            let json = serde_json::to_string(&estimate)?;
            std::fs::write(&output, json)?;
            eprintln!("wrote {} CDF estimate to {}", kind, output.display());
        }
        Cmd::Risks {
            cdf,
            risks,
            epsilon,
            delta,
            support,
        } => {
            let text = std::fs::read_to_string(&cdf)
                .with_context(|| format!("reading CDF {}", cdf.display()))?;
            let step: StepFunction = serde_json::from_str(&text).context("parsing CDF JSON")?;
            let (lo, hi) = match support.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                Some(_) => bail!("--support takes exactly two numbers"),
                None => (
                    step.breakpoints()[0],
                    *step.breakpoints().last().unwrap(),
                ),
            };
            let valid = step.monotonize_clip(hi);
            let width = hi - lo;
            let functionals = risks
                .iter()
                .map(|name| parse_risk(name, width))
                .collect::<Result<Vec<_>, _>>()?;
            let report = opra(&valid, epsilon, delta, &functionals, (lo, hi))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Band {
            data,
            kind,
            points,
            delta,
            target,
            output,
        } => {
            let kind: EstimatorKind = kind.parse().map_err(anyhow::Error::msg)?;
            let data = load_dataset(&data)?;
            let mdp = env_for_dataset(&data, None)?;
            let pi = target_policy(&mdp, &target.source())?;
            let (g_min, g_max) = mdp.return_bounds();
            let grid = uniform_grid(g_min, g_max, points);
            let band = confidence_band(&data, &pi, kind, &grid, delta)?;
            let mut out = String::from("t,estimate,lower,upper\n");
            for i in 0..band.points.len() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    band.points[i], band.estimate[i], band.lower[i], band.upper[i]
                ));
            }
            match output {
                Some(path) => std::fs::write(path, out)?,
                None => print!("{out}"),
            }
        }
        Cmd::CrBound {
            env,
            target,
            lambda,
            points,
            max_atlas,
        } => {
            let mdp = build_env(&env.env, &env.overrides())?;
            let pi = target_policy(&mdp, &target.source())?;
            let beta = mixture_policy(&pi, lambda)?;
            let atlas = enumerate_trajectories(&mdp, &beta, max_atlas)?;
            let model = compute_return_model(&mdp, &pi, AtomMode::Exact)?;
            let (g_min, g_max) = mdp.return_bounds();
            println!("t,cr_bound,is_variance,dr_variance");
            for &t in &uniform_grid(g_min, g_max, points) {
                let bound = cramer_rao_bound(&atlas, &pi, &mdp, t)?;
                let (_, v_is) =
                    exact_estimator_moments(&atlas, &pi, EstimatorKind::FIs, None, t)?;
                let (_, v_dr) =
                    exact_estimator_moments(&atlas, &pi, EstimatorKind::Dr, Some(&model), t)?;
                println!("{t},{bound},{v_is},{v_dr}");
            }
        }
        Cmd::Sweep {
            config,
            preset: preset_name,
            output,
        } => {
            let mut cfg: SweepConfig = match (config, preset_name) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    serde_json::from_str(&text).context("parsing sweep config")?
                }
                (None, Some(name)) => preset(&name)?,
                _ => bail!("pass exactly one of --config or --preset"),
            };
            if let Some(path) = output {
                cfg.output = Some(path);
            }
            let result = run_sweep(&cfg)?;
            match &cfg.output {
                Some(path) => eprintln!("wrote sweep results to {}", path.display()),
                None => print!("{}", result.full_text()),
            }
        }
    }
    Ok(())
}
