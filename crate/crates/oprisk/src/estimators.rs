//! Off-policy CDF estimators and their confidence machinery.
//!
//! Importance-sampling estimators reweight each trajectory by the cumulative
//! weight `w_H = Π_h π(a_h|s_h)/β(a_h|s_h)`; model-based estimators average
//! model CDFs over observed start states; the doubly robust family combines
//! a model baseline with an IS-weighted correction at every step. All
//! estimators consume cached trajectory weights computed from the dataset's
//! stored behavior table and never touch an environment.
//!
//! Per-trajectory contributions are computed independently and reduced in
//! trajectory-index order, so floating-point sums are reproducible.

use crate::mdp::{max_weight, Dataset, MdpError, Policy};
use crate::model::{compute_return_model, learn_mdp, AtomMode, ModelError, ReturnDistributionModel};
use crate::stepfn::{StepFnError, StepFunction, Tail, ValidCdf};
use std::collections::HashMap;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    StepFn(#[from] StepFnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("all trajectory weights are zero; no usable trajectories")]
    AllWeightsZero,
    #[error("need at least two trajectories")]
    NeedAtLeastTwoTrajectories,
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("stepwise normalizer is zero at step {0}")]
    ZeroStepwiseNormalizer(usize),
    #[error("state {state} is missing from the model")]
    ModelStateMissing { state: usize },
    #[error("model horizon {model} is shorter than the data horizon {data}")]
    ModelHorizonTooShort { model: usize, data: usize },
    #[error("dataset too small for cross-fitting")]
    DatasetTooSmall,
    #[error("estimator {0} is not supported by this operation")]
    UnsupportedKind(EstimatorKind),
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
}

/// The estimator catalog. CLI names: `f_is`, `s_is`, `c_is`, `wis`,
/// `is_clip`, `dm`, `dr`, `wdr`, `m_dr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    FIs,
    SIs,
    CIs,
    Wis,
    IsClip,
    Dm,
    Dr,
    Wdr,
    MDr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 9] = [
        EstimatorKind::FIs,
        EstimatorKind::SIs,
        EstimatorKind::CIs,
        EstimatorKind::Wis,
        EstimatorKind::IsClip,
        EstimatorKind::Dm,
        EstimatorKind::Dr,
        EstimatorKind::Wdr,
        EstimatorKind::MDr,
    ];

    pub fn needs_model(self) -> bool {
        matches!(
            self,
            EstimatorKind::Dm | EstimatorKind::Dr | EstimatorKind::Wdr | EstimatorKind::MDr
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::FIs => "f_is",
            EstimatorKind::SIs => "s_is",
            EstimatorKind::CIs => "c_is",
            EstimatorKind::Wis => "wis",
            EstimatorKind::IsClip => "is_clip",
            EstimatorKind::Dm => "dm",
            EstimatorKind::Dr => "dr",
            EstimatorKind::Wdr => "wdr",
            EstimatorKind::MDr => "m_dr",
        };
        f.write_str(s)
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f_is" => Ok(EstimatorKind::FIs),
            "s_is" => Ok(EstimatorKind::SIs),
            "c_is" => Ok(EstimatorKind::CIs),
            "wis" => Ok(EstimatorKind::Wis),
            "is_clip" => Ok(EstimatorKind::IsClip),
            "dm" => Ok(EstimatorKind::Dm),
            "dr" => Ok(EstimatorKind::Dr),
            "wdr" => Ok(EstimatorKind::Wdr),
            "m_dr" => Ok(EstimatorKind::MDr),
            other => Err(format!("unknown estimator {other:?}")),
        }
    }
}

/// Cumulative importance weights per trajectory, `cum[i][h]` for
/// `h = 0..=H` with `cum[i][0] = 1`.
pub struct TrajectoryWeights {
    pub cum: Vec<Vec<f64>>,
}

pub fn trajectory_weights(data: &Dataset, pi: &Policy) -> Result<TrajectoryWeights, EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let cum = data
        .trajectories
        .iter()
        .map(|t| t.cumulative_weights(pi, &data.behavior))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrajectoryWeights { cum })
}

fn return_weight_points(data: &Dataset, w: &TrajectoryWeights) -> Vec<(f64, f64)> {
    data.trajectories
        .iter()
        .zip(&w.cum)
        .map(|(t, c)| (t.total_return(), *c.last().unwrap()))
        .collect()
}

/// `F̂_F-IS(t) = (1/n) Σᵢ w_H^i · 1{z_H^i ≤ t}`.
pub fn estimate_f_is(data: &Dataset, pi: &Policy) -> Result<StepFunction, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    let points = return_weight_points(data, &w);
    Ok(StepFunction::from_weighted_samples(
        &points,
        data.len() as f64,
        Tail::Le,
    )?)
}

/// CCDF-oriented estimator `F̂_S-IS = 1 − Ŝ_IS` with
/// `Ŝ_IS(t) = (1/n) Σᵢ w_H^i · 1{z_H^i > t}`.
pub fn estimate_s_is(data: &Dataset, pi: &Policy) -> Result<StepFunction, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    let points = return_weight_points(data, &w);
    let s_hat = StepFunction::from_weighted_samples(&points, data.len() as f64, Tail::Gt)?;
    Ok(s_hat.one_minus())
}

/// `min{F̂_F-IS(t), 1}` pointwise.
pub fn estimate_is_clip(data: &Dataset, pi: &Policy) -> Result<StepFunction, EstimatorError> {
    Ok(estimate_f_is(data, pi)?.clip_upper(1.0))
}

/// Self-normalized estimator `F̂_WIS = (n / Σⱼ w_H^j) · F̂_F-IS`; always a
/// valid CDF.
pub fn estimate_wis(data: &Dataset, pi: &Policy) -> Result<StepFunction, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    let points = return_weight_points(data, &w);
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(EstimatorError::AllWeightsZero);
    }
    Ok(StepFunction::from_weighted_samples(&points, total, Tail::Le)?)
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Pointwise F-vs-S selection by empirical variance: at each grid point use
/// `F̂_F-IS` when its per-trajectory contributions have strictly lower
/// sample variance, else `F̂_S-IS`; between grid points the choice made at
/// the grid point to the left is held.
pub fn estimate_c_is(
    data: &Dataset,
    pi: &Policy,
    grid: &[f64],
) -> Result<StepFunction, EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    if data.len() < 2 {
        return Err(EstimatorError::NeedAtLeastTwoTrajectories);
    }
    let w = trajectory_weights(data, pi)?;
    let points = return_weight_points(data, &w);
    let n = data.len() as f64;
    let f_hat = StepFunction::from_weighted_samples(&points, n, Tail::Le)?;
    let s_hat = StepFunction::from_weighted_samples(&points, n, Tail::Gt)?.one_minus();
    let mut grid = grid.to_vec();
    grid.sort_unstable_by(f64::total_cmp);
    let use_f: Vec<bool> = grid
        .iter()
        .map(|&t| {
            let fc: Vec<f64> = points
                .iter()
                .map(|&(z, w)| if z <= t { w } else { 0.0 })
                .collect();
            let sc: Vec<f64> = points
                .iter()
                .map(|&(z, w)| if z > t { w } else { 0.0 })
                .collect();
            sample_variance(&fc) < sample_variance(&sc)
        })
        .collect();
    let mut union: Vec<f64> = f_hat
        .breakpoints()
        .iter()
        .chain(s_hat.breakpoints())
        .chain(grid.iter())
        .copied()
        .collect();
    union.sort_unstable_by(f64::total_cmp);
    union.dedup_by(|a, b| a.total_cmp(b).is_eq());
    let choose = |t: f64| -> bool {
        let idx = grid.partition_point(|g| *g <= t);
        use_f[idx.saturating_sub(1)]
    };
    let values: Vec<f64> = union
        .iter()
        .map(|&t| {
            if choose(t) {
                f_hat.evaluate(t)
            } else {
                s_hat.evaluate(t)
            }
        })
        .collect();
    let left = if use_f[0] {
        f_hat.left_value()
    } else {
        s_hat.left_value()
    };
    Ok(StepFunction::new(union, values, left)?)
}

fn check_model(data: &Dataset, model: &ReturnDistributionModel) -> Result<(), EstimatorError> {
    if model.horizon < data.horizon {
        return Err(EstimatorError::ModelHorizonTooShort {
            model: model.horizon,
            data: data.horizon,
        });
    }
    for t in &data.trajectories {
        if let Some(&s) = t.states.iter().find(|&&s| s >= model.n_states) {
            return Err(EstimatorError::ModelStateMissing { state: s });
        }
    }
    Ok(())
}

/// Direct method: `(1/n) Σᵢ F̄_{s_1^i}`, a mixture of model CDFs over the
/// observed start states.
pub fn estimate_dm(
    data: &Dataset,
    model: &ReturnDistributionModel,
) -> Result<ValidCdf, EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    check_model(data, model)?;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for t in &data.trajectories {
        *counts.entry(t.states[0]).or_insert(0) += 1;
    }
    let n = data.len() as f64;
    let mut masses = Vec::new();
    let mut starts: Vec<(usize, usize)> = counts.into_iter().collect();
    starts.sort_unstable();
    for (s, c) in starts {
        let d = model.state_dist(s, 1);
        let scale = c as f64 / n;
        masses.extend(d.atoms().iter().zip(d.probs()).map(|(&x, &p)| (x, scale * p)));
    }
    Ok(ValidCdf::from_masses(masses)?)
}

enum DrNormalizer {
    /// Plain DR: every term is divided by `n`.
    PerTrajectory(f64),
    /// WDR: step-h terms are divided by the stepwise weight sums `w̃_h`.
    Stepwise(Vec<f64>),
}

/// Shared jump assembly for DR and WDR.
///
/// Both are sums, over trajectories and steps, of shifted model CDFs plus an
/// indicator data term. The unrolled form of the recursion evaluates the
/// step-h model CDFs at `(t − z_{h−1})/γ^{h−1}`, so as functions of `t`
/// they are step functions with jumps at `z_{h−1} + γ^{h−1}·atom`.
/// Trajectories sharing `(h, s_h[, a_h], z_{h−1})` contribute the same
/// shifted CDF and are bucketed, which keeps the jump count proportional to
/// the distinct return lattice rather than `n·H·atoms`.
fn dr_family(
    data: &Dataset,
    w: &TrajectoryWeights,
    model: &ReturnDistributionModel,
    norm: DrNormalizer,
) -> Result<StepFunction, EstimatorError> {
    let h_max = data.horizon;
    let gamma = data.gamma;
    let mut gamma_pow = Vec::with_capacity(h_max);
    let mut g = 1.0;
    for _ in 0..h_max {
        gamma_pow.push(g);
        g *= gamma;
    }
    let mut state_buckets: HashMap<(usize, usize, u64), f64> = HashMap::new();
    let mut sa_buckets: HashMap<(usize, usize, usize, u64), f64> = HashMap::new();
    let mut data_jumps: HashMap<u64, f64> = HashMap::new();
    for (t, cum) in data.trajectories.iter().zip(&w.cum) {
        for h in 1..=h_max {
            let z = t.partial_returns[h - 1];
            let s = t.states[h - 1];
            let a = t.actions[h - 1];
            let (ws, wa) = match &norm {
                DrNormalizer::PerTrajectory(n) => (cum[h - 1] / n, cum[h] / n),
                DrNormalizer::Stepwise(wt) => (cum[h - 1] / wt[h - 1], cum[h] / wt[h - 1]),
            };
            if ws != 0.0 {
                *state_buckets.entry((h, s, z.to_bits())).or_insert(0.0) += ws;
            }
            if wa != 0.0 {
                *sa_buckets.entry((h, s, a, z.to_bits())).or_insert(0.0) += wa;
            }
        }
        let wh = match &norm {
            DrNormalizer::PerTrajectory(n) => cum[h_max] / n,
            DrNormalizer::Stepwise(wt) => cum[h_max] / wt[h_max],
        };
        if wh != 0.0 {
            *data_jumps.entry(t.total_return().to_bits()).or_insert(0.0) += wh;
        }
    }
    let mut jumps: HashMap<u64, f64> = data_jumps;
    for ((h, s, zbits), wsum) in state_buckets {
        let z = f64::from_bits(zbits);
        let scale = gamma_pow[h - 1];
        let d = model.state_dist(s, h);
        for (&atom, &p) in d.atoms().iter().zip(d.probs()) {
            *jumps.entry((z + scale * atom).to_bits()).or_insert(0.0) += wsum * p;
        }
    }
    for ((h, s, a, zbits), wsum) in sa_buckets {
        let z = f64::from_bits(zbits);
        let scale = gamma_pow[h - 1];
        let d = model.state_action_dist(s, a, h);
        for (&atom, &p) in d.atoms().iter().zip(d.probs()) {
            *jumps.entry((z + scale * atom).to_bits()).or_insert(0.0) -= wsum * p;
        }
    }
    let mut jump_list: Vec<(f64, f64)> = jumps
        .into_iter()
        .map(|(bits, j)| (f64::from_bits(bits), j))
        .collect();
    jump_list.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    Ok(StepFunction::from_jumps(0.0, jump_list, 0.0))
}

/// Doubly robust estimator: the model baseline plus an IS-weighted
/// correction, unrolled from the recursion
/// `F̂_{s_h}(t) = F̄_{s_h}(t) + w(a_h,s_h)·(F̂_{s_{h+1}}((t−r_h)/γ) − F̄_{s_h,a_h}(t))`
/// with terminal `F̂_{s_{H+1}} = 1{0 ≤ t}`, averaged over trajectories.
pub fn estimate_dr(
    data: &Dataset,
    pi: &Policy,
    model: &ReturnDistributionModel,
) -> Result<StepFunction, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    check_model(data, model)?;
    dr_family(data, &w, model, DrNormalizer::PerTrajectory(data.len() as f64))
}

/// Weighted doubly robust estimator: DR with each step-h term normalized by
/// the stepwise weight sum `w̃_h = Σᵢ w_h^i` instead of `n`. Equals DR
/// exactly when π = β.
pub fn estimate_wdr(
    data: &Dataset,
    pi: &Policy,
    model: &ReturnDistributionModel,
) -> Result<StepFunction, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    check_model(data, model)?;
    let h_max = data.horizon;
    let mut wt = vec![0.0; h_max + 1];
    for cum in &w.cum {
        for (h, c) in cum.iter().enumerate() {
            wt[h] += c;
        }
    }
    // denominators: w̃_{h−1} for the step terms and w̃_H for the data term
    for (h, &total) in wt.iter().enumerate() {
        if total == 0.0 {
            return Err(EstimatorError::ZeroStepwiseNormalizer(h));
        }
    }
    dr_family(data, &w, model, DrNormalizer::Stepwise(wt))
}

/// `Clip(max_{t' ≤ t} F̂_DR(t'), 0, 1)`: the DR estimate repaired into a
/// valid CDF on the return support ending at `support_max`.
pub fn estimate_m_dr(
    data: &Dataset,
    pi: &Policy,
    model: &ReturnDistributionModel,
    support_max: f64,
) -> Result<ValidCdf, EstimatorError> {
    Ok(estimate_dr(data, pi, model)?.monotonize_clip(support_max))
}

/// The i-th summand of an estimator, before averaging.
///
/// For `f_is` this is `w_H·1{z_H ≤ t}`; for `s_is` it is the CCDF summand
/// `w_H·1{z_H > t}` (so the estimate is one minus the contribution mean);
/// for `dr` the recursion is evaluated literally, step function by step
/// function. Only these three linear estimators have per-trajectory
/// summands.
pub fn per_trajectory_contribution(
    data: &Dataset,
    pi: &Policy,
    kind: EstimatorKind,
    model: Option<&ReturnDistributionModel>,
    index: usize,
) -> Result<StepFunction, EstimatorError> {
    let t = &data.trajectories[index];
    let cum = t.cumulative_weights(pi, &data.behavior)?;
    let z_h = t.total_return();
    let w_h = *cum.last().unwrap();
    match kind {
        EstimatorKind::FIs => Ok(StepFunction::new(vec![z_h], vec![w_h], 0.0)?),
        EstimatorKind::SIs => Ok(StepFunction::new(vec![z_h], vec![0.0], w_h)?),
        EstimatorKind::Dr => {
            let model = model.ok_or(EstimatorError::UnsupportedKind(kind))?;
            check_model(data, model)?;
            let gamma = data.gamma;
            // terminal: 1{0 <= (t - z_H)/gamma^H}, i.e. a jump at z_H
            let mut f = StepFunction::point_mass(z_h);
            for h in (1..=data.horizon).rev() {
                let s = t.states[h - 1];
                let a = t.actions[h - 1];
                let w_step = cum[h] / cum[h - 1];
                let w_step = if cum[h - 1] == 0.0 { 0.0 } else { w_step };
                let scale = gamma.powi((h - 1) as i32);
                let z_prev = t.partial_returns[h - 1];
                // shifted model CDFs as functions of the top-level argument
                let shift = |d: &crate::mdp::DiscreteDist| {
                    let jumps: Vec<(f64, f64)> = d
                        .atoms()
                        .iter()
                        .zip(d.probs())
                        .map(|(&x, &p)| (z_prev + scale * x, p))
                        .collect();
                    StepFunction::from_jumps(0.0, jumps, z_prev)
                };
                let f_state = shift(model.state_dist(s, h));
                let f_sa = shift(model.state_action_dist(s, a, h));
                f = StepFunction::linear_combine(&[
                    (1.0, &f_state),
                    (w_step, &f),
                    (-w_step, &f_sa),
                ])?;
            }
            Ok(f)
        }
        other => Err(EstimatorError::UnsupportedKind(other)),
    }
}

/// Unbiased sample variance (divisor `n − 1`) of contributions at `t`.
pub fn empirical_variance(contribs: &[StepFunction], t: f64) -> Result<f64, EstimatorError> {
    if contribs.len() < 2 {
        return Err(EstimatorError::NeedAtLeastTwoTrajectories);
    }
    let values: Vec<f64> = contribs.iter().map(|c| c.evaluate(t)).collect();
    Ok(sample_variance(&values))
}

/// Cross-fitted model estimation: trajectories split by index parity, the
/// model learned on each half and the estimator run on the other, then the
/// two estimates averaged (for `m_dr`, monotonized after averaging).
#[allow(clippy::too_many_arguments)]
pub fn crossfit_estimate(
    data: &Dataset,
    pi: &Policy,
    kind: EstimatorKind,
    n_states: usize,
    n_actions: usize,
    horizon_override: Option<usize>,
    mode: AtomMode,
    support_max: f64,
) -> Result<StepFunction, EstimatorError> {
    if data.len() < 2 {
        return Err(EstimatorError::DatasetTooSmall);
    }
    if !kind.needs_model() {
        return Err(EstimatorError::UnsupportedKind(kind));
    }
    let split = |parity: usize| Dataset {
        trajectories: data
            .trajectories
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == parity)
            .map(|(_, t)| t.clone())
            .collect(),
        behavior: data.behavior.clone(),
        env_id: data.env_id.clone(),
        seed: data.seed,
        gamma: data.gamma,
        horizon: data.horizon,
    };
    let halves = [split(0), split(1)];
    let mut estimates = Vec::with_capacity(2);
    for fold in 0..2 {
        let model_half = &halves[fold];
        let est_half = &halves[1 - fold];
        let learned = learn_mdp(model_half, n_states, n_actions, horizon_override);
        let model = compute_return_model(&learned.mdp, pi, mode)?;
        let est = match kind {
            EstimatorKind::Dm => estimate_dm(est_half, &model)?.into_step(),
            // M-DR monotonizes after averaging, so both folds contribute raw DR
            EstimatorKind::Dr | EstimatorKind::MDr => estimate_dr(est_half, pi, &model)?,
            EstimatorKind::Wdr => estimate_wdr(est_half, pi, &model)?,
            _ => unreachable!(),
        };
        estimates.push(est);
    }
    let avg = StepFunction::linear_combine(&[(0.5, &estimates[0]), (0.5, &estimates[1])])?;
    if kind == EstimatorKind::MDr {
        Ok(avg.monotonize_clip(support_max).into_step())
    } else {
        Ok(avg)
    }
}

/// How a confidence band or diagnostic bound was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandMethod {
    EmpiricalBernstein,
    IsClipBound,
    MdrBound,
}

impl std::fmt::Display for BandMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandMethod::EmpiricalBernstein => "eb",
            BandMethod::IsClipBound => "isclip",
            BandMethod::MdrBound => "mdr",
        })
    }
}

/// Pointwise confidence band at `points`, with `lower ≤ estimate ≤ upper`
/// before the final clip of the bounds to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ConfidenceBand {
    pub points: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub delta: f64,
    pub method: BandMethod,
}

/// Empirical Bernstein band for the F-IS or S-IS estimates at `M` grid
/// points, valid simultaneously with probability `1 − δ`.
///
/// With `L = ln(4M/δ)` and range `b = w_max^H`, the half-width at each
/// point is
///
/// ```text
/// sqrt(2·V̄·L/n) + 2·b·L/(3n),   V̄ = (sqrt(V_n) + b·sqrt(2L/(n−1)))²
/// ```
///
/// i.e. a Bernstein bound where the unknown variance is replaced by the
/// sample variance inflated by its own estimation error, with δ split
/// evenly between the mean and variance events at each point.
pub fn confidence_band(
    data: &Dataset,
    pi: &Policy,
    kind: EstimatorKind,
    points: &[f64],
    delta: f64,
) -> Result<ConfidenceBand, EstimatorError> {
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(EstimatorError::BadDelta(delta));
    }
    if points.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    if data.len() < 2 {
        return Err(EstimatorError::NeedAtLeastTwoTrajectories);
    }
    if !matches!(kind, EstimatorKind::FIs | EstimatorKind::SIs) {
        return Err(EstimatorError::UnsupportedKind(kind));
    }
    let w = trajectory_weights(data, pi)?;
    let samples = return_weight_points(data, &w);
    let n = data.len() as f64;
    let w_max = max_weight(pi, &data.behavior)?;
    let range = w_max.powi(data.horizon as i32);
    let log_term = (4.0 * points.len() as f64 / delta).ln();
    let mut estimate = Vec::with_capacity(points.len());
    let mut lower = Vec::with_capacity(points.len());
    let mut upper = Vec::with_capacity(points.len());
    for &t in points {
        let contribs: Vec<f64> = samples
            .iter()
            .map(|&(z, wgt)| match kind {
                EstimatorKind::FIs => {
                    if z <= t {
                        wgt
                    } else {
                        0.0
                    }
                }
                _ => {
                    if z > t {
                        1.0 - wgt
                    } else {
                        1.0
                    }
                }
            })
            .collect();
        let est = contribs.iter().sum::<f64>() / n;
        let v_n = sample_variance(&contribs);
        let v_bar = (v_n.sqrt() + range * (2.0 * log_term / (n - 1.0)).sqrt()).powi(2);
        let hw = (2.0 * v_bar * log_term / n).sqrt() + 2.0 * range * log_term / (3.0 * n);
        estimate.push(est);
        lower.push((est - hw).clamp(0.0, 1.0));
        upper.push((est + hw).clamp(0.0, 1.0));
    }
    Ok(ConfidenceBand {
        points: points.to_vec(),
        estimate,
        lower,
        upper,
        delta,
        method: BandMethod::EmpiricalBernstein,
    })
}

/// Theoretical sup-norm bound values for reporting next to observed errors.
///
/// For `is_clip` this is the expectation bound
/// `c₁·sqrt(E[w_H²]/n) + c₂·w_max/n` with the explicit constants
/// `c₁ = ln4·sqrt(ln2) + 2/sqrt(ln2)`, `c₂ = 2·ln4` (no δ dependence; the
/// underlying inequality bounds the expected error). `E[w_H²]` defaults to
/// the plug-in sample mean of `w_H²` unless an exact value is supplied.
///
/// For `m_dr` it is the high-probability bound
/// `w_max^H · sqrt(72·ln(8·n^{1/2}/δ)/n)`.
pub fn diagnostic_bounds(
    data: &Dataset,
    pi: &Policy,
    kind: EstimatorKind,
    delta: f64,
    exact_mean_sq_weight: Option<f64>,
) -> Result<f64, EstimatorError> {
    let n = data.len() as f64;
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let w_max = max_weight(pi, &data.behavior)?;
    match kind {
        EstimatorKind::IsClip => {
            let ew2 = match exact_mean_sq_weight {
                Some(v) => v,
                None => {
                    let w = trajectory_weights(data, pi)?;
                    w.cum.iter().map(|c| c.last().unwrap().powi(2)).sum::<f64>() / n
                }
            };
            let ln2 = std::f64::consts::LN_2;
            let ln4 = 2.0 * ln2;
            let c1 = ln4 * ln2.sqrt() + 2.0 / ln2.sqrt();
            let c2 = 2.0 * ln4;
            Ok(c1 * (ew2 / n).sqrt() + c2 * w_max / n)
        }
        EstimatorKind::MDr => {
            if !(0.0..1.0).contains(&delta) || delta == 0.0 {
                return Err(EstimatorError::BadDelta(delta));
            }
            let range = w_max.powi(data.horizon as i32);
            Ok(range * (72.0 / n * (8.0 * n.sqrt() / delta).ln()).sqrt())
        }
        other => Err(EstimatorError::UnsupportedKind(other)),
    }
}

/// Direct (non-CDF) mean estimates for the comparison experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectMeans {
    pub is_mean: f64,
    pub wis_mean: f64,
    pub dr_mean: f64,
}

/// IS, WIS, and stepwise-DR estimates of the expected return:
///
/// ```text
/// IS  = (1/n) Σᵢ w_H^i·z_H^i
/// WIS = Σᵢ w_H^i·z_H^i / Σᵢ w_H^i
/// DR  = (1/n) Σᵢ [ Σ_h γ^{h−1}(w_{h−1}^i·V̄(s_h^i) − w_h^i·Q̄(s_h^i,a_h^i)) + w_H^i·z_H^i ]
/// ```
///
/// where `V̄`, `Q̄` are the means of the model return distributions.
pub fn direct_mean_estimators(
    data: &Dataset,
    pi: &Policy,
    model: &ReturnDistributionModel,
) -> Result<DirectMeans, EstimatorError> {
    let w = trajectory_weights(data, pi)?;
    check_model(data, model)?;
    let n = data.len() as f64;
    let mut is_sum = 0.0;
    let mut w_sum = 0.0;
    let mut dr_sum = 0.0;
    for (t, cum) in data.trajectories.iter().zip(&w.cum) {
        let wh = *cum.last().unwrap();
        let z = t.total_return();
        is_sum += wh * z;
        w_sum += wh;
        let mut corr = 0.0;
        let mut disc = 1.0;
        for h in 1..=data.horizon {
            let s = t.states[h - 1];
            let a = t.actions[h - 1];
            let v_bar = model.state_dist(s, h).mean();
            let q_bar = model.state_action_dist(s, a, h).mean();
            corr += disc * (cum[h - 1] * v_bar - cum[h] * q_bar);
            disc *= data.gamma;
        }
        dr_sum += corr + wh * z;
    }
    if w_sum <= 0.0 {
        return Err(EstimatorError::AllWeightsZero);
    }
    Ok(DirectMeans {
        is_mean: is_sum / n,
        wis_mean: is_sum / w_sum,
        dr_mean: dr_sum / n,
    })
}
