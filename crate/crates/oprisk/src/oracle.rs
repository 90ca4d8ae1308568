//! Exact ground truth by exhaustive trajectory enumeration.
//!
//! The atlas enumerates every trajectory with positive behavior probability
//! and exposes exact means and variances of the single-trajectory linear
//! estimators (F-IS, S-IS, DR), the mean squared trajectory weight, the
//! recursive variance formulas of the estimators, and the Cramer-Rao lower
//! bound on layered MDPs. These are the referees for every theoretical
//! claim; they are meant for desk-scale MDPs and refuse to enumerate past a
//! configurable cap.

use crate::estimators::EstimatorKind;
use crate::mdp::{Policy, TabularMdp};
use crate::model::{compute_return_model, AtomMode, ReturnDistributionModel};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("trajectory space exceeds the cap of {0}")]
    AtlasTooLarge(usize),
    #[error("estimator {0} has no per-trajectory linear form; use Monte Carlo")]
    UnsupportedForExactMoments(EstimatorKind),
    #[error("not a layered MDP with gamma = 1: {0}")]
    NotUdag(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// One enumerated trajectory with its behavior probability and cached
/// prefix returns.
#[derive(Debug, Clone)]
pub struct AtlasEntry {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub prob_beta: f64,
    /// `z_0 = 0, z_h = Σ_{k≤h} γ^{k−1}·r_k`.
    pub partial_returns: Vec<f64>,
}

impl AtlasEntry {
    pub fn total_return(&self) -> f64 {
        *self.partial_returns.last().unwrap()
    }

    /// Cumulative weights `w_0..w_H` under `pi` against the atlas behavior.
    pub fn cumulative_weights(&self, pi: &Policy, beta: &Policy) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.actions.len() + 1);
        cum.push(1.0);
        for (h, (&s, &a)) in self.states.iter().zip(&self.actions).enumerate() {
            cum.push(cum[h] * pi.prob(s, a) / beta.prob(s, a));
        }
        cum
    }
}

/// Every trajectory of an MDP with nonzero behavior probability.
#[derive(Debug, Clone)]
pub struct TrajectoryAtlas {
    pub entries: Vec<AtlasEntry>,
    pub behavior: Policy,
    pub horizon: usize,
    pub gamma: f64,
}

pub const DEFAULT_ATLAS_CAP: usize = 1_000_000;

/// Depth-first enumeration over start states, actions, reward atoms, and
/// transitions with positive probability.
pub fn enumerate_trajectories(
    mdp: &TabularMdp,
    beta: &Policy,
    max_count: usize,
) -> Result<TrajectoryAtlas, OracleError> {
    struct Frame<'a> {
        mdp: &'a TabularMdp,
        beta: &'a Policy,
        cap: usize,
        entries: Vec<AtlasEntry>,
    }

    fn recurse(
        f: &mut Frame,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        rewards: &mut Vec<f64>,
        partials: &mut Vec<f64>,
        prob: f64,
        disc: f64,
    ) -> Result<(), OracleError> {
        let h = actions.len();
        if h == f.mdp.horizon {
            if f.entries.len() >= f.cap {
                return Err(OracleError::AtlasTooLarge(f.cap));
            }
            f.entries.push(AtlasEntry {
                states: states.clone(),
                actions: actions.clone(),
                rewards: rewards.clone(),
                prob_beta: prob,
                partial_returns: partials.clone(),
            });
            return Ok(());
        }
        let s = *states.last().unwrap();
        for a in 0..f.mdp.n_actions {
            let pa = f.beta.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let rd = f.mdp.reward_dist(s, a).clone();
            for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                if pr == 0.0 {
                    continue;
                }
                for sn in 0..f.mdp.n_states {
                    let pt = f.mdp.transition_prob(s, a, sn);
                    if pt == 0.0 {
                        continue;
                    }
                    states.push(sn);
                    actions.push(a);
                    rewards.push(r);
                    partials.push(partials[h] + disc * r);
                    recurse(
                        f,
                        states,
                        actions,
                        rewards,
                        partials,
                        prob * pa * pr * pt,
                        disc * f.mdp.gamma,
                    )?;
                    states.pop();
                    actions.pop();
                    rewards.pop();
                    partials.pop();
                }
            }
        }
        Ok(())
    }

    let mut frame = Frame {
        mdp,
        beta,
        cap: max_count,
        entries: Vec::new(),
    };
    for s0 in 0..mdp.n_states {
        let mu = mdp.start_dist()[s0];
        if mu == 0.0 {
            continue;
        }
        let mut states = vec![s0];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut partials = vec![0.0];
        recurse(
            &mut frame,
            &mut states,
            &mut actions,
            &mut rewards,
            &mut partials,
            mu,
            1.0,
        )?;
    }
    Ok(TrajectoryAtlas {
        entries: frame.entries,
        behavior: beta.clone(),
        horizon: mdp.horizon,
        gamma: mdp.gamma,
    })
}

impl TrajectoryAtlas {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.prob_beta).sum()
    }
}

/// Single-trajectory estimator value at `t`, used by the exact moments.
fn estimator_value(
    atlas: &TrajectoryAtlas,
    entry: &AtlasEntry,
    pi: &Policy,
    kind: EstimatorKind,
    model: Option<&ReturnDistributionModel>,
    t: f64,
) -> Result<f64, OracleError> {
    let cum = entry.cumulative_weights(pi, &atlas.behavior);
    let w_h = *cum.last().unwrap();
    let z_h = entry.total_return();
    match kind {
        EstimatorKind::FIs => Ok(if z_h <= t { w_h } else { 0.0 }),
        EstimatorKind::SIs => Ok(1.0 - if z_h > t { w_h } else { 0.0 }),
        EstimatorKind::Dr => {
            let model = model.ok_or(OracleError::UnsupportedForExactMoments(kind))?;
            // evaluate the recursion backward along the trajectory;
            // level h sees the argument (t − z_{h−1})/γ^{h−1}
            let h_max = atlas.horizon;
            let u_last = (t - z_h) / atlas.gamma.powi(h_max as i32);
            let mut x = if u_last >= 0.0 { 1.0 } else { 0.0 };
            for h in (1..=h_max).rev() {
                let s = entry.states[h - 1];
                let a = entry.actions[h - 1];
                let u = (t - entry.partial_returns[h - 1]) / atlas.gamma.powi((h - 1) as i32);
                let w_step = if cum[h - 1] == 0.0 {
                    0.0
                } else {
                    cum[h] / cum[h - 1]
                };
                x = model.state_cdf(s, h, u)
                    + w_step * (x - model.state_action_cdf(s, a, h, u));
            }
            Ok(x)
        }
        other => Err(OracleError::UnsupportedForExactMoments(other)),
    }
}

/// Exact mean and variance of the n = 1 estimator at `t` under the
/// behavior distribution. The n-sample estimator has variance `V/n`.
pub fn exact_estimator_moments(
    atlas: &TrajectoryAtlas,
    pi: &Policy,
    kind: EstimatorKind,
    model: Option<&ReturnDistributionModel>,
    t: f64,
) -> Result<(f64, f64), OracleError> {
    let mut mean = 0.0;
    let mut second = 0.0;
    for entry in &atlas.entries {
        let v = estimator_value(atlas, entry, pi, kind, model, t)?;
        mean += entry.prob_beta * v;
        second += entry.prob_beta * v * v;
    }
    Ok((mean, second - mean * mean))
}

/// `E_{P_β}[w_H²] = Σ_τ P_β(τ)·w_H(τ)²`.
pub fn mean_square_weight(atlas: &TrajectoryAtlas, pi: &Policy) -> f64 {
    atlas
        .entries
        .iter()
        .map(|e| {
            let w = *e.cumulative_weights(pi, &atlas.behavior).last().unwrap();
            e.prob_beta * w * w
        })
        .sum()
}

fn check_udag(mdp: &TabularMdp) -> Result<(), OracleError> {
    if mdp.gamma != 1.0 {
        return Err(OracleError::NotUdag(format!("gamma = {} ≠ 1", mdp.gamma)));
    }
    // forward reachability: every reachable state occurs at one horizon only
    let mut seen_at: Vec<Option<usize>> = vec![None; mdp.n_states];
    let mut frontier: Vec<usize> = (0..mdp.n_states)
        .filter(|&s| mdp.start_dist()[s] > 0.0)
        .collect();
    for h in 1..=mdp.horizon + 1 {
        let mut next = std::collections::BTreeSet::new();
        for &s in &frontier {
            match seen_at[s] {
                Some(prev) if prev != h => {
                    return Err(OracleError::NotUdag(format!(
                        "state {s} reachable at horizons {prev} and {h}"
                    )));
                }
                _ => seen_at[s] = Some(h),
            }
            if h <= mdp.horizon {
                for a in 0..mdp.n_actions {
                    for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            next.insert(sn);
                        }
                    }
                }
            }
        }
        frontier = next.into_iter().collect();
    }
    Ok(())
}

/// Cramer-Rao lower bound on the variance of any unbiased off-policy CDF
/// estimator at `t`, for layered MDPs with γ = 1:
///
/// ```text
/// Σ_{h=1}^H E_{P_β}[ w_{1:h}² · V_{r_h, s_{h+1} | s_h, a_h}[ F_{s_{h+1}}(t − Σ_{k≤h} r_k) ] ]
/// ```
///
/// The squared weight includes the step-h action weight: that exponent is
/// pinned by the fixture on which the bound must equal the exact variance
/// of the perfect-model DR estimator (a bandit with a Bernoulli reward
/// gives bound 0.48 with the step-h weight included versus DR variance
/// 0.48, and 0.12 without it).
pub fn cramer_rao_bound(
    atlas: &TrajectoryAtlas,
    pi: &Policy,
    mdp: &TabularMdp,
    t: f64,
) -> Result<f64, OracleError> {
    check_udag(mdp)?;
    let model = compute_return_model(mdp, pi, AtomMode::Exact)?;
    // conditional variance of F_{S'}(t − g_{h−1} − R) given (s_h, a_h) and
    // the reward prefix, memoized across trajectories sharing the prefix
    let mut memo: HashMap<(usize, usize, usize, u64), f64> = HashMap::new();
    let mut total = 0.0;
    for entry in &atlas.entries {
        let cum = entry.cumulative_weights(pi, &atlas.behavior);
        for h in 1..=atlas.horizon {
            let s = entry.states[h - 1];
            let a = entry.actions[h - 1];
            let g_prev = entry.partial_returns[h - 1];
            let w2 = cum[h] * cum[h];
            if w2 == 0.0 {
                continue;
            }
            let key = (h, s, a, g_prev.to_bits());
            let v = *memo.entry(key).or_insert_with(|| {
                let rd = mdp.reward_dist(s, a);
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                    if pr == 0.0 {
                        continue;
                    }
                    let u = t - g_prev - r;
                    for (sn, &pt) in mdp.transition_row(s, a).iter().enumerate() {
                        if pt > 0.0 {
                            let f = model.state_cdf(sn, h + 1, u);
                            m1 += pr * pt * f;
                            m2 += pr * pt * f * f;
                        }
                    }
                }
                m2 - m1 * m1
            });
            total += entry.prob_beta * w2 * v;
        }
    }
    Ok(total)
}

/// Mean and variance of the single-trajectory estimator evaluated through
/// the recursive variance formulas rather than the trajectory atlas.
///
/// For each state and horizon the recursion tracks, at the evaluation
/// point `u` the estimator sees there, the conditional mean and variance
/// of the estimator started at that state:
///
/// ```text
/// v_{s,a}(u) = E_{R,S'}[ var_{h+1}(S', (u−R)/γ) ] + V_{R,S'}[ F_{S'}((u−R)/γ) ]
/// IS:  var_h(s, u) = Σ_a β w² (v_{s,a} + m_{s,a}²) − F_s(u)²
/// DR:  var_h(s, u) = Σ_a β [ w² v_{s,a} + (F̄_s + w(m_{s,a} − F̄_{s,a}))² ] − mean²
/// ```
///
/// which is the law-of-total-variance unrolling of the variance
/// recursions; the atlas variance must agree with it exactly.
pub fn recursive_estimator_moments(
    mdp: &TabularMdp,
    pi: &Policy,
    beta: &Policy,
    kind: EstimatorKind,
    model: Option<&ReturnDistributionModel>,
    t: f64,
) -> Result<(f64, f64), OracleError> {
    if !matches!(kind, EstimatorKind::FIs | EstimatorKind::Dr) {
        return Err(OracleError::UnsupportedForExactMoments(kind));
    }
    if kind == EstimatorKind::Dr && model.is_none() {
        return Err(OracleError::UnsupportedForExactMoments(kind));
    }

    struct Ctx<'a> {
        mdp: &'a TabularMdp,
        pi: &'a Policy,
        beta: &'a Policy,
        kind: EstimatorKind,
        model: Option<&'a ReturnDistributionModel>,
        memo: HashMap<(usize, usize, u64), (f64, f64)>,
    }

    // (mean, variance) of the estimator started at state s, horizon h,
    // evaluated at u
    fn state_moments(ctx: &mut Ctx, s: usize, h: usize, u: f64) -> (f64, f64) {
        if h > ctx.mdp.horizon {
            return (if u >= 0.0 { 1.0 } else { 0.0 }, 0.0);
        }
        if let Some(&hit) = ctx.memo.get(&(s, h, u.to_bits())) {
            return hit;
        }
        let mut mean = 0.0;
        let mut second = 0.0;
        for a in 0..ctx.mdp.n_actions {
            let pb = ctx.beta.prob(s, a);
            if pb == 0.0 {
                continue;
            }
            let w = ctx.pi.prob(s, a) / pb;
            // conditional (mean, variance) of the downstream value given (s, a)
            let rd = ctx.mdp.reward_dist(s, a).clone();
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                if pr == 0.0 {
                    continue;
                }
                let u_next = (u - r) / ctx.mdp.gamma;
                for sn in 0..ctx.mdp.n_states {
                    let pt = ctx.mdp.transition_prob(s, a, sn);
                    if pt > 0.0 {
                        let (cm, cv) = state_moments(ctx, sn, h + 1, u_next);
                        m1 += pr * pt * cm;
                        m2 += pr * pt * (cv + cm * cm);
                    }
                }
            }
            match ctx.kind {
                EstimatorKind::FIs => {
                    // value = w · X with X the downstream estimator
                    mean += pb * w * m1;
                    second += pb * w * w * m2;
                }
                _ => {
                    // DR: value = F̄_s(u) + w·(X − F̄_{s,a}(u))
                    let model = ctx.model.unwrap();
                    let fbar_s = model.state_cdf(s, h, u);
                    let fbar_sa = model.state_action_cdf(s, a, h, u);
                    let cond_mean = fbar_s + w * (m1 - fbar_sa);
                    let cond_var = w * w * (m2 - m1 * m1);
                    mean += pb * cond_mean;
                    second += pb * (cond_var + cond_mean * cond_mean);
                }
            }
        }
        let out = (mean, second - mean * mean);
        ctx.memo.insert((s, h, u.to_bits()), out);
        out
    }

    let mut ctx = Ctx {
        mdp,
        pi,
        beta,
        kind,
        model,
        memo: HashMap::new(),
    };
    let mut mean = 0.0;
    let mut second = 0.0;
    for s0 in 0..mdp.n_states {
        let mu = mdp.start_dist()[s0];
        if mu > 0.0 {
            let (m, v) = state_moments(&mut ctx, s0, 1, t);
            mean += mu * m;
            second += mu * (v + m * m);
        }
    }
    Ok((mean, second - mean * mean))
}
