//! Finite MDPs, stationary policies, trajectory sampling, and importance
//! weights.
//!
//! Rewards are finite discrete distributions per (state, action), which is
//! what makes exact enumeration oracles and exact model dynamic programming
//! possible downstream. All types are immutable after construction and safe
//! to share across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("behavior probability is zero for action {action} in state {state}")]
    ZeroBehaviorProbability { state: usize, action: usize },
    #[error("coverage violation: pi({action}|{state}) > 0 but beta({action}|{state}) = 0")]
    CoverageViolation { state: usize, action: usize },
    #[error("mixture coefficient must lie in [0, 1], got {0}")]
    OutOfRangeLambda(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Finite discrete distribution over sorted, duplicate-free real atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self, MdpError> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(MdpError::InvalidDistribution(
                "atom and probability lists must be nonempty and equal-length".into(),
            ));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) || !atoms.iter().all(|a| a.is_finite()) {
            return Err(MdpError::InvalidDistribution(
                "atoms must be finite, sorted, duplicate-free".into(),
            ));
        }
        if probs.iter().any(|p| *p < 0.0) {
            return Err(MdpError::InvalidDistribution("negative probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(MdpError::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self::from_raw(atoms, probs))
    }

    /// Point mass at `x`.
    pub fn point(x: f64) -> Self {
        Self::from_raw(vec![x], vec![1.0])
    }

    /// Internal constructor for distributions produced by exact arithmetic,
    /// where the mass-sum tolerance is checked by the caller's invariants.
    pub(crate) fn from_raw(atoms: Vec<f64>, probs: Vec<f64>) -> Self {
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cum.push(acc);
        }
        Self { atoms, probs, cum }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_mass(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// CDF at `u`: total mass on atoms ≤ `u`.
    pub fn cdf(&self, u: f64) -> f64 {
        let idx = self.atoms.partition_point(|a| *a <= u);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| a * p)
            .sum()
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms[0]
    }

    pub fn max_atom(&self) -> f64 {
        *self.atoms.last().unwrap()
    }
}

fn check_simplex(row: &[f64], what: &str) -> Result<(), MdpError> {
    if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(MdpError::InvalidDistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(MdpError::InvalidDistribution(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Finite MDP with tabular transitions, per-(s,a) discrete reward
/// distributions, discount, start distribution, and a fixed horizon.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<DiscreteDist>,
    pub gamma: f64,
    start_dist: Vec<f64>,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<DiscreteDist>,
        gamma: f64,
        start_dist: Vec<f64>,
        horizon: usize,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(MdpError::InvalidMdp("empty state/action space or horizon".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::InvalidMdp("transition table has wrong size".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::InvalidMdp("reward table has wrong size".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(MdpError::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        if start_dist.len() != n_states {
            return Err(MdpError::InvalidMdp("start distribution has wrong size".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                check_simplex(row, &format!("transition row ({s},{a})"))?;
            }
        }
        check_simplex(&start_dist, "start distribution")?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            start_dist,
            horizon,
        })
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn reward_dist(&self, s: usize, a: usize) -> &DiscreteDist {
        &self.reward[s * self.n_actions + a]
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    /// `(G_min, G_max)`: bounds of the return support,
    /// `Σ_h γ^{h−1}·r_min` and `Σ_h γ^{h−1}·r_max`.
    pub fn return_bounds(&self) -> (f64, f64) {
        let r_min = self
            .reward
            .iter()
            .map(DiscreteDist::min_atom)
            .fold(f64::INFINITY, f64::min);
        let r_max = self
            .reward
            .iter()
            .map(DiscreteDist::max_atom)
            .fold(f64::NEG_INFINITY, f64::max);
        let geom: f64 = (0..self.horizon).map(|h| self.gamma.powi(h as i32)).sum();
        (r_min * geom, r_max * geom)
    }

    /// Return width `D = G_max − G_min`.
    pub fn return_width(&self) -> f64 {
        let (lo, hi) = self.return_bounds();
        hi - lo
    }

    /// The same MDP started from a different state distribution.
    pub fn with_start_dist(&self, start_dist: Vec<f64>) -> Result<Self, MdpError> {
        if start_dist.len() != self.n_states {
            return Err(MdpError::InvalidMdp("start distribution has wrong size".into()));
        }
        check_simplex(&start_dist, "start distribution")?;
        Ok(Self {
            start_dist,
            ..self.clone()
        })
    }
}

/// Stationary policy: a probability distribution over actions per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::InvalidDistribution("policy table has wrong size".into()));
        }
        for s in 0..n_states {
            check_simplex(&probs[s * n_actions..][..n_actions], &format!("policy row {s}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }
}

/// Importance weight `w(a, s) = π(a|s) / β(a|s)`.
pub fn step_weight(pi: &Policy, beta: &Policy, s: usize, a: usize) -> Result<f64, MdpError> {
    let b = beta.prob(s, a);
    if b == 0.0 {
        return Err(MdpError::ZeroBehaviorProbability { state: s, action: a });
    }
    Ok(pi.prob(s, a) / b)
}

/// `w_max = max_{s,a} π(a|s)/β(a|s)`, erroring if β fails to cover π.
pub fn max_weight(pi: &Policy, beta: &Policy) -> Result<f64, MdpError> {
    let mut best = 0.0_f64;
    for s in 0..pi.n_states {
        for a in 0..pi.n_actions {
            let p = pi.prob(s, a);
            let b = beta.prob(s, a);
            if b == 0.0 {
                if p > 0.0 {
                    return Err(MdpError::CoverageViolation { state: s, action: a });
                }
                continue;
            }
            best = best.max(p / b);
        }
    }
    Ok(best)
}

/// `λ·π + (1−λ)·UNIF` rowwise.
pub fn mixture_policy(pi: &Policy, lambda: f64) -> Result<Policy, MdpError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MdpError::OutOfRangeLambda(lambda));
    }
    let u = (1.0 - lambda) / pi.n_actions as f64;
    let probs = pi.table().iter().map(|p| lambda * p + u).collect();
    Policy::new(pi.n_states, pi.n_actions, probs)
}

/// One `H`-step trajectory. Partial returns are cached at sampling time:
/// `z_0 = 0`, `z_h = Σ_{k≤h} γ^{k−1}·r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub partial_returns: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Total return `z_H`.
    pub fn total_return(&self) -> f64 {
        *self.partial_returns.last().unwrap()
    }

    /// Cumulative importance weights `w_0 = 1, w_h = w_{h−1}·w(a_h, s_h)`,
    /// built as exact running products.
    pub fn cumulative_weights(&self, pi: &Policy, beta: &Policy) -> Result<Vec<f64>, MdpError> {
        let mut cum = Vec::with_capacity(self.horizon() + 1);
        cum.push(1.0);
        for h in 0..self.horizon() {
            let w = step_weight(pi, beta, self.states[h], self.actions[h])?;
            cum.push(cum[h] * w);
        }
        Ok(cum)
    }
}

/// A set of trajectories sampled from one behavior policy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub behavior: Policy,
    pub env_id: String,
    pub seed: u64,
    pub gamma: f64,
    pub horizon: usize,
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn sample_one(mdp: &TabularMdp, beta: &Policy, seed: u64, index: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let h = mdp.horizon;
    let mut states = Vec::with_capacity(h + 1);
    let mut actions = Vec::with_capacity(h);
    let mut rewards = Vec::with_capacity(h);
    let mut partial_returns = Vec::with_capacity(h + 1);
    let mut s = sample_index(&mut rng, mdp.start_dist());
    states.push(s);
    partial_returns.push(0.0);
    let mut z = 0.0;
    let mut disc = 1.0;
    for step in 0..h {
        let a = sample_index(&mut rng, beta.row(s));
        let rd = mdp.reward_dist(s, a);
        let r = rd.atoms()[sample_index(&mut rng, rd.probs())];
        let next = sample_index(&mut rng, mdp.transition_row(s, a));
        z += disc * r;
        disc *= mdp.gamma;
        actions.push(a);
        rewards.push(r);
        states.push(next);
        partial_returns.push(z);
        s = next;
        let _ = step;
    }
    Trajectory {
        states,
        actions,
        rewards,
        partial_returns,
    }
}

/// Samples `n` trajectories of exactly `H` steps under `beta`.
///
/// Trajectory `i` draws from a dedicated RNG stream derived from
/// `(seed, i)`, so identical inputs give bit-identical datasets regardless
/// of parallel execution order, and datasets of size `n` and `n+1` share
/// their first `n` trajectories.
pub fn sample_dataset(
    mdp: &TabularMdp,
    beta: &Policy,
    n: usize,
    seed: u64,
    env_id: &str,
) -> Dataset {
    let trajectories: Vec<Trajectory> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_one(mdp, beta, seed, i))
        .collect();
    Dataset {
        trajectories,
        behavior: beta.clone(),
        env_id: env_id.to_string(),
        seed,
        gamma: mdp.gamma,
        horizon: mdp.horizon,
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema: String,
    env_id: String,
    horizon: usize,
    gamma: f64,
    seed: u64,
    behavior: Policy,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    s: Vec<usize>,
    a: Vec<usize>,
    r: Vec<f64>,
}

pub const DATASET_SCHEMA: &str = "oprisk-dataset-v1";

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Writes the dataset as JSON Lines: a header object, then one record
    /// per trajectory.
    pub fn save_jsonl<W: Write>(&self, mut w: W) -> Result<(), MdpError> {
        let header = DatasetHeader {
            schema: DATASET_SCHEMA.to_string(),
            env_id: self.env_id.clone(),
            horizon: self.horizon,
            gamma: self.gamma,
            seed: self.seed,
            behavior: self.behavior.clone(),
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| MdpError::Parse { line: 1, msg: e.to_string() })?;
        writeln!(w, "{line}")?;
        for t in &self.trajectories {
            let rec = TrajectoryLine {
                s: t.states.clone(),
                a: t.actions.clone(),
                r: t.rewards.clone(),
            };
            let line = serde_json::to_string(&rec)
                .map_err(|e| MdpError::Parse { line: 0, msg: e.to_string() })?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl_path(&self, path: &Path) -> Result<(), MdpError> {
        let f = std::fs::File::create(path)?;
        self.save_jsonl(std::io::BufWriter::new(f))
    }

    /// Loads a dataset, recomputing partial returns from the stored gamma.
    /// Behavior probabilities come from the stored table; every recorded
    /// action must have positive behavior probability.
    pub fn load_jsonl<R: BufRead>(r: R) -> Result<Self, MdpError> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or(MdpError::Parse { line: 1, msg: "empty file".into() })??;
        let header: DatasetHeader = serde_json::from_str(&first)
            .map_err(|e| MdpError::Parse { line: 1, msg: e.to_string() })?;
        if header.schema != DATASET_SCHEMA {
            return Err(MdpError::Parse {
                line: 1,
                msg: format!("unknown schema {:?}", header.schema),
            });
        }
        let mut trajectories = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryLine = serde_json::from_str(&line)
                .map_err(|e| MdpError::Parse { line: line_no, msg: e.to_string() })?;
            if rec.s.len() != header.horizon + 1
                || rec.a.len() != header.horizon
                || rec.r.len() != header.horizon
            {
                return Err(MdpError::Parse {
                    line: line_no,
                    msg: "trajectory lengths inconsistent with horizon".into(),
                });
            }
            for (h, (&s, &a)) in rec.s.iter().zip(&rec.a).enumerate() {
                if s >= header.behavior.n_states || a >= header.behavior.n_actions {
                    return Err(MdpError::Parse {
                        line: line_no,
                        msg: format!("state/action out of range at step {h}"),
                    });
                }
                if header.behavior.prob(s, a) == 0.0 {
                    return Err(MdpError::Parse {
                        line: line_no,
                        msg: format!("recorded action {a} has zero behavior probability in state {s}"),
                    });
                }
            }
            let mut partial_returns = Vec::with_capacity(header.horizon + 1);
            partial_returns.push(0.0);
            let mut z = 0.0;
            let mut disc = 1.0;
            for &r in &rec.r {
                z += disc * r;
                disc *= header.gamma;
                partial_returns.push(z);
            }
            trajectories.push(Trajectory {
                states: rec.s,
                actions: rec.a,
                rewards: rec.r,
                partial_returns,
            });
        }
        Ok(Dataset {
            trajectories,
            behavior: header.behavior,
            env_id: header.env_id,
            seed: header.seed,
            gamma: header.gamma,
            horizon: header.horizon,
        })
    }

    pub fn load_jsonl_path(path: &Path) -> Result<Self, MdpError> {
        let f = std::fs::File::open(path)?;
        Self::load_jsonl(std::io::BufReader::new(f))
    }
}
