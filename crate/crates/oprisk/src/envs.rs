//! Benchmark environments: the slippery Cliffwalk, two analytic toys used
//! throughout the tests, layered random UDAGs, and an env-id registry.
//!
//! Costs are represented as negative rewards so one CDF orientation serves
//! every environment: the risk-relevant "bad" tail of a cost problem is the
//! lower tail of returns.

use crate::mdp::{DiscreteDist, MdpError, Policy, TabularMdp};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown environment id {0:?}")]
    UnknownEnv(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Parameters of the slippery Cliffwalk gridworld.
#[derive(Debug, Clone, PartialEq)]
pub struct CliffwalkSpec {
    pub rows: usize,
    pub cols: usize,
    pub slip_prob: f64,
    pub cliff_cost: f64,
    pub step_cost: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for CliffwalkSpec {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 12,
            slip_prob: 0.05,
            cliff_cost: 100.0,
            step_cost: 1.0,
            horizon: 200,
            gamma: 1.0,
        }
    }
}

impl CliffwalkSpec {
    fn check(&self) -> Result<(), EnvError> {
        if self.rows < 2 || self.cols < 2 {
            return Err(EnvError::InvalidSpec("grid must be at least 2x2".into()));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(EnvError::InvalidSpec(format!(
                "slip_prob {} outside [0, 1]",
                self.slip_prob
            )));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidSpec("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn start_state(&self) -> usize {
        (self.rows - 1) * self.cols
    }

    pub fn goal_state(&self) -> usize {
        self.rows * self.cols - 1
    }

    pub fn is_cliff(&self, state: usize) -> bool {
        let (row, col) = (state / self.cols, state % self.cols);
        row == self.rows - 1 && col > 0 && col < self.cols - 1
    }
}

/// Cardinal actions of the gridworld, in index order.
pub const CLIFFWALK_ACTIONS: [&str; 4] = ["up", "right", "down", "left"];

/// Builds the slippery Cliffwalk.
///
/// The agent starts in the lower-left corner and must reach the absorbing
/// lower-right goal. The intended move executes with probability
/// `1 − slip_prob`; otherwise the agent slips one cell toward the cliff
/// (downward, clamped at walls). Any move that lands on a cliff cell costs
/// `cliff_cost` and resets the agent to the start, so every trajectory has
/// exactly `horizon` steps; all other steps cost `step_cost`, and the goal
/// is absorbing at zero cost. Rewards are the negated costs.
///
/// Because rewards are per-(state, action) distributions sampled
/// independently of the transition, the cliff penalty is drawn with the
/// same probability as the reset-to-start transition rather than coupled to
/// it; both laws agree whenever the slip outcome is unambiguous (in
/// particular everywhere when `slip_prob` is 0 or the move is toward the
/// cliff).
pub fn build_cliffwalk(spec: &CliffwalkSpec) -> Result<TabularMdp, EnvError> {
    spec.check()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let n_states = rows * cols;
    let n_actions = 4;
    let start = spec.start_state();
    let goal = spec.goal_state();

    let step = |state: usize, action: usize| -> usize {
        let (row, col) = (state / cols, state % cols);
        let (nr, nc) = match action {
            0 => (row.saturating_sub(1), col),
            1 => (row, (col + 1).min(cols - 1)),
            2 => ((row + 1).min(rows - 1), col),
            _ => (row, col.saturating_sub(1)),
        };
        nr * cols + nc
    };

    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
            if s == goal {
                row[goal] = 1.0;
                reward.push(DiscreteDist::point(0.0));
                continue;
            }
            // (probability, landing cell) pairs before the cliff rule.
            let intended = step(s, a);
            let slipped = step(s, 2);
            let outcomes = if intended == slipped {
                vec![(1.0, intended)]
            } else {
                vec![(1.0 - spec.slip_prob, intended), (spec.slip_prob, slipped)]
            };
            let mut p_cliff = 0.0;
            for (p, cell) in outcomes {
                if p == 0.0 {
                    continue;
                }
                if spec.is_cliff(cell) {
                    p_cliff += p;
                    row[start] += p;
                } else {
                    row[cell] += p;
                }
            }
            let dist = if p_cliff >= 1.0 {
                DiscreteDist::point(-spec.cliff_cost)
            } else if p_cliff <= 0.0 {
                DiscreteDist::point(-spec.step_cost)
            } else {
                DiscreteDist::new(
                    vec![-spec.cliff_cost, -spec.step_cost],
                    vec![p_cliff, 1.0 - p_cliff],
                )?
            };
            reward.push(dist);
        }
    }
    let mut start_dist = vec![0.0; n_states];
    start_dist[start] = 1.0;
    Ok(TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        spec.gamma,
        start_dist,
        spec.horizon,
    )?)
}

/// Two-action bandit: `H = 1`, deterministic rewards 0 and 1, γ = 1.
/// State 1 is a separate terminal sink so the layout is a strict UDAG.
pub fn build_toy_bandit() -> TabularMdp {
    build_toy_bandit_with(DiscreteDist::point(1.0))
}

/// Toy bandit whose action `a1` pays 1 with probability `p`, else 0.
pub fn build_toy_bandit_bernoulli(p: f64) -> TabularMdp {
    build_toy_bandit_with(DiscreteDist::new(vec![0.0, 1.0], vec![1.0 - p, p]).unwrap())
}

fn build_toy_bandit_with(a1_reward: DiscreteDist) -> TabularMdp {
    let n_states = 2;
    let n_actions = 2;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    for a in 0..n_actions {
        transition[(a) * n_states + 1] = 1.0; // s0 --a--> terminal
        transition[(n_actions + a) * n_states + 1] = 1.0; // terminal self-loop
    }
    let reward = vec![
        DiscreteDist::point(0.0),
        a1_reward,
        DiscreteDist::point(0.0),
        DiscreteDist::point(0.0),
    ];
    TabularMdp::new(n_states, n_actions, transition, reward, 1.0, vec![1.0, 0.0], 1)
        .expect("toy bandit construction")
}

/// Two-step chain: one start state branching to a good state (reward 1) or
/// a bad state (reward 0) with probability 1/2 each; the true return is
/// Bernoulli(1/2) on {0, 1}. Single action, γ = 1, explicit terminal sink.
pub fn build_toy_chain() -> TabularMdp {
    let n_states = 4; // s1, s2g, s2b, terminal
    let n_actions = 1;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    transition[1] = 0.5; // s1 -> s2g
    transition[2] = 0.5; // s1 -> s2b
    transition[n_states + 3] = 1.0; // s2g -> terminal
    transition[2 * n_states + 3] = 1.0; // s2b -> terminal
    transition[3 * n_states + 3] = 1.0; // terminal self-loop
    let reward = vec![
        DiscreteDist::point(0.0),
        DiscreteDist::point(1.0),
        DiscreteDist::point(0.0),
        DiscreteDist::point(0.0),
    ];
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        1.0,
        vec![1.0, 0.0, 0.0, 0.0],
        2,
    )
    .expect("toy chain construction")
}

/// Seeded layered MDP in which every state occurs at exactly one horizon
/// and carries its own reward distribution, shared across actions; γ = 1.
///
/// Level `ℓ` of `1..=levels` holds `n_states_per_level` states; a single
/// terminal sink forms level `levels + 1`. Reward atoms are offset by the
/// global state index, so distinct state paths produce distinct reward
/// histories. Transition rows and the start distribution are random
/// simplexes bounded away from zero, giving full coverage under any pair of
/// policies.
pub fn build_random_udag(
    n_states_per_level: usize,
    n_actions: usize,
    levels: usize,
    reward_atoms: usize,
    seed: u64,
) -> TabularMdp {
    assert!(n_states_per_level >= 1 && n_actions >= 1 && levels >= 1 && reward_atoms >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = levels * n_states_per_level + 1;
    let sink = n_states - 1;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);

    let random_simplex = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / sum).collect()
    };

    for s in 0..n_states {
        let state_reward = if s == sink {
            DiscreteDist::point(0.0)
        } else {
            let atoms: Vec<f64> = (0..reward_atoms)
                .map(|j| {
                    let jitter: f64 = rng.gen_range(0.0..0.5);
                    s as f64 + (j as f64 + jitter) * 0.9 / reward_atoms as f64
                })
                .collect();
            let probs = random_simplex(&mut rng, reward_atoms);
            DiscreteDist::new(atoms, probs).expect("udag reward distribution")
        };
        let level = if s == sink { levels + 1 } else { s / n_states_per_level + 1 };
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
            if s == sink || level == levels {
                row[sink] = 1.0;
            } else {
                let base = level * n_states_per_level;
                let probs = random_simplex(&mut rng, n_states_per_level);
                for (i, p) in probs.into_iter().enumerate() {
                    row[base + i] = p;
                }
            }
            reward.push(state_reward.clone());
        }
    }

    let mut start_dist = vec![0.0; n_states];
    let start_probs = random_simplex(&mut rng, n_states_per_level);
    for (i, p) in start_probs.into_iter().enumerate() {
        start_dist[i] = p;
    }
    TabularMdp::new(n_states, n_actions, transition, reward, 1.0, start_dist, levels)
        .expect("udag construction")
}

/// Seeded dense random MDP; a generic fixture for self-consistency tests.
pub fn build_random_mdp(
    n_states: usize,
    n_actions: usize,
    reward_atoms: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_simplex = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / sum).collect()
    };
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
            row.copy_from_slice(&random_simplex(&mut rng, n_states));
            let mut atoms: Vec<f64> = (0..reward_atoms)
                .map(|j| j as f64 + rng.gen_range(0.0..0.8))
                .collect();
            atoms.sort_unstable_by(f64::total_cmp);
            let probs = random_simplex(&mut rng, reward_atoms);
            reward.push(DiscreteDist::new(atoms, probs).expect("random reward"));
        }
    }
    let start_dist = random_simplex(&mut rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward, gamma, start_dist, horizon)
        .expect("random mdp construction")
}

/// Seeded random stationary policy with full support.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        probs.extend(raw.into_iter().map(|x| x / sum));
    }
    Policy::new(n_states, n_actions, probs).expect("random policy")
}

/// Greedy policy from exact Q-iteration on expected rewards.
///
/// Iterates `Q(s,a) = E[R(s,a)] + γ·Σ P(s'|s,a)·max_a' Q(s',a')` to a fixed
/// point and breaks ties toward the lowest action index. Converges for the
/// environments built here (absorbing goals / layered sinks).
pub fn optimal_policy(mdp: &TabularMdp) -> Policy {
    let (n_states, n_actions) = (mdp.n_states, mdp.n_actions);
    let mut values = vec![0.0; n_states];
    let mean_reward: Vec<f64> = (0..n_states * n_actions)
        .map(|idx| mdp.reward_dist(idx / n_actions, idx % n_actions).mean())
        .collect();
    for _ in 0..10_000 {
        let mut next = vec![f64::NEG_INFINITY; n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                let q = mean_reward[s * n_actions + a]
                    + mdp.gamma
                        * mdp
                            .transition_row(s, a)
                            .iter()
                            .zip(&values)
                            .map(|(p, v)| p * v)
                            .sum::<f64>();
                if q > next[s] {
                    next[s] = q;
                }
            }
        }
        let delta = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        values = next;
        if delta < 1e-10 {
            break;
        }
    }
    let mut actions = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..n_actions {
            let q = mean_reward[s * n_actions + a]
                + mdp.gamma
                    * mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(&values)
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
            if q > best.0 {
                best = (q, a);
            }
        }
        actions.push(best.1);
    }
    Policy::deterministic(n_states, n_actions, &actions)
}

/// Overridable knobs shared by the registry and the sweep harness.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnvOverrides {
    pub horizon: Option<usize>,
    pub slip_prob: Option<f64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub cliff_cost: Option<f64>,
    pub step_cost: Option<f64>,
    pub gamma: Option<f64>,
}

/// Builds an environment from its id: `cliffwalk`, `toy_bandit`,
/// `toy_chain`, or `udag:<seed>:<levels>x<states>x<actions>x<atoms>`.
pub fn build_env(env_id: &str, overrides: &EnvOverrides) -> Result<TabularMdp, EnvError> {
    match env_id {
        "cliffwalk" => {
            let d = CliffwalkSpec::default();
            let spec = CliffwalkSpec {
                rows: overrides.rows.unwrap_or(d.rows),
                cols: overrides.cols.unwrap_or(d.cols),
                slip_prob: overrides.slip_prob.unwrap_or(d.slip_prob),
                cliff_cost: overrides.cliff_cost.unwrap_or(d.cliff_cost),
                step_cost: overrides.step_cost.unwrap_or(d.step_cost),
                horizon: overrides.horizon.unwrap_or(d.horizon),
                gamma: overrides.gamma.unwrap_or(d.gamma),
            };
            build_cliffwalk(&spec)
        }
        "toy_bandit" => Ok(build_toy_bandit()),
        "toy_chain" => Ok(build_toy_chain()),
        _ => {
            if let Some(rest) = env_id.strip_prefix("udag:") {
                let mut parts = rest.splitn(2, ':');
                let seed: u64 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| EnvError::UnknownEnv(env_id.into()))?;
                let dims = parts.next().ok_or_else(|| EnvError::UnknownEnv(env_id.into()))?;
                let nums: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| EnvError::UnknownEnv(env_id.into()))?;
                if nums.len() != 4 {
                    return Err(EnvError::UnknownEnv(env_id.into()));
                }
                Ok(build_random_udag(nums[1], nums[2], nums[0], nums[3], seed))
            } else {
                Err(EnvError::UnknownEnv(env_id.into()))
            }
        }
    }
}
