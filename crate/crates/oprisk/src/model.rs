//! Model return distributions via the CDF Bellman recursion.
//!
//! Given an MDP (true or learned) and a target policy, the recursion runs
//! backward over horizons `h = H..1`:
//!
//! ```text
//! F̄_{s,a}^{(h)} = E_{R,P}[ F̄_{S'}^{(h+1)}((t − R)/γ) ]        (reward ⊛ next-state mixture)
//! F̄_{s}^{(h)}   = E_{A∼π}[ F̄_{s,A}^{(h)} ]                    (policy mixture)
//! ```
//!
//! with the terminal condition that the distribution at `h = H+1` is the
//! point mass at 0. In exact mode (γ = 1) every intermediate distribution
//! keeps its exact atoms; for γ < 1 each step projects onto a fixed uniform
//! grid to bound atom growth.

use crate::mdp::{Dataset, DiscreteDist, Policy, TabularMdp};
use crate::stepfn::ValidCdf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("exact atom mode requires gamma = 1 (got {0}); use projected mode")]
    IncompatibleAtomMode(f64),
    #[error("distribution atom {atom} lies outside the projection grid [{lo}, {hi}]")]
    SupportOutsideGrid { atom: f64, lo: f64, hi: f64 },
}

/// How intermediate return distributions are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomMode {
    /// Exact atom arithmetic; requires γ = 1.
    Exact,
    /// Projection onto a uniform grid with this many atoms after every step.
    Projected { n_atoms: usize },
}

/// Uniform projection grid over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_atoms: usize,
    step: f64,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, n_atoms: usize) -> Self {
        assert!(n_atoms >= 2 && hi > lo);
        Self {
            lo,
            hi,
            n_atoms,
            step: (hi - lo) / (n_atoms - 1) as f64,
        }
    }

    /// Grid covering the return supports of every horizon of `mdp`
    /// (all level supports nest inside `[min(G_min, 0), max(G_max, 0)]`,
    /// and the terminal point mass sits at 0).
    pub fn for_mdp(mdp: &TabularMdp, n_atoms: usize) -> Self {
        let (g_min, g_max) = mdp.return_bounds();
        let lo = g_min.min(0.0);
        let hi = g_max.max(0.0);
        if hi > lo {
            Self::new(lo, hi, n_atoms)
        } else {
            Self::new(lo - 0.5, hi + 0.5, n_atoms)
        }
    }

    pub fn atom(&self, i: usize) -> f64 {
        if i + 1 == self.n_atoms {
            self.hi
        } else {
            self.lo + self.step * i as f64
        }
    }
}

/// Splits each off-grid atom's mass between its two neighboring grid atoms
/// in inverse proportion to distance. Total mass is preserved exactly; the
/// mean is preserved for interior atoms; on-grid atoms pass through.
pub fn project_distribution(
    dist: &DiscreteDist,
    grid: &UniformGrid,
) -> Result<DiscreteDist, ModelError> {
    project_with_slack(dist, grid, (grid.hi - grid.lo) * 1e-12)
}

/// Projection with a tolerance for atoms slightly past the grid edge.
///
/// The backward recursion projects at every level, and each projection can
/// widen the support by up to one grid step; after `H` levels the
/// accumulated widening can push artifact atoms past the nominal edge.
/// Those are clamped to the boundary; anything farther out is a genuine
/// support violation.
fn project_with_slack(
    dist: &DiscreteDist,
    grid: &UniformGrid,
    slack: f64,
) -> Result<DiscreteDist, ModelError> {
    let mut masses = vec![0.0; grid.n_atoms];
    for (&x, &p) in dist.atoms().iter().zip(dist.probs()) {
        if x < grid.lo - slack || x > grid.hi + slack {
            return Err(ModelError::SupportOutsideGrid {
                atom: x,
                lo: grid.lo,
                hi: grid.hi,
            });
        }
        let x = x.clamp(grid.lo, grid.hi);
        let nearest = ((x - grid.lo) / grid.step).round() as usize;
        let nearest = nearest.min(grid.n_atoms - 1);
        if grid.atom(nearest) == x {
            masses[nearest] += p;
            continue;
        }
        let i = (((x - grid.lo) / grid.step).floor() as usize).min(grid.n_atoms - 2);
        let frac = (x - grid.atom(i)) / grid.step;
        masses[i] += p * (1.0 - frac);
        masses[i + 1] += p * frac;
    }
    let mut atoms = Vec::new();
    let mut probs = Vec::new();
    for (i, m) in masses.into_iter().enumerate() {
        if m > 0.0 {
            atoms.push(grid.atom(i));
            probs.push(m);
        }
    }
    Ok(DiscreteDist::from_raw(atoms, probs))
}

/// Linear merge of two sorted weighted-atom lists, combining bit-equal atoms.
fn merge_sorted(a: Vec<(f64, f64)>, b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if b.is_empty() {
        return a;
    }
    if a.is_empty() {
        return b.to_vec();
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.total_cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn to_dist(pairs: Vec<(f64, f64)>) -> DiscreteDist {
    let (atoms, probs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    DiscreteDist::from_raw(atoms, probs)
}

/// Per-(state, horizon) and per-(state, action, horizon) return
/// distributions of a policy in a model MDP.
#[derive(Debug, Clone)]
pub struct ReturnDistributionModel {
    /// The model's own horizon (may exceed the data horizon when learned
    /// with an override).
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub mode: AtomMode,
    /// `state[h-1][s]` for `h ∈ 1..=horizon+1`.
    pub(crate) state: Vec<Vec<DiscreteDist>>,
    /// `state_action[h-1][s·A + a]` for `h ∈ 1..=horizon`.
    pub(crate) state_action: Vec<Vec<DiscreteDist>>,
}

impl ReturnDistributionModel {
    /// Distribution of returns from state `s` with steps `h..=horizon`.
    pub fn state_dist(&self, s: usize, h: usize) -> &DiscreteDist {
        &self.state[h - 1][s]
    }

    pub fn state_action_dist(&self, s: usize, a: usize, h: usize) -> &DiscreteDist {
        &self.state_action[h - 1][s * self.n_actions + a]
    }

    /// `F̄_{s}^{(h)}(u)`.
    pub fn state_cdf(&self, s: usize, h: usize, u: f64) -> f64 {
        self.state_dist(s, h).cdf(u)
    }

    /// `F̄_{s,a}^{(h)}(u)`.
    pub fn state_action_cdf(&self, s: usize, a: usize, h: usize, u: f64) -> f64 {
        self.state_action_dist(s, a, h).cdf(u)
    }

    /// JSON Lines dump of per-(state, horizon) distributions.
    pub fn dump_json_lines(&self) -> String {
        let mut out = String::new();
        for h in 1..=self.horizon + 1 {
            for s in 0..self.n_states {
                let d = self.state_dist(s, h);
                let rec = serde_json::json!({
                    "s": s,
                    "h": h,
                    "atoms": d.atoms(),
                    "p": d.probs(),
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Runs the backward CDF Bellman recursion for `pi` in `mdp`.
pub fn compute_return_model(
    mdp: &TabularMdp,
    pi: &Policy,
    mode: AtomMode,
) -> Result<ReturnDistributionModel, ModelError> {
    let grid = match mode {
        AtomMode::Exact => {
            if mdp.gamma != 1.0 {
                return Err(ModelError::IncompatibleAtomMode(mdp.gamma));
            }
            None
        }
        AtomMode::Projected { n_atoms } => Some(UniformGrid::for_mdp(mdp, n_atoms)),
    };
    let h_max = mdp.horizon;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut state: Vec<Vec<DiscreteDist>> = vec![Vec::new(); h_max + 1];
    let mut state_action: Vec<Vec<DiscreteDist>> = vec![Vec::new(); h_max];
    state[h_max] = (0..ns).map(|_| DiscreteDist::point(0.0)).collect();

    for h in (1..=h_max).rev() {
        let next_level = std::mem::take(&mut state[h]);
        let mut sa_level = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                // Mixture over successors, then convolution with rewards.
                let mut mix: Vec<(f64, f64)> = Vec::new();
                for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        let scaled: Vec<(f64, f64)> = next_level[sn]
                            .atoms()
                            .iter()
                            .zip(next_level[sn].probs())
                            .map(|(&x, &q)| (x, p * q))
                            .collect();
                        mix = merge_sorted(mix, &scaled);
                    }
                }
                let rd = mdp.reward_dist(s, a);
                let mut conv: Vec<(f64, f64)> = Vec::new();
                for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                    if pr > 0.0 {
                        let shifted: Vec<(f64, f64)> = mix
                            .iter()
                            .map(|&(x, q)| (r + mdp.gamma * x, pr * q))
                            .collect();
                        conv = merge_sorted(conv, &shifted);
                    }
                }
                let dist = to_dist(conv);
                let dist = match &grid {
                    Some(g) => {
                        let slack = g.step * (h_max + 1) as f64;
                        project_with_slack(&dist, g, slack)?
                    }
                    None => dist,
                };
                sa_level.push(dist);
            }
        }
        let mut s_level = Vec::with_capacity(ns);
        for s in 0..ns {
            let mut mix: Vec<(f64, f64)> = Vec::new();
            for a in 0..na {
                let p = pi.prob(s, a);
                if p > 0.0 {
                    let d = &sa_level[s * na + a];
                    let scaled: Vec<(f64, f64)> = d
                        .atoms()
                        .iter()
                        .zip(d.probs())
                        .map(|(&x, &q)| (x, p * q))
                        .collect();
                    mix = merge_sorted(mix, &scaled);
                }
            }
            s_level.push(to_dist(mix));
        }
        state_action[h - 1] = sa_level;
        state[h - 1] = s_level;
        state[h] = next_level;
    }

    Ok(ReturnDistributionModel {
        horizon: h_max,
        n_states: ns,
        n_actions: na,
        mode,
        state,
        state_action,
    })
}

/// Exact ground-truth CDF of returns: runs the recursion on the true MDP
/// and averages the horizon-1 state distributions under the start
/// distribution. Exact atoms for γ = 1, a 1024-atom projection otherwise.
pub fn true_cdf(mdp: &TabularMdp, pi: &Policy) -> Result<ValidCdf, ModelError> {
    let mode = if mdp.gamma == 1.0 {
        AtomMode::Exact
    } else {
        AtomMode::Projected { n_atoms: 1024 }
    };
    let model = compute_return_model(mdp, pi, mode)?;
    let mut masses: Vec<(f64, f64)> = Vec::new();
    for (s, &mu) in mdp.start_dist().iter().enumerate() {
        if mu > 0.0 {
            let d = model.state_dist(s, 1);
            masses.extend(d.atoms().iter().zip(d.probs()).map(|(&x, &p)| (x, mu * p)));
        }
    }
    Ok(ValidCdf::from_masses(masses).expect("start mixture has positive mass"))
}

/// Empirical MDP learned from a dataset, with visit diagnostics.
#[derive(Debug, Clone)]
pub struct LearnedMdp {
    pub mdp: TabularMdp,
    /// Visit counts per (s, a), row-major.
    pub visit_counts: Vec<u64>,
    /// (s, a) pairs never observed; these fall back to a uniform transition
    /// and zero reward.
    pub unvisited: Vec<(usize, usize)>,
}

/// Learns transition and reward frequencies pooled across horizons.
///
/// `horizon_override` sets the learned model's horizon (e.g. the
/// imperfect-horizon convention of modeling an `H`-step problem as
/// `H + 1`); it defaults to the data horizon.
pub fn learn_mdp(
    data: &Dataset,
    n_states: usize,
    n_actions: usize,
    horizon_override: Option<usize>,
) -> LearnedMdp {
    assert!(!data.is_empty(), "cannot learn a model from an empty dataset");
    let mut visit = vec![0u64; n_states * n_actions];
    let mut trans = vec![0u64; n_states * n_actions * n_states];
    let mut rewards: Vec<std::collections::BTreeMap<u64, u64>> =
        vec![std::collections::BTreeMap::new(); n_states * n_actions];
    let mut starts = vec![0u64; n_states];
    for t in &data.trajectories {
        starts[t.states[0]] += 1;
        for h in 0..t.horizon() {
            let (s, a, sn) = (t.states[h], t.actions[h], t.states[h + 1]);
            let idx = s * n_actions + a;
            visit[idx] += 1;
            trans[idx * n_states + sn] += 1;
            *rewards[idx].entry(t.rewards[h].to_bits()).or_insert(0) += 1;
        }
    }
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);
    let mut unvisited = Vec::new();
    for s in 0..n_states {
        for a in 0..n_actions {
            let idx = s * n_actions + a;
            let row = &mut transition[idx * n_states..][..n_states];
            if visit[idx] == 0 {
                unvisited.push((s, a));
                row.fill(1.0 / n_states as f64);
                reward.push(DiscreteDist::point(0.0));
                continue;
            }
            let total = visit[idx] as f64;
            for sn in 0..n_states {
                row[sn] = trans[idx * n_states + sn] as f64 / total;
            }
            let mut pairs: Vec<(f64, f64)> = rewards[idx]
                .iter()
                .map(|(&bits, &c)| (f64::from_bits(bits), c as f64 / total))
                .collect();
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let (atoms, probs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            reward.push(DiscreteDist::from_raw(atoms, probs));
        }
    }
    let n = data.len() as f64;
    let start_dist: Vec<f64> = starts.iter().map(|&c| c as f64 / n).collect();
    let mdp = TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        data.gamma,
        start_dist,
        horizon_override.unwrap_or(data.horizon),
    )
    .expect("learned model satisfies MDP invariants");
    LearnedMdp {
        mdp,
        visit_counts: visit,
        unvisited,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::mdp::sample_dataset;

    #[test]
    fn terminal_level_is_point_mass_at_zero() {
        let mdp = envs::build_random_mdp(3, 2, 2, 3, 1.0, 5);
        let pi = envs::random_policy(3, 2, 6);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        for s in 0..3 {
            let d = model.state_dist(s, mdp.horizon + 1);
            assert_eq!(d.atoms(), &[0.0]);
            assert_eq!(d.probs(), &[1.0]);
        }
    }

    #[test]
    fn toy_chain_exact_return_distribution() {
        let mdp = envs::build_toy_chain();
        let pi = crate::mdp::Policy::uniform(4, 1);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        let d = model.state_dist(0, 1);
        assert_eq!(d.atoms(), &[0.0, 1.0]);
        assert!((d.probs()[0] - 0.5).abs() < 1e-15);
        assert!((d.probs()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn toy_bandit_deterministic_target() {
        let mdp = envs::build_toy_bandit();
        let pi = crate::mdp::Policy::deterministic(2, 2, &[1, 0]);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        let sa = model.state_action_dist(0, 1, 1);
        assert_eq!(sa.atoms(), &[1.0]);
        assert_eq!(model.state_dist(0, 1), sa);
    }

    #[test]
    fn exact_mode_requires_unit_gamma() {
        let mdp = envs::build_random_mdp(2, 2, 2, 2, 0.9, 3);
        let pi = envs::random_policy(2, 2, 4);
        assert!(matches!(
            compute_return_model(&mdp, &pi, AtomMode::Exact),
            Err(ModelError::IncompatibleAtomMode(_))
        ));
        assert!(compute_return_model(&mdp, &pi, AtomMode::Projected { n_atoms: 256 }).is_ok());
    }

    #[test]
    fn masses_sum_to_one_on_every_level() {
        let mdp = envs::build_random_mdp(4, 3, 2, 4, 1.0, 9);
        let pi = envs::random_policy(4, 3, 10);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        for h in 1..=mdp.horizon + 1 {
            for s in 0..4 {
                let total = model.state_dist(s, h).total_mass();
                assert!((total - 1.0).abs() < 1e-10, "h={h} s={s} total={total}");
            }
        }
    }

    #[test]
    fn cdf_bellman_fixed_point() {
        // F_s(t) = E_{pi,R,P}[F_{S'}((t - R)/gamma)], probed away from the
        // atoms so float reconstruction of (t - r) cannot straddle a jump.
        let mdp = envs::build_random_mdp(4, 2, 2, 4, 1.0, 11);
        let pi = envs::random_policy(4, 2, 12);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        for h in 1..=mdp.horizon {
            for s in 0..mdp.n_states {
                let dist = model.state_dist(s, h);
                let atoms = dist.atoms();
                let mut probes = vec![atoms[0] - 0.5, atoms[atoms.len() - 1] + 0.5];
                // skip midpoints of near-coincident atoms (same real sum
                // reached along different addition orders, one ulp apart)
                probes.extend(
                    atoms
                        .windows(2)
                        .filter(|w| w[1] - w[0] > 1e-6)
                        .map(|w| (w[0] + w[1]) / 2.0),
                );
                for t in probes {
                    let lhs = model.state_cdf(s, h, t);
                    let mut rhs = 0.0;
                    for a in 0..mdp.n_actions {
                        let pa = pi.prob(s, a);
                        if pa == 0.0 {
                            continue;
                        }
                        let rd = mdp.reward_dist(s, a);
                        for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                            for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                                if p > 0.0 {
                                    rhs += pa
                                        * pr
                                        * p
                                        * model.state_cdf(sn, h + 1, (t - r) / mdp.gamma);
                                }
                            }
                        }
                    }
                    assert!((lhs - rhs).abs() < 1e-10, "h={h} s={s} t={t} lhs={lhs} rhs={rhs}");
                }
            }
        }
    }

    /// Brute-force enumeration of the return distribution from a state.
    fn enumerate_returns(
        mdp: &TabularMdp,
        pi: &crate::mdp::Policy,
        s: usize,
        h: usize,
        z: f64,
        disc: f64,
        prob: f64,
        out: &mut Vec<(f64, f64)>,
    ) {
        if h > mdp.horizon {
            out.push((z, prob));
            return;
        }
        for a in 0..mdp.n_actions {
            let pa = pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let rd = mdp.reward_dist(s, a);
            for (&r, &pr) in rd.atoms().iter().zip(rd.probs()) {
                for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        enumerate_returns(
                            mdp,
                            pi,
                            sn,
                            h + 1,
                            z + disc * r,
                            disc * mdp.gamma,
                            prob * pa * pr * p,
                            out,
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn recursion_moments_match_trajectory_enumeration() {
        let mdp = envs::build_random_mdp(3, 2, 2, 3, 1.0, 21);
        let pi = envs::random_policy(3, 2, 22);
        let model = compute_return_model(&mdp, &pi, AtomMode::Exact).unwrap();
        for s in 0..mdp.n_states {
            let mut paths = Vec::new();
            enumerate_returns(&mdp, &pi, s, 1, 0.0, 1.0, 1.0, &mut paths);
            let m1: f64 = paths.iter().map(|(z, p)| z * p).sum();
            let m2: f64 = paths.iter().map(|(z, p)| z * z * p).sum();
            let d = model.state_dist(s, 1);
            let dm1 = d.mean();
            let dm2: f64 = d.atoms().iter().zip(d.probs()).map(|(a, p)| a * a * p).sum();
            assert!((m1 - dm1).abs() < 1e-10);
            assert!((m2 - dm2).abs() < 1e-10);
        }
    }

    #[test]
    fn true_cdf_matches_monte_carlo() {
        let mdp = envs::build_random_mdp(4, 2, 2, 4, 1.0, 31);
        let pi = envs::random_policy(4, 2, 32);
        let cdf = true_cdf(&mdp, &pi).unwrap();
        let data = sample_dataset(&mdp, &pi, 1_000_000, 77, "random");
        let points: Vec<(f64, f64)> = data
            .trajectories
            .iter()
            .map(|t| (t.total_return(), 1.0))
            .collect();
        let emp = crate::stepfn::StepFunction::from_weighted_samples(
            &points,
            points.len() as f64,
            crate::stepfn::Tail::Le,
        )
        .unwrap();
        let d = cdf.as_step().sup_norm_distance(&emp);
        assert!(d < 0.005, "sup-norm {d}");
    }

    #[test]
    fn projection_splits_and_preserves_mass() {
        let grid = UniformGrid::new(0.0, 4.0, 5);
        let d = DiscreteDist::new(vec![0.5], vec![1.0]).unwrap();
        let p = project_distribution(&d, &grid).unwrap();
        assert_eq!(p.atoms(), &[0.0, 1.0]);
        assert!((p.probs()[0] - 0.5).abs() < 1e-15);
        assert!((p.probs()[1] - 0.5).abs() < 1e-15);
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
        // on-grid atoms pass through unchanged
        let d2 = DiscreteDist::new(vec![1.0, 3.0], vec![0.25, 0.75]).unwrap();
        let p2 = project_distribution(&d2, &grid).unwrap();
        assert_eq!(p2.atoms(), d2.atoms());
        assert_eq!(p2.probs(), d2.probs());
        // out-of-grid atoms error
        let d3 = DiscreteDist::new(vec![5.0], vec![1.0]).unwrap();
        assert!(matches!(
            project_distribution(&d3, &grid),
            Err(ModelError::SupportOutsideGrid { .. })
        ));
    }

    #[test]
    fn projection_preserves_mean_of_interior_atoms() {
        let grid = UniformGrid::new(-2.0, 2.0, 9);
        let d = DiscreteDist::new(vec![-1.3, 0.1, 1.7], vec![0.2, 0.5, 0.3]).unwrap();
        let p = project_distribution(&d, &grid).unwrap();
        assert!((p.mean() - d.mean()).abs() < 1e-12);
    }

    #[test]
    fn learned_model_recovers_deterministic_truth() {
        let mdp = envs::build_toy_bandit();
        let beta = crate::mdp::Policy::uniform(2, 2);
        let data = sample_dataset(&mdp, &beta, 200, 17, "toy_bandit");
        let learned = learn_mdp(&data, 2, 2, None);
        // only the terminal state (never acted from within H = 1) is unvisited
        assert!(learned.unvisited.iter().all(|&(s, _)| s == 1));
        for a in 0..2 {
            assert_eq!(learned.mdp.transition_row(0, a), mdp.transition_row(0, a));
            assert_eq!(learned.mdp.reward_dist(0, a), mdp.reward_dist(0, a));
        }
    }

    #[test]
    fn learned_transitions_concentrate() {
        let mdp = envs::build_toy_chain();
        let beta = crate::mdp::Policy::uniform(4, 1);
        let data = sample_dataset(&mdp, &beta, 100_000, 19, "toy_chain");
        let learned = learn_mdp(&data, 4, 1, None);
        let p = learned.mdp.transition_prob(0, 0, 1);
        assert!((p - 0.5).abs() < 0.005, "p = {p}");
    }

    #[test]
    fn unvisited_pairs_get_uniform_fallback() {
        let mdp = envs::build_toy_bandit();
        let beta = crate::mdp::Policy::deterministic(2, 2, &[0, 0]);
        let data = sample_dataset(&mdp, &beta, 10, 23, "toy_bandit");
        let learned = learn_mdp(&data, 2, 2, None);
        assert!(learned.unvisited.contains(&(0, 1)));
        let row = learned.mdp.transition_row(0, 1);
        assert!(row.iter().all(|p| (*p - 0.5).abs() < 1e-15));
        assert_eq!(learned.mdp.reward_dist(0, 1).atoms(), &[0.0]);
    }

    #[test]
    fn horizon_override_extends_model() {
        let mdp = envs::build_toy_chain();
        let beta = crate::mdp::Policy::uniform(4, 1);
        let data = sample_dataset(&mdp, &beta, 50, 29, "toy_chain");
        let learned = learn_mdp(&data, 4, 1, Some(3));
        assert_eq!(learned.mdp.horizon, 3);
        let pi = beta.clone();
        let model = compute_return_model(&learned.mdp, &pi, AtomMode::Exact).unwrap();
        assert_eq!(model.horizon, 3);
        // levels 1..=4 exist
        let _ = model.state_dist(0, 4);
    }
}
