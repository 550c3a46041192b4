//! Optimal adversaries for a fixed agent policy.
//!
//! With `pi` fixed, the adversaries jointly face an ordinary MDP whose
//! actions at `s` are the joint perturbations `P_s`, whose reward is the
//! negated expected agent reward and whose transitions are averaged over
//! the agents' responses. Its optimal value is `-V̄_pi`.

use rayon::prelude::*;

use crate::error::{Result, SamgError};
use crate::eval::{evaluate, ValueTable};
use crate::model::SamgModel;
use crate::policy::{AdversaryPolicy, AgentPolicy};

/// Cap on `|P_s|` per state for the adversary MDP.
pub const JOINT_PERTURBATION_LIMIT: u128 = 1_000_000;

/// Cap on the number of deterministic adversary policies to enumerate.
pub const ADVERSARY_ENUMERATION_LIMIT: u128 = 1_000_000;

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryMdp {
    pub n_states: usize,
    /// `actions[s]` is the lexicographic enumeration of `P_s`; each entry
    /// holds one perceived state per agent.
    pub actions: Vec<Vec<Vec<usize>>>,
    /// `reward[s][k]` for the `k`-th joint perturbation at `s`.
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][k]` is a distribution over next states.
    pub transition: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
}

pub fn build_adversary_mdp(m: &SamgModel, pi: &AgentPolicy) -> Result<AdversaryMdp> {
    pi.check_dims(m)?;
    let n = m.n_states();
    let mut mdp = AdversaryMdp {
        n_states: n,
        actions: Vec::with_capacity(n),
        reward: Vec::with_capacity(n),
        transition: Vec::with_capacity(n),
        gamma: m.gamma,
    };
    for s in 0..n {
        let count = m.joint_perturbation_count(s);
        if count > JOINT_PERTURBATION_LIMIT {
            return Err(SamgError::SizeGuard {
                what: format!("joint perturbation set at {}", m.states[s]),
                size: count,
                limit: JOINT_PERTURBATION_LIMIT,
            });
        }
        let actions = m.joint_perturbations(s);
        let mut rewards = Vec::with_capacity(actions.len());
        let mut rows = Vec::with_capacity(actions.len());
        for rho in &actions {
            let per_agent: Vec<Vec<f64>> = rho
                .iter()
                .enumerate()
                .map(|(i, &r)| pi.row(i, r).to_vec())
                .collect();
            let mu = m.product_distribution(&per_agent);
            let mut reward = 0.0;
            let mut row = vec![0.0; n];
            for (a, &w) in mu.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                reward -= w * m.reward(s, a);
                for (o, &p) in row.iter_mut().zip(m.transition_row(s, a)) {
                    *o += w * p;
                }
            }
            rewards.push(reward);
            rows.push(row);
        }
        mdp.actions.push(actions);
        mdp.reward.push(rewards);
        mdp.transition.push(rows);
    }
    Ok(mdp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    pub values: ValueTable,
    /// Index into `AdversaryMdp::actions[s]` of the greedy action.
    pub greedy: Vec<usize>,
    pub iterations: usize,
    /// Final max-norm change between sweeps.
    pub residual: f64,
}

impl AdversaryMdp {
    fn backup(&self, v: &[f64], s: usize) -> impl Iterator<Item = f64> + '_ {
        let gamma = self.gamma;
        let cont: Vec<f64> = self.transition[s]
            .iter()
            .map(|row| row.iter().zip(v).map(|(p, x)| p * x).sum())
            .collect();
        self.reward[s]
            .iter()
            .zip(cont)
            .map(move |(r, c)| r + gamma * c)
    }

    /// Greedy action per state, ties to the lowest index.
    pub fn greedy(&self, v: &[f64]) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| argmax_first(&self.backup(v, s).collect::<Vec<_>>()))
            .collect()
    }
}

/// Index of the maximum, preferring the lowest index among values that tie
/// up to floating-point noise.
pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let best = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + best.abs());
    xs.iter().position(|&x| x >= best - slack).unwrap_or(0)
}

pub(crate) fn argmin_first(xs: &[f64]) -> usize {
    let best = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * (1.0 + best.abs());
    xs.iter().position(|&x| x <= best + slack).unwrap_or(0)
}

/// Value iteration (synchronous sweeps) until the max-norm change drops to
/// `tol (1 - gamma) / (2 gamma)`, which makes the greedy policy
/// `tol`-optimal.
pub fn solve_mdp(mdp: &AdversaryMdp, tol: f64) -> MdpSolution {
    solve_mdp_from(mdp, tol, vec![0.0; mdp.n_states])
}

pub(crate) fn solve_mdp_from(mdp: &AdversaryMdp, tol: f64, mut v: Vec<f64>) -> MdpSolution {
    let threshold = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma);
    let mut iterations = 0;
    let mut residual;
    loop {
        let next: Vec<f64> = (0..mdp.n_states)
            .map(|s| mdp.backup(&v, s).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if residual <= threshold {
            break;
        }
    }
    MdpSolution {
        greedy: mdp.greedy(&v),
        values: ValueTable(v),
        iterations,
        residual,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAdversary {
    /// `V̄_pi`, the agents' value under the worst-case adversary.
    pub worst_case: ValueTable,
    /// Deterministic and factored per agent.
    pub adversary: AdversaryPolicy,
    pub iterations: usize,
}

pub fn optimal_adversary(m: &SamgModel, pi: &AgentPolicy, tol: f64) -> Result<OptimalAdversary> {
    optimal_adversary_from(m, pi, tol, None)
}

/// Warm-started variant: `start` is a previous `V̄` estimate.
pub(crate) fn optimal_adversary_from(
    m: &SamgModel,
    pi: &AgentPolicy,
    tol: f64,
    start: Option<&ValueTable>,
) -> Result<OptimalAdversary> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SamgError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mdp = build_adversary_mdp(m, pi)?;
    let v0 = match start {
        Some(v) => v.0.iter().map(|x| -x).collect(),
        None => vec![0.0; m.n_states()],
    };
    let sol = solve_mdp_from(&mdp, tol, v0);
    let choice: Vec<Vec<usize>> = (0..m.n_agents())
        .map(|i| {
            (0..m.n_states())
                .map(|s| mdp.actions[s][sol.greedy[s]][i])
                .collect()
        })
        .collect();
    Ok(OptimalAdversary {
        worst_case: ValueTable(sol.values.0.iter().map(|x| 0.0 - x).collect()),
        adversary: AdversaryPolicy::deterministic(m, &choice),
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryEnumeration {
    /// For each state, the minimum of `V_{pi,chi}(s)` over all
    /// deterministic `chi`.
    pub pointwise_min: ValueTable,
    /// A deterministic adversary attaining every pointwise minimum at once
    /// (within 1e-9), if one exists.
    pub witness: Option<AdversaryPolicy>,
    pub count: usize,
}

/// Brute force over every deterministic adversary policy.
pub fn enumerate_deterministic_adversaries(
    m: &SamgModel,
    pi: &AgentPolicy,
) -> Result<AdversaryEnumeration> {
    let slots: Vec<(usize, usize)> = (0..m.n_agents())
        .flat_map(|i| (0..m.n_states()).map(move |s| (i, s)))
        .collect();
    let total: u128 = slots
        .iter()
        .map(|&(i, s)| m.perturbation_set(i, s).len() as u128)
        .product();
    if total > ADVERSARY_ENUMERATION_LIMIT {
        return Err(SamgError::SizeGuard {
            what: "deterministic adversary policies".into(),
            size: total,
            limit: ADVERSARY_ENUMERATION_LIMIT,
        });
    }
    let decode = |mut idx: usize| -> AdversaryPolicy {
        let mut choice = vec![vec![0; m.n_states()]; m.n_agents()];
        for &(i, s) in slots.iter().rev() {
            let set = m.perturbation_set(i, s);
            choice[i][s] = set[idx % set.len()];
            idx /= set.len();
        }
        AdversaryPolicy::deterministic(m, &choice)
    };
    let values = (0..total as usize)
        .into_par_iter()
        .map(|k| evaluate(m, pi, &decode(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut min = vec![f64::INFINITY; m.n_states()];
    for v in &values {
        for (lo, x) in min.iter_mut().zip(&v.0) {
            *lo = lo.min(*x);
        }
    }
    let witness = values
        .iter()
        .position(|v| v.0.iter().zip(&min).all(|(x, lo)| x - lo <= 1e-9))
        .map(decode);
    Ok(AdversaryEnumeration {
        pointwise_min: ValueTable(min),
        witness,
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_game, random_game};

    fn fig4() -> SamgModel {
        builtin_game("fig4").unwrap()
    }

    fn always_differ(m: &SamgModel) -> AgentPolicy {
        AgentPolicy::deterministic(m, &[vec![0, 0], vec![1, 1]])
    }

    fn coordination(m: &SamgModel) -> AgentPolicy {
        AgentPolicy::deterministic(m, &[vec![0, 0], vec![0, 1]])
    }

    #[test]
    fn fig4_always_differ_rewards() {
        let m = fig4();
        let mdp = build_adversary_mdp(&m, &always_differ(&m)).unwrap();
        // (s1,s1) is the first joint perturbation and (s2,s2) the last
        assert_eq!(mdp.actions[0][0], vec![0, 0]);
        assert_eq!(mdp.actions[0][3], vec![1, 1]);
        assert_eq!(mdp.reward[0][0], 0.0);
        assert_eq!(mdp.reward[0][3], 0.0);
        assert_eq!(mdp.reward[1][0], -1.0);
    }

    #[test]
    fn constant_reward_uniform_policy() {
        let mut m = random_game(8, 2, 3, 2, 2).unwrap();
        m.reward.iter_mut().for_each(|r| *r = 0.25);
        let mdp = build_adversary_mdp(&m, &AgentPolicy::uniform(&m)).unwrap();
        for rs in &mdp.reward {
            assert!(rs.iter().all(|&r| (r + 0.25).abs() < 1e-15));
        }
        for rows in &mdp.transition {
            for row in rows {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_sets_give_single_action() {
        let m = random_game(2, 2, 3, 2, 1).unwrap();
        let pi = AgentPolicy::uniform(&m);
        let mdp = build_adversary_mdp(&m, &pi).unwrap();
        assert!(mdp.actions.iter().all(|a| a.len() == 1));
        let sol = solve_mdp(&mdp, 1e-10);
        let v = evaluate(&m, &pi, &AdversaryPolicy::identity(&m)).unwrap();
        for s in 0..3 {
            assert!((sol.values[s] + v[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_negative_reward_mdp() {
        let mdp = AdversaryMdp {
            n_states: 2,
            actions: vec![vec![vec![0], vec![1]], vec![vec![1]]],
            reward: vec![vec![-1.0, -1.0], vec![-1.0]],
            transition: vec![vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            gamma: 0.9,
        };
        let sol = solve_mdp(&mdp, 1e-9);
        for s in 0..2 {
            assert!((sol.values[s] + 10.0).abs() < 1e-9);
        }
        assert_eq!(sol.greedy[0], 0);
    }

    #[test]
    fn fig4_worst_case_values() {
        let m = fig4();
        let res = optimal_adversary(&m, &always_differ(&m), DEFAULT_TOL).unwrap();
        assert!(res.worst_case[0].abs() < 1e-6);
        assert!((res.worst_case[1] - 100.0).abs() < 1e-6);

        let res = optimal_adversary(&m, &coordination(&m), DEFAULT_TOL).unwrap();
        assert!(res.worst_case.0.iter().all(|v| v.abs() < 1e-6));

        let res = optimal_adversary(&m, &AgentPolicy::uniform(&m), DEFAULT_TOL).unwrap();
        assert!(res.worst_case.0.iter().all(|v| (v - 50.0).abs() < 1e-6));
    }

    #[test]
    fn adversary_value_matches_evaluation() {
        for seed in 0..5 {
            let m = random_game(seed, 2, 3, 2, 2).unwrap();
            let pi = AgentPolicy::from_fn(&m, |_, rho, a| if (rho + a) % 2 == 0 { 0.7 } else { 0.3 });
            let tol = 1e-8;
            let res = optimal_adversary(&m, &pi, tol).unwrap();
            let v = evaluate(&m, &pi, &res.adversary).unwrap();
            assert!(v.distance(&res.worst_case) <= 10.0 * tol);
            assert!(res.adversary.validate(&m).is_empty());
        }
    }

    #[test]
    fn enumeration_agrees_with_adversary_mdp() {
        let m = fig4();
        let e = enumerate_deterministic_adversaries(&m, &always_differ(&m)).unwrap();
        assert_eq!(e.count, 16);
        assert!(e.pointwise_min[0].abs() < 1e-9);
        assert!((e.pointwise_min[1] - 100.0).abs() < 1e-9);

        let m = random_game(3, 2, 3, 2, 2).unwrap();
        let pi = AgentPolicy::uniform(&m);
        let e = enumerate_deterministic_adversaries(&m, &pi).unwrap();
        let res = optimal_adversary(&m, &pi, DEFAULT_TOL).unwrap();
        assert!(e.pointwise_min.distance(&res.worst_case) < 1e-6);
        assert!(e.witness.is_some());
    }

    #[test]
    fn single_adversary_when_unperturbed() {
        let m = random_game(6, 2, 3, 2, 1).unwrap();
        let pi = AgentPolicy::uniform(&m);
        let e = enumerate_deterministic_adversaries(&m, &pi).unwrap();
        assert_eq!(e.count, 1);
        let v = evaluate(&m, &pi, &AdversaryPolicy::identity(&m)).unwrap();
        assert_eq!(e.pointwise_min, v);
    }

    #[test]
    fn enlarging_a_set_never_helps_the_agents() {
        let base = random_game(12, 2, 3, 2, 1).unwrap();
        let pi = AgentPolicy::from_fn(&base, |i, rho, a| if (i + rho + a) % 2 == 0 { 0.9 } else { 0.1 });
        let before = optimal_adversary(&base, &pi, 1e-10).unwrap().worst_case;
        for i in 0..2 {
            for s in 0..3 {
                let mut m = base.clone();
                let extra = (s + 1) % 3;
                m.perturbation[i][s].push(extra);
                m.perturbation[i][s].sort_unstable();
                let after = optimal_adversary(&m, &pi, 1e-10).unwrap().worst_case;
                for k in 0..3 {
                    assert!(after[k] <= before[k] + 1e-8);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_tolerance() {
        let m = fig4();
        assert!(optimal_adversary(&m, &always_differ(&m), 0.0).is_err());
    }
}
