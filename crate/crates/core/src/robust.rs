//! Robust state values for one agent with the other agents and adversaries
//! held fixed.
//!
//! At true state `s`, agent `i` picks an action distribution for every
//! perceived state in `P^i_s` and adversary `i` picks which one to show.
//! The stage payoff is linear in the adversary's choice, so its minimum sits
//! at a single perceived state, and each perceived state's action
//! distribution only affects that state's term. Hence
//! `max_pi min_chi f = min_rho max_a g(rho, a)`, with pure maximizers.

use crate::adversary::{argmax_first, argmin_first};
use crate::error::{Result, SamgError};
use crate::eval::ValueTable;
use crate::model::SamgModel;
use crate::policy::{played_distribution, AdversaryPolicy, AgentPolicy};

/// Payoff table for one stage problem: `g[k][a]` is the payoff to agent `i`
/// when adversary `i` shows `perceived[k]` and agent `i` plays action `a`,
/// averaging over the other agents and adversaries.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePayoff {
    pub perceived: Vec<usize>,
    pub g: Vec<Vec<f64>>,
}

/// Agent `i`'s view of the game once everyone else is fixed: for each true
/// state and own action, the expected reward and next-state distribution.
#[derive(Debug, Clone)]
pub struct ReducedGame {
    pub agent: usize,
    pub gamma: f64,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `perceived[s]` is `P^i_s`.
    pub perceived: Vec<Vec<usize>>,
}

impl ReducedGame {
    /// Marginalizes the model over every agent except `agent`, whose own
    /// entries in `pi` and `chi` are ignored.
    pub fn new(
        m: &SamgModel,
        agent: usize,
        pi: &AgentPolicy,
        chi: &AdversaryPolicy,
    ) -> Result<Self> {
        if agent >= m.n_agents() {
            return Err(SamgError::InvalidArgument(format!(
                "agent index {agent} out of range"
            )));
        }
        pi.check_dims(m)?;
        chi.check_dims(m)?;
        let n = m.n_states();
        let n_own = m.n_actions(agent);
        let mut reward = vec![vec![0.0; n_own]; n];
        let mut transition = vec![vec![vec![0.0; n]; n_own]; n];
        for s in 0..n {
            let others: Vec<Vec<f64>> = (0..m.n_agents())
                .map(|j| {
                    if j == agent {
                        vec![1.0; n_own]
                    } else {
                        played_distribution(pi, chi, j, s)
                    }
                })
                .collect();
            let weights = m.product_distribution(&others);
            for (joint, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let own = m.decode_joint(joint)[agent];
                reward[s][own] += w * m.reward(s, joint);
                for (o, &p) in transition[s][own].iter_mut().zip(m.transition_row(s, joint)) {
                    *o += w * p;
                }
            }
        }
        Ok(Self {
            agent,
            gamma: m.gamma,
            reward,
            transition,
            perceived: (0..n).map(|s| m.perturbation_set(agent, s).to_vec()).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    /// Stage payoff table at `s` for continuation values `v`. Agent `i`'s
    /// payoff does not depend on which perceived state it was shown, only on
    /// the action it ends up playing, so every row is the same.
    pub fn stage_payoff(&self, s: usize, v: &ValueTable) -> StagePayoff {
        let row: Vec<f64> = self.reward[s]
            .iter()
            .zip(&self.transition[s])
            .map(|(r, p)| r + self.gamma * p.iter().zip(&v.0).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        StagePayoff {
            perceived: self.perceived[s].clone(),
            g: vec![row; self.perceived[s].len()],
        }
    }
}

/// Solution of one stage maximin problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub value: f64,
    /// `agent[k]` is the (pure) action distribution for `perceived[k]`.
    pub agent: Vec<Vec<f64>>,
    /// Distribution over the perceived states, aligned with `perceived`.
    pub adversary: Vec<f64>,
    pub perceived: Vec<usize>,
}

/// `min_k max_a g[k][a]` with the per-row argmax (lowest index on ties)
/// and the argmin row (lowest index on ties).
pub fn maximin_of_table(g: &[Vec<f64>]) -> (f64, Vec<usize>, usize) {
    let best: Vec<usize> = g.iter().map(|row| argmax_first(row)).collect();
    let row_values: Vec<f64> = g.iter().zip(&best).map(|(row, &a)| row[a]).collect();
    let worst = argmin_first(&row_values);
    (row_values[worst], best, worst)
}

pub fn solve_stage(payoff: &StagePayoff) -> StageSolution {
    let (value, best, worst) = maximin_of_table(&payoff.g);
    let n_actions = payoff.g.first().map_or(0, Vec::len);
    let agent = best
        .iter()
        .map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    let adversary = (0..payoff.perceived.len())
        .map(|k| if k == worst { 1.0 } else { 0.0 })
        .collect();
    StageSolution {
        value,
        agent,
        adversary,
        perceived: payoff.perceived.clone(),
    }
}

/// The per-state maximin `psi_s(v)` for agent `i` (entries of `pi` and
/// `chi` belonging to agent `i` are ignored).
pub fn stage_maximin(
    m: &SamgModel,
    agent: usize,
    s: usize,
    v: &ValueTable,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
) -> Result<StageSolution> {
    let game = ReducedGame::new(m, agent, pi, chi)?;
    Ok(solve_stage(&game.stage_payoff(s, v)))
}

/// One synchronous sweep of the robust value operator.
pub fn robust_operator(game: &ReducedGame, v: &ValueTable) -> ValueTable {
    ValueTable(
        (0..game.n_states())
            .map(|s| solve_stage(&game.stage_payoff(s, v)).value)
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub values: ValueTable,
    /// Greedy stage strategies at the fixed point, one per true state. The
    /// agent part is indexed by position in `P^i_s`; strategies for the same
    /// perceived state may differ between true states.
    pub stages: Vec<StageSolution>,
    /// The adversary's greedy choices as a policy slice `chi^i(. | s)`,
    /// dense over all states.
    pub adversary: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates the robust operator from `v0` until the max-norm change drops
/// to `tol (1 - gamma) / (2 gamma)`.
pub fn robust_fixed_point_from(game: &ReducedGame, tol: f64, v0: ValueTable) -> Result<RobustSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SamgError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let threshold = tol * (1.0 - game.gamma) / (2.0 * game.gamma);
    let mut v = v0;
    let mut iterations = 0;
    let residual = loop {
        let next = robust_operator(game, &v);
        let delta = next.distance(&v);
        v = next;
        iterations += 1;
        if delta <= threshold {
            break delta;
        }
    };
    let stages: Vec<StageSolution> = (0..game.n_states())
        .map(|s| solve_stage(&game.stage_payoff(s, &v)))
        .collect();
    let n = game.n_states();
    let adversary = stages
        .iter()
        .map(|st| {
            let mut row = vec![0.0; n];
            for (&rho, &p) in st.perceived.iter().zip(&st.adversary) {
                row[rho] = p;
            }
            row
        })
        .collect();
    Ok(RobustSolution {
        values: v,
        stages,
        adversary,
        iterations,
        residual,
    })
}

/// Robust state value function of agent `i` given everyone else, iterated
/// from zero.
pub fn robust_fixed_point(
    m: &SamgModel,
    agent: usize,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    tol: f64,
) -> Result<RobustSolution> {
    let game = ReducedGame::new(m, agent, pi, chi)?;
    robust_fixed_point_from(&game, tol, ValueTable::constant(m.n_states(), 0.0))
}
