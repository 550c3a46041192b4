//! Stage-wise equilibrium verification.
//!
//! At each true state `s` the game becomes a one-shot game with `2n`
//! players. Agent player `i` picks a tuple assigning one action to every
//! perceived state in `P^i_s`; adversary player `n + i` picks a perceived
//! state from `P^i_s`. Agent `i` is paid its one-step-plus-continuation
//! return under its own robust value function `v^{i*}`, and adversary
//! `n + i` is paid the negation of that.
//!
//! A policy pair that is a stage-wise equilibrium at every state is a
//! robust total Nash equilibrium; the converse is not claimed, so the
//! verdicts here are a sufficient check only.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Result, SamgError};
use crate::eval::{q_from_v, QTable, ValueTable};
use crate::model::{cartesian, SamgModel};
use crate::policy::{AdversaryPolicy, AgentPolicy};
use crate::robust::{robust_fixed_point_from, ReducedGame};

/// Cap on an agent player's stage action count `|A^i|^{|P^i_s|}`.
pub const STAGE_ACTION_LIMIT: u128 = 4096;

/// Cap on the number of profiles a scan visits.
pub const SCAN_LIMIT: u128 = 10_000_000;

pub const DEFAULT_VERIFY_EPS: f64 = 1e-6;
pub const DEFAULT_SCAN_EPS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct StageGame {
    pub state: usize,
    n_agents: usize,
    /// `perceived[i]` is `P^i_s`.
    pub perceived: Vec<Vec<usize>>,
    n_actions: Vec<usize>,
    /// `q[i][joint]` is `r(s, a) + gamma sum_s' p(s'|s, a) v^{i*}(s')`.
    q: Vec<Vec<f64>>,
    pub robust_values: Vec<ValueTable>,
}

/// One mixed strategy per player: agents first, then adversaries.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    pub strategies: Vec<Vec<f64>>,
}

impl StageGame {
    /// Builds the stage game at `s`, computing each agent's robust value
    /// function against the others' parts of `(pi, chi)`.
    pub fn build(
        m: &SamgModel,
        s: usize,
        pi: &AgentPolicy,
        chi: &AdversaryPolicy,
        tol: f64,
    ) -> Result<Self> {
        let values = robust_values(m, pi, chi, tol)?;
        Self::with_values(m, s, values)
    }

    /// Builds the stage game from precomputed robust value functions.
    pub fn with_values(m: &SamgModel, s: usize, robust_values: Vec<ValueTable>) -> Result<Self> {
        let q = robust_values.iter().map(|v| q_from_v(m, v)).collect::<Vec<_>>();
        Self::from_q(m, s, &q, robust_values)
    }

    fn from_q(m: &SamgModel, s: usize, q: &[QTable], robust_values: Vec<ValueTable>) -> Result<Self> {
        for i in 0..m.n_agents() {
            let size = (m.n_actions(i) as u128)
                .checked_pow(m.perturbation_set(i, s).len() as u32)
                .unwrap_or(u128::MAX);
            if size > STAGE_ACTION_LIMIT {
                return Err(SamgError::SizeGuard {
                    what: format!("stage action set of agent {} at {}", i + 1, m.states[s]),
                    size,
                    limit: STAGE_ACTION_LIMIT,
                });
            }
        }
        let q = q.iter().map(|t| t.row(s).to_vec()).collect();
        Ok(Self {
            state: s,
            n_agents: m.n_agents(),
            perceived: (0..m.n_agents())
                .map(|i| m.perturbation_set(i, s).to_vec())
                .collect(),
            n_actions: (0..m.n_agents()).map(|i| m.n_actions(i)).collect(),
            q,
            robust_values,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_players(&self) -> usize {
        2 * self.n_agents
    }

    /// Number of pure stage actions of `player`.
    pub fn n_player_actions(&self, player: usize) -> usize {
        if player < self.n_agents {
            self.n_actions[player].pow(self.perceived[player].len() as u32)
        } else {
            self.perceived[player - self.n_agents].len()
        }
    }

    /// The action tuple of agent player `i`'s pure stage action `b`: entry
    /// `k` is the action played when shown `perceived[i][k]`. The first
    /// perceived state varies slowest.
    pub fn decode_agent_action(&self, agent: usize, mut b: usize) -> Vec<usize> {
        let k = self.n_actions[agent];
        let mut out = vec![0; self.perceived[agent].len()];
        for slot in out.iter_mut().rev() {
            *slot = b % k;
            b /= k;
        }
        out
    }

    /// Behavioral strategy of agent `i` implied by a mixed stage strategy:
    /// `pi^i(a | rho_k) = sum over tuples b with b_k = a of sigma(b)`.
    pub fn marginals(&self, agent: usize, sigma: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_actions[agent]]; self.perceived[agent].len()];
        for (b, &w) in sigma.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (k, a) in self.decode_agent_action(agent, b).into_iter().enumerate() {
                out[k][a] += w;
            }
        }
        out
    }

    /// Action distribution agent `i` ends up playing under the profile.
    fn played(&self, agent: usize, profile: &StrategyProfile) -> Vec<f64> {
        let behavior = self.marginals(agent, &profile.strategies[agent]);
        let shown = &profile.strategies[self.n_agents + agent];
        let mut out = vec![0.0; self.n_actions[agent]];
        for (dist, &w) in behavior.iter().zip(shown) {
            for (o, p) in out.iter_mut().zip(dist) {
                *o += w * p;
            }
        }
        out
    }

    fn played_all(&self, profile: &StrategyProfile) -> Vec<Vec<f64>> {
        (0..self.n_agents).map(|j| self.played(j, profile)).collect()
    }

    /// `sum_a prod_j played[j][a^j] q[agent][a]`, agent 0 most significant.
    fn return_under(&self, agent: usize, played: &[Vec<f64>]) -> f64 {
        fn rec(q: &[f64], played: &[Vec<f64>], weight: f64) -> f64 {
            let Some((first, rest)) = played.split_first() else {
                return weight * q[0];
            };
            let stride = q.len() / first.len();
            first
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p != 0.0)
                .map(|(a, &p)| rec(&q[a * stride..(a + 1) * stride], rest, weight * p))
                .sum()
        }
        rec(&self.q[agent], played, 1.0)
    }

    /// Agent `i`'s stage return `f^i_s` under the profile.
    pub fn agent_return(&self, agent: usize, profile: &StrategyProfile) -> f64 {
        self.return_under(agent, &self.played_all(profile))
    }

    /// Payoffs of every pure action of `player` against the rest of the
    /// profile.
    fn pure_payoffs(&self, player: usize, profile: &StrategyProfile, played: &[Vec<f64>]) -> Vec<f64> {
        let mut probe = played.to_vec();
        if player < self.n_agents {
            let i = player;
            let k = self.n_actions[i];
            let shown = &profile.strategies[self.n_agents + i];
            (0..self.n_player_actions(i))
                .map(|b| {
                    probe[i].iter_mut().for_each(|x| *x = 0.0);
                    let mut rest = b;
                    for &w in shown.iter().rev() {
                        probe[i][rest % k] += w;
                        rest /= k;
                    }
                    self.return_under(i, &probe)
                })
                .collect()
        } else {
            let i = player - self.n_agents;
            self.marginals(i, &profile.strategies[i])
                .into_iter()
                .map(|dist| {
                    probe[i] = dist;
                    -self.return_under(i, &probe)
                })
                .collect()
        }
    }

    /// `u^player_s(sigma)`.
    pub fn utility(&self, player: usize, profile: &StrategyProfile) -> f64 {
        if player < self.n_agents {
            self.agent_return(player, profile)
        } else {
            -self.agent_return(player - self.n_agents, profile)
        }
    }

    /// Embeds `(pi, chi)` at this state: agent strategies are product
    /// distributions over action tuples, adversary strategies are
    /// `chi^i(. | s)` restricted to `P^i_s`.
    pub fn embed(&self, pi: &AgentPolicy, chi: &AdversaryPolicy) -> StrategyProfile {
        let mut strategies = Vec::with_capacity(self.n_players());
        for i in 0..self.n_agents {
            let sigma = (0..self.n_player_actions(i))
                .map(|b| {
                    self.decode_agent_action(i, b)
                        .iter()
                        .zip(&self.perceived[i])
                        .map(|(&a, &rho)| pi.row(i, rho)[a])
                        .product()
                })
                .collect();
            strategies.push(sigma);
        }
        for i in 0..self.n_agents {
            strategies.push(
                self.perceived[i]
                    .iter()
                    .map(|&rho| chi.row(i, self.state)[rho])
                    .collect(),
            );
        }
        StrategyProfile { strategies }
    }
}

/// Robust value function `v^{i*}` for every agent.
pub fn robust_values(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    tol: f64,
) -> Result<Vec<ValueTable>> {
    (0..m.n_agents())
        .map(|i| {
            let game = ReducedGame::new(m, i, pi, chi)?;
            Ok(robust_fixed_point_from(&game, tol, ValueTable::constant(m.n_states(), 0.0))?.values)
        })
        .collect()
}

pub fn build_stage_game(
    m: &SamgModel,
    s: usize,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    tol: f64,
) -> Result<StageGame> {
    StageGame::build(m, s, pi, chi, tol)
}

/// Best pure response of `player` to the rest of `profile`; ties go to
/// the lowest action index.
pub fn stage_best_response(game: &StageGame, player: usize, profile: &StrategyProfile) -> (f64, usize) {
    let played = game.played_all(profile);
    best_of(&game.pure_payoffs(player, profile, &played))
}

fn best_of(payoffs: &[f64]) -> (f64, usize) {
    let mut best: Option<(f64, usize)> = None;
    for (b, &u) in payoffs.iter().enumerate() {
        match best {
            Some((v, _)) if u <= v + 1e-12 * (1.0 + v.abs()) => {}
            _ => best = Some((u, b)),
        }
    }
    best.unwrap_or((f64::NEG_INFINITY, 0))
}

/// Per-player gain from the best unilateral pure deviation.
pub fn stage_exploitability(game: &StageGame, profile: &StrategyProfile) -> Vec<f64> {
    let played = game.played_all(profile);
    (0..game.n_players())
        .map(|p| {
            let current = if p < game.n_agents {
                game.return_under(p, &played)
            } else {
                -game.return_under(p - game.n_agents, &played)
            };
            best_of(&game.pure_payoffs(p, profile, &played)).0 - current
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVerdict {
    pub state: usize,
    /// Agents first, then adversaries.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashVerdict {
    pub states: Vec<StateVerdict>,
    pub max_gap: f64,
    pub eps: f64,
    /// Stage-wise equilibrium within `eps` at every state, which is
    /// sufficient (not necessary) for a robust total Nash equilibrium.
    pub satisfied: bool,
}

fn verdict_from_values(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    values: &[ValueTable],
    q: &[QTable],
    eps: f64,
) -> Result<NashVerdict> {
    let mut states = Vec::with_capacity(m.n_states());
    for s in 0..m.n_states() {
        let game = StageGame::from_q(m, s, q, values.to_vec())?;
        let gaps = stage_exploitability(&game, &game.embed(pi, chi));
        let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        states.push(StateVerdict {
            state: s,
            gaps,
            max_gap,
            satisfied: max_gap <= eps,
        });
    }
    let max_gap = states.iter().map(|v| v.max_gap).fold(f64::NEG_INFINITY, f64::max);
    Ok(NashVerdict {
        satisfied: states.iter().all(|v| v.satisfied),
        states,
        max_gap,
        eps,
    })
}

pub fn robust_nash_verify(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    eps: f64,
    tol: f64,
) -> Result<NashVerdict> {
    pi.ensure_valid(m)?;
    chi.ensure_valid(m)?;
    let values = robust_values(m, pi, chi, tol)?;
    let q: Vec<QTable> = values.iter().map(|v| q_from_v(m, v)).collect();
    verdict_from_values(m, pi, chi, &values, &q, eps)
}

/// Points of the probability simplex over `k` coordinates whose entries are
/// multiples of `1 / (resolution - 1)`, in lexicographic order.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<f64>> {
    let steps = resolution.saturating_sub(1).max(1);
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(k: usize, left: usize, steps: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if current.len() + 1 == k {
            current.push(left);
            out.push(current.iter().map(|&c| c as f64 / steps as f64).collect());
            current.pop();
            return;
        }
        for c in (0..=left).rev() {
            current.push(c);
            rec(k, left - c, steps, current, out);
            current.pop();
        }
    }
    rec(k, steps, steps, &mut current, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub resolution: usize,
    pub eps: f64,
    /// Smallest max-over-states gap across the grid.
    pub min_gap: f64,
    pub witness_pi: AgentPolicy,
    pub witness_chi: AdversaryPolicy,
    pub witness_index: usize,
    pub profiles: usize,
}

impl ScanResult {
    /// A positive minimum is evidence of non-existence at this resolution,
    /// never a proof.
    pub fn evidence(&self) -> &'static str {
        if self.min_gap > self.eps {
            "no grid profile is a stage-wise equilibrium at every state (evidence at this resolution)"
        } else {
            "a grid profile is a stage-wise equilibrium at every state within eps"
        }
    }
}

/// Profiles are indexed in mixed radix: the agent-policy blocks (one per
/// agent, covering every perceived-state row) come first, then one
/// adversary block per agent.
struct ProfileGrid {
    n_agents: usize,
    /// `agent_block[i][d]` is agent `i`'s full policy table for block digit `d`.
    agent_block: Vec<Vec<Vec<Vec<f64>>>>,
    adversary_block: Vec<Vec<Vec<Vec<f64>>>>,
    radices: Vec<usize>,
}

impl ProfileGrid {
    fn new(m: &SamgModel, resolution: usize) -> Result<Self> {
        let n = m.n_states();
        let mut agent_block = Vec::new();
        let mut adversary_block = Vec::new();
        let mut radices = Vec::new();
        for i in 0..m.n_agents() {
            let grid = simplex_grid(m.n_actions(i), resolution);
            let idx: Vec<usize> = (0..grid.len()).collect();
            let choices = cartesian(&vec![idx.as_slice(); n]);
            radices.push(choices.len());
            agent_block.push(
                choices
                    .into_iter()
                    .map(|c| c.into_iter().map(|k| grid[k].clone()).collect())
                    .collect(),
            );
        }
        for i in 0..m.n_agents() {
            let options: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|s| {
                    let set = m.perturbation_set(i, s);
                    let mut rows: Vec<Vec<f64>> = set
                        .iter()
                        .map(|&rho| (0..n).map(|x| if x == rho { 1.0 } else { 0.0 }).collect())
                        .collect();
                    if set.len() > 1 {
                        rows.push(
                            (0..n)
                                .map(|x| if set.contains(&x) { 1.0 / set.len() as f64 } else { 0.0 })
                                .collect(),
                        );
                    }
                    rows
                })
                .collect();
            let sizes: Vec<Vec<usize>> = options.iter().map(|o| (0..o.len()).collect()).collect();
            let refs: Vec<&[usize]> = sizes.iter().map(Vec::as_slice).collect();
            let choices = cartesian(&refs);
            radices.push(choices.len());
            adversary_block.push(
                choices
                    .into_iter()
                    .map(|c| c.into_iter().enumerate().map(|(s, k)| options[s][k].clone()).collect())
                    .collect(),
            );
        }
        let total: u128 = radices.iter().map(|&r| r as u128).product();
        if total > SCAN_LIMIT {
            return Err(SamgError::SizeGuard {
                what: "equilibrium scan grid".into(),
                size: total,
                limit: SCAN_LIMIT,
            });
        }
        Ok(Self {
            n_agents: m.n_agents(),
            agent_block,
            adversary_block,
            radices,
        })
    }

    fn total(&self) -> usize {
        self.radices.iter().product()
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for (d, &r) in out.iter_mut().zip(&self.radices).rev() {
            *d = idx % r;
            idx /= r;
        }
        out
    }

    fn policies(&self, digits: &[usize]) -> (AgentPolicy, AdversaryPolicy) {
        let n = self.n_agents;
        let pi = AgentPolicy {
            probs: (0..n).map(|i| self.agent_block[i][digits[i]].clone()).collect(),
        };
        let chi = AdversaryPolicy {
            probs: (0..n)
                .map(|i| self.adversary_block[i][digits[n + i]].clone())
                .collect(),
        };
        (pi, chi)
    }

    /// Key for agent `i`'s robust value: every block except agent `i`'s own
    /// policy and adversary blocks.
    fn value_key(&self, agent: usize, digits: &[usize]) -> usize {
        let n = self.n_agents;
        digits
            .iter()
            .zip(&self.radices)
            .enumerate()
            .filter(|&(b, _)| b != agent && b != n + agent)
            .fold(0, |acc, (_, (&d, &r))| acc * r + d)
    }
}

/// Evaluates the stage-wise equilibrium gap of every grid profile and
/// returns the smallest max-over-states gap (ties to the lowest grid index).
pub fn nonexistence_scan(m: &SamgModel, resolution: usize, eps: f64, tol: f64) -> Result<ScanResult> {
    if resolution < 2 {
        return Err(SamgError::InvalidArgument(
            "grid resolution must be at least 2".into(),
        ));
    }
    m.ensure_valid()?;
    let grid = ProfileGrid::new(m, resolution)?;
    let n = m.n_agents();

    // v^{i*} only depends on the other agents' and adversaries' blocks.
    let mut cache: Vec<Vec<(ValueTable, QTable)>> = Vec::with_capacity(n);
    for i in 0..n {
        let own = grid.radices[i] * grid.radices[n + i];
        let keys = grid.total() / own;
        let mut reduced_radices = grid.radices.clone();
        reduced_radices[i] = 1;
        reduced_radices[n + i] = 1;
        let values = (0..keys)
            .into_par_iter()
            .map(|key| {
                let mut digits = vec![0; grid.radices.len()];
                let mut rest = key;
                for (d, &r) in digits.iter_mut().zip(&reduced_radices).rev() {
                    *d = rest % r;
                    rest /= r;
                }
                let (pi, chi) = grid.policies(&digits);
                let game = ReducedGame::new(m, i, &pi, &chi)?;
                let v = robust_fixed_point_from(&game, tol, ValueTable::constant(m.n_states(), 0.0))?.values;
                let q = q_from_v(m, &v);
                Ok((v, q))
            })
            .collect::<Result<Vec<_>>>()?;
        cache.push(values);
    }

    let best = (0..grid.total())
        .into_par_iter()
        .map(|idx| -> Result<(f64, usize)> {
            let digits = grid.digits(idx);
            let (pi, chi) = grid.policies(&digits);
            let (values, q): (Vec<ValueTable>, Vec<QTable>) = (0..n)
                .map(|i| cache[i][grid.value_key(i, &digits)].clone())
                .unzip();
            let verdict = verdict_from_values(m, &pi, &chi, &values, &q, eps)?;
            Ok((verdict.max_gap, idx))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                Ok(match a.0.partial_cmp(&b.0) {
                    Some(Ordering::Less) => a,
                    Some(Ordering::Greater) => b,
                    _ => {
                        if a.1 <= b.1 {
                            a
                        } else {
                            b
                        }
                    }
                })
            },
        )?;
    let (witness_pi, witness_chi) = grid.policies(&grid.digits(best.1));
    Ok(ScanResult {
        resolution,
        eps,
        min_gap: best.0,
        witness_pi,
        witness_chi,
        witness_index: best.1,
        profiles: grid.total(),
    })
}
