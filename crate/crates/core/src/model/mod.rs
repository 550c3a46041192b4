//! Finite state-adversarial Markov games.
//!
//! A [`SamgModel`] is a Markov game with a shared reward in which agent `i`
//! never sees the true state `s` directly: an adversary shows it some
//! `rho` drawn from the admissible set `P^i_s`, which always contains `s`.
//!
//! Joint actions are indexed in mixed radix with agent 0 most significant,
//! so for two agents with actions `{a1, a2}` the order is
//! `(a1,a1), (a1,a2), (a2,a1), (a2,a2)`.

mod builtin;
pub(crate) mod format;
mod random;

pub use builtin::{builtin_game, BUILTIN_GAMES};
pub use format::{format_float, parse_model, serialize_model};
pub use random::random_game;

use crate::error::{Result, SamgError, Violation};

/// Tolerance for probability vectors summing to one.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SamgModel {
    pub states: Vec<String>,
    /// Per-agent action identifiers; `actions.len()` is the number of agents.
    pub actions: Vec<Vec<String>>,
    pub gamma: f64,
    /// Dense `[s][joint action][s']`.
    pub transition: Vec<f64>,
    /// Dense `[s][joint action]`.
    pub reward: Vec<f64>,
    /// `perturbation[i][s]` lists the admissible perceived states for agent
    /// `i` at true state `s`, as state indices in ascending order.
    pub perturbation: Vec<Vec<Vec<usize>>>,
    pub initial: Vec<f64>,
}

impl SamgModel {
    /// A model with every transition and reward zeroed, no perturbation
    /// (`P^i_s = {s}`) and a uniform initial distribution. Callers fill in
    /// the transition table before use.
    pub fn empty(states: Vec<String>, actions: Vec<Vec<String>>, gamma: f64) -> Self {
        let n_states = states.len();
        let n_joint: usize = actions.iter().map(Vec::len).product();
        let perturbation = (0..actions.len())
            .map(|_| (0..n_states).map(|s| vec![s]).collect())
            .collect();
        Self {
            transition: vec![0.0; n_states * n_joint * n_states],
            reward: vec![0.0; n_states * n_joint],
            initial: vec![1.0 / n_states.max(1) as f64; n_states],
            states,
            actions,
            gamma,
            perturbation,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self, agent: usize) -> usize {
        self.actions[agent].len()
    }

    pub fn n_joint_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).product()
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s == id)
    }

    pub fn action_index(&self, agent: usize, id: &str) -> Option<usize> {
        self.actions.get(agent)?.iter().position(|a| a == id)
    }

    /// Decodes a joint action index into per-agent action indices.
    pub fn decode_joint(&self, mut joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for i in (0..self.n_agents()).rev() {
            let k = self.n_actions(i);
            out[i] = joint % k;
            joint /= k;
        }
        out
    }

    pub fn encode_joint(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.actions)
            .fold(0, |acc, (&a, ids)| acc * ids.len() + a)
    }

    pub fn transition_row(&self, s: usize, joint: usize) -> &[f64] {
        let n = self.n_states();
        let start = (s * self.n_joint_actions() + joint) * n;
        &self.transition[start..start + n]
    }

    pub fn transition_row_mut(&mut self, s: usize, joint: usize) -> &mut [f64] {
        let n = self.n_states();
        let start = (s * self.n_joint_actions() + joint) * n;
        &mut self.transition[start..start + n]
    }

    pub fn reward(&self, s: usize, joint: usize) -> f64 {
        self.reward[s * self.n_joint_actions() + joint]
    }

    pub fn set_reward(&mut self, s: usize, joint: usize, value: f64) {
        let k = self.n_joint_actions();
        self.reward[s * k + joint] = value;
    }

    pub fn perturbation_set(&self, agent: usize, s: usize) -> &[usize] {
        &self.perturbation[agent][s]
    }

    /// Largest absolute stage reward.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Bound on any discounted value: `R_max / (1 - gamma)`.
    pub fn value_bound(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma)
    }

    /// Number of joint perturbations `|P^1_s| * ... * |P^n_s|` at `s`.
    pub fn joint_perturbation_count(&self, s: usize) -> u128 {
        self.perturbation
            .iter()
            .map(|sets| sets[s].len() as u128)
            .product()
    }

    /// Enumerates `P_s = P^1_s x ... x P^n_s` lexicographically in the
    /// per-agent set order (agent 0 most significant).
    pub fn joint_perturbations(&self, s: usize) -> Vec<Vec<usize>> {
        let sets: Vec<&[usize]> = (0..self.n_agents())
            .map(|i| self.perturbation_set(i, s))
            .collect();
        cartesian(&sets)
    }

    /// Product distribution over joint actions from per-agent marginals.
    pub fn product_distribution(&self, per_agent: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![1.0];
        for dist in per_agent {
            let mut next = Vec::with_capacity(out.len() * dist.len());
            for &p in &out {
                next.extend(dist.iter().map(|&q| p * q));
            }
            out = next;
        }
        out
    }

    /// Checks every model invariant; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n_states();
        if n == 0 {
            out.push(Violation::new("states", "state list is empty"));
        }
        if self.actions.is_empty() {
            out.push(Violation::new("agents", "at least one agent is required"));
        }
        for (i, ids) in self.actions.iter().enumerate() {
            if ids.is_empty() {
                out.push(Violation::new(
                    "actions",
                    format!("agent {} has no actions", i + 1),
                ));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(Violation::new(
                "gamma",
                format!("gamma out of range: {} not in (0, 1)", self.gamma),
            ));
        }
        check_identifiers(&mut out, "states", &self.states);
        for ids in &self.actions {
            check_identifiers(&mut out, "actions", ids);
        }
        if !out.is_empty() {
            return out;
        }

        let k = self.n_joint_actions();
        if self.transition.len() != n * k * n || self.reward.len() != n * k {
            out.push(Violation::new(
                "transition",
                "table sizes do not match the declared states and actions",
            ));
            return out;
        }
        for s in 0..n {
            for a in 0..k {
                let row = self.transition_row(s, a);
                if let Some(msg) = probability_problem(row) {
                    out.push(Violation::new(
                        "transition",
                        format!("row ({}, {}) {msg}", self.states[s], self.joint_label(a)),
                    ));
                }
                let r = self.reward(s, a);
                if !r.is_finite() {
                    out.push(Violation::new(
                        "reward",
                        format!("reward ({}, {}) is not finite", self.states[s], self.joint_label(a)),
                    ));
                }
            }
        }
        if self.initial.len() != n {
            out.push(Violation::new("init", "initial distribution has wrong length"));
        } else if let Some(msg) = probability_problem(&self.initial) {
            out.push(Violation::new("init", format!("initial distribution {msg}")));
        }
        if self.perturbation.len() != self.n_agents() {
            out.push(Violation::new("perturb", "one perturbation table per agent is required"));
            return out;
        }
        for (i, sets) in self.perturbation.iter().enumerate() {
            if sets.len() != n {
                out.push(Violation::new(
                    "perturb",
                    format!("agent {} needs a perturbation set for every state", i + 1),
                ));
                continue;
            }
            for (s, set) in sets.iter().enumerate() {
                if let Some(&bad) = set.iter().find(|&&x| x >= n) {
                    out.push(Violation::new(
                        "perturb",
                        format!("P^{}_{} contains undeclared state index {bad}", i + 1, self.states[s]),
                    ));
                    continue;
                }
                if set.windows(2).any(|w| w[0] >= w[1]) {
                    out.push(Violation::new(
                        "perturb",
                        format!(
                            "P^{}_{{{}}} must list distinct states in declaration order",
                            i + 1,
                            self.states[s]
                        ),
                    ));
                }
                if !set.contains(&s) {
                    out.push(Violation::new(
                        "perturb",
                        format!(
                            "true state {} not in P^{}_{{{}}}",
                            self.states[s],
                            i + 1,
                            self.states[s]
                        ),
                    ));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SamgError::InvalidModel(violations))
        }
    }

    /// Human-readable joint action, e.g. `(a1,a2)`.
    pub fn joint_label(&self, joint: usize) -> String {
        let parts: Vec<&str> = self
            .decode_joint(joint)
            .iter()
            .enumerate()
            .map(|(i, &a)| self.actions[i][a].as_str())
            .collect();
        format!("({})", parts.join(","))
    }
}

/// Identifiers must survive the whitespace-separated text format.
fn check_identifiers(out: &mut Vec<Violation>, field: &'static str, ids: &[String]) {
    for (k, id) in ids.iter().enumerate() {
        if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == '#') {
            out.push(Violation::new(field, format!("identifier `{id}` is not a single token")));
        }
        if ids[..k].contains(id) {
            out.push(Violation::new(field, format!("duplicate identifier `{id}`")));
        }
    }
}

/// Returns a description of why `row` is not a probability vector.
pub(crate) fn probability_problem(row: &[f64]) -> Option<String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Some(format!("has invalid entry {p}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Some(format!("sums to {sum}, not 1"));
    }
    None
}

/// Lexicographic Cartesian product of index sets.
pub(crate) fn cartesian(sets: &[&[usize]]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(sets.len())];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for prefix in &out {
            for &x in set.iter() {
                let mut v = prefix.clone();
                v.push(x);
                next.push(v);
            }
        }
        out = next;
    }
    out
}
