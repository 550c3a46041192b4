//! Agent and adversary policies, plus their text format.
//!
//! Policy files use the same lexical rules as model files:
//!
//! ```text
//! policy agent 1 s1 a1 1.0      # pi^1(a1 | perceived s1)
//! adversary 1 s1 s2 1.0         # chi^1(s2 | true s1)
//! ```
//!
//! Rows that a file never mentions default to uniform (over `A^i` for agent
//! rows, over `P^i_s` for adversary rows); omitted entries of a mentioned
//! row are zero.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Result, SamgError, Violation};
use crate::model::format::{normalize, parse_count, parse_number, semantic, syntax, tokenize, Token};
use crate::model::{format_float, probability_problem, SamgModel};

/// `probs[i][rho][a] = pi^i(a | rho)` for every perceived state `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

/// `probs[i][s][rho] = chi^i(rho | s)`, dense over all states; entries
/// outside `P^i_s` must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl AgentPolicy {
    pub fn uniform(m: &SamgModel) -> Self {
        Self::from_fn(m, |i, _, _| 1.0 / m.n_actions(i) as f64)
    }

    pub fn from_fn(m: &SamgModel, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let probs = (0..m.n_agents())
            .map(|i| {
                (0..m.n_states())
                    .map(|rho| (0..m.n_actions(i)).map(|a| f(i, rho, a)).collect())
                    .collect()
            })
            .collect();
        Self { probs }
    }

    /// `choice[i][rho]` is the action agent `i` plays when it perceives `rho`.
    pub fn deterministic(m: &SamgModel, choice: &[Vec<usize>]) -> Self {
        Self::from_fn(m, |i, rho, a| if choice[i][rho] == a { 1.0 } else { 0.0 })
    }

    pub fn row(&self, agent: usize, rho: usize) -> &[f64] {
        &self.probs[agent][rho]
    }

    /// Convex combination `(1 - w) * self + w * other`.
    pub fn mix(&self, other: &Self, w: f64) -> Self {
        Self {
            probs: mix3(&self.probs, &other.probs, w),
        }
    }

    pub fn check_dims(&self, m: &SamgModel) -> Result<()> {
        let ok = self.probs.len() == m.n_agents()
            && self.probs.iter().enumerate().all(|(i, rows)| {
                rows.len() == m.n_states() && rows.iter().all(|r| r.len() == m.n_actions(i))
            });
        if ok {
            Ok(())
        } else {
            Err(SamgError::Dimension(
                "agent policy must have one action distribution per agent and state".into(),
            ))
        }
    }

    pub fn validate(&self, m: &SamgModel) -> Vec<Violation> {
        if let Err(e) = self.check_dims(m) {
            return vec![Violation::new("policy", e.to_string())];
        }
        let mut out = Vec::new();
        for (i, rows) in self.probs.iter().enumerate() {
            for (rho, row) in rows.iter().enumerate() {
                if let Some(msg) = probability_problem(row) {
                    out.push(Violation::new(
                        "policy",
                        format!("pi^{}(. | {}) {msg}", i + 1, m.states[rho]),
                    ));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self, m: &SamgModel) -> Result<()> {
        let v = self.validate(m);
        if v.is_empty() {
            Ok(())
        } else {
            Err(SamgError::InvalidPolicy(v))
        }
    }
}

impl AdversaryPolicy {
    /// No perturbation: every adversary reveals the true state.
    pub fn identity(m: &SamgModel) -> Self {
        Self::from_fn(m, |_, s, rho| if s == rho { 1.0 } else { 0.0 })
    }

    /// Uniform over each admissible set.
    pub fn uniform(m: &SamgModel) -> Self {
        Self::from_fn(m, |i, s, rho| {
            let set = m.perturbation_set(i, s);
            if set.contains(&rho) {
                1.0 / set.len() as f64
            } else {
                0.0
            }
        })
    }

    pub fn from_fn(m: &SamgModel, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let n = m.n_states();
        let probs = (0..m.n_agents())
            .map(|i| {
                (0..n)
                    .map(|s| (0..n).map(|rho| f(i, s, rho)).collect())
                    .collect()
            })
            .collect();
        Self { probs }
    }

    /// `choice[i][s]` is the state adversary `i` shows at true state `s`.
    pub fn deterministic(m: &SamgModel, choice: &[Vec<usize>]) -> Self {
        Self::from_fn(m, |i, s, rho| if choice[i][s] == rho { 1.0 } else { 0.0 })
    }

    pub fn row(&self, agent: usize, s: usize) -> &[f64] {
        &self.probs[agent][s]
    }

    pub fn mix(&self, other: &Self, w: f64) -> Self {
        Self {
            probs: mix3(&self.probs, &other.probs, w),
        }
    }

    pub fn check_dims(&self, m: &SamgModel) -> Result<()> {
        let n = m.n_states();
        let ok = self.probs.len() == m.n_agents()
            && self
                .probs
                .iter()
                .all(|rows| rows.len() == n && rows.iter().all(|r| r.len() == n));
        if ok {
            Ok(())
        } else {
            Err(SamgError::Dimension(
                "adversary policy must have one state distribution per agent and state".into(),
            ))
        }
    }

    pub fn validate(&self, m: &SamgModel) -> Vec<Violation> {
        if let Err(e) = self.check_dims(m) {
            return vec![Violation::new("adversary", e.to_string())];
        }
        let mut out = Vec::new();
        for (i, rows) in self.probs.iter().enumerate() {
            for (s, row) in rows.iter().enumerate() {
                if let Some(msg) = probability_problem(row) {
                    out.push(Violation::new(
                        "adversary",
                        format!("chi^{}(. | {}) {msg}", i + 1, m.states[s]),
                    ));
                }
                let set = m.perturbation_set(i, s);
                for (rho, &p) in row.iter().enumerate() {
                    if p != 0.0 && !set.contains(&rho) {
                        out.push(Violation::new(
                            "adversary",
                            format!(
                                "chi^{}({} | {}) = {p} outside P^{}_{{{}}}",
                                i + 1,
                                m.states[rho],
                                m.states[s],
                                i + 1,
                                m.states[s]
                            ),
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self, m: &SamgModel) -> Result<()> {
        let v = self.validate(m);
        if v.is_empty() {
            Ok(())
        } else {
            Err(SamgError::InvalidPolicy(v))
        }
    }
}

fn mix3(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>], w: f64) -> Vec<Vec<Vec<f64>>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(r, q)| r.iter().zip(q).map(|(p, q)| (1.0 - w) * p + w * q).collect())
                .collect()
        })
        .collect()
}

/// Action distribution agent `i` actually plays at true state `s`:
/// `sum_rho chi^i(rho | s) pi^i(. | rho)`.
pub fn played_distribution(
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    agent: usize,
    s: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; pi.probs[agent][0].len()];
    for (rho, &w) in chi.row(agent, s).iter().enumerate() {
        if w != 0.0 {
            for (o, &p) in out.iter_mut().zip(pi.row(agent, rho)) {
                *o += w * p;
            }
        }
    }
    out
}

/// Contents of a policy file: either half may be absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyFile {
    pub agent: Option<AgentPolicy>,
    pub adversary: Option<AdversaryPolicy>,
}

fn agent_index(m: &SamgModel, line: usize, tok: &Token<'_>) -> Result<usize> {
    let i = parse_count(line, tok)?;
    if i == 0 || i > m.n_agents() {
        return Err(semantic(
            line,
            format!("agent index {i} out of range 1..={}", m.n_agents()),
        ));
    }
    Ok(i - 1)
}

pub fn parse_policy_file(m: &SamgModel, text: &str) -> Result<PolicyFile> {
    let state = |line: usize, text: &str| {
        m.state_index(text)
            .ok_or_else(|| semantic(line, format!("unknown state `{text}`")))
    };

    let mut pi = AgentPolicy::from_fn(m, |_, _, _| 0.0);
    let mut chi = AdversaryPolicy::from_fn(m, |_, _, _| 0.0);
    let mut pi_rows = HashSet::new();
    let mut chi_rows = HashSet::new();
    let mut pi_seen = HashSet::new();
    let mut chi_seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = tokenize(raw);
        let Some(head) = toks.first() else { continue };
        match head.text {
            "policy" => {
                if toks.len() != 6 || toks[1].text != "agent" {
                    return Err(syntax(
                        line,
                        head.column,
                        "expected `policy agent <i> <rho> <action> <prob>`",
                    ));
                }
                let i = agent_index(m, line, &toks[2])?;
                let rho = state(line, toks[3].text)?;
                let a = m.action_index(i, toks[4].text).ok_or_else(|| {
                    semantic(line, format!("unknown action `{}` for agent {}", toks[4].text, i + 1))
                })?;
                let p = parse_number(line, &toks[5])?;
                if !pi_seen.insert((i, rho, a)) {
                    return Err(semantic(line, "duplicate policy entry"));
                }
                pi_rows.insert((i, rho));
                pi.probs[i][rho][a] = p;
            }
            "adversary" => {
                if toks.len() != 5 {
                    return Err(syntax(
                        line,
                        head.column,
                        "expected `adversary <i> <s> <rho> <prob>`",
                    ));
                }
                let i = agent_index(m, line, &toks[1])?;
                let s = state(line, toks[2].text)?;
                let rho = state(line, toks[3].text)?;
                let p = parse_number(line, &toks[4])?;
                if !chi_seen.insert((i, s, rho)) {
                    return Err(semantic(line, "duplicate adversary entry"));
                }
                chi_rows.insert((i, s));
                chi.probs[i][s][rho] = p;
            }
            other => {
                return Err(syntax(
                    line,
                    head.column,
                    format!("unknown directive `{other}`"),
                ))
            }
        }
    }

    let mut out = PolicyFile::default();
    if !pi_rows.is_empty() {
        let uniform = AgentPolicy::uniform(m);
        for i in 0..m.n_agents() {
            for rho in 0..m.n_states() {
                if !pi_rows.contains(&(i, rho)) {
                    pi.probs[i][rho] = uniform.probs[i][rho].clone();
                } else if probability_problem(&pi.probs[i][rho]).is_none() {
                    normalize(&mut pi.probs[i][rho]);
                }
            }
        }
        pi.ensure_valid(m)?;
        out.agent = Some(pi);
    }
    if !chi_rows.is_empty() {
        let uniform = AdversaryPolicy::uniform(m);
        for i in 0..m.n_agents() {
            for s in 0..m.n_states() {
                if !chi_rows.contains(&(i, s)) {
                    chi.probs[i][s] = uniform.probs[i][s].clone();
                } else if probability_problem(&chi.probs[i][s]).is_none() {
                    normalize(&mut chi.probs[i][s]);
                }
            }
        }
        chi.ensure_valid(m)?;
        out.adversary = Some(chi);
    }
    Ok(out)
}

/// Writes the nonzero entries of whichever policies are given.
pub fn serialize_policies(
    m: &SamgModel,
    pi: Option<&AgentPolicy>,
    chi: Option<&AdversaryPolicy>,
) -> String {
    let mut out = String::new();
    if let Some(pi) = pi {
        for (i, rows) in pi.probs.iter().enumerate() {
            for (rho, row) in rows.iter().enumerate() {
                for (a, &p) in row.iter().enumerate() {
                    if p != 0.0 {
                        let _ = writeln!(
                            out,
                            "policy agent {} {} {} {}",
                            i + 1,
                            m.states[rho],
                            m.actions[i][a],
                            format_float(p)
                        );
                    }
                }
            }
        }
    }
    if let Some(chi) = chi {
        for (i, rows) in chi.probs.iter().enumerate() {
            for (s, row) in rows.iter().enumerate() {
                for (rho, &p) in row.iter().enumerate() {
                    if p != 0.0 {
                        let _ = writeln!(
                            out,
                            "adversary {} {} {} {}",
                            i + 1,
                            m.states[s],
                            m.states[rho],
                            format_float(p)
                        );
                    }
                }
            }
        }
    }
    out
}
