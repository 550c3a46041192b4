//! Line-oriented text format for models.
//!
//! ```text
//! samg 1
//! agents 2
//! states s1 s2
//! actions 1 a1 a2
//! actions 2 a1 a2
//! gamma 0.99
//! transition s1 a1 a1 s2 1.0
//! reward s1 a1 a1 1.0
//! perturb 1 s1 s1 s2
//! init s1 0.5
//! init s2 0.5
//! ```
//!
//! `#` starts a comment. Omitted transition and reward entries are zero,
//! an omitted `perturb` line means `P^i_s = {s}`, and an omitted `init`
//! section means a uniform initial distribution.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::{SamgModel, PROB_TOL};
use crate::error::{Result, SamgError};

pub(crate) struct Token<'a> {
    pub text: &'a str,
    /// 1-based character column.
    pub column: usize,
}

/// Splits one line into whitespace-separated tokens, dropping comments.
pub(crate) fn tokenize(line: &str) -> Vec<Token<'_>> {
    let line = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((byte, col + 1)),
            (true, Some((b, c))) => {
                out.push(Token {
                    text: &line[b..byte],
                    column: c,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((b, c)) = start {
        out.push(Token {
            text: &line[b..],
            column: c,
        });
    }
    out
}

pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> SamgError {
    SamgError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

pub(crate) fn semantic(line: usize, message: impl Into<String>) -> SamgError {
    SamgError::Semantic {
        line: Some(line),
        message: message.into(),
    }
}

pub(crate) fn parse_number(line: usize, tok: &Token<'_>) -> Result<f64> {
    match tok.text.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(syntax(
            line,
            tok.column,
            format!("expected a decimal number, found `{}`", tok.text),
        )),
    }
}

pub(crate) fn parse_count(line: usize, tok: &Token<'_>) -> Result<usize> {
    tok.text.parse::<usize>().map_err(|_| {
        syntax(
            line,
            tok.column,
            format!("expected a non-negative integer, found `{}`", tok.text),
        )
    })
}

/// Probability entries that already sum to one up to accumulated rounding
/// are left untouched so that printing and reparsing is bit-exact; rows
/// further off (but within [`PROB_TOL`]) are divided by their sum.
pub(crate) fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 8.0 * f64::EPSILON * row.len() as f64 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
}

/// Formats a float with 17 significant digits, positional where that stays
/// readable. The output always parses back to the identical `f64`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..=16).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let out = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let (int, frac) = digits.split_at(exp as usize + 1);
        if frac.is_empty() {
            format!("{int}.0")
        } else {
            format!("{int}.{frac}")
        }
    };
    format!("{sign}{out}")
}

struct Builder {
    agents: Option<usize>,
    states: Option<Vec<String>>,
    actions: Vec<Option<Vec<String>>>,
    gamma: Option<f64>,
    transitions: Vec<(usize, usize, usize, usize, f64)>,
    rewards: Vec<(usize, usize, usize, f64)>,
    perturb: Vec<(usize, usize, usize, Vec<usize>)>,
    init: Vec<(usize, usize, f64)>,
}

impl Builder {
    fn states(&self, line: usize, tok: &Token<'_>) -> Result<&Vec<String>> {
        self.states
            .as_ref()
            .ok_or_else(|| syntax(line, tok.column, "`states` must be declared before use"))
    }

    fn state(&self, line: usize, tok: &Token<'_>) -> Result<usize> {
        self.states(line, tok)?
            .iter()
            .position(|s| s == tok.text)
            .ok_or_else(|| semantic(line, format!("unknown state `{}`", tok.text)))
    }

    fn agent(&self, line: usize, tok: &Token<'_>) -> Result<usize> {
        let n = self
            .agents
            .ok_or_else(|| syntax(line, tok.column, "`agents` must be declared before use"))?;
        let i = parse_count(line, tok)?;
        if i == 0 || i > n {
            return Err(semantic(line, format!("agent index {i} out of range 1..={n}")));
        }
        Ok(i - 1)
    }

    fn joint_action(&self, line: usize, toks: &[Token<'_>]) -> Result<usize> {
        let mut joint = 0;
        for (i, tok) in toks.iter().enumerate() {
            let ids = self.actions[i].as_ref().ok_or_else(|| {
                syntax(
                    line,
                    tok.column,
                    format!("actions of agent {} must be declared before use", i + 1),
                )
            })?;
            let a = ids.iter().position(|a| a == tok.text).ok_or_else(|| {
                semantic(line, format!("unknown action `{}` for agent {}", tok.text, i + 1))
            })?;
            joint = joint * ids.len() + a;
        }
        Ok(joint)
    }

    fn expect_args(&self, line: usize, toks: &[Token<'_>], n: usize) -> Result<()> {
        if toks.len() != n + 1 {
            let col = toks.get(n + 1).or(toks.last()).map_or(1, |t| t.column);
            return Err(syntax(
                line,
                col,
                format!("`{}` expects {n} arguments, found {}", toks[0].text, toks.len() - 1),
            ));
        }
        Ok(())
    }

    fn n_agents(&self, line: usize, tok: &Token<'_>) -> Result<usize> {
        self.agents
            .ok_or_else(|| syntax(line, tok.column, "`agents` must be declared before use"))
    }
}

fn unique_ids(line: usize, toks: &[Token<'_>], what: &str) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    for t in toks {
        if !seen.insert(t.text) {
            return Err(semantic(line, format!("duplicate {what} `{}`", t.text)));
        }
    }
    if toks.is_empty() {
        return Err(semantic(line, format!("at least one {what} is required")));
    }
    Ok(toks.iter().map(|t| t.text.to_string()).collect())
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<SamgModel> {
    let mut b = Builder {
        agents: None,
        states: None,
        actions: Vec::new(),
        gamma: None,
        transitions: Vec::new(),
        rewards: Vec::new(),
        perturb: Vec::new(),
        init: Vec::new(),
    };
    let mut header = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = tokenize(raw);
        let Some(head) = toks.first() else { continue };
        if !header {
            if head.text != "samg" {
                return Err(syntax(line, head.column, "expected header `samg 1`"));
            }
            b.expect_args(line, &toks, 1)?;
            if toks[1].text != "1" {
                return Err(syntax(
                    line,
                    toks[1].column,
                    format!("unsupported format version `{}`", toks[1].text),
                ));
            }
            header = true;
            continue;
        }
        match head.text {
            "agents" => {
                b.expect_args(line, &toks, 1)?;
                if b.agents.is_some() {
                    return Err(semantic(line, "`agents` declared twice"));
                }
                let n = parse_count(line, &toks[1])?;
                if n == 0 {
                    return Err(semantic(line, "at least one agent is required"));
                }
                b.agents = Some(n);
                b.actions = vec![None; n];
            }
            "states" => {
                if b.states.is_some() {
                    return Err(semantic(line, "`states` declared twice"));
                }
                b.states = Some(unique_ids(line, &toks[1..], "state")?);
            }
            "actions" => {
                if toks.len() < 2 {
                    return Err(syntax(line, head.column, "`actions` expects an agent index"));
                }
                let i = b.agent(line, &toks[1])?;
                if b.actions[i].is_some() {
                    return Err(semantic(line, format!("actions of agent {} declared twice", i + 1)));
                }
                b.actions[i] = Some(unique_ids(line, &toks[2..], "action")?);
            }
            "gamma" => {
                b.expect_args(line, &toks, 1)?;
                if b.gamma.is_some() {
                    return Err(semantic(line, "`gamma` declared twice"));
                }
                b.gamma = Some(parse_number(line, &toks[1])?);
            }
            "transition" => {
                let n = b.n_agents(line, head)?;
                b.expect_args(line, &toks, n + 3)?;
                let s = b.state(line, &toks[1])?;
                let a = b.joint_action(line, &toks[2..2 + n])?;
                let next = b.state(line, &toks[2 + n])?;
                let p = parse_number(line, &toks[3 + n])?;
                if p < 0.0 {
                    return Err(semantic(line, format!("negative probability {p}")));
                }
                b.transitions.push((line, s, a, next, p));
            }
            "reward" => {
                let n = b.n_agents(line, head)?;
                b.expect_args(line, &toks, n + 2)?;
                let s = b.state(line, &toks[1])?;
                let a = b.joint_action(line, &toks[2..2 + n])?;
                let r = parse_number(line, &toks[2 + n])?;
                b.rewards.push((line, s, a, r));
            }
            "perturb" => {
                if toks.len() < 4 {
                    return Err(syntax(
                        line,
                        head.column,
                        "`perturb` expects an agent, a state and at least one member",
                    ));
                }
                let i = b.agent(line, &toks[1])?;
                let s = b.state(line, &toks[2])?;
                let mut members = toks[3..]
                    .iter()
                    .map(|t| b.state(line, t))
                    .collect::<Result<Vec<_>>>()?;
                members.sort_unstable();
                if members.windows(2).any(|w| w[0] == w[1]) {
                    return Err(semantic(line, "duplicate member in perturbation set"));
                }
                b.perturb.push((line, i, s, members));
            }
            "init" => {
                b.expect_args(line, &toks, 2)?;
                let s = b.state(line, &toks[1])?;
                let p = parse_number(line, &toks[2])?;
                if p < 0.0 {
                    return Err(semantic(line, format!("negative probability {p}")));
                }
                b.init.push((line, s, p));
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

    let missing = |what: &str| SamgError::Semantic {
        line: None,
        message: format!("missing `{what}` declaration"),
    };
    if !header {
        return Err(missing("samg"));
    }
    let states = b.states.ok_or_else(|| missing("states"))?;
    b.agents.ok_or_else(|| missing("agents"))?;
    let actions = b
        .actions
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| missing(&format!("actions {}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    let gamma = b.gamma.ok_or_else(|| missing("gamma"))?;

    let mut m = SamgModel::empty(states, actions, gamma);
    let n = m.n_states();
    let k = m.n_joint_actions();

    let mut defined = vec![None; n * k * n];
    for &(line, s, a, next, p) in &b.transitions {
        let slot = (s * k + a) * n + next;
        if let Some(first) = defined[slot] {
            return Err(semantic(
                line,
                format!(
                    "transition ({}, {}) -> {} already given on line {first}",
                    m.states[s],
                    m.joint_label(a),
                    m.states[next]
                ),
            ));
        }
        defined[slot] = Some(line);
        m.transition[slot] = p;
    }
    for s in 0..n {
        for a in 0..k {
            let sum: f64 = m.transition_row(s, a).iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                let line = (0..n).filter_map(|x| defined[(s * k + a) * n + x]).max();
                return Err(SamgError::Semantic {
                    line,
                    message: format!(
                        "transition row ({}, {}) sums to {sum}, not 1",
                        m.states[s],
                        m.joint_label(a)
                    ),
                });
            }
            normalize(m.transition_row_mut(s, a));
        }
    }

    let mut seen = HashSet::new();
    for &(line, s, a, r) in &b.rewards {
        if !seen.insert((s, a)) {
            return Err(semantic(
                line,
                format!("duplicate reward for ({}, {})", m.states[s], m.joint_label(a)),
            ));
        }
        m.set_reward(s, a, r);
    }

    let mut seen = HashSet::new();
    for (line, i, s, members) in b.perturb {
        if !seen.insert((i, s)) {
            return Err(semantic(
                line,
                format!("duplicate perturbation set for agent {} at {}", i + 1, m.states[s]),
            ));
        }
        if !members.contains(&s) {
            return Err(semantic(
                line,
                format!(
                    "true state {} not in P^{}_{{{}}}",
                    m.states[s],
                    i + 1,
                    m.states[s]
                ),
            ));
        }
        m.perturbation[i][s] = members;
    }

    if !b.init.is_empty() {
        let mut init = vec![0.0; n];
        let mut seen = HashSet::new();
        for &(line, s, p) in &b.init {
            if !seen.insert(s) {
                return Err(semantic(line, format!("duplicate init entry for {}", m.states[s])));
            }
            init[s] = p;
        }
        let sum: f64 = init.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(SamgError::Semantic {
                line: b.init.last().map(|e| e.0),
                message: format!("initial distribution sums to {sum}, not 1"),
            });
        }
        normalize(&mut init);
        m.initial = init;
    }

    m.ensure_valid()?;
    Ok(m)
}

/// Writes a model in the text format. Zero transition and reward entries
/// are omitted; every perturbation set and initial probability is written.
pub fn serialize_model(m: &SamgModel) -> String {
    let mut out = String::new();
    let joint_ids = |a: usize| -> String {
        m.decode_joint(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| m.actions[i][x].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "samg 1");
    let _ = writeln!(out, "agents {}", m.n_agents());
    let _ = writeln!(out, "states {}", m.states.join(" "));
    for (i, ids) in m.actions.iter().enumerate() {
        let _ = writeln!(out, "actions {} {}", i + 1, ids.join(" "));
    }
    let _ = writeln!(out, "gamma {}", format_float(m.gamma));
    for s in 0..m.n_states() {
        for a in 0..m.n_joint_actions() {
            for (next, &p) in m.transition_row(s, a).iter().enumerate() {
                if p != 0.0 {
                    let _ = writeln!(
                        out,
                        "transition {} {} {} {}",
                        m.states[s],
                        joint_ids(a),
                        m.states[next],
                        format_float(p)
                    );
                }
            }
        }
    }
    for s in 0..m.n_states() {
        for a in 0..m.n_joint_actions() {
            let r = m.reward(s, a);
            if r != 0.0 {
                let _ = writeln!(
                    out,
                    "reward {} {} {}",
                    m.states[s],
                    joint_ids(a),
                    format_float(r)
                );
            }
        }
    }
    for (i, sets) in m.perturbation.iter().enumerate() {
        for (s, set) in sets.iter().enumerate() {
            let members: Vec<&str> = set.iter().map(|&x| m.states[x].as_str()).collect();
            let _ = writeln!(out, "perturb {} {} {}", i + 1, m.states[s], members.join(" "));
        }
    }
    for (s, &p) in m.initial.iter().enumerate() {
        let _ = writeln!(out, "init {} {}", m.states[s], format_float(p));
    }
    out
}
