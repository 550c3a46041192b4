//! Fixed checks on the two-state example games: the worst-case collapse of
//! coordination, the stochastic floor, the deterministic value classes, the
//! missing dominating policy, and the stage-wise conflict on `fig5`.

use crate::adversary::optimal_adversary;
use crate::equilibrium::{robust_nash_verify, DEFAULT_VERIFY_EPS};
use crate::error::Result;
use crate::eval::{evaluate, ValueTable};
use crate::model::{builtin_game, SamgModel};
use crate::policy::{AdversaryPolicy, AgentPolicy};

pub const CHECK_TOL: f64 = 1e-4;
const SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Agent 1 plays `a1` everywhere, agent 2 copies the perceived state.
pub fn coordination_policy(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![0, 1]])
}

/// The agents play different actions whatever they perceive.
pub fn always_differ_policy(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![1, 1]])
}

/// Both agents play `a1` whatever they perceive.
pub fn always_same_policy(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![0, 0]])
}

fn close(v: &ValueTable, expected: &[f64]) -> bool {
    v.0.iter().zip(expected).all(|(x, e)| (x - e).abs() <= CHECK_TOL)
}

fn show(v: &ValueTable) -> String {
    let parts: Vec<String> = v.0.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn worst(m: &SamgModel, pi: &AgentPolicy) -> Result<ValueTable> {
    Ok(optimal_adversary(m, pi, SOLVER_TOL)?.worst_case)
}

pub fn counterexample_suite() -> Result<Vec<CheckResult>> {
    let fig4 = builtin_game("fig4")?;
    let fig5 = builtin_game("fig5")?;
    let gamma = fig4.gamma;
    let mut out = Vec::new();

    let coord = coordination_policy(&fig4);
    let clean = evaluate(&fig4, &coord, &AdversaryPolicy::identity(&fig4))?;
    let attacked = worst(&fig4, &coord)?;
    out.push(CheckResult {
        name: "coordination collapses under the optimal adversary",
        passed: close(&clean, &[100.0, 100.0]) && close(&attacked, &[0.0, 0.0]),
        detail: format!("identity {} worst case {}", show(&clean), show(&attacked)),
    });

    let stochastic = worst(&fig4, &AgentPolicy::uniform(&fig4))?;
    out.push(CheckResult {
        name: "stochastic policy keeps a floor of 50",
        passed: close(&stochastic, &[50.0, 50.0]),
        detail: format!("worst case {}", show(&stochastic)),
    });

    let same = worst(&fig4, &always_same_policy(&fig4))?;
    let differ = worst(&fig4, &always_differ_policy(&fig4))?;
    let same_expected = [1.0 / (1.0 - gamma * gamma), gamma / (1.0 - gamma * gamma)];
    out.push(CheckResult {
        name: "deterministic policy classes",
        passed: close(&attacked, &[0.0, 0.0])
            && close(&differ, &[0.0, 100.0])
            && close(&same, &same_expected),
        detail: format!(
            "coordination {} differ {} same {}",
            show(&attacked),
            show(&differ),
            show(&same)
        ),
    });

    // pi_1 is always-differ, pi_2 the stochastic policy.
    out.push(CheckResult {
        name: "no policy dominates at every state",
        passed: stochastic.0[0] > differ.0[0] + CHECK_TOL
            && differ.0[1] > stochastic.0[1] + CHECK_TOL
            && close(&differ, &[0.0, 100.0])
            && close(&stochastic, &[50.0, 50.0]),
        detail: format!(
            "s1: {:.6} > {:.6}, s2: {:.6} > {:.6}",
            stochastic.0[0], differ.0[0], differ.0[1], stochastic.0[1]
        ),
    });

    let chi = AdversaryPolicy::identity(&fig5);
    let same = robust_nash_verify(&fig5, &always_same_policy(&fig5), &chi, DEFAULT_VERIFY_EPS, SOLVER_TOL)?;
    let differ = robust_nash_verify(&fig5, &always_differ_policy(&fig5), &chi, DEFAULT_VERIFY_EPS, SOLVER_TOL)?;
    out.push(CheckResult {
        name: "fig5 coordination profiles are not stage-wise equilibria",
        passed: !same.states[1].satisfied
            && !differ.states[0].satisfied
            && same.states[1].max_gap > CHECK_TOL
            && differ.states[0].max_gap > CHECK_TOL,
        detail: format!(
            "same-action gap at s2 {:.6}, differ gap at s1 {:.6}",
            same.states[1].max_gap, differ.states[0].max_gap
        ),
    });

    Ok(out)
}
