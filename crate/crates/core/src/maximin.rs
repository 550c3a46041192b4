//! Searching for agent policies with a good worst-case objective
//! `F(pi) = min_chi J(pi, chi)`, where `J(pi, chi) = sum_s0 Pr(s0) V(s0)`.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::adversary::{argmax_first, optimal_adversary, optimal_adversary_from};
use crate::error::{Result, SamgError};
use crate::eval::{evaluate, expected_value, occupancy, q_from_v, ValueTable};
use crate::model::SamgModel;
use crate::policy::{played_distribution, AdversaryPolicy, AgentPolicy};

pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_ITERS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0;

/// Cap on the number of deterministic joint agent policies enumerated.
pub const POLICY_ENUMERATION_LIMIT: u128 = 1_000_000;

/// `J(pi, chi)`.
pub fn objective(m: &SamgModel, pi: &AgentPolicy, chi: &AdversaryPolicy) -> Result<f64> {
    Ok(expected_value(m, &evaluate(m, pi, chi)?))
}

/// `F(pi)`, using the optimal adversary.
pub fn worst_case_objective(m: &SamgModel, pi: &AgentPolicy, tol: f64) -> Result<f64> {
    Ok(expected_value(m, &optimal_adversary(m, pi, tol)?.worst_case))
}

/// Partial derivatives of `J`, laid out like the policy tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradients {
    /// `d_pi[i][rho][a]`.
    pub d_pi: Vec<Vec<Vec<f64>>>,
    /// `d_chi[i][s][rho]`.
    pub d_chi: Vec<Vec<Vec<f64>>>,
}

/// Exact gradients of `J` treating every table entry as a free variable.
///
/// With `d` the discounted occupancy and `Q` the joint-action values,
/// `dJ/dw(s, a) = d(s) Q(s, a)` for the joint action weight `w`, and the
/// chain rule through `w(s, a) = prod_j sum_rho chi^j(rho|s) pi^j(a^j|rho)`
/// gives both tables.
pub fn objective_gradients(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
) -> Result<ObjectiveGradients> {
    let v = evaluate(m, pi, chi)?;
    let d = occupancy(m, pi, chi)?;
    let q = q_from_v(m, &v);
    let n = m.n_states();
    let mut d_pi: Vec<Vec<Vec<f64>>> = (0..m.n_agents())
        .map(|i| vec![vec![0.0; m.n_actions(i)]; n])
        .collect();
    let mut d_chi = vec![vec![vec![0.0; n]; n]; m.n_agents()];
    for s in 0..n {
        let played: Vec<Vec<f64>> = (0..m.n_agents())
            .map(|j| played_distribution(pi, chi, j, s))
            .collect();
        for i in 0..m.n_agents() {
            // own[a'] = sum over joints with a^i = a' of prod_{j != i} m^j(a^j) Q(s, a)
            let mut factors = played.clone();
            factors[i] = vec![1.0; m.n_actions(i)];
            let mut own = vec![0.0; m.n_actions(i)];
            for (joint, w) in m.product_distribution(&factors).into_iter().enumerate() {
                if w != 0.0 {
                    own[m.decode_joint(joint)[i]] += w * q.get(s, joint);
                }
            }
            for rho in 0..n {
                let c = chi.row(i, s)[rho];
                for (g, &o) in d_pi[i][rho].iter_mut().zip(&own) {
                    *g += d[s] * c * o;
                }
                d_chi[i][s][rho] =
                    d[s] * pi.row(i, rho).iter().zip(&own).map(|(p, o)| p * o).sum::<f64>();
            }
        }
    }
    Ok(ObjectiveGradients { d_pi, d_chi })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projects onto distributions supported on `support`.
fn project_onto_support(v: &[f64], support: &[usize]) -> Vec<f64> {
    let restricted: Vec<f64> = support.iter().map(|&k| v[k]).collect();
    let mut out = vec![0.0; v.len()];
    for (&k, p) in support.iter().zip(project_simplex(&restricted)) {
        out[k] = p;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// One entry per iterate, starting with the initial policy.
    pub trace: Vec<f64>,
    /// Per-step sup-norm change of the policy tables.
    pub residuals: Vec<f64>,
    /// `F` of the returned agent policy.
    pub final_objective: f64,
    pub pi: AgentPolicy,
    pub chi: AdversaryPolicy,
    pub seed: u64,
    pub wall_time: Duration,
}

fn sup_change(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn ascend(pi: &AgentPolicy, d_pi: &[Vec<Vec<f64>>], eta: f64) -> AgentPolicy {
    AgentPolicy {
        probs: pi
            .probs
            .iter()
            .zip(d_pi)
            .map(|(rows, grads)| {
                rows.iter()
                    .zip(grads)
                    .map(|(row, g)| {
                        let step: Vec<f64> = row.iter().zip(g).map(|(p, d)| p + eta * d).collect();
                        project_simplex(&step)
                    })
                    .collect()
            })
            .collect(),
    }
}

fn check_step(name: &str, eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(SamgError::InvalidArgument(format!("{name} must be positive, got {eta}")))
    }
}

/// Simultaneous projected gradient ascent on `pi` and descent on `chi`.
/// The seed is recorded for reproducibility; the iteration itself is
/// deterministic.
#[allow(clippy::too_many_arguments)]
pub fn gda_solve(
    m: &SamgModel,
    pi0: &AgentPolicy,
    chi0: &AdversaryPolicy,
    eta_pi: f64,
    eta_chi: f64,
    iters: usize,
    seed: u64,
    tol: f64,
) -> Result<SolveReport> {
    check_step("agent step size", eta_pi)?;
    if !(eta_chi >= 0.0 && eta_chi.is_finite()) {
        return Err(SamgError::InvalidArgument(format!(
            "adversary step size must be non-negative, got {eta_chi}"
        )));
    }
    pi0.ensure_valid(m)?;
    chi0.ensure_valid(m)?;
    let start = Instant::now();
    let mut pi = pi0.clone();
    let mut chi = chi0.clone();
    let mut trace = Vec::with_capacity(iters + 1);
    let mut residuals = Vec::with_capacity(iters);
    trace.push(objective(m, &pi, &chi)?);
    for _ in 0..iters {
        let grads = objective_gradients(m, &pi, &chi)?;
        let next_pi = ascend(&pi, &grads.d_pi, eta_pi);
        let next_chi = AdversaryPolicy {
            probs: (0..m.n_agents())
                .map(|i| {
                    (0..m.n_states())
                        .map(|s| {
                            let step: Vec<f64> = chi
                                .row(i, s)
                                .iter()
                                .zip(&grads.d_chi[i][s])
                                .map(|(p, d)| p - eta_chi * d)
                                .collect();
                            project_onto_support(&step, m.perturbation_set(i, s))
                        })
                        .collect()
                })
                .collect(),
        };
        residuals.push(sup_change(&pi.probs, &next_pi.probs).max(sup_change(&chi.probs, &next_chi.probs)));
        pi = next_pi;
        chi = next_chi;
        trace.push(objective(m, &pi, &chi)?);
    }
    let final_objective = worst_case_objective(m, &pi, tol)?;
    Ok(SolveReport {
        iterations: iters,
        trace,
        residuals,
        final_objective,
        pi,
        chi,
        seed,
        wall_time: start.elapsed(),
    })
}

/// Projected supergradient ascent on `F`, stepping along `grad_pi J(pi, chi*)`
/// with `chi*` the optimal adversary of the current iterate. Returns the
/// best iterate seen.
pub fn subgradient_solve(
    m: &SamgModel,
    pi0: &AgentPolicy,
    eta: f64,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<SolveReport> {
    check_step("step size", eta)?;
    pi0.ensure_valid(m)?;
    let start = Instant::now();
    let mut pi = pi0.clone();
    let mut trace = Vec::with_capacity(iters + 1);
    let mut residuals = Vec::with_capacity(iters);
    let mut warm: Option<ValueTable> = None;
    let mut best: Option<(f64, AgentPolicy, AdversaryPolicy)> = None;
    for k in 0..=iters {
        let opt = optimal_adversary_from(m, &pi, tol, warm.as_ref())?;
        let value = expected_value(m, &opt.worst_case);
        trace.push(value);
        if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
            best = Some((value, pi.clone(), opt.adversary.clone()));
        }
        if k == iters {
            break;
        }
        let grads = objective_gradients(m, &pi, &opt.adversary)?;
        let next = ascend(&pi, &grads.d_pi, eta);
        residuals.push(sup_change(&pi.probs, &next.probs));
        pi = next;
        warm = Some(opt.worst_case);
    }
    let (final_objective, pi, chi) = best.expect("at least one iterate");
    Ok(SolveReport {
        iterations: iters,
        trace,
        residuals,
        final_objective,
        pi,
        chi,
        seed,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEnumeration {
    pub best: f64,
    pub witness: AgentPolicy,
    pub count: usize,
}

/// `F` of every deterministic agent policy; ties go to the lowest index,
/// with agent 1's row for the first state most significant.
pub fn enumerate_deterministic_policies(m: &SamgModel, tol: f64) -> Result<PolicyEnumeration> {
    m.ensure_valid()?;
    let n = m.n_states();
    let radices: Vec<usize> = (0..m.n_agents())
        .flat_map(|i| std::iter::repeat_n(m.n_actions(i), n))
        .collect();
    let count = radices
        .iter()
        .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
        .unwrap_or(u128::MAX);
    if count > POLICY_ENUMERATION_LIMIT {
        return Err(SamgError::SizeGuard {
            what: "deterministic agent policies".into(),
            size: count,
            limit: POLICY_ENUMERATION_LIMIT,
        });
    }
    let count = count as usize;
    let policy = |mut idx: usize| {
        let mut digits = vec![0; radices.len()];
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = idx % r;
            idx /= r;
        }
        let choice: Vec<Vec<usize>> = digits.chunks(n).map(<[usize]>::to_vec).collect();
        AgentPolicy::deterministic(m, &choice)
    };
    let values = (0..count)
        .into_par_iter()
        .map(|idx| worst_case_objective(m, &policy(idx), tol))
        .collect::<Result<Vec<f64>>>()?;
    let idx = argmax_first(&values);
    Ok(PolicyEnumeration {
        best: values[idx],
        witness: policy(idx),
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_game, random_game};
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    fn fig4_delta_s2() -> SamgModel {
        let mut m = builtin_game("fig4").unwrap();
        m.initial = vec![0.0, 1.0];
        m
    }

    fn always_differ(m: &SamgModel) -> AgentPolicy {
        AgentPolicy::deterministic(m, &[vec![0, 0], vec![1, 1]])
    }

    /// One agent, one state, two actions paying 1 and 0.
    fn bandit() -> SamgModel {
        let mut m = SamgModel::empty(vec!["s".into()], vec![vec!["a1".into(), "a2".into()]], 0.9);
        m.transition_row_mut(0, 0)[0] = 1.0;
        m.transition_row_mut(0, 1)[0] = 1.0;
        m.set_reward(0, 0, 1.0);
        m
    }

    fn finite_difference_check(m: &SamgModel, pi: &AgentPolicy, chi: &AdversaryPolicy) {
        let h = 1e-6;
        let g = objective_gradients(m, pi, chi).unwrap();
        let j = objective(m, pi, chi).unwrap();
        let slack = 1e-4_f64.max(1e-3 * j.abs());
        for i in 0..m.n_agents() {
            for rho in 0..m.n_states() {
                for a in 0..m.n_actions(i) {
                    let (mut up, mut down) = (pi.clone(), pi.clone());
                    up.probs[i][rho][a] += h;
                    down.probs[i][rho][a] -= h;
                    let fd = (objective(m, &up, chi).unwrap() - objective(m, &down, chi).unwrap()) / (2.0 * h);
                    assert!((fd - g.d_pi[i][rho][a]).abs() <= slack, "pi {i} {rho} {a}: {fd} vs {}", g.d_pi[i][rho][a]);
                }
            }
            for s in 0..m.n_states() {
                for rho in 0..m.n_states() {
                    let (mut up, mut down) = (chi.clone(), chi.clone());
                    up.probs[i][s][rho] += h;
                    down.probs[i][s][rho] -= h;
                    let fd = (objective(m, pi, &up).unwrap() - objective(m, pi, &down).unwrap()) / (2.0 * h);
                    assert!((fd - g.d_chi[i][s][rho]).abs() <= slack, "chi {i} {s} {rho}");
                }
            }
        }
    }

    #[test]
    fn objective_examples() {
        let m = builtin_game("fig4").unwrap();
        let coord = AgentPolicy::deterministic(&m, &[vec![0, 0], vec![0, 1]]);
        let j = objective(&m, &coord, &AdversaryPolicy::identity(&m)).unwrap();
        assert!((j - 100.0).abs() < 1e-6);
        let j = objective(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::uniform(&m)).unwrap();
        assert!((j - 50.0).abs() < 1e-6);
        assert!(worst_case_objective(&m, &coord, TOL).unwrap().abs() < 1e-6);
        assert!((worst_case_objective(&m, &always_differ(&m), TOL).unwrap() - 50.0).abs() < 1e-6);
        let m = fig4_delta_s2();
        assert!((worst_case_objective(&m, &always_differ(&m), TOL).unwrap() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn bandit_gradient_gap() {
        let m = bandit();
        let g = objective_gradients(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::identity(&m)).unwrap();
        assert!((g.d_pi[0][0][0] - g.d_pi[0][0][1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reward_gradients_vanish() {
        let mut m = random_game(3, 2, 3, 2, 2).unwrap();
        m.reward.iter_mut().for_each(|r| *r = 0.0);
        let g = objective_gradients(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::uniform(&m)).unwrap();
        assert!(g.d_pi.iter().flatten().flatten().chain(g.d_chi.iter().flatten().flatten()).all(|&x| x == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = builtin_game("fig4").unwrap();
        finite_difference_check(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::identity(&m));
        let m = builtin_game("fig5").unwrap();
        let pi = AgentPolicy::from_fn(&m, |i, rho, a| if (i + rho + a) % 2 == 0 { 0.7 } else { 0.3 });
        finite_difference_check(&m, &pi, &AdversaryPolicy::uniform(&m).mix(&AdversaryPolicy::identity(&m), 0.4));
        let m = random_game(11, 2, 3, 2, 2).unwrap();
        finite_difference_check(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::uniform(&m));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.6, 0.6]), vec![0.5, 0.5]);
        assert_eq!(project_onto_support(&[0.9, 0.9, 0.3], &[1, 2]), vec![0.0, 0.8, 0.2]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_ordered(v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let p = project_simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let again = project_simplex(&p);
            for (a, b) in p.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] > v[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn gda_zero_reward_is_stationary() {
        let mut m = builtin_game("fig4").unwrap();
        m.reward.iter_mut().for_each(|r| *r = 0.0);
        let pi = AgentPolicy::from_fn(&m, |_, _, a| if a == 0 { 0.3 } else { 0.7 });
        let chi = AdversaryPolicy::uniform(&m);
        let r = gda_solve(&m, &pi, &chi, 0.05, 0.05, 20, 0, TOL).unwrap();
        assert_eq!(r.pi, pi);
        assert_eq!(r.chi, chi);
        assert_eq!(r.trace, vec![0.0; 21]);
    }

    #[test]
    fn gda_bandit_converges() {
        let m = bandit();
        let r = gda_solve(&m, &AgentPolicy::uniform(&m), &AdversaryPolicy::identity(&m), 0.1, 0.05, 10_000, 0, TOL)
            .unwrap();
        assert_eq!(r.trace.len(), 10_001);
        assert!((r.pi.row(0, 0)[0] - 1.0).abs() < 1e-12);
        assert!((r.trace[10_000] - 10.0).abs() < 1e-3);
    }

    #[test]
    fn subgradient_constant_reward() {
        let mut m = random_game(5, 2, 3, 2, 2).unwrap();
        m.reward.iter_mut().for_each(|r| *r = 1.0);
        let r = subgradient_solve(&m, &AgentPolicy::uniform(&m), 0.05, 10, TOL, 0).unwrap();
        for f in &r.trace {
            assert!((f - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn subgradient_matches_gda_without_adversary_freedom() {
        let mut m = random_game(8, 2, 3, 2, 1).unwrap();
        m.initial = vec![0.5, 0.25, 0.25];
        let pi0 = AgentPolicy::uniform(&m);
        let sub = subgradient_solve(&m, &pi0, 0.05, 30, 1e-12, 0).unwrap();
        let gda = gda_solve(&m, &pi0, &AdversaryPolicy::identity(&m), 0.05, 0.0, 30, 0, 1e-12).unwrap();
        for (a, b) in sub.trace.iter().zip(&gda.trace) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn known_optimum_is_stationary() {
        let m = fig4_delta_s2();
        let r = subgradient_solve(&m, &always_differ(&m), 0.05, 1, TOL, 0).unwrap();
        assert!(r.trace.iter().all(|&f| f >= 100.0 - 1e-6), "{:?}", r.trace);
    }

    #[test]
    fn enumeration_examples() {
        let m = fig4_delta_s2();
        let e = enumerate_deterministic_policies(&m, TOL).unwrap();
        assert_eq!(e.count, 16);
        assert!((e.best - 100.0).abs() < 1e-6);
        let w = &e.witness;
        for rho in 0..2 {
            assert_ne!(argmax_first(w.row(0, rho)), argmax_first(w.row(1, rho)));
        }
        let m = builtin_game("fig4").unwrap();
        assert!((enumerate_deterministic_policies(&m, TOL).unwrap().best - 50.0).abs() < 1e-6);
        let mut m = random_game(2, 2, 2, 2, 2).unwrap();
        m.reward.iter_mut().for_each(|r| *r = 2.0);
        assert!((enumerate_deterministic_policies(&m, TOL).unwrap().best - 20.0).abs() < 1e-6);
    }

    #[test]
    fn weak_duality() {
        for seed in 0..5 {
            let m = random_game(seed, 2, 3, 2, 2).unwrap();
            let pi = AgentPolicy::from_fn(&m, |i, rho, a| if (i + rho + a) % 2 == 0 { 0.8 } else { 0.2 });
            let f = worst_case_objective(&m, &pi, TOL).unwrap();
            for chi in [AdversaryPolicy::identity(&m), AdversaryPolicy::uniform(&m)] {
                assert!(f <= objective(&m, &pi, &chi).unwrap() + 1e-8);
            }
        }
    }
}
