//! Acceptance criteria. Every test writes one `criterion N: PASS|FAIL` line
//! straight to stdout (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samg::adversary::{enumerate_deterministic_adversaries, optimal_adversary};
use samg::equilibrium::nonexistence_scan;
use samg::eval::{evaluate, expected_value, simulate};
use samg::maximin::{
    enumerate_deterministic_policies, objective, objective_gradients, subgradient_solve,
    worst_case_objective,
};
use samg::policy::played_distribution;
use samg::robust::{robust_fixed_point_from, robust_operator, stage_maximin, ReducedGame};
use samg::{builtin_game, random_game, AdversaryPolicy, AgentPolicy, SamgModel, ValueTable};

const TOL: f64 = 1e-10;

fn report(n: usize, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n:>2}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
}

fn fig4() -> SamgModel {
    builtin_game("fig4").unwrap()
}

fn fig4_delta_s2() -> SamgModel {
    let mut m = fig4();
    m.initial = vec![0.0, 1.0];
    m
}

fn coordination(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![0, 1]])
}

fn always_differ(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![1, 1]])
}

fn always_same(m: &SamgModel) -> AgentPolicy {
    AgentPolicy::deterministic(m, &[vec![0, 0], vec![0, 0]])
}

fn random_games() -> Vec<SamgModel> {
    (1..=5).map(|seed| random_game(seed, 2, 3, 2, 2).unwrap()).collect()
}

fn all_games() -> Vec<(String, SamgModel)> {
    let mut games = vec![
        ("fig4".to_string(), fig4()),
        ("fig5".to_string(), builtin_game("fig5").unwrap()),
    ];
    for (k, m) in random_games().into_iter().enumerate() {
        games.push((format!("random{}", k + 1), m));
    }
    games
}

/// A few fixed policy pairs with mixed and pure rows.
fn policy_pairs(m: &SamgModel) -> Vec<(AgentPolicy, AdversaryPolicy)> {
    let skew = AgentPolicy::from_fn(m, |i, rho, a| {
        let p = 0.15 + 0.2 * ((i + 2 * rho) % 4) as f64;
        if a == 0 {
            p
        } else {
            (1.0 - p) / (m.n_actions(i) - 1) as f64
        }
    });
    let pure = AgentPolicy::deterministic(
        m,
        &(0..m.n_agents())
            .map(|i| (0..m.n_states()).map(|rho| (i + rho) % m.n_actions(i)).collect())
            .collect::<Vec<_>>(),
    );
    let mixed_chi = AdversaryPolicy::uniform(m).mix(&AdversaryPolicy::identity(m), 0.3);
    vec![
        (AgentPolicy::uniform(m), AdversaryPolicy::identity(m)),
        (skew, mixed_chi),
        (pure, AdversaryPolicy::uniform(m)),
    ]
}

fn within(v: &ValueTable, expected: &[f64], tol: f64) -> bool {
    v.0.iter().zip(expected).all(|(x, e)| (x - e).abs() <= tol)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[test]
fn criterion_01_coordination_collapse() {
    let m = fig4();
    let ((clean, worst), took) = timed(|| {
        let pi = coordination(&m);
        (
            evaluate(&m, &pi, &AdversaryPolicy::identity(&m)).unwrap(),
            optimal_adversary(&m, &pi, TOL).unwrap().worst_case,
        )
    });
    let passed = within(&clean, &[100.0, 100.0], 1e-6)
        && within(&worst, &[0.0, 0.0], 1e-6)
        && took < Duration::from_secs(1);
    report(
        1,
        passed,
        &format!("V = {:?}, worst case = {:?}, {took:?}", clean.0, worst.0),
    );
    assert!(passed);
}

#[test]
fn criterion_02_stochastic_floor() {
    let m = fig4();
    let (worst, took) = timed(|| optimal_adversary(&m, &AgentPolicy::uniform(&m), TOL).unwrap().worst_case);
    let passed = within(&worst, &[50.0, 50.0], 1e-6) && took < Duration::from_secs(1);
    report(2, passed, &format!("worst case = {:?}, {took:?}", worst.0));
    assert!(passed);
}

#[test]
fn criterion_03_deterministic_classes() {
    let m = fig4();
    let g = m.gamma;
    let ((same, same_worst, differ), took) = timed(|| {
        (
            evaluate(&m, &always_same(&m), &AdversaryPolicy::identity(&m)).unwrap(),
            optimal_adversary(&m, &always_same(&m), TOL).unwrap().worst_case,
            optimal_adversary(&m, &always_differ(&m), TOL).unwrap().worst_case,
        )
    });
    let expected_same = [1.0 / (1.0 - g * g), g / (1.0 - g * g)];
    let passed = within(&same, &expected_same, 1e-6)
        && within(&same_worst, &expected_same, 1e-6)
        && within(&differ, &[0.0, 100.0], 1e-6)
        && took < Duration::from_secs(1);
    report(
        3,
        passed,
        &format!("same = {:?}, differ worst case = {:?}, {took:?}", same.0, differ.0),
    );
    assert!(passed);
}

#[test]
fn criterion_04_no_totally_optimal_policy() {
    let m = fig4();
    let pi1 = optimal_adversary(&m, &always_differ(&m), TOL).unwrap().worst_case;
    let pi2 = optimal_adversary(&m, &AgentPolicy::uniform(&m), TOL).unwrap().worst_case;
    let passed = within(&pi1, &[0.0, 100.0], 1e-6)
        && within(&pi2, &[50.0, 50.0], 1e-6)
        && pi2[0] > pi1[0]
        && pi1[1] > pi2[1];
    report(
        4,
        passed,
        &format!("pi1 worst case = {:?}, pi2 worst case = {:?}", pi1.0, pi2.0),
    );
    assert!(passed);
}

#[test]
fn criterion_05_adversary_optimality() {
    let (slack, took) = timed(|| {
        let mut worst_slack = f64::NEG_INFINITY;
        for (_, m) in all_games() {
            for (pi, _) in policy_pairs(&m).into_iter().chain([(always_differ_or_uniform(&m), AdversaryPolicy::identity(&m))]) {
                let opt = optimal_adversary(&m, &pi, TOL).unwrap().worst_case;
                let brute = enumerate_deterministic_adversaries(&m, &pi).unwrap().pointwise_min;
                for (o, b) in opt.0.iter().zip(&brute.0) {
                    worst_slack = worst_slack.max(o - b);
                }
            }
        }
        worst_slack
    });
    let passed = slack <= 1e-6 && took < Duration::from_secs(30);
    report(
        5,
        passed,
        &format!("max (optimal - enumerated minimum) = {slack:.3e}, {took:?}"),
    );
    assert!(passed);
}

fn always_differ_or_uniform(m: &SamgModel) -> AgentPolicy {
    if m.n_states() == 2 {
        always_differ(m)
    } else {
        AgentPolicy::uniform(m)
    }
}

#[test]
fn criterion_06_contraction_and_uniqueness() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_disagreement: f64 = 0.0;
    let tol = 1e-8;
    for (_, m) in all_games() {
        let bound = m.value_bound();
        for (pi, chi) in policy_pairs(&m) {
            for agent in 0..m.n_agents() {
                let game = ReducedGame::new(&m, agent, &pi, &chi).unwrap();
                for _ in 0..100 {
                    let v = ValueTable((0..m.n_states()).map(|_| rng.gen_range(-bound..=bound)).collect());
                    let z = ValueTable((0..m.n_states()).map(|_| rng.gen_range(-bound..=bound)).collect());
                    let lhs = robust_operator(&game, &v).distance(&robust_operator(&game, &z));
                    worst_excess = worst_excess.max(lhs - m.gamma * v.distance(&z));
                }
                let low = robust_fixed_point_from(&game, tol, ValueTable::constant(m.n_states(), 0.0)).unwrap();
                let high = robust_fixed_point_from(&game, tol, ValueTable::constant(m.n_states(), bound)).unwrap();
                worst_disagreement = worst_disagreement.max(low.values.distance(&high.values));
            }
        }
    }
    let passed = worst_excess <= 1e-12 && worst_disagreement <= 2.0 * tol;
    report(
        6,
        passed,
        &format!(
            "max (|Psi v - Psi z| - gamma |v - z|) = {worst_excess:.3e}, fixed-point disagreement = {worst_disagreement:.3e}"
        ),
    );
    assert!(passed);
}

/// Grid maximin of one stage problem computed straight from the model:
/// the agent mixes each perceived-state row over a 201-point grid, the
/// adversary mixes over the perceived states on the same grid.
fn grid_maximin(
    m: &SamgModel,
    agent: usize,
    s: usize,
    v: &ValueTable,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
) -> f64 {
    assert_eq!(m.n_actions(agent), 2);
    let perceived = m.perturbation_set(agent, s);
    let n_own = m.n_actions(agent);
    // payoff[k][a]: value to the agent when shown perceived[k] and playing a.
    let mut payoff = vec![vec![0.0; n_own]; perceived.len()];
    for (k, row) in payoff.iter_mut().enumerate() {
        let _ = perceived[k];
        for joint in 0..m.n_joint_actions() {
            let actions = m.decode_joint(joint);
            let others: f64 = (0..m.n_agents())
                .filter(|&j| j != agent)
                .map(|j| played_distribution(pi, chi, j, s)[actions[j]])
                .product();
            let cont: f64 = m.transition_row(s, joint).iter().zip(&v.0).map(|(p, x)| p * x).sum();
            row[actions[agent]] += others * (m.reward(s, joint) + m.gamma * cont);
        }
    }
    let grid: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let row_value = |k: usize, x: f64| x * payoff[k][0] + (1.0 - x) * payoff[k][1];
    let adversary_min = |xs: &[f64]| -> f64 {
        match xs.len() {
            1 => row_value(0, xs[0]),
            2 => grid
                .iter()
                .map(|&y| y * row_value(0, xs[0]) + (1.0 - y) * row_value(1, xs[1]))
                .fold(f64::INFINITY, f64::min),
            _ => unreachable!("perturbation sets of size at most 2"),
        }
    };
    match perceived.len() {
        1 => grid.iter().map(|&x| adversary_min(&[x])).fold(f64::NEG_INFINITY, f64::max),
        2 => grid
            .iter()
            .flat_map(|&x0| grid.iter().map(move |&x1| (x0, x1)))
            .map(|(x0, x1)| adversary_min(&[x0, x1]))
            .fold(f64::NEG_INFINITY, f64::max),
        _ => unreachable!(),
    }
}

#[test]
fn criterion_07_stage_maximin_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut problems = 0;
    for (_, m) in all_games() {
        let bound = m.value_bound();
        for (pi, chi) in policy_pairs(&m) {
            let v = ValueTable((0..m.n_states()).map(|_| rng.gen_range(-bound..=bound)).collect());
            for agent in 0..m.n_agents() {
                for s in 0..m.n_states() {
                    if m.perturbation_set(agent, s).len() * m.n_actions(agent) > 16 {
                        continue;
                    }
                    let formula = stage_maximin(&m, agent, s, &v, &pi, &chi).unwrap().value;
                    let oracle = grid_maximin(&m, agent, s, &v, &pi, &chi);
                    worst = worst.max((formula - oracle).abs());
                    problems += 1;
                }
            }
        }
    }
    let passed = worst <= 1e-6;
    report(
        7,
        passed,
        &format!("{problems} stage problems, max |formula - grid| = {worst:.3e}"),
    );
    assert!(passed);
}

/// One state, two agents with two actions each, paid 1 when they match.
fn matching_game() -> SamgModel {
    let mut m = SamgModel::empty(
        vec!["s".into()],
        vec![vec!["a1".into(), "a2".into()], vec!["a1".into(), "a2".into()]],
        0.9,
    );
    for joint in 0..4 {
        m.transition_row_mut(0, joint)[0] = 1.0;
        let a = m.decode_joint(joint);
        m.set_reward(0, joint, if a[0] == a[1] { 1.0 } else { 0.0 });
    }
    m
}

#[test]
fn criterion_08_robust_nash_evidence() {
    let fig5 = builtin_game("fig5").unwrap();
    let scan = nonexistence_scan(&fig5, 11, 1e-3, 1e-9).unwrap();
    let matching = nonexistence_scan(&matching_game(), 11, 1e-6, 1e-10).unwrap();
    let fig5_ok = scan.min_gap > 1e-3;
    let matching_ok = matching.min_gap <= 1e-6;
    report(
        8,
        fig5_ok && matching_ok,
        &format!(
            "fig5 min gap = {:.3e} over {} profiles (witness pi = {:?}, chi = {:?}); matching game min gap = {:.3e}",
            scan.min_gap, scan.profiles, scan.witness_pi.probs, scan.witness_chi.probs, matching.min_gap
        ),
    );
    assert!(matching_ok, "matching game has no stage-wise equilibrium on the grid");
    assert!(fig5_ok, "fig5 grid contains a stage-wise equilibrium at every state: {scan:?}");
}

#[test]
fn criterion_09_robust_policy_optimum() {
    let m = fig4_delta_s2();
    let ((enumerated, solved), took) = timed(|| {
        let enumerated = enumerate_deterministic_policies(&m, TOL).unwrap();
        let pi0 = always_differ(&m).mix(&AgentPolicy::uniform(&m), 0.05);
        let solved = subgradient_solve(&m, &pi0, 1e-6, 10_000, 1e-9, 0).unwrap();
        (enumerated, solved)
    });
    let w = &enumerated.witness;
    let differs = (0..2).all(|rho| w.row(0, rho) != w.row(1, rho));
    let passed = (enumerated.best - 100.0).abs() <= 1e-6
        && differs
        && solved.final_objective >= 99.0
        && solved.final_objective <= enumerated.best + 1e-6
        && took < Duration::from_secs(60);
    report(
        9,
        passed,
        &format!(
            "enumerated F = {:.9} (witness {:?}), subgradient best F = {:.9} from F0 = {:.6}, {took:?}",
            enumerated.best, w.probs, solved.final_objective, solved.trace[0]
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_gradient_correctness() {
    let h = 1e-6;
    let mut worst_ratio: f64 = 0.0;
    let mut coordinates = 0;
    for (_, m) in all_games() {
        for (pi, chi) in policy_pairs(&m) {
            let g = objective_gradients(&m, &pi, &chi).unwrap();
            let j = objective(&m, &pi, &chi).unwrap();
            let slack = 1e-4_f64.max(1e-3 * j.abs());
            let mut check = |fd: f64, exact: f64| {
                worst_ratio = worst_ratio.max((fd - exact).abs() / slack);
                coordinates += 1;
            };
            for i in 0..m.n_agents() {
                for rho in 0..m.n_states() {
                    for a in 0..m.n_actions(i) {
                        let (mut up, mut down) = (pi.clone(), pi.clone());
                        up.probs[i][rho][a] += h;
                        down.probs[i][rho][a] -= h;
                        let fd = (objective(&m, &up, &chi).unwrap() - objective(&m, &down, &chi).unwrap()) / (2.0 * h);
                        check(fd, g.d_pi[i][rho][a]);
                    }
                }
                for s in 0..m.n_states() {
                    for rho in 0..m.n_states() {
                        let (mut up, mut down) = (chi.clone(), chi.clone());
                        up.probs[i][s][rho] += h;
                        down.probs[i][s][rho] -= h;
                        let fd = (objective(&m, &pi, &up).unwrap() - objective(&m, &pi, &down).unwrap()) / (2.0 * h);
                        check(fd, g.d_chi[i][s][rho]);
                    }
                }
            }
        }
    }
    let passed = worst_ratio <= 1.0;
    report(
        10,
        passed,
        &format!("{coordinates} coordinates, worst |fd - exact| / tolerance = {worst_ratio:.3e}"),
    );
    assert!(passed);
}

#[test]
fn criterion_11_monte_carlo() {
    let m = fig4();
    let worst_chi = |pi: &AgentPolicy| optimal_adversary(&m, pi, TOL).unwrap().adversary;
    let cases = vec![
        ("coordination/identity", coordination(&m), AdversaryPolicy::identity(&m)),
        ("coordination/optimal", coordination(&m), worst_chi(&coordination(&m))),
        ("uniform/optimal", AgentPolicy::uniform(&m), worst_chi(&AgentPolicy::uniform(&m))),
        ("same/identity", always_same(&m), AdversaryPolicy::identity(&m)),
        ("differ/optimal", always_differ(&m), worst_chi(&always_differ(&m))),
    ];
    let mut details = Vec::new();
    let mut passed = true;
    for (name, pi, chi) in cases {
        let exact = expected_value(&m, &evaluate(&m, &pi, &chi).unwrap());
        let sim = simulate(&m, &pi, &chi, 10_000, 2000, 11).unwrap();
        let allowed = 3.0 * sim.std_error + sim.truncation_bound;
        let err = (sim.mean - exact).abs();
        passed &= err <= allowed;
        details.push(format!("{name}: |{:.4} - {:.4}| = {err:.3e} <= {allowed:.3e}", sim.mean, exact));
    }
    report(11, passed, &details.join("; "));
    assert!(passed);
}

/// Relabels states by `perm` (true state `s` becomes `perm[s]`) and drops
/// the adversary: the result is an ordinary Markov game.
fn relabeled(m: &SamgModel, perm: &[usize]) -> SamgModel {
    let mut out = SamgModel::empty(m.states.clone(), m.actions.clone(), m.gamma);
    for s in 0..m.n_states() {
        for joint in 0..m.n_joint_actions() {
            out.set_reward(perm[s], joint, m.reward(s, joint));
            let row = m.transition_row(s, joint).to_vec();
            let target = out.transition_row_mut(perm[s], joint);
            for (next, p) in row.into_iter().enumerate() {
                target[perm[next]] = p;
            }
        }
        out.initial[perm[s]] = m.initial[s];
    }
    out
}

#[test]
fn criterion_12_relabeling_reduction() {
    let m = fig4();
    let perm = [1, 0];
    let swap = AdversaryPolicy::deterministic(&m, &[perm.to_vec(), perm.to_vec()]);
    let markov = relabeled(&m, &perm);
    let mut worst: f64 = 0.0;
    let skew = AgentPolicy::from_fn(&m, |i, rho, a| if (i + rho + a) % 2 == 0 { 0.8 } else { 0.2 });
    for pi in [coordination(&m), always_differ(&m), always_same(&m), AgentPolicy::uniform(&m), skew] {
        let v = evaluate(&m, &pi, &swap).unwrap();
        let v_markov = evaluate(&markov, &pi, &AdversaryPolicy::identity(&markov)).unwrap();
        for s in 0..m.n_states() {
            worst = worst.max((v[s] - v_markov[perm[s]]).abs());
        }
        let f = objective(&m, &pi, &swap).unwrap() - objective(&markov, &pi, &AdversaryPolicy::identity(&markov)).unwrap();
        worst = worst.max(f.abs());
    }
    let passed = worst <= 1e-10;
    report(12, passed, &format!("max |V(s) - V_relabeled(swap(s))| = {worst:.3e}"));
    assert!(passed);
}

#[test]
fn worst_case_objective_examples() {
    let m = fig4_delta_s2();
    assert!((worst_case_objective(&m, &always_differ(&m), TOL).unwrap() - 100.0).abs() < 1e-6);
}
