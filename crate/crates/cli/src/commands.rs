use std::fs;
use std::path::Path;
use std::process::ExitCode;

use samg::adversary::optimal_adversary;
use samg::counterexamples::counterexample_suite;
use samg::equilibrium::{nonexistence_scan, robust_nash_verify};
use samg::eval::{evaluate, expected_value, simulate};
use samg::maximin::{enumerate_deterministic_policies, gda_solve, subgradient_solve, SolveReport};
use samg::policy::{parse_policy_file, serialize_policies};
use samg::robust::robust_fixed_point;
use samg::{builtin_game, parse_model, AdversaryPolicy, AgentPolicy, SamgError, SamgModel};

use crate::report::{trace_csv, Report};
use crate::{Command, Io, Policies, Solver};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<SamgError> for Failure {
    fn from(err: SamgError) -> Self {
        let code = match err {
            SamgError::UnknownGame(_) | SamgError::InvalidArgument(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn with_path(path: &Path, err: SamgError) -> Failure {
    let mut failure = Failure::from(err);
    failure.message = format!("{}: {}", path.display(), failure.message);
    failure
}

fn load_model(io: &Io) -> Outcome<(SamgModel, String)> {
    match (&io.source.model, &io.source.builtin) {
        (Some(path), None) => {
            let model = parse_model(&read(path)?).map_err(|e| with_path(path, e))?;
            Ok((model, path.display().to_string()))
        }
        (None, Some(name)) => Ok((builtin_game(name)?, name.clone())),
        _ => Err(Failure::usage("exactly one of --model and --builtin is required")),
    }
}

fn load_policies(m: &SamgModel, policies: &Policies) -> Outcome<(AgentPolicy, AdversaryPolicy)> {
    let mut pi = AgentPolicy::uniform(m);
    let mut chi = AdversaryPolicy::identity(m);
    if let Some(path) = &policies.policy {
        let file = parse_policy_file(m, &read(path)?).map_err(|e| with_path(path, e))?;
        if let Some(agent) = file.agent {
            pi = agent;
        }
        if let Some(adversary) = file.adversary {
            chi = adversary;
        }
    }
    if let Some(path) = &policies.adversary {
        let file = parse_policy_file(m, &read(path)?).map_err(|e| with_path(path, e))?;
        chi = file
            .adversary
            .ok_or_else(|| Failure::usage(format!("{}: no adversary entries", path.display())))?;
    }
    Ok((pi, chi))
}

fn push_values(report: &mut Report, m: &SamgModel, key: &str, values: &[f64]) {
    for (s, v) in values.iter().enumerate() {
        report.push(format!("{key}[{}]", m.states[s]), *v);
    }
}

fn push_agent_policy(report: &mut Report, m: &SamgModel, pi: &AgentPolicy) {
    for (i, rows) in pi.probs.iter().enumerate() {
        for (rho, row) in rows.iter().enumerate() {
            for (a, &p) in row.iter().enumerate() {
                report.push(format!("pi[{}][{}][{}]", i + 1, m.states[rho], m.actions[i][a]), p);
            }
        }
    }
}

fn push_adversary_policy(report: &mut Report, m: &SamgModel, chi: &AdversaryPolicy) {
    for (i, rows) in chi.probs.iter().enumerate() {
        for (s, row) in rows.iter().enumerate() {
            for &rho in m.perturbation_set(i, s) {
                report.push(format!("chi[{}][{}][{}]", i + 1, m.states[s], m.states[rho]), row[rho]);
            }
        }
    }
}

fn emit(report: &Report, out: Option<&Path>) -> Outcome<()> {
    print!("{}", report.human());
    if let Some(path) = out {
        write(path, &report.machine())?;
    }
    Ok(())
}

fn header(command: &str, source: &str) -> Report {
    let mut report = Report::default();
    report.push("command", command);
    report.push("model", source);
    report
}

fn finish_solve(
    mut report: Report,
    m: &SamgModel,
    result: &SolveReport,
    solver: &Solver,
    out: Option<&Path>,
) -> Outcome<ExitCode> {
    report.push("iterations", result.iterations);
    report.push("seed", result.seed);
    report.push("initial_objective", result.trace[0]);
    report.push("last_objective", *result.trace.last().expect("trace is never empty"));
    report.push("final_worst_case_objective", result.final_objective);
    push_agent_policy(&mut report, m, &result.pi);
    push_adversary_policy(&mut report, m, &result.chi);
    if let Some(path) = &solver.trace {
        write(path, &trace_csv(&result.trace, &result.residuals))?;
    }
    if let Some(path) = &solver.save_policy {
        write(path, &serialize_policies(m, Some(&result.pi), Some(&result.chi)))?;
    }
    emit(&report, out)?;
    println!("wall time: {:.3} s", result.wall_time.as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

pub fn run(command: Command) -> Outcome<ExitCode> {
    match command {
        Command::Eval { io, policies } => {
            let (m, source) = load_model(&io)?;
            let (pi, chi) = load_policies(&m, &policies)?;
            pi.ensure_valid(&m)?;
            chi.ensure_valid(&m)?;
            let v = evaluate(&m, &pi, &chi)?;
            let mut report = header("eval", &source);
            push_values(&mut report, &m, "value", &v.0);
            report.push("objective", expected_value(&m, &v));
            emit(&report, io.out.as_deref())?;
        }
        Command::WorstCase { io, policies, tol } => {
            let (m, source) = load_model(&io)?;
            let (pi, _) = load_policies(&m, &policies)?;
            pi.ensure_valid(&m)?;
            let opt = optimal_adversary(&m, &pi, tol)?;
            let mut report = header("worst-case", &source);
            push_values(&mut report, &m, "worst_case", &opt.worst_case.0);
            report.push("worst_case_objective", expected_value(&m, &opt.worst_case));
            report.push("iterations", opt.iterations);
            push_adversary_policy(&mut report, &m, &opt.adversary);
            emit(&report, io.out.as_deref())?;
        }
        Command::RobustValue {
            io,
            policies,
            agent,
            tol,
        } => {
            let (m, source) = load_model(&io)?;
            let (pi, chi) = load_policies(&m, &policies)?;
            let agent = agent as usize - 1;
            if agent >= m.n_agents() {
                return Err(Failure::usage(format!(
                    "--agent {} is out of range 1..={}",
                    agent + 1,
                    m.n_agents()
                )));
            }
            pi.ensure_valid(&m)?;
            chi.ensure_valid(&m)?;
            let sol = robust_fixed_point(&m, agent, &pi, &chi, tol)?;
            let mut report = header("robust-value", &source);
            report.push("agent", agent + 1);
            push_values(&mut report, &m, "robust_value", &sol.values.0);
            report.push("iterations", sol.iterations);
            report.push("residual", sol.residual);
            for (s, stage) in sol.stages.iter().enumerate() {
                for (k, &rho) in stage.perceived.iter().enumerate() {
                    let a = stage.agent[k].iter().position(|&p| p == 1.0).unwrap_or(0);
                    report.push(
                        format!("stage[{}][{}]", m.states[s], m.states[rho]),
                        m.actions[agent][a].as_str(),
                    );
                }
                let worst = stage.adversary.iter().position(|&p| p == 1.0).unwrap_or(0);
                report.push(format!("shown[{}]", m.states[s]), m.states[stage.perceived[worst]].as_str());
            }
            emit(&report, io.out.as_deref())?;
        }
        Command::NashVerify {
            io,
            policies,
            eps,
            tol,
        } => {
            let (m, source) = load_model(&io)?;
            let (pi, chi) = load_policies(&m, &policies)?;
            let verdict = robust_nash_verify(&m, &pi, &chi, eps, tol)?;
            let mut report = header("nash-verify", &source);
            report.push("eps", eps);
            for st in &verdict.states {
                let name = &m.states[st.state];
                for (p, gap) in st.gaps.iter().enumerate() {
                    let player = if p < m.n_agents() {
                        format!("agent{}", p + 1)
                    } else {
                        format!("adversary{}", p - m.n_agents() + 1)
                    };
                    report.push(format!("gap[{name}][{player}]"), *gap);
                }
                report.push(format!("stagewise[{name}]"), st.satisfied);
            }
            report.push("max_gap", verdict.max_gap);
            report.push("stagewise_equilibrium", verdict.satisfied);
            emit(&report, io.out.as_deref())?;
        }
        Command::Scan { io, grid, eps, tol } => {
            let (m, source) = load_model(&io)?;
            let scan = nonexistence_scan(&m, grid as usize, eps, tol)?;
            let mut report = header("scan", &source);
            report.push("resolution", scan.resolution);
            report.push("profiles", scan.profiles);
            report.push("eps", eps);
            report.push("min_gap", scan.min_gap);
            report.push("witness_index", scan.witness_index);
            report.push("evidence", scan.evidence());
            push_agent_policy(&mut report, &m, &scan.witness_pi);
            push_adversary_policy(&mut report, &m, &scan.witness_chi);
            emit(&report, io.out.as_deref())?;
        }
        Command::Gda {
            io,
            policies,
            solver,
            eta_chi,
        } => {
            let (m, source) = load_model(&io)?;
            let (pi, chi) = load_policies(&m, &policies)?;
            let eta_chi = eta_chi.unwrap_or(solver.eta);
            let result = gda_solve(&m, &pi, &chi, solver.eta, eta_chi, solver.iters, solver.seed, solver.tol)?;
            let mut report = header("gda", &source);
            report.push("eta", solver.eta);
            report.push("eta_chi", eta_chi);
            return finish_solve(report, &m, &result, &solver, io.out.as_deref());
        }
        Command::Subgrad {
            io,
            policies,
            solver,
        } => {
            let (m, source) = load_model(&io)?;
            let (pi, _) = load_policies(&m, &policies)?;
            let result = subgradient_solve(&m, &pi, solver.eta, solver.iters, solver.tol, solver.seed)?;
            let mut report = header("subgrad", &source);
            report.push("eta", solver.eta);
            return finish_solve(report, &m, &result, &solver, io.out.as_deref());
        }
        Command::Enumerate { io, tol } => {
            let (m, source) = load_model(&io)?;
            let e = enumerate_deterministic_policies(&m, tol)?;
            let mut report = header("enumerate", &source);
            report.push("policies", e.count);
            report.push("best_worst_case_objective", e.best);
            push_agent_policy(&mut report, &m, &e.witness);
            emit(&report, io.out.as_deref())?;
        }
        Command::Simulate {
            io,
            policies,
            episodes,
            horizon,
            seed,
        } => {
            let (m, source) = load_model(&io)?;
            let (pi, chi) = load_policies(&m, &policies)?;
            let sim = simulate(&m, &pi, &chi, episodes as usize, horizon as usize, seed)?;
            let mut report = header("simulate", &source);
            report.push("episodes", episodes);
            report.push("horizon", horizon);
            report.push("seed", seed);
            report.push("mean", sim.mean);
            report.push("std_error", sim.std_error);
            report.push("truncation_bound", sim.truncation_bound);
            emit(&report, io.out.as_deref())?;
        }
        Command::Counterexamples { out } => {
            let results = counterexample_suite()?;
            let mut report = Report::default();
            report.push("command", "counterexamples");
            for (k, r) in results.iter().enumerate() {
                println!("[{}] {} {}: {}", k + 1, if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                report.push(format!("check[{}]", k + 1), if r.passed { "PASS" } else { "FAIL" });
            }
            let all = results.iter().all(|r| r.passed);
            report.push("all_passed", all);
            if let Some(path) = out {
                write(&path, &report.machine())?;
            }
            return Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}
