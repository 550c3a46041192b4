mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Solvers and verifiers for state-adversarial Markov games.
#[derive(Debug, Parser)]
#[command(name = "samg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate an agent/adversary policy pair exactly.
    Eval {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
    },
    /// Compute the optimal adversary and worst-case values of an agent policy.
    WorstCase {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        #[arg(long, default_value_t = 1e-8, value_parser = positive, allow_hyphen_values = true)]
        tol: f64,
    },
    /// Robust state values of one agent with everyone else fixed.
    RobustValue {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        /// Agent index, starting at 1.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        agent: u32,
        #[arg(long, default_value_t = 1e-8, value_parser = positive, allow_hyphen_values = true)]
        tol: f64,
    },
    /// Check whether a policy pair is a stage-wise equilibrium at every state.
    NashVerify {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        #[arg(long, default_value_t = 1e-6, value_parser = non_negative, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, default_value_t = 1e-9, value_parser = positive, allow_hyphen_values = true)]
        tol: f64,
    },
    /// Search a policy grid for stage-wise equilibria.
    Scan {
        #[command(flatten)]
        io: Io,
        /// Grid points per simplex coordinate.
        #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u32).range(2..))]
        grid: u32,
        #[arg(long, default_value_t = 1e-3, value_parser = non_negative, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, default_value_t = 1e-9, value_parser = positive, allow_hyphen_values = true)]
        tol: f64,
    },
    /// Projected gradient descent ascent on the expected value.
    Gda {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        #[command(flatten)]
        solver: Solver,
        /// Adversary step size; defaults to --eta.
        #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
        eta_chi: Option<f64>,
    },
    /// Projected supergradient ascent on the worst-case expected value.
    Subgrad {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        #[command(flatten)]
        solver: Solver,
    },
    /// Worst-case expected value of every deterministic agent policy.
    Enumerate {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 1e-8, value_parser = positive, allow_hyphen_values = true)]
        tol: f64,
    },
    /// Monte-Carlo estimate of the expected discounted return.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        policies: Policies,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the fixed checks on the built-in example games.
    Counterexamples {
        /// Write a key-value report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Io {
    #[command(flatten)]
    source: Source,
    /// Write a key-value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in game: fig4 or fig5.
    #[arg(long)]
    builtin: Option<String>,
}

#[derive(Debug, Args)]
struct Policies {
    /// Policy file with agent entries (defaults to uniform). Adversary
    /// entries in it are used when --adversary is absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Policy file with adversary entries (defaults to the identity).
    #[arg(long)]
    adversary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Solver {
    #[arg(long, default_value_t = samg::maximin::DEFAULT_ETA, value_parser = positive, allow_hyphen_values = true)]
    eta: f64,
    #[arg(long, default_value_t = samg::maximin::DEFAULT_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = samg::maximin::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8, value_parser = positive, allow_hyphen_values = true)]
    tol: f64,
    /// Write `iter,objective,residual` rows here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the final policies here.
    #[arg(long)]
    save_policy: Option<PathBuf>,
}

fn parse_float(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("`{s}` is not a finite number"))
}

fn positive(s: &str) -> Result<f64, String> {
    parse_float(s).and_then(|x| if x > 0.0 { Ok(x) } else { Err(format!("{x} must be positive")) })
}

fn non_negative(s: &str) -> Result<f64, String> {
    parse_float(s).and_then(|x| {
        if x >= 0.0 {
            Ok(x)
        } else {
            Err(format!("{x} must not be negative"))
        }
    })
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SAMG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("SAMG_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
