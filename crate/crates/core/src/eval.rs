//! Evaluation of a fixed agent/adversary policy pair.
//!
//! Because both the joint agent policy and the joint adversary policy are
//! products over agents, the joint action distribution at true state `s`
//! factors as well: agent `i` effectively plays
//! `m^i_s = sum_rho chi^i(rho|s) pi^i(.|rho)` independently of the others.
//! Every quantity here is built from those per-agent mixtures.

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SamgError};
use crate::linalg::solve_discounted;
use crate::model::SamgModel;
use crate::policy::{played_distribution, AdversaryPolicy, AgentPolicy};

/// Per-state cap on `prod |P^i_s| * prod |A^i|`.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// A real value per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable(pub Vec<f64>);

impl ValueTable {
    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Max-norm distance.
    pub fn distance(&self, other: &ValueTable) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for ValueTable {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// Discounted state occupancy, aggregated over the initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable(pub Vec<f64>);

impl OccupancyTable {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Index<usize> for OccupancyTable {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// `Q(s, a)` over joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_joint: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, joint: usize) -> f64 {
        self.values[s * self.n_joint + joint]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_joint..(s + 1) * self.n_joint]
    }
}

/// Rejects models whose per-state joint enumeration would be too large.
pub fn check_enumeration_guard(m: &SamgModel) -> Result<()> {
    let actions = m.n_joint_actions() as u128;
    for s in 0..m.n_states() {
        let size = m.joint_perturbation_count(s).saturating_mul(actions);
        if size > ENUMERATION_LIMIT {
            return Err(SamgError::SizeGuard {
                what: format!("joint perturbation x action space at {}", m.states[s]),
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(())
}

/// Joint action distribution played at true state `s`.
pub fn joint_action_distribution(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    s: usize,
) -> Vec<f64> {
    let per_agent: Vec<Vec<f64>> = (0..m.n_agents())
        .map(|i| played_distribution(pi, chi, i, s))
        .collect();
    m.product_distribution(&per_agent)
}

/// The Markov chain induced by `(pi, chi)`: dense transition matrix and
/// expected stage reward per state.
pub(crate) fn induced_chain(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
) -> (Vec<f64>, Vec<f64>) {
    let n = m.n_states();
    let mut p = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        let mu = joint_action_distribution(m, pi, chi, s);
        let row = &mut p[s * n..(s + 1) * n];
        for (a, &w) in mu.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r[s] += w * m.reward(s, a);
            for (o, &q) in row.iter_mut().zip(m.transition_row(s, a)) {
                *o += w * q;
            }
        }
    }
    (p, r)
}

fn check_inputs(m: &SamgModel, pi: &AgentPolicy, chi: &AdversaryPolicy) -> Result<()> {
    pi.check_dims(m)?;
    chi.check_dims(m)?;
    check_enumeration_guard(m)
}

/// Exact state values `V_{pi,chi}` from the linear Bellman system.
///
/// Policy tables are used as given (entries need not be normalized), which
/// makes this usable for finite-difference probes of the objective.
pub fn evaluate(m: &SamgModel, pi: &AgentPolicy, chi: &AdversaryPolicy) -> Result<ValueTable> {
    check_inputs(m, pi, chi)?;
    let (p, r) = induced_chain(m, pi, chi);
    Ok(ValueTable(solve_discounted(&p, &r, m.gamma, false)))
}

/// `sum_s0 Pr(s0) V(s0)`.
pub fn expected_value(m: &SamgModel, v: &ValueTable) -> f64 {
    m.initial.iter().zip(&v.0).map(|(p, x)| p * x).sum()
}

/// Discounted occupancy `d(s) = sum_t gamma^t Pr(s_t = s)` from the
/// initial distribution, via `(I - gamma P^T) d = Pr(s0)`.
pub fn occupancy(m: &SamgModel, pi: &AgentPolicy, chi: &AdversaryPolicy) -> Result<OccupancyTable> {
    check_inputs(m, pi, chi)?;
    let (p, _) = induced_chain(m, pi, chi);
    Ok(OccupancyTable(solve_discounted(&p, &m.initial, m.gamma, true)))
}

/// `Q(s, a) = r(s, a) + gamma sum_s' p(s'|s, a) V(s')`.
pub fn q_from_v(m: &SamgModel, v: &ValueTable) -> QTable {
    let k = m.n_joint_actions();
    let mut values = Vec::with_capacity(m.n_states() * k);
    for s in 0..m.n_states() {
        for a in 0..k {
            let cont: f64 = m
                .transition_row(s, a)
                .iter()
                .zip(&v.0)
                .map(|(p, x)| p * x)
                .sum();
            values.push(m.reward(s, a) + m.gamma * cont);
        }
    }
    QTable { n_joint: k, values }
}

/// Monte-Carlo estimate of the expected discounted return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationResult {
    pub mean: f64,
    pub std_error: f64,
    /// `gamma^horizon * R_max / (1 - gamma)`: the largest possible gap
    /// between the truncated and the infinite-horizon return.
    pub truncation_bound: f64,
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// RNG for one episode: stream `episode` of the ChaCha generator keyed by
/// `seed`, so any episode can be replayed on its own.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Discounted return of one sampled episode truncated at `horizon` steps.
pub fn simulate_episode(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut s = sample(rng, &m.initial);
    let mut actions = vec![0; m.n_agents()];
    let mut ret = CompensatedSum::default();
    // gamma^t kept as an unevaluated sum hi + lo
    let (mut hi, mut lo) = (1.0_f64, 0.0_f64);
    for _ in 0..horizon {
        for (i, a) in actions.iter_mut().enumerate() {
            let rho = sample(rng, chi.row(i, s));
            *a = sample(rng, pi.row(i, rho));
        }
        let joint = m.encode_joint(&actions);
        let r = m.reward(s, joint);
        ret.add(hi * r);
        ret.add(lo * r);
        let p = hi * m.gamma;
        lo = hi.mul_add(m.gamma, -p) + lo * m.gamma;
        hi = p;
        s = sample(rng, m.transition_row(s, joint));
    }
    ret.total()
}

/// Neumaier summation; long discounted sums otherwise drift by
/// `O(horizon * eps)`.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    xs.into_iter().for_each(|x| acc.add(x));
    acc.total()
}

/// Monte-Carlo evaluation of `sum_{t < horizon} gamma^t r_t`. Episodes run
/// in parallel, each on its own stream; the result does not depend on
/// scheduling.
pub fn simulate(
    m: &SamgModel,
    pi: &AgentPolicy,
    chi: &AdversaryPolicy,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<SimulationResult> {
    if episodes == 0 || horizon == 0 {
        return Err(SamgError::InvalidArgument(
            "episodes and horizon must be at least 1".into(),
        ));
    }
    m.ensure_valid()?;
    pi.ensure_valid(m)?;
    chi.ensure_valid(m)?;
    let returns: Vec<f64> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| simulate_episode(m, pi, chi, horizon, &mut episode_rng(seed, e)))
        .collect();
    let n = returns.len() as f64;
    let mean = compensated_sum(returns.iter().copied()) / n;
    let std_error = if returns.len() > 1 {
        let var = compensated_sum(returns.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(SimulationResult {
        mean,
        std_error,
        truncation_bound: m.gamma.powi(horizon as i32) * m.value_bound(),
    })
}
