use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SamgModel;
use crate::error::{Result, SamgError};

/// Generates a random valid model, deterministic in `seed`.
///
/// Transition rows are normalized uniform draws, rewards are uniform in
/// `[-1, 1]`, `gamma = 0.9` and the initial distribution is uniform. Each
/// `P^i_s` holds `s` plus `perturb_size - 1` distinct other states.
pub fn random_game(
    seed: u64,
    n_agents: usize,
    n_states: usize,
    n_actions: usize,
    perturb_size: usize,
) -> Result<SamgModel> {
    if n_agents == 0 || n_states == 0 || n_actions == 0 || perturb_size == 0 {
        return Err(SamgError::InvalidArgument(
            "random_game counts must all be at least 1".into(),
        ));
    }
    if perturb_size > n_states {
        return Err(SamgError::InvalidArgument(format!(
            "perturb_size {perturb_size} exceeds the number of states {n_states}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (1..=n_states).map(|k| format!("s{k}")).collect();
    let actions = (1..=n_actions).map(|k| format!("a{k}")).collect::<Vec<_>>();
    let mut m = SamgModel::empty(states, vec![actions; n_agents], 0.9);

    for s in 0..n_states {
        for joint in 0..m.n_joint_actions() {
            let row = m.transition_row_mut(s, joint);
            for p in row.iter_mut() {
                // (0, 1] keeps every row strictly positive
                *p = 1.0 - rng.gen::<f64>();
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            m.set_reward(s, joint, rng.gen_range(-1.0..=1.0));
        }
    }
    for i in 0..n_agents {
        for s in 0..n_states {
            let mut set: Vec<usize> = sample(&mut rng, n_states - 1, perturb_size - 1)
                .into_iter()
                .map(|k| if k >= s { k + 1 } else { k })
                .collect();
            set.push(s);
            set.sort_unstable();
            m.perturbation[i][s] = set;
        }
    }
    Ok(m)
}
