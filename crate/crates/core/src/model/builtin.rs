use super::SamgModel;
use crate::error::{Result, SamgError};

pub const BUILTIN_GAMES: [&str; 2] = ["fig4", "fig5"];

/// The two-agent two-state coordination counterexamples.
///
/// Both agents share reward 1 for matching actions at `s1` and for
/// mismatched actions at `s2`. In `fig4`, matching at `s1` moves the game to
/// `s2` and mismatching keeps it at `s1`; `fig5` reverses the `s1` transitions
/// so that matching keeps the game at `s1`. At `s2` both games stay on a
/// mismatch and move to `s1` on a match. Every adversary may show either
/// state, `gamma = 0.99`, and the initial state is uniform.
pub fn builtin_game(name: &str) -> Result<SamgModel> {
    let s1_on_match = match name {
        "fig4" => 1,
        "fig5" => 0,
        _ => return Err(SamgError::UnknownGame(name.to_string())),
    };
    let ids = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let actions = ids(&["a1", "a2"]);
    let mut m = SamgModel::empty(ids(&["s1", "s2"]), vec![actions.clone(), actions], 0.99);
    for joint in 0..m.n_joint_actions() {
        let a = m.decode_joint(joint);
        let same = a[0] == a[1];
        let (next_s1, next_s2) = if same { (s1_on_match, 0) } else { (1 - s1_on_match, 1) };
        m.transition_row_mut(0, joint)[next_s1] = 1.0;
        m.transition_row_mut(1, joint)[next_s2] = 1.0;
        m.set_reward(0, joint, if same { 1.0 } else { 0.0 });
        m.set_reward(1, joint, if same { 0.0 } else { 1.0 });
    }
    m.perturbation = vec![vec![vec![0, 1]; 2]; 2];
    Ok(m)
}
