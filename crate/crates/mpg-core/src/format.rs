//! Game file format: a JSON document describing a full Markov game with an
//! optional potential. Joint actions are ordered row-major over
//! `(a_1, ..., a_N)` (player 1 slowest), matching [`crate::joint`].
//!
//! Nested array shapes: `transition[s][joint_a][s']`,
//! `rewards[i][s][joint_a]`, `potential[s][joint_a]`. The loader validates
//! every invariant (row sums, ranges, stored `phi_max`) and rejects files
//! with unknown fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalBundle;
use crate::game::{MarkovGame, PotentialSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub num_players: usize,
    pub num_states: usize,
    pub action_counts: Vec<usize>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_max: Option<f64>,
}

fn shape_err(what: &str) -> Error {
    Error::Format(format!("{what} has the wrong shape"))
}

impl GameFile {
    /// Builds the in-memory game (and potential, when present), validating
    /// all invariants.
    pub fn into_game<F: Scalar>(self) -> Result<(MarkovGame<F>, Option<PotentialSpec<F>>)> {
        if self.action_counts.len() != self.num_players {
            return Err(Error::Format("action_counts length != num_players".into()));
        }
        let a: usize = self.action_counts.iter().product();
        let s_n = self.num_states;

        if self.transition.len() != s_n {
            return Err(shape_err("transition"));
        }
        let mut transition = Vec::with_capacity(s_n * a * s_n);
        for per_state in &self.transition {
            if per_state.len() != a {
                return Err(shape_err("transition"));
            }
            for row in per_state {
                if row.len() != s_n {
                    return Err(shape_err("transition"));
                }
                transition.extend(row.iter().map(|&x| F::of(x)));
            }
        }

        if self.rewards.len() != self.num_players {
            return Err(shape_err("rewards"));
        }
        let mut rewards = Vec::with_capacity(self.num_players);
        for per_player in &self.rewards {
            if per_player.len() != s_n {
                return Err(shape_err("rewards"));
            }
            let mut table = Vec::with_capacity(s_n * a);
            for row in per_player {
                if row.len() != a {
                    return Err(shape_err("rewards"));
                }
                table.extend(row.iter().map(|&x| F::of(x)));
            }
            rewards.push(table);
        }

        let initial_dist: Vec<F> = self.initial_dist.iter().map(|&x| F::of(x)).collect();
        let game = MarkovGame::new(
            self.action_counts,
            s_n,
            F::of(self.discount),
            transition,
            rewards,
            initial_dist,
        )?;

        let potential = match (self.potential, self.phi_max) {
            (None, None) => None,
            (None, Some(_)) => {
                return Err(Error::Format("phi_max given without a potential table".into()))
            }
            (Some(table), stored_max) => {
                if table.len() != s_n {
                    return Err(shape_err("potential"));
                }
                let mut phi = Vec::with_capacity(s_n * a);
                for row in &table {
                    if row.len() != a {
                        return Err(shape_err("potential"));
                    }
                    phi.extend(row.iter().map(|&x| F::of(x)));
                }
                let spec = match stored_max {
                    Some(m) => PotentialSpec::from_parts(phi, F::of(m), a)?,
                    None => PotentialSpec::new(phi, a)?,
                };
                Some(spec)
            }
        };
        Ok((game, potential))
    }

    /// Serializes a game (and optional potential) into the file layout.
    pub fn from_game<F: Scalar>(game: &MarkovGame<F>, potential: Option<&PotentialSpec<F>>) -> Self {
        let s_n = game.num_states();
        let a = game.num_joint_actions();
        let transition = (0..s_n)
            .map(|s| {
                (0..a)
                    .map(|ja| {
                        game.transition_row(s, ja)
                            .iter()
                            .map(|x| x.to_f64_lossy())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..game.num_players())
            .map(|i| {
                (0..s_n)
                    .map(|s| {
                        (0..a)
                            .map(|ja| game.reward(i, s, ja).to_f64_lossy())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let potential_table = potential.map(|p| {
            (0..s_n)
                .map(|s| (0..a).map(|ja| p.entry(s, ja).to_f64_lossy()).collect())
                .collect()
        });
        Self {
            num_players: game.num_players(),
            num_states: s_n,
            action_counts: game.action_counts().to_vec(),
            discount: game.discount().to_f64_lossy(),
            initial_dist: game.initial_dist().iter().map(|x| x.to_f64_lossy()).collect(),
            transition,
            rewards,
            potential: potential_table,
            phi_max: potential.map(|p| p.phi_max().to_f64_lossy()),
        }
    }
}

/// Parses a game file from JSON text.
pub fn load_game<F: Scalar>(json: &str) -> Result<(MarkovGame<F>, Option<PotentialSpec<F>>)> {
    let file: GameFile =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("invalid game file: {e}")))?;
    file.into_game()
}

/// Serializes a game to pretty JSON.
pub fn save_game<F: Scalar>(game: &MarkovGame<F>, potential: Option<&PotentialSpec<F>>) -> String {
    let file = GameFile::from_game(game, potential);
    serde_json::to_string_pretty(&file).expect("game files serialize")
}

/// Debug dump of an evaluation bundle for the experiment output stream.
pub fn bundle_debug_json<F: Scalar>(bundle: &EvalBundle<F>) -> serde_json::Value {
    let n = bundle.num_players();
    let to64 = |xs: &[F]| -> Vec<f64> { xs.iter().map(|x| x.to_f64_lossy()).collect() };
    serde_json::json!({
        "q_values": (0..n).map(|i| to64(bundle.q_values(i))).collect::<Vec<_>>(),
        "v_values": (0..n).map(|i| to64(bundle.v_values(i))).collect::<Vec<_>>(),
        "avg_q": (0..n).map(|i| to64(bundle.avg_q(i))).collect::<Vec<_>>(),
        "avg_adv": (0..n).map(|i| to64(bundle.avg_adv(i))).collect::<Vec<_>>(),
        "occupancy": to64(bundle.occupancy()),
        "potential_q": bundle.potential_q().map(to64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::make_dummy_term_mpg;

    #[test]
    fn roundtrip_preserves_the_game() {
        let (game, pot) = make_dummy_term_mpg::<f64>(2, 3, &[2, 3], 0.9, 7).unwrap();
        let json = save_game(&game, Some(&pot));
        let (loaded, loaded_pot) = load_game::<f64>(&json).unwrap();
        assert_eq!(loaded, game);
        assert_eq!(loaded_pot.unwrap(), pot);
    }

    #[test]
    fn loader_rejects_bad_files() {
        let (game, pot) = make_dummy_term_mpg::<f64>(2, 2, &[2, 2], 0.9, 7).unwrap();
        let good = save_game(&game, Some(&pot));

        // Unknown field.
        let with_unknown = good.replacen("\"num_players\"", "\"mystery\": 1, \"num_players\"", 1);
        assert!(load_game::<f64>(&with_unknown).is_err());

        // Corrupted transition row sum.
        let mut file: GameFile = serde_json::from_str(&good).unwrap();
        file.transition[0][0][0] += 0.5;
        let json = serde_json::to_string(&file).unwrap();
        assert!(load_game::<f64>(&json).is_err());

        // Stored phi_max that disagrees with the table.
        let mut file: GameFile = serde_json::from_str(&good).unwrap();
        file.phi_max = Some(999.0);
        let json = serde_json::to_string(&file).unwrap();
        assert!(load_game::<f64>(&json).is_err());

        // phi_max without a table.
        let mut file: GameFile = serde_json::from_str(&good).unwrap();
        file.potential = None;
        let json = serde_json::to_string(&file).unwrap();
        assert!(load_game::<f64>(&json).is_err());
    }

    #[test]
    fn loader_accepts_potential_without_stored_max() {
        let (game, pot) = make_dummy_term_mpg::<f64>(2, 2, &[2, 2], 0.9, 8).unwrap();
        let mut file = GameFile::from_game(&game, Some(&pot));
        file.phi_max = None;
        let json = serde_json::to_string(&file).unwrap();
        let (_, loaded_pot) = load_game::<f64>(&json).unwrap();
        assert_eq!(loaded_pot.unwrap().phi_max(), pot.phi_max());
    }
}
