//! Experiment configuration: JSON with an explicit schema version and
//! unknown-key rejection.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use mpg_core::game::{
    make_dummy_term_mpg, make_identical_interest, make_stateless_congestion,
};
use mpg_core::pmd::Regularizer;
use mpg_core::{Game64, Potential64};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub game: GameSource,
    pub algorithms: Vec<AlgorithmSpec>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Player counts for `sweep`; `run` uses the game spec as-is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_num_players: Option<Vec<usize>>,
    /// Reference distribution(s) for the bound columns.
    #[serde(default)]
    pub nu: NuChoice,
    /// Stop a run once the running Nash regret reaches epsilon.
    #[serde(default)]
    pub stop_at_epsilon: bool,
    /// Skip the deviation-identity check (for games trusted by construction).
    #[serde(default)]
    pub trust_mpg: bool,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
    #[serde(default = "default_mpg_tolerance")]
    pub mpg_tolerance: f64,
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_cap() -> u64 {
    mpg_core::game::DEFAULT_ENUM_CAP
}

fn default_mpg_tolerance() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuChoice {
    Rho,
    Uniform,
    #[default]
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSource {
    Generator(GeneratorSpec),
    File { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    IdenticalInterest,
    DummyTerm,
    Congestion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub num_players: usize,
    #[serde(default = "default_one")]
    pub num_states: usize,
    /// Uniform action count per player; `action_counts` overrides it.
    #[serde(default = "default_two")]
    pub actions_per_player: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub discount: f64,
    /// Congestion only.
    #[serde(default = "default_two")]
    pub num_facilities: usize,
}

fn default_one() -> usize {
    1
}

fn default_two() -> usize {
    2
}

impl GeneratorSpec {
    pub fn build(&self, seed: u64, num_players: Option<usize>) -> anyhow::Result<(Game64, Potential64)> {
        let n = num_players.unwrap_or(self.num_players);
        let counts: Vec<usize> = match (&self.action_counts, num_players) {
            (Some(c), None) => c.clone(),
            // A sweep override discards an explicit per-player list.
            _ => vec![self.actions_per_player; n],
        };
        let built = match self.family {
            Family::IdenticalInterest => {
                make_identical_interest(n, self.num_states, &counts, self.discount, seed)
            }
            Family::DummyTerm => {
                make_dummy_term_mpg(n, self.num_states, &counts, self.discount, seed)
            }
            Family::Congestion => make_stateless_congestion(n, self.num_facilities, seed),
        };
        built.map_err(|e| anyhow::anyhow!("game construction failed: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerChoice {
    Euclidean,
    Kl,
}

impl From<RegularizerChoice> for Regularizer {
    fn from(r: RegularizerChoice) -> Self {
        match r {
            RegularizerChoice::Euclidean => Regularizer::Euclidean,
            RegularizerChoice::Kl => Regularizer::Kl,
        }
    }
}

/// `"theorem"` or an explicit positive number (Q-value scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSizeSpec {
    Fixed(f64),
    Named(TheoremKeyword),
}

// Keyword variant so serde(untagged) rejects arbitrary strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremKeyword {
    Theorem,
}

impl Default for StepSizeSpec {
    fn default() -> Self {
        StepSizeSpec::Named(TheoremKeyword::Theorem)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub regularizer: RegularizerChoice,
    #[serde(default)]
    pub step_size: StepSizeSpec,
    pub iterations: usize,
    /// KL only; ignored for Euclidean.
    #[serde(default = "default_true")]
    pub advantage_form: bool,
}

fn default_true() -> bool {
    true
}

impl AlgorithmSpec {
    pub fn label(&self) -> &'static str {
        match self.regularizer {
            RegularizerChoice::Euclidean => "euclidean",
            RegularizerChoice::Kl => "kl",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(json).context("config does not match the experiment schema")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.algorithms.is_empty() {
            bail!("at least one algorithm is required");
        }
        for a in &self.algorithms {
            if a.iterations == 0 {
                bail!("iterations must be at least 1");
            }
            if let StepSizeSpec::Fixed(e) = a.step_size {
                if !(e > 0.0) {
                    bail!("explicit step sizes must be positive");
                }
            }
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be positive");
        }
        if let Some(ns) = &self.sweep_num_players {
            if ns.is_empty() {
                bail!("sweep_num_players must be nonempty when present");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "schema_version": 1,
            "game": {"generator": {"family": "congestion", "num_players": 2, "num_facilities": 2}},
            "algorithms": [{"regularizer": "kl", "iterations": 100}],
            "seeds": [1]
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(c.epsilon, 0.05);
        assert_eq!(c.nu, NuChoice::Both);
        assert!(matches!(c.algorithms[0].step_size, StepSizeSpec::Named(TheoremKeyword::Theorem)));
        assert!(c.algorithms[0].advantage_form);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_versions() {
        let with_unknown = minimal_json().replace("\"seeds\"", "\"extra\": 1, \"seeds\"");
        assert!(ExperimentConfig::from_json(&with_unknown).is_err());
        let wrong_version = minimal_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ExperimentConfig::from_json(&wrong_version).is_err());
        let no_seeds = minimal_json().replace("[1]", "[]");
        assert!(ExperimentConfig::from_json(&no_seeds).is_err());
    }

    #[test]
    fn explicit_step_sizes_parse_as_numbers() {
        let json = minimal_json().replace(
            r#"{"regularizer": "kl", "iterations": 100}"#,
            r#"{"regularizer": "euclidean", "iterations": 5, "step_size": 0.01}"#,
        );
        let c = ExperimentConfig::from_json(&json).unwrap();
        assert!(matches!(c.algorithms[0].step_size, StepSizeSpec::Fixed(x) if x == 0.01));
    }
}
