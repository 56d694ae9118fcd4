//! Experiment orchestration: one cell per (game instance, algorithm, seed).
//!
//! Each cell verifies the deviation identity (unless trusted), computes the
//! mismatch report, then interleaves exact evaluation, Nash-gap measurement
//! and the PMD step so every iteration row carries gaps, potential, running
//! regret, both bound columns and the regularizer-specific improvement
//! metric. Cells are deterministic given the config and seed.

use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mpg_core::eval::evaluate;
use mpg_core::game::{verify_mpg, JointPolicy};
use mpg_core::metrics::{
    c_contribution, mismatch_coefficients, nash_gap_from_bundle, theorem_bound_parts,
    iteration_bound_parts, MismatchMethod, MismatchReport,
};
use mpg_core::oracle::{
    deterministic_policy_count, enumerate_deterministic_policies, fd_gradient_oracle,
    mc_value_oracle, projection_oracle, random_deviation_value, truncation_horizon, OracleReport,
    PolicyScope,
};
use mpg_core::pmd::{
    pmd_step, project_simplex, theorem_step_size, InitialPolicy, PmdConfig, Regularizer, StepSize,
};
use mpg_core::{Game64, Policy64, Potential64};

use crate::config::{
    AlgorithmSpec, ExperimentConfig, GameSource, NuChoice, StepSizeSpec, TheoremKeyword,
};

/// Kappa upper bound selected by the configured reference distribution:
/// nu = rho uses the brute-forced kappa_rho, nu = uniform uses |S|, and
/// `both` takes their minimum (the tightest valid choice).
fn kappa_for_nu(nu: NuChoice, mismatch: &MismatchSummary, num_states: usize) -> f64 {
    match nu {
        NuChoice::Rho => mismatch.kappa_rho,
        NuChoice::Uniform => num_states as f64,
        NuChoice::Both => mismatch.kappa_tilde_upper,
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub trust_mpg: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub worst_gap: f64,
    pub per_player_gaps: Vec<f64>,
    pub potential: f64,
    pub running_nash_regret: f64,
    /// Bound with the reference distribution nu = rho (kappa_rho).
    pub thm_bound_rho: f64,
    /// Bound with nu = uniform (kappa upper bound |S|).
    pub thm_bound_uniform: f64,
    /// KL: sum over players and states of log Z; Euclidean: total squared
    /// policy displacement.
    pub reg_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MismatchSummary {
    pub kappa_rho: f64,
    pub kappa_tilde_upper: f64,
    pub method: String,
}

impl From<&MismatchReport<f64>> for MismatchSummary {
    fn from(r: &MismatchReport<f64>) -> Self {
        Self {
            kappa_rho: r.kappa_rho,
            kappa_tilde_upper: r.kappa_tilde_upper,
            method: match r.method {
                MismatchMethod::ExactEnumeration => "exact-enumeration".into(),
                MismatchMethod::BoundOnly => "bound-only".into(),
            },
        }
    }
}

/// Everything produced by one run cell; serializes to `artifact.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub label: String,
    pub algorithm: String,
    pub advantage_form: bool,
    pub num_players: usize,
    pub num_states: usize,
    pub action_counts: Vec<usize>,
    pub discount: f64,
    pub seed: u64,
    pub phi_max: f64,
    pub step_size: f64,
    pub epsilon: f64,
    pub iterations_run: usize,
    pub mismatch: MismatchSummary,
    /// None when the config trusted the game.
    pub mpg_residual: Option<f64>,
    /// Oracle reports attached to this run (the deviation-identity check;
    /// the full suite lives behind the `certify` verb).
    pub certification: Vec<OracleReport>,
    pub rows: Vec<TraceRow>,
    /// Running minimum of the per-iterate greedy mass; an upper bound on the
    /// infinite-horizon constant (KL runs only).
    pub empirical_c_upper: Option<f64>,
    pub nash_regret: f64,
    pub iterations_to_epsilon: Option<usize>,
    pub content_hash: String,
    /// Timing metadata; excluded from the CSV bodies so reruns are
    /// byte-identical.
    pub wall_clock_ms: u128,
}

fn content_hash(parts: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(parts).expect("hash payload serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_step_size(
    spec: &AlgorithmSpec,
    game: &Game64,
    potential: &Potential64,
) -> anyhow::Result<f64> {
    Ok(match spec.step_size {
        StepSizeSpec::Fixed(e) => e,
        StepSizeSpec::Named(TheoremKeyword::Theorem) => {
            theorem_step_size(spec.regularizer.into(), game, potential)
                .map_err(|e| anyhow::anyhow!("step size: {e}"))?
        }
    })
}

/// Runs one cell: PMD with per-iteration exact gap measurement.
pub fn run_cell(
    game: &Game64,
    potential: &Potential64,
    spec: &AlgorithmSpec,
    seed: u64,
    label: String,
    config: &ExperimentConfig,
    overrides: &Overrides,
) -> anyhow::Result<RunArtifact> {
    let start = Instant::now();
    let epsilon = overrides.epsilon.unwrap_or(config.epsilon);
    let trust = overrides.trust_mpg || config.trust_mpg;

    let mut certification: Vec<OracleReport> = Vec::new();
    let mpg_residual = if trust {
        None
    } else {
        let residual = verify_mpg(game, potential, Some(config.enumeration_cap))
            .map_err(|e| anyhow::anyhow!(
                "deviation-identity check refused: {e}; raise enumeration_cap or pass --trust-mpg"
            ))?;
        if residual > config.mpg_tolerance {
            bail!(
                "game failed the potential deviation identity (residual {residual:e} > {:e}); \
                 pass --trust-mpg only for games certified elsewhere",
                config.mpg_tolerance
            );
        }
        certification.push(OracleReport::new(
            "mpg_deviation_identity",
            label.clone(),
            residual,
            0.0,
            config.mpg_tolerance,
        ));
        Some(residual)
    };

    let mismatch = mismatch_coefficients(game, Some(config.enumeration_cap))
        .map_err(|e| anyhow::anyhow!("mismatch coefficients: {e}"))?;
    let regularizer: Regularizer = spec.regularizer.into();
    let eta = resolve_step_size(spec, game, potential)?;
    let pmd_config = PmdConfig {
        regularizer,
        step_size: StepSize::Fixed(eta),
        num_iterations: spec.iterations,
        advantage_form: spec.advantage_form && regularizer == Regularizer::Kl,
        initial_policy: InitialPolicy::Uniform,
    };

    let phi_max = potential.phi_max();
    let s_n = game.num_states();
    let kappa_rho_bound = mismatch.kappa_rho;
    let kappa_uniform_bound = s_n as f64;

    let mut policy: Policy64 = JointPolicy::uniform(s_n, game.action_counts());
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut gap_sum = 0.0f64;
    let mut c_min = f64::INFINITY;
    let mut iterations_to_epsilon = None;
    for t in 1..=spec.iterations {
        let bundle = evaluate(game, &policy, Some(potential))
            .map_err(|e| anyhow::anyhow!("evaluation failed at t={t}: {e}"))?;
        let gaps = nash_gap_from_bundle(game, &policy, &bundle)
            .map_err(|e| anyhow::anyhow!("nash gap failed at t={t}: {e}"))?;
        gap_sum += gaps.worst;
        let running = gap_sum / t as f64;
        let c_arg = if regularizer == Regularizer::Kl {
            c_min = c_min.min(c_contribution(&policy, &bundle));
            Some(c_min)
        } else {
            None
        };
        let bound = |kappa: f64| -> f64 {
            theorem_bound_parts(regularizer, phi_max, game.discount(), kappa, game.action_counts(), t, c_arg)
                .unwrap_or(f64::INFINITY)
        };
        let (next, record) = pmd_step(game, potential, &policy, &bundle, &pmd_config, t)
            .map_err(|e| anyhow::anyhow!("pmd step failed at t={t}: {e}"))?;
        let reg_metric = match regularizer {
            Regularizer::Kl => record
                .log_z
                .as_ref()
                .map(|lz| lz.iter().flatten().sum::<f64>())
                .unwrap_or(0.0),
            Regularizer::Euclidean => record
                .sq_displacement
                .as_ref()
                .map(|d| d.iter().flatten().sum::<f64>())
                .unwrap_or(0.0),
        };
        rows.push(TraceRow {
            t,
            worst_gap: gaps.worst,
            per_player_gaps: gaps.per_player,
            potential: record.potential,
            running_nash_regret: running,
            thm_bound_rho: bound(kappa_rho_bound),
            thm_bound_uniform: bound(kappa_uniform_bound),
            reg_metric,
        });
        if iterations_to_epsilon.is_none() && running <= epsilon {
            iterations_to_epsilon = Some(t);
            if config.stop_at_epsilon {
                break;
            }
        }
        policy = next;
    }

    let nash_regret = rows.last().map(|r| r.running_nash_regret).unwrap_or(0.0);
    let hash = content_hash(&serde_json::json!({
        "schema_version": crate::config::SCHEMA_VERSION,
        "game": config.game,
        "algorithm": spec,
        "seed": seed,
        "epsilon": epsilon,
        "num_players": game.num_players(),
        "stop_at_epsilon": config.stop_at_epsilon,
    }));

    Ok(RunArtifact {
        schema_version: crate::config::SCHEMA_VERSION,
        label,
        algorithm: spec.label().to_string(),
        advantage_form: spec.advantage_form && regularizer == Regularizer::Kl,
        num_players: game.num_players(),
        num_states: s_n,
        action_counts: game.action_counts().to_vec(),
        discount: game.discount(),
        seed,
        phi_max,
        step_size: eta,
        epsilon,
        iterations_run: rows.len(),
        mismatch: (&mismatch).into(),
        mpg_residual,
        certification,
        rows,
        empirical_c_upper: if regularizer == Regularizer::Kl { Some(c_min) } else { None },
        nash_regret,
        iterations_to_epsilon,
        content_hash: hash,
        wall_clock_ms: start.elapsed().as_millis(),
    })
}

fn build_game(
    config: &ExperimentConfig,
    seed: u64,
    num_players: Option<usize>,
) -> anyhow::Result<(Game64, Potential64)> {
    match &config.game {
        GameSource::Generator(spec) => spec.build(seed, num_players),
        GameSource::File { path } => {
            if num_players.is_some() {
                bail!("player-count sweeps need a generator game source");
            }
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading game file {path}"))?;
            let (game, potential) = mpg_core::format::load_game::<f64>(&text)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let potential =
                potential.ok_or_else(|| anyhow::anyhow!("game file must include a potential"))?;
            Ok((game, potential))
        }
    }
}

/// Runs every (algorithm, seed) cell for a single game spec (`run`), or the
/// full player sweep (`sweep`).
pub fn run_experiment(
    config: &ExperimentConfig,
    overrides: &Overrides,
    sweep: bool,
) -> anyhow::Result<Vec<RunArtifact>> {
    config.validate()?;
    let seeds: Vec<u64> = match overrides.seed {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    };
    let player_axis: Vec<Option<usize>> = if sweep {
        match &config.sweep_num_players {
            Some(ns) => ns.iter().map(|&n| Some(n)).collect(),
            None => bail!("sweep requires sweep_num_players in the config"),
        }
    } else {
        vec![None]
    };

    // Distinguish repeated regularizers in the cell labels.
    let mut stems: Vec<String> = Vec::with_capacity(config.algorithms.len());
    for (idx, spec) in config.algorithms.iter().enumerate() {
        let repeats = config.algorithms[..idx]
            .iter()
            .filter(|s| s.label() == spec.label())
            .count();
        stems.push(if repeats == 0 {
            spec.label().to_string()
        } else {
            format!("{}{}", spec.label(), repeats + 1)
        });
    }
    let mut artifacts = Vec::new();
    for &n in &player_axis {
        for (spec, stem) in config.algorithms.iter().zip(&stems) {
            for &seed in &seeds {
                let (game, potential) = build_game(config, seed, n)?;
                let label = match n {
                    Some(n) => format!("{stem}_n{n}_seed{seed}"),
                    None => format!("{stem}_seed{seed}"),
                };
                artifacts.push(run_cell(&game, &potential, spec, seed, label, config, overrides)?);
            }
        }
    }
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// Scaling summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub num_players: usize,
    pub algorithm: String,
    /// Median over seeds; None when any seed failed to reach epsilon.
    pub median_iterations_to_epsilon: Option<f64>,
    /// Median over seeds of the closed-form iteration bound at epsilon
    /// (KL uses each run's empirical c upper bound).
    pub median_theorem_iteration_bound: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Aggregates sweep artifacts into one row per (N, algorithm).
pub fn scaling_summary(artifacts: &[RunArtifact], epsilon: f64) -> anyhow::Result<Vec<ScalingRow>> {
    scaling_summary_with_nu(artifacts, epsilon, NuChoice::Both)
}

/// [`scaling_summary`] with an explicit reference-distribution choice for
/// the bound column.
pub fn scaling_summary_with_nu(
    artifacts: &[RunArtifact],
    epsilon: f64,
    nu: NuChoice,
) -> anyhow::Result<Vec<ScalingRow>> {
    let mut keys: Vec<(usize, String)> = artifacts
        .iter()
        .map(|a| (a.num_players, a.algorithm.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for (n, algorithm) in keys {
        let cells: Vec<&RunArtifact> = artifacts
            .iter()
            .filter(|a| a.num_players == n && a.algorithm == algorithm)
            .collect();
        let reg = if algorithm == "kl" { Regularizer::Kl } else { Regularizer::Euclidean };
        let mut iters = Vec::new();
        let mut bounds = Vec::new();
        let mut all_reached = true;
        for cell in &cells {
            match cell.iterations_to_epsilon {
                Some(t) => iters.push(t as f64),
                None => all_reached = false,
            }
            let c = cell.empirical_c_upper;
            let kappa = kappa_for_nu(nu, &cell.mismatch, cell.num_states);
            let bound = iteration_bound_parts(
                reg,
                cell.phi_max,
                cell.discount,
                kappa,
                &cell.action_counts,
                epsilon,
                c,
            )
            .map_err(|e| anyhow::anyhow!("iteration bound: {e}"))?;
            bounds.push(bound);
        }
        rows.push(ScalingRow {
            num_players: n,
            algorithm,
            median_iterations_to_epsilon: if all_reached && !iters.is_empty() {
                Some(median(iters))
            } else {
                None
            },
            median_theorem_iteration_bound: median(bounds),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Certification (oracle suite)
// ---------------------------------------------------------------------------

/// Runs the full oracle suite against the configured game family.
pub fn certify(config: &ExperimentConfig, overrides: &Overrides) -> anyhow::Result<Vec<OracleReport>> {
    config.validate()?;
    let seed = overrides.seed.unwrap_or(config.seeds[0]);
    let (game, potential) = build_game(config, seed, None)?;
    let mut reports = Vec::new();

    // Deviation identity.
    let residual = verify_mpg(&game, &potential, Some(config.enumeration_cap))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    reports.push(OracleReport::new(
        "mpg_deviation_identity",
        format!("N={} S={} seed={seed}", game.num_players(), game.num_states()),
        residual,
        0.0,
        1e-10,
    ));

    // Simplex projection vs active-set oracle.
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let dim = rng.gen_range(2..=8);
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let built = project_simplex(&v).map_err(|e| anyhow::anyhow!("{e}"))?;
            let oracle = projection_oracle(&v).map_err(|e| anyhow::anyhow!("{e}"))?;
            for (b, o) in built.iter().zip(&oracle) {
                worst = worst.max((b - o).abs());
            }
        }
        reports.push(OracleReport::new(
            "simplex_projection",
            "200 random vectors, dims 2-8",
            worst,
            0.0,
            1e-9,
        ));
    }

    // Exact value vs Monte-Carlo rollouts.
    {
        let policy = JointPolicy::random_interior(game.num_states(), game.action_counts(), seed + 1);
        let bundle = evaluate(&game, &policy, Some(&potential)).map_err(|e| anyhow::anyhow!("{e}"))?;
        let exact = bundle.value(0, game.initial_dist());
        let horizon = truncation_horizon(game.discount(), game.max_abs_reward(), 1e-8);
        let est = mc_value_oracle(&game, &policy, 0, 20_000, horizon, seed + 2)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        reports.push(OracleReport::new(
            "monte_carlo_value",
            format!("player 0, {} trajectories, horizon {}", est.num_trajectories, est.horizon),
            exact,
            est.mean,
            3.0 * est.std_error + est.truncation_bound,
        ));
    }

    // Gradient formula vs central differences.
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
        let policy = JointPolicy::random_interior(game.num_states(), game.action_counts(), seed + 3);
        let mu: Vec<f64> = game.initial_dist().to_vec();
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let i = rng.gen_range(0..game.num_players());
            let s = rng.gen_range(0..game.num_states());
            let a = rng.gen_range(0..game.action_counts()[i]);
            let built = mpg_core::eval::policy_gradient_entry(&game, &policy, i, s, a, &mu)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let fd = fd_gradient_oracle(&game, &policy, i, s, a, &mu, 1e-5)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            worst = worst.max((built - fd).abs());
        }
        reports.push(OracleReport::new(
            "policy_gradient_finite_difference",
            "20 random entries, h=1e-5",
            worst,
            0.0,
            1e-6,
        ));
    }

    // Deterministic-policy enumerator: count and order stability.
    {
        let count = deterministic_policy_count(&game, PolicyScope::Joint);
        let enumerated = enumerate_deterministic_policies(&game, PolicyScope::Joint, Some(config.enumeration_cap))
            .map_err(|e| anyhow::anyhow!("{e}"))?
            .count() as f64;
        reports.push(OracleReport::new(
            "deterministic_policy_enumeration",
            "joint scope, exhaustive count",
            enumerated,
            count as f64,
            0.0,
        ));
    }

    // Best response dominates random deviations.
    {
        let policy = JointPolicy::random_interior(game.num_states(), game.action_counts(), seed + 4);
        let br = mpg_core::metrics::best_response(&game, &policy, 0)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let probe = random_deviation_value(&game, &policy, 0, 100, seed + 5)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let violation = (probe - br.value).max(0.0);
        reports.push(OracleReport {
            oracle: "best_response_dominance".into(),
            instance: "player 0 vs 100 random deviations".into(),
            built_value: br.value,
            oracle_value: probe,
            abs_error: violation,
            rel_error: if br.value.abs() > 0.0 { violation / br.value.abs() } else { 0.0 },
            tolerance: 1e-9,
            pass: violation <= 1e-9,
        });
    }

    Ok(reports)
}

// ---------------------------------------------------------------------------
// Closed-form bound tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub num_players: usize,
    pub algorithm: String,
    pub phi_max: f64,
    pub kappa_tilde_upper: f64,
    pub theorem_step_size: f64,
    /// KL rows only: the t=1 uniform-policy greedy mass, an optimistic
    /// stand-in for the unknowable infinite-horizon c.
    pub assumed_c: Option<f64>,
    pub regret_bound_at_t: f64,
    pub iterations_for_epsilon: f64,
    pub epsilon: f64,
    pub horizon_t: usize,
}

/// Evaluates the closed-form tables without running any dynamics.
pub fn bounds_tables(config: &ExperimentConfig, overrides: &Overrides) -> anyhow::Result<Vec<BoundRow>> {
    config.validate()?;
    let epsilon = overrides.epsilon.unwrap_or(config.epsilon);
    let seed = overrides.seed.unwrap_or(config.seeds[0]);
    let player_axis: Vec<Option<usize>> = match &config.sweep_num_players {
        Some(ns) => ns.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let mut rows = Vec::new();
    for &n in &player_axis {
        let (game, potential) = build_game(config, seed, n)?;
        let mismatch = mismatch_coefficients(&game, Some(config.enumeration_cap))
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let mismatch_summary: MismatchSummary = (&mismatch).into();
        let kappa = kappa_for_nu(config.nu, &mismatch_summary, game.num_states());
        for spec in &config.algorithms {
            let reg: Regularizer = spec.regularizer.into();
            let assumed_c = match reg {
                Regularizer::Kl => Some(
                    game.action_counts()
                        .iter()
                        .map(|&c| 1.0 / c as f64)
                        .fold(f64::INFINITY, f64::min),
                ),
                Regularizer::Euclidean => None,
            };
            let eta = resolve_step_size(spec, &game, &potential)?;
            let bound_t = theorem_bound_parts(
                reg,
                potential.phi_max(),
                game.discount(),
                kappa,
                game.action_counts(),
                spec.iterations,
                assumed_c,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            let iters = iteration_bound_parts(
                reg,
                potential.phi_max(),
                game.discount(),
                kappa,
                game.action_counts(),
                epsilon,
                assumed_c,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            rows.push(BoundRow {
                num_players: game.num_players(),
                algorithm: spec.label().to_string(),
                phi_max: potential.phi_max(),
                kappa_tilde_upper: kappa,
                theorem_step_size: eta,
                assumed_c,
                regret_bound_at_t: bound_t,
                iterations_for_epsilon: iters,
                epsilon,
                horizon_t: spec.iterations,
            });
        }
    }
    Ok(rows)
}
