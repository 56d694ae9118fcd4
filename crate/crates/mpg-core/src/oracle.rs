//! Independent brute-force oracles certifying the main build.
//!
//! Oracles deliberately avoid the numerical kernels they certify: the
//! projection oracle enumerates active sets instead of sorting, the value
//! oracle samples rollouts instead of solving linear systems, and the
//! gradient oracle differences values instead of applying the gradient
//! formula. They share only the game data model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate_probe;
use crate::game::{JointPolicy, MarkovGame, DEFAULT_ENUM_CAP};
use crate::joint::next_profile;
use crate::scalar::Scalar;

/// Outcome of one oracle-vs-build comparison, ready for the certification
/// output stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub oracle: String,
    pub instance: String,
    pub built_value: f64,
    pub oracle_value: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(
        oracle: impl Into<String>,
        instance: impl Into<String>,
        built_value: f64,
        oracle_value: f64,
        tolerance: f64,
    ) -> Self {
        let abs_error = (built_value - oracle_value).abs();
        let scale = built_value.abs().max(oracle_value.abs());
        let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
        Self {
            oracle: oracle.into(),
            instance: instance.into(),
            built_value,
            oracle_value,
            abs_error,
            rel_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }
}

// ---------------------------------------------------------------------------
// Simplex projection oracle
// ---------------------------------------------------------------------------

/// Exact simplex projection by enumerating all nonempty candidate supports
/// and solving the equality-constrained minimizer on each. Dimension <= 12.
pub fn projection_oracle<F: Scalar>(v: &[F]) -> Result<Vec<F>> {
    let n = v.len();
    if n == 0 || n > 12 {
        return Err(Error::InvalidArgument(format!(
            "projection oracle supports dimensions 1..=12, got {n}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection oracle input"));
    }
    let mut best: Option<(F, Vec<F>)> = None;
    for mask in 1u32..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
        let k = F::of_usize(support.len());
        let sum: F = support.iter().map(|&j| v[j]).sum();
        let shift = (F::one() - sum) / k;
        let mut x = vec![F::zero(); n];
        let mut feasible = true;
        for &j in &support {
            x[j] = v[j] + shift;
            if x[j] < F::zero() {
                feasible = false;
                break;
            }
        }
        if !feasible {
            continue;
        }
        let dist: F = x
            .iter()
            .zip(v)
            .map(|(&xi, &vi)| (xi - vi) * (xi - vi))
            .sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    Ok(best.expect("full support is always feasible after shifting").1)
}

// ---------------------------------------------------------------------------
// Monte-Carlo value oracle
// ---------------------------------------------------------------------------

/// A sampled value estimate with its uncertainty.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Deterministic bound on the truncation error of finite rollouts.
    pub truncation_bound: f64,
    pub num_trajectories: usize,
    pub horizon: usize,
}

/// Smallest horizon H with `gamma^H * max|r| / (1 - gamma) < target`.
pub fn truncation_horizon(gamma: f64, max_abs_reward: f64, target: f64) -> usize {
    if gamma <= 0.0 || max_abs_reward == 0.0 {
        return 1;
    }
    let tail0 = max_abs_reward / (1.0 - gamma);
    let mut h = ((target / tail0).ln() / gamma.ln()).ceil() as i64;
    if h < 1 {
        h = 1;
    }
    h as usize
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Rollout estimate of `V_i(rho)` from `num_trajectories` independent
/// truncated trajectories. Trajectory `k` draws from stream `k` of a
/// counter-based generator, so the estimate is reproducible given
/// `(seed, trajectory index)` regardless of scheduling.
pub fn mc_value_oracle<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    player: usize,
    num_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<McEstimate> {
    policy.matches_game(game)?;
    if player >= game.num_players() || num_trajectories == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("bad Monte-Carlo oracle arguments".into()));
    }
    let n = game.num_players();
    let s_n = game.num_states();
    let gamma = game.discount().to_f64_lossy();
    let rho: Vec<f64> = game.initial_dist().iter().map(|p| p.to_f64_lossy()).collect();
    let policy_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..s_n)
                .flat_map(|s| policy.row(i, s).iter().map(|p| p.to_f64_lossy()))
                .collect()
        })
        .collect();
    let counts = game.action_counts().to_vec();

    let mut returns = vec![0.0f64; num_trajectories];
    let mut profile = vec![0usize; n];
    for (traj, ret_slot) in returns.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(traj as u64);
        let mut s = sample_index(&rho, rng.gen::<f64>());
        let mut ret = 0.0f64;
        let mut disc = 1.0f64;
        for _ in 0..horizon {
            for i in 0..n {
                let row = &policy_rows[i][s * counts[i]..(s + 1) * counts[i]];
                profile[i] = sample_index(row, rng.gen::<f64>());
            }
            let ja = game.joint().encode(&profile);
            ret += disc * game.reward(player, s, ja).to_f64_lossy();
            disc *= gamma;
            if disc == 0.0 {
                break;
            }
            let p_row: Vec<f64> = game
                .transition_row(s, ja)
                .iter()
                .map(|p| p.to_f64_lossy())
                .collect();
            s = sample_index(&p_row, rng.gen::<f64>());
        }
        *ret_slot = ret;
    }
    let m = num_trajectories as f64;
    let mean = returns.iter().sum::<f64>() / m;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1.0).max(1.0);
    let std_error = (var / m).sqrt();
    let truncation_bound = if gamma > 0.0 {
        gamma.powi(horizon as i32) * game.max_abs_reward().to_f64_lossy() / (1.0 - gamma)
    } else {
        0.0
    };
    Ok(McEstimate { mean, std_error, truncation_bound, num_trajectories, horizon })
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

/// Central finite difference of `V_i(mu)` in the policy entry
/// `pi_i(a_i | s)` under the linear extension of the policy table.
pub fn fd_gradient_oracle<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    i: usize,
    s: usize,
    a_i: usize,
    mu: &[F],
    h: F,
) -> Result<F> {
    let hf = h.to_f64_lossy();
    if !(1e-7..=1e-3).contains(&hf) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {hf:e} outside [1e-7, 1e-3]"
        )));
    }
    let plus = policy.perturb_entry(i, s, a_i, h)?;
    let minus = policy.perturb_entry(i, s, a_i, -h)?;
    let v_plus = evaluate_probe(game, &plus, None)?.value(i, mu);
    let v_minus = evaluate_probe(game, &minus, None)?.value(i, mu);
    Ok((v_plus - v_minus) / (F::of(2.0) * h))
}

// ---------------------------------------------------------------------------
// Deterministic policy enumeration
// ---------------------------------------------------------------------------

/// Enumeration scope: one player's policies, or joint product policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyScope {
    Player(usize),
    Joint,
}

/// Number of deterministic policies in scope.
pub fn deterministic_policy_count<F: Scalar>(game: &MarkovGame<F>, scope: PolicyScope) -> u128 {
    let per = |i: usize| -> u128 {
        (0..game.num_states()).fold(1u128, |acc, _| {
            acc.saturating_mul(game.action_counts()[i] as u128)
        })
    };
    match scope {
        PolicyScope::Player(i) => per(i),
        PolicyScope::Joint => (0..game.num_players()).fold(1u128, |acc, i| acc.saturating_mul(per(i))),
    }
}

/// Lexicographic iterator over deterministic policies: items map each
/// in-scope player to its action per state; the last player's last state
/// varies fastest. Exhaustive and duplicate-free.
pub struct DetPolicyIter {
    players: Vec<usize>,
    num_states: usize,
    radices: Vec<usize>,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for DetPolicyIter {
    type Item = Vec<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item: Vec<Vec<usize>> = (0..self.players.len())
            .map(|k| self.digits[k * self.num_states..(k + 1) * self.num_states].to_vec())
            .collect();
        if !next_profile(&mut self.digits, &self.radices) {
            self.done = true;
        }
        Some(item)
    }
}

/// Enumerates deterministic policies for the given scope, refusing when the
/// count exceeds `cap` (default [`DEFAULT_ENUM_CAP`]).
pub fn enumerate_deterministic_policies<F: Scalar>(
    game: &MarkovGame<F>,
    scope: PolicyScope,
    cap: Option<u64>,
) -> Result<DetPolicyIter> {
    let cap = cap.unwrap_or(DEFAULT_ENUM_CAP);
    if let PolicyScope::Player(i) = scope {
        if i >= game.num_players() {
            return Err(Error::InvalidArgument(format!("player index {i} out of range")));
        }
    }
    let needed = deterministic_policy_count(game, scope);
    if needed > cap as u128 {
        return Err(Error::EnumerationCap { needed, cap });
    }
    let players: Vec<usize> = match scope {
        PolicyScope::Player(i) => vec![i],
        PolicyScope::Joint => (0..game.num_players()).collect(),
    };
    let num_states = game.num_states();
    let radices: Vec<usize> = players
        .iter()
        .flat_map(|&i| std::iter::repeat(game.action_counts()[i]).take(num_states))
        .collect();
    let digits = vec![0usize; radices.len()];
    Ok(DetPolicyIter { players, num_states, radices, digits, done: false })
}

/// Best value player `i` attains over `trials` random stochastic unilateral
/// deviations. A lower probe on the best-response value.
pub fn random_deviation_value<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    i: usize,
    trials: usize,
    seed: u64,
) -> Result<F> {
    policy.matches_game(game)?;
    let s_n = game.num_states();
    let mut best = F::neg_infinity();
    for k in 0..trials {
        let dev = JointPolicy::random_interior(s_n, game.action_counts(), seed.wrapping_add(k as u64));
        let mut rows: Vec<Vec<F>> = (0..game.num_players())
            .map(|j| (0..s_n).flat_map(|s| policy.row(j, s).to_vec()).collect())
            .collect();
        rows[i] = (0..s_n).flat_map(|s| dev.row(i, s).to_vec()).collect();
        let mixed = JointPolicy::from_rows(s_n, game.action_counts(), rows)?;
        let bundle = crate::eval::evaluate(game, &mixed, None)?;
        best = best.max(bundle.value(i, game.initial_dist()));
    }
    Ok(best)
}
