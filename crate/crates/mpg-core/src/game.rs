//! Finite Markov games, potential functions, joint policies, and the three
//! certified Markov-potential-game families used throughout the crate.
//!
//! A game is the tuple (N players, states S, per-player actions A_i,
//! transition kernel P, per-player rewards r_i, discount gamma, initial
//! distribution rho). A potential game additionally carries a statewise
//! potential table phi(s, a) whose discounted cumulative value matches every
//! player's value change under unilateral deviations; `verify_mpg` checks
//! that identity over all deterministic deviation pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::joint::{next_profile, JointActionSpace};
use crate::linalg::Lu;
use crate::scalar::Scalar;

/// Default cap on the number of deterministic joint policies `verify_mpg`
/// and the mismatch enumeration will evaluate.
pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;

/// Amplitude of the opponent-only reward terms in [`make_dummy_term_mpg`].
const DUMMY_TERM_AMPLITUDE: f64 = 0.5;

// ---------------------------------------------------------------------------
// MarkovGame
// ---------------------------------------------------------------------------

/// A finite discounted Markov game.
///
/// Tables are flat and row-major: `transition[s][a][s']`, `rewards[i][s][a]`
/// with `a` a joint-action index (see [`JointActionSpace`] for the order).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame<F> {
    num_states: usize,
    action_counts: Vec<usize>,
    discount: F,
    joint: JointActionSpace,
    transition: Vec<F>,
    rewards: Vec<Vec<F>>,
    initial_dist: Vec<F>,
    /// For each player, the smallest player index with a bit-identical reward
    /// table. Lets evaluation share one Bellman solve per group.
    reward_groups: Vec<usize>,
}

fn check_distribution<F: Scalar>(row: &[F], what: &str) -> Result<()> {
    let mut sum = F::zero();
    for &p in row {
        if !p.is_finite() || p < F::zero() {
            return Err(Error::Construction(format!(
                "{what} has a negative or non-finite entry"
            )));
        }
        sum += p;
    }
    if (sum - F::one()).abs() > F::row_tol() {
        return Err(Error::Construction(format!(
            "{what} sums to {sum} instead of 1"
        )));
    }
    Ok(())
}

impl<F: Scalar> MarkovGame<F> {
    pub fn new(
        action_counts: Vec<usize>,
        num_states: usize,
        discount: F,
        transition: Vec<F>,
        rewards: Vec<Vec<F>>,
        initial_dist: Vec<F>,
    ) -> Result<Self> {
        let n = action_counts.len();
        if n < 2 {
            return Err(Error::Construction("a Markov game needs at least 2 players".into()));
        }
        if num_states == 0 {
            return Err(Error::Construction("state space must be nonempty".into()));
        }
        if action_counts.iter().any(|&c| c == 0) {
            return Err(Error::Construction("every player needs at least one action".into()));
        }
        if !(discount >= F::zero() && discount < F::one()) {
            return Err(Error::Construction("discount must lie in [0, 1)".into()));
        }
        let joint = JointActionSpace::new(&action_counts);
        let a = joint.size();
        if transition.len() != num_states * a * num_states {
            return Err(Error::Dimension(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                num_states * a * num_states
            )));
        }
        if rewards.len() != n || rewards.iter().any(|r| r.len() != num_states * a) {
            return Err(Error::Dimension("reward tables must be [players][states*actions]".into()));
        }
        if rewards.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::Construction("rewards must be finite".into()));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Dimension("initial distribution length != num_states".into()));
        }
        for s in 0..num_states {
            for ja in 0..a {
                let base = (s * a + ja) * num_states;
                check_distribution(&transition[base..base + num_states], "transition row")?;
            }
        }
        check_distribution(&initial_dist, "initial distribution")?;
        let mut reward_groups = vec![0usize; n];
        for i in 0..n {
            reward_groups[i] = (0..i).find(|&j| rewards[j] == rewards[i]).unwrap_or(i);
        }
        Ok(Self {
            num_states,
            action_counts,
            discount,
            joint,
            transition,
            rewards,
            initial_dist,
            reward_groups,
        })
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn discount(&self) -> F {
        self.discount
    }

    pub fn joint(&self) -> &JointActionSpace {
        &self.joint
    }

    pub fn num_joint_actions(&self) -> usize {
        self.joint.size()
    }

    /// Next-state distribution for `(s, joint action)`.
    pub fn transition_row(&self, s: usize, ja: usize) -> &[F] {
        let base = (s * self.joint.size() + ja) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    /// The full flat transition table, `[s][a][s']` row-major.
    pub fn transition_block(&self) -> &[F] {
        &self.transition
    }

    /// Player `i`'s full reward table, indexed `[s * num_joint_actions + a]`.
    pub fn reward_table(&self, i: usize) -> &[F] {
        &self.rewards[i]
    }

    pub fn reward(&self, i: usize, s: usize, ja: usize) -> F {
        self.rewards[i][s * self.joint.size() + ja]
    }

    pub fn initial_dist(&self) -> &[F] {
        &self.initial_dist
    }

    pub fn reward_groups(&self) -> &[usize] {
        &self.reward_groups
    }

    /// Largest reward magnitude over all players and entries.
    pub fn max_abs_reward(&self) -> F {
        self.rewards
            .iter()
            .flatten()
            .fold(F::zero(), |m, &r| m.max(r.abs()))
    }

    /// True when every transition row at a state is identical across joint
    /// actions (dynamics depend on the state only).
    pub fn has_action_independent_dynamics(&self) -> bool {
        let a = self.joint.size();
        for s in 0..self.num_states {
            let first = self.transition_row(s, 0);
            for ja in 1..a {
                if self.transition_row(s, ja) != first {
                    return false;
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// PotentialSpec
// ---------------------------------------------------------------------------

/// Statewise potential table `phi(s, a)` with its exact sup-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec<F> {
    phi: Vec<F>,
    phi_max: F,
    num_joint_actions: usize,
}

impl<F: Scalar> PotentialSpec<F> {
    /// Builds the spec, computing `phi_max` as the exact maximum `|phi|`.
    pub fn new(phi: Vec<F>, num_joint_actions: usize) -> Result<Self> {
        if num_joint_actions == 0 || phi.len() % num_joint_actions != 0 {
            return Err(Error::Dimension("potential table length must be states * joint actions".into()));
        }
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::Construction("potential entries must be finite".into()));
        }
        let phi_max = phi.iter().fold(F::zero(), |m, &p| m.max(p.abs()));
        Ok(Self { phi, phi_max, num_joint_actions })
    }

    /// Builds from a stored table and `phi_max`, rejecting any mismatch.
    pub fn from_parts(phi: Vec<F>, phi_max: F, num_joint_actions: usize) -> Result<Self> {
        let built = Self::new(phi, num_joint_actions)?;
        if built.phi_max != phi_max {
            return Err(Error::Construction(format!(
                "stored phi_max {phi_max} != recomputed {}",
                built.phi_max
            )));
        }
        Ok(built)
    }

    pub fn table(&self) -> &[F] {
        &self.phi
    }

    pub fn entry(&self, s: usize, ja: usize) -> F {
        self.phi[s * self.num_joint_actions + ja]
    }

    pub fn phi_max(&self) -> F {
        self.phi_max
    }
}

// ---------------------------------------------------------------------------
// JointPolicy
// ---------------------------------------------------------------------------

/// Per-player, per-state probability rows over that player's actions.
/// The joint policy is always the product of the per-player rows.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy<F> {
    num_states: usize,
    action_counts: Vec<usize>,
    rows: Vec<Vec<F>>,
}

impl<F: Scalar> JointPolicy<F> {
    pub fn uniform(num_states: usize, action_counts: &[usize]) -> Self {
        let rows = action_counts
            .iter()
            .map(|&c| vec![F::one() / F::of_usize(c); num_states * c])
            .collect();
        Self { num_states, action_counts: action_counts.to_vec(), rows }
    }

    /// Validating constructor: every row must be a probability distribution.
    pub fn from_rows(num_states: usize, action_counts: &[usize], rows: Vec<Vec<F>>) -> Result<Self> {
        let p = Self::from_rows_unchecked(num_states, action_counts, rows)?;
        for i in 0..p.num_players() {
            for s in 0..num_states {
                check_distribution(p.row(i, s), "policy row")?;
            }
        }
        Ok(p)
    }

    /// Probe constructor: rows only need nonnegative finite weights. Used by
    /// finite-difference probing, where a single entry is perturbed and the
    /// evaluator extends linearly in that entry.
    pub fn from_rows_probe(num_states: usize, action_counts: &[usize], rows: Vec<Vec<F>>) -> Result<Self> {
        let p = Self::from_rows_unchecked(num_states, action_counts, rows)?;
        for r in p.rows.iter().flatten() {
            if !r.is_finite() || *r < F::zero() {
                return Err(Error::Construction("probe rows must be nonnegative and finite".into()));
            }
        }
        Ok(p)
    }

    fn from_rows_unchecked(num_states: usize, action_counts: &[usize], rows: Vec<Vec<F>>) -> Result<Self> {
        if rows.len() != action_counts.len() {
            return Err(Error::Dimension("one row block per player required".into()));
        }
        for (i, &c) in action_counts.iter().enumerate() {
            if rows[i].len() != num_states * c {
                return Err(Error::Dimension(format!(
                    "player {i} rows have {} entries, expected {}",
                    rows[i].len(),
                    num_states * c
                )));
            }
        }
        Ok(Self { num_states, action_counts: action_counts.to_vec(), rows })
    }

    /// Interior random policy with Dirichlet(1,..,1)-style rows.
    pub fn random_interior(num_states: usize, action_counts: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = action_counts
            .iter()
            .map(|&c| {
                let mut block = vec![F::zero(); num_states * c];
                for s in 0..num_states {
                    let mut sum = 0.0f64;
                    let mut draws = vec![0.0f64; c];
                    for d in draws.iter_mut() {
                        *d = (-(1.0 - rng.gen::<f64>()).ln()).max(1e-12);
                        sum += *d;
                    }
                    for (a, d) in draws.iter().enumerate() {
                        block[s * c + a] = F::of(d / sum);
                    }
                }
                block
            })
            .collect();
        Self { num_states, action_counts: action_counts.to_vec(), rows }
    }

    /// Deterministic policy from per-player, per-state action assignments.
    pub fn deterministic(num_states: usize, action_counts: &[usize], actions: &[Vec<usize>]) -> Result<Self> {
        if actions.len() != action_counts.len() {
            return Err(Error::Dimension("one assignment per player required".into()));
        }
        let mut rows = Vec::with_capacity(actions.len());
        for (i, &c) in action_counts.iter().enumerate() {
            if actions[i].len() != num_states {
                return Err(Error::Dimension("one action per state required".into()));
            }
            let mut block = vec![F::zero(); num_states * c];
            for s in 0..num_states {
                let a = actions[i][s];
                if a >= c {
                    return Err(Error::InvalidArgument(format!("action {a} out of range for player {i}")));
                }
                block[s * c + a] = F::one();
            }
            rows.push(block);
        }
        Ok(Self { num_states, action_counts: action_counts.to_vec(), rows })
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    /// Player `i`'s probability row at state `s`.
    pub fn row(&self, i: usize, s: usize) -> &[F] {
        let c = self.action_counts[i];
        &self.rows[i][s * c..(s + 1) * c]
    }

    pub fn set_row(&mut self, i: usize, s: usize, row: &[F]) {
        let c = self.action_counts[i];
        self.rows[i][s * c..(s + 1) * c].copy_from_slice(row);
    }

    /// Product-form joint probability of joint action `ja` at state `s`.
    pub fn joint_prob(&self, joint: &JointActionSpace, s: usize, ja: usize) -> F {
        let mut p = F::one();
        for i in 0..self.num_players() {
            p = p * self.row(i, s)[joint.action_of(ja, i)];
        }
        p
    }

    /// Copy with entry `(i, s, a)` shifted by `delta` (no renormalization).
    /// The result is a probe policy for directional-derivative evaluation.
    pub fn perturb_entry(&self, i: usize, s: usize, a: usize, delta: F) -> Result<Self> {
        let mut rows = self.rows.clone();
        let c = self.action_counts[i];
        let v = rows[i][s * c + a] + delta;
        if !v.is_finite() || v < F::zero() {
            return Err(Error::InvalidArgument(
                "perturbation drives a policy weight negative or non-finite".into(),
            ));
        }
        rows[i][s * c + a] = v;
        Self::from_rows_probe(self.num_states, &self.action_counts, rows)
    }

    pub fn matches_game(&self, game: &MarkovGame<F>) -> Result<()> {
        if self.num_states != game.num_states() || self.action_counts != game.action_counts() {
            return Err(Error::Dimension("policy shape does not match the game".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

fn draw_unit<F: Scalar>(rng: &mut ChaCha8Rng) -> F {
    F::of(rng.gen::<f64>())
}

fn draw_simplex_row<F: Scalar>(rng: &mut ChaCha8Rng, len: usize) -> Vec<F> {
    // Normalized Exp(1) draws: a Dirichlet(1,...,1) sample, strictly positive.
    let mut row = vec![0.0f64; len];
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = (-(1.0 - rng.gen::<f64>()).ln()).max(1e-12);
        sum += *r;
    }
    row.into_iter().map(|r| F::of(r / sum)).collect()
}

fn check_generator_sizes(num_players: usize, num_states: usize, action_counts: &[usize]) -> Result<()> {
    if num_players < 2 {
        return Err(Error::Construction("generators need at least 2 players".into()));
    }
    if action_counts.len() != num_players {
        return Err(Error::Construction("action_counts must list one size per player".into()));
    }
    if num_states == 0 || action_counts.iter().any(|&c| c == 0) {
        return Err(Error::Construction("state and action spaces must be nonempty".into()));
    }
    Ok(())
}

/// Identical-interest game: every player's reward table IS the potential.
/// Potential entries are uniform on [0,1], transition rows are Dirichlet-style
/// positive, the initial distribution is uniform. Deterministic in `seed`.
pub fn make_identical_interest<F: Scalar>(
    num_players: usize,
    num_states: usize,
    action_counts: &[usize],
    discount: F,
    seed: u64,
) -> Result<(MarkovGame<F>, PotentialSpec<F>)> {
    check_generator_sizes(num_players, num_states, action_counts)?;
    let joint = JointActionSpace::new(action_counts);
    let a = joint.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let phi: Vec<F> = (0..num_states * a).map(|_| draw_unit(&mut rng)).collect();
    let mut transition = Vec::with_capacity(num_states * a * num_states);
    for _ in 0..num_states * a {
        transition.extend(draw_simplex_row::<F>(&mut rng, num_states));
    }
    let rewards = vec![phi.clone(); num_players];
    let rho = vec![F::one() / F::of_usize(num_states); num_states];

    let game = MarkovGame::new(action_counts.to_vec(), num_states, discount, transition, rewards, rho)?;
    let potential = PotentialSpec::new(phi, a)?;
    Ok((game, potential))
}

/// Potential game with non-identical rewards: `r_i(s,a) = phi(s,a) +
/// u_i(s, a_-i)` with action-independent dynamics, so the deviation identity
/// holds exactly while players see different rewards.
pub fn make_dummy_term_mpg<F: Scalar>(
    num_players: usize,
    num_states: usize,
    action_counts: &[usize],
    discount: F,
    seed: u64,
) -> Result<(MarkovGame<F>, PotentialSpec<F>)> {
    make_dummy_term_mpg_with_amplitude(
        num_players,
        num_states,
        action_counts,
        discount,
        seed,
        DUMMY_TERM_AMPLITUDE,
    )
}

/// [`make_dummy_term_mpg`] with an explicit amplitude for the opponent-only
/// terms; amplitude 0 reduces to the identical-interest game with the same phi.
pub fn make_dummy_term_mpg_with_amplitude<F: Scalar>(
    num_players: usize,
    num_states: usize,
    action_counts: &[usize],
    discount: F,
    seed: u64,
    amplitude: f64,
) -> Result<(MarkovGame<F>, PotentialSpec<F>)> {
    check_generator_sizes(num_players, num_states, action_counts)?;
    let joint = JointActionSpace::new(action_counts);
    let a = joint.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let phi: Vec<F> = (0..num_states * a).map(|_| draw_unit(&mut rng)).collect();
    // One next-state row per state, copied across joint actions.
    let mut transition = Vec::with_capacity(num_states * a * num_states);
    for _ in 0..num_states {
        let row = draw_simplex_row::<F>(&mut rng, num_states);
        for _ in 0..a {
            transition.extend_from_slice(&row);
        }
    }
    // Opponent-only terms u_i(s, a_-i), enumerated over the opponents' joint
    // action space in row-major order.
    let mut rewards = Vec::with_capacity(num_players);
    for i in 0..num_players {
        let opp_counts: Vec<usize> = (0..num_players).filter(|&j| j != i).map(|j| action_counts[j]).collect();
        let opp_space = JointActionSpace::new(&opp_counts);
        let u: Vec<F> = (0..num_states * opp_space.size())
            .map(|_| F::of(amplitude) * draw_unit(&mut rng))
            .collect();
        let mut table = vec![F::zero(); num_states * a];
        let mut profile = vec![0usize; num_players];
        for s in 0..num_states {
            for ja in 0..a {
                joint.decode(ja, &mut profile);
                let opp: Vec<usize> = (0..num_players).filter(|&j| j != i).map(|j| profile[j]).collect();
                let uo = u[s * opp_space.size() + opp_space.encode(&opp)];
                table[s * a + ja] = phi[s * a + ja] + uo;
            }
        }
        rewards.push(table);
    }
    let rho = vec![F::one() / F::of_usize(num_states); num_states];

    let game = MarkovGame::new(action_counts.to_vec(), num_states, discount, transition, rewards, rho)?;
    let potential = PotentialSpec::new(phi, a)?;
    Ok((game, potential))
}

/// Stateless congestion game: one state, discount 0, each player picks a
/// facility; per-facility linear cost `w_f * load`, potential given by the
/// partial load-cost sums. Facility weights are seeded uniform on [0.5, 1.5].
pub fn make_stateless_congestion<F: Scalar>(
    num_players: usize,
    num_facilities: usize,
    seed: u64,
) -> Result<(MarkovGame<F>, PotentialSpec<F>)> {
    if num_facilities == 0 {
        return Err(Error::Construction("at least one facility required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<F> = (0..num_facilities)
        .map(|_| F::of(0.5 + rng.gen::<f64>()))
        .collect();
    make_stateless_congestion_with_weights(num_players, &weights)
}

/// Congestion game with explicit facility weights (weight 1 gives the plain
/// `cost = load` game).
pub fn make_stateless_congestion_with_weights<F: Scalar>(
    num_players: usize,
    weights: &[F],
) -> Result<(MarkovGame<F>, PotentialSpec<F>)> {
    if num_players < 2 {
        return Err(Error::Construction("generators need at least 2 players".into()));
    }
    let num_facilities = weights.len();
    if num_facilities == 0 {
        return Err(Error::Construction("at least one facility required".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= F::zero()) {
        return Err(Error::Construction("facility weights must be positive".into()));
    }
    let action_counts = vec![num_facilities; num_players];
    let joint = JointActionSpace::new(&action_counts);
    let a = joint.size();

    let mut rewards = vec![vec![F::zero(); a]; num_players];
    let mut phi = vec![F::zero(); a];
    let mut profile = vec![0usize; num_players];
    let mut loads = vec![0usize; num_facilities];
    for ja in 0..a {
        joint.decode(ja, &mut profile);
        loads.iter_mut().for_each(|l| *l = 0);
        for &f in &profile {
            loads[f] += 1;
        }
        // Rosenthal potential: sum over facilities of the partial cost sums
        // w_f * (1 + 2 + ... + load_f).
        let mut pot = F::zero();
        for (f, &l) in loads.iter().enumerate() {
            pot += weights[f] * F::of_usize(l * (l + 1) / 2);
        }
        phi[ja] = -pot;
        for (i, &f) in profile.iter().enumerate() {
            rewards[i][ja] = -(weights[f] * F::of_usize(loads[f]));
        }
    }

    let transition = vec![F::one(); a]; // single state, self-loop
    let game = MarkovGame::new(action_counts, 1, F::zero(), transition, rewards, vec![F::one()])?;
    let potential = PotentialSpec::new(phi, a)?;
    Ok((game, potential))
}

// ---------------------------------------------------------------------------
// MPG verification
// ---------------------------------------------------------------------------

/// Number of deterministic policies per player (`|A_i| ^ |S|`) and their
/// joint product, as u128 to survive large games.
pub fn deterministic_policy_counts<F: Scalar>(game: &MarkovGame<F>) -> (Vec<u128>, u128) {
    let per: Vec<u128> = game
        .action_counts()
        .iter()
        .map(|&c| (0..game.num_states()).fold(1u128, |acc, _| acc.saturating_mul(c as u128)))
        .collect();
    let total = per.iter().fold(1u128, |acc, &c| acc.saturating_mul(c));
    (per, total)
}

/// Checks the potential-game deviation identity by exhaustive enumeration of
/// deterministic policies, returning the maximum absolute residual
///
/// `| [V_i(pi_i', pi_-i) - V_i(pi)] - [Phi(pi_i', pi_-i) - Phi(pi)] |`
///
/// over all players `i`, deterministic joint policies `pi` and deterministic
/// deviations `pi_i'`. Values are exact discounted sums from the initial
/// distribution, obtained by one dense solve per joint policy. Refuses
/// (rather than truncates) when the joint policy count exceeds `cap`
/// (default [`DEFAULT_ENUM_CAP`]).
pub fn verify_mpg<F: Scalar>(
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    cap: Option<u64>,
) -> Result<F> {
    if potential.table().len() != game.num_states() * game.num_joint_actions() {
        return Err(Error::Dimension("potential table does not match the game".into()));
    }
    let cap = cap.unwrap_or(DEFAULT_ENUM_CAP);
    let (per_counts, total) = deterministic_policy_counts(game);
    if total > cap as u128 {
        return Err(Error::EnumerationCap { needed: total, cap });
    }
    let total = total as usize;
    let n = game.num_players();
    let s_n = game.num_states();
    let gamma = game.discount();

    // Per-player lookup: deterministic policy index -> action per state.
    // Policy indices are mixed-radix over states, state 0 most significant.
    let det_actions: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let c = game.action_counts()[i];
            let cnt = per_counts[i] as usize;
            let mut table = vec![0usize; cnt * s_n];
            let mut digits = vec![0usize; s_n];
            for d in 0..cnt {
                table[d * s_n..(d + 1) * s_n].copy_from_slice(&digits);
                next_profile(&mut digits, &vec![c; s_n]);
            }
            table
        })
        .collect();

    // Evaluate V_i(rho) for every player plus Phi(rho) at each joint
    // deterministic policy. values[p * (n+1) + i], potential last.
    let mut values = vec![F::zero(); total * (n + 1)];
    let mut det_idx = vec![0usize; n];
    let radices: Vec<usize> = per_counts.iter().map(|&c| c as usize).collect();
    let mut joint_actions = vec![0usize; s_n];
    let mut profile = vec![0usize; n];
    let mut b = vec![F::zero(); s_n];
    let mut x = vec![F::zero(); s_n];
    for p in 0..total {
        for s in 0..s_n {
            for i in 0..n {
                profile[i] = det_actions[i][det_idx[i] * s_n + s];
            }
            joint_actions[s] = game.joint().encode(&profile);
        }
        // M = I - gamma * P_d
        let mut m = vec![F::zero(); s_n * s_n];
        for s in 0..s_n {
            let row = game.transition_row(s, joint_actions[s]);
            for sp in 0..s_n {
                m[s * s_n + sp] = -(gamma * row[sp]);
            }
            m[s * s_n + s] += F::one();
        }
        let lu = Lu::factor(m, s_n)?;
        for i in 0..=n {
            for s in 0..s_n {
                b[s] = if i < n {
                    game.reward(i, s, joint_actions[s])
                } else {
                    potential.entry(s, joint_actions[s])
                };
            }
            lu.solve_into(&b, &mut x);
            let mut v = F::zero();
            for s in 0..s_n {
                v += game.initial_dist()[s] * x[s];
            }
            values[p * (n + 1) + i] = v;
        }
        next_profile(&mut det_idx, &radices);
    }

    // Deviation strides: joint policy index = sum_i det_idx[i] * stride[i].
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * radices[i + 1];
    }

    let mut max_residual = F::zero();
    let mut det_idx = vec![0usize; n];
    for p in 0..total {
        let phi_p = values[p * (n + 1) + n];
        for i in 0..n {
            let v_p = values[p * (n + 1) + i];
            let base = p - det_idx[i] * strides[i];
            for dev in 0..radices[i] {
                if dev == det_idx[i] {
                    continue;
                }
                let q = base + dev * strides[i];
                let dv = values[q * (n + 1) + i] - v_p;
                let dphi = values[q * (n + 1) + n] - phi_p;
                let r = (dv - dphi).abs();
                if r > max_residual {
                    max_residual = r;
                }
            }
        }
        next_profile(&mut det_idx, &radices);
    }
    Ok(max_residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_in_seed() {
        let (g1, p1) = make_identical_interest::<f64>(2, 3, &[2, 2], 0.9, 1).unwrap();
        let (g2, p2) = make_identical_interest::<f64>(2, 3, &[2, 2], 0.9, 1).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(p1, p2);
        let (g3, _) = make_identical_interest::<f64>(2, 3, &[2, 2], 0.9, 2).unwrap();
        assert_ne!(g1, g3);
    }

    #[test]
    fn identical_interest_is_mpg() {
        let (game, pot) = make_identical_interest::<f64>(2, 3, &[2, 2], 0.9, 1).unwrap();
        let res = verify_mpg(&game, &pot, None).unwrap();
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn dummy_term_is_mpg_with_distinct_rewards() {
        let (game, pot) = make_dummy_term_mpg::<f64>(2, 3, &[2, 3], 0.85, 11).unwrap();
        let res = verify_mpg(&game, &pot, None).unwrap();
        assert!(res < 1e-10, "residual {res}");
        assert_ne!(game.reward_table(0), game.reward_table(1));
        // Action-independent dynamics by construction.
        assert!(game.has_action_independent_dynamics());
    }

    #[test]
    fn dummy_term_amplitude_zero_reduces_to_identical_interest() {
        let (game, pot) =
            make_dummy_term_mpg_with_amplitude::<f64>(2, 2, &[2, 2], 0.9, 3, 0.0).unwrap();
        for i in 0..game.num_players() {
            assert_eq!(game.reward_table(i), pot.table());
        }
    }

    #[test]
    fn congestion_2x2_matches_hand_enumeration() {
        let (game, pot) =
            make_stateless_congestion_with_weights::<f64>(2, &[1.0, 1.0]).unwrap();
        let joint = game.joint().clone();
        // Both on facility 0: each pays 2. Split: each pays 1.
        let both = joint.encode(&[0, 0]);
        let split = joint.encode(&[0, 1]);
        assert_eq!(game.reward(0, 0, both), -2.0);
        assert_eq!(game.reward(1, 0, both), -2.0);
        assert_eq!(game.reward(0, 0, split), -1.0);
        assert_eq!(game.reward(1, 0, split), -1.0);
        // Rosenthal values: both on one facility -> -(1+2); split -> -(1+1).
        assert_eq!(pot.entry(0, both), -3.0);
        assert_eq!(pot.entry(0, split), -2.0);
        let res = verify_mpg(&game, &pot, None).unwrap();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn congestion_seeded_and_many_players_verifies() {
        for n in 2..=5usize {
            let (game, pot) = make_stateless_congestion::<f64>(n, 2, 40 + n as u64).unwrap();
            let res = verify_mpg(&game, &pot, None).unwrap();
            assert!(res < 1e-12, "n={n} residual {res}");
        }
    }

    #[test]
    fn corrupted_reward_breaks_the_identity() {
        let (game, pot) = make_identical_interest::<f64>(2, 3, &[2, 2], 0.9, 5).unwrap();
        let mut rewards: Vec<Vec<f64>> = (0..2).map(|i| game.reward_table(i).to_vec()).collect();
        rewards[0][0] += 0.1;
        let corrupted = MarkovGame::new(
            game.action_counts().to_vec(),
            game.num_states(),
            game.discount(),
            (0..game.num_states() * game.num_joint_actions())
                .flat_map(|sa| game.transition_row(sa / game.num_joint_actions(), sa % game.num_joint_actions()).to_vec())
                .collect(),
            rewards,
            game.initial_dist().to_vec(),
        )
        .unwrap();
        let res = verify_mpg(&corrupted, &pot, None).unwrap();
        assert!(res > 0.01, "residual {res} should expose the corruption");
    }

    #[test]
    fn phi_max_is_exact() {
        let (_, pot) = make_identical_interest::<f64>(3, 2, &[2, 2, 2], 0.5, 9).unwrap();
        let recomputed = pot.table().iter().fold(0.0f64, |m, &p| m.max(p.abs()));
        assert_eq!(pot.phi_max(), recomputed);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(make_identical_interest::<f64>(1, 2, &[2], 0.9, 0).is_err());
        assert!(make_identical_interest::<f64>(2, 2, &[2, 2, 2], 0.9, 0).is_err());
        assert!(MarkovGame::new(vec![2, 2], 1, 1.0, vec![1.0; 4], vec![vec![0.0; 4]; 2], vec![1.0]).is_err());
        assert!(MarkovGame::new(vec![2, 2], 1, -0.1, vec![1.0; 4], vec![vec![0.0; 4]; 2], vec![1.0]).is_err());
        // Transition row not summing to one.
        assert!(MarkovGame::new(vec![2, 2], 1, 0.5, vec![0.9; 4], vec![vec![0.0; 4]; 2], vec![1.0]).is_err());
    }

    #[test]
    fn enumeration_cap_is_a_refusal() {
        let (game, pot) = make_identical_interest::<f64>(2, 3, &[3, 3], 0.9, 1).unwrap();
        // 3^3 * 3^3 = 729 joint deterministic policies; cap below that refuses.
        match verify_mpg(&game, &pot, Some(100)) {
            Err(Error::EnumerationCap { needed, cap }) => {
                assert_eq!(needed, 729);
                assert_eq!(cap, 100);
            }
            other => panic!("expected cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn policy_rows_validate() {
        let p = JointPolicy::<f64>::uniform(2, &[2, 3]);
        assert_eq!(p.row(1, 0), &[1.0 / 3.0; 3]);
        assert!(JointPolicy::from_rows(1, &[2], vec![vec![0.7, 0.7]]).is_err());
        assert!(JointPolicy::from_rows_probe(1, &[2], vec![vec![0.7, 0.7]]).is_ok());
        assert!(JointPolicy::from_rows_probe(1, &[2], vec![vec![-0.1, 0.7]]).is_err());
        let q = JointPolicy::random_interior(3, &[2, 4], 77);
        for i in 0..2 {
            for s in 0..3 {
                let row = q.row(i, s);
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn joint_prob_is_product_form() {
        let p = JointPolicy::<f64>::random_interior(2, &[2, 3], 5);
        let joint = JointActionSpace::new(&[2, 3]);
        for s in 0..2 {
            let mut total = 0.0;
            for ja in 0..joint.size() {
                let prob = p.joint_prob(&joint, s, ja);
                let direct = p.row(0, s)[joint.action_of(ja, 0)] * p.row(1, s)[joint.action_of(ja, 1)];
                assert_eq!(prob, direct);
                total += prob;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
