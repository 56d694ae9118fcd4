//! Equilibrium metrics: exact best responses, Nash gaps and regret, the
//! greedy-mass constant c, distribution-mismatch coefficients, and the
//! closed-form regret/iteration bounds.
//!
//! Best responses solve the deviating player's induced single-agent MDP
//! (opponent-averaged rewards and transitions) by exact policy iteration; a
//! deterministic optimal policy attains the maximum over all stationary
//! deviations, so no search over stochastic policies is needed.

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalBundle};
use crate::game::{JointPolicy, MarkovGame, PotentialSpec, DEFAULT_ENUM_CAP};
use crate::joint::{average_all_players, average_except, next_profile};
use crate::linalg::Lu;
use crate::pmd::{PmdRun, Regularizer};
use crate::scalar::Scalar;

/// Absolute tolerance for membership in the averaged-Q argmax set when
/// accumulating the constant c.
pub const ARGMAX_TOL: f64 = 1e-9;

/// Gaps more negative than this floor abort instead of clamping: they signal
/// a best-response solver inconsistency, not roundoff.
fn negative_gap_floor<F: Scalar>() -> F {
    F::of(1e-10).max(F::of(100.0) * F::epsilon())
}

fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0usize;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Best response
// ---------------------------------------------------------------------------

/// A deterministic best response together with its value from the initial
/// distribution and the Bellman-optimality residual of the final solve.
#[derive(Debug, Clone)]
pub struct BestResponse<F> {
    /// Optimal action per state.
    pub actions: Vec<usize>,
    /// `V_i(pi_i^*, pi_-i)(rho)`.
    pub value: F,
    /// `max_s |V(s) - max_a Q(s,a)|` at termination.
    pub bellman_residual: F,
}

/// Solves a tabular single-agent MDP exactly by policy iteration.
/// `bar_r` is `[s][a]`, `bar_p` is `[s][a][s']` (ignored when gamma = 0).
/// Ties in the greedy step go to the lowest action index.
fn solve_induced_mdp<F: Scalar>(
    s_n: usize,
    na: usize,
    gamma: F,
    bar_r: &[F],
    bar_p: Option<&[F]>,
    rho: &[F],
) -> Result<(Vec<usize>, F, F)> {
    if gamma == F::zero() {
        let mut actions = vec![0usize; s_n];
        let mut value = F::zero();
        for s in 0..s_n {
            let row = &bar_r[s * na..(s + 1) * na];
            actions[s] = argmax(row);
            value += rho[s] * row[actions[s]];
        }
        return Ok((actions, value, F::zero()));
    }
    let bar_p = bar_p.expect("transitions required for discounted MDPs");
    let mut actions: Vec<usize> = (0..s_n)
        .map(|s| argmax(&bar_r[s * na..(s + 1) * na]))
        .collect();
    let mut v = vec![F::zero(); s_n];
    let mut q = vec![F::zero(); s_n * na];
    for sweep in 0..10_000usize {
        // Exact evaluation of the current deterministic policy.
        let mut m = vec![F::zero(); s_n * s_n];
        let mut b = vec![F::zero(); s_n];
        for s in 0..s_n {
            let a = actions[s];
            let p_row = &bar_p[(s * na + a) * s_n..(s * na + a + 1) * s_n];
            for sp in 0..s_n {
                m[s * s_n + sp] = -(gamma * p_row[sp]);
            }
            m[s * s_n + s] += F::one();
            b[s] = bar_r[s * na + a];
        }
        let lu = Lu::factor(m, s_n)?;
        lu.solve_into(&b, &mut v);
        // Greedy improvement.
        let mut stable = true;
        for s in 0..s_n {
            for a in 0..na {
                let p_row = &bar_p[(s * na + a) * s_n..(s * na + a + 1) * s_n];
                let mut exp_v = F::zero();
                for sp in 0..s_n {
                    exp_v += p_row[sp] * v[sp];
                }
                q[s * na + a] = bar_r[s * na + a] + gamma * exp_v;
            }
            let greedy = argmax(&q[s * na..(s + 1) * na]);
            if q[s * na + greedy] > q[s * na + actions[s]] {
                actions[s] = greedy;
                stable = false;
            }
        }
        if stable {
            let mut residual = F::zero();
            let mut value = F::zero();
            for s in 0..s_n {
                let best = q[s * na + argmax(&q[s * na..(s + 1) * na])];
                residual = residual.max((v[s] - best).abs());
                value += rho[s] * v[s];
            }
            return Ok((actions, value, residual));
        }
        let _ = sweep;
    }
    Err(Error::InvalidArgument(
        "policy iteration failed to terminate (internal)".into(),
    ))
}

/// Opponent-averaged reward tables for every player, sharing one contraction
/// pass per distinct reward table. Each table is `[s][a_i]`.
fn induced_rewards<F: Scalar>(game: &MarkovGame<F>, policy: &JointPolicy<F>) -> Vec<Vec<F>> {
    let n = game.num_players();
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let counts = game.action_counts();
    let groups = game.reward_groups();
    let single_group = groups.iter().all(|&g| g == 0);
    let mut out: Vec<Vec<F>> = (0..n).map(|i| vec![F::zero(); s_n * counts[i]]).collect();
    for s in 0..s_n {
        let rows: Vec<&[F]> = (0..n).map(|i| policy.row(i, s)).collect();
        if single_group {
            let slice = &game.reward_table(0)[s * a_n..(s + 1) * a_n];
            let tables = average_all_players(slice, counts, &rows, 1);
            for i in 0..n {
                out[i][s * counts[i]..(s + 1) * counts[i]].copy_from_slice(&tables[i]);
            }
        } else {
            for i in 0..n {
                let slice = &game.reward_table(i)[s * a_n..(s + 1) * a_n];
                let t = average_except(slice, counts, &rows, i, 1);
                out[i][s * counts[i]..(s + 1) * counts[i]].copy_from_slice(&t);
            }
        }
    }
    out
}

/// Opponent-averaged transition kernel for player `i`: `[s][a_i][s']`.
fn induced_transitions<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    i: usize,
) -> Vec<F> {
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let counts = game.action_counts();
    let c = counts[i];
    let mut out = vec![F::zero(); s_n * c * s_n];
    for s in 0..s_n {
        let rows: Vec<&[F]> = (0..game.num_players()).map(|j| policy.row(j, s)).collect();
        let base = s * a_n * s_n;
        let slice = &game.transition_block()[base..base + a_n * s_n];
        let t = average_except(slice, counts, &rows, i, s_n);
        out[s * c * s_n..(s + 1) * c * s_n].copy_from_slice(&t);
    }
    out
}

/// Exact best response of player `i` against `policy`'s other players.
pub fn best_response<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    i: usize,
) -> Result<BestResponse<F>> {
    policy.matches_game(game)?;
    if i >= game.num_players() {
        return Err(Error::InvalidArgument(format!("player index {i} out of range")));
    }
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let counts = game.action_counts();
    let c = counts[i];
    let mut bar_r = vec![F::zero(); s_n * c];
    for s in 0..s_n {
        let rows: Vec<&[F]> = (0..game.num_players()).map(|j| policy.row(j, s)).collect();
        let slice = &game.reward_table(i)[s * a_n..(s + 1) * a_n];
        let t = average_except(slice, counts, &rows, i, 1);
        bar_r[s * c..(s + 1) * c].copy_from_slice(&t);
    }
    let bar_p = if game.discount() == F::zero() {
        None
    } else {
        Some(induced_transitions(game, policy, i))
    };
    let (actions, value, residual) = solve_induced_mdp(
        s_n,
        c,
        game.discount(),
        &bar_r,
        bar_p.as_deref(),
        game.initial_dist(),
    )?;
    Ok(BestResponse { actions, value, bellman_residual: residual })
}

// ---------------------------------------------------------------------------
// Nash gaps and regret
// ---------------------------------------------------------------------------

/// Per-player Nash gaps and the worst gap for one joint policy.
#[derive(Debug, Clone)]
pub struct NashGapReport<F> {
    pub per_player: Vec<F>,
    pub worst: F,
    /// True when a slightly negative gap (within the numerical floor) was
    /// clamped to zero.
    pub clamped: bool,
}

/// Nash gaps via exact best responses: `gap_i = V_i(BR_i, pi_-i)(rho) -
/// V_i(pi)(rho)`.
pub fn nash_gap<F: Scalar>(game: &MarkovGame<F>, policy: &JointPolicy<F>) -> Result<NashGapReport<F>> {
    let bundle = evaluate(game, policy, None)?;
    nash_gap_from_bundle(game, policy, &bundle)
}

/// [`nash_gap`] reusing an existing evaluation of `policy`.
pub fn nash_gap_from_bundle<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    bundle: &EvalBundle<F>,
) -> Result<NashGapReport<F>> {
    let n = game.num_players();
    let s_n = game.num_states();
    let gamma = game.discount();
    let rho = game.initial_dist();
    let bar_r = induced_rewards(game, policy);
    let mut per_player = Vec::with_capacity(n);
    let mut clamped = false;
    let floor = negative_gap_floor::<F>();
    for i in 0..n {
        let bar_p = if gamma == F::zero() {
            None
        } else {
            Some(induced_transitions(game, policy, i))
        };
        let (_, br_value, _) = solve_induced_mdp(
            s_n,
            game.action_counts()[i],
            gamma,
            &bar_r[i],
            bar_p.as_deref(),
            rho,
        )?;
        let mut gap = br_value - bundle.value(i, rho);
        if gap < F::zero() {
            if gap < -floor {
                return Err(Error::NegativeGap {
                    gap: gap.to_f64_lossy(),
                    floor: -floor.to_f64_lossy(),
                });
            }
            log::warn!(
                "clamping slightly negative nash gap {:e} for player {i}",
                gap.to_f64_lossy()
            );
            gap = F::zero();
            clamped = true;
        }
        per_player.push(gap);
    }
    let worst = per_player.iter().copied().fold(F::zero(), F::max);
    Ok(NashGapReport { per_player, worst, clamped })
}

/// Average of the worst-player Nash gaps over a trace of policies.
pub fn nash_regret<F: Scalar>(game: &MarkovGame<F>, policies: &[JointPolicy<F>]) -> Result<F> {
    if policies.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut total = F::zero();
    for p in policies {
        total += nash_gap(game, p)?.worst;
    }
    Ok(total / F::of_usize(policies.len()))
}

// ---------------------------------------------------------------------------
// Constant c
// ---------------------------------------------------------------------------

/// One iterate's contribution to the constant c: the minimum over players
/// and states of the policy mass on the averaged-Q argmax set (absolute
/// tolerance [`ARGMAX_TOL`]).
pub fn c_contribution<F: Scalar>(policy: &JointPolicy<F>, bundle: &EvalBundle<F>) -> F {
    let tol = F::of(ARGMAX_TOL);
    let mut c = F::one();
    for i in 0..policy.num_players() {
        let na = policy.action_counts()[i];
        let qbar = bundle.avg_q(i);
        for s in 0..policy.num_states() {
            let row = &qbar[s * na..(s + 1) * na];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut mass = F::zero();
            for a in 0..na {
                if row[a] >= m - tol {
                    mass += policy.row(i, s)[a];
                }
            }
            c = c.min(mass);
        }
    }
    c
}

/// Empirical constant c over an observed trace: the minimum contribution
/// across iterations. An upper bound on the infinite-horizon constant.
pub fn constant_c<F: Scalar>(
    policies: &[JointPolicy<F>],
    bundles: &[EvalBundle<F>],
) -> Result<F> {
    if policies.is_empty() || policies.len() != bundles.len() {
        return Err(Error::InvalidArgument(
            "constant_c needs matching, nonempty policy and bundle traces".into(),
        ));
    }
    Ok(policies
        .iter()
        .zip(bundles)
        .map(|(p, b)| c_contribution(p, b))
        .fold(F::infinity(), F::min))
}

// ---------------------------------------------------------------------------
// Mismatch coefficients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchMethod {
    ExactEnumeration,
    BoundOnly,
}

/// `kappa_rho` (exact by vertex enumeration, or an upper bound) and the
/// `kappa_tilde` upper bound `min(kappa_rho, |S|)`.
#[derive(Debug, Clone)]
pub struct MismatchReport<F> {
    pub kappa_rho: F,
    pub kappa_tilde_upper: F,
    pub method: MismatchMethod,
}

/// Computes the distribution mismatch coefficient `kappa_rho =
/// sup_pi max_s d_rho(s) / rho(s)`.
///
/// Occupancy measures of stochastic policies lie in the convex hull of
/// deterministic ones and the objective is a max of linear functionals, so
/// the supremum is attained at a deterministic joint policy; those are
/// enumerated exactly when their count fits under `cap`. Otherwise a
/// bound-only report is returned (never silent truncation).
pub fn mismatch_coefficients<F: Scalar>(
    game: &MarkovGame<F>,
    cap: Option<u64>,
) -> Result<MismatchReport<F>> {
    let cap = cap.unwrap_or(DEFAULT_ENUM_CAP);
    let s_n = game.num_states();
    let rho = game.initial_dist();
    if rho.iter().any(|&r| r <= F::zero()) {
        return Err(Error::InvalidArgument(
            "kappa_rho requires a full-support initial distribution".into(),
        ));
    }
    let finish = |kappa: F, method: MismatchMethod| MismatchReport {
        kappa_rho: kappa,
        kappa_tilde_upper: kappa.min(F::of_usize(s_n)),
        method,
    };

    if s_n == 1 {
        return Ok(finish(F::one(), MismatchMethod::ExactEnumeration));
    }
    if game.has_action_independent_dynamics() {
        // d is policy-independent; one solve suffices.
        let policy = JointPolicy::uniform(s_n, game.action_counts());
        let d = crate::eval::occupancy_measure(game, &policy, rho)?;
        let kappa = d
            .iter()
            .zip(rho)
            .map(|(&ds, &rs)| ds / rs)
            .fold(F::zero(), F::max);
        return Ok(finish(kappa, MismatchMethod::ExactEnumeration));
    }

    let (per_counts, total) = crate::game::deterministic_policy_counts(game);
    if total > cap as u128 {
        // d(s) <= 1 gives kappa_rho <= 1 / min_s rho(s).
        let kappa_ub = F::one() / rho.iter().copied().fold(F::infinity(), F::min);
        return Ok(finish(kappa_ub, MismatchMethod::BoundOnly));
    }

    let n = game.num_players();
    let gamma = game.discount();
    let radices: Vec<usize> = per_counts.iter().map(|&c| c as usize).collect();
    let counts = game.action_counts();
    let mut det_idx = vec![0usize; n];
    let mut profile = vec![0usize; n];
    let mut digits_cache: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let c = counts[i];
            let cnt = radices[i];
            let mut table = vec![0usize; cnt * s_n];
            let mut digits = vec![0usize; s_n];
            for d in 0..cnt {
                table[d * s_n..(d + 1) * s_n].copy_from_slice(&digits);
                next_profile(&mut digits, &vec![c; s_n]);
            }
            table
        })
        .collect();
    let mut kappa = F::zero();
    let scale = F::one() - gamma;
    let mut b = vec![F::zero(); s_n];
    let mut d = vec![F::zero(); s_n];
    for _ in 0..total {
        // Adjoint solve (I - gamma P_d^T) d = (1-gamma) rho for this policy.
        let mut mt = vec![F::zero(); s_n * s_n];
        for s in 0..s_n {
            for i in 0..n {
                profile[i] = digits_cache[i][det_idx[i] * s_n + s];
            }
            let ja = game.joint().encode(&profile);
            let row = game.transition_row(s, ja);
            for sp in 0..s_n {
                mt[sp * s_n + s] -= gamma * row[sp];
            }
        }
        for s in 0..s_n {
            mt[s * s_n + s] += F::one();
            b[s] = scale * rho[s];
        }
        let lu = Lu::factor(mt, s_n)?;
        lu.solve_into(&b, &mut d);
        for s in 0..s_n {
            kappa = kappa.max(d[s] / rho[s]);
        }
        next_profile(&mut det_idx, &radices);
    }
    digits_cache.clear();
    Ok(finish(kappa, MismatchMethod::ExactEnumeration))
}

// ---------------------------------------------------------------------------
// Closed-form bounds
// ---------------------------------------------------------------------------

/// Regret bound after `t` iterations at the prescribed step size, using a
/// `kappa_tilde` upper bound (and, for KL, the empirical constant c):
/// Euclidean `12 sqrt(2 phi_max^2 kappa sum|A_i| / ((1-gamma)^4 t))`,
/// KL `sqrt(12 phi_max^2 kappa sqrt(N) / ((1-gamma)^4 c t))`.
pub fn theorem_bound_parts<F: Scalar>(
    regularizer: Regularizer,
    phi_max: F,
    gamma: F,
    kappa_tilde: F,
    action_counts: &[usize],
    t: usize,
    c: Option<F>,
) -> Result<F> {
    if t < 1 {
        return Err(Error::InvalidArgument("bound requires t >= 1".into()));
    }
    let denom4 = (F::one() - gamma).powi(4);
    let tt = F::of_usize(t);
    match regularizer {
        Regularizer::Euclidean => {
            let sum_actions = F::of_usize(action_counts.iter().sum());
            Ok(F::of(12.0)
                * (F::of(2.0) * phi_max * phi_max * kappa_tilde * sum_actions / (denom4 * tt))
                    .sqrt())
        }
        Regularizer::Kl => {
            let c = c.ok_or_else(|| {
                Error::InvalidArgument("KL bound requires the constant c".into())
            })?;
            if !(c > F::zero()) {
                return Err(Error::InvalidArgument("constant c must be positive".into()));
            }
            let n = F::of_usize(action_counts.len());
            Ok((F::of(12.0) * phi_max * phi_max * kappa_tilde * n.sqrt() / (denom4 * c * tt))
                .sqrt())
        }
    }
}

/// [`theorem_bound_parts`] drawing its constants from a game, potential and
/// mismatch report.
pub fn theorem_bound<F: Scalar>(
    regularizer: Regularizer,
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    mismatch: &MismatchReport<F>,
    t: usize,
    c: Option<F>,
) -> Result<F> {
    theorem_bound_parts(
        regularizer,
        potential.phi_max(),
        game.discount(),
        mismatch.kappa_tilde_upper,
        game.action_counts(),
        t,
        c,
    )
}

/// Iterations sufficient for an epsilon Nash regret per the closed forms:
/// Euclidean `288 phi^2 kappa sum|A_i| / ((1-gamma)^4 eps^2)`,
/// KL `12 phi^2 kappa sqrt(N) / ((1-gamma)^4 c eps^2)`.
pub fn iteration_bound_parts<F: Scalar>(
    regularizer: Regularizer,
    phi_max: F,
    gamma: F,
    kappa_tilde: F,
    action_counts: &[usize],
    epsilon: F,
    c: Option<F>,
) -> Result<F> {
    if !(epsilon > F::zero()) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let denom = (F::one() - gamma).powi(4) * epsilon * epsilon;
    match regularizer {
        Regularizer::Euclidean => {
            let sum_actions = F::of_usize(action_counts.iter().sum());
            Ok(F::of(288.0) * phi_max * phi_max * kappa_tilde * sum_actions / denom)
        }
        Regularizer::Kl => {
            let c = c.ok_or_else(|| {
                Error::InvalidArgument("KL bound requires the constant c".into())
            })?;
            if !(c > F::zero()) {
                return Err(Error::InvalidArgument("constant c must be positive".into()));
            }
            let n = F::of_usize(action_counts.len());
            Ok(F::of(12.0) * phi_max * phi_max * kappa_tilde * n.sqrt() / (denom * c))
        }
    }
}

// ---------------------------------------------------------------------------
// Regret trace
// ---------------------------------------------------------------------------

/// Per-iteration Nash gaps, potential values, running regret and the
/// c-tracker for a completed PMD run.
#[derive(Debug, Clone)]
pub struct RegretTrace<F> {
    pub regularizer: Regularizer,
    pub advantage_form: bool,
    pub step_size: F,
    /// `[t][i]` per-player gaps, t = 1..T.
    pub per_player_gaps: Vec<Vec<F>>,
    pub worst_gaps: Vec<F>,
    /// Prefix averages of the worst gaps.
    pub running_regret: Vec<F>,
    pub potentials: Vec<F>,
    /// KL runs: running minimum of the per-iterate c contribution.
    pub c_tracker: Option<Vec<F>>,
    /// Nash-regret(T): the final running value.
    pub nash_regret: F,
}

/// Computes exact gaps and regret along a PMD run.
pub fn build_regret_trace<F: Scalar>(
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    run: &PmdRun<F>,
) -> Result<RegretTrace<F>> {
    if run.records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let kl = run.regularizer == Regularizer::Kl;
    let mut per_player_gaps = Vec::with_capacity(run.records.len());
    let mut worst_gaps = Vec::with_capacity(run.records.len());
    let mut running = Vec::with_capacity(run.records.len());
    let mut potentials = Vec::with_capacity(run.records.len());
    let mut c_tracker = if kl { Some(Vec::with_capacity(run.records.len())) } else { None };
    let mut total = F::zero();
    let mut c_min = F::infinity();
    for rec in &run.records {
        let bundle = evaluate(game, &rec.policy, Some(potential))?;
        let gaps = nash_gap_from_bundle(game, &rec.policy, &bundle)?;
        total += gaps.worst;
        running.push(total / F::of_usize(worst_gaps.len() + 1));
        worst_gaps.push(gaps.worst);
        per_player_gaps.push(gaps.per_player);
        potentials.push(rec.potential);
        if let Some(tracker) = c_tracker.as_mut() {
            c_min = c_min.min(c_contribution(&rec.policy, &bundle));
            tracker.push(c_min);
        }
    }
    let nash_regret = *running.last().expect("nonempty");
    Ok(RegretTrace {
        regularizer: run.regularizer,
        advantage_form: run.advantage_form,
        step_size: run.step_size,
        per_player_gaps,
        worst_gaps,
        running_regret: running,
        potentials,
        c_tracker,
        nash_regret,
    })
}
