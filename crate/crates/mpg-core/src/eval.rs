//! Exact policy evaluation via dense linear solves.
//!
//! For a fixed joint policy pi, per-player values solve the Bellman system
//! `(I - gamma P_pi) V_i = r_{i,pi}` with `P_pi` the closed-loop state
//! kernel; Q tables recompose as `Q_i(s,a) = r_i(s,a) + gamma * P(.|s,a) V_i`.
//! Averaged Q values `Qbar_i(s, a_i)` take the expectation of `Q_i` over the
//! opponents' action profile under `pi_-i`, and averaged advantages subtract
//! `V_i(s)`. Occupancy measures solve the adjoint system
//! `d = (1-gamma) mu + gamma P_pi^T d`.
//!
//! Players whose reward tables are bit-identical share one Bellman solve
//! (the grouping is computed at game construction).

use crate::error::{Error, Result};
use crate::game::{JointPolicy, MarkovGame, PotentialSpec};
use crate::joint::{average_all_players, average_except, average_full};
use crate::linalg::Lu;
use crate::scalar::Scalar;

/// Exact evaluation artifacts for one joint policy.
pub struct EvalBundle<F> {
    num_states: usize,
    num_joint: usize,
    action_counts: Vec<usize>,
    gamma: F,
    group_of: Vec<usize>,
    group_slot: Vec<usize>,
    q_unique: Vec<Vec<F>>,
    v_unique: Vec<Vec<F>>,
    avg_q: Vec<Vec<F>>,
    avg_adv: Vec<Vec<F>>,
    occupancy: Vec<F>,
    lu_adjoint: Lu<F>,
    potential_q: Option<Vec<F>>,
    v_phi: Option<Vec<F>>,
}

impl<F: Scalar> EvalBundle<F> {
    /// Player `i`'s Q table over `[s][joint action]`.
    pub fn q_values(&self, i: usize) -> &[F] {
        &self.q_unique[self.group_slot[self.group_of[i]]]
    }

    /// Player `i`'s state values `V_i(s)`.
    pub fn v_values(&self, i: usize) -> &[F] {
        &self.v_unique[self.group_slot[self.group_of[i]]]
    }

    /// Averaged Q values `Qbar_i(s, a_i)`, laid out `[s * |A_i| + a_i]`.
    pub fn avg_q(&self, i: usize) -> &[F] {
        &self.avg_q[i]
    }

    /// Averaged advantages `Abar_i(s, a_i) = Qbar_i(s, a_i) - V_i(s)`.
    pub fn avg_adv(&self, i: usize) -> &[F] {
        &self.avg_adv[i]
    }

    /// Occupancy measure `d_rho` from the game's initial distribution.
    pub fn occupancy(&self) -> &[F] {
        &self.occupancy
    }

    /// Occupancy measure `d_mu` for an arbitrary initial distribution.
    pub fn occupancy_for(&self, mu: &[F]) -> Result<Vec<F>> {
        if mu.len() != self.num_states {
            return Err(Error::Dimension("mu length != num_states".into()));
        }
        Ok(solve_occupancy(&self.lu_adjoint, self.gamma, mu))
    }

    /// `V_i(mu)`.
    pub fn value(&self, i: usize, mu: &[F]) -> F {
        dot(self.v_values(i), mu)
    }

    /// Q table induced by the potential, when one was supplied.
    pub fn potential_q(&self) -> Option<&[F]> {
        self.potential_q.as_deref()
    }

    /// State values of the potential reward, when one was supplied.
    pub fn potential_v(&self) -> Option<&[F]> {
        self.v_phi.as_deref()
    }

    /// Total potential `Phi(mu)`, when a potential was supplied.
    pub fn potential_value(&self, mu: &[F]) -> Result<F> {
        let v = self.v_phi.as_ref().ok_or(Error::MissingPotential)?;
        Ok(dot(v, mu))
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint_actions(&self) -> usize {
        self.num_joint
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn solve_occupancy<F: Scalar>(lu_adjoint: &Lu<F>, gamma: F, mu: &[F]) -> Vec<F> {
    let scale = F::one() - gamma;
    let b: Vec<F> = mu.iter().map(|&m| scale * m).collect();
    let mut d = lu_adjoint.solve(&b);
    let total: F = d.iter().copied().sum();
    if total > F::zero() {
        for x in d.iter_mut() {
            *x /= total;
        }
    }
    d
}

/// Evaluates `policy` on `game` exactly. Pass the potential to also obtain
/// `Q_phi` and the total-potential evaluator.
pub fn evaluate<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    potential: Option<&PotentialSpec<F>>,
) -> Result<EvalBundle<F>> {
    evaluate_impl(game, policy, potential, false)
}

/// [`evaluate`] with the row-stochasticity check relaxed: rows may be any
/// nonnegative weights. The linear-extension semantics support directional
/// derivative probing; do not feed probe bundles into the learning loop.
pub fn evaluate_probe<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    potential: Option<&PotentialSpec<F>>,
) -> Result<EvalBundle<F>> {
    evaluate_impl(game, policy, potential, true)
}

fn evaluate_impl<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    potential: Option<&PotentialSpec<F>>,
    probe: bool,
) -> Result<EvalBundle<F>> {
    policy.matches_game(game)?;
    let n = game.num_players();
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let gamma = game.discount();
    let counts = game.action_counts().to_vec();
    if let Some(p) = potential {
        if p.table().len() != s_n * a_n {
            return Err(Error::Dimension("potential table does not match the game".into()));
        }
    }
    if !probe {
        // Mirror-descent iterates drift from exact row sums by solver noise;
        // accept that much and no more (scaled up for low-precision scalars).
        let row_drift = F::of(1e-9).max(F::row_tol());
        for i in 0..n {
            for s in 0..s_n {
                let row = policy.row(i, s);
                let sum: F = row.iter().copied().sum();
                if (sum - F::one()).abs() > row_drift || row.iter().any(|&p| p < F::zero()) {
                    return Err(Error::InvalidArgument(format!(
                        "policy row (player {i}, state {s}) is not a distribution; use evaluate_probe for linear-extension probing"
                    )));
                }
            }
        }
    }

    // Closed-loop kernel and policy-averaged rewards.
    let mut p_pi = vec![F::zero(); s_n * s_n];
    for s in 0..s_n {
        let rows: Vec<&[F]> = (0..n).map(|i| policy.row(i, s)).collect();
        let base = s * a_n * s_n;
        let slice = &game_transition_block(game)[base..base + a_n * s_n];
        let row = average_full(slice, &counts, &rows, s_n);
        p_pi[s * s_n..(s + 1) * s_n].copy_from_slice(&row);
    }

    // (I - gamma P_pi) for values, and its transpose for occupancies.
    let mut m = vec![F::zero(); s_n * s_n];
    let mut mt = vec![F::zero(); s_n * s_n];
    for s in 0..s_n {
        for sp in 0..s_n {
            let v = -(gamma * p_pi[s * s_n + sp]);
            m[s * s_n + sp] = v;
            mt[sp * s_n + s] = v;
        }
        m[s * s_n + s] += F::one();
        mt[s * s_n + s] += F::one();
    }
    let lu = Lu::factor(m, s_n)?;
    let lu_adjoint = Lu::factor(mt, s_n)?;

    // Unique reward groups: one Bellman solve per distinct reward table.
    let group_of = game.reward_groups().to_vec();
    let mut reps: Vec<usize> = Vec::new();
    let mut group_slot = vec![usize::MAX; n];
    for i in 0..n {
        if group_of[i] == i {
            group_slot[i] = reps.len();
            reps.push(i);
        } else {
            group_slot[i] = group_slot[group_of[i]];
        }
    }

    let solve_reward = |table: &[F]| -> (Vec<F>, Vec<F>) {
        // r_pi(s) then V then Q.
        let mut r_pi = vec![F::zero(); s_n];
        for s in 0..s_n {
            let rows: Vec<&[F]> = (0..n).map(|i| policy.row(i, s)).collect();
            let avg = average_full(&table[s * a_n..(s + 1) * a_n], &counts, &rows, 1);
            r_pi[s] = avg[0];
        }
        let v = lu.solve(&r_pi);
        let mut q = vec![F::zero(); s_n * a_n];
        for s in 0..s_n {
            for ja in 0..a_n {
                let p_row = game.transition_row(s, ja);
                q[s * a_n + ja] = table[s * a_n + ja] + gamma * dot(p_row, &v);
            }
        }
        (q, v)
    };

    let mut q_unique = Vec::with_capacity(reps.len());
    let mut v_unique = Vec::with_capacity(reps.len());
    for &rep in &reps {
        let (q, v) = solve_reward(game.reward_table(rep));
        q_unique.push(q);
        v_unique.push(v);
    }

    // Averaged Q per player. A single reward group shares one batched
    // contraction; otherwise contract per player against its own Q table.
    let mut avg_q: Vec<Vec<F>> = (0..n).map(|i| vec![F::zero(); s_n * counts[i]]).collect();
    for s in 0..s_n {
        let rows: Vec<&[F]> = (0..n).map(|i| policy.row(i, s)).collect();
        if reps.len() == 1 {
            let tables = average_all_players(&q_unique[0][s * a_n..(s + 1) * a_n], &counts, &rows, 1);
            for i in 0..n {
                avg_q[i][s * counts[i]..(s + 1) * counts[i]].copy_from_slice(&tables[i]);
            }
        } else {
            for i in 0..n {
                let q = &q_unique[group_slot[group_of[i]]];
                let t = average_except(&q[s * a_n..(s + 1) * a_n], &counts, &rows, i, 1);
                avg_q[i][s * counts[i]..(s + 1) * counts[i]].copy_from_slice(&t);
            }
        }
    }

    let mut avg_adv = avg_q.clone();
    for i in 0..n {
        let v = &v_unique[group_slot[group_of[i]]];
        for s in 0..s_n {
            for a in 0..counts[i] {
                avg_adv[i][s * counts[i] + a] -= v[s];
            }
        }
    }

    let occupancy = solve_occupancy(&lu_adjoint, gamma, game.initial_dist());

    let (potential_q, v_phi) = match potential {
        Some(p) => {
            let (q, v) = solve_reward(p.table());
            (Some(q), Some(v))
        }
        None => (None, None),
    };

    Ok(EvalBundle {
        num_states: s_n,
        num_joint: a_n,
        action_counts: counts,
        gamma,
        group_of,
        group_slot,
        q_unique,
        v_unique,
        avg_q,
        avg_adv,
        occupancy,
        lu_adjoint,
        potential_q,
        v_phi,
    })
}

// The transition table is private to `game`; expose the flat block through a
// narrow accessor here to keep slicing local.
fn game_transition_block<F: Scalar>(game: &MarkovGame<F>) -> &[F] {
    game.transition_block()
}

/// Discounted state occupancy `d_mu(s) = (1-gamma) sum_t gamma^t P(s_t = s)`,
/// solved exactly from the adjoint linear system and normalized.
pub fn occupancy_measure<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    mu: &[F],
) -> Result<Vec<F>> {
    let bundle = evaluate(game, policy, None)?;
    bundle.occupancy_for(mu)
}

/// Total potential `Phi(mu)`: expected discounted cumulative potential.
/// Bounded by `phi_max / (1 - gamma)` in magnitude.
pub fn total_potential<F: Scalar>(
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    policy: &JointPolicy<F>,
    mu: &[F],
) -> Result<F> {
    if mu.len() != game.num_states() {
        return Err(Error::Dimension("mu length != num_states".into()));
    }
    let bundle = evaluate(game, policy, Some(potential))?;
    bundle.potential_value(mu)
}

/// Policy-gradient entry `d V_i(mu) / d pi_i(a_i|s)` of the multilinear
/// policy extension: `d_mu(s) * Qbar_i(s, a_i) / (1 - gamma)`.
pub fn policy_gradient_entry<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    i: usize,
    s: usize,
    a_i: usize,
    mu: &[F],
) -> Result<F> {
    if i >= game.num_players() || s >= game.num_states() || a_i >= game.action_counts()[i] {
        return Err(Error::InvalidArgument("player, state or action index out of range".into()));
    }
    let bundle = evaluate(game, policy, None)?;
    let d = bundle.occupancy_for(mu)?;
    let qbar = bundle.avg_q(i)[s * game.action_counts()[i] + a_i];
    Ok(d[s] * qbar / (F::one() - game.discount()))
}

/// Residual of the performance-difference identities between two joint
/// policies: (a) the joint form per player reward, and (b) the single-agent
/// deviation form per player with the opponents frozen. Exact identities, so
/// the residual is numerical noise only.
pub fn perf_diff_check<F: Scalar>(
    game: &MarkovGame<F>,
    policy_a: &JointPolicy<F>,
    policy_b: &JointPolicy<F>,
    mu: &[F],
) -> Result<F> {
    policy_a.matches_game(game)?;
    policy_b.matches_game(game)?;
    if mu.len() != game.num_states() {
        return Err(Error::Dimension("mu length != num_states".into()));
    }
    let n = game.num_players();
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let scale = F::one() / (F::one() - game.discount());

    let bundle_b = evaluate(game, policy_b, None)?;
    let bundle_a = evaluate(game, policy_a, None)?;
    let d_a = bundle_a.occupancy_for(mu)?;

    let mut residual = F::zero();

    // (a) joint form: V_i^{pi'}(mu) - V_i^{pi}(mu)
    //     = 1/(1-gamma) sum_{s,a} d^{pi'}(s) (pi'(a|s) - pi(a|s)) Q_i^{pi}(s,a).
    for i in 0..n {
        let lhs = bundle_a.value(i, mu) - bundle_b.value(i, mu);
        let q = bundle_b.q_values(i);
        let mut rhs = F::zero();
        for s in 0..s_n {
            let mut inner = F::zero();
            for ja in 0..a_n {
                let diff = policy_a.joint_prob(game.joint(), s, ja)
                    - policy_b.joint_prob(game.joint(), s, ja);
                inner += diff * q[s * a_n + ja];
            }
            rhs += d_a[s] * inner;
        }
        residual = residual.max((lhs - scale * rhs).abs());
    }

    // (b) single-agent deviation: player i moves from pi to pi', others stay
    //     at pi. Uses the averaged Q under the base policy.
    for i in 0..n {
        let mut rows: Vec<Vec<F>> = (0..n)
            .map(|j| {
                (0..s_n)
                    .flat_map(|s| policy_b.row(j, s).to_vec())
                    .collect()
            })
            .collect();
        rows[i] = (0..s_n).flat_map(|s| policy_a.row(i, s).to_vec()).collect();
        let mixed = JointPolicy::from_rows(s_n, game.action_counts(), rows)?;
        let bundle_mixed = evaluate(game, &mixed, None)?;
        let d_mixed = bundle_mixed.occupancy_for(mu)?;
        let lhs = bundle_mixed.value(i, mu) - bundle_b.value(i, mu);
        let c = game.action_counts()[i];
        let qbar = bundle_b.avg_q(i);
        let mut rhs = F::zero();
        for s in 0..s_n {
            let mut inner = F::zero();
            for a in 0..c {
                inner += (policy_a.row(i, s)[a] - policy_b.row(i, s)[a]) * qbar[s * c + a];
            }
            rhs += d_mixed[s] * inner;
        }
        residual = residual.max((lhs - scale * rhs).abs());
    }

    Ok(residual)
}

/// Max-norm residual of the Bellman fixed-point equation for every player's
/// returned Q table, recombining `V` from the policy and Q itself.
pub fn bellman_residual<F: Scalar>(
    game: &MarkovGame<F>,
    policy: &JointPolicy<F>,
    bundle: &EvalBundle<F>,
) -> F {
    let n = game.num_players();
    let s_n = game.num_states();
    let a_n = game.num_joint_actions();
    let mut worst = F::zero();
    for i in 0..n {
        let q = bundle.q_values(i);
        // V recombined from the Q table directly.
        let mut v = vec![F::zero(); s_n];
        for s in 0..s_n {
            for ja in 0..a_n {
                v[s] += policy.joint_prob(game.joint(), s, ja) * q[s * a_n + ja];
            }
        }
        for s in 0..s_n {
            for ja in 0..a_n {
                let expect = dot(game.transition_row(s, ja), &v);
                let r = q[s * a_n + ja] - game.reward(i, s, ja) - game.discount() * expect;
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}
