//! Independent policy mirror descent for Markov potential games.
//!
//! All players update simultaneously from the same evaluation of the current
//! joint policy. Two mirror maps are supported:
//!
//! - Euclidean: playerwise projected Q-ascent,
//!   `pi_{i,s} <- Proj_simplex(pi_{i,s} + eta * Qbar_{i,s})`.
//! - KL: multiplicative weights / natural policy gradient,
//!   `pi_i(a|s) <- pi_i(a|s) exp(eta * Qbar_i(s,a)) / Z^{i,s}`,
//!   optionally in advantage form where the exponent is
//!   `eta_adv / (1-gamma) * Abar_i(s,a)` with `eta_adv = (1-gamma) * eta`,
//!   which produces the same policy sequence when step sizes are matched.
//!
//! Step sizes: the prescribed constants are
//! `eta = (1-gamma) / (4 phi_max sum_i |A_i|)` for Euclidean and
//! `eta = (1-gamma) / (2 phi_max sqrt(N))` for KL (Q-value scale; the
//! advantage-scale value is `(1-gamma)` times that). Configured step sizes
//! are always in the Q-value scale; the advantage rescaling happens at
//! application time.
//!
//! KL updates run in log space with a per-row max shift, and report log Z
//! rather than Z so large exponents cannot overflow. Zero entries stay zero;
//! the log is only ever taken on positive entries.

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalBundle};
use crate::game::{JointPolicy, MarkovGame, PotentialSpec};
use crate::scalar::Scalar;

/// Mirror map selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    Euclidean,
    Kl,
}

/// Constant step size: explicit, or the prescribed theorem value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize<F> {
    Theorem,
    Fixed(F),
}

/// Starting joint policy.
#[derive(Debug, Clone)]
pub enum InitialPolicy<F> {
    Uniform,
    Explicit(JointPolicy<F>),
}

/// Configuration of one PMD run.
#[derive(Debug, Clone)]
pub struct PmdConfig<F> {
    pub regularizer: Regularizer,
    pub step_size: StepSize<F>,
    pub num_iterations: usize,
    /// KL only: drive the exponent with averaged advantages instead of
    /// averaged Q values. Policy iterates are identical either way; the
    /// recorded log-normalizers differ.
    pub advantage_form: bool,
    pub initial_policy: InitialPolicy<F>,
}

impl<F: Scalar> PmdConfig<F> {
    pub fn new(regularizer: Regularizer) -> Self {
        Self {
            regularizer,
            step_size: StepSize::Theorem,
            num_iterations: 100,
            advantage_form: regularizer == Regularizer::Kl,
            initial_policy: InitialPolicy::Uniform,
        }
    }
}

/// Snapshot of one PMD iterate plus the quantities produced by the step
/// leaving it.
#[derive(Debug, Clone)]
pub struct IterationRecord<F> {
    /// 1-based iteration index.
    pub t: usize,
    /// The joint policy pi^{(t)}.
    pub policy: JointPolicy<F>,
    /// Phi^{pi^{(t)}}(rho).
    pub potential: F,
    /// KL: log Z^{i,s} per player and state for the step t -> t+1.
    pub log_z: Option<Vec<Vec<F>>>,
    /// Euclidean: squared row displacement per player and state.
    pub sq_displacement: Option<Vec<Vec<F>>>,
}

/// A full PMD trajectory: records for t = 1..T plus the final policy.
#[derive(Debug, Clone)]
pub struct PmdRun<F> {
    pub regularizer: Regularizer,
    pub advantage_form: bool,
    /// Constant step size actually used, in the Q-value scale.
    pub step_size: F,
    pub gamma: F,
    pub records: Vec<IterationRecord<F>>,
    /// pi^{(T+1)}.
    pub final_policy: JointPolicy<F>,
}

impl<F: Scalar> PmdRun<F> {
    pub fn num_iterations(&self) -> usize {
        self.records.len()
    }

    /// Policy at 1-based iteration t (t = T+1 returns the final policy).
    pub fn policy(&self, t: usize) -> &JointPolicy<F> {
        if t == self.records.len() + 1 {
            &self.final_policy
        } else {
            &self.records[t - 1].policy
        }
    }

    /// The advantage-scale step size `(1-gamma) * eta`; the improvement
    /// inequality for KL runs is stated in this scale.
    pub fn advantage_step_size(&self) -> F {
        (F::one() - self.gamma) * self.step_size
    }
}

/// Prescribed constant step size from the game's structural constants.
pub fn theorem_step_size<F: Scalar>(
    regularizer: Regularizer,
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
) -> Result<F> {
    theorem_step_size_parts(
        regularizer,
        game.discount(),
        potential.phi_max(),
        game.action_counts(),
    )
}

/// [`theorem_step_size`] from raw parts:
/// Euclidean `(1-gamma) / (4 phi_max sum_i |A_i|)`,
/// KL `(1-gamma) / (2 phi_max sqrt(N))` (Q-value scale).
pub fn theorem_step_size_parts<F: Scalar>(
    regularizer: Regularizer,
    gamma: F,
    phi_max: F,
    action_counts: &[usize],
) -> Result<F> {
    if phi_max <= F::zero() {
        return Err(Error::DegeneratePotential);
    }
    let one_minus = F::one() - gamma;
    Ok(match regularizer {
        Regularizer::Euclidean => {
            let sum_actions = F::of_usize(action_counts.iter().sum());
            one_minus / (F::of(4.0) * phi_max * sum_actions)
        }
        Regularizer::Kl => {
            let n = F::of_usize(action_counts.len());
            one_minus / (F::of(2.0) * phi_max * n.sqrt())
        }
    })
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
/// Idempotent on valid rows; rejects NaN and infinite inputs.
pub fn project_simplex<F: Scalar>(v: &[F]) -> Result<Vec<F>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite entries compare"));
    let mut cumsum = F::zero();
    let mut rho = 0usize;
    let mut theta = F::zero();
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - F::one()) / F::of_usize(k + 1);
        if u - t > F::zero() {
            rho = k + 1;
            theta = t;
        }
    }
    debug_assert!(rho > 0);
    Ok(v.iter().map(|&x| (x - theta).max(F::zero())).collect())
}

/// One Euclidean row update; returns the new row and its squared displacement.
fn euclidean_row_update<F: Scalar>(row: &[F], scores: &[F], eta: F) -> Result<(Vec<F>, F)> {
    let shifted: Vec<F> = row.iter().zip(scores).map(|(&p, &q)| p + eta * q).collect();
    let new_row = project_simplex(&shifted)?;
    let disp = new_row
        .iter()
        .zip(row)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok((new_row, disp))
}

/// One multiplicative-weights row update in log space; returns the new row
/// and log Z. Zero entries are preserved exactly.
fn kl_row_update<F: Scalar>(row: &[F], scores: &[F], eta: F) -> (Vec<F>, F) {
    let mut shift = F::neg_infinity();
    let mut w = vec![F::neg_infinity(); row.len()];
    for (a, (&p, &q)) in row.iter().zip(scores).enumerate() {
        if p > F::zero() {
            w[a] = p.ln() + eta * q;
            shift = shift.max(w[a]);
        }
    }
    let mut denom = F::zero();
    for &wa in &w {
        if wa > F::neg_infinity() {
            denom += (wa - shift).exp();
        }
    }
    let log_z = shift + denom.ln();
    let new_row = w
        .iter()
        .map(|&wa| {
            if wa > F::neg_infinity() {
                (wa - shift).exp() / denom
            } else {
                F::zero()
            }
        })
        .collect();
    (new_row, log_z)
}

/// One simultaneous PMD step for all players from a bundle evaluated at
/// `policy`. Returns the next joint policy and the record for this iterate.
pub fn pmd_step<F: Scalar>(
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    policy: &JointPolicy<F>,
    bundle: &EvalBundle<F>,
    config: &PmdConfig<F>,
    t: usize,
) -> Result<(JointPolicy<F>, IterationRecord<F>)> {
    policy.matches_game(game)?;
    let eta = match config.step_size {
        StepSize::Fixed(e) => {
            if !(e > F::zero()) {
                return Err(Error::InvalidArgument("step size must be positive".into()));
            }
            e
        }
        StepSize::Theorem => theorem_step_size(config.regularizer, game, potential)?,
    };

    let n = game.num_players();
    let s_n = game.num_states();
    let mut next = policy.clone();
    let mut log_z: Option<Vec<Vec<F>>> = None;
    let mut sq_disp: Option<Vec<Vec<F>>> = None;
    match config.regularizer {
        Regularizer::Euclidean => {
            let mut disp = vec![vec![F::zero(); s_n]; n];
            for i in 0..n {
                let c = game.action_counts()[i];
                for s in 0..s_n {
                    let scores = &bundle.avg_q(i)[s * c..(s + 1) * c];
                    let (row, d) = euclidean_row_update(policy.row(i, s), scores, eta)?;
                    next.set_row(i, s, &row);
                    disp[i][s] = d;
                }
            }
            sq_disp = Some(disp);
        }
        Regularizer::Kl => {
            let mut lz = vec![vec![F::zero(); s_n]; n];
            for i in 0..n {
                let c = game.action_counts()[i];
                let table = if config.advantage_form {
                    bundle.avg_adv(i)
                } else {
                    bundle.avg_q(i)
                };
                for s in 0..s_n {
                    let scores = &table[s * c..(s + 1) * c];
                    let (row, z) = kl_row_update(policy.row(i, s), scores, eta);
                    next.set_row(i, s, &row);
                    lz[i][s] = z;
                }
            }
            log_z = Some(lz);
        }
    }

    let record = IterationRecord {
        t,
        policy: policy.clone(),
        potential: bundle.potential_value(game.initial_dist())?,
        log_z,
        sq_displacement: sq_disp,
    };
    Ok((next, record))
}

/// Runs PMD for `config.num_iterations` steps. Deterministic in its inputs.
/// Callers certify the potential with `verify_mpg` beforehand or trust it
/// explicitly; the improvement guarantees assume the game is an MPG.
pub fn run_pmd<F: Scalar>(
    game: &MarkovGame<F>,
    potential: &PotentialSpec<F>,
    config: &PmdConfig<F>,
) -> Result<PmdRun<F>> {
    if config.num_iterations == 0 {
        return Err(Error::InvalidArgument("num_iterations must be at least 1".into()));
    }
    let mut policy = match &config.initial_policy {
        InitialPolicy::Uniform => JointPolicy::uniform(game.num_states(), game.action_counts()),
        InitialPolicy::Explicit(p) => {
            p.matches_game(game)?;
            if config.regularizer == Regularizer::Kl {
                let interior = (0..game.num_players()).all(|i| {
                    (0..game.num_states()).all(|s| p.row(i, s).iter().all(|&x| x > F::zero()))
                });
                if !interior {
                    return Err(Error::InvalidArgument(
                        "KL regularization requires a strictly interior initial policy".into(),
                    ));
                }
            }
            p.clone()
        }
    };
    let eta = match config.step_size {
        StepSize::Fixed(e) => e,
        StepSize::Theorem => theorem_step_size(config.regularizer, game, potential)?,
    };

    let mut records = Vec::with_capacity(config.num_iterations);
    for t in 1..=config.num_iterations {
        let bundle = evaluate(game, &policy, Some(potential))?;
        let (next, record) = pmd_step(game, potential, &policy, &bundle, config, t)?;
        records.push(record);
        policy = next;
    }
    Ok(PmdRun {
        regularizer: config.regularizer,
        advantage_form: config.advantage_form && config.regularizer == Regularizer::Kl,
        step_size: eta,
        gamma: game.discount(),
        records,
        final_policy: policy,
    })
}
