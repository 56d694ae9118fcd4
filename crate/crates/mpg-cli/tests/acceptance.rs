//! Acceptance suite: the project's verification gates, one test per
//! criterion. Each test prints a single pass line with its headline numbers
//! (run with `--nocapture` to see them).
//!
//! Gate summary:
//!  1. deviation-identity certification across all three game families
//!  2. exact-evaluation identities on random instances
//!  3. policy-gradient identity vs finite differences, and dV_i = dPhi
//!  4. simplex projection vs the active-set oracle
//!  5. per-step potential improvement, Euclidean runs
//!  6. per-step potential improvement, KL runs
//!  7. closed-form regret bounds dominate measured regret everywhere
//!  8. player-count scaling: exact formula ratios and empirical growth
//!  9. KL fixed-point characterization on a coordination game
//! 10. byte-identical reruns

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use mpg_core::eval::{
    evaluate, occupancy_measure, perf_diff_check, policy_gradient_entry, total_potential,
    bellman_residual,
};
use mpg_core::game::{
    make_dummy_term_mpg, make_identical_interest, make_stateless_congestion, verify_mpg,
    JointPolicy, MarkovGame, PotentialSpec,
};
use mpg_core::joint::average_except;
use mpg_core::metrics::{
    build_regret_trace, iteration_bound_parts, mismatch_coefficients, theorem_bound_parts,
    MismatchMethod,
};
use mpg_core::oracle::{fd_gradient_oracle, projection_oracle};
use mpg_core::pmd::{
    project_simplex, run_pmd, InitialPolicy, PmdConfig, PmdRun, Regularizer, StepSize,
};
use mpg_core::{Game64, Policy64, Potential64};

use mpg_cli::config::ExperimentConfig;
use mpg_cli::emit::{summary_csv, trace_csv};
use mpg_cli::runner::{run_experiment, Overrides};

fn pass(k: usize, name: &str, detail: String) {
    println!("acceptance [{k:>2}/10] {name}: PASS ({detail})");
}

/// Random desk-scale instance within the certification size caps.
fn random_instance(rng: &mut ChaCha8Rng, family: usize, seed: u64) -> (Game64, Potential64) {
    let n = rng.gen_range(2..=3usize);
    let s = rng.gen_range(1..=4usize);
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3usize)).collect();
    let gamma = [0.0, 0.5, 0.9][rng.gen_range(0..3)];
    match family {
        0 => make_identical_interest(n, s, &counts, gamma, seed).unwrap(),
        _ => make_dummy_term_mpg(n, s, &counts, gamma, seed).unwrap(),
    }
}

// -------------------------------------------------------------------------
// 1. MPG certification across the three families
// -------------------------------------------------------------------------

#[test]
fn criterion_01_mpg_certification() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    // Identical interest: |S| <= 4, N <= 3, |A_i| <= 3.
    for seed in 0..50u64 {
        let (game, pot) = random_instance(&mut rng, 0, 1_000 + seed);
        let r = verify_mpg(&game, &pot, None).unwrap();
        assert!(r < 1e-10, "identical-interest seed {seed}: residual {r:e}");
        worst = worst.max(r);
        count += 1;
    }
    // Dummy-term rewards with action-independent dynamics.
    for seed in 0..50u64 {
        let (game, pot) = random_instance(&mut rng, 1, 2_000 + seed);
        let r = verify_mpg(&game, &pot, None).unwrap();
        assert!(r < 1e-10, "dummy-term seed {seed}: residual {r:e}");
        worst = worst.max(r);
        count += 1;
    }
    // Congestion with N <= 6.
    for seed in 0..50u64 {
        let n = 2 + (seed as usize % 5);
        let facilities = 1 + (seed as usize % 3);
        let (game, pot) = make_stateless_congestion::<f64>(n, facilities, 3_000 + seed).unwrap();
        let r = verify_mpg(&game, &pot, None).unwrap();
        assert!(r < 1e-10, "congestion seed {seed}: residual {r:e}");
        worst = worst.max(r);
        count += 1;
    }
    pass(1, "mpg certification, 3 families", format!("{count} games, max residual {worst:.2e}"));
}

// -------------------------------------------------------------------------
// 2. Exact-evaluation identities
// -------------------------------------------------------------------------

#[test]
fn criterion_02_exact_evaluation_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut worst_bellman = 0.0f64;
    let mut worst_perf = 0.0f64;
    let mut worst_mean = 0.0f64;
    for k in 0..200u64 {
        let (game, _) = random_instance(&mut rng, (k % 2) as usize, 10_000 + k);
        let s_n = game.num_states();
        let pa = JointPolicy::random_interior(s_n, game.action_counts(), 20_000 + k);
        let pb = JointPolicy::random_interior(s_n, game.action_counts(), 30_000 + k);
        let bundle = evaluate(&game, &pa, None).unwrap();

        let br = bellman_residual(&game, &pa, &bundle);
        assert!(br < 1e-10, "bellman residual {br:e}");
        worst_bellman = worst_bellman.max(br);

        let mu: Vec<f64> = game.initial_dist().to_vec();
        let pd = perf_diff_check(&game, &pa, &pb, &mu).unwrap();
        assert!(pd < 1e-10, "perf-diff residual {pd:e}");
        worst_perf = worst_perf.max(pd);

        for i in 0..game.num_players() {
            let c = game.action_counts()[i];
            for s in 0..s_n {
                let mean: f64 = (0..c)
                    .map(|a| pa.row(i, s)[a] * bundle.avg_adv(i)[s * c + a])
                    .sum();
                assert!(mean.abs() < 1e-10, "advantage mean {mean:e}");
                worst_mean = worst_mean.max(mean.abs());
            }
        }

        let d = bundle.occupancy();
        let floor = 1.0 - game.discount();
        for s in 0..s_n {
            assert!(
                d[s] >= floor * game.initial_dist()[s] - 1e-12,
                "occupancy floor violated at state {s}"
            );
        }
    }
    pass(
        2,
        "exact-evaluation identities, 200 instances",
        format!(
            "bellman {worst_bellman:.1e}, perf-diff {worst_perf:.1e}, adv-mean {worst_mean:.1e}"
        ),
    );
}

// -------------------------------------------------------------------------
// 3. Gradient identity
// -------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    // (i) formula vs central differences on 100 random entries.
    let mut worst_fd = 0.0f64;
    let mut checked = 0usize;
    while checked < 100 {
        let n = rng.gen_range(2..=3usize);
        let s_n = rng.gen_range(1..=3usize);
        let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3usize)).collect();
        let gamma = [0.0, 0.5, 0.9][rng.gen_range(0..3)];
        let (game, _) = make_identical_interest::<f64>(n, s_n, &counts, gamma, 40_000 + checked as u64).unwrap();
        let policy = JointPolicy::random_interior(s_n, game.action_counts(), 50_000 + checked as u64);
        let mu: Vec<f64> = game.initial_dist().to_vec();
        for _ in 0..4 {
            let i = rng.gen_range(0..n);
            let s = rng.gen_range(0..s_n);
            let a = rng.gen_range(0..counts[i]);
            let built = policy_gradient_entry(&game, &policy, i, s, a, &mu).unwrap();
            let fd = fd_gradient_oracle(&game, &policy, i, s, a, &mu, 1e-5).unwrap();
            let err = (built - fd).abs();
            assert!(err < 1e-6, "gradient vs fd: {built} vs {fd} (err {err:e})");
            worst_fd = worst_fd.max(err);
            checked += 1;
        }
    }
    // (ii) on potential games, the value gradient equals the potential
    // gradient in every simplex-tangent direction. When the rewards ARE the
    // potential the unnormalized partials agree entrywise; with
    // opponent-only reward terms they differ by a per-row constant that
    // cancels against any within-simplex increment, so the row-centered
    // partials must agree entrywise instead.
    let mut worst_pot = 0.0f64;
    for k in 0..20u64 {
        let identical_interest = k % 2 == 0;
        let (game, pot) = random_instance(&mut rng, (k % 2) as usize, 60_000 + k);
        let s_n = game.num_states();
        let a_n = game.num_joint_actions();
        let policy = JointPolicy::random_interior(s_n, game.action_counts(), 70_000 + k);
        let bundle = evaluate(&game, &policy, Some(&pot)).unwrap();
        let mu: Vec<f64> = game.initial_dist().to_vec();
        let d = bundle.occupancy_for(&mu).unwrap();
        let qphi = bundle.potential_q().unwrap();
        let scale = 1.0 / (1.0 - game.discount());
        for i in 0..game.num_players() {
            let c = game.action_counts()[i];
            for s in 0..s_n {
                let rows: Vec<&[f64]> =
                    (0..game.num_players()).map(|j| policy.row(j, s)).collect();
                let qphi_bar = average_except(
                    &qphi[s * a_n..(s + 1) * a_n],
                    game.action_counts(),
                    &rows,
                    i,
                    1,
                );
                let mut diffs = Vec::with_capacity(c);
                for a in 0..c {
                    let grad_v = policy_gradient_entry(&game, &policy, i, s, a, &mu).unwrap();
                    let grad_phi = d[s] * qphi_bar[a] * scale;
                    diffs.push(grad_v - grad_phi);
                }
                if identical_interest {
                    for &err in &diffs {
                        assert!(err.abs() < 1e-8, "dV vs dPhi entrywise err {err:e}");
                        worst_pot = worst_pot.max(err.abs());
                    }
                } else {
                    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let spread = hi - lo;
                    assert!(spread < 1e-8, "dV - dPhi varies within a row by {spread:e}");
                    worst_pot = worst_pot.max(spread);
                }
            }
        }
    }
    pass(
        3,
        "gradient identity",
        format!("fd error {worst_fd:.1e} over 100 entries, dV-dPhi {worst_pot:.1e}"),
    );
}

// -------------------------------------------------------------------------
// 4. Projection correctness
// -------------------------------------------------------------------------

#[test]
fn criterion_04_projection_against_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=8usize);
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let built = project_simplex(&v).unwrap();
        let oracle = projection_oracle(&v).unwrap();
        for (b, o) in built.iter().zip(&oracle) {
            let err = (b - o).abs();
            assert!(err < 1e-9, "projection mismatch on {v:?}");
            worst = worst.max(err);
        }
    }
    pass(4, "simplex projection vs active-set oracle", format!("1000 vectors, max err {worst:.1e}"));
}

// -------------------------------------------------------------------------
// 5 & 6. Potential improvement inequalities
// -------------------------------------------------------------------------

/// Twenty seeded desk-scale potential games cycling the three families.
fn improvement_suite(seed: u64) -> (Game64, Potential64) {
    match seed % 5 {
        0 => make_identical_interest(2, 3, &[2, 2], 0.9, 100 + seed).unwrap(),
        1 => make_identical_interest(3, 2, &[2, 2, 2], 0.8, 200 + seed).unwrap(),
        2 => make_dummy_term_mpg(2, 3, &[2, 3], 0.85, 300 + seed).unwrap(),
        3 => make_stateless_congestion(3, 2, 400 + seed).unwrap(),
        _ => make_stateless_congestion(4, 2, 500 + seed).unwrap(),
    }
}

fn potentials_along(game: &Game64, pot: &Potential64, run: &PmdRun<f64>) -> Vec<f64> {
    let mut phis: Vec<f64> = run.records.iter().map(|r| r.potential).collect();
    phis.push(total_potential(game, pot, &run.final_policy, game.initial_dist()).unwrap());
    phis
}

fn run_suite(regularizer: Regularizer, iterations: usize, seed: u64) -> (Game64, Potential64, PmdRun<f64>) {
    let (game, pot) = improvement_suite(seed);
    let config = PmdConfig {
        regularizer,
        step_size: StepSize::Theorem,
        num_iterations: iterations,
        advantage_form: regularizer == Regularizer::Kl,
        initial_policy: InitialPolicy::Uniform,
    };
    let run = run_pmd(&game, &pot, &config).unwrap();
    (game, pot, run)
}

#[test]
fn criterion_05_euclidean_improvement() {
    let mut worst_slack = f64::INFINITY;
    for seed in 0..20u64 {
        let (game, pot, run) = run_suite(Regularizer::Euclidean, 200, seed);
        let phis = potentials_along(&game, &pot, &run);
        let eta = run.step_size;
        let one_minus = 1.0 - game.discount();
        let sum_actions: usize = game.action_counts().iter().sum();
        let coeff = 1.0 / (2.0 * eta * one_minus)
            - pot.phi_max() * sum_actions as f64 / (one_minus * one_minus);
        for (t, rec) in run.records.iter().enumerate() {
            let next_policy = run.policy(t + 2);
            let d = occupancy_measure(&game, next_policy, game.initial_dist()).unwrap();
            let disp = rec.sq_displacement.as_ref().unwrap();
            let mut weighted = 0.0;
            for per_state in disp.iter() {
                for (s, &x) in per_state.iter().enumerate() {
                    weighted += d[s] * x;
                }
            }
            let gain = phis[t + 1] - phis[t];
            let slack = gain - coeff * weighted;
            assert!(
                slack >= -1e-9,
                "seed {seed} t={}: improvement bound violated by {slack:e}",
                rec.t
            );
            worst_slack = worst_slack.min(slack);
            assert!(
                phis[t + 1] >= phis[t] - 1e-12,
                "seed {seed}: potential decreased at t={}",
                rec.t
            );
        }
    }
    pass(5, "euclidean potential improvement, 20 runs x 200 steps", format!("min slack {worst_slack:.1e}"));
}

#[test]
fn criterion_06_kl_improvement() {
    let mut worst_slack = f64::INFINITY;
    for seed in 0..20u64 {
        let (game, pot, run) = run_suite(Regularizer::Kl, 200, seed);
        let phis = potentials_along(&game, &pot, &run);
        let eta_adv = run.advantage_step_size();
        let one_minus = 1.0 - game.discount();
        let n = game.num_players() as f64;
        // Prescribed step sizes sit inside the improvement regime.
        assert!(eta_adv <= one_minus * one_minus / (pot.phi_max() * n.sqrt()) + 1e-15);
        for (t, rec) in run.records.iter().enumerate() {
            let next_policy = run.policy(t + 2);
            let d = occupancy_measure(&game, next_policy, game.initial_dist()).unwrap();
            let log_z = rec.log_z.as_ref().unwrap();
            let mut weighted = 0.0;
            for per_state in log_z.iter() {
                for (s, &z) in per_state.iter().enumerate() {
                    weighted += d[s] * z;
                }
            }
            let gain = phis[t + 1] - phis[t];
            let slack = gain - weighted / eta_adv;
            assert!(
                slack >= -1e-9,
                "seed {seed} t={}: improvement bound violated by {slack:e}",
                rec.t
            );
            worst_slack = worst_slack.min(slack);
            assert!(
                phis[t + 1] >= phis[t] - 1e-12,
                "seed {seed}: potential decreased at t={}",
                rec.t
            );
        }
    }
    pass(6, "kl potential improvement, 20 runs x 200 steps", format!("min slack {worst_slack:.1e}"));
}

// -------------------------------------------------------------------------
// 7. Theorem bounds dominate measured regret
// -------------------------------------------------------------------------

#[test]
fn criterion_07_bounds_dominate_empirics() {
    let mut min_margin = f64::INFINITY;
    for regularizer in [Regularizer::Euclidean, Regularizer::Kl] {
        for seed in 0..20u64 {
            let (game, pot, run) = run_suite(regularizer, 200, seed);
            let mismatch = mismatch_coefficients(&game, None).unwrap();
            assert_eq!(mismatch.method, MismatchMethod::ExactEnumeration);
            let trace = build_regret_trace(&game, &pot, &run).unwrap();
            for (idx, &running) in trace.running_regret.iter().enumerate() {
                let t = idx + 1;
                let c = trace.c_tracker.as_ref().map(|ct| ct[idx]);
                let bound = theorem_bound_parts(
                    regularizer,
                    pot.phi_max(),
                    game.discount(),
                    mismatch.kappa_tilde_upper,
                    game.action_counts(),
                    t,
                    c,
                )
                .unwrap();
                assert!(
                    running <= bound,
                    "{regularizer:?} seed {seed} t={t}: regret {running} exceeds bound {bound}"
                );
                min_margin = min_margin.min(bound - running);
            }
        }
    }
    pass(7, "closed-form bounds dominate measured regret", format!("min margin {min_margin:.3e}"));
}

// -------------------------------------------------------------------------
// 8. Player-count scaling
// -------------------------------------------------------------------------

#[test]
fn criterion_08_sqrt_n_scaling() {
    // (a) Exact formula ratios with everything but N held fixed: the
    // Euclidean iteration bound scales with sum|A_i| (4x from N=4 to N=16
    // at two actions each), the KL bound with sqrt(N) (2x).
    let counts4 = vec![2usize; 4];
    let counts16 = vec![2usize; 16];
    let e4 = iteration_bound_parts::<f64>(Regularizer::Euclidean, 1.0, 0.0, 1.0, &counts4, 0.05, None).unwrap();
    let e16 = iteration_bound_parts::<f64>(Regularizer::Euclidean, 1.0, 0.0, 1.0, &counts16, 0.05, None).unwrap();
    assert_eq!(e16 / e4, 4.0, "euclidean bound must scale exactly with sum of action counts");
    let k4 = iteration_bound_parts::<f64>(Regularizer::Kl, 1.0, 0.0, 1.0, &counts4, 0.05, Some(0.5)).unwrap();
    let k16 = iteration_bound_parts::<f64>(Regularizer::Kl, 1.0, 0.0, 1.0, &counts16, 0.05, Some(0.5)).unwrap();
    assert_eq!(k16 / k4, 2.0, "kl bound must scale exactly with sqrt(N)");

    // (b) Empirical sweep: stateless identical-interest, two actions per
    // player, N in {2,4,8,16}, five seeds, epsilon = 0.05.
    let config_json = r#"{
        "schema_version": 1,
        "game": {"generator": {"family": "identical_interest", "num_players": 2,
                                "num_states": 1, "actions_per_player": 2, "discount": 0.0}},
        "algorithms": [
            {"regularizer": "kl", "step_size": "theorem", "iterations": 20000},
            {"regularizer": "euclidean", "step_size": "theorem", "iterations": 20000}
        ],
        "seeds": [1, 2, 3, 4, 5],
        "epsilon": 0.05,
        "sweep_num_players": [2, 4, 8, 16],
        "stop_at_epsilon": true,
        "trust_mpg": true
    }"#;
    let config = ExperimentConfig::from_json(config_json).unwrap();
    let artifacts = run_experiment(&config, &Overrides::default(), true).unwrap();
    assert_eq!(artifacts.len(), 40);

    let median = |mut xs: Vec<f64>| -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len();
        if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
    };
    let med_iters = |alg: &str, n: usize| -> f64 {
        median(
            artifacts
                .iter()
                .filter(|a| a.algorithm == alg && a.num_players == n)
                .map(|a| {
                    a.iterations_to_epsilon.expect("every cell reaches epsilon") as f64
                })
                .collect(),
        )
    };

    // Every cell reaches epsilon and sits below its own closed-form
    // iteration bound.
    for a in &artifacts {
        let reg = if a.algorithm == "kl" { Regularizer::Kl } else { Regularizer::Euclidean };
        let iters = a.iterations_to_epsilon.expect("reached epsilon") as f64;
        let bound = iteration_bound_parts(
            reg,
            a.phi_max,
            a.discount,
            a.mismatch.kappa_tilde_upper,
            &a.action_counts,
            a.epsilon,
            a.empirical_c_upper,
        )
        .unwrap();
        assert!(iters <= bound, "{}: {iters} iterations vs bound {bound}", a.label);
    }

    // Growth factor across the sweep: the peak median iteration count
    // relative to the N=2 baseline. Large-N cells can stop immediately
    // (the uniform start is already an epsilon-equilibrium there), so the
    // peak, not the endpoint, carries the growth signal.
    let growth = |alg: &str| -> f64 {
        let base = med_iters(alg, 2);
        let peak = [2usize, 4, 8, 16]
            .iter()
            .map(|&n| med_iters(alg, n))
            .fold(0.0f64, f64::max);
        peak / base
    };
    let g_kl = growth("kl");
    let g_euc = growth("euclidean");
    assert!(
        g_kl <= g_euc,
        "kl grew {g_kl}x vs euclidean {g_euc}x; kl may not scale worse"
    );
    pass(
        8,
        "player-count scaling",
        format!("exact ratios 4x/2x; growth kl {g_kl:.2}x <= euclidean {g_euc:.2}x"),
    );
}

// -------------------------------------------------------------------------
// 9. KL fixed-point characterization
// -------------------------------------------------------------------------

#[test]
fn criterion_09_kl_fixed_point() {
    // Coordination game, interior start biased toward the (0,0) equilibrium.
    let rewards: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0];
    let game = MarkovGame::new(
        vec![2, 2],
        1,
        0.0,
        vec![1.0; 4],
        vec![rewards.clone(), rewards.clone()],
        vec![1.0],
    )
    .unwrap();
    let pot = PotentialSpec::new(rewards, 4).unwrap();
    let init = JointPolicy::from_rows(1, &[2, 2], vec![vec![0.9, 0.1], vec![0.9, 0.1]]).unwrap();
    let config = PmdConfig {
        regularizer: Regularizer::Kl,
        step_size: StepSize::Theorem,
        num_iterations: 5000,
        advantage_form: true,
        initial_policy: InitialPolicy::Explicit(init),
    };
    let run = run_pmd(&game, &pot, &config).unwrap();
    let final_policy: &Policy64 = &run.final_policy;
    let bundle = evaluate(&game, final_policy, Some(&pot)).unwrap();
    let mut residual = 0.0f64;
    for i in 0..2 {
        for a in 0..2 {
            let pi = final_policy.row(i, 0)[a];
            let adv = bundle.avg_adv(i)[a].abs();
            residual = residual.max(pi.min(adv));
        }
    }
    assert!(residual < 1e-6, "fixed-point residual {residual:e}");
    pass(9, "kl fixed-point characterization", format!("max min(pi, |adv|) = {residual:.1e}"));
}

// -------------------------------------------------------------------------
// 10. Reproducibility
// -------------------------------------------------------------------------

#[test]
fn criterion_10_reproducibility() {
    let config_json = r#"{
        "schema_version": 1,
        "game": {"generator": {"family": "congestion", "num_players": 2, "num_facilities": 2}},
        "algorithms": [{"regularizer": "kl", "step_size": "theorem", "iterations": 100}],
        "seeds": [1],
        "epsilon": 0.05
    }"#;
    let config = ExperimentConfig::from_json(config_json).unwrap();
    let first = run_experiment(&config, &Overrides::default(), false).unwrap();
    let second = run_experiment(&config, &Overrides::default(), false).unwrap();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].rows.len(), 100);

    let hash = |text: &str| -> String {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    };
    let t1 = trace_csv(&first[0]);
    let t2 = trace_csv(&second[0]);
    assert_eq!(hash(&t1), hash(&t2), "trace bodies must be hash-equal");
    let s1 = summary_csv(&first);
    let s2 = summary_csv(&second);
    assert_eq!(hash(&s1), hash(&s2), "summary bodies must be hash-equal");
    pass(10, "reproducibility", format!("trace sha256 {}", &hash(&t1)[..16]));
}
