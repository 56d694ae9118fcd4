//! End-to-end library checks: the full pipeline on both scalar types and
//! through the file format.

use mpg_core::eval::{evaluate, total_potential};
use mpg_core::format::{bundle_debug_json, load_game, save_game};
use mpg_core::game::{make_identical_interest, verify_mpg, JointPolicy};
use mpg_core::metrics::{mismatch_coefficients, nash_gap, theorem_bound};
use mpg_core::pmd::{run_pmd, PmdConfig, Regularizer};
use mpg_core::{Game32, Game64};

#[test]
fn pipeline_generate_verify_learn_measure() {
    let (game, pot): (Game64, _) = make_identical_interest(2, 3, &[2, 2], 0.5, 42).unwrap();
    let residual = verify_mpg(&game, &pot, None).unwrap();
    assert!(residual < 1e-10);

    let mut config = PmdConfig::new(Regularizer::Kl);
    config.num_iterations = 300;
    let run = run_pmd(&game, &pot, &config).unwrap();

    // Learning improves the potential and shrinks the worst gap.
    let phi_first = run.records.first().unwrap().potential;
    let phi_last = total_potential(&game, &pot, &run.final_policy, game.initial_dist()).unwrap();
    assert!(phi_last >= phi_first);
    let first_gap = nash_gap(&game, &run.records[0].policy).unwrap().worst;
    let last_gap = nash_gap(&game, &run.final_policy).unwrap().worst;
    assert!(last_gap <= first_gap);
    assert!(last_gap < 0.05, "final gap {last_gap}");

    // The regret bound at T dominates the final gap trivially at desk scale.
    let mismatch = mismatch_coefficients(&game, None).unwrap();
    let bound = theorem_bound(Regularizer::Kl, &game, &pot, &mismatch, 300, Some(0.25)).unwrap();
    assert!(last_gap <= bound);
}

#[test]
fn file_format_roundtrips_through_evaluation() {
    let (game, pot): (Game64, _) = make_identical_interest(2, 2, &[2, 3], 0.8, 9).unwrap();
    let json = save_game(&game, Some(&pot));
    let (loaded, loaded_pot) = load_game::<f64>(&json).unwrap();
    let policy = JointPolicy::random_interior(2, loaded.action_counts(), 1);
    let a = evaluate(&game, &policy, Some(&pot)).unwrap();
    let b = evaluate(&loaded, &policy, loaded_pot.as_ref()).unwrap();
    for i in 0..2 {
        assert_eq!(a.q_values(i), b.q_values(i));
    }
    let dump = bundle_debug_json(&b);
    assert!(dump["occupancy"].is_array());
    assert_eq!(dump["q_values"].as_array().unwrap().len(), 2);
}

#[test]
fn f32_engine_runs_at_reduced_precision() {
    let (game, pot): (Game32, _) = make_identical_interest(2, 2, &[2, 2], 0.9f32, 5).unwrap();
    let residual = verify_mpg(&game, &pot, None).unwrap();
    assert!(residual < 1e-4, "f32 residual {residual}");
    let mut config = PmdConfig::<f32>::new(Regularizer::Euclidean);
    config.num_iterations = 50;
    let run = run_pmd(&game, &pot, &config).unwrap();
    for rec in &run.records {
        for i in 0..2 {
            for s in 0..2 {
                let sum: f32 = rec.policy.row(i, s).iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
    // Potential still improves monotonically up to f32 noise.
    let phis: Vec<f32> = run.records.iter().map(|r| r.potential).collect();
    for w in phis.windows(2) {
        assert!(w[1] >= w[0] - 1e-5);
    }
}
