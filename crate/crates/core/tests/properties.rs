//! Randomized invariants checked with proptest.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use factor_bootstrap::sim::{Design, SimulationConfig};
use factor_bootstrap::{
    compute_lambda_bar, empirical_quantile, estimate_factors, estimate_num_factors, fit,
    generate_panel, residualize, standard_normal_vector, PanelData, StreamKey,
};

fn instance(t: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let z = standard_normal_vector(StreamKey::new(seed, "prop", 0), t * p + t).unwrap();
    (
        DMatrix::from_column_slice(t, p, &z[..t * p]),
        DVector::from_column_slice(&z[t * p..]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn projector_is_idempotent_and_annihilates_residuals(
        t in 8usize..30,
        p in 2usize..20,
        k in 1usize..4,
        seed in 0u64..1_000_000,
    ) {
        prop_assume!(k < t.min(p));
        let (x, y) = instance(t, p, seed);
        let est = estimate_factors(&x, k).unwrap();
        let data = PanelData::new(y, x.clone(), None).unwrap();
        let dec = residualize(&data, &est).unwrap();
        let scale = x.abs().max().max(1.0);
        let p_hat = &est.f_hat * est.f_hat.transpose() / t as f64;
        prop_assert!((&p_hat * &p_hat - &p_hat).abs().max() <= 1e-8 * scale);
        prop_assert!((&p_hat * &dec.u_hat).abs().max() <= 1e-7 * scale);
        prop_assert!((p_hat.trace() - k as f64).abs() <= 1e-8);
    }

    #[test]
    fn lasso_is_exactly_zero_at_and_above_lambda_bar(
        t in 8usize..25,
        p in 2usize..20,
        seed in 0u64..1_000_000,
        factor in 1.0f64..5.0,
    ) {
        let (u, y) = instance(t, p, seed);
        let bar = compute_lambda_bar(&u, &y).unwrap();
        let f = fit(&u, &y, bar * factor, None).unwrap();
        prop_assert!(f.beta.iter().all(|&b| b == 0.0));
        // Strictly below the threshold at least one coordinate activates.
        let f2 = fit(&u, &y, bar * 0.999, None).unwrap();
        prop_assert!(f2.beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn empirical_quantile_is_monotone_in_level(
        seed in 0u64..1_000_000,
        len in 1usize..200,
        a in 0.01f64..0.49,
        b in 0.5f64..0.99,
    ) {
        let draws = standard_normal_vector(StreamKey::new(seed, "prop-q", 1), len).unwrap();
        // Smaller alpha means a higher quantile.
        let hi = empirical_quantile(&draws, a).unwrap();
        let lo = empirical_quantile(&draws, b).unwrap();
        prop_assert!(hi >= lo);
        let max = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(lo >= min && hi <= max);
    }
}

#[test]
fn eigenvalue_ratio_recovers_two_factors_in_design_2() {
    // The ratio estimator should pick K=2 in at least 95% of replications.
    let reps = 200;
    let mut hits = 0;
    for rep in 0..reps {
        let cfg = SimulationConfig::new(100, 100, Design::Two, 0.0);
        let data = generate_panel(&cfg, rep).unwrap();
        if estimate_num_factors(data.x(), 8).unwrap() == 2 {
            hits += 1;
        }
    }
    let share = hits as f64 / reps as f64;
    assert!(share >= 0.95, "K_hat=2 in only {share:.3} of replications");
}
