mod support;

use occlp::certificate::{polar_rotation_certificate, synthesize_feedback, Field};
use occlp::dynamics::builtin_system;
use proptest::prelude::*;

#[test]
fn lemma_inequality_and_band_feasibility_of_every_optimal_gamma() {
    println!(
        "{}",
        support::value_below_cost_on_optimal_gammas(&support::polar_tables()).unwrap()
    );
}

#[test]
fn gradient_diagnostic_passes_on_polar_tables() {
    println!(
        "{}",
        support::dpp_on_polar_tables(&support::polar_tables()).unwrap()
    );
}

#[test]
fn relaxed_value_is_below_the_constrained_one_node_wise() {
    println!("{}", support::relaxed_below_constrained().unwrap());
}

#[test]
fn perturbed_kstar_is_monotone_in_epsilon_and_inverse_horizon() {
    println!("{}", support::kstar_monotone().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn feedback_ignores_positive_scaling_of_eta(
        r in 0.0f64..=1.0,
        th in -3.1f64..3.1,
        alpha in 0.01f64..100.0,
    ) {
        // k does not depend on u here, so argmin_u is unchanged by η → αη
        let sys = builtin_system("rotation-polar").unwrap();
        let cert = polar_rotation_certificate(&[0.5, 1.0]).unwrap();
        let mut scaled = cert.clone();
        let a = format!("{alpha:e}");
        scaled.eta = Field::closed(
            &["r", "th"],
            &format!("{a}*2*r*abs(th - sin(th))"),
            &[&format!("{a}*2*abs(th - sin(th))"), &format!("{a}*2*r*sgn(th)*(1 - cos(th))")],
        )
        .unwrap();
        let y = [r, th];
        let f1 = synthesize_feedback(&cert, &sys);
        let f2 = synthesize_feedback(&scaled, &sys);
        prop_assert_eq!(f1.argmin_set(&y).unwrap(), f2.argmin_set(&y).unwrap());
        prop_assert_eq!(f1.control(&y).unwrap(), f2.control(&y).unwrap());
    }
}
