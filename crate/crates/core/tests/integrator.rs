mod support;

use occlp::dynamics::{
    builtin_system, integrate, Constraint, ControlSignal, ExprSystemDef, SystemSpec, TOL_CONS,
};
use proptest::prelude::*;

fn exact_rotation(y0: [f64; 2], angle: f64) -> [f64; 2] {
    // y1' = y2, y2' = -y1 turns clockwise
    let (s, c) = angle.sin_cos();
    [c * y0[0] + s * y0[1], -s * y0[0] + c * y0[1]]
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn cartesian_quarter_turn_matches_fine_step_reference() {
    println!("{}", support::rk4_vs_fine_step().unwrap());
}

#[test]
fn halving_the_step_cuts_the_error_sixteenfold() {
    let sys = builtin_system("rotation-cartesian").unwrap();
    let y0 = [0.5, 0.0];
    let want = exact_rotation(y0, 1.0);
    let err = |h: f64| {
        let tr = integrate(&sys, &y0, &ControlSignal::constant(1.0), 1.0, h, 0.0).unwrap();
        dist(tr.final_state(), &want)
    };
    let (e1, e2, e3) = (err(0.2), err(0.1), err(0.05));
    for ratio in [e1 / e2, e2 / e3] {
        assert!(
            (14.0..=18.0).contains(&ratio),
            "ratio {ratio} ({e1}, {e2}, {e3})"
        );
    }
}

#[test]
fn expression_system_reproduces_the_builtin() {
    let expr = SystemSpec::from_exprs(&ExprSystemDef {
        state_names: vec!["y1".into(), "y2".into()],
        control_name: "u".into(),
        f: vec!["y2*u".into(), "-y1*u".into()],
        k: "(1 - y1)^2 + y2^2".into(),
        control_min: -1.0,
        control_max: 1.0,
        control_count: 11,
        constraint: Constraint::Disk {
            center: vec![0.0, 0.0],
            radius: 1.0,
        },
        mf: 1.1,
        mk: 4.41,
        delta0: 0.1,
        periodic_axes: vec![],
    })
    .unwrap();
    let builtin = builtin_system("rotation-cartesian").unwrap();
    let u = ControlSignal::from_durations(&[0.7, 1.3, 2.0], &[1.0, -0.4, 0.6]).unwrap();
    let a = integrate(&expr, &[0.3, 0.4], &u, 4.0, 1e-2, 0.0).unwrap();
    let b = integrate(&builtin, &[0.3, 0.4], &u, 4.0, 1e-2, 0.0).unwrap();
    for (p, q) in a.states.iter().zip(&b.states) {
        assert!(dist(p, q) <= 1e-13);
    }
    let ka = a.time_average(|y, u| expr.k(y, u)).unwrap();
    let kb = b.time_average(|y, u| builtin.k(y, u)).unwrap();
    assert!((ka - kb).abs() <= 1e-13);
}

fn signal(controls: Vec<f64>) -> impl Strategy<Value = ControlSignal> {
    prop::collection::vec((0.05f64..1.5, prop::sample::select(controls)), 1..8).prop_map(|pieces| {
        let (d, v): (Vec<f64>, Vec<f64>) = pieces.into_iter().unzip();
        ControlSignal::from_durations(&d, &v).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cartesian_radius_is_conserved(
        radius in 0.0f64..0.9,
        angle in -3.0f64..3.0,
        u in signal(builtin_system("rotation-cartesian").unwrap().controls),
    ) {
        let sys = builtin_system("rotation-cartesian").unwrap();
        let y0 = [radius * angle.cos(), radius * angle.sin()];
        let tr = integrate(&sys, &y0, &u, 5.0, 1e-2, 0.0).unwrap();
        let r0 = radius * radius;
        for (i, y) in tr.states.iter().enumerate() {
            prop_assert!((y[0] * y[0] + y[1] * y[1] - r0).abs() <= TOL_CONS);
            if i > 0 {
                let dt = tr.times[i] - tr.times[i - 1];
                prop_assert!(dist(y, &tr.states[i - 1]) <= sys.mf * dt * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn polar_radius_is_constant(
        r in 0.0f64..=1.0,
        u in signal(builtin_system("rotation-polar").unwrap().controls),
    ) {
        let sys = builtin_system("rotation-polar").unwrap();
        // start at θ = 0 so that 1.5 time units of turning stay inside [-π, π]
        let horizon = 1.5;
        let tr = integrate(&sys, &[r, 0.0], &u, horizon, 1e-2, 0.0).unwrap();
        for y in &tr.states {
            prop_assert!((y[0] - r).abs() <= 1e-12);
        }
    }
}
