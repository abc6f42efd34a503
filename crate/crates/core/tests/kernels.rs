mod common;

use common::{expm_taylor, rel_diff, rk45, simpson_matrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use quantswitch::example;
use quantswitch::linalg::spectral_norm;
use quantswitch::simulate::{lyapunov_derivative, simulate};
use quantswitch::synthesis::{v_gradient, v_value};
use quantswitch::system::{flow, hold_integral, transition_matrix, Plant, SwitchingSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unforced_oracle(plant: &Plant, signal: &SwitchingSignal, t0: f64, t1: f64, x: &DVector<f64>) -> DVector<f64> {
    // Integrate piecewise so the oracle never steps across a switch.
    let mut cuts = vec![t0];
    cuts.extend(signal.switch_times().filter(|&t| t > t0 && t < t1));
    cuts.push(t1);
    let mut y = x.clone();
    for w in cuts.windows(2) {
        let a = plant.mode(signal.mode_at(w[0])).a.clone();
        y = rk45(|_, y| &a * y, w[0], w[1], &y, 1e-12, 1e-14);
    }
    y
}

#[test]
fn transition_matrix_with_midpoint_switch_matches_ode() {
    let plant = example::plant();
    let signal = SwitchingSignal::new(0, vec![(0.0125, 1)]).unwrap();
    let phi = transition_matrix(&plant, &signal, 0.0, 0.025).unwrap().value;
    for j in 0..2 {
        let e = DVector::from_fn(2, |i, _| if i == j { 1.0 } else { 0.0 });
        let y = unforced_oracle(&plant, &signal, 0.0, 0.025, &e);
        for i in 0..2 {
            assert!((phi[(i, j)] - y[i]).abs() <= 1e-8, "entry ({i},{j})");
        }
    }
}

#[test]
fn transition_matrices_match_ode_over_unit_horizon() {
    let plant = example::plant();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let mut t = 0.0;
        let mut mode = 0;
        let mut switches = Vec::new();
        loop {
            t += rng.random_range(0.02..0.3);
            if t >= 1.0 {
                break;
            }
            mode = 1 - mode;
            switches.push((t, mode));
        }
        let signal = SwitchingSignal::new(0, switches).unwrap();
        let phi = transition_matrix(&plant, &signal, 0.0, 1.0).unwrap().value;
        let x = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let y = unforced_oracle(&plant, &signal, 0.0, 1.0, &x);
        let err = (&phi * &x - &y).amax();
        assert!(err <= 1e-7 * (1.0 + y.amax()), "deviation {err}");
    }
}

#[test]
fn hold_integral_matches_simpson() {
    let a = example::a1();
    let b = example::b1();
    let oracle = simpson_matrix(|tau| expm_taylor(&(&a * tau)) * &b, 0.0, 0.025, 10_000);
    let g = hold_integral(&a, &b, 0.025);
    assert!((g - &oracle).amax() <= 1e-10);
}

#[test]
fn flow_matches_ode() {
    let plant = example::plant();
    let mode = plant.mode(0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let x0 = DVector::from_fn(2, |_, _| rng.random_range(-50.0..50.0));
        let u = DVector::from_fn(1, |_, _| rng.random_range(-100.0..100.0));
        let t = rng.random_range(0.0..0.025);
        let bu = &mode.b * &u;
        let y = rk45(|_, y| &mode.a * y + &bu, 0.0, t, &x0, 1e-13, 1e-13);
        let f = flow(&mode.a, &mode.b, &x0, &u, t);
        assert!((&f - &y).amax() <= 1e-8, "{}", (&f - &y).amax());
    }
}

#[test]
fn gradient_matches_central_differences() {
    let plant = example::plant();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mode = plant.mode(rng.random_range(0..2));
        let x = DVector::from_fn(2, |_, _| rng.random_range(-60.0..60.0));
        let q = DVector::from_fn(2, |_, _| rng.random_range(-60.0..60.0));
        let t = rng.random_range(0.0..0.025);
        let p = {
            let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
            &m * m.transpose() + DMatrix::identity(2, 2)
        };
        let grad = v_gradient(mode, &x, &q, t);
        // Directional derivatives along symmetric directions recover the gradient.
        let mut fd = DMatrix::zeros(2, 2);
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let mut e = DMatrix::zeros(2, 2);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let d = (v_value(&(&p + &e * h), mode, &x, &q, t, 1.0) - v_value(&(&p - &e * h), mode, &x, &q, t, 1.0)) / (2.0 * h);
            if i == j {
                fd[(i, i)] = d;
            } else {
                fd[(i, j)] = d / 2.0;
                fd[(j, i)] = d / 2.0;
            }
        }
        worst = worst.max(rel_diff(&grad, &fd));
    }
    assert!(worst <= 1e-5, "relative error {worst}");
}

#[test]
fn derivative_matches_finite_difference_along_flow() {
    let plant = example::plant();
    let p = example::reference_p();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..50 {
        let (pm, qm) = (rng.random_range(0..2), rng.random_range(0..2));
        let x = DVector::from_fn(2, |_, _| rng.random_range(-30.0..30.0));
        let q = DVector::from_fn(2, |_, _| rng.random_range(-30.0..30.0));
        let u = &plant.mode(qm).k * &q;
        let h = 1e-6;
        let v = |t: f64| {
            let y = flow(&plant.mode(pm).a, &plant.mode(pm).b, &x, &u, t);
            y.dot(&(&p * &y))
        };
        let fd = (v(h) - v(-h)) / (2.0 * h);
        let exact = lyapunov_derivative(&plant, &p, &x, &q, pm, qm);
        assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{fd} vs {exact}");
    }
}

#[test]
fn simulation_matches_piecewise_ode() {
    let plant = example::plant();
    let qz = example::quantizer();
    let signal = SwitchingSignal::new(0, vec![(0.3137, 1), (0.55, 0), (0.8012, 1)]).unwrap();
    let x0 = DVector::from_vec(vec![3.0, -2.5]);
    let traj = simulate(&plant, &qz, None, &signal, &x0, 1.0, 3).unwrap();
    let mut worst = 0.0f64;
    for w in traj.events.windows(2) {
        let (s, e) = (&w[0], &w[1]);
        // The oracle restarts from each recorded state with the recorded loop signals.
        let a = plant.mode(s.plant_mode).a.clone();
        let bu = &plant.mode(s.plant_mode).b * (&plant.mode(s.controller_mode).k * &s.q);
        let y = rk45(|_, y| &a * y + &bu, s.t, e.t, &s.x, 1e-13, 1e-13);
        worst = worst.max((&y - &e.x).amax());
    }
    assert!(worst <= 1e-9, "{worst}");

    // One global integration through every event.
    let mut y = x0.clone();
    let samples: Vec<_> = traj.events.iter().filter(|e| e.kind != quantswitch::simulate::EventKind::Probe).collect();
    for w in samples.windows(2) {
        let a = plant.mode(w[0].plant_mode).a.clone();
        let bu = &plant.mode(w[0].plant_mode).b * (&plant.mode(w[0].controller_mode).k * &w[0].q);
        y = rk45(|_, y| &a * y + &bu, w[0].t, w[1].t, &y, 1e-13, 1e-13);
    }
    let last = traj.events.last().unwrap();
    assert!((&y - &last.x).amax() <= 1e-7, "{}", (&y - &last.x).amax());
}

fn random_signal(rng: &mut ChaCha8Rng, horizon: f64) -> SwitchingSignal {
    let mut t = 0.0;
    let mut mode = rng.random_range(0..2);
    let initial = mode;
    let mut switches = Vec::new();
    loop {
        t += rng.random_range(0.0005..0.02);
        if t >= horizon {
            break;
        }
        mode = 1 - mode;
        switches.push((t, mode));
    }
    SwitchingSignal::new(initial, switches).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transition_matrices_compose(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let plant = example::plant();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal = random_signal(&mut rng, 0.1);
        let mut ts = [a * 0.1, b * 0.1, c * 0.1];
        ts.sort_by(f64::total_cmp);
        let full = transition_matrix(&plant, &signal, ts[0], ts[2]).unwrap().value;
        let split = transition_matrix(&plant, &signal, ts[1], ts[2]).unwrap().value
            * transition_matrix(&plant, &signal, ts[0], ts[1]).unwrap().value;
        prop_assert!((&full - &split).norm() <= 1e-8 * (1.0 + full.norm()));
    }

    #[test]
    fn transition_matrix_growth_bounds(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let plant = example::plant();
        let ts = plant.sampling_period();
        let lambda = plant.max_dynamics_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal = random_signal(&mut rng, ts);
        let t = frac * ts;
        let phi = transition_matrix(&plant, &signal, 0.0, t).unwrap().value;
        let eye = DMatrix::<f64>::identity(2, 2);
        prop_assert!(spectral_norm(&(&phi - &eye)) <= (lambda * t).exp_m1() * (1.0 + 1e-12) + 1e-15);
        let inv = phi.try_inverse().unwrap();
        prop_assert!(spectral_norm(&inv) <= (lambda * t).exp() * (1.0 + 1e-12));
    }
}
