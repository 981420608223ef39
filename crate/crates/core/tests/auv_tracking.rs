use lfns::auv::{canonical_gains, initial_error_state, linearized_position_errors, vehicle_example, track_nonlinear};

#[test]
fn nonlinear_vessels_track_reference() {
    let ex = vehicle_example();
    let gain = canonical_gains(ex.sampling_period, 0.9).unwrap();
    let steps = 100;
    let run = track_nonlinear(&ex, [&gain, &gain], steps).unwrap();
    for i in 0..2 {
        let z0 = initial_error_state(&ex.initial[i], &ex.references[i], ex.sampling_period);
        let lin = linearized_position_errors(&gain, &z0, &ex.references[i], ex.sampling_period, steps).unwrap();
        let lin_steady = lin[steps / 2..].iter().cloned().fold(0.0, f64::max);
        let nl: Vec<f64> = run.position_error.iter().map(|e| e[i]).collect();
        let nl_steady = nl[steps / 2..].iter().cloned().fold(0.0, f64::max);
        eprintln!("vessel {i}: lin peak {:.3} steady {:.4}; nonlinear peak {:.3} steady {:.4}",
            lin.iter().cloned().fold(0.0, f64::max), lin_steady, nl.iter().cloned().fold(0.0, f64::max), nl_steady);
        assert!(nl.iter().all(|e| e.is_finite()));
        assert!(nl_steady <= 5.0 * lin_steady, "vessel {i}: {nl_steady} > 5 × {lin_steady}");
    }
}
