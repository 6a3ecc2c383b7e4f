use proptest::prelude::*;
use rosenblatt::kernel::{discretize_kernel, DEFAULT_MATRIX_TOL};
use rosenblatt::paths::{dyadic_grid, increment_moments, simulate_rosenblatt};
use rosenblatt::stats::{
    dyadic_lags, holder_exponent_estimate, ks_two_sample, lag_second_moments, linear_fit, scaling_exponent_fit,
};
use rosenblatt::{HurstPair, TruncatedDomain};

#[test]
fn path_variance_matches_twice_the_kernel_norm() {
    let d = TruncatedDomain::graded(4096.0, 1.0, 128, 8).unwrap();
    let p = HurstPair::new(0.6, 0.8).unwrap();
    let times = dyadic_grid(1.0, 3);
    let e = simulate_rosenblatt(&p, &times, &d, 4000, 17).unwrap();
    for k in [4, 8] {
        let m = increment_moments(&e, 0, k, &[2]).unwrap()[0];
        let exact = 2.0
            * discretize_kernel(&p, times[k], &d, DEFAULT_MATRIX_TOL)
                .unwrap()
                .simple_norm_sq();
        assert!(
            (m.value - exact).abs() < 4.0 * m.std_error,
            "t = {}: {} vs {exact} (se {})",
            times[k],
            m.value,
            m.std_error
        );
    }
    assert!(increment_moments(&e, 0, 8, &[3]).is_err());
    assert!(increment_moments(&e, 0, 9, &[2]).is_err());
}

#[test]
fn scaling_fit_recovers_the_exponent_sum() {
    let d = TruncatedDomain::graded(4096.0, 1.0, 256, 8).unwrap();
    let p = HurstPair::new(0.75, 0.75).unwrap();
    let times = dyadic_grid(1.0, 5);
    let e = simulate_rosenblatt(&p, &times, &d, 1500, 2).unwrap();
    let fit = scaling_exponent_fit(&e, &dyadic_lags(1.0, 2, 5), None, 0.1).unwrap();
    assert!(fit.pass, "{fit:?}");
}

#[test]
fn holder_estimate_of_power_functions() {
    let times = dyadic_grid(1.0, 8);
    let root: Vec<f64> = times.iter().map(|t| t.sqrt()).collect();
    let est = holder_exponent_estimate(&times, &root).unwrap();
    assert!((est.estimate - 0.5).abs() < 1e-12, "{est:?}");
    assert_eq!(est.scales, 8);
    let line: Vec<f64> = times.iter().map(|t| 3.0 * t).collect();
    assert!((holder_exponent_estimate(&times, &line).unwrap().estimate - 1.0).abs() < 1e-12);
    assert!(holder_exponent_estimate(&times[..10], &root[..10]).is_err());
}

#[test]
fn ks_detects_a_shift() {
    let a: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
    let r = ks_two_sample(&a, &b).unwrap();
    assert!((r.statistic - 0.1).abs() < 1e-3 && !r.pass, "{r:?}");
    assert!(ks_two_sample(&a, &a).unwrap().pass);
}

proptest! {
    #[test]
    fn linear_fit_is_exact_on_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 3usize..30) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
        let f = linear_fit(&x, &y, None).unwrap();
        prop_assert!((f.slope - b).abs() < 1e-9 && (f.intercept - a).abs() < 1e-9);
    }

    #[test]
    fn lag_moments_of_a_drift_are_squared_lags(c in -3.0f64..3.0, levels in 3u32..7) {
        let times = dyadic_grid(1.0, levels);
        let values: Vec<f64> = times.iter().map(|t| c * t).collect();
        let lags = dyadic_lags(1.0, 1, levels as i32);
        for m in lag_second_moments(&times, &values, &lags, None).unwrap() {
            prop_assert!((m.second_moment - c * c * m.lag * m.lag).abs() < 1e-12);
        }
    }
}
