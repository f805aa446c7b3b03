use fadestab::averaging::{average_system, fit_exponents, CaseTag, FIT_WINDOW};
use fadestab::perturbation::resolve_system;

fn fit(reference: &str) -> fadestab::averaging::ExponentFit {
    let sys = resolve_system(reference).unwrap();
    let av = average_system(&sys, None, 128).unwrap();
    let e0 = sys.ham.e0;
    fit_exponents(&av.drift, (FIT_WINDOW.0 * e0, FIT_WINDOW.1 * e0)).unwrap()
}

#[test]
fn pendulum_linear_case_recovers_noise_shifted_rate() {
    for &(lambda, mu) in &[(-1.0, 1.0), (0.4, 0.5), (-0.2, 0.0)] {
        let f = fit(&format!("builtin:ex1?h=2&p=1&q=2&lambda={lambda}&mu={mu}"));
        assert_eq!(f.case_tag, CaseTag::Linear);
        assert_eq!(f.n, 2);
        let want = lambda + mu * mu / 2.0;
        assert!((f.lambda_n.unwrap() - want).abs() < 1e-6, "{f:?}");
    }
}

#[test]
fn pendulum_nonlinear_case_leading_coefficients() {
    let f = fit("builtin:ex2?a2=1&a4=-1.25&b1=4&b2=1");
    assert_eq!(f.case_tag, CaseTag::Nonlinear);
    assert_eq!((f.n, f.m, f.l), (2, Some(2), Some(2)));
    assert!((f.lambda_nm.unwrap() - 4.5).abs() < 1e-4, "{f:?}");
    assert!((f.lambda_nl.unwrap() + 0.75).abs() < 1e-4, "{f:?}");
}

#[test]
fn odd_order_vanishes_by_symmetry() {
    let sys = resolve_system("builtin:ex2?a2=-2&a4=-0.25&b1=1&b2=1").unwrap();
    let av = average_system(&sys, None, 128).unwrap();
    let scale = av.drift.lambda[1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(av.drift.lambda[0].iter().all(|v| v.abs() < 1e-12));
    assert!(av.drift.lambda[2].iter().all(|v| v.abs() < 1e-10 * scale), "{:?}", &av.drift.lambda[2][..5]);
}
