use fadestab::perturbation::resolve_system;
use fadestab::sde::{simulate_ensemble, ObservationPlan, Scheme, SimulationConfig};

/// Second moments `(E x², E xy, E y²)` of the linear oscillator
/// `dx = y dt, dy = (−x + λ y/t) dt + μ t^{-1/2} x dw`, by RK4 on the moment
/// equations.
fn moments(lambda: f64, mu: f64, z0: [f64; 2], t0: f64, t1: f64) -> [f64; 3] {
    let rhs = |t: f64, s: [f64; 3]| {
        let [m, n, p] = s;
        [2.0 * n, p - m + lambda / t * n, -2.0 * n + 2.0 * lambda / t * p + mu * mu / t * m]
    };
    let steps = 20_000;
    let h = (t1 - t0) / steps as f64;
    let mut s = [z0[0] * z0[0], z0[0] * z0[1], z0[1] * z0[1]];
    let mut t = t0;
    let add = |a: [f64; 3], b: [f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    for _ in 0..steps {
        let k1 = rhs(t, s);
        let k2 = rhs(t + h / 2.0, add(s, k1, h / 2.0));
        let k3 = rhs(t + h / 2.0, add(s, k2, h / 2.0));
        let k4 = rhs(t + h, add(s, k3, h));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    s
}

fn check_second_moment(scheme: Scheme) {
    let (lambda, mu) = (-1.0, 1.0);
    let sys = resolve_system(&format!("builtin:ex0?lambda={lambda}&mu={mu}")).unwrap();
    let mut cfg = SimulationConfig::new(1.0, 5.0, 0.005, 77, [0.4, 0.0]);
    cfg.scheme = scheme;
    let plan = ObservationPlan { times: vec![5.0], weights: vec![], tail_fraction: 0.25 };
    let ens = simulate_ensemble(&sys, &cfg, &plan, 4000, 1).unwrap();
    let sq: Vec<f64> = ens.paths.iter().map(|p| p.absz[0] * p.absz[0]).collect();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let [m, _, p] = moments(lambda, mu, [0.4, 0.0], 1.0, 5.0);
    let exact = m + p;
    let tol = 4.0 * (var / n).sqrt() + 0.01 * exact;
    assert!((mean - exact).abs() < tol, "{scheme:?}: MC {mean} vs moments {exact} (tol {tol})");
}

#[test]
fn second_moment_matches_moment_equations_rk4_em() {
    check_second_moment(Scheme::Rk4Maruyama);
}

#[test]
fn second_moment_matches_moment_equations_em() {
    check_second_moment(Scheme::EulerMaruyama);
}
