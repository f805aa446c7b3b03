//! Stability verdicts from the small-energy exponents of the averaged drift.
//!
//! All functions here are pure: equal inputs give bitwise equal verdicts.

use serde::Serialize;

use crate::averaging::{find_cycle_root, AveragedDrift, CaseTag, ExponentFit};
use crate::error::{Error, Result};
use crate::perturbation::NoiseBound;

pub const DEFAULT_KAPPA: f64 = 0.05;
/// Tolerance used when comparing the noise exponent `σ` with `n/q`.
pub const SIGMA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    ExponentiallyStable,
    PolynomiallyStable,
    NeutrallyStable,
    WeightedStable,
    Unstable,
    WeightedUnstable,
    PracticallyStable,
    PolynomialDecayToZero,
    StableCycle,
    Inconclusive,
}

/// `γ_n(t)^prefactor · t^{extra/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightFunction {
    pub n: usize,
    pub q: usize,
    pub prefactor: f64,
    pub extra: f64,
}

impl WeightFunction {
    pub fn new(n: usize, q: usize, prefactor: f64) -> WeightFunction {
        WeightFunction { n, q, prefactor, extra: 0.0 }
    }

    /// The constant weight 1.
    pub fn unit() -> WeightFunction {
        WeightFunction { n: 1, q: 1, prefactor: 0.0, extra: 0.0 }
    }

    /// `log γ_n(t)`.
    pub fn log_gamma(&self, t: f64) -> f64 {
        if self.n == self.q {
            t.ln()
        } else {
            let (n, q) = (self.n as f64, self.q as f64);
            q / (q - n) * t.powf(1.0 - n / q)
        }
    }

    /// Logarithm of the weight at `t`.
    pub fn log_eval(&self, t: f64) -> f64 {
        let mut out = 0.5 * self.extra * t.ln();
        if self.prefactor != 0.0 {
            out += self.prefactor * self.log_gamma(t);
        }
        out
    }
}

/// Weight value, evaluated in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightValue {
    pub log: f64,
    /// `exp(log)`, or `+∞` when that overflows.
    pub value: f64,
    pub overflow: bool,
}

pub fn weight_eval(w: &WeightFunction, t: f64) -> Result<WeightValue> {
    if !(t >= 1.0) {
        return Err(Error::InvalidInput(format!("weights are defined for t >= 1 (got {t})")));
    }
    if w.n == 0 || w.q == 0 {
        return Err(Error::InvalidInput("weight orders must be positive".into()));
    }
    let log = w.log_eval(t);
    let value = log.exp();
    Ok(WeightValue { log, value, overflow: value.is_infinite() })
}

/// Parameters a verdict was derived from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerdictInputs {
    pub case_tag: Option<CaseTag>,
    pub n: usize,
    pub q: usize,
    pub m: Option<usize>,
    pub l: Option<usize>,
    pub lambda_n: Option<f64>,
    pub lambda_nm: Option<f64>,
    pub lambda_nl: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub kind: VerdictKind,
    pub theorem: Option<String>,
    pub weight: Option<WeightFunction>,
    pub horizon: Option<f64>,
    pub cycle_energy: Option<f64>,
    pub cycle_slope: Option<f64>,
    pub u_star: Option<f64>,
    pub theta: Option<f64>,
    /// Further statements that hold simultaneously (e.g. a weighted
    /// instability alongside practical stability).
    pub annotations: Vec<String>,
    pub inputs: VerdictInputs,
}

impl StabilityVerdict {
    fn new(kind: VerdictKind, theorem: Option<&str>, inputs: VerdictInputs) -> Self {
        StabilityVerdict {
            kind,
            theorem: theorem.map(str::to_string),
            weight: None,
            horizon: None,
            cycle_energy: None,
            cycle_slope: None,
            u_star: None,
            theta: None,
            annotations: Vec::new(),
            inputs,
        }
    }

    fn inconclusive(inputs: VerdictInputs, reason: impl Into<String>) -> Self {
        let mut v = StabilityVerdict::new(VerdictKind::Inconclusive, None, inputs);
        v.annotations.push(reason.into());
        v
    }

    /// The wording used in the summary tables of stability results.
    pub fn label(&self) -> &'static str {
        use VerdictKind::*;
        let by_weight = |w: &Option<WeightFunction>| match w {
            Some(w) if w.n < w.q => "exponentially stable",
            Some(w) if w.n == w.q => "polynomially stable",
            _ => "stable",
        };
        match self.kind {
            ExponentiallyStable => "exponentially stable",
            PolynomiallyStable | PolynomialDecayToZero => "polynomially stable",
            NeutrallyStable => "stable",
            WeightedStable => by_weight(&self.weight),
            Unstable => "unstable",
            WeightedUnstable => "unstable with a weight",
            PracticallyStable => "practically stable",
            StableCycle => "stable cycle",
            Inconclusive => "inconclusive",
        }
    }

    /// Checks the structural invariants of a verdict.
    pub fn is_well_formed(&self) -> bool {
        use VerdictKind::*;
        let cycle_ok = self.kind != StableCycle || self.cycle_energy.is_some_and(|c| c > 0.0);
        let weight_ok = !matches!(
            self.kind,
            WeightedStable | WeightedUnstable | ExponentiallyStable | PolynomiallyStable
        ) || self.weight.is_some();
        let theorem_ok = self.kind == Inconclusive || self.theorem.is_some();
        cycle_ok && weight_ok && theorem_ok
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::BadKappa(kappa))
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= SIGMA_TOL
}

fn kronecker(sigma: f64, ratio: f64) -> f64 {
    if same(sigma, ratio) {
        1.0
    } else {
        0.0
    }
}

/// Case with a nonzero linear leading term `Λ_n(v) ≈ λ_n v`.
pub fn classify_linear(
    fit: &ExponentFit,
    q: usize,
    noise: Option<NoiseBound>,
    kappa: f64,
) -> Result<StabilityVerdict> {
    check_kappa(kappa)?;
    if fit.case_tag != CaseTag::Linear {
        return Err(Error::InconsistentInputs(format!("expected a linear fit, got {:?}", fit.case_tag)));
    }
    let n = fit.n;
    let lambda = fit
        .lambda_n
        .ok_or_else(|| Error::InconsistentInputs("linear fit without lambda_n".into()))?;
    linear_verdict(n, q, lambda, noise, kappa, Some(CaseTag::Linear))
}

/// Decision rules for the linear case from raw numbers.
pub fn linear_verdict(
    n: usize,
    q: usize,
    lambda: f64,
    noise: Option<NoiseBound>,
    kappa: f64,
    case_tag: Option<CaseTag>,
) -> Result<StabilityVerdict> {
    use VerdictKind::*;
    check_kappa(kappa)?;
    if n == 0 || q == 0 {
        return Err(Error::InconsistentInputs("n and q must be positive".into()));
    }
    let inputs = VerdictInputs {
        case_tag,
        n,
        q,
        lambda_n: Some(lambda),
        mu: noise.map(|b| b.mu),
        sigma: noise.map(|b| b.sigma),
        kappa,
        ..Default::default()
    };
    if lambda < 0.0 {
        let kind = match n.cmp(&q) {
            std::cmp::Ordering::Less => ExponentiallyStable,
            std::cmp::Ordering::Equal => PolynomiallyStable,
            std::cmp::Ordering::Greater => NeutrallyStable,
        };
        let mut v = StabilityVerdict::new(kind, Some("Theorem 2"), inputs);
        v.weight = Some(WeightFunction::new(n, q, (1.0 - kappa) * lambda.abs() / 2.0));
        return Ok(v);
    }
    if lambda == 0.0 {
        return Ok(StabilityVerdict::inconclusive(inputs, "lambda_n = 0: no theorem applies"));
    }
    if n > q {
        return Ok(StabilityVerdict::inconclusive(inputs, "lambda_n > 0 with n > q: no theorem applies"));
    }
    let Some(nb) = noise else {
        return Ok(StabilityVerdict::inconclusive(inputs, "lambda_n > 0 but no noise bound was supplied"));
    };
    let ratio = n as f64 / q as f64;
    if nb.sigma < ratio && !same(nb.sigma, ratio) {
        return Ok(StabilityVerdict::inconclusive(
            inputs,
            format!("noise exponent sigma = {} is below n/q = {ratio}", nb.sigma),
        ));
    }
    let half_mu2 = nb.mu * nb.mu / 2.0;
    if lambda > kronecker(nb.sigma, ratio) * half_mu2 {
        return Ok(StabilityVerdict::new(Unstable, Some("Theorem 3"), inputs));
    }
    // σ = n/q and 0 < λ_n ≤ μ²/2
    let mut v = StabilityVerdict::new(PracticallyStable, Some("Theorem AsL"), inputs);
    let w = WeightFunction::new(n, q, (half_mu2 - lambda + kappa) / 2.0);
    v.weight = Some(w);
    v.annotations.push(format!(
        "{:?} (Theorem 3): unstable in probability with the weight gamma_{n}(t)^{:.6}",
        WeightedUnstable, w.prefactor
    ));
    Ok(v)
}

/// Case with a nonlinear leading term `Λ_n ≈ λ_{n,m} v^m` followed by a
/// linear term at order `n + l`.
pub fn classify_nonlinear(
    fit: &ExponentFit,
    q: usize,
    noise: Option<NoiseBound>,
    kappa: f64,
) -> Result<StabilityVerdict> {
    if fit.case_tag != CaseTag::Nonlinear {
        return Err(Error::InconsistentInputs(format!(
            "expected a nonlinear fit, got {:?}",
            fit.case_tag
        )));
    }
    let missing = |w: &str| Error::InconsistentInputs(format!("nonlinear fit without {w}"));
    let m = fit.m.ok_or_else(|| missing("m"))?;
    let l = fit.l.ok_or_else(|| missing("l"))?;
    let lnm = fit.lambda_nm.ok_or_else(|| missing("lambda_nm"))?;
    let lnl = fit.lambda_nl.ok_or_else(|| missing("lambda_nl"))?;
    nonlinear_verdict(fit.n, m, l, q, lnm, lnl, noise, kappa)
}

/// `θ = l/(q(m−1))`.
pub fn theta(l: usize, q: usize, m: usize) -> f64 {
    l as f64 / (q as f64 * (m as f64 - 1.0))
}

/// `u* = (|λ_{n+l} + δ_{n+l,q}θ| / |λ_{n,m}|)^{1/(m−1)}`.
pub fn u_star(n: usize, m: usize, l: usize, q: usize, lambda_nm: f64, lambda_nl: f64) -> f64 {
    let th = theta(l, q, m);
    let shift = lambda_nl + if n + l == q { th } else { 0.0 };
    (shift.abs() / lambda_nm.abs()).powf(1.0 / (m as f64 - 1.0))
}

/// Decision rules for the nonlinear case from raw numbers.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_verdict(
    n: usize,
    m: usize,
    l: usize,
    q: usize,
    lambda_nm: f64,
    lambda_nl: f64,
    noise: Option<NoiseBound>,
    kappa: f64,
) -> Result<StabilityVerdict> {
    use VerdictKind::*;
    check_kappa(kappa)?;
    if n == 0 || q == 0 || l == 0 || m < 2 {
        return Err(Error::InconsistentInputs(format!("need n, l >= 1 and m >= 2 (n={n}, m={m}, l={l})")));
    }
    let inputs = VerdictInputs {
        case_tag: Some(CaseTag::Nonlinear),
        n,
        q,
        m: Some(m),
        l: Some(l),
        lambda_nm: Some(lambda_nm),
        lambda_nl: Some(lambda_nl),
        mu: noise.map(|b| b.mu),
        sigma: noise.map(|b| b.sigma),
        kappa,
        ..Default::default()
    };
    let s = n + l;
    let th = theta(l, q, m);
    let shift = lambda_nl + if s == q { th } else { 0.0 };
    let with_theta = |mut v: StabilityVerdict| {
        v.theta = Some(th);
        v.u_star = Some(u_star(n, m, l, q, lambda_nm, lambda_nl));
        v
    };
    let plain = lambda_nm < 0.0 && lambda_nl < 0.0;
    if s <= q && shift < 0.0 {
        let mut v = with_theta(StabilityVerdict::new(WeightedStable, Some("Theorem 4"), inputs));
        v.weight = Some(WeightFunction { n: s, q, prefactor: (1.0 - kappa) * shift.abs() / 2.0, extra: th });
        if plain {
            v.annotations.push("also stable in probability with unit weight (Theorem 4)".into());
        }
        return Ok(v);
    }
    if plain {
        return Ok(with_theta(StabilityVerdict::new(NeutrallyStable, Some("Theorem 4"), inputs)));
    }
    if s == q && lambda_nm < 0.0 && lambda_nl > 0.0 {
        return Ok(with_theta(StabilityVerdict::new(PolynomialDecayToZero, Some("Theorem 4"), inputs)));
    }
    if lambda_nm > 0.0 && lambda_nl > 0.0 && s <= q {
        let nb = noise.ok_or(Error::MissingNoiseBound)?;
        let ratio = s as f64 / q as f64;
        if nb.sigma < ratio && !same(nb.sigma, ratio) {
            return Ok(StabilityVerdict::inconclusive(
                inputs,
                format!("noise exponent sigma = {} is below (n+l)/q = {ratio}", nb.sigma),
            ));
        }
        if lambda_nl > kronecker(nb.sigma, ratio) * nb.mu * nb.mu / 2.0 {
            return Ok(with_theta(StabilityVerdict::new(Unstable, Some("Theorem 5"), inputs)));
        }
        return Ok(StabilityVerdict::inconclusive(inputs, "lambda_{n+l} does not exceed the noise threshold"));
    }
    Ok(StabilityVerdict::inconclusive(inputs, "no theorem covers this sign pattern"))
}

/// Stable cycle at a zero of `Λ_n` with negative slope (requires `n = q`).
pub fn classify_cycle(drift: &AveragedDrift, fit: &ExponentFit, q: usize) -> Result<StabilityVerdict> {
    if fit.n != q {
        return Err(Error::HypothesisViolated(format!(
            "the cycle theorem needs n = q (n = {}, q = {q})",
            fit.n
        )));
    }
    let roots = find_cycle_root(drift, fit.n)?;
    let inputs = VerdictInputs { case_tag: Some(fit.case_tag), n: fit.n, q, ..Default::default() };
    cycle_verdict(&roots.iter().map(|r| (r.c, r.derivative)).collect::<Vec<_>>(), inputs)
}

/// Verdict from `(c, Λ'(c))` pairs: the lowest stable root wins.
pub fn cycle_verdict(roots: &[(f64, f64)], inputs: VerdictInputs) -> Result<StabilityVerdict> {
    let stable: Vec<&(f64, f64)> = roots.iter().filter(|(c, d)| *c > 0.0 && *d < 0.0).collect();
    let Some(&&(c, d)) = stable.first() else {
        let mut v = StabilityVerdict::inconclusive(inputs, "every zero of Lambda_n has a positive slope");
        for (c, d) in roots {
            v.annotations.push(format!("unstable cycle candidate c = {c}, slope {d}"));
        }
        return Ok(v);
    };
    let mut v = StabilityVerdict::new(VerdictKind::StableCycle, Some("Theorem 6"), inputs);
    v.cycle_energy = Some(c);
    v.cycle_slope = Some(d);
    for &&(c2, d2) in stable.iter().skip(1) {
        v.annotations.push(format!("further stable cycle c = {c2}, slope {d2}"));
    }
    Ok(v)
}

/// Every verdict that applies: the origin verdict for the fitted case, plus
/// a cycle verdict when `Λ_n` changes sign and `n = q`.
pub fn classify_all(
    drift: &AveragedDrift,
    fit: &ExponentFit,
    q: usize,
    noise: Option<NoiseBound>,
    kappa: f64,
) -> Result<Vec<StabilityVerdict>> {
    check_kappa(kappa)?;
    let mut out = Vec::new();
    match fit.case_tag {
        CaseTag::Linear => out.push(classify_linear(fit, q, noise, kappa)?),
        CaseTag::Nonlinear => out.push(classify_nonlinear(fit, q, noise, kappa)?),
        CaseTag::Cycle | CaseTag::Degenerate => {}
    }
    let sign_change = fit.n >= 1 && drift.lambda[fit.n - 1].windows(2).any(|w| w[0] * w[1] < 0.0);
    if sign_change && fit.n == q {
        out.push(classify_cycle(drift, fit, q)?);
    }
    if out.is_empty() {
        let inputs = VerdictInputs { case_tag: Some(fit.case_tag), n: fit.n, q, kappa, ..Default::default() };
        out.push(StabilityVerdict::inconclusive(inputs, "the averaged drift fits no hypothesis family"));
    }
    Ok(out)
}

/// Horizon `𝒯` of practical stability.
pub fn practical_horizon(n: usize, q: usize, t0: f64, delta: f64, epsilon: f64, mu: f64) -> Result<f64> {
    if n > q {
        return Err(Error::BadOrder { n, q });
    }
    if !(delta > 0.0 && delta < epsilon && mu > 0.0 && t0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "practical horizon needs 0 < delta < epsilon, mu > 0, t0 > 0 (delta={delta}, epsilon={epsilon}, mu={mu}, t0={t0})"
        )));
    }
    let r = (delta / (epsilon * mu)).powi(2);
    Ok(if n < q { t0.powf(n as f64 / q as f64) * r } else { t0 * r.exp_m1() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use VerdictKind::*;

    fn nb(mu: f64, sigma: f64) -> Option<NoiseBound> {
        Some(NoiseBound { mu, sigma })
    }

    #[test]
    fn table_one_rows() {
        let k = DEFAULT_KAPPA;
        let cases: Vec<(usize, usize, f64, Option<NoiseBound>, &str, VerdictKind)> = vec![
            (1, 2, -1.0, None, "exponentially stable", ExponentiallyStable),
            (2, 2, -0.5, nb(1.0, 1.0), "polynomially stable", PolynomiallyStable),
            (3, 2, -0.5, None, "stable", NeutrallyStable),
            // σ > n/q: any λ > 0 destabilizes
            (1, 2, 0.01, nb(1.0, 1.0), "unstable", Unstable),
            // σ = n/q: λ must exceed μ²/2
            (2, 2, 0.6, nb(1.0, 1.0), "unstable", Unstable),
            (2, 2, 0.3, nb(1.0, 1.0), "practically stable", PracticallyStable),
            (1, 2, 0.3, nb(1.0, 0.5), "practically stable", PracticallyStable),
        ];
        for (n, q, lam, noise, label, kind) in cases {
            let v = linear_verdict(n, q, lam, noise, k, Some(CaseTag::Linear)).unwrap();
            assert_eq!((v.kind, v.label()), (kind, label), "n={n} q={q} lambda={lam}");
            assert!(v.is_well_formed());
        }
    }

    #[test]
    fn linear_weights_and_boundaries() {
        let v = linear_verdict(1, 2, -1.0, None, 0.05, None).unwrap();
        assert_eq!(v.weight, Some(WeightFunction::new(1, 2, 0.95 / 2.0)));
        assert_eq!(v.theorem.as_deref(), Some("Theorem 2"));
        let v = linear_verdict(2, 2, -0.5, nb(1.0, 1.0), 0.05, None).unwrap();
        assert!((v.weight.unwrap().prefactor - 0.95 / 4.0).abs() < 1e-15);
        // closed upper bound of the practical-stability interval
        let v = linear_verdict(2, 2, 0.5, nb(1.0, 1.0), 0.05, None).unwrap();
        assert_eq!(v.kind, PracticallyStable);
        assert!(v.annotations[0].starts_with("WeightedUnstable"));
        assert!((v.weight.unwrap().prefactor - 0.025).abs() < 1e-15);
        let v = linear_verdict(2, 2, 0.5 + 1e-12, nb(1.0, 1.0), 0.05, None).unwrap();
        assert_eq!(v.kind, Unstable);
        for (lam, noise) in [(0.0, nb(1.0, 1.0)), (0.3, None), (0.3, nb(1.0, 0.5)), (0.3, nb(1.0, 0.2))] {
            let v = linear_verdict(2, 2, lam, noise, 0.05, None).unwrap();
            assert_eq!(v.kind, Inconclusive, "lambda={lam} {noise:?}");
            assert!(v.theorem.is_none());
        }
        assert_eq!(linear_verdict(3, 2, 0.3, nb(1.0, 2.0), 0.05, None).unwrap().kind, Inconclusive);
        assert!(matches!(linear_verdict(1, 2, -1.0, None, 1.0, None), Err(Error::BadKappa(_))));
        assert!(matches!(linear_verdict(1, 2, -1.0, None, 0.0, None), Err(Error::BadKappa(_))));
    }

    #[test]
    fn table_two_rows() {
        let k = DEFAULT_KAPPA;
        // (n, m, l, q, λ_{n,m}, λ_{n+l}, noise, label, kind)
        let rows: Vec<(usize, usize, usize, usize, f64, f64, Option<NoiseBound>, &str, VerdictKind)> = vec![
            (2, 2, 4, 4, -1.0, -1.0, None, "stable", NeutrallyStable),
            (1, 2, 1, 4, 1.0, -0.5, None, "exponentially stable", WeightedStable),
            (2, 2, 2, 4, 4.5, -0.75, None, "polynomially stable", WeightedStable),
            (2, 2, 2, 4, -0.75, 0.25, None, "polynomially stable", PolynomialDecayToZero),
            (2, 2, 2, 4, 0.05, 0.6, nb(1.0, 1.0), "unstable", Unstable),
            (1, 3, 1, 4, 0.05, 0.01, nb(1.0, 1.0), "unstable", Unstable),
        ];
        for (n, m, l, q, a, b, noise, label, kind) in rows {
            let v = nonlinear_verdict(n, m, l, q, a, b, noise, k).unwrap();
            assert_eq!((v.kind, v.label()), (kind, label), "{n} {m} {l} {q} {a} {b}");
            assert!(v.is_well_formed());
        }
    }

    #[test]
    fn nonlinear_details() {
        // ex2 stable-weighted case: weight t^{(θ + (1−κ)|λ₄+θ|)/2}
        let v = nonlinear_verdict(2, 2, 2, 4, 4.5, -0.75, None, 1e-12).unwrap();
        let w = v.weight.unwrap();
        assert_eq!((w.n, w.q), (4, 4));
        let exponent = (w.extra + 2.0 * w.prefactor) / 2.0;
        assert!((exponent - 0.375).abs() < 1e-10);
        // polynomial decay target
        let v = nonlinear_verdict(2, 2, 2, 4, -0.75, 0.25, None, 0.05).unwrap();
        assert!((v.u_star.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(v.theta, Some(0.5));
        // both Theorem 4 branches: weighted reported, plain annotated
        let v = nonlinear_verdict(1, 2, 1, 4, -1.0, -1.0, None, 0.05).unwrap();
        assert_eq!(v.kind, WeightedStable);
        assert_eq!(v.annotations.len(), 1);
        // instability branch needs noise data
        assert_eq!(
            nonlinear_verdict(2, 2, 2, 4, 0.05, 0.6, None, 0.05),
            Err(Error::MissingNoiseBound)
        );
        assert_eq!(nonlinear_verdict(2, 2, 2, 4, 0.05, 0.4, nb(1.0, 1.0), 0.05).unwrap().kind, Inconclusive);
        assert_eq!(nonlinear_verdict(2, 2, 4, 4, 1.0, -1.0, None, 0.05).unwrap().kind, Inconclusive);
    }

    #[test]
    fn u_star_for_printed_parameters() {
        let (a2, a4, b1, b2) = (-2.0f64, -0.25f64, 1.0f64, 1.0f64);
        let lnm = (2.0 * a2 + b1 * b1) / 4.0;
        let lnl = (2.0 * a4 + b2 * b2) / 2.0;
        let printed = 2.0 * (2.0 * a4 + b2 * b2 + 1.0).abs() / (2.0 * a2 + b1 * b1).abs();
        assert!((u_star(2, 2, 2, 4, lnm, lnl) - printed).abs() < 1e-15);
        assert!((printed - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cycle_verdicts() {
        let inputs = VerdictInputs { n: 2, q: 2, ..Default::default() };
        let v = cycle_verdict(&[(1.0, -1.0)], inputs.clone()).unwrap();
        assert_eq!((v.kind, v.cycle_energy), (StableCycle, Some(1.0)));
        assert!(v.is_well_formed());
        let v = cycle_verdict(&[(1.0, 1.0)], inputs).unwrap();
        assert_eq!(v.kind, Inconclusive);
    }

    #[test]
    fn weight_examples() {
        let w = WeightFunction::new(2, 2, 1.0);
        assert!((weight_eval(&w, 100.0).unwrap().value - 100.0).abs() < 1e-12);
        let w = WeightFunction::new(1, 2, 1.0);
        assert!((weight_eval(&w, 4.0).unwrap().log - 4.0).abs() < 1e-15);
        let w = WeightFunction::new(3, 2, 1.0);
        let v = weight_eval(&w, 1e6).unwrap();
        assert!(v.value.is_finite() && v.value <= 1.0);
        let w = WeightFunction::new(1, 2, 10.0);
        let v = weight_eval(&w, 1e8).unwrap();
        assert!(v.overflow && v.log.is_finite());
        assert_eq!(weight_eval(&WeightFunction::unit(), 123.0).unwrap().value, 1.0);
        assert!(weight_eval(&w, 0.5).is_err());
    }

    #[test]
    fn horizon_examples() {
        assert!((practical_horizon(1, 2, 1.0, 0.1, 1.0, 1.0).unwrap() - 0.01).abs() < 1e-15);
        let mu = 0.5;
        let h = practical_horizon(2, 2, 1.0, 0.7 * mu, 0.7, mu).unwrap();
        assert!((h - (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!(practical_horizon(1, 2, 1.0, 1e-9, 1.0, 1.0).unwrap() < 1e-17);
        assert!(practical_horizon(2, 2, 1.0, 1e-9, 1.0, 1.0).unwrap() < 1e-17);
        assert_eq!(practical_horizon(3, 2, 1.0, 0.1, 1.0, 1.0), Err(Error::BadOrder { n: 3, q: 2 }));
        assert!(practical_horizon(1, 2, 1.0, 2.0, 1.0, 1.0).is_err());
    }
}
