//! Decaying perturbations `H_k`, `F_k`, `B_{i,j,k}` scaled by `t^{-k/q}`,
//! the assembled Itô system
//!
//! ```text
//! dx = ∂_y H dt + B₁₁ dw₁ + B₁₂ dw₂
//! dy = (−∂_x H + F) dt + B₂₁ dw₁ + B₂₂ dw₂
//! ```
//!
//! and a registry of the worked examples.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Field;
use crate::hamiltonian::LimitingHamiltonian;

/// Largest supported series order.
pub const MAX_ORDER: usize = 16;
/// Default truncation order.
pub const DEFAULT_K_MAX: usize = 4;

/// Validation times for the origin and Lipschitz checks.
pub const VALIDATION_TIMES: [f64; 4] = [1.0, 10.0, 1e3, 1e6];
const VALIDATION_GRID: usize = 41;
const LIPSCHITZ_LIMIT: f64 = 1e6;

/// The series `H = H₀ + Σ t^{-k/q} H_k`, `F = Σ t^{-k/q} F_k`,
/// `B_{ij} = Σ t^{-k/q} B_{i,j,k}`.
#[derive(Debug, Clone)]
pub struct PerturbationSeries {
    pub q: usize,
    pub h_terms: BTreeMap<usize, Field>,
    pub f_terms: BTreeMap<usize, Field>,
    /// Keyed by `(i, j, k)` with `i, j ∈ {1, 2}`.
    pub b_terms: BTreeMap<(usize, usize, usize), Field>,
    pub k_max: usize,
}

impl PerturbationSeries {
    pub fn new(q: usize) -> Self {
        PerturbationSeries {
            q,
            h_terms: BTreeMap::new(),
            f_terms: BTreeMap::new(),
            b_terms: BTreeMap::new(),
            k_max: DEFAULT_K_MAX,
        }
    }

    fn check_order(&self, k: usize) -> Result<()> {
        if k == 0 || k > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "series order k = {k} must lie in 1..={MAX_ORDER}"
            )));
        }
        Ok(())
    }

    pub fn with_h(mut self, k: usize, src: &str) -> Result<Self> {
        self.check_order(k)?;
        self.h_terms.insert(k, parse_field(src, &format!("H[{k}]"))?);
        self.k_max = self.k_max.max(k);
        Ok(self)
    }

    pub fn with_f(mut self, k: usize, src: &str) -> Result<Self> {
        self.check_order(k)?;
        self.f_terms.insert(k, parse_field(src, &format!("F[{k}]"))?);
        self.k_max = self.k_max.max(k);
        Ok(self)
    }

    pub fn with_b(mut self, i: usize, j: usize, k: usize, src: &str) -> Result<Self> {
        self.check_order(k)?;
        if !(1..=2).contains(&i) || !(1..=2).contains(&j) {
            return Err(Error::InvalidInput(format!("B[{i}][{j}][{k}]: indices must be 1 or 2")));
        }
        self.b_terms.insert((i, j, k), parse_field(src, &format!("B[{i}][{j}][{k}]"))?);
        self.k_max = self.k_max.max(k);
        Ok(self)
    }

    /// Largest order actually present in the series.
    pub fn natural_order(&self) -> usize {
        let a = self.h_terms.keys().copied().max().unwrap_or(0);
        let b = self.f_terms.keys().copied().max().unwrap_or(0);
        let c = self.b_terms.keys().map(|k| k.2).max().unwrap_or(0);
        a.max(b).max(c)
    }

    pub fn h(&self, k: usize) -> Option<&Field> {
        self.h_terms.get(&k).filter(|_| k <= self.k_max)
    }

    pub fn f(&self, k: usize) -> Option<&Field> {
        self.f_terms.get(&k).filter(|_| k <= self.k_max)
    }

    pub fn b(&self, i: usize, j: usize, k: usize) -> Option<&Field> {
        self.b_terms.get(&(i, j, k)).filter(|_| k <= self.k_max)
    }

    pub fn has_diffusion(&self) -> bool {
        self.b_terms.keys().any(|&(_, _, k)| k <= self.k_max)
    }
}

fn parse_field(src: &str, context: &str) -> Result<Field> {
    Field::parse(src).map_err(|source| Error::Expr { context: context.to_string(), source })
}

/// Closed-form averaged drifts attached to registry entries for validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form")]
pub enum ClosedForm {
    /// `Λ_k(v) = c·v` exactly.
    Linear { order: usize, coefficient: f64 },
    /// `Λ₂(v) = v(2a₁+μ²+v(a₂+2μ²))/(2(1+2v))`.
    RationalCycle { a1: f64, a2: f64, mu: f64 },
}

impl ClosedForm {
    pub fn order(&self) -> usize {
        match self {
            ClosedForm::Linear { order, .. } => *order,
            ClosedForm::RationalCycle { .. } => 2,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            ClosedForm::Linear { coefficient, .. } => coefficient * v,
            ClosedForm::RationalCycle { a1, a2, mu } => {
                let m2 = mu * mu;
                v * (2.0 * a1 + m2 + v * (a2 + 2.0 * m2)) / (2.0 * (1.0 + 2.0 * v))
            }
        }
    }
}

/// Leading small-v behaviour `Λ_k(v) ≈ coefficient · v^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeadingTerm {
    pub order: usize,
    pub degree: usize,
    pub coefficient: f64,
}

/// Validation metadata carried by registry systems.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Reference {
    pub closed_forms: Vec<ClosedForm>,
    pub leading: Vec<LeadingTerm>,
    /// Energy of a cycle, when the closed form predicts one.
    pub cycle_energy: Option<f64>,
}

/// The assembled stochastic system.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    /// Address of the system (registry reference or file path).
    pub descriptor: String,
    pub ham: LimitingHamiltonian,
    pub pert: PerturbationSeries,
    pub reference: Reference,
    h_list: Vec<(usize, Field)>,
    f_list: Vec<(usize, Field)>,
    b_list: Vec<(usize, usize, usize, Field)>,
}

/// Coefficients at one point: drift `b` and diffusion matrix `B[i][j]`.
pub type Coefficients = ([f64; 2], [[f64; 2]; 2]);

impl SdeSystem {
    pub fn q(&self) -> usize {
        self.pert.q
    }

    pub fn k_max(&self) -> usize {
        self.pert.k_max
    }

    /// `t^{-k/q}` for k = 0..=k_max.
    #[inline]
    pub fn time_factors(&self, t: f64) -> [f64; MAX_ORDER + 1] {
        let mut out = [0.0; MAX_ORDER + 1];
        let q = self.pert.q as f64;
        out[0] = 1.0;
        for (k, slot) in out.iter_mut().enumerate().take(self.pert.k_max + 1).skip(1) {
            *slot = t.powf(-(k as f64) / q);
        }
        out
    }

    #[inline]
    pub fn drift_with(&self, x: f64, y: f64, p: &[f64; MAX_ORDER + 1]) -> [f64; 2] {
        let g = self.ham.grad(x, y);
        let mut bx = g[1];
        let mut by = -g[0];
        for (k, h) in &self.h_list {
            let gk = h.grad(x, y);
            bx += p[*k] * gk[1];
            by -= p[*k] * gk[0];
        }
        for (k, f) in &self.f_list {
            by += p[*k] * f.value(x, y);
        }
        [bx, by]
    }

    #[inline]
    pub fn diffusion_with(&self, x: f64, y: f64, p: &[f64; MAX_ORDER + 1]) -> [[f64; 2]; 2] {
        let mut b = [[0.0; 2]; 2];
        for (i, j, k, f) in &self.b_list {
            b[i - 1][j - 1] += p[*k] * f.value(x, y);
        }
        b
    }

    pub fn drift(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        self.drift_with(x, y, &self.time_factors(t))
    }

    pub fn diffusion(&self, x: f64, y: f64, t: f64) -> [[f64; 2]; 2] {
        self.diffusion_with(x, y, &self.time_factors(t))
    }

    pub fn coefficients(&self, x: f64, y: f64, t: f64) -> Coefficients {
        let p = self.time_factors(t);
        (self.drift_with(x, y, &p), self.diffusion_with(x, y, &p))
    }

    pub fn has_diffusion(&self) -> bool {
        !self.b_list.is_empty()
    }
}

/// Validates the series against the origin and Lipschitz conditions and
/// closes the drift and diffusion over it.
pub fn assemble_system(ham: LimitingHamiltonian, pert: PerturbationSeries) -> Result<SdeSystem> {
    assemble_named(String::from("custom"), ham, pert, Reference::default())
}

fn assemble_named(
    descriptor: String,
    ham: LimitingHamiltonian,
    pert: PerturbationSeries,
    reference: Reference,
) -> Result<SdeSystem> {
    if pert.q == 0 {
        return Err(Error::InvalidInput("q must be a positive integer".into()));
    }
    if pert.k_max == 0 || pert.k_max > MAX_ORDER {
        return Err(Error::InvalidInput(format!("k_max must lie in 1..={MAX_ORDER}")));
    }
    ham.check_center()?;
    let keep = |k: usize| k <= pert.k_max;
    // identically-zero fields (e.g. μ = 0) are dropped from the hot lists
    let h_list = pert.h_terms.iter().filter(|(k, f)| keep(**k) && !f.is_zero()).map(|(k, f)| (*k, f.clone())).collect();
    let f_list = pert.f_terms.iter().filter(|(k, f)| keep(**k) && !f.is_zero()).map(|(k, f)| (*k, f.clone())).collect();
    let b_list = pert
        .b_terms
        .iter()
        .filter(|(k, f)| keep(k.2) && !f.is_zero())
        .map(|(&(i, j, k), f)| (i, j, k, f.clone()))
        .collect();
    let sys = SdeSystem { descriptor, ham, pert, reference, h_list, f_list, b_list };
    validate_origin(&sys)?;
    validate_lipschitz(&sys)?;
    Ok(sys)
}

fn validate_origin(sys: &SdeSystem) -> Result<()> {
    const TOL: f64 = 1e-12;
    let check = |what: String, value: f64, t: f64| -> Result<()> {
        if value.abs() > TOL || !value.is_finite() {
            return Err(Error::OriginViolation { what, value, t });
        }
        Ok(())
    };
    for (k, h) in &sys.h_list {
        let g = h.grad(0.0, 0.0);
        check(format!("grad H[{k}]"), g[0].abs().max(g[1].abs()), 1.0)?;
    }
    for (k, f) in &sys.f_list {
        check(format!("F[{k}]"), f.value(0.0, 0.0), 1.0)?;
    }
    for (i, j, k, b) in &sys.b_list {
        check(format!("B[{i}][{j}][{k}]"), b.value(0.0, 0.0), 1.0)?;
    }
    for &t in &VALIDATION_TIMES {
        let (b, bb) = sys.coefficients(0.0, 0.0, t);
        check("drift".into(), b[0].abs().max(b[1].abs()), t)?;
        let m = bb.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        check("diffusion".into(), m, t)?;
    }
    Ok(())
}

fn validate_lipschitz(sys: &SdeSystem) -> Result<()> {
    let n = VALIDATION_GRID;
    let r = sys.ham.r;
    let h = 2.0 * r / (n - 1) as f64;
    for &t in &VALIDATION_TIMES {
        let p = sys.time_factors(t);
        let mut vals = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = (-r + ix as f64 * h, -r + iy as f64 * h);
                vals.push((sys.drift_with(x, y, &p), sys.diffusion_with(x, y, &p)));
            }
        }
        let mut lip_b: f64 = 0.0;
        let mut lip_d: f64 = 0.0;
        let diff = |a: &Coefficients, b: &Coefficients| {
            let db = (a.0[0] - b.0[0]).hypot(a.0[1] - b.0[1]);
            let mut dd: f64 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    dd += (a.1[i][j] - b.1[i][j]).powi(2);
                }
            }
            (db, dd.sqrt())
        };
        for iy in 0..n {
            for ix in 0..n {
                let c = &vals[iy * n + ix];
                if ix + 1 < n {
                    let (db, dd) = diff(c, &vals[iy * n + ix + 1]);
                    lip_b = lip_b.max(db / h);
                    lip_d = lip_d.max(dd / h);
                }
                if iy + 1 < n {
                    let (db, dd) = diff(c, &vals[(iy + 1) * n + ix]);
                    lip_b = lip_b.max(db / h);
                    lip_d = lip_d.max(dd / h);
                }
            }
        }
        for (what, est) in [("drift", lip_b), ("diffusion", lip_d)] {
            if !est.is_finite() || est > LIPSCHITZ_LIMIT {
                return Err(Error::LipschitzViolation { what: what.into(), estimate: est });
            }
        }
    }
    Ok(())
}

/// Bound `tr(BᵀB)(z,t) ≤ μ² t^{−σ} |z|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBound {
    pub mu: f64,
    pub sigma: f64,
}

/// Sample grid for [`estimate_noise_bound`].
#[derive(Debug, Clone, Copy)]
pub struct NoiseGrid {
    pub radii: usize,
    pub angles: usize,
    pub times: usize,
    pub r_min: f64,
}

impl Default for NoiseGrid {
    fn default() -> Self {
        NoiseGrid { radii: 25, angles: 48, times: 13, r_min: 1e-6 }
    }
}

/// Tightest noise bound on a polar grid over `𝓑_r ∖ B(0, r_min)` and
/// geometric times in `t_range`.
///
/// Among the candidates `σ = k/q`, `1 ≤ k ≤ 2 k_max`, the largest one for
/// which `tr(BᵀB) t^σ / |z|²` stays bounded in `t` is returned, together
/// with the smallest admissible `μ` on the grid.
pub fn estimate_noise_bound(sys: &SdeSystem, t_range: (f64, f64), grid: NoiseGrid) -> Result<NoiseBound> {
    let q = sys.q() as f64;
    let cands: Vec<f64> = (1..=2 * sys.k_max()).map(|k| k as f64 / q).collect();
    if !sys.has_diffusion() {
        return Ok(NoiseBound { mu: 0.0, sigma: *cands.last().unwrap() });
    }
    let (t0, t1) = t_range;
    if !(t0 >= 1.0 && t1 > 10.0 * t0) {
        return Err(Error::InvalidInput(format!(
            "noise-bound time range must satisfy 1 <= t0 and t1 > 10 t0 (got {t0}, {t1})"
        )));
    }
    let times: Vec<f64> = crate::numeric::log_grid(t0, t1, grid.times.max(3));
    let radii = crate::numeric::log_grid(grid.r_min, sys.ham.r, grid.radii.max(2));
    // max over z of tr(BᵀB)/|z|² for every sample time
    let mut per_time = Vec::with_capacity(times.len());
    for &t in &times {
        let p = sys.time_factors(t);
        let mut m: f64 = 0.0;
        for &rho in &radii {
            for a in 0..grid.angles {
                let ang = 2.0 * std::f64::consts::PI * a as f64 / grid.angles as f64;
                let (x, y) = (rho * ang.cos(), rho * ang.sin());
                let b = sys.diffusion_with(x, y, &p);
                let tr: f64 = b.iter().flatten().map(|v| v * v).sum();
                let ratio = tr / (rho * rho);
                if !ratio.is_finite() {
                    return Err(Error::NoBound);
                }
                m = m.max(ratio);
            }
        }
        per_time.push(m);
    }
    // bounded in t: the tail may not outgrow the early maximum
    let split = times.iter().position(|&t| t > t1.sqrt()).unwrap_or(times.len() / 2);
    let mut best: Option<NoiseBound> = None;
    for &sigma in &cands {
        let scaled: Vec<f64> = per_time.iter().zip(&times).map(|(m, t)| m * t.powf(sigma)).collect();
        let early = scaled[..split].iter().cloned().fold(0.0f64, f64::max);
        let last = *scaled.last().unwrap();
        let max_all = scaled.iter().cloned().fold(0.0f64, f64::max);
        if max_all > 1e12 {
            continue;
        }
        if last <= 1.25 * early {
            best = Some(NoiseBound { mu: max_all.sqrt(), sigma });
        }
    }
    best.ok_or(Error::NoBound)
}

// ---------------------------------------------------------------------------
// Registry

/// Parameter list for each registry entry.
pub fn registry_params(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "ex0" => Some(&["lambda", "mu"]),
        "ex1" => Some(&["h", "p", "q", "lambda", "mu"]),
        "ex2" => Some(&["a2", "a4", "b1", "b2"]),
        "ex3" => Some(&["a1", "a2", "mu"]),
        _ => None,
    }
}

/// Formats a constant so it can be spliced into an expression string.
fn c(v: f64) -> String {
    format!("({v:?})")
}

fn positive_int(system: &str, name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= MAX_ORDER as f64 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidInput(format!(
            "{system}: parameter {name} must be a positive integer (got {v})"
        )))
    }
}

/// Builds a registry system from its name and parameters.
pub fn registry_get(name: &str, params: &BTreeMap<String, f64>) -> Result<SdeSystem> {
    let wanted = registry_params(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
    for &p in wanted {
        if !params.contains_key(p) {
            return Err(Error::MissingParam { system: name.into(), param: p.into() });
        }
    }
    for k in params.keys() {
        if !wanted.contains(&k.as_str()) {
            return Err(Error::InvalidInput(format!("{name}: unknown parameter '{k}'")));
        }
    }
    let g = |p: &str| params[p];
    let descriptor = format!(
        "builtin:{name}?{}",
        wanted.iter().map(|p| format!("{p}={}", g(p))).collect::<Vec<_>>().join("&")
    );
    let mut reference = Reference::default();
    let (ham, pert) = match name {
        "ex0" => {
            let (lambda, mu) = (g("lambda"), g("mu"));
            let pert = PerturbationSeries::new(2)
                .with_f(2, &format!("{}*y", c(lambda)))?
                .with_b(2, 2, 1, &format!("{}*x", c(mu)))?;
            let coef = lambda + mu * mu / 2.0;
            reference.closed_forms.push(ClosedForm::Linear { order: 2, coefficient: coef });
            reference.leading.push(LeadingTerm { order: 2, degree: 1, coefficient: coef });
            (LimitingHamiltonian::harmonic(), pert)
        }
        "ex1" => {
            let q = positive_int(name, "q", g("q"))?;
            let h = positive_int(name, "h", g("h"))?;
            let p = positive_int(name, "p", g("p"))?;
            if h > q || p > q {
                return Err(Error::InvalidInput(format!("ex1 needs 0 < h, p <= q (h={h}, p={p}, q={q})")));
            }
            let (lambda, mu) = (g("lambda"), g("mu"));
            let pert = PerturbationSeries::new(q)
                .with_f(h, &format!("{}*y", c(lambda)))?
                .with_b(2, 2, p, &format!("{}*sin(x)", c(mu)))?;
            // E-drift contributions: λY² at order h, (μ²/2) sin²X at order 2p
            let mut lead: BTreeMap<usize, f64> = BTreeMap::new();
            *lead.entry(h).or_default() += lambda;
            *lead.entry(2 * p).or_default() += mu * mu / 2.0;
            for (order, coefficient) in lead {
                if coefficient != 0.0 && order <= q.max(DEFAULT_K_MAX) {
                    reference.leading.push(LeadingTerm { order, degree: 1, coefficient });
                }
            }
            (LimitingHamiltonian::pendulum(), pert)
        }
        "ex2" => {
            let (a2, a4, b1, b2) = (g("a2"), g("a4"), g("b1"), g("b2"));
            let pert = PerturbationSeries::new(4)
                .with_f(2, &format!("{}*x^2*y/(1 + x^2)", c(a2)))?
                .with_f(4, &format!("{}*y", c(a4)))?
                .with_b(2, 2, 1, &format!("{}*x*y/sqrt(1 + x^2)", c(b1)))?
                .with_b(2, 2, 2, &format!("{}*x", c(b2)))?;
            reference.leading.push(LeadingTerm {
                order: 2,
                degree: 2,
                coefficient: (2.0 * a2 + b1 * b1) / 4.0,
            });
            reference.leading.push(LeadingTerm {
                order: 4,
                degree: 1,
                coefficient: (2.0 * a4 + b2 * b2) / 2.0,
            });
            (LimitingHamiltonian::pendulum(), pert)
        }
        "ex3" => {
            let (a1, a2, mu) = (g("a1"), g("a2"), g("mu"));
            let pert = PerturbationSeries::new(2)
                .with_f(2, &format!("({} + {}*x^2)*y/(1 + x^2 + y^2)", c(a1), c(a2)))?
                .with_b(2, 2, 1, &format!("{}*x", c(mu)))?;
            reference.closed_forms.push(ClosedForm::RationalCycle { a1, a2, mu });
            reference.leading.push(LeadingTerm {
                order: 2,
                degree: 1,
                coefficient: a1 + mu * mu / 2.0,
            });
            let m2 = mu * mu;
            if a2 + 2.0 * m2 < 0.0 && 2.0 * a1 + m2 > 0.0 {
                reference.cycle_energy = Some((2.0 * a1 + m2) / (a2 + 2.0 * m2).abs());
            }
            (LimitingHamiltonian::harmonic(), pert)
        }
        _ => unreachable!(),
    };
    assemble_named(descriptor, ham, pert, reference)
}

/// Parses `builtin:NAME?k=v&...` into a name and parameter map.
pub fn parse_builtin(reference: &str) -> Result<(String, BTreeMap<String, f64>)> {
    let body = reference
        .strip_prefix("builtin:")
        .ok_or_else(|| Error::InvalidInput(format!("'{reference}' is not a builtin reference")))?;
    let (name, query) = match body.split_once('?') {
        Some((n, q)) => (n, q),
        None => (body, ""),
    };
    let mut params = BTreeMap::new();
    for pair in query.split('&').filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("malformed parameter '{pair}'")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("parameter {k}: '{v}' is not a number")))?;
        params.insert(k.trim().to_string(), value);
    }
    Ok((name.to_string(), params))
}

/// Resolves a registry reference or a system-definition file.
pub fn resolve_system(reference: &str) -> Result<SdeSystem> {
    if reference.starts_with("builtin:") {
        let (name, params) = parse_builtin(reference)?;
        registry_get(&name, &params)
    } else {
        load_system_file(Path::new(reference))
    }
}

/// Reads a JSON system definition.
pub fn load_system_file(path: &Path) -> Result<SdeSystem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::SystemFile(format!("{}: {e}", path.display())))?;
    let mut sys = parse_system_definition(&text)?;
    sys.descriptor = path.display().to_string();
    Ok(sys)
}

fn parse_indices(key: &str, prefix: char) -> Option<Vec<usize>> {
    let rest = key.strip_prefix(prefix)?;
    let mut out = Vec::new();
    let mut s = rest;
    while !s.is_empty() {
        let inner = s.strip_prefix('[')?;
        let end = inner.find(']')?;
        out.push(inner[..end].trim().parse().ok()?);
        s = &inner[end + 1..];
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// Parses a JSON system definition with keys `q`, `H0`, `r`, `E0`,
/// `H[k]`, `F[k]`, `B[i][j][k]` and optionally `k_max`, `name`.
pub fn parse_system_definition(text: &str) -> Result<SdeSystem> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::SystemFile(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::SystemFile("top level must be an object".into()))?;
    let num = |k: &str| -> Result<Option<f64>> {
        match obj.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::SystemFile(format!("'{k}' must be a number"))),
        }
    };
    let string = |k: &str, v: &serde_json::Value| -> Result<String> {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::SystemFile(format!("'{k}' must be an expression string")))
    };
    let q = num("q")?.ok_or_else(|| Error::SystemFile("missing key 'q'".into()))?;
    if !(q >= 1.0 && q.fract() == 0.0) {
        return Err(Error::SystemFile(format!("q must be a positive integer (got {q})")));
    }
    let h0_src = obj
        .get("H0")
        .map(|v| string("H0", v))
        .transpose()?
        .ok_or_else(|| Error::SystemFile("missing key 'H0'".into()))?;
    let r = num("r")?.unwrap_or(2.0);
    let e0 = num("E0")?.unwrap_or(2.0);
    let h0 = parse_field(&h0_src, "H0")?;
    let name = match obj.get("name") {
        Some(v) => string("name", v)?,
        None => "custom".into(),
    };
    let ham = LimitingHamiltonian::new(name, h0, r, e0)?;
    let mut pert = PerturbationSeries::new(q as usize);
    let mut k_max = None;
    for (key, v) in obj {
        match key.as_str() {
            "q" | "H0" | "r" | "E0" | "name" => {}
            "k_max" => {
                let k = v.as_u64().ok_or_else(|| Error::SystemFile("'k_max' must be an integer".into()))?;
                k_max = Some(k as usize);
            }
            _ => {
                let first = key.chars().next().unwrap_or(' ');
                let idx = parse_indices(key, first);
                match (first, idx.as_deref()) {
                    ('H', Some(&[k])) => pert = pert.with_h(k, &string(key, v)?)?,
                    ('F', Some(&[k])) => pert = pert.with_f(k, &string(key, v)?)?,
                    ('B', Some(&[i, j, k])) => pert = pert.with_b(i, j, k, &string(key, v)?)?,
                    _ => return Err(Error::SystemFile(format!("unknown key '{key}'"))),
                }
            }
        }
    }
    if let Some(k) = k_max {
        pert.k_max = k;
    }
    assemble_system(ham, pert)
}
