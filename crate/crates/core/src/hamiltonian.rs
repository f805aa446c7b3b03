//! Periodic orbits of the limiting Hamiltonian system
//! `x' = ∂_y H₀, y' = −∂_x H₀` and the energy-angle map built on them.
//!
//! Each orbit starts on the positive x-axis, runs clockwise (so that the
//! harmonic oscillator gives `X = √(2E) cos φ`, `Y = −√(2E) sin φ`) and is
//! resampled at uniform angle `φ = ν(E) t`. Energy derivatives of the orbit
//! come from the variational equations integrated alongside the orbit.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Field;
use crate::numeric::{bisect, Spectral, TrigInterpolant};

/// Energy tolerance along computed orbits.
pub const TOL_ORBIT: f64 = 1e-9;
/// Orbits are refused above this fraction of `e0`.
pub const SEPARATRIX_FRACTION: f64 = 0.9;
/// Minimum RK4 steps per period.
pub const MIN_STEPS: usize = 4096;

/// The unperturbed Hamiltonian `H₀` with a center at the origin.
#[derive(Debug, Clone)]
pub struct LimitingHamiltonian {
    pub name: String,
    pub h0: Field,
    /// Radius of the analysis ball.
    pub r: f64,
    /// Largest energy of the closed-orbit family.
    pub e0: f64,
}

impl LimitingHamiltonian {
    pub fn new(name: impl Into<String>, h0: Field, r: f64, e0: f64) -> Result<Self> {
        if !(r > 0.0 && e0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Hamiltonian needs r > 0 and e0 > 0 (got r = {r}, e0 = {e0})"
            )));
        }
        Ok(LimitingHamiltonian { name: name.into(), h0, r, e0 })
    }

    /// `1 − cos x + y²/2`; the closed orbits fill E < 2.
    pub fn pendulum() -> Self {
        let h0 = Field::parse("1 - cos(x) + y^2/2").expect("pendulum expression");
        LimitingHamiltonian { name: "pendulum".into(), h0, r: 3.0, e0: 2.0 }
    }

    /// `(x² + y²)/2`.
    pub fn harmonic() -> Self {
        let h0 = Field::parse("(x^2 + y^2)/2").expect("harmonic expression");
        LimitingHamiltonian { name: "harmonic".into(), h0, r: 2.0, e0: 2.0 }
    }

    #[inline]
    pub fn energy(&self, x: f64, y: f64) -> f64 {
        self.h0.value(x, y)
    }

    #[inline]
    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        self.h0.grad(x, y)
    }

    /// `[H_xx, H_xy, H_yy]`.
    #[inline]
    pub fn hessian(&self, x: f64, y: f64) -> [f64; 3] {
        self.h0.hessian(x, y)
    }

    /// Largest energy accepted by [`compute_orbit`].
    pub fn energy_limit(&self) -> f64 {
        SEPARATRIX_FRACTION * self.e0
    }

    /// Checks the center invariants: `H₀(0) = 0`, `∇H₀(0) = 0` and
    /// `|H₀ − |z|²/2| ≤ C|z|³` on a small sample ring.
    pub fn check_center(&self) -> Result<f64> {
        let v = self.energy(0.0, 0.0);
        let g = self.grad(0.0, 0.0);
        if v.abs() > 1e-14 || g[0].abs() > 1e-14 || g[1].abs() > 1e-14 {
            return Err(Error::InvalidInput(format!(
                "H0 has no critical point with value 0 at the origin ({v:e}, {:e}, {:e})",
                g[0], g[1]
            )));
        }
        let mut c_max: f64 = 0.0;
        for &rho in &[1e-3, 1e-2, 5e-2] {
            for i in 0..16 {
                let a = 2.0 * PI * i as f64 / 16.0;
                let (x, y) = (rho * a.cos(), rho * a.sin());
                let dev = (self.energy(x, y) - 0.5 * rho * rho).abs() / rho.powi(3);
                c_max = c_max.max(dev);
            }
        }
        if !(c_max < 1e3) {
            return Err(Error::InvalidInput(format!(
                "H0 is not |z|^2/2 + O(|z|^3) near the origin (C ≈ {c_max:e})"
            )));
        }
        Ok(c_max)
    }

    #[inline]
    fn vector_field(&self, x: f64, y: f64) -> [f64; 2] {
        let g = self.grad(x, y);
        [g[1], -g[0]]
    }
}

/// One periodic orbit sampled at uniform angle.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOrbit {
    pub energy: f64,
    pub period: f64,
    /// `ν = 2π/T`.
    pub frequency: f64,
    /// `dν/dE`.
    pub dnu_de: f64,
    pub phi: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `∂_φ X`, `∂_φ Y` from the vector field (exact identities).
    pub x_phi: Vec<f64>,
    pub y_phi: Vec<f64>,
    /// `∂_E X`, `∂_E Y` from the variational equations.
    pub dx_de: Vec<f64>,
    pub dy_de: Vec<f64>,
    /// Largest |H₀ − E| over the samples.
    pub energy_drift: f64,
    #[serde(skip)]
    interp: Option<(TrigInterpolant, TrigInterpolant)>,
}

impl PeriodicOrbit {
    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    fn interpolants(&self) -> &(TrigInterpolant, TrigInterpolant) {
        self.interp.as_ref().expect("orbit interpolants are built at construction")
    }

    /// Position on the orbit at arbitrary angle.
    pub fn point_at(&self, phi: f64) -> (f64, f64) {
        let (ix, iy) = self.interpolants();
        (ix.eval(phi), iy.eval(phi))
    }

    /// Angle of a point lying (approximately) on this orbit.
    pub fn angle_of(&self, x: f64, y: f64) -> f64 {
        let (ix, iy) = self.interpolants();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.phi.len() {
            let d = (self.x[i] - x).powi(2) + (self.y[i] - y).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        // Newton on d/dφ |Z(φ) − z|² = 0
        let mut phi = self.phi[best];
        let h = 2.0 * PI / self.phi.len() as f64;
        for _ in 0..30 {
            let (xv, xd, xdd) = ix.eval3(phi);
            let (yv, yd, ydd) = iy.eval3(phi);
            let g = (xv - x) * xd + (yv - y) * yd;
            let gp = xd * xd + yd * yd + (xv - x) * xdd + (yv - y) * ydd;
            if gp <= 0.0 {
                break;
            }
            let step = (g / gp).clamp(-h, h);
            phi -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        phi.rem_euclid(2.0 * PI)
    }

    /// CSV dump with columns `phi,x,y,dEx,dEy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi,x,y,dEx,dEy\n");
        for i in 0..self.phi.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.phi[i], self.x[i], self.y[i], self.dx_de[i], self.dy_de[i]
            );
        }
        s
    }
}

fn rk4_step(ham: &LimitingHamiltonian, z: [f64; 2], h: f64) -> [f64; 2] {
    let k1 = ham.vector_field(z[0], z[1]);
    let k2 = ham.vector_field(z[0] + 0.5 * h * k1[0], z[1] + 0.5 * h * k1[1]);
    let k3 = ham.vector_field(z[0] + 0.5 * h * k2[0], z[1] + 0.5 * h * k2[1]);
    let k4 = ham.vector_field(z[0] + h * k3[0], z[1] + h * k3[1]);
    [
        z[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        z[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// State plus variational deviation: `[x, y, δx, δy]`.
fn variational_rhs(ham: &LimitingHamiltonian, s: [f64; 4]) -> [f64; 4] {
    let g = ham.grad(s[0], s[1]);
    let h = ham.hessian(s[0], s[1]);
    [
        g[1],
        -g[0],
        h[1] * s[2] + h[2] * s[3],
        -h[0] * s[2] - h[1] * s[3],
    ]
}

fn rk4_var_step(ham: &LimitingHamiltonian, s: [f64; 4], h: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], c: f64| {
        [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]]
    };
    let k1 = variational_rhs(ham, s);
    let k2 = variational_rhs(ham, add(s, k1, 0.5 * h));
    let k3 = variational_rhs(ham, add(s, k2, 0.5 * h));
    let k4 = variational_rhs(ham, add(s, k3, h));
    let mut out = s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Root of `h0(x, 0) = E` on `(0, r]`: the orbit's start point.
pub fn level_point(ham: &LimitingHamiltonian, energy: f64) -> Result<f64> {
    let f = |x: f64| ham.energy(x, 0.0) - energy;
    let n = 400;
    let mut prev_x = 0.0;
    let mut prev_f = f(0.0);
    for i in 1..=n {
        let x = ham.r * i as f64 / n as f64;
        let fx = f(x);
        if prev_f < 0.0 && fx >= 0.0 {
            return bisect(f, prev_x, x, 1e-16).ok_or(Error::NoLevelPoint { energy });
        }
        prev_x = x;
        prev_f = fx;
    }
    Err(Error::NoLevelPoint { energy })
}

/// Period by integrating until the orbit, running clockwise, crosses
/// `y = 0` again with `x > 0` (coming down from `y > 0`), finished with one Hénon step in `y` as
/// the independent variable.
fn detect_period(ham: &LimitingHamiltonian, x_start: f64, energy: f64) -> Result<f64> {
    let h = 2.0 * PI / MIN_STEPS as f64;
    let cap = 50.0 * 2.0 * PI;
    let mut z = [x_start, 0.0];
    let mut t = 0.0;
    let mut left_axis = false;
    while t < cap {
        let next = rk4_step(ham, z, h);
        if next[1] < 0.0 {
            left_axis = true;
        }
        if left_axis && z[1] > 0.0 && next[1] <= 0.0 && next[0] > 0.0 {
            // Hénon: with y as the independent variable, dx/dy = ẋ/ẏ and
            // dt/dy = 1/ẏ; one RK4 step from y_k to the section y = 0.
            let f = |x: f64, y: f64| {
                let v = ham.vector_field(x, y);
                [v[0] / v[1], 1.0 / v[1]]
            };
            let (x0, y0) = (z[0], z[1]);
            let dy = -y0;
            let k1 = f(x0, y0);
            let k2 = f(x0 + 0.5 * dy * k1[0], y0 + 0.5 * dy);
            let k3 = f(x0 + 0.5 * dy * k2[0], y0 + 0.5 * dy);
            let k4 = f(x0 + dy * k3[0], 0.0);
            let dt = dy / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            return Ok(t + dt);
        }
        z = next;
        t += h;
        if !(z[0].is_finite() && z[1].is_finite()) || z[0].hypot(z[1]) > 10.0 * ham.r {
            break;
        }
    }
    Err(Error::NoReturn { energy })
}

/// Computes the periodic orbit of energy `energy` sampled at `n_phi`
/// uniform angles.
pub fn compute_orbit(ham: &LimitingHamiltonian, energy: f64, n_phi: usize) -> Result<PeriodicOrbit> {
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::InvalidInput(format!("orbit energy must be positive (got {energy})")));
    }
    if energy > ham.energy_limit() {
        return Err(Error::SeparatrixGuard { energy, limit: ham.energy_limit() });
    }
    if n_phi < 32 || !n_phi.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "n_phi must be a power of two >= 32 (got {n_phi})"
        )));
    }
    let x_start = level_point(ham, energy)?;
    let period = detect_period(ham, x_start, energy)?;
    let nu = 2.0 * PI / period;

    let steps = MIN_STEPS.max(n_phi);
    let stride = steps / n_phi;
    let h = period / steps as f64;
    let hx = ham.grad(x_start, 0.0)[0];
    let mut s = [x_start, 0.0, 1.0 / hx, 0.0];

    let mut raw = Vec::with_capacity(n_phi);
    for step in 0..steps {
        if step % stride == 0 {
            raw.push(s);
        }
        s = rk4_var_step(ham, s, h);
    }
    // closure: after exactly one period the orbit is back at the start
    let closure = (s[0] - x_start).hypot(s[1]);
    if !(closure <= TOL_ORBIT * (1.0 + x_start)) {
        return Err(Error::ToleranceFailure {
            energy,
            what: "orbit closure".into(),
            value: closure,
        });
    }
    // T'(E) from y(T(E); E) = 0
    let ydot_end = -ham.grad(s[0], s[1])[0];
    let dperiod = -s[3] / ydot_end;
    let dnu_de = -2.0 * PI * dperiod / (period * period);

    let phi: Vec<f64> = (0..n_phi).map(|i| 2.0 * PI * i as f64 / n_phi as f64).collect();
    let mut x = Vec::with_capacity(n_phi);
    let mut y = Vec::with_capacity(n_phi);
    let mut x_phi = Vec::with_capacity(n_phi);
    let mut y_phi = Vec::with_capacity(n_phi);
    let mut dx_de = Vec::with_capacity(n_phi);
    let mut dy_de = Vec::with_capacity(n_phi);
    let mut drift: f64 = 0.0;
    for (i, st) in raw.iter().enumerate() {
        let t = phi[i] / nu;
        let v = ham.vector_field(st[0], st[1]);
        x.push(st[0]);
        y.push(st[1]);
        x_phi.push(v[0] / nu);
        y_phi.push(v[1] / nu);
        // X(φ,E) = z(φ/ν(E); E) ⇒ X_E = δx − ẋ t ν'/ν
        dx_de.push(st[2] - v[0] * t * dnu_de / nu);
        dy_de.push(st[3] - v[1] * t * dnu_de / nu);
        drift = drift.max((ham.energy(st[0], st[1]) - energy).abs());
    }
    if !(drift <= TOL_ORBIT) {
        return Err(Error::ToleranceFailure { energy, what: "energy drift".into(), value: drift });
    }
    let sp = Spectral::new(n_phi);
    let interp = Some((sp.interpolant(&x), sp.interpolant(&y)));
    Ok(PeriodicOrbit {
        energy,
        period,
        frequency: nu,
        dnu_de,
        phi,
        x,
        y,
        x_phi,
        y_phi,
        dx_de,
        dy_de,
        energy_drift: drift,
        interp,
    })
}

/// ν(E) on a strictly increasing grid inside the family.
pub fn frequency_curve(ham: &LimitingHamiltonian, e_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if e_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("energy grid must be strictly increasing".into()));
    }
    e_grid
        .iter()
        .map(|&e| compute_orbit(ham, e, 64).map(|o| (e, o.frequency)))
        .collect()
}

/// Write-once cache of orbits keyed by exact energy.
#[derive(Debug)]
pub struct OrbitFamily {
    ham: LimitingHamiltonian,
    n_phi: usize,
    cache: RwLock<HashMap<u64, Arc<PeriodicOrbit>>>,
}

impl OrbitFamily {
    pub fn new(ham: LimitingHamiltonian, n_phi: usize) -> OrbitFamily {
        OrbitFamily { ham, n_phi, cache: RwLock::new(HashMap::new()) }
    }

    pub fn hamiltonian(&self) -> &LimitingHamiltonian {
        &self.ham
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn get(&self, energy: f64) -> Result<Arc<PeriodicOrbit>> {
        let key = energy.to_bits();
        if let Some(o) = self.cache.read().expect("orbit cache poisoned").get(&key) {
            return Ok(o.clone());
        }
        let orbit = Arc::new(compute_orbit(&self.ham, energy, self.n_phi)?);
        let mut w = self.cache.write().expect("orbit cache poisoned");
        Ok(w.entry(key).or_insert(orbit).clone())
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("orbit cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Energy-angle coordinates `(E, φ) = (I(x,y), Φ(x,y))` of a point.
pub fn energy_angle_of_point(family: &OrbitFamily, x: f64, y: f64) -> Result<(f64, f64)> {
    let ham = family.hamiltonian();
    let energy = ham.energy(x, y);
    if !(energy > 0.0 && energy <= ham.energy_limit()) {
        return Err(Error::OutOfFamily { energy, limit: ham.energy_limit() });
    }
    let orbit = family.get(energy)?;
    Ok((energy, orbit.angle_of(x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Complete elliptic integral of the first kind K(k) via the
    /// arithmetic-geometric mean: K = π / (2 AGM(1, √(1−k²))).
    fn elliptic_k(k: f64) -> f64 {
        let mut a = 1.0f64;
        let mut b = (1.0 - k * k).sqrt();
        for _ in 0..40 {
            let an = 0.5 * (a + b);
            b = (a * b).sqrt();
            a = an;
            if (a - b).abs() < 1e-16 {
                break;
            }
        }
        PI / (2.0 * a)
    }

    fn pendulum_nu(e: f64) -> f64 {
        PI / (2.0 * elliptic_k((e / 2.0).sqrt()))
    }

    #[test]
    fn oracle_sanity() {
        // K(0) = π/2, K(1/√2) = Γ(1/4)²/(4√π)
        assert!((elliptic_k(0.0) - PI / 2.0).abs() < 1e-15);
        assert!((elliptic_k(0.5f64.sqrt()) - 1.854_074_677_301_372).abs() < 1e-14);
    }

    #[test]
    fn harmonic_orbit_is_exact_rotation() {
        let o = compute_orbit(&LimitingHamiltonian::harmonic(), 0.5, 64).unwrap();
        assert!((o.period - 2.0 * PI).abs() < 1e-12);
        assert!(o.dnu_de.abs() < 1e-10);
        for i in 0..64 {
            assert!((o.x[i] - o.phi[i].cos()).abs() < 1e-10);
            assert!((o.y[i] + o.phi[i].sin()).abs() < 1e-10);
            // X_E = cos φ / √(2E) = cos φ at E = 1/2
            assert!((o.dx_de[i] - o.phi[i].cos()).abs() < 1e-9);
            assert!((o.dy_de[i] + o.phi[i].sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn pendulum_frequency_matches_elliptic_oracle() {
        let ham = LimitingHamiltonian::pendulum();
        for &e in &[0.05, 0.1, 0.5, 1.0, 1.5] {
            let o = compute_orbit(&ham, e, 64).unwrap();
            assert!((o.frequency - pendulum_nu(e)).abs() < 1e-9, "E = {e}");
        }
        // quoted to five digits
        assert!((pendulum_nu(0.1) - 0.98731).abs() < 5e-5);
    }

    #[test]
    fn pendulum_dnu_de_matches_oracle_derivative() {
        let ham = LimitingHamiltonian::pendulum();
        for &e in &[0.1, 0.8, 1.6] {
            let o = compute_orbit(&ham, e, 64).unwrap();
            let h = 1e-5;
            let fd = (pendulum_nu(e + h) - pendulum_nu(e - h)) / (2.0 * h);
            assert!((o.dnu_de - fd).abs() < 1e-7, "E = {e}: {} vs {fd}", o.dnu_de);
        }
    }

    #[test]
    fn jacobian_and_flow_identities() {
        let ham = LimitingHamiltonian::pendulum();
        let o = compute_orbit(&ham, 0.7, 256).unwrap();
        let sp = Spectral::new(256);
        let xp = sp.derivative(&o.x);
        let yp = sp.derivative(&o.y);
        for i in 0..256 {
            let det = o.x_phi[i] * o.dy_de[i] - o.dx_de[i] * o.y_phi[i];
            assert!((det - 1.0 / o.frequency).abs() < 1e-8);
            assert!((xp[i] - o.x_phi[i]).abs() < 1e-8);
            assert!((yp[i] - o.y_phi[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_derivatives_match_neighbouring_orbits() {
        let ham = LimitingHamiltonian::pendulum();
        let e = 0.9;
        let de = 1e-4;
        let o = compute_orbit(&ham, e, 64).unwrap();
        let op = compute_orbit(&ham, e + de, 64).unwrap();
        let om = compute_orbit(&ham, e - de, 64).unwrap();
        for i in 0..64 {
            let fd = (op.x[i] - om.x[i]) / (2.0 * de);
            assert!((o.dx_de[i] - fd).abs() < 1e-6);
            let fd = (op.y[i] - om.y[i]) / (2.0 * de);
            assert!((o.dy_de[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn resolution_independence() {
        let ham = LimitingHamiltonian::pendulum();
        let a = compute_orbit(&ham, 0.6, 256).unwrap();
        let b = compute_orbit(&ham, 0.6, 512).unwrap();
        assert!((a.frequency - b.frequency).abs() < 1e-9);
    }

    #[test]
    fn guards() {
        let ham = LimitingHamiltonian::pendulum();
        assert!(matches!(compute_orbit(&ham, 1.85, 64), Err(Error::SeparatrixGuard { .. })));
        assert!(matches!(compute_orbit(&ham, 0.5, 48), Err(Error::InvalidInput(_))));
        assert!(matches!(compute_orbit(&ham, -0.1, 64), Err(Error::InvalidInput(_))));
        let small = LimitingHamiltonian::new("tiny", ham.h0.clone(), 0.1, 2.0).unwrap();
        assert!(matches!(compute_orbit(&small, 0.5, 64), Err(Error::NoLevelPoint { .. })));
    }

    #[test]
    fn angle_recovery() {
        let fam = OrbitFamily::new(LimitingHamiltonian::harmonic(), 64);
        let (e, p) = energy_angle_of_point(&fam, 1.0, 0.0).unwrap();
        assert!((e - 0.5).abs() < 1e-15 && p.min(2.0 * PI - p) < 1e-9);
        let (e, p) = energy_angle_of_point(&fam, 0.0, -1.0).unwrap();
        assert!((e - 0.5).abs() < 1e-15 && (p - PI / 2.0).abs() < 1e-9);
        assert!(matches!(
            energy_angle_of_point(&fam, 0.0, 0.0),
            Err(Error::OutOfFamily { .. })
        ));
    }

    #[test]
    fn pendulum_angle_from_forward_flow() {
        let ham = LimitingHamiltonian::pendulum();
        let e = 0.3;
        let fam = OrbitFamily::new(ham.clone(), 256);
        let o = fam.get(e).unwrap();
        let steps = 30_000;
        let h = 0.3 * o.period / steps as f64;
        let mut z = [level_point(&ham, e).unwrap(), 0.0];
        for _ in 0..steps {
            z = rk4_step(&ham, z, h);
        }
        let (_, phi) = energy_angle_of_point(&fam, z[0], z[1]).unwrap();
        assert!((phi - 0.6 * PI).abs() < 1e-4);
    }

    #[test]
    fn csv_layout() {
        let o = compute_orbit(&LimitingHamiltonian::harmonic(), 0.5, 32).unwrap();
        let csv = o.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("phi,x,y,dEx,dEy"));
        assert_eq!(csv.lines().count(), 33);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 5);
        assert!(first[1].contains('e'));
    }
}
