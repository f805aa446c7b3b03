//! Energy-angle coefficients and the averaging recursion.
//!
//! In the variables `(E, φ) = (I(x,y), Φ(x,y))` the system reads
//!
//! ```text
//! dE = f dt + Σ_j β_{1,j} dw_j,     dφ = (ν(E) + g) dt + Σ_j β_{2,j} dw_j,
//! ```
//!
//! with `f, g, β` expanded in powers `t^{-k/q}`. The near-identity change
//! `V_N = E + Σ_{k≤N} t^{-k/q} v_k(E, φ)` removes the angle from the drift
//! order by order: `ν ∂_φ v_k = Λ_k(E) − f_k − R_k`, where `R_k` collects
//! everything produced by `v_1 … v_{k−1}` when the generator is applied to
//! `V_N` and the averaged drift is re-expanded around `E`:
//!
//! ```text
//! R_k = Σ_{i₁+i₂=k} (f_{i₁} ∂_E + g_{i₁} ∂_φ) v_{i₂}
//!     + ½ Σ_{i₁+i₂+i₃=k} (A ∂²_E + 2C ∂_E∂_φ + D ∂²_φ) v_{i₃}
//!     − ((k−q)/q) v_{k−q}
//!     − Σ_{j<k} Σ_{p≥1} Λ_j^{(p)}(E)/p! · Σ_{i₁+…+i_p = k−j} v_{i₁}⋯v_{i_p}
//! ```
//!
//! with `A = Σ_j β_{1,j,i₁}β_{1,j,i₂}`, `C = Σ_j β_{1,j,i₁}β_{2,j,i₂}`,
//! `D = Σ_j β_{2,j,i₁}β_{2,j,i₂}`. Then `Λ_k = ⟨f_k + R_k⟩_φ`.
//!
//! Angle derivatives are spectral; energy derivatives use 7-point
//! finite-difference stencils on the log-spaced energy grid.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{OrbitFamily, PeriodicOrbit};
use crate::numeric::{
    bisect, lagrange_local, lagrange_weights, least_squares, log_grid, periodic_mean, GridDiff,
    Spectral, TrigInterpolant,
};
use crate::perturbation::SdeSystem;

pub const DEFAULT_N_PHI: usize = 256;
/// Energy-grid density (points per decade).
pub const POINTS_PER_DECADE: f64 = 40.0;
/// Lowest grid energy as a fraction of `e0`.
pub const GRID_LOW_FRACTION: f64 = 5e-4;
/// Default exponent-fit window as fractions of `e0`.
pub const FIT_WINDOW: (f64, f64) = (1e-3, 1e-1);
const FIT_SAMPLES: usize = 16;
const FD_WIDTH: usize = 7;
const INTERP_WIDTH: usize = 7;
const NULL_THRESHOLD: f64 = 1e-9;

/// Log-uniform energy grid `[5·10⁻⁴, 0.9]·e0` at 40 points per decade.
pub fn default_energy_grid(e0: f64) -> Vec<f64> {
    let lo = GRID_LOW_FRACTION * e0;
    let hi = 0.9 * e0;
    let n = ((hi / lo).log10() * POINTS_PER_DECADE).ceil() as usize + 1;
    log_grid(lo, hi, n)
}

/// Row-major table over `(E, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ne: usize,
    pub np: usize,
    pub data: Vec<f64>,
}

impl Table {
    pub fn zeros(ne: usize, np: usize) -> Table {
        Table { ne, np, data: vec![0.0; ne * np] }
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.np..(a + 1) * self.np]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.np..(a + 1) * self.np]
    }

    #[inline]
    pub fn at(&self, a: usize, i: usize) -> f64 {
        self.data[a * self.np + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Table {
        let mut out = Table::zeros(self.ne, self.np);
        for a in 0..self.ne {
            out.row_mut(a).copy_from_slice(&f(self.row(a)));
        }
        out
    }

    fn product(&self, other: &Table) -> Table {
        Table {
            ne: self.ne,
            np: self.np,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Table, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }
}

/// `f_k`, `g_k`, `β_{i,j,k}` tabulated over the energy and angle grids.
#[derive(Debug, Clone)]
pub struct AngleTable {
    pub e_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub e0: f64,
    pub q: usize,
    pub k_max: usize,
    pub nu: Vec<f64>,
    pub dnu: Vec<f64>,
    /// `f[k-1]`, `g[k-1]` for k = 1..=k_max.
    pub f: Vec<Table>,
    pub g: Vec<Table>,
    /// Keyed by `(i, j, k)`.
    pub beta: BTreeMap<(usize, usize, usize), Table>,
}

impl AngleTable {
    pub fn f_k(&self, k: usize) -> Option<&Table> {
        (k >= 1 && k <= self.k_max).then(|| &self.f[k - 1])
    }

    pub fn g_k(&self, k: usize) -> Option<&Table> {
        (k >= 1 && k <= self.k_max).then(|| &self.g[k - 1])
    }

    pub fn beta(&self, i: usize, j: usize, k: usize) -> Option<&Table> {
        self.beta.get(&(i, j, k))
    }
}

/// Periodic mean `⟨·⟩_φ` of uniformly sampled data.
pub fn angle_average(values: &[f64]) -> f64 {
    periodic_mean(values)
}

/// Orbits for every grid energy (computed concurrently, returned in grid
/// order).
pub fn orbits_on_grid(family: &OrbitFamily, e_grid: &[f64]) -> Result<Vec<Arc<PeriodicOrbit>>> {
    e_grid.par_iter().map(|&e| family.get(e)).collect()
}

/// Builds the coefficient tables by substituting the orbit parametrization
/// into the transformed generator.
pub fn energy_angle_coefficients(
    sys: &SdeSystem,
    family: &OrbitFamily,
    e_grid: &[f64],
) -> Result<AngleTable> {
    if e_grid.len() < FD_WIDTH {
        return Err(Error::GridMismatch(format!(
            "energy grid needs at least {FD_WIDTH} points (got {})",
            e_grid.len()
        )));
    }
    if e_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch("energy grid must be strictly increasing".into()));
    }
    let np = family.n_phi();
    let ne = e_grid.len();
    let orbits = orbits_on_grid(family, e_grid)?;
    let sp = Spectral::new(np);
    let gd = GridDiff::new(e_grid, FD_WIDTH);

    let mut xe = Table::zeros(ne, np);
    let mut ye = Table::zeros(ne, np);
    for (a, o) in orbits.iter().enumerate() {
        if o.n_phi() != np {
            return Err(Error::GridMismatch("orbit resolution differs from the family".into()));
        }
        xe.row_mut(a).copy_from_slice(&o.dx_de);
        ye.row_mut(a).copy_from_slice(&o.dy_de);
    }
    let xe_phi = xe.map_rows(|r| sp.derivative(r));
    let ye_phi = ye.map_rows(|r| sp.derivative(r));
    let xee = Table { ne, np, data: gd.deriv_rows(&xe.data, np, 1) };
    let yee = Table { ne, np, data: gd.deriv_rows(&ye.data, np, 1) };

    let k_max = sys.k_max();
    let ham = &sys.ham;
    let pert = &sys.pert;
    let mut f: Vec<Table> = (0..k_max).map(|_| Table::zeros(ne, np)).collect();
    let mut g: Vec<Table> = (0..k_max).map(|_| Table::zeros(ne, np)).collect();
    let mut beta: BTreeMap<(usize, usize, usize), Table> = BTreeMap::new();
    for (&(_, j, k), field) in &pert.b_terms {
        if k <= k_max && !field.is_zero() {
            for row in 1..=2 {
                beta.entry((row, j, k)).or_insert_with(|| Table::zeros(ne, np));
            }
        }
    }
    let b_orders: Vec<usize> = (1..=k_max)
        .filter(|&k| (1..=2).any(|i| (1..=2).any(|j| pert.b(i, j, k).is_some())))
        .collect();

    for (a, o) in orbits.iter().enumerate() {
        let nu = o.frequency;
        let dnu = o.dnu_de;
        for idx in 0..np {
            let (x, y) = (o.x[idx], o.y[idx]);
            let (xp, yp) = (o.x_phi[idx], o.y_phi[idx]);
            let (xe_, ye_) = (xe.at(a, idx), ye.at(a, idx));
            let (xep, yep) = (xe_phi.at(a, idx), ye_phi.at(a, idx));
            let (xee_, yee_) = (xee.at(a, idx), yee.at(a, idx));
            // derivatives of I = H₀ and of Φ at (X, Y)
            let gi = ham.grad(x, y);
            let hi = ham.hessian(x, y);
            let (i_x, i_y) = (gi[0], gi[1]);
            let (i_xx, i_xy, i_yy) = (hi[0], hi[1], hi[2]);
            let p_x = nu * ye_;
            let p_y = -nu * xe_;
            let p_xx = nu * (nu * ye_ * yep - yp * (dnu * ye_ + nu * yee_));
            let p_yy = -nu * (xp * (dnu * xe_ + nu * xee_) - nu * xe_ * xep);
            let p_xy = nu * (xp * (dnu * ye_ + nu * yee_) - nu * xe_ * yep);

            // B_{i,j,k} at this node
            let mut bv = [[[0.0f64; 2]; 2]; crate::perturbation::MAX_ORDER + 1];
            for &k in &b_orders {
                for i in 1..=2 {
                    for j in 1..=2 {
                        if let Some(field) = pert.b(i, j, k) {
                            bv[k][i - 1][j - 1] = field.value(x, y);
                        }
                    }
                }
            }
            for k in 1..=k_max {
                let mut ax = 0.0;
                let mut ay = 0.0;
                if let Some(h) = pert.h(k) {
                    let gh = h.grad(x, y);
                    ax += gh[1];
                    ay -= gh[0];
                }
                if let Some(fk) = pert.f(k) {
                    ay += fk.value(x, y);
                }
                let mut fv = ax * i_x + ay * i_y;
                let mut gv = ax * p_x + ay * p_y;
                for i1 in 1..k {
                    let i2 = k - i1;
                    let (b1, b2) = (&bv[i1], &bv[i2]);
                    let axx = b1[0][0] * b2[0][0] + b1[0][1] * b2[0][1];
                    let ayy = b1[1][0] * b2[1][0] + b1[1][1] * b2[1][1];
                    let axy = b1[0][0] * b2[1][0] + b1[0][1] * b2[1][1];
                    fv += 0.5 * (axx * i_xx + ayy * i_yy + 2.0 * axy * i_xy);
                    gv += 0.5 * (axx * p_xx + ayy * p_yy + 2.0 * axy * p_xy);
                }
                f[k - 1].data[a * np + idx] = fv;
                g[k - 1].data[a * np + idx] = gv;
            }
            for (&(i, j, k), tab) in beta.iter_mut() {
                let (b1j, b2j) = (bv[k][0][j - 1], bv[k][1][j - 1]);
                tab.data[a * np + idx] = if i == 1 {
                    b1j * i_x + b2j * i_y
                } else {
                    b1j * p_x + b2j * p_y
                };
            }
        }
    }
    Ok(AngleTable {
        e_grid: e_grid.to_vec(),
        phi_grid: (0..np).map(|i| 2.0 * PI * i as f64 / np as f64).collect(),
        e0: ham.e0,
        q: sys.q(),
        k_max,
        nu: orbits.iter().map(|o| o.frequency).collect(),
        dnu: orbits.iter().map(|o| o.dnu_de).collect(),
        f,
        g,
        beta,
    })
}

/// Averaged drift coefficients `Λ_k(E)` and near-identity corrections
/// `v_k(E, φ)` up to order `N`.
#[derive(Debug, Clone)]
pub struct AveragedDrift {
    pub e_grid: Vec<f64>,
    pub e0: f64,
    pub q: usize,
    pub order_n: usize,
    /// `lambda[k-1][a] = Λ_k(E_a)`.
    pub lambda: Vec<Vec<f64>>,
    /// `v[k-1]`.
    pub v: Vec<Table>,
    /// `r[k-1] = R_k`.
    pub r: Vec<Table>,
    v_interp: Vec<Vec<TrigInterpolant>>,
}

impl AveragedDrift {
    pub fn n_phi(&self) -> usize {
        self.v.first().map(|t| t.np).unwrap_or(0)
    }

    pub fn in_domain(&self, e: f64) -> bool {
        e >= self.e_grid[0] && e <= *self.e_grid.last().unwrap()
    }

    /// `Λ_k(E)` off the grid (local 7-point interpolation).
    pub fn lambda_at(&self, k: usize, e: f64) -> f64 {
        lagrange_local(&self.e_grid, &self.lambda[k - 1], e, INTERP_WIDTH, 0)[0]
    }

    /// `[Λ_k, Λ_k', …, Λ_k^{(m)}]` at `E`.
    pub fn lambda_derivs(&self, k: usize, e: f64, m: usize) -> Vec<f64> {
        lagrange_local(&self.e_grid, &self.lambda[k - 1], e, INTERP_WIDTH, m)
    }

    /// `v_k(E, φ)` off the grid.
    pub fn v_at(&self, k: usize, e: f64, phi: f64) -> f64 {
        let (start, w) = lagrange_weights(&self.e_grid, e, INTERP_WIDTH, 0);
        w[0].iter()
            .enumerate()
            .map(|(s, wt)| wt * self.v_interp[k - 1][start + s].eval(phi))
            .sum()
    }

    /// CSV with columns `E,Lambda_k`.
    pub fn lambda_csv(&self, k: usize) -> String {
        let mut s = format!("E,Lambda_{k}\n");
        for (a, e) in self.e_grid.iter().enumerate() {
            let _ = writeln!(s, "{:.16e},{:.16e}", e, self.lambda[k - 1][a]);
        }
        s
    }
}

/// Runs the recursion for `k = 1..=order`.
pub fn averaging_recursion(tables: &AngleTable, order: usize) -> Result<AveragedDrift> {
    if order == 0 {
        return Err(Error::InvalidInput("averaging order must be at least 1".into()));
    }
    if order > tables.k_max {
        return Err(Error::OrderTooHigh { requested: order, k_max: tables.k_max });
    }
    let ne = tables.e_grid.len();
    let np = tables.phi_grid.len();
    let q = tables.q;
    let sp = Spectral::new(np);
    let gd = GridDiff::new(&tables.e_grid, FD_WIDTH);

    struct Derivs {
        e: Table,
        p: Table,
        ee: Table,
        ep: Table,
        pp: Table,
    }
    let mut v: Vec<Table> = Vec::with_capacity(order);
    let mut dv: Vec<Derivs> = Vec::with_capacity(order);
    let mut r_tables: Vec<Table> = Vec::with_capacity(order);
    let mut lambda: Vec<Vec<f64>> = Vec::with_capacity(order);
    // lambda_d[j-1][p] = Λ_j^{(p)} on the grid
    let mut lambda_d: Vec<Vec<Vec<f64>>> = Vec::with_capacity(order);
    let mut factorial = vec![1.0f64; order + 1];
    for p in 1..=order {
        factorial[p] = factorial[p - 1] * p as f64;
    }

    for k in 1..=order {
        let mut rk = Table::zeros(ne, np);
        // transport terms
        for i1 in 1..k {
            let i2 = k - i1;
            rk.add_scaled(&tables.f[i1 - 1].product(&dv[i2 - 1].e), 1.0);
            rk.add_scaled(&tables.g[i1 - 1].product(&dv[i2 - 1].p), 1.0);
        }
        // second-order diffusion terms acting on v_{i3}
        for i3 in 1..k {
            for i1 in 1..(k - i3) {
                let i2 = k - i3 - i1;
                if i2 == 0 {
                    continue;
                }
                for j in 1..=2 {
                    let b1a = tables.beta(1, j, i1);
                    let b1b = tables.beta(1, j, i2);
                    let b2a = tables.beta(2, j, i1);
                    let b2b = tables.beta(2, j, i2);
                    let d = &dv[i3 - 1];
                    if let (Some(x), Some(y)) = (b1a, b1b) {
                        rk.add_scaled(&x.product(y).product(&d.ee), 0.5);
                    }
                    if let (Some(x), Some(y)) = (b1a, b2b) {
                        rk.add_scaled(&x.product(y).product(&d.ep), 1.0);
                    }
                    if let (Some(x), Some(y)) = (b2a, b2b) {
                        rk.add_scaled(&x.product(y).product(&d.pp), 0.5);
                    }
                }
            }
        }
        // aging term from ∂_t acting on t^{-(k-q)/q} v_{k-q}
        if k > q {
            rk.add_scaled(&v[k - q - 1], -((k - q) as f64) / q as f64);
        }
        // re-expansion of Λ_j(V_N) around E
        let mut w_cache: HashMap<(usize, usize), Table> = HashMap::new();
        for j in 1..k {
            let s = k - j;
            for p in 1..=s {
                if p >= FD_WIDTH {
                    return Err(Error::DerivativeUnavailable(format!(
                        "Λ_{j}^({p}) needs a wider energy stencil"
                    )));
                }
                let w = w_power(&v, p, s, &mut w_cache);
                let coef = &lambda_d[j - 1][p];
                for a in 0..ne {
                    let c = coef[a] / factorial[p];
                    if c != 0.0 {
                        for (dst, src) in rk.row_mut(a).iter_mut().zip(w.row(a)) {
                            *dst -= c * src;
                        }
                    }
                }
            }
        }
        // Λ_k and v_k
        let mut lam = vec![0.0; ne];
        let mut vk = Table::zeros(ne, np);
        let fk = &tables.f[k - 1];
        let mut worst: f64 = 0.0;
        for a in 0..ne {
            let bracket: Vec<f64> = fk.row(a).iter().zip(rk.row(a)).map(|(x, y)| x + y).collect();
            lam[a] = angle_average(&bracket);
            let anti = sp.antiderivative(&bracket);
            let inv_nu = 1.0 / tables.nu[a];
            let row = vk.row_mut(a);
            for (dst, src) in row.iter_mut().zip(&anti) {
                *dst = -inv_nu * src;
            }
            let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mean = angle_average(row).abs();
            if scale > 0.0 {
                worst = worst.max(mean / scale);
            }
        }
        if worst > 1e-10 {
            return Err(Error::GridTooCoarse { order: k, residual: worst });
        }
        let derivs = Derivs {
            e: Table { ne, np, data: gd.deriv_rows(&vk.data, np, 1) },
            p: vk.map_rows(|r| sp.derivative(r)),
            ee: Table { ne, np, data: gd.deriv_rows(&vk.data, np, 2) },
            ep: Table { ne, np, data: gd.deriv_rows(&vk.map_rows(|r| sp.derivative(r)).data, np, 1) },
            pp: vk.map_rows(|r| sp.second_derivative(r)),
        };
        let mut ld = vec![lam.clone()];
        for p in 1..FD_WIDTH.min(order + 1) {
            ld.push(gd.deriv(&lam, p));
        }
        lambda_d.push(ld);
        lambda.push(lam);
        v.push(vk);
        dv.push(derivs);
        r_tables.push(rk);
    }
    let v_interp = v
        .iter()
        .map(|t| (0..ne).map(|a| sp.interpolant(t.row(a))).collect())
        .collect();
    Ok(AveragedDrift {
        e_grid: tables.e_grid.clone(),
        e0: tables.e0,
        q,
        order_n: order,
        lambda,
        v,
        r: r_tables,
        v_interp,
    })
}

/// `W_{p,s} = Σ_{i₁+…+i_p = s} v_{i₁}⋯v_{i_p}` (memoized).
fn w_power(v: &[Table], p: usize, s: usize, cache: &mut HashMap<(usize, usize), Table>) -> Table {
    if let Some(t) = cache.get(&(p, s)) {
        return t.clone();
    }
    let out = if p == 1 {
        v[s - 1].clone()
    } else {
        let mut acc = Table::zeros(v[0].ne, v[0].np);
        for i in 1..=(s + 1 - p) {
            let rest = w_power(v, p - 1, s - i, cache);
            acc.add_scaled(&v[i - 1].product(&rest), 1.0);
        }
        acc
    };
    cache.insert((p, s), out.clone());
    out
}

// ---------------------------------------------------------------------------
// Exponent fitting

/// Which hypothesis family the small-energy behaviour falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseTag {
    Linear,
    Nonlinear,
    Cycle,
    Degenerate,
}

/// Fit diagnostics for one order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderFit {
    pub order: usize,
    pub null: bool,
    pub slope: Option<f64>,
    pub degree: Option<usize>,
    pub coefficient: Option<f64>,
}

/// Small-energy exponents of the averaged drift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    /// First order with a nonzero averaged drift (0 if none).
    pub n: usize,
    pub m: Option<usize>,
    pub l: Option<usize>,
    pub lambda_n: Option<f64>,
    pub lambda_nm: Option<f64>,
    pub lambda_nl: Option<f64>,
    pub case_tag: CaseTag,
    pub window: (f64, f64),
    pub orders: Vec<OrderFit>,
}

fn fit_order(order: usize, vs: &[f64], vals: &[f64], null: bool) -> Result<OrderFit> {
    if null {
        return Ok(OrderFit { order, null, slope: None, degree: None, coefficient: None });
    }
    let sign = vals[0].signum();
    if vals.iter().any(|v| v.signum() != sign || *v == 0.0) {
        return Err(Error::FitAmbiguous { order, slope: f64::NAN });
    }
    let hi = *vs.last().unwrap();
    let n = vs.len();
    // log|Λ| = d log v + c₀ + c₁u + c₂u² + c₃u³, u = v/v_max
    let mut a = DMatrix::zeros(n, 5);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let u = vs[i] / hi;
        a[(i, 0)] = vs[i].ln();
        a[(i, 1)] = 1.0;
        a[(i, 2)] = u;
        a[(i, 3)] = u * u;
        a[(i, 4)] = u * u * u;
        b[i] = vals[i].abs().ln();
    }
    let sol = least_squares(&a, &b).ok_or(Error::FitAmbiguous { order, slope: f64::NAN })?;
    let slope = sol[0];
    let degree = slope.round();
    if (slope - degree).abs() > 0.1 || degree < 0.0 {
        return Err(Error::FitAmbiguous { order, slope });
    }
    let degree = degree as usize;
    // Λ / v^d = λ + polynomial in u; λ is the intercept
    let deg_poly = 6;
    let mut a = DMatrix::zeros(n, deg_poly + 1);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let u = vs[i] / hi;
        let mut p = 1.0;
        for c in 0..=deg_poly {
            a[(i, c)] = p;
            p *= u;
        }
        b[i] = vals[i] / vs[i].powi(degree as i32);
    }
    let sol = least_squares(&a, &b).ok_or(Error::FitAmbiguous { order, slope })?;
    Ok(OrderFit { order, null, slope: Some(slope), degree: Some(degree), coefficient: Some(sol[0]) })
}

/// Determines `n`, `m`, `l` and the leading coefficients from the
/// tabulated drifts on a log-spaced sample of `window`.
pub fn fit_exponents(drift: &AveragedDrift, window: (f64, f64)) -> Result<ExponentFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo && hi <= drift.e0 / 10.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidInput(format!(
            "fit window [{lo}, {hi}] must lie inside (0, e0/10 = {}]",
            drift.e0 / 10.0
        )));
    }
    let inside = drift.e_grid.iter().filter(|&&e| e >= lo && e <= hi).count();
    if inside < 8 || lo < drift.e_grid[0] * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "fit window [{lo}, {hi}] holds {inside} grid energies (need 8, grid starts at {})",
            drift.e_grid[0]
        )));
    }
    let vs = log_grid(lo, hi, FIT_SAMPLES);
    let samples: Vec<Vec<f64>> = (1..=drift.order_n)
        .map(|k| vs.iter().map(|&v| drift.lambda_at(k, v)).collect())
        .collect();
    let scale = samples.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let is_null = |k: usize| {
        samples[k - 1].iter().fold(0.0f64, |m, v| m.max(v.abs())) < NULL_THRESHOLD * (1.0 + scale)
    };
    let mut orders: Vec<OrderFit> = Vec::new();
    let mut fit = ExponentFit {
        n: 0,
        m: None,
        l: None,
        lambda_n: None,
        lambda_nm: None,
        lambda_nl: None,
        case_tag: CaseTag::Degenerate,
        window,
        orders: Vec::new(),
    };
    let Some(n) = (1..=drift.order_n).find(|&k| !is_null(k)) else {
        for k in 1..=drift.order_n {
            orders.push(fit_order(k, &vs, &samples[k - 1], true)?);
        }
        fit.orders = orders;
        return Ok(fit);
    };
    for k in 1..n {
        orders.push(fit_order(k, &vs, &samples[k - 1], true)?);
    }
    fit.n = n;
    let lead = match fit_order(n, &vs, &samples[n - 1], false) {
        Ok(f) => f,
        Err(e) => {
            // a sign change inside the window cannot be a monomial
            if has_sign_change(&drift.lambda[n - 1]) {
                fit.case_tag = CaseTag::Cycle;
                fit.orders = orders;
                return Ok(fit);
            }
            return Err(e);
        }
    };
    orders.push(lead);
    let m = lead.degree.unwrap_or(0);
    if m == 1 {
        fit.case_tag = CaseTag::Linear;
        fit.lambda_n = lead.coefficient;
    } else if m >= 2 {
        for k in n + 1..=drift.order_n {
            let of = fit_order(k, &vs, &samples[k - 1], is_null(k))?;
            orders.push(of);
            if of.null {
                continue;
            }
            match of.degree {
                Some(1) => {
                    fit.case_tag = CaseTag::Nonlinear;
                    fit.m = Some(m);
                    fit.l = Some(k - n);
                    fit.lambda_nm = lead.coefficient;
                    fit.lambda_nl = of.coefficient;
                    break;
                }
                Some(d) if d >= m => continue,
                _ => break,
            }
        }
    }
    if fit.case_tag == CaseTag::Degenerate && has_sign_change(&drift.lambda[n - 1]) {
        fit.case_tag = CaseTag::Cycle;
    }
    fit.orders = orders;
    Ok(fit)
}

fn has_sign_change(values: &[f64]) -> bool {
    values.windows(2).any(|w| w[0] * w[1] < 0.0)
}

/// A zero `c` of `Λ_k` with its slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRoot {
    pub c: f64,
    pub derivative: f64,
    /// `Λ'(c) < 0`.
    pub stable: bool,
}

/// All sign changes of `Λ_k` on the energy grid, refined by bisection on
/// the local interpolant.
pub fn find_cycle_root(drift: &AveragedDrift, k: usize) -> Result<Vec<CycleRoot>> {
    if k == 0 || k > drift.order_n {
        return Err(Error::InvalidInput(format!("no averaged drift of order {k}")));
    }
    let vals = &drift.lambda[k - 1];
    let grid = &drift.e_grid;
    let mut roots = Vec::new();
    for a in 0..grid.len() - 1 {
        if vals[a] * vals[a + 1] < 0.0 {
            let c = bisect(|e| drift.lambda_at(k, e), grid[a], grid[a + 1], 1e-15)
                .ok_or(Error::NoRoot { order: k })?;
            let derivative = drift.lambda_derivs(k, c, 1)[1];
            if derivative.abs() < 1e-8 {
                return Err(Error::DerivativeZero { c, derivative });
            }
            roots.push(CycleRoot { c, derivative, stable: derivative < 0.0 });
        }
    }
    if roots.is_empty() {
        return Err(Error::NoRoot { order: k });
    }
    Ok(roots)
}

// ---------------------------------------------------------------------------
// Generator of the original system applied to V_N

/// Evaluates `V_N − E = Σ t^{-k/q} v_k(I, Φ)` and its time derivative at
/// a point.
fn correction(drift: &AveragedDrift, family: &OrbitFamily, x: f64, y: f64, t: f64) -> Option<(f64, f64, f64)> {
    let e = family.hamiltonian().energy(x, y);
    if !(drift.in_domain(e) && e <= family.hamiltonian().energy_limit()) {
        return None;
    }
    let orbit = family.get(e).ok()?;
    let phi = orbit.angle_of(x, y);
    let q = drift.q as f64;
    let mut w = 0.0;
    let mut wt = 0.0;
    for k in 1..=drift.order_n {
        let vk = drift.v_at(k, e, phi);
        let s = t.powf(-(k as f64) / q);
        w += s * vk;
        wt -= (k as f64 / q) * s / t * vk;
    }
    Some((e, w, wt))
}

/// `L V_N` at `(x, y, t)`, where `L` is the generator of the original
/// system and `V_N = I + Σ t^{-k/q} v_k(I, Φ)`.
///
/// The `I = H₀` part uses the exact gradient and Hessian of `H₀`; the
/// correction part uses central differences with step `10⁻⁵·r`.
pub fn apply_generator(
    sys: &SdeSystem,
    drift: &AveragedDrift,
    family: &OrbitFamily,
    x: f64,
    y: f64,
    t: f64,
) -> Result<f64> {
    let h = 1e-5 * sys.ham.r;
    let (b, bb) = sys.coefficients(x, y, t);
    let a11 = bb[0][0] * bb[0][0] + bb[0][1] * bb[0][1];
    let a22 = bb[1][0] * bb[1][0] + bb[1][1] * bb[1][1];
    let a12 = bb[0][0] * bb[1][0] + bb[0][1] * bb[1][1];
    let gi = sys.ham.grad(x, y);
    let hi = sys.ham.hessian(x, y);
    let li = b[0] * gi[0] + b[1] * gi[1] + 0.5 * (a11 * hi[0] + 2.0 * a12 * hi[1] + a22 * hi[2]);
    if drift.order_n == 0 {
        return Ok(li);
    }
    let out = || Error::StencilOutOfDomain { x, y };
    let w = |dx: f64, dy: f64| correction(drift, family, x + dx, y + dy, t).ok_or_else(out);
    let (_, w0, wt) = w(0.0, 0.0)?;
    let wxp = w(h, 0.0)?.1;
    let wxm = w(-h, 0.0)?.1;
    let wyp = w(0.0, h)?.1;
    let wym = w(0.0, -h)?.1;
    let wx = (wxp - wxm) / (2.0 * h);
    let wy = (wyp - wym) / (2.0 * h);
    let wxx = (wxp - 2.0 * w0 + wxm) / (h * h);
    let wyy = (wyp - 2.0 * w0 + wym) / (h * h);
    let wxy = if a12 != 0.0 {
        (w(h, h)?.1 - w(h, -h)?.1 - w(-h, h)?.1 + w(-h, -h)?.1) / (4.0 * h * h)
    } else {
        0.0
    };
    let lw = wt + b[0] * wx + b[1] * wy + 0.5 * (a11 * wxx + 2.0 * a12 * wxy + a22 * wyy);
    Ok(li + lw)
}

/// Remainder `L V_N − Σ_k t^{-k/q} Λ_k(V_N)` at a point.
pub fn generator_residual(
    sys: &SdeSystem,
    drift: &AveragedDrift,
    family: &OrbitFamily,
    x: f64,
    y: f64,
    t: f64,
) -> Result<f64> {
    let lv = apply_generator(sys, drift, family, x, y, t)?;
    let (e, w, _) =
        correction(drift, family, x, y, t).ok_or(Error::StencilOutOfDomain { x, y })?;
    let v = e + w;
    let q = drift.q as f64;
    let mut avg = 0.0;
    for k in 1..=drift.order_n {
        avg += t.powf(-(k as f64) / q) * drift.lambda_at(k, v);
    }
    Ok(lv - avg)
}

/// Full pipeline from a system to its averaged drift.
pub struct Averaging {
    pub family: OrbitFamily,
    pub tables: AngleTable,
    pub drift: AveragedDrift,
}

/// Convenience: default grids, orbit family and recursion to `order`
/// (default `k_max`).
pub fn average_system(sys: &SdeSystem, order: Option<usize>, n_phi: usize) -> Result<Averaging> {
    let family = OrbitFamily::new(sys.ham.clone(), n_phi);
    let grid = default_energy_grid(sys.ham.e0);
    let tables = energy_angle_coefficients(sys, &family, &grid)?;
    let drift = averaging_recursion(&tables, order.unwrap_or(sys.k_max()))?;
    Ok(Averaging { family, tables, drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{registry_get, resolve_system};

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn angle_average_examples() {
        let n = 256;
        let phi: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        assert_eq!(angle_average(&vec![2.5; 7]), 2.5);
        let s2: Vec<f64> = phi.iter().map(|p| p.sin().powi(2)).collect();
        assert!((angle_average(&s2) - 0.5).abs() < 1e-14);
        let bracket: Vec<f64> = s2.iter().map(|v| v - 0.5).collect();
        assert!(angle_average(&bracket).abs() < 1e-15);
    }

    #[test]
    fn ex0_first_table_entries_by_hand() {
        // f₂ = λY² + (μ²/2)X², so ⟨f₂⟩ = (λ + μ²/2)E
        let sys = registry_get("ex0", &params(&[("lambda", -1.0), ("mu", 1.0)])).unwrap();
        let fam = OrbitFamily::new(sys.ham.clone(), 64);
        let grid = log_grid(0.1, 1.0, 9);
        let t = energy_angle_coefficients(&sys, &fam, &grid).unwrap();
        let a = grid.iter().position(|&e| (e - 0.5).abs() < 0.1).unwrap();
        let e = grid[a];
        assert!((angle_average(t.f[1].row(a)) - (-1.0 + 0.5) * e).abs() < 1e-12);
        assert!(t.f[0].is_zero());
        // β_{1,2,1} = μX·∂_yI = μXY, β_{2,2,1} = μX·Φ_y
        let b = t.beta(1, 2, 1).unwrap();
        let o = fam.get(e).unwrap();
        for i in 0..64 {
            assert!((b.at(a, i) - o.x[i] * o.y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_tables() {
        let sys = registry_get("ex0", &params(&[("lambda", 0.0), ("mu", 0.0)])).unwrap();
        let fam = OrbitFamily::new(sys.ham.clone(), 64);
        let t = energy_angle_coefficients(&sys, &fam, &log_grid(0.01, 1.0, 12)).unwrap();
        assert!(t.f.iter().chain(&t.g).all(Table::is_zero));
        assert!(t.beta.is_empty());
        let d = averaging_recursion(&t, 4).unwrap();
        assert!(d.lambda.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn ex0_lambda_two_is_linear() {
        for &(l, m) in &[(-1.0, 1.0), (0.3, 1.0), (1.0, 0.0)] {
            let sys = registry_get("ex0", &params(&[("lambda", l), ("mu", m)])).unwrap();
            let av = average_system(&sys, Some(2), 64).unwrap();
            let c = l + m * m / 2.0;
            for (a, e) in av.drift.e_grid.iter().enumerate() {
                assert!(av.drift.lambda[0][a].abs() < 1e-14);
                assert!((av.drift.lambda[1][a] - c * e).abs() <= 1e-10 * e);
            }
        }
    }

    #[test]
    fn ex3_matches_closed_form() {
        let sys = registry_get("ex3", &params(&[("a1", 1.0), ("a2", -2.0), ("mu", 0.5)])).unwrap();
        let av = average_system(&sys, Some(2), 128).unwrap();
        let cf = sys.reference.closed_forms[0];
        for (a, &e) in av.drift.e_grid.iter().enumerate() {
            if (0.05..=1.5).contains(&e) {
                let want = cf.eval(e);
                assert!((av.drift.lambda[1][a] - want).abs() <= 1e-9 * want.abs().max(1e-3));
            }
        }
        let roots = find_cycle_root(&av.drift, 2).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].c - 1.5).abs() < 1e-8);
        assert!((roots[0].derivative + 0.28125).abs() < 1e-6);
        assert!(roots[0].stable);
    }

    #[test]
    fn mean_zero_corrections_vanish_at_small_energy() {
        let sys = resolve_system("builtin:ex2?a2=1&a4=-1.25&b1=4&b2=1").unwrap();
        let av = average_system(&sys, None, 128).unwrap();
        for v in &av.drift.v {
            for a in 0..v.ne {
                let row = v.row(a);
                let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(angle_average(row).abs() <= 1e-10 * scale.max(1e-300));
            }
            // v_k = O(E) as E → 0
            let e_min = av.drift.e_grid[0];
            let small = v.row(0).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(small < 10.0 * e_min, "{small} at E = {e_min}");
        }
        // f_k and β_{1,j,k} are O(E): small at the lowest grid energy
        let e_min = av.tables.e_grid[0];
        for f in &av.tables.f {
            assert!(f.row(0).iter().all(|v| v.abs() < 50.0 * e_min));
        }
        for (&(i, _, _), b) in &av.tables.beta {
            if i == 1 {
                assert!(b.row(0).iter().all(|v| v.abs() < 50.0 * e_min));
            }
        }
    }

    #[test]
    fn printed_r2_and_r3_match_general_expansion() {
        // h = p = 1, q = 2 gives nonzero f₁, g₁, v₁, β_{·,·,1} and the aging
        // term −((3−q)/q) v₁ at third order.
        let sys = resolve_system("builtin:ex1?h=1&p=1&q=2&lambda=-0.7&mu=0.8").unwrap();
        let av = average_system(&sys, Some(3), 64).unwrap();
        let t = &av.tables;
        let d = &av.drift;
        let ne = t.e_grid.len();
        let np = t.phi_grid.len();
        let sp = Spectral::new(np);
        let gd = GridDiff::new(&t.e_grid, FD_WIDTH);
        let v1 = &d.v[0];
        let v2 = &d.v[1];
        let de = |tab: &Table, o: usize| Table { ne, np, data: gd.deriv_rows(&tab.data, np, o) };
        let dp = |tab: &Table| tab.map_rows(|r| sp.derivative(r));
        let v1e = de(v1, 1);
        let v1p = dp(v1);
        let v1ee = de(v1, 2);
        let v1ep = de(&v1p, 1);
        let v1pp = v1.map_rows(|r| sp.second_derivative(r));
        let v2e = de(v2, 1);
        let v2p = dp(v2);
        let l1d = [gd.deriv(&d.lambda[0], 1), gd.deriv(&d.lambda[0], 2)];
        let l2d = gd.deriv(&d.lambda[1], 1);
        let (f1, g1, f2, g2) = (&t.f[0], &t.g[0], &t.f[1], &t.g[1]);
        let b = |i, j| t.beta(i, j, 1).cloned().unwrap_or_else(|| Table::zeros(ne, np));
        let (b111, b121, b211, b221) = (b(1, 1), b(1, 2), b(2, 1), b(2, 2));
        let q = t.q as f64;
        let mut max_r2: f64 = 0.0;
        let mut max_r3: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for a in 0..ne {
            for i in 0..np {
                let at = |tab: &Table| tab.at(a, i);
                // R₂ = (f₁∂_E + g₁∂_φ)v₁ − v₁ ∂_EΛ₁ − ((2−q)/q) v_{2−q}   (v₀ ≡ 0)
                let r2 = at(f1) * at(&v1e) + at(g1) * at(&v1p) - at(v1) * l1d[0][a];
                // R₃ as printed, with β_{1,2,1}β_{2,2,1} in the mixed term
                let r3 = at(f1) * at(&v2e) + at(g1) * at(&v2p) + at(f2) * at(&v1e) + at(g2) * at(&v1p)
                    - at(v1) * l2d[a]
                    - at(v2) * l1d[0][a]
                    - 0.5 * at(v1).powi(2) * l1d[1][a]
                    - (3.0 - q) / q * at(v1)
                    + 0.5
                        * ((at(&b111).powi(2) + at(&b121).powi(2)) * at(&v1ee)
                            + 2.0 * (at(&b111) * at(&b211) + at(&b121) * at(&b221)) * at(&v1ep)
                            + (at(&b211).powi(2) + at(&b221).powi(2)) * at(&v1pp));
                max_r2 = max_r2.max((d.r[1].at(a, i) - r2).abs());
                max_r3 = max_r3.max((d.r[2].at(a, i) - r3).abs());
                scale = scale.max(r3.abs()).max(r2.abs());
            }
        }
        assert!(scale > 1e-3);
        assert!(max_r2 <= 1e-12 * scale, "R2 mismatch {max_r2}");
        assert!(max_r3 <= 1e-12 * scale, "R3 mismatch {max_r3}");
    }

    #[test]
    fn exponent_fit_on_monomials() {
        let make = |lam: Vec<Vec<f64>>, grid: Vec<f64>| AveragedDrift {
            e_grid: grid.clone(),
            e0: 2.0,
            q: 2,
            order_n: lam.len(),
            v: vec![Table::zeros(grid.len(), 32); lam.len()],
            r: vec![Table::zeros(grid.len(), 32); lam.len()],
            v_interp: vec![Vec::new(); lam.len()],
            lambda: lam,
        };
        let grid = default_energy_grid(2.0);
        let zero = vec![0.0; grid.len()];
        let lin: Vec<f64> = grid.iter().map(|v| -0.5 * v).collect();
        let quad: Vec<f64> = grid.iter().map(|v| 0.25 * v * v).collect();
        let d = make(vec![zero.clone(), lin.clone()], grid.clone());
        let f = fit_exponents(&d, (2e-3, 0.2)).unwrap();
        assert_eq!((f.n, f.case_tag), (2, CaseTag::Linear));
        assert!((f.lambda_n.unwrap() + 0.5).abs() < 1e-10);
        let d = make(vec![quad.clone()], grid.clone());
        let f = fit_exponents(&d, (2e-3, 0.2)).unwrap();
        assert_eq!(f.orders[0].degree, Some(2));
        assert!((f.orders[0].coefficient.unwrap() - 0.25).abs() < 1e-10);
        assert_eq!(f.case_tag, CaseTag::Degenerate);
        let d = make(vec![quad, zero.clone(), lin], grid.clone());
        let f = fit_exponents(&d, (2e-3, 0.2)).unwrap();
        assert_eq!((f.case_tag, f.m, f.l), (CaseTag::Nonlinear, Some(2), Some(2)));
        let half: Vec<f64> = grid.iter().map(|v| v.powf(1.5)).collect();
        let d = make(vec![half], grid.clone());
        assert!(matches!(fit_exponents(&d, (2e-3, 0.2)), Err(Error::FitAmbiguous { .. })));
        let d = make(vec![zero], grid);
        assert_eq!(fit_exponents(&d, (2e-3, 0.2)).unwrap().case_tag, CaseTag::Degenerate);
    }

    #[test]
    fn cycle_root_of_logistic_table() {
        let grid = default_energy_grid(2.0);
        let vals: Vec<f64> = grid.iter().map(|v| v * (1.0 - v)).collect();
        let d = AveragedDrift {
            e_grid: grid.clone(),
            e0: 2.0,
            q: 2,
            order_n: 1,
            v: vec![Table::zeros(grid.len(), 32)],
            r: vec![Table::zeros(grid.len(), 32)],
            v_interp: vec![Vec::new()],
            lambda: vec![vals],
        };
        let roots = find_cycle_root(&d, 1).unwrap();
        assert!((roots[0].c - 1.0).abs() < 1e-10);
        assert!((roots[0].derivative + 1.0).abs() < 1e-8);
    }

    #[test]
    fn generator_on_energy_alone() {
        // ex0 with μ = 0 at z = (1, 0): L H₀ = λ y² / t = 0
        let sys = registry_get("ex0", &params(&[("lambda", -1.0), ("mu", 0.0)])).unwrap();
        let fam = OrbitFamily::new(sys.ham.clone(), 64);
        let tables = energy_angle_coefficients(&sys, &fam, &log_grid(1e-3, 1.8, 60)).unwrap();
        let mut drift = averaging_recursion(&tables, 1).unwrap();
        drift.order_n = 0;
        assert_eq!(apply_generator(&sys, &drift, &fam, 1.0, 0.0, 1.0).unwrap(), 0.0);
        let y = 0.5;
        let got = apply_generator(&sys, &drift, &fam, 0.3, y, 4.0).unwrap();
        assert!((got - (-1.0) * y * y / 4.0).abs() < 1e-15);
        // λ = 0, μ = 1 at (0, 1): μ²x²/(2t) = 0
        let sys = registry_get("ex0", &params(&[("lambda", 0.0), ("mu", 1.0)])).unwrap();
        assert_eq!(apply_generator(&sys, &drift, &fam, 0.0, 1.0, 1.0).unwrap(), 0.0);
    }
}
