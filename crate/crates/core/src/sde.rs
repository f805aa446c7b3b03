//! Seeded integration of the full time-inhomogeneous Itô system and
//! deterministic parallel ensembles.
//!
//! Path `i` of a run with master seed `s` draws its Brownian increments from
//! the ChaCha8 stream `(s, i)`, so every variate is a pure function of
//! `(s, i, step)` and ensembles are bitwise independent of the worker count.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::WeightFunction;
use crate::error::{Error, Result};
use crate::hamiltonian::{OrbitFamily, PeriodicOrbit};
use crate::numeric::{log_grid, quantile_sorted};
use crate::perturbation::SdeSystem;

/// Paths are truncated once `|z|` exceeds this multiple of the ball radius.
pub const BLOWUP_FACTOR: f64 = 1e3;

/// Time-stepping scheme. Both evaluate the diffusion at the left endpoint
/// (Itô).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `z + b(z,t)Δt + B(z,t)ΔW`.
    EulerMaruyama,
    /// Classical RK4 for the drift plus the Euler–Maruyama noise increment.
    /// Keeps the fast rotation free of the O(Δt) energy gain of the plain
    /// scheme, which dominates over long horizons.
    #[default]
    Rk4Maruyama,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "em" | "euler-maruyama" => Ok(Scheme::EulerMaruyama),
            "rk4-em" | "rk4-maruyama" => Ok(Scheme::Rk4Maruyama),
            _ => Err(Error::InvalidInput(format!("unknown scheme '{s}' (use em or rk4-em)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "em",
            Scheme::Rk4Maruyama => "rk4-em",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub seed: u64,
    pub z0: [f64; 2],
    pub record_stride: usize,
    pub scheme: Scheme,
    /// Optional stretching `Δt_k = min(dt·√(t_k/t0), cap)`; off by default.
    pub stretch_cap: Option<f64>,
}

impl SimulationConfig {
    pub fn new(t0: f64, t1: f64, dt: f64, seed: u64, z0: [f64; 2]) -> SimulationConfig {
        SimulationConfig { t0, t1, dt, seed, z0, record_stride: 1, scheme: Scheme::default(), stretch_cap: None }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.t0 >= 1.0) {
            return bad(format!("t0 must be >= 1 (got {})", self.t0));
        }
        if !(self.t1 > self.t0) {
            return bad(format!("t1 = {} must exceed t0 = {}", self.t1, self.t0));
        }
        if !(self.dt > 0.0 && self.dt <= self.t1 - self.t0) {
            return bad(format!("dt = {} must lie in (0, t1 - t0]", self.dt));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be >= 1".into());
        }
        if !(self.z0[0].is_finite() && self.z0[1].is_finite()) {
            return bad("initial point must be finite".into());
        }
        if let Some(cap) = self.stretch_cap {
            if !(cap >= self.dt) {
                return bad(format!("stretch cap {cap} must be >= dt"));
            }
        }
        Ok(())
    }

    /// Step size used at time `t`.
    #[inline]
    pub fn step_at(&self, t: f64) -> f64 {
        match self.stretch_cap {
            None => self.dt,
            Some(cap) => (self.dt * (t / self.t0).sqrt()).min(cap),
        }
    }

    /// Number of steps when no stretching is used.
    pub fn n_steps(&self) -> usize {
        ((self.t1 - self.t0) / self.dt - 1e-9).ceil() as usize
    }
}

/// Brownian stream of one path.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A pair of independent `N(0, dt)` increments.
#[inline]
pub fn brownian_increment(rng: &mut ChaCha8Rng, dt: f64) -> [f64; 2] {
    let s = dt.sqrt();
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    [s * a, s * b]
}

/// One step of the chosen scheme with given increments.
pub struct Stepper<'a> {
    pub sys: &'a SdeSystem,
    pub scheme: Scheme,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a SdeSystem, scheme: Scheme) -> Self {
        Stepper { sys, scheme }
    }

    #[inline]
    pub fn step(&self, z: [f64; 2], t: f64, dt: f64, dw: [f64; 2]) -> [f64; 2] {
        let sys = self.sys;
        let p0 = sys.time_factors(t);
        let bm = sys.diffusion_with(z[0], z[1], &p0);
        let noise = [
            bm[0][0] * dw[0] + bm[0][1] * dw[1],
            bm[1][0] * dw[0] + bm[1][1] * dw[1],
        ];
        let k1 = sys.drift_with(z[0], z[1], &p0);
        let det = match self.scheme {
            Scheme::EulerMaruyama => [z[0] + dt * k1[0], z[1] + dt * k1[1]],
            Scheme::Rk4Maruyama => {
                let ph = sys.time_factors(t + 0.5 * dt);
                let p1 = sys.time_factors(t + dt);
                let h = 0.5 * dt;
                let k2 = sys.drift_with(z[0] + h * k1[0], z[1] + h * k1[1], &ph);
                let k3 = sys.drift_with(z[0] + h * k2[0], z[1] + h * k2[1], &ph);
                let k4 = sys.drift_with(z[0] + dt * k3[0], z[1] + dt * k3[1], &p1);
                [
                    z[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    z[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ]
            }
        };
        [det[0] + noise[0], det[1] + noise[1]]
    }
}

/// How a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PathStatus {
    Complete,
    /// `|z|` exceeded `10³·r` at time `t`.
    Blowup { t: f64 },
    NonFinite { t: f64 },
}

impl PathStatus {
    pub fn is_truncated(&self) -> bool {
        !matches!(self, PathStatus::Complete)
    }
}

/// Integrates one path, calling `observe(step_index, t, z)` at the initial
/// point and after every step. Returns how the path ended and the number
/// of steps taken.
pub fn integrate<F: FnMut(usize, f64, [f64; 2])>(
    sys: &SdeSystem,
    cfg: &SimulationConfig,
    stream: u64,
    mut observe: F,
) -> (PathStatus, usize) {
    let stepper = Stepper::new(sys, cfg.scheme);
    let mut rng = path_rng(cfg.seed, stream);
    let limit = BLOWUP_FACTOR * sys.ham.r;
    let mut z = cfg.z0;
    let mut t = cfg.t0;
    let mut k = 0usize;
    observe(0, t, z);
    let fixed = cfg.stretch_cap.is_none();
    let n_fixed = cfg.n_steps();
    loop {
        let remaining = cfg.t1 - t;
        if (fixed && k >= n_fixed) || remaining <= 1e-12 * cfg.t1 {
            return (PathStatus::Complete, k);
        }
        let mut dt = cfg.step_at(t);
        if fixed && k + 1 == n_fixed || dt > remaining {
            dt = remaining;
        }
        let dw = brownian_increment(&mut rng, dt);
        z = stepper.step(z, t, dt, dw);
        k += 1;
        t = if fixed { cfg.t0 + k as f64 * cfg.dt } else { t + dt };
        if fixed && k == n_fixed {
            t = cfg.t1;
        }
        if !(z[0].is_finite() && z[1].is_finite()) {
            return (PathStatus::NonFinite { t }, k);
        }
        observe(k, t, z);
        if z[0].hypot(z[1]) > limit {
            return (PathStatus::Blowup { t }, k);
        }
    }
}

/// A recorded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    pub absz: Vec<f64>,
    pub energy: Vec<f64>,
    /// Filled by [`Path::attach_angles`].
    pub phi: Option<Vec<f64>>,
    pub seed: u64,
    pub stream: u64,
    pub status: PathStatus,
}

impl Path {
    /// Angle coordinate of every record (NaN outside the orbit family).
    pub fn attach_angles(&mut self, lookup: &AngleLookup) {
        self.phi = Some(self.states.iter().map(|z| lookup.angle(z[0], z[1])).collect());
    }

    /// CSV with columns `t,x,y,absz,E,phi` after one comment line.
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = format!("# {header}\nt,x,y,absz,E,phi\n");
        for i in 0..self.times.len() {
            let phi = self.phi.as_ref().map(|p| p[i]).unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.states[i][0], self.states[i][1], self.absz[i], self.energy[i], phi
            );
        }
        s
    }
}

/// Integrates a path with stream 0 and records every `record_stride`-th
/// step (and the final one).
pub fn simulate_path(sys: &SdeSystem, cfg: &SimulationConfig) -> Result<Path> {
    simulate_path_stream(sys, cfg, 0)
}

pub fn simulate_path_stream(sys: &SdeSystem, cfg: &SimulationConfig, stream: u64) -> Result<Path> {
    cfg.validate()?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut last = (0usize, 0.0, cfg.z0);
    let (status, _) = integrate(sys, cfg, stream, |k, t, z| {
        if k % cfg.record_stride == 0 {
            times.push(t);
            states.push(z);
        }
        last = (k, t, z);
    });
    if last.0 % cfg.record_stride != 0 {
        times.push(last.1);
        states.push(last.2);
    }
    let absz = states.iter().map(|z| z[0].hypot(z[1])).collect();
    let energy = states.iter().map(|z| sys.ham.energy(z[0], z[1])).collect();
    Ok(Path { times, states, absz, energy, phi: None, seed: cfg.seed, stream, status })
}

/// Angle of a point, read off the orbit nearest in energy from a fixed
/// log-spaced family.
pub struct AngleLookup {
    energies: Vec<f64>,
    orbits: Vec<Arc<PeriodicOrbit>>,
    limit: f64,
    ham: crate::hamiltonian::LimitingHamiltonian,
}

impl AngleLookup {
    pub fn new(family: &OrbitFamily, n_levels: usize) -> Result<AngleLookup> {
        let ham = family.hamiltonian().clone();
        let limit = ham.energy_limit();
        let energies = log_grid(1e-8 * ham.e0, limit, n_levels.max(2));
        let orbits = energies.par_iter().map(|&e| family.get(e)).collect::<Result<Vec<_>>>()?;
        Ok(AngleLookup { energies, orbits, limit, ham })
    }

    pub fn angle(&self, x: f64, y: f64) -> f64 {
        let e = self.ham.energy(x, y);
        if !(e > 0.0 && e <= self.limit) {
            return f64::NAN;
        }
        let i = self.energies.partition_point(|&g| g < e);
        let j = if i == 0 {
            0
        } else if i >= self.energies.len() || (e / self.energies[i - 1]) < (self.energies[i] / e) {
            i - 1
        } else {
            i
        };
        // rescale onto the chosen level; the angle is insensitive to the
        // small radial offset
        let o = &self.orbits[j];
        let s = (self.energies[j] / e).sqrt();
        o.angle_of(x * s, y * s)
    }
}

/// What every path of an ensemble reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationPlan {
    /// Times at which `|z|` and `E` are sampled (the first step at or after
    /// each).
    pub times: Vec<f64>,
    /// Weights for which `max_k |z(t_k)|·γ(t_k)` is tracked on every step.
    pub weights: Vec<WeightFunction>,
    /// Fraction of the horizon over which the tail mean of `|z|` is taken.
    pub tail_fraction: f64,
}

impl ObservationPlan {
    /// `n` log-spaced sample times over the configured horizon.
    pub fn log_spaced(cfg: &SimulationConfig, n: usize) -> ObservationPlan {
        ObservationPlan {
            times: log_grid(cfg.t0, cfg.t1, n.max(2)),
            weights: vec![WeightFunction::unit()],
            tail_fraction: 0.25,
        }
    }
}

/// Per-path reductions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub index: u64,
    pub status: PathStatus,
    pub steps: usize,
    /// `|z|` at the plan times (`+∞` after a truncation).
    pub absz: Vec<f64>,
    pub energy: Vec<f64>,
    /// `max_k (log|z_k| + log γ(t_k))` per plan weight.
    pub max_log_weighted: Vec<f64>,
    pub tail_mean_absz: f64,
    pub final_state: [f64; 2],
}

fn summarize(sys: &SdeSystem, cfg: &SimulationConfig, plan: &ObservationPlan, index: u64) -> PathSummary {
    let nt = plan.times.len();
    let mut absz = vec![f64::INFINITY; nt];
    let mut energy = vec![f64::INFINITY; nt];
    let mut next = 0usize;
    let mut maxw = vec![f64::NEG_INFINITY; plan.weights.len()];
    let tail_start = cfg.t1 - plan.tail_fraction * (cfg.t1 - cfg.t0);
    let (mut tail_sum, mut tail_n) = (0.0f64, 0usize);
    let mut final_state = cfg.z0;
    let unit: Vec<bool> = plan.weights.iter().map(|w| w.prefactor == 0.0 && w.extra == 0.0).collect();
    let (status, steps) = integrate(sys, cfg, index, |_, t, z| {
        let r = z[0].hypot(z[1]);
        while next < nt && plan.times[next] <= t * (1.0 + 1e-12) {
            absz[next] = r;
            energy[next] = sys.ham.energy(z[0], z[1]);
            next += 1;
        }
        let lr = r.ln();
        for (i, w) in plan.weights.iter().enumerate() {
            let v = if unit[i] { lr } else { lr + w.log_eval(t) };
            if v > maxw[i] {
                maxw[i] = v;
            }
        }
        if t >= tail_start {
            tail_sum += r;
            tail_n += 1;
        }
        final_state = z;
    });
    if status.is_truncated() {
        for m in maxw.iter_mut() {
            *m = f64::INFINITY;
        }
    }
    let tail_mean_absz = if status.is_truncated() || tail_n == 0 {
        f64::INFINITY
    } else {
        tail_sum / tail_n as f64
    };
    PathSummary { index, status, steps, absz, energy, max_log_weighted: maxw, tail_mean_absz, final_state }
}

/// Per-time quantiles of an ensemble statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileRow {
    pub t: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Results of an ensemble run in path order.
#[derive(Debug, Clone, Serialize)]
pub struct Ensemble {
    pub descriptor: String,
    pub config: SimulationConfig,
    pub plan: ObservationPlan,
    pub paths: Vec<PathSummary>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_truncated(&self) -> usize {
        self.paths.iter().filter(|p| p.status.is_truncated()).count()
    }

    fn quantiles(&self, pick: impl Fn(&PathSummary) -> &[f64]) -> Vec<QuantileRow> {
        (0..self.plan.times.len())
            .map(|i| {
                let mut col: Vec<f64> = self.paths.iter().map(|p| pick(p)[i]).collect();
                col.sort_by(f64::total_cmp);
                let q = |p| quantile_sorted(&col, p);
                QuantileRow { t: self.plan.times[i], q05: q(0.05), q25: q(0.25), q50: q(0.5), q75: q(0.75), q95: q(0.95) }
            })
            .collect()
    }

    pub fn absz_quantiles(&self) -> Vec<QuantileRow> {
        self.quantiles(|p| &p.absz)
    }

    pub fn energy_quantiles(&self) -> Vec<QuantileRow> {
        self.quantiles(|p| &p.energy)
    }

    /// Comment line recording system, seed and step.
    pub fn header(&self) -> String {
        format!(
            "system={} seed={} dt={} scheme={} t0={} t1={} n_paths={} z0=({},{})",
            self.descriptor,
            self.config.seed,
            self.config.dt,
            self.config.scheme.name(),
            self.config.t0,
            self.config.t1,
            self.paths.len(),
            self.config.z0[0],
            self.config.z0[1]
        )
    }

    pub fn quantile_csv(&self, rows: &[QuantileRow], what: &str) -> String {
        let mut s = format!("# {} statistic={what}\nt,q05,q25,q50,q75,q95\n", self.header());
        for r in rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.q05, r.q25, r.q50, r.q75, r.q95
            );
        }
        s
    }
}

/// Maps `f` over path indices `0..n` on a pool of `jobs` workers; results
/// come back in index order.
pub fn run_indexed<R: Send>(n: usize, jobs: usize, f: impl Fn(u64) -> R + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n as u64).into_par_iter().map(&f).collect()))
}

/// Runs `n_paths` paths (path `i` on stream `i`) and reduces each per
/// `plan`. Individual blowups are flagged, never fatal.
pub fn simulate_ensemble(
    sys: &SdeSystem,
    cfg: &SimulationConfig,
    plan: &ObservationPlan,
    n_paths: usize,
    jobs: usize,
) -> Result<Ensemble> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    if !(plan.tail_fraction > 0.0 && plan.tail_fraction <= 0.5) {
        return Err(Error::InvalidInput(format!("tail fraction {} outside (0, 0.5]", plan.tail_fraction)));
    }
    if plan.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("observation times must be nondecreasing".into()));
    }
    let paths = run_indexed(n_paths, jobs, |i| summarize(sys, cfg, plan, i))?;
    Ok(Ensemble { descriptor: sys.descriptor.clone(), config: cfg.clone(), plan: plan.clone(), paths })
}

/// Endpoint errors against a fine reference driven by the same Brownian
/// path, for a sequence of step halvings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongOrderStudy {
    pub dts: Vec<f64>,
    pub mean_errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

/// Strong convergence study: the coarsest step `dt0` is halved `halvings`
/// times; the reference uses `dt0 / 2^(halvings + 3)`.
pub fn strong_order_study(
    sys: &SdeSystem,
    scheme: Scheme,
    t0: f64,
    t1: f64,
    dt0: f64,
    halvings: usize,
    z0: [f64; 2],
    n_paths: usize,
    seed: u64,
) -> Result<StrongOrderStudy> {
    let finest_level = halvings + 3;
    let n_fine = ((t1 - t0) / dt0).round() as usize * (1 << finest_level);
    if n_fine == 0 || n_paths == 0 {
        return Err(Error::InvalidInput("strong-order study needs a positive horizon and paths".into()));
    }
    let dt_fine = (t1 - t0) / n_fine as f64;
    let stepper = Stepper::new(sys, scheme);
    let per_path: Vec<Vec<f64>> = run_indexed(n_paths, 1, |i| {
        let mut rng = path_rng(seed, i);
        let incs: Vec<[f64; 2]> = (0..n_fine).map(|_| brownian_increment(&mut rng, dt_fine)).collect();
        let solve = |level: usize| {
            let group = 1usize << (finest_level - level);
            let dt = dt_fine * group as f64;
            let mut z = z0;
            for (k, chunk) in incs.chunks(group).enumerate() {
                let dw = chunk.iter().fold([0.0, 0.0], |a, d| [a[0] + d[0], a[1] + d[1]]);
                z = stepper.step(z, t0 + k as f64 * dt, dt, dw);
            }
            z
        };
        let reference = solve(finest_level);
        (0..=halvings)
            .map(|lv| {
                let z = solve(lv);
                (z[0] - reference[0]).hypot(z[1] - reference[1])
            })
            .collect()
    })?;
    let dts: Vec<f64> = (0..=halvings).map(|lv| dt0 / (1u64 << lv) as f64).collect();
    let mean_errors: Vec<f64> = (0..=halvings)
        .map(|lv| per_path.iter().map(|e| e[lv]).sum::<f64>() / n_paths as f64)
        .collect();
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
    let (_, order, _) = crate::numeric::weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()]);
    Ok(StrongOrderStudy { dts, mean_errors, order })
}
