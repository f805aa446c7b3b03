//! Statistical evidence from ensembles: weighted exit probabilities,
//! power-law fits of ensemble medians, energy-scaling levels and cycle
//! radii.

use serde::Serialize;

use crate::classifier::{practical_horizon, StabilityVerdict, VerdictKind, WeightFunction};
use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, weighted_line_fit};
use crate::perturbation::SdeSystem;
use crate::sde::{simulate_ensemble, Ensemble, ObservationPlan, SimulationConfig};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// 95% interval for a binomial proportion: Wilson's score interval, with
/// the rule of three at zero or full counts.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    if successes == 0 {
        return (0.0, (3.0 / nf).min(1.0));
    }
    if successes == n {
        return ((1.0 - 3.0 / nf).max(0.0), 1.0);
    }
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitEstimate {
    pub probability: f64,
    pub ci: (f64, f64),
    pub n_paths: usize,
    pub exceedances: usize,
    /// Truncated paths (counted among the exceedances).
    pub truncated: usize,
    pub epsilon: f64,
    pub weight: WeightFunction,
}

/// Fraction of paths with `max_k |z(t_k)|·γ(t_k) > ε` over the recording
/// grid. The weight must be one of the ensemble's tracked weights.
pub fn exit_probability(ens: &Ensemble, epsilon: f64, weight: &WeightFunction) -> Result<ExitEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive (got {epsilon})")));
    }
    let idx = ens
        .plan
        .weights
        .iter()
        .position(|w| w == weight)
        .ok_or_else(|| Error::InvalidInput(format!("weight {weight:?} was not tracked by this ensemble")))?;
    let log_eps = epsilon.ln();
    let exceedances = ens.paths.iter().filter(|p| p.max_log_weighted[idx] > log_eps).count();
    let n = ens.paths.len();
    Ok(ExitEstimate {
        probability: exceedances as f64 / n as f64,
        ci: wilson_interval(exceedances, n),
        n_paths: n,
        exceedances,
        truncated: ens.n_truncated(),
        epsilon,
        weight: *weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "statistic", rename_all = "snake_case")]
pub enum Statistic {
    MedianAbsZ,
    MedianEnergy,
    /// Median of `E·t^θ`.
    MedianScaledEnergy { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub statistic: Statistic,
    /// Root-mean-square residual of the log-log fit.
    pub rms: f64,
    pub n_points: usize,
}

/// Least-squares fit `log v = a + p log t`.
pub fn fit_power_law(ts: &[f64], values: &[f64]) -> Result<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidInput("power-law fit needs at least two positive samples".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (a, p, rms) = weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()]);
    Ok((a, p, rms))
}

fn window_indices(ens: &Ensemble, window: (f64, f64)) -> Result<Vec<usize>> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= 10.0 * lo * (1.0 - 1e-9)) {
        return Err(Error::WindowTooShort { lo, hi });
    }
    if lo < ens.config.t0 * (1.0 - 1e-12) || hi > ens.config.t1 * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "window [{lo}, {hi}] leaves the simulated horizon [{}, {}]",
            ens.config.t0, ens.config.t1
        )));
    }
    let idx: Vec<usize> = (0..ens.plan.times.len())
        .filter(|&i| {
            let t = ens.plan.times[i];
            t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12)
        })
        .collect();
    if idx.len() < 2 {
        return Err(Error::InvalidInput(format!("window [{lo}, {hi}] holds fewer than two sample times")));
    }
    Ok(idx)
}

fn median_at(ens: &Ensemble, i: usize, statistic: Statistic) -> f64 {
    let t = ens.plan.times[i];
    let mut col: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| match statistic {
            Statistic::MedianAbsZ => p.absz[i],
            Statistic::MedianEnergy => p.energy[i],
            Statistic::MedianScaledEnergy { theta } => p.energy[i] * t.powf(theta),
        })
        .collect();
    col.sort_by(f64::total_cmp);
    quantile_sorted(&col, 0.5)
}

/// Log-log slope of the per-time ensemble median over `window`.
pub fn decay_fit(ens: &Ensemble, statistic: Statistic, window: (f64, f64)) -> Result<DecayFit> {
    let idx = window_indices(ens, window)?;
    let ts: Vec<f64> = idx.iter().map(|&i| ens.plan.times[i]).collect();
    let meds: Vec<f64> = idx.iter().map(|&i| median_at(ens, i, statistic)).collect();
    let (intercept, exponent, rms) = fit_power_law(&ts, &meds)?;
    Ok(DecayFit { exponent, intercept, window, statistic, rms, n_points: ts.len() })
}

/// Level of `E·t^θ`: the median over all paths and all sample times in
/// `window`, with the slope of the per-time medians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingLevel {
    pub theta: f64,
    pub level: f64,
    pub slope: f64,
    pub window: (f64, f64),
}

pub fn scaled_energy_level(ens: &Ensemble, theta: f64, window: (f64, f64)) -> Result<ScalingLevel> {
    let idx = window_indices(ens, window)?;
    let mut pooled: Vec<f64> = Vec::with_capacity(idx.len() * ens.paths.len());
    for &i in &idx {
        let s = ens.plan.times[i].powf(theta);
        pooled.extend(ens.paths.iter().map(|p| p.energy[i] * s));
    }
    pooled.sort_by(f64::total_cmp);
    let fit = decay_fit(ens, Statistic::MedianScaledEnergy { theta }, window)?;
    Ok(ScalingLevel { theta, level: quantile_sorted(&pooled, 0.5), slope: fit.exponent, window })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRadius {
    pub mean: f64,
    pub standard_error: f64,
    pub n_used: usize,
    pub truncated: usize,
}

/// Mean over paths of the time-averaged `|z|` over the final
/// `tail_fraction` of the horizon (as fixed by the observation plan).
pub fn cycle_radius(ens: &Ensemble) -> Result<CycleRadius> {
    if ens.config.t1 < 1e3 {
        return Err(Error::InvalidInput(format!("cycle radius needs a horizon of at least 1e3 (got {})", ens.config.t1)));
    }
    let vals: Vec<f64> = ens.paths.iter().map(|p| p.tail_mean_absz).filter(|v| v.is_finite()).collect();
    let n = vals.len();
    if n == 0 {
        return Err(Error::InvalidInput("every path was truncated".into()));
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Ok(CycleRadius { mean, standard_error: (var / n as f64).sqrt(), n_used: n, truncated: ens.paths.len() - n })
}

/// Inputs of a practical-stability spot check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PracticalSetup {
    pub t0: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Maximum number of steps per path.
    pub step_budget: f64,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PracticalReport {
    pub horizon: f64,
    pub estimate: ExitEstimate,
    /// Upper end of the 95% interval is below `η`.
    pub below_eta: bool,
    pub setup: PracticalSetup,
}

/// Simulates from `|z₀| = δ/2` over `[t₀, t₀ + 𝒯]` and checks the
/// exceedance frequency of `ε` against `η`.
pub fn practical_stability_check(
    sys: &SdeSystem,
    verdict: &StabilityVerdict,
    setup: &PracticalSetup,
) -> Result<PracticalReport> {
    if verdict.kind != VerdictKind::PracticallyStable {
        return Err(Error::InconsistentInputs(format!("expected a practical-stability verdict, got {:?}", verdict.kind)));
    }
    let horizon = match verdict.horizon {
        Some(h) => h,
        None => {
            let mu = verdict.inputs.mu.ok_or(Error::MissingNoiseBound)?;
            practical_horizon(verdict.inputs.n, verdict.inputs.q, setup.t0, setup.delta, setup.epsilon, mu)?
        }
    };
    let required = horizon / setup.dt;
    if !(required <= setup.step_budget) {
        return Err(Error::HorizonTooLong { required, budget: setup.step_budget });
    }
    let t1 = setup.t0 + horizon;
    let dt = setup.dt.min(horizon);
    let cfg = SimulationConfig::new(setup.t0, t1, dt, setup.seed, [setup.delta / 2.0, 0.0]);
    let plan = ObservationPlan { times: vec![t1], weights: vec![WeightFunction::unit()], tail_fraction: 0.5 };
    let ens = simulate_ensemble(sys, &cfg, &plan, setup.n_paths, setup.jobs)?;
    let estimate = exit_probability(&ens, setup.epsilon, &WeightFunction::unit())?;
    Ok(PracticalReport { horizon, below_eta: estimate.ci.1 < setup.eta, estimate, setup: setup.clone() })
}

/// JSON-ready record of one Monte Carlo scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub system: String,
    pub seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: (f64, f64),
    pub z0: [f64; 2],
    pub truncated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit: Option<ExitEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleRadius>,
}

impl ScenarioReport {
    pub fn new(scenario: impl Into<String>, ens: &Ensemble) -> ScenarioReport {
        ScenarioReport {
            scenario: scenario.into(),
            system: ens.descriptor.clone(),
            seed: ens.config.seed,
            n_paths: ens.n_paths(),
            dt: ens.config.dt,
            horizon: (ens.config.t0, ens.config.t1),
            z0: ens.config.z0,
            truncated: ens.n_truncated(),
            exit: None,
            decay: None,
            scaling: None,
            cycle: None,
        }
    }
}
