use std::fmt::Write as _;

use fadestab::numeric::log_grid;
use fadestab::perturbation::resolve_system;
use fadestab::sde::{simulate_ensemble, ObservationPlan, Scheme, SimulationConfig};
use fadestab::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pinned figure scenarios, versioned with the repository.
pub const MANIFEST: &str = include_str!("../figures.json");

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub defaults: Defaults,
    pub figures: Vec<Figure>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub n_times: usize,
    pub scheme: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Figure {
    pub index: u32,
    pub title: String,
    /// `absz` or `energy`.
    pub statistic: String,
    pub panels: Vec<Panel>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Panel {
    pub panel: String,
    pub curves: Vec<Curve>,
    #[serde(default)]
    pub reference: Option<Reference>,
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Curve {
    pub label: String,
    pub system: String,
    pub z0: [f64; 2],
    #[serde(default)]
    pub t1: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    /// `power` (`coefficient·t^exponent`) or `constant`.
    pub kind: String,
    pub coefficient: f64,
    pub exponent: f64,
    pub label: String,
}

impl Reference {
    pub fn eval(&self, t: f64) -> f64 {
        match self.kind.as_str() {
            "constant" => self.coefficient,
            _ => self.coefficient * t.powf(self.exponent),
        }
    }
}

pub fn manifest() -> Result<Manifest> {
    serde_json::from_str(MANIFEST).map_err(|e| Error::InvalidInput(format!("figure manifest: {e}")))
}

pub fn find(manifest: &Manifest, index: u32) -> Result<&Figure> {
    manifest.figures.iter().find(|f| f.index == index).ok_or_else(|| {
        let known: Vec<String> = manifest.figures.iter().map(|f| f.index.to_string()).collect();
        Error::InvalidInput(format!(
            "figure {index} has no sample-path scenario in the manifest (available: {})",
            known.join(", ")
        ))
    })
}

/// Runs every curve of a panel and renders the panel CSV: one column per
/// sample path, the per-time median of each curve and the reference.
pub fn render_panel(
    defaults: &Defaults,
    figure: &Figure,
    panel: &Panel,
    seed: u64,
    jobs: usize,
) -> Result<String> {
    let scheme = Scheme::parse(&defaults.scheme)?;
    let horizon = |c: &Curve| c.t1.map_or(defaults.t1, |t| t.min(defaults.t1));
    let t_end = panel.curves.iter().map(horizon).fold(defaults.t0, f64::max);
    let times = log_grid(defaults.t0, t_end, defaults.n_times);
    let energy = figure.statistic == "energy";
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for (ci, curve) in panel.curves.iter().enumerate() {
        let sys = resolve_system(&curve.system)?;
        let t1 = horizon(curve);
        let mut cfg = SimulationConfig::new(defaults.t0, t1, defaults.dt, seed.wrapping_add(ci as u64), curve.z0);
        cfg.scheme = scheme;
        let own: Vec<f64> = times.iter().copied().filter(|&t| t <= t1 * (1.0 + 1e-12)).collect();
        let plan = ObservationPlan { times: own, weights: vec![], tail_fraction: 0.25 };
        let ens = simulate_ensemble(&sys, &cfg, &plan, defaults.n_paths, jobs)?;
        let pad = |mut v: Vec<f64>| {
            v.resize(times.len(), f64::NAN);
            v
        };
        for p in &ens.paths {
            let vals = if energy { p.energy.clone() } else { p.absz.clone() };
            columns.push((format!("{}_p{}", curve.label, p.index), pad(vals)));
        }
        let rows = if energy { ens.energy_quantiles() } else { ens.absz_quantiles() };
        columns.push((format!("{}_median", curve.label), pad(rows.iter().map(|r| r.q50).collect())));
    }
    if let Some(r) = &panel.reference {
        columns.push((format!("reference[{}]", r.label), times.iter().map(|&t| r.eval(t)).collect()));
    }
    let mut s = format!(
        "# figure={} panel={} statistic={} seed={} dt={} n_paths={} scheme={}\n",
        figure.index, panel.panel, figure.statistic, seed, defaults.dt, defaults.n_paths, defaults.scheme
    );
    for a in &panel.assumptions {
        let _ = writeln!(s, "# assumption: {a}");
    }
    s.push('t');
    for (name, _) in &columns {
        let _ = write!(s, ",{}", name.replace(',', ";"));
    }
    s.push('\n');
    for (i, t) in times.iter().enumerate() {
        let _ = write!(s, "{t:.16e}");
        for (_, col) in &columns {
            let _ = write!(s, ",{:.16e}", col[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parses_and_resolves() {
        let m = manifest().unwrap();
        assert_eq!(m.version, 1);
        for f in &m.figures {
            for p in &f.panels {
                for c in &p.curves {
                    resolve_system(&c.system).unwrap();
                }
            }
        }
        assert!(find(&m, 7).is_ok());
        assert!(find(&m, 4).is_err());
        let seven = find(&m, 7).unwrap();
        let r = seven.panels[0].reference.as_ref().unwrap();
        assert!((r.eval(1e4) - 3f64.sqrt()).abs() < 1e-15);
    }
}
