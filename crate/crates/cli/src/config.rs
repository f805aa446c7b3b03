use std::path::{Path, PathBuf};

use fadestab::classifier::{WeightFunction, DEFAULT_KAPPA};
use fadestab::sde::Scheme;
use fadestab::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings read from `--config`; every key is optional and command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<String>,
    pub order: Option<usize>,
    pub n_phi: Option<usize>,
    pub kappa: Option<f64>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub z0: Option<[f64; 2]>,
    pub record_stride: Option<usize>,
    pub scheme: Option<String>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub weight: Option<String>,
    pub theta: Option<f64>,
    pub emin: Option<f64>,
    pub emax: Option<f64>,
    pub n_energies: Option<usize>,
    pub save_paths: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }
}

/// Picks the flag, then the config value, then the default.
pub fn pick<T: Clone>(flag: Option<T>, config: &Option<T>, default: T) -> T {
    flag.or_else(|| config.clone()).unwrap_or(default)
}

pub fn require_system(flag: Option<String>, config: &RunConfig) -> Result<String> {
    flag.or_else(|| config.system.clone())
        .ok_or_else(|| Error::InvalidInput("no system given (use --system or the config key 'system')".into()))
}

pub fn parse_scheme(flag: Option<String>, config: &RunConfig) -> Result<Scheme> {
    match flag.or_else(|| config.scheme.clone()) {
        Some(s) => Scheme::parse(&s),
        None => Ok(Scheme::default()),
    }
}

pub fn parse_z0(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected 'x,y', got '{s}'"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

/// `unit` or `n,q,prefactor[,extra]`.
pub fn parse_weight(s: &str) -> Result<WeightFunction> {
    if s == "unit" {
        return Ok(WeightFunction::unit());
    }
    let bad = || Error::InvalidInput(format!("weight '{s}' must be 'unit' or 'n,q,prefactor[,extra]'"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    let n: usize = parts[0].parse().map_err(|_| bad())?;
    let q: usize = parts[1].parse().map_err(|_| bad())?;
    let prefactor: f64 = parts[2].parse().map_err(|_| bad())?;
    let extra: f64 = match parts.get(3) {
        Some(v) => v.parse().map_err(|_| bad())?,
        None => 0.0,
    };
    if n == 0 || q == 0 {
        return Err(bad());
    }
    Ok(WeightFunction { n, q, prefactor, extra })
}

pub fn kappa(flag: Option<f64>, config: &RunConfig) -> f64 {
    pick(flag, &config.kappa, DEFAULT_KAPPA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"system": "builtin:ex0", "typo": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"system": "builtin:ex0", "z0": [0.4, 0]}"#).unwrap();
        assert_eq!(c.z0, Some([0.4, 0.0]));
    }

    #[test]
    fn flag_beats_config_beats_default() {
        assert_eq!(pick(Some(1), &Some(2), 3), 1);
        assert_eq!(pick(None, &Some(2), 3), 2);
        assert_eq!(pick(None, &None, 3), 3);
    }

    #[test]
    fn weights_and_points() {
        assert_eq!(parse_weight("unit").unwrap(), WeightFunction::unit());
        let w = parse_weight("2,2,0.25,0.5").unwrap();
        assert_eq!((w.n, w.q, w.prefactor, w.extra), (2, 2, 0.25, 0.5));
        assert!(parse_weight("2,2").is_err());
        assert_eq!(parse_z0("0.4, 0").unwrap(), [0.4, 0.0]);
        assert!(parse_z0("0.4").is_err());
    }
}
