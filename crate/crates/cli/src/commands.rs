use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use fadestab::averaging::{average_system, fit_exponents, CaseTag, DEFAULT_N_PHI, FIT_WINDOW};
use fadestab::classifier::{classify_all, practical_horizon, VerdictKind, WeightFunction};
use fadestab::hamiltonian::{compute_orbit, OrbitFamily, SEPARATRIX_FRACTION};
use fadestab::montecarlo::{cycle_radius, decay_fit, exit_probability, scaled_energy_level, ScenarioReport, Statistic};
use fadestab::numeric::log_grid;
use fadestab::perturbation::{estimate_noise_bound, resolve_system, NoiseGrid};
use fadestab::sde::{simulate_ensemble, simulate_path_stream, AngleLookup, ObservationPlan, SimulationConfig};
use fadestab::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, pick, RunConfig};
use crate::figures;
use crate::{AverageArgs, ClassifyArgs, Cli, Command, ExitProbArgs, FigureArgs, OrbitArgs, SimArgs, SimulateArgs};

pub const DEFAULT_SEED: u64 = 1;
const DEFAULT_OUT: &str = "fadestab-out";
const NOISE_RANGE: (f64, f64) = (1.0, 1e4);

/// Settings shared by every subcommand.
struct Context {
    config: RunConfig,
    seed: u64,
    jobs: usize,
    out: PathBuf,
    dry_run: bool,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Prints the resolved pipeline; returns true when the run should stop.
    fn dry(&self, command: &str, params: serde_json::Value) -> bool {
        if self.dry_run {
            let doc = json!({
                "command": command,
                "seed": self.seed,
                "jobs": self.jobs,
                "out": self.out,
                "parameters": params,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
        }
        self.dry_run
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let default_jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let jobs = pick(cli.jobs, &config.jobs, default_jobs);
    if jobs == 0 {
        return Err(Error::InvalidInput("--jobs must be at least 1".into()));
    }
    let ctx = Context {
        seed: pick(cli.seed, &config.seed, DEFAULT_SEED),
        jobs,
        out: pick(cli.out, &config.out, PathBuf::from(DEFAULT_OUT)),
        dry_run: cli.dry_run,
        config,
    };
    match cli.command {
        Command::Orbit(a) => orbit(&ctx, a),
        Command::Average(a) => average(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::ExitProb(a) => exit_prob(&ctx, a),
        Command::ReproduceFigure(a) => reproduce_figure(&ctx, a),
    }
}

fn orbit(ctx: &Context, a: OrbitArgs) -> Result<ExitCode> {
    let c = &ctx.config;
    let reference = config::require_system(a.system, c)?;
    let sys = resolve_system(&reference)?;
    let e0 = sys.ham.e0;
    let emin = pick(a.emin, &c.emin, 1e-3 * e0);
    let emax = pick(a.emax, &c.emax, 0.5 * e0);
    let n = pick(a.n_energies, &c.n_energies, 40);
    let n_phi = pick(a.n_phi, &c.n_phi, DEFAULT_N_PHI);
    let params = json!({"system": reference, "emin": emin, "emax": emax, "n_energies": n, "n_phi": n_phi,
        "dump_orbits": a.dump_orbits});
    if ctx.dry("orbit", params) {
        return Ok(ExitCode::SUCCESS);
    }
    let limit = SEPARATRIX_FRACTION * e0;
    if emax > limit {
        return Err(Error::SeparatrixGuard { energy: emax, limit });
    }
    if !(emin > 0.0 && emin < emax && n >= 2) {
        return Err(Error::InvalidInput(format!("need 0 < emin < emax and n_energies >= 2 (got {emin}, {emax}, {n})")));
    }
    let grid = log_grid(emin, emax, n);
    let mut csv = String::from("E,nu,period,dnu_dE\n");
    let mut worst: f64 = 0.0;
    for (i, &e) in grid.iter().enumerate() {
        let o = compute_orbit(&sys.ham, e, n_phi)?;
        let _ = writeln!(csv, "{:.16e},{:.16e},{:.16e},{:.16e}", e, o.frequency, o.period, o.dnu_de);
        worst = worst.max((o.frequency - (1.0 - e / 8.0)).abs());
        if a.dump_orbits {
            ctx.write(&format!("orbit_{i:03}.csv"), &o.to_csv())?;
        }
    }
    let path = ctx.write("frequency.csv", &csv)?;
    println!("wrote {}", path.display());
    if sys.ham.name == "pendulum" {
        println!("max |nu(E) - (1 - E/8)| on [{emin:.16e}, {emax:.16e}] = {worst:.16e}");
    }
    Ok(ExitCode::SUCCESS)
}

struct AverageSetup {
    reference: String,
    order: Option<usize>,
    n_phi: usize,
    /// Fit window; `None` means [`FIT_WINDOW`] scaled by `e0`.
    window: Option<(f64, f64)>,
}

impl AverageSetup {
    fn window_for(&self, e0: f64) -> (f64, f64) {
        self.window.unwrap_or((FIT_WINDOW.0 * e0, FIT_WINDOW.1 * e0))
    }
}

fn average_setup(ctx: &Context, a: AverageArgs) -> Result<AverageSetup> {
    let c = &ctx.config;
    Ok(AverageSetup {
        reference: config::require_system(a.system, c)?,
        order: a.order.or(c.order),
        n_phi: pick(a.n_phi, &c.n_phi, DEFAULT_N_PHI),
        window: a.window.map(|w| (w[0], w[1])),
    })
}

fn average(ctx: &Context, a: AverageArgs) -> Result<ExitCode> {
    let s = average_setup(ctx, a)?;
    let params = json!({"system": s.reference, "order": s.order, "n_phi": s.n_phi, "window": s.window});
    if ctx.dry("average", params) {
        return Ok(ExitCode::SUCCESS);
    }
    let sys = resolve_system(&s.reference)?;
    let avg = average_system(&sys, s.order, s.n_phi)?;
    let drift = &avg.drift;
    let mut csv = String::from("E");
    for k in 1..=drift.order_n {
        let _ = write!(csv, ",Lambda_{k}");
    }
    csv.push('\n');
    for (i, e) in drift.e_grid.iter().enumerate() {
        let _ = write!(csv, "{e:.16e}");
        for k in 0..drift.order_n {
            let _ = write!(csv, ",{:.16e}", drift.lambda[k][i]);
        }
        csv.push('\n');
    }
    println!("wrote {}", ctx.write("lambda_k.csv", &csv)?.display());
    let fit = fit_exponents(drift, s.window_for(sys.ham.e0))?;
    println!("wrote {}", ctx.write_json("fit.json", &fit)?.display());
    println!("case {:?}: n = {}, m = {:?}, l = {:?}", fit.case_tag, fit.n, fit.m, fit.l);
    if let Some(v) = fit.lambda_n {
        println!("lambda_n = {v:.16e}");
    }
    for (name, v) in [("lambda_nm", fit.lambda_nm), ("lambda_nl", fit.lambda_nl)] {
        if let Some(v) = v {
            println!("{name} = {v:.16e}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn classify(ctx: &Context, a: ClassifyArgs) -> Result<ExitCode> {
    let c = &ctx.config;
    let kappa = config::kappa(a.kappa, c);
    let delta = a.delta.or(c.delta);
    let epsilon = a.epsilon.or(c.epsilon);
    let t0 = pick(a.t0, &c.t0, 1.0);
    let s = average_setup(ctx, a.average)?;
    let params = json!({"system": s.reference, "order": s.order, "n_phi": s.n_phi, "window": s.window,
        "kappa": kappa, "delta": delta, "epsilon": epsilon, "t0": t0});
    if ctx.dry("classify", params) {
        return Ok(ExitCode::SUCCESS);
    }
    let sys = resolve_system(&s.reference)?;
    let noise = match estimate_noise_bound(&sys, NOISE_RANGE, NoiseGrid::default()) {
        Ok(b) => Some(b),
        Err(Error::NoBound) => None,
        Err(e) => return Err(e),
    };
    let avg = average_system(&sys, s.order, s.n_phi)?;
    let fit = fit_exponents(&avg.drift, s.window_for(sys.ham.e0))?;
    let mut verdicts = classify_all(&avg.drift, &fit, sys.q(), noise, kappa)?;
    for v in verdicts.iter_mut().filter(|v| v.kind == VerdictKind::PracticallyStable) {
        if let (Some(delta), Some(epsilon), Some(mu)) = (delta, epsilon, v.inputs.mu) {
            v.horizon = Some(practical_horizon(v.inputs.n, v.inputs.q, t0, delta, epsilon, mu)?);
        }
    }
    let doc = json!({
        "system": sys.descriptor,
        "noise_bound": noise,
        "fit": fit,
        "verdicts": verdicts,
        "labels": verdicts.iter().map(|v| v.label()).collect::<Vec<_>>(),
    });
    println!("wrote {}", ctx.write_json("verdict.json", &doc)?.display());
    println!("system {}", sys.descriptor);
    match noise {
        Some(b) => println!("noise bound: mu = {:.16e}, sigma = {:.16e}", b.mu, b.sigma),
        None => println!("noise bound: none found"),
    }
    if fit.case_tag == CaseTag::Degenerate {
        println!("averaged drift vanishes to the requested order");
    }
    for v in &verdicts {
        let theorem = v.theorem.as_deref().unwrap_or("-");
        println!("verdict: {} [{theorem}]", v.label());
        if let Some(w) = &v.weight {
            println!("  weight: n = {}, q = {}, prefactor = {:.16e}, extra = {:.16e}", w.n, w.q, w.prefactor, w.extra);
        }
        if let Some(h) = v.horizon {
            println!("  horizon: {h:.16e}");
        }
        if let Some(c) = v.cycle_energy {
            println!("  cycle energy: {c:.16e}");
        }
        if let Some(u) = v.u_star {
            println!("  u*: {u:.16e}");
        }
        for note in &v.annotations {
            println!("  note: {note}");
        }
    }
    if verdicts.iter().all(|v| v.kind == VerdictKind::Inconclusive) {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

struct SimSetup {
    reference: String,
    cfg: SimulationConfig,
    n_paths: usize,
    n_times: usize,
}

fn sim_setup(ctx: &Context, a: SimArgs) -> Result<SimSetup> {
    let c = &ctx.config;
    let reference = config::require_system(a.system, c)?;
    let z0 = a.z0.or(c.z0).ok_or_else(|| Error::InvalidInput("no initial point (use --z0 x,y)".into()))?;
    let mut cfg = SimulationConfig::new(
        pick(a.t0, &c.t0, 1.0),
        pick(a.t1, &c.t1, 1e4),
        pick(a.dt, &c.dt, 0.05),
        ctx.seed,
        z0,
    );
    cfg.scheme = config::parse_scheme(a.scheme, c)?;
    cfg.validate()?;
    Ok(SimSetup { reference, cfg, n_paths: pick(a.n_paths, &c.n_paths, 200), n_times: a.n_times.unwrap_or(201) })
}

fn write_summaries(ctx: &Context, ens: &fadestab::sde::Ensemble) -> Result<()> {
    println!("wrote {}", ctx.write("absz_summary.csv", &ens.quantile_csv(&ens.absz_quantiles(), "absz"))?.display());
    println!("wrote {}", ctx.write("energy_summary.csv", &ens.quantile_csv(&ens.energy_quantiles(), "energy"))?.display());
    if ens.n_truncated() > 0 {
        println!("{} of {} paths were truncated (blowup or non-finite state)", ens.n_truncated(), ens.n_paths());
    }
    Ok(())
}

fn simulate(ctx: &Context, a: SimulateArgs) -> Result<ExitCode> {
    let s = sim_setup(ctx, a.sim)?;
    let theta = a.theta.or(ctx.config.theta);
    let save = pick(a.save_paths, &ctx.config.save_paths, 0);
    let stride = pick(a.record_stride, &ctx.config.record_stride, 1);
    let window = a.window.map(|w| (w[0], w[1])).unwrap_or((s.cfg.t1 / 100.0, s.cfg.t1));
    let params = json!({"system": s.reference, "config": s.cfg, "n_paths": s.n_paths, "n_times": s.n_times,
        "theta": theta, "window": window, "save_paths": save, "record_stride": stride});
    if ctx.dry("simulate", params) {
        return Ok(ExitCode::SUCCESS);
    }
    let sys = resolve_system(&s.reference)?;
    let plan = ObservationPlan::log_spaced(&s.cfg, s.n_times);
    let ens = simulate_ensemble(&sys, &s.cfg, &plan, s.n_paths, ctx.jobs)?;
    write_summaries(ctx, &ens)?;

    let mut report = ScenarioReport::new("simulate", &ens);
    if window.0 >= s.cfg.t0 && window.1 <= s.cfg.t1 {
        report.decay = Some(decay_fit(&ens, Statistic::MedianAbsZ, window)?);
        if let Some(theta) = theta {
            report.scaling = Some(scaled_energy_level(&ens, theta, window)?);
        }
    }
    if s.cfg.t1 >= 1e3 {
        report.cycle = cycle_radius(&ens).ok();
    }
    if let Some(d) = &report.decay {
        println!("median |z| slope on [{:.16e}, {:.16e}]: {:.16e}", d.window.0, d.window.1, d.exponent);
    }
    if let Some(l) = &report.scaling {
        println!("median E*t^{:.16e}: {:.16e}", l.theta, l.level);
    }
    if let Some(r) = &report.cycle {
        println!("tail mean |z|: {:.16e} +- {:.16e}", r.mean, r.standard_error);
    }
    println!("wrote {}", ctx.write_json("report.json", &report)?.display());

    if save > 0 {
        let mut cfg = s.cfg.clone();
        cfg.record_stride = stride.max(1);
        let lookup = AngleLookup::new(&OrbitFamily::new(sys.ham.clone(), 128), 64).ok();
        for i in 0..save.min(s.n_paths) as u64 {
            let mut path = simulate_path_stream(&sys, &cfg, i)?;
            if let Some(l) = &lookup {
                path.attach_angles(l);
            }
            let header = format!("{} stream={i}", ens.header());
            ctx.write(&format!("path_{i:04}.csv"), &path.to_csv(&header))?;
        }
        println!("wrote {} path files", save.min(s.n_paths));
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_prob(ctx: &Context, a: ExitProbArgs) -> Result<ExitCode> {
    let epsilon = a
        .epsilon
        .or(ctx.config.epsilon)
        .ok_or_else(|| Error::InvalidInput("--epsilon is required".into()))?;
    let weight: WeightFunction = match a.weight.or_else(|| ctx.config.weight.clone()) {
        Some(w) => config::parse_weight(&w)?,
        None => WeightFunction::unit(),
    };
    let s = sim_setup(ctx, a.sim)?;
    let params = json!({"system": s.reference, "config": s.cfg, "n_paths": s.n_paths, "n_times": s.n_times,
        "epsilon": epsilon, "weight": weight});
    if ctx.dry("exit-prob", params) {
        return Ok(ExitCode::SUCCESS);
    }
    let sys = resolve_system(&s.reference)?;
    let mut plan = ObservationPlan::log_spaced(&s.cfg, s.n_times);
    if !plan.weights.contains(&weight) {
        plan.weights.push(weight);
    }
    let ens = simulate_ensemble(&sys, &s.cfg, &plan, s.n_paths, ctx.jobs)?;
    write_summaries(ctx, &ens)?;
    let est = exit_probability(&ens, epsilon, &weight)?;
    let mut report = ScenarioReport::new("exit-prob", &ens);
    report.exit = Some(est.clone());
    println!(
        "exit probability: {:.16e} (95% CI [{:.16e}, {:.16e}], {} of {} paths)",
        est.probability, est.ci.0, est.ci.1, est.exceedances, est.n_paths
    );
    println!("wrote {}", ctx.write_json("exit.json", &report)?.display());
    Ok(ExitCode::SUCCESS)
}

fn reproduce_figure(ctx: &Context, a: FigureArgs) -> Result<ExitCode> {
    let manifest = figures::manifest()?;
    let figure = figures::find(&manifest, a.index)?.clone();
    let mut defaults = manifest.defaults.clone();
    defaults.n_paths = a.n_paths.unwrap_or(defaults.n_paths);
    defaults.t1 = a.t1.unwrap_or(defaults.t1);
    defaults.dt = a.dt.unwrap_or(defaults.dt);
    let panels: Vec<&figures::Panel> = match &a.panel {
        Some(p) => {
            let hit: Vec<_> = figure.panels.iter().filter(|x| &x.panel == p).collect();
            if hit.is_empty() {
                return Err(Error::InvalidInput(format!("figure {} has no panel '{p}'", a.index)));
            }
            hit
        }
        None => figure.panels.iter().collect(),
    };
    let params = json!({"figure": figure.index, "panels": panels, "defaults": defaults,
        "manifest_version": manifest.version});
    if ctx.dry("reproduce-figure", params) {
        return Ok(ExitCode::SUCCESS);
    }
    for panel in panels {
        let csv = figures::render_panel(&defaults, &figure, panel, ctx.seed, ctx.jobs)?;
        let name = format!("fig{}{}.csv", figure.index, panel.panel);
        println!("wrote {}", ctx.write(&name, &csv)?.display());
    }
    Ok(ExitCode::SUCCESS)
}
