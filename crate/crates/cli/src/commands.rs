//! Subcommand definitions and their execution.

use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use spinlab::curvature::{
    expansion_orders, gauge_u, riemann_at, CurvatureError, FlatChart, MetricChart, PolyChart, Stereographic,
    SyntheticNormal, WithStep, DEFAULT_OUTER_STEP, DEFAULT_STEP,
};
use spinlab::eigensolve::{lambda1_plus, spectral_report, EigenConfig, EigenError, SpectralReport};
use spinlab::flatmodel::{ConformalFactor, FlatError, SpinStructure, TorusDomain};
use spinlab::operators::{ConformalDirac, DiracFlat};
use spinlab::testspinor::{
    check_identities, check_partials_fd, cutoff_spinor_field, j_flat, j_prime, j_prime_radial, kappa, sphere_constant,
    sphere_integral, SpinorError,
};

use crate::config::Layered;
use crate::parse::{parse_factor, parse_list, parse_spin};

pub const WORKERS_ENV: &str = "SPINLAB_WORKERS";
pub const IDENTITY_THRESHOLD: f64 = 1e-10;
pub const CSV_COLUMNS: [&str; 12] = [
    "eps",
    "alpha",
    "grid",
    "spin",
    "lambda1",
    "mu1",
    "vol",
    "lam1sq_vol",
    "mu1_vol",
    "ratio",
    "lam_residual",
    "mu_residual",
];

#[derive(Debug, Parser)]
#[command(name = "spinlab", version, about = "Dirac and Laplace spectra of conformal metrics, test spinors, curvature expansions")]
pub struct Cli {
    /// Run file with `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps (also SPINLAB_WORKERS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pointwise identities of the bubble spinor.
    Identities(IdentitiesArgs),
    /// λ₁⁺ and μ₁ of one conformal metric on the torus.
    Spectrum(SpectrumArgs),
    /// CSV of spectral invariants over a list of ε.
    Sweep(SweepArgs),
    /// J′ on the cut-off test spinor (n = 2) or J on flat ℝⁿ.
    Functional(FunctionalArgs),
    /// Curvature, Taylor orders and conformal gauge of a metric chart.
    Expansion(ExpansionArgs),
    /// ∫₀^∞ 2ⁿ r^{n−1}/(1+r²)ⁿ dr against the sphere volume.
    Integral(IntegralArgs),
}

#[derive(Debug, Args)]
pub struct IdentitiesArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Twists `δ₁,δ₂`, each 0 or 0.5.
    #[arg(long, allow_hyphen_values = true)]
    pub spin: Option<String>,
    /// `const:c`, `sphere`, or `family:alpha,eps`.
    #[arg(long)]
    pub factor: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    /// Pairs of A² requested.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated ε values.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub spin: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct FunctionalArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Cutoff radius δ.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
    /// Also evaluate J′ on an N×N grid and compare with λ₁⁺.
    #[arg(long)]
    pub grid: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ExpansionArgs {
    /// `sphere:n`, `generic:n`, `flat:n`, or `stereo`.
    #[arg(long)]
    pub chart: Option<String>,
    /// Polynomial chart file; overrides `--chart`.
    #[arg(long)]
    pub chart_file: Option<PathBuf>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub outer_step: Option<f64>,
    /// Skip the conformal gauge.
    #[arg(long)]
    pub no_gauge: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IntegralArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Also report κ_δ for this cutoff.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Validation(String),
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Convergence(_) => 2,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Convergence(m) => m,
        }
    }
}

fn invalid(m: impl std::fmt::Display) -> CliError {
    CliError::Validation(m.to_string())
}

impl From<FlatError> for CliError {
    fn from(e: FlatError) -> Self {
        invalid(e)
    }
}

impl From<EigenError> for CliError {
    fn from(e: EigenError) -> Self {
        match e {
            EigenError::NotConverged { .. } | EigenError::SignAmbiguous { .. } | EigenError::NoPositive(_) => {
                CliError::Convergence(e.to_string())
            }
            _ => invalid(e),
        }
    }
}

impl From<SpinorError> for CliError {
    fn from(e: SpinorError) -> Self {
        invalid(e)
    }
}

impl From<CurvatureError> for CliError {
    fn from(e: CurvatureError) -> Self {
        invalid(e)
    }
}

/// Rendered command output and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub text: String,
    pub exit: i32,
}

impl Output {
    fn json(v: Value, exit: i32) -> Self {
        let mut text = serde_json::to_string_pretty(&v).expect("reports serialize");
        text.push('\n');
        Output { text, exit }
    }
}

const GLOBAL_KEYS: [&str; 2] = ["out", "workers"];

fn allowed(keys: &[&'static str]) -> Vec<&'static str> {
    keys.iter().chain(GLOBAL_KEYS.iter()).copied().collect()
}

/// Worker count: flag, then environment, then run file, then all cores.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>, cfg: &Layered) -> Result<usize, CliError> {
    let from_env = match env {
        Some(v) => Some(v.trim().parse::<usize>().map_err(|_| invalid(format!("{WORKERS_ENV}: bad value `{v}`")))?),
        None => None,
    };
    let w = match flag.or(from_env) {
        Some(w) => w,
        None => cfg
            .get::<usize>("workers", None)
            .map_err(invalid)?
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    };
    if w == 0 {
        return Err(invalid("worker count must be positive"));
    }
    Ok(w)
}

fn solver_config(s: &SolverArgs, cfg: &Layered, default_tol: f64) -> Result<EigenConfig, CliError> {
    let base = EigenConfig::default();
    let out = EigenConfig {
        tol: cfg.get_or("tol", s.tol, default_tol).map_err(invalid)?,
        max_iter: cfg.get_or("max_iter", s.max_iter, base.max_iter).map_err(invalid)?,
        seed: cfg.get_or("seed", s.seed, base.seed).map_err(invalid)?,
        ..base
    };
    out.validate()?;
    Ok(out)
}

const SOLVER_KEYS: [&str; 3] = ["tol", "max_iter", "seed"];

fn with_solver(keys: &[&'static str]) -> Vec<&'static str> {
    keys.iter().chain(SOLVER_KEYS.iter()).copied().collect()
}

pub fn run(cli: &Cli, cfg: &Layered, workers: usize) -> Result<Output, CliError> {
    match &cli.command {
        Command::Identities(a) => identities(a, cfg),
        Command::Spectrum(a) => spectrum(a, cfg),
        Command::Sweep(a) => sweep(a, cfg, workers),
        Command::Functional(a) => functional(a, cfg),
        Command::Expansion(a) => expansion(a, cfg),
        Command::Integral(a) => integral(a, cfg),
    }
}

/// Keys a run file may set for the given subcommand.
pub fn allowed_keys(cmd: &Command) -> Vec<&'static str> {
    match cmd {
        Command::Identities(_) => allowed(&["n", "samples", "seed"]),
        Command::Spectrum(_) => allowed(&with_solver(&["spin", "factor", "grid", "period", "k"])),
        Command::Sweep(_) => allowed(&with_solver(&["alpha", "eps", "grid", "period", "spin"])),
        Command::Functional(_) => allowed(&with_solver(&["n", "eps", "delta", "alpha", "period", "grid"])),
        Command::Expansion(_) => allowed(&["chart", "chart_file", "r0", "levels", "step", "outer_step", "gauge", "seed"]),
        Command::Integral(_) => allowed(&["n", "delta"]),
    }
}

pub fn identities(a: &IdentitiesArgs, cfg: &Layered) -> Result<Output, CliError> {
    let n = cfg.get_or("n", a.n, 2).map_err(invalid)?;
    let samples = cfg.get_or("samples", a.samples, 200).map_err(invalid)?;
    let seed = cfg.get_or("seed", a.seed, 1).map_err(invalid)?;
    if n != 2 && n != 3 {
        return Err(invalid(format!("identities are implemented for n = 2, 3; got {n}")));
    }
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    let rep = check_identities(n, samples, seed)?;
    let fd_step = 1e-5;
    let fd = check_partials_fd(n, samples, seed, fd_step)?;
    let max = rep.max_stated();
    let pass = max < IDENTITY_THRESHOLD;
    let v = json!({
        "command": "identities",
        "inputs": { "n": n, "samples": samples, "seed": seed },
        "deviation": {
            "gradient": rep.gradient,
            "dirac": rep.dirac,
            "norm": rep.norm,
            "dirac_norm": rep.dirac_norm,
        },
        "max_deviation": max,
        "threshold": IDENTITY_THRESHOLD,
        "pass": pass,
        "norm_constant": rep.norm_constant,
        "norm_ratio_spread": rep.norm_ratio_spread,
        "dirac_norm_ratio_spread": rep.dirac_norm_ratio_spread,
        "finite_difference": { "step": fd_step, "max_deviation": fd },
    });
    Ok(Output::json(v, if pass { 0 } else { 1 }))
}

fn domain_from(cfg: &Layered, grid: Option<usize>, period: Option<f64>, default_grid: usize) -> Result<TorusDomain, CliError> {
    let n = cfg.get_or("grid", grid, default_grid).map_err(invalid)?;
    let l = cfg.get_or("period", period, 2.0 * PI).map_err(invalid)?;
    Ok(TorusDomain::new(l, n)?)
}

fn spin_from(cfg: &Layered, flag: Option<&str>) -> Result<SpinStructure, CliError> {
    Ok(cfg.get_with("spin", flag, parse_spin).map_err(invalid)?.unwrap_or(SpinStructure::TRIVIAL))
}

fn check_factor(f: &ConformalFactor, d: &TorusDomain) -> Result<(), CliError> {
    f.validate(d)?;
    if let ConformalFactor::Family { eps, .. } = f {
        d.check_resolution(*eps)?;
    }
    Ok(())
}

pub fn spectrum(a: &SpectrumArgs, cfg: &Layered) -> Result<Output, CliError> {
    let domain = domain_from(cfg, a.grid, a.period, 64)?;
    let spin = spin_from(cfg, a.spin.as_deref())?;
    let factor = cfg
        .get_with("factor", a.factor.as_deref(), parse_factor)
        .map_err(invalid)?
        .unwrap_or(ConformalFactor::Constant { c: 1.0 });
    check_factor(&factor, &domain)?;
    let mut solver = solver_config(&a.solver, cfg, EigenConfig::default().tol)?;
    solver.dirac_pairs = cfg.get_or("k", a.k, solver.dirac_pairs).map_err(invalid)?;
    solver.validate()?;
    let report = spectral_report(&domain, spin, &factor, &solver)?;
    let v = json!({
        "command": "spectrum",
        "inputs": {
            "grid": domain.resolution(),
            "period": domain.period(),
            "spin": spin.to_string(),
            "factor": spinlab::eigensolve::describe_factor(&factor),
            "k": solver.dirac_pairs,
            "tol": solver.tol,
            "max_iter": solver.max_iter,
            "seed": solver.seed,
        },
        "report": report,
    });
    Ok(Output::json(v, 0))
}

fn csv_row(eps: f64, alpha: f64, spin: SpinStructure, r: &SpectralReport) -> Vec<String> {
    vec![
        eps.to_string(),
        alpha.to_string(),
        r.grid.to_string(),
        spin.to_string(),
        r.lambda1_plus.to_string(),
        r.mu1.to_string(),
        r.vol.to_string(),
        r.lam1sq_vol.to_string(),
        r.mu1_vol.to_string(),
        r.ratio.to_string(),
        r.lambda1_residual.to_string(),
        r.mu1_residual.to_string(),
    ]
}

/// Default sweep tolerance; looser than single spectra.
pub const SWEEP_TOL: f64 = 1e-7;

pub fn sweep(a: &SweepArgs, cfg: &Layered, workers: usize) -> Result<Output, CliError> {
    let domain = domain_from(cfg, a.grid, a.period, 256)?;
    let spin = spin_from(cfg, a.spin.as_deref())?;
    let alpha = cfg.get_or("alpha", a.alpha, 1.0).map_err(invalid)?;
    let eps = cfg
        .get_with("eps", a.eps.as_deref(), parse_list)
        .map_err(invalid)?
        .unwrap_or_else(|| vec![0.4, 0.2, 0.1]);
    let solver = solver_config(&a.solver, cfg, SWEEP_TOL)?;
    let factors: Vec<ConformalFactor> = eps.iter().map(|&e| ConformalFactor::Family { alpha, eps: e }).collect();
    for f in &factors {
        check_factor(f, &domain)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<SpectralReport, EigenError>> =
        pool.install(|| factors.par_iter().map(|f| spectral_report(&domain, spin, f, &solver)).collect());

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    let mut first_err: Option<CliError> = None;
    let mut messages = Vec::new();
    for (e, r) in eps.iter().zip(results) {
        match r {
            Ok(rep) => w.write_record(csv_row(*e, alpha, spin, &rep)).expect("in-memory write"),
            Err(err) => {
                messages.push(format!("eps={e}: {err}"));
                first_err.get_or_insert(CliError::from(err));
            }
        }
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
    match first_err {
        None => Ok(Output { text, exit: 0 }),
        Some(err) => {
            for m in &messages {
                eprintln!("spinlab: {m}");
            }
            Ok(Output { text, exit: err.exit_code() })
        }
    }
}

pub fn functional(a: &FunctionalArgs, cfg: &Layered) -> Result<Output, CliError> {
    let n = cfg.get_or("n", a.n, 2).map_err(invalid)?;
    let delta = cfg.get_or("delta", a.delta, 0.2).map_err(invalid)?;
    match n {
        2 => {
            let eps = cfg.get_or("eps", a.eps, 0.01).map_err(invalid)?;
            let alpha = cfg.get_or("alpha", a.alpha, 1.0).map_err(invalid)?;
            let period = cfg.get_or("period", a.period, 2.0 * PI).map_err(invalid)?;
            let grid = cfg.get::<usize>("grid", a.grid).map_err(invalid)?;
            if !(alpha < period / 2.0) {
                return Err(invalid(format!("alpha {alpha} must be below half the period {}", period / 2.0)));
            }
            let k = kappa(delta)?;
            let r = j_prime_radial(eps, delta, alpha, period)?;
            let jf = j_flat(2, eps, delta)?;
            let numerator_bound = 8.0 * PI + 2.0 * k.closed_form + 0.5;
            let product_bound = 4.0 * PI + 2.0 * k.closed_form + k.closed_form.powi(2) / (4.0 * PI) + 0.3;
            let den_target = 4.0 * PI * eps;
            let squared = r.squared_times_vol.unwrap_or(f64::NAN);
            let grid_report = match grid {
                Some(g) => {
                    let solver = solver_config(&a.solver, cfg, EigenConfig::default().tol)?;
                    let domain = TorusDomain::new(period, g)?;
                    let f = ConformalFactor::Family { alpha, eps };
                    check_factor(&f, &domain)?;
                    let op = ConformalDirac::new(&domain, SpinStructure::TRIVIAL, &f).map_err(invalid)?;
                    let lam = lambda1_plus(&op, &solver)?;
                    let phi = cutoff_spinor_field(&domain, eps, delta)?;
                    let flat = DiracFlat::new(&domain, SpinStructure::TRIVIAL);
                    Some(j_prime(&phi, &f, &flat, Some(lam.lambda1_plus))?)
                }
                None => None,
            };
            let v = json!({
                "command": "functional",
                "inputs": { "n": 2, "eps": eps, "delta": delta, "alpha": alpha, "period": period, "grid": grid },
                "kappa": k,
                "j_prime": r,
                "checks": {
                    "numerator_bound": numerator_bound,
                    "numerator_ok": r.numerator <= numerator_bound,
                    "denominator_target": den_target,
                    "denominator_rel_error": (r.denominator - den_target) / den_target,
                    "squared_times_vol_bound": product_bound,
                    "squared_times_vol_ok": squared <= product_bound,
                    "eps_below_delta_sq_over_5": eps <= delta * delta / 5.0,
                },
                "j_prime_grid": grid_report,
                "j_flat": jf,
                "sphere_constant": sphere_constant(2),
            });
            Ok(Output::json(v, 0))
        }
        3 => {
            let eps = cfg.get_or("eps", a.eps, 1e-3).map_err(invalid)?;
            let jf = j_flat(3, eps, delta)?;
            let target = sphere_constant(3);
            let v = json!({
                "command": "functional",
                "inputs": { "n": 3, "eps": eps, "delta": delta },
                "j_flat": jf,
                "sphere_constant": target,
                "rel_error": (jf.value - target) / target,
            });
            Ok(Output::json(v, 0))
        }
        _ => Err(invalid(format!("functional supports n = 2, 3; got {n}"))),
    }
}

/// `sphere:n`, `generic:n`, `flat:n` or `stereo`.
pub fn parse_chart(s: &str, seed: u64) -> Result<Box<dyn MetricChart>, CliError> {
    let s = s.trim();
    if s == "stereo" {
        return Ok(Box::new(Stereographic { n: 2, normalized: true }));
    }
    let (kind, dim) = s.split_once(':').ok_or_else(|| invalid(format!("chart `{s}`: expected kind:n or stereo")))?;
    let n: usize = dim.trim().parse().map_err(|_| invalid(format!("chart `{s}`: bad dimension")))?;
    if !(2..=4).contains(&n) {
        return Err(invalid(format!("chart dimension must be 2, 3 or 4; got {n}")));
    }
    match kind.trim() {
        "sphere" => Ok(Box::new(SyntheticNormal::sphere(n))),
        "generic" => Ok(Box::new(SyntheticNormal::generic(n, seed))),
        "flat" => Ok(Box::new(FlatChart { n })),
        other => Err(invalid(format!("unknown chart kind `{other}`"))),
    }
}

pub fn expansion(a: &ExpansionArgs, cfg: &Layered) -> Result<Output, CliError> {
    let seed = cfg.get_or("seed", a.seed, 1).map_err(invalid)?;
    let r0 = cfg.get_or("r0", a.r0, 0.1).map_err(invalid)?;
    let levels = cfg.get_or("levels", a.levels, 5).map_err(invalid)?;
    let step = cfg.get_or("step", a.step, DEFAULT_STEP).map_err(invalid)?;
    let outer = cfg.get_or("outer_step", a.outer_step, DEFAULT_OUTER_STEP).map_err(invalid)?;
    let gauge = !a.no_gauge && cfg.get_or("gauge", None, true).map_err(invalid)?;
    let file = cfg.get::<PathBuf>("chart_file", a.chart_file.clone()).map_err(invalid)?;
    let (name, chart): (String, Box<dyn MetricChart>) = match file {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            (p.display().to_string(), Box::new(PolyChart::parse(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?))
        }
        None => {
            let spec = cfg.get_or("chart", a.chart.clone(), "sphere:3".to_string()).map_err(invalid)?;
            let c = parse_chart(&spec, seed)?;
            (spec, c)
        }
    };
    let chart = WithStep { chart: chart.as_ref(), h: step };
    let n = chart.dim();
    let at0 = riemann_at(&chart)?;
    let rep = expansion_orders(&chart, None, r0, levels)?;
    let g = if gauge && n >= 3 { Some(gauge_u(&chart, outer)?) } else { None };
    let v = json!({
        "command": "expansion",
        "inputs": {
            "chart": name, "r0": r0, "levels": levels, "step": step, "outer_step": outer, "gauge": gauge, "seed": seed,
        },
        "n": n,
        "origin": {
            "scal": at0.scal,
            "ricci": at0.ricci,
            "symmetry_defect": at0.riemann.symmetry_defect(),
        },
        "expansion": rep,
        "w_order": if rep.w_vanishes { Value::from("vanishes") } else { json!(rep.w_order()) },
        "gauge": g,
    });
    Ok(Output::json(v, 0))
}

pub fn integral(a: &IntegralArgs, cfg: &Layered) -> Result<Output, CliError> {
    let n = cfg.get_or("n", a.n, 3).map_err(invalid)?;
    if !(2..=32).contains(&n) {
        return Err(invalid(format!("integral supports 2 <= n <= 32; got {n}")));
    }
    let delta = cfg.get::<f64>("delta", a.delta).map_err(invalid)?;
    let s = sphere_integral(n)?;
    let k = match delta {
        Some(d) => Some(kappa(d)?),
        None => None,
    };
    let v = json!({
        "command": "integral",
        "inputs": { "n": n, "delta": delta },
        "integral": s.integral,
        "product": s.product,
        "sphere_volume": s.sphere_volume,
        "abs_error": (s.product - s.sphere_volume).abs(),
        "kappa": k,
    });
    Ok(Output::json(v, 0))
}
