//! Scenario definitions, runners and report writers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use apfluid::closure::PressureClosure;
use apfluid::euler_maxwell as em;
use apfluid::euler_poisson as ep;
use apfluid::grid::{Bc1d, Grid1D};
use apfluid::lorentz;
use apfluid::stability::{self, SchemeKind};
use apfluid::aniso;

use crate::config::{format_diagnostics, parse, Config, Diagnostic};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Config(String),
    /// Exit code 2.
    Solver(String),
    /// Exit code 3.
    Invariants(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Invariants(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error:\n{m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Invariants(v) => write!(f, "invariant thresholds violated: {}", v.join(", ")),
        }
    }
}

impl From<apfluid::Error> for CliError {
    fn from(e: apfluid::Error) -> Self {
        CliError::Solver(e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct InvariantReport {
    pub name: String,
    pub threshold: f64,
    pub observed: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub kind: String,
    pub steps: usize,
    pub invariants: Vec<InvariantReport>,
    pub all_pass: bool,
    pub outputs: Vec<String>,
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

/// Parses and schema-checks a configuration; returns the diagnostics without
/// running anything.
pub fn validate_text(text: &str) -> Vec<Diagnostic> {
    let cfg = match parse(text) {
        Ok(c) => c,
        Err(d) => return vec![d],
    };
    let mut diags = Vec::new();
    let kind = cfg.str_or("scenario", "kind", "").to_string();
    match kind.as_str() {
        "euler-poisson" | "euler-maxwell" => check_fluid_1d(&cfg, &kind, &mut diags),
        "euler-lorentz" => check_lorentz(&cfg, &mut diags),
        "stability-map" => check_stability_map(&cfg, &mut diags),
        "aniso-sweep" => check_aniso_sweep(&cfg, &mut diags),
        "" => diags.push(Diagnostic { line: 0, message: "missing `scenario.kind`".into() }),
        other => diags.push(Diagnostic { line: 0, message: format!("unknown scenario kind `{other}`") }),
    }
    diags.extend(cfg.unknown_key_diagnostics());
    diags
}

fn check_positive(v: f64, what: &str, diags: &mut Vec<Diagnostic>) {
    if !(v > 0.0) || !v.is_finite() {
        diags.push(Diagnostic { line: 0, message: format!("{what} must be positive, got {v}") });
    }
}

fn check_fluid_1d(cfg: &Config, kind: &str, diags: &mut Vec<Diagnostic>) {
    let n_cells = cfg.usize_or("grid", "n_cells", 64, diags);
    if n_cells < 4 {
        diags.push(Diagnostic { line: 0, message: "grid.n_cells must be at least 4".into() });
    }
    check_positive(cfg.f64_or("grid", "h", 1.0 / n_cells as f64, diags), "grid.h", diags);
    let lambda = cfg.f64_or("params", "lambda", 1.0, diags);
    if lambda < 0.0 {
        diags.push(Diagnostic { line: 0, message: "params.lambda must be nonnegative".into() });
    }
    if cfg.get("params", "delta").is_some() {
        check_positive(cfg.f64_or("params", "delta", 0.0, diags), "params.delta", diags);
    } else {
        check_positive(cfg.f64_or("params", "cfl", 0.45, diags), "params.cfl", diags);
    }
    check_positive(cfg.f64_or("params", "temperature", 1.0, diags), "params.temperature", diags);
    let scheme = cfg.str_or("params", "scheme", "ap");
    if !matches!(scheme, "ap" | "classical") {
        diags.push(Diagnostic { line: 0, message: format!("params.scheme must be ap or classical, got `{scheme}`") });
    }
    cfg.f64_or("params", "visc_const", 1.0, diags);
    let profile = cfg.str_or("initial", "profile", "sinusoidal");
    if !matches!(profile, "sinusoidal" | "random" | "rest") {
        diags.push(Diagnostic { line: 0, message: format!("initial.profile must be sinusoidal, random or rest, got `{profile}`") });
    }
    cfg.f64_or("initial", "amplitude_n", 0.0, diags);
    cfg.f64_or("initial", "amplitude_u", 0.0, diags);
    cfg.f64_or("initial", "u0", 0.0, diags);
    cfg.usize_or("initial", "wavenumber", 1, diags);
    cfg.bool_or("initial", "project_divergence", false, diags);
    if kind == "euler-maxwell" {
        cfg.f64_or("initial", "amplitude_uy", 0.0, diags);
        cfg.f64_or("initial", "bz_mean", 0.0, diags);
        cfg.bool_or("initial", "bz_from_uy", true, diags);
    }
    if cfg.usize_or("run", "steps", 1, diags) == 0 {
        diags.push(Diagnostic { line: 0, message: "run.steps must be positive".into() });
    }
    cfg.str_or("output", "prefix", "out");
    cfg.f64_or("invariants", "gauss_max", f64::INFINITY, diags);
    cfg.f64_or("invariants", "mass_drift_max", f64::INFINITY, diags);
    cfg.f64_or("invariants", "max_dev_unit", f64::INFINITY, diags);
}

fn check_lorentz(cfg: &Config, diags: &mut Vec<Diagnostic>) {
    for key in ["nx", "ny", "nz"] {
        if cfg.usize_or("grid", key, 4, diags) < 3 {
            diags.push(Diagnostic { line: 0, message: format!("grid.{key} must be at least 3") });
        }
    }
    for key in ["hx", "hy", "hz"] {
        check_positive(cfg.f64_or("grid", key, 0.25, diags), &format!("grid.{key}"), diags);
    }
    let tau = cfg.f64_or("params", "tau", 1.0, diags);
    if tau < 0.0 {
        diags.push(Diagnostic { line: 0, message: "params.tau must be nonnegative".into() });
    }
    check_positive(cfg.f64_or("params", "delta", 0.05, diags), "params.delta", diags);
    check_positive(cfg.f64_or("params", "temperature", 1.0, diags), "params.temperature", diags);
    cfg.f64_or("params", "mm_threshold", 1e-4, diags);
    cfg.f64_or("params", "visc_const", 1.0, diags);
    let scheme = cfg.str_or("params", "scheme", "fdap2");
    if !matches!(scheme, "fdap1" | "fdap2") {
        diags.push(Diagnostic { line: 0, message: format!("params.scheme must be fdap1 or fdap2, got `{scheme}`") });
    }
    cfg.f64_or("fields", "e_par", 0.0, diags);
    for key in ["bx", "by", "bz"] {
        cfg.f64_or("fields", key, if key == "bz" { 1.0 } else { 0.0 }, diags);
    }
    let profile = cfg.str_or("initial", "profile", "force-balanced");
    if !matches!(profile, "force-balanced" | "perturbed") {
        diags.push(Diagnostic { line: 0, message: format!("initial.profile must be force-balanced or perturbed, got `{profile}`") });
    }
    cfg.f64_or("initial", "seed_density", 1.0, diags);
    cfg.f64_or("initial", "amplitude", 0.05, diags);
    if cfg.usize_or("run", "steps", 1, diags) == 0 {
        diags.push(Diagnostic { line: 0, message: "run.steps must be positive".into() });
    }
    cfg.str_or("output", "prefix", "out");
    cfg.f64_or("invariants", "drift_residual_max", f64::INFINITY, diags);
    cfg.f64_or("invariants", "mass_drift_max", f64::INFINITY, diags);
}

fn check_stability_map(cfg: &Config, diags: &mut Vec<Diagnostic>) {
    let scheme = cfg.str_or("map", "scheme", "ap");
    if !matches!(scheme, "ap" | "classical") {
        diags.push(Diagnostic { line: 0, message: format!("map.scheme must be ap or classical, got `{scheme}`") });
    }
    check_positive(cfg.f64_or("map", "h", 0.01, diags), "map.h", diags);
    if cfg.f64_or("map", "c", 1.0, diags) < 0.0 {
        diags.push(Diagnostic { line: 0, message: "map.c must be nonnegative".into() });
    }
    check_positive(cfg.f64_or("map", "temperature", 1.0, diags), "map.temperature", diags);
    check_positive(cfg.f64_or("map", "delta_min", 1e-7, diags), "map.delta_min", diags);
    check_positive(cfg.f64_or("map", "delta_max", 1e-1, diags), "map.delta_max", diags);
    check_positive(cfg.f64_or("map", "lambda_min", 1e-8, diags), "map.lambda_min", diags);
    check_positive(cfg.f64_or("map", "lambda_max", 1e-2, diags), "map.lambda_max", diags);
    for key in ["delta_points", "lambda_points"] {
        if cfg.usize_or("map", key, 10, diags) == 0 {
            diags.push(Diagnostic { line: 0, message: format!("map.{key} must be positive") });
        }
    }
    cfg.str_or("output", "prefix", "stability");
}

fn check_aniso_sweep(cfg: &Config, diags: &mut Vec<Diagnostic>) {
    if cfg.usize_or("sweep", "m", 32, diags) < 3 {
        diags.push(Diagnostic { line: 0, message: "sweep.m must be at least 3".into() });
    }
    if cfg.get("sweep", "taus").is_some() {
        if let Some(taus) = cfg.f64_list("sweep", "taus", diags) {
            if taus.iter().any(|&t| t <= 0.0) {
                diags.push(Diagnostic { line: 0, message: "sweep.taus must be positive".into() });
            }
        }
    }
    let res = cfg.usize_or("sweep", "oracle_resolution", 1 << 14, diags);
    if res < 64 {
        diags.push(Diagnostic { line: 0, message: "sweep.oracle_resolution must be at least 64".into() });
    }
    cfg.f64_or("sweep", "e_amplitude", 0.8, diags);
    cfg.f64_or("sweep", "f_amplitude", 0.5, diags);
    cfg.str_or("output", "prefix", "aniso");
}

fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Solver(format!("cannot write {}: {e}", path.display())))
}

/// Runs a scenario text with the given options; returns the summary.
pub fn run_text(text: &str, opts: &RunOptions) -> Result<Summary, CliError> {
    let diags = validate_text(text);
    if !diags.is_empty() {
        return Err(CliError::Config(format_diagnostics(&diags)));
    }
    let cfg = parse(text).expect("validated");
    fs::create_dir_all(&opts.out_dir)
        .map_err(|e| CliError::Solver(format!("cannot create output directory: {e}")))?;
    let kind = cfg.str_or("scenario", "kind", "").to_string();
    match kind.as_str() {
        "euler-poisson" => run_euler_poisson(&cfg, opts),
        "euler-maxwell" => run_euler_maxwell(&cfg, opts),
        "euler-lorentz" => run_euler_lorentz(&cfg, opts),
        "stability-map" => run_stability_map(&cfg, opts),
        "aniso-sweep" => run_aniso_sweep(&cfg, opts),
        _ => unreachable!("validated"),
    }
}

fn finish(
    kind: &str,
    steps: usize,
    invariants: Vec<InvariantReport>,
    outputs: Vec<PathBuf>,
    opts: &RunOptions,
    prefix: &str,
) -> Result<Summary, CliError> {
    let mut outputs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
    let all_pass = invariants.iter().all(|i| i.pass);
    let summary_path = opts.out_dir.join(format!("{prefix}_summary.json"));
    let summary = Summary { kind: kind.to_string(), steps, invariants, all_pass, outputs: outputs.clone() };
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    write_file(&summary_path, &json)?;
    outputs.push(summary_path.display().to_string());
    if !summary.all_pass {
        let failed: Vec<String> = summary
            .invariants
            .iter()
            .filter(|i| !i.pass)
            .map(|i| format!("{} ({:e} > {:e})", i.name, i.observed, i.threshold))
            .collect();
        return Err(CliError::Invariants(failed));
    }
    Ok(Summary { outputs, ..summary })
}

fn smooth_random_profile(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    // three random long-wavelength modes, zero mean by construction
    let tau = std::f64::consts::TAU;
    let modes: Vec<(f64, f64, f64)> = (1..=3)
        .map(|m| (m as f64, rng.gen_range(0.0..tau), rng.gen_range(0.3..1.0)))
        .collect();
    (0..n)
        .map(|k| {
            let x = k as f64 / n as f64;
            amp * modes.iter().map(|(m, ph, w)| w * (tau * m * x + ph).sin()).sum::<f64>() / 3.0
        })
        .collect()
}

struct InvariantTracker {
    reports: Vec<InvariantReport>,
}

impl InvariantTracker {
    fn new() -> Self {
        InvariantTracker { reports: Vec::new() }
    }

    fn push(&mut self, name: &str, threshold: f64, observed: f64) {
        if threshold.is_finite() {
            self.reports.push(InvariantReport {
                name: name.to_string(),
                threshold,
                observed,
                pass: observed <= threshold,
            });
        }
    }
}

fn run_euler_poisson(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut dg = Vec::new();
    let n_cells = cfg.usize_or("grid", "n_cells", 64, &mut dg);
    let h = cfg.f64_or("grid", "h", 1.0 / n_cells as f64, &mut dg);
    let grid = Grid1D::new(n_cells, h, Bc1d::Periodic)?;
    let lambda = cfg.f64_or("params", "lambda", 1.0, &mut dg);
    let t = cfg.f64_or("params", "temperature", 1.0, &mut dg);
    let closure = PressureClosure::isothermal(t);
    let scheme = cfg.str_or("params", "scheme", "ap").to_string();
    let steps = cfg.usize_or("run", "steps", 100, &mut dg);
    let prefix = cfg.str_or("output", "prefix", "ep").to_string();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tau = std::f64::consts::TAU;
    let profile = cfg.str_or("initial", "profile", "sinusoidal").to_string();
    let amp_n = cfg.f64_or("initial", "amplitude_n", 0.0, &mut dg);
    let amp_u = cfg.f64_or("initial", "amplitude_u", 0.0, &mut dg);
    let u0 = cfg.f64_or("initial", "u0", 0.0, &mut dg);
    let wn = cfg.usize_or("initial", "wavenumber", 1, &mut dg) as f64;
    let project = cfg.bool_or("initial", "project_divergence", false, &mut dg);
    let (n0, u_init): (Vec<f64>, Vec<f64>) = match profile.as_str() {
        "rest" => (vec![1.0; n_cells], vec![u0; n_cells]),
        "sinusoidal" => (
            (0..n_cells).map(|k| 1.0 + amp_n * (tau * wn * grid.cell_center(k)).sin()).collect(),
            (0..n_cells).map(|k| u0 + amp_u * (tau * wn * grid.cell_center(k)).cos()).collect(),
        ),
        _ => {
            let dn = smooth_random_profile(&mut rng, n_cells, amp_n);
            let du = smooth_random_profile(&mut rng, n_cells, amp_u);
            ((0..n_cells).map(|k| 1.0 + dn[k]).collect(), (0..n_cells).map(|k| u0 + du[k]).collect())
        }
    };

    let mut params = ep::EpParams::new(lambda, 1.0, closure)?;
    params.visc_const = cfg.f64_or("params", "visc_const", 1.0, &mut dg);
    let mut state = ep::init_well_prepared(&n0, &u_init, &params, &grid, project)?;
    params.delta = match cfg.get("params", "delta") {
        Some(e) => e.value.parse::<f64>().expect("validated"),
        None => {
            let cfl = cfg.f64_or("params", "cfl", 0.45, &mut dg);
            ep::hydro_cfl_delta(&state, &grid, &closure, cfl)
        }
    };

    let mass0 = ep::total_mass(&state, &grid);
    let mut csv = String::from("step,time,mass,momentum,gauss_residual,max_dev_unit\n");
    let mut worst_gauss = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut worst_dev = 0.0f64;
    let record = |csv: &mut String, step: usize, s: &ep::EpState, p: &ep::EpParams| {
        let mass = ep::total_mass(s, &grid);
        let mom: f64 = s.q.iter().sum::<f64>() * grid.h;
        let gr = ep::gauss_residual(s, p, &grid);
        let dev = s.n.iter().map(|v| (v - 1.0).abs()).fold(0.0f64, f64::max);
        csv.push_str(&format!("{},{},{},{},{},{}\n", step, step as f64 * p.delta, mass, mom, gr, dev));
        (gr, (mass - mass0).abs(), dev)
    };
    record(&mut csv, 0, &state, &params);
    for m in 1..=steps {
        state = match scheme.as_str() {
            "classical" => ep::step_classical(&state, &params, &grid)?,
            _ => ep::step_ap(&state, &params, &grid)?,
        };
        let (gr, md, dev) = record(&mut csv, m, &state, &params);
        worst_gauss = worst_gauss.max(gr);
        worst_mass = worst_mass.max(md);
        worst_dev = worst_dev.max(dev);
    }
    let series = opts.out_dir.join(format!("{prefix}_series.csv"));
    write_file(&series, &csv)?;
    let mut fin = String::from("k,x,n,q,phi,e\n");
    for k in 0..n_cells {
        fin.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k,
            grid.cell_center(k),
            state.n[k],
            state.q[k],
            state.phi[k],
            state.e[k]
        ));
    }
    let final_path = opts.out_dir.join(format!("{prefix}_final.csv"));
    write_file(&final_path, &fin)?;

    let mut inv = InvariantTracker::new();
    inv.push("gauss_residual", cfg.f64_or("invariants", "gauss_max", f64::INFINITY, &mut dg), worst_gauss);
    inv.push("mass_drift", cfg.f64_or("invariants", "mass_drift_max", f64::INFINITY, &mut dg), worst_mass);
    inv.push("max_dev_unit", cfg.f64_or("invariants", "max_dev_unit", f64::INFINITY, &mut dg), worst_dev);
    finish("euler-poisson", steps, inv.reports, vec![series, final_path], opts, &prefix)
}

fn run_euler_maxwell(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut dg = Vec::new();
    let n_cells = cfg.usize_or("grid", "n_cells", 64, &mut dg);
    let h = cfg.f64_or("grid", "h", 1.0 / n_cells as f64, &mut dg);
    let grid = Grid1D::new(n_cells, h, Bc1d::Periodic)?;
    let lambda = cfg.f64_or("params", "lambda", 1.0, &mut dg);
    let t = cfg.f64_or("params", "temperature", 1.0, &mut dg);
    let closure = PressureClosure::isothermal(t);
    let scheme = cfg.str_or("params", "scheme", "ap").to_string();
    let steps = cfg.usize_or("run", "steps", 100, &mut dg);
    let prefix = cfg.str_or("output", "prefix", "em").to_string();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tau = std::f64::consts::TAU;
    let profile = cfg.str_or("initial", "profile", "sinusoidal").to_string();
    let amp_n = cfg.f64_or("initial", "amplitude_n", 0.0, &mut dg);
    let amp_u = cfg.f64_or("initial", "amplitude_u", 0.0, &mut dg);
    let amp_uy = cfg.f64_or("initial", "amplitude_uy", 0.0, &mut dg);
    let u0 = cfg.f64_or("initial", "u0", 0.0, &mut dg);
    let wn = cfg.usize_or("initial", "wavenumber", 1, &mut dg) as f64;
    let bz_mean = cfg.f64_or("initial", "bz_mean", 0.0, &mut dg);
    let bz_from_uy = cfg.bool_or("initial", "bz_from_uy", true, &mut dg);
    let (n0, ux, uy): (Vec<f64>, Vec<f64>, Vec<f64>) = match profile.as_str() {
        "rest" => (vec![1.0; n_cells], vec![u0; n_cells], vec![0.0; n_cells]),
        "sinusoidal" => (
            (0..n_cells).map(|k| 1.0 + amp_n * (tau * wn * grid.cell_center(k)).sin()).collect(),
            (0..n_cells).map(|k| u0 + amp_u * (tau * wn * grid.cell_center(k)).cos()).collect(),
            (0..n_cells).map(|k| amp_uy * (tau * wn * grid.cell_center(k)).sin()).collect(),
        ),
        _ => {
            let dn = smooth_random_profile(&mut rng, n_cells, amp_n);
            let du = smooth_random_profile(&mut rng, n_cells, amp_u);
            let dv = smooth_random_profile(&mut rng, n_cells, amp_uy);
            (
                (0..n_cells).map(|k| 1.0 + dn[k]).collect(),
                (0..n_cells).map(|k| u0 + du[k]).collect(),
                dv,
            )
        }
    };

    let mut params = em::EmParams::new(lambda, 1.0, closure)?;
    params.visc_const = cfg.f64_or("params", "visc_const", 1.0, &mut dg);
    let mut state = em::init_well_prepared_em(&n0, &ux, &uy, &params, &grid, bz_from_uy, bz_mean)?;
    params.delta = match cfg.get("params", "delta") {
        Some(e) => e.value.parse::<f64>().expect("validated"),
        None => {
            let cfl = cfg.f64_or("params", "cfl", 0.45, &mut dg);
            let mut speed = 0.0f64;
            for k in 0..n_cells {
                speed = speed.max((state.qx[k] / state.n[k]).abs() + closure.sound_speed(state.n[k]));
            }
            cfl * grid.h / speed.max(1e-30)
        }
    };

    let mass0: f64 = state.n.iter().sum::<f64>() * grid.h;
    let mut csv = String::from("step,time,mass,momentum_x,momentum_y,gauss_residual,max_dev_unit\n");
    let mut worst_gauss = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut worst_dev = 0.0f64;
    let record = |csv: &mut String, step: usize, s: &em::EmState, p: &em::EmParams| {
        let mass: f64 = s.n.iter().sum::<f64>() * grid.h;
        let momx: f64 = s.qx.iter().sum::<f64>() * grid.h;
        let momy: f64 = s.qy.iter().sum::<f64>() * grid.h;
        let gr = em::gauss_residual_em(s, p, &grid);
        let dev = s.n.iter().map(|v| (v - 1.0).abs()).fold(0.0f64, f64::max);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            step,
            step as f64 * p.delta,
            mass,
            momx,
            momy,
            gr,
            dev
        ));
        (gr, (mass - mass0).abs(), dev)
    };
    record(&mut csv, 0, &state, &params);
    for m in 1..=steps {
        state = match scheme.as_str() {
            "classical" => em::step_classical_em(&state, &params, &grid)?,
            _ => em::step_ap_em(&state, &params, &grid)?,
        };
        let (gr, md, dev) = record(&mut csv, m, &state, &params);
        worst_gauss = worst_gauss.max(gr);
        worst_mass = worst_mass.max(md);
        worst_dev = worst_dev.max(dev);
    }
    let series = opts.out_dir.join(format!("{prefix}_series.csv"));
    write_file(&series, &csv)?;
    let mut fin = String::from("k,x,n,qx,qy,ex,ey,bz\n");
    for k in 0..n_cells {
        fin.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            k,
            grid.cell_center(k),
            state.n[k],
            state.qx[k],
            state.qy[k],
            state.ex[k],
            state.ey[k],
            state.bz[k]
        ));
    }
    let final_path = opts.out_dir.join(format!("{prefix}_final.csv"));
    write_file(&final_path, &fin)?;

    let mut inv = InvariantTracker::new();
    inv.push("gauss_residual", cfg.f64_or("invariants", "gauss_max", f64::INFINITY, &mut dg), worst_gauss);
    inv.push("mass_drift", cfg.f64_or("invariants", "mass_drift_max", f64::INFINITY, &mut dg), worst_mass);
    inv.push("max_dev_unit", cfg.f64_or("invariants", "max_dev_unit", f64::INFINITY, &mut dg), worst_dev);
    finish("euler-maxwell", steps, inv.reports, vec![series, final_path], opts, &prefix)
}

fn run_euler_lorentz(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut dg = Vec::new();
    let dims = [
        cfg.usize_or("grid", "nx", 4, &mut dg),
        cfg.usize_or("grid", "ny", 4, &mut dg),
        cfg.usize_or("grid", "nz", 4, &mut dg),
    ];
    let h = [
        cfg.f64_or("grid", "hx", 0.25, &mut dg),
        cfg.f64_or("grid", "hy", 0.25, &mut dg),
        cfg.f64_or("grid", "hz", 0.25, &mut dg),
    ];
    let grid = lorentz::lorentz_grid(dims, h)?;
    let tau = cfg.f64_or("params", "tau", 1.0, &mut dg);
    let delta = cfg.f64_or("params", "delta", 0.05, &mut dg);
    let t = cfg.f64_or("params", "temperature", 1.0, &mut dg);
    let mut params = lorentz::LorentzParams::new(tau, delta, PressureClosure::isothermal(t))?;
    params.micromacro_tau_threshold = cfg.f64_or("params", "mm_threshold", 1e-4, &mut dg);
    params.visc_const = cfg.f64_or("params", "visc_const", 1.0, &mut dg);
    let scheme = cfg.str_or("params", "scheme", "fdap2").to_string();
    let steps = cfg.usize_or("run", "steps", 10, &mut dg);
    let prefix = cfg.str_or("output", "prefix", "lorentz").to_string();

    let b = [
        cfg.f64_or("fields", "bx", 0.0, &mut dg),
        cfg.f64_or("fields", "by", 0.0, &mut dg),
        cfg.f64_or("fields", "bz", 1.0, &mut dg),
    ];
    let bnorm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if !(bnorm > 0.0) {
        return Err(CliError::Config("fields.b must not vanish".into()));
    }
    let e_par = cfg.f64_or("fields", "e_par", 0.0, &mut dg);
    let e0 = [e_par * b[0] / bnorm, e_par * b[1] / bnorm, e_par * b[2] / bnorm];
    let fields = lorentz::EmGivenFields::sample(&grid, |_| (e0, b))?;

    let profile = cfg.str_or("initial", "profile", "force-balanced").to_string();
    let seed_density = cfg.f64_or("initial", "seed_density", 1.0, &mut dg);
    let amp = cfg.f64_or("initial", "amplitude", 0.05, &mut dg);
    let mut state = lorentz::init_force_balanced(&grid, &fields, &params, seed_density)?;
    if profile == "perturbed" {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for v in state.n.iter_mut() {
            *v *= 1.0 + amp * (rng.gen::<f64>() - 0.5);
        }
    }

    let mass0 = lorentz::total_mass(&state, &grid);
    let mut csv = String::from("step,time,mass,momentum_x,momentum_y,momentum_z,drift_residual,max_dev_unit\n");
    let mut worst_res = 0.0f64;
    let mut worst_mass = 0.0f64;
    let vol = grid.h[0] * grid.h[1] * grid.h[2];
    let record = |csv: &mut String, step: usize, s: &lorentz::LorentzState| {
        let mass = lorentz::total_mass(s, &grid);
        let mut mom = [0.0f64; 3];
        for q in &s.q {
            for i in 0..3 {
                mom[i] += q[i] * vol;
            }
        }
        let res = lorentz::drift_balance_residual(s, &fields, &grid, &params.closure);
        let dev = s.n.iter().map(|v| (v - 1.0).abs()).fold(0.0f64, f64::max);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            step,
            step as f64 * delta,
            mass,
            mom[0],
            mom[1],
            mom[2],
            res,
            dev
        ));
        (res, (mass - mass0).abs())
    };
    record(&mut csv, 0, &state);
    for m in 1..=steps {
        state = match scheme.as_str() {
            "fdap1" => lorentz::step_fdap1(&state, &fields, &params, &grid)?,
            _ => lorentz::step_fdap2(&state, &fields, &params, &grid)?,
        };
        let (res, md) = record(&mut csv, m, &state);
        worst_res = worst_res.max(res);
        worst_mass = worst_mass.max(md);
    }
    let series = opts.out_dir.join(format!("{prefix}_series.csv"));
    write_file(&series, &csv)?;
    let mut fin = String::from("i,j,k,n,qx,qy,qz\n");
    for k in grid.iter_box() {
        let c = grid.flat(k);
        fin.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            k[0], k[1], k[2], state.n[c], state.q[c][0], state.q[c][1], state.q[c][2]
        ));
    }
    let final_path = opts.out_dir.join(format!("{prefix}_final.csv"));
    write_file(&final_path, &fin)?;

    let mut inv = InvariantTracker::new();
    inv.push("drift_residual", cfg.f64_or("invariants", "drift_residual_max", f64::INFINITY, &mut dg), worst_res);
    inv.push("mass_drift", cfg.f64_or("invariants", "mass_drift_max", f64::INFINITY, &mut dg), worst_mass);
    finish("euler-lorentz", steps, inv.reports, vec![series, final_path], opts, &prefix)
}

fn run_stability_map(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut dg = Vec::new();
    let scheme = match cfg.str_or("map", "scheme", "ap") {
        "classical" => SchemeKind::Classical,
        _ => SchemeKind::Ap,
    };
    let h = cfg.f64_or("map", "h", 0.01, &mut dg);
    let c = cfg.f64_or("map", "c", 1.0, &mut dg);
    let t = cfg.f64_or("map", "temperature", 1.0, &mut dg);
    let deltas = geometric_grid(
        cfg.f64_or("map", "delta_min", 1e-7, &mut dg),
        cfg.f64_or("map", "delta_max", 1e-1, &mut dg),
        cfg.usize_or("map", "delta_points", 25, &mut dg),
    );
    let lambdas = geometric_grid(
        cfg.f64_or("map", "lambda_min", 1e-8, &mut dg),
        cfg.f64_or("map", "lambda_max", 1e-2, &mut dg),
        cfg.usize_or("map", "lambda_points", 7, &mut dg),
    );
    let prefix = cfg.str_or("output", "prefix", "stability").to_string();

    // sweep one lambda row per work item, ordered output
    let rows: Vec<Vec<stability::MapPoint>> = parallel_map(opts.threads, &lambdas, |&lam| {
        stability::stability_map(scheme, &deltas, &[lam], h, c, t)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let points: Vec<stability::MapPoint> = rows.into_iter().flatten().collect();
    let csv = stability::map_to_csv(&points);
    let path = opts.out_dir.join(format!("{prefix}_map.csv"));
    write_file(&path, &csv)?;
    finish("stability-map", points.len(), Vec::new(), vec![path], opts, &prefix)
}

fn run_aniso_sweep(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let mut dg = Vec::new();
    let m = cfg.usize_or("sweep", "m", 32, &mut dg);
    let taus = cfg
        .f64_list("sweep", "taus", &mut dg)
        .unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
    let resolution = cfg.usize_or("sweep", "oracle_resolution", 1 << 14, &mut dg);
    let e_amp = cfg.f64_or("sweep", "e_amplitude", 0.8, &mut dg);
    let f_amp = cfg.f64_or("sweep", "f_amplitude", 0.5, &mut dg);
    let prefix = cfg.str_or("output", "prefix", "aniso").to_string();

    let bump = |s: f64, c: f64, w: f64| -> f64 {
        let t = (s - c) / w;
        if t.abs() < 1.0 {
            std::f64::consts::E * (-1.0 / (1.0 - t * t)).exp()
        } else {
            0.0
        }
    };
    let efun = move |s: f64| e_amp * bump(s, 0.45, 0.25);
    let ffun = move |s: f64| 1.0 + f_amp * bump(s, 0.6, 0.3);
    let oracle = aniso::limit_oracle_1d(efun, ffun, 0.0, 0.0, resolution)?;

    let n = 2 * m + 1;
    let h = 1.0 / (2 * m) as f64;
    let problem = |tau: f64| aniso::AnisoProblem1D {
        m,
        h,
        tau,
        e: (0..n).map(|k| efun(k as f64 * h)).collect(),
        f: (0..n).map(|k| ffun(k as f64 * h)).collect(),
        g_minus: 0.0,
        g_plus: 0.0,
    };
    struct Row {
        tau: f64,
        solver: &'static str,
        cond: f64,
        err: f64,
    }
    let rows: Vec<Vec<Row>> = parallel_map(opts.threads, &taus, |&tau| -> Result<Vec<Row>, apfluid::Error> {
        let p = problem(tau);
        let (nv, cond_naive) = aniso::solve_naive_1d(&p)?;
        let mm = aniso::solve_micromacro_1d(&p)?;
        let scale = oracle.u0.abs().max(1e-300);
        let err_of = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(k, &x)| (x - oracle.sample(k as f64 * h)).abs())
                .fold(0.0f64, f64::max)
                / scale
        };
        Ok(vec![
            Row { tau, solver: "naive", cond: cond_naive, err: err_of(&nv) },
            Row { tau, solver: "micromacro", cond: mm.condition_estimate, err: err_of(&mm.n) },
        ])
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut csv = String::from("tau,solver,condition_estimate,max_error_vs_oracle\n");
    for row in rows.into_iter().flatten() {
        csv.push_str(&format!("{},{},{},{}\n", row.tau, row.solver, row.cond, row.err));
    }
    let path = opts.out_dir.join(format!("{prefix}_sweep.csv"));
    write_file(&path, &csv)?;
    finish("aniso-sweep", taus.len(), Vec::new(), vec![path], opts, &prefix)
}

/// Maps work items across up to `threads` scoped threads, preserving input
/// order in the output.
fn parallel_map<T: Sync, R: Send>(threads: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (slot_chunk, item_chunk) in out.chunks_mut(chunk).zip(items.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, item) in slot_chunk.iter_mut().zip(item_chunk) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("filled")).collect()
}
