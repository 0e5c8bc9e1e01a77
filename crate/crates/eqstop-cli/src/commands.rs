//! Command implementations. Every artifact is a pure function of the
//! configuration, so reruns are byte-identical; floating-point columns in
//! CSV output carry 12 significant digits with a '.' decimal point.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eqstop::bessel::BesselProblem;
use eqstop::hitting::{eta, k, EtaContext};
use eqstop::montecarlo::estimate_j;
use eqstop::policy::smoking::{smoking_iterate, SmokingTrace};
use eqstop::policy::{
    classify_grid, iterate, theta_step, DiffusionModel, IterationTrace, Payoff, ThresholdPolicy,
};

use crate::config::{OutputFormat, ProblemChoice, RunConfig};
use crate::error::CliError;

fn fmt_f(v: f64) -> String {
    format!("{v:.11e}")
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, content)?;
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Sibling artifact path: `runs/trace.json` + `boundaries.csv` gives
/// `runs/trace.boundaries.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Serialize)]
struct ConstantsReport {
    beta: f64,
    /// Largest fixed-point threshold, the root of k(a) = 1.
    a_star: f64,
    /// The classical rule's level, 1/sqrt(beta).
    naive_threshold: f64,
    /// Where one improvement step cuts the naive rule.
    x_star_of_naive: f64,
    /// Boundary slope of the naive rule's value; > 1 diagnoses the cut.
    k_at_naive: f64,
    /// Deferral crossover of the procrastination example.
    s_star: f64,
    /// Tolerances the root solves were run at.
    x_tol: f64,
    f_tol: f64,
}

pub fn cmd_constants(cfg: &RunConfig) -> Result<(), CliError> {
    let problem = BesselProblem::new(cfg.beta)?;
    let ctx = EtaContext::new(cfg.beta)?;
    let naive = problem.naive_threshold();
    let report = ConstantsReport {
        beta: cfg.beta,
        a_star: problem.a_star()?,
        naive_threshold: naive,
        x_star_of_naive: problem.x_star(naive)?,
        k_at_naive: k(&ctx, naive)?,
        s_star: eqstop::policy::smoking::s_star()?,
        x_tol: problem.roots.x_tol,
        f_tol: problem.roots.f_tol,
    };
    let content = match cfg.format {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => {
            let mut s = String::from("name,value\n");
            let _ = writeln!(s, "beta,{}", fmt_f(report.beta));
            let _ = writeln!(s, "a_star,{}", fmt_f(report.a_star));
            let _ = writeln!(s, "naive_threshold,{}", fmt_f(report.naive_threshold));
            let _ = writeln!(s, "x_star_of_naive,{}", fmt_f(report.x_star_of_naive));
            let _ = writeln!(s, "k_at_naive,{}", fmt_f(report.k_at_naive));
            let _ = writeln!(s, "s_star,{}", fmt_f(report.s_star));
            s
        }
    };
    emit(cfg.out.as_deref(), &content)
}

fn boundaries_csv(trace: &IterationTrace) -> String {
    // One row per distinct consecutive boundary; the converged repeat of
    // the final policy collapses into its first appearance.
    let mut rows: Vec<String> = trace
        .policies
        .iter()
        .map(|p| p.lower_boundary().map_or_else(|| "inf".into(), fmt_f))
        .collect();
    rows.dedup();
    let mut s = String::from("step,boundary\n");
    for (i, row) in rows.iter().enumerate() {
        let _ = writeln!(s, "{i},{row}");
    }
    s
}

fn smoking_csv(trace: &SmokingTrace) -> String {
    let mut s = String::from("t,naive,theta,theta_squared\n");
    for row in &trace.rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f(row.t),
            fmt_f(row.naive),
            fmt_f(row.theta),
            fmt_f(row.theta_squared)
        );
    }
    s
}

pub fn cmd_iterate(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.problem {
        ProblemChoice::Bessel => {
            let policy0 = ThresholdPolicy::threshold(cfg.start())?;
            let trace = iterate(
                &DiffusionModel::StandardBrownian,
                &cfg.discount_fn()?,
                &Payoff::AbsValue,
                &policy0,
                &cfg.grid(),
                &cfg.mc_spec(),
                cfg.max_steps,
            )?;
            let json = to_json(&trace)?;
            let csv = boundaries_csv(&trace);
            match (&cfg.out, cfg.format) {
                (Some(path), OutputFormat::Json) => {
                    emit(Some(path), &json)?;
                    emit(Some(&sibling(path, "boundaries.csv")), &csv)
                }
                (Some(path), OutputFormat::Csv) => {
                    emit(Some(path), &csv)?;
                    emit(Some(&sibling(path, "trace.json")), &json)
                }
                (None, OutputFormat::Json) => emit(None, &json),
                (None, OutputFormat::Csv) => emit(None, &csv),
            }
        }
        ProblemChoice::Smoking => cmd_smoking(cfg),
    }
}

pub fn cmd_smoking(cfg: &RunConfig) -> Result<(), CliError> {
    let trace = smoking_iterate(cfg.t_max, cfg.smoking_grid)?;
    let json = to_json(&trace)?;
    let csv = smoking_csv(&trace);
    match (&cfg.out, cfg.format) {
        (Some(path), OutputFormat::Json) => {
            emit(Some(path), &json)?;
            emit(Some(&sibling(path, "rules.csv")), &csv)
        }
        (Some(path), OutputFormat::Csv) => {
            emit(Some(path), &csv)?;
            emit(Some(&sibling(path, "trace.json")), &json)
        }
        (None, OutputFormat::Json) => emit(None, &json),
        (None, OutputFormat::Csv) => emit(None, &csv),
    }
}

#[derive(Debug, Serialize)]
struct BoundaryRow {
    s: f64,
    boundary: f64,
}

pub fn cmd_boundary(cfg: &RunConfig) -> Result<(), CliError> {
    if !(cfg.s_max >= cfg.t) {
        return Err(CliError::usage(format!(
            "s_max = {} must not precede t = {}",
            cfg.s_max, cfg.t
        )));
    }
    let problem = BesselProblem::new(cfg.beta)?;
    let n = cfg.n_samples;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = if n == 1 {
            cfg.t
        } else {
            cfg.t + (cfg.s_max - cfg.t) * i as f64 / (n - 1) as f64
        };
        rows.push(BoundaryRow {
            s,
            boundary: problem.naive_boundary(cfg.t, s)?,
        });
    }
    let content = match cfg.format {
        OutputFormat::Json => to_json(&rows)?,
        OutputFormat::Csv => {
            let mut out = String::from("s,boundary\n");
            for row in &rows {
                let _ = writeln!(out, "{},{}", fmt_f(row.s), fmt_f(row.boundary));
            }
            out
        }
    };
    emit(cfg.out.as_deref(), &content)
}

pub fn cmd_classify(cfg: &RunConfig) -> Result<(), CliError> {
    let policy = ThresholdPolicy::threshold(cfg.start())?;
    let labels = classify_grid(
        &DiffusionModel::StandardBrownian,
        &cfg.discount_fn()?,
        &Payoff::AbsValue,
        &policy,
        &cfg.grid(),
        &cfg.mc_spec(),
    )?;
    let content = match cfg.format {
        OutputFormat::Json => to_json(&labels)?,
        OutputFormat::Csv => {
            let mut out = String::from("x,label,g,J_hat,stderr\n");
            for c in &labels {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_f(c.x),
                    c.label,
                    fmt_f(c.immediate_payoff),
                    fmt_f(c.continuation_value),
                    fmt_f(c.std_error)
                );
            }
            out
        }
    };
    emit(cfg.out.as_deref(), &content)
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    pass: bool,
    /// Measured discrepancy the check compares against its bound.
    measured: f64,
    bound: f64,
}

// splitmix64 finalizer; decorrelates the per-check seeds.
fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    all_pass: bool,
    notes: Vec<String>,
    checks: Vec<Check>,
}

/// Cross-validate the closed forms against simulation and the grid
/// improvement step against the analytic crossing, under the config's
/// Monte Carlo settings. Any failed check exits nonzero.
pub fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let problem = BesselProblem::new(cfg.beta)?;
    let ctx = EtaContext::new(cfg.beta)?;
    let discount = eqstop::DiscountFunction::hyperbolic(cfg.beta)?;
    let mc = cfg.mc_spec();
    let mut checks = Vec::new();

    // Internal consistency of the constants: k crosses 1 at a*.
    let a_star = problem.a_star()?;
    let k_gap = (k(&ctx, a_star)? - 1.0).abs();
    checks.push(Check {
        name: "k_equals_one_at_band_edge".into(),
        pass: k_gap <= 1e-8,
        measured: k_gap,
        bound: 1e-8,
    });

    // Simulation vs quadrature on a state grid, 3 standard errors each.
    let scale = 1.0 / cfg.beta.sqrt();
    let mut state_index = 0u64;
    for a_unit in [0.5, a_star * cfg.beta.sqrt(), 1.5] {
        let a = a_unit * scale;
        let policy = ThresholdPolicy::threshold(a)?;
        for frac in [0.0, 0.25, 0.5, 0.75] {
            let x = frac * a;
            state_index += 1;
            let state_mc = eqstop::MonteCarloSpec {
                master_seed: mix_seed(mc.master_seed, state_index),
                ..mc.clone()
            };
            let est = estimate_j(
                &DiffusionModel::StandardBrownian,
                &discount,
                &Payoff::AbsValue,
                &policy,
                x,
                false,
                &state_mc,
            )?;
            let exact = eta(&ctx, x, a)?;
            let measured = (est.mean - exact).abs();
            let bound = 3.0 * est.std_error;
            checks.push(Check {
                name: format!("mc_vs_quadrature_x{x:.4}_a{a:.4}"),
                pass: measured <= bound,
                measured,
                bound,
            });
        }
    }

    // Grid improvement step vs the analytic crossing of the naive rule.
    let grid = cfg.grid();
    let grid_step = grid[1] - grid[0];
    let naive = problem.naive_threshold();
    let x_star = problem.x_star(naive)?;
    let stepped = theta_step(
        &DiffusionModel::StandardBrownian,
        &discount,
        &Payoff::AbsValue,
        &ThresholdPolicy::threshold(naive)?,
        &grid,
        &mc,
    )?;
    let boundary = stepped.lower_boundary().unwrap_or(f64::NAN);
    let measured = (boundary - x_star).abs();
    checks.push(Check {
        name: "improvement_boundary_vs_crossing".into(),
        pass: measured <= grid_step + 1e-12,
        measured,
        bound: grid_step,
    });

    let mut notes = Vec::new();
    if cfg.n_paths < 10_000 {
        notes.push(format!(
            "confidence bands widened: n_paths = {} keeps every check consistent but loose",
            cfg.n_paths
        ));
    }
    if !mc.bridge_correction {
        notes.push("bridge correction disabled: hitting times carry a step-size bias".into());
    }

    let all_pass = checks.iter().all(|c| c.pass);
    let report = ValidationReport {
        all_pass,
        notes,
        checks,
    };
    let content = match cfg.format {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => {
            let mut out = String::from("name,pass,measured,bound\n");
            for c in &report.checks {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    c.name,
                    c.pass,
                    fmt_f(c.measured),
                    fmt_f(c.bound)
                );
            }
            out
        }
    };
    emit(cfg.out.as_deref(), &content)?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::numeric(
            "validation failed: at least one cross-check exceeded its bound".into(),
        ))
    }
}
