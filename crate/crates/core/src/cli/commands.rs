//! Command implementations. Each returns a [`Report`] holding the JSON
//! summary and the CSV tables; writing them is left to the caller.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::config::{BoundarySpec, CoefficientSpec, CommandName, ConfigError, ExperimentConfig};
use super::invariants;
use crate::assemble::{
    assemble_divergence_form, assemble_double_div, solve_dirichlet, AssembleError, Form, Solution, SolveError,
};
use crate::coeff::CoefficientField;
use crate::grid::{fmt_f64, gradient, Grid};
use crate::oracle::{fundsol_annihilation_defect, OracleError};
use crate::regmeter::{
    closed_form_table_1d, detect_first_level, detect_zero_level, gradient_oscillation_table, interpolate,
    oscillation_table, DecayReport, Detection, RegmeterError, MAX_START_RADIUS,
};

/// Dyadic levels and samples per ball for the closed-form cusp table.
pub const CUSP_LEVELS: std::ops::RangeInclusive<i32> = 10..=30;
pub const CUSP_SAMPLES: usize = 2001;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assembly failed: {0}")]
    Assemble(#[from] AssembleError),
    #[error("solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("decay measurement failed: {0}")]
    Regmeter(#[from] RegmeterError),
    #[error("oracle failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for invalid configurations, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Assemble(_) => 2,
            CliError::Solve(_) => 3,
            _ => 1,
        }
    }
}

/// Output of one command.
#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Value,
    /// `(file name, contents)` pairs.
    pub files: Vec<(String, String)>,
    /// A checked property did not hold.
    pub failed: bool,
    pub warnings: Vec<String>,
}

impl Report {
    fn new(cfg: &ExperimentConfig, body: Value) -> Self {
        let mut summary = json!({
            "command": cfg.command.as_str(),
            "config_hash": cfg.hash(),
            "config": cfg,
        });
        if let (Value::Object(s), Value::Object(b)) = (&mut summary, body) {
            s.extend(b);
        }
        Self {
            summary,
            files: Vec::new(),
            failed: false,
            warnings: Vec::new(),
        }
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn run_command(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    match cfg.command {
        CommandName::Solve => cmd_solve(cfg),
        CommandName::Theorem1 => cmd_theorem1(cfg),
        CommandName::Theorem2 => cmd_theorem2(cfg),
        CommandName::Convergence => cmd_convergence(cfg),
        CommandName::Fundsol => cmd_fundsol(cfg),
        CommandName::Invariants => cmd_invariants(cfg),
    }
}

struct Solved {
    grid: Grid,
    field: CoefficientField,
    form: Form,
    solution: Solution,
}

fn solve_config(cfg: &ExperimentConfig, n: usize, form: Option<Form>) -> Result<Solved, CliError> {
    let grid = Grid::new(cfg.dim, n).map_err(|e| ConfigError::Invalid(format!("grid: {e}")))?;
    let field = cfg.field()?;
    let form = form.unwrap_or_else(|| cfg.solve_form(&field));
    let system = match form {
        Form::DoubleDivergence => assemble_double_div(&grid, &field, &cfg.lower()?)?,
        Form::DivergenceForm => assemble_divergence_form(&grid, &field)?,
    };
    let g = cfg.boundary_fn(&field)?;
    let solution = solve_dirichlet(&system, |x| g(x))?;
    Ok(Solved {
        grid,
        field,
        form,
        solution,
    })
}

fn exact_error(cfg: &ExperimentConfig, s: &Solved) -> Result<Option<f64>, CliError> {
    if !cfg.exact(&s.field) {
        return Ok(None);
    }
    let g = cfg.boundary_fn(&s.field)?;
    Ok(Some(s.solution.field.max_error_where(|x| g(x), |_| true)))
}

fn csv<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(write: F) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let s = solve_config(cfg, cfg.n, None)?;
    let err = exact_error(cfg, &s)?;
    let mut report = Report::new(
        cfg,
        json!({
            "form": s.form,
            "h": s.grid.h(),
            "stats": s.solution.stats,
            "residual": s.solution.stats.residual,
            "error_vs_exact": err,
        }),
    );
    report
        .files
        .push(("solution.csv".into(), csv(|b| s.solution.field.write_csv(b))?));
    Ok(report)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

#[derive(Debug, Serialize)]
struct ExponentStats {
    median_alpha: Option<f64>,
    min_alpha: Option<f64>,
    min_r2: Option<f64>,
    fitted: usize,
}

fn exponent_stats(reports: &[DecayReport]) -> ExponentStats {
    let mut alphas: Vec<f64> = reports.iter().filter_map(DecayReport::alpha).collect();
    let min_r2 = reports.iter().filter_map(|r| r.fit.map(|f| f.r2)).reduce(f64::min);
    let min_alpha = alphas.iter().cloned().reduce(f64::min);
    ExponentStats {
        fitted: alphas.len(),
        median_alpha: median(&mut alphas),
        min_alpha,
        min_r2,
    }
}

fn push_tables(report: &mut Report, reports: &[DecayReport]) -> Result<(), CliError> {
    for (k, r) in reports.iter().enumerate() {
        report.files.push((format!("decay_{k}.csv"), csv(|b| r.write_csv(b))?));
    }
    Ok(())
}

/// Decay at the coefficient's singular point for 1D oracle runs: a
/// closed-form table at radii `r₀2⁻ᵏ`, `k ∈ CUSP_LEVELS`, and the grid table
/// for comparison.
fn cusp_contrast(cfg: &ExperimentConfig, s: &Solved) -> Result<Option<Value>, CliError> {
    let center = match &cfg.coefficient {
        CoefficientSpec::HolderBump { center, .. } | CoefficientSpec::SobolevPerturbation { center, .. } => center[0],
        _ => return Ok(None),
    };
    let BoundarySpec::Oracle1d { c1, c2 } = cfg.boundary else {
        return Ok(None);
    };
    if cfg.dim != 1 || center.abs() > 0.5 {
        return Ok(None);
    }
    let oracle = cfg.oracle(&s.field, c1, c2)?;
    let u = |x: f64| oracle.value(x).unwrap_or(f64::NAN);
    let r0 = MAX_START_RADIUS.min(s.grid.distance_to_boundary(&[center]) / 2.0);
    let radii: Vec<f64> = CUSP_LEVELS.map(|k| r0 * 0.5f64.powi(k)).collect();
    let closed = closed_form_table_1d(u, center, u(center), &radii, CUSP_SAMPLES)?;
    let (rho, _) = cfg.decay.effective_rho()?;
    let u0 = interpolate(&s.solution.field, &[center]);
    let on_grid = oscillation_table(&s.solution.field, &[center], u0, rho, cfg.decay.k_max)?;
    Ok(Some(json!({
        "x0": center,
        "value": u(center),
        "alpha_star": closed.alpha(),
        "r2": closed.fit.map(|f| f.r2),
        "radii": [radii.last(), radii.first()],
        "grid_alpha_star": on_grid.alpha(),
        "grid_r2": on_grid.fit.map(|f| f.r2),
    })))
}

pub fn cmd_theorem1(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let s = solve_config(cfg, cfg.n, None)?;
    let (rho, delta) = cfg.decay.effective_rho()?;
    let detection = detect_zero_level(&s.solution.field, cfg.decay.tol);
    let mut warnings = Vec::new();
    let (status, reports) = match &detection {
        Detection::IdenticallyZero => ("identically_zero", Vec::new()),
        Detection::Points(p) if p.is_empty() => {
            warnings.push("no zero level-set points in |x|∞ ≤ 1/2".to_string());
            ("no_zero_level", Vec::new())
        }
        Detection::Points(points) => {
            let reports = points
                .par_iter()
                .map(|p| {
                    oscillation_table(&s.solution.field, &p.location, 0.0, rho, cfg.decay.k_max)
                        .map(|r| r.with_residuals(p))
                })
                .collect::<Result<Vec<_>, _>>()?;
            ("ok", reports)
        }
    };
    let cusp = cusp_contrast(cfg, &s)?;
    let mut report = Report::new(
        cfg,
        json!({
            "status": status,
            "form": s.form,
            "stats": s.solution.stats,
            "rho": rho,
            "delta": delta,
            "s0_points": reports.len(),
            "exponents": exponent_stats(&reports),
            "reports": reports.iter().map(DecayReport::summary).collect::<Vec<_>>(),
            "cusp": cusp,
        }),
    );
    report.warnings = warnings;
    report
        .files
        .push(("solution.csv".into(), csv(|b| s.solution.field.write_csv(b))?));
    push_tables(&mut report, &reports)?;
    Ok(report)
}

pub fn cmd_theorem2(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let s = solve_config(cfg, cfg.n, Some(Form::DivergenceForm))?;
    let (rho, delta) = cfg.decay.effective_rho()?;
    let du = gradient(&s.solution.field);
    let detection = detect_first_level(&s.solution.field, &du, cfg.decay.tol, cfg.decay.grad_tol)?;
    let mut warnings = Vec::new();
    let zero = vec![0.0; cfg.dim];
    let (status, reports) = match &detection {
        Detection::IdenticallyZero => ("identically_zero", Vec::new()),
        Detection::Points(p) if p.is_empty() => {
            warnings.push("no first level-set points in |x|∞ ≤ 1/2".to_string());
            ("no_first_level", Vec::new())
        }
        Detection::Points(points) => {
            let reports = points
                .par_iter()
                .map(|p| {
                    gradient_oscillation_table(&du, &p.location, &zero, rho, cfg.decay.k_max)
                        .map(|r| r.with_residuals(p))
                })
                .collect::<Result<Vec<_>, _>>()?;
            ("ok", reports)
        }
    };
    let mut report = Report::new(
        cfg,
        json!({
            "status": status,
            "form": s.form,
            "stats": s.solution.stats,
            "rho": rho,
            "delta": delta,
            "s1_points": reports.len(),
            "exponents": exponent_stats(&reports),
            "reports": reports.iter().map(DecayReport::summary).collect::<Vec<_>>(),
        }),
    );
    report.warnings = warnings;
    report
        .files
        .push(("solution.csv".into(), csv(|b| s.solution.field.write_csv(b))?));
    push_tables(&mut report, &reports)?;
    Ok(report)
}

pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let s = solve_config(cfg, n, None)?;
        let err = exact_error(cfg, &s)?.expect("validated: closed-form solution exists");
        rows.push((n, s.grid.h(), err));
    }
    let orders: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[0].2 / w[1].2).ln() / (w[0].1 / w[1].1).ln())
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].2 < w[0].2);
    let mut table = String::from("n,h,error\n");
    for (n, h, e) in &rows {
        table.push_str(&format!("{n},{},{}\n", fmt_f64(*h), fmt_f64(*e)));
    }
    let mut report = Report::new(
        cfg,
        json!({
            "rows": rows.iter().map(|(n, h, e)| json!({"n": n, "h": h, "error": e})).collect::<Vec<_>>(),
            "orders": orders,
            "strictly_decreasing": decreasing,
        }),
    );
    report.files.push(("convergence.csv".into(), table));
    Ok(report)
}

pub fn cmd_fundsol(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let spec = cfg.fundsol.clone().unwrap_or_default();
    let a = cfg.fundsol_matrix()?;
    let defect = fundsol_annihilation_defect(&a, &spec.pole, spec.r_inner, spec.r_outer, spec.samples, spec.step)?;
    let passed = defect.relative <= spec.tolerance;
    let mut report = Report::new(
        cfg,
        json!({
            "matrix": (0..3).map(|i| (0..3).map(|j| a[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "defect": defect,
            "tolerance": spec.tolerance,
            "passed": passed,
        }),
    );
    report.failed = !passed;
    Ok(report)
}

pub fn cmd_invariants(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let checks = invariants::run_suite(cfg)?;
    let passed = checks.iter().all(|c| c.passed);
    let mut report = Report::new(cfg, json!({ "checks": checks, "passed": passed }));
    report.failed = !passed;
    Ok(report)
}
