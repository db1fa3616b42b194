//! Command-line front end: TOML configuration, the `audit`, `solve0` and
//! `trace` commands, and their CSV / JSON outputs.
//!
//! Relative paths in a configuration (output directory, data files) are
//! resolved against the directory containing the configuration file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::bounds::{audit, compute_d0, AuditSettings, BoundsReport};
use crate::continuation::{solve_lambda0, trace_curve, CurvePoint, LinearSolver, TraceConfig};
use crate::mesh::{build_grid, lift_boundary, DomainSpec, Grid};
use crate::system::{fields, BlockState, Coefficients};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

pub const CURVE_HEADER: [&str; 8] = [
    "lambda",
    "residual_norm",
    "dist_to_h0",
    "newton_iters",
    "min_n",
    "min_p",
    "neg_part_norm_n",
    "neg_part_norm_p",
];

pub const FIELDS_HEADER: [&str; 5] = ["x", "y", "u", "n", "p"];

#[derive(Debug, Parser)]
#[command(name = "narrow-pnp", version, about = "Homotopy continuation for drift-diffusion on narrow strips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure the feasibility constants and write bounds.json.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the decoupled λ = 0 system and write fields_lambda0.csv.
    Solve0 {
        #[arg(long)]
        config: PathBuf,
    },
    /// Trace the solution curve to λ = 1 and write curve.csv and fields_lambda1.csv.
    Trace {
        #[arg(long)]
        config: PathBuf,
    },
}

/// A configuration or I/O problem; the message names the offending key.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub domain: DomainSection,
    pub coefficients: CoefficientSection,
    pub doping: FieldSource,
    pub boundary: BoundarySection,
    pub homotopy: HomotopySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub audit: AuditSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub length: f64,
    pub width: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub d_n: f64,
    pub c_n: f64,
    pub d_p: f64,
    pub c_p: f64,
}

/// Nodal data: a constant, or a CSV file `x,y,value`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSource {
    pub kind: String,
    pub value: Option<f64>,
    pub path: Option<PathBuf>,
}

/// Boundary trace: a constant, `left + (right − left)·x/L`, or a CSV file
/// `x,y,value` in boundary-node order.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub kind: String,
    pub value: Option<f64>,
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub u: TraceSource,
    pub n: TraceSource,
    pub p: TraceSource,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomotopySection {
    pub steps: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_maxit")]
    pub newton_maxit: usize,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_newton_maxit() -> usize {
    20
}

fn default_alpha0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_solver_kind")]
    pub kind: String,
    #[serde(default = "default_solver_tol")]
    pub tol: f64,
    #[serde(default = "default_solver_maxit")]
    pub maxit: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            kind: default_solver_kind(),
            tol: default_solver_tol(),
            maxit: default_solver_maxit(),
        }
    }
}

fn default_solver_kind() -> String {
    "direct".into()
}

fn default_solver_tol() -> f64 {
    1e-12
}

fn default_solver_maxit() -> usize {
    500
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_samples")]
    pub lipschitz_samples: usize,
    #[serde(default = "default_probes")]
    pub inverse_probes: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            lipschitz_samples: default_samples(),
            inverse_probes: default_probes(),
        }
    }
}

fn default_samples() -> usize {
    AuditSettings::default().lipschitz_samples
}

fn default_probes() -> usize {
    AuditSettings::default().inverse_probes
}

/// A validated configuration with every file resolved.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub coeffs: Coefficients,
    pub trace: TraceConfig,
    pub audit: AuditSettings,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))
    }

    /// Checks every value and loads the referenced data files.
    pub fn resolve(&self, base: &Path) -> Result<Problem, ConfigError> {
        let d = self.domain;
        for (key, v) in [("domain.length", d.length), ("domain.width", d.width)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(cfg_err(format!("{key} must be a positive number, got {v}")));
            }
        }
        for (key, v) in [("domain.nx", d.nx), ("domain.ny", d.ny)] {
            if v < 2 {
                return Err(cfg_err(format!("{key} must be >= 2, got {v}")));
            }
        }
        let spec = DomainSpec::new(d.length, d.width, d.nx, d.ny).map_err(|e| cfg_err(format!("domain: {e}")))?;
        let grid = build_grid(&spec).map_err(|e| cfg_err(format!("domain: {e}")))?;

        let c = self.coefficients;
        for (key, v) in [
            ("coefficients.d_n", c.d_n),
            ("coefficients.c_n", c.c_n),
            ("coefficients.d_p", c.d_p),
            ("coefficients.c_p", c.c_p),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(cfg_err(format!("{key} must be a positive number, got {v}")));
            }
        }

        let doping = load_nodal(&grid, &self.doping, base, "doping")?;
        let lift = |src: &TraceSource, key: &str| -> Result<Vec<f64>, ConfigError> {
            let trace = load_trace(&grid, src, base, key)?;
            lift_boundary(&grid, &trace).map_err(|e| cfg_err(format!("{key}: {e}")))
        };
        let coeffs = Coefficients {
            d_n: c.d_n,
            c_n: c.c_n,
            d_p: c.d_p,
            c_p: c.c_p,
            doping,
            a_u: lift(&self.boundary.u, "boundary.u")?,
            a_n: lift(&self.boundary.n, "boundary.n")?,
            a_p: lift(&self.boundary.p, "boundary.p")?,
        };

        let h = self.homotopy;
        if h.steps == 0 {
            return Err(cfg_err("homotopy.steps must be >= 1"));
        }
        if !(h.newton_tol.is_finite() && h.newton_tol > 0.0) {
            return Err(cfg_err(format!("homotopy.newton_tol must be positive, got {}", h.newton_tol)));
        }
        if h.newton_maxit == 0 {
            return Err(cfg_err("homotopy.newton_maxit must be >= 1"));
        }
        if !(h.alpha0 > 0.0 && h.alpha0 <= 1.0) {
            return Err(cfg_err(format!("homotopy.alpha0 must lie in (0, 1], got {}", h.alpha0)));
        }
        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return Err(cfg_err(format!("solver.tol must be positive, got {}", s.tol)));
        }
        if s.maxit == 0 {
            return Err(cfg_err("solver.maxit must be >= 1"));
        }
        let linear_solver = match s.kind.as_str() {
            "direct" => LinearSolver::Direct,
            "contraction" => LinearSolver::Contraction {
                tol: s.tol,
                maxit: s.maxit,
            },
            other => {
                return Err(cfg_err(format!(
                    "solver.kind must be \"direct\" or \"contraction\", got {other:?}"
                )))
            }
        };
        if self.audit.lipschitz_samples < 2 {
            return Err(cfg_err("audit.lipschitz_samples must be >= 2"));
        }
        if self.audit.inverse_probes == 0 {
            return Err(cfg_err("audit.inverse_probes must be >= 1"));
        }

        Ok(Problem {
            grid,
            coeffs,
            trace: TraceConfig {
                steps: h.steps,
                newton_tol: h.newton_tol,
                newton_maxit: h.newton_maxit,
                linear_solver,
            },
            audit: AuditSettings {
                alpha0: h.alpha0,
                lipschitz_samples: self.audit.lipschitz_samples,
                inverse_probes: self.audit.inverse_probes,
                contraction_tol: s.tol.max(1e-12),
                contraction_maxit: s.maxit,
                seed: self.seed,
                ..AuditSettings::default()
            },
            output_dir: base.join(&self.output_dir),
        })
    }
}

fn read_xyv(path: &Path, key: &str) -> Result<Vec<(f64, f64, f64)>, ConfigError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| cfg_err(format!("{key}.path: cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64, f64)>().enumerate() {
        out.push(rec.map_err(|e| cfg_err(format!("{key}.path: row {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn check_points(
    rows: &[(f64, f64, f64)],
    nodes: impl ExactSizeIterator<Item = (f64, f64)>,
    key: &str,
    scale: f64,
) -> Result<Vec<f64>, ConfigError> {
    if rows.len() != nodes.len() {
        return Err(cfg_err(format!(
            "{key}: file has {} values, the grid needs {}",
            rows.len(),
            nodes.len()
        )));
    }
    for (i, (&(x, y, _), (gx, gy))) in rows.iter().zip(nodes).enumerate() {
        if (x - gx).abs() > 1e-9 * scale || (y - gy).abs() > 1e-9 * scale {
            return Err(cfg_err(format!(
                "{key}: row {} is at ({x}, {y}) but node {i} is at ({gx}, {gy})",
                i + 1
            )));
        }
    }
    Ok(rows.iter().map(|r| r.2).collect())
}

fn require<T: Copy>(v: Option<T>, key: &str, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| cfg_err(format!("{key}.{field} is required")))
}

fn load_nodal(grid: &Grid, src: &FieldSource, base: &Path, key: &str) -> Result<Vec<f64>, ConfigError> {
    let values = match src.kind.as_str() {
        "constant" => vec![require(src.value, key, "value")?; grid.num_nodes()],
        "file" => {
            let path = src.path.as_ref().ok_or_else(|| cfg_err(format!("{key}.path is required")))?;
            let rows = read_xyv(&base.join(path), key)?;
            let scale = grid.spec().length.max(grid.width());
            check_points(&rows, grid.coords().iter().copied(), key, scale)?
        }
        other => {
            return Err(cfg_err(format!("{key}.kind must be \"constant\" or \"file\", got {other:?}")))
        }
    };
    finite(values, key)
}

fn load_trace(grid: &Grid, src: &TraceSource, base: &Path, key: &str) -> Result<Vec<f64>, ConfigError> {
    let values = match src.kind.as_str() {
        "constant" => vec![require(src.value, key, "value")?; grid.num_boundary()],
        "linear_x" => {
            let (l, r) = (require(src.left, key, "left")?, require(src.right, key, "right")?);
            let len = grid.spec().length;
            grid.sample_boundary(|x, _| l + (r - l) * x / len)
        }
        "file" => {
            let path = src.path.as_ref().ok_or_else(|| cfg_err(format!("{key}.path is required")))?;
            let rows = read_xyv(&base.join(path), key)?;
            let scale = grid.spec().length.max(grid.width());
            let coords = grid.boundary_nodes().iter().map(|&g| grid.coords()[g]).collect::<Vec<_>>();
            check_points(&rows, coords.into_iter(), key, scale)?
        }
        other => {
            return Err(cfg_err(format!(
                "{key}.kind must be \"constant\", \"linear_x\" or \"file\", got {other:?}"
            )))
        }
    };
    finite(values, key)
}

fn finite(values: Vec<f64>, key: &str) -> Result<Vec<f64>, ConfigError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(cfg_err(format!("{key}: value {i} is not finite"))),
        None => Ok(values),
    }
}

/// Reads and resolves a configuration file.
pub fn load_config(path: &Path) -> Result<Problem, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| cfg_err(format!("config: cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    RunConfig::from_toml(&text)?.resolve(&base)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ConfigError> {
    let io = |e: csv::Error| cfg_err(format!("output_dir: cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| cfg_err(format!("output_dir: cannot write {}: {e}", path.display())))
}

/// Writes `x,y,u,n,p` over all nodes.
pub fn write_fields(path: &Path, grid: &Grid, coeffs: &Coefficients, state: &BlockState) -> Result<(), ConfigError> {
    let f = fields(grid, coeffs, state);
    let rows = grid.coords().iter().enumerate().map(|(i, &(x, y))| {
        vec![fmt(x), fmt(y), fmt(f.u[i]), fmt(f.n[i]), fmt(f.p[i])]
    });
    write_csv(path, &FIELDS_HEADER, rows)
}

/// Writes one row per curve point.
pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<(), ConfigError> {
    let rows = points.iter().map(|p| {
        vec![
            fmt(p.lambda),
            fmt(p.residual_norm),
            fmt(p.dist_to_h0),
            p.newton_iters.to_string(),
            fmt(p.min_n),
            fmt(p.min_p),
            fmt(p.neg_part_norm_n),
            fmt(p.neg_part_norm_p),
        ]
    });
    write_csv(path, &CURVE_HEADER, rows)
}

pub fn write_report(path: &Path, report: &BoundsReport) -> Result<(), ConfigError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| cfg_err(format!("bounds report: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| cfg_err(format!("output_dir: cannot write {}: {e}", path.display())))
}

fn prepare(config: &Path) -> Result<Problem, ConfigError> {
    let problem = load_config(config)?;
    fs::create_dir_all(&problem.output_dir).map_err(|e| {
        cfg_err(format!("output_dir: cannot create {}: {e}", problem.output_dir.display()))
    })?;
    Ok(problem)
}

fn width_advisory(problem: &Problem) {
    let width = problem.grid.width();
    let d0 = compute_d0(&problem.coeffs);
    if !d0.admits(width) {
        eprintln!(
            "warning: width {width} is not below d0 = {}; uniqueness of the decoupled solve is not guaranteed",
            d0.value().unwrap_or(f64::INFINITY)
        );
    }
}

fn cmd_audit(config: &Path) -> Result<i32, ConfigError> {
    let p = prepare(config)?;
    let h0 = match solve_lambda0(&p.grid, &p.coeffs) {
        Ok(h0) => h0,
        Err(e) => {
            eprintln!("audit: decoupled solve failed: {e}");
            return Ok(EXIT_INFEASIBLE);
        }
    };
    let report = audit(&p.grid, &p.coeffs, &h0, &p.audit).map_err(|e| cfg_err(format!("audit: {e}")))?;
    write_report(&p.output_dir.join("bounds.json"), &report)?;
    Ok(if report.feasible() { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_solve0(config: &Path) -> Result<i32, ConfigError> {
    let p = prepare(config)?;
    width_advisory(&p);
    match solve_lambda0(&p.grid, &p.coeffs) {
        Ok(h0) => {
            write_fields(&p.output_dir.join("fields_lambda0.csv"), &p.grid, &p.coeffs, &h0)?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("solve0: {e}");
            Ok(EXIT_PARTIAL)
        }
    }
}

fn cmd_trace(config: &Path) -> Result<i32, ConfigError> {
    let p = prepare(config)?;
    width_advisory(&p);
    let trace = match trace_curve(&p.grid, &p.coeffs, &p.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("trace: {e}");
            write_curve(&p.output_dir.join("curve.csv"), &[])?;
            return Ok(EXIT_PARTIAL);
        }
    };
    write_curve(&p.output_dir.join("curve.csv"), &trace.points)?;
    if let Some(e) = &trace.failure {
        eprintln!("trace: stopped after {} points: {e}", trace.points.len());
        return Ok(EXIT_PARTIAL);
    }
    let end = trace.terminus().expect("a complete trace has a terminus");
    write_fields(&p.output_dir.join("fields_lambda1.csv"), &p.grid, &p.coeffs, &end.state)?;
    Ok(EXIT_OK)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Audit { config } => cmd_audit(config),
        Command::Solve0 { config } => cmd_solve0(config),
        Command::Trace { config } => cmd_trace(config),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}
