//! Command-line front end: flat `key = value` configuration, orchestration
//! and CSV output.
//!
//! Every CSV starts with a `#` line carrying the config hash and the column
//! units, followed by the column header row. Wall-clock columns stay empty
//! unless `timing = true`, so identical configurations produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assembly::{assemble, l2_error, solve_with, SolveOptions, SolverKind};
use crate::bench::{
    exact_u, nonlocal_shift, rhs_local, run_convergence, synchronized_convergence, truncation_study, BenchError,
    Coupling, StudyConfig, TruncationField, TruncationOptions,
};
use crate::grid::{build_grid_with, DomainBox, GridOptions};
use crate::kernel::{Profile, RadialKernel};
use crate::nlops::{Integration, Material};
use crate::quad::{generate_point_set, polar_rule, solve_weights, QuadSet, Symmetry};
use crate::symbols::{stability_scan, LatticeOptions, ScanConfig, SymbolContext};

/// Exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical errors.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit status for I/O failures.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("key `{key}`: {reason}")]
    Precondition { key: String, reason: String },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{module} error: {message}")]
    Numerical { module: &'static str, message: String },
    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Numerical { .. } => EXIT_NUMERICAL,
            RunError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<BenchError> for RunError {
    fn from(e: BenchError) -> Self {
        let module = match &e {
            BenchError::LadderTooShort(_) | BenchError::Ladder(_) | BenchError::Coupling(_) => "bench",
            BenchError::Grid(_) => "grid",
            BenchError::Kernel(_) => "kernel",
            BenchError::Quad(_) => "quad",
            BenchError::Nlops(_) => "nlops",
            BenchError::Assembly(_) => "assembly",
            BenchError::Basis(_) => "rkbasis",
            BenchError::Symbol(_) => "symbols",
        };
        RunError::Numerical { module, message: e.to_string() }
    }
}

fn numerical(module: &'static str, e: impl std::fmt::Display) -> RunError {
    RunError::Numerical { module, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge,
    Solve,
    Weights,
    Symbols,
    Truncation,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "converge" => Command::Converge,
            "solve" => Command::Solve,
            "weights" => Command::Weights,
            "symbols" => Command::Symbols,
            "truncation" => Command::Truncation,
            other => return Err(ConfigError::Usage(format!("unknown command `{other}`\n{USAGE}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Converge => "converge",
            Command::Solve => "solve",
            Command::Weights => "weights",
            Command::Symbols => "symbols",
            Command::Truncation => "truncation",
        }
    }
}

pub const USAGE: &str =
    "usage: peridyn-rk <converge|solve|weights|symbols|truncation> [--config FILE] [--key value ...] [--out DIR]";

/// Recognized keys and their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("kernel", "inverse_distance"),
    ("kernel_c", ""),
    ("E", "1"),
    ("nu", "0.4"),
    ("lambda", ""),
    ("mu", ""),
    ("allow_lambda_lt_mu", "false"),
    ("domain_lower", "0,0"),
    ("domain_upper", "1,1"),
    ("h_max", "0.0625"),
    ("h_hat", "1,0.5"),
    ("coupling", "delta_eq_h"),
    ("delta", "0.25"),
    ("M0", "2"),
    ("epsilon1", "0.25"),
    ("ladder", "0.125,0.0625,0.03125,0.015625"),
    ("reference_refinement", "4"),
    ("solver", "auto"),
    ("tolerance", "1e-10"),
    ("restart", "100"),
    ("max_iterations", ""),
    ("export_matrix", "false"),
    ("scan_h", "0.125,0.0625,0.03125"),
    ("scan_ratio", "2"),
    ("scan_resolution", "33"),
    ("scan_radial", "64"),
    ("scan_directions", "8"),
    ("truncation_field", "sinsin"),
    ("samples", "200"),
    ("seed", "0"),
    ("timing", "false"),
];

fn canonical_key(key: &str) -> Option<&'static str> {
    let k = key.trim().replace('-', "_");
    KEYS.iter().map(|(name, _)| *name).find(|name| name.eq_ignore_ascii_case(&k))
}

/// Fully validated run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub profile: Profile,
    pub mat: Material,
    pub domain: DomainBox,
    pub h_max: f64,
    pub h_hat: Vec<f64>,
    pub coupling: Coupling,
    pub m0: f64,
    pub epsilon1: f64,
    pub ladder: Vec<f64>,
    pub reference_refinement: usize,
    pub solve: SolveOptions,
    pub export_matrix: bool,
    pub scan_h: Vec<f64>,
    pub scan_ratio: f64,
    pub scan_resolution: usize,
    pub scan_radial: usize,
    pub scan_directions: usize,
    pub truncation_field: TruncationField,
    pub samples: usize,
    pub seed: u64,
    pub timing: bool,
    pub allow_lambda_lt_mu: bool,
    /// Hex SHA-256 of the command and the effective key values.
    pub hash: String,
    /// Non-fatal notices, such as an accepted `lambda < mu`.
    pub warnings: Vec<String>,
}

struct Values(BTreeMap<&'static str, String>);

impl Values {
    fn raw(&self, key: &'static str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    fn is_set(&self, key: &'static str) -> bool {
        !self.raw(key).is_empty()
    }

    fn f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        let v = self.raw(key);
        v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| ConfigError::Type {
            key: key.into(),
            value: v.into(),
            expected: "a finite number",
        })
    }

    fn usize(&self, key: &'static str) -> Result<usize, ConfigError> {
        let v = self.raw(key);
        v.parse::<usize>().map_err(|_| ConfigError::Type {
            key: key.into(),
            value: v.into(),
            expected: "a nonnegative integer",
        })
    }

    fn u64(&self, key: &'static str) -> Result<u64, ConfigError> {
        let v = self.raw(key);
        v.parse::<u64>().map_err(|_| ConfigError::Type {
            key: key.into(),
            value: v.into(),
            expected: "a nonnegative integer",
        })
    }

    fn bool(&self, key: &'static str) -> Result<bool, ConfigError> {
        match self.raw(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            v => Err(ConfigError::Type { key: key.into(), value: v.into(), expected: "a boolean" }),
        }
    }

    fn list(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        let v = self.raw(key);
        v.split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| ConfigError::Type {
                key: key.into(),
                value: v.into(),
                expected: "a comma-separated list of numbers",
            })
    }
}

fn precondition(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Precondition { key: key.into(), reason: reason.into() }
}

/// Parses `text` (one `key = value` per line, `#` comments) and applies `overrides` on top.
pub fn parse_config(command: Command, text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: n + 1, text: line.into() })?;
        let key = canonical_key(k).ok_or_else(|| ConfigError::UnknownKey(k.trim().into()))?;
        values.insert(key, v.trim().into());
    }
    for (k, v) in overrides {
        let key = canonical_key(k).ok_or_else(|| ConfigError::UnknownKey(k.trim().into()))?;
        values.insert(key, v.trim().into());
    }
    let vals = Values(values);

    let profile = match vals.raw("kernel") {
        "inverse_distance" => Profile::InverseDistance {
            c: if vals.is_set("kernel_c") { vals.f64("kernel_c")? } else { 3.0 / (2.0 * std::f64::consts::PI) },
        },
        "constant" => Profile::Constant { c: if vals.is_set("kernel_c") { vals.f64("kernel_c")? } else { 1.0 } },
        other => return Err(precondition("kernel", format!("`{other}` is not one of inverse_distance, constant"))),
    };
    if let Profile::InverseDistance { c } | Profile::Constant { c } = profile {
        if !(c > 0.0) {
            return Err(precondition("kernel_c", "must be positive"));
        }
    }

    let mat = if vals.is_set("lambda") || vals.is_set("mu") {
        if !(vals.is_set("lambda") && vals.is_set("mu")) {
            let missing = if vals.is_set("lambda") { "mu" } else { "lambda" };
            return Err(precondition(missing, "lambda and mu must be given together"));
        }
        let (l, m) = (vals.f64("lambda")?, vals.f64("mu")?);
        if !(m > 0.0) {
            return Err(precondition("mu", "must be positive"));
        }
        Material::new(l, m, 2).map_err(|e| precondition("lambda", e.to_string()))?
    } else {
        let e = vals.f64("E")?;
        let nu = vals.f64("nu")?;
        if !(e > 0.0) {
            return Err(precondition("E", "must be positive"));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(precondition("nu", "must lie in (-1, 0.5)"));
        }
        Material::from_young_poisson(e, nu, 2).map_err(|e| precondition("nu", e.to_string()))?
    };
    let allow_lambda_lt_mu = vals.bool("allow_lambda_lt_mu")?;
    let mut warnings = Vec::new();
    if !mat.lambda_ge_mu() {
        let key = if vals.is_set("lambda") { "lambda" } else { "nu" };
        let msg = format!("lambda = {} < mu = {} violates the stability hypothesis lambda >= mu", mat.lambda, mat.mu);
        if !allow_lambda_lt_mu {
            return Err(precondition(key, format!("{msg}; pass --allow-lambda-lt-mu to proceed")));
        }
        warnings.push(format!("warning: {msg}"));
    }

    let lower = vals.list("domain_lower")?;
    let upper = vals.list("domain_upper")?;
    if lower.len() != 2 {
        return Err(precondition("domain_lower", "expected two coordinates"));
    }
    if upper.len() != 2 {
        return Err(precondition("domain_upper", "expected two coordinates"));
    }
    let domain = DomainBox::new(&lower, &upper).map_err(|e| precondition("domain_upper", e.to_string()))?;

    let h_max = vals.f64("h_max")?;
    if !(h_max > 0.0) {
        return Err(precondition("h_max", "must be positive"));
    }
    let h_hat = vals.list("h_hat")?;
    if h_hat.len() != 2
        || h_hat.iter().any(|&v| !(v > 0.0))
        || (h_hat.iter().cloned().fold(0.0, f64::max) - 1.0).abs() > 1e-14
    {
        return Err(precondition("h_hat", "expected two positive entries with maximum 1"));
    }

    let m0 = vals.f64("M0")?;
    if !(m0 >= 0.5) {
        return Err(precondition("M0", "must be at least 1/2 so that the interaction layer covers the grid margin"));
    }
    let epsilon1 = vals.f64("epsilon1")?;
    if !(epsilon1 > 0.0 && epsilon1 <= 1.0) {
        return Err(precondition("epsilon1", "must lie in (0, 1]"));
    }
    let delta = vals.f64("delta")?;
    if !(delta > 0.0) {
        return Err(precondition("delta", "must be positive"));
    }
    let coupling = match vals.raw("coupling") {
        "fixed_delta" => Coupling::FixedDelta(delta),
        "delta_eq_h" => Coupling::DeltaEqH,
        "delta_eq_h2" => Coupling::DeltaEqH2,
        "delta_sqrt_h" => Coupling::DeltaSqrtH,
        "quasi" => Coupling::Quasi { m0, epsilon1 },
        other => {
            return Err(precondition(
                "coupling",
                format!("`{other}` is not one of fixed_delta, delta_eq_h, delta_eq_h2, delta_sqrt_h, quasi"),
            ))
        }
    };

    let ladder = vals.list("ladder")?;
    if ladder.len() < 3 {
        return Err(precondition("ladder", format!("has {} entries; at least 3 are required", ladder.len())));
    }
    if ladder.windows(2).any(|w| !(w[0] > 0.0 && w[1] > 0.0) || ((w[0] / w[1]) - 2.0).abs() > 1e-9) {
        return Err(precondition("ladder", "entries must be positive and halve at every step"));
    }
    let reference_refinement = vals.usize("reference_refinement")?;
    if reference_refinement < 2 {
        return Err(precondition("reference_refinement", "must be at least 2"));
    }

    let kind = match vals.raw("solver") {
        "auto" => SolverKind::Auto,
        "direct" => SolverKind::Direct,
        "iterative" => SolverKind::Iterative,
        other => return Err(precondition("solver", format!("`{other}` is not one of auto, direct, iterative"))),
    };
    let tolerance = vals.f64("tolerance")?;
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(precondition("tolerance", "must lie in (0, 1)"));
    }
    let restart = vals.usize("restart")?;
    if restart == 0 {
        return Err(precondition("restart", "must be positive"));
    }
    let max_iterations = if vals.is_set("max_iterations") { Some(vals.usize("max_iterations")?) } else { None };
    let solve = SolveOptions { kind, tolerance, restart, max_iterations, ..SolveOptions::default() };

    let scan_h = vals.list("scan_h")?;
    if scan_h.is_empty() || scan_h.iter().any(|&h| !(h > 0.0)) {
        return Err(precondition("scan_h", "entries must be positive"));
    }
    let scan_ratio = vals.f64("scan_ratio")?;
    if !(scan_ratio > 0.0) {
        return Err(precondition("scan_ratio", "must be positive"));
    }
    let scan_resolution = vals.usize("scan_resolution")?;
    if scan_resolution < 2 {
        return Err(precondition("scan_resolution", "must be at least 2"));
    }
    let scan_radial = vals.usize("scan_radial")?;
    let scan_directions = vals.usize("scan_directions")?;
    let truncation_field = match vals.raw("truncation_field") {
        "sinsin" => TruncationField::SinSin,
        "manufactured" => TruncationField::Manufactured,
        other => return Err(precondition("truncation_field", format!("`{other}` is not one of sinsin, manufactured"))),
    };
    let samples = vals.usize("samples")?;
    if samples == 0 {
        return Err(precondition("samples", "must be positive"));
    }
    let seed = vals.u64("seed")?;
    let timing = vals.bool("timing")?;
    let export_matrix = vals.bool("export_matrix")?;

    let mut canonical = format!("command={}\n", command.name());
    for (k, v) in &vals.0 {
        let _ = writeln!(canonical, "{k}={v}");
    }
    let hash = Sha256::digest(canonical.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });

    Ok(RunConfig {
        command,
        profile,
        mat,
        domain,
        h_max,
        h_hat,
        coupling,
        m0,
        epsilon1,
        ladder,
        reference_refinement,
        solve,
        export_matrix,
        scan_h,
        scan_ratio,
        scan_resolution,
        scan_radial,
        scan_directions,
        truncation_field,
        samples,
        seed,
        timing,
        allow_lambda_lt_mu,
        hash,
        warnings,
    })
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub out: PathBuf,
}

/// Parses `args` (without the program name). A flag followed by another flag or nothing is `true`.
pub fn parse_args(args: &[String]) -> Result<Invocation, ConfigError> {
    let mut it = args.iter().peekable();
    let command = Command::parse(it.next().ok_or_else(|| ConfigError::Usage(USAGE.into()))?)?;
    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut overrides = Vec::new();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| ConfigError::Usage(format!("unexpected argument `{arg}`\n{USAGE}")))?;
        let (key, inline) = match key.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (key, None),
        };
        let value = match inline {
            Some(v) => v,
            None => match it.peek() {
                Some(next) if !next.starts_with("--") => it.next().cloned().unwrap_or_default(),
                _ => "true".into(),
            },
        };
        match key {
            "config" => config = Some(PathBuf::from(value)),
            "out" => out = PathBuf::from(value),
            _ => overrides.push((key.to_string(), value)),
        }
    }
    Ok(Invocation { command, config, overrides, out })
}

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Writes a CSV with the hash/units preamble.
fn write_csv(path: &Path, cfg: &RunConfig, columns: &[(&str, &str)], rows: &[Vec<String>]) -> Result<(), RunError> {
    let io = |e: &dyn std::fmt::Display| RunError::Io { path: path.display().to_string(), reason: e.to_string() };
    let mut buf = Vec::new();
    let units: Vec<String> = columns.iter().map(|(c, u)| format!("{c}[{u}]")).collect();
    writeln!(buf, "# peridyn-rk {} config_hash={} units: {}", cfg.command.name(), cfg.hash, units.join(" "))
        .map_err(|e| io(&e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns.iter().map(|(c, _)| *c)).map_err(|e| io(&e))?;
        for r in rows {
            w.write_record(r).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;
    }
    fs::write(path, buf).map_err(|e| io(&e))
}

fn study_config(cfg: &RunConfig) -> StudyConfig {
    StudyConfig {
        mat: cfg.mat,
        profile: cfg.profile.clone(),
        domain: cfg.domain.clone(),
        h_hat: cfg.h_hat.clone(),
        solve: cfg.solve,
        reference_refinement: cfg.reference_refinement,
    }
}

const NOTICES: &str = "notice: f_0 uses 6 x1^2 in the lambda term (symbolic derivative of u); the boundary data is u = x1^2 (1 - x1)^2 + x2^2 (1 - x2)^2 on the interaction layer.";

fn unit_quad(cfg: &RunConfig) -> Result<QuadSet, RunError> {
    let unit = RadialKernel::new(cfg.profile.clone(), 1.0, 2).map_err(|e| numerical("kernel", e))?;
    let pts = generate_point_set(cfg.epsilon1, 2).map_err(|e| numerical("quad", e))?;
    solve_weights(&pts, cfg.epsilon1, &unit, Symmetry::Hyperoctahedral).map_err(|e| numerical("quad", e))
}

/// Executes the configured command, writing CSVs to `out`, and returns the summary text.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<String, RunError> {
    fs::create_dir_all(out).map_err(|e| RunError::Io { path: out.display().to_string(), reason: e.to_string() })?;
    let mut summary = String::new();
    for w in &cfg.warnings {
        let _ = writeln!(summary, "{w}");
    }
    let _ = writeln!(summary, "config_hash {}", cfg.hash);
    match cfg.command {
        Command::Converge => converge(cfg, out, &mut summary)?,
        Command::Solve => solve_once(cfg, out, &mut summary)?,
        Command::Weights => weights(cfg, out, &mut summary)?,
        Command::Symbols => symbols(cfg, out, &mut summary)?,
        Command::Truncation => truncation(cfg, out, &mut summary)?,
    }
    Ok(summary)
}

fn converge(cfg: &RunConfig, out: &Path, summary: &mut String) -> Result<(), RunError> {
    let rec = run_convergence(cfg.coupling, &cfg.ladder, &study_config(cfg))?;
    let rows: Vec<Vec<String>> = rec
        .rows
        .iter()
        .map(|r| {
            vec![
                rec.coupling.tag().to_string(),
                fmt_num(r.h_max),
                fmt_num(r.delta),
                fmt_opt(r.epsilon1),
                r.dofs.to_string(),
                fmt_num(r.l2_error),
                fmt_opt(r.rate),
                if cfg.timing { format!("{:.3}", r.wall_seconds) } else { String::new() },
            ]
        })
        .collect();
    let cols = [
        ("coupling", "-"),
        ("h_max", "length"),
        ("delta", "length"),
        ("epsilon1", "-"),
        ("dofs", "count"),
        ("l2_error", "displacement*length"),
        ("rate", "-"),
        ("wall_seconds", "s"),
    ];
    write_csv(&out.join("convergence.csv"), cfg, &cols, &rows)?;
    let _ = writeln!(summary, "{NOTICES}");
    let _ = writeln!(summary, "coupling {} summary slope {:.4}", rec.coupling.tag(), rec.slope);
    for r in &rec.rows {
        let _ = writeln!(
            summary,
            "  h_max {:<10} delta {:<12.6e} dofs {:<8} l2_error {:.6e} rate {}",
            r.h_max,
            r.delta,
            r.dofs,
            r.l2_error,
            r.rate.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    if let Some(r) = &rec.reference {
        let _ = writeln!(
            summary,
            "reference solve h_max {} dofs {} error against u {:.3e}",
            r.h_max, r.dofs, r.exact_error
        );
    }
    if !rec.monotone() {
        let _ = writeln!(summary, "warning: errors are not monotone along the ladder");
    }
    Ok(())
}

fn solve_once(cfg: &RunConfig, out: &Path, summary: &mut String) -> Result<(), RunError> {
    let delta = cfg.coupling.delta(cfg.h_max);
    let options = GridOptions { allow_thin_layer: delta < 0.5 * cfg.h_max };
    let grid = build_grid_with(&cfg.domain, cfg.h_max, &cfg.h_hat, delta, options).map_err(|e| numerical("grid", e))?;
    let kernel = RadialKernel::new(cfg.profile.clone(), delta, 2).map_err(|e| numerical("kernel", e))?;
    let rule = polar_rule(delta, grid.h_min(), 2);
    let quad = match cfg.coupling {
        Coupling::Quasi { .. } => Some(unit_quad(cfg)?),
        _ => None,
    };
    let integration = match &quad {
        Some(set) => Integration::Quasi(set),
        None => Integration::Continuous(&rule),
    };
    let mat = cfg.mat;
    let shift = match cfg.coupling {
        Coupling::FixedDelta(_) => nonlocal_shift(&mat, &kernel)?,
        _ => [0.0; 3],
    };
    let rhs = move |x: &[f64]| {
        let f = rhs_local(x, &mat);
        [f[0] + shift[0], f[1] + shift[1], 0.0]
    };
    let sys = assemble(&grid, &kernel, &mat, integration, &exact_u, &rhs).map_err(|e| numerical("assembly", e))?;
    if cfg.export_matrix {
        let io = |p: &Path, e: std::io::Error| RunError::Io { path: p.display().to_string(), reason: e.to_string() };
        let mp = out.join("matrix.txt");
        let mut f = std::io::BufWriter::new(fs::File::create(&mp).map_err(|e| io(&mp, e))?);
        sys.write_matrix(&mut f).map_err(|e| io(&mp, e))?;
        f.flush().map_err(|e| io(&mp, e))?;
        let rp = out.join("rhs.txt");
        let mut f = std::io::BufWriter::new(fs::File::create(&rp).map_err(|e| io(&rp, e))?);
        sys.write_rhs(&mut f).map_err(|e| io(&rp, e))?;
        f.flush().map_err(|e| io(&rp, e))?;
    }
    let (field, report) = solve_with(&sys, &cfg.solve).map_err(|e| numerical("assembly", e))?;
    let rows: Vec<Vec<String>> = sys
        .unknown_nodes()
        .iter()
        .map(|&lin| {
            let x = grid.coord(&grid.multi_index(lin));
            let u = field.node(lin);
            vec![fmt_num(x[0]), fmt_num(x[1]), fmt_num(u[0]), fmt_num(u[1])]
        })
        .collect();
    let cols = [("x1", "length"), ("x2", "length"), ("u1", "displacement"), ("u2", "displacement")];
    write_csv(&out.join("solution.csv"), cfg, &cols, &rows)?;
    let err = l2_error(&grid, &field, &exact_u);
    let _ = writeln!(summary, "{NOTICES}");
    let _ = writeln!(
        summary,
        "solve coupling {} h_max {} delta {:e} dofs {} method {:?} iterations {} relative residual {:.3e}",
        cfg.coupling.tag(),
        cfg.h_max,
        delta,
        report.dofs,
        report.method,
        report.iterations,
        report.relative_residual
    );
    let _ = writeln!(summary, "l2 error against u {err:.6e}");
    Ok(())
}

fn weights(cfg: &RunConfig, out: &Path, summary: &mut String) -> Result<(), RunError> {
    let set = unit_quad(cfg)?;
    let unit = RadialKernel::new(cfg.profile.clone(), 1.0, 2).map_err(|e| numerical("kernel", e))?;
    let rows: Vec<Vec<String>> =
        set.points.iter().zip(&set.weights).map(|(p, w)| vec![fmt_num(p[0]), fmt_num(p[1]), fmt_num(*w)]).collect();
    let cols = [("t1", "horizon"), ("t2", "horizon"), ("weight", "horizon^2")];
    write_csv(&out.join("weights.csv"), cfg, &cols, &rows)?;
    let res = set.constraint_residuals(&unit).into_iter().fold(0.0, f64::max);
    let min_w = set.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let _ = writeln!(
        summary,
        "weights epsilon1 {} points {} min weight {:.6e} max constraint residual {:.3e}",
        cfg.epsilon1,
        set.len(),
        min_w,
        res
    );
    Ok(())
}

fn symbols(cfg: &RunConfig, out: &Path, summary: &mut String) -> Result<(), RunError> {
    let kernel = RadialKernel::new(cfg.profile.clone(), 1.0, 2).map_err(|e| numerical("kernel", e))?;
    let quad = unit_quad(cfg)?;
    let lattice = LatticeOptions::default();
    let hat_min = cfg.h_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = SymbolContext::required_r_max(cfg.scan_ratio / hat_min, lattice.max_shells, 2);
    let ctx = SymbolContext::new(&kernel, &cfg.mat, Some(quad), r_max).map_err(|e| numerical("symbols", e))?;
    let scan = ScanConfig {
        resolution: cfg.scan_resolution,
        radial: cfg.scan_radial,
        directions: cfg.scan_directions,
        ..ScanConfig::ratio_sweep(cfg.scan_ratio, &cfg.scan_h, &cfg.h_hat)
    };
    let report = stability_scan(&ctx, &scan).map_err(|e| numerical("symbols", e))?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_num(r.delta),
                fmt_num(r.h_max),
                fmt_num(r.xi[0]),
                fmt_num(r.xi[1]),
                fmt_num(r.navier_min),
                fmt_num(r.collocation_min),
                fmt_opt(r.quasi_collocation_min),
                fmt_num(r.galerkin_min),
                fmt_num(r.generalized_min),
                r.converged.to_string(),
            ]
        })
        .collect();
    let cols = [
        ("delta", "length"),
        ("h_max", "length"),
        ("xi1", "rad"),
        ("xi2", "rad"),
        ("navier_min", "stiffness/length^2"),
        ("collocation_min", "stiffness"),
        ("quasi_collocation_min", "stiffness"),
        ("galerkin_min", "stiffness"),
        ("generalized_min", "-"),
        ("converged", "-"),
    ];
    write_csv(&out.join("symbols.csv"), cfg, &cols, &rows)?;
    let srows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .map(|p| {
            vec![
                fmt_num(p.delta),
                fmt_num(p.h[0]),
                fmt_num(p.h[1]),
                fmt_num(p.navier_min),
                fmt_num(p.collocation_min),
                fmt_opt(p.quasi_collocation_min),
                fmt_num(p.generalized_min),
                p.points.to_string(),
                p.nonconverged.to_string(),
                fmt_num(p.max_last_shell),
            ]
        })
        .collect();
    let scols = [
        ("delta", "length"),
        ("h1", "length"),
        ("h2", "length"),
        ("navier_min", "stiffness/length^2"),
        ("collocation_min", "stiffness"),
        ("quasi_collocation_min", "stiffness"),
        ("c", "-"),
        ("points", "count"),
        ("shell_cap_reached", "count"),
        ("max_last_shell", "-"),
    ];
    write_csv(&out.join("symbols_summary.csv"), cfg, &scols, &srows)?;
    let c = report.constants;
    let _ = writeln!(
        summary,
        "notice: symbol constants from the operator definitions: C_mu = {:.6} (printed C_a mu / d = {:.6}), C_lambda_mu = {:.6} (printed C_b (lambda - mu) = {:.6})",
        c.operator_c_mu, c.printed_c_mu, c.operator_c_lambda_mu, c.printed_c_lambda_mu
    );
    let _ = writeln!(summary, "lambda >= mu: {}", report.lambda_ge_mu);
    for p in &report.pairs {
        let _ = writeln!(
            summary,
            "  delta {:<10} h {:?} min eig M^S {:.3e} M_C {:.3e} M_C^eps {} c {:.6} shell cap reached at {}/{} points (max last shell {:.1e})",
            p.delta,
            p.h,
            p.navier_min,
            p.collocation_min,
            p.quasi_collocation_min.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into()),
            p.generalized_min,
            p.nonconverged,
            p.points,
            p.max_last_shell
        );
    }
    let _ = writeln!(
        summary,
        "all minimum eigenvalues positive: {}; c(delta, h) min/max ratio {:.4}",
        report.all_positive(),
        report.c_ratio()
    );
    Ok(())
}

fn truncation(cfg: &RunConfig, out: &Path, summary: &mut String) -> Result<(), RunError> {
    let opts = TruncationOptions {
        fixed_delta: match cfg.coupling {
            Coupling::FixedDelta(d) => d,
            _ => TruncationOptions::default().fixed_delta,
        },
        m0: cfg.m0,
        epsilon1: cfg.epsilon1,
    };
    let rec = truncation_study(cfg.truncation_field, &cfg.ladder, &study_config(cfg), &opts)?;
    let rows: Vec<Vec<String>> = rec
        .rows
        .iter()
        .map(|r| {
            vec![r.residual.tag().to_string(), fmt_num(r.h_max), fmt_num(r.delta), fmt_num(r.norm), fmt_opt(r.rate)]
        })
        .collect();
    let cols = [("residual", "-"), ("h_max", "length"), ("delta", "length"), ("norm_h", "force*length"), ("rate", "-")];
    write_csv(&out.join("truncation.csv"), cfg, &cols, &rows)?;
    let sync = synchronized_convergence(&cfg.ladder, &cfg.h_hat, cfg.samples, cfg.seed)?;
    let srows: Vec<Vec<String>> = sync
        .iter()
        .map(|r| {
            vec![
                fmt_num(r.h_max),
                r.alpha[0].to_string(),
                r.alpha[1].to_string(),
                fmt_num(r.sup_error),
                fmt_opt(r.rate),
            ]
        })
        .collect();
    let scols = [
        ("h_max", "length"),
        ("alpha1", "-"),
        ("alpha2", "-"),
        ("sup_error", "displacement/length^|alpha|"),
        ("rate", "-"),
    ];
    write_csv(&out.join("synchronized.csv"), cfg, &scols, &srows)?;
    for res in
        [crate::bench::Residual::Uniform, crate::bench::Residual::Asymptotic, crate::bench::Residual::QuasiAsymptotic]
    {
        let _ = writeln!(summary, "residual {} fitted rate {:.4}", res.tag(), rec.slope(res));
    }
    Ok(())
}

/// Full program: parses `args`, sizes the thread pool from `threads`, runs, prints and returns the exit status.
/// Usage line followed by every key and its default.
pub fn help() -> String {
    let mut out = format!("{USAGE}\n\nkeys (default):\n");
    for (key, default) in KEYS {
        let shown = if default.is_empty() { "unset" } else { default };
        out.push_str(&format!("  {key} ({shown})\n"));
    }
    out.push_str("\nenvironment: PERIDYN_THREADS sets the worker thread count\n");
    out
}

pub fn main_with(args: &[String], threads: Option<&str>) -> i32 {
    if args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", help());
        return 0;
    }
    let result = (|| -> Result<String, RunError> {
        if let Some(t) = threads {
            let n: usize = t.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| ConfigError::Precondition {
                key: "PERIDYN_THREADS".into(),
                reason: format!("`{t}` is not a positive integer"),
            })?;
            // The global pool can only be built once per process; later calls keep the first size.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let inv = parse_args(args)?;
        let text = match &inv.config {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| ConfigError::Read { path: p.display().to_string(), reason: e.to_string() })?,
            None => String::new(),
        };
        let cfg = parse_config(inv.command, &text, &inv.overrides)?;
        run(&cfg, &inv.out)
    })();
    match result {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
