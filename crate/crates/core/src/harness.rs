//! Study configurations, single runs, convergence studies and their CSV
//! and JSON reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{convergence_rates, error_energy, max_velocity_norm, ErrorReport};
use crate::assembly::{default_penalty, DEFAULT_SAFEGUARD};
use crate::error::{Error, Result};
use crate::manufactured::{manufactured_case, ManufacturedCase};
use crate::mesh::{Mesh, Point};
use crate::solver::{run, Problem, Scheme, SolverConfig, Trajectory};
use crate::spaces::Vec2;
use crate::timedisc::TimeGrid;

/// A structured `n x n` mesh, or a mesh file (`.json`, or a Triangle
/// `.node`/`.ele` pair given by either file or their common stem).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSpec {
    Structured(usize),
    File(PathBuf),
}

impl MeshSpec {
    pub fn load(&self) -> Result<Mesh> {
        match self {
            MeshSpec::Structured(n) => Mesh::structured(*n),
            MeshSpec::File(path) => {
                if path.extension().is_some_and(|e| e == "json") {
                    return Mesh::from_json(&std::fs::read_to_string(path)?);
                }
                let node = path.with_extension("node");
                let ele = path.with_extension("ele");
                Mesh::from_triangle(&std::fs::read_to_string(node)?, &std::fs::read_to_string(ele)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    #[default]
    SpaceTime,
    TimeOnly,
    NuSweep,
}

impl std::str::FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space_time" => Ok(StudyMode::SpaceTime),
            "time_only" => Ok(StudyMode::TimeOnly),
            "nu_sweep" => Ok(StudyMode::NuSweep),
            _ => Err(Error::Config(format!("unknown study mode {s:?}"))),
        }
    }
}

/// Error quantities that carry rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    ErrU,
    LinfL2,
    ANorm,
    GammaJump,
    PFinal,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [Quantity::ErrU, Quantity::LinfL2, Quantity::ANorm, Quantity::GammaJump, Quantity::PFinal];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::ErrU => "err_u",
            Quantity::LinfL2 => "linf_l2",
            Quantity::ANorm => "a_norm",
            Quantity::GammaJump => "gamma_jump",
            Quantity::PFinal => "p_final",
        }
    }

    pub fn of(self, r: &ErrorReport) -> f64 {
        match self {
            Quantity::ErrU => r.err_u,
            Quantity::LinfL2 => r.linf_l2_velocity,
            Quantity::ANorm => r.a_norm_sq_weighted.max(0.0).sqrt(),
            Quantity::GammaJump => r.gamma_jump_sq.max(0.0).sqrt(),
            Quantity::PFinal => r.pressure_l2_final,
        }
    }
}

/// `err_u` must vary by less than `max_variation` (relative to its minimum)
/// over the runs with `nu <= max_nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauCheck {
    pub max_nu: f64,
    pub max_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    pub linear_solver_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = SolverConfig::default();
        Tolerances {
            fixed_point_tol: d.fixed_point_tol,
            max_fixed_point_iters: d.max_fixed_point_iters,
            linear_solver_tol: d.linear_solver_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case: String,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub k: usize,
    #[serde(default)]
    pub ell: Option<usize>,
    pub nu: OneOrMany,
    pub meshes: Vec<MeshSpec>,
    pub taus: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_safeguard")]
    pub safeguard: f64,
    #[serde(default)]
    pub solver: Tolerances,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode: Option<StudyMode>,
    /// Expected rate bands per quantity, checked on the last `band_levels`
    /// rates.
    #[serde(default)]
    pub bands: BTreeMap<Quantity, [f64; 2]>,
    #[serde(default = "default_band_levels")]
    pub band_levels: usize,
    #[serde(default)]
    pub plateau: Option<PlateauCheck>,
    /// Adds the gradient of a smooth potential to the forcing.
    #[serde(default)]
    pub gradient_forcing: bool,
    /// Record wall time; when false the column is written as 0 so that
    /// repeated studies give identical bytes.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_scheme() -> Scheme {
    Scheme::FullyImplicit
}

fn default_t_end() -> f64 {
    1.0
}

fn default_safeguard() -> f64 {
    DEFAULT_SAFEGUARD
}

fn default_band_levels() -> usize {
    2
}

fn default_true() -> bool {
    true
}

/// `grad phi` for `phi = sin(pi x) sin(pi y) (1 + t)`.
pub fn smooth_gradient(x: Point, t: f64) -> Vec2 {
    use std::f64::consts::PI;
    let a = PI * (1.0 + t);
    [a * (PI * x[0]).cos() * (PI * x[1]).sin(), a * (PI * x[0]).sin() * (PI * x[1]).cos()]
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn ell(&self) -> usize {
        self.ell.unwrap_or(self.k)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| default_penalty(self.k))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            fixed_point_tol: self.solver.fixed_point_tol,
            max_fixed_point_iters: self.solver.max_fixed_point_iters,
            linear_solver_tol: self.solver.linear_solver_tol,
            scheme: self.scheme,
            safeguard: self.safeguard,
            penalty: Some(self.sigma()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.case.parse::<crate::manufactured::CaseKind>()?;
        if !(1..=2).contains(&self.k) {
            return Err(Error::Config(format!("k must be 1 or 2, got {}", self.k)));
        }
        if self.meshes.is_empty() || self.taus.is_empty() {
            return Err(Error::Config("at least one mesh and one time step are required".into()));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("time steps must be positive, got {t}")));
        }
        let nus = self.nu.values();
        if nus.is_empty() {
            return Err(Error::Config("at least one viscosity is required".into()));
        }
        if let Some(v) = nus.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("viscosities must be positive, got {v}")));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        for b in self.bands.values() {
            if !(b[0] <= b[1]) {
                return Err(Error::Config(format!("rate band [{}, {}] is empty", b[0], b[1])));
            }
        }
        self.solver_config().validate()
    }

    /// Discretization levels `(mesh, tau, nu)` of a study mode.
    pub fn levels(&self, mode: StudyMode) -> Result<Vec<(MeshSpec, f64, f64)>> {
        let nus = self.nu.values();
        let single = |what: &str, n: usize| {
            if n == 1 {
                Ok(())
            } else {
                Err(Error::Config(format!("{mode:?} needs exactly one {what}, got {n}")))
            }
        };
        let out: Vec<(MeshSpec, f64, f64)> = match mode {
            StudyMode::SpaceTime => {
                single("viscosity", nus.len())?;
                if self.meshes.len() != self.taus.len() {
                    return Err(Error::Config(format!(
                        "paired refinement needs as many meshes as time steps ({} vs {})",
                        self.meshes.len(),
                        self.taus.len()
                    )));
                }
                self.meshes.iter().zip(&self.taus).map(|(m, &t)| (m.clone(), t, nus[0])).collect()
            }
            StudyMode::TimeOnly => {
                single("viscosity", nus.len())?;
                single("mesh", self.meshes.len())?;
                self.taus.iter().map(|&t| (self.meshes[0].clone(), t, nus[0])).collect()
            }
            StudyMode::NuSweep => {
                single("mesh", self.meshes.len())?;
                single("time step", self.taus.len())?;
                nus.iter().map(|&nu| (self.meshes[0].clone(), self.taus[0], nu)).collect()
            }
        };
        Ok(out)
    }
}

/// Result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub scheme: Scheme,
    pub k: usize,
    pub ell: usize,
    pub nu: f64,
    pub h: f64,
    pub tau: f64,
    pub report: ErrorReport,
    pub fixed_point_iterations: Vec<usize>,
    pub fp_iters_total: usize,
    pub linear_iterations_total: usize,
    pub max_velocity: f64,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Whether `max |div u_h| <= 1e-9 max |u_h|`.
    pub fn solenoidal(&self) -> bool {
        self.report.max_divergence <= 1e-9 * self.max_velocity.max(f64::MIN_POSITIVE)
    }
}

/// A finished run with everything needed for further comparisons.
pub struct Simulation {
    pub problem: Problem,
    pub case: ManufacturedCase,
    pub trajectory: Trajectory,
    pub record: RunRecord,
}

/// Runs one discretization level of `config`.
pub fn simulate(config: &StudyConfig, mesh: &MeshSpec, tau: f64, nu: f64) -> Result<Simulation> {
    let start = Instant::now();
    let mesh = Arc::new(mesh.load()?);
    let grid = TimeGrid::with_step(config.t_end, tau, config.ell())?;
    let mut case = manufactured_case(&config.case, nu)?;
    if config.gradient_forcing {
        case = case.with_gradient_forcing(smooth_gradient);
    }
    let h = mesh.h();
    let problem = Problem::new(mesh, config.k, grid, nu, config.sigma(), Arc::new(case.clone()))?;
    let trajectory = run(&problem, &config.solver_config())?;
    let report = error_energy(&problem, &trajectory, &case);
    let iterations = trajectory.fixed_point_iterations();
    let record = RunRecord {
        case: config.case.clone(),
        scheme: config.scheme,
        k: config.k,
        ell: config.ell(),
        nu,
        h,
        tau,
        max_velocity: max_velocity_norm(&problem, &trajectory),
        fp_iters_total: iterations.iter().sum(),
        fixed_point_iterations: iterations,
        linear_iterations_total: trajectory.slabs.iter().map(|s| s.linear_iterations).sum(),
        report,
        wall_seconds: if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
    };
    if !record.solenoidal() {
        log::warn!("max |div u_h| = {:e} exceeds 1e-9 |u_h|", record.report.max_divergence);
    }
    Ok(Simulation { problem, case, trajectory, record })
}

/// Runs a configuration with exactly one mesh, time step and viscosity.
pub fn run_single(config: &StudyConfig) -> Result<RunRecord> {
    config.validate()?;
    let nus = config.nu.values();
    if config.meshes.len() != 1 || config.taus.len() != 1 || nus.len() != 1 {
        return Err(Error::Config("a single run needs exactly one mesh, time step and viscosity".into()));
    }
    simulate(config, &config.meshes[0], config.taus[0], nus[0]).map(|s| s.record)
}

/// Rates between consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub level: usize,
    pub size_from: f64,
    pub size_to: f64,
    pub rates: BTreeMap<Quantity, f64>,
}

/// One pass/fail check of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: Vec<f64>,
    pub expected: [f64; 2],
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub mode: StudyMode,
    pub runs: Vec<RunRecord>,
    pub rates: Vec<RateRow>,
    pub checks: Vec<Check>,
    /// Error that stopped the study early; earlier levels are kept.
    pub failure: Option<String>,
}

impl Study {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checks.iter().all(|c| c.passed)
    }
}

/// Rates of every quantity; sizes are `h` for paired refinement and `tau`
/// for time-only studies.
pub fn study_rates(mode: StudyMode, runs: &[RunRecord]) -> Result<Vec<RateRow>> {
    if mode == StudyMode::NuSweep || runs.len() < 2 {
        return Ok(Vec::new());
    }
    let sizes: Vec<f64> = runs.iter().map(|r| if mode == StudyMode::TimeOnly { r.tau } else { r.h }).collect();
    let mut rows: Vec<RateRow> = (0..runs.len() - 1)
        .map(|i| RateRow { level: i + 1, size_from: sizes[i], size_to: sizes[i + 1], rates: BTreeMap::new() })
        .collect();
    for q in Quantity::ALL {
        let errors: Vec<f64> = runs.iter().map(|r| q.of(&r.report)).collect();
        if errors.iter().all(|e| *e > 0.0) {
            for (row, rate) in rows.iter_mut().zip(convergence_rates(&errors, &sizes)?) {
                row.rates.insert(q, rate);
            }
        }
    }
    Ok(rows)
}

fn band_checks(config: &StudyConfig, rates: &[RateRow]) -> Vec<Check> {
    config
        .bands
        .iter()
        .map(|(q, band)| {
            let observed: Vec<f64> = rates
                .iter()
                .rev()
                .take(config.band_levels)
                .rev()
                .map(|r| r.rates.get(q).copied().unwrap_or(f64::NAN))
                .collect();
            let passed = observed.len() == config.band_levels.min(rates.len())
                && !observed.is_empty()
                && observed.iter().all(|r| *r >= band[0] && *r <= band[1]);
            Check { name: format!("{} rate", q.name()), observed, expected: *band, passed }
        })
        .collect()
}

fn plateau_check(p: &PlateauCheck, runs: &[RunRecord]) -> Check {
    let errs: Vec<f64> = runs.iter().filter(|r| r.nu <= p.max_nu).map(|r| r.report.err_u).collect();
    let lo = errs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errs.iter().copied().fold(0.0, f64::max);
    let variation = (hi - lo) / lo;
    Check {
        name: format!("err_u variation for nu <= {:e}", p.max_nu),
        observed: vec![variation],
        expected: [0.0, p.max_variation],
        passed: !errs.is_empty() && variation < p.max_variation,
    }
}

/// Runs every level of a study in configuration order.
pub fn run_convergence(config: &StudyConfig, mode: StudyMode) -> Result<Study> {
    config.validate()?;
    let levels = config.levels(mode)?;
    if levels.len() < 2 {
        return Err(Error::Config("a study needs at least two levels".into()));
    }
    let mut runs = Vec::with_capacity(levels.len());
    let mut failure = None;
    for (mesh, tau, nu) in &levels {
        match simulate(config, mesh, *tau, *nu) {
            Ok(s) => runs.push(s.record),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let rates = study_rates(mode, &runs)?;
    let mut checks = band_checks(config, &rates);
    if let (StudyMode::NuSweep, Some(p)) = (mode, &config.plateau) {
        checks.push(plateau_check(p, &runs));
    }
    Ok(Study { mode, runs, rates, checks, failure })
}

pub const CSV_HEADER: [&str; 15] = [
    "case",
    "scheme",
    "k",
    "ell",
    "nu",
    "h",
    "tau",
    "err_u",
    "linf_l2",
    "a_norm",
    "gamma_jump",
    "p_final",
    "max_div",
    "fp_iters_total",
    "wall_seconds",
];

/// One CSV row per run.
pub fn write_runs_csv(out: impl Write, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in runs {
        let rep = &r.report;
        w.write_record([
            r.case.clone(),
            r.scheme.name().to_string(),
            r.k.to_string(),
            r.ell.to_string(),
            r.nu.to_string(),
            r.h.to_string(),
            r.tau.to_string(),
            rep.err_u.to_string(),
            rep.linf_l2_velocity.to_string(),
            Quantity::ANorm.of(rep).to_string(),
            Quantity::GammaJump.of(rep).to_string(),
            rep.pressure_l2_final.to_string(),
            rep.max_divergence.to_string(),
            r.fp_iters_total.to_string(),
            r.wall_seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per consecutive pair of levels.
pub fn write_rates_csv(out: impl Write, rates: &[RateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["level".to_string(), "size_from".into(), "size_to".into()];
    header.extend(Quantity::ALL.iter().map(|q| q.name().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rates {
        let mut row = vec![r.level.to_string(), r.size_from.to_string(), r.size_to.to_string()];
        row.extend(Quantity::ALL.iter().map(|q| r.rates.get(q).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary of a study.
pub fn summary(study: &Study) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode: {:?}, {} run(s)", study.mode, study.runs.len());
    for r in &study.runs {
        let _ = writeln!(
            s,
            "  h={:.4e} tau={:.4e} nu={:.1e}: err_u={:.4e} linf_l2={:.4e} p_final={:.4e} max_div={:.1e} fp_iters={}",
            r.h, r.tau, r.nu, r.report.err_u, r.report.linf_l2_velocity, r.report.pressure_l2_final, r.report.max_divergence, r.fp_iters_total
        );
    }
    for r in &study.rates {
        let parts: Vec<String> = r.rates.iter().map(|(q, v)| format!("{}={v:.3}", q.name())).collect();
        let _ = writeln!(s, "  rates {}->{}: {}", r.level, r.level + 1, parts.join(" "));
    }
    for c in &study.checks {
        let _ = writeln!(
            s,
            "  [{}] {}: observed {:?}, expected [{}, {}]",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.observed,
            c.expected[0],
            c.expected[1]
        );
    }
    if let Some(f) = &study.failure {
        let _ = writeln!(s, "  aborted: {f}");
    }
    s
}

/// Writes `runs.csv`, `rates.csv`, `report.json` and `summary.txt` to `dir`.
pub fn emit_report(study: &Study, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    write_runs_csv(std::fs::File::create(dir.join("runs.csv"))?, &study.runs)?;
    if !study.rates.is_empty() {
        write_rates_csv(std::fs::File::create(dir.join("rates.csv"))?, &study.rates)?;
    }
    let json = serde_json::to_string_pretty(study).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)?;
    let text = summary(study);
    std::fs::write(dir.join("summary.txt"), &text)?;
    Ok(text)
}

/// A row of a runs CSV, as read back by `rates_from_csv`.
#[derive(Debug, Clone, Deserialize)]
struct CsvRow {
    h: f64,
    tau: f64,
    err_u: f64,
    linf_l2: f64,
    a_norm: f64,
    gamma_jump: f64,
    p_final: f64,
}

/// Rates of a runs CSV; sizes are `h` unless all rows share one `h`.
pub fn rates_from_csv(input: impl std::io::Read) -> Result<Vec<RateRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows: Vec<CsvRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() })?;
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("rates need at least two rows".into()));
    }
    let time_only = rows.windows(2).all(|w| w[0].h == w[1].h);
    let sizes: Vec<f64> = rows.iter().map(|r| if time_only { r.tau } else { r.h }).collect();
    let mut out: Vec<RateRow> = (0..rows.len() - 1)
        .map(|i| RateRow { level: i + 1, size_from: sizes[i], size_to: sizes[i + 1], rates: BTreeMap::new() })
        .collect();
    let columns: [(Quantity, fn(&CsvRow) -> f64); 5] = [
        (Quantity::ErrU, |r| r.err_u),
        (Quantity::LinfL2, |r| r.linf_l2),
        (Quantity::ANorm, |r| r.a_norm),
        (Quantity::GammaJump, |r| r.gamma_jump),
        (Quantity::PFinal, |r| r.p_final),
    ];
    for (q, get) in columns {
        let errors: Vec<f64> = rows.iter().map(get).collect();
        if errors.iter().all(|e| *e > 0.0) {
            for (row, rate) in out.iter_mut().zip(convergence_rates(&errors, &sizes)?) {
                row.rates.insert(q, rate);
            }
        }
    }
    Ok(out)
}

/// Caps the global thread pool at `NSDG_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NSDG_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("NSDG_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("NSDG_THREADS must be at least 1".into()));
        }
        // a pool may already exist when called twice; keep the first one
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> StudyConfig {
        StudyConfig::from_json(json).unwrap()
    }

    #[test]
    fn parses_and_validates() {
        let c = config(r#"{"case": "sol1", "k": 1, "nu": [1.0, 0.1], "meshes": [8], "taus": [0.25]}"#);
        assert_eq!(c.ell(), 1);
        assert_eq!(c.sigma(), 10.0);
        assert_eq!(c.levels(StudyMode::NuSweep).unwrap().len(), 2);
        assert!(c.levels(StudyMode::SpaceTime).is_err());
        for bad in [
            r#"{"case": "sol9", "k": 1, "nu": 1, "meshes": [8], "taus": [0.25]}"#,
            r#"{"case": "sol1", "k": 3, "nu": 1, "meshes": [8], "taus": [0.25]}"#,
            r#"{"case": "sol1", "k": 1, "nu": 1, "meshes": [8], "taus": [-0.25]}"#,
            r#"{"case": "sol1", "k": 1, "nu": 1, "meshes": [8], "taus": [0.25], "extra": 1}"#,
        ] {
            assert!(StudyConfig::from_json(bad).is_err(), "{bad}");
        }
        let c = config(r#"{"case": "sol1", "k": 2, "nu": 1e-5, "meshes": [4, 8], "taus": [0.5], "mode": "space_time"}"#);
        assert!(c.levels(StudyMode::SpaceTime).is_err());
        let c = config(r#"{"case": "sol1", "k": 1, "nu": 1, "meshes": ["grid.json"], "taus": [0.5, 0.25], "bands": {"err_u": [1.7, 2.3]}}"#);
        assert_eq!(c.meshes[0], MeshSpec::File("grid.json".into()));
        assert_eq!(c.bands[&Quantity::ErrU], [1.7, 2.3]);
    }

    #[test]
    fn zero_case_single_run() {
        let c = config(r#"{"case": "zero", "k": 1, "nu": 1, "meshes": [2], "taus": [0.5]}"#);
        let r = run_single(&c).unwrap();
        assert_eq!(r.report.err_u, 0.0);
        assert_eq!(r.report.pressure_l2_final, 0.0);
        assert_eq!(r.fixed_point_iterations, vec![1, 1]);
    }

    #[test]
    fn csv_layout_and_determinism() {
        let c = config(r#"{"case": "sol1", "k": 1, "nu": 1, "meshes": [2, 3], "taus": [0.5, 0.25], "record_timing": false}"#);
        let s1 = run_convergence(&c, StudyMode::SpaceTime).unwrap();
        let s2 = run_convergence(&c, StudyMode::SpaceTime).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_runs_csv(&mut a, &s1.runs).unwrap();
        write_runs_csv(&mut b, &s2.runs).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        let mut rates = Vec::new();
        write_rates_csv(&mut rates, &s1.rates).unwrap();
        assert_eq!(String::from_utf8(rates).unwrap().lines().count(), 2);
        let back = rates_from_csv(a.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        let direct = s1.rates[0].rates[&Quantity::ErrU];
        assert!((back[0].rates[&Quantity::ErrU] - direct).abs() < 1e-12);
    }

    #[test]
    fn smooth_gradient_is_a_gradient() {
        // curl of a gradient vanishes
        let h = 1e-5;
        for &(x, y) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.1)] {
            let dy = (smooth_gradient([x, y + h], 0.3)[0] - smooth_gradient([x, y - h], 0.3)[0]) / (2.0 * h);
            let dx = (smooth_gradient([x + h, y], 0.3)[1] - smooth_gradient([x - h, y], 0.3)[1]) / (2.0 * h);
            assert!((dx - dy).abs() < 1e-8);
        }
    }
}
