//! Configuration-driven experiment runner behind the `eqflux` binary.
//!
//! Every subcommand computes all of its outputs in memory and then writes them
//! into a fresh temporary directory that is renamed onto the output directory,
//! so a failed run leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cases::CaseId;
use crate::constants::{constant_set, constants_table, soundness_check, ConstantSet, InequalityKind};
use crate::counterexample::{check_closed_forms, log_sweep, nonrobustness_study, CounterexampleConfig};
use crate::equilibration::{reconstruct, verify_equilibration};
use crate::error::{Error, Result};
use crate::estimators::{element_weights, estimate, residual_estimate, EstimatorReport};
use crate::fem::{error_energy, galerkin_residual, solve_problem, ErrorMode, ErrorReport, ProblemSpec, Source};
use crate::mesh::{structured_triangle_mesh, uniform_interval_mesh, Mesh};
use crate::poly::l2_project;

#[derive(Parser, Debug)]
#[command(name = "eqflux", version, about = "Equilibrated-flux error estimation for -eps^2 Lap u + kappa^2 u = f")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for random-sampling checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the discrete problem and report the energy error.
    Solve,
    /// Solve, equilibrate and evaluate both estimators.
    Estimate,
    /// Residual estimator only.
    Residual,
    /// Jump-dominated 1D example and non-robustness study.
    Counterexample,
    /// Table of explicit inequality constants.
    Constants(ConstantsArgs),
    /// Refinement or parameter sweep.
    Sweep,
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    #[arg(long, default_value_t = 4)]
    pub p_max: usize,
    #[arg(long, default_value_t = 2)]
    pub d_max: usize,
    /// Shape regularity; defaults to `1 + sqrt(2)`.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Random samples per soundness check; 0 skips the check.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

/// `c x^x y^y`
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub coefficient: f64,
    #[serde(default)]
    pub x: u32,
    #[serde(default)]
    pub y: u32,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ErrorSelector {
    /// Exact when the problem has a closed-form solution, reference otherwise.
    #[default]
    Auto,
    Exact,
    Reference,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub case: Option<CaseId>,
    /// Polynomial source; used when `case` is absent.
    pub source: Option<Vec<PolyTerm>>,
    #[serde(default)]
    pub error: ErrorSelector,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshConfig {
    /// The builtin domain of the configured case.
    Case { n: usize },
    Interval { n: usize, a: f64, b: f64 },
    Rectangle { nx: usize, ny: usize, rect: [f64; 4] },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub dim: Option<usize>,
    pub degree: usize,
    pub mesh: MeshConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentConfig {
    #[default]
    Single,
    /// `levels` uniform refinements of the configured mesh.
    Refinement { levels: usize },
    /// Fixed mesh and κ; ε chosen so that `κ h_min / ε` takes each value.
    Parameter { kappa_h_over_eps: Vec<f64> },
    Counterexample {
        m: Vec<usize>,
        epsilon: f64,
        from_exponent: i32,
        to_exponent: i32,
        #[serde(default = "one")]
        per_decade: usize,
        #[serde(default)]
        exact_error: bool,
    },
}

fn yes() -> bool {
    true
}

fn default_precision() -> usize {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    #[serde(default = "yes")]
    pub csv: bool,
    /// Digits after the decimal point in scientific notation.
    #[serde(default = "default_precision")]
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            csv: true,
            precision: default_precision(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemConfig>,
    pub discretization: Option<DiscretizationConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative mesh paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config { line: None, message: format!("{}: {e}", path.display()) })?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Some(MeshConfig::File { path: mp }) = cfg.discretization.as_mut().map(|d| &mut d.mesh) {
            if mp.is_relative() {
                *mp = path.parent().unwrap_or(Path::new(".")).join(&*mp);
            }
            if !mp.exists() {
                return Err(Error::Config { line: None, message: format!("mesh file {} not found", mp.display()) });
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { line: None, message: m });
        if let Some(p) = &self.problem {
            if !(p.epsilon > 0.0) {
                return bad(format!("epsilon must be positive, got {}", p.epsilon));
            }
            if !(p.kappa >= 0.0) {
                return bad(format!("kappa must be non-negative, got {}", p.kappa));
            }
            if p.case.is_some() == p.source.is_some() {
                return bad("problem needs exactly one of `case` and `source`".into());
            }
            if p.case.is_none() && p.error == ErrorSelector::Exact {
                return bad("exact error requires a builtin case".into());
            }
        }
        if let Some(d) = &self.discretization {
            if !(1..=4).contains(&d.degree) {
                return bad(format!("degree must be in [1, 4], got {}", d.degree));
            }
            if let Some(dim) = d.dim {
                if !(1..=2).contains(&dim) {
                    return bad(format!("dim must be 1 or 2, got {dim}"));
                }
            }
            if matches!(d.mesh, MeshConfig::Case { .. }) && self.problem.as_ref().and_then(|p| p.case).is_none() {
                return bad("mesh kind `case` requires a builtin case".into());
            }
        }
        if self.output.precision > 30 {
            return bad("precision must be at most 30".into());
        }
        Ok(())
    }

    fn problem(&self) -> Result<&ProblemConfig> {
        self.problem
            .as_ref()
            .ok_or_else(|| Error::Config { line: None, message: "missing [problem] section".into() })
    }

    fn discretization(&self) -> Result<&DiscretizationConfig> {
        self.discretization
            .as_ref()
            .ok_or_else(|| Error::Config { line: None, message: "missing [discretization] section".into() })
    }

    fn base_mesh(&self) -> Result<Mesh> {
        let d = self.discretization()?;
        let mesh = match &d.mesh {
            MeshConfig::Case { n } => self.problem()?.case.expect("validated").mesh(*n)?,
            MeshConfig::Interval { n, a, b } => uniform_interval_mesh(*n, (*a, *b))?,
            MeshConfig::Rectangle { nx, ny, rect } => structured_triangle_mesh(*nx, *ny, *rect)?,
            MeshConfig::File { path } => Mesh::read(path)?,
        };
        if let Some(dim) = d.dim {
            if dim != mesh.dim {
                return Err(Error::Config {
                    line: None,
                    message: format!("dim = {dim} but the mesh is {}-dimensional", mesh.dim),
                });
            }
        }
        Ok(mesh)
    }

    fn spec(&self, mesh: &Mesh, epsilon: f64, kappa: f64) -> Result<ProblemSpec> {
        let p = self.problem()?;
        match (&p.case, &p.source) {
            (Some(case), _) => {
                if case.dim() != mesh.dim {
                    return Err(Error::invalid(format!("case {case} needs a {}D mesh", case.dim())));
                }
                case.spec(epsilon, kappa)
            }
            (None, Some(terms)) => {
                let deg = terms.iter().map(|t| (t.x + t.y) as usize).max().unwrap_or(0);
                let terms = terms.clone();
                let f = l2_project(
                    move |x| terms.iter().map(|t| t.coefficient * x[0].powi(t.x as i32) * x[1].powi(t.y as i32)).sum(),
                    mesh,
                    deg,
                    2 * deg,
                )?;
                ProblemSpec::new(epsilon, kappa, Source::Field(f))
            }
            (None, None) => Err(Error::invalid("no source")),
        }
    }

    fn error_mode(&self, spec: &ProblemSpec) -> Result<Option<ErrorMode>> {
        Ok(match self.problem()?.error {
            ErrorSelector::Auto if spec.exact.is_some() => Some(ErrorMode::Exact),
            ErrorSelector::Auto | ErrorSelector::Reference => Some(ErrorMode::Reference),
            ErrorSelector::Exact => Some(ErrorMode::Exact),
            ErrorSelector::None => None,
        })
    }
}

/// In-memory result of one command.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
    manifest: serde_json::Value,
}

impl Outputs {
    fn new(summary: String, manifest: serde_json::Value) -> Self {
        Outputs { files: Vec::new(), summary, manifest }
    }

    fn csv(&mut self, enabled: bool, name: &str, body: Vec<u8>) {
        if enabled {
            self.files.push((name.to_string(), body));
        }
    }
}

struct Fmt(usize);

impl Fmt {
    fn f(&self, x: f64) -> String {
        let p = self.0;
        format!("{x:.p$e}")
    }

    fn o(&self, x: Option<f64>) -> String {
        x.map(|v| self.f(v)).unwrap_or_else(|| "n/a".into())
    }
}

fn theta_of(mesh: &Mesh) -> f64 {
    mesh.shape_regularity().max(1.0)
}

struct SingleRun {
    spec: ProblemSpec,
    constants: ConstantSet,
    report: EstimatorReport,
    equilibration_residual: f64,
    dofs: usize,
}

fn single_run(cfg: &RunConfig, mesh: &Mesh, epsilon: f64, kappa: f64) -> Result<SingleRun> {
    let p = cfg.discretization()?.degree;
    let spec = cfg.spec(mesh, epsilon, kappa)?;
    let sol = solve_problem(mesh, p, &spec)?;
    let constants = constant_set(p, mesh.dim, theta_of(mesh))?;
    let rec = reconstruct(mesh, &sol.u_h, &spec, constants.c_star)?;
    let eq = verify_equilibration(mesh, &rec, &spec)?;
    let error = match cfg.error_mode(&spec)? {
        Some(mode) => Some(error_energy(mesh, &sol.u_h, &spec, mode)?),
        None => None,
    };
    let report = estimate(mesh, &sol.u_h, &rec, &spec, constants.c_star, error)?;
    Ok(SingleRun {
        spec,
        constants,
        report,
        equilibration_residual: eq.relative(),
        dofs: sol.dofmap.n_free,
    })
}

fn efficiency_csv(rep: &EstimatorReport, fmt: &Fmt) -> Vec<u8> {
    let ef = &rep.efficiency;
    let mut s = String::from("element,numerator,residual_neighbourhood,ratio_r,error_neighbourhood,ratio_e\n");
    let na = |r: Option<f64>| r.map(|v| fmt.f(v)).unwrap_or_else(|| "NA".into());
    for e in 0..ef.numerator.len() {
        let en = ef.error_neighbourhood.as_ref().map(|v| fmt.f(v[e])).unwrap_or_default();
        let re = ef.ratio_e.as_ref().map(|v| na(v[e])).unwrap_or_default();
        writeln!(
            s,
            "{e},{},{},{},{en},{re}",
            fmt.f(ef.numerator[e]),
            fmt.f(ef.residual_neighbourhood[e]),
            na(ef.ratio_r[e])
        )
        .unwrap();
    }
    s.into_bytes()
}

fn describe(cfg: &RunConfig, mesh: &Mesh, spec: &ProblemSpec, fmt: &Fmt) -> Result<String> {
    let p = cfg.problem()?;
    let source = p.case.map(|c| c.to_string()).unwrap_or_else(|| "polynomial".into());
    Ok(format!(
        "problem: {source}\ndim: {}\ndegree: {}\nelements: {}\nepsilon: {}\nkappa: {}\n",
        mesh.dim,
        cfg.discretization()?.degree,
        mesh.n_elements(),
        fmt.f(spec.epsilon),
        fmt.f(spec.kappa)
    ))
}

fn error_line(err: &Option<ErrorReport>, fmt: &Fmt) -> String {
    match err {
        Some(e) => format!(
            "error ({}): {}\n",
            serde_json::to_value(e.mode).unwrap().as_str().unwrap_or("?"),
            fmt.f(e.total)
        ),
        None => "error: n/a\n".into(),
    }
}

fn cmd_estimate(cfg: &RunConfig) -> Result<Outputs> {
    let p = cfg.problem()?;
    let mesh = cfg.base_mesh()?;
    let fmt = Fmt(cfg.output.precision);
    let run = single_run(cfg, &mesh, p.epsilon, p.kappa)?;
    let rep = &run.report;
    let mut summary = describe(cfg, &mesh, &run.spec, &fmt)?;
    write!(
        summary,
        "dofs: {}\nc_star: {} (c_div {})\neta: {}\neta_res: {}\n{}effectivity: {}\nmax ratio_R: {}\nmax ratio_E: {}\nequilibration residual: {}\n",
        run.dofs,
        fmt.f(run.constants.c_star),
        serde_json::to_value(run.constants.c_div_provenance).unwrap().as_str().unwrap_or("?"),
        fmt.f(rep.eta()),
        fmt.f(rep.eta_res()),
        error_line(&rep.error, &fmt),
        fmt.o(rep.effectivity()),
        fmt.o(rep.efficiency.max_ratio_r),
        fmt.o(rep.efficiency.max_ratio_e),
        fmt.f(run.equilibration_residual),
    )
    .unwrap();
    let manifest = json!({
        "command": "estimate",
        "config": cfg,
        "constants": run.constants,
        "totals": {
            "eta": rep.eta(),
            "eta_res": rep.eta_res(),
            "error": rep.error.as_ref().map(|e| e.total),
            "error_mode": rep.error.as_ref().map(|e| e.mode),
            "effectivity": rep.effectivity(),
            "max_ratio_r": rep.efficiency.max_ratio_r,
            "max_ratio_e": rep.efficiency.max_ratio_e,
            "unweighted_flux": rep.guaranteed.unweighted_flux_total(),
            "equilibration_residual": run.equilibration_residual,
        },
    });
    let mut out = Outputs::new(summary, manifest);
    let mut est = Vec::new();
    rep.write_csv(&mesh, &mut est, fmt.0)?;
    out.csv(cfg.output.csv, "estimators.csv", est);
    out.csv(cfg.output.csv, "efficiency.csv", efficiency_csv(rep, &fmt));
    Ok(out)
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outputs> {
    let p = cfg.problem()?;
    let mesh = cfg.base_mesh()?;
    let fmt = Fmt(cfg.output.precision);
    let spec = cfg.spec(&mesh, p.epsilon, p.kappa)?;
    let degree = cfg.discretization()?.degree;
    let sol = solve_problem(&mesh, degree, &spec)?;
    let gal = galerkin_residual(&mesh, &spec, &sol.u_h)?;
    let error = match cfg.error_mode(&spec)? {
        Some(mode) => Some(error_energy(&mesh, &sol.u_h, &spec, mode)?),
        None => None,
    };
    let mut summary = describe(cfg, &mesh, &spec, &fmt)?;
    write!(
        summary,
        "dofs: {}\nsolver: {} ({} iterations)\ngalerkin residual: {}\n{}",
        sol.dofmap.n_free,
        sol.stats.method,
        sol.stats.iterations,
        fmt.f(gal),
        error_line(&error, &fmt)
    )
    .unwrap();
    let mut csv = String::from("element,h,error\n");
    for e in 0..mesh.n_elements() {
        let err = error.as_ref().map(|r| fmt.f(r.per_element[e].sqrt())).unwrap_or_default();
        writeln!(csv, "{e},{},{err}", fmt.f(mesh.h[e])).unwrap();
    }
    let manifest = json!({
        "command": "solve",
        "config": cfg,
        "totals": {
            "dofs": sol.dofmap.n_free,
            "galerkin_residual": gal,
            "error": error.as_ref().map(|e| e.total),
            "error_mode": error.as_ref().map(|e| e.mode),
        },
    });
    let mut out = Outputs::new(summary, manifest);
    out.csv(cfg.output.csv, "solution.csv", csv.into_bytes());
    Ok(out)
}

fn cmd_residual(cfg: &RunConfig) -> Result<Outputs> {
    let p = cfg.problem()?;
    let mesh = cfg.base_mesh()?;
    let fmt = Fmt(cfg.output.precision);
    let spec = cfg.spec(&mesh, p.epsilon, p.kappa)?;
    let degree = cfg.discretization()?.degree;
    let sol = solve_problem(&mesh, degree, &spec)?;
    let constants = constant_set(degree, mesh.dim, theta_of(&mesh))?;
    let weights = element_weights(&mesh, &spec, constants.c_star);
    let res = residual_estimate(&mesh, &sol.u_h, &spec, &weights)?;
    let mut summary = describe(cfg, &mesh, &spec, &fmt)?;
    write!(
        summary,
        "eta_res: {}\nresidual sum: {}\njump sum: {}\n",
        fmt.f(res.eta_res),
        fmt.f(res.residual_sum),
        fmt.f(res.jump_sum)
    )
    .unwrap();
    let mut csv = String::from("element,h,alpha,residual,face_jump_sq\n");
    for e in 0..mesh.n_elements() {
        writeln!(
            csv,
            "{e},{},{},{},{}",
            fmt.f(mesh.h[e]),
            fmt.f(weights.alpha[e]),
            fmt.f(res.element[e]),
            fmt.f(res.face_share(&mesh, e))
        )
        .unwrap();
    }
    writeln!(csv, "total,,,{},{}", fmt.f(res.residual_sum.sqrt()), fmt.f(res.jump_sum)).unwrap();
    let manifest = json!({
        "command": "residual",
        "config": cfg,
        "totals": {"eta_res": res.eta_res, "residual_sum": res.residual_sum, "jump_sum": res.jump_sum},
    });
    let mut out = Outputs::new(summary, manifest);
    out.csv(cfg.output.csv, "residual.csv", csv.into_bytes());
    Ok(out)
}

fn cmd_counterexample(cfg: &RunConfig) -> Result<Outputs> {
    let fmt = Fmt(cfg.output.precision);
    let (ms, eps, from, to, per, exact) = match &cfg.experiment {
        ExperimentConfig::Counterexample {
            m,
            epsilon,
            from_exponent,
            to_exponent,
            per_decade,
            exact_error,
        } => (m.clone(), *epsilon, *from_exponent, *to_exponent, *per_decade, *exact_error),
        ExperimentConfig::Single => (vec![7, 15, 31], 1e-4, 3, 6, 1, false),
        _ => return Err(Error::invalid("counterexample needs experiment kind `counterexample`")),
    };
    if from > to {
        return Err(Error::invalid("from_exponent must not exceed to_exponent"));
    }
    let points = log_sweep(eps, &ms, from, to, per);
    let study = nonrobustness_study(eps, &points, exact)?;
    let mut summary = format!("counterexample: epsilon {}\n", fmt.f(eps));
    let mut checks = Vec::new();
    for &m in &ms {
        let kappa = points.iter().find(|(mm, _)| *mm == m).map(|p| p.1).unwrap_or(1.0);
        let c = check_closed_forms(&CounterexampleConfig::new(m, eps, kappa)?)?;
        writeln!(
            summary,
            "m={m}: solution {} mu identity {} trig sum {} jump {}",
            fmt.f(c.solution),
            fmt.f(c.mu_identity),
            fmt.f(c.trig_sum),
            fmt.f(c.jump)
        )
        .unwrap();
        checks.push(json!({"m": m, "kappa": kappa, "check": c}));
    }
    summary.push_str(&study.summary());
    let manifest = json!({
        "command": "counterexample",
        "config": cfg,
        "closed_form_checks": checks,
        "totals": {
            "slope_unweighted": study.slope_unweighted,
            "slope_weighted": study.slope_weighted,
            "slope_eta": study.slope_eta,
            "decades": study.decades,
            "max_dominance": study.max_dominance,
            "excluded": study.excluded,
        },
    });
    let mut out = Outputs::new(summary, manifest);
    let mut csv = Vec::new();
    study.write_csv(&mut csv, fmt.0)?;
    out.csv(cfg.output.csv, "counterexample.csv", csv);
    Ok(out)
}

fn cmd_constants(cfg: &RunConfig, args: &ConstantsArgs, seed: u64) -> Result<Outputs> {
    let fmt = Fmt(cfg.output.precision);
    let theta = args.theta.unwrap_or(1.0 + std::f64::consts::SQRT_2);
    if args.p_max > 8 || args.d_max == 0 || args.d_max > 3 {
        return Err(Error::invalid("constants table supports p <= 8 and 1 <= d <= 3"));
    }
    let ps: Vec<usize> = (0..=args.p_max).collect();
    let ds: Vec<usize> = (1..=args.d_max).collect();
    let rows = constants_table(&ps, &ds, theta)?;
    let mut csv = String::from(
        "p,d,theta,c_tr,c_face,c_div,c_div_formula,c_div_provenance,c_star,oracle_derivative,formula_derivative,oracle_div,oracle_trace,oracle_below_formula,anomaly\n",
    );
    let mut summary = format!("theta: {}\n{:>2} {:>2} {:>12} {:>12} {:>12} {:>12}  provenance  anomaly\n", fmt.f(theta), "p", "d", "C_Tr", "C_face", "C_div", "C_*");
    for r in &rows {
        let s = &r.set;
        let prov = serde_json::to_value(s.c_div_provenance).unwrap().as_str().unwrap_or("?").to_string();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{prov},{},{},{},{},{},{},{}",
            r.p,
            r.d,
            fmt.f(r.theta),
            fmt.f(s.c_tr),
            fmt.f(s.c_face),
            fmt.f(s.c_div),
            fmt.f(s.c_div_formula),
            fmt.f(s.c_star),
            fmt.f(r.oracle_derivative),
            fmt.f(r.formula_derivative),
            fmt.o(r.oracle_div),
            fmt.o(r.oracle_trace),
            r.oracle_below_formula,
            r.anomaly
        )
        .unwrap();
        writeln!(
            summary,
            "{:>2} {:>2} {:>12.5} {:>12.5} {:>12.5} {:>12.5}  {prov:<10}  {}",
            r.p,
            r.d,
            s.c_tr,
            s.c_face,
            s.c_div,
            s.c_star,
            if r.anomaly { "yes" } else { "" }
        )
        .unwrap();
    }
    let manifest_rows = rows.clone();
    let mut out = Outputs::new(summary, serde_json::Value::Null);
    out.csv(cfg.output.csv, "constants.csv", csv.into_bytes());
    let mut soundness = Vec::new();
    if args.samples > 0 {
        let jobs: Vec<(InequalityKind, usize, usize)> = [InequalityKind::Trace, InequalityKind::FaceInverse, InequalityKind::DivInverse]
            .into_iter()
            .flat_map(|k| ds.iter().filter(|&&d| d <= 2).flat_map(|&d| ps.iter().map(move |&p| (k, d, p))).collect::<Vec<_>>())
            .collect();
        soundness = jobs
            .par_iter()
            .map(|&(k, d, p)| soundness_check(k, d, p, args.samples, seed))
            .collect::<Result<Vec<_>>>()?;
        let mut s = String::from("kind,dim,p,samples,violations,max_ratio\n");
        let mut total = 0;
        for r in &soundness {
            let kind = serde_json::to_value(r.kind).unwrap().as_str().unwrap_or("?").to_string();
            writeln!(s, "{kind},{},{},{},{},{}", r.dim, r.p, r.samples, r.violations, fmt.f(r.max_ratio)).unwrap();
            total += r.violations;
        }
        writeln!(out.summary, "soundness: {} checks, {total} violations (seed {seed})", soundness.len()).unwrap();
        out.csv(cfg.output.csv, "soundness.csv", s.into_bytes());
    }
    out.manifest = json!({
        "command": "constants",
        "config": cfg,
        "theta": theta,
        "seed": seed,
        "rows": manifest_rows,
        "soundness": soundness,
    });
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    index: usize,
    elements: usize,
    h_min: f64,
    epsilon: f64,
    kappa: f64,
    kappa_h_over_eps: f64,
    eta: f64,
    eta_res: f64,
    error: Option<f64>,
    effectivity: Option<f64>,
    max_ratio_r: Option<f64>,
    max_ratio_e: Option<f64>,
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Outputs> {
    let p = cfg.problem()?;
    let fmt = Fmt(cfg.output.precision);
    let base = cfg.base_mesh()?;
    let jobs: Vec<(Mesh, f64, f64)> = match &cfg.experiment {
        ExperimentConfig::Refinement { levels } => {
            let mut meshes = vec![base];
            for _ in 0..*levels {
                let next = meshes.last().expect("nonempty").refine_uniform()?.0;
                meshes.push(next);
            }
            meshes.into_iter().map(|m| (m, p.epsilon, p.kappa)).collect()
        }
        ExperimentConfig::Parameter { kappa_h_over_eps } => {
            if p.kappa <= 0.0 {
                return Err(Error::invalid("parameter sweep needs kappa > 0"));
            }
            let h = base.min_h();
            kappa_h_over_eps
                .iter()
                .map(|&t| {
                    if t > 0.0 {
                        Ok((base.clone(), p.kappa * h / t, p.kappa))
                    } else {
                        Err(Error::invalid(format!("kappa_h_over_eps must be positive, got {t}")))
                    }
                })
                .collect::<Result<_>>()?
        }
        _ => return Err(Error::invalid("sweep needs experiment kind `refinement` or `parameter`")),
    };
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(index, (mesh, eps, kappa))| {
            let run = single_run(cfg, mesh, *eps, *kappa)?;
            let rep = &run.report;
            Ok(SweepRow {
                index,
                elements: mesh.n_elements(),
                h_min: mesh.min_h(),
                epsilon: *eps,
                kappa: *kappa,
                kappa_h_over_eps: kappa * mesh.min_h() / eps,
                eta: rep.eta(),
                eta_res: rep.eta_res(),
                error: rep.error.as_ref().map(|e| e.total),
                effectivity: rep.effectivity(),
                max_ratio_r: rep.efficiency.max_ratio_r,
                max_ratio_e: rep.efficiency.max_ratio_e,
            })
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from(
        "index,elements,h_min,epsilon,kappa,kappa_h_over_eps,eta,eta_res,error,effectivity,max_ratio_r,max_ratio_e\n",
    );
    let na = |x: Option<f64>| x.map(|v| fmt.f(v)).unwrap_or_else(|| "NA".into());
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.elements,
            fmt.f(r.h_min),
            fmt.f(r.epsilon),
            fmt.f(r.kappa),
            fmt.f(r.kappa_h_over_eps),
            fmt.f(r.eta),
            fmt.f(r.eta_res),
            na(r.error),
            na(r.effectivity),
            na(r.max_ratio_r),
            na(r.max_ratio_e)
        )
        .unwrap();
    }
    let mut summary = format!("sweep: {} points\n", rows.len());
    let effs: Vec<f64> = rows.iter().filter_map(|r| r.effectivity).collect();
    if effs.len() == rows.len() && !effs.is_empty() {
        let (lo, hi) = effs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        writeln!(summary, "effectivity: min {} max {}", fmt.f(lo), fmt.f(hi)).unwrap();
    }
    let manifest = json!({"command": "sweep", "config": cfg, "rows": rows});
    let mut out = Outputs::new(summary, manifest);
    out.csv(cfg.output.csv, "sweep.csv", csv.into_bytes());
    Ok(out)
}

/// Replaces `dir` by a directory holding exactly `files`. An existing `dir`
/// is only replaced when it is empty or holds a previous `manifest.json`.
fn write_atomic(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    if dir.exists() {
        let ours = dir.join("manifest.json").exists() || fs::read_dir(dir)?.next().is_none();
        if !ours {
            return Err(Error::invalid(format!(
                "refusing to replace {}: not an eqflux output directory",
                dir.display()
            )));
        }
    }
    let tmp = tempfile::Builder::new().prefix(".eqflux-").tempdir_in(&parent)?;
    for (name, body) in files {
        fs::write(tmp.path().join(name), body)?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    let kept = tmp.keep();
    if let Err(e) = fs::rename(&kept, dir) {
        let _ = fs::remove_dir_all(&kept);
        return Err(e.into());
    }
    Ok(())
}

fn load(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None if matches!(cli.command, Command::Constants(_) | Command::Counterexample) => Ok(RunConfig::default()),
        None => Err(Error::Config { line: None, message: "--config is required for this command".into() }),
    }
}

/// Runs one command and returns the summary text.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = load(cli)?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from("eqflux-out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let out = pool.install(|| match &cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Estimate => cmd_estimate(&cfg),
        Command::Residual => cmd_residual(&cfg),
        Command::Counterexample => cmd_counterexample(&cfg),
        Command::Constants(args) => cmd_constants(&cfg, args, cli.seed),
        Command::Sweep => cmd_sweep(&cfg),
    })?;
    let mut files = out.files;
    files.push(("summary.txt".into(), out.summary.clone().into_bytes()));
    let manifest = serde_json::to_vec_pretty(&out.manifest).map_err(|e| Error::invalid(e.to_string()))?;
    files.push(("manifest.json".into(), manifest));
    write_atomic(&out_dir, &files)?;
    Ok(out.summary)
}
