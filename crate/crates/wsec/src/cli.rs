//! Command-line front end. [`run`] parses arguments, merges them over an
//! optional JSON configuration, runs one computation and writes a
//! `wsec-report/1` JSON report.
//!
//! Exit codes: 0 when every verdict passed, 1 when a verdict failed, 2 on
//! configuration, domain or hypothesis errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{self, DensityFamily, OptimizerOptions, SampleBudget};
use crate::catalog;
use crate::comparison::{self, BoundSide, CheckOptions, ComparisonVerdict, ConvexityOptions, CurvatureBound, HessianOptions, MyersOptions};
use crate::error::{Result, WsecError};
use crate::expr::{parse_immersion, InlineSpec};
use crate::geodesic::{self, c_exp, GeodesicOptions, GeodesicTrajectory, JacobiTrajectory, ShootingOptions};
use crate::manifold::{self, CurvatureRoute, MetricDensitySpec};
use crate::ode::OdeOptions;
use crate::tube::{self, ImmersedSubmanifold, RadiusKind, TubeOptions};

pub const SCHEMA_VERSION: &str = "wsec-report/1";

#[derive(Parser, Debug)]
#[command(name = "wsec", version, about = "Numerical experiments on manifolds with density")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Catalog space name.
    #[arg(long, global = true)]
    pub space: Option<String>,
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Report path; CSV sidecars are written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Sampling budget as `points,planes`.
    #[arg(long, global = true)]
    pub budget: Option<String>,
    #[arg(long, global = true, env = "WSEC_THREADS")]
    pub threads: Option<usize>,
    /// Curvature of the comparison model.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub model_kappa: Option<f64>,
    /// Reparametrized length of the geodesic.
    #[arg(long, global = true)]
    pub length: Option<f64>,
    /// Bound on |dφ|.
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub kind: Option<KindArg>,
    /// Start point, comma separated chart coordinates.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Initial direction, comma separated; normalized to unit speed.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub direction: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    R,
    S,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample sectional and weighted sectional curvatures.
    Curvature,
    /// Integrate a unit-speed geodesic and its reparametrization.
    Geodesic,
    /// Normal Jacobi fields with J(0) = 0 and their conjugate points.
    Jacobi,
    /// Comparison theorem checks against a constant-curvature model.
    Compare {
        #[command(subcommand)]
        which: CompareCommand,
    },
    /// Tube volume against the Heintze–Karcher type bound.
    Tube,
    /// Estimate κ̲(a), K̄(a) and the pinching δ(a).
    Bounds,
    /// Weighted convexity of the modified distance function.
    Convexity,
    /// Built-in spaces.
    Catalog {
        #[command(subcommand)]
        which: CatalogCommand,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum CompareCommand {
    Rauch1,
    Rauch2,
    Hessian,
    Myers,
    LogWedge,
}

#[derive(Subcommand, Debug, Clone)]
pub enum CatalogCommand {
    List,
    Show { name: String },
}

/// Space reference inside a configuration: a catalog name or an inline spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceRef {
    Name(String),
    Inline(InlineSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmanifoldConfig {
    /// One expression per ambient coordinate in the parameters u1..um (or u).
    pub immersion: Vec<String>,
    #[serde(rename = "box")]
    pub param_box: Vec<(f64, f64)>,
    #[serde(default)]
    pub panels: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub points: usize,
    pub planes: usize,
}

/// Effective run configuration; echoed verbatim in the report.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub space: Option<SpaceRef>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetConfig>,
    #[serde(default)]
    pub model_kappa: Option<f64>,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub kind: Option<KindArg>,
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default)]
    pub submanifold: Option<SubmanifoldConfig>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn cfg_err(msg: impl Into<String>) -> WsecError {
    WsecError::Config(msg.into())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| cfg_err(format!("bad number '{t}' in '{s}'"))))
        .collect()
}

fn parse_budget(s: &str) -> Result<BudgetConfig> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(cfg_err(format!("budget must be 'points,planes', got '{s}'")));
    }
    let p = |t: &str| t.trim().parse::<usize>().map_err(|_| cfg_err(format!("bad budget entry '{t}'")));
    Ok(BudgetConfig { points: p(parts[0])?, planes: p(parts[1])? })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| cfg_err(format!("invalid config {}: {e}", path.display())))
    }

    /// Overrides fields with the ones given on the command line.
    pub fn merge(mut self, a: &CommonArgs) -> Result<RunConfig> {
        if let Some(s) = &a.space {
            self.space = Some(SpaceRef::Name(s.clone()));
        }
        if a.seed.is_some() {
            self.seed = a.seed;
        }
        if a.tol.is_some() {
            self.tol = a.tol;
        }
        if let Some(b) = &a.budget {
            self.budget = Some(parse_budget(b)?);
        }
        if a.threads.is_some() {
            self.threads = a.threads;
        }
        if a.model_kappa.is_some() {
            self.model_kappa = a.model_kappa;
        }
        if a.length.is_some() {
            self.length = a.length;
        }
        if a.a.is_some() {
            self.a = a.a;
        }
        if a.radius.is_some() {
            self.radius = a.radius;
        }
        if a.kind.is_some() {
            self.kind = a.kind;
        }
        if let Some(p) = &a.point {
            self.point = Some(parse_list(p)?);
        }
        if let Some(d) = &a.direction {
            self.direction = Some(parse_list(d)?);
        }
        Ok(self)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn space(&self) -> Result<MetricDensitySpec> {
        match &self.space {
            None => Err(cfg_err("no space given (use --space or a config 'space' entry)")),
            Some(SpaceRef::Name(n)) => catalog::by_name(n)
                .map(|d| d.spec)
                .ok_or_else(|| cfg_err(format!("unknown space '{n}'; try `wsec catalog list`"))),
            Some(SpaceRef::Inline(s)) => s.build(),
        }
    }
}

/// Outcome of one command: results plus sidecar CSV contents.
struct Outcome {
    results: Value,
    pass: bool,
    sidecars: Vec<(String, String)>,
}

fn verdict_outcome(v: ComparisonVerdict, sidecar: bool) -> Outcome {
    let csv = v.to_csv();
    let pass = v.pass;
    Outcome {
        results: json!({ "verdict": v }),
        pass,
        sidecars: if sidecar { vec![("verdict".into(), csv)] } else { vec![] },
    }
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Curvature => "curvature".into(),
        Command::Geodesic => "geodesic".into(),
        Command::Jacobi => "jacobi".into(),
        Command::Compare { which } => format!(
            "compare {}",
            match which {
                CompareCommand::Rauch1 => "rauch1",
                CompareCommand::Rauch2 => "rauch2",
                CompareCommand::Hessian => "hessian",
                CompareCommand::Myers => "myers",
                CompareCommand::LogWedge => "log-wedge",
            }
        ),
        Command::Tube => "tube".into(),
        Command::Bounds => "bounds".into(),
        Command::Convexity => "convexity".into(),
        Command::Catalog { which: CatalogCommand::List } => "catalog list".into(),
        Command::Catalog { which: CatalogCommand::Show { .. } } => "catalog show".into(),
    }
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(pass) => {
            if pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("wsec: {e}");
            2
        }
    }
}

/// Builds and writes the report; returns whether all verdicts passed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let base = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.merge(&cli.common)?;
    if let Some(k) = cfg.threads {
        // a pool built earlier in this process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
    }
    let start = Instant::now();
    let outcome = dispatch(&cli.command, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut files = Vec::new();
    if let Some(out) = &cli.common.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| cfg_err(format!("cannot create {}: {e}", dir.display())))?;
        }
        for (label, csv) in &outcome.sidecars {
            let path = sidecar_path(out, label);
            std::fs::write(&path, csv).map_err(|e| cfg_err(format!("cannot write {}: {e}", path.display())))?;
            files.push(json!({"kind": label, "path": path.display().to_string()}));
        }
    }
    let mut results = outcome.results;
    if let Value::Object(m) = &mut results {
        m.insert("files".into(), Value::Array(files));
        m.insert("pass".into(), Value::Bool(outcome.pass));
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command_name(&cli.command),
        "config": serde_json::to_value(&cfg).expect("config serializes"),
        "results": results,
        "timing": {"elapsed_seconds": elapsed},
        "seed": cfg.seed(),
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &cli.common.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| cfg_err(format!("cannot write {}: {e}", p.display())))?,
        None => {
            use std::io::Write;
            // a closed pipe downstream is not an error of the run
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    Ok(outcome.pass)
}

fn sidecar_path(out: &Path, label: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.{label}.csv"))
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Catalog { which } => catalog_cmd(which),
        Command::Curvature => curvature_cmd(cfg),
        Command::Geodesic => geodesic_cmd(cfg),
        Command::Jacobi => jacobi_cmd(cfg),
        Command::Compare { which } => compare_cmd(*which, cfg),
        Command::Tube => tube_cmd(cfg),
        Command::Bounds => bounds_cmd(cfg),
        Command::Convexity => convexity_cmd(cfg),
    }
}

fn catalog_cmd(which: &CatalogCommand) -> Result<Outcome> {
    let results = match which {
        CatalogCommand::List => json!({
            "spaces": catalog::all().iter().map(|d| json!({"name": d.name, "summary": d.summary, "dim": d.spec.dim})).collect::<Vec<_>>(),
        }),
        CatalogCommand::Show { name } => {
            let d = catalog::by_name(name).ok_or_else(|| cfg_err(format!("unknown space '{name}'")))?;
            json!({ "space": d.describe() })
        }
    };
    Ok(Outcome { results, pass: true, sidecars: vec![] })
}

fn budget(cfg: &RunConfig, points: usize, planes: usize) -> BudgetConfig {
    cfg.budget.unwrap_or(BudgetConfig { points, planes })
}

/// Start point: configured, else the chart origin when it lies in the
/// domain, else the first seeded sample.
fn start_point(spec: &MetricDensitySpec, cfg: &RunConfig) -> Result<Vec<f64>> {
    if let Some(p) = &cfg.point {
        if p.len() != spec.dim {
            return Err(cfg_err(format!("point has {} coordinates, space has dimension {}", p.len(), spec.dim)));
        }
        if !spec.contains(p) {
            return Err(WsecError::Domain(p.clone()));
        }
        return Ok(p.clone());
    }
    let o = vec![0.0; spec.dim];
    if spec.contains(&o) {
        return Ok(o);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    Ok(spec.sample_point(&mut rng))
}

fn unit_direction(spec: &MetricDensitySpec, p: &[f64], cfg: &RunConfig) -> Result<Vec<f64>> {
    let mut v = cfg.direction.clone().unwrap_or_else(|| {
        let mut e = vec![0.0; spec.dim];
        e[0] = 1.0;
        e
    });
    if v.len() != spec.dim {
        return Err(cfg_err(format!("direction has {} components, space has dimension {}", v.len(), spec.dim)));
    }
    let g = spec.metric_at(p);
    let l = manifold::g_inner(&g, &v, &v).sqrt();
    if !(l > 0.0) {
        return Err(cfg_err("direction must be nonzero"));
    }
    v.iter_mut().for_each(|c| *c /= l);
    Ok(v)
}

fn t_max(length: f64) -> f64 {
    (100.0 * length).max(1e3)
}

fn curvature_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let b = budget(cfg, 100, 10);
    let tol = cfg.tol.unwrap_or(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut sec = (f64::INFINITY, f64::NEG_INFINITY);
    let mut wsec = (f64::INFINITY, f64::NEG_INFINITY);
    let mut normalized = (f64::INFINITY, f64::NEG_INFINITY);
    let mut route_err: f64 = 0.0;
    let mut trace: f64 = 0.0;
    let mut torsion: f64 = 0.0;
    let mut csv = String::from("sample,sec,weighted_hessian,weighted_tensor,phi\n");
    let mut k = 0;
    for _ in 0..b.points {
        let x = spec.sample_point(&mut rng);
        let lg = manifold::local_geometry(&spec, &x)?;
        let d = manifold::connection_defects(&spec, &x)?;
        trace = trace.max(d.trace);
        torsion = torsion.max(d.torsion);
        for _ in 0..b.planes {
            let (u, v) = manifold::random_orthonormal_pair(&lg, &mut rng);
            let s = lg.sectional(&u, &v)?;
            let h = lg.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula)?.value;
            let t = lg.weighted_sectional(&u, &v, CurvatureRoute::TensorFormula)?.value;
            route_err = route_err.max((h - t).abs() / h.abs().max(t.abs()).max(1.0));
            sec = (sec.0.min(s), sec.1.max(s));
            wsec = (wsec.0.min(h), wsec.1.max(h));
            let e4 = h * (4.0 * lg.phi).exp();
            normalized = (normalized.0.min(e4), normalized.1.max(e4));
            csv.push_str(&format!("{k},{},{},{},{}\n", c_exp(s), c_exp(h), c_exp(t), c_exp(lg.phi)));
            k += 1;
        }
    }
    let pass = route_err <= tol && trace <= tol && torsion <= tol;
    let results = json!({
        "space": spec.name,
        "samples": k,
        "sec_range": [sec.0, sec.1],
        "weighted_sec_range": [wsec.0, wsec.1],
        "e4phi_weighted_sec_range": [normalized.0, normalized.1],
        "route_max_rel_diff": route_err,
        "trace_identity_defect": trace,
        "torsion_defect": torsion,
        "tolerance": tol,
    });
    Ok(Outcome { results, pass, sidecars: vec![("samples".into(), csv)] })
}

fn geodesic_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let p = start_point(&spec, cfg)?;
    let v = unit_direction(&spec, &p, cfg)?;
    let length = cfg.length.unwrap_or(1.0);
    let traj = geodesic::integrate_to_s(&spec, &p, &v, length, t_max(length), &GeodesicOptions::default())?;
    let residual = geodesic::phi_geodesic_residual(&spec, &traj)?;
    let end = traj.state_at(traj.t_end());
    let results = json!({
        "space": spec.name,
        "start": p,
        "direction": v,
        "t_end": traj.t_end(),
        "s_end": traj.s_end() - traj.s_start(),
        "end_point": end.x,
        "end_velocity": end.v,
        "samples": traj.len(),
        "phi_geodesic_residual": residual,
    });
    Ok(Outcome { results, pass: true, sidecars: vec![("geodesic".into(), traj.to_csv())] })
}

fn jacobi_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    if spec.dim < 2 {
        return Err(cfg_err("Jacobi fields need dimension at least 2"));
    }
    let p = start_point(&spec, cfg)?;
    let v = unit_direction(&spec, &p, cfg)?;
    let length = cfg.length.unwrap_or(1.0);
    let traj = geodesic::integrate_to_s(&spec, &p, &v, length, t_max(length), &GeodesicOptions::default())?;
    let fam = geodesic::normal_jacobi_family(&spec, &traj)?;
    let s0 = traj.s_start();
    let conj: Vec<f64> = geodesic::singular_times(&fam).into_iter().map(|t| traj.s_at(t) - s0).collect();
    let mut csv = String::from("t,s");
    for k in 1..spec.dim {
        csv.push_str(&format!(",norm_{k}"));
    }
    csv.push('\n');
    for (i, &t) in fam.t().iter().enumerate() {
        let (a, _) = fam.sample(i);
        csv.push_str(&format!("{},{}", c_exp(t), c_exp(traj.s_at(t) - s0)));
        for j in 0..a.ncols() {
            csv.push_str(&format!(",{}", c_exp(a.column(j).norm())));
        }
        csv.push('\n');
    }
    let (a_end, _) = fam.eval(traj.t_end());
    let results = json!({
        "space": spec.name,
        "start": p,
        "direction": v,
        "s_end": traj.s_end() - s0,
        "conjugate_s": conj,
        "end_norms": (0..a_end.ncols()).map(|j| a_end.column(j).norm()).collect::<Vec<_>>(),
    });
    Ok(Outcome { results, pass: true, sidecars: vec![("jacobi".into(), csv)] })
}

/// Geodesic of s-length `length` from the origin of the κ model along e₁.
fn model_geodesic(n: usize, kappa: f64, length: f64) -> Result<(MetricDensitySpec, GeodesicTrajectory)> {
    if kappa > 0.0 && length >= std::f64::consts::PI / kappa.sqrt() {
        return Err(cfg_err(format!("length {length} reaches the model's first conjugate point")));
    }
    let spec = catalog::constant_curvature(n, kappa).spec;
    let p = vec![0.0; n];
    let mut v = vec![0.0; n];
    v[0] = 0.5;
    let traj = geodesic::integrate_to_s(&spec, &p, &v, length, t_max(length), &GeodesicOptions::default())?;
    Ok((spec, traj))
}

fn jacobi_field(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, a: f64, b: f64) -> Result<JacobiTrajectory> {
    let n = spec.dim;
    let a0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { a } else { 0.0 });
    let b0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { b } else { 0.0 });
    Ok(geodesic::integrate_jacobi_family(spec, traj, &a0, &b0, &OdeOptions::default())?.field(0))
}

fn check_options(cfg: &RunConfig) -> CheckOptions {
    let d = CheckOptions::default();
    CheckOptions { tol: cfg.tol.unwrap_or(d.tol), seed: cfg.seed(), planes: cfg.budget.map_or(d.planes, |b| b.planes), ..d }
}

fn compare_cmd(which: CompareCommand, cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let n = spec.dim;
    if n < 2 {
        return Err(cfg_err("comparison needs dimension at least 2"));
    }
    let kappa = cfg.model_kappa.unwrap_or(0.0);
    let length = cfg.length.unwrap_or(1.0);
    match which {
        CompareCommand::Myers => {
            let pairs = cfg.budget.map_or(20, |b| b.points);
            let opts = MyersOptions { tol: cfg.tol.unwrap_or(1e-4), seed: cfg.seed(), ..Default::default() };
            let v = comparison::myers_check(&spec, kappa, pairs, &opts)?;
            return Ok(verdict_outcome(v, true));
        }
        CompareCommand::Hessian => {
            let p = start_point(&spec, cfg)?;
            let dir = unit_direction(&spec, &p, cfg)?;
            let traj = geodesic::integrate_to_s(&spec, &p, &dir, length, t_max(length), &GeodesicOptions::default())?;
            let q = traj.state_at(traj.t_end()).x;
            let so = ShootingOptions { seed: cfg.seed(), ..Default::default() };
            let conn = geodesic::minimizing_geodesic(&spec, &p, &q, &so)?;
            let end = conn.trajectory.state_at(conn.trajectory.t_end());
            let y = end.frame[1].clone();
            let mut opts = HessianOptions::default();
            if let Some(t) = cfg.tol {
                opts.tol = t;
            }
            opts.shooting.seed = cfg.seed();
            opts.check.seed = cfg.seed();
            let bound = CurvatureBound { side: BoundSide::Lower, value: kappa };
            let v = comparison::hessian_comparison_check(&spec, &p, &conn.target, &y, bound, &opts)?;
            return Ok(verdict_outcome(v, false));
        }
        _ => {}
    }
    let p = start_point(&spec, cfg)?;
    let dir = unit_direction(&spec, &p, cfg)?;
    let traj = geodesic::integrate_to_s(&spec, &p, &dir, length, t_max(length), &GeodesicOptions::default())?;
    let (model, mtraj) = model_geodesic(n, kappa, length)?;
    let opts = check_options(cfg);
    let phi0 = traj.phi[0];
    let mut sidecars = vec![("geodesic".to_string(), traj.to_csv())];
    let v = match which {
        CompareCommand::Rauch1 => {
            // equal s-derivative norms: |dJ/ds| = e^{2φ}|dJ/dt|
            let j = jacobi_field(&spec, &traj, 0.0, (-2.0 * phi0).exp())?;
            let jh = jacobi_field(&model, &mtraj, 0.0, 1.0)?;
            comparison::rauch1_check(&spec, &model, &traj, &mtraj, &j, &jh, &opts)?
        }
        CompareCommand::Rauch2 => {
            let j = jacobi_field(&spec, &traj, 1.0, 0.0)?;
            let jh = jacobi_field(&model, &mtraj, 1.0, 0.0)?;
            comparison::rauch2_check(&spec, &model, &traj, &mtraj, &j, &jh, &opts)?
        }
        CompareCommand::LogWedge => {
            let fam = geodesic::normal_jacobi_family(&spec, &traj)?;
            let famh = geodesic::normal_jacobi_family(&model, &mtraj)?;
            let lo = (0.05f64).min(0.1 * length);
            tube::log_wedge_comparison((&spec, &fam), (&model, &famh), (lo, length), &opts)?
        }
        CompareCommand::Myers | CompareCommand::Hessian => unreachable!(),
    };
    sidecars.push(("verdict".into(), v.to_csv()));
    let pass = v.pass;
    let mut results = json!({ "verdict": v, "model_kappa": kappa, "start": p, "direction": dir });
    results["space"] = json!(spec.name);
    Ok(Outcome { results, pass, sidecars })
}

fn tube_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let kappa = cfg.model_kappa.unwrap_or(0.0);
    let radius = cfg.radius.unwrap_or(0.5);
    let kind = match cfg.kind.unwrap_or(KindArg::R) {
        KindArg::R => RadiusKind::Distance,
        KindArg::S => RadiusKind::Reparametrized,
    };
    let h = match &cfg.submanifold {
        Some(sm) => {
            let m = sm.param_box.len();
            if sm.immersion.len() != spec.dim {
                return Err(cfg_err(format!("immersion needs {} component expressions", spec.dim)));
            }
            let imm = parse_immersion(&sm.immersion, m)?;
            ImmersedSubmanifold::new(spec.clone(), m, imm, sm.param_box.clone(), sm.panels.unwrap_or(4))?
        }
        None => ImmersedSubmanifold::single_point(spec.clone(), start_point(&spec, cfg)?)?,
    };
    let mut opts = TubeOptions { seed: cfg.seed(), ..Default::default() };
    if let Some(b) = cfg.budget {
        opts.mc_samples = b.points;
        opts.hypothesis_planes = b.planes;
    }
    let tol = cfg.tol.unwrap_or(1e-6);
    let r = tube::hk_bound_check(&h, kappa, radius, kind, tol, &opts)?;
    let pass = r.pass;
    Ok(Outcome { results: json!({ "space": spec.name, "submanifold_dim": h.dim(), "tube": r }), pass, sidecars: vec![] })
}

fn bounds_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let a = cfg.a.unwrap_or(1.0);
    let d = SampleBudget::default();
    let b = SampleBudget {
        points: cfg.budget.map_or(d.points, |b| b.points),
        planes: cfg.budget.map_or(d.planes, |b| b.planes),
        seed: cfg.seed(),
    };
    let family = DensityFamily::default_for(&spec, &b);
    let opts = OptimizerOptions::default();
    let lo = bounds::estimate_kappa_lower(&spec, &family, a, &b, &opts)?;
    let hi = bounds::estimate_k_upper(&spec, &family, a, &b, &opts)?;
    let delta = if lo.value > 0.0 && hi.value > 0.0 { Some(lo.value / hi.value) } else { None };
    let results = json!({
        "space": spec.name,
        "a": a,
        "family": family.id,
        "kappa_lower": lo,
        "k_upper": hi,
        "pwsc_phase_succeeded": lo.sign_phase_succeeded,
        "nwsc_phase_succeeded": hi.sign_phase_succeeded,
        "delta": delta,
        "caveat": bounds::CAVEAT,
    });
    Ok(Outcome { results, pass: true, sidecars: vec![] })
}

fn convexity_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.space()?;
    let a = cfg.a.unwrap_or(0.0);
    let p = start_point(&spec, cfg)?;
    let radius = cfg.radius.unwrap_or(0.4);
    let length = cfg.length.unwrap_or(0.5);
    let count = cfg.budget.map_or(6, |b| b.points);
    let geods = comparison::sample_tilde_geodesics(&spec, &p, radius, count, length, cfg.seed())?;
    let profile = comparison::build_modified_distance(a, 5.0)?;
    let d = ConvexityOptions::default();
    let opts = ConvexityOptions {
        tol: cfg.tol.unwrap_or(d.tol),
        seed: cfg.seed(),
        planes: cfg.budget.map_or(d.planes, |b| b.planes),
        ..d
    };
    let v = comparison::weighted_convexity_check(&spec, &p, &profile, &geods, &opts)?;
    let residual = profile.residual();
    let pass = v.pass;
    Ok(Outcome {
        results: json!({ "space": spec.name, "profile_residual": residual, "verdict": v }),
        pass,
        sidecars: vec![],
    })
}
