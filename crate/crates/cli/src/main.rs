//! `solitonlab` — command-line driver for the soliton pipeline.
//!
//! Exit codes: 0 success, 2 invalid input, 3 non-convergence.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use solitonlab::assemble::{
    einstein_extension_check, gold_check, run_pipeline, soliton_residual, FieldInit, PipelineOptions,
    SolitonReport,
};
use solitonlab::baseeq::{gauss_bonnet_constraint, solve_base, BaseOptions};
use solitonlab::harmonicflow::{harmonic_flow, FlowOptions, FlowReport, HField, HarmonicContext};
use solitonlab::io::{
    load_algebra, mesh_hash, read_json, write_json, CertificateFile, HFieldFile, Meta, MeshFile,
    RepresentationFile, ScalarFieldFile,
};
use solitonlab::liealg::{
    certify_nilsoliton, einstein_extension, find_nilsoliton, rescale_to_lambda, FinderOptions, LieAlgebra,
    MetricData, NilsolitonCertificate,
};
use solitonlab::surface::{
    attach_representation, build_genus2_mesh, build_torus_mesh, uniformizing_representation, validate_mesh,
    Representation, TwistedSurfaceMesh,
};
use solitonlab::{Error, Result};

const THREADS_VAR: &str = "SOLITONLAB_THREADS";

#[derive(Parser)]
#[command(name = "solitonlab", version, about = "Expanding Ricci solitons on twisted nilpotent bundles over surfaces")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find, rescale and certify a nilsoliton metric.
    Nilsoliton(NilArgs),
    /// Generate or validate meshes.
    Mesh {
        #[command(subcommand)]
        cmd: MeshCmd,
    },
    /// Run the twisted harmonic-map heat flow.
    Harmonic(HarmonicArgs),
    /// Solve the conformal base equation.
    Base(BaseArgs),
    /// Evaluate the soliton equation block by block.
    Assemble(AssembleArgs),
    /// Check the Einstein extension.
    Extend(ExtendArgs),
}

#[derive(Args, Serialize)]
struct NilArgs {
    /// Built-in name (`abelian:n`, `heis3`, `heis3xR`) or algebra JSON file.
    #[arg(long)]
    algebra: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    /// Soliton constant after rescaling.
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MeshCmd {
    Gen(MeshGenArgs),
    Validate(MeshValidateArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum MeshKind {
    Genus2,
    Torus,
}

#[derive(Args, Serialize)]
struct MeshGenArgs {
    #[arg(long, value_enum, default_value_t = MeshKind::Genus2)]
    kind: MeshKind,
    /// Subdivision level of the genus-2 octagon mesh.
    #[arg(long, default_value_t = 2)]
    subdiv: usize,
    #[arg(long, default_value_t = 8)]
    ns: usize,
    #[arg(long, default_value_t = 8)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    ls: f64,
    #[arg(long, default_value_t = 1.0)]
    lt: f64,
    /// `uniformizing` (genus 2 only), `trivial`, or a representation JSON file.
    #[arg(long, default_value = "trivial")]
    rep: String,
    /// Fibre dimension for `--rep trivial`.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MeshValidateArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Optional representation to attach before validating.
    #[arg(long)]
    rep: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum InitKind {
    Identity,
    Random,
}

#[derive(Args, Serialize, Clone)]
struct FlowArgs {
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    init: InitKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    scale: f64,
    #[arg(long, default_value_t = 0.9)]
    dt: f64,
    #[arg(long, default_value_t = 1e-8)]
    flow_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    flow_max_iters: usize,
    /// Keep `det h` free instead of flowing on the `det = 1` slice.
    #[arg(long)]
    free_det: bool,
}

impl FlowArgs {
    fn options(&self) -> Result<FlowOptions> {
        positive("dt", self.dt)?;
        positive("flow-tol", self.flow_tol)?;
        Ok(FlowOptions { dt: self.dt, tol: self.flow_tol, max_iters: self.flow_max_iters, ..FlowOptions::default() })
    }

    fn init(&self) -> FieldInit {
        match self.init {
            InitKind::Identity => FieldInit::Identity,
            InitKind::Random => FieldInit::Random { seed: self.seed, scale: self.scale },
        }
    }
}

#[derive(Args, Serialize, Clone)]
struct NewtonArgs {
    #[arg(long, default_value_t = 1e-10)]
    newton_tol: f64,
    #[arg(long, default_value_t = 100)]
    newton_max_iters: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    u0: f64,
    #[arg(long)]
    skip_uniqueness: bool,
}

impl NewtonArgs {
    fn options(&self) -> Result<BaseOptions> {
        positive("newton-tol", self.newton_tol)?;
        Ok(BaseOptions {
            tol: self.newton_tol,
            max_iters: self.newton_max_iters,
            u0: self.u0,
            check_uniqueness: !self.skip_uniqueness,
        })
    }
}

#[derive(Args, Serialize)]
struct HarmonicArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    out: PathBuf,
    /// CSV of `(iteration, edge energy, max tension)`.
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BaseArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// `zero`, or a ν file; ignored when `--field` is given.
    #[arg(long, default_value = "zero")]
    nu: String,
    /// Extract ν from a harmonic field file.
    #[arg(long)]
    field: Option<PathBuf>,
    #[command(flatten)]
    newton: NewtonArgs,
    /// Output u file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the ν used.
    #[arg(long)]
    nu_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AssembleArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value = "abelian:2")]
    algebra: String,
    /// Nilsoliton certificate; computed (λ = −½) when omitted.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Run flow → ν → base → report in one invocation.
    #[arg(long)]
    pipeline: bool,
    #[arg(long, required_unless_present = "pipeline")]
    field: Option<PathBuf>,
    #[arg(long, required_unless_present = "pipeline")]
    u: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    newton: NewtonArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-vertex residual table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ExtendArgs {
    #[arg(long, default_value = "heis3")]
    algebra: String,
    #[arg(long)]
    cert: Option<PathBuf>,
    /// With `--field` and `--u`: check the assembled soliton, not just the fibre.
    #[arg(long, requires_all = ["field", "u"])]
    mesh: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    u: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("--{name} must be positive, got {x}")))
    }
}

fn config<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(solitonlab::io::sha256_hex(&std::fs::read(path)?))
}

/// Fails before any long computation if the output directory does not exist.
fn check_out(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Error::Invalid(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn load_mesh(path: &Path) -> Result<TwistedSurfaceMesh> {
    read_json::<MeshFile>(path)?.to_mesh()
}

fn load_rep(spec: &str, n: usize) -> Result<Option<Representation>> {
    match spec {
        "trivial" => Ok(None),
        "uniformizing" => {
            if n != 2 {
                return Err(Error::Invalid("the uniformizing representation is 2-dimensional".into()));
            }
            Ok(Some(uniformizing_representation()))
        }
        path => Ok(Some(read_json::<RepresentationFile>(Path::new(path))?.to_rep()?)),
    }
}

fn reference_certificate(alg: &LieAlgebra, path: Option<&Path>) -> Result<NilsolitonCertificate> {
    match path {
        Some(p) => {
            let cert = read_json::<CertificateFile>(p)?.to_certificate()?;
            let m = MetricData::new(cert.metric.clone())?;
            let again = certify_nilsoliton(alg, &m, cert.tol)?;
            if !again.certified {
                return Err(Error::Invalid(format!("{} does not certify for this algebra", p.display())));
            }
            Ok(cert)
        }
        None => {
            let found = find_nilsoliton(alg, &MetricData::identity(alg.dim()), &FinderOptions::default())?;
            rescale_to_lambda(alg, &found, -0.5)
        }
    }
}

fn write_flow_csv(path: &Path, report: &FlowReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "edge_energy", "max_tension"]).map_err(csv_err)?;
    for (it, e, t) in &report.trace {
        w.serialize((it, e, t)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows_csv(path: &Path, report: &SolitonReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in &report.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to stdout, tolerating a closed pipe.
fn print_summary(v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn cmd_nilsoliton(a: &NilArgs) -> Result<ExitCode> {
    positive("tol", a.tol)?;
    if !(a.lambda < 0.0) {
        return Err(Error::Invalid("--lambda must be negative".into()));
    }
    check_out(&a.out)?;
    let alg = load_algebra(&a.algebra)?;
    let opts = FinderOptions { tol: a.tol, max_iters: a.max_iters };
    let found = find_nilsoliton(&alg, &MetricData::identity(alg.dim()), &opts)?;
    let cert = rescale_to_lambda(&alg, &found, a.lambda)?;
    write_json(&a.out, &CertificateFile::new(&alg, &cert, Meta::new(config(a))))?;
    if cert.certified {
        log::info!("certified: lambda {}, D eigenvalues {:?}", cert.lambda, cert.derivation_eigenvalues());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("metric did not certify (residual {:.3e})", cert.residual);
        Ok(ExitCode::from(3))
    }
}

fn cmd_mesh_gen(a: &MeshGenArgs) -> Result<ExitCode> {
    check_out(&a.out)?;
    let mut mesh = match a.kind {
        MeshKind::Genus2 => build_genus2_mesh(a.subdiv),
        MeshKind::Torus => build_torus_mesh(a.ns, a.nt, a.ls, a.lt)?,
    };
    let rep = load_rep(&a.rep, a.n)?;
    if matches!(a.kind, MeshKind::Torus) && a.rep == "uniformizing" {
        return Err(Error::Invalid("the uniformizing representation needs --kind genus2".into()));
    }
    mesh = match rep {
        Some(r) => attach_representation(&mesh, &r)?,
        None if a.n != mesh.n() => {
            let names = mesh.generators().to_vec();
            attach_representation(&mesh, &Representation::trivial(&names, a.n))?
        }
        None => mesh,
    };
    let report = validate_mesh(&mesh)?;
    let mut file = serde_json::to_value(MeshFile::from_mesh(&mesh))?;
    file["meta"] = serde_json::to_value(Meta::new(config(a)))?;
    write_json(&a.out, &file)?;
    print_summary(&json!({ "mesh_hash": mesh_hash(&mesh), "report": report }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_mesh_validate(a: &MeshValidateArgs) -> Result<ExitCode> {
    let mut mesh = load_mesh(&a.mesh)?;
    if let Some(p) = &a.rep {
        mesh = attach_representation(&mesh, &read_json::<RepresentationFile>(p)?.to_rep()?)?;
    }
    let report = validate_mesh(&mesh)?;
    print_summary(&json!({ "mesh_hash": mesh_hash(&mesh), "report": report }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_harmonic(a: &HarmonicArgs) -> Result<ExitCode> {
    let opts = a.flow.options()?;
    check_out(&a.out)?;
    let mesh = load_mesh(&a.mesh)?;
    let unit_det = !a.flow.free_det;
    let init = match a.flow.init() {
        FieldInit::Identity => HField::identity(&mesh, unit_det),
        FieldInit::Random { seed, scale } => HField::random(&mesh, seed, scale, unit_det),
    };
    let (hf, report) = harmonic_flow(&mesh, &init, &opts)?;
    let meta = Meta::new(json!({ "args": config(a), "flow": report }))
        .with_upstream("mesh", &mesh_hash(&mesh));
    write_json(&a.out, &HFieldFile::new(&mesh, &hf, meta))?;
    if let Some(p) = &a.trace_csv {
        write_flow_csv(p, &report)?;
    }
    log::info!("flow converged in {} iterations, tension {:.3e}", report.iterations, report.final_tension);
    Ok(ExitCode::SUCCESS)
}

fn cmd_base(a: &BaseArgs) -> Result<ExitCode> {
    let opts = a.newton.options()?;
    check_out(&a.out)?;
    let mesh = load_mesh(&a.mesh)?;
    let hash = mesh_hash(&mesh);
    let mut meta = Meta::new(config(a)).with_upstream("mesh", &hash);
    let nu: Vec<f64> = if let Some(p) = &a.field {
        let hf = read_json::<HFieldFile>(p)?.to_field(&mesh)?;
        meta = meta.with_upstream("field", &file_hash(p)?);
        HarmonicContext::new(&mesh)?.nu_field(&hf)?.iter().map(|x| x.max(0.0)).collect()
    } else if a.nu == "zero" {
        vec![0.0; mesh.num_vertices()]
    } else {
        let p = Path::new(&a.nu);
        meta = meta.with_upstream("nu", &file_hash(p)?);
        read_json::<ScalarFieldFile>(p)?.values_for(&mesh)?.to_vec()
    };
    let sol = solve_base(&mesh, &nu, &opts)?;
    let u = sol.u.u.as_slice();
    let gb = gauss_bonnet_constraint(&mesh, u, &nu)?;
    meta.config = json!({
        "args": meta.config,
        "newton": {
            "iterations": sol.iterations,
            "residual_history": sol.residual_history,
            "uniqueness_gap": sol.uniqueness_gap,
            "gauss_bonnet_residual": gb,
        }
    });
    if let Some(p) = &a.nu_out {
        write_json(p, &ScalarFieldFile::new(&mesh, "nu", &nu, meta.clone()))?;
    }
    write_json(&a.out, &ScalarFieldFile::new(&mesh, "u", u, meta))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(a: &AssembleArgs) -> Result<ExitCode> {
    check_out(&a.out)?;
    if let Some(p) = &a.csv {
        check_out(p)?;
    }
    let mesh = load_mesh(&a.mesh)?;
    let alg = load_algebra(&a.algebra)?;
    let cert = reference_certificate(&alg, a.cert.as_deref())?;
    let mut meta = Meta::new(config(a)).with_upstream("mesh", &mesh_hash(&mesh));
    let (report, extra) = if a.pipeline {
        let opts = PipelineOptions {
            flow: a.flow.options()?,
            base: a.newton.options()?,
            init: a.flow.init(),
            unit_det: !a.flow.free_det,
        };
        let res = run_pipeline(&mesh, &alg, &cert, &opts)?;
        let gold = mesh.developing_map().is_some().then(|| gold_check(&mesh, &res));
        let extra = json!({
            "flow": res.flow,
            "newton_iterations": res.base.iterations,
            "newton_residual_history": res.base.residual_history,
            "uniqueness_gap": res.base.uniqueness_gap,
            "gold": gold,
        });
        (res.report, extra)
    } else {
        let (fp, up) = (a.field.as_ref().expect("clap enforces"), a.u.as_ref().expect("clap enforces"));
        let hf = read_json::<HFieldFile>(fp)?.to_field(&mesh)?;
        let u = read_json::<ScalarFieldFile>(up)?;
        meta = meta.with_upstream("field", &file_hash(fp)?).with_upstream("u", &file_hash(up)?);
        (soliton_residual(&mesh, u.values_for(&mesh)?, &hf, &alg, &cert)?, serde_json::Value::Null)
    };
    let out = json!({ "version": 1, "meta": meta, "report": report, "pipeline": extra });
    write_json(&a.out, &out)?;
    if let Some(p) = &a.csv {
        write_rows_csv(p, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_extend(a: &ExtendArgs) -> Result<ExitCode> {
    check_out(&a.out)?;
    let alg = load_algebra(&a.algebra)?;
    let cert = reference_certificate(&alg, a.cert.as_deref())?;
    let mut meta = Meta::new(config(a));
    let fibre = if alg.is_abelian() { None } else { Some(einstein_extension(&alg, &cert)?) };
    let fibre_json = fibre.as_ref().map(|e| {
        json!({
            "alpha": e.alpha,
            "ricci_gap": e.ricci_gap,
            "trace_square": e.trace_square,
            "trace_identity_gap": e.trace_identity_gap,
            "jacobi_gap": e.jacobi_gap,
        })
    });
    let assembled = match (&a.mesh, &a.field, &a.u) {
        (Some(mp), Some(fp), Some(up)) => {
            let mesh = load_mesh(mp)?;
            let hf = read_json::<HFieldFile>(fp)?.to_field(&mesh)?;
            let u = read_json::<ScalarFieldFile>(up)?;
            meta = meta
                .with_upstream("mesh", &mesh_hash(&mesh))
                .with_upstream("field", &file_hash(fp)?)
                .with_upstream("u", &file_hash(up)?);
            let report = soliton_residual(&mesh, u.values_for(&mesh)?, &hf, &alg, &cert)?;
            Some(einstein_extension_check(&report, &alg, &cert)?)
        }
        _ => None,
    };
    write_json(&a.out, &json!({ "version": 1, "meta": meta, "fibre": fibre_json, "assembled": assembled }))?;
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Invalid(format!("{THREADS_VAR} must be a positive integer, got {s:?}")))?,
        Err(_) => 1,
    };
    // only fails if a pool already exists, which cannot happen this early
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    init_threads()?;
    match &cli.cmd {
        Command::Nilsoliton(a) => cmd_nilsoliton(a),
        Command::Mesh { cmd: MeshCmd::Gen(a) } => cmd_mesh_gen(a),
        Command::Mesh { cmd: MeshCmd::Validate(a) } => cmd_mesh_validate(a),
        Command::Harmonic(a) => cmd_harmonic(a),
        Command::Base(a) => cmd_base(a),
        Command::Assemble(a) => cmd_assemble(a),
        Command::Extend(a) => cmd_extend(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
