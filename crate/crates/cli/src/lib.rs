//! `fokker` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error or failed check, 2 usage error
//! (bad flags, unreadable or malformed config).

pub mod checks;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fokker_core::json::to_json_string;
use fokker_core::quantum::{
    build_action_operator, build_lattice, eigenpairs, linspace, stationarity_scan, EigenOptions,
    ScanParameter, SpectrumTarget,
};
use fokker_core::solver::{coulomb_reference, solve_el, solve_free, Solution};
use fokker_core::trajectory::format_f64;
use fokker_core::{el_residual, fokker_action, Error, Trajectory};
use serde::Serialize;

use crate::checks::{canonical_stationarity, gradient_check, legendre_check, perturbed_pair};
use crate::config::{parse_config, ConfigError, RunConfig};

/// Gradient check failure threshold.
pub const GRADIENT_THRESHOLD: f64 = 1e-5;
/// Legendre check failure threshold, relative to |I|.
pub const LEGENDRE_THRESHOLD: f64 = 1e-8;
/// Canonical stationarity must hold within this multiple of the solver tolerance.
pub const STATIONARITY_FACTOR: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(
    name = "fokker",
    version,
    about = "Multi-time Fokker two-charge dynamics"
)]
pub struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Action evaluation.
    #[command(subcommand)]
    Action(ActionCommand),
    /// Solve the fixed-endpoint Euler-Lagrange problem.
    Solve(SolveArgs),
    /// Consistency checks.
    #[command(subcommand)]
    Check(CheckCommand),
    /// Lattice action operator.
    #[command(subcommand)]
    Quantum(QuantumCommand),
}

#[derive(Debug, Subcommand)]
pub enum ActionCommand {
    /// Action breakdown and Euler-Lagrange residual of a trajectory pair.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Canonical action against the original action.
    Legendre(PairArgs),
    /// Analytic momenta and EL residuals against numeric functional gradients.
    Gradient(GradientArgs),
    /// Canonical stationarity residuals of a solved trajectory pair.
    Stationarity(CommonArgs),
}

#[derive(Debug, Subcommand)]
pub enum QuantumCommand {
    /// Lowest eigenvalues of the action operator.
    Spectrum(SpectrumArgs),
    /// Eigenvalue branches along a parameter sweep.
    Scan(ScanArgs),
}

/// Config file plus overrides; flags win over the file.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub hbar_tilde: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trajectory CSV for particle 1; with --traj2 replaces the seeded pair.
    #[arg(long, requires = "traj2")]
    pub traj1: Option<PathBuf>,
    #[arg(long, requires = "traj1")]
    pub traj2: Option<PathBuf>,
    /// Size of the seeded perturbation, as a fraction of the horizon.
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trajectory CSV for particle 1; default is the straight line.
    #[arg(long, requires = "traj2")]
    pub traj1: Option<PathBuf>,
    #[arg(long, requires = "traj1")]
    pub traj2: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradientArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Finite-difference step, scaled by 1 + |x|.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Solve the Newtonian Coulomb problem instead.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Lowest,
    SmallestMagnitude,
}

#[derive(Debug, Clone, Args)]
pub struct EigenArgs {
    /// Number of eigenvalues.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Residual bound for each eigenpair.
    #[arg(long, default_value_t = 1e-9)]
    pub eig_tol: f64,
    #[arg(long, value_enum, default_value_t = TargetArg::Lowest)]
    pub target: TargetArg,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub eigen: EigenArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub eigen: EigenArgs,
    /// sigma, T or hbar_tilde.
    #[arg(long)]
    pub param: ScanParameter,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long)]
    pub steps: usize,
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
    /// The computation ran; the check it performs did not pass.
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) | Failure::Check(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(e) => Failure::Domain(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome = Result<String, Failure>;

/// Parses `argv`, runs, prints, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(failure) => {
            let code = failure.exit_code();
            match failure {
                Failure::Check(report) => {
                    print!("{report}");
                    eprintln!("fokker: check failed");
                }
                Failure::Usage(m) | Failure::Domain(m) => eprintln!("fokker: error: {m}"),
            }
            code
        }
    }
}

/// Runs a parsed command on a pool of the requested size; returns stdout.
pub fn run(cli: &Cli) -> Outcome {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(command: &Command) -> Outcome {
    match command {
        Command::Action(ActionCommand::Eval(args)) => action_eval(args),
        Command::Solve(args) => solve(args),
        Command::Check(CheckCommand::Legendre(args)) => check_legendre(args),
        Command::Check(CheckCommand::Gradient(args)) => check_gradient(args),
        Command::Check(CheckCommand::Stationarity(args)) => check_stationarity(args),
        Command::Quantum(QuantumCommand::Spectrum(args)) => quantum_spectrum(args),
        Command::Quantum(QuantumCommand::Scan(args)) => quantum_scan(args),
    }
}

/// Reads the config, applies the flag overrides and validates the result.
pub fn load(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(x) = common.coupling {
        cfg.coupling = x;
    }
    if let Some(x) = common.sigma {
        cfg.sigma = x;
    }
    if let Some(x) = common.n1 {
        cfg.n1 = x;
    }
    if let Some(x) = common.n2 {
        cfg.n2 = x;
    }
    if let Some(x) = common.hbar_tilde {
        cfg.hbar_tilde = Some(x);
    }
    if let Some(x) = common.tol {
        cfg.solver.tol = x;
    }
    if let Some(x) = common.seed {
        cfg.seed = x;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.check()?;
    let echoed = serde_json::to_string(&cfg).expect("config serializes");
    eprintln!("fokker: config {echoed}");
    Ok(cfg)
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    result: T,
}

/// The echoed config drops the output directory so reports do not depend on
/// where they are written.
fn report<T: Serialize>(command: &str, cfg: &RunConfig, result: T) -> String {
    let mut clean = cfg.clone();
    clean.output_dir = None;
    to_json_string(&Report {
        command,
        config: &clean,
        result,
    })
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(dir.join(name), contents))
        .map_err(|e| Failure::Domain(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn emit_json(cfg: &RunConfig, name: &str, json: &str) -> Result<(), Failure> {
    match &cfg.output_dir {
        Some(dir) => write_file(dir, name, json.as_bytes()),
        None => Ok(()),
    }
}

fn read_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(Trajectory::read_csv(std::io::BufReader::new(file))?)
}

fn csv_of(traj: &Trajectory) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    Ok(buf)
}

fn given_pair(
    traj1: &Option<PathBuf>,
    traj2: &Option<PathBuf>,
) -> Result<Option<(Trajectory, Trajectory)>, Failure> {
    match (traj1, traj2) {
        (Some(a), Some(b)) => Ok(Some((read_trajectory(a)?, read_trajectory(b)?))),
        _ => Ok(None),
    }
}

fn seeded_pair(args: &PairArgs, cfg: &RunConfig) -> Result<(Trajectory, Trajectory), Failure> {
    if let Some(pair) = given_pair(&args.traj1, &args.traj2)? {
        return Ok(pair);
    }
    let (g1, g2) = cfg.grids()?;
    Ok(perturbed_pair(
        &cfg.endpoints(),
        (&g1, &g2),
        args.amplitude,
        cfg.seed,
    )?)
}

#[derive(Serialize)]
struct EvalResult {
    action: fokker_core::ActionBreakdown,
    el_sup_norm: f64,
    el_l2_norm: f64,
}

fn action_eval(args: &EvalArgs) -> Outcome {
    let cfg = load(&args.common)?;
    let params = cfg.params();
    let (a, b) = match given_pair(&args.traj1, &args.traj2)? {
        Some(pair) => pair,
        None => {
            let (g1, g2) = cfg.grids()?;
            let free = solve_free(&cfg.endpoints(), (&g1, &g2), &params)?;
            (free.trajectory1, free.trajectory2)
        }
    };
    let action = fokker_action(&a, &b, &params)?;
    let el = el_residual(&a, &b, &params)?;
    let out = report(
        "action eval",
        &cfg,
        EvalResult {
            action,
            el_sup_norm: el.sup_norm,
            el_l2_norm: el.l2_norm,
        },
    );
    emit_json(&cfg, "action.json", &out)?;
    Ok(out)
}

#[derive(Serialize)]
struct SolveResult<'a> {
    kind: fokker_core::solver::SolutionKind,
    residual_sup_norm: f64,
    residual_l2_norm: f64,
    trace: &'a [fokker_core::solver::ContinuationStep],
    energy_drift: Option<f64>,
    residual: &'a fokker_core::ResidualReport,
}

fn solved(cfg: &RunConfig, reference: bool) -> Result<Solution, Failure> {
    let params = cfg.params();
    let (g1, g2) = cfg.grids()?;
    let endpoints = cfg.endpoints();
    Ok(if reference {
        coulomb_reference(&endpoints, (&g1, &g2), &params)?
    } else {
        solve_el(&endpoints, (&g1, &g2), &params, &cfg.solve_config())?
    })
}

fn solve(args: &SolveArgs) -> Outcome {
    let cfg = load(&args.common)?;
    let dir = cfg.output_dir.clone().ok_or_else(|| {
        Failure::Usage("solve needs --out or \"output_dir\" in the config".into())
    })?;
    let sol = solved(&cfg, args.reference)?;
    let out = report(
        "solve",
        &cfg,
        SolveResult {
            kind: sol.kind,
            residual_sup_norm: sol.residual.sup_norm,
            residual_l2_norm: sol.residual.l2_norm,
            trace: &sol.trace,
            energy_drift: sol.energy_drift,
            residual: &sol.residual,
        },
    );
    write_file(&dir, "trajectory1.csv", &csv_of(&sol.trajectory1)?)?;
    write_file(&dir, "trajectory2.csv", &csv_of(&sol.trajectory2)?)?;
    write_file(&dir, "report.json", out.as_bytes())?;
    Ok(out)
}

#[derive(Serialize)]
struct Checked<T: Serialize> {
    passed: bool,
    threshold: f64,
    #[serde(flatten)]
    details: T,
}

fn finish<T: Serialize>(
    cfg: &RunConfig,
    name: &str,
    file: &str,
    passed: bool,
    threshold: f64,
    details: T,
) -> Outcome {
    let out = report(
        name,
        cfg,
        Checked {
            passed,
            threshold,
            details,
        },
    );
    emit_json(cfg, file, &out)?;
    if passed {
        Ok(out)
    } else {
        Err(Failure::Check(out))
    }
}

fn check_legendre(args: &PairArgs) -> Outcome {
    let cfg = load(&args.common)?;
    let (a, b) = seeded_pair(args, &cfg)?;
    let rep = legendre_check(&a, &b, &cfg.params())?;
    let passed = rep.rel_diff <= LEGENDRE_THRESHOLD;
    finish(
        &cfg,
        "check legendre",
        "legendre.json",
        passed,
        LEGENDRE_THRESHOLD,
        rep,
    )
}

fn check_gradient(args: &GradientArgs) -> Outcome {
    let cfg = load(&args.pair.common)?;
    let (a, b) = seeded_pair(&args.pair, &cfg)?;
    let rep = gradient_check(&a, &b, &cfg.params(), args.step)?;
    let passed = rep.max_rel_error <= GRADIENT_THRESHOLD;
    finish(
        &cfg,
        "check gradient",
        "gradient.json",
        passed,
        GRADIENT_THRESHOLD,
        rep,
    )
}

#[derive(Serialize)]
struct StationarityResult {
    solver_residual: f64,
    q_bracket_sup_norm: f64,
    p_bracket_sup_norm: f64,
    report: fokker_core::canonical::StationarityReport,
}

fn check_stationarity(args: &CommonArgs) -> Outcome {
    let cfg = load(args)?;
    let sol = solved(&cfg, false)?;
    let rep = canonical_stationarity(&sol.trajectory1, &sol.trajectory2, &cfg.params())?;
    let threshold = STATIONARITY_FACTOR * cfg.solver.tol;
    let passed = rep.max_sup_norm() <= threshold;
    finish(
        &cfg,
        "check stationarity",
        "stationarity.json",
        passed,
        threshold,
        StationarityResult {
            solver_residual: sol.residual.sup_norm,
            q_bracket_sup_norm: rep.q_bracket.sup_norm,
            p_bracket_sup_norm: rep.p_bracket.sup_norm,
            report: rep,
        },
    )
}

fn eigen_options(args: &EigenArgs, seed: u64) -> EigenOptions {
    let mut options = EigenOptions::new(args.k, args.eig_tol);
    options.seed = seed;
    options.target = match args.target {
        TargetArg::Lowest => SpectrumTarget::Lowest,
        TargetArg::SmallestMagnitude => SpectrumTarget::SmallestMagnitude,
    };
    options
}

#[derive(Serialize)]
struct SpectrumOut {
    metadata: fokker_core::quantum::OperatorMetadata,
    spectrum: fokker_core::quantum::SpectrumResult,
}

fn quantum_spectrum(args: &SpectrumArgs) -> Outcome {
    let cfg = load(&args.common)?;
    let lattice = build_lattice(&cfg.lattice_spec()?)?;
    let op = build_action_operator(&lattice, &cfg.params())?;
    let spectrum = eigenpairs(&op, &eigen_options(&args.eigen, cfg.seed))?;
    if let Some(dir) = &cfg.output_dir {
        let mut csv = String::from("index,lambda,residual,norm\n");
        for (i, ((l, r), n)) in spectrum
            .eigenvalues
            .iter()
            .zip(&spectrum.residuals)
            .zip(&spectrum.norms)
            .enumerate()
        {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                format_f64(*l),
                format_f64(*r),
                format_f64(*n)
            ));
        }
        write_file(dir, "spectrum.csv", csv.as_bytes())?;
    }
    let out = report(
        "quantum spectrum",
        &cfg,
        SpectrumOut {
            metadata: op.metadata.clone(),
            spectrum,
        },
    );
    emit_json(&cfg, "spectrum.json", &out)?;
    Ok(out)
}

fn quantum_scan(args: &ScanArgs) -> Outcome {
    let cfg = load(&args.common)?;
    if args.steps < 3 {
        return Err(Failure::Usage(format!(
            "--steps must be >= 3, got {}",
            args.steps
        )));
    }
    if !(args.from < args.to) {
        return Err(Failure::Usage("--from must be below --to".into()));
    }
    let values = linspace(args.from, args.to, args.steps);
    let table = stationarity_scan(
        &cfg.lattice_spec()?,
        &cfg.params(),
        args.param,
        &values,
        &eigen_options(&args.eigen, cfg.seed),
    )?;
    let csv = table.to_csv();
    if let Some(dir) = &cfg.output_dir {
        write_file(dir, "scan.csv", csv.as_bytes())?;
        write_file(
            dir,
            "scan.json",
            report("quantum scan", &cfg, &table).as_bytes(),
        )?;
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(main_with_args(["fokker", "frobnicate"]), 2);
        assert_eq!(main_with_args(["fokker", "check", "nothing"]), 2);
    }

    #[test]
    fn missing_config_is_usage_error() {
        let code = main_with_args([
            "fokker",
            "action",
            "eval",
            "--config",
            "/nonexistent/cfg.json",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn scan_flags_parse() {
        let cli = Cli::try_parse_from([
            "fokker",
            "--threads",
            "2",
            "quantum",
            "scan",
            "--config",
            "c.json",
            "--param",
            "T",
            "--from",
            "0.5",
            "--to",
            "1",
            "--steps",
            "4",
            "--k",
            "3",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        match cli.command {
            Command::Quantum(QuantumCommand::Scan(a)) => {
                assert_eq!(a.param, ScanParameter::Horizon);
                assert_eq!(a.eigen.k, 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
