//! `zenocert`: certify, sweep, simulate, check and validate hybrid systems.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible or bad bracket,
//! 3 verification failure.

mod artifacts;
mod plot;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use zenocert_core::certifier::{
    certify, check_certificate, sweep_lower_bound, CertError, CertMode, CertificationRequest, CertifyOutcome,
    CheckOptions, ZenoCertificate,
};
use zenocert_core::hybrid::HybridSystem;
use zenocert_core::io::load_system;
use zenocert_core::simulator::{
    batch_validate, classify, simulate, zeno_time_estimate, BatchConfig, Classification, ExecutionConfig,
    ZenoDiagnostics, ZenoTimeEstimate,
};
use zenocert_sdp::SolverConfig;

use artifacts::Run;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "zenocert", version, about = "Sum-of-squares Zeno stability certificates for hybrid systems")]
struct Cli {
    /// Seed for every randomized step (sampling checks, batch initial states).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent solves and simulations.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Default)]
    tolerance_profile: Profile,
    /// Directory receiving the outputs and the run manifest.
    #[arg(long, global = true, default_value = "zenocert-out")]
    output: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Profile {
    Default,
    /// Tighter solver, integrator and verification thresholds.
    Strict,
}

impl Profile {
    fn solver(self) -> SolverConfig {
        match self {
            Profile::Default => SolverConfig::default(),
            Profile::Strict => {
                SolverConfig { feasibility_tol: 1e-9, gap_tol: 1e-9, max_iterations: 300, ..SolverConfig::default() }
            }
        }
    }

    fn check(self, seed: u64) -> CheckOptions {
        let base = CheckOptions { seed, ..CheckOptions::default() };
        match self {
            Profile::Default => base,
            Profile::Strict => {
                CheckOptions { budget: 4000, residual_tol: 1e-7, eigen_tol: 1e-8, sample_tol: 1e-7, ..base }
            }
        }
    }

    /// Relative and absolute integration tolerances.
    fn integrator(self) -> (f64, f64) {
        match self {
            Profile::Default => (zenocert_core::simulator::DEFAULT_RTOL, zenocert_core::simulator::DEFAULT_ATOL),
            Profile::Strict => (1e-11, 1e-14),
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Search for a Zeno stability certificate.
    Certify(CertifyArgs),
    /// Bisect a scalar of the system for the smallest certifiable value.
    Sweep(SweepArgs),
    /// Simulate one execution and classify its asymptotics.
    Simulate(SimulateArgs),
    /// Re-verify a certificate against a system.
    Check(CheckArgs),
    /// Validate a system file, and optionally test a certificate against simulations.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Serialize)]
struct SystemArgs {
    /// System description (JSON).
    system: PathBuf,
    /// Override a named scalar of the system, as NAME=VALUE.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set C=VALUE`, the parameter bound of the bundled examples.
    #[arg(long, allow_hyphen_values = true)]
    param_bound: Option<f64>,
}

impl SystemArgs {
    fn overrides(&self) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for s in &self.sets {
            let (name, value) = s.split_once('=').with_context(|| format!("--set expects NAME=VALUE, got {s:?}"))?;
            let v: f64 = value.trim().parse().with_context(|| format!("--set {name}: {value:?} is not a number"))?;
            out.insert(name.trim().to_string(), v);
        }
        if let Some(c) = self.param_bound {
            out.insert("C".to_string(), c);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Standard,
    Extended,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    /// Condition set: Lyapunov functions only, or with barrier functions.
    #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
    mode: ModeArg,
    /// Barrier degree in extended mode (defaults to the Lyapunov degree).
    #[arg(long)]
    b_degree: Option<u32>,
    /// Use each Lyapunov function as its own barrier in extended mode.
    #[arg(long)]
    tie_b_to_v: bool,
    /// Let the Lyapunov functions depend on the parameters.
    #[arg(long)]
    parameter_dependent_v: bool,
    /// Contraction vector to try, comma separated per mode; repeat to build a grid.
    #[arg(long = "r", value_delimiter = ';', value_name = "R1,R2,..")]
    r_grid: Vec<String>,
    /// Always run the solver even when the vector field vanishes at an anchor.
    #[arg(long)]
    no_structural_shortcut: bool,
}

impl SearchArgs {
    fn request(&self, sys: HybridSystem, degree: u32, cli: &Cli) -> Result<CertificationRequest> {
        let mut req = CertificationRequest::new(sys, degree);
        req.mode = match self.mode {
            ModeArg::Standard => CertMode::Standard,
            ModeArg::Extended => CertMode::Extended {
                b_degree: self.b_degree.unwrap_or(degree),
                gamma_a: 1.0,
                tie_b_to_v: self.tie_b_to_v,
            },
        };
        req.parameter_dependent_v = self.parameter_dependent_v;
        if !self.r_grid.is_empty() {
            req.r_grid = self.r_grid.iter().map(|r| parse_list(r)).collect::<Result<_>>()?;
        }
        req.structural_shortcut = !self.no_structural_shortcut;
        req.solver = cli.tolerance_profile.solver();
        req.check = cli.tolerance_profile.check(cli.seed);
        req.jobs = cli.jobs.max(1);
        Ok(req)
    }
}

#[derive(Debug, Args, Serialize)]
struct CertifyArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Lyapunov polynomial degree (even).
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Scalar to bisect.
    #[arg(long, default_value = "C")]
    scalar: String,
    /// Lower end of the bracket (expected to fail).
    #[arg(long, allow_hyphen_values = true)]
    lo: f64,
    /// Upper end of the bracket (expected to certify).
    #[arg(long, allow_hyphen_values = true)]
    hi: f64,
    /// Final bracket width.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    /// Lyapunov degrees to sweep, comma separated.
    #[arg(long = "degree", value_delimiter = ',', default_value = "2")]
    degrees: Vec<u32>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Id of the initial mode.
    #[arg(long)]
    initial_mode: usize,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    /// Parameter values, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    #[arg(long, default_value_t = zenocert_core::simulator::DEFAULT_MAX_TRANSITIONS)]
    max_transitions: usize,
    /// Dwell time below which the run stops as Zeno-suspect.
    #[arg(long, default_value_t = zenocert_core::simulator::DEFAULT_MIN_DWELL)]
    min_dwell: f64,
    #[arg(long, default_value_t = zenocert_core::simulator::DEFAULT_HORIZON)]
    horizon: f64,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    /// Certificate file (JSON).
    certificate: PathBuf,
    #[command(flatten)]
    system: SystemArgs,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Certificate to test against simulated executions.
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Number of simulated executions.
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Parameter values for the simulations (defaults to a random draw from the sampling box).
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().with_context(|| format!("{v:?} is not a number in {s:?}"))).collect()
}

fn load(run: &mut Run, args: &SystemArgs) -> Result<HybridSystem> {
    let text = run.read_input(&args.system)?;
    load_system(&text, &args.overrides()?).with_context(|| format!("loading {}", args.system.display()))
}

fn state_names(sys: &HybridSystem) -> Vec<String> {
    sys.registry.names()[..sys.n_state()].to_vec()
}

fn run_certify(cli: &Cli, args: &CertifyArgs) -> Result<u8> {
    let mut run = Run::new(&cli.output, "certify", cli, cli.seed)?;
    let sys = load(&mut run, &args.system)?;
    let req = args.search.request(sys, args.degree, cli)?;
    let code = match certify(&req)? {
        CertifyOutcome::Certified(cert) => {
            run.write("certificate.json", cert.to_json() + "\n")?;
            println!("certified {} at degree {}", cert.system_name, args.degree);
            println!(
                "  r = {:?}, alpha = {:e}, gamma = {}",
                cert.constants.r, cert.constants.alpha, cert.constants.gamma
            );
            if cert.is_valid() {
                println!("  all algebraic, sampling and anchor checks passed");
                EXIT_OK
            } else {
                println!("  verification failed");
                EXIT_VERIFICATION
            }
        }
        CertifyOutcome::Failed(report) => {
            run.write_json("failure.json", &report)?;
            println!("no certificate for {} at degree {}", report.system_name, args.degree);
            if let Some(p) = &report.prescreen {
                println!("  prescreen without jump conditions: {}", p.status);
            }
            for p in &report.probes {
                println!("  r = {:?}: {} {}", p.r, p.status, p.message);
            }
            for n in &report.notes {
                println!("  note: {n}");
            }
            EXIT_INFEASIBLE
        }
    };
    run.finish(code)?;
    Ok(code)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    degree: u32,
    status: String,
    lower_bound: Option<f64>,
    final_bracket: Option<(f64, f64)>,
    ordered: Option<bool>,
    probes: Vec<zenocert_core::certifier::SweepProbe>,
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Result<u8> {
    let mut run = Run::new(&cli.output, "sweep", cli, cli.seed)?;
    let text = run.read_input(&args.system.system)?;
    let base = args.system.overrides()?;
    load_system(&text, &base).with_context(|| format!("loading {}", args.system.system.display()))?;

    let mut code = EXIT_OK;
    let mut summaries = Vec::new();
    for &degree in &args.degrees {
        let make = |value: f64| -> Result<CertificationRequest, CertError> {
            let mut o = base.clone();
            o.insert(args.scalar.clone(), value);
            let sys = load_system(&text, &o).map_err(|e| CertError::InvalidRequest(e.to_string()))?;
            args.search.request(sys, degree, cli).map_err(|e| CertError::InvalidRequest(format!("{e:#}")))
        };
        let summary = match sweep_lower_bound(&args.scalar, args.lo, args.hi, args.tolerance, degree, &make) {
            Ok(res) => SweepSummary {
                degree,
                status: "ok".into(),
                lower_bound: Some(res.lower_bound),
                final_bracket: res.brackets.last().copied(),
                ordered: Some(res.is_ordered()),
                probes: res.probes,
            },
            Err(CertError::InvalidBracket { lo_status, hi_status, message }) => {
                code = EXIT_INFEASIBLE;
                SweepSummary {
                    degree,
                    status: format!("{message} (lower end: {lo_status}; upper end: {hi_status})"),
                    lower_bound: None,
                    final_bracket: None,
                    ordered: None,
                    probes: Vec::new(),
                }
            }
            Err(e) => return Err(e.into()),
        };
        summaries.push(summary);
    }

    let mut table = format!(
        "sweep of {} over [{}, {}] to width {}\n{:>6}  {:>12}  {:>27}  {:>6}  {}\n",
        args.scalar, args.lo, args.hi, args.tolerance, "degree", "lower bound", "final bracket", "probes", "status"
    );
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["degree", "lower_bound", "bracket_lo", "bracket_hi", "probes", "status"])?;
    let mut probes_csv = csv::Writer::from_writer(Vec::new());
    probes_csv.write_record(["degree", "order", "value", "certified", "excluded", "status"])?;
    for s in &summaries {
        let bound = s.lower_bound.map_or("n/a".to_string(), |b| format!("{b:.6}"));
        let bracket = s.final_bracket.map_or("n/a".to_string(), |(a, b)| format!("[{a:.6}, {b:.6}]"));
        table.push_str(&format!(
            "{:>6}  {:>12}  {:>27}  {:>6}  {}\n",
            s.degree,
            bound,
            bracket,
            s.probes.len(),
            s.status
        ));
        let (blo, bhi) =
            s.final_bracket.map_or((String::new(), String::new()), |(a, b)| (format!("{a:e}"), format!("{b:e}")));
        csv.write_record([
            s.degree.to_string(),
            s.lower_bound.map_or(String::new(), |b| format!("{b:e}")),
            blo,
            bhi,
            s.probes.len().to_string(),
            s.status.clone(),
        ])?;
        for (k, p) in s.probes.iter().enumerate() {
            probes_csv.write_record([
                s.degree.to_string(),
                k.to_string(),
                format!("{:e}", p.value),
                p.certified.to_string(),
                p.excluded.to_string(),
                p.status.clone(),
            ])?;
        }
    }
    print!("{table}");
    run.write("sweep.txt", &table)?;
    run.write("sweep.csv", csv.into_inner().context("flushing csv")?)?;
    run.write("sweep_probes.csv", probes_csv.into_inner().context("flushing csv")?)?;
    run.write_json("sweep.json", &summaries)?;
    run.finish(code)?;
    Ok(code)
}

#[derive(Debug, Serialize)]
struct SimulationReport<'a> {
    system: &'a str,
    config: &'a ExecutionConfig,
    message: &'a str,
    rejected_crossings: usize,
    diagnostics: &'a ZenoDiagnostics,
    zeno_time: Option<ZenoTimeEstimate>,
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> Result<u8> {
    let mut run = Run::new(&cli.output, "simulate", cli, cli.seed)?;
    let sys = load(&mut run, &args.system)?;
    let x0 = parse_list(&args.x0)?;
    let params = match &args.params {
        Some(p) => parse_list(p)?,
        None if sys.registry.n_params() == 0 => Vec::new(),
        None => bail!("the system has {} parameter(s); pass --params", sys.registry.n_params()),
    };
    let (rtol, atol) = cli.tolerance_profile.integrator();
    let config = ExecutionConfig {
        max_transitions: args.max_transitions,
        min_dwell: args.min_dwell,
        horizon: args.horizon,
        rtol,
        atol,
        ..ExecutionConfig::new(args.initial_mode, x0, params)
    };
    let exec = simulate(&sys, &config).context("simulation rejected")?;
    let diag = classify(&exec);
    let zeno_time = zeno_time_estimate(&diag).ok();

    let names = state_names(&sys);
    let mut traj = Vec::new();
    exec.write_csv(&names, &mut traj)?;
    run.write("trajectory.csv", traj)?;
    run.write("phase.svg", plot::phase_portrait(&sys, &exec, &names))?;
    run.write_json(
        "classification.json",
        &SimulationReport {
            system: &sys.name,
            config: &config,
            message: &exec.message,
            rejected_crossings: exec.rejected_crossings,
            diagnostics: &diag,
            zeno_time,
        },
    )?;

    println!("{} transitions, stopped by {:?}", diag.transitions, diag.termination);
    println!("classification: {:?} (empirical)", diag.classification);
    if let Some(rho) = diag.rho {
        println!("  per-cycle dwell ratio {rho:.6}");
    }
    if let (Classification::Zeno, Some(est)) = (diag.classification, zeno_time) {
        println!("  Zeno time {:.9} +/- {:.2e}", est.tau_inf, est.error);
    }
    run.finish(EXIT_OK)?;
    Ok(EXIT_OK)
}

fn run_check(cli: &Cli, args: &CheckArgs) -> Result<u8> {
    let mut run = Run::new(&cli.output, "check", cli, cli.seed)?;
    let cert_text = run.read_input(&args.certificate)?;
    let sys = load(&mut run, &args.system)?;
    let cert = ZenoCertificate::from_json(&cert_text)?;
    let report = check_certificate(&sys, &cert, &cli.tolerance_profile.check(cli.seed))?;
    run.write_json("verification.json", &report)?;
    let code = if report.valid {
        println!(
            "certificate verified: {} algebraic, {} sampling, {} anchor checks",
            report.algebraic.len(),
            report.sampling.len(),
            report.anchors.len()
        );
        EXIT_OK
    } else {
        println!("certificate rejected");
        for f in &report.failures {
            println!("  failed: {f}");
        }
        for v in &report.invariant_violations {
            println!("  invariant: {v}");
        }
        EXIT_VERIFICATION
    };
    run.finish(code)?;
    Ok(code)
}

#[derive(Debug, Serialize)]
struct SystemSummary {
    name: String,
    states: Vec<String>,
    parameters: Vec<String>,
    modes: Vec<usize>,
    cycle: Option<Vec<usize>>,
    violations: Vec<String>,
}

fn run_validate(cli: &Cli, args: &ValidateArgs) -> Result<u8> {
    let mut run = Run::new(&cli.output, "validate", cli, cli.seed)?;
    let sys = load(&mut run, &args.system)?;
    let report = sys.validate();
    let summary = SystemSummary {
        name: sys.name.clone(),
        states: state_names(&sys),
        parameters: sys.registry.names()[sys.n_state()..].to_vec(),
        modes: sys.modes.iter().map(|m| m.id).collect(),
        cycle: sys.cycle_order().ok(),
        violations: report.violations.clone(),
    };
    run.write_json("system.json", &summary)?;
    if !report.is_valid() {
        println!("{} is not a valid cyclic hybrid system", sys.name);
        for v in &report.violations {
            println!("  {v}");
        }
        run.finish(EXIT_INPUT)?;
        return Ok(EXIT_INPUT);
    }
    println!("{}: {} modes in the cycle {:?}", sys.name, sys.modes.len(), summary.cycle.as_deref().unwrap_or(&[]));

    let mut code = EXIT_OK;
    if let Some(path) = &args.certificate {
        let cert = ZenoCertificate::from_json(&run.read_input(path)?)?;
        let (rtol, atol) = cli.tolerance_profile.integrator();
        let params = args.params.as_deref().map(parse_list).transpose()?;
        let cfg = BatchConfig { params, rtol, atol, jobs: cli.jobs.max(1), ..BatchConfig::new(args.count, cli.seed) };
        let batch = batch_validate(&sys, &cert, &cfg).context("batch validation")?;
        run.write_json("batch.json", &batch)?;
        println!(
            "{} of {} simulated executions classified Zeno; largest terminal distance to an anchor {:.3e}",
            batch.zeno_count,
            batch.samples.len(),
            batch.max_terminal_distance
        );
        if batch.zeno_count < batch.samples.len() {
            for s in batch.samples.iter().filter(|s| s.classification != Classification::Zeno) {
                println!("  sample {} from mode {} at {:?}: {:?}", s.index, s.mode, s.x0, s.classification);
            }
            code = EXIT_VERIFICATION;
        }
    }
    run.finish(code)?;
    Ok(code)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Certify(a) => run_certify(cli, a),
        Command::Sweep(a) => run_sweep(cli, a),
        Command::Simulate(a) => run_simulate(cli, a),
        Command::Check(a) => run_check(cli, a),
        Command::Validate(a) => run_validate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn overrides_parse_names_and_the_bound_shorthand() {
        let args = SystemArgs {
            system: Path::new("x.json").into(),
            sets: vec!["a=1.5".into(), " b = -2".into()],
            param_bound: Some(3.0),
        };
        let o = args.overrides().unwrap();
        assert_eq!(o["a"], 1.5);
        assert_eq!(o["b"], -2.0);
        assert_eq!(o["C"], 3.0);
        let bad = SystemArgs { sets: vec!["a".into()], ..args };
        assert!(bad.overrides().is_err());
    }

    #[test]
    fn lists_parse_or_fail_cleanly() {
        assert_eq!(parse_list("0.5, -1e-3").unwrap(), vec![0.5, -1e-3]);
        assert!(parse_list("0.5,x").is_err());
    }

    #[test]
    fn strict_profile_is_tighter() {
        let (d, s) = (Profile::Default.check(0), Profile::Strict.check(0));
        assert!(s.residual_tol < d.residual_tol && s.eigen_tol < d.eigen_tol && s.sample_tol < d.sample_tol);
        assert!(Profile::Strict.integrator().0 < Profile::Default.integrator().0);
    }
}
