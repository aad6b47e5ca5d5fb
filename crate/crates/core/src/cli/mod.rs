//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or precondition error, 2 Picard
//! iteration did not converge, 3 not contracting or divergent UHR series,
//! 4 stability bound violated.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    a_priori_bound, check_q3, stability_experiment, uh_gamma, uhr_b, BoundInputs, BoundKind,
    BoundReport, BoundValue, SolveSettings, StabilityMode, StabilityReport,
};
use crate::error::Error;
use crate::solver::{
    check_contraction, solve_picard, ContractionCertificate, LipschitzData, SolutionTrace,
};
use config::{Config, ConfigError, Validated};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_NOT_CONTRACTING: i32 = 3;
pub const EXIT_BOUND_VIOLATED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "psi-caputo",
    version,
    about = "Solve and certify ψ-Caputo implicit integro-differential problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for CSV traces and report.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override grid.n from the configuration
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,
    /// Suppress standard output
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the problem and write solution.csv
    Solve(CommonArgs),
    /// Check the contraction condition L < 1
    Certify(CommonArgs),
    /// Evaluate the a-priori bound and stability constants
    Bound(CommonArgs),
    /// Run a perturbation experiment and write stability.csv
    Stability(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Certify(_) => "certify",
            Command::Bound(_) => "bound",
            Command::Stability(_) => "stability",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve(a) | Command::Certify(a) | Command::Bound(a) | Command::Stability(a) => {
                a
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Debug, Serialize)]
struct GridInfo {
    n: usize,
    nodes: usize,
    psi_span: f64,
}

#[derive(Debug, Serialize)]
struct SolveInfo {
    status: &'static str,
    iterates: usize,
    last_sup_diff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_max_abs: Option<f64>,
}

impl SolveInfo {
    fn from_trace(t: &SolutionTrace) -> Self {
        SolveInfo {
            status: "converged",
            iterates: t.iterates,
            last_sup_diff: t.sup_diffs.last().copied().unwrap_or(0.0),
            residual: Some(t.residual),
            theta_max_abs: Some(t.theta.sup_norm()),
        }
    }

    fn from_error(e: &Error) -> Option<Self> {
        match e {
            Error::NoConvergence {
                max_iter,
                last_diff,
            } => Some(SolveInfo {
                status: "no_convergence",
                iterates: *max_iter,
                last_sup_diff: *last_diff,
                residual: None,
                theta_max_abs: None,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize)]
struct StabilityInfo {
    mode: StabilityMode,
    h: String,
    epsilon: f64,
    gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_q3: Option<f64>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<String>,
    max_deviation: f64,
    min_bound: f64,
    satisfied: bool,
    unperturbed: SolveInfo,
    perturbed: SolveInfo,
}

impl From<&StabilityReport> for StabilityInfo {
    fn from(r: &StabilityReport) -> Self {
        StabilityInfo {
            mode: r.mode,
            h: r.h.to_string(),
            epsilon: r.epsilon,
            gamma: r.gamma,
            gamma_q3: r.gamma_q3,
            b: r.b_constant,
            rho: r.rho.as_ref().map(|e| e.to_string()),
            max_deviation: r.max_deviation(),
            min_bound: r.bound.iter().copied().fold(f64::INFINITY, f64::min),
            satisfied: r.satisfied,
            unperturbed: SolveInfo::from_trace(&r.theta),
            perturbed: SolveInfo::from_trace(&r.omega),
        }
    }
}

#[derive(Debug, Serialize)]
struct Timing {
    started_unix_ms: u128,
    elapsed_ms: f64,
}

/// report.json. Keys serialize in declaration order; `timing` is the only
/// field that varies between identical runs.
#[derive(Debug, Serialize)]
struct RunReport {
    tool: ToolInfo,
    command: &'static str,
    config: Config,
    grid: GridInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz: Option<LipschitzData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contraction: Option<ContractionCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve: Option<SolveInfo>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    bounds: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stability: Option<StabilityInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    exit_code: i32,
    timing: Timing,
}

/// Parses arguments and runs one subcommand, returning the exit code.
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
    execute(&cli.command)
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
        Error::DivergentSeries { .. } => EXIT_NOT_CONTRACTING,
        _ => EXIT_CONFIG,
    }
}

struct Session<'a> {
    args: &'a CommonArgs,
    started: Instant,
    started_unix_ms: u128,
    out: Vec<String>,
}

impl Session<'_> {
    fn say(&mut self, line: String) {
        self.out.push(line);
    }

    fn flush(&self) {
        if !self.args.quiet {
            let mut stdout = std::io::stdout().lock();
            for line in &self.out {
                let _ = writeln!(stdout, "{line}");
            }
        }
    }
}

fn execute(command: &Command) -> i32 {
    let args = command.common();
    let mut session = Session {
        args,
        started: Instant::now(),
        started_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        out: Vec::new(),
    };
    let validated = match Config::load(&args.config).and_then(|c| c.validate(args.grid_n)) {
        Ok(v) => v,
        Err(ConfigError { field, message }) => {
            eprintln!("error: {field}: {message}");
            return EXIT_CONFIG;
        }
    };
    let mut report = RunReport {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        command: command.name(),
        config: validated.config.clone(),
        grid: GridInfo {
            n: validated.grid.intervals(),
            nodes: validated.grid.len(),
            psi_span: validated.grid.psi_span(),
        },
        lipschitz: None,
        contraction: None,
        solve: None,
        bounds: Vec::new(),
        stability: None,
        error: None,
        exit_code: EXIT_OK,
        timing: Timing {
            started_unix_ms: 0,
            elapsed_ms: 0.0,
        },
    };
    let result = match command {
        Command::Solve(_) => cmd_solve(&validated, &mut report, &mut session),
        Command::Certify(_) => cmd_certify(&validated, &mut report, &mut session),
        Command::Bound(_) => cmd_bound(&validated, &mut report, &mut session),
        Command::Stability(_) => cmd_stability(&validated, &mut report, &mut session),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if report.solve.is_none() {
                report.solve = SolveInfo::from_error(&e);
            }
            report.error = Some(e.to_string());
            exit_code_for(&e)
        }
    };
    report.exit_code = code;
    session.flush();
    if let Some(dir) = &args.out {
        report.timing = Timing {
            started_unix_ms: session.started_unix_ms,
            elapsed_ms: session.started.elapsed().as_secs_f64() * 1e3,
        };
        if let Err(e) = write_report(dir, &report) {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    code
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Precondition(format!("cannot write {}: {e}", path.display()))
}

fn write_report(dir: &Path, report: &RunReport) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).map_err(|e| io_error(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))
}

/// Writes columns as CSV using shortest round-trip decimal formatting.
fn write_csv(dir: &Path, name: &str, header: &[&str], columns: &[&[f64]]) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
    w.write_record(header).map_err(|e| io_error(&path, e))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| format!("{:?}", c[i])))
            .map_err(|e| io_error(&path, e))?;
    }
    w.flush().map_err(|e| io_error(&path, e))
}

fn cmd_solve(v: &Validated, report: &mut RunReport, session: &mut Session) -> crate::Result<i32> {
    let trace = solve_picard(&v.spec, v.grid.clone(), v.tol, v.max_iter)?;
    report.solve = Some(SolveInfo::from_trace(&trace));
    if let Some(dir) = &session.args.out {
        write_csv(
            dir,
            "solution.csv",
            &["z", "theta", "g"],
            &[v.grid.nodes(), trace.theta.values(), trace.g.values()],
        )?;
    }
    let last = v.grid.len() - 1;
    session.say(format!("converged after {} iterations", trace.iterates));
    session.say(format!(
        "theta({:?}) = {:?}",
        v.grid.nodes()[last],
        trace.theta.values()[last]
    ));
    session.say(format!("residual = {:?}", trace.residual));
    Ok(EXIT_OK)
}

fn certify(
    v: &Validated,
    report: &mut RunReport,
) -> crate::Result<(LipschitzData, ContractionCertificate)> {
    let lip = v.lipschitz()?;
    let cert = check_contraction(&v.spec, &lip)?;
    report.lipschitz = Some(lip);
    report.contraction = Some(cert);
    Ok((lip, cert))
}

fn cmd_certify(v: &Validated, report: &mut RunReport, session: &mut Session) -> crate::Result<i32> {
    let (lip, cert) = certify(v, report)?;
    session.say(format!(
        "W1 = {:?}, W2 = {:?}, W3 = {:?} ({:?})",
        lip.w1, lip.w2, lip.w3, lip.provenance
    ));
    session.say(format!("L = {:?}", cert.l));
    if cert.contracting {
        session.say("contracting: yes".into());
        Ok(EXIT_OK)
    } else {
        session.say("contracting: no".into());
        Ok(EXIT_NOT_CONTRACTING)
    }
}

fn cmd_bound(v: &Validated, report: &mut RunReport, session: &mut Session) -> crate::Result<i32> {
    let (lip, _) = certify(v, report)?;
    let spec = &v.spec;
    let inputs = BoundInputs::new(spec.alpha(), spec.psi(), spec.b(), Some(&lip));

    let a_priori = a_priori_bound(spec, &lip)?;
    session.say(format!("a_priori_bound = {a_priori:?}"));
    report.bounds.push(BoundReport::new(
        BoundKind::APriori,
        BoundValue::Scalar(a_priori),
        inputs.clone(),
    )?);

    let gamma = uh_gamma(spec.alpha(), spec.psi(), spec.b(), &lip)?;
    session.say(format!("gamma = {gamma:?}"));
    report.bounds.push(BoundReport::new(
        BoundKind::UH,
        BoundValue::Scalar(gamma),
        inputs.clone(),
    )?);

    if let Some(rho) = v.rho() {
        let gq3 = check_q3(rho, spec.alpha(), &v.grid)?;
        session.say(format!("gamma_q3 = {gq3:?}"));
        let b = uhr_b(gq3, &lip)?;
        session.say(format!("B = {b:?}"));
        let mut inputs = inputs;
        inputs.gamma_q3 = Some(gq3);
        report.bounds.push(BoundReport::new(
            BoundKind::UHR,
            BoundValue::Scalar(b),
            inputs,
        )?);
    }
    Ok(EXIT_OK)
}

fn cmd_stability(
    v: &Validated,
    report: &mut RunReport,
    session: &mut Session,
) -> crate::Result<i32> {
    let st = v
        .stability
        .as_ref()
        .ok_or_else(|| Error::Precondition("stability section required".into()))?;
    let (lip, _) = certify(v, report)?;
    let r = stability_experiment(
        &v.spec,
        &lip,
        &st.h,
        st.epsilon,
        st.mode,
        v.rho(),
        v.grid.clone(),
        SolveSettings {
            tol: v.tol,
            max_iter: v.max_iter,
        },
    )?;
    report.stability = Some(StabilityInfo::from(&r));
    if let Some(dir) = &session.args.out {
        write_csv(
            dir,
            "stability.csv",
            &["z", "theta", "omega", "deviation", "bound"],
            &[
                v.grid.nodes(),
                r.theta.theta.values(),
                r.omega.theta.values(),
                &r.deviation,
                &r.bound,
            ],
        )?;
    }
    session.say(format!("max deviation = {:?}", r.max_deviation()));
    session.say(format!("gamma = {:?}", r.gamma));
    if let Some(b) = r.b_constant {
        session.say(format!("B = {b:?}"));
    }
    if r.satisfied {
        session.say(format!("{:?} bound satisfied", r.mode));
        Ok(EXIT_OK)
    } else {
        session.say(format!("{:?} bound violated", r.mode));
        Ok(EXIT_BOUND_VIOLATED)
    }
}
