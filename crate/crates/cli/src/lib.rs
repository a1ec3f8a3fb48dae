//! `mechlin` command-line front end.
//!
//! [`run`] takes the argument list and two writers and returns the process
//! exit code, so the commands can be driven in-process by tests.

pub mod artifact;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mechlin::checker::{check_all, MFReport, Overall, SamplingPlan, Status, DEFAULT_SEED};
use mechlin::expr::{parse_expr, ParseContext};
use mechlin::geometry::MechanicalSystem;
use mechlin::linalg::controllability_indices;
use mechlin::simulator::{correspondence_error, ControlSignal, SimError};
use mechlin::synthesis::{synthesize, SynthesisError};
use mechlin::system_file::SystemFile;

use crate::artifact::{system_hash, Artifact};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_LINEARIZABLE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;
pub const EXIT_SYNTHESIS: i32 = 5;
pub const EXIT_MISMATCH: i32 = 6;
pub const EXIT_INTEGRATION: i32 = 7;

pub const SEED_VAR: &str = "MECHLIN_SEED";

#[derive(Debug, Parser)]
#[command(name = "mechlin", version, about = "Mechanical feedback linearization of single-input mechanical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test the linearizability conditions on the system's domain box.
    Check(CheckArgs),
    /// Construct the linearizing diffeomorphism and feedback.
    Linearize(LinearizeArgs),
    /// Simulate the closed loop next to the linear model and compare.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub system: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Relative membership tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Sampling seed; defaults to $MECHLIN_SEED, then a fixed value.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    pub system: PathBuf,
    /// Linearizing output h to verify instead of searching for one.
    #[arg(long, allow_hyphen_values = true)]
    pub output: Option<String>,
    /// Where to write the artifact; standard output when omitted.
    #[arg(long)]
    pub emit: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub system: PathBuf,
    pub artifact: PathBuf,
    /// Initial state `x1,..,xn,y1,..,yn`.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: String,
    /// `zero`, `sin:a,w`, or a file of `t,u` rows.
    #[arg(long, default_value = "zero")]
    pub utilde: String,
    #[arg(long = "T", default_value_t = 2.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// CSV path; the linear-model trajectory goes next to it with a `.linear` suffix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure that ends the command with `code`.
#[derive(Debug)]
struct Exit {
    code: i32,
    message: String,
}

impl Exit {
    fn new(code: i32, message: impl Into<String>) -> Exit {
        Exit { code, message: message.into() }
    }

    fn input(message: impl Into<String>) -> Exit {
        Exit::new(EXIT_INPUT, message)
    }
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a, out),
        Command::Linearize(a) => cmd_linearize(a, out, err),
        Command::Simulate(a) => cmd_simulate(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn io_exit(path: &Path, e: io::Error) -> Exit {
    Exit::input(format!("{}: {e}", path.display()))
}

fn load_system(path: &Path) -> Result<(SystemFile, MechanicalSystem), Exit> {
    let text = fs::read_to_string(path).map_err(|e| io_exit(path, e))?;
    let file: SystemFile = serde_json::from_str(&text).map_err(|e| Exit::input(format!("{}: {e}", path.display())))?;
    let sys = file.build().map_err(|e| Exit::input(format!("{}: {e}", path.display())))?;
    Ok((file, sys))
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Exit> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| Exit::input(format!("{SEED_VAR}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Boundary => "boundary",
    }
}

pub fn render_text(report: &MFReport) -> String {
    let mut s = String::new();
    let summary: Vec<String> =
        report.verdicts.iter().map(|v| format!("{} {}", v.condition, status_word(v.status))).collect();
    let _ = writeln!(s, "{}", summary.join(", "));
    for v in &report.verdicts {
        let _ = write!(
            s,
            "  {:<10} {:<8} residual {:.3e}  failed {}/{}",
            v.condition,
            status_word(v.status),
            v.residual,
            v.samples_failed,
            report.samples
        );
        if let Some(w) = &v.witness {
            let _ = write!(s, "  witness {w:?}");
        }
        s.push('\n');
    }
    let overall = match report.overall {
        Overall::Linearizable => "linearizable",
        Overall::NotLinearizable => "not linearizable",
        Overall::Inconclusive => "inconclusive",
    };
    let _ = writeln!(s, "overall: {overall}");
    if !report.excluded.is_empty() {
        let _ = writeln!(s, "excluded regions ({}):", report.excluded.len());
        for r in &report.excluded {
            let _ = writeln!(s, "  {:?}  {}", r.point, r.reason);
        }
    }
    if !report.note.is_empty() {
        let _ = writeln!(s, "note: {}", report.note);
    }
    s
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<i32, Exit> {
    let (_, sys) = load_system(&a.system)?;
    let plan = SamplingPlan {
        sample_count: a.samples,
        rng_seed: resolve_seed(a.seed)?,
        membership_tol: a.tol,
        ..SamplingPlan::default()
    };
    let report = check_all(&sys, &plan).map_err(|e| Exit::input(e.to_string()))?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("reports serialize") + "\n",
        Format::Text => render_text(&report),
    };
    out.write_all(text.as_bytes()).map_err(|e| Exit::input(e.to_string()))?;
    Ok(match report.overall {
        Overall::Linearizable => EXIT_OK,
        Overall::NotLinearizable => EXIT_NOT_LINEARIZABLE,
        Overall::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn cmd_linearize(a: &LinearizeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Exit> {
    let (file, sys) = load_system(&a.system)?;
    let plan = SamplingPlan { rng_seed: resolve_seed(a.seed)?, ..SamplingPlan::default() };
    let h = match &a.output {
        Some(text) => {
            let names: Vec<&String> = file.params.keys().collect();
            let ctx = ParseContext::new(file.n, &names);
            Some(parse_expr(text, &ctx).map_err(|e| Exit::input(format!("--output: {e}")))?)
        }
        None => None,
    };
    let syn = synthesize(&sys, h.as_ref(), &plan).map_err(|e| match e {
        SynthesisError::NotFound(_) => {
            Exit::new(EXIT_NOT_FOUND, format!("{e}\nsupply a linearizing output with --output \"<h expression>\""))
        }
        other => Exit::new(EXIT_SYNTHESIS, other.to_string()),
    })?;
    let artifact = Artifact::from_synthesis(&file, &syn);
    let json = serde_json::to_string_pretty(&artifact).expect("artifacts serialize") + "\n";

    // with the artifact on stdout the summary moves to stderr
    let mut summary = String::new();
    let m = &syn.model;
    let _ = writeln!(summary, "h = {}", artifact.h);
    let _ = writeln!(summary, "output: {}", syn.output.method);
    if let Some(l) = &artifact.diagnostics.lambda {
        let _ = writeln!(summary, "lambda correction: {l}");
    }
    let _ = writeln!(summary, "E = {:?}", artifact.model.e);
    let _ = writeln!(summary, "b = {:?}", artifact.model.b);
    if m.offset.amax() > 0.0 {
        let _ = writeln!(summary, "offset = {:?}", artifact.model.offset);
    }
    let _ = writeln!(summary, "fit residual = {:.3e}", m.fit_residual);
    let _ = writeln!(summary, "controllability indices = {:?}", controllability_indices(&m.e, &m.b, plan.rank_tol));
    match &a.emit {
        Some(path) => {
            fs::write(path, json).map_err(|e| io_exit(path, e))?;
            let _ = writeln!(summary, "artifact written to {}", path.display());
            out.write_all(summary.as_bytes()).map_err(|e| Exit::input(e.to_string()))?;
        }
        None => {
            out.write_all(json.as_bytes()).map_err(|e| Exit::input(e.to_string()))?;
            let _ = err.write_all(summary.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

/// `zero`, `sin:a,w`, or a path to a table of `t,u` rows (a non-numeric
/// first row is taken as a header).
pub fn parse_signal(spec: &str) -> Result<ControlSignal, String> {
    if spec == "zero" {
        return Ok(ControlSignal::Zero);
    }
    if let Some(rest) = spec.strip_prefix("sin:") {
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        return match parts.as_slice() {
            [a, w] => match (a.parse::<f64>(), w.parse::<f64>()) {
                (Ok(a), Ok(w)) if a.is_finite() && w.is_finite() => Ok(ControlSignal::Sine { a, w }),
                _ => Err(format!("bad sine parameters in `{spec}`")),
            },
            _ => Err(format!("expected `sin:a,w`, got `{spec}`")),
        };
    }
    let text = fs::read_to_string(spec).map_err(|e| format!("{spec}: {e}"))?;
    let (mut t, mut u) = (Vec::new(), Vec::new());
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
        let parsed = match fields.as_slice() {
            [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((a, b)) => {
                t.push(a);
                u.push(b);
            }
            None if t.is_empty() && line_no == 0 => continue,
            None => return Err(format!("{spec}:{}: expected two numbers", line_no + 1)),
        }
    }
    ControlSignal::table(t, u).ok_or_else(|| format!("{spec}: need at least two rows with increasing, finite times"))
}

fn linear_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}.linear.{ext}"))
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, Exit> {
    let (file, sys) = load_system(&a.system)?;
    let text = fs::read_to_string(&a.artifact).map_err(|e| io_exit(&a.artifact, e))?;
    let art: Artifact =
        serde_json::from_str(&text).map_err(|e| Exit::input(format!("{}: {e}", a.artifact.display())))?;
    if art.system_hash != system_hash(&file) {
        return Err(Exit::new(
            EXIT_MISMATCH,
            format!("{} was built for a different system (hash {})", a.artifact.display(), art.system_hash),
        ));
    }
    let params = file.params.keys().cloned().collect();
    let restored = art.restore(&params).map_err(|e| Exit::input(format!("{}: {e}", a.artifact.display())))?;
    let n = file.n;
    let z0: Vec<f64> = a
        .z0
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Exit::input(format!("--z0: expected {} comma-separated numbers", 2 * n)))?;
    if z0.len() != 2 * n {
        return Err(Exit::input(format!("--z0: expected {} values, got {}", 2 * n, z0.len())));
    }
    let signal = parse_signal(&a.utilde).map_err(|e| Exit::input(format!("--utilde: {e}")))?;
    let c = correspondence_error(
        &sys,
        &restored.model,
        &restored.diffeo,
        &restored.feedback,
        &z0[..n],
        &z0[n..],
        &signal,
        a.t_end,
        a.dt,
    )
    .map_err(|e| match e {
        SimError::BadGrid { .. } | SimError::StartOutside(_) | SimError::StateSize { .. } => Exit::input(e.to_string()),
        other => Exit::new(EXIT_INTEGRATION, other.to_string()),
    })?;
    if let Some(path) = &a.out {
        let lin = linear_path(path);
        let f = fs::File::create(path).map_err(|e| io_exit(path, e))?;
        c.original.write_csv(io::BufWriter::new(f)).map_err(|e| io_exit(path, e))?;
        let f = fs::File::create(&lin).map_err(|e| io_exit(&lin, e))?;
        c.linear.write_csv(io::BufWriter::new(f)).map_err(|e| io_exit(&lin, e))?;
    }
    let report = format!(
        "steps = {}\ncorrespondence_error = {:.6e}\nconfiguration_error = {:.6e}\n",
        c.original.times.len() - 1,
        c.error,
        c.configuration_error
    );
    out.write_all(report.as_bytes()).map_err(|e| Exit::input(e.to_string()))?;
    Ok(EXIT_OK)
}
