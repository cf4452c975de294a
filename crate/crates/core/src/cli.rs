//! Command-line front end.
//!
//! `solve` runs the decentralized solver on an instance and writes a trace,
//! a final report, the constants and a manifest into an output directory.
//! `constants` prints the problem constants, `plotdata` splits a trace into
//! one series file per column and `generate` writes a random instance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dcopf::{self, DcOpfInstance};
use crate::error::{Error, Result};
use crate::instance::{parse_instance, Instance, ProblemFile};
use crate::oracle::{solve_centralized, OracleSolution};
use crate::problem::{centralized_objective, ProblemSpec};
use crate::random::{random_instance, RandomParams};
use crate::saddle::{compute_constants, ProblemConstants};
use crate::solver::{run_with, Comparator, RunTrace, SolverConfig, SolverOutput, StepSize, TRACE_COLUMNS};
use crate::graph::{DirectCommunicator, ParallelCommunicator};

#[derive(Debug, Parser)]
#[command(name = "extragrad", version, about = "Decentralized extragradient solver for coupled convex programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the decentralized solver and write trace, report, constants and manifest.
    Solve(SolveArgs),
    /// Print the problem constants and the derived step size.
    Constants(ConstantsArgs),
    /// Split a trace into one `iter,value` series file per column.
    Plotdata(PlotdataArgs),
    /// Write a seeded random instance.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Kv,
    Json,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file, a bundled instance name, or `random_seed<N>`.
    pub instance: String,
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
    /// Fixed step size; derived from the problem constants when omitted.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub record_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop early once the summed residual norms drop to this value.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Also solve the centralized problem and report the objective gap.
    #[arg(long)]
    pub with_oracle: bool,
    /// Fix the first bus angle at zero (DC-OPF instances).
    #[arg(long)]
    pub pin_slack: bool,
    /// Format of the final report.
    #[arg(long, value_enum, default_value_t = OutputFormat::Kv)]
    pub format: OutputFormat,
    /// Defaults to `./runs/<name>-<timestamp>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Draw the initial primal point uniformly in the boxes using `--seed`.
    #[arg(long)]
    pub random_init: bool,
    /// Halve the step and restart on non-finite values.
    #[arg(long)]
    pub adaptive_step: bool,
    /// Run agent-local work on all cores.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    pub instance: String,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    #[arg(long)]
    pub pin_slack: bool,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    pub trace: PathBuf,
    /// Defaults to a `series` directory next to the trace.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 for unusable input, 3 for divergence, 4 for
/// file system failures and 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 4,
        Error::Divergence { .. } => 3,
        Error::NoConvergence(_) => 1,
        Error::Dimension { .. }
        | Error::InvalidSpec(_)
        | Error::Disconnected
        | Error::ZeroMatrix
        | Error::Infeasible(_)
        | Error::NonQuadratic(_)
        | Error::Parse(_) => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a).map(|dir| println!("wrote {}", dir.display())),
        Command::Constants(a) => cmd_constants(a).map(|text| print!("{text}")),
        Command::Plotdata(a) => cmd_plotdata(&a.trace, a.out_dir.as_deref()).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Directory searched for bundled instances by name.
pub fn data_dir() -> PathBuf {
    std::env::var_os("EXTRAGRAD_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data")))
}

/// An instance ready to solve, with the text it came from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub spec: ProblemSpec,
    pub dcopf: Option<DcOpfInstance>,
    /// Source file, or `None` for generated instances.
    pub path: Option<PathBuf>,
    pub text: String,
}

fn random_seed(name: &str) -> Option<u64> {
    name.strip_prefix("random_seed")?.parse().ok()
}

/// Looks `name` up as a path, then as `random_seed<N>`, then as a bundled
/// instance (`<data>/<name>`, `.json`, `.toml`).
pub fn resolve_instance(name: &str, pin_slack: bool) -> Result<Resolved> {
    let direct = PathBuf::from(name);
    let path = if direct.is_file() {
        Some(direct)
    } else if let Some(seed) = random_seed(name) {
        let spec = random_instance(seed, &RandomParams::default());
        let text = serde_json::to_string_pretty(&ProblemFile::from_spec(&spec)?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        return Ok(Resolved {
            name: name.to_string(),
            spec,
            dcopf: None,
            path: None,
            text,
        });
    } else {
        let dir = data_dir();
        ["", ".json", ".toml"]
            .iter()
            .map(|ext| dir.join(format!("{name}{ext}")))
            .find(|p| p.is_file())
    };
    let path = path.ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no instance file or bundled instance named {name:?}"),
        ))
    })?;
    let text = fs::read_to_string(&path)?;
    let stem = path
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned());
    let (spec, dcopf) = match parse_instance(&text)? {
        Instance::Problem(spec) => (spec, None),
        Instance::DcOpf(inst) => (dcopf::to_problem_spec(&inst, pin_slack)?, Some(inst)),
    };
    Ok(Resolved {
        name: stem,
        spec,
        dcopf,
        path: Some(path),
        text,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One value of a report.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Text(String),
    List(Vec<f64>),
}

impl Value {
    fn kv(&self) -> String {
        match self {
            Value::Num(v) => format!("{v}"),
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
            Value::List(v) => {
                let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                format!("[{}]", items.join(","))
            }
        }
    }

    fn json(&self) -> serde_json::Value {
        let num = |v: f64| serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number);
        match self {
            Value::Num(v) => num(*v),
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Text(s) => serde_json::Value::from(s.as_str()),
            Value::List(v) => serde_json::Value::Array(v.iter().map(|x| num(*x)).collect()),
        }
    }
}

/// Ordered named values rendered as `key=value` lines, an aligned table or
/// a JSON object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, Value)>,
}

impl Report {
    pub fn num(&mut self, key: impl Into<String>, v: f64) {
        self.entries.push((key.into(), Value::Num(v)));
    }

    pub fn push(&mut self, key: impl Into<String>, v: Value) {
        self.entries.push((key.into(), v));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Kv => self
                .entries
                .iter()
                .map(|(k, v)| format!("{k}={}\n", v.kv()))
                .collect(),
            OutputFormat::Table => {
                let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                self.entries
                    .iter()
                    .map(|(k, v)| format!("{k:<width$}  {}\n", v.kv()))
                    .collect()
            }
            OutputFormat::Json => {
                let map: serde_json::Map<String, serde_json::Value> =
                    self.entries.iter().map(|(k, v)| (k.clone(), v.json())).collect();
                let mut s = serde_json::to_string_pretty(&map).expect("values serialize");
                s.push('\n');
                s
            }
        }
    }

    /// Reads back a `key=value` report; lists and text stay as text.
    pub fn parse_kv(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

pub fn constants_report(c: &ProblemConstants) -> Report {
    let mut r = Report::default();
    for (k, v) in c.entries() {
        r.num(k, v);
    }
    r.push("radius_capped", Value::Text(if c.capped.is_empty() { "none".into() } else { c.capped.join(",") }));
    r
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    instance: String,
    instance_path: Option<String>,
    instance_sha256: String,
    config: ConfigSnapshot,
    constants: serde_json::Map<String, serde_json::Value>,
    started: String,
    finished: String,
    outputs: Vec<String>,
    iterations: usize,
    step_size: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_method: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct ConfigSnapshot {
    iters: usize,
    step: Option<f64>,
    record_every: usize,
    seed: u64,
    tolerance: f64,
    with_oracle: bool,
    pin_slack: bool,
    random_init: bool,
    adaptive_step: bool,
    parallel: bool,
}

fn config_from(a: &SolveArgs) -> SolverConfig {
    SolverConfig {
        max_iters: a.iters,
        step: a.step.map_or(StepSize::Auto, StepSize::Fixed),
        record_every: a.record_every,
        tolerance: a.tolerance,
        seed: a.seed,
        random_init: a.random_init,
        adaptive_halving: a.adaptive_step,
        parallel: a.parallel,
    }
}

/// Final-iterate report of a run.
pub fn solve_report(
    resolved: &Resolved,
    out: &SolverOutput,
    oracle: Option<&OracleSolution>,
) -> Result<Report> {
    let spec = &resolved.spec;
    let mut r = Report::default();
    r.push("instance", Value::Text(resolved.name.clone()));
    r.push("iterations", Value::Int(out.iterations as u64));
    r.num("step_size", out.step_size);
    let last = out.trace.last().expect("trace has the initial row");
    for (name, v) in TRACE_COLUMNS.iter().skip(1).zip(last.values()) {
        r.num(*name, v);
    }
    let xt = out.averages.xt_mean();
    r.push("x", Value::List(out.averages.x.clone()));
    r.push("xt", Value::List(xt.clone()));
    r.num("objective_at_average", centralized_objective(spec, &out.averages.x, &xt)?);
    if let Some(o) = oracle {
        r.push("oracle_method", Value::Text(format!("{:?}", o.method)));
        r.num("oracle_objective", o.objective);
        r.num("oracle_kkt_residual", o.kkt_residual);
        r.num("objective_gap", (last.objective - o.objective).abs());
        r.push("oracle_x", Value::List(o.x_star.clone()));
        r.push("oracle_xt", Value::List(o.xt_star.clone()));
    }
    for (k, v) in out.bound_report.entries() {
        r.num(k, v);
    }
    if let Some(inst) = &resolved.dcopf {
        let p = dcopf::interpret(inst, out)?;
        for (g, d) in p.dispatch.iter().enumerate() {
            r.num(format!("dispatch.gen{g}.bus{}", d.bus), d.output);
        }
        if let Some(o) = oracle {
            let po = dcopf::interpret_point(inst, &o.x_star)?;
            for (g, d) in po.dispatch.iter().enumerate() {
                r.num(format!("oracle_dispatch.gen{g}.bus{}", d.bus), d.output);
            }
        }
        r.num("total_generation", p.total_generation);
        r.num("total_demand", p.total_demand);
        r.num("total_cost", p.total_cost);
        for f in &p.flows {
            r.num(format!("flow.{}-{}", f.from, f.to), f.flow);
            r.num(format!("margin.{}-{}", f.from, f.to), f.margin);
        }
        r.push("bus_balance", Value::List(p.balance));
    }
    Ok(r)
}

/// Runs `solve` and returns the output directory.
pub fn cmd_solve(a: &SolveArgs) -> Result<PathBuf> {
    let started = chrono::Utc::now();
    let resolved = resolve_instance(&a.instance, a.pin_slack)?;
    let config = config_from(a);
    let oracle = if a.with_oracle {
        Some(solve_centralized(&resolved.spec)?)
    } else {
        None
    };
    let reference = oracle.as_ref().map(Comparator::from);
    let out = if a.parallel {
        run_with(&resolved.spec, &config, reference.as_ref(), &ParallelCommunicator)?
    } else {
        run_with(&resolved.spec, &config, reference.as_ref(), &DirectCommunicator)?
    };

    let dir = a.out_dir.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-{}", resolved.name, started.format("%Y%m%dT%H%M%S%.3f")))
    });
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    let mut write = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text)?;
        outputs.push(p.display().to_string());
        Ok(())
    };
    write("trace.csv", &out.trace.to_csv())?;
    let report_name = if a.format == OutputFormat::Json { "report.json" } else { "report.txt" };
    write(report_name, &solve_report(&resolved, &out, oracle.as_ref())?.render(a.format))?;
    write("constants.txt", &constants_report(&out.constants).render(OutputFormat::Kv))?;

    // generated instances are persisted so the digest refers to a real file
    let instance_path = match &resolved.path {
        Some(p) => p.clone(),
        None => {
            let p = dir.join("instance.json");
            fs::write(&p, &resolved.text)?;
            p
        }
    };
    let constants = match constants_report(&out.constants).render(OutputFormat::Json).parse() {
        Ok(serde_json::Value::Object(m)) => m,
        _ => serde_json::Map::new(),
    };
    let manifest = Manifest {
        instance: resolved.name.clone(),
        instance_path: Some(instance_path.display().to_string()),
        instance_sha256: sha256_hex(&fs::read(&instance_path)?),
        config: ConfigSnapshot {
            iters: a.iters,
            step: a.step,
            record_every: a.record_every,
            seed: a.seed,
            tolerance: a.tolerance,
            with_oracle: a.with_oracle,
            pin_slack: a.pin_slack,
            random_init: a.random_init,
            adaptive_step: a.adaptive_step,
            parallel: a.parallel,
        },
        constants,
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        outputs,
        iterations: out.iterations,
        step_size: out.step_size,
        oracle_method: oracle.as_ref().map(|o| match o.method {
            crate::oracle::OracleMethod::ActiveSet => "active-set",
            crate::oracle::OracleMethod::Extragradient => "extragradient",
        }),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(dir)
}

/// Renders the constants of an instance.
pub fn cmd_constants(a: &ConstantsArgs) -> Result<String> {
    let resolved = resolve_instance(&a.instance, a.pin_slack)?;
    Ok(constants_report(&compute_constants(&resolved.spec)?).render(a.format))
}

/// Writes `<column>.csv` for every trace column after `iter`, copying the
/// cell text unchanged. Returns the files written.
pub fn cmd_plotdata(trace: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(trace)?;
    RunTrace::read_csv(text.as_bytes())?;
    let dir = out_dir.map_or_else(
        || trace.parent().unwrap_or(Path::new(".")).join("series"),
        Path::to_path_buf,
    );
    fs::create_dir_all(&dir)?;
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim_end().split(',').collect())
        .collect();
    let mut files = Vec::new();
    for (c, name) in TRACE_COLUMNS.iter().enumerate().skip(1) {
        let mut s = format!("iter,{name}\n");
        for r in &rows {
            s.push_str(r[0]);
            s.push(',');
            s.push_str(r[c]);
            s.push('\n');
        }
        let p = dir.join(format!("{name}.csv"));
        fs::write(&p, s)?;
        files.push(p);
    }
    Ok(files)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let spec = random_instance(a.seed, &RandomParams::default());
    let text = serde_json::to_string_pretty(&ProblemFile::from_spec(&spec)?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    match &a.out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
