//! `gridspace`: run the monitoring service or use its pieces one-shot.
//!
//! Every command writes newline-delimited JSON to stdout. Failures print a
//! single `{"error": .., "kind": ..}` object to stderr and exit with 1 for
//! usage errors, 2 for inputs that do not parse or validate, and 3 for
//! runtime failures.

mod input;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridspace_core::analysis::{estimate_renewable, weak_link_heatmap, Aggregate, RenewableInputs};
use gridspace_core::fdir::{parse_scenario, run_scenario};
use gridspace_core::reasoning::TimeWindow;
use gridspace_core::rules::{evaluate_all, read_rules_dir, RuleSet};
use gridspace_core::serialization::{serialize_xml, to_json_node};
use gridspace_core::{Area, Tick};
use gridspace_service::config::ConfigError;
use gridspace_service::{config_path, ServeError, ServiceConfig};
use serde::Serialize;
use serde_json::json;

use input::{load_model, load_topology, read, FrameSource};

#[derive(Debug, Parser)]
#[command(name = "gridspace", version, about = "Spatio-temporal grid monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Config file; falls back to $GRIDSPACE_CONFIG, then ./gridspace.toml.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a rules directory against a model at one instant.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        at: Tick,
        #[command(flatten)]
        source: FrameSource,
    },
    /// Print the canonical serialization of frames or a model.
    Convert {
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        frame: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "xml")]
        json: bool,
        #[arg(long)]
        xml: bool,
        #[command(flatten)]
        source: FrameSource,
    },
    /// Check every rule file in a directory.
    ValidateRules { dir: PathBuf },
    /// Weak-link heatmap of a model with load and generation quantities.
    Heatmap(HeatmapArgs),
    /// Renewable yield and payback from a TOML profile.
    Estimate {
        #[arg(long)]
        profile: PathBuf,
    },
    /// Replay an FDIR scenario on a feeder topology (.json or matrix .csv).
    FdirSim {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    model: PathBuf,
    /// `x1,y1,x2,y2`
    #[arg(long, allow_hyphen_values = true)]
    region: String,
    #[arg(long, allow_hyphen_values = true)]
    t1: Tick,
    #[arg(long, allow_hyphen_values = true)]
    t2: Tick,
    #[arg(long, default_value_t = 1)]
    cell: u32,
    #[arg(long, default_value_t = 1)]
    step: Tick,
    #[arg(long, value_enum, default_value = "max")]
    aggregate: AggregateArg,
    /// Also write the scores as a grayscale PGM image.
    #[arg(long)]
    pgm: Option<PathBuf>,
    #[command(flatten)]
    source: FrameSource,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AggregateArg {
    Max,
    Mean,
}

impl From<AggregateArg> for Aggregate {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Max => Aggregate::Max,
            AggregateArg::Mean => Aggregate::Mean,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn report(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Invalid(m) => ("invalid", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({ "error": msg, "kind": kind }).to_string()
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.report());
    ExitCode::from(e.code())
}

fn run(command: Command) -> CliResult {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Serve { config } => serve(config),
        Command::Eval { model, rules, at, source } => eval(&mut out, &model, &rules, at, &source),
        Command::Convert {
            frame,
            model,
            xml,
            source,
            ..
        } => {
            let models = match (frame, model) {
                (Some(frame), _) => source.frames(&read(&frame)?)?,
                (None, Some(model)) => vec![load_model(&model, &source)?],
                (None, None) => return Err(CliError::Usage("one of --frame or --model is required".into())),
            };
            for m in &models {
                let text = if xml { serialize_xml(m) } else { to_json_node(m) };
                line(&mut out, &text)?;
            }
            Ok(())
        }
        Command::ValidateRules { dir } => validate_rules(&mut out, &dir),
        Command::Heatmap(args) => heatmap(&mut out, args),
        Command::Estimate { profile } => {
            let inputs: RenewableInputs =
                toml::from_str(&read(&profile)?).map_err(|e| CliError::Invalid(format!("{}: {e}", profile.display())))?;
            let estimate = estimate_renewable(&inputs).map_err(|e| CliError::Invalid(e.to_string()))?;
            emit(&mut out, &estimate)
        }
        Command::FdirSim { topology, scenario } => {
            let topo = load_topology(&topology)?;
            let scenario = parse_scenario(&read(&scenario)?).map_err(|e| CliError::Invalid(e.to_string()))?;
            let report = run_scenario(&topo, &scenario).map_err(|e| CliError::Runtime(e.to_string()))?;
            for step in &report.steps {
                emit(&mut out, step)?;
            }
            emit(
                &mut out,
                &json!({
                    "reliability": report.reliability,
                    "outages": report.outages,
                    "finalSwitchStates": report.final_switch_states,
                }),
            )
        }
    }
}

fn serve(config: Option<PathBuf>) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let path = config_path(config.as_deref());
    let cfg = ServiceConfig::load(&path).map_err(|e| match e {
        ConfigError::Read { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    })?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(gridspace_service::serve(cfg)).map_err(|e| match e {
        ServeError::Config(_) => CliError::Invalid(e.to_string()),
        ServeError::Service(gridspace_service::ServiceError::Validation(_)) => CliError::Invalid(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    })
}

fn eval(out: &mut impl Write, model: &std::path::Path, rules: &std::path::Path, at: Tick, source: &FrameSource) -> CliResult {
    let model = load_model(model, source)?;
    let rules = load_rules(rules)?;
    let evaluation = evaluate_all(&rules, &model, at);
    for trigger in &evaluation.triggers {
        emit(out, trigger)?;
    }
    match evaluation.errors.as_slice() {
        [] => Ok(()),
        errors => {
            let msgs: Vec<String> = errors.iter().map(|f| format!("rule {}: {}", f.rule_id, f.error)).collect();
            Err(CliError::Invalid(msgs.join("; ")))
        }
    }
}

fn load_rules(dir: &std::path::Path) -> Result<RuleSet, CliError> {
    let files = read_rules_dir(dir).map_err(rule_error)?;
    RuleSet::from_rules(files.into_iter().flat_map(|(_, r)| r).collect()).map_err(rule_error)
}

fn rule_error(e: gridspace_core::rules::RuleError) -> CliError {
    match e {
        gridspace_core::rules::RuleError::Io { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    }
}

#[derive(Serialize)]
struct RuleFileSummary<'a> {
    file: &'a str,
    rules: Vec<&'a str>,
}

/// Prints one line per file, then fails on the first bad file or on ids
/// repeated across files.
fn validate_rules(out: &mut impl Write, dir: &std::path::Path) -> CliResult {
    let files = read_rules_dir(dir).map_err(rule_error)?;
    for (file, rules) in &files {
        let ids = rules.iter().map(|r| r.id.as_str()).collect();
        emit(out, &RuleFileSummary { file, rules: ids })?;
    }
    RuleSet::from_rules(files.into_iter().flat_map(|(_, r)| r).collect()).map_err(rule_error)?;
    Ok(())
}

fn heatmap(out: &mut impl Write, args: HeatmapArgs) -> CliResult {
    let region = parse_region(&args.region)?;
    let window = TimeWindow::new(args.t1, args.t2, args.step).map_err(|e| CliError::Invalid(e.to_string()))?;
    let model = load_model(&args.model, &args.source)?;
    let map = weak_link_heatmap(&model, &region, &window, args.cell, args.aggregate.into())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(path) = &args.pgm {
        std::fs::write(path, map.to_pgm()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    emit(out, &map)
}

fn parse_region(text: &str) -> Result<Area, CliError> {
    let parts: Result<Vec<i64>, _> = text.split(',').map(|p| p.trim().parse::<i64>()).collect();
    match parts.as_deref() {
        Ok([x1, y1, x2, y2]) => Ok(Area::new(*x1, *y1, *x2, *y2)),
        _ => Err(CliError::Usage(format!("--region must be x1,y1,x2,y2, got {text:?}"))),
    }
}

fn emit(out: &mut impl Write, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    line(out, &text)
}

fn line(out: &mut impl Write, text: &str) -> CliResult {
    writeln!(out, "{text}").map_err(|e| CliError::Runtime(format!("stdout: {e}")))
}
