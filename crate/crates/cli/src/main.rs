//! `threadcast` command line.
//!
//! Every subcommand accepts `--config <file>`, a JSON object whose keys are
//! the long flag names with `-` replaced by `_`. Flags given on the command
//! line win over the file. The effective settings, minus the output path, are
//! written into every output artifact under `config`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numeric failure, 64 usage.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use threadcast::analysis::{
    branching_factor_main, branching_factor_reply, fresh_thread_branching, intensity_trace, uniform_grid,
};
use threadcast::baselines::{seismic_predict, SeismicModel, SEISMIC_C, SEISMIC_S0, SEISMIC_THETA};
use threadcast::estimation::{FitConfig, GradientMode, DEFAULT_LOWER, DEFAULT_UPPER};
use threadcast::evaluation::{
    fit_model, format_table, run_experiment, ExperimentProtocol, FittedModel, Forecaster, Metric, ModelKind,
};
use threadcast::ingest::{ingest, load_space, InputFormat};
use threadcast::likelihood::LikelihoodOptions;
use threadcast::simulation::{replication_rng, BoundMode, SimConfig};
use threadcast::EventSpace;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<threadcast::Error> for CliError {
    fn from(e: threadcast::Error) -> Self {
        use threadcast::Error as E;
        match e {
            E::Numeric(_) | E::Fit { .. } | E::Supercritical { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "threadcast", version, about = "Fit, simulate and evaluate nested thread/reply point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a JSONL or CSV export into canonical JSONL.
    Ingest(IngestArgs),
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Sample continuations of an event log from a fitted model.
    Simulate(SimulateArgs),
    /// Score fitted models on held-out groups.
    Evaluate(EvaluateArgs),
    /// Branching factors and intensity traces of a fitted model.
    Analyze(AnalyzeArgs),
    /// Per-thread final-size predictions with the SEISMIC estimator.
    Seismic(SeismicArgs),
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// RNG seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// JSON file with default values for any flag.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output path; stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    /// jsonl or csv.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    /// Abort on the first malformed row.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    strict: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    input: Option<PathBuf>,
    format: InputFormat,
    strict: bool,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            input: None,
            format: InputFormat::Jsonl,
            strict: false,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<PathBuf>,
    /// nestpp, decoupled, hawkes or poisson.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// Optimizer starts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    starts: Option<usize>,
    /// Parameter box as `lo,hi`, shared by all parameters.
    #[arg(long, value_parser = parse_bounds)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<[f64; 2]>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iterations: Option<usize>,
    /// Relative log-likelihood change that stops a start.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    /// analytic or finite_difference.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    events: Option<PathBuf>,
    model: ModelKind,
    starts: usize,
    bounds: Vec<[f64; 2]>,
    max_iterations: usize,
    tolerance: f64,
    gradient: GradientMode,
    likelihood: LikelihoodOptions,
}

impl Default for FitSettings {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            seed: 0,
            output: None,
            events: None,
            model: ModelKind::Nestpp,
            starts: f.n_starts,
            bounds: vec![[DEFAULT_LOWER, DEFAULT_UPPER]],
            max_iterations: f.max_iterations,
            tolerance: f.tolerance,
            gradient: f.gradient,
            likelihood: f.likelihood,
        }
    }
}

impl FitSettings {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            n_starts: self.starts,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            bounds: self.bounds.clone(),
            seed: self.seed,
            likelihood: self.likelihood,
            gradient: self.gradient,
            ..FitConfig::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// History to continue; an empty history when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<PathBuf>,
    /// Output of `fit`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_window: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_cap: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    /// Stop every run at this time.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    until: Option<f64>,
    /// Use the exact (safe) thinning bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    safe: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    events: Option<PathBuf>,
    model: Option<PathBuf>,
    n_threads: usize,
    reply_window: f64,
    reply_cap: usize,
    replications: usize,
    until: Option<f64>,
    safe: bool,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            seed: 0,
            output: None,
            events: None,
            model: None,
            n_threads: s.n_threads,
            reply_window: s.reply_window,
            reply_cap: s.reply_cap,
            replications: s.n_replications,
            until: None,
            safe: false,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<PathBuf>,
    /// One or more outputs of `fit`.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    models: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
    /// Threads of history per group.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<usize>,
    /// Threads to predict (mae_time).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    /// Prediction window (mae_size).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<f64>,
    /// mae_time or mae_size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_window: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_cap: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    safe: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    events: Option<PathBuf>,
    models: Vec<PathBuf>,
    groups: usize,
    history: usize,
    horizon: usize,
    window: f64,
    metric: Metric,
    replications: usize,
    reply_window: Option<f64>,
    reply_cap: usize,
    safe: bool,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        let p = ExperimentProtocol::default();
        Self {
            seed: 0,
            output: None,
            events: None,
            models: Vec::new(),
            groups: p.n_groups,
            history: p.history,
            horizon: p.horizon_threads,
            window: p.window,
            metric: p.metric,
            replications: p.n_replications,
            reply_window: None,
            reply_cap: p.reply_cap,
            safe: false,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Emit an intensity trace on a grid with this step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_grid: Option<f64>,
    /// Trace CSV path; defaults to the output path with a `.trace.csv` suffix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_output: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    events: Option<PathBuf>,
    model: Option<PathBuf>,
    trace_grid: Option<f64>,
    trace_output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SeismicArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<PathBuf>,
    /// Each thread is observed this long after its creation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observe_window: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    /// Length of the flat head of the memory kernel.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    s0: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SeismicSettings {
    seed: u64,
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
    events: Option<PathBuf>,
    observe_window: Option<f64>,
    c: f64,
    theta: f64,
    s0: f64,
}

impl Default for SeismicSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            events: None,
            observe_window: None,
            c: SEISMIC_C,
            theta: SEISMIC_THETA,
            s0: SEISMIC_S0,
        }
    }
}

fn parse_bounds(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got {s:?}"));
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

/// Defaults, then the config file, then the flags.
fn compose<T>(config: Option<&Path>, flags: &impl Serialize) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("settings serialize to objects"),
    };
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let file: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        merged.extend(file);
    }
    if let Value::Object(m) = serde_json::to_value(flags)? {
        merged.extend(m);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Validation(format!("settings: {e}")))
}

fn parse_flag<T>(v: &Option<String>) -> CliResult<Option<Value>>
where
    T: std::str::FromStr<Err = threadcast::Error> + Serialize,
{
    v.as_deref()
        .map(|s| Ok(serde_json::to_value(s.parse::<T>()?)?))
        .transpose()
}

fn require<'a, T>(v: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Validation(format!("--{} is required", name.replace('_', "-"))))
}

/// Replaces string-valued enum flags with their parsed form before composing.
fn flags_value(flags: &impl Serialize, parsed: &[(&str, Option<Value>)]) -> CliResult<Value> {
    let mut v = serde_json::to_value(flags)?;
    if let Value::Object(m) = &mut v {
        for (key, value) in parsed {
            if let Some(value) = value {
                m.insert(key.to_string(), value.clone());
            }
        }
    }
    Ok(v)
}

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Validation(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult<()> {
    let mut w = open_output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads the output of `fit` or a bare serialized model.
fn load_model(path: &Path) -> CliResult<FittedModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read model {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("model {}: {e}", path.display())))?;
    let inner = value.get("fitted").cloned().unwrap_or(value);
    let model: FittedModel = serde_json::from_value(inner)
        .map_err(|e| CliError::Validation(format!("model {}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

fn cmd_ingest(args: &IngestArgs) -> CliResult<()> {
    let flags = flags_value(args, &[("format", parse_flag::<InputFormat>(&args.format)?)])?;
    let s: IngestSettings = compose(args.common.config.as_deref(), &flags)?;
    let input = require(&s.input, "input")?;
    let parsed = ingest(input, s.format, s.strict)?;
    if !parsed.errors.is_empty() {
        eprintln!("{}", json!({ "rejected_rows": parsed.errors }));
    }
    let space = EventSpace::from_ingested(parsed)?;
    let mut buf = Vec::new();
    space.write_jsonl(&mut buf)?;
    // Echo the settings inside the header line, which readers ignore beyond
    // offset and horizon.
    let text = String::from_utf8(buf).map_err(|e| CliError::Validation(e.to_string()))?;
    let (head, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let mut header: Map<String, Value> = serde_json::from_str(head)?;
    header.insert("config".into(), serde_json::to_value(&s)?);
    let mut w = open_output(s.output.as_deref())?;
    writeln!(w, "{}", Value::Object(header))?;
    w.write_all(rest.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let flags = flags_value(
        args,
        &[
            ("model", parse_flag::<ModelKind>(&args.model)?),
            (
                "gradient",
                args.gradient
                    .as_deref()
                    .map(|g| match g {
                        "analytic" | "finite_difference" => Ok(Value::String(g.into())),
                        other => Err(CliError::Validation(format!("unknown gradient mode {other:?}"))),
                    })
                    .transpose()?,
            ),
            ("bounds", args.bounds.map(|b| json!([b]))),
        ],
    )?;
    let s: FitSettings = compose(args.common.config.as_deref(), &flags)?;
    let space = load_space(require(&s.events, "events")?)?;
    let fit = fit_model(s.model, &space, &s.fit_config())?;
    let out = json!({
        "fitted": fit.fitted,
        "diagnostics": fit.diagnostics,
        "config": s,
    });
    write_json(s.output.as_deref(), &out)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let s: SimulateSettings = compose(args.common.config.as_deref(), args)?;
    let model = load_model(require(&s.model, "model")?)?;
    let history = match &s.events {
        Some(p) => load_space(p)?,
        None => EventSpace::empty(),
    };
    if s.replications == 0 {
        return Err(CliError::Validation("--replications must be positive".into()));
    }
    let config = SimConfig {
        n_threads: s.n_threads,
        reply_window: s.reply_window,
        reply_cap: s.reply_cap,
        seed: s.seed,
        n_replications: s.replications,
        bound: if s.safe { BoundMode::Safe { factor: 1.0 } } else { BoundMode::Verbatim },
        until: s.until,
        ..SimConfig::default()
    };
    config.validate()?;
    let runs = (0..s.replications)
        .into_par_iter()
        .map(|r| model.sample(&history, &config, &mut replication_rng(s.seed, r as u64)))
        .collect::<threadcast::Result<Vec<_>>>()?;
    let mut w = open_output(s.output.as_deref())?;
    writeln!(w, "{}", json!({ "config": s, "model": model }))?;
    for (r, run) in runs.iter().enumerate() {
        let mut line = serde_json::to_value(run)?;
        if let Value::Object(m) = &mut line {
            m.insert("replication".into(), json!(r));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let flags = flags_value(args, &[("metric", parse_flag::<Metric>(&args.metric)?)])?;
    let s: EvaluateSettings = compose(args.common.config.as_deref(), &flags)?;
    if s.models.is_empty() {
        return Err(CliError::Validation("--models needs at least one model file".into()));
    }
    let space = load_space(require(&s.events, "events")?)?;
    let models = s.models.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
    let protocol = ExperimentProtocol {
        n_groups: s.groups,
        history: s.history,
        horizon_threads: s.horizon,
        window: s.window,
        n_replications: s.replications,
        metric: s.metric,
        seed: s.seed,
        reply_window: s.reply_window,
        reply_cap: s.reply_cap,
        bound: if s.safe { BoundMode::Safe { factor: 1.0 } } else { BoundMode::Verbatim },
    };
    let refs: Vec<&dyn Forecaster> = models.iter().map(|m| m as &dyn Forecaster).collect();
    let reports = run_experiment(&space, &refs, &protocol)?;
    let table = format_table(&reports);
    if s.output.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    write_json(s.output.as_deref(), &json!({ "reports": reports, "config": s }))
}

fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let s: AnalyzeSettings = compose(args.common.config.as_deref(), args)?;
    let space = load_space(require(&s.events, "events")?)?;
    let model = load_model(require(&s.model, "model")?)?;
    let FittedModel::Nestpp { params, options } = &model else {
        return Err(CliError::Validation(format!(
            "analyze needs a nestpp model, got {:?}",
            model.kind()
        )));
    };
    let branching = branching_factor_main(params, options, &space)?;
    let out = json!({
        "branching": branching,
        "fresh_thread_branching": fresh_thread_branching(params, options),
        "reply_branching": branching_factor_reply(&params.reply, false)?,
        "reply_branching_with_age_decay": branching_factor_reply(&params.reply, true)?,
        "config": s,
    });
    if let Some(step) = s.trace_grid {
        let path = match (&s.trace_output, &s.output) {
            (Some(p), _) => p.clone(),
            (None, Some(o)) => {
                let mut name = o.as_os_str().to_owned();
                name.push(".trace.csv");
                PathBuf::from(name)
            }
            (None, None) => {
                return Err(CliError::Validation(
                    "--trace-grid with stdout output needs --trace-output".into(),
                ))
            }
        };
        let grid = uniform_grid(space.horizon(), step)?;
        let trace = intensity_trace(params, options, &space, &grid)?;
        let file = File::create(&path)
            .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", path.display())))?;
        trace.write_csv(BufWriter::new(file))?;
    }
    write_json(s.output.as_deref(), &out)
}

fn cmd_seismic(args: &SeismicArgs) -> CliResult<()> {
    let s: SeismicSettings = compose(args.common.config.as_deref(), args)?;
    let space = load_space(require(&s.events, "events")?)?;
    let w = *require(&s.observe_window, "observe_window")?;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(CliError::Validation(format!("observe window must be non-negative, got {w}")));
    }
    let model = SeismicModel {
        c_hyper: s.c,
        theta: s.theta,
        s0: s.s0,
        ..SeismicModel::default()
    };
    model.validate()?;
    let mut predictions = Vec::new();
    let mut skipped = 0usize;
    for (i, cascade) in space.cascades().iter().enumerate() {
        let t_obs = cascade.thread_time + w;
        if t_obs > space.horizon() {
            skipped += 1;
            continue;
        }
        let p = seismic_predict(&model, cascade, t_obs)?;
        predictions.push(json!({
            "thread": i,
            "observed_at": t_obs,
            "observed": p.observed,
            "infectivity": p.infectivity,
            "mean_mark": p.mean_mark,
            "predicted": p.predicted,
            "replies_in_log": cascade.n_replies(),
        }));
    }
    let out = json!({
        "hyperparameters": { "c": model.c_hyper, "theta": model.theta, "s0": model.s0 },
        "predictions": predictions,
        "skipped_incomplete": skipped,
        "config": s,
    });
    write_json(s.output.as_deref(), &out)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Seismic(a) => cmd_seismic(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Validation(_) => "validation",
                CliError::Numeric(_) => "numeric",
            };
            eprintln!("error ({kind}): {e}");
            ExitCode::from(e.code())
        }
    }
}
