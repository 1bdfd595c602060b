//! Command-line surface: `run`, `rerun`, `replay`, `validate` and `sweep`.
//!
//! Exit codes: 0 crash reproduced (or clean validation / full replay match), 1 error,
//! 2 search or replay finished without a crash, 3 replay digest mismatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_search, BugReport, EngineError, OraclePair, Outcome, SearchConfig};
use crate::env::{load_sim_app, Environment, SimAppFile, SimAppSpec, SimEnvironment, TraceFile};
use crate::oracle::{LlmOracle, PromptTemplates, RemoteChatClient, RemoteConfig, ScriptedOracle, ScriptedOracleSpec};
use crate::tree::LevelConfig;
use crate::AblationFlags;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_REPRODUCED: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

pub const TRACE_FILE: &str = "trace.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "iterations.jsonl";

#[derive(Debug, Parser)]
#[command(name = "repro-mcts", version, about = "Reproduce app crashes from bug reports by tree search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a crash-reproducing action sequence.
    Run(RunArgs),
    /// Repeat a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace against an app and check every recorded digest.
    Replay {
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check an app spec and/or a scripted oracle file.
    Validate {
        #[arg(long, required_unless_present = "scripted_oracle")]
        app: Option<PathBuf>,
        #[arg(long)]
        scripted_oracle: Option<PathBuf>,
    },
    /// Run a seed x k grid and report success rates.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub app: PathBuf,
    /// Plain-text bug report; defaults to the app spec's `report` field.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `scripted:<file>` or `remote`.
    #[arg(long)]
    pub oracle: String,
    #[arg(long, default_value_t = 200)]
    pub iterations: u64,
    #[arg(long, default_value_t = 30.0)]
    pub budget_minutes: f64,
    /// Comma-separated: disable_topk, disable_fewshot_cot, disable_image, standard_rollout.
    #[arg(long, default_value = "")]
    pub ablate: String,
    /// Level values `high,mid,low`; defaults to 5,2,1, raised for k > 3 when needed.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long, default_value_t = 1.8)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.414)]
    pub c: f64,
    #[arg(long, default_value_t = 25)]
    pub max_depth: usize,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Directory overriding the built-in prompt templates (remote mode).
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Inclusive range `A..B`.
    #[arg(long)]
    pub seeds: String,
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    pub k_list: Vec<usize>,
    /// Print rows as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    Scripted { file: PathBuf },
    Remote { config: RemoteConfig },
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub app: PathBuf,
    pub report_file: Option<PathBuf>,
    pub report: String,
    pub oracle: OracleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub seed: u64,
    pub config: SearchConfig,
    pub outcome: Outcome,
    pub iterations_used: u64,
    pub trace_steps: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean iterations over successful runs.
    pub mean_iterations: Option<f64>,
}

/// A failure that maps to exit code 1.
#[derive(Debug)]
pub struct CliError(pub String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_ERROR;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Rerun { manifest, out: dir } => cmd_rerun(&manifest, &dir, out),
        Command::Replay { app, trace } => cmd_replay(&app, &trace, out),
        Command::Validate { app, scripted_oracle } => cmd_validate(app.as_deref(), scripted_oracle.as_deref(), out),
        Command::Sweep(a) => cmd_sweep(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(CliError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ERROR
        }
    }
}

pub fn parse_oracle_mode(s: &str, args: &SearchArgs) -> CliResult<OracleMode> {
    if let Some(file) = s.strip_prefix("scripted:") {
        if file.is_empty() {
            return Err(CliError("scripted oracle needs a file: scripted:<file>".into()));
        }
        return Ok(OracleMode::Scripted { file: absolute(Path::new(file))? });
    }
    if s == "remote" {
        let mut config = RemoteConfig::default();
        if let Some(e) = &args.endpoint {
            config.endpoint = e.clone();
        }
        if let Some(m) = &args.model {
            config.model = m.clone();
        }
        return Ok(OracleMode::Remote { config });
    }
    Err(CliError(format!("unknown oracle {s:?}; expected scripted:<file> or remote")))
}

pub fn parse_levels(s: &str, k: usize) -> CliResult<LevelConfig> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [h, m, l] = parts[..] else {
        return Err(CliError(format!("--levels expects high,mid,low, got {s:?}")));
    };
    let num = |v: &str| v.parse::<u32>().map_err(|_| CliError(format!("bad level value {v:?}")));
    let cfg = LevelConfig::with_levels(num(h)?, num(m)?, num(l)?, k as u32);
    cfg.validate()?;
    Ok(cfg)
}

/// Inclusive `A..B`; an empty range is an error.
pub fn parse_seed_range(s: &str) -> CliResult<std::ops::RangeInclusive<u64>> {
    let (a, b) = s.split_once("..").ok_or_else(|| CliError(format!("seed range must look like A..B, got {s:?}")))?;
    let a: u64 = a.trim().parse().map_err(|_| CliError(format!("bad seed {a:?}")))?;
    let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| CliError(format!("bad seed {b:?}")))?;
    if a > b {
        return Err(CliError(format!("empty seed range {s}")));
    }
    Ok(a..=b)
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(p).map_err(|e| CliError(format!("{}: {e}", p.display())))
}

fn search_config(args: &SearchArgs, k: usize, seed: u64) -> CliResult<SearchConfig> {
    let mut cfg = SearchConfig::default().with_k(k).with_seed(seed);
    cfg.levels = match &args.levels {
        Some(s) => parse_levels(s, k)?,
        None => LevelConfig::default().adjusted_for_k(k as u32),
    };
    cfg.iteration_budget = args.iterations;
    if !(args.budget_minutes.is_finite() && args.budget_minutes > 0.0) {
        return Err(CliError(format!("--budget-minutes must be positive, got {}", args.budget_minutes)));
    }
    cfg.wall_clock_budget = Duration::from_secs_f64(args.budget_minutes * 60.0);
    cfg.max_depth = args.max_depth;
    cfg.policy.temperature = args.tau;
    cfg.policy.exploration = args.c;
    cfg.ablation = args.ablate.parse::<AblationFlags>().map_err(CliError)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_report(args: &SearchArgs, app: &SimAppSpec) -> CliResult<(Option<PathBuf>, String)> {
    let (file, text) = match &args.report {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError(format!("{}: {e}", p.display())))?;
            (Some(absolute(p)?), text)
        }
        None => (None, app.report().unwrap_or_default().to_string()),
    };
    if text.trim().is_empty() {
        return Err(CliError("no bug report: pass --report or add a report field to the app spec".into()));
    }
    Ok((file, text))
}

fn app_name(app: &SimAppSpec, path: &Path) -> String {
    if app.name().is_empty() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        app.name().to_string()
    }
}

/// What a finished search produced, ready to be written out.
struct RunArtifacts {
    trace: String,
    log: String,
    manifest: RunManifest,
}

fn execute_run(
    app_path: &Path,
    app: Arc<SimAppSpec>,
    report_file: Option<PathBuf>,
    report: String,
    oracle: OracleMode,
    templates: Option<PathBuf>,
    config: SearchConfig,
) -> CliResult<RunArtifacts> {
    let bug = BugReport { text: report.clone(), app_name: app_name(&app, app_path) };
    let env = SimEnvironment::new(app);
    let seed = config.policy.seed;
    let result = match &oracle {
        OracleMode::Scripted { file } => {
            let o = ScriptedOracle::new(&ScriptedOracleSpec::load(file)?, seed)?;
            run_search::<f64, _>(config, env, OraclePair::single(&o), &bug)?
        }
        OracleMode::Remote { config: remote } => {
            let mut o = LlmOracle::new(RemoteChatClient::from_env(remote.clone())?);
            if let Some(dir) = &templates {
                o.templates = PromptTemplates::load_dir(dir)?;
            }
            let r = run_search::<f64, _>(config, env, OraclePair::single(&o), &bug);
            let usage = o.client.usage();
            log::info!(
                "remote usage: {} requests, {} prompt + {} completion = {} tokens",
                usage.requests,
                usage.prompt_tokens,
                usage.completion_tokens,
                usage.total_tokens
            );
            r?
        }
    };
    let header = vec![
        format!("app: {}", bug.app_name),
        format!("seed: {seed}"),
        format!("outcome: {}", result.trace.outcome.as_str()),
        format!("iterations: {}", result.trace.iterations_used),
    ];
    let trace = result.trace.to_trace_file(header).render();
    let mut log = String::new();
    for rec in &result.iterations {
        log.push_str(&serde_json::to_string(rec)?);
        log.push('\n');
    }
    let manifest = RunManifest {
        app: app_path.to_path_buf(),
        report_file,
        report,
        oracle,
        templates,
        seed,
        config,
        outcome: result.trace.outcome,
        iterations_used: result.trace.iterations_used,
        trace_steps: result.trace.steps.len(),
        wall_clock_secs: result.trace.wall_clock_used.as_secs_f64(),
    };
    Ok(RunArtifacts { trace, log, manifest })
}

fn write_artifacts(dir: &Path, a: &RunArtifacts, out: &mut dyn Write) -> CliResult<i32> {
    fs::create_dir_all(dir).map_err(|e| CliError(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join(TRACE_FILE), &a.trace)?;
    fs::write(dir.join(LOG_FILE), &a.log)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&a.manifest)? + "\n")?;
    let m = &a.manifest;
    writeln!(out, "outcome: {} after {} iterations", m.outcome.as_str(), m.iterations_used)?;
    if m.outcome == Outcome::CrashReproduced {
        writeln!(out, "trace ({} steps) written to {}", m.trace_steps, dir.join(TRACE_FILE).display())?;
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_NOT_REPRODUCED)
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult<i32> {
    let config = search_config(&args.search, args.k, args.seed)?;
    let app_path = absolute(&args.search.app)?;
    let app = Arc::new(load_sim_app(&app_path)?);
    let (report_file, report) = load_report(&args.search, &app)?;
    let oracle = parse_oracle_mode(&args.search.oracle, &args.search)?;
    let templates = args.search.templates.as_deref().map(absolute).transpose()?;
    let artifacts = execute_run(&app_path, app, report_file, report, oracle, templates, config)?;
    write_artifacts(&args.out, &artifacts, out)
}

pub fn cmd_rerun(manifest: &Path, dir: &Path, out: &mut dyn Write) -> CliResult<i32> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError(format!("{}: {e}", manifest.display())))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    m.config.validate()?;
    let app = Arc::new(load_sim_app(&m.app)?);
    let artifacts = execute_run(&m.app, app, m.report_file, m.report, m.oracle, m.templates, m.config)?;
    write_artifacts(dir, &artifacts, out)
}

pub fn cmd_replay(app: &Path, trace: &Path, out: &mut dyn Write) -> CliResult<i32> {
    let spec = load_sim_app(app)?;
    let text = fs::read_to_string(trace).map_err(|e| CliError(format!("{}: {e}", trace.display())))?;
    let trace = TraceFile::parse(&text)?;
    if trace.steps.is_empty() {
        return Err(CliError("trace has no steps".into()));
    }
    let mut env = SimEnvironment::new(spec);
    let root = env.reset()?.digest();
    if let Some(expected) = trace.root_digest {
        if expected != root {
            writeln!(out, "mismatch at reset: expected {expected}, observed {root}")?;
            return Ok(EXIT_MISMATCH);
        }
    }
    let mut crashed = false;
    for (i, step) in trace.steps.iter().enumerate() {
        let n = i + 1;
        if crashed {
            writeln!(out, "mismatch at step {n} ({}): app already crashed", step.action)?;
            return Ok(EXIT_MISMATCH);
        }
        let obs = env.execute(&step.action)?.observation;
        let digest = obs.digest();
        match step.digest {
            Some(expected) if expected != digest => {
                writeln!(out, "mismatch at step {n} ({}): expected {expected}, observed {digest}", step.action)?;
                return Ok(EXIT_MISMATCH);
            }
            _ => writeln!(out, "step {n}: {} -> {digest}{}", step.action, if obs.crash { " crash" } else { "" })?,
        }
        crashed = obs.crash;
    }
    if crashed {
        writeln!(out, "crash reproduced in {} steps", trace.steps.len())?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "all digests match but no crash was reached")?;
        Ok(EXIT_NOT_REPRODUCED)
    }
}

pub fn cmd_validate(app: Option<&Path>, oracle: Option<&Path>, out: &mut dyn Write) -> CliResult<i32> {
    let mut clean = true;
    let mut app_spec = None;
    if let Some(path) = app {
        writeln!(out, "app spec {}", path.display())?;
        let text = fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        match serde_json::from_str::<SimAppFile>(&text) {
            Err(e) => {
                writeln!(out, "  [FAIL] parse: line {}, column {}: {e}", e.line(), e.column())?;
                clean = false;
            }
            Ok(file) => {
                writeln!(out, "  [ok]   parse: {} states, {} transitions", file.states.len(), file.transitions.len())?;
                let violations = file.check();
                report_violations(&violations, "invariants", out)?;
                clean &= violations.is_empty();
                if violations.is_empty() {
                    app_spec = SimAppSpec::from_file(file).ok();
                }
            }
        }
    }
    if let Some(path) = oracle {
        writeln!(out, "scripted oracle {}", path.display())?;
        match ScriptedOracleSpec::load(path) {
            Err(e) => {
                writeln!(out, "  [FAIL] parse: {e}")?;
                clean = false;
            }
            Ok(spec) => {
                writeln!(out, "  [ok]   parse: {} proposal rules, {} score rules", spec.proposals.len(), spec.scores.len())?;
                let violations = spec.check();
                report_violations(&violations, "scores and actions", out)?;
                clean &= violations.is_empty();
                if let Some(app) = &app_spec {
                    let cross = spec.check_against(app);
                    report_violations(&cross, "widgets exist in the app", out)?;
                    clean &= cross.is_empty();
                }
            }
        }
    }
    writeln!(out, "{}", if clean { "valid" } else { "invalid" })?;
    Ok(if clean { EXIT_OK } else { EXIT_ERROR })
}

fn report_violations(v: &[crate::env::Violation], what: &str, out: &mut dyn Write) -> CliResult<()> {
    if v.is_empty() {
        writeln!(out, "  [ok]   {what}")?;
    }
    for x in v {
        writeln!(out, "  [FAIL] {}: {}", x.location, x.message)?;
    }
    Ok(())
}

/// Runs the seed x k grid in parallel; rows come back in `k_list` order.
pub fn sweep_grid(args: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let seeds = parse_seed_range(&args.seeds)?;
    if args.k_list.is_empty() {
        return Err(CliError("--k-list is empty".into()));
    }
    let oracle_file = match parse_oracle_mode(&args.search.oracle, &args.search)? {
        OracleMode::Scripted { file } => file,
        OracleMode::Remote { .. } => return Err(CliError("sweep runs with a scripted oracle only".into())),
    };
    let oracle_spec = ScriptedOracleSpec::load(&oracle_file)?;
    let app_path = absolute(&args.search.app)?;
    let app = Arc::new(load_sim_app(&app_path)?);
    let (_, report) = load_report(&args.search, &app)?;
    let bug = BugReport { text: report, app_name: app_name(&app, &app_path) };

    let mut cells = Vec::new();
    for &k in &args.k_list {
        let cfg = search_config(&args.search, k, 0)?;
        cells.extend(seeds.clone().map(|seed| (k, cfg.with_seed(seed))));
    }
    let results: Vec<(usize, Option<u64>)> = cells
        .par_iter()
        .map(|(k, cfg)| {
            let o = ScriptedOracle::new(&oracle_spec, cfg.policy.seed)?;
            let r = run_search::<f64, _>(*cfg, SimEnvironment::new(app.clone()), OraclePair::single(&o), &bug)?;
            let ok = r.trace.outcome == Outcome::CrashReproduced;
            Ok::<_, EngineError>((*k, ok.then_some(r.trace.iterations_used)))
        })
        .collect::<Result<_, _>>()?;

    Ok(args
        .k_list
        .iter()
        .map(|&k| {
            let cell: Vec<Option<u64>> = results.iter().filter(|(kk, _)| *kk == k).map(|(_, r)| *r).collect();
            let wins: Vec<u64> = cell.iter().flatten().copied().collect();
            SweepRow {
                k,
                runs: cell.len(),
                successes: wins.len(),
                success_rate: wins.len() as f64 / cell.len() as f64,
                mean_iterations: (!wins.is_empty()).then(|| wins.iter().sum::<u64>() as f64 / wins.len() as f64),
            }
        })
        .collect())
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> CliResult<i32> {
    let rows = sweep_grid(args)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&rows)?)?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "{:>3}  {:>5}  {:>8}  {:>7}  {:>10}", "k", "runs", "success", "rate", "mean_iter")?;
    for r in &rows {
        let mean = r.mean_iterations.map_or("-".to_string(), |m| format!("{m:.1}"));
        writeln!(out, "{:>3}  {:>5}  {:>8}  {:>7.2}  {:>10}", r.k, r.runs, r.successes, r.success_rate, mean)?;
    }
    Ok(EXIT_OK)
}
