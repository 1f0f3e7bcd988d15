//! Command-line front end: single runs, the ablation suite, operator
//! service mode and scene export.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{run_episode, Agents, SimConfig};
use crate::metrics::{compute_report, format_csv, format_table, MetricsReport};
use crate::operator::{serve_stream, OperatorSession, Role};
use crate::perception::{GeometricOracle, PerceptionOracle, RemoteOracle, ReplayOracle, DEFAULT_TIMEOUT};
use crate::scenario::{builtin_scenes, resolve_scene, scene_to_string};
use crate::trace::{EpisodeResult, EpisodeTrace};
use crate::world::Scene;

#[derive(Debug, Parser)]
#[command(name = "tzpp", version, about = "Humanoid-quadruped navigation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration, write its trace and print the metrics.
    Run(RunArgs),
    /// Run full, -X, -Y and g1-only on the built-in scenes.
    Suite(SuiteArgs),
    /// Host one operator-driven episode over a WebSocket.
    Serve(ServeArgs),
    /// Print or write a scene file.
    Scene(SceneArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleChoice {
    Geometric,
    Remote,
    Replay(PathBuf),
}

impl FromStr for OracleChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(OracleChoice::Geometric),
            "remote" => Ok(OracleChoice::Remote),
            _ => match s.strip_prefix("replay:") {
                Some(p) if !p.is_empty() => Ok(OracleChoice::Replay(PathBuf::from(p))),
                _ => Err(format!("unknown oracle '{s}' (expected geometric, remote or replay:<trace>)")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scene file path or builtin:N.
    #[arg(long, default_value = "builtin:1")]
    pub scene: String,
    #[arg(long, default_value = "g1-go2")]
    pub agents: Agents,
    #[arg(long)]
    pub disable_mode_x: bool,
    #[arg(long)]
    pub disable_mode_y: bool,
    /// geometric, remote or replay:<trace>. A replay reuses the recorded configuration.
    #[arg(long, default_value = "geometric")]
    pub oracle: OracleChoice,
    /// Remote oracle endpoint; TZPP_ORACLE_URL takes precedence.
    #[arg(long)]
    pub oracle_url: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs with seeds seed, seed+1, ...; CR is the success fraction.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Trace path; repeats get the seed appended to the file stem.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub report: ReportFormat,
    /// TOML file with SimConfig fields; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub turn_budget: Option<usize>,
}

impl Default for RunArgs {
    fn default() -> Self {
        Self {
            scene: "builtin:1".into(),
            agents: Agents::G1Go2,
            disable_mode_x: false,
            disable_mode_y: false,
            oracle: OracleChoice::Geometric,
            oracle_url: None,
            seed: 0,
            repeat: 1,
            out: None,
            report: ReportFormat::Table,
            config: None,
            turn_budget: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SuiteArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeded repeats per cell.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub report: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, default_value = "builtin:2")]
    pub scene: String,
    #[arg(long, default_value = "human-humanoid")]
    pub role: Role,
    /// Trace path; defaults to operator-<scene>.trace.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Scene file path or builtin:N.
    pub scene: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn make_oracle(choice: &OracleChoice, url: Option<&str>, config: &SimConfig) -> Result<(Box<dyn PerceptionOracle>, String)> {
    Ok(match choice {
        OracleChoice::Geometric => (Box::new(GeometricOracle::new(config.perception.clone())), "geometric".into()),
        OracleChoice::Remote => {
            let o = RemoteOracle::from_env_or(url, DEFAULT_TIMEOUT)?;
            let name = format!("remote:{}", o.url());
            (Box::new(o), name)
        }
        OracleChoice::Replay(path) => {
            let trace = load_trace(path)?;
            (Box::new(ReplayOracle::new(trace.queries().cloned())), format!("replay:{}", path.display()))
        }
    })
}

fn load_trace(path: &Path) -> Result<EpisodeTrace> {
    EpisodeTrace::load(path).with_context(|| format!("reading trace {}", path.display()))
}

/// Configuration for a run: the replayed trace's own, else file plus flags.
pub fn run_config(args: &RunArgs) -> Result<SimConfig> {
    if let OracleChoice::Replay(path) = &args.oracle {
        return Ok(load_trace(path)?.header.config);
    }
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SimConfig::default(),
    };
    config.agents = args.agents;
    config.disable_mode_x |= args.disable_mode_x;
    config.disable_mode_y |= args.disable_mode_y;
    config.seed = args.seed;
    if let Some(b) = args.turn_budget {
        config.turn_budget = b;
    }
    config.validate()?;
    Ok(config)
}

fn seeded_path(out: &Path, seed: u64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{seed}"),
    };
    out.with_file_name(name)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub scene: Scene,
    pub traces: Vec<EpisodeTrace>,
    pub reports: Vec<MetricsReport>,
    pub aggregate: MetricsReport,
    pub text: String,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome> {
    if args.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let scene = resolve_scene(&args.scene)?;
    let base = run_config(args)?;
    if let OracleChoice::Replay(path) = &args.oracle {
        let recorded = load_trace(path)?.header.scene;
        if recorded != scene.name {
            bail!("trace {} was recorded on scene '{recorded}', not '{}'", path.display(), scene.name);
        }
    }
    let mut traces = Vec::new();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for i in 0..args.repeat {
        let config = SimConfig {
            seed: base.seed + i as u64,
            ..base.clone()
        };
        let (mut oracle, name) = make_oracle(&args.oracle, args.oracle_url.as_deref(), &config)?;
        let trace = run_episode(&scene, &config, oracle.as_mut(), &name)?;
        if let Some(out) = &args.out {
            let path = if args.repeat == 1 { out.clone() } else { seeded_path(out, config.seed) };
            trace.save(&path).with_context(|| format!("writing {}", path.display()))?;
        }
        let report = compute_report(&trace, &scene)?;
        rows.push((format!("{} {} seed={}", scene.name, config.label(), config.seed), report.clone()));
        reports.push(report);
        traces.push(trace);
    }
    let aggregate = MetricsReport::aggregate(&reports).expect("at least one run");
    if args.repeat > 1 {
        rows.push((format!("{} {} mean", scene.name, base.label()), aggregate.clone()));
    }
    let mut text = match args.report {
        ReportFormat::Table => format_table(&rows),
        ReportFormat::Csv => format_csv(&rows),
    };
    for t in &traces {
        let _ = writeln!(text, "seed {}: {} after {} turns", t.header.config.seed, t.result(), t.terminal.turn);
    }
    if let Some(err) = traces.iter().find_map(|t| match t.result() {
        EpisodeResult::Aborted { error } => Some(error.clone()),
        _ => None,
    }) {
        bail!("{text}episode aborted: {err}");
    }
    Ok(RunOutcome {
        scene,
        traces,
        reports,
        aggregate,
        text,
    })
}

pub const SUITE_CONFIGS: [&str; 4] = ["full", "-X", "-Y", "g1-only"];

pub fn suite_config(label: &str, seed: u64) -> SimConfig {
    let base = SimConfig {
        seed,
        ..SimConfig::default()
    };
    match label {
        "-X" => SimConfig {
            disable_mode_x: true,
            ..base
        },
        "-Y" => SimConfig {
            disable_mode_y: true,
            ..base
        },
        "g1-only" => SimConfig {
            agents: Agents::G1Only,
            ..base
        },
        _ => base,
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub scene: String,
    pub config: &'static str,
    pub report: MetricsReport,
    pub results: Vec<EpisodeResult>,
}

pub const SUITE_COLUMNS: [&str; 5] = ["TIME", "PS", "CR", "RMSE", "V_avoid"];

impl SuiteRow {
    /// Cell value; runs that never succeeded show N/A except for CR.
    pub fn cell(&self, column: &str) -> Option<f64> {
        if column != "CR" && !self.results.iter().any(EpisodeResult::is_success) {
            return None;
        }
        self.report.value(column)
    }
}

pub fn run_suite(args: &SuiteArgs) -> Result<Vec<SuiteRow>> {
    if args.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let mut rows = Vec::new();
    for (i, scene) in builtin_scenes().iter().enumerate() {
        for label in SUITE_CONFIGS {
            let mut reports = Vec::new();
            let mut results = Vec::new();
            for k in 0..args.repeat {
                let config = suite_config(label, args.seed + k as u64);
                let mut oracle = GeometricOracle::new(config.perception.clone());
                let trace = run_episode(scene, &config, &mut oracle, "geometric")?;
                reports.push(compute_report(&trace, scene)?);
                results.push(trace.result().clone());
            }
            rows.push(SuiteRow {
                scene: format!("S{} {}", i + 1, scene.name),
                config: label,
                report: MetricsReport::aggregate(&reports).expect("at least one run"),
                results,
            });
        }
    }
    Ok(rows)
}

pub fn format_suite(rows: &[SuiteRow], format: ReportFormat) -> String {
    let fmt = |v: Option<f64>, col: &str| match (v, col) {
        (None, _) => "N/A".to_string(),
        (Some(x), "CR") => format!("{:.0}%", x * 100.0),
        (Some(x), _) => format!("{x:.2}"),
    };
    let mut table: Vec<Vec<String>> = vec![["scene", "config"]
        .iter()
        .chain(SUITE_COLUMNS.iter())
        .map(|s| s.to_string())
        .collect()];
    for r in rows {
        let mut line = vec![r.scene.clone(), r.config.to_string()];
        line.extend(SUITE_COLUMNS.iter().map(|c| fmt(r.cell(c), c)));
        table.push(line);
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for line in &table {
                let _ = writeln!(out, "{}", line.join(","));
            }
        }
        ReportFormat::Table => {
            let widths: Vec<usize> = (0..table[0].len())
                .map(|i| table.iter().map(|l| l[i].len()).max().unwrap_or(0))
                .collect();
            for line in &table {
                let cells: Vec<String> = line
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            }
        }
    }
    out
}

pub fn cmd_suite(args: &SuiteArgs) -> Result<String> {
    Ok(format_suite(&run_suite(args)?, args.report))
}

/// Accepts one client on `listener` and plays the episode to its end. The
/// trace is returned even when the client disconnects early.
pub fn serve_once(listener: &TcpListener, scene: &Scene, config: &SimConfig, role: Role) -> Result<EpisodeTrace> {
    let (stream, _) = listener.accept().context("accepting operator connection")?;
    let mut oracle = GeometricOracle::new(config.perception.clone());
    let mut op = OperatorSession::new(scene, config, &mut oracle, role)?;
    let served = serve_stream(stream, &mut op);
    let trace = op.into_trace("geometric");
    if let Err(e) = served {
        eprintln!("operator connection ended: {e}");
    }
    Ok(trace)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<String> {
    let scene = resolve_scene(&args.scene)?;
    let config = SimConfig::default();
    let listener = TcpListener::bind((args.bind.as_str(), args.port))
        .with_context(|| format!("binding {}:{}", args.bind, args.port))?;
    eprintln!("waiting for operator on ws://{}", listener.local_addr()?);
    let trace = serve_once(&listener, &scene, &config, args.role)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("operator-{}.trace.jsonl", scene.name)));
    trace.save(&out).with_context(|| format!("writing {}", out.display()))?;
    let report = compute_report(&trace, &scene)?;
    let mut text = format_table(&[(format!("{} operator", scene.name), report)]);
    let _ = writeln!(text, "{} after {} turns; trace written to {}", trace.result(), trace.terminal.turn, out.display());
    if let EpisodeResult::Aborted { error } = trace.result() {
        bail!("{text}episode aborted: {error}");
    }
    Ok(text)
}

pub fn cmd_scene(args: &SceneArgs) -> Result<String> {
    let scene = resolve_scene(&args.scene)?;
    let text = scene_to_string(&scene);
    match &args.out {
        Some(p) => {
            std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
            Ok(format!("wrote {}\n", p.display()))
        }
        None => Ok(text),
    }
}

pub fn dispatch(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(|o| o.text),
        Command::Suite(a) => cmd_suite(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Scene(a) => cmd_scene(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_choice_parsing() {
        assert_eq!("geometric".parse::<OracleChoice>().unwrap(), OracleChoice::Geometric);
        assert_eq!(
            "replay:a/b.jsonl".parse::<OracleChoice>().unwrap(),
            OracleChoice::Replay(PathBuf::from("a/b.jsonl"))
        );
        assert!("replay:".parse::<OracleChoice>().is_err());
        assert!("oracle".parse::<OracleChoice>().is_err());
    }

    #[test]
    fn cli_flags_parse() {
        let cli = Cli::try_parse_from([
            "tzpp", "run", "--scene", "builtin:3", "--agents", "g1-only", "--repeat", "3", "--report", "csv",
        ])
        .unwrap();
        match cli.command {
            Command::Run(a) => {
                assert_eq!(a.agents, Agents::G1Only);
                assert_eq!(a.repeat, 3);
                assert_eq!(a.report, ReportFormat::Csv);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["tzpp", "serve", "--role", "spectator"]).is_err());
    }

    #[test]
    fn seeded_paths() {
        assert_eq!(seeded_path(Path::new("out/run.jsonl"), 4), PathBuf::from("out/run-4.jsonl"));
        assert_eq!(seeded_path(Path::new("run"), 0), PathBuf::from("run-0"));
    }

    #[test]
    fn repeat_zero_is_an_error() {
        let args = RunArgs {
            repeat: 0,
            ..RunArgs::default()
        };
        assert!(cmd_run(&args).is_err());
    }

    #[test]
    fn remote_without_endpoint_fails_cleanly() {
        if std::env::var(crate::perception::ORACLE_URL_ENV).is_ok() {
            return;
        }
        let args = RunArgs {
            oracle: OracleChoice::Remote,
            ..RunArgs::default()
        };
        let err = cmd_run(&args).unwrap_err().to_string();
        assert!(err.contains("TZPP_ORACLE_URL"), "{err}");
    }
}
