//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::output::{emit_csv, format_float, guard_overwrite};
use crate::scenario::{parse_assignment, ScenarioConfig};
use crate::sim::{example1_file, metrics, run, Example1, MetricsReport, EXAMPLE1_RHO};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "swarmtrack", version, about = "Decomposed LQR and receding-horizon control of large swarms")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Scenario file (.toml or .json).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Dotted-path override, e.g. `controller.lambda=0.3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replaces the scenario seed and any derived sub-seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its artifacts.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Check a scenario without writing anything.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run one scenario per combination of varied values.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Parent directory of one subdirectory per run.
        #[arg(long)]
        out: PathBuf,
        /// `key=v1,v2,...` (repeatable; combinations are crossed).
        #[arg(long, value_name = "KEY=V1,V2")]
        vary: Vec<String>,
        /// Overwrite existing artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Run the unconstrained, constrained and attacked swarm demo.
    Example1 {
        /// Parent directory of the three variant subdirectories.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing artifacts.
        #[arg(long)]
        force: bool,
        /// Protection level of the attacked variant.
        #[arg(long, default_value_t = EXAMPLE1_RHO)]
        rho: f64,
        /// Population seed (default 42).
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter().map(|s| parse_assignment(s)).collect()
}

fn load(args: &ScenarioArgs, extra: &[(String, String)]) -> Result<ScenarioConfig> {
    let mut ov = overrides(&args.set)?;
    ov.extend_from_slice(extra);
    ScenarioConfig::from_path(&args.scenario, &ov, args.seed)
}

fn report(err: &mut dyn Write, e: &Error) {
    match e {
        Error::Validation(diags) => {
            let _ = writeln!(err, "error: scenario is invalid");
            for d in diags {
                let _ = writeln!(err, "  {d}");
            }
        }
        other => {
            let _ = writeln!(err, "error: {other}");
        }
    }
}

fn summary(m: &MetricsReport) -> String {
    let mut s = format!(
        "n={} T={} final_tracking_error={} total_cost={} max_abs_action={}",
        m.n,
        m.horizon,
        format_float(m.final_tracking_error),
        format_float(m.total_cost),
        format_float(m.max_abs_action)
    );
    if let Some(v) = m.max_violation {
        s.push_str(&format!(" max_violation={}", format_float(v)));
    }
    if let Some(d) = m.attacked_distance {
        s.push_str(&format!(" attacked_distance={}", format_float(d)));
    }
    s
}

fn run_one(config: &ScenarioConfig, dir: &Path, force: bool) -> Result<MetricsReport> {
    fs_guard(dir, force)?;
    let log = run(config)?;
    let m = metrics(&log, config);
    emit_csv(&log, &m, config, dir, force)?;
    Ok(m)
}

fn fs_guard(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        guard_overwrite(dir, force)?;
    }
    Ok(())
}

fn dir_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

struct SweepPoint {
    assignments: Vec<(String, String)>,
    dir: PathBuf,
}

fn sweep_points(vary: &[String], out: &Path) -> Result<(Vec<String>, Vec<SweepPoint>)> {
    let mut axes = Vec::new();
    for v in vary {
        let (key, values) = parse_assignment(v)?;
        let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidInput(format!("--vary {key}: no values")));
        }
        axes.push((key, values));
    }
    if axes.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one --vary".into()));
    }
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let keys = axes.into_iter().map(|(k, _)| k).collect();
    let points = points
        .into_iter()
        .map(|assignments| {
            let name = assignments
                .iter()
                .map(|(k, v)| format!("{}-{}", dir_component(k), dir_component(v)))
                .collect::<Vec<_>>()
                .join("_");
            SweepPoint { dir: out.join(name), assignments }
        })
        .collect();
    Ok((keys, points))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sweep(args: &ScenarioArgs, out_dir: &Path, vary: &[String], force: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (keys, points) = match sweep_points(vary, out_dir) {
        Ok(p) => p,
        Err(e) => {
            report(err, &e);
            return EXIT_VALIDATION;
        }
    };
    let summary_path = out_dir.join("sweep.csv");
    if summary_path.exists() && !force {
        report(err, &Error::WouldOverwrite(summary_path));
        return EXIT_VALIDATION;
    }
    // resolve every point before running any, so bad values fail fast
    let configs: Vec<Result<ScenarioConfig>> = points.iter().map(|p| load(args, &p.assignments)).collect();
    if let Some(code) = configs.iter().filter_map(|c| c.as_ref().err()).map(|e| {
        report(err, e);
        exit_code(e)
    }).max() {
        return code;
    }
    let configs: Vec<ScenarioConfig> = configs.into_iter().map(|c| c.expect("checked")).collect();
    let results: Vec<Result<MetricsReport>> =
        points.par_iter().zip(configs.par_iter()).map(|(p, c)| run_one(c, &p.dir, force)).collect();

    let mut table = String::new();
    for k in &keys {
        table.push_str(&csv_field(k));
        table.push(',');
    }
    table.push_str("status,final_tracking_error,total_cost,max_abs_action,max_violation,attacked_distance,error\n");
    let mut code = EXIT_OK;
    for (p, r) in points.iter().zip(&results) {
        for (_, v) in &p.assignments {
            table.push_str(&csv_field(v));
            table.push(',');
        }
        let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
        match r {
            Ok(m) => {
                let _ = writeln!(out, "{}: {}", p.dir.display(), summary(m));
                table.push_str(&format!(
                    "ok,{},{},{},{},{},\n",
                    format_float(m.final_tracking_error),
                    format_float(m.total_cost),
                    format_float(m.max_abs_action),
                    opt(m.max_violation),
                    opt(m.attacked_distance)
                ));
            }
            Err(e) => {
                let _ = writeln!(err, "{}: error: {e}", p.dir.display());
                code = code.max(exit_code(e));
                table.push_str(&format!("failed,,,,,,{}\n", csv_field(&e.to_string())));
            }
        }
    }
    if let Err(e) = std::fs::create_dir_all(out_dir)
        .and_then(|_| std::fs::write(&summary_path, table))
        .map_err(|e| Error::Io { path: summary_path.clone(), source: e })
    {
        report(err, &e);
        return EXIT_RUNTIME;
    }
    code
}

/// Runs a parsed invocation, writing human-readable output to `out`/`err`,
/// and returns the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result: Result<()> = match &cli.command {
        Command::Validate { scenario } => load(scenario, &[]).map(|c| {
            let _ = writeln!(
                out,
                "{}: valid ({} agents, T={}, {})",
                scenario.scenario.display(),
                c.population.n(),
                c.model.horizon(),
                match c.controller {
                    crate::scenario::ControllerConfig::Lqr { .. } => "lqr",
                    crate::scenario::ControllerConfig::Rhc { .. } => "rhc",
                }
            );
        }),
        Command::Run { scenario, out: dir, force } => {
            load(scenario, &[]).and_then(|c| run_one(&c, dir, *force)).map(|m| {
                let _ = writeln!(out, "{}: {}", dir.display(), summary(&m));
            })
        }
        Command::Sweep { scenario, out: dir, vary, force } => return sweep(scenario, dir, vary, *force, out, err),
        Command::Example1 { out: dir, force, rho, seed } => {
            let variants =
                [(Example1::Unconstrained, "unconstrained"), (Example1::Constrained, "constrained"), (Example1::Attacked, "attacked")];
            variants.iter().try_for_each(|&(v, name)| {
                let mut file = example1_file(v, *rho);
                if let Some(s) = seed {
                    file.seed = *s;
                }
                let config = ScenarioConfig::resolve(&file)?;
                let sub = dir.join(name);
                let m = run_one(&config, &sub, *force)?;
                let _ = writeln!(out, "{}: {}", sub.display(), summary(&m));
                Ok(())
            })
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(err, &e);
            exit_code(&e)
        }
    }
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    execute(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
