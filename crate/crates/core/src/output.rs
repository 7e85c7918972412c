//! Run artifacts: `trajectory.csv`, `metrics.json`, `config.resolved.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sim::MetricsReport;
use crate::trajectory::TrajectoryLog;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.resolved.json";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text: header `t,agent,x_1..,u_1..`, then per step the deep row
/// (agent 0) followed by agents `1..=n`.
pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let (dx, du) = log
        .steps
        .first()
        .map_or((0, 0), |s| (s.deep_state.len(), s.deep_action.len()));
    let mut out = String::from("t,agent");
    for k in 1..=dx {
        write!(out, ",x_{k}").unwrap();
    }
    for k in 1..=du {
        write!(out, ",u_{k}").unwrap();
    }
    out.push('\n');
    let mut row = |t: usize, agent: usize, x: &crate::Vector, u: &crate::Vector| {
        write!(out, "{t},{agent}").unwrap();
        for v in x.iter().chain(u.iter()) {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    };
    for step in &log.steps {
        row(step.t, 0, &step.deep_state, &step.deep_action);
        for (i, (x, u)) in step.states.iter().zip(&step.actions).enumerate() {
            row(step.t, i + 1, x, u);
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Fails if any artifact already exists in `dir` and `force` is off.
pub fn guard_overwrite(dir: &Path, force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for name in [TRAJECTORY_FILE, METRICS_FILE, CONFIG_FILE] {
        let p = dir.join(name);
        if p.exists() {
            return Err(Error::WouldOverwrite(p));
        }
    }
    Ok(())
}

/// Writes all three artifacts into `dir`, creating it if needed.
pub fn emit_csv(
    log: &TrajectoryLog,
    metrics: &MetricsReport,
    config: &ScenarioConfig,
    dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    guard_overwrite(dir, force)?;
    let paths: Vec<PathBuf> = [TRAJECTORY_FILE, METRICS_FILE, CONFIG_FILE].iter().map(|f| dir.join(f)).collect();
    write(&paths[0], &trajectory_csv(log))?;
    let mut metrics_json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    metrics_json.push('\n');
    write(&paths[1], &metrics_json)?;
    let mut config_json = config.to_json();
    config_json.push('\n');
    write(&paths[2], &config_json)?;
    Ok(paths)
}
