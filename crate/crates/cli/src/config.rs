//! Command-line surface and flat key-value config files.
//!
//! A config file holds one `key = value` pair per line (string, number, or
//! boolean scalars; `#` comments allowed). Keys are the long flag names
//! without the leading dashes; unknown keys are rejected. Explicit flags
//! override config values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sok",
    about = "Euler/shooting solvers for second-order ODEs with a time singularity",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate an initial value problem and write the trajectory.
    Solve(SolveArgs),
    /// Solve a two-point boundary value problem by shooting.
    Shoot(ShootArgs),
    /// Run a step-size sweep and estimate the empirical convergence order.
    Converge(ConvergeArgs),
    /// Reproduce published reference data.
    Reproduce(ReproduceArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputFormat::Csv => write!(f, "csv"),
            OutputFormat::Json => write!(f, "json"),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Uniform,
    Geometric,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    Oracle,
    #[value(name = "rk4-fine")]
    Rk4Fine,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Registry problem id (example1..example5, lane-emden-n<k>, linear-sinh).
    #[arg(long)]
    pub problem: Option<String>,
    /// Step method: forward-euler | semi-implicit-euler | rk4.
    #[arg(long)]
    pub method: Option<String>,
    /// Step schedule kind.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    /// Uniform step size.
    #[arg(long)]
    pub h: Option<f64>,
    /// Relative step of the geometric schedule.
    #[arg(long = "h-hat")]
    pub h_hat: Option<f64>,
    /// Cutoff fraction of the geometric schedule (distance from the
    /// singular point at which integration stops).
    #[arg(long)]
    pub delta: Option<f64>,
    /// End time for uniform schedules.
    #[arg(long)]
    pub end: Option<f64>,
    /// Initial position override.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Initial velocity override.
    #[arg(long)]
    pub v0: Option<f64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Flat key-value config file supplying defaults for the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Integrate Example 3 across its singular point instead of clamping
    /// the interval to t_s - 0.05 (the run will truncate at the
    /// singularity).
    #[arg(long)]
    pub cross_singularity: bool,
}

#[derive(Args, Debug)]
pub struct ShootArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Left boundary time (defaults to the problem's start).
    #[arg(long)]
    pub left: Option<f64>,
    /// Right boundary time.
    #[arg(long)]
    pub right: Option<f64>,
    /// Left boundary value x(a).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Right boundary value x(b).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Secant brackets s0,s1 for the initial slope.
    #[arg(long)]
    pub brackets: Option<String>,
    /// Residual tolerance for the secant iteration.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Maximum number of residual evaluations.
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated step sizes (>= 3, spanning a factor >= 4).
    #[arg(long = "h-list")]
    pub h_list: Option<String>,
    /// Reference solution for error measurement.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceKind>,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// Reproduction target.
    #[arg(value_parser = ["table1", "figure-polytropes"])]
    pub target: String,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

/// Parsed flat key-value config file.
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, allowed_keys: &[&str]) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected `key = value`", lineno + 1));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !allowed_keys.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key `{key}`", lineno + 1));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key `{key}`: cannot parse `{raw}`")),
        }
    }
}

/// Keys accepted in config files for commands built on [`CommonArgs`].
pub const COMMON_CONFIG_KEYS: &[&str] = &[
    "problem", "method", "schedule", "h", "h-hat", "delta", "end", "x0", "v0", "format",
];

impl CommonArgs {
    /// Overlays config-file values under the explicit flags.
    pub fn apply_config(&mut self) -> Result<(), String> {
        let Some(path) = &self.config else {
            return Ok(());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let file = ConfigFile::parse(&text, COMMON_CONFIG_KEYS)?;
        if self.problem.is_none() {
            self.problem = file.get_str("problem");
        }
        if self.method.is_none() {
            self.method = file.get_str("method");
        }
        if self.schedule.is_none() {
            self.schedule = match file.get_str("schedule").as_deref() {
                None => None,
                Some("uniform") => Some(ScheduleKind::Uniform),
                Some("geometric") => Some(ScheduleKind::Geometric),
                Some(other) => return Err(format!("config key `schedule`: unknown value `{other}`")),
            };
        }
        if self.h.is_none() {
            self.h = file.get_parsed("h")?;
        }
        if self.h_hat.is_none() {
            self.h_hat = file.get_parsed("h-hat")?;
        }
        if self.delta.is_none() {
            self.delta = file.get_parsed("delta")?;
        }
        if self.end.is_none() {
            self.end = file.get_parsed("end")?;
        }
        if self.x0.is_none() {
            self.x0 = file.get_parsed("x0")?;
        }
        if self.v0.is_none() {
            self.v0 = file.get_parsed("v0")?;
        }
        if self.format.is_none() {
            self.format = match file.get_str("format").as_deref() {
                None => None,
                Some("csv") => Some(OutputFormat::Csv),
                Some("json") => Some(OutputFormat::Json),
                Some(other) => return Err(format!("config key `format`: unknown value `{other}`")),
            };
        }
        Ok(())
    }
}
