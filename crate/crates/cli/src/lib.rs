//! Front end for the lorentz-wente experiments: configuration, orchestration,
//! CSV emission and regression baselines.

pub mod config;
pub mod experiments;
pub mod summary;
pub mod table;

use std::path::{Path, PathBuf};

use config::{Experiment, SweepConfig};
use summary::{compare_baseline, load_baselines, BaselineReport, BaselineStatus, SummaryRow};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ASSERTION: u8 = 3;
pub const EXIT_REGRESSION: u8 = 4;

/// Worker-count override for the rayon pool.
pub const WORKERS_ENV: &str = "LWLAB_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// One JSON object on one line.
    pub fn machine_line(&self) -> String {
        let kind = match self {
            Self::Config(_) => "config",
            Self::Runtime(_) => "runtime",
        };
        serde_json::json!({ "error": kind, "message": self.to_string() }).to_string()
    }
}

impl From<lorentz_wente::Error> for CliError {
    fn from(e: lorentz_wente::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(format!("json: {e}"))
    }
}

/// Build the global pool from `LWLAB_WORKERS` when set.
pub fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV}={v} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Option<u64>,
    pub baseline: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<SweepConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => SweepConfig::load(p)?,
            None => SweepConfig::default(),
        };
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.baseline.is_some() {
            cfg.baseline = self.baseline.clone();
        }
        Ok(cfg)
    }
}

pub fn out_dir(cfg: &SweepConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("lwlab-out"))
}

/// Outcome of a run: the checked metrics and, with a baseline, their comparison.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<SummaryRow>,
    pub baseline: Option<BaselineReport>,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        if self.rows.iter().any(|r| !r.pass) {
            EXIT_ASSERTION
        } else if self.baseline.as_ref().is_some_and(|b| b.regressions().next().is_some()) {
            EXIT_REGRESSION
        } else {
            EXIT_OK
        }
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                let bound = r.bound.map_or("-".to_string(), |b| format!("{b:e}"));
                let verdict = if r.bound.is_none() {
                    "INFO"
                } else if r.pass {
                    "PASS"
                } else {
                    "FAIL"
                };
                format!("{verdict} {} {} = {:e} (bound {bound})", r.experiment, r.metric, r.value)
            })
            .collect();
        if let Some(b) = &self.baseline {
            for c in &b.checks {
                let what = match c.status {
                    BaselineStatus::Pass => continue,
                    BaselineStatus::Regression => "REGRESSION",
                    BaselineStatus::NewMetric => "WARNING no baseline for",
                    BaselineStatus::MissingMetric => "WARNING no result for baseline",
                };
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:e}"));
                out.push(format!(
                    "{what} {} {}: value {} baseline {} tolerance {}",
                    c.experiment,
                    c.metric,
                    fmt(c.value),
                    fmt(c.baseline),
                    fmt(c.tolerance)
                ));
            }
        }
        out
    }
}

fn with_baseline(rows: Vec<SummaryRow>, baseline: Option<&Path>) -> Result<RunReport, CliError> {
    let baseline = match baseline {
        Some(p) => Some(compare_baseline(&rows, &load_baselines(p)?)),
        None => None,
    };
    Ok(RunReport { rows, baseline })
}

/// Validate, run one experiment, merge its rows into `summary.csv` and compare
/// against the baseline when one is configured.
pub fn run(exp: Experiment, cfg: &SweepConfig) -> Result<RunReport, CliError> {
    cfg.validate(exp)?;
    if let Some(b) = &cfg.baseline {
        load_baselines(b)?;
    }
    let out = out_dir(cfg);
    let rows = experiments::run(exp, cfg, &out)?;
    summary::update_file(&out, &rows)?;
    with_baseline(rows, cfg.baseline.as_deref())
}

/// Re-check the accumulated `summary.csv` in `out`, optionally freezing it as a baseline.
pub fn report(out: &Path, baseline: Option<&Path>, freeze: Option<(&Path, f64)>) -> Result<RunReport, CliError> {
    let path = out.join(summary::SUMMARY_FILE);
    if !path.exists() {
        return Err(CliError::Config(format!("no summary at {}", path.display())));
    }
    let rows: Vec<SummaryRow> = table::load(&path)?;
    if let Some((target, rel)) = freeze {
        if !(rel > 0.0) {
            return Err(CliError::Config(format!("relative tolerance {rel} must be positive")));
        }
        table::save(target, "baseline", &summary::freeze(&rows, rel, 1e-300))?;
    }
    with_baseline(rows, baseline)
}
