//! Command-line front end: argument parsing, config validation and the
//! file-writing pipeline runner.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::bayes::{aggregate, CellKind};
use crate::experiments::{
    ar1_study, logistic_fit_with, macro_decay_sweep, median_stability, permutation_lambda,
    with_workers, ExperimentError,
};
use crate::market_data::{
    load_series, simulate_ar1, Ar1Spec, ColumnMap, DataError, PriceSeries, RNG_ALGORITHM,
};
use crate::report::{self, Format, MicroRow, Output};
use crate::sr_engine::{detect_events, DetectorConfig, EngineError, Gamma, LevelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Event log of level entries and their outcomes
    Detect,
    /// Posterior bounce probability per (kind, b_prev)
    Posterior,
    /// Shuffled-returns permutation estimate of Lambda
    Permtest,
    /// Posterior bounce probability across lag windows
    Macro,
    /// Logistic fit of bounce outcome on time since previous bounce
    Micro,
    /// AR(1) control study, original and shuffled
    Ar1,
    /// Running median of the shuffle-side estimate
    Stability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Detect => "detect",
            Command::Posterior => "posterior",
            Command::Permtest => "permtest",
            Command::Macro => "macro",
            Command::Micro => "micro",
            Command::Ar1 => "ar1",
            Command::Stability => "stability",
        }
    }
}

/// Transform applied to the time since the previous bounce before the
/// logistic fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum XTransform {
    #[default]
    Identity,
    Ln1p,
    Sqrt,
}

impl XTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            XTransform::Identity => x,
            XTransform::Ln1p => x.ln_1p(),
            XTransform::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSpec {
    File { path: PathBuf, columns: ColumnMap },
    /// AR(1) paths, one per rho; single-series commands use the first.
    Simulated { rhos: Vec<f64>, length: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: InputSpec,
    pub detector: DetectorConfig,
    /// Lag windows for `macro`; other commands use `detector.lag_window`.
    pub lags: Vec<usize>,
    pub b_prevs: Vec<u32>,
    pub target_b_prev: u32,
    pub replicates: u64,
    pub seed: u64,
    pub x_transform: XTransform,
    pub output_dir: PathBuf,
    pub format: Format,
    /// 0 uses the available parallelism. Results do not depend on it.
    pub workers: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "srlab", version, about = "Support/resistance level discovery and bounce statistics")]
pub struct Args {
    /// Pipeline to run
    #[arg(value_enum, required_unless_present = "manifest")]
    pub command: Option<Command>,
    /// Price CSV; when absent an AR(1) path is simulated from --rho/--length
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Timestamp column name ("none" to keep file order)
    #[arg(long, default_value = "timestamp")]
    pub ts_col: String,
    /// Price column name (the close column for OHLC exports)
    #[arg(long, default_value = "price")]
    pub price_col: String,
    /// Volume column; rows with zero volume are dropped
    #[arg(long)]
    pub volume_col: Option<String>,
    /// Field delimiter of the input file
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Lag window in steps; a comma list for `macro`
    #[arg(long, value_delimiter = ',', default_value = "60")]
    pub lag: Vec<usize>,
    /// Level half-width: `auto` (mean absolute increment) or a value
    #[arg(long, default_value = "auto")]
    pub gamma: Gamma,
    /// Largest b_prev cell; higher counts are pooled into it
    #[arg(long, default_value_t = 8)]
    pub bprev_cap: u32,
    /// b_prev values reported by `macro`
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub bprev: Vec<u32>,
    /// b_prev tracked by `stability`
    #[arg(long, default_value_t = 8)]
    pub target_bprev: u32,
    /// Shuffled-returns replicates for `permtest` and `stability`
    #[arg(long, default_value_t = 1000)]
    pub replicates: u64,
    /// Seed for simulation and shuffling
    #[arg(long, env = "SRLAB_SEED", default_value_t = 0)]
    pub seed: u64,
    /// AR(1) coefficient(s) for simulated input; a comma list for `ar1`
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub rho: Vec<f64>,
    /// Length of simulated series
    #[arg(long, default_value_t = 1_000_000)]
    pub length: usize,
    /// Transform of time since previous bounce for `micro`
    #[arg(long, value_enum, default_value_t = XTransform::Identity)]
    pub x_transform: XTransform,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads (0 = available parallelism)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Validate the configuration and exit without running
    #[arg(long)]
    pub check: bool,
    /// Re-run the configuration recorded in a manifest.json
    #[arg(long, conflicts_with = "command")]
    pub manifest: Option<PathBuf>,
}

impl Args {
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.manifest {
            let mut config = read_manifest(path)?;
            config.output_dir = self.out;
            return Ok(config);
        }
        let command = self.command.expect("clap enforces command or manifest");
        let input = match self.input {
            Some(path) => {
                let delimiter = u8::try_from(self.delimiter)
                    .map_err(|_| CliError::Invalid("delimiter must be a single ASCII character".into()))?;
                let timestamp = (!self.ts_col.eq_ignore_ascii_case("none")).then_some(self.ts_col);
                InputSpec::File {
                    path,
                    columns: ColumnMap {
                        timestamp,
                        price: self.price_col,
                        volume: self.volume_col,
                        delimiter,
                    },
                }
            }
            None => InputSpec::Simulated {
                rhos: self.rho,
                length: self.length,
                seed: self.seed,
            },
        };
        Ok(RunConfig {
            command,
            input,
            detector: DetectorConfig {
                lag_window: self.lag.first().copied().unwrap_or(60),
                gamma: self.gamma,
                b_prev_cap: self.bprev_cap,
            },
            lags: self.lag,
            b_prevs: self.bprev,
            target_b_prev: self.target_bprev,
            replicates: self.replicates,
            seed: self.seed,
            x_transform: self.x_transform,
            output_dir: self.out,
            format: self.format,
            workers: self.workers,
        })
    }
}

fn read_manifest(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::Manifest("no `config` field".into()))?;
    serde_json::from_value(config).map_err(|e| CliError::Manifest(e.to_string()))
}

fn load_input(input: &InputSpec) -> Result<PriceSeries, CliError> {
    match input {
        InputSpec::File { path, columns } => Ok(load_series(path, columns)?),
        InputSpec::Simulated { rhos, length, seed } => {
            let rho = *rhos
                .first()
                .ok_or_else(|| CliError::Invalid("no rho given".into()))?;
            Ok(simulate_ar1(&Ar1Spec::standard(rho, *length, *seed))?)
        }
    }
}

/// All problems with `config`, without running anything. File inputs are
/// read to check their columns and length.
pub fn validate(config: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    if let Err(e) = config.detector.validate() {
        out.push(e.to_string());
    }
    if config.lags.is_empty() {
        out.push("at least one lag is required".into());
    }
    if config.command != Command::Macro && config.lags.len() > 1 {
        out.push(format!("`{}` takes a single lag", config.command.name()));
    }
    if config.lags.iter().any(|&l| l < 2) {
        out.push("lag windows must be at least 2 steps".into());
    }
    if config.lags.first() != Some(&config.detector.lag_window) && !config.lags.is_empty() {
        out.push("detector lag differs from the first listed lag".into());
    }
    match config.command {
        Command::Permtest if config.replicates == 0 => {
            out.push("replicates must be at least 1".into())
        }
        Command::Stability if config.replicates < 2 => {
            out.push("stability needs at least 2 replicates".into())
        }
        Command::Macro if config.b_prevs.is_empty() => {
            out.push("at least one b_prev is required".into())
        }
        _ => {}
    }

    let usable = match &config.input {
        InputSpec::File { path, columns } => match load_series(path, columns) {
            Ok(s) => Some(s.len()),
            Err(e) => {
                out.push(e.to_string());
                None
            }
        },
        InputSpec::Simulated { rhos, length, .. } => {
            if rhos.is_empty() {
                out.push("at least one rho is required".into());
            }
            if rhos.iter().any(|r| !r.is_finite()) {
                out.push("rho must be finite".into());
            }
            if config.command != Command::Ar1 && rhos.len() > 1 {
                out.push(format!("`{}` takes a single rho", config.command.name()));
            }
            if *length < 2 {
                out.push("length must be at least 2".into());
            }
            Some(*length)
        }
    };
    if let (Some(len), Some(&max_lag)) = (usable, config.lags.iter().max()) {
        if max_lag >= len {
            out.push(format!("lag exceeds usable length ({max_lag} >= {len} rows)"));
        }
    }
    if matches!(config.input, InputSpec::File { .. }) && config.command == Command::Ar1 {
        out.push("`ar1` simulates its own input; drop --input".into());
    }
    out
}

/// Name shared by every output of a run: `<command>_<series-id>_<lag>`.
fn stem(config: &RunConfig, series_id: &str) -> String {
    let lag = match config.command {
        Command::Macro => {
            let lo = config.lags.iter().min().copied().unwrap_or(0);
            let hi = config.lags.iter().max().copied().unwrap_or(0);
            if lo == hi {
                lo.to_string()
            } else {
                format!("{lo}-{hi}")
            }
        }
        _ => config.detector.lag_window.to_string(),
    };
    format!("{}_{}_{}", config.command.name(), series_id, lag)
}

struct Produced {
    series_meta: Option<serde_json::Value>,
    gamma: serde_json::Value,
    outputs: Vec<Output>,
}

fn execute(config: &RunConfig) -> Result<Produced, CliError> {
    if config.command == Command::Ar1 {
        let InputSpec::Simulated { rhos, length, seed } = &config.input else {
            return Err(CliError::Invalid("`ar1` simulates its own input".into()));
        };
        let rows = ar1_study(rhos, *length, &config.detector, *seed)?;
        let id = format!("len{length}-seed{seed}");
        let gamma = json!(rows.iter().map(|r| json!({"rho": r.rho, "gamma": r.gamma})).collect::<Vec<_>>());
        return Ok(Produced {
            series_meta: None,
            gamma,
            outputs: vec![report::ar1_tables(stem(config, &id), &rows)],
        });
    }

    let series = load_input(&config.input)?;
    let meta = series.meta()?;
    let id = series.id.clone();
    let stem = stem(config, &id);
    let gamma = config.detector.resolve_gamma(&series)?;
    let outputs = match config.command {
        Command::Detect => {
            let run = detect_events(&series, &config.detector)?;
            vec![report::event_log(stem, &run)]
        }
        Command::Posterior => {
            let run = detect_events(&series, &config.detector)?;
            let table = aggregate(&run.events, config.detector.b_prev_cap);
            vec![report::posterior_table(stem, &id, &table)]
        }
        Command::Permtest => {
            let table = permutation_lambda(&series, &config.detector, config.replicates, config.seed)?;
            vec![
                report::lambda_wide(stem.clone(), &table),
                report::lambda_long(format!("{stem}_long"), &table),
            ]
        }
        Command::Macro => {
            let curves = macro_decay_sweep(&series, &config.lags, &config.b_prevs, config.detector.gamma)?;
            vec![report::decay_curves(stem, &id, &curves)]
        }
        Command::Micro => {
            let run = detect_events(&series, &config.detector)?;
            let mut rows = Vec::new();
            for kind in CellKind::ALL {
                let events: Vec<_> = run
                    .events
                    .iter()
                    .filter(|e| match kind {
                        CellKind::Support => e.kind == LevelKind::Support,
                        CellKind::Resistance => e.kind == LevelKind::Resistance,
                        CellKind::Combined => true,
                    })
                    .copied()
                    .collect();
                for b_prev in 1..=config.detector.b_prev_cap {
                    let fit = logistic_fit_with(&events, b_prev, |x| config.x_transform.apply(x));
                    rows.push(MicroRow { kind, b_prev, fit });
                }
            }
            vec![report::micro_table(stem, &id, &rows)]
        }
        Command::Stability => {
            let trace = median_stability(
                &series,
                &config.detector,
                config.replicates as usize,
                config.target_b_prev,
                config.seed,
            )?;
            vec![report::stability_trace(stem, &id, &trace)]
        }
        Command::Ar1 => unreachable!("handled above"),
    };
    Ok(Produced {
        series_meta: Some(serde_json::to_value(meta).expect("meta serializes")),
        gamma: json!(gamma),
        outputs,
    })
}

/// Summary of a successful run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
}

fn manifest(config: &RunConfig, produced: &Produced, files: &[String]) -> serde_json::Value {
    let columns = match &config.input {
        InputSpec::File { columns, .. } => json!({
            "price": columns.price,
            "timestamp": columns.timestamp,
            "volume": columns.volume,
        }),
        InputSpec::Simulated { .. } => serde_json::Value::Null,
    };
    json!({
        "tool": "srlab",
        "version": env!("CARGO_PKG_VERSION"),
        "rng_algorithm": RNG_ALGORITHM,
        "config": config,
        "gamma": produced.gamma,
        "price_columns": columns,
        "series": produced.series_meta,
        "outputs": files,
    })
}

/// Execute `config` and write its outputs plus `manifest.json`. On any
/// failure the files written so far are removed.
pub fn run(config: &RunConfig) -> Result<RunSummary, CliError> {
    let problems = validate(config);
    if !problems.is_empty() {
        return Err(CliError::Invalid(problems.join("; ")));
    }
    let produced = with_workers(config.workers, || execute(config))?;

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        for output in &produced.outputs {
            let path = output
                .write(dir, config.format)
                .map_err(io_err(format!("writing {}", output.file_name(config.format))))?;
            written.push(path);
        }
        if let Some(meta) = &produced.series_meta {
            let id = meta["id"].as_str().unwrap_or("series");
            let path = dir.join(format!("series_{id}.json"));
            let bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
            fs::write(&path, bytes).map_err(io_err(format!("writing {}", path.display())))?;
            written.push(path);
        }
        let names: Vec<String> = written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest(config, &produced, &names))
            .expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(io_err(format!("writing {}", path.display())))?;
        written.push(path);
        Ok(())
    })();
    match result {
        Ok(()) => Ok(RunSummary { files: written }),
        Err(e) => {
            for path in &written {
                let _ = fs::remove_file(path);
            }
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simulated(command: Command, length: usize) -> RunConfig {
        RunConfig {
            command,
            input: InputSpec::Simulated {
                rhos: vec![1.0],
                length,
                seed: 3,
            },
            detector: DetectorConfig::with_lag(60),
            lags: vec![60],
            b_prevs: vec![1, 2, 3, 4],
            target_b_prev: 8,
            replicates: 10,
            seed: 3,
            x_transform: XTransform::Identity,
            output_dir: PathBuf::from("."),
            format: Format::Csv,
            workers: 1,
        }
    }

    #[test]
    fn valid_config_has_no_diagnostics() {
        assert!(validate(&simulated(Command::Permtest, 10_000)).is_empty());
    }

    #[test]
    fn lag_longer_than_series_reported() {
        let mut config = simulated(Command::Detect, 100);
        config.lags = vec![240];
        config.detector.lag_window = 240;
        let problems = validate(&config);
        assert_eq!(problems.len(), 1);
        assert!(problems[0].contains("lag exceeds usable length"), "{problems:?}");
    }

    #[test]
    fn zero_replicates_reported() {
        let mut config = simulated(Command::Permtest, 10_000);
        config.replicates = 0;
        assert_eq!(validate(&config), vec!["replicates must be at least 1".to_string()]);
    }

    #[test]
    fn missing_column_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "timestamp,close\n1,1.0\n2,2.0\n").unwrap();
        let mut config = simulated(Command::Detect, 10);
        config.input = InputSpec::File {
            path,
            columns: ColumnMap::default(),
        };
        config.lags = vec![2];
        config.detector.lag_window = 2;
        let problems = validate(&config);
        assert!(problems.iter().any(|p| p.contains("price")), "{problems:?}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = simulated(Command::Macro, 5_000);
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), config);
    }

    #[test]
    fn every_command_writes_outputs_and_manifest() {
        for command in Command::value_variants() {
            let dir = tempfile::tempdir().unwrap();
            let mut config = simulated(*command, 5_000);
            config.output_dir = dir.path().to_path_buf();
            if *command == Command::Ar1 {
                config.input = InputSpec::Simulated {
                    rhos: vec![1.0, 0.9],
                    length: 5_000,
                    seed: 3,
                };
            }
            let summary = run(&config).unwrap();
            assert!(dir.path().join("manifest.json").exists());
            assert!(summary.files.len() >= 2, "{command:?}");
            for f in &summary.files {
                assert!(fs::metadata(f).unwrap().len() > 0);
            }
        }
    }

    #[test]
    fn failed_run_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = simulated(Command::Detect, 100);
        config.lags = vec![240];
        config.detector.lag_window = 240;
        config.output_dir = dir.path().join("out");
        assert!(run(&config).is_err());
        assert!(!config.output_dir.exists() || fs::read_dir(&config.output_dir).unwrap().count() == 0);
    }
}
