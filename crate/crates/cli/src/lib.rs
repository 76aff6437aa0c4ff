//! Experiment runner behind the `fedzz` binary: `key = value` config files,
//! single runs, parameter sweeps and partition inspection.
//!
//! Every command is a plain function returning [`CliError`] so the binary and
//! the tests share one code path. [`CliError::exit_code`] maps parse and
//! validation problems to 2 and failures during a run to 3.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedzz_core::attacks::AttackKind;
use fedzz_core::baselines::DefenseKind;
use fedzz_core::metrics::{emit_reports, RunSummary};
use fedzz_core::sim::{run_experiment_with_threads, Workload};
use fedzz_core::{DatasetConfig, ExperimentConfig};

/// Hidden width used when `model = mlp` is given without `hidden_dims`.
pub const DEFAULT_MLP_HIDDEN: usize = 32;

pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config text, unknown key, invalid value or failed validation.
    #[error("{0}")]
    Invalid(String),
    /// Anything that goes wrong once a valid config is running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn runtime(e: fedzz_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

const KEYS: &[&str] = &[
    "n_clients",
    "zones_m",
    "global_epochs",
    "local_epochs",
    "eta",
    "batch_size",
    "alpha",
    "xi",
    "tau",
    "queue_capacity",
    "replay_window",
    "defense",
    "attack",
    "attack_pct",
    "attack_client",
    "poison_rate",
    "msimba_epsilon",
    "msimba_queries",
    "beta",
    "dataset",
    "classes",
    "dim",
    "samples",
    "class_sep",
    "idx_images",
    "idx_labels",
    "max_samples",
    "model",
    "hidden_dims",
    "test_fraction",
    "rs_fraction",
    "krum_f",
    "trim_k",
    "seed",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| invalid(format!("bad value for {key}: '{raw}' ({e})")))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// missing keys keep their defaults, unknown or repeated keys are errors.
/// The result is not validated; see [`ExperimentConfig::validate`].
pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let mut raw = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected key = value", no + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(invalid(format!("line {}: unknown key '{key}'", no + 1)));
        }
        if raw.insert(key.to_string(), value.to_string()).is_some() {
            return Err(invalid(format!("line {}: duplicate key '{key}'", no + 1)));
        }
    }
    build_config(&raw)
}

fn build_config(raw: &BTreeMap<String, String>) -> CliResult<ExperimentConfig> {
    let get = |k: &str| raw.get(k).map(String::as_str);
    let mut cfg = ExperimentConfig::default();

    macro_rules! set {
        ($($key:ident),* $(,)?) => {
            $(if let Some(v) = get(stringify!($key)) {
                cfg.$key = parse_value(stringify!($key), v)?;
            })*
        };
    }
    set!(
        n_clients, zones_m, global_epochs, local_epochs, eta, batch_size, alpha, xi, tau, queue_capacity,
        replay_window, attack_pct, attack_client, poison_rate, msimba_epsilon, msimba_queries, beta,
        test_fraction, rs_fraction, seed,
    );
    if let Some(v) = get("defense") {
        cfg.defense = v.parse::<DefenseKind>().map_err(|e| invalid(e.to_string()))?;
    }
    if let Some(v) = get("attack") {
        cfg.attack = v.parse::<AttackKind>().map_err(|e| invalid(e.to_string()))?;
    }
    if let Some(v) = get("krum_f") {
        cfg.krum_f = Some(parse_value("krum_f", v)?);
    }
    if let Some(v) = get("trim_k") {
        cfg.trim_k = Some(parse_value("trim_k", v)?);
    }

    cfg.hidden_dims = match get("hidden_dims") {
        Some("") => Vec::new(),
        Some(v) => v
            .split(',')
            .map(|h| parse_value("hidden_dims", h.trim()))
            .collect::<CliResult<_>>()?,
        None => match get("model") {
            Some("mlp") => vec![DEFAULT_MLP_HIDDEN],
            _ => Vec::new(),
        },
    };
    match get("model") {
        None | Some("softmax") | Some("mlp") => {}
        Some(other) => return Err(invalid(format!("unknown model '{other}' (softmax or mlp)"))),
    }
    if get("model") == Some("softmax") && !cfg.hidden_dims.is_empty() {
        return Err(invalid("model = softmax takes no hidden_dims"));
    }

    let synthetic_keys = ["classes", "dim", "samples", "class_sep"];
    let idx_keys = ["idx_images", "idx_labels", "max_samples"];
    cfg.dataset = match get("dataset").unwrap_or("synthetic") {
        "synthetic" => {
            if let Some(k) = idx_keys.iter().find(|k| raw.contains_key(**k)) {
                return Err(invalid(format!("{k} requires dataset = idx")));
            }
            let DatasetConfig::Synthetic {
                mut classes,
                mut dim,
                mut samples,
                mut class_sep,
            } = DatasetConfig::default()
            else {
                unreachable!("default dataset is synthetic")
            };
            if let Some(v) = get("classes") {
                classes = parse_value("classes", v)?;
            }
            if let Some(v) = get("dim") {
                dim = parse_value("dim", v)?;
            }
            if let Some(v) = get("samples") {
                samples = parse_value("samples", v)?;
            }
            if let Some(v) = get("class_sep") {
                class_sep = parse_value("class_sep", v)?;
            }
            DatasetConfig::Synthetic {
                classes,
                dim,
                samples,
                class_sep,
            }
        }
        "idx" => {
            if let Some(k) = synthetic_keys.iter().find(|k| raw.contains_key(**k)) {
                return Err(invalid(format!("{k} requires dataset = synthetic")));
            }
            let path = |k: &str| {
                get(k)
                    .map(PathBuf::from)
                    .ok_or_else(|| invalid(format!("dataset = idx requires {k}")))
            };
            DatasetConfig::Idx {
                images: path("idx_images")?,
                labels: path("idx_labels")?,
                max_samples: get("max_samples").map_or(Ok(usize::MAX), |v| parse_value("max_samples", v))?,
            }
        }
        other => return Err(invalid(format!("unknown dataset '{other}' (synthetic or idx)"))),
    };
    Ok(cfg)
}

/// Reads, parses and validates a config file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(cfg)
}

/// Runs one experiment from a validated config and writes its reports.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> CliResult<RunSummary> {
    let outcome = run_experiment_with_threads(cfg, threads).map_err(runtime)?;
    emit_reports(&outcome.reports, &outcome.drop_log, cfg, out_dir).map_err(runtime)
}

pub fn cmd_run(config: &Path, out_dir: &Path, seed: Option<u64>, threads: usize) -> CliResult<RunSummary> {
    let cfg = load_config(config, seed)?;
    run_config(&cfg, out_dir, threads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
    AttackPct,
    M,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::AttackPct => "attack_pct",
            SweepParam::M => "m",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> CliResult<()> {
        match self {
            SweepParam::Alpha => cfg.alpha = parse_value("alpha", value)?,
            SweepParam::Beta => cfg.beta = parse_value("beta", value)?,
            SweepParam::AttackPct => cfg.attack_pct = parse_value("attack_pct", value)?,
            SweepParam::M => cfg.zones_m = parse_value("m", value)?,
        }
        Ok(())
    }
}

impl FromStr for SweepParam {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "alpha" => SweepParam::Alpha,
            "beta" => SweepParam::Beta,
            "attack_pct" => SweepParam::AttackPct,
            "m" | "zones_m" => SweepParam::M,
            other => return Err(invalid(format!("unknown sweep parameter '{other}' (alpha, beta, attack_pct, m)"))),
        })
    }
}

/// Directory name of one sweep point inside the sweep output directory.
pub fn sweep_dir_name(param: SweepParam, value: &str) -> String {
    format!("{}_{}", param.name(), value)
}

/// One run per value with the base config's seed, each in its own
/// directory, plus `comparison.csv` with one row per value.
///
/// All values are parsed and validated before the first run starts.
pub fn cmd_sweep(
    config: &Path,
    param: SweepParam,
    values: &[String],
    out_dir: &Path,
    seed: Option<u64>,
    threads: usize,
) -> CliResult<Vec<RunSummary>> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    let base = load_config(config, seed)?;
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            param.apply(&mut cfg, v)?;
            cfg.validate().map_err(|e| invalid(format!("{}={v}: {e}", param.name())))?;
            Ok(cfg)
        })
        .collect::<CliResult<Vec<_>>>()?;

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut table = csv::Writer::from_path(out_dir.join(COMPARISON_FILE)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let header = [
        param.name(),
        "final_gta",
        "detection_rate",
        "afpr",
        "total_drops",
        "malicious_drops",
        "malicious_clients",
        "run_dir",
    ];
    table.write_record(header).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut summaries = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let dir = sweep_dir_name(param, value);
        let summary = run_config(cfg, &out_dir.join(&dir), threads)?;
        let ids: Vec<String> = summary.malicious_clients.iter().map(usize::to_string).collect();
        table
            .write_record([
                value.clone(),
                format!("{:.6}", summary.final_gta),
                summary.detection_rate.map_or(String::new(), |d| format!("{d:.6}")),
                format!("{:.6}", summary.afpr),
                summary.total_drops.to_string(),
                summary.malicious_drops.to_string(),
                ids.join(" "),
                dir,
            ])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        summaries.push(summary);
    }
    table.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(summaries)
}

/// Writes per-client, per-class training sample counts as CSV.
pub fn cmd_partition_inspect(config: &Path, seed: Option<u64>, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let workload = Workload::build(&cfg).map_err(runtime)?;
    let classes = workload.spec.num_classes;
    let counts = workload.plan.class_counts(&workload.train, classes);

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["client_id".to_string(), "total".to_string()];
    header.extend((0..classes).map(|c| format!("class_{c}")));
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(&header).map_err(io)?;
    for (client, row) in counts.iter().enumerate() {
        let mut record = vec![client.to_string(), row.iter().sum::<usize>().to_string()];
        record.extend(row.iter().map(usize::to_string));
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
