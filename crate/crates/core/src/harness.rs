//! Experiment orchestration: structured sweep configs, deterministic
//! result tables, CSV and plot-description emission.
//!
//! A sweep walks the SNR grid of a config. At each grid point every
//! method is evaluated on the same seeded test stream, which is pinned by
//! hashing the drawn observations, so method comparisons are paired
//! sample by sample. Individual run failures are recorded in their row
//! and do not stop the sweep.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    baseline_eval, cmac_dual_oracle, naive_decisions, BaselineError, OracleSolveConfig,
};
use crate::distributed::{train_distributed, Topology};
use crate::mlp::Mlp;
use crate::problems::{ProblemKind, ProblemSpec};
use crate::trainer::{
    default_centralized_arch, derive_seed, evaluate, evaluate_with, train, CentralizedPolicy,
    ConvergenceLog, EvalConfig, EvalReport, TrainConfig, TrainError, TrainReport,
};

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown preset or missing config file '{0}' (presets: {1})")]
    UnknownPreset(String, String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn csv_err(line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Csv { line, msg: msg.into() }
}

// ── configuration ───────────────────────────────────────────────────────

/// One sweep definition, readable from TOML. `snr_db` is the sweep grid;
/// `backhaul_bits` applies to the "distributed" method only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Table and file name; `[A-Za-z0-9_-]` only.
    pub name: String,
    /// "p3" multiple-access sum capacity, "p4" interference sum rate,
    /// "p5" interference min rate.
    pub problem: String,
    pub n: usize,
    /// Trainer defaults, "desk" or "paper"; `overrides` refine them.
    #[serde(default = "defaults::scale")]
    pub scale: String,
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub backhaul_bits: Vec<u32>,
    /// Peak over average power ratio (interference problems).
    #[serde(default = "defaults::peak_ratio")]
    pub peak_ratio: f64,
    /// Interference-temperature bound (multiple-access problem).
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    pub methods: Vec<String>,
    /// Training seeds; one row per seed and method at each grid point.
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::eval_size")]
    pub eval_size: usize,
    /// When nonempty, "centralized" expands into one run per hidden-layer
    /// count (depth study; run it at a single SNR).
    #[serde(default)]
    pub hidden_layer_grid: Vec<usize>,
    /// Default output directory; `--out` and `PDNET_OUT` take precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Overrides,
}

mod defaults {
    pub fn scale() -> String {
        "desk".into()
    }
    pub fn peak_ratio() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn eval_size() -> usize {
        10_000
    }
}

/// Optional trainer and architecture knobs layered over the scale
/// defaults. The architecture fields shape the single-network policy
/// (and the network the naive baseline reuses); the per-node networks of
/// the distributed policy keep their standard dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub iters: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_dual: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_val_size: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
}

/// Method names `run_experiment` understands. The first three train
/// networks; the rest are closed-form references.
pub const METHODS: &[&str] = &[
    "centralized",
    "distributed",
    "naive",
    "oracle",
    "wmmse",
    "short_term",
    "fixed",
    "peak",
    "random",
];

const CMAC_ONLY: &[&str] = &["oracle", "short_term", "fixed"];
// Peak and random draws need a finite peak power, which only the
// interference problems have.
const IFC_ONLY: &[&str] = &["wmmse", "peak", "random"];

fn distinct<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().all(|(i, x)| !xs[..i].contains(x))
}

/// Maps a problem id to its kind: "p3" multiple-access sum capacity,
/// "p4" interference sum rate, "p5" interference min rate.
pub fn parse_problem(id: &str) -> HarnessResult<ProblemKind> {
    match id {
        "p3" => Ok(ProblemKind::CmacSumCapacity),
        "p4" => Ok(ProblemKind::IfcSumRate),
        "p5" => Ok(ProblemKind::IfcMinRate),
        other => Err(config_err(format!("problem must be p3, p4 or p5, got '{other}'"))),
    }
}

impl ExperimentConfig {
    pub fn problem_kind(&self) -> HarnessResult<ProblemKind> {
        parse_problem(&self.problem)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(config_err("name must be nonempty and use only [A-Za-z0-9_-]"));
        }
        let kind = self.problem_kind()?;
        if self.n == 0 {
            return Err(config_err("n must be at least 1"));
        }
        scale_defaults(&self.scale)?;
        if self.snr_db.is_empty() {
            return Err(config_err("snr_db grid is empty"));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) || !distinct(&self.snr_db) {
            return Err(config_err("snr_db entries must be finite and distinct"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods list is empty"));
        }
        for m in &self.methods {
            if !METHODS.contains(&m.as_str()) {
                return Err(config_err(format!(
                    "unknown method '{m}' (known: {})",
                    METHODS.join(", ")
                )));
            }
        }
        if !distinct(&self.methods) {
            return Err(config_err("methods must be distinct"));
        }
        match kind {
            ProblemKind::CmacSumCapacity => {
                if !(self.gamma.is_finite() && self.gamma > 0.0) {
                    return Err(config_err("gamma must be positive"));
                }
                for m in IFC_ONLY {
                    if self.methods.iter().any(|x| x == m) {
                        return Err(config_err(format!("method '{m}' needs an interference problem")));
                    }
                }
            }
            _ => {
                if !(self.peak_ratio.is_finite() && self.peak_ratio >= 1.0) {
                    return Err(config_err("peak_ratio must be at least 1"));
                }
                for m in CMAC_ONLY {
                    if self.methods.iter().any(|x| x == m) {
                        return Err(config_err(format!("method '{m}' needs the multiple-access problem")));
                    }
                }
            }
        }
        if self.methods.iter().any(|m| m == "distributed") {
            if self.backhaul_bits.is_empty() {
                return Err(config_err("distributed method needs a backhaul_bits grid"));
            }
            if !distinct(&self.backhaul_bits) {
                return Err(config_err("backhaul_bits must be distinct"));
            }
        }
        if self.seeds.is_empty() || !distinct(&self.seeds) {
            return Err(config_err("seeds must be nonempty and distinct"));
        }
        if self.eval_size < 2 {
            return Err(config_err("eval_size must be at least 2"));
        }
        if !self.hidden_layer_grid.is_empty() {
            if !self.methods.iter().any(|m| m == "centralized") {
                return Err(config_err("hidden_layer_grid needs the centralized method"));
            }
            if !distinct(&self.hidden_layer_grid) {
                return Err(config_err("hidden_layer_grid must be distinct"));
            }
        }
        let o = &self.overrides;
        if o.iters == Some(0) || o.batch == Some(0) || o.checkpoint_every == Some(0) {
            return Err(config_err("iters, batch and checkpoint_every overrides must be positive"));
        }
        if o.lr.is_some_and(|v| !(v.is_finite() && v > 0.0))
            || o.lr_dual.is_some_and(|v| !(v.is_finite() && v > 0.0))
        {
            return Err(config_err("learning-rate overrides must be positive"));
        }
        if o.hidden_width == Some(0) {
            return Err(config_err("hidden_width override must be positive"));
        }
        Ok(())
    }

    /// Trainer settings for one run: scale defaults, then overrides, then
    /// the run seed.
    pub fn train_config(&self, seed: u64) -> HarnessResult<TrainConfig> {
        let mut cfg = scale_defaults(&self.scale)?;
        let o = &self.overrides;
        if let Some(v) = o.iters {
            cfg.iters = v;
        }
        if let Some(v) = o.batch {
            cfg.batch = v;
        }
        if let Some(v) = o.lr {
            cfg.lr = v;
        }
        if let Some(v) = o.lr_dual {
            cfg.lr_dual = v;
        }
        if let Some(v) = o.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if let Some(v) = o.checkpoint_val_size {
            cfg.checkpoint_val_size = v;
        }
        cfg.seed = seed;
        Ok(cfg)
    }
}

pub fn scale_defaults(scale: &str) -> HarnessResult<TrainConfig> {
    match scale {
        "desk" => Ok(TrainConfig::desk()),
        "paper" => Ok(TrainConfig::paper()),
        other => Err(config_err(format!("scale must be desk or paper, got '{other}'"))),
    }
}

// ── presets ─────────────────────────────────────────────────────────────

pub const PRESETS: &[&str] = &["fig3-desk", "fig6-desk", "fig8-desk", "arch-desk"];

/// Named sweep definitions: sum capacity over SNR with the classical
/// references, sum rate and min rate over SNR for the three-transmitter
/// interference setup, and a hidden-layer depth study at 5 dB.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let base = ExperimentConfig {
        name: name.to_string(),
        problem: "p3".into(),
        n: 2,
        scale: "desk".into(),
        snr_db: Vec::new(),
        backhaul_bits: Vec::new(),
        peak_ratio: 1.0,
        gamma: 1.0,
        methods: Vec::new(),
        seeds: vec![1, 2, 3],
        eval_size: 10_000,
        hidden_layer_grid: Vec::new(),
        out_dir: None,
        overrides: Overrides::default(),
    };
    match name {
        "fig3-desk" => Some(ExperimentConfig {
            snr_db: vec![-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            backhaul_bits: vec![0, 1, 2, 3],
            methods: strings(&["centralized", "distributed", "oracle", "short_term", "fixed"]),
            ..base
        }),
        "fig6-desk" => Some(ExperimentConfig {
            problem: "p4".into(),
            n: 3,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            backhaul_bits: vec![0, 1, 2],
            methods: strings(&["centralized", "distributed", "wmmse", "naive", "peak", "random"]),
            ..base
        }),
        "fig8-desk" => Some(ExperimentConfig {
            problem: "p5".into(),
            n: 3,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            backhaul_bits: vec![0, 1, 2, 3],
            methods: strings(&["centralized", "distributed", "peak", "random"]),
            ..base
        }),
        "arch-desk" => Some(ExperimentConfig {
            snr_db: vec![5.0],
            methods: strings(&["centralized", "oracle"]),
            hidden_layer_grid: vec![0, 1, 2, 3, 4, 5],
            ..base
        }),
        _ => None,
    }
}

/// Resolves a `--config` argument: a preset name, otherwise a TOML path.
pub fn resolve_config(arg: &str) -> HarnessResult<ExperimentConfig> {
    if let Some(cfg) = preset(arg) {
        cfg.validate()?;
        return Ok(cfg);
    }
    if Path::new(arg).is_file() {
        return load_config(Path::new(arg));
    }
    Err(HarnessError::UnknownPreset(arg.to_string(), PRESETS.join(", ")))
}

pub fn load_config(path: &Path) -> HarnessResult<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

// ── result table ────────────────────────────────────────────────────────

/// Frozen CSV column order. `backhaul_bits` and `metric_mean_stochastic`
/// are empty for rows they do not apply to; `note` carries diagnostics
/// (training rollbacks, per-run errors) with commas and line breaks
/// flattened to semicolons.
pub const RESULT_COLUMNS: &[&str] = &[
    "problem",
    "method",
    "snr_db",
    "backhaul_bits",
    "peak_power",
    "seed",
    "metric_mean",
    "metric_ci95",
    "metric_mean_stochastic",
    "feasible",
    "max_rel_violation",
    "note",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub problem: String,
    pub method: String,
    pub snr_db: f64,
    pub backhaul_bits: Option<u32>,
    pub peak_power: f64,
    pub seed: u64,
    pub metric_mean: f64,
    pub metric_ci95: f64,
    /// Test metric under stochastic message quantization; distributed
    /// rows report both this and the deterministic `metric_mean`.
    pub metric_mean_stochastic: Option<f64>,
    pub feasible: bool,
    pub max_rel_violation: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(name: impl Into<String>) -> Self {
        ResultTable { name: name.into(), rows: Vec::new() }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = RESULT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.problem.clone(),
                r.method.clone(),
                r.snr_db.to_string(),
                r.backhaul_bits.map(|b| b.to_string()).unwrap_or_default(),
                r.peak_power.to_string(),
                r.seed.to_string(),
                r.metric_mean.to_string(),
                r.metric_ci95.to_string(),
                r.metric_mean_stochastic.map(|v| v.to_string()).unwrap_or_default(),
                r.feasible.to_string(),
                r.max_rel_violation.to_string(),
                sanitize_note(&r.note),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(name: &str, text: &str) -> HarnessResult<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| csv_err(1, "empty file"))?;
        if header != RESULT_COLUMNS.join(",") {
            return Err(csv_err(1, format!("unexpected header '{header}'")));
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != RESULT_COLUMNS.len() {
                return Err(csv_err(
                    line_no,
                    format!("{} fields, expected {}", f.len(), RESULT_COLUMNS.len()),
                ));
            }
            rows.push(ResultRow {
                problem: f[0].to_string(),
                method: f[1].to_string(),
                snr_db: parse_field(f[2], line_no, "snr_db")?,
                backhaul_bits: parse_optional(f[3], line_no, "backhaul_bits")?,
                peak_power: parse_field(f[4], line_no, "peak_power")?,
                seed: parse_field(f[5], line_no, "seed")?,
                metric_mean: parse_field(f[6], line_no, "metric_mean")?,
                metric_ci95: parse_field(f[7], line_no, "metric_ci95")?,
                metric_mean_stochastic: parse_optional(f[8], line_no, "metric_mean_stochastic")?,
                feasible: parse_field(f[9], line_no, "feasible")?,
                max_rel_violation: parse_field(f[10], line_no, "max_rel_violation")?,
                note: f[11].to_string(),
            });
        }
        Ok(ResultTable { name: name.to_string(), rows })
    }

    pub fn read_csv(path: &Path) -> HarnessResult<Self> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into());
        Self::from_csv_str(&name, &fs::read_to_string(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> HarnessResult<T> {
    s.parse().map_err(|_| csv_err(line, format!("bad {col} value '{s}'")))
}

fn parse_optional<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> HarnessResult<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, line, col).map(Some)
    }
}

/// Commas and line breaks would corrupt the single-line CSV layout.
pub fn sanitize_note(note: &str) -> String {
    note.replace("\r\n", "; ").replace(['\n', '\r'], "; ").replace(',', ";")
}

// ── emission ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Plotspec,
}

/// Writes the table (or its plot description) under `dir`, named after
/// the table; returns the paths written.
pub fn emit(table: &ResultTable, format: EmitFormat, dir: &Path) -> HarnessResult<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(config_err("refusing to emit an empty table"));
    }
    fs::create_dir_all(dir)?;
    let path = match format {
        EmitFormat::Csv => {
            let p = dir.join(format!("{}.csv", table.name));
            fs::write(&p, table.to_csv_string())?;
            p
        }
        EmitFormat::Plotspec => {
            let p = dir.join(format!("{}.plotspec.json", table.name));
            fs::write(&p, plotspec_json(table))?;
            p
        }
    };
    Ok(vec![path])
}

/// Human name of the metric column for a problem id.
pub fn metric_label(problem: &str) -> &'static str {
    match problem {
        "p3" => "sum capacity",
        "p4" => "sum rate",
        "p5" => "min rate",
        _ => "metric",
    }
}

/// Self-describing plot instructions: axes, per-series row filters and
/// the CSV they refer to. `scripts/plot.py` renders them.
pub fn plotspec_json(table: &ResultTable) -> String {
    let metric = table.rows.first().map(|r| metric_label(&r.problem)).unwrap_or("metric");
    let mut series = Vec::new();
    let mut seen: Vec<(String, Option<u32>)> = Vec::new();
    for r in &table.rows {
        let key = (r.method.clone(), r.backhaul_bits);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let label = match r.backhaul_bits {
            Some(b) => format!("{} B={b}", r.method),
            None => r.method.clone(),
        };
        let mut filter = serde_json::json!({ "method": r.method });
        if let Some(b) = r.backhaul_bits {
            filter["backhaul_bits"] = serde_json::json!(b);
        }
        series.push(serde_json::json!({ "label": label, "filter": filter }));
    }
    let spec = serde_json::json!({
        "name": table.name,
        "csv": format!("{}.csv", table.name),
        "x": { "column": "snr_db", "label": "SNR (dB)" },
        "y": { "column": "metric_mean", "label": format!("average {metric} (nats/s/Hz)") },
        "aggregate": "mean over seeds",
        "series": series,
    });
    let mut text = serde_json::to_string_pretty(&spec).expect("plotspec serialization");
    text.push('\n');
    text
}

/// Writes the result CSV, its plot description and every convergence
/// trace under `dir`; returns all paths.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> HarnessResult<Vec<PathBuf>> {
    let mut paths = emit(&output.table, EmitFormat::Csv, dir)?;
    paths.extend(emit(&output.table, EmitFormat::Plotspec, dir)?);
    if !output.logs.is_empty() {
        let log_dir = dir.join(format!("{}-logs", output.table.name));
        fs::create_dir_all(&log_dir)?;
        for (run, log) in &output.logs {
            let p = log_dir.join(format!("{run}.csv"));
            log.write_csv(&p)?;
            paths.push(p);
        }
    }
    Ok(paths)
}

/// Output directory precedence: command-line flag, then the `PDNET_OUT`
/// environment variable, then the config, then `results`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var("PDNET_OUT") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    if let Some(p) = config.and_then(|c| c.out_dir.clone()) {
        return p;
    }
    PathBuf::from("results")
}

// ── summaries ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub method: String,
    pub backhaul_bits: Option<u32>,
    pub snr_db: f64,
    /// Mean of `metric_mean` over the seeds that produced a result.
    pub mean: f64,
    pub seeds: usize,
    pub failed: usize,
    pub all_feasible: bool,
}

/// Aggregates a table over seeds per (method, bits, SNR), in first
/// appearance order.
pub fn summarize(table: &ResultTable) -> Vec<SummaryLine> {
    let mut out: Vec<SummaryLine> = Vec::new();
    for r in &table.rows {
        let found = out
            .iter_mut()
            .find(|s| s.method == r.method && s.backhaul_bits == r.backhaul_bits && s.snr_db == r.snr_db);
        let s = match found {
            Some(s) => s,
            None => {
                out.push(SummaryLine {
                    method: r.method.clone(),
                    backhaul_bits: r.backhaul_bits,
                    snr_db: r.snr_db,
                    mean: 0.0,
                    seeds: 0,
                    failed: 0,
                    all_feasible: true,
                });
                out.last_mut().expect("just pushed")
            }
        };
        if r.metric_mean.is_nan() {
            s.failed += 1;
        } else {
            s.mean = (s.mean * s.seeds as f64 + r.metric_mean) / (s.seeds as f64 + 1.0);
            s.seeds += 1;
            s.all_feasible &= r.feasible;
        }
    }
    out
}

// ── sweep runner ────────────────────────────────────────────────────────

pub struct ExperimentOutput {
    pub table: ResultTable,
    /// Convergence traces of every trained run, keyed by run name.
    pub logs: Vec<(String, ConvergenceLog)>,
}

fn fnv_mix(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

/// Test-set seed for one sweep point, derived from the problem geometry
/// alone, so every method and every training seed at that point draws
/// the identical evaluation stream.
pub fn sweep_seed(problem: &ProblemSpec) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let tag: u8 = match problem.kind {
        ProblemKind::CmacSumCapacity => 1,
        ProblemKind::IfcSumRate => 2,
        ProblemKind::IfcMinRate => 3,
    };
    fnv_mix(&mut h, &[tag]);
    fnv_mix(&mut h, &(problem.n as u64).to_le_bytes());
    fnv_mix(&mut h, &problem.p_avg.to_bits().to_le_bytes());
    fnv_mix(&mut h, &problem.p_peak.to_bits().to_le_bytes());
    fnv_mix(&mut h, &problem.gamma.to_bits().to_le_bytes());
    h
}

/// File-system friendly run identifier.
pub fn run_name(method: &str, snr: f64, bits: Option<u32>, seed: u64) -> String {
    match bits {
        Some(b) => format!("{method}-b{b}-snr{snr}-s{seed}"),
        None => format!("{method}-snr{snr}-s{seed}"),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> HarnessResult<ExperimentOutput> {
    run_experiment_with(config, |_| {})
}

/// Runs the full sweep, reporting run starts and failures through
/// `progress`. Deterministic: a config and its seeds fix every drawn
/// sample, so repeated calls produce byte-identical CSV.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    progress: impl FnMut(&str),
) -> HarnessResult<ExperimentOutput> {
    config.validate()?;
    let runner = Runner {
        config,
        kind: config.problem_kind()?,
        table: ResultTable::new(&config.name),
        logs: Vec::new(),
        progress,
    };
    runner.run()
}

/// Per-sweep-point state: the problem instance, the shared test stream,
/// its pinned hash, and trained single-network policies for reuse by the
/// naive baseline.
struct PointState {
    problem: ProblemSpec,
    snr: f64,
    eval_cfg: EvalConfig,
    expected_hash: Option<u64>,
    centralized: HashMap<u64, Mlp>,
}

struct Runner<'a, F: FnMut(&str)> {
    config: &'a ExperimentConfig,
    kind: ProblemKind,
    table: ResultTable,
    logs: Vec<(String, ConvergenceLog)>,
    progress: F,
}

impl<F: FnMut(&str)> Runner<'_, F> {
    fn run(mut self) -> HarnessResult<ExperimentOutput> {
        for &snr in &self.config.snr_db {
            let problem =
                ProblemSpec::from_snr_db(self.kind, self.config.n, snr, self.config.gamma, self.config.peak_ratio);
            let mut point = PointState {
                problem,
                snr,
                eval_cfg: EvalConfig::new(self.config.eval_size, sweep_seed(&problem)),
                expected_hash: None,
                centralized: HashMap::new(),
            };
            for method in self.config.methods.clone() {
                self.run_method(&mut point, &method);
            }
        }
        Ok(ExperimentOutput { table: self.table, logs: self.logs })
    }

    fn run_method(&mut self, point: &mut PointState, method: &str) {
        match method {
            "centralized" => {
                if self.config.hidden_layer_grid.is_empty() {
                    self.centralized_runs(point, "centralized", None);
                } else {
                    for layers in self.config.hidden_layer_grid.clone() {
                        self.centralized_runs(point, &format!("centralized_h{layers}"), Some(layers));
                    }
                }
            }
            "distributed" => self.distributed_runs(point),
            "naive" => self.naive_runs(point),
            other => self.baseline_runs(point, other),
        }
    }

    fn centralized_runs(&mut self, point: &mut PointState, label: &str, layers: Option<usize>) {
        for seed in self.config.seeds.clone() {
            let run = run_name(label, point.snr, None, seed);
            (self.progress)(&format!("training {run}"));
            match self.train_centralized(point, seed, layers) {
                Ok((mut policy, report)) => {
                    // Only default-depth networks are shared with the
                    // naive baseline.
                    if layers.is_none() {
                        point.centralized.insert(seed, policy.net.clone());
                    }
                    let note = note_from_report(&report);
                    self.logs.push((run, report.log));
                    match evaluate(&mut policy, &point.problem, &point.eval_cfg) {
                        Ok(eval) => self.push_ok(point, label, None, seed, &eval, &note),
                        Err(e) => self.push_err(point, label, None, seed, e),
                    }
                }
                Err(e) => self.push_err(point, label, None, seed, e),
            }
        }
    }

    fn distributed_runs(&mut self, point: &mut PointState) {
        for b in self.config.backhaul_bits.clone() {
            for seed in self.config.seeds.clone() {
                let run = run_name("distributed", point.snr, Some(b), seed);
                (self.progress)(&format!("training {run}"));
                let outcome = self
                    .config
                    .train_config(seed)
                    .map_err(|e| e.to_string())
                    .and_then(|cfg| {
                        let topology = Topology::uniform(self.config.n, b as f64);
                        train_distributed(&point.problem, topology, &cfg).map_err(|e| e.to_string())
                    });
                match outcome {
                    Ok((mut policy, report)) => {
                        let note = note_from_report(&report);
                        self.logs.push((run, report.log));
                        let mut cfg = point.eval_cfg;
                        cfg.stochastic = true;
                        match evaluate(&mut policy, &point.problem, &cfg) {
                            Ok(eval) => self.push_ok(point, "distributed", Some(b), seed, &eval, &note),
                            Err(e) => self.push_err(point, "distributed", Some(b), seed, e),
                        }
                    }
                    Err(e) => self.push_err(point, "distributed", Some(b), seed, e),
                }
            }
        }
    }

    fn naive_runs(&mut self, point: &mut PointState) {
        for seed in self.config.seeds.clone() {
            let run = run_name("naive", point.snr, None, seed);
            let cached = point.centralized.get(&seed).cloned();
            let net = match cached {
                Some(net) => Ok(net),
                None => {
                    (self.progress)(&format!("training {run}"));
                    self.train_centralized(point, seed, None).map(|(policy, report)| {
                        self.logs.push((run.clone(), report.log));
                        point.centralized.insert(seed, policy.net.clone());
                        policy.net
                    })
                }
            };
            match net {
                Ok(net) => {
                    let problem = point.problem;
                    let res = evaluate_with(&problem, &point.eval_cfg, |obs| {
                        naive_decisions(&net, &problem, obs).map_err(unwrap_eval_error)
                    });
                    match res {
                        Ok(eval) => self.push_ok(point, "naive", None, seed, &eval, ""),
                        Err(e) => self.push_err(point, "naive", None, seed, e),
                    }
                }
                Err(e) => self.push_err(point, "naive", None, seed, e),
            }
        }
    }

    /// Closed-form references are independent of the training seed, so
    /// each is computed once per sweep point and its row repeated per
    /// seed to keep the table layout uniform.
    fn baseline_runs(&mut self, point: &mut PointState, method: &str) {
        (self.progress)(&format!("evaluating {method} at snr {}", point.snr));
        let outcome: Result<(EvalReport, String), String> = match method {
            "oracle" => {
                let solve = OracleSolveConfig { seed: point.eval_cfg.seed, ..Default::default() };
                cmac_dual_oracle(&point.problem, &solve, &point.eval_cfg)
                    .map(|r| {
                        let note = format!("gap={:.3e}; evals={}", r.duality_gap, r.iterations);
                        (r.eval, note)
                    })
                    .map_err(|e| e.to_string())
            }
            other => baseline_eval(other, &point.problem, &point.eval_cfg)
                .map(|r| (r, String::new()))
                .map_err(|e| e.to_string()),
        };
        for seed in self.config.seeds.clone() {
            match &outcome {
                Ok((eval, note)) => self.push_ok(point, method, None, seed, eval, note),
                Err(msg) => self.push_err(point, method, None, seed, msg),
            }
        }
    }

    fn train_centralized(
        &mut self,
        point: &PointState,
        seed: u64,
        layers: Option<usize>,
    ) -> Result<(CentralizedPolicy, TrainReport), TrainError> {
        let cfg = self.config.train_config(seed).expect("config validated");
        let o = &self.config.overrides;
        let (default_layers, default_width) = default_centralized_arch(&point.problem);
        let layers = layers.or(o.hidden_layers).unwrap_or(default_layers);
        let width = o.hidden_width.unwrap_or(default_width);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
        let mut policy = CentralizedPolicy::with_arch(&point.problem, layers, width, &mut rng);
        let report = train(&mut policy, &point.problem, &cfg)?;
        Ok((policy, report))
    }

    fn push_ok(
        &mut self,
        point: &mut PointState,
        method: &str,
        bits: Option<u32>,
        seed: u64,
        eval: &EvalReport,
        note: &str,
    ) {
        match point.expected_hash {
            None => point.expected_hash = Some(eval.obs_hash),
            Some(h) => assert_eq!(
                h, eval.obs_hash,
                "test stream drifted at snr {} for method {method}",
                point.snr
            ),
        }
        self.table.rows.push(ResultRow {
            problem: self.config.problem.clone(),
            method: method.to_string(),
            snr_db: point.snr,
            backhaul_bits: bits,
            peak_power: point.problem.p_peak,
            seed,
            metric_mean: eval.metric_mean,
            metric_ci95: eval.metric_ci95,
            metric_mean_stochastic: eval.metric_mean_stochastic,
            feasible: eval.feasible,
            max_rel_violation: eval.max_rel_violation,
            note: sanitize_note(note),
        });
    }

    fn push_err(
        &mut self,
        point: &PointState,
        method: &str,
        bits: Option<u32>,
        seed: u64,
        err: impl std::fmt::Display,
    ) {
        let msg = err.to_string();
        (self.progress)(&format!("run failed ({method}, snr {}, seed {seed}): {msg}", point.snr));
        self.table.rows.push(ResultRow {
            problem: self.config.problem.clone(),
            method: method.to_string(),
            snr_db: point.snr,
            backhaul_bits: bits,
            peak_power: point.problem.p_peak,
            seed,
            metric_mean: f64::NAN,
            metric_ci95: f64::NAN,
            metric_mean_stochastic: None,
            feasible: false,
            max_rel_violation: f64::NAN,
            note: sanitize_note(&format!("error: {msg}")),
        });
    }
}

fn note_from_report(report: &TrainReport) -> String {
    let mut parts = Vec::new();
    if report.skipped_steps > 0 {
        parts.push(format!("skipped={}", report.skipped_steps));
    }
    if let Some(msg) = &report.aborted {
        parts.push(format!("rolled back: {msg}"));
    }
    parts.join("; ")
}

/// `naive_decisions` can only fail through network evaluation.
fn unwrap_eval_error(e: BaselineError) -> TrainError {
    match e {
        BaselineError::Eval(t) => t,
        other => unreachable!("naive baseline raised {other}"),
    }
}

// ── tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> ResultTable {
        let mut t = ResultTable::new("sample");
        t.rows.push(ResultRow {
            problem: "p3".into(),
            method: "centralized".into(),
            snr_db: -2.0,
            backhaul_bits: None,
            peak_power: f64::INFINITY,
            seed: 1,
            metric_mean: 0.59634736,
            metric_ci95: 0.0123,
            metric_mean_stochastic: None,
            feasible: true,
            max_rel_violation: -0.004,
            note: String::new(),
        });
        t.rows.push(ResultRow {
            problem: "p3".into(),
            method: "distributed".into(),
            snr_db: -2.0,
            backhaul_bits: Some(2),
            peak_power: f64::INFINITY,
            seed: 2,
            metric_mean: 0.55,
            metric_ci95: 0.02,
            metric_mean_stochastic: Some(0.548),
            feasible: true,
            max_rel_violation: 0.001,
            note: "skipped=1".into(),
        });
        t
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            problem: "p3".into(),
            n: 2,
            scale: "desk".into(),
            snr_db: vec![0.0],
            backhaul_bits: Vec::new(),
            peak_ratio: 1.0,
            gamma: 1.0,
            methods: vec!["centralized".into(), "fixed".into(), "short_term".into()],
            seeds: vec![7],
            eval_size: 200,
            hidden_layer_grid: Vec::new(),
            out_dir: None,
            overrides: Overrides {
                iters: Some(40),
                batch: Some(32),
                lr: Some(1e-3),
                lr_dual: Some(2e-3),
                checkpoint_every: Some(20),
                checkpoint_val_size: Some(200),
                hidden_layers: Some(1),
                hidden_width: Some(8),
            },
        }
    }

    #[test]
    fn header_is_frozen() {
        let expected = "problem,method,snr_db,backhaul_bits,peak_power,seed,metric_mean,\
                        metric_ci95,metric_mean_stochastic,feasible,max_rel_violation,note";
        assert_eq!(RESULT_COLUMNS.join(","), expected);
        assert!(sample_table().to_csv_string().starts_with(expected));
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let t = sample_table();
        let back = ResultTable::from_csv_str("sample", &t.to_csv_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn error_rows_round_trip_textually() {
        let mut t = sample_table();
        t.rows.push(ResultRow {
            problem: "p4".into(),
            method: "wmmse".into(),
            snr_db: 10.0,
            backhaul_bits: None,
            peak_power: 10.0,
            seed: 3,
            metric_mean: f64::NAN,
            metric_ci95: f64::NAN,
            metric_mean_stochastic: None,
            feasible: false,
            max_rel_violation: f64::NAN,
            note: "error: something broke".into(),
        });
        let s1 = t.to_csv_string();
        let s2 = ResultTable::from_csv_str("sample", &s1).unwrap().to_csv_string();
        assert_eq!(s1, s2);
    }

    #[test]
    fn notes_are_flattened() {
        assert_eq!(sanitize_note("a,b\nc"), "a;b; c");
        assert_eq!(sanitize_note("plain"), "plain");
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(ResultTable::from_csv_str("x", "").is_err());
        assert!(ResultTable::from_csv_str("x", "wrong,header\n").is_err());
        let short = format!("{}\np3,peak\n", RESULT_COLUMNS.join(","));
        let err = ResultTable::from_csv_str("x", &short).unwrap_err();
        assert!(matches!(err, HarnessError::Csv { line: 2, .. }), "{err}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
            ("name", Box::new(|c| c.name = "bad name".into())),
            ("problem", Box::new(|c| c.problem = "p9".into())),
            ("n", Box::new(|c| c.n = 0)),
            ("scale", Box::new(|c| c.scale = "huge".into())),
            ("snr", Box::new(|c| c.snr_db.clear())),
            ("snr dup", Box::new(|c| c.snr_db = vec![0.0, 0.0])),
            ("methods", Box::new(|c| c.methods.clear())),
            ("unknown method", Box::new(|c| c.methods.push("psychic".into()))),
            ("dup method", Box::new(|c| c.methods.push("fixed".into()))),
            ("family", Box::new(|c| c.methods.push("wmmse".into()))),
            ("bits", Box::new(|c| c.methods = vec!["distributed".into()])),
            ("seeds", Box::new(|c| c.seeds = vec![1, 1])),
            ("eval", Box::new(|c| c.eval_size = 1)),
            ("gamma", Box::new(|c| c.gamma = 0.0)),
            ("grid", Box::new(|c| {
                c.methods = vec!["fixed".into()];
                c.hidden_layer_grid = vec![2];
            })),
            ("iters", Box::new(|c| c.overrides.iters = Some(0))),
            ("lr", Box::new(|c| c.overrides.lr = Some(-1.0))),
        ];
        for (what, mutate) in cases {
            let mut cfg = tiny_config();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "expected '{what}' to fail validation");
        }
        // Interference configs reject the multiple-access references.
        let mut cfg = tiny_config();
        cfg.problem = "p4".into();
        cfg.methods = vec!["peak".into(), "oracle".into()];
        assert!(cfg.validate().is_err());
        cfg.methods = vec!["peak".into()];
        cfg.peak_ratio = 0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let cfg = preset(name).expect("preset exists");
            cfg.validate().unwrap();
            assert_eq!(cfg.name, *name);
            let resolved = resolve_config(name).unwrap();
            assert_eq!(resolved, cfg);
        }
        assert!(preset("nope").is_none());
        assert!(matches!(resolve_config("nope"), Err(HarnessError::UnknownPreset(..))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = tiny_config();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn documented_toml_layout_parses() {
        let text = r#"
            name = "custom"
            problem = "p4"
            n = 3
            scale = "desk"
            snr_db = [0.0, 10.0]
            backhaul_bits = [0, 1]
            peak_ratio = 2.5
            methods = ["centralized", "distributed", "wmmse"]
            seeds = [1, 2, 3]
            eval_size = 5000

            [overrides]
            iters = 20000
            batch = 500
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.problem_kind().unwrap(), ProblemKind::IfcSumRate);
        assert_eq!(cfg.gamma, 1.0);
        let tc = cfg.train_config(9).unwrap();
        assert_eq!((tc.iters, tc.batch, tc.seed), (20_000, 500, 9));
        assert_eq!(tc.lr, TrainConfig::desk().lr);
    }

    #[test]
    fn unknown_toml_keys_are_rejected() {
        let text = "name = \"x\"\nproblem = \"p3\"\nn = 2\nsnr_db = [0.0]\nmethods = [\"peak\"]\nseeds = [1]\nbogus = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn sweep_seed_depends_on_geometry_only() {
        let a = ProblemSpec::from_snr_db(ProblemKind::CmacSumCapacity, 2, 5.0, 1.0, 1.0);
        let b = ProblemSpec::from_snr_db(ProblemKind::CmacSumCapacity, 2, 5.0, 1.0, 1.0);
        assert_eq!(sweep_seed(&a), sweep_seed(&b));
        let other_snr = ProblemSpec::from_snr_db(ProblemKind::CmacSumCapacity, 2, 10.0, 1.0, 1.0);
        assert_ne!(sweep_seed(&a), sweep_seed(&other_snr));
        let other_kind = ProblemSpec::from_snr_db(ProblemKind::IfcSumRate, 2, 5.0, 1.0, 1.0);
        assert_ne!(sweep_seed(&a), sweep_seed(&other_kind));
    }

    #[test]
    fn tiny_sweep_is_deterministic_and_paired() {
        let cfg = tiny_config();
        let out1 = run_experiment(&cfg).unwrap();
        let out2 = run_experiment(&cfg).unwrap();
        assert_eq!(out1.table.to_csv_string(), out2.table.to_csv_string());
        // One row per method and seed, no failures.
        assert_eq!(out1.table.rows.len(), cfg.methods.len() * cfg.seeds.len());
        for row in &out1.table.rows {
            assert!(!row.note.starts_with("error:"), "row failed: {}", row.note);
            assert!(row.metric_mean.is_finite());
        }
        // The trained run left a convergence trace with the final iterate.
        assert_eq!(out1.logs.len(), 1);
        let (name, log) = &out1.logs[0];
        assert_eq!(name, "centralized-snr0-s7");
        assert_eq!(log.rows.last().unwrap().iteration, 40);
    }

    #[test]
    fn failed_runs_keep_the_sweep_alive() {
        // Validation blocks every natural failure path, so inject an
        // error row directly and check it lands in the table intact.
        let cfg = tiny_config();
        let mut runner = Runner {
            config: &cfg,
            kind: ProblemKind::CmacSumCapacity,
            table: ResultTable::new("t"),
            logs: Vec::new(),
            progress: |_: &str| {},
        };
        let problem = ProblemSpec::from_snr_db(ProblemKind::CmacSumCapacity, 2, 0.0, 1.0, 1.0);
        let point = PointState {
            problem,
            snr: 0.0,
            eval_cfg: EvalConfig::new(16, 1),
            expected_hash: None,
            centralized: HashMap::new(),
        };
        runner.push_err(&point, "centralized", None, 7, "synthetic, failure");
        let row = &runner.table.rows[0];
        assert!(row.metric_mean.is_nan());
        assert!(!row.feasible);
        assert_eq!(row.note, "error: synthetic; failure");
        let csv = runner.table.to_csv_string();
        let back = ResultTable::from_csv_str("t", &csv).unwrap();
        assert_eq!(back.to_csv_string(), csv);
    }

    #[test]
    fn emitted_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample_table();
        let csv_paths = emit(&t, EmitFormat::Csv, dir.path()).unwrap();
        let spec_paths = emit(&t, EmitFormat::Plotspec, dir.path()).unwrap();
        assert_eq!(csv_paths[0].file_name().unwrap(), "sample.csv");
        assert_eq!(spec_paths[0].file_name().unwrap(), "sample.plotspec.json");
        let back = ResultTable::read_csv(&csv_paths[0]).unwrap();
        assert_eq!(back, t);
        let empty = ResultTable::new("none");
        assert!(emit(&empty, EmitFormat::Csv, dir.path()).is_err());
    }

    #[test]
    fn plotspec_lists_each_series_once() {
        let mut t = sample_table();
        // A second seed of an existing series must not add a new one.
        let mut dup = t.rows[1].clone();
        dup.seed = 3;
        t.rows.push(dup);
        let spec: serde_json::Value = serde_json::from_str(&plotspec_json(&t)).unwrap();
        assert_eq!(spec["csv"], "sample.csv");
        assert_eq!(spec["x"]["column"], "snr_db");
        let series = spec["series"].as_array().unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0]["label"], "centralized");
        assert_eq!(series[1]["label"], "distributed B=2");
        assert_eq!(series[1]["filter"]["backhaul_bits"], 2);
        assert!(spec["y"]["label"].as_str().unwrap().contains("sum capacity"));
    }

    #[test]
    fn summarize_averages_over_seeds() {
        let mut t = ResultTable::new("s");
        for (seed, mean) in [(1u64, 1.0), (2, 3.0)] {
            t.rows.push(ResultRow {
                problem: "p3".into(),
                method: "centralized".into(),
                snr_db: 5.0,
                backhaul_bits: None,
                peak_power: f64::INFINITY,
                seed,
                metric_mean: mean,
                metric_ci95: 0.1,
                metric_mean_stochastic: None,
                feasible: true,
                max_rel_violation: 0.0,
                note: String::new(),
            });
        }
        let mut failed = t.rows[0].clone();
        failed.seed = 3;
        failed.metric_mean = f64::NAN;
        failed.note = "error: x".into();
        t.rows.push(failed);
        let lines = summarize(&t);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].mean, 2.0);
        assert_eq!((lines[0].seeds, lines[0].failed), (2, 1));
        assert!(lines[0].all_feasible);
    }

    #[test]
    fn out_dir_precedence() {
        let mut cfg = tiny_config();
        cfg.out_dir = Some(PathBuf::from("from-config"));
        let flag = PathBuf::from("from-flag");
        assert_eq!(resolve_out_dir(Some(&flag), Some(&cfg)), flag);
        // Environment lookup is skipped when the flag is present; without
        // either flag or env the config wins, then the default.
        if std::env::var("PDNET_OUT").is_err() {
            assert_eq!(resolve_out_dir(None, Some(&cfg)), PathBuf::from("from-config"));
            cfg.out_dir = None;
            assert_eq!(resolve_out_dir(None, Some(&cfg)), PathBuf::from("results"));
        }
    }
}
