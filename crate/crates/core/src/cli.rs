//! Command-line front end: config loading, scenario dispatch, run directories and reports.
//!
//! A run directory holds `manifest.json`, one CSV per result table and a `.dat` file
//! of the numeric columns of each table for plotting.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain_model::{validate_assumptions, ModelConfig};
use crate::error::{Error, Result};
use crate::sde_lab::simulate_ensemble;
use crate::suite::{determinism, run_check, Artifact, CheckOutcome, CheckRun, SuiteConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Validate,
    Proxy,
    Green,
    Sde,
    Peano,
    Besov,
    FullSuite,
}

impl Scenario {
    pub const ALL: [Scenario; 7] =
        [Scenario::Validate, Scenario::Proxy, Scenario::Green, Scenario::Sde, Scenario::Peano, Scenario::Besov, Scenario::FullSuite];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Validate => "validate",
            Scenario::Proxy => "proxy",
            Scenario::Green => "green",
            Scenario::Sde => "sde",
            Scenario::Peano => "peano",
            Scenario::Besov => "besov",
            Scenario::FullSuite => "full-suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}' (expected one of {})", scenario_list())))
    }

    /// Acceptance checks run by the scenario.
    pub fn checks(self) -> Vec<usize> {
        match self {
            Scenario::Validate => vec![1, 13],
            Scenario::Proxy => vec![2, 3, 4, 5],
            Scenario::Green => vec![6, 7],
            Scenario::Sde => vec![8, 9],
            Scenario::Peano => vec![10],
            Scenario::Besov => vec![11, 12, 13],
            Scenario::FullSuite => (1..=14).collect(),
        }
    }
}

fn scenario_list() -> String {
    Scenario::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

/// Keys of the `[params]` table that are not suite settings.
const SCENARIO_PARAMS: [&str; 4] = ["jacobian_floor", "ensemble_paths", "ensemble_horizon", "ensemble_steps"];

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub model: ModelConfig,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub suite: SuiteConfig,
    pub params: BTreeMap<String, f64>,
}

impl RunConfig {
    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `v` as a TOML value, falling back to a bare string.
fn parse_value(v: &str) -> toml::Value {
    let doc = format!("x = {v}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(v.to_string())),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

/// Applies `key=value`; dotted keys address nested tables and a bare tolerance name
/// goes to `[tolerances]`.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment.split_once('=').ok_or_else(|| config_err(format!("--set expects key=value, got '{assignment}'")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err("--set with empty key"));
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.len() == 1 && SuiteConfig::tolerance_keys().contains(&parts[0]) {
        parts.insert(0, "tolerances");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_err(format!("'{key}' must be numeric"))),
    }
}

/// Builds a validated config from a parsed table.
pub fn config_from_table(mut table: toml::Table, out_override: Option<PathBuf>) -> Result<RunConfig> {
    let scenario = match table.remove("scenario") {
        Some(toml::Value::String(s)) => Scenario::parse(&s)?,
        Some(_) => return Err(config_err("'scenario' must be a string")),
        None => return Err(config_err("missing required field 'scenario'")),
    };
    let seed = match table.remove("seed") {
        Some(toml::Value::Integer(i)) if i >= 0 => i as u64,
        Some(_) => return Err(config_err("'seed' must be a non-negative integer")),
        None => return Err(config_err("missing required field 'seed'")),
    };
    let model: ModelConfig = match table.remove("model") {
        Some(v) => v.try_into().map_err(|e| config_err(format!("[model]: {e}")))?,
        None => ModelConfig { name: "linear".into(), n: 2, d: 1, beta: None, eta: None, amplitude: None },
    };
    model.build()?;
    let out = match (out_override, table.remove("out")) {
        (Some(p), _) => p,
        (None, Some(toml::Value::String(s))) => PathBuf::from(s),
        (None, Some(_)) => return Err(config_err("'out' must be a string")),
        (None, None) => PathBuf::from(format!("runs/{}-{seed}", scenario.name())),
    };

    let mut suite_table = toml::Table::try_from(SuiteConfig::default()).map_err(|e| config_err(e.to_string()))?;
    suite_table.insert("seed".into(), toml::Value::Integer(seed as i64));
    let mut params = BTreeMap::new();
    if let Some(p) = table.remove("params") {
        let p = p.as_table().cloned().ok_or_else(|| config_err("[params] must be a table"))?;
        for (k, v) in p {
            if SCENARIO_PARAMS.contains(&k.as_str()) {
                params.insert(k.clone(), as_f64(&format!("params.{k}"), &v)?);
            } else if k != "seed" && k != "tolerances" && suite_table.contains_key(&k) {
                suite_table.insert(k, v);
            } else {
                return Err(config_err(format!("unknown parameter 'params.{k}'")));
            }
        }
    }
    let mut tolerances = BTreeMap::new();
    if let Some(t) = table.remove("tolerances") {
        let t = t.as_table().cloned().ok_or_else(|| config_err("[tolerances] must be a table"))?;
        let known = SuiteConfig::tolerance_keys();
        for (k, v) in t {
            if !known.contains(&k.as_str()) {
                return Err(config_err(format!("unknown tolerance '{k}'")));
            }
            tolerances.insert(k.clone(), as_f64(&format!("tolerances.{k}"), &v)?);
        }
    }
    if let Some(k) = table.keys().next() {
        return Err(config_err(format!("unknown field '{k}'")));
    }
    let mut suite: SuiteConfig = suite_table.try_into().map_err(|e| config_err(format!("[params]: {e}")))?;
    suite.tolerances = tolerances;
    if suite.paths < 2 || suite.peano_paths < 2 || suite.sde_steps < 1 || suite.peano_steps < 1 || !(suite.besov_spacing > 0.0) {
        return Err(config_err("[params]: path counts ≥ 2, step counts ≥ 1 and besov_spacing > 0 required"));
    }
    Ok(RunConfig { scenario, model, seed, out, suite, params })
}

/// Reads the config file (if any), then applies `--seed`, `--out` and `--set`.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for s in sets {
        apply_override(&mut table, s)?;
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    config_from_table(table, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcomes: Vec<CheckOutcome>,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Whitespace-separated numeric columns of a CSV table; a blank line separates runs
/// of rows whose text columns differ. `None` when fewer than two columns are numeric.
pub fn plot_data(csv_body: &str) -> Option<String> {
    let mut rd = csv::Reader::from_reader(csv_body.as_bytes());
    let header: Vec<String> = rd.headers().ok()?.iter().map(String::from).collect();
    let rows: Vec<Vec<String>> = rd.records().filter_map(|r| r.ok()).map(|r| r.iter().map(String::from).collect()).collect();
    if rows.is_empty() {
        return None;
    }
    let numeric: Vec<bool> = (0..header.len()).map(|c| rows.iter().all(|r| r.get(c).is_some_and(|v| v.parse::<f64>().is_ok()))).collect();
    let cols: Vec<usize> = (0..header.len()).filter(|c| numeric[*c]).collect();
    if cols.len() < 2 {
        return None;
    }
    let mut out = format!("# {}\n", cols.iter().map(|c| header[*c].as_str()).collect::<Vec<_>>().join(" "));
    let mut last_key: Option<Vec<&String>> = None;
    for r in &rows {
        let key: Vec<&String> = (0..header.len()).filter(|c| !numeric[*c]).map(|c| &r[c]).collect();
        if last_key.as_ref().is_some_and(|k| *k != key) {
            out.push('\n');
        }
        out.push_str(&cols.iter().map(|c| r[*c].as_str()).collect::<Vec<_>>().join(" "));
        out.push('\n');
        last_key = Some(key);
    }
    Some(out)
}

fn sample_grid(nd: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(77);
    let mut grid = Vec::new();
    for t in [0.0, 0.5, 1.0] {
        for _ in 0..16 {
            grid.push((t, (0..nd).map(|_| rng.random_range(-2.0..2.0)).collect()));
        }
    }
    grid
}

fn model_checks(cfg: &RunConfig) -> Result<CheckRun> {
    let spec = cfg.model.build()?;
    let floor = cfg.param("jacobian_floor", 1e-3);
    let rep = validate_assumptions(&spec, &sample_grid(spec.nd(), cfg.seed), floor)?;
    let mut rows = vec![
        vec!["ellipticity_min".to_string(), format!("{:.10e}", rep.ellipticity.0)],
        vec!["ellipticity_max".to_string(), format!("{:.10e}", rep.ellipticity.1)],
    ];
    for (i, s) in rep.jacobian_min_singular.iter().enumerate() {
        rows.push(vec![format!("jacobian_min_singular_{}", i + 2), format!("{s:.10e}")]);
    }
    let passed = rep.ue_pass && rep.h_pass && rep.chain_structure_pass;
    Ok(CheckRun {
        outcome: CheckOutcome {
            id: 0,
            name: "model-assumptions".into(),
            passed,
            measured: format!(
                "ellipticity [{:.3}, {:.3}], min Jacobian singular value {:.3e}, chain structure {}",
                rep.ellipticity.0,
                rep.ellipticity.1,
                rep.jacobian_min_singular.iter().copied().fold(f64::INFINITY, f64::min),
                rep.chain_structure_pass
            ),
            tolerance: format!("within [1/Λ, Λ] = [{:.3}, {:.3}], ≥ {floor:e}", 1.0 / spec.lambda, spec.lambda),
            detail: format!("model {} on {} sample points", cfg.model.name, rep.samples),
        },
        artifacts: vec![Artifact { name: "model_assumptions.csv".into(), body: crate::suite::csv_table(&["quantity", "value"], &rows) }],
    })
}

fn model_ensemble(cfg: &RunConfig) -> Result<Artifact> {
    let spec = cfg.model.build()?;
    let m = cfg.param("ensemble_paths", 16.0).max(1.0) as usize;
    let horizon = cfg.param("ensemble_horizon", 1.0);
    let steps = cfg.param("ensemble_steps", cfg.suite.sde_steps as f64).max(1.0) as usize;
    let ens = simulate_ensemble(&spec, &vec![0.0; spec.nd()], horizon, steps, m, cfg.seed)?;
    let mut buf = Vec::new();
    ens.write_csv(&mut buf)?;
    Ok(Artifact { name: "ensemble.csv".into(), body: String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))? })
}

fn failed_setup(name: &str, e: Error) -> CheckRun {
    CheckRun {
        outcome: CheckOutcome { id: 0, name: name.into(), passed: false, measured: format!("error: {e}"), tolerance: "-".into(), detail: String::new() },
        artifacts: Vec::new(),
    }
}

/// Runs every check of the scenario; independent checks run in parallel.
fn execute(cfg: &RunConfig) -> Vec<CheckRun> {
    let ids = cfg.scenario.checks();
    let plain: Vec<usize> = ids.iter().copied().filter(|&i| i != 14).collect();
    let mut runs: Vec<CheckRun> = plain.par_iter().map(|&i| run_check(i, &cfg.suite)).collect();
    if ids.contains(&14) {
        let base: Vec<CheckRun> = runs.iter().filter(|r| r.outcome.id <= 13).cloned().collect();
        let base = if base.len() == 13 { base } else { Vec::new() };
        runs.push(determinism(&base, &cfg.suite));
    }
    match cfg.scenario {
        Scenario::Validate => runs.insert(0, model_checks(cfg).unwrap_or_else(|e| failed_setup("model-assumptions", e))),
        Scenario::Sde => match model_ensemble(cfg) {
            Ok(a) => runs.push(CheckRun { outcome: ensemble_outcome(cfg, true, String::new()), artifacts: vec![a] }),
            Err(e) => runs.push(CheckRun { outcome: ensemble_outcome(cfg, false, e.to_string()), artifacts: Vec::new() }),
        },
        _ => {}
    }
    runs
}

fn ensemble_outcome(cfg: &RunConfig, passed: bool, err: String) -> CheckOutcome {
    CheckOutcome {
        id: 0,
        name: "model-ensemble".into(),
        passed,
        measured: if passed { "simulated".into() } else { format!("error: {err}") },
        tolerance: "no blow-up".into(),
        detail: format!("model {}", cfg.model.name),
    }
}

fn write_file(dir: &Path, name: &str, body: &[u8], files: &mut Vec<FileEntry>) -> Result<()> {
    fs::write(dir.join(name), body)?;
    files.push(FileEntry { name: name.into(), sha256: hex::encode(Sha256::digest(body)), bytes: body.len() });
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("output directory {} not writable: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| config_err(format!("output directory {} not writable: {e}", dir.display())))?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Executes the scenario and writes the run directory. Only the calling thread writes.
pub fn run(cfg: &RunConfig, jobs: Option<usize>) -> Result<RunSummary> {
    prepare_dir(&cfg.out)?;
    let runs = match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build().map_err(|e| config_err(e.to_string()))?;
            pool.install(|| execute(cfg))
        }
        None => execute(cfg),
    };
    let mut files = Vec::new();
    let mut artifacts: Vec<&Artifact> = runs.iter().flat_map(|r| r.artifacts.iter()).collect();
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    for a in artifacts {
        write_file(&cfg.out, &a.name, a.body.as_bytes(), &mut files)?;
        if let Some(dat) = plot_data(&a.body) {
            let stem = a.name.strip_suffix(".csv").unwrap_or(&a.name);
            write_file(&cfg.out, &format!("{stem}.dat"), dat.as_bytes(), &mut files)?;
        }
    }
    let outcomes: Vec<CheckOutcome> = runs.into_iter().map(|r| r.outcome).collect();
    let mut versions = BTreeMap::new();
    versions.insert("chainlab".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("manifest".to_string(), "1".to_string());
    let manifest = Manifest {
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        versions,
        config: serde_json::to_value(cfg).map_err(|e| Error::Manifest(e.to_string()))?,
        checks: outcomes.clone(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(cfg.out.join(MANIFEST), text + "\n")?;
    Ok(RunSummary { dir: cfg.out.clone(), outcomes, manifest })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Manifest(format!("no {MANIFEST} in {}", dir.display())));
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("corrupt {MANIFEST}: {e}")))
}

/// One line per check, then a line per file whose digest no longer matches, then a tally.
pub fn report(dir: &Path) -> Result<String> {
    let m = read_manifest(dir)?;
    let mut out = format!("run {} (scenario {}, seed {})\n", dir.display(), m.scenario, m.seed);
    for c in &m.checks {
        out.push_str(&c.line());
        out.push('\n');
    }
    for f in &m.files {
        match fs::read(dir.join(&f.name)) {
            Ok(b) if hex::encode(Sha256::digest(&b)) == f.sha256 => {}
            Ok(_) => out.push_str(&format!("[MODIFIED] {}\n", f.name)),
            Err(_) => out.push_str(&format!("[MISSING] {}\n", f.name)),
        }
    }
    let passed = m.checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", m.checks.len()));
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "chainlab", version, about = "Kolmogorov-chain numerical laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write a run directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// key=value override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize a run directory.
    Report { dir: PathBuf },
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Command::Run { config, seed, out, set, jobs } => {
            let cfg = match load_config(config.as_deref(), seed, out, &set) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chainlab: {e}");
                    return 2;
                }
            };
            match run(&cfg, jobs) {
                Ok(s) => {
                    for o in &s.outcomes {
                        println!("{}", o.line());
                    }
                    println!("wrote {}", s.dir.join(MANIFEST).display());
                    if s.all_passed() {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("chainlab: {e}");
                    2
                }
            }
        }
        Command::Report { dir } => match report(&dir) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("chainlab: {e}");
                2
            }
        },
    }
}
