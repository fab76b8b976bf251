//! Config-driven runner: loads a TOML experiment, runs the selected suites
//! and writes JSON reports, CSV tables and a run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use feshflow::config::ExperimentConfig;
use feshflow::report::{Counts, FlowReport};
use feshflow::suites::{Experiment, SuiteOutput, Table};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_OUT: &str = "feshflow-out";

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub suites: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Parses and validates a TOML configuration. Errors name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
    cfg.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text)
}

pub fn apply(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<ExperimentConfig> {
    if !ov.suites.is_empty() {
        cfg.run.suites = ov.suites.clone();
    }
    if let Some(seed) = ov.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.run.out = Some(out.to_string_lossy().into_owned());
    }
    cfg.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
    Ok(cfg)
}

/// SHA-256 of the canonical JSON form of the effective configuration.
/// The output directory does not enter the hash.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.run.out = None;
    c.run.threads = None;
    let json = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub suite: String,
    pub passed: bool,
    pub counts: Counts,
    pub report: String,
    pub tables: Vec<String>,
}

/// Run summary. Identical config and seed give an identical manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub suites: Vec<SuiteEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub suites: Vec<(String, f64)>,
    pub setup_secs: f64,
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().and_then(|s| s.to_str()).unwrap_or("out")));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner()?)
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// One row per check: the failure localization table.
pub fn checks_table(rep: &FlowReport) -> Table {
    let header = ["check", "case", "kind", "value", "limit", "status", "note"].map(String::from).to_vec();
    let rows = rep
        .checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.case.clone(),
                format!("{:?}", c.kind).to_lowercase(),
                fmt(c.value),
                fmt(c.limit),
                format!("{:?}", c.status).to_lowercase(),
                c.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    Table { name: "checks".into(), header, rows }
}

fn write_suite(out: &Path, suite: &str, res: &SuiteOutput) -> Result<SuiteEntry> {
    let report = format!("reports/{suite}.json");
    write_atomic(&out.join(&report), serde_json::to_string_pretty(&res.report)?.as_bytes())?;
    let mut tables = Vec::new();
    for t in std::iter::once(checks_table(&res.report)).chain(res.tables.iter().cloned()) {
        let rel = format!("tables/{suite}_{}.csv", t.name);
        write_atomic(&out.join(&rel), &csv_bytes(&t.header, &t.rows)?)?;
        tables.push(rel);
    }
    Ok(SuiteEntry { suite: suite.into(), passed: res.report.passed(), counts: res.report.counts(), report, tables })
}

/// Runs the selected suites and writes every artifact under the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<(RunManifest, Timings)> {
    let out = PathBuf::from(cfg.run.out.clone().unwrap_or_else(|| DEFAULT_OUT.into()));
    let start = Instant::now();
    let exp = Experiment::new(cfg.clone()).map_err(|e| anyhow::anyhow!("setup: {e}"))?;
    let setup_secs = start.elapsed().as_secs_f64();
    let suites = cfg.selected_suites();
    let work = || -> Vec<Result<(SuiteEntry, f64)>> {
        suites
            .par_iter()
            .map(|&s| {
                let t = Instant::now();
                let res = exp.run_suite(s).with_context(|| format!("suite {s}"))?;
                let secs = t.elapsed().as_secs_f64();
                Ok((write_suite(&out, s, &res)?, secs))
            })
            .collect()
    };
    let results = match cfg.run.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    };
    let mut entries = Vec::new();
    let mut times = Vec::new();
    for r in results {
        let (e, secs) = r?;
        times.push((e.suite.clone(), secs));
        entries.push(e);
    }
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        seed: cfg.ensemble.seed,
        passed: entries.iter().all(|e| e.passed),
        suites: entries,
    };
    let timings = Timings { suites: times, setup_secs };
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    write_atomic(&out.join("timings.json"), serde_json::to_string_pretty(&timings)?.as_bytes())?;
    Ok((manifest, timings))
}

/// One line per suite.
pub fn summary(m: &RunManifest) -> String {
    let mut s = String::new();
    for e in &m.suites {
        let c = e.counts;
        s += &format!(
            "{:<15} {}  pass {:>6}  fail {:>4}  skipped {:>5}\n",
            e.suite,
            if e.passed { "PASS" } else { "FAIL" },
            c.pass,
            c.fail,
            c.skipped
        );
    }
    s
}
