//! File formats written and read by the CLI.
//!
//! Trace CSV columns, in order:
//! `step,stage,l_fair,l_acc,psi,alpha_fair,alpha_acc,alpha_kl,mask_density`.
//! Absent weights are empty fields. Floats are printed in shortest round-trip
//! form, so a re-parse yields the same bits.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cpt::{Method, StepRecord, TrainConfig, TrainTrace};
use crate::metrics::{EvalMetrics, FrontPoint};
use crate::objectives::ReferenceVector;
use crate::paramspace::ParamVector;
use crate::{Error, Result};

pub const TRACE_HEADER: &str = "step,stage,l_fair,l_acc,psi,alpha_fair,alpha_acc,alpha_kl,mask_density";

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let a = |i: usize| {
            r.alpha
                .as_ref()
                .and_then(|v| v.get(i))
                .map(|x| x.to_string())
                .unwrap_or_default()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.stage.name(),
            r.l_fair,
            r.l_acc,
            r.psi,
            a(0),
            a(1),
            a(2),
            r.mask_density
        ));
    }
    out
}

/// One parsed trace row; learning rate is not part of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub stage: crate::cpt::Stage,
    pub l_fair: f64,
    pub l_acc: f64,
    pub psi: f64,
    pub alpha: Vec<Option<f64>>,
    pub mask_density: f64,
}

impl From<&StepRecord> for TraceRow {
    fn from(r: &StepRecord) -> Self {
        let alpha = (0..3)
            .map(|i| r.alpha.as_ref().and_then(|v| v.get(i).copied()))
            .collect();
        Self {
            step: r.step,
            stage: r.stage,
            l_fair: r.l_fair,
            l_acc: r.l_acc,
            psi: r.psi,
            alpha,
            mask_density: r.mask_density,
        }
    }
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Schema("trace header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let lineno = i + 2;
            let perr = |msg: &str| Error::Parse {
                line: lineno,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(perr("expected 9 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr("invalid number"));
            let opt = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            Ok(TraceRow {
                step: f[0].parse().map_err(|_| perr("invalid step"))?,
                stage: f[1].parse()?,
                l_fair: num(f[2])?,
                l_acc: num(f[3])?,
                psi: num(f[4])?,
                alpha: vec![opt(f[5])?, opt(f[6])?, opt(f[7])?],
                mask_density: num(f[8])?,
            })
        })
        .collect()
}

/// Hex SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Record of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub method: Method,
    pub reference: ReferenceVector,
    pub seed: u64,
    pub dataset: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    pub steps: usize,
    pub train_metrics: EvalMetrics,
    pub test_metrics: EvalMetrics,
    pub front_point: FrontPoint,
}

pub fn front_point(cfg: &TrainConfig, test: &EvalMetrics) -> FrontPoint {
    FrontPoint {
        acc_loss: test.l_acc,
        fair_loss: test.l_fair,
        accuracy: test.accuracy,
        eodd: test.eodd,
        reference: cfg.reference,
        seed: cfg.seed,
        method: cfg.method,
    }
}

/// Everything one run writes into its directory.
pub struct RunOutputs<'a> {
    pub cfg: &'a TrainConfig,
    pub params: &'a ParamVector,
    pub trace: &'a TrainTrace,
    pub dataset: &'a Path,
    pub elapsed: Duration,
    pub train_metrics: EvalMetrics,
    pub test_metrics: EvalMetrics,
}

impl RunOutputs<'_> {
    pub fn write(&self, dir: &Path) -> Result<RunManifest> {
        let config_path = dir.join("config.json");
        let params_path = dir.join("params.json");
        let trace_path = dir.join("trace.csv");
        write_json(&config_path, self.cfg)?;
        write_json(&params_path, self.params)?;
        write_atomic(&trace_path, trace_csv(self.trace).as_bytes())?;
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(self.cfg),
            method: self.cfg.method,
            reference: self.cfg.reference,
            seed: self.cfg.seed,
            dataset: self.dataset.to_path_buf(),
            outputs: vec![config_path, params_path, trace_path],
            wall_clock_secs: self.elapsed.as_secs_f64(),
            steps: self.trace.records.len(),
            train_metrics: self.train_metrics,
            test_metrics: self.test_metrics,
            front_point: front_point(self.cfg, &self.test_metrics),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}
