//! Grid runs over methods × references × seeds and the reports built on them.
//!
//! A sweep directory holds `cells/<method>_<v_fair>-<v_acc>_s<seed>/` with the
//! usual run outputs, plus three tables derived only from the cells' front
//! points:
//!
//! - `front.csv`: `method,v_fair,v_acc,seed,fair_loss,acc_loss,accuracy,eodd`
//! - `report.csv`: `method,v_fair,v_acc,kind,accuracy,eodd,fair_loss,acc_loss,seeds`.
//!   Metrics are averaged over seeds first; rows of kind `delta` are then
//!   differences from the `(1,1)` row of the same method.
//! - `hypervolume.csv`: `method,seed,hypervolume`, one row per seed and a
//!   final `mean` row per method. Each seed's points from every method are
//!   min-max normalized on `(fair_loss, acc_loss)` before measuring against
//!   the reference point.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{read_json, write_atomic, RunManifest, RunOutputs};
use crate::cpt::{train, Method, TrainConfig};
use crate::data::GroupedDataset;
use crate::metrics::{evaluate, hypervolume2d, normalize_minmax, FrontPoint, RefPoint};
use crate::objectives::ReferenceVector;
use crate::{Error, Result};

pub const DEFAULT_REFERENCES: [(f64, f64); 6] = [(2.0, 1.0), (3.0, 2.0), (1.0, 1.0), (2.0, 3.0), (1.0, 2.0), (1.0, 3.0)];

pub fn default_references() -> Vec<ReferenceVector> {
    DEFAULT_REFERENCES
        .iter()
        .map(|&(v_fair, v_acc)| ReferenceVector { v_fair, v_acc })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub references: Vec<ReferenceVector>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub base: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("references, seeds and methods must be non-empty".into()));
        }
        for r in &self.references {
            r.validate()?;
        }
        self.base.validate()
    }

    /// Every cell's full configuration, method-major.
    pub fn cells(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &reference in &self.references {
                for &seed in &self.seeds {
                    out.push(TrainConfig {
                        method,
                        reference,
                        seed,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

pub fn cell_dir(root: &Path, cfg: &TrainConfig) -> PathBuf {
    root.join("cells").join(format!(
        "{}_{}-{}_s{}",
        cfg.method, cfg.reference.v_fair, cfg.reference.v_acc, cfg.seed
    ))
}

/// Trains, evaluates and writes one cell.
pub fn run_cell(
    cfg: &TrainConfig,
    train_set: &GroupedDataset,
    test_set: &GroupedDataset,
    dataset: &Path,
    dir: &Path,
) -> Result<RunManifest> {
    let start = Instant::now();
    let (params, trace) = train(train_set, cfg)?;
    let train_metrics = evaluate(&params, train_set)?;
    let test_metrics = evaluate(&params, test_set)?;
    RunOutputs {
        cfg,
        params: &params,
        trace: &trace,
        dataset,
        elapsed: start.elapsed(),
        train_metrics,
        test_metrics,
    }
    .write(dir)
}

/// Runs every cell on a pool of `jobs` threads. Results keep cell order.
pub fn run_sweep(
    spec: &SweepSpec,
    train_set: &GroupedDataset,
    test_set: &GroupedDataset,
    dataset: &Path,
    root: &Path,
    jobs: usize,
) -> Result<Vec<(TrainConfig, Result<RunManifest>)>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells = spec.cells();
    Ok(pool.install(|| {
        cells
            .into_par_iter()
            .map(|cfg| {
                let dir = cell_dir(root, &cfg);
                let res = run_cell(&cfg, train_set, test_set, dataset, &dir);
                match &res {
                    Ok(m) => log::info!(
                        "{} {} seed {}: accuracy {:.4} eodd {:.4}",
                        cfg.method,
                        cfg.reference,
                        cfg.seed,
                        m.test_metrics.accuracy,
                        m.test_metrics.eodd
                    ),
                    Err(e) => log::error!("{} {} seed {} failed: {e}", cfg.method, cfg.reference, cfg.seed),
                }
                (cfg, res)
            })
            .collect()
    }))
}

/// Manifests of every finished cell under `root`.
pub fn collect_manifests(root: &Path) -> Result<Vec<RunManifest>> {
    let cells = root.join("cells");
    let entries = fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&cells, e))?.path().join("manifest.json");
        if path.exists() {
            out.push(read_json::<RunManifest>(&path)?);
        }
    }
    Ok(out)
}

fn reference_rank(r: &ReferenceVector) -> usize {
    DEFAULT_REFERENCES
        .iter()
        .position(|&(f, a)| f == r.v_fair && a == r.v_acc)
        .unwrap_or(DEFAULT_REFERENCES.len())
}

fn point_order(p: &FrontPoint, q: &FrontPoint) -> std::cmp::Ordering {
    p.method
        .cmp(&q.method)
        .then(reference_rank(&p.reference).cmp(&reference_rank(&q.reference)))
        .then(p.reference.v_fair.total_cmp(&q.reference.v_fair))
        .then(p.reference.v_acc.total_cmp(&q.reference.v_acc))
        .then(p.seed.cmp(&q.seed))
}

pub fn sort_points(points: &mut [FrontPoint]) {
    points.sort_by(point_order);
}

pub const FRONT_HEADER: &str = "method,v_fair,v_acc,seed,fair_loss,acc_loss,accuracy,eodd";

pub fn front_csv(points: &[FrontPoint]) -> String {
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut out = format!("{FRONT_HEADER}\n");
    for p in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.method, p.reference.v_fair, p.reference.v_acc, p.seed, p.fair_loss, p.acc_loss, p.accuracy, p.eodd
        ));
    }
    out
}

pub fn parse_front_csv(text: &str) -> Result<Vec<FrontPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(FRONT_HEADER) {
        return Err(Error::Schema(format!("front table must start with `{FRONT_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let perr = |msg: &str| Error::Parse {
                line: i + 2,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(perr("expected 8 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr("invalid number"));
            Ok(FrontPoint {
                method: f[0].parse().map_err(|e: Error| perr(&e.to_string()))?,
                reference: ReferenceVector {
                    v_fair: num(f[1])?,
                    v_acc: num(f[2])?,
                },
                seed: f[3].parse().map_err(|_| perr("invalid seed"))?,
                fair_loss: num(f[4])?,
                acc_loss: num(f[5])?,
                accuracy: num(f[6])?,
                eodd: num(f[7])?,
            })
        })
        .collect()
}

/// Seed-averaged metrics of one (method, reference) cell group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub accuracy: f64,
    pub eodd: f64,
    pub fair_loss: f64,
    pub acc_loss: f64,
    pub seeds: usize,
}

type GroupKey = (Method, usize, u64, u64);

fn key(p: &FrontPoint) -> GroupKey {
    (
        p.method,
        reference_rank(&p.reference),
        p.reference.v_fair.to_bits(),
        p.reference.v_acc.to_bits(),
    )
}

/// Seed averages keyed by method and reference, in report order.
pub fn seed_averages(points: &[FrontPoint]) -> Vec<(Method, ReferenceVector, Averaged)> {
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut groups: BTreeMap<GroupKey, (ReferenceVector, Vec<&FrontPoint>)> = BTreeMap::new();
    for p in &sorted {
        groups.entry(key(p)).or_insert_with(|| (p.reference, Vec::new())).1.push(p);
    }
    groups
        .into_iter()
        .map(|((method, ..), (reference, ps))| {
            let n = ps.len() as f64;
            let mean = |f: fn(&FrontPoint) -> f64| ps.iter().map(|p| f(p)).sum::<f64>() / n;
            (
                method,
                reference,
                Averaged {
                    accuracy: mean(|p| p.accuracy),
                    eodd: mean(|p| p.eodd),
                    fair_loss: mean(|p| p.fair_loss),
                    acc_loss: mean(|p| p.acc_loss),
                    seeds: ps.len(),
                },
            )
        })
        .collect()
}

pub const REPORT_HEADER: &str = "method,v_fair,v_acc,kind,accuracy,eodd,fair_loss,acc_loss,seeds";

pub fn report_csv(points: &[FrontPoint]) -> String {
    let avgs = seed_averages(points);
    let mut out = format!("{REPORT_HEADER}\n");
    let is_base = |r: &ReferenceVector| r.v_fair == 1.0 && r.v_acc == 1.0;
    for (method, reference, a) in &avgs {
        let base = avgs
            .iter()
            .find(|(m, r, _)| m == method && is_base(r))
            .map(|(_, _, b)| *b);
        let (kind, row) = match base {
            Some(b) if !is_base(reference) => (
                "delta",
                [a.accuracy - b.accuracy, a.eodd - b.eodd, a.fair_loss - b.fair_loss, a.acc_loss - b.acc_loss],
            ),
            _ => ("abs", [a.accuracy, a.eodd, a.fair_loss, a.acc_loss]),
        };
        out.push_str(&format!(
            "{method},{},{},{kind},{:.6},{:.6},{:.6},{:.6},{}\n",
            reference.v_fair, reference.v_acc, row[0], row[1], row[2], row[3], a.seeds
        ));
    }
    out
}

/// Per-method hypervolume for each seed and its mean over seeds.
pub fn hypervolumes(points: &[FrontPoint], reference: RefPoint) -> BTreeMap<Method, (Vec<(u64, f64)>, f64)> {
    let mut by_seed: BTreeMap<u64, Vec<&FrontPoint>> = BTreeMap::new();
    for p in points {
        by_seed.entry(p.seed).or_default().push(p);
    }
    let mut per_method: BTreeMap<Method, Vec<(u64, f64)>> = BTreeMap::new();
    for (seed, mut ps) in by_seed {
        ps.sort_by(|p, q| point_order(p, q));
        let normalized = normalize_minmax(&ps.iter().map(|p| (p.fair_loss, p.acc_loss)).collect::<Vec<_>>());
        let mut methods: Vec<Method> = ps.iter().map(|p| p.method).collect();
        methods.dedup();
        for m in methods {
            let front: Vec<(f64, f64)> = ps
                .iter()
                .zip(&normalized)
                .filter(|(p, _)| p.method == m)
                .map(|(_, &xy)| xy)
                .collect();
            per_method.entry(m).or_default().push((seed, hypervolume2d(&front, reference)));
        }
    }
    per_method
        .into_iter()
        .map(|(m, rows)| {
            let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
            (m, (rows, mean))
        })
        .collect()
}

pub fn hypervolume_csv(points: &[FrontPoint], reference: RefPoint) -> String {
    let mut out = String::from("method,seed,hypervolume\n");
    for (m, (rows, mean)) in hypervolumes(points, reference) {
        for (seed, hv) in rows {
            out.push_str(&format!("{m},{seed},{hv:.6}\n"));
        }
        out.push_str(&format!("{m},mean,{mean:.6}\n"));
    }
    out
}

/// Writes the three sweep tables under `root`.
pub fn write_reports(root: &Path, points: &[FrontPoint]) -> Result<()> {
    write_atomic(&root.join("front.csv"), front_csv(points).as_bytes())?;
    write_atomic(&root.join("report.csv"), report_csv(points).as_bytes())?;
    write_atomic(
        &root.join("hypervolume.csv"),
        hypervolume_csv(points, RefPoint::default()).as_bytes(),
    )
}
