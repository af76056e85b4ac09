//! Grouped datasets: synthetic generation, CSV ingestion, splitting, batching.
//!
//! On-disk format is a UTF-8 CSV whose first line is `dim=<k>`, followed by one
//! row per sample: `f1,...,fk,label,attribute`. A JSON sidecar at
//! `<path>.meta.json` records class/attribute counts, per-cell counts and
//! provenance.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::objectives::GroupedBatch;
use crate::paramspace::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    x: Matrix,
    y: Vec<usize>,
    a: Vec<usize>,
    num_classes: usize,
    num_attrs: usize,
    split: SplitTag,
}

impl GroupedDataset {
    pub fn new(x: Matrix, y: Vec<usize>, a: Vec<usize>, num_classes: usize, num_attrs: usize) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::dim("dataset labels", x.rows(), y.len()));
        }
        if a.len() != x.rows() {
            return Err(Error::dim("dataset attributes", x.rows(), a.len()));
        }
        if num_classes < 2 {
            return Err(Error::Schema("at least two classes required".into()));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Schema(format!("label {bad} >= num_classes {num_classes}")));
        }
        if let Some(bad) = a.iter().find(|&&v| v >= num_attrs) {
            return Err(Error::Schema(format!("attribute {bad} >= num_attrs {num_attrs}")));
        }
        Ok(Self {
            x,
            y,
            a,
            num_classes,
            num_attrs,
            split: SplitTag::Train,
        })
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_attrs(&self) -> usize {
        self.num_attrs
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn attributes(&self) -> &[usize] {
        &self.a
    }

    /// Count per `(attribute, label)` cell, including empty cells.
    pub fn group_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for a in 0..self.num_attrs {
            for y in 0..self.num_classes {
                counts.insert((a, y), 0);
            }
        }
        for (&a, &y) in self.a.iter().zip(&self.y) {
            *counts.entry((a, y)).or_insert(0) += 1;
        }
        counts
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let cols = self.dim();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
        }
        Self {
            x: Matrix::new(indices.len(), cols, data).expect("row-aligned subset"),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            a: indices.iter().map(|&i| self.a[i]).collect(),
            num_classes: self.num_classes,
            num_attrs: self.num_attrs,
            split: self.split,
        }
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<GroupedBatch> {
        GroupedBatch::new(self.x.clone(), self.y.clone(), self.a.clone())
    }
}

/// Gaussian class/group clusters. `n_per_group` is indexed `a * num_labels + y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_group: Vec<usize>,
    pub num_labels: usize,
    pub input_dim: usize,
    pub mean_separation: f64,
    pub group_shift: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Two groups, two labels. Group 1 is shifted along the second axis and is
    /// mostly positive, so the accuracy-optimal classifier leans on the group
    /// direction and violates equalized odds.
    pub fn conflict(seed: u64) -> Self {
        Self {
            n_per_group: vec![1500, 500, 500, 1500],
            num_labels: 2,
            input_dim: 8,
            mean_separation: 2.0,
            group_shift: 2.0,
            label_noise: 0.05,
            seed,
        }
    }

    /// Same layout without any group signal.
    pub fn balanced(seed: u64) -> Self {
        Self {
            n_per_group: vec![1000, 1000, 1000, 1000],
            group_shift: 0.0,
            label_noise: 0.0,
            ..Self::conflict(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "conflict" => Ok(Self::conflict(seed)),
            "balanced" => Ok(Self::balanced(seed)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}`; valid presets: conflict, balanced"
            ))),
        }
    }

    pub fn num_attrs(&self) -> usize {
        self.n_per_group.len() / self.num_labels.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::Config("at least 2 labels required".into()));
        }
        if !self.n_per_group.len().is_multiple_of(self.num_labels) || self.num_attrs() < 2 {
            return Err(Error::Config(format!(
                "n_per_group must hold num_attrs * num_labels counts with at least 2 attributes, got {} for {} labels",
                self.n_per_group.len(),
                self.num_labels
            )));
        }
        if self.input_dim < 2 {
            return Err(Error::Config("input_dim must be >= 2".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 0.5)".into()));
        }
        if !self.mean_separation.is_finite() || !self.group_shift.is_finite() {
            return Err(Error::Config("separation and shift must be finite".into()));
        }
        Ok(())
    }
}

/// Samples `x ~ N(y·sep·e₁ + a·shift·e₂, I)` per cell, flips labels with
/// probability `label_noise`, then shuffles rows. Deterministic in `cfg.seed`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<GroupedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = cfg.num_labels;
    let n: usize = cfg.n_per_group.iter().sum();
    let mut rows: Vec<(Vec<f64>, usize, usize)> = Vec::with_capacity(n);
    for (cell, &count) in cfg.n_per_group.iter().enumerate() {
        let (attr, label) = (cell / labels, cell % labels);
        for _ in 0..count {
            let mut x: Vec<f64> = (0..cfg.input_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            x[0] += label as f64 * cfg.mean_separation;
            x[1] += attr as f64 * cfg.group_shift;
            let mut y = label;
            if cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise {
                let other = rng.random_range(0..labels - 1);
                y = if other >= label { other + 1 } else { other };
            }
            rows.push((x, y, attr));
        }
    }
    rows.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * cfg.input_dim);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for (x, label, attr) in rows {
        data.extend(x);
        y.push(label);
        a.push(attr);
    }
    GroupedDataset::new(Matrix::new(n, cfg.input_dim, data)?, y, a, labels, cfg.num_attrs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub attribute: usize,
    pub label: usize,
    pub count: usize,
}

/// Sidecar metadata written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dim: usize,
    pub rows: usize,
    pub num_classes: usize,
    pub num_attrs: usize,
    pub split: SplitTag,
    pub counts: Vec<CellCount>,
    pub provenance: serde_json::Value,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Renders the CSV body. `{}` on `f64` is the shortest exact representation, so
/// a load reproduces every feature bit for bit.
pub fn to_csv(ds: &GroupedDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("dim={}\n", ds.dim()));
    for (r, row) in ds.x.iter_rows().enumerate() {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{}\n", ds.y[r], ds.a[r]));
    }
    out
}

pub fn save_dataset(ds: &GroupedDataset, path: &Path, provenance: serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_csv(ds).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    let meta = DatasetMeta {
        dim: ds.dim(),
        rows: ds.len(),
        num_classes: ds.num_classes,
        num_attrs: ds.num_attrs,
        split: ds.split,
        counts: ds
            .group_counts()
            .into_iter()
            .map(|((attribute, label), count)| CellCount {
                attribute,
                label,
                count,
            })
            .collect(),
        provenance,
    };
    let mp = meta_path(path);
    write_atomic(&mp, serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_meta(path: &Path) -> Result<Option<DatasetMeta>> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Schema(format!("{}: {e}", mp.display())))
}

/// Reads a dataset file. `expected_dim`, when given, must match the header.
pub fn load_dataset(path: &Path, expected_dim: Option<usize>) -> Result<GroupedDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty dataset file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Schema(format!("bad header `{header}`, expected `dim=<k>`")))?;
    if let Some(want) = expected_dim {
        if want != dim {
            return Err(Error::Schema(format!("dataset has dim={dim}, expected {want}")));
        }
    }
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut a = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(parse_err(format!(
                "expected {} fields ({dim} features, label, attribute), found {}",
                dim + 2,
                fields.len()
            )));
        }
        for f in &fields[..dim] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("invalid feature `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite feature `{f}`")));
            }
            data.push(v);
        }
        y.push(
            fields[dim]
                .parse::<usize>()
                .map_err(|_| parse_err(format!("invalid label `{}`", fields[dim])))?,
        );
        a.push(
            fields[dim + 1]
                .parse::<usize>()
                .map_err(|_| parse_err(format!("invalid attribute `{}`", fields[dim + 1])))?,
        );
    }
    let n = y.len();
    let meta = load_meta(path)?;
    let (num_classes, num_attrs, split) = match &meta {
        Some(m) => {
            if m.dim != dim {
                return Err(Error::Schema(format!(
                    "metadata dim={} disagrees with header dim={dim}",
                    m.dim
                )));
            }
            (m.num_classes, m.num_attrs, m.split)
        }
        None => (
            y.iter().max().map_or(2, |m| (m + 1).max(2)),
            a.iter().max().map_or(1, |m| m + 1),
            SplitTag::Train,
        ),
    };
    let ds = GroupedDataset::new(Matrix::new(n, dim, data)?, y, a, num_classes, num_attrs)?;
    Ok(ds.with_split(split))
}

/// Stratified split by `(attribute, label)` cell. Falls back to a global
/// shuffle when some non-empty cell cannot contribute to both sides.
pub fn split(ds: &GroupedDataset, test_fraction: f64, seed: u64) -> Result<(GroupedDataset, GroupedDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        cells.entry((ds.a[i], ds.y[i])).or_default().push(i);
    }
    let stratifiable = cells.values().all(|rows| {
        let k = (test_fraction * rows.len() as f64).round() as usize;
        k > 0 && k < rows.len()
    });
    let mut test = Vec::new();
    if stratifiable {
        for rows in cells.values_mut() {
            let k = (test_fraction * rows.len() as f64).round() as usize;
            rows.shuffle(&mut rng);
            test.extend_from_slice(&rows[..k]);
        }
    } else {
        log::warn!("a cell is too small to stratify; falling back to a global shuffle");
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        let k = ((test_fraction * ds.len() as f64).round() as usize).clamp(1, ds.len().saturating_sub(1).max(1));
        test.extend_from_slice(&all[..k]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; ds.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !in_test[i]).collect();
    Ok((
        ds.subset(&train).with_split(SplitTag::Train),
        ds.subset(&test).with_split(SplitTag::Test),
    ))
}

/// Seeded shuffled mini-batches; the last batch may be short.
pub struct Batches<'a> {
    ds: &'a GroupedDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = GroupedBatch;

    fn next(&mut self) -> Option<GroupedBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let sub = self.ds.subset(&self.order[self.pos..end]);
        self.pos = end;
        Some(GroupedBatch {
            x: sub.x,
            y: sub.y,
            a: sub.a,
        })
    }
}

pub fn batches(ds: &GroupedDataset, batch_size: usize, epoch_seed: u64) -> Batches<'_> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Batches {
        ds,
        order,
        batch_size: batch_size.max(1),
        pos: 0,
    }
}
