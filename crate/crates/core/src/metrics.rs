//! Evaluation metrics and two-objective front utilities.

use serde::{Deserialize, Serialize};

use crate::cpt::Method;
use crate::data::GroupedDataset;
use crate::objectives::{loss_acc, loss_fair, ReferenceVector};
use crate::paramspace::{forward, predict, ParamVector};
use crate::{Error, Result};

/// One trained solution as a point in fairness/accuracy space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub acc_loss: f64,
    pub fair_loss: f64,
    pub accuracy: f64,
    pub eodd: f64,
    pub reference: ReferenceVector,
    pub seed: u64,
    pub method: Method,
}

/// Upper bound of the objective region for minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub r: (f64, f64),
}

impl RefPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { r: (x, y) }
    }
}

impl Default for RefPoint {
    fn default() -> Self {
        Self::new(2.0, 1.0)
    }
}

pub fn accuracy(preds: &[usize], y: &[usize]) -> Result<f64> {
    if preds.len() != y.len() {
        return Err(Error::dim("accuracy labels", preds.len(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = preds.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
struct Confusion {
    tp: usize,
    fn_: usize,
    fp: usize,
    tn: usize,
}

impl Confusion {
    fn add(&mut self, predicted_pos: bool, actual_pos: bool) {
        match (predicted_pos, actual_pos) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    fn fpr(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }
}

fn gap(group: Option<f64>, overall: Option<f64>) -> f64 {
    match (group, overall) {
        (Some(g), Some(o)) => (g - o).abs(),
        _ => 0.0,
    }
}

fn eodd_for_positive(preds: &[usize], y: &[usize], a: &[usize], positive: usize, groups: &[usize]) -> f64 {
    let mut overall = Confusion::default();
    for (&p, &t) in preds.iter().zip(y) {
        overall.add(p == positive, t == positive);
    }
    groups
        .iter()
        .map(|&g| {
            let mut c = Confusion::default();
            for ((&p, &t), _) in preds.iter().zip(y).zip(a).filter(|(_, &ai)| ai == g) {
                c.add(p == positive, t == positive);
            }
            gap(c.tpr(), overall.tpr()) + gap(c.fpr(), overall.fpr())
        })
        .sum()
}

/// Summed absolute TPR and FPR gaps between each attribute group and the
/// whole population. Label 1 is the positive class when every label is 0 or
/// 1; otherwise the gaps of each one-vs-rest split are summed.
pub fn eodd(preds: &[usize], y: &[usize], a: &[usize]) -> Result<f64> {
    if preds.len() != y.len() {
        return Err(Error::dim("eodd labels", preds.len(), y.len()));
    }
    if a.len() != y.len() {
        return Err(Error::dim("eodd attributes", y.len(), a.len()));
    }
    let mut groups: Vec<usize> = a.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let max_label = preds.iter().chain(y).copied().max().unwrap_or(0);
    if max_label <= 1 {
        return Ok(eodd_for_positive(preds, y, a, 1, &groups));
    }
    Ok((0..=max_label)
        .map(|c| eodd_for_positive(preds, y, a, c, &groups))
        .sum())
}

/// Points not dominated by any other point (minimization), sorted by x then
/// y, duplicates collapsed.
pub fn nondominated(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut best_y = f64::INFINITY;
    for p in sorted {
        if p.1 < best_y {
            out.push(p);
            best_y = p.1;
        }
    }
    out
}

/// Exact area dominated by `points` and bounded by `reference`.
pub fn hypervolume2d(points: &[(f64, f64)], reference: RefPoint) -> f64 {
    let (r1, r2) = reference.r;
    let inside: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let ok = x.is_finite() && y.is_finite() && x < r1 && y < r2;
            if !ok {
                log::warn!("point ({x}, {y}) is not dominated by the reference ({r1}, {r2}); excluded");
            }
            ok
        })
        .collect();
    let front = nondominated(&inside);
    if front.is_empty() {
        log::warn!("no point inside the reference box; hypervolume is 0");
        return 0.0;
    }
    front
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let next = front.get(i + 1).map_or(r1, |p| p.0);
            (next - x) * (r2 - y)
        })
        .sum()
}

/// Min-max scaling of each axis to [0, 1] over the given set. A constant
/// axis maps to 0.
pub fn normalize_minmax(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let scale = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        vals.into_iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect()
    };
    let xs = scale(points.iter().map(|p| p.0).collect());
    let ys = scale(points.iter().map(|p| p.1).collect());
    xs.into_iter().zip(ys).collect()
}

/// Full-pass metrics of a parameter vector on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub eodd: f64,
    pub l_fair: f64,
    pub l_acc: f64,
}

pub fn evaluate(params: &ParamVector, ds: &GroupedDataset) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cfg = params.config();
    if cfg.input_dim != ds.dim() {
        return Err(Error::Schema(format!(
            "parameters expect {} features, dataset has {}",
            cfg.input_dim,
            ds.dim()
        )));
    }
    if cfg.num_classes < ds.num_classes() {
        return Err(Error::Schema(format!(
            "parameters have {} classes, dataset has {}",
            cfg.num_classes,
            ds.num_classes()
        )));
    }
    let x = ds.features();
    let out = forward(params, x)?;
    let preds = predict(params, x)?;
    Ok(EvalMetrics {
        accuracy: accuracy(&preds, ds.labels())?,
        eodd: eodd(&preds, ds.labels(), ds.attributes())?,
        l_fair: loss_fair(&out.probs, ds.labels(), ds.attributes())?,
        l_acc: loss_acc(&out.probs, ds.labels())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(tp: usize, fn_: usize, fp: usize, tn: usize, attr: usize) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        v.extend(std::iter::repeat_n((1, 1, attr), tp));
        v.extend(std::iter::repeat_n((0, 1, attr), fn_));
        v.extend(std::iter::repeat_n((1, 0, attr), fp));
        v.extend(std::iter::repeat_n((0, 0, attr), tn));
        v
    }

    fn unzip3(v: &[(usize, usize, usize)]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        (
            v.iter().map(|r| r.0).collect(),
            v.iter().map(|r| r.1).collect(),
            v.iter().map(|r| r.2).collect(),
        )
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyBatch)));
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn eodd_worked_example() {
        let mut data = rows(4, 1, 1, 4, 0);
        data.extend(rows(2, 3, 3, 2, 1));
        let (p, y, a) = unzip3(&data);
        assert!((eodd(&p, &y, &a).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn eodd_parity_cases() {
        let mut data = rows(3, 1, 2, 4, 0);
        data.extend(rows(3, 1, 2, 4, 1));
        let (p, y, a) = unzip3(&data);
        assert_eq!(eodd(&p, &y, &a).unwrap(), 0.0);
        let (p, y, a) = unzip3(&rows(3, 2, 1, 5, 0));
        assert_eq!(eodd(&p, &y, &a).unwrap(), 0.0);
    }

    #[test]
    fn eodd_zero_denominator() {
        // group 1 has no negatives, so only its TPR gap counts
        let mut data = rows(2, 2, 1, 3, 0);
        data.extend(rows(2, 0, 0, 0, 1));
        let (p, y, a) = unzip3(&data);
        let overall_tpr: f64 = 4.0 / 6.0;
        let overall_fpr: f64 = 1.0 / 4.0;
        let want = (0.5 - overall_tpr).abs() + (0.25 - overall_fpr).abs() + (1.0 - overall_tpr).abs();
        assert!((eodd(&p, &y, &a).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn eodd_multiclass_matches_binary_on_two_classes() {
        let mut data = rows(4, 1, 1, 4, 0);
        data.extend(rows(2, 3, 3, 2, 1));
        let (p, y, a) = unzip3(&data);
        let binary = eodd(&p, &y, &a).unwrap();
        let groups = [0, 1];
        let ovr: f64 = (0..2).map(|c| eodd_for_positive(&p, &y, &a, c, &groups)).sum();
        assert!((ovr - 2.0 * binary).abs() < 1e-12);
        // three classes go one-vs-rest
        let p3 = [0, 1, 2, 2, 1, 0];
        let y3 = [0, 1, 2, 1, 1, 0];
        let a3 = [0, 0, 0, 1, 1, 1];
        assert!(eodd(&p3, &y3, &a3).unwrap() > 0.0);
    }

    #[test]
    fn nondominated_examples() {
        let base = vec![(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)];
        assert_eq!(nondominated(&base), base);
        let mut more = base.clone();
        more.push((0.6, 0.6));
        more.push((0.5, 0.5));
        assert_eq!(nondominated(&more), base);
        assert_eq!(nondominated(&[(0.5, 0.5), (0.5, 0.7)]), vec![(0.5, 0.5)]);
    }

    #[test]
    fn hypervolume_examples() {
        let r = RefPoint::new(1.0, 1.0);
        assert!((hypervolume2d(&[(0.5, 0.5)], r) - 0.25).abs() < 1e-15);
        let three = [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)];
        assert!((hypervolume2d(&three, r) - 0.37).abs() < 1e-12);
        let mut with_dominated = three.to_vec();
        with_dominated.push((0.6, 0.6));
        assert_eq!(hypervolume2d(&with_dominated, r), hypervolume2d(&three, r));
        assert_eq!(hypervolume2d(&[(1.5, 0.1)], r), 0.0);
        assert_eq!(hypervolume2d(&[], r), 0.0);
    }

    #[test]
    fn normalization() {
        let n = normalize_minmax(&[(1.0, 5.0), (3.0, 5.0), (2.0, 5.0)]);
        assert_eq!(n, vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.0)]);
    }

    fn pts() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..12)
    }

    proptest! {
        #[test]
        fn hypervolume_is_monotone(ps in pts(), extra in (0.0f64..1.0, 0.0f64..1.0)) {
            let r = RefPoint::new(1.0, 1.0);
            let before = hypervolume2d(&ps, r);
            let mut more = ps.clone();
            more.push(extra);
            prop_assert!(hypervolume2d(&more, r) >= before - 1e-15);
            let front = nondominated(&ps);
            if !front.is_empty() {
                let fewer: Vec<_> = front[1..].to_vec();
                prop_assert!(hypervolume2d(&fewer, r) <= hypervolume2d(&front, r) + 1e-15);
            }
        }

        #[test]
        fn nondominated_is_mutually_nondominated(ps in pts()) {
            let f = nondominated(&ps);
            for p in &f {
                for q in &ps {
                    prop_assert!(!(q.0 <= p.0 && q.1 <= p.1 && q != p));
                }
            }
            for w in f.windows(2) {
                prop_assert!(w[0].0 < w[1].0);
            }
        }

        #[test]
        fn eodd_invariant_under_attribute_relabeling(
            data in prop::collection::vec((0usize..2, 0usize..2, 0usize..3), 1..60)
        ) {
            let (p, y, a) = unzip3(&data);
            let perm = [2usize, 0, 1];
            let a2: Vec<usize> = a.iter().map(|&v| perm[v]).collect();
            let e1 = eodd(&p, &y, &a).unwrap();
            let e2 = eodd(&p, &y, &a2).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12);
            prop_assert!(e1 >= 0.0);
        }

        #[test]
        fn accuracy_plus_error_is_one(
            data in prop::collection::vec((0usize..3, 0usize..3), 1..50)
        ) {
            let p: Vec<usize> = data.iter().map(|d| d.0).collect();
            let y: Vec<usize> = data.iter().map(|d| d.1).collect();
            let wrong = p.iter().zip(&y).filter(|(a, b)| a != b).count();
            let err = wrong as f64 / y.len() as f64;
            let acc = accuracy(&p, &y).unwrap();
            prop_assert_eq!(acc + err, 1.0);
        }
    }
}
