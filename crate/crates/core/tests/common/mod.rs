#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tanh MLP with softmax head over the flat layout `[W1 | b1 | W2 | b2]`.
pub fn ref_forward(theta: &[f64], input: usize, hidden: usize, classes: usize, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w1 = &theta[..hidden * input];
    let b1 = &theta[hidden * input..hidden * input + hidden];
    let off = hidden * input + hidden;
    let w2 = &theta[off..off + classes * hidden];
    let b2 = &theta[off + classes * hidden..];
    x.iter()
        .map(|row| {
            let h: Vec<f64> = (0..hidden)
                .map(|j| (b1[j] + (0..input).map(|i| w1[j * input + i] * row[i]).sum::<f64>()).tanh())
                .collect();
            let z: Vec<f64> = (0..classes)
                .map(|k| b2[k] + (0..hidden).map(|j| w2[k * hidden + j] * h[j]).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn ref_ce(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    probs.iter().zip(y).map(|(p, &t)| -p[t].ln()).sum::<f64>() / y.len() as f64
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, c: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; c];
    let mut n = 0usize;
    for r in rows {
        for k in 0..c {
            sum[k] += r[k];
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Σ over present (a, y) cells of the L1 distance between the cell's mean
/// probability row and the label's mean probability row.
pub fn ref_diffeodd(probs: &[Vec<f64>], y: &[usize], a: &[usize]) -> f64 {
    let c = probs[0].len();
    let attrs = a.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for label in 0..c {
        let Some(overall) = mean_rows(probs.iter().zip(y).filter(|(_, &t)| t == label).map(|(p, _)| p), c) else {
            continue;
        };
        for g in 0..attrs {
            let cell = mean_rows(
                probs
                    .iter()
                    .zip(y.iter().zip(a))
                    .filter(|(_, (&t, &ai))| t == label && ai == g)
                    .map(|(p, _)| p),
                c,
            );
            if let Some(cell) = cell {
                total += cell.iter().zip(&overall).map(|(u, v)| (u - v).abs()).sum::<f64>();
            }
        }
    }
    total
}

pub fn ref_kl(lf: f64, la: f64, vf: f64, va: f64) -> f64 {
    let (p, q) = (lf / (lf + la), vf / (vf + va));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(max_i |a_i|, max_i |b_i|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn gram(grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
    grads
        .iter()
        .map(|u| grads.iter().map(|v| u.iter().zip(v).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

pub fn combo_norm(g: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..alpha.len() {
        for j in 0..alpha.len() {
            q += alpha[i] * alpha[j] * g[i][j];
        }
    }
    q.max(0.0).sqrt()
}

/// Smallest ‖Σ αᵢ gᵢ‖ over a simplex grid of the given step, for m ∈ {2, 3}.
pub fn grid_min_norm(grads: &[Vec<f64>], step: f64) -> f64 {
    let g = gram(grads);
    let n = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    match grads.len() {
        2 => {
            for i in 0..=n {
                let a = i as f64 / n as f64;
                best = best.min(combo_norm(&g, &[a, 1.0 - a]));
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let a = i as f64 / n as f64;
                    let b = j as f64 / n as f64;
                    best = best.min(combo_norm(&g, &[a, b, (1.0 - a - b).max(0.0)]));
                }
            }
        }
        m => panic!("grid oracle supports m = 2 or 3, got {m}"),
    }
    best
}

pub fn random_grads(r: &mut ChaCha8Rng, m: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale: f64 = r.random_range(0.1..5.0);
    (0..m)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0) * scale).collect())
        .collect()
}

/// Uniform Monte Carlo estimate of the area inside `[0, r]` dominated by the
/// points, with its standard error.
pub fn mc_hypervolume(points: &[(f64, f64)], r: (f64, f64), samples: usize, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let area = r.0 * r.1;
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = g.random_range(0.0..r.0);
        let v = g.random_range(0.0..r.1);
        if points.iter().any(|&(x, y)| x <= u && y <= v) {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (area * p, area * (p * (1.0 - p) / samples as f64).sqrt())
}

pub fn random_front(r: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (r.random_range(0.0..1.0), r.random_range(0.0..1.0))).collect()
}
