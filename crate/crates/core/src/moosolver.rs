//! Minimum-norm point of the convex hull of objective gradients.
//!
//! Given gradients `g_1..g_m`, find simplex weights `α` minimizing
//! `‖Σ α_i g_i‖₂`. The resulting vector is a common descent direction: its
//! inner product with every `g_i` is at least its own squared norm.
//!
//! Two objectives use the closed form. More objectives use Frank-Wolfe on the
//! Gram matrix with an exact line search, followed by an exact solve on the
//! face the iterates settle on.

use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Weights below this are snapped to zero.
const SNAP: f64 = 1e-12;

/// One gradient per objective, all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    grads: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl GradientBundle {
    pub fn new(grads: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..grads.len()).map(|i| format!("obj{i}")).collect();
        Self::with_labels(grads, labels)
    }

    pub fn with_labels(grads: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let first = grads.first().ok_or(Error::EmptyBundle)?;
        if labels.len() != grads.len() {
            return Err(Error::dim("bundle labels", grads.len(), labels.len()));
        }
        for g in &grads {
            if g.len() != first.len() {
                return Err(Error::dim("bundle gradient", first.len(), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    step: 0,
                    what: "gradient bundle".into(),
                });
            }
        }
        Ok(Self { grads, labels })
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads[0].len()
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Symmetric Gram matrix `G[i][j] = g_iᵀ g_j`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let m = self.len();
        let mut g = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i..m {
                let v = dot(&self.grads[i], &self.grads[j]);
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    }
}

/// Convex weights over the objectives of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    alpha: Vec<f64>,
}

impl SimplexWeights {
    /// Clamps tiny entries to zero and renormalizes.
    pub fn new(mut alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyBundle);
        }
        for a in alpha.iter_mut() {
            if *a < SNAP {
                *a = 0.0;
            }
        }
        let sum: f64 = alpha.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Numerical {
                step: 0,
                what: "simplex weights".into(),
            });
        }
        alpha.iter_mut().for_each(|a| *a /= sum);
        Ok(Self { alpha })
    }

    pub fn vertex(m: usize, i: usize) -> Self {
        let mut alpha = vec![0.0; m];
        alpha[i] = 1.0;
        Self { alpha }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.alpha
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Closed-form weight on `g1` for two objectives, clipped to `[0, 1]`.
/// Returns 0.5 when the gradients coincide.
pub fn two_objective_alpha(g1: &[f64], g2: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in g1.iter().zip(g2) {
        let d = b - a;
        num += d * b;
        den += d * d;
    }
    if den == 0.0 {
        return 0.5;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Min-norm simplex weights: closed form for `m = 2`, Frank-Wolfe otherwise.
pub fn min_norm_weights(bundle: &GradientBundle, tol: f64, max_iter: usize) -> Result<SimplexWeights> {
    match bundle.len() {
        0 => Err(Error::EmptyBundle),
        1 => Ok(SimplexWeights::vertex(1, 0)),
        2 => {
            let a = two_objective_alpha(&bundle.grads[0], &bundle.grads[1]);
            SimplexWeights::new(vec![a, 1.0 - a])
        }
        _ => frank_wolfe(bundle, tol, max_iter),
    }
}

pub fn min_norm_default(bundle: &GradientBundle) -> Result<SimplexWeights> {
    min_norm_weights(bundle, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

fn quad(gram: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, ai) in alpha.iter().enumerate() {
        for (j, aj) in alpha.iter().enumerate() {
            acc += ai * aj * gram[i][j];
        }
    }
    acc
}

fn gram_times(gram: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    gram.iter().map(|row| dot(row, alpha)).collect()
}

/// Frank-Wolfe on `min αᵀGα` over the simplex, for any `m ≥ 1`.
///
/// Starts at the vertex of smallest norm. Each iteration moves toward the vertex
/// minimizing `(Gα)_i` (lowest index on ties) with the exact step on the
/// segment, until the duality gap `2(αᵀGα − min_i (Gα)_i)` drops below `tol`.
/// The support of the final iterate is then polished with an exact solve.
pub fn frank_wolfe(bundle: &GradientBundle, tol: f64, max_iter: usize) -> Result<SimplexWeights> {
    let m = bundle.len();
    if m == 0 {
        return Err(Error::EmptyBundle);
    }
    let gram = bundle.gram();
    let start = (0..m)
        .min_by(|&a, &b| gram[a][a].total_cmp(&gram[b][b]))
        .unwrap_or(0);
    let mut alpha = vec![0.0; m];
    alpha[start] = 1.0;
    for _ in 0..max_iter {
        let ga = gram_times(&gram, &alpha);
        let cur = dot(&alpha, &ga);
        let mut t = 0;
        for i in 1..m {
            if ga[i] < ga[t] {
                t = i;
            }
        }
        let gap = 2.0 * (cur - ga[t]);
        if gap <= tol {
            break;
        }
        // ‖(1-γ)u + γ g_t‖² with u = Σ α g: minimized at γ = (uᵀu - uᵀg_t) / ‖u - g_t‖².
        let denom = cur - 2.0 * ga[t] + gram[t][t];
        if denom <= 0.0 {
            break;
        }
        let step = ((cur - ga[t]) / denom).clamp(0.0, 1.0);
        for (i, a) in alpha.iter_mut().enumerate() {
            *a *= 1.0 - step;
            if i == t {
                *a += step;
            }
        }
    }
    if let Some(polished) = polish_on_support(&gram, &alpha) {
        alpha = polished;
    }
    SimplexWeights::new(alpha)
}

/// Exact minimizer over the faces spanned by the current support, if one of
/// them satisfies the global optimality conditions.
fn polish_on_support(gram: &[Vec<f64>], alpha: &[f64]) -> Option<Vec<f64>> {
    let m = alpha.len();
    let support: Vec<usize> = (0..m).filter(|&i| alpha[i] > SNAP).collect();
    if support.len() > 12 {
        return None;
    }
    let scale = (0..m).map(|i| gram[i][i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let current = quad(gram, alpha);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << support.len()) {
        let face: Vec<usize> = support
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &i)| i)
            .collect();
        let Some(weights) = solve_face(gram, &face) else {
            continue;
        };
        if weights.iter().any(|&w| w < -SNAP) {
            continue;
        }
        let mut cand = vec![0.0; m];
        for (&i, &w) in face.iter().zip(&weights) {
            cand[i] = w.max(0.0);
        }
        let s: f64 = cand.iter().sum();
        cand.iter_mut().for_each(|a| *a /= s);
        let value = quad(gram, &cand);
        let ga = gram_times(gram, &cand);
        let optimal = ga.iter().all(|&g| g >= value - 1e-12 * scale);
        if optimal && value <= current + 1e-12 * scale && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, cand));
        }
    }
    best.map(|(_, a)| a)
}

/// Minimizes `αᵀGα` on the affine hull of `face` (weights summing to one) by
/// solving the KKT system.
fn solve_face(gram: &[Vec<f64>], face: &[usize]) -> Option<Vec<f64>> {
    let k = face.len();
    if k == 1 {
        return Some(vec![1.0]);
    }
    // [G_ff  1] [w]   [0]
    // [1ᵀ    0] [λ] = [1]
    let n = k + 1;
    let mut a = vec![vec![0.0; n + 1]; n];
    for (r, &i) in face.iter().enumerate() {
        for (c, &j) in face.iter().enumerate() {
            a[r][c] = gram[i][j];
        }
        a[r][k] = 1.0;
        a[k][r] = 1.0;
    }
    a[k][n] = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let w: Vec<f64> = (0..k).map(|r| a[r][n] / a[r][r]).collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// `Σ α_i g_i`.
pub fn common_descent(bundle: &GradientBundle, alpha: &SimplexWeights) -> Result<Vec<f64>> {
    combine(bundle.grads(), alpha.as_slice())
}

pub(crate) fn combine(grads: &[Vec<f64>], alpha: &[f64]) -> Result<Vec<f64>> {
    if grads.len() != alpha.len() {
        return Err(Error::dim("simplex weights", grads.len(), alpha.len()));
    }
    let d = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (g, &a) in grads.iter().zip(alpha) {
        if g.len() != d {
            return Err(Error::dim("gradient", d, g.len()));
        }
        if a == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(g) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// True when the min-norm common descent vector has norm at most `eps`.
pub fn is_pareto_stationary(bundle: &GradientBundle, eps: f64) -> Result<bool> {
    let alpha = min_norm_default(bundle)?;
    let g = common_descent(bundle, &alpha)?;
    Ok(dot(&g, &g).sqrt() <= eps)
}
