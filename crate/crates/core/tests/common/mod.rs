//! Independent reference implementations used as test oracles. Nothing
//! here calls into the library's algorithms; only plain data types are
//! shared.

#![allow(dead_code)]

use std::collections::BTreeSet;

use lama_core::{Dataset, Label};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dims, |_, _| rng.random::<f64>())
}

/// Standard normal inliers plus outliers on a ring of radius `ring`.
pub fn gauss_with_ring(seed: u64, inliers: usize, outliers: usize, ring: f64) -> Dataset {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..inliers {
        values.extend([normal.sample(&mut rng), normal.sample(&mut rng)]);
        labels.push(Label::Inlier);
    }
    for i in 0..outliers {
        let t = std::f64::consts::TAU * i as f64 / outliers as f64;
        values.extend([ring * t.cos(), ring * t.sin()]);
        labels.push(Label::Outlier);
    }
    let n = inliers + outliers;
    Dataset::new("gauss-ring", DMatrix::from_row_slice(n, 2, &values), labels).unwrap()
}

pub fn sq_dist(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum()
}

pub fn gram(x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| (-gamma * sq_dist(x, i, j)).exp())
}

/// `H K H` with `H = I - 11^T / N`, by explicit matrix products.
pub fn centered(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    &h * k * &h
}

/// Brute-force neighborhoods: `x` itself, then the `k - 1` others sorted
/// by (distance, id).
pub struct Neighborhoods {
    pub nn: Vec<BTreeSet<usize>>,
    pub rnn: Vec<BTreeSet<usize>>,
    pub snn: Vec<BTreeSet<usize>>,
    pub nn_order: Vec<Vec<usize>>,
}

pub fn neighborhoods(x: &DMatrix<f64>, k: usize) -> Neighborhoods {
    let n = x.nrows();
    let mut nn_order = Vec::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(x, i, j), j)).collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut list = vec![i];
        list.extend(others.iter().take(k - 1).map(|&(_, j)| j));
        nn_order.push(list);
    }
    let nn: Vec<BTreeSet<usize>> = nn_order.iter().map(|l| l.iter().copied().collect()).collect();
    let rnn: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| (0..n).filter(|&l| nn[l].contains(&i)).collect())
        .collect();
    let snn = (0..n).map(|i| nn[i].intersection(&rnn[i]).copied().collect()).collect();
    Neighborhoods { nn, rnn, snn, nn_order }
}

/// `y'` per id: `Some(+1 / -1)` or `None` for `U'`.
pub fn relabel(nb: &Neighborhoods, inliers: &BTreeSet<usize>, outliers: &BTreeSet<usize>) -> Vec<Option<Label>> {
    let n = nb.nn.len();
    (0..n)
        .map(|x| {
            let n_in = inliers.iter().filter(|&&l| nb.nn[l].contains(&x)).count();
            let n_out = outliers.iter().filter(|&&l| nb.snn[l].contains(&x)).count();
            if n_in + n_out == 0 {
                None
            } else if n_in as f64 / (n_in + n_out) as f64 > 0.5 {
                Some(Label::Inlier)
            } else {
                Some(Label::Outlier)
            }
        })
        .collect()
}

pub type PairSet = BTreeSet<(usize, usize)>;

/// Every (i, j) in N x N tested against the mask definitions.
pub fn masks(
    nb: &Neighborhoods,
    y: &[Option<Label>],
    inliers: &BTreeSet<usize>,
    outliers: &BTreeSet<usize>,
) -> (PairSet, PairSet) {
    let n = y.len();
    let mut m_in = BTreeSet::new();
    let mut m_out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if y[i].is_none() {
                continue;
            }
            if inliers.contains(&i) && y[j].is_some() && nb.nn[i].contains(&j) {
                m_in.insert((i, j));
            }
            if outliers.contains(&i) {
                let similar = y[j] == Some(Label::Outlier) && nb.snn[i].contains(&j);
                let dissimilar = y[j] == Some(Label::Inlier) && nb.nn[i].contains(&j) && !nb.rnn[i].contains(&j);
                if similar || dissimilar {
                    m_out.insert((i, j));
                }
            }
        }
    }
    (m_in, m_out)
}

/// Frobenius ratio of masked `K` against masked `y' y'^T`, with entries
/// outside the mask zeroed out in both matrices.
pub fn masked_alignment(kc: &DMatrix<f64>, y: &[Option<Label>], mask: &BTreeSet<(usize, usize)>) -> f64 {
    let n = y.len();
    let sign = |l: Option<Label>| match l {
        Some(Label::Inlier) => 1.0,
        Some(Label::Outlier) => -1.0,
        None => 0.0,
    };
    let mut km = DMatrix::zeros(n, n);
    let mut opt = DMatrix::zeros(n, n);
    for &(i, j) in mask {
        km[(i, j)] = kc[(i, j)];
        opt[(i, j)] = sign(y[i]) * sign(y[j]);
    }
    let denom = (km.dot(&km) * opt.dot(&opt)).sqrt();
    if denom > 0.0 {
        km.dot(&opt) / denom
    } else {
        0.0
    }
}

/// Dual SVDD by accelerated projected gradient onto the capped simplex,
/// followed by an exact solve on the detected active set.
pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

pub fn dual_value(k: &DMatrix<f64>, alpha: &[f64]) -> f64 {
    let a = DVector::from_column_slice(alpha);
    let linear: f64 = (0..alpha.len()).map(|i| alpha[i] * k[(i, i)]).sum();
    linear - (a.transpose() * k * &a)[(0, 0)]
}

fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    let total = |lambda: f64| v.iter().map(|x| (x - lambda).clamp(0.0, cap)).sum::<f64>();
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    v.iter().map(|x| (x - lambda).clamp(0.0, cap)).collect()
}

pub fn reference_qp(k: &DMatrix<f64>, cap: f64) -> QpSolution {
    let n = k.nrows();
    let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    let lipschitz = 2.0
        * k.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let grad = |a: &[f64]| -> Vec<f64> {
        let av = DVector::from_column_slice(a);
        let ka = k * av;
        (0..n).map(|i| 2.0 * ka[i] - diag[i]).collect()
    };
    let mut x = project_capped_simplex(&vec![1.0 / n as f64; n], cap);
    let mut yv = x.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let g = grad(&yv);
        let next = project_capped_simplex(&(0..n).map(|i| yv[i] - step * g[i]).collect::<Vec<_>>(), cap);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        yv = (0..n).map(|i| next[i] + momentum * (next[i] - x[i])).collect();
        // Restart when the objective would go up.
        if dual_value(k, &next) < dual_value(k, &x) {
            yv = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        x = next;
    }
    let polished = polish(k, &x, cap).filter(|p| dual_value(k, p) >= dual_value(k, &x) - 1e-12);
    let alpha = polished.unwrap_or(x);
    QpSolution {
        objective: dual_value(k, &alpha),
        alpha,
    }
}

/// Solves the KKT system with the bound set fixed as detected in `alpha`.
fn polish(k: &DMatrix<f64>, alpha: &[f64], cap: f64) -> Option<Vec<f64>> {
    let n = alpha.len();
    let tol = 1e-7;
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > tol && alpha[i] < cap - tol).collect();
    let at_cap: Vec<usize> = (0..n).filter(|&i| alpha[i] >= cap - tol).collect();
    if free.is_empty() {
        return None;
    }
    let f = free.len();
    let mut a = DMatrix::zeros(f + 1, f + 1);
    let mut b = DVector::zeros(f + 1);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = 2.0 * k[(i, j)];
        }
        a[(r, f)] = 1.0;
        a[(f, r)] = 1.0;
        let fixed: f64 = at_cap.iter().map(|&j| 2.0 * cap * k[(i, j)]).sum();
        b[r] = k[(i, i)] - fixed;
    }
    b[f] = 1.0 - cap * at_cap.len() as f64;
    let sol = a.lu().solve(&b)?;
    let mut out = vec![0.0; n];
    for &j in &at_cap {
        out[j] = cap;
    }
    for (r, &i) in free.iter().enumerate() {
        if sol[r] < -1e-12 || sol[r] > cap + 1e-12 {
            return None;
        }
        out[i] = sol[r].clamp(0.0, cap);
    }
    Some(out)
}

/// Squared distance of each observation to the center in feature space.
pub fn center_distances(k: &DMatrix<f64>, alpha: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let a = DVector::from_column_slice(alpha);
    let ka = k * &a;
    let aka = a.dot(&ka);
    (0..n).map(|i| k[(i, i)] - 2.0 * ka[i] + aka).collect()
}
