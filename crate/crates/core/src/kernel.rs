//! Gaussian kernel, Gram matrices and kernel-matrix centering.
//!
//! Pairwise squared distances are computed once per dataset and shared by
//! every Gram matrix built from them, so a sweep over `gamma` only pays for
//! the exponentials.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};

/// How the distance enters the exponent of the Gaussian kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentMode {
    /// `exp(-gamma * ||x - x'||^2)`, the usual RBF kernel.
    #[default]
    Squared,
    /// `exp(-gamma * ||x - x'||)`.
    Plain,
}

impl ExponentMode {
    #[inline]
    pub fn term(self, squared_distance: f64) -> f64 {
        match self {
            ExponentMode::Squared => squared_distance,
            ExponentMode::Plain => squared_distance.sqrt(),
        }
    }
}

pub fn gaussian_kernel(x: &[f64], x2: &[f64], gamma: f64, mode: ExponentMode) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(LamaError::DimensionMismatch {
            left: x.len(),
            right: x2.len(),
        });
    }
    check_gamma(gamma)?;
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * mode.term(d2)).exp())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(LamaError::InvalidParameter(format!(
            "gamma must be positive and finite, got {gamma}"
        )))
    }
}

/// Symmetric N x N table of squared Euclidean distances.
#[derive(Debug, Clone)]
pub struct SquaredDistances {
    n: usize,
    values: Vec<f64>,
}

impl SquaredDistances {
    pub fn from_points(points: &DMatrix<f64>) -> Self {
        let n = points.nrows();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
            for j in i + 1..n {
                out[j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        });
        for i in 0..n {
            for j in i + 1..n {
                values[j * n + i] = values[i * n + j];
            }
        }
        SquaredDistances { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Median over the strict upper triangle of the distance term
    /// (squared or plain, per `mode`). Returns 0 when N < 2.
    pub fn median_term(&self, mode: ExponentMode) -> f64 {
        let mut terms: Vec<f64> = (0..self.n)
            .flat_map(|i| self.row(i)[i + 1..].iter().map(move |&d| mode.term(d)))
            .collect();
        if terms.is_empty() {
            return 0.0;
        }
        let mid = terms.len() / 2;
        let (_, &mut upper, _) = terms.select_nth_unstable_by(mid, f64::total_cmp);
        if terms.len() % 2 == 1 {
            upper
        } else {
            let lower = terms[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lower + upper)
        }
    }
}

/// A Gram matrix `K(i, j) = k(x_i, x_j)` for one bandwidth.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    gamma: f64,
    centered: bool,
}

impl KernelMatrix {
    /// Squared-mode Gram matrix of the rows of `points`.
    pub fn gram(points: &DMatrix<f64>, gamma: f64) -> Result<Self> {
        Self::gram_with_mode(points, gamma, ExponentMode::Squared)
    }

    pub fn gram_with_mode(points: &DMatrix<f64>, gamma: f64, mode: ExponentMode) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(LamaError::InvalidParameter("gram of an empty dataset".into()));
        }
        Self::from_distances(&SquaredDistances::from_points(points), gamma, mode)
    }

    pub fn from_distances(dist: &SquaredDistances, gamma: f64, mode: ExponentMode) -> Result<Self> {
        check_gamma(gamma)?;
        let n = dist.len();
        let mut data = vec![0.0; n * n];
        // Column-major storage; distances are symmetric so column j = row j.
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(j, col)| {
            for (out, &d) in col.iter_mut().zip(dist.row(j)) {
                *out = (-gamma * mode.term(d)).exp();
            }
        });
        Ok(KernelMatrix {
            values: DMatrix::from_vec(n, n, data),
            gamma,
            centered: false,
        })
    }

    /// Wraps precomputed kernel values. `values` must be square and symmetric.
    pub fn from_values(values: DMatrix<f64>, gamma: f64, centered: bool) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(LamaError::DimensionMismatch {
                left: values.nrows(),
                right: values.ncols(),
            });
        }
        Ok(KernelMatrix {
            values,
            gamma,
            centered,
        })
    }

    /// `(I - 11^T/n) K (I - 11^T/n)`.
    pub fn center(&self) -> Result<KernelMatrix> {
        if self.centered {
            return Err(LamaError::AlreadyCentered);
        }
        let n = self.n();
        let means: Vec<f64> = (0..n).map(|i| self.row(i).iter().sum::<f64>() / n as f64).collect();
        let grand = means.iter().sum::<f64>() / n as f64;
        let mut centered = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.values[(i, j)] - means[i] - means[j] + grand;
                centered[(i, j)] = v;
                centered[(j, i)] = v;
            }
        }
        Ok(KernelMatrix {
            values: centered,
            gamma: self.gamma,
            centered: true,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Row `i` (equal to column `i` by symmetry).
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[i * n..(i + 1) * n]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Entries of the centered Gram matrix, evaluated on demand from the
/// per-row means of `K` and its grand mean. Equivalent to
/// `KernelMatrix::from_distances(..).center()` without materializing N x N.
#[derive(Debug, Clone)]
pub struct CenteredGram<'a> {
    dist: &'a SquaredDistances,
    gamma: f64,
    mode: ExponentMode,
    row_means: Vec<f64>,
    grand_mean: f64,
}

impl<'a> CenteredGram<'a> {
    pub fn new(dist: &'a SquaredDistances, gamma: f64, mode: ExponentMode) -> Result<Self> {
        check_gamma(gamma)?;
        let n = dist.len();
        // Upper triangle only, then fold the symmetric half back in.
        let partial: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = dist.row(i);
                let mut contrib = vec![0.0; n - i];
                for (slot, &d) in contrib.iter_mut().zip(&row[i..]).skip(1) {
                    *slot = (-gamma * mode.term(d)).exp();
                }
                contrib
            })
            .collect();
        let mut sums = vec![1.0; n];
        for (i, contrib) in partial.iter().enumerate() {
            for (offset, &v) in contrib.iter().enumerate().skip(1) {
                sums[i] += v;
                sums[i + offset] += v;
            }
        }
        let row_means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let grand_mean = row_means.iter().sum::<f64>() / n as f64;
        Ok(CenteredGram {
            dist,
            gamma,
            mode,
            row_means,
            grand_mean,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let k = (-self.gamma * self.mode.term(self.dist.get(a, b))).exp();
        k - self.row_means[a] - self.row_means[b] + self.grand_mean
    }
}
