//! Soft-margin Support Vector Data Description.
//!
//! The dual
//!
//! ```text
//! maximize   sum_i a_i K(i,i) - sum_ij a_i a_j K(i,j)
//! subject to 0 <= a_i <= C,  sum_i a_i = 1
//! ```
//!
//! is solved by pairwise coordinate ascent: each step moves mass between
//! the maximal violating pair, which keeps `sum a = 1` exact.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::kernel::KernelMatrix;
use crate::labels::Label;

/// Decision values at or above `-INLIER_TOLERANCE` count as inside the
/// sphere; boundary support vectors sit on it up to solver precision.
pub const INLIER_TOLERANCE: f64 = 1e-7;

/// Multipliers below this are treated as zero.
pub const ALPHA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once the maximal violating pair's gradient gap drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Log when the iteration limit is hit before the tolerance.
    pub warn_unconverged: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-9,
            max_iterations: 100_000,
            warn_unconverged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvddModel {
    pub alpha: Vec<f64>,
    pub radius_sq: f64,
    pub gamma: f64,
    pub cost: f64,
    pub sv_ids: Vec<usize>,
    pub center_norm_sq: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sparse JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedModel {
    pub gamma: f64,
    pub cost: f64,
    pub alpha: BTreeMap<usize, f64>,
    pub radius_sq: f64,
    pub center_norm_sq: f64,
}

pub fn fit(km: &KernelMatrix, cost: f64) -> Result<SvddModel> {
    fit_with(km, cost, &SolverConfig::default())
}

/// Checks the dual's feasibility condition `C >= 1/N`.
pub fn is_feasible(n: usize, cost: f64) -> bool {
    n > 0 && cost * n as f64 >= 1.0 - 1e-12
}

pub fn fit_with(km: &KernelMatrix, cost: f64, config: &SolverConfig) -> Result<SvddModel> {
    if km.is_centered() {
        return Err(LamaError::CenteredKernel);
    }
    let n = km.n();
    if n == 0 {
        return Err(LamaError::InvalidParameter("cannot fit an empty kernel matrix".into()));
    }
    if !cost.is_finite() || !is_feasible(n, cost) {
        return Err(LamaError::InfeasibleCost {
            cost,
            min: 1.0 / n as f64,
        });
    }
    // Tiny rounding below 1/N is accepted by is_feasible; never let the
    // bound cut under the uniform start.
    let upper = cost.max(1.0 / n as f64);
    let diag: Vec<f64> = (0..n).map(|i| km.get(i, i)).collect();

    let mut alpha = vec![1.0 / n as f64; n];
    let mut grad = gradient(km, &alpha, &diag);

    let mut iterations = 0;
    let mut converged = false;
    // A few refresh rounds guard against drift in the incremental gradient.
    for _ in 0..3 {
        while iterations < config.max_iterations {
            let Some((up, down, gap)) = violating_pair(&alpha, &grad, upper) else {
                break;
            };
            if gap < config.tolerance {
                break;
            }
            iterations += 1;

            let curvature = diag[up] + diag[down] - 2.0 * km.get(up, down);
            let room = (upper - alpha[up]).min(alpha[down]);
            let step = if curvature > 1e-12 {
                (gap / (2.0 * curvature)).min(room)
            } else {
                room
            };
            if step <= 0.0 {
                break;
            }
            if step == upper - alpha[up] {
                alpha[up] = upper;
            } else {
                alpha[up] += step;
            }
            if step == alpha[down] {
                alpha[down] = 0.0;
            } else {
                alpha[down] -= step;
            }
            let row_up = km.row(up);
            let row_down = km.row(down);
            for ((g, ku), kd) in grad.iter_mut().zip(row_up).zip(row_down) {
                *g += 2.0 * step * (ku - kd);
            }
        }
        grad = gradient(km, &alpha, &diag);
        match violating_pair(&alpha, &grad, upper) {
            Some((_, _, gap)) if gap >= config.tolerance && iterations < config.max_iterations => {
                converged = false;
            }
            Some((_, _, gap)) => {
                converged = gap < config.tolerance;
                break;
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged && config.warn_unconverged {
        warn!("SVDD solver stopped after {iterations} iterations without reaching tolerance (C = {cost})");
    }

    // K alpha = (grad + diag) / 2
    let center_norm_sq: f64 = alpha
        .iter()
        .zip(&grad)
        .zip(&diag)
        .map(|((a, g), d)| a * 0.5 * (g + d))
        .sum();
    let dist: Vec<f64> = grad
        .iter()
        .zip(&diag)
        .map(|(g, d)| d - (g + d) + center_norm_sq)
        .collect();
    let radius_sq = radius_from(&alpha, &dist, upper).max(0.0);
    let sv_ids = (0..n).filter(|&i| alpha[i] > ALPHA_TOLERANCE).collect();

    Ok(SvddModel {
        alpha,
        radius_sq,
        gamma: km.gamma(),
        cost,
        sv_ids,
        center_norm_sq,
        iterations,
        converged,
    })
}

/// Gradient of `f(a) = a^T K a - sum_i a_i K(i,i)`, the negated dual.
fn gradient(km: &KernelMatrix, alpha: &[f64], diag: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let mut k_alpha = vec![0.0; n];
    for (j, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (acc, k) in k_alpha.iter_mut().zip(km.row(j)) {
            *acc += a * k;
        }
    }
    k_alpha.iter().zip(diag).map(|(ka, d)| 2.0 * ka - d).collect()
}

/// `(i, j, gap)` where `i` can grow, `j` can shrink and `gap = g_j - g_i`.
fn violating_pair(alpha: &[f64], grad: &[f64], upper: f64) -> Option<(usize, usize, f64)> {
    let mut up: Option<(usize, f64)> = None;
    let mut down: Option<(usize, f64)> = None;
    for (i, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < upper && up.is_none_or(|(_, best)| g < best) {
            up = Some((i, g));
        }
        if a > 0.0 && down.is_none_or(|(_, best)| g > best) {
            down = Some((i, g));
        }
    }
    let ((i, gi), (j, gj)) = (up?, down?);
    Some((i, j, gj - gi))
}

/// Squared radius from the support-vector distances.
///
/// Unbounded support vectors lie on the sphere, so their mean distance is
/// used. Without any, the KKT conditions only pin the radius between the
/// farthest interior point (`a = 0`) and the closest bounded one (`a = C`);
/// the midpoint of that interval is taken.
fn radius_from(alpha: &[f64], dist: &[f64], upper: f64) -> f64 {
    let mut boundary_sum = 0.0;
    let mut boundary_count = 0usize;
    let mut inside_max = f64::NEG_INFINITY;
    let mut bounded_min = f64::INFINITY;
    for (&a, &d) in alpha.iter().zip(dist) {
        if a <= ALPHA_TOLERANCE {
            inside_max = inside_max.max(d);
        } else if a >= upper - ALPHA_TOLERANCE {
            bounded_min = bounded_min.min(d);
        } else {
            boundary_sum += d;
            boundary_count += 1;
        }
    }
    if boundary_count > 0 {
        return boundary_sum / boundary_count as f64;
    }
    match (inside_max.is_finite(), bounded_min.is_finite()) {
        (true, true) => 0.5 * (inside_max + bounded_min),
        (true, false) => inside_max,
        (false, true) => bounded_min,
        (false, false) => 0.0,
    }
}

impl SvddModel {
    /// `R^2 - ||phi(x) - a||^2`; non-negative means inside the sphere.
    pub fn decision_value(&self, km_row: &[f64], self_kernel: f64) -> Result<f64> {
        if km_row.len() != self.alpha.len() {
            return Err(LamaError::DimensionMismatch {
                left: km_row.len(),
                right: self.alpha.len(),
            });
        }
        let cross: f64 = self.sv_ids.iter().map(|&i| self.alpha[i] * km_row[i]).sum();
        Ok(self.radius_sq - (self_kernel - 2.0 * cross + self.center_norm_sq))
    }

    pub fn classify(decision: f64) -> Label {
        if decision >= -INLIER_TOLERANCE {
            Label::Inlier
        } else {
            Label::Outlier
        }
    }

    /// Decision values of all training observations.
    pub fn decision_values(&self, km: &KernelMatrix) -> Vec<f64> {
        (0..km.n())
            .map(|i| {
                self.decision_value(km.row(i), km.get(i, i))
                    .expect("kernel matrix matches the training size")
            })
            .collect()
    }

    pub fn predict_all(&self, km: &KernelMatrix) -> Vec<Label> {
        self.decision_values(km).into_iter().map(Self::classify).collect()
    }

    /// Dual objective `sum a_i K(i,i) - a^T K a` at this model's multipliers.
    pub fn dual_objective(&self, km: &KernelMatrix) -> f64 {
        dual_objective(km, &self.alpha)
    }

    /// Largest KKT violation measured on decision values.
    pub fn kkt_violation(&self, km: &KernelMatrix) -> f64 {
        let upper = self.cost.max(1.0 / self.alpha.len() as f64);
        self.decision_values(km)
            .iter()
            .zip(&self.alpha)
            .map(|(&d, &a)| {
                if a <= ALPHA_TOLERANCE {
                    (-d).max(0.0)
                } else if a >= upper - ALPHA_TOLERANCE {
                    d.max(0.0)
                } else {
                    d.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn serialize(&self) -> SerializedModel {
        SerializedModel {
            gamma: self.gamma,
            cost: self.cost,
            alpha: self.sv_ids.iter().map(|&i| (i, self.alpha[i])).collect(),
            radius_sq: self.radius_sq,
            center_norm_sq: self.center_norm_sq,
        }
    }
}

pub fn dual_objective(km: &KernelMatrix, alpha: &[f64]) -> f64 {
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for (i, &ai) in alpha.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        linear += ai * km.get(i, i);
        let row = km.row(i);
        quadratic += ai * alpha.iter().zip(row).map(|(aj, k)| aj * k).sum::<f64>();
    }
    linear - quadratic
}

impl SerializedModel {
    /// Rebuilds a model able to score training rows.
    pub fn to_model(&self, n: usize) -> SvddModel {
        let mut alpha = vec![0.0; n];
        for (&i, &a) in &self.alpha {
            alpha[i] = a;
        }
        SvddModel {
            sv_ids: self.alpha.keys().copied().collect(),
            alpha,
            radius_sq: self.radius_sq,
            gamma: self.gamma,
            cost: self.cost,
            center_norm_sq: self.center_norm_sq,
            iterations: 0,
            converged: true,
        }
    }
}
