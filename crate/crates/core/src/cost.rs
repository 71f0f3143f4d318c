//! Estimating the SVDD cost parameter from a small labeled sample.
//!
//! The feasible range `[C_LB, C_UB]` runs from the smallest cost with a
//! feasible dual to the smallest cost at which every observation falls
//! inside the sphere. A linear grid over that range is scored by Cohen's
//! kappa on the labeled observations; the best score is the quality score
//! of the current `(gamma, C)` estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::kernel::KernelMatrix;
use crate::labels::{Label, LabeledSet};
use crate::svdd::{self, SolverConfig, SvddModel};

/// Bracket width at which the bisections stop.
pub const SEARCH_TOLERANCE: f64 = 1e-4;

/// Points of the ascending scan used when bisection cannot be trusted.
const FALLBACK_SCAN_POINTS: usize = 50;

/// Chance-corrected agreement between predictions and truth. Returns 0
/// when the chance agreement is 1 (both sides constant and equal).
pub fn cohen_kappa(pred: &[Label], truth: &[Label]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(LamaError::DimensionMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(LamaError::InvalidParameter("kappa of empty label vectors".into()));
    }
    let n = pred.len() as f64;
    let agree = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64;
    let pred_in = pred.iter().filter(|l| l.is_inlier()).count() as f64 / n;
    let truth_in = truth.iter().filter(|l| l.is_inlier()).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pred_in * truth_in + (1.0 - pred_in) * (1.0 - truth_in);
    if 1.0 - p_e <= f64::EPSILON {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Kappa of `model` on the labeled observations only.
pub fn kappa_on_labeled(model: &SvddModel, km: &KernelMatrix, labeled: &LabeledSet) -> Result<f64> {
    let (pred, truth): (Vec<Label>, Vec<Label>) = labeled
        .iter()
        .map(|(id, label)| {
            let d = model.decision_value(km.row(id), km.get(id, id))?;
            Ok((SvddModel::classify(d), label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    cohen_kappa(&pred, &truth)
}

/// Smallest cost in `[0, 1]` for which the solver accepts the problem,
/// found by bisection. Analytically this is `1/N`.
pub fn find_c_lb(km: &KernelMatrix) -> Result<f64> {
    // Only acceptance of the cost matters here, not the solution.
    let probe = SolverConfig {
        max_iterations: 0,
        warn_unconverged: false,
        ..SolverConfig::default()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if svdd::fit_with(km, hi, &probe).is_err() {
        return Err(LamaError::InvalidParameter("SVDD is infeasible even at C = 1".into()));
    }
    while hi - lo > SEARCH_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        match svdd::fit_with(km, mid, &probe) {
            Ok(_) => hi = mid,
            Err(LamaError::InfeasibleCost { .. }) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    Ok(hi)
}

fn all_inliers(km: &KernelMatrix, cost: f64) -> Result<bool> {
    let model = svdd::fit(km, cost)?;
    Ok(model.predict_all(km).iter().all(|l| l.is_inlier()))
}

/// Smallest cost in `[c_lb, 1]` at which every observation is classified
/// as inlier, assuming the predicate is monotone in `C`. Falls back to an
/// ascending scan when the bracket endpoints contradict that assumption;
/// returns 1 if no cost qualifies.
pub fn find_c_ub(km: &KernelMatrix, c_lb: f64) -> Result<f64> {
    let c_lb = c_lb.max(1.0 / km.n() as f64);
    if c_lb >= 1.0 {
        return Ok(1.0);
    }
    if all_inliers(km, c_lb)? {
        return Ok(c_lb);
    }
    if !all_inliers(km, 1.0)? {
        return ascending_scan(km, c_lb);
    }
    let (mut lo, mut hi) = (c_lb, 1.0f64);
    while hi - lo > SEARCH_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if all_inliers(km, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn ascending_scan(km: &KernelMatrix, c_lb: f64) -> Result<f64> {
    for step in 1..=FALLBACK_SCAN_POINTS {
        let cost = c_lb + (1.0 - c_lb) * step as f64 / FALLBACK_SCAN_POINTS as f64;
        if all_inliers(km, cost)? {
            return Ok(cost);
        }
    }
    Ok(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub cost: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub c_lb: f64,
    pub c_ub: f64,
    pub c_opt: f64,
    pub quality_score: f64,
    pub grid: Vec<GridPoint>,
}

/// `count` evenly spaced values over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// Fits SVDD (unsupervised, on all observations) at `grid_size` costs in
/// `[C_LB, C_UB]` and keeps the one with the highest kappa on `labeled`.
/// Ties go to the larger cost.
pub fn grid_search_c(km: &KernelMatrix, labeled: &LabeledSet, grid_size: usize) -> Result<CostEstimate> {
    if !labeled.has_both_classes() {
        return Err(LamaError::SingleClassLabels);
    }
    if grid_size == 0 {
        return Err(LamaError::InvalidParameter("cost grid needs at least one point".into()));
    }
    if let Some((id, _)) = labeled.iter().find(|(id, _)| *id >= km.n()) {
        return Err(LamaError::UnknownObservation(id));
    }
    let c_lb = find_c_lb(km)?;
    let c_ub = find_c_ub(km, c_lb)?;
    let costs = linear_grid(c_lb, c_ub, grid_size);
    let grid: Vec<GridPoint> = costs
        .par_iter()
        .map(|&cost| {
            let model = svdd::fit(km, cost)?;
            Ok(GridPoint {
                cost,
                kappa: kappa_on_labeled(&model, km, labeled)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = grid
        .iter()
        .copied()
        .reduce(|best, p| if p.kappa >= best.kappa { p } else { best })
        .expect("grid is non-empty");
    Ok(CostEstimate {
        c_lb,
        c_ub,
        c_opt: best.cost,
        quality_score: best.kappa,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use Label::{Inlier as I, Outlier as O};

    #[test]
    fn kappa_perfect_and_hand_computed() {
        assert_eq!(cohen_kappa(&[I, O, I, I], &[I, O, I, I]).unwrap(), 1.0);
        // p_o = 0.75, p_e = 0.75 * 0.5 + 0.25 * 0.5 = 0.5
        assert_abs_diff_eq!(cohen_kappa(&[I, I, O, O], &[I, I, I, O]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kappa_degenerate_and_errors() {
        assert_eq!(cohen_kappa(&[I, I, I], &[I, I, I]).unwrap(), 0.0);
        assert!(cohen_kappa(&[I], &[I, O]).is_err());
        assert!(cohen_kappa(&[], &[]).is_err());
        assert!(cohen_kappa(&[O, I], &[I, O]).unwrap() < 0.0);
    }

    #[test]
    fn kappa_of_shuffled_predictions_averages_to_zero() {
        use rand::seq::SliceRandom;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<Label> = (0..200).map(|i| if i % 5 == 0 { O } else { I }).collect();
        let mut total = 0.0;
        let reps = 2000;
        for _ in 0..reps {
            let mut pred = truth.clone();
            pred.shuffle(&mut rng);
            total += cohen_kappa(&pred, &truth).unwrap();
        }
        assert!((total / reps as f64).abs() < 0.01);
    }

    fn blob(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>())
    }

    #[test]
    fn c_lb_is_one_over_n() {
        for n in [4, 100] {
            let km = KernelMatrix::gram(&blob(n, n as u64), 1.0).unwrap();
            let c = find_c_lb(&km).unwrap();
            assert!((c - 1.0 / n as f64).abs() <= SEARCH_TOLERANCE, "n = {n}: {c}");
            assert!(c >= 1.0 / n as f64);
        }
    }

    #[test]
    fn c_ub_single_cluster_below_one() {
        let km = KernelMatrix::gram(&blob(40, 9), 2.0).unwrap();
        let lb = find_c_lb(&km).unwrap();
        let ub = find_c_ub(&km, lb).unwrap();
        assert!(ub >= lb);
        assert!(ub < 1.0);
        assert!(all_inliers(&km, ub).unwrap());
    }

    #[test]
    fn grid_search_ordering_and_tie_break() {
        let km = KernelMatrix::gram(&blob(40, 10), 3.0).unwrap();
        let labeled = LabeledSet::new([0, 1, 2], [3]).unwrap();
        let est = grid_search_c(&km, &labeled, 20).unwrap();
        assert!(est.c_lb <= est.c_opt && est.c_opt <= est.c_ub && est.c_ub <= 1.0);
        assert_eq!(est.grid.len(), 20);
        let best = est.grid.iter().map(|p| p.kappa).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(est.quality_score, best);
        let largest_best = est
            .grid
            .iter()
            .filter(|p| p.kappa == best)
            .map(|p| p.cost)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(est.c_opt, largest_best);
    }

    #[test]
    fn grid_search_needs_both_classes() {
        let km = KernelMatrix::gram(&blob(10, 11), 3.0).unwrap();
        assert!(matches!(
            grid_search_c(&km, &LabeledSet::new([0, 1], []).unwrap(), 5),
            Err(LamaError::SingleClassLabels)
        ));
    }
}
