//! Locally masked kernel alignment.
//!
//! User labels are propagated through neighborhoods (inliers to their
//! k-nearest neighbors, outliers only to their symmetric nearest
//! neighbors) and resolved by majority vote. The alignment between the
//! centered Gram matrix and the ideal matrix `y' y'^T` is then computed on
//! the masked entries `M_in ∪ M_out` only, and `gamma` is chosen to
//! maximize it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::kernel::{CenteredGram, ExponentMode, KernelMatrix, SquaredDistances};
use crate::labels::{Label, LabeledSet};
use crate::neighborhoods::NeighborhoodIndex;

/// Raw oracle labels together with the relabeled pools derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPools {
    /// `L_in` and `L_out`.
    pub labeled: LabeledSet,
    /// `y'`: relabeled class per id, `None` for ids in `U'`.
    relabeled: Vec<Option<Label>>,
    pub n_in: Vec<u32>,
    pub n_out: Vec<u32>,
}

impl LabelPools {
    pub fn len(&self) -> usize {
        self.relabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relabeled.is_empty()
    }

    pub fn relabeled(&self, id: usize) -> Option<Label> {
        self.relabeled[id]
    }

    fn ids_with(&self, wanted: Option<Label>) -> Vec<usize> {
        self.relabeled
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == wanted)
            .map(|(i, _)| i)
            .collect()
    }

    /// `L_in'`
    pub fn relabeled_inliers(&self) -> Vec<usize> {
        self.ids_with(Some(Label::Inlier))
    }

    /// `L_out'`
    pub fn relabeled_outliers(&self) -> Vec<usize> {
        self.ids_with(Some(Label::Outlier))
    }

    /// `U'`
    pub fn remaining(&self) -> Vec<usize> {
        self.ids_with(None)
    }

    /// Pools as they would look if `x` were labeled `label`: `x` joins the
    /// relabeled pool of that class, and with `as_raw_label` it also
    /// contributes mask rows like an oracle label. Vote counts are not
    /// recomputed.
    pub fn with_hypothesis(&self, x: usize, label: Label, as_raw_label: bool) -> Result<LabelPools> {
        if x >= self.len() {
            return Err(LamaError::UnknownObservation(x));
        }
        if self.labeled.contains(x) {
            return Err(LamaError::AlreadyLabeled(x));
        }
        let mut next = self.clone();
        next.relabeled[x] = Some(label);
        if as_raw_label {
            next.labeled.insert(x, label)?;
        }
        Ok(next)
    }
}

/// Propagates labels and applies the majority vote
/// `ratio = n_in / (n_in + n_out)`: `ratio > 0.5` gives an inlier,
/// `ratio <= 0.5` an outlier, no votes leaves the id in `U'`.
pub fn relabel(labeled: &LabeledSet, idx: &NeighborhoodIndex) -> LabelPools {
    let n = idx.len();
    let mut n_in = vec![0u32; n];
    let mut n_out = vec![0u32; n];
    for &l in &labeled.inliers {
        for &x in idx.nn(l) {
            n_in[x] += 1;
        }
    }
    for &l in &labeled.outliers {
        for &x in idx.snn(l) {
            n_out[x] += 1;
        }
    }
    let relabeled = n_in
        .iter()
        .zip(&n_out)
        .map(|(&i, &o)| match (i, o) {
            (0, 0) => None,
            _ if 2 * i > i + o => Some(Label::Inlier),
            _ => Some(Label::Outlier),
        })
        .collect();
    LabelPools {
        labeled: labeled.clone(),
        relabeled,
        n_in,
        n_out,
    }
}

/// Kernel-matrix entries that take part in the local alignment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMask {
    /// `M_in`, sorted.
    pub inlier_pairs: Vec<(usize, usize)>,
    /// `M_out`, sorted.
    pub outlier_pairs: Vec<(usize, usize)>,
}

impl AlignmentMask {
    pub fn len(&self) -> usize {
        self.inlier_pairs.len() + self.outlier_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inlier_pairs.is_empty() && self.outlier_pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.inlier_pairs.iter().chain(&self.outlier_pairs).copied()
    }
}

/// ```text
/// M_in  = {(i,j) : i in L_in,  j in L' ∩ NN_k(i)}
/// M_out = {(i,j) : i in L_out, j in (L_out' ∩ SNN_k(i)) ∪ (L_in' ∩ NN_k(i) \ RNN_k(i))}
/// ```
/// Rows whose own relabeled class is undefined are skipped, since the
/// target entry `y'_i y'_j` does not exist for them.
pub fn build_masks(pools: &LabelPools, idx: &NeighborhoodIndex) -> AlignmentMask {
    let mut inlier_pairs = Vec::new();
    for &i in &pools.labeled.inliers {
        if pools.relabeled(i).is_none() {
            continue;
        }
        inlier_pairs.extend(
            idx.nn(i)
                .iter()
                .filter(|&&j| pools.relabeled(j).is_some())
                .map(|&j| (i, j)),
        );
    }

    let mut outlier_pairs = Vec::new();
    for &i in &pools.labeled.outliers {
        if pools.relabeled(i).is_none() {
            continue;
        }
        let similar = idx
            .snn(i)
            .iter()
            .copied()
            .filter(|&j| pools.relabeled(j) == Some(Label::Outlier));
        let dissimilar = idx
            .nn(i)
            .iter()
            .copied()
            .filter(|&j| pools.relabeled(j) == Some(Label::Inlier) && !idx.in_rnn(i, j));
        outlier_pairs.extend(similar.chain(dissimilar).map(|j| (i, j)));
    }

    inlier_pairs.sort_unstable();
    inlier_pairs.dedup();
    outlier_pairs.sort_unstable();
    outlier_pairs.dedup();
    AlignmentMask {
        inlier_pairs,
        outlier_pairs,
    }
}

/// Frobenius alignment between the kernel entries on the mask and
/// `K'_opt = y' y'^T` on the same entries; all other entries are zero in
/// both matrices.
pub fn masked_alignment<F>(entry: F, pools: &LabelPools, mask: &AlignmentMask) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if mask.is_empty() {
        return Err(LamaError::EmptyMask);
    }
    let mut cross = 0.0;
    let mut kernel_norm = 0.0;
    let mut target_norm = 0.0;
    for (i, j) in mask.pairs() {
        let (Some(yi), Some(yj)) = (pools.relabeled(i), pools.relabeled(j)) else {
            continue;
        };
        let target = yi.sign() * yj.sign();
        let k = entry(i, j);
        cross += k * target;
        kernel_norm += k * k;
        target_norm += target * target;
    }
    Ok(frobenius_ratio(cross, kernel_norm, target_norm))
}

fn frobenius_ratio(cross: f64, kernel_norm: f64, target_norm: f64) -> f64 {
    let denom = (kernel_norm * target_norm).sqrt();
    if denom > 0.0 {
        (cross / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// `a_local` on an explicit (normally centered) kernel matrix.
pub fn local_alignment(km: &KernelMatrix, pools: &LabelPools, mask: &AlignmentMask) -> Result<f64> {
    masked_alignment(|i, j| km.get(i, j), pools, mask)
}

/// Alignment over every pair of raw labeled observations, without
/// neighborhood information.
pub fn global_alignment<F>(entry: F, labeled: &LabeledSet) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if labeled.is_empty() {
        return Err(LamaError::EmptyMask);
    }
    let pairs: Vec<(usize, Label)> = labeled.iter().collect();
    let mut cross = 0.0;
    let mut kernel_norm = 0.0;
    let mut target_norm = 0.0;
    for &(i, yi) in &pairs {
        for &(j, yj) in &pairs {
            let target = yi.sign() * yj.sign();
            let k = entry(i, j);
            cross += k * target;
            kernel_norm += k * k;
            target_norm += target * target;
        }
    }
    Ok(frobenius_ratio(cross, kernel_norm, target_norm))
}

/// Deterministic search for the alignment-maximizing bandwidth: a
/// log-spaced grid between bounds derived from the median pairwise
/// distance, then golden-section refinement around the best grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaSearch {
    pub grid_points: usize,
    pub refine_iterations: usize,
    pub mode: ExponentMode,
    /// Kernel value at the median distance for the smallest gamma.
    pub kernel_at_lower: f64,
    /// Kernel value at the median distance for the largest gamma.
    pub kernel_at_upper: f64,
}

impl Default for GammaSearch {
    fn default() -> Self {
        GammaSearch {
            grid_points: 40,
            refine_iterations: 20,
            mode: ExponentMode::Squared,
            kernel_at_lower: 0.99,
            kernel_at_upper: 0.01,
        }
    }
}

/// Improvements smaller than this are treated as ties.
const TIE_TOLERANCE: f64 = 1e-12;

impl GammaSearch {
    fn median_term(&self, dist: &SquaredDistances) -> Result<f64> {
        let delta = dist.median_term(self.mode);
        if delta > 0.0 && delta.is_finite() {
            Ok(delta)
        } else {
            Err(LamaError::InvalidParameter(
                "median pairwise distance is zero, gamma bounds are undefined".into(),
            ))
        }
    }

    /// `(gamma_lo, gamma_hi)` with `exp(-gamma * delta)` equal to the
    /// configured kernel values at the median distance `delta`.
    pub fn bounds(&self, dist: &SquaredDistances) -> Result<(f64, f64)> {
        let delta = self.median_term(dist)?;
        Ok((-self.kernel_at_lower.ln() / delta, -self.kernel_at_upper.ln() / delta))
    }

    pub fn grid(&self, dist: &SquaredDistances) -> Result<Vec<f64>> {
        let (lo, hi) = self.bounds(dist)?;
        Ok(log_grid(lo, hi, self.grid_points))
    }

    /// Bandwidth with `exp(-gamma * delta) = 0.5`.
    pub fn median_heuristic(&self, dist: &SquaredDistances) -> Result<f64> {
        Ok(std::f64::consts::LN_2 / self.median_term(dist)?)
    }

    /// Returns `(gamma, objective)` maximizing `objective`, preferring the
    /// smallest gamma among ties.
    pub fn maximize<F>(&self, dist: &SquaredDistances, objective: F) -> Result<(f64, f64)>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        let grid = self.grid(dist)?;
        let values: Vec<f64> = grid.par_iter().map(|&g| objective(g)).collect::<Result<_>>()?;

        let mut best_idx = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best_idx] + TIE_TOLERANCE {
                best_idx = i;
            }
        }
        let mut best = (grid[best_idx], values[best_idx]);
        if grid.len() < 2 || self.refine_iterations == 0 {
            return Ok(best);
        }

        let mut consider = |g: f64, v: f64| {
            if v > best.1 + TIE_TOLERANCE || ((v - best.1).abs() <= TIE_TOLERANCE && g < best.0) {
                best = (g, v);
            }
        };

        let left = grid[best_idx.saturating_sub(1)].ln();
        let right = grid[(best_idx + 1).min(grid.len() - 1)].ln();
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (left, right);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = objective(c.exp())?;
        let mut fd = objective(d.exp())?;
        consider(c.exp(), fc);
        consider(d.exp(), fd);
        for _ in 0..self.refine_iterations {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = objective(c.exp())?;
                consider(c.exp(), fc);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = objective(d.exp())?;
                consider(d.exp(), fd);
            }
        }
        Ok(best)
    }
}

/// `count` values spaced evenly in log scale over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub gamma_opt: f64,
    pub a_local: f64,
    pub mask: AlignmentMask,
    pub pools: LabelPools,
}

/// `a_local` at one bandwidth, centering over the full dataset.
pub fn alignment_at(
    dist: &SquaredDistances,
    gamma: f64,
    mode: ExponentMode,
    pools: &LabelPools,
    mask: &AlignmentMask,
) -> Result<f64> {
    if mask.is_empty() {
        return Err(LamaError::EmptyMask);
    }
    let centered = CenteredGram::new(dist, gamma, mode)?;
    masked_alignment(|i, j| centered.entry(i, j), pools, mask)
}

/// Finds `gamma_opt` for fixed pools. The mask depends only on labels and
/// neighborhoods, so it is built once and reused across the sweep.
pub fn optimize_gamma(
    dist: &SquaredDistances,
    pools: &LabelPools,
    idx: &NeighborhoodIndex,
    search: &GammaSearch,
) -> Result<AlignmentResult> {
    let mask = build_masks(pools, idx);
    if mask.is_empty() {
        return Err(LamaError::EmptyMask);
    }
    let (gamma_opt, a_local) = search.maximize(dist, |g| alignment_at(dist, g, search.mode, pools, &mask))?;
    Ok(AlignmentResult {
        gamma_opt,
        a_local,
        mask,
        pools: pools.clone(),
    })
}

/// `gamma` maximizing the global alignment on the raw labels.
pub fn optimize_gamma_global(
    dist: &SquaredDistances,
    labeled: &LabeledSet,
    search: &GammaSearch,
) -> Result<(f64, f64)> {
    if labeled.is_empty() {
        return Err(LamaError::EmptyMask);
    }
    search.maximize(dist, |g| {
        let centered = CenteredGram::new(dist, g, search.mode)?;
        global_alignment(|i, j| centered.entry(i, j), labeled)
    })
}
