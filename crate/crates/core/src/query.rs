//! Min-Max Alignment query strategy and the active-learning loop.
//!
//! Each iteration relabels, rebuilds the alignment mask, re-optimizes
//! `gamma`, and then scores a random candidate subset of the unlabeled
//! pool by
//!
//! ```text
//! tau(x) = min(|a_local - a_local^in(x)|, |a_local - a_local^out(x)|)
//! ```
//!
//! where the hypothetical alignments are evaluated at the current
//! `gamma_opt`. The candidate with the largest `tau` is sent to the oracle.

use std::sync::Arc;

use log::debug;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    build_masks, masked_alignment, optimize_gamma, relabel, AlignmentMask, AlignmentResult, GammaSearch, LabelPools,
};
use crate::cost;
use crate::dataset::Dataset;
use crate::error::{LamaError, Result};
use crate::kernel::{CenteredGram, KernelMatrix, SquaredDistances};
use crate::labels::{Label, LabeledSet};
use crate::neighborhoods::{NeighborhoodIndex, NeighborhoodOptions};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStrategy {
    #[default]
    MinMaxAlignment,
    /// Uniform draw from the unlabeled pool.
    Random,
}

/// How a candidate enters the hypothetical pools when scoring it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypotheticalMode {
    /// The candidate joins the relabeled pool and also adds its own mask
    /// rows, as if the oracle had labeled it.
    #[default]
    RawRows,
    /// The candidate only joins the relabeled pool.
    PoolOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub k: usize,
    /// Target size of the labeled set `|L|`.
    pub budget: usize,
    /// Candidate subset size `|S|`.
    pub sample_size: usize,
    pub seed: u64,
    pub initial_inliers: usize,
    pub initial_outliers: usize,
    pub strategy: QueryStrategy,
    pub hypothetical: HypotheticalMode,
    pub include_self: bool,
    pub gamma_search: GammaSearch,
    /// When set, `C` is re-estimated on a grid of this size after every
    /// iteration and recorded in the trace.
    pub trace_cost_grid: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            k: 5,
            budget: 50,
            sample_size: 100,
            seed: 0,
            initial_inliers: 2,
            initial_outliers: 2,
            strategy: QueryStrategy::MinMaxAlignment,
            hypothetical: HypotheticalMode::RawRows,
            include_self: true,
            gamma_search: GammaSearch::default(),
            trace_cost_grid: None,
        }
    }
}

pub trait Oracle {
    /// Label for `id`, or `None` if the oracle gives up.
    fn ask(&mut self, id: usize) -> Option<Label>;
}

/// Answers from known ground truth.
pub struct GroundTruthOracle<'a> {
    labels: &'a [Label],
}

impl<'a> GroundTruthOracle<'a> {
    pub fn new(labels: &'a [Label]) -> Self {
        GroundTruthOracle { labels }
    }
}

impl Oracle for GroundTruthOracle<'_> {
    fn ask(&mut self, id: usize) -> Option<Label> {
        self.labels.get(id).copied()
    }
}

impl<F: FnMut(usize) -> Option<Label>> Oracle for F {
    fn ask(&mut self, id: usize) -> Option<Label> {
        self(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub query_id: usize,
    pub oracle_label: Label,
    pub tau_value: Option<f64>,
    pub gamma_opt: f64,
}

/// One line of the alignment trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub gamma_opt: f64,
    pub a_local: f64,
    pub relabeled_inliers: usize,
    pub relabeled_outliers: usize,
    pub mask_size: usize,
    /// True when the mask was empty and gamma fell back.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_opt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
}

/// Resumable loop state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub pools: LabelPools,
    pub iteration: usize,
    pub budget: usize,
    pub gamma_opt: f64,
    pub a_local: f64,
    pub sample_size: usize,
    /// Random streams are derived from this seed and the iteration, so the
    /// pair fully determines the generator state.
    pub rng_seed: u64,
    pub initial_pool_size: usize,
    pub history: Vec<HistoryEntry>,
}

impl SessionState {
    pub fn labeled(&self) -> &LabeledSet {
        &self.pools.labeled
    }
}

/// Result of scanning one candidate subset.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryChoice {
    pub id: usize,
    pub tau: Option<f64>,
    /// Candidates in scan order with their scores (empty for random
    /// selection).
    pub candidates: Vec<(usize, f64)>,
}

/// Min-Max Alignment score of unlabeled `x` at fixed `gamma`.
pub fn tau_mma(
    x: usize,
    pools: &LabelPools,
    a_local: f64,
    idx: &NeighborhoodIndex,
    centered: &CenteredGram<'_>,
    mode: HypotheticalMode,
) -> Result<f64> {
    let as_raw = mode == HypotheticalMode::RawRows;
    let hypothetical = |label| -> Result<f64> {
        let pools = pools.with_hypothesis(x, label, as_raw)?;
        alignment_or_zero(&pools, idx, centered)
    };
    let a_in = hypothetical(Label::Inlier)?;
    let a_out = hypothetical(Label::Outlier)?;
    Ok((a_local - a_in).abs().min((a_local - a_out).abs()))
}

fn alignment_or_zero(pools: &LabelPools, idx: &NeighborhoodIndex, centered: &CenteredGram<'_>) -> Result<f64> {
    let mask = build_masks(pools, idx);
    match masked_alignment(|i, j| centered.entry(i, j), pools, &mask) {
        Err(LamaError::EmptyMask) => Ok(0.0),
        other => other,
    }
}

/// Draws the candidate subset for `iteration` and returns the first
/// candidate with maximal score.
pub fn select_query(
    state: &SessionState,
    idx: &NeighborhoodIndex,
    dist: &SquaredDistances,
    config: &LoopConfig,
) -> Result<QueryChoice> {
    let unlabeled = state.pools.labeled.unlabeled(idx.len());
    if unlabeled.is_empty() {
        return Err(LamaError::EmptyPool);
    }
    let mut rng = rng::stream(state.rng_seed, rng::STREAM_QUERY, state.iteration as u64);

    if config.strategy == QueryStrategy::Random {
        let id = unlabeled[rng.random_range(0..unlabeled.len())];
        return Ok(QueryChoice {
            id,
            tau: None,
            candidates: Vec::new(),
        });
    }

    let size = config.sample_size.clamp(1, unlabeled.len());
    let sample: Vec<usize> = index::sample(&mut rng, unlabeled.len(), size)
        .into_iter()
        .map(|p| unlabeled[p])
        .collect();
    let centered = CenteredGram::new(dist, state.gamma_opt, config.gamma_search.mode)?;
    let scores: Vec<f64> = sample
        .par_iter()
        .map(|&x| tau_mma(x, &state.pools, state.a_local, idx, &centered, config.hypothetical))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(QueryChoice {
        id: sample[best],
        tau: Some(scores[best]),
        candidates: sample.into_iter().zip(scores).collect(),
    })
}

/// Draws `inliers` + `outliers` ids uniformly from each ground-truth class.
pub fn draw_initial_pool(labels: &[Label], inliers: usize, outliers: usize, seed: u64) -> Result<LabeledSet> {
    let inlier_ids: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_inlier()).collect();
    let outlier_ids: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_inlier()).collect();
    if inlier_ids.len() < inliers || outlier_ids.len() < outliers {
        return Err(LamaError::InsufficientClasses {
            inliers: inlier_ids.len(),
            outliers: outlier_ids.len(),
            required: inliers.max(outliers),
        });
    }
    let mut rng = rng::stream(seed, rng::STREAM_INITIAL_POOL, 0);
    let pick = |ids: &[usize], count: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
        index::sample(rng, ids.len(), count)
            .into_iter()
            .map(|p| ids[p])
            .collect()
    };
    let chosen_in = pick(&inlier_ids, inliers, &mut rng);
    let chosen_out = pick(&outlier_ids, outliers, &mut rng);
    LabeledSet::new(chosen_in, chosen_out)
}

/// The active-learning loop as a resumable state machine: after
/// construction and after every answer, the next query (if any) is ready.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    data: Arc<Dataset>,
    dist: Arc<SquaredDistances>,
    index: NeighborhoodIndex,
    config: LoopConfig,
    state: SessionState,
    mask: AlignmentMask,
    trace: Vec<TraceEntry>,
    pending: Option<QueryChoice>,
}

impl ActiveLearner {
    /// Starts a loop whose initial pool is drawn from the ground truth.
    pub fn new(data: Arc<Dataset>, config: LoopConfig) -> Result<Self> {
        let labeled = draw_initial_pool(
            data.labels(),
            config.initial_inliers,
            config.initial_outliers,
            config.seed,
        )?;
        Self::with_labels(data, config, labeled)
    }

    /// Starts a loop from a designated initial pool.
    pub fn with_labels(data: Arc<Dataset>, config: LoopConfig, labeled: LabeledSet) -> Result<Self> {
        let dist = Arc::new(SquaredDistances::from_points(data.x()));
        Self::with_distances(data, dist, config, labeled)
    }

    pub fn with_distances(
        data: Arc<Dataset>,
        dist: Arc<SquaredDistances>,
        config: LoopConfig,
        labeled: LabeledSet,
    ) -> Result<Self> {
        if let Some((id, _)) = labeled.iter().find(|(id, _)| *id >= data.len()) {
            return Err(LamaError::UnknownObservation(id));
        }
        let index = NeighborhoodIndex::from_distances(
            &dist,
            NeighborhoodOptions {
                k: config.k,
                include_self: config.include_self,
            },
        )?;
        let pools = relabel(&labeled, &index);
        let state = SessionState {
            initial_pool_size: labeled.len(),
            pools,
            iteration: 0,
            budget: config.budget,
            gamma_opt: 0.0,
            a_local: 0.0,
            sample_size: config.sample_size,
            rng_seed: config.seed,
            history: Vec::new(),
        };
        let mut learner = ActiveLearner {
            data,
            dist,
            index,
            config,
            state,
            mask: AlignmentMask::default(),
            trace: Vec::new(),
            pending: None,
        };
        learner.advance()?;
        Ok(learner)
    }

    /// Rebuilds a learner from a checkpointed state.
    pub fn resume(data: Arc<Dataset>, config: LoopConfig, state: SessionState) -> Result<Self> {
        let dist = Arc::new(SquaredDistances::from_points(data.x()));
        let index = NeighborhoodIndex::from_distances(
            &dist,
            NeighborhoodOptions {
                k: config.k,
                include_self: config.include_self,
            },
        )?;
        let mut learner = ActiveLearner {
            data,
            dist,
            index,
            config,
            state,
            mask: AlignmentMask::default(),
            trace: Vec::new(),
            pending: None,
        };
        learner.advance()?;
        Ok(learner)
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn distances(&self) -> &Arc<SquaredDistances> {
        &self.dist
    }

    pub fn index(&self) -> &NeighborhoodIndex {
        &self.index
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn pending(&self) -> Option<&QueryChoice> {
        self.pending.as_ref()
    }

    pub fn pending_query(&self) -> Option<usize> {
        self.pending.as_ref().map(|q| q.id)
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_none()
    }

    pub fn alignment(&self) -> AlignmentResult {
        AlignmentResult {
            gamma_opt: self.state.gamma_opt,
            a_local: self.state.a_local,
            mask: self.mask.clone(),
            pools: self.state.pools.clone(),
        }
    }

    /// Records the oracle's answer to the pending query and prepares the
    /// next one.
    pub fn answer(&mut self, id: usize, label: Label) -> Result<()> {
        let pending = self.pending.as_ref().ok_or(LamaError::NoPendingQuery)?;
        if pending.id != id {
            return Err(LamaError::StaleAnswer {
                answered: id,
                pending: pending.id,
            });
        }
        let entry = HistoryEntry {
            iter: self.state.iteration,
            query_id: id,
            oracle_label: label,
            tau_value: pending.tau,
            gamma_opt: self.state.gamma_opt,
        };
        let mut labeled = self.state.pools.labeled.clone();
        labeled.insert(id, label)?;
        self.state.history.push(entry);
        self.state.iteration += 1;
        self.state.pools = relabel(&labeled, &self.index);
        self.advance()
    }

    fn budget_reached(&self) -> bool {
        self.state.pools.labeled.len() >= self.state.budget || self.state.pools.labeled.len() >= self.data.len()
    }

    /// Mask, gamma and alignment for the current pools, then the next query.
    fn advance(&mut self) -> Result<()> {
        let search = &self.config.gamma_search;
        let (result, fallback) = match optimize_gamma(&self.dist, &self.state.pools, &self.index, search) {
            Ok(r) => (r, false),
            Err(LamaError::EmptyMask) => {
                let gamma = if self.state.iteration > 0 && self.state.gamma_opt > 0.0 {
                    self.state.gamma_opt
                } else {
                    search.median_heuristic(&self.dist)?
                };
                debug!(
                    "empty alignment mask at iteration {}, keeping gamma = {gamma}",
                    self.state.iteration
                );
                let r = AlignmentResult {
                    gamma_opt: gamma,
                    a_local: 0.0,
                    mask: AlignmentMask::default(),
                    pools: self.state.pools.clone(),
                };
                (r, true)
            }
            Err(e) => return Err(e),
        };
        self.state.gamma_opt = result.gamma_opt;
        self.state.a_local = result.a_local;
        self.mask = result.mask;

        let (c_opt, quality_score) = match self.config.trace_cost_grid {
            Some(grid) if self.state.pools.labeled.has_both_classes() => {
                let km = KernelMatrix::from_distances(&self.dist, self.state.gamma_opt, search.mode)?;
                let est = cost::grid_search_c(&km, &self.state.pools.labeled, grid)?;
                (Some(est.c_opt), Some(est.quality_score))
            }
            _ => (None, None),
        };
        self.trace.push(TraceEntry {
            iter: self.state.iteration,
            gamma_opt: self.state.gamma_opt,
            a_local: self.state.a_local,
            relabeled_inliers: self.state.pools.relabeled_inliers().len(),
            relabeled_outliers: self.state.pools.relabeled_outliers().len(),
            mask_size: self.mask.len(),
            fallback,
            c_opt,
            quality_score,
        });

        self.pending = if self.budget_reached() {
            None
        } else {
            Some(select_query(&self.state, &self.index, &self.dist, &self.config)?)
        };
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub state: SessionState,
    pub alignment: AlignmentResult,
    pub trace: Vec<TraceEntry>,
    /// False when the oracle stopped answering before the budget was spent.
    pub complete: bool,
}

/// Runs the loop until the budget is reached or the oracle aborts.
pub fn run_loop(data: Arc<Dataset>, oracle: &mut dyn Oracle, config: LoopConfig) -> Result<LoopOutcome> {
    let learner = ActiveLearner::new(data, config)?;
    drive(learner, oracle)
}

/// Runs an already constructed learner to completion.
pub fn drive(mut learner: ActiveLearner, oracle: &mut dyn Oracle) -> Result<LoopOutcome> {
    let mut complete = true;
    while let Some(id) = learner.pending_query() {
        match oracle.ask(id) {
            Some(label) => learner.answer(id, label)?,
            None => {
                complete = false;
                break;
            }
        }
    }
    Ok(LoopOutcome {
        alignment: learner.alignment(),
        state: learner.state,
        trace: learner.trace,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> Arc<Dataset> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n_in = 50;
        let n_out = 6;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_in {
            values.push(normal.sample(&mut rng));
            values.push(normal.sample(&mut rng));
            labels.push(Label::Inlier);
        }
        for i in 0..n_out {
            let angle = i as f64;
            values.push(8.0 * angle.cos());
            values.push(8.0 * angle.sin());
            labels.push(Label::Outlier);
        }
        let x = DMatrix::from_row_slice(n_in + n_out, 2, &values);
        Arc::new(Dataset::new("blobs", x, labels).unwrap())
    }

    fn small_config() -> LoopConfig {
        LoopConfig {
            budget: 12,
            sample_size: 20,
            seed: 5,
            gamma_search: GammaSearch {
                grid_points: 12,
                refine_iterations: 6,
                ..GammaSearch::default()
            },
            ..LoopConfig::default()
        }
    }

    #[test]
    fn zero_budget_runs_no_queries() {
        let data = blobs(1);
        let config = LoopConfig {
            budget: 0,
            ..small_config()
        };
        let mut oracle = GroundTruthOracle::new(data.labels());
        let out = run_loop(data.clone(), &mut oracle, config).unwrap();
        assert!(out.state.history.is_empty());
        assert!(out.complete);
        assert!(out.alignment.gamma_opt > 0.0);
        assert_eq!(out.state.labeled().len(), 4);
    }

    #[test]
    fn ground_truth_history_and_pool_growth() {
        let data = blobs(2);
        let mut oracle = GroundTruthOracle::new(data.labels());
        let out = run_loop(data.clone(), &mut oracle, small_config()).unwrap();
        assert_eq!(out.state.labeled().len(), 12);
        assert_eq!(out.state.history.len(), out.state.iteration);
        assert_eq!(
            out.state.labeled().len() - out.state.initial_pool_size,
            out.state.iteration
        );
        let mut seen = std::collections::BTreeSet::new();
        for h in &out.state.history {
            assert_eq!(h.oracle_label, data.labels()[h.query_id]);
            assert!(seen.insert(h.query_id));
            assert!(h.tau_value.unwrap() >= 0.0);
        }
        assert_eq!(out.trace.len(), out.state.iteration + 1);
    }

    #[test]
    fn same_seed_same_run() {
        let data = blobs(3);
        let run = || {
            let mut oracle = GroundTruthOracle::new(data.labels());
            run_loop(data.clone(), &mut oracle, small_config()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn oracle_abort_is_incomplete() {
        let data = blobs(4);
        let mut answered = 0;
        let truth = data.labels().to_vec();
        let mut oracle = |id: usize| {
            answered += 1;
            (answered <= 3).then(|| truth[id])
        };
        let out = run_loop(data, &mut oracle, small_config()).unwrap();
        assert!(!out.complete);
        assert_eq!(out.state.history.len(), 3);
    }

    #[test]
    fn answer_must_match_pending_query() {
        let data = blobs(5);
        let mut learner = ActiveLearner::new(data, small_config()).unwrap();
        let q = learner.pending_query().unwrap();
        let other = (0..56)
            .find(|&i| i != q && !learner.state().labeled().contains(i))
            .unwrap();
        assert!(matches!(
            learner.answer(other, Label::Inlier),
            Err(LamaError::StaleAnswer { .. })
        ));
        learner.answer(q, Label::Inlier).unwrap();
        assert_eq!(learner.state().history.len(), 1);
    }

    #[test]
    fn chosen_query_dominates_candidates() {
        let data = blobs(6);
        let learner = ActiveLearner::new(data, small_config()).unwrap();
        let choice = learner.pending().unwrap();
        let tau = choice.tau.unwrap();
        assert!(choice.candidates.iter().all(|&(_, t)| t <= tau));
        let first_max = choice.candidates.iter().find(|&&(_, t)| t == tau).unwrap().0;
        assert_eq!(first_max, choice.id);
    }

    #[test]
    fn single_unlabeled_candidate_is_chosen() {
        let data = blobs(7);
        let n = data.len();
        let labeled = LabeledSet::new(0..n - 2, [n - 1]).unwrap();
        let config = LoopConfig {
            budget: n,
            ..small_config()
        };
        let learner = ActiveLearner::with_labels(data, config, labeled).unwrap();
        assert_eq!(learner.pending_query(), Some(n - 2));
    }

    #[test]
    fn random_strategy_shares_initial_pool() {
        let data = blobs(8);
        let mma = ActiveLearner::new(data.clone(), small_config()).unwrap();
        let random = ActiveLearner::new(
            data,
            LoopConfig {
                strategy: QueryStrategy::Random,
                ..small_config()
            },
        )
        .unwrap();
        assert_eq!(mma.state().labeled(), random.state().labeled());
        assert!(random.pending().unwrap().tau.is_none());
    }

    #[test]
    fn resume_reproduces_pending_query() {
        let data = blobs(9);
        let mut learner = ActiveLearner::new(data.clone(), small_config()).unwrap();
        for _ in 0..3 {
            let q = learner.pending_query().unwrap();
            learner.answer(q, data.labels()[q]).unwrap();
        }
        let state: SessionState = serde_json::from_str(&serde_json::to_string(learner.state()).unwrap()).unwrap();
        let resumed = ActiveLearner::resume(data, small_config(), state).unwrap();
        assert_eq!(resumed.pending(), learner.pending());
        assert_eq!(resumed.state(), learner.state());
    }

    #[test]
    fn trace_cost_records_estimates() {
        let data = blobs(10);
        let config = LoopConfig {
            budget: 5,
            trace_cost_grid: Some(5),
            ..small_config()
        };
        let mut oracle = GroundTruthOracle::new(data.labels());
        let out = run_loop(data.clone(), &mut oracle, config).unwrap();
        assert!(out.trace.iter().all(|t| t.c_opt.is_some() && t.quality_score.is_some()));
    }
}
