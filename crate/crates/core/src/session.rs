//! One interactive tuning session driven by a human oracle.
//!
//! The session wraps an [`ActiveLearner`] and renders each pending query
//! together with a fixed 2-D projection (first two principal axes of the
//! normalized data). After the budget is spent, or when the user
//! finalizes early, `C` is estimated on the collected labels and the final
//! model is reported.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostEstimate};
use crate::dataset::Dataset;
use crate::error::{LamaError, Result};
use crate::kernel::KernelMatrix;
use crate::labels::{Label, LabeledSet};
use crate::query::{ActiveLearner, HistoryEntry, LoopConfig, SessionState, TraceEntry};
use crate::svdd::{self, SerializedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub active: LoopConfig,
    pub c_grid: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            active: LoopConfig::default(),
            c_grid: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Projected coordinates of the query and of every labeled or relabeled
/// observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub query: ProjectedPoint,
    pub labeled_inliers: Vec<ProjectedPoint>,
    pub labeled_outliers: Vec<ProjectedPoint>,
    pub relabeled_inliers: Vec<ProjectedPoint>,
    pub relabeled_outliers: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: usize,
    pub feature_vector: Vec<f64>,
    pub feature_names: Vec<String>,
    pub projection_2d: ProjectionView,
    pub iteration: usize,
    pub budget: usize,
    pub labeled: usize,
    pub gamma_opt: f64,
    pub a_local: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub gamma_opt: f64,
    pub c_opt: f64,
    pub c_lb: f64,
    pub c_ub: f64,
    /// Kappa of the final model on the labeled set.
    pub quality_score: f64,
    pub iterations: usize,
    pub finalized_early: bool,
    pub labeled: LabeledSet,
    pub model: SerializedModel,
}

/// Response of a query request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryStatus {
    Pending(QueryView),
    Finished(FinalReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub iteration: usize,
    pub gamma_opt: f64,
    pub a_local: f64,
    pub labeled_inliers: usize,
    pub labeled_outliers: usize,
    pub finished: bool,
}

/// Everything needed to rebuild a session besides the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCheckpoint {
    pub config: SessionConfig,
    pub state: SessionState,
    pub finalized: bool,
}

#[derive(Debug, Clone)]
pub struct InteractiveSession {
    learner: ActiveLearner,
    config: SessionConfig,
    projection: Vec<[f64; 2]>,
    finalized: bool,
    report: Option<FinalReport>,
}

impl InteractiveSession {
    /// Starts from a designated initial pool.
    pub fn new(data: Arc<Dataset>, config: SessionConfig, initial: LabeledSet) -> Result<Self> {
        let learner = ActiveLearner::with_labels(data, config.active.clone(), initial)?;
        Ok(Self::wrap(learner, config, false))
    }

    /// Starts with an initial pool drawn from the dataset's ground truth.
    pub fn bootstrap(data: Arc<Dataset>, config: SessionConfig) -> Result<Self> {
        let learner = ActiveLearner::new(data, config.active.clone())?;
        Ok(Self::wrap(learner, config, false))
    }

    pub fn restore(data: Arc<Dataset>, checkpoint: SessionCheckpoint) -> Result<Self> {
        if checkpoint.state.pools.len() != data.len() {
            return Err(LamaError::DimensionMismatch {
                left: checkpoint.state.pools.len(),
                right: data.len(),
            });
        }
        let learner = ActiveLearner::resume(data, checkpoint.config.active.clone(), checkpoint.state)?;
        let mut session = Self::wrap(learner, checkpoint.config, checkpoint.finalized);
        if session.is_finished() {
            session.report = session.compute_report().ok();
        }
        Ok(session)
    }

    fn wrap(learner: ActiveLearner, config: SessionConfig, finalized: bool) -> Self {
        let projection = principal_projection(learner.data().x());
        InteractiveSession {
            learner,
            config,
            projection,
            finalized,
            report: None,
        }
    }

    pub fn data(&self) -> &Arc<Dataset> {
        self.learner.data()
    }

    pub fn state(&self) -> &SessionState {
        self.learner.state()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.learner.state().history
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.learner.trace()
    }

    pub fn projection(&self) -> &[[f64; 2]] {
        &self.projection
    }

    pub fn is_finished(&self) -> bool {
        self.finalized || self.learner.is_finished()
    }

    pub fn pending_query(&self) -> Option<usize> {
        if self.finalized {
            None
        } else {
            self.learner.pending_query()
        }
    }

    pub fn checkpoint(&self) -> SessionCheckpoint {
        SessionCheckpoint {
            config: self.config.clone(),
            state: self.learner.state().clone(),
            finalized: self.finalized,
        }
    }

    fn point(&self, id: usize) -> ProjectedPoint {
        let [x, y] = self.projection[id];
        ProjectedPoint { id, x, y }
    }

    pub fn query_view(&self) -> Option<QueryView> {
        let id = self.pending_query()?;
        let state = self.learner.state();
        let points = |ids: &mut dyn Iterator<Item = usize>| ids.map(|i| self.point(i)).collect();
        let labeled = state.labeled();
        let projection_2d = ProjectionView {
            query: self.point(id),
            labeled_inliers: points(&mut labeled.inliers.iter().copied()),
            labeled_outliers: points(&mut labeled.outliers.iter().copied()),
            relabeled_inliers: points(&mut state.pools.relabeled_inliers().into_iter()),
            relabeled_outliers: points(&mut state.pools.relabeled_outliers().into_iter()),
        };
        let data = self.learner.data();
        Some(QueryView {
            query_id: id,
            feature_vector: data.row(id),
            feature_names: data.feature_names().to_vec(),
            projection_2d,
            iteration: state.iteration,
            budget: state.budget,
            labeled: labeled.len(),
            gamma_opt: state.gamma_opt,
            a_local: state.a_local,
        })
    }

    /// Current query, or the final report once the session is over.
    pub fn status(&mut self) -> Result<QueryStatus> {
        match self.query_view() {
            Some(view) => Ok(QueryStatus::Pending(view)),
            None => Ok(QueryStatus::Finished(self.result()?.clone())),
        }
    }

    /// Answers the pending query. `query_id`, when given, must name it.
    pub fn submit(&mut self, query_id: Option<usize>, label: Label) -> Result<LabelSummary> {
        let pending = self.pending_query().ok_or(LamaError::NoPendingQuery)?;
        self.learner.answer(query_id.unwrap_or(pending), label)?;
        if self.learner.is_finished() {
            self.report = Some(self.compute_report()?);
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> LabelSummary {
        let state = self.learner.state();
        LabelSummary {
            iteration: state.iteration,
            gamma_opt: state.gamma_opt,
            a_local: state.a_local,
            labeled_inliers: state.labeled().inliers.len(),
            labeled_outliers: state.labeled().outliers.len(),
            finished: self.is_finished(),
        }
    }

    /// Ends the session early. Idempotent.
    pub fn finalize(&mut self) -> Result<&FinalReport> {
        if self.report.is_none() {
            let report = self.compute_report_with(!self.learner.is_finished())?;
            self.report = Some(report);
        }
        self.finalized = true;
        Ok(self.report.as_ref().expect("report was just set"))
    }

    pub fn result(&mut self) -> Result<&FinalReport> {
        if !self.is_finished() {
            return Err(LamaError::SessionInProgress);
        }
        if self.report.is_none() {
            self.report = Some(self.compute_report()?);
        }
        Ok(self.report.as_ref().expect("report was just set"))
    }

    fn compute_report(&self) -> Result<FinalReport> {
        self.compute_report_with(self.finalized && !self.learner.is_finished())
    }

    fn compute_report_with(&self, finalized_early: bool) -> Result<FinalReport> {
        let state = self.learner.state();
        let labeled = state.labeled();
        let dist = self.learner.distances();
        let mode = self.config.active.gamma_search.mode;
        let km = KernelMatrix::from_distances(dist, state.gamma_opt, mode)?;
        let CostEstimate {
            c_lb,
            c_ub,
            c_opt,
            quality_score,
            ..
        } = cost::grid_search_c(&km, labeled, self.config.c_grid)?;
        let model = svdd::fit(&km, c_opt)?;
        Ok(FinalReport {
            gamma_opt: state.gamma_opt,
            c_opt,
            c_lb,
            c_ub,
            quality_score,
            iterations: state.iteration,
            finalized_early,
            labeled: labeled.clone(),
            model: model.serialize(),
        })
    }
}

/// Scores on the first two principal axes. Each axis is oriented so that
/// its largest-magnitude loading is positive, which makes the projection
/// a deterministic function of the data.
pub fn principal_projection(x: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let (n, m) = x.shape();
    if n == 0 {
        return Vec::new();
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / n.max(1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let axis = |rank: usize| -> Option<Vec<f64>> {
        let col = eig.eigenvectors.column(*order.get(rank)?);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |best, c| if c.abs() > best.abs() { c } else { best });
        if pivot < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        Some(v)
    };
    let (first, second) = (axis(0), axis(1));
    let score = |row: usize, v: &Option<Vec<f64>>| {
        v.as_ref()
            .map(|v| centered.row(row).iter().zip(v).map(|(a, b)| a * b).sum())
            .unwrap_or(0.0)
    };
    (0..n).map(|i| [score(i, &first), score(i, &second)]).collect()
}
