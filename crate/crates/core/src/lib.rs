//! Hyperparameter estimation for Support Vector Data Description from a
//! small, actively collected set of labels.

pub mod alignment;
pub mod bench;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod labels;
pub mod neighborhoods;
pub mod query;
mod rng;
pub mod session;
pub mod svdd;

pub use alignment::{AlignmentMask, AlignmentResult, GammaSearch, LabelPools};
pub use bench::{Method, Report, RunConfig, RunRecord};
pub use cost::{cohen_kappa, CostEstimate};
pub use dataset::{CsvOptions, Dataset, DatasetManifest};
pub use error::{LamaError, Result};
pub use kernel::{ExponentMode, KernelMatrix, SquaredDistances};
pub use labels::{Label, LabeledSet};
pub use neighborhoods::{NeighborhoodIndex, NeighborhoodOptions};
pub use query::{ActiveLearner, LoopConfig, Oracle, QueryStrategy, SessionState};
pub use session::{FinalReport, InteractiveSession, QueryStatus, QueryView, SessionCheckpoint, SessionConfig};
pub use svdd::{SerializedModel, SvddModel};
