//! Run trajectories, diagnostics and export formats.

mod export;
mod glmm;
mod recovery;

pub use export::{export_run, CSV_HEADER};
pub use glmm::{glmm_equivalence_check, GlmmCheck};
pub use recovery::{align_columns, group_identification_rate, membership_recovery_gap, RecoveryGap};

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig};
use crate::fedsim::{Block, CommDelta, CommLedger, EvalReport};
use crate::membership::MembershipMatrix;
use crate::model::{CanonicalEnsemble, Link};
use crate::optim::{BlockState, CriterionRecord, SmoothnessEstimates};

/// Measurements taken after one round (round 0 is the initial state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub block: Option<Block>,
    /// `F(θ, C)` on the training shards.
    pub objective: f64,
    pub criterion: CriterionRecord,
    pub train_metric: f64,
    pub test_metric: f64,
    pub comm: CommDelta,
    pub cumulative_floats: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    pub algorithm: Algorithm,
    pub config: RunConfig,
    pub link: Link,
    pub initial: Option<RoundRecord>,
    pub rounds: Vec<RoundRecord>,
    /// Membership snapshots `(round, C)`.
    pub snapshots: Vec<(usize, MembershipMatrix)>,
    pub output_index: usize,
    pub output_weights: Vec<f64>,
    pub output_state: Option<BlockState>,
    pub final_state: Option<BlockState>,
    pub final_eval: Option<EvalReport>,
    pub ledger: CommLedger,
    pub smoothness: Option<SmoothnessEstimates>,
    /// Hard cluster assignment of clustered runs.
    pub cluster_assignment: Option<Vec<usize>>,
    /// Per-client models of the local baseline.
    pub local_models: Option<Vec<CanonicalEnsemble>>,
    pub wall_time_secs: f64,
}

impl RunTrajectory {
    pub fn new(algorithm: Algorithm, config: RunConfig, link: Link) -> Self {
        Self {
            algorithm,
            config,
            link,
            initial: None,
            rounds: Vec::new(),
            snapshots: Vec::new(),
            output_index: 0,
            output_weights: Vec::new(),
            output_state: None,
            final_state: None,
            final_eval: None,
            ledger: CommLedger::default(),
            smoothness: None,
            cluster_assignment: None,
            local_models: None,
            wall_time_secs: 0.0,
        }
    }

    /// Smallest composite criterion over the initial state and the first
    /// `upto` rounds.
    pub fn min_composite(&self, upto: usize) -> f64 {
        self.initial
            .iter()
            .chain(self.rounds.iter().take(upto))
            .map(|r| r.criterion.composite)
            .fold(f64::INFINITY, f64::min)
    }

    /// Test metric of the last round (or the initial state for `T = 0`).
    pub fn final_test_metric(&self) -> f64 {
        self.rounds
            .last()
            .or(self.initial.as_ref())
            .map_or(f64::NAN, |r| r.test_metric)
    }

    pub fn metric_name(&self) -> &'static str {
        crate::fedsim::metric_name(self.link)
    }
}
