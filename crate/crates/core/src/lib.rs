//! Population-personalized federated learning over generalized linear
//! models.
//!
//! A population model holds `K` canonical GLMs `θ = [θ_1, …, θ_K]` and one
//! membership vector `c_i` on the probability simplex per client. Clients'
//! personalized models combine the canonical models through their memberships.
//! Training minimizes
//!
//! ```text
//! F(θ, C) = Σ_i p_i f_i(θ, c_i) + λ Σ_{i<j} w_ij ‖c_i − c_j‖²
//! ```
//!
//! by random block coordinate descent ([`optim::rbcd_run`]): θ-rounds run
//! local SGD with delta aggregation and C-rounds take entropic mirror steps on
//! a majorizer of the Laplacian coupling. An alternating variant, baselines,
//! synthetic benchmarks and diagnostics complete the lab.

pub mod baselines;
pub mod config;
pub mod data;
pub mod datagen;
pub mod error;
pub mod fedsim;
pub mod graph;
pub mod linalg;
pub mod membership;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;

pub use config::{Algorithm, BatchSize, EtaSchedule, RunConfig};
pub use data::{LabeledDataset, Task};
pub use error::{PpflError, Result};
pub use fedsim::ClientShard;
pub use graph::AffinityGraph;
pub use membership::{MembershipMatrix, MembershipVector};
pub use metrics::RunTrajectory;
pub use model::{Architecture, CanonicalEnsemble, Link};
pub use optim::BlockState;
pub use rng::RngStream;
