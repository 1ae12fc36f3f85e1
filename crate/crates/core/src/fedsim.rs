//! Bulk-synchronous federation: client shards, message accounting and the
//! per-round protocols that wrap the optimizer's block updates.
//!
//! Messages are simulated. The [`CommLedger`] counts floats moved per round,
//! which is the observable notion of communication cost here.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{PpflError, Result};
use crate::graph::AffinityGraph;
use crate::membership::MembershipMatrix;
use crate::model::{self, Architecture, Link};
use crate::optim::{self, BatchMode, BlockState, RoundContext};
use crate::rng::Purpose;

/// One client's train/test data and aggregation weight `p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub weight: f64,
}

/// Builds shards weighted by training-set size, `p_i = n_i / n`.
pub fn shards_by_size(splits: Vec<(LabeledDataset, LabeledDataset)>) -> Result<Vec<ClientShard>> {
    let n: usize = splits.iter().map(|(tr, _)| tr.len()).sum();
    if n == 0 {
        return Err(PpflError::EmptyShard);
    }
    splits
        .into_iter()
        .enumerate()
        .map(|(id, (train, test))| {
            if train.is_empty() {
                return Err(PpflError::Data(format!("client {id} has no training data")));
            }
            let weight = train.len() as f64 / n as f64;
            Ok(ClientShard {
                id,
                train,
                test,
                weight,
            })
        })
        .collect()
}

/// Checks `p_i > 0` and `Σ p_i = 1 ± 1e-9`.
pub fn validate_weights(shards: &[ClientShard]) -> Result<()> {
    if shards.is_empty() {
        return Err(PpflError::InvalidArgument("no clients".into()));
    }
    if let Some(s) = shards.iter().find(|s| !(s.weight > 0.0)) {
        return Err(PpflError::InvalidArgument(format!(
            "client {} has nonpositive weight {}",
            s.id, s.weight
        )));
    }
    let total: f64 = shards.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PpflError::InvalidArgument(format!(
            "client weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Affinity for a federation: cosine similarity of label histograms for
/// classification, the all-ones graph for regression.
pub fn default_affinity(shards: &[ClientShard]) -> Result<AffinityGraph> {
    let hists: Option<Vec<Vec<f64>>> = shards.iter().map(|s| s.train.label_histogram()).collect();
    match hists {
        Some(h) if h.len() >= 2 => AffinityGraph::from_label_histograms(&h),
        _ => Ok(AffinityGraph::all_ones(shards.len())),
    }
}

/// Floats moved in one round, summed over clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommDelta {
    pub broadcast: u64,
    pub upload: u64,
    pub sync: u64,
}

impl CommDelta {
    pub fn total(&self) -> u64 {
        self.broadcast + self.upload + self.sync
    }

    /// RBCD θ-round: each client receives θ, uploads its delta, and receives
    /// the aggregated θ.
    pub fn rbcd_theta(model_floats: usize, clients: usize) -> Self {
        let per = (model_floats * clients) as u64;
        Self {
            broadcast: per,
            upload: per,
            sync: per,
        }
    }

    /// RBCD C-round: each client receives its slice `λ(LC)_i`, uploads its
    /// membership gradient, and receives its updated `c_i`.
    pub fn rbcd_membership(k: usize, clients: usize) -> Self {
        let per = (k * clients) as u64;
        Self {
            broadcast: per,
            upload: per,
            sync: per,
        }
    }

    /// Alternating round: θ and `λ(LC)_i` down, delta and `c_i` up, no
    /// closing synchronization.
    pub fn alternating(model_floats: usize, k: usize, clients: usize) -> Self {
        let per = ((model_floats + k) * clients) as u64;
        Self {
            broadcast: per,
            upload: per,
            sync: 0,
        }
    }

    /// Clustered FL round: all `K` cluster models down, one model up.
    pub fn clustered(single_model_floats: usize, k: usize, clients: usize) -> Self {
        Self {
            broadcast: (single_model_floats * k * clients) as u64,
            upload: (single_model_floats * clients) as u64,
            sync: 0,
        }
    }
}

/// Per-round float counts and running totals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommLedger {
    /// Feature dimension `d` of one canonical model.
    pub model_dim: usize,
    /// Floats in one canonical model (`d` times the number of link outputs).
    pub canonical_dim: usize,
    pub k: usize,
    pub rounds: Vec<CommDelta>,
    pub totals: CommDelta,
}

/// Floats per client per round for the population model versus a strawman
/// that broadcasts `K` replicas of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommComparison {
    /// `K·s + K`: all canonical models plus the membership slice.
    pub ppfl_floats: u64,
    /// `K · (K·s)`.
    pub replicated_floats: u64,
    pub ratio: f64,
}

impl CommLedger {
    pub fn new(model_dim: usize, canonical_dim: usize, k: usize) -> Self {
        Self {
            model_dim,
            canonical_dim,
            k,
            ..Self::default()
        }
    }

    pub fn record(&mut self, delta: CommDelta) {
        self.totals.broadcast += delta.broadcast;
        self.totals.upload += delta.upload;
        self.totals.sync += delta.sync;
        self.rounds.push(delta);
    }

    pub fn cumulative_floats(&self) -> u64 {
        self.totals.total()
    }

    /// Floats in the full population model `θ` (`K` canonical models).
    pub fn model_floats(&self) -> usize {
        self.canonical_dim * self.k
    }

    pub fn comparison(&self) -> CommComparison {
        let model = self.model_floats() as u64;
        let k = self.k as u64;
        let ppfl_floats = model + k;
        let replicated_floats = k * model;
        CommComparison {
            ppfl_floats,
            replicated_floats,
            ratio: ppfl_floats as f64 / replicated_floats as f64,
        }
    }
}

/// Which block a round updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Theta,
    Membership,
    Both,
    Local,
    Cluster,
}

impl Block {
    pub fn as_str(self) -> &'static str {
        match self {
            Block::Theta => "theta",
            Block::Membership => "membership",
            Block::Both => "both",
            Block::Local => "local",
            Block::Cluster => "cluster",
        }
    }
}

fn batch_modes(ctx: &RoundContext<'_>) -> Vec<BatchMode> {
    (0..ctx.shards.len())
        .map(|i| BatchMode {
            size: ctx.batch_size,
            rng: Some(ctx.root.derive(ctx.round as u64, i as u64, Purpose::Batch)),
        })
        .collect()
}

/// θ-block round: every client runs its local steps; the server aggregates
/// deltas in ascending client order.
pub fn theta_round(state: &BlockState, ctx: &RoundContext<'_>) -> Result<BlockState> {
    let modes = batch_modes(ctx);
    let deltas = ctx
        .shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let d = optim::theta_local_steps(
                &state.theta,
                state.c.block(i),
                s,
                ctx.local_steps,
                ctx.steps.eta1_t,
                ctx.arch,
                &modes[i],
            )?;
            Ok((s.weight, d))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockState {
        theta: optim::theta_aggregate(&state.theta, &deltas)?,
        c: state.c.clone(),
    })
}

/// C-block round.
pub fn membership_round(state: &BlockState, ctx: &RoundContext<'_>) -> Result<BlockState> {
    let modes = batch_modes(ctx);
    let c = optim::c_update(
        &state.c,
        &state.theta,
        ctx.shards,
        ctx.graph,
        ctx.lambda,
        ctx.steps.eta2_t,
        ctx.arch,
        ctx.floor,
        &modes,
    )?;
    Ok(BlockState {
        theta: state.theta.clone(),
        c,
    })
}

/// Alternating round: each client first moves `c_i` with a full-gradient
/// mirror step, then runs local θ steps conditioned on the new `c_i`.
pub fn alternating_round(state: &BlockState, ctx: &RoundContext<'_>) -> Result<BlockState> {
    let full: Vec<BatchMode> = vec![BatchMode::full(); ctx.shards.len()];
    let c = optim::c_update(
        &state.c,
        &state.theta,
        ctx.shards,
        ctx.graph,
        ctx.lambda,
        ctx.steps.eta2_t,
        ctx.arch,
        ctx.floor,
        &full,
    )?;
    let conditioned = BlockState {
        theta: state.theta.clone(),
        c,
    };
    theta_round(&conditioned, ctx)
}

/// One RBCD round on the selected block, with its message accounting.
pub fn round_protocol_rbcd(
    state: &BlockState,
    block: Block,
    ctx: &RoundContext<'_>,
) -> Result<(BlockState, CommDelta)> {
    let m = ctx.shards.len();
    match block {
        Block::Theta => Ok((
            theta_round(state, ctx)?,
            CommDelta::rbcd_theta(state.theta.num_params(), m),
        )),
        Block::Membership => Ok((
            membership_round(state, ctx)?,
            CommDelta::rbcd_membership(state.c.k(), m),
        )),
        other => Err(PpflError::InvalidArgument(format!(
            "RBCD cannot update block {other:?}"
        ))),
    }
}

pub fn round_protocol_alternating(
    state: &BlockState,
    ctx: &RoundContext<'_>,
) -> Result<(BlockState, CommDelta)> {
    Ok((
        alternating_round(state, ctx)?,
        CommDelta::alternating(state.theta.num_params(), state.c.k(), ctx.shards.len()),
    ))
}

/// Test metrics: accuracy for classification, mean squared error for
/// regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for clients with an empty test split.
    pub per_client: Vec<Option<f64>>,
    /// Weighted by `p_i`, renormalized over evaluated clients.
    pub weighted: f64,
    pub mean: f64,
}

/// Name of the test metric for a link.
pub fn metric_name(link: Link) -> &'static str {
    match link {
        Link::Identity => "mse",
        _ => "accuracy",
    }
}

/// Evaluates an arbitrary per-client predictor on `data(shard)`.
pub fn evaluate_with<F>(
    shards: &[ClientShard],
    link: Link,
    data: fn(&ClientShard) -> &LabeledDataset,
    predict: F,
) -> Result<EvalReport>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let per_client = shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ds = data(s);
            if ds.is_empty() {
                return Ok(None);
            }
            let mut acc = 0.0;
            for l in 0..ds.len() {
                let (x, y) = ds.sample(l);
                let p = predict(i, x)?;
                acc += match link {
                    Link::Identity => (p[0] - y) * (p[0] - y),
                    _ => f64::from(model::decide(link, &p) == y),
                };
            }
            Ok(Some(acc / ds.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped: Vec<usize> = per_client
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(i, _)| i)
        .collect();
    if !skipped.is_empty() {
        warn!("clients {skipped:?} have empty evaluation data and are excluded");
    }
    let mut wsum = 0.0;
    let mut wtot = 0.0;
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for (v, s) in per_client.iter().zip(shards) {
        if let Some(v) = v {
            wsum += s.weight * v;
            wtot += s.weight;
            sum += v;
            cnt += 1;
        }
    }
    let (weighted, mean) = if cnt == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (wsum / wtot, sum / cnt as f64)
    };
    Ok(EvalReport {
        per_client,
        weighted,
        mean,
    })
}

/// Personalized test metrics of a population model.
pub fn evaluate(state: &BlockState, shards: &[ClientShard], arch: Architecture) -> Result<EvalReport> {
    evaluate_with(shards, state.theta.link(), |s| &s.test, |i, x| {
        model::predict(&state.theta, state.c.block(i), x, arch)
    })
}

/// As [`evaluate`] on the training splits.
pub fn evaluate_train(
    state: &BlockState,
    shards: &[ClientShard],
    arch: Architecture,
) -> Result<EvalReport> {
    evaluate_with(shards, state.theta.link(), |s| &s.train, |i, x| {
        model::predict(&state.theta, state.c.block(i), x, arch)
    })
}

/// Membership matrix of hard assignments (rows one-hot), used for snapshots
/// of clustered runs.
pub(crate) fn one_hot(assign: &[usize], k: usize) -> MembershipMatrix {
    let rows: Vec<Vec<f64>> = assign
        .iter()
        .map(|&a| (0..k).map(|j| f64::from(j == a)).collect())
        .collect();
    MembershipMatrix::from_blocks(&rows, 0.0).expect("one-hot rows lie in the simplex")
}
