//! Reference methods: purely local training, FedAvg and loss-based
//! clustered FL, plus the configuration-driven dispatcher shared with the
//! population runs.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::{Algorithm, RunConfig};
use crate::error::{PpflError, Result};
use crate::fedsim::{self, Block, ClientShard, CommDelta, CommLedger};
use crate::graph::AffinityGraph;
use crate::linalg::DenseMatrix;
use crate::metrics::{RoundRecord, RunTrajectory};
use crate::model::{self, CanonicalEnsemble, Link};
use crate::optim::{self, BatchMode, BlockState, CriterionRecord, StepSizes};
use crate::rng::{Purpose, RngStream};

/// Seeded initial state for `config` over `shards`: uniform memberships and
/// θ uniform on `[-init_scale, init_scale]`.
pub fn initial_state(config: &RunConfig, shards: &[ClientShard]) -> Result<BlockState> {
    let first = shards
        .first()
        .ok_or_else(|| PpflError::InvalidArgument("no clients".into()))?;
    BlockState::initial(
        first.train.dim(),
        config.k,
        Link::for_task(first.train.task()),
        shards.len(),
        config.init_scale,
        &RngStream::root(config.seed),
    )
}

/// Runs `config.algorithm`. `graph` is used by the population methods only.
pub fn run(config: &RunConfig, shards: &[ClientShard], graph: &AffinityGraph) -> Result<RunTrajectory> {
    match config.algorithm {
        Algorithm::Rbcd => optim::rbcd_run(config, shards, graph, initial_state(config, shards)?),
        Algorithm::Alternating => {
            optim::alternating_run(config, shards, graph, initial_state(config, shards)?)
        }
        Algorithm::Local => run_local(shards, config),
        Algorithm::Fedavg => run_fedavg(shards, config),
        Algorithm::ClusteredFl => run_clustered_fl(shards, config, config.k),
    }
}

fn batch_mode(config: &RunConfig, round: usize, client: usize) -> BatchMode {
    BatchMode {
        size: config.batch_size,
        rng: Some(RngStream::root(config.seed).derive(round as u64, client as u64, Purpose::Batch)),
    }
}

fn single_model_config(config: &RunConfig, algorithm: Algorithm) -> RunConfig {
    RunConfig {
        algorithm,
        k: 1,
        rho: [1.0, 0.0],
        lambda: 0.0,
        ..config.clone()
    }
}

/// FedAvg as the one-model population run: `K = 1`, θ-block only, `λ = 0`.
pub fn run_fedavg(shards: &[ClientShard], config: &RunConfig) -> Result<RunTrajectory> {
    let cfg = single_model_config(config, Algorithm::Fedavg);
    let graph = AffinityGraph::all_ones(shards.len());
    let mut traj = optim::rbcd_run(&cfg, shards, &graph, initial_state(&cfg, shards)?)?;
    traj.algorithm = Algorithm::Fedavg;
    Ok(traj)
}

/// Every client trains its own single GLM from the shared initialization
/// with the same local-step schedule as FedAvg and never communicates.
pub fn run_local(shards: &[ClientShard], config: &RunConfig) -> Result<RunTrajectory> {
    let started = Instant::now();
    let cfg = single_model_config(config, Algorithm::Local);
    cfg.validate()?;
    fedsim::validate_weights(shards)?;
    let init = initial_state(&cfg, shards)?;
    let link = init.theta.link();
    let mut models: Vec<CanonicalEnsemble> = vec![init.theta.clone(); shards.len()];
    let mut traj = RunTrajectory::new(Algorithm::Local, cfg.clone(), link);
    traj.ledger = CommLedger::new(init.theta.feature_dim(), init.theta.num_params(), 1);
    traj.initial = Some(measure_local(&models, shards, &cfg, 0, None)?);

    for t in 0..cfg.rounds {
        let steps = StepSizes::new(cfg.eta.at(t), cfg.local_steps)?;
        models = models
            .par_iter()
            .zip(shards.par_iter())
            .enumerate()
            .map(|(i, (theta, s))| {
                let d = optim::theta_local_steps(
                    theta,
                    &[1.0],
                    s,
                    cfg.local_steps,
                    steps.eta1_t,
                    cfg.architecture,
                    &batch_mode(&cfg, t, i),
                )?;
                optim::theta_aggregate(theta, &[(1.0, d)])
            })
            .collect::<Result<Vec<_>>>()?;
        traj.ledger.record(CommDelta::default());
        traj.rounds
            .push(measure_local(&models, shards, &cfg, t + 1, Some(Block::Local))?);
    }
    traj.final_eval = Some(evaluate_local(&models, shards, &cfg, |s| &s.test)?);
    traj.local_models = Some(models);
    traj.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(traj)
}

fn evaluate_local(
    models: &[CanonicalEnsemble],
    shards: &[ClientShard],
    cfg: &RunConfig,
    data: fn(&ClientShard) -> &crate::data::LabeledDataset,
) -> Result<fedsim::EvalReport> {
    fedsim::evaluate_with(shards, models[0].link(), data, |i, x| {
        model::predict(&models[i], &[1.0], x, cfg.architecture)
    })
}

/// Objective `Σ p_i f_i(θ_i)` and gradient norm `Σ p_i² ‖∇f_i(θ_i)‖²` of the
/// separable local problem.
fn measure_local(
    models: &[CanonicalEnsemble],
    shards: &[ClientShard],
    cfg: &RunConfig,
    round: usize,
    block: Option<Block>,
) -> Result<RoundRecord> {
    let parts = models
        .par_iter()
        .zip(shards.par_iter())
        .map(|(theta, s)| {
            let ev = model::loss_and_grads(theta, &[1.0], &s.train, cfg.architecture)?;
            Ok((s.weight * ev.loss, s.weight * s.weight * ev.grad_theta.frobenius_sq()))
        })
        .collect::<Result<Vec<_>>>()?;
    let objective = parts.iter().map(|p| p.0).sum();
    let g: f64 = parts.iter().map(|p| p.1).sum();
    Ok(RoundRecord {
        round,
        block,
        objective,
        criterion: CriterionRecord {
            grad_theta_norm_sq: g,
            prox_c_norm1_sq: 0.0,
            composite: g,
        },
        train_metric: evaluate_local(models, shards, cfg, |s| &s.train)?.weighted,
        test_metric: evaluate_local(models, shards, cfg, |s| &s.test)?.weighted,
        comm: CommDelta::default(),
        cumulative_floats: 0,
    })
}

fn column_model(theta: &CanonicalEnsemble, k: usize) -> Result<CanonicalEnsemble> {
    let t = theta.theta();
    CanonicalEnsemble::new(DenseMatrix::from_vec(t.rows(), 1, t.col(k))?, theta.link())
}

/// Index of the smallest loss, ties to the lowest index.
fn argmin_lowest(losses: &[f64]) -> usize {
    let mut best = 0;
    for (k, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = k;
        }
    }
    best
}

/// Loss-based clustered FL with `k` cluster models.
///
/// Each round every client evaluates all cluster models on its training data
/// and joins the one with the lowest loss. Each cluster model is then updated
/// by FedAvg over its members, with weights `p_i` renormalized within the
/// cluster. A cluster without members keeps its model.
pub fn run_clustered_fl(shards: &[ClientShard], config: &RunConfig, k: usize) -> Result<RunTrajectory> {
    let started = Instant::now();
    if k < 1 {
        return Err(PpflError::Config {
            field: "k".into(),
            reason: "must be at least 1".into(),
        });
    }
    let cfg = RunConfig {
        algorithm: Algorithm::ClusteredFl,
        k,
        lambda: 0.0,
        ..config.clone()
    };
    cfg.validate()?;
    fedsim::validate_weights(shards)?;
    let m = shards.len();
    let graph = AffinityGraph::all_ones(m);
    let mut state = initial_state(&cfg, shards)?;
    let link = state.theta.link();
    let single = state.theta.feature_dim() * link.outputs();
    let snap_rounds = cfg.snapshot_rounds();
    let mut traj = RunTrajectory::new(Algorithm::ClusteredFl, cfg.clone(), link);
    let mut ledger = CommLedger::new(state.theta.feature_dim(), single, k);
    let eta0 = cfg.eta.at(0);
    traj.initial = Some(crate::optim::measure_state(
        &state,
        &cfg,
        shards,
        &graph,
        0,
        None,
        eta0,
        CommDelta::default(),
        0,
    )?);
    if snap_rounds.contains(&0) {
        traj.snapshots.push((0, state.c.clone()));
    }
    let mut assign = vec![0usize; m];

    for t in 0..cfg.rounds {
        let steps = StepSizes::new(cfg.eta.at(t), cfg.local_steps)?;
        let columns = (0..k)
            .map(|j| column_model(&state.theta, j))
            .collect::<Result<Vec<_>>>()?;
        let updates = shards
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let losses = columns
                    .iter()
                    .map(|col| model::local_loss(col, &[1.0], &s.train, cfg.architecture))
                    .collect::<Result<Vec<_>>>()?;
                let a = argmin_lowest(&losses);
                let d = optim::theta_local_steps(
                    &columns[a],
                    &[1.0],
                    s,
                    cfg.local_steps,
                    steps.eta1_t,
                    cfg.architecture,
                    &batch_mode(&cfg, t, i),
                )?;
                Ok((a, d))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut theta = state.theta.clone();
        for (j, col) in columns.iter().enumerate() {
            let members: Vec<usize> = (0..m).filter(|&i| updates[i].0 == j).collect();
            if members.is_empty() {
                continue;
            }
            // a cluster holding every client already has weights summing to one
            let mass: f64 = if members.len() == m {
                1.0
            } else {
                members.iter().map(|&i| shards[i].weight).sum()
            };
            let deltas: Vec<(f64, DenseMatrix)> = members
                .iter()
                .map(|&i| (shards[i].weight / mass, updates[i].1.clone()))
                .collect();
            let next = optim::theta_aggregate(col, &deltas)?;
            theta.theta_mut().set_col(j, next.theta().as_slice());
        }
        for (i, u) in updates.iter().enumerate() {
            assign[i] = u.0;
        }
        state = BlockState {
            theta,
            c: fedsim::one_hot(&assign, k),
        };
        let delta = CommDelta::clustered(single, k, m);
        ledger.record(delta);
        traj.rounds.push(crate::optim::measure_state(
            &state,
            &cfg,
            shards,
            &graph,
            t + 1,
            Some(Block::Cluster),
            cfg.eta.at(t),
            delta,
            ledger.cumulative_floats(),
        )?);
        if snap_rounds.contains(&(t + 1)) {
            traj.snapshots.push((t + 1, state.c.clone()));
        }
    }
    traj.cluster_assignment = Some(assign);
    traj.final_eval = Some(fedsim::evaluate(&state, shards, cfg.architecture)?);
    traj.output_index = cfg.rounds;
    traj.output_state = Some(state.clone());
    traj.final_state = Some(state);
    traj.ledger = ledger;
    traj.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(traj)
}
