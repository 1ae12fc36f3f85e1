use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{criterion, estimate_smoothness, objective, BlockState, SmoothnessEstimates, StepSizes};
use crate::config::{Algorithm, BatchSize, RunConfig};
use crate::error::{dim_err, PpflError, Result};
use crate::fedsim::{self, Block, ClientShard, CommDelta, CommLedger};
use crate::graph::AffinityGraph;
use crate::metrics::{RoundRecord, RunTrajectory};
use crate::model::Architecture;
use crate::rng::{Purpose, RngStream};

/// Everything a single round needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub shards: &'a [ClientShard],
    pub graph: &'a AffinityGraph,
    pub lambda: f64,
    pub arch: Architecture,
    pub local_steps: usize,
    pub batch_size: BatchSize,
    pub floor: f64,
    /// Root stream of the run; per-client streams derive from it.
    pub root: RngStream,
    pub round: usize,
    pub steps: StepSizes,
}

impl<'a> RoundContext<'a> {
    pub fn new(
        config: &RunConfig,
        shards: &'a [ClientShard],
        graph: &'a AffinityGraph,
        round: usize,
    ) -> Result<Self> {
        Ok(Self {
            shards,
            graph,
            lambda: config.lambda,
            arch: config.architecture,
            local_steps: config.local_steps,
            batch_size: config.batch_size,
            floor: config.epsilon_floor,
            root: RngStream::root(config.seed),
            round,
            steps: StepSizes::with_c_scale(config.eta.at(round), config.local_steps, config.c_step_scale)?,
        })
    }
}

/// Output-sampling weights `η_t · min_h ρ_h (1 − γ_{h,t} L_h)` over the
/// rounds, the minimum taken over blocks with `ρ_h > 0`.
pub fn output_weights(
    etas: &[f64],
    rho: [f64; 2],
    smooth: &SmoothnessEstimates,
    local_steps: usize,
    c_scale: f64,
) -> Result<Vec<f64>> {
    etas.iter()
        .map(|&eta| {
            let s = StepSizes::with_c_scale(eta, local_steps, c_scale)?;
            let mut m = f64::INFINITY;
            if rho[0] > 0.0 {
                m = m.min(rho[0] * (1.0 - s.gamma1_t * smooth.l1));
            }
            if rho[1] > 0.0 {
                m = m.min(rho[1] * (1.0 - s.gamma2_t * smooth.l2));
            }
            let w = eta * m;
            if w > 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(PpflError::StepSize {
                    eta,
                    bound: smooth.rbcd_step_bound(local_steps, rho, c_scale),
                })
            }
        })
        .collect()
}

/// Draws `t'` with probability proportional to `weights[t']`.
pub fn sample_output_index(weights: &[f64], stream: &RngStream) -> Result<usize> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| PpflError::InvalidArgument(format!("output weights: {e}")))?;
    Ok(dist.sample(&mut stream.rng()))
}

pub(crate) fn check_run_inputs(
    config: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
) -> Result<()> {
    config.validate()?;
    fedsim::validate_weights(shards)?;
    if graph.m() != shards.len() {
        return dim_err(format!(
            "affinity over {} clients, {} shards",
            graph.m(),
            shards.len()
        ));
    }
    Ok(())
}

fn check_init(config: &RunConfig, shards: &[ClientShard], init: &BlockState) -> Result<()> {
    if init.c.m() != shards.len() || init.c.k() != config.k || init.theta.k() != config.k {
        return dim_err(format!(
            "initial state has {} clients x K={} (theta K={}), config K={} over {} clients",
            init.c.m(),
            init.c.k(),
            init.theta.k(),
            config.k,
            shards.len()
        ));
    }
    init.c.validate(0.0)
}

/// Measures objective, criterion and metrics of a population state.
pub(crate) fn measure(
    state: &BlockState,
    config: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    round: usize,
    block: Option<Block>,
    eta: f64,
    comm: CommDelta,
    cumulative: u64,
) -> Result<RoundRecord> {
    let arch = config.architecture;
    let objective = objective(&state.theta, &state.c, shards, graph, config.lambda, arch)?;
    let crit = criterion(
        &state.theta,
        &state.c,
        shards,
        graph,
        config.lambda,
        eta * config.c_step_scale,
        arch,
        config.epsilon_floor,
    )?;
    let train = fedsim::evaluate_train(state, shards, arch)?;
    let test = fedsim::evaluate(state, shards, arch)?;
    Ok(RoundRecord {
        round,
        block,
        objective,
        criterion: crit,
        train_metric: train.weighted,
        test_metric: test.weighted,
        comm,
        cumulative_floats: cumulative,
    })
}

fn new_ledger(init: &BlockState) -> CommLedger {
    let link = init.theta.link();
    CommLedger::new(
        init.theta.feature_dim(),
        init.theta.feature_dim() * link.outputs(),
        init.theta.k(),
    )
}

/// Random block coordinate descent.
///
/// Each round the θ-block is chosen with probability `rho[0]` and the
/// C-block otherwise. The returned trajectory carries the output iterate
/// `z^{t'}` sampled with [`output_weights`].
pub fn rbcd_run(
    config: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    init: BlockState,
) -> Result<RunTrajectory> {
    let started = Instant::now();
    check_run_inputs(config, shards, graph)?;
    check_init(config, shards, &init)?;
    let smooth = estimate_smoothness(shards, graph, config, &init.theta)?;
    let t_max = config.rounds;
    let etas: Vec<f64> = (0..t_max).map(|t| config.eta.at(t)).collect();
    if config.enforce_step_bound {
        let bound = smooth.rbcd_step_bound(config.local_steps, config.rho, config.c_step_scale);
        let eta = config.eta.max_eta();
        if eta > bound {
            return Err(PpflError::StepSize { eta, bound });
        }
    }
    let weights = output_weights(&etas, config.rho, &smooth, config.local_steps, config.c_step_scale)?;
    let root = RngStream::root(config.seed);
    let t_out = if t_max > 0 {
        sample_output_index(&weights, &root.derive(0, 0, Purpose::OutputSample))?
    } else {
        0
    };

    let snap_rounds = config.snapshot_rounds();
    let mut ledger = new_ledger(&init);
    let mut state = init;
    let mut traj = RunTrajectory::new(Algorithm::Rbcd, config.clone(), state.theta.link());
    traj.smoothness = Some(smooth);
    traj.output_weights = weights;
    traj.initial = Some(measure(
        &state,
        config,
        shards,
        graph,
        0,
        None,
        config.eta.at(0),
        CommDelta::default(),
        0,
    )?);
    if snap_rounds.contains(&0) {
        traj.snapshots.push((0, state.c.clone()));
    }
    let mut output_state = (t_max == 0).then(|| state.clone());

    for t in 0..t_max {
        if t == t_out {
            output_state = Some(state.clone());
        }
        let u: f64 = root.derive(t as u64, 0, Purpose::BlockSelect).rng().gen();
        let block = if u < config.rho[0] {
            Block::Theta
        } else {
            Block::Membership
        };
        let ctx = RoundContext::new(config, shards, graph, t)?;
        let (next, delta) = fedsim::round_protocol_rbcd(&state, block, &ctx)?;
        state = next;
        ledger.record(delta);
        traj.rounds.push(measure(
            &state,
            config,
            shards,
            graph,
            t + 1,
            Some(block),
            etas[t],
            delta,
            ledger.cumulative_floats(),
        )?);
        if snap_rounds.contains(&(t + 1)) {
            traj.snapshots.push((t + 1, state.c.clone()));
        }
    }

    traj.output_index = t_out;
    traj.output_state = output_state;
    traj.final_eval = Some(fedsim::evaluate(&state, shards, config.architecture)?);
    traj.final_state = Some(state);
    traj.ledger = ledger;
    traj.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(traj)
}

/// Alternating variant: every round updates memberships with a full-gradient
/// mirror step and then θ conditioned on the new memberships. Returns the
/// last iterate as the output.
pub fn alternating_run(
    config: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    init: BlockState,
) -> Result<RunTrajectory> {
    let started = Instant::now();
    check_run_inputs(config, shards, graph)?;
    check_init(config, shards, &init)?;
    let smooth = estimate_smoothness(shards, graph, config, &init.theta)?;
    let t_max = config.rounds;
    let etas: Vec<f64> = (0..t_max).map(|t| config.eta.at(t)).collect();
    if config.enforce_step_bound {
        let th = config.theory;
        let bound = smooth.alternating_step_bound(
            config.c_step_scale,
            t_max,
            th.delta_f,
            th.sigma_1_1,
            th.sigma_1_2,
        );
        let eta = config.eta.max_eta();
        if eta > bound {
            return Err(PpflError::StepSize { eta, bound });
        }
    }
    // both blocks move every round, so both must admit the step
    let weights = output_weights(&etas, [1.0, 1.0], &smooth, config.local_steps, config.c_step_scale)?;
    let snap_rounds = config.snapshot_rounds();
    let mut ledger = new_ledger(&init);
    let mut state = init;
    let mut traj = RunTrajectory::new(Algorithm::Alternating, config.clone(), state.theta.link());
    traj.smoothness = Some(smooth);
    traj.output_weights = weights;
    traj.initial = Some(measure(
        &state,
        config,
        shards,
        graph,
        0,
        None,
        config.eta.at(0),
        CommDelta::default(),
        0,
    )?);
    if snap_rounds.contains(&0) {
        traj.snapshots.push((0, state.c.clone()));
    }
    for t in 0..t_max {
        let ctx = RoundContext::new(config, shards, graph, t)?;
        let (next, delta) = fedsim::round_protocol_alternating(&state, &ctx)?;
        state = next;
        ledger.record(delta);
        traj.rounds.push(measure(
            &state,
            config,
            shards,
            graph,
            t + 1,
            Some(Block::Both),
            etas[t],
            delta,
            ledger.cumulative_floats(),
        )?);
        if snap_rounds.contains(&(t + 1)) {
            traj.snapshots.push((t + 1, state.c.clone()));
        }
    }
    traj.output_index = t_max;
    traj.output_state = Some(state.clone());
    traj.final_eval = Some(fedsim::evaluate(&state, shards, config.architecture)?);
    traj.final_state = Some(state);
    traj.ledger = ledger;
    traj.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(traj)
}
