use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::config::{Algorithm, EtaSchedule};
use crate::data::{LabeledDataset, Task};
use crate::fedsim::shards_by_size;

fn regression_shards(sizes: &[usize], d: usize, seed: u64) -> Vec<ClientShard> {
    let mut r = RngStream::root(seed).rng();
    let splits = sizes
        .iter()
        .map(|&n| {
            let mut draw = |rows: usize| {
                let x: Vec<f64> = (0..rows * d).map(|_| r.sample(StandardNormal)).collect();
                let y: Vec<f64> = (0..rows).map(|_| r.sample(StandardNormal)).collect();
                LabeledDataset::new(DenseMatrix::from_vec(rows, d, x).unwrap(), y, Task::Regression).unwrap()
            };
            let train = draw(n);
            (train, draw(3))
        })
        .collect();
    shards_by_size(splits).unwrap()
}

fn random_ensemble(d: usize, k: usize, link: Link, seed: u64) -> CanonicalEnsemble {
    CanonicalEnsemble::random_uniform(d, k, link, 0.5, &RngStream::root(seed)).unwrap()
}

fn random_simplex<R: Rng>(k: usize, r: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn full_modes(m: usize) -> Vec<BatchMode> {
    vec![BatchMode::full(); m]
}

#[test]
fn zero_gradient_is_a_fixed_point() {
    let c = [0.3, 0.5, 0.2];
    let out = exp_grad_step(&c, &[0.0; 3], 0.7, 0.0).unwrap();
    for (a, b) in out.as_slice().iter().zip(&c) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn mirror_step_hand_value() {
    let out = exp_grad_step(&[0.5, 0.5], &[4f64.ln(), 0.0], 1.0, 0.0).unwrap();
    assert!((out.as_slice()[0] - 0.2).abs() < 1e-15);
    assert!((out.as_slice()[1] - 0.8).abs() < 1e-15);
}

#[test]
fn mirror_step_shift_invariant() {
    let c = [0.1, 0.6, 0.3];
    let g = [1.5, -2.0, 0.25];
    let a = exp_grad_step(&c, &g, 0.9, 1e-6).unwrap();
    let shifted: Vec<f64> = g.iter().map(|v| v + 123.0).collect();
    let b = exp_grad_step(&c, &shifted, 0.9, 1e-6).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn mirror_step_floors_and_survives_overflow() {
    let out = exp_grad_step(&[0.5, 0.25, 0.25], &[1e6, -1e6, 0.0], 10.0, 1e-6).unwrap();
    let s: f64 = out.as_slice().iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert!(out.as_slice().iter().all(|&v| v >= 1e-6));
    assert!((out.as_slice()[1] - (1.0 - 2e-6)).abs() < 1e-12);
}

#[test]
fn mirror_step_rejects_bad_inputs() {
    assert!(exp_grad_step(&[0.5, 0.5], &[1.0, f64::NAN], 1.0, 0.0).is_err());
    assert!(exp_grad_step(&[0.5, 0.5], &[1.0, 0.0], 0.0, 0.0).is_err());
    assert!(exp_grad_step(&[0.5, 0.5], &[1.0], 1.0, 0.0).is_err());
}

#[test]
fn surrogate_touches_at_anchor_and_dominates() {
    let shards = regression_shards(&[12, 9, 15, 7], 3, 1);
    let theta = random_ensemble(3, 3, Link::Identity, 2);
    let hists = vec![
        vec![3.0, 1.0, 0.0],
        vec![1.0, 1.0, 1.0],
        vec![0.0, 2.0, 5.0],
        vec![4.0, 0.0, 1.0],
    ];
    let graphs = [AffinityGraph::all_ones(4), AffinityGraph::from_label_histograms(&hists).unwrap()];
    let mut r = RngStream::root(3).rng();
    for graph in &graphs {
        for _ in 0..25 {
            let c = MembershipMatrix::from_blocks(&(0..4).map(|_| random_simplex(3, &mut r)).collect::<Vec<_>>(), 0.0)
                .unwrap();
            let a = MembershipMatrix::from_blocks(&(0..4).map(|_| random_simplex(3, &mut r)).collect::<Vec<_>>(), 0.0)
                .unwrap();
            let arch = Architecture::PredictionMixture;
            let f = objective(&theta, &c, &shards, graph, 0.7, arch).unwrap();
            let s = surrogate_value(&c, &a, &theta, &shards, graph, 0.7, arch).unwrap();
            assert!(s >= f - 1e-10, "S = {s} below F = {f}");
            let sa = surrogate_value(&a, &a, &theta, &shards, graph, 0.7, arch).unwrap();
            let fa = objective(&theta, &a, &shards, graph, 0.7, arch).unwrap();
            assert!((sa - fa).abs() <= 1e-10);
        }
    }
}

#[test]
fn surrogate_without_coupling_is_data_term() {
    let shards = regression_shards(&[10, 10], 2, 4);
    let theta = random_ensemble(2, 2, Link::Identity, 5);
    let graph = AffinityGraph::empty(2);
    let c = MembershipMatrix::from_blocks(&[vec![0.9, 0.1], vec![0.4, 0.6]], 0.0).unwrap();
    let a = MembershipMatrix::uniform(2, 2);
    let arch = Architecture::PredictionMixture;
    let s = surrogate_value(&c, &a, &theta, &shards, &graph, 3.0, arch).unwrap();
    let f = objective(&theta, &c, &shards, &graph, 0.0, arch).unwrap();
    assert!((s - f).abs() < 1e-14);
}

/// Minimizer of `⟨g, c⟩ + KL(c ‖ c0) / η` over a grid on the 2-simplex.
fn grid_prox(c0: &[f64], g: &[f64], eta: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for step in 1..10_000 {
        let u = step as f64 * 1e-4;
        let c = [u, 1.0 - u];
        let kl: f64 = c.iter().zip(c0).map(|(a, b)| a * (a / b).ln()).sum();
        let v = g[0] * c[0] + g[1] * c[1] + kl / eta;
        if v < best.0 {
            best = (v, u);
        }
    }
    best.1
}

#[test]
fn c_update_matches_grid_prox() {
    let shards = regression_shards(&[20], 3, 6);
    let graph = AffinityGraph::empty(1);
    let mut r = RngStream::root(7).rng();
    for case in 0..20 {
        let theta = random_ensemble(3, 2, Link::Identity, 100 + case);
        let c0 = random_simplex(2, &mut r);
        let c = MembershipMatrix::from_blocks(&[c0.clone()], 0.0).unwrap();
        let eta = r.gen_range(0.1..3.0);
        let arch = Architecture::PredictionMixture;
        let next = c_update(&c, &theta, &shards, &graph, 0.0, eta, arch, 0.0, &full_modes(1)).unwrap();
        let g = model::grad_c(&theta, &c0, &shards[0].train, arch).unwrap();
        let u = grid_prox(&c0, &g, eta);
        assert!((next.block(0)[0] - u).abs() <= 2e-4);
    }
}

#[test]
fn c_update_without_signal_keeps_memberships() {
    let shards = regression_shards(&[8, 8, 8], 2, 8);
    let theta = CanonicalEnsemble::new(DenseMatrix::zeros(2, 3), Link::Identity).unwrap();
    let c = MembershipMatrix::from_blocks(
        &[vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2], vec![0.1, 0.1, 0.8]],
        0.0,
    )
    .unwrap();
    let graph = AffinityGraph::all_ones(3);
    let arch = Architecture::PredictionMixture;
    let next = c_update(&c, &theta, &shards, &graph, 0.0, 1.0, arch, 0.0, &full_modes(3)).unwrap();
    for (a, b) in next.as_slice().iter().zip(c.as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn c_update_uses_pre_update_coupling() {
    let shards = regression_shards(&[10, 12, 9], 2, 9);
    let theta = random_ensemble(2, 2, Link::Identity, 10);
    let graph = AffinityGraph::all_ones(3);
    let c = MembershipMatrix::from_blocks(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]], 0.0).unwrap();
    let (lambda, eta) = (0.3, 0.5);
    let arch = Architecture::PredictionMixture;
    let next = c_update(&c, &theta, &shards, &graph, lambda, eta, arch, 0.0, &full_modes(3)).unwrap();
    let lc = graph.laplacian_apply(c.as_slice(), 2).unwrap();
    for (i, s) in shards.iter().enumerate() {
        let gc = model::grad_c(&theta, c.block(i), &s.train, arch).unwrap();
        let g: Vec<f64> = (0..2).map(|k| s.weight * gc[k] + 2.0 * lambda * lc[2 * i + k]).collect();
        let expect = exp_grad_step(c.block(i), &g, eta, 0.0).unwrap();
        assert_eq!(next.block(i), expect.as_slice());
    }
}

#[test]
fn single_local_step_is_a_gradient_step() {
    let shards = regression_shards(&[15], 4, 11);
    let theta = random_ensemble(4, 2, Link::Identity, 12);
    let c = [0.3, 0.7];
    let arch = Architecture::ParameterMixture;
    let delta = theta_local_steps(&theta, &c, &shards[0], 1, 0.1, arch, &BatchMode::full()).unwrap();
    let g = model::grad_theta(&theta, &c, &shards[0].train, arch).unwrap();
    for (a, b) in delta.as_slice().iter().zip(g.as_slice()) {
        assert!((a + 0.1 * b).abs() <= 1e-15);
    }
}

#[test]
fn three_local_steps_match_scalar_oracle() {
    // one feature, one canonical model: f(t) = mean ½(x t − y)²
    let xs = [1.0, -2.0, 0.5, 3.0];
    let ys = [0.5, 1.0, -1.0, 2.0];
    let train = LabeledDataset::new(
        DenseMatrix::from_vec(4, 1, xs.to_vec()).unwrap(),
        ys.to_vec(),
        Task::Regression,
    )
    .unwrap();
    let shards = shards_by_size(vec![(train, LabeledDataset::empty(1, Task::Regression))]).unwrap();
    let theta = CanonicalEnsemble::new(DenseMatrix::from_vec(1, 1, vec![0.2]).unwrap(), Link::Identity).unwrap();
    let eta1 = 0.05;
    let mut t: f64 = 0.2;
    for _ in 0..3 {
        let g: f64 = xs.iter().zip(&ys).map(|(x, y)| (x * t - y) * x).sum::<f64>() / 4.0;
        t -= eta1 * g;
    }
    let delta = theta_local_steps(
        &theta,
        &[1.0],
        &shards[0],
        3,
        eta1,
        Architecture::PredictionMixture,
        &BatchMode::full(),
    )
    .unwrap();
    assert!((delta.get(0, 0) - (t - 0.2)).abs() < 1e-14);
}

#[test]
fn aggregation_cases() {
    let theta = random_ensemble(3, 2, Link::Identity, 13);
    let zero = DenseMatrix::zeros(3, 2);
    let same = theta_aggregate(&theta, &[(0.4, zero.clone()), (0.6, zero.clone())]).unwrap();
    assert_eq!(same, theta);

    let d = DenseMatrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.5]).unwrap();
    let one = theta_aggregate(&theta, &[(1.0, d.clone())]).unwrap();
    let mut expect = theta.theta().clone();
    expect.add_scaled(1.0, &d).unwrap();
    assert_eq!(one.theta(), &expect);

    let mut neg = d.clone();
    neg.scale(-1.0);
    let cancel = theta_aggregate(&theta, &[(0.5, d.clone()), (0.5, neg)]).unwrap();
    assert!(cancel.theta().max_abs_diff(theta.theta()) < 1e-15);

    assert!(theta_aggregate(&theta, &[(0.5, d.clone()), (0.4, d)]).is_err());
}

#[test]
fn criterion_vanishes_at_fixed_points() {
    // θ = 0 with zero labels: all gradients vanish
    let d = 2;
    let train = LabeledDataset::new(
        DenseMatrix::from_vec(3, d, vec![1.0, 0.0, 0.5, -1.0, 2.0, 1.0]).unwrap(),
        vec![0.0; 3],
        Task::Regression,
    )
    .unwrap();
    let shards =
        shards_by_size(vec![(train.clone(), LabeledDataset::empty(d, Task::Regression)), (train, LabeledDataset::empty(d, Task::Regression))])
            .unwrap();
    let theta = CanonicalEnsemble::new(DenseMatrix::zeros(d, 2), Link::Identity).unwrap();
    let c = MembershipMatrix::from_blocks(&[vec![0.3, 0.7], vec![0.6, 0.4]], 0.0).unwrap();
    let graph = AffinityGraph::all_ones(2);
    let rec = criterion(&theta, &c, &shards, &graph, 0.0, 1.0, Architecture::PredictionMixture, 0.0).unwrap();
    assert!(rec.composite < 1e-28);
}

#[test]
fn criterion_prox_matches_grid_oracle() {
    let shards = regression_shards(&[25], 2, 14);
    let graph = AffinityGraph::empty(1);
    let theta = random_ensemble(2, 2, Link::Identity, 15);
    let c0 = vec![0.35, 0.65];
    let c = MembershipMatrix::from_blocks(&[c0.clone()], 0.0).unwrap();
    let arch = Architecture::PredictionMixture;
    let eta = 1.3;
    let rec = criterion(&theta, &c, &shards, &graph, 0.0, eta, arch, 0.0).unwrap();
    let g = model::grad_c(&theta, &c0, &shards[0].train, arch).unwrap();
    let u = grid_prox(&c0, &g, eta);
    let dist = 2.0 * (c0[0] - u).abs();
    assert!((rec.prox_c_norm1_sq.sqrt() * eta - dist).abs() <= 4e-4);
}

#[test]
fn smoothness_of_orthonormal_design() {
    // X = sqrt(n) times orthonormal columns: XᵀX / n = I
    let n = 4.0f64;
    let x = DenseMatrix::from_vec(4, 2, vec![1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]).unwrap();
    let y = vec![1.0, 0.0, 1.0, 0.0];
    let mk = |task| {
        shards_by_size(vec![(
            LabeledDataset::new(x.clone(), y.clone(), task).unwrap(),
            LabeledDataset::empty(2, task),
        )])
        .unwrap()
    };
    assert_eq!(n, 4.0);
    let graph = AffinityGraph::empty(1);
    let cfg = RunConfig::new(Algorithm::Rbcd, 2, 1, 1, 0.01);
    let id = estimate_smoothness(&mk(Task::Regression), &graph, &cfg, &random_ensemble(2, 2, Link::Identity, 1))
        .unwrap();
    assert!((id.l1 - 1.0).abs() < 1e-9);
    let lg = estimate_smoothness(&mk(Task::Binary), &graph, &cfg, &random_ensemble(2, 2, Link::Logit, 1)).unwrap();
    assert!((lg.l1 - 0.25).abs() < 1e-9);
}

#[test]
fn membership_smoothness_scales_with_weights() {
    let shards = regression_shards(&[10, 10, 10], 3, 16);
    let theta = random_ensemble(3, 2, Link::Identity, 17);
    let graph = AffinityGraph::all_ones(3);
    let cfg = RunConfig::new(Algorithm::Rbcd, 2, 1, 1, 0.01);
    let est = estimate_smoothness(&shards, &graph, &cfg, &theta).unwrap();
    let lc = shards
        .iter()
        .map(|s| membership_smoothness(&theta, s, Architecture::PredictionMixture))
        .fold(0.0, f64::max);
    assert!((est.l2 - lc / 3.0).abs() < 1e-9 * lc);
    // the membership Hessian of the identity link is (1/n) Σ z zᵀ, z_k = xᵀθ_k
    let s = &shards[0];
    let mut h = DenseMatrix::zeros(2, 2);
    for l in 0..s.train.len() {
        let (x, _) = s.train.sample(l);
        let z: Vec<f64> = (0..2).map(|k| (0..3).map(|j| x[j] * theta.theta().get(j, k)).sum()).collect();
        for a in 0..2 {
            for b in 0..2 {
                h.add_at(a, b, z[a] * z[b] / 10.0);
            }
        }
    }
    let top = top_eigenvalue_psd(&h, 1000, 1e-14);
    assert!((membership_smoothness(&theta, s, Architecture::PredictionMixture) - top).abs() < 1e-9 * top);

    let cfg = RunConfig {
        lambda: 0.5,
        ..cfg
    };
    let with_coupling = estimate_smoothness(&shards, &graph, &cfg, &theta).unwrap();
    assert!(with_coupling.l2 > est.l2 + 2.0 * 0.5 * 2.0);
}

#[test]
fn user_smoothness_overrides() {
    let shards = regression_shards(&[5], 2, 18);
    let mut cfg = RunConfig::new(Algorithm::Rbcd, 1, 1, 1, 0.01);
    cfg.l1 = Some(2.0);
    cfg.l2 = Some(3.0);
    let est = estimate_smoothness(&shards, &AffinityGraph::empty(1), &cfg, &random_ensemble(2, 1, Link::Identity, 1))
        .unwrap();
    assert_eq!((est.l1, est.l2, est.source), (2.0, 3.0, SmoothnessSource::User));
}

#[test]
fn output_weights_at_the_bound() {
    let smooth = SmoothnessEstimates {
        l1: 1.0,
        l2: 1.0,
        source: SmoothnessSource::User,
    };
    let e = 2;
    let eta = smooth.rbcd_step_bound(e, [0.5, 0.5], 1.0);
    assert_eq!(eta, 1.0 / 64.0);
    let w = output_weights(&[eta; 10], [0.5, 0.5], &smooth, e, 1.0).unwrap();
    assert!(w.iter().all(|&v| v > 0.0));
    // the membership term vanishes exactly at η = 2/L2
    let flat = SmoothnessEstimates { l1: 1e-6, ..smooth };
    let at_edge = flat.rbcd_step_bound(1, [0.5, 0.5], 1.0);
    assert_eq!(at_edge, 2.0);
    assert!(matches!(
        output_weights(&[at_edge], [0.5, 0.5], &flat, 1, 1.0),
        Err(PpflError::StepSize { .. })
    ));
    // blocks never selected do not constrain the weights
    assert!(output_weights(&[at_edge], [1.0, 0.0], &flat, 1, 1.0).is_ok());
}

#[test]
fn alternating_bound_accepts_its_own_step() {
    let smooth = SmoothnessEstimates {
        l1: 2.0,
        l2: 4.0,
        source: SmoothnessSource::User,
    };
    let b = smooth.alternating_step_bound(1.0, 100, Some(1.0), Some(0.5), Some(0.25));
    let expect = (1.0f64 / 32.0).min(0.25).min((4.0f64 / 50.0).sqrt()).min((4.0f64 / 25.0).cbrt());
    assert!((b - expect).abs() < 1e-15);
    let w = output_weights(&[b; 5], [1.0, 1.0], &smooth, 1, 1.0).unwrap();
    assert!(w.iter().all(|&v| v > 0.0));
}

fn run_config(k: usize, rounds: usize) -> RunConfig {
    let mut cfg = RunConfig::new(Algorithm::Rbcd, k, rounds, 2, 0.01);
    cfg.lambda = 0.1;
    cfg.seed = 21;
    cfg
}

fn initial(shards: &[ClientShard], k: usize, seed: u64) -> BlockState {
    BlockState::initial(shards[0].train.dim(), k, Link::Identity, shards.len(), 0.3, &RngStream::root(seed)).unwrap()
}

#[test]
fn theta_only_runs_freeze_memberships() {
    let shards = regression_shards(&[10, 14, 9], 3, 19);
    let graph = AffinityGraph::all_ones(3);
    let cfg = RunConfig {
        rho: [1.0, 0.0],
        ..run_config(2, 6)
    };
    let init = initial(&shards, 2, 1);
    let traj = rbcd_run(&cfg, &shards, &graph, init.clone()).unwrap();
    let fin = traj.final_state.unwrap();
    assert_eq!(fin.c, init.c);
    assert_ne!(fin.theta, init.theta);
    assert!(traj.rounds.iter().all(|r| r.block == Some(crate::fedsim::Block::Theta)));
}

#[test]
fn membership_only_runs_are_independent_mirror_descent() {
    let shards = regression_shards(&[10, 14, 9], 3, 20);
    let graph = AffinityGraph::all_ones(3);
    let cfg = RunConfig {
        rho: [0.0, 1.0],
        lambda: 0.0,
        ..run_config(2, 4)
    };
    let init = initial(&shards, 2, 2);
    let traj = rbcd_run(&cfg, &shards, &graph, init.clone()).unwrap();
    let fin = traj.final_state.unwrap();
    assert_eq!(fin.theta, init.theta);
    for (i, s) in shards.iter().enumerate() {
        let mut c = init.c.block(i).to_vec();
        for _ in 0..4 {
            let g: Vec<f64> = model::grad_c(&init.theta, &c, &s.train, cfg.architecture)
                .unwrap()
                .iter()
                .map(|v| s.weight * v)
                .collect();
            c = exp_grad_step(&c, &g, 0.01, cfg.epsilon_floor).unwrap().into_inner();
        }
        assert_eq!(fin.c.block(i), c.as_slice());
    }
}

#[test]
fn runs_replay_under_a_seed() {
    let shards = regression_shards(&[10, 14, 9, 11], 3, 22);
    let graph = AffinityGraph::all_ones(4);
    let cfg = RunConfig {
        batch_size: crate::config::BatchSize::Size(4),
        ..run_config(3, 12)
    };
    let a = rbcd_run(&cfg, &shards, &graph, initial(&shards, 3, 3)).unwrap();
    let b = rbcd_run(&cfg, &shards, &graph, initial(&shards, 3, 3)).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.output_index, b.output_index);
    assert_eq!(a.final_state, b.final_state);
    let alt_cfg = RunConfig {
        algorithm: Algorithm::Alternating,
        ..cfg
    };
    let c = alternating_run(&alt_cfg, &shards, &graph, initial(&shards, 3, 3)).unwrap();
    let d = alternating_run(&alt_cfg, &shards, &graph, initial(&shards, 3, 3)).unwrap();
    assert_eq!(c.rounds, d.rounds);
}

#[test]
fn alternating_round_matches_two_step_oracle() {
    let shards = regression_shards(&[10, 14], 2, 23);
    let graph = AffinityGraph::all_ones(2);
    let cfg = RunConfig {
        algorithm: Algorithm::Alternating,
        lambda: 0.0,
        local_steps: 1,
        ..run_config(2, 1)
    };
    let init = initial(&shards, 2, 4);
    let traj = alternating_run(&cfg, &shards, &graph, init.clone()).unwrap();
    let arch = cfg.architecture;
    let eta = 0.01;
    let mut acc = DenseMatrix::zeros(2, 2);
    let mut cs = Vec::new();
    for (i, s) in shards.iter().enumerate() {
        let g: Vec<f64> = model::grad_c(&init.theta, init.c.block(i), &s.train, arch)
            .unwrap()
            .iter()
            .map(|v| s.weight * v)
            .collect();
        let c = exp_grad_step(init.c.block(i), &g, eta, cfg.epsilon_floor).unwrap().into_inner();
        let gt = model::grad_theta(&init.theta, &c, &s.train, arch).unwrap();
        acc.add_scaled(-eta * s.weight, &gt).unwrap();
        cs.push(c);
    }
    let mut theta = init.theta.theta().clone();
    theta.add_scaled(1.0, &acc).unwrap();
    let fin = traj.final_state.unwrap();
    assert!(fin.theta.theta().max_abs_diff(&theta) < 1e-15);
    assert_eq!(fin.c.to_rows(), cs);
}

#[test]
fn oversized_step_is_rejected() {
    let shards = regression_shards(&[10, 14], 2, 24);
    let graph = AffinityGraph::all_ones(2);
    let cfg = RunConfig {
        eta: EtaSchedule::Constant { eta: 50.0 },
        ..run_config(2, 3)
    };
    assert!(matches!(
        rbcd_run(&cfg, &shards, &graph, initial(&shards, 2, 5)),
        Err(PpflError::StepSize { .. })
    ));
    let cfg = RunConfig {
        eta: EtaSchedule::Constant { eta: 0.02 },
        enforce_step_bound: true,
        ..run_config(2, 3)
    };
    assert!(matches!(
        rbcd_run(&cfg, &shards, &graph, initial(&shards, 2, 5)),
        Err(PpflError::StepSize { .. })
    ));
}

#[test]
fn minibatches_are_seeded_and_sorted() {
    let mode = BatchMode {
        size: crate::config::BatchSize::Size(5),
        rng: Some(RngStream::root(1)),
    };
    let a = mode.rows(20, 3).unwrap();
    assert_eq!(a, mode.rows(20, 3).unwrap());
    assert_eq!(a.len(), 5);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert!(mode.rows(4, 0).is_none());
}
