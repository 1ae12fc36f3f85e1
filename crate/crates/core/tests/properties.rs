//! Randomized properties of the model gradients, the mirror step and the
//! majorization surrogate.

use ppfl_core::fedsim::shards_by_size;
use ppfl_core::linalg::DenseMatrix;
use ppfl_core::model;
use ppfl_core::optim::{exp_grad_step, objective, surrogate_value};
use ppfl_core::{
    AffinityGraph, Architecture, CanonicalEnsemble, LabeledDataset, Link, MembershipMatrix,
    RngStream, Task,
};
use proptest::prelude::*;

fn link_strategy() -> impl Strategy<Value = Link> {
    prop_oneof![
        Just(Link::Identity),
        Just(Link::Logit),
        (2usize..=4).prop_map(|classes| Link::Softmax { classes }),
    ]
}

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::PredictionMixture),
        Just(Architecture::ParameterMixture),
        Just(Architecture::LossMixture),
    ]
}

fn simplex(weights: Vec<f64>) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / s).collect()
}

fn dataset(n: usize, d: usize, link: Link, seed: u64) -> LabeledDataset {
    use rand::Rng;
    let mut r = RngStream::root(seed).rng();
    let x: Vec<f64> = (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (task, y): (Task, Vec<f64>) = match link {
        Link::Identity => (Task::Regression, (0..n).map(|_| r.gen_range(-2.0..2.0)).collect()),
        Link::Logit => (Task::Binary, (0..n).map(|_| f64::from(r.gen_bool(0.5))).collect()),
        Link::Softmax { classes } => (
            Task::Multiclass { classes },
            (0..n).map(|_| r.gen_range(0..classes) as f64).collect(),
        ),
    };
    LabeledDataset::new(DenseMatrix::from_vec(n, d, x).unwrap(), y, task).unwrap()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|j| {
            let mut p = at.to_vec();
            p[j] += h;
            let mut m = at.to_vec();
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_central_differences(
        link in link_strategy(),
        arch in arch_strategy(),
        d in 1usize..5,
        k in 1usize..4,
        n in 1usize..10,
        c_raw in prop::collection::vec(0.05f64..1.0, 4),
        seed in any::<u64>(),
    ) {
        let ds = dataset(n, d, link, seed);
        let ens = CanonicalEnsemble::random_uniform(d, k, link, 0.5, &RngStream::root(seed ^ 1)).unwrap();
        let c = simplex(c_raw[..k].to_vec());
        let ev = model::loss_and_grads(&ens, &c, &ds, arch).unwrap();

        let theta_at = ens.theta().as_slice().to_vec();
        let rows = ens.theta().rows();
        let loss_theta = |t: &[f64]| {
            let e = CanonicalEnsemble::new(DenseMatrix::from_vec(rows, k, t.to_vec()).unwrap(), link).unwrap();
            model::local_loss(&e, &c, &ds, arch).unwrap()
        };
        let fd = central_difference(loss_theta, &theta_at, 1e-6);
        prop_assert!(relative_error(ev.grad_theta.as_slice(), &fd) <= 1e-5);

        let loss_c = |v: &[f64]| model::local_loss(&ens, v, &ds, arch).unwrap();
        let fd = central_difference(loss_c, &c, 1e-6);
        prop_assert!(relative_error(&ev.grad_c, &fd) <= 1e-5);
    }

    #[test]
    fn mirror_step_stays_on_the_floored_simplex(
        c_raw in prop::collection::vec(1e-9f64..1.0, 2..12),
        g_unit in prop::collection::vec(-1.0f64..1.0, 12),
        log_scale in -3.0f64..5.0,
        log_eta in -4.0f64..2.0,
    ) {
        let k = c_raw.len();
        let c: Vec<f64> = simplex(simplex(c_raw).into_iter().map(|v| v.max(1e-6)).collect());
        let g: Vec<f64> = g_unit[..k].iter().map(|v| v * 10f64.powf(log_scale)).collect();
        let out = exp_grad_step(&c, &g, 10f64.powf(log_eta), 1e-6).unwrap();
        let total: f64 = out.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(out.as_slice().iter().all(|&v| v >= 1e-6));
    }

    #[test]
    fn surrogate_majorizes_and_touches(
        m in 2usize..5,
        k in 2usize..4,
        lambda in 0.0f64..3.0,
        cosine in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = RngStream::root(seed).rng();
        let splits = (0..m)
            .map(|i| (dataset(6 + i, 3, Link::Identity, seed.wrapping_add(i as u64)), LabeledDataset::empty(3, Task::Regression)))
            .collect();
        let shards = shards_by_size(splits).unwrap();
        let graph = if cosine {
            let hists: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..3).map(|j| f64::from(r.gen_range(0u8..4)) + f64::from(j == 0)).collect())
                .collect();
            AffinityGraph::from_label_histograms(&hists).unwrap()
        } else {
            AffinityGraph::all_ones(m)
        };
        let mut member = || {
            let blocks: Vec<Vec<f64>> = (0..m)
                .map(|_| simplex((0..k).map(|_| r.gen_range(0.05..1.0)).collect()))
                .collect();
            MembershipMatrix::from_blocks(&blocks, 0.0).unwrap()
        };
        let c = member();
        let a = member();
        let theta = CanonicalEnsemble::random_uniform(3, k, Link::Identity, 0.5, &RngStream::root(seed ^ 7)).unwrap();
        let arch = Architecture::PredictionMixture;
        let f = objective(&theta, &c, &shards, &graph, lambda, arch).unwrap();
        let s = surrogate_value(&c, &a, &theta, &shards, &graph, lambda, arch).unwrap();
        prop_assert!(s >= f - 1e-10);
        let fa = objective(&theta, &a, &shards, &graph, lambda, arch).unwrap();
        let sa = surrogate_value(&a, &a, &theta, &shards, &graph, lambda, arch).unwrap();
        prop_assert!((sa - fa).abs() <= 1e-10);
    }
}
