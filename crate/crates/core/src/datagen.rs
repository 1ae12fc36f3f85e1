//! Synthetic federated benchmarks.
//!
//! Three generators are provided: a mixture-of-sources GLM benchmark with
//! known per-client mixture weights, a domain-heterogeneous classification
//! benchmark where each client holds one group's classes, and a Dirichlet
//! label partition of a pooled dataset. Benchmarks round-trip through a
//! directory of per-client CSV files plus `manifest.json`.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{split_train_test, LabeledDataset, Task};
use crate::error::{PpflError, Result};
use crate::fedsim::{shards_by_size, ClientShard};
use crate::linalg::DenseMatrix;
use crate::rng::{Purpose, RngStream};

const MAX_PARTITION_ATTEMPTS: usize = 100;

fn default_train_fraction() -> f64 {
    0.8
}

fn default_noise() -> f64 {
    0.1
}

fn default_separation() -> f64 {
    3.0
}

/// Ground truth of the mixture benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureGroundTruth {
    /// Source coefficients, one column per source (`d × K_true`).
    pub coefficients: DenseMatrix,
    /// Per-client mixture weights `α_i`.
    pub alpha: Vec<Vec<f64>>,
    /// Per-client sample counts by source.
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub m: usize,
    pub k_true: usize,
    pub d: usize,
    /// Inclusive range of per-client sample counts.
    pub n_range: [usize; 2],
    pub dirichlet_alpha: f64,
    pub task: Task,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl MixtureSpec {
    /// Desk-scale regression defaults: 30 clients, 3 sources, `d = 20`.
    pub fn desk_scale(task: Task) -> Self {
        Self {
            m: 30,
            k_true: 3,
            d: 20,
            n_range: [50, 200],
            dirichlet_alpha: 1.0,
            task,
            noise_std: default_noise(),
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub m: usize,
    pub groups: usize,
    pub classes_per_group: usize,
    pub d: usize,
    pub n_per_client: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl DomainSpec {
    /// Desk-scale defaults: 30 clients in 4 groups of 3 classes, `d = 20`.
    pub fn desk_scale() -> Self {
        Self {
            m: 30,
            groups: 4,
            classes_per_group: 3,
            d: 20,
            n_per_client: 100,
            separation: default_separation(),
            train_fraction: default_train_fraction(),
        }
    }
}

/// Pooled Gaussian-class dataset partitioned across clients by a Dirichlet
/// label prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    pub m: usize,
    pub classes: usize,
    pub d: usize,
    pub n_total: usize,
    pub alpha: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

/// Generator selection for `ppfl generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum BenchmarkSpec {
    Mixture(MixtureSpec),
    Domain(DomainSpec),
    Dirichlet(DirichletSpec),
}

/// A generated federation with whatever ground truth its generator knows.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub shards: Vec<ClientShard>,
    pub mixture: Option<MixtureGroundTruth>,
    pub groups: Option<Vec<usize>>,
}

impl BenchmarkSpec {
    pub fn generate(&self, rng: &RngStream) -> Result<Benchmark> {
        match self {
            BenchmarkSpec::Mixture(s) => {
                let (shards, truth) = gen_mixture_synthetic(s, rng)?;
                Ok(Benchmark {
                    shards,
                    mixture: Some(truth),
                    groups: None,
                })
            }
            BenchmarkSpec::Domain(s) => {
                let (shards, groups) = gen_domain_heterogeneous(s, rng)?;
                Ok(Benchmark {
                    shards,
                    mixture: None,
                    groups: Some(groups),
                })
            }
            BenchmarkSpec::Dirichlet(s) => {
                let base = gaussian_classes(s.classes, s.d, s.n_total, s.separation, rng)?;
                let shards = gen_dirichlet_partition(&base, s.m, s.alpha, s.train_fraction, rng)?;
                Ok(Benchmark {
                    shards,
                    mixture: None,
                    groups: None,
                })
            }
        }
    }
}

/// Draws from `Dir(alpha · 1_k)` by normalizing Gamma variates. When every
/// variate underflows (tiny `alpha`) a uniformly chosen vertex is returned.
fn dirichlet<R: Rng>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| PpflError::InvalidArgument(format!("Dirichlet concentration {alpha}: {e}")))?;
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let j = rng.gen_range(0..k);
        v = (0..k).map(|i| f64::from(i == j)).collect();
    }
    Ok(v)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn split_and_weight(
    datasets: Vec<LabeledDataset>,
    train_fraction: f64,
    rng: &RngStream,
) -> Result<Vec<ClientShard>> {
    let splits = datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| split_train_test(ds, train_fraction, &rng.derive(0, i as u64, Purpose::Split)))
        .collect::<Result<Vec<_>>>()?;
    shards_by_size(splits)
}

/// Mixture-of-sources GLM benchmark.
///
/// Source coefficients are uniform on `[-1, 1]`. Client `i` draws
/// `α_i ~ Dir(dirichlet_alpha)`, a size `n_i` uniform on `n_range`, and the
/// source of each sample from `α_i`. Features are standard normal; labels
/// follow the source GLM (identity link plus Gaussian noise, or logit link
/// with Bernoulli labels).
pub fn gen_mixture_synthetic(
    spec: &MixtureSpec,
    rng: &RngStream,
) -> Result<(Vec<ClientShard>, MixtureGroundTruth)> {
    let [n_lo, n_hi] = spec.n_range;
    if spec.m == 0 || spec.k_true == 0 || spec.d == 0 {
        return Err(PpflError::InvalidArgument(
            "mixture benchmark needs m, k_true and d at least 1".into(),
        ));
    }
    if n_lo == 0 || n_lo > n_hi {
        return Err(PpflError::InvalidArgument(format!(
            "invalid sample-count range [{n_lo}, {n_hi}]"
        )));
    }
    if matches!(spec.task, Task::Multiclass { .. }) {
        return Err(PpflError::InvalidArgument(
            "mixture benchmark supports regression and binary tasks".into(),
        ));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(PpflError::InvalidArgument("noise_std must be nonnegative".into()));
    }
    let (d, k) = (spec.d, spec.k_true);
    let mut coef_rng = rng.derive(0, 0, Purpose::Generate).rng();
    let coef: Vec<f64> = (0..d * k).map(|_| coef_rng.gen_range(-1.0..=1.0)).collect();
    let coefficients = DenseMatrix::from_vec(d, k, coef)?;

    let mut alpha = Vec::with_capacity(spec.m);
    let mut counts = Vec::with_capacity(spec.m);
    let mut datasets = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let mut r = rng.derive(0, i as u64 + 1, Purpose::Generate).rng();
        let a = if k == 1 {
            vec![1.0]
        } else {
            dirichlet(spec.dirichlet_alpha, k, &mut r)?
        };
        let n = r.gen_range(n_lo..=n_hi);
        let pick = WeightedIndex::new(&a)
            .map_err(|e| PpflError::InvalidArgument(format!("mixture weights: {e}")))?;
        let mut cnt = vec![0usize; k];
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let s = pick.sample(&mut r);
            cnt[s] += 1;
            let row: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let z: f64 = row.iter().enumerate().map(|(j, v)| v * coefficients.get(j, s)).sum();
            y.push(match spec.task {
                Task::Regression => {
                    let e: f64 = r.sample(StandardNormal);
                    z + spec.noise_std * e
                }
                _ => f64::from(r.gen::<f64>() < logistic(z)),
            });
            x.extend(row);
        }
        datasets.push(LabeledDataset::new(DenseMatrix::from_vec(n, d, x)?, y, spec.task)?);
        alpha.push(a);
        counts.push(cnt);
    }
    let shards = split_and_weight(datasets, spec.train_fraction, rng)?;
    Ok((
        shards,
        MixtureGroundTruth {
            coefficients,
            alpha,
            counts,
        },
    ))
}

/// Class mean: `separation` along coordinate `j mod d`.
fn class_mean(j: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut mu = vec![0.0; d];
    mu[j % d] = separation;
    mu
}

/// Domain-heterogeneous classification benchmark.
///
/// Client `i` belongs to group `i mod groups` and samples only that group's
/// classes `g·classes_per_group + j`. The feature distribution of within-group
/// class `j` is `N(separation·e_j, I)` in every group, so groups differ in
/// how the same inputs are labeled and a single shared model cannot serve
/// all of them.
pub fn gen_domain_heterogeneous(
    spec: &DomainSpec,
    rng: &RngStream,
) -> Result<(Vec<ClientShard>, Vec<usize>)> {
    if spec.groups == 0 || spec.groups > spec.m {
        return Err(PpflError::InvalidArgument(format!(
            "{} groups for {} clients",
            spec.groups, spec.m
        )));
    }
    if spec.classes_per_group == 0 || spec.d == 0 || spec.n_per_client == 0 {
        return Err(PpflError::InvalidArgument(
            "classes_per_group, d and n_per_client must be positive".into(),
        ));
    }
    let classes = spec.groups * spec.classes_per_group;
    let task = Task::Multiclass { classes };
    let d = spec.d;
    let groups: Vec<usize> = (0..spec.m).map(|i| i % spec.groups).collect();
    let mut datasets = Vec::with_capacity(spec.m);
    for (i, &g) in groups.iter().enumerate() {
        let mut r = rng.derive(0, i as u64, Purpose::Generate).rng();
        let n = spec.n_per_client;
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let j = r.gen_range(0..spec.classes_per_group);
            let mu = class_mean(j, d, spec.separation);
            x.extend(mu.iter().map(|m| m + r.sample::<f64, _>(StandardNormal)));
            y.push((g * spec.classes_per_group + j) as f64);
        }
        datasets.push(LabeledDataset::new(DenseMatrix::from_vec(n, d, x)?, y, task)?);
    }
    Ok((split_and_weight(datasets, spec.train_fraction, rng)?, groups))
}

/// Pooled Gaussian-class dataset with class `c` centered at
/// `separation·e_{c mod d}`.
pub fn gaussian_classes(
    classes: usize,
    d: usize,
    n: usize,
    separation: f64,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    if classes < 2 || d == 0 || n == 0 {
        return Err(PpflError::InvalidArgument(
            "need at least 2 classes, d >= 1 and n >= 1".into(),
        ));
    }
    let mut r = rng.derive(0, 0, Purpose::Generate).rng();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.gen_range(0..classes);
        let mu = class_mean(c, d, separation);
        x.extend(mu.iter().map(|m| m + r.sample::<f64, _>(StandardNormal)));
        y.push(c as f64);
    }
    LabeledDataset::new(DenseMatrix::from_vec(n, d, x)?, y, Task::Multiclass { classes })
}

/// Dirichlet label partition: for each class, client proportions are drawn
/// from `Dir(alpha)` and the class's samples are assigned multinomially.
/// Partitions leaving a client empty are redrawn.
pub fn gen_dirichlet_partition(
    base: &LabeledDataset,
    m: usize,
    alpha: f64,
    train_fraction: f64,
    rng: &RngStream,
) -> Result<Vec<ClientShard>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PpflError::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if m == 0 || base.len() < m {
        return Err(PpflError::InvalidArgument(format!(
            "cannot partition {} samples over {m} clients",
            base.len()
        )));
    }
    let classes = base.task().num_classes().unwrap_or(1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in base.labels().iter().enumerate() {
        let c = if classes == 1 { 0 } else { y as usize };
        by_class[c].push(i);
    }
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut r = rng.derive(attempt as u64, 0, Purpose::Partition).rng();
        let mut owned: Vec<Vec<usize>> = vec![Vec::new(); m];
        for idx in &by_class {
            if idx.is_empty() {
                continue;
            }
            let p = if m == 1 { vec![1.0] } else { dirichlet(alpha, m, &mut r)? };
            let pick = WeightedIndex::new(&p)
                .map_err(|e| PpflError::InvalidArgument(format!("partition weights: {e}")))?;
            for &i in idx {
                owned[pick.sample(&mut r)].push(i);
            }
        }
        if owned.iter().all(|o| !o.is_empty()) {
            let datasets = owned
                .iter_mut()
                .map(|o| {
                    o.sort_unstable();
                    base.subset(o)
                })
                .collect();
            return split_and_weight(datasets, train_fraction, rng);
        }
    }
    Err(PpflError::Data(format!(
        "Dirichlet partition left a client empty after {MAX_PARTITION_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClientEntry {
    id: usize,
    train: String,
    test: String,
    n_train: usize,
    n_test: usize,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub dim: usize,
    pub spec: Option<BenchmarkSpec>,
    pub seed: Option<u64>,
    clients: Vec<ClientEntry>,
    pub alpha_truth: Option<Vec<Vec<f64>>>,
    pub mixture: Option<MixtureGroundTruth>,
    pub groups: Option<Vec<usize>>,
}

fn write_csv(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut s = String::new();
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    s.push_str(&header.join(","));
    if !header.is_empty() {
        s.push(',');
    }
    s.push_str("y\n");
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        for v in x {
            s.push_str(&format!("{v},"));
        }
        s.push_str(&format!("{y}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_csv(path: &Path, dim: usize, task: Task) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    lines
        .next()
        .ok_or_else(|| PpflError::Data(format!("{}: missing header", path.display())))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PpflError::Data(format!("{}:{}: {e}", path.display(), ln + 2)))?;
        if vals.len() != dim + 1 {
            return Err(PpflError::Data(format!(
                "{}:{}: expected {} columns, found {}",
                path.display(),
                ln + 2,
                dim + 1,
                vals.len()
            )));
        }
        x.extend_from_slice(&vals[..dim]);
        y.push(vals[dim]);
    }
    if y.is_empty() {
        return Ok(LabeledDataset::empty(dim, task));
    }
    LabeledDataset::new(DenseMatrix::from_vec(y.len(), dim, x)?, y, task)
}

/// Writes `client_<i>_{train,test}.csv` and `manifest.json` into `dir`.
pub fn export_benchmark(
    bench: &Benchmark,
    spec: Option<&BenchmarkSpec>,
    seed: Option<u64>,
    dir: &Path,
) -> Result<()> {
    let first = bench
        .shards
        .first()
        .ok_or_else(|| PpflError::InvalidArgument("benchmark has no clients".into()))?;
    fs::create_dir_all(dir)?;
    let mut clients = Vec::with_capacity(bench.shards.len());
    for s in &bench.shards {
        let train = format!("client_{}_train.csv", s.id);
        let test = format!("client_{}_test.csv", s.id);
        write_csv(&dir.join(&train), &s.train)?;
        write_csv(&dir.join(&test), &s.test)?;
        clients.push(ClientEntry {
            id: s.id,
            train,
            test,
            n_train: s.train.len(),
            n_test: s.test.len(),
        });
    }
    let manifest = Manifest {
        task: first.train.task(),
        dim: first.train.dim(),
        spec: spec.cloned(),
        seed,
        clients,
        alpha_truth: bench.mixture.as_ref().map(|m| m.alpha.clone()),
        mixture: bench.mixture.clone(),
        groups: bench.groups.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a benchmark directory written by [`export_benchmark`]. Client
/// weights are recomputed from training sizes.
pub fn import_benchmark(dir: &Path) -> Result<(Benchmark, Manifest)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut splits = Vec::with_capacity(manifest.clients.len());
    for (pos, c) in manifest.clients.iter().enumerate() {
        if c.id != pos {
            return Err(PpflError::Data(format!(
                "manifest lists client {} at position {pos}",
                c.id
            )));
        }
        let train = read_csv(&dir.join(&c.train), manifest.dim, manifest.task)?;
        let test = read_csv(&dir.join(&c.test), manifest.dim, manifest.task)?;
        if train.len() != c.n_train || test.len() != c.n_test {
            return Err(PpflError::Data(format!(
                "client {} row counts differ from the manifest",
                c.id
            )));
        }
        splits.push((train, test));
    }
    let bench = Benchmark {
        shards: shards_by_size(splits)?,
        mixture: manifest.mixture.clone(),
        groups: manifest.groups.clone(),
    };
    Ok((bench, manifest))
}
