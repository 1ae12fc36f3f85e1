//! Block updates of the population-personalized objective
//!
//! `F(θ, C) = Σ_i p_i f_i(θ, c_i) + λ Cᵀ L C`, with `C` constrained to a
//! product of simplices.
//!
//! The θ-block takes Euclidean mirror steps, i.e. `E` local SGD steps per
//! client followed by weighted delta aggregation. The C-block takes one
//! entropic mirror step per client on the majorization surrogate, which
//! linearizes the `-W` half of the Laplacian at the current iterate so every
//! client can update independently.

mod driver;

pub(crate) use driver::measure as measure_state;
pub use driver::{alternating_run, output_weights, rbcd_run, sample_output_index, RoundContext};

use log::warn;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BatchSize, RunConfig};
use crate::error::{dim_err, PpflError, Result};
use crate::fedsim::ClientShard;
use crate::graph::{AffinityGraph, PsdStatus};
use crate::linalg::{norm_sq, top_eigenvalue_psd, DenseMatrix};
use crate::membership::{MembershipMatrix, MembershipVector};
use crate::model::{self, Architecture, CanonicalEnsemble, Link};
use crate::rng::{Purpose, RngStream};

/// The two optimization blocks `z = {θ, C}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub theta: CanonicalEnsemble,
    pub c: MembershipMatrix,
}

impl BlockState {
    /// Uniform memberships and small symmetric uniform θ.
    pub fn initial(
        dim: usize,
        k: usize,
        link: Link,
        clients: usize,
        init_scale: f64,
        rng: &RngStream,
    ) -> Result<Self> {
        Ok(Self {
            theta: CanonicalEnsemble::random_uniform(
                dim,
                k,
                link,
                init_scale,
                &rng.derive(0, 0, Purpose::Init),
            )?,
            c: MembershipMatrix::uniform(clients, k),
        })
    }
}

/// Per-round step sizes derived from `eta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_t: f64,
    pub eta1_t: f64,
    pub eta2_t: f64,
    pub gamma1_t: f64,
    pub gamma2_t: f64,
}

impl StepSizes {
    pub fn new(eta_t: f64, local_steps: usize) -> Result<Self> {
        Self::with_c_scale(eta_t, local_steps, 1.0)
    }

    /// Step sizes with the membership step scaled by `c_scale`.
    pub fn with_c_scale(eta_t: f64, local_steps: usize, c_scale: f64) -> Result<Self> {
        if !(eta_t > 0.0 && eta_t.is_finite() && c_scale > 0.0 && c_scale.is_finite()) {
            return Err(PpflError::InvalidArgument(format!(
                "step size must be positive, got {eta_t}"
            )));
        }
        Ok(Self {
            eta_t,
            eta1_t: eta_t / local_steps as f64,
            eta2_t: c_scale * eta_t,
            gamma1_t: 4.0 * eta_t,
            gamma2_t: c_scale * eta_t / 2.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessSource {
    User,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimates {
    pub l1: f64,
    pub l2: f64,
    pub source: SmoothnessSource,
}

impl SmoothnessEstimates {
    /// `min{1/(32 E L1), 2/(s L2)}` restricted to blocks selected with
    /// positive probability, where `s` scales the membership step.
    pub fn rbcd_step_bound(&self, local_steps: usize, rho: [f64; 2], c_scale: f64) -> f64 {
        let mut b = f64::INFINITY;
        if rho[0] > 0.0 {
            b = b.min(1.0 / (32.0 * local_steps as f64 * self.l1));
        }
        if rho[1] > 0.0 {
            b = b.min(2.0 / (c_scale * self.l2));
        }
        b
    }

    /// Step-size ceiling of the alternating variant:
    /// `min{1/(16 L1), 1/(s L2), (4ΔF/(σ11 T))^½, (4ΔF/(σ12 T))^⅓}`, the last
    /// two only when the constants are supplied.
    pub fn alternating_step_bound(
        &self,
        c_scale: f64,
        rounds: usize,
        delta_f: Option<f64>,
        sigma_1_1: Option<f64>,
        sigma_1_2: Option<f64>,
    ) -> f64 {
        let mut b = (1.0 / (16.0 * self.l1)).min(1.0 / (c_scale * self.l2));
        if let Some(df) = delta_f {
            let t = rounds.max(1) as f64;
            if let Some(s) = sigma_1_1.filter(|s| *s > 0.0) {
                b = b.min((4.0 * df / (s * t)).sqrt());
            }
            if let Some(s) = sigma_1_2.filter(|s| *s > 0.0) {
                b = b.min((4.0 * df / (s * t)).cbrt());
            }
        }
        b
    }
}

/// Stationarity measure at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriterionRecord {
    /// `‖∇_θ F‖²`.
    pub grad_theta_norm_sq: f64,
    /// `‖C − C₊‖₁² / η²` with `C₊` the full-gradient mirror step.
    pub prox_c_norm1_sq: f64,
    pub composite: f64,
}

/// Minibatch or full-batch gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct BatchMode {
    pub size: BatchSize,
    pub rng: Option<RngStream>,
}

impl BatchMode {
    pub fn full() -> Self {
        Self {
            size: BatchSize::Full,
            rng: None,
        }
    }

    /// Row indices for local step `step`; `None` means the whole shard.
    fn rows(&self, n: usize, step: usize) -> Option<Vec<usize>> {
        match self.size {
            BatchSize::Size(b) if b < n => {
                let stream = self
                    .rng
                    .expect("minibatch mode needs an rng stream")
                    .derive(step as u64, 0, Purpose::Batch);
                let mut idx = sample(&mut stream.rng(), n, b).into_vec();
                idx.sort_unstable();
                Some(idx)
            }
            _ => None,
        }
    }
}

/// Entropic mirror step `c ⊙ exp(−η g) / ⟨c, exp(−η g)⟩`, evaluated in the
/// log domain, followed by flooring entries at `floor` and renormalizing the
/// unfloored mass.
pub fn exp_grad_step(c: &[f64], g: &[f64], eta: f64, floor: f64) -> Result<MembershipVector> {
    if c.len() != g.len() || c.is_empty() {
        return dim_err(format!("membership {} vs gradient {}", c.len(), g.len()));
    }
    if !(eta > 0.0) || g.iter().any(|v| !v.is_finite()) {
        return Err(PpflError::InvalidArgument(
            "mirror step needs eta > 0 and a finite gradient".into(),
        ));
    }
    let logits: Vec<f64> = c
        .iter()
        .zip(g)
        .map(|(&ck, &gk)| if ck > 0.0 { ck.ln() - eta * gk } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(PpflError::InvalidArgument("membership has no positive entry".into()));
    }
    let mut u: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = u.iter().sum();
    u.iter_mut().for_each(|v| *v /= s);
    apply_floor(&mut u, floor);
    Ok(MembershipVector::from_raw(u))
}

/// Raises entries below `floor` to `floor` and rescales the rest so the sum
/// stays one. Entries at or above the floor are untouched when nothing is
/// floored.
fn apply_floor(u: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        return;
    }
    let mut pinned = vec![false; u.len()];
    loop {
        let mut changed = false;
        for (v, p) in u.iter_mut().zip(pinned.iter_mut()) {
            if !*p && *v < floor {
                *v = floor;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let pinned_mass = floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free_mass: f64 = u.iter().zip(&pinned).filter(|(_, p)| !**p).map(|(v, _)| v).sum();
        let scale = (1.0 - pinned_mass) / free_mass;
        for (v, p) in u.iter_mut().zip(&pinned) {
            if !*p {
                *v *= scale;
            }
        }
    }
}

fn check_clients(shards: &[ClientShard], graph: &AffinityGraph, c: &MembershipMatrix) -> Result<()> {
    if shards.len() != graph.m() || shards.len() != c.m() {
        return dim_err(format!(
            "{} shards, graph over {} clients, {} membership blocks",
            shards.len(),
            graph.m(),
            c.m()
        ));
    }
    Ok(())
}

/// `F(θ, C)` on the training shards.
pub fn objective(
    theta: &CanonicalEnsemble,
    c: &MembershipMatrix,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    lambda: f64,
    arch: Architecture,
) -> Result<f64> {
    check_clients(shards, graph, c)?;
    let losses = shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| model::local_loss(theta, c.block(i), &s.train, arch))
        .collect::<Result<Vec<f64>>>()?;
    let data: f64 = losses.iter().zip(shards).map(|(l, s)| s.weight * l).sum();
    let reg = if lambda == 0.0 {
        0.0
    } else {
        lambda * graph.laplacian_quadratic(c.as_slice(), c.k())?
    };
    Ok(data + reg)
}

/// Majorization surrogate `S_t(C; θ)` anchored at `anchor`:
/// `Σ p_i f_i + λ Cᵀ(D⊗I)C − λ[Aᵀ(W⊗I)A + 2((W⊗I)A)ᵀ(C − A)]`, using the
/// PSD split `W + diag(self_affinity)`.
pub fn surrogate_value(
    c: &MembershipMatrix,
    anchor: &MembershipMatrix,
    theta: &CanonicalEnsemble,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    lambda: f64,
    arch: Architecture,
) -> Result<f64> {
    check_clients(shards, graph, c)?;
    check_clients(shards, graph, anchor)?;
    if graph.psd() == PsdStatus::NotPsd {
        warn!("surrogate evaluated with a non-PSD affinity; dominance may fail");
    }
    let data = objective(theta, c, shards, graph, 0.0, arch)?;
    if lambda == 0.0 {
        return Ok(data);
    }
    let k = c.k();
    let a = anchor.as_slice();
    let x = c.as_slice();
    let mut wa = graph.w_apply(a, k)?;
    for (i, block) in wa.chunks_exact_mut(k).enumerate() {
        let s = graph.self_affinity()[i];
        if s != 0.0 {
            for (o, &ai) in block.iter_mut().zip(&a[i * k..(i + 1) * k]) {
                *o += s * ai;
            }
        }
    }
    let mut dterm = 0.0;
    for (i, block) in x.chunks_exact(k).enumerate() {
        dterm += (graph.degree(i) + graph.self_affinity()[i]) * norm_sq(block);
    }
    let awa: f64 = a.iter().zip(&wa).map(|(p, q)| p * q).sum();
    let lin: f64 = wa.iter().zip(x.iter().zip(a)).map(|(w, (xi, ai))| w * (xi - ai)).sum();
    Ok(data + lambda * dterm - lambda * (awa + 2.0 * lin))
}

/// One simultaneous entropic step on every membership vector, all using the
/// Laplacian slices of the pre-update `C`.
#[allow(clippy::too_many_arguments)]
pub fn c_update(
    c: &MembershipMatrix,
    theta: &CanonicalEnsemble,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    lambda: f64,
    eta2: f64,
    arch: Architecture,
    floor: f64,
    batch: &[BatchMode],
) -> Result<MembershipMatrix> {
    check_clients(shards, graph, c)?;
    if batch.len() != shards.len() {
        return dim_err("one batch mode per client required");
    }
    let k = c.k();
    let lc = graph.laplacian_apply(c.as_slice(), k)?;
    let blocks = shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ci = c.block(i);
            let mut g = match batch[i].rows(s.train.len(), 0) {
                Some(rows) => model::grad_c_on(theta, ci, &s.train, &rows, arch)?,
                None => model::grad_c(theta, ci, &s.train, arch)?,
            };
            for (gk, lk) in g.iter_mut().zip(&lc[i * k..(i + 1) * k]) {
                *gk = s.weight * *gk + 2.0 * lambda * lk;
            }
            exp_grad_step(ci, &g, eta2, floor)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MembershipMatrix::from_vectors(blocks))
}

/// Runs `E` local SGD steps from `theta` with membership `c` fixed and
/// returns `θ_E − θ`.
pub fn theta_local_steps(
    theta: &CanonicalEnsemble,
    c: &[f64],
    shard: &ClientShard,
    local_steps: usize,
    eta1: f64,
    arch: Architecture,
    batch: &BatchMode,
) -> Result<DenseMatrix> {
    if local_steps == 0 {
        return Err(PpflError::InvalidArgument("local_steps must be >= 1".into()));
    }
    let mut local = theta.clone();
    for step in 0..local_steps {
        let g = match batch.rows(shard.train.len(), step) {
            Some(rows) => model::grad_theta_on(&local, c, &shard.train, &rows, arch)?,
            None => model::grad_theta(&local, c, &shard.train, arch)?,
        };
        local.theta_mut().add_scaled(-eta1, &g)?;
    }
    let mut delta = local.theta().clone();
    delta.add_scaled(-1.0, theta.theta())?;
    Ok(delta)
}

/// `θ + Σ_i p_i Δ_i`, summed in the given order.
pub fn theta_aggregate(
    theta: &CanonicalEnsemble,
    deltas: &[(f64, DenseMatrix)],
) -> Result<CanonicalEnsemble> {
    let total: f64 = deltas.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PpflError::InvalidArgument(format!(
            "aggregation weights sum to {total}, expected 1"
        )));
    }
    let mut acc = DenseMatrix::zeros(theta.theta().rows(), theta.k());
    for (p, d) in deltas {
        acc.add_scaled(*p, d)?;
    }
    let mut next = theta.clone();
    next.theta_mut().add_scaled(1.0, &acc)?;
    Ok(next)
}

/// Full-gradient stationarity criterion at `(θ, C)` with mirror step `eta`.
#[allow(clippy::too_many_arguments)]
pub fn criterion(
    theta: &CanonicalEnsemble,
    c: &MembershipMatrix,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    lambda: f64,
    eta: f64,
    arch: Architecture,
    floor: f64,
) -> Result<CriterionRecord> {
    check_clients(shards, graph, c)?;
    let k = c.k();
    let lc = graph.laplacian_apply(c.as_slice(), k)?;
    let per_client = shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ci = c.block(i);
            let ev = model::loss_and_grads(theta, ci, &s.train, arch)?;
            let g: Vec<f64> = ev
                .grad_c
                .iter()
                .zip(&lc[i * k..(i + 1) * k])
                .map(|(gc, l)| s.weight * gc + 2.0 * lambda * l)
                .collect();
            let next = exp_grad_step(ci, &g, eta, floor)?;
            let dist: f64 = ci.iter().zip(next.as_slice()).map(|(a, b)| (a - b).abs()).sum();
            Ok((ev.grad_theta, dist))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = DenseMatrix::zeros(theta.theta().rows(), theta.k());
    let mut l1 = 0.0;
    for ((g, dist), s) in per_client.iter().zip(shards) {
        grad.add_scaled(s.weight, g)?;
        l1 += dist;
    }
    let grad_theta_norm_sq = grad.frobenius_sq();
    let prox_c_norm1_sq = l1 * l1 / (eta * eta);
    Ok(CriterionRecord {
        grad_theta_norm_sq,
        prox_c_norm1_sq,
        composite: grad_theta_norm_sq + prox_c_norm1_sq,
    })
}

/// Top eigenvalue of `(1/n) Σ_l κ_l v_l v_lᵀ`.
fn weighted_outer_top(vs: &[(f64, Vec<f64>)], k: usize) -> f64 {
    if vs.is_empty() {
        return 0.0;
    }
    let mut h = DenseMatrix::zeros(k, k);
    for (kappa, v) in vs {
        for a in 0..k {
            for b in 0..k {
                h.add_at(a, b, kappa * v[a] * v[b]);
            }
        }
    }
    h.scale(1.0 / vs.len() as f64);
    top_eigenvalue_psd(&h, 2000, 1e-12)
}

/// Curvature bound of `c ↦ f_i(θ, c)` over the simplex at fixed θ.
fn membership_smoothness(
    theta: &CanonicalEnsemble,
    shard: &ClientShard,
    arch: Architecture,
) -> f64 {
    let k = theta.k();
    let link = theta.link();
    let o = link.outputs();
    if arch == Architecture::LossMixture || shard.train.is_empty() {
        return 0.0;
    }
    let mut terms: Vec<(f64, Vec<f64>)> = Vec::with_capacity(shard.train.len() * o);
    let mut z = vec![vec![0.0; o]; k];
    for l in 0..shard.train.len() {
        let (x, y) = shard.train.sample(l);
        for (kk, zk) in z.iter_mut().enumerate() {
            for (m, v) in zk.iter_mut().enumerate() {
                *v = (0..x.len()).map(|j| x[j] * theta.theta().get(j * o + m, kk)).sum();
            }
        }
        let col = |m: usize| z.iter().map(|zk| zk[m]).collect::<Vec<f64>>();
        match (link, arch) {
            (Link::Identity, _) => terms.push((1.0, col(0))),
            (Link::Logit, Architecture::ParameterMixture) => terms.push((0.25, col(0))),
            (Link::Softmax { .. }, Architecture::ParameterMixture) => {
                for m in 0..o {
                    terms.push((0.5, col(m)));
                }
            }
            (Link::Logit, _) => {
                let s: Vec<f64> = z
                    .iter()
                    .map(|zk| 1.0 / (1.0 + (-zk[0].clamp(-model::LOGIT_CLAMP, model::LOGIT_CLAMP)).exp()))
                    .collect();
                let kappa = if y >= 0.5 {
                    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
                    1.0 / (lo * lo)
                } else {
                    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    1.0 / ((1.0 - hi) * (1.0 - hi))
                };
                terms.push((kappa, s));
            }
            (Link::Softmax { .. }, _) => {
                let yc = y as usize;
                let sy: Vec<f64> = z
                    .iter()
                    .map(|zk| {
                        let zc: Vec<f64> = zk
                            .iter()
                            .map(|v| v.clamp(-model::LOGIT_CLAMP, model::LOGIT_CLAMP))
                            .collect();
                        let mx = zc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let den: f64 = zc.iter().map(|v| (v - mx).exp()).sum();
                        (zc[yc] - mx).exp() / den
                    })
                    .collect();
                let lo = sy.iter().copied().fold(f64::INFINITY, f64::min);
                terms.push((1.0 / (lo * lo), sy));
            }
        }
    }
    // terms per sample were pushed o times for softmax parameter mixtures
    let n = shard.train.len() as f64;
    weighted_outer_top(&terms, k) * terms.len() as f64 / n
}

/// Analytic smoothness bounds.
///
/// `L1` is the Gauss-Newton bound `κ(link) · max_i λ_max(X_iᵀX_i / n_i)`.
/// `L2 = max_i (p_i L_c,i + 2λ d'_ii)` where `L_c,i` bounds the membership
/// curvature at `theta` over the whole simplex and `d'` is the degree of the
/// PSD majorization split. User overrides in `config` take precedence.
pub fn estimate_smoothness(
    shards: &[ClientShard],
    graph: &AffinityGraph,
    config: &RunConfig,
    theta: &CanonicalEnsemble,
) -> Result<SmoothnessEstimates> {
    if let (Some(l1), Some(l2)) = (config.l1, config.l2) {
        return Ok(SmoothnessEstimates {
            l1,
            l2,
            source: SmoothnessSource::User,
        });
    }
    if shards.len() != graph.m() {
        return dim_err("graph and shards disagree on client count");
    }
    let kappa = theta.link().curvature_bound();
    let per_client = shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let x = s.train.features();
            let lx = if s.train.is_empty() {
                0.0
            } else {
                top_eigenvalue_psd(&x.gram(s.train.len() as f64), 5000, 1e-12)
            };
            let lc = membership_smoothness(theta, s, config.architecture);
            let d = graph.degree(i) + graph.self_affinity()[i];
            (lx, s.weight * lc + 2.0 * config.lambda * d)
        })
        .collect::<Vec<_>>();
    let l1 = kappa * per_client.iter().map(|p| p.0).fold(0.0, f64::max);
    let l2 = per_client.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(SmoothnessEstimates {
        l1: config.l1.unwrap_or(l1.max(f64::MIN_POSITIVE)),
        l2: config.l2.unwrap_or(l2.max(1e-12)),
        source: SmoothnessSource::PowerIteration,
    })
}

#[cfg(test)]
mod tests;
