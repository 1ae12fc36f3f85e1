//! Canonical GLM ensemble: predictions, losses and analytic gradients for
//! every mixture architecture.
//!
//! The ensemble stores `K` canonical coefficient vectors as the columns of a
//! `(d * outputs) x K` matrix. For softmax models, row `j * C + m` holds the
//! coefficient of feature `j` for class `m`.
//!
//! Membership vectors are passed as plain slices: the gradients here are
//! unconstrained, and simplex handling lives in [`crate::optim`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Task};
use crate::error::{dim_err, PpflError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Inverse link of the GLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Link {
    Identity,
    Logit,
    Softmax { classes: usize },
}

impl Link {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Link::Identity,
            Task::Binary => Link::Logit,
            Task::Multiclass { classes } => Link::Softmax { classes },
        }
    }

    /// Width of the linear predictor per canonical model.
    pub fn outputs(self) -> usize {
        match self {
            Link::Softmax { classes } => classes,
            _ => 1,
        }
    }

    /// Upper bound on the curvature of the negative log-likelihood in the
    /// linear predictor.
    pub fn curvature_bound(self) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => 0.25,
            Link::Softmax { .. } => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Weighted sum of canonical predictions, `sum_k c_k g^-1(x^T theta_k)`.
    #[default]
    PredictionMixture,
    /// Personalized coefficients `theta c` fed through the link.
    ParameterMixture,
    /// Membership-weighted sum of per-canonical negative log-likelihoods.
    LossMixture,
}

/// The `K` shared canonical models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEnsemble {
    theta: DenseMatrix,
    link: Link,
}

impl CanonicalEnsemble {
    pub fn new(theta: DenseMatrix, link: Link) -> Result<Self> {
        if theta.rows() % link.outputs() != 0 {
            return dim_err(format!(
                "theta has {} rows, not a multiple of {} outputs",
                theta.rows(),
                link.outputs()
            ));
        }
        if theta.cols() == 0 {
            return Err(PpflError::InvalidArgument("K must be at least 1".into()));
        }
        if !theta.is_finite() {
            return Err(PpflError::InvalidArgument("non-finite theta".into()));
        }
        Ok(Self { theta, link })
    }

    /// Entries i.i.d. uniform in `[-scale, scale]`.
    pub fn random_uniform(
        dim: usize,
        k: usize,
        link: Link,
        scale: f64,
        rng: &RngStream,
    ) -> Result<Self> {
        let mut r = rng.rng();
        let rows = dim * link.outputs();
        let data = (0..rows * k).map(|_| r.gen_range(-scale..=scale)).collect();
        Self::new(DenseMatrix::from_vec(rows, k, data)?, link)
    }

    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut DenseMatrix {
        &mut self.theta
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn k(&self) -> usize {
        self.theta.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.rows() / self.link.outputs()
    }

    /// Total number of trainable coefficients.
    pub fn num_params(&self) -> usize {
        self.theta.rows() * self.theta.cols()
    }

    /// Linear predictor of canonical model `k` at `x`, one value per output.
    fn logits_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let o = self.link.outputs();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let base = j * o;
            for (m, v) in out.iter_mut().enumerate() {
                *v += xj * self.theta.get(base + m, k);
            }
        }
    }
}

#[inline]
fn clamp_logit(z: f64) -> (f64, f64) {
    if z.abs() < LOGIT_CLAMP {
        (z, 1.0)
    } else {
        (z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), 0.0)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse link applied in place. Returns the per-component clamp masks.
fn apply_inverse_link(link: Link, z: &mut [f64], mask: &mut [f64]) {
    match link {
        Link::Identity => {
            mask[0] = 1.0;
        }
        Link::Logit => {
            let (zc, m) = clamp_logit(z[0]);
            mask[0] = m;
            z[0] = sigmoid(zc);
        }
        Link::Softmax { .. } => {
            let mut max = f64::NEG_INFINITY;
            for (v, m) in z.iter_mut().zip(mask.iter_mut()) {
                let (vc, mm) = clamp_logit(*v);
                *v = vc;
                *m = mm;
                max = max.max(vc);
            }
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            z.iter_mut().for_each(|v| *v /= sum);
        }
    }
}

/// Negative log-likelihood of a single GLM at linear predictor `z` and its
/// derivative with respect to `z` (written into `dz`).
fn glm_loss_and_dz(link: Link, z: &[f64], y: f64, dz: &mut [f64]) -> f64 {
    match link {
        Link::Identity => {
            let r = z[0] - y;
            dz[0] = r;
            0.5 * r * r
        }
        Link::Logit => {
            let (zc, m) = clamp_logit(z[0]);
            dz[0] = m * (sigmoid(zc) - y);
            softplus(zc) - y * zc
        }
        Link::Softmax { .. } => {
            let yc = y as usize;
            let mut max = f64::NEG_INFINITY;
            for (d, &v) in dz.iter_mut().zip(z) {
                let (vc, _) = clamp_logit(v);
                *d = vc;
                max = max.max(vc);
            }
            let mut sum = 0.0;
            for d in dz.iter_mut() {
                sum += (*d - max).exp();
            }
            let lse = max + sum.ln();
            let loss = lse - dz[yc];
            for (m, (d, &v)) in dz.iter_mut().zip(z).enumerate() {
                let p = (*d - lse).exp();
                let mask = clamp_logit(v).1;
                *d = mask * (p - if m == yc { 1.0 } else { 0.0 });
            }
            loss
        }
    }
}

/// Loss of a mixed prediction `q` and its derivative with respect to `q`.
fn mixture_loss_and_dq(link: Link, q: &[f64], y: f64, dq: &mut [f64]) -> f64 {
    match link {
        Link::Identity => {
            let r = q[0] - y;
            dq[0] = r;
            0.5 * r * r
        }
        Link::Logit => {
            let p = q[0];
            dq[0] = -y / p + (1.0 - y) / (1.0 - p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
        Link::Softmax { .. } => {
            let yc = y as usize;
            dq.iter_mut().for_each(|v| *v = 0.0);
            dq[yc] = -1.0 / q[yc];
            -q[yc].ln()
        }
    }
}

/// Multiplies `g` by the transposed Jacobian of the inverse link at the
/// activations `h` (already evaluated), honoring clamp masks.
fn inverse_link_vjp(link: Link, h: &[f64], mask: &[f64], g: &mut [f64]) {
    match link {
        Link::Identity => {}
        Link::Logit => g[0] *= mask[0] * h[0] * (1.0 - h[0]),
        Link::Softmax { .. } => {
            let s: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
            for ((gv, &hv), &m) in g.iter_mut().zip(h).zip(mask) {
                *gv = m * hv * (*gv - s);
            }
        }
    }
}

/// Per-sample scratch space.
struct Scratch {
    logits: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    q: Vec<f64>,
    dq: Vec<f64>,
    dz: Vec<f64>,
}

impl Scratch {
    fn new(k: usize, o: usize) -> Self {
        Self {
            logits: vec![vec![0.0; o]; k],
            masks: vec![vec![1.0; o]; k],
            q: vec![0.0; o],
            dq: vec![0.0; o],
            dz: vec![0.0; o],
        }
    }
}

/// Loss (and optionally gradients) of one sample, gradients accumulated
/// with `weight`.
fn sample_eval(
    ens: &CanonicalEnsemble,
    c: &[f64],
    x: &[f64],
    y: f64,
    arch: Architecture,
    weight: f64,
    grad_theta: Option<&mut DenseMatrix>,
    grad_c: Option<&mut [f64]>,
    s: &mut Scratch,
) -> f64 {
    let link = ens.link;
    let o = link.outputs();
    let k = ens.k();
    match arch {
        Architecture::PredictionMixture => {
            s.q.iter_mut().for_each(|v| *v = 0.0);
            for kk in 0..k {
                ens.logits_into(kk, x, &mut s.logits[kk]);
                apply_inverse_link(link, &mut s.logits[kk], &mut s.masks[kk]);
                for m in 0..o {
                    s.q[m] += c[kk] * s.logits[kk][m];
                }
            }
            let loss = mixture_loss_and_dq(link, &s.q, y, &mut s.dq);
            if let Some(gc) = grad_c {
                for kk in 0..k {
                    let v: f64 = s.dq.iter().zip(&s.logits[kk]).map(|(a, b)| a * b).sum();
                    gc[kk] += weight * v;
                }
            }
            if let Some(gt) = grad_theta {
                for kk in 0..k {
                    if c[kk] == 0.0 {
                        continue;
                    }
                    s.dz.copy_from_slice(&s.dq);
                    inverse_link_vjp(link, &s.logits[kk], &s.masks[kk], &mut s.dz);
                    scatter_outer(gt, kk, x, &s.dz, weight * c[kk]);
                }
            }
            loss
        }
        Architecture::ParameterMixture => {
            // z = sum_k c_k z_k
            s.q.iter_mut().for_each(|v| *v = 0.0);
            for kk in 0..k {
                ens.logits_into(kk, x, &mut s.logits[kk]);
                for m in 0..o {
                    s.q[m] += c[kk] * s.logits[kk][m];
                }
            }
            let loss = glm_loss_and_dz(link, &s.q, y, &mut s.dz);
            if let Some(gc) = grad_c {
                for kk in 0..k {
                    let v: f64 = s.dz.iter().zip(&s.logits[kk]).map(|(a, b)| a * b).sum();
                    gc[kk] += weight * v;
                }
            }
            if let Some(gt) = grad_theta {
                for kk in 0..k {
                    if c[kk] != 0.0 {
                        scatter_outer(gt, kk, x, &s.dz, weight * c[kk]);
                    }
                }
            }
            loss
        }
        Architecture::LossMixture => {
            let mut loss = 0.0;
            let want_theta = grad_theta.is_some();
            let mut gt = grad_theta;
            let mut gc = grad_c;
            for kk in 0..k {
                ens.logits_into(kk, x, &mut s.logits[kk]);
                let lk = glm_loss_and_dz(link, &s.logits[kk], y, &mut s.dz);
                loss += c[kk] * lk;
                if let Some(g) = gc.as_deref_mut() {
                    g[kk] += weight * lk;
                }
                if want_theta && c[kk] != 0.0 {
                    scatter_outer(gt.as_deref_mut().unwrap(), kk, x, &s.dz, weight * c[kk]);
                }
            }
            loss
        }
    }
}

/// `grad[:, k] += scale * (x ⊗ dz)`.
#[inline]
fn scatter_outer(grad: &mut DenseMatrix, k: usize, x: &[f64], dz: &[f64], scale: f64) {
    let o = dz.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let f = scale * xj;
        for (m, &g) in dz.iter().enumerate() {
            grad.add_at(j * o + m, k, f * g);
        }
    }
}

fn check_shapes(ens: &CanonicalEnsemble, c: &[f64], ds: &LabeledDataset) -> Result<()> {
    if c.len() != ens.k() {
        return dim_err(format!("membership has {} entries, K = {}", c.len(), ens.k()));
    }
    if ds.dim() != ens.feature_dim() {
        return dim_err(format!(
            "data dimension {} vs model dimension {}",
            ds.dim(),
            ens.feature_dim()
        ));
    }
    if Link::for_task(ds.task()) != ens.link {
        return Err(PpflError::InvalidArgument(format!(
            "task {:?} incompatible with link {:?}",
            ds.task(),
            ens.link
        )));
    }
    Ok(())
}

/// Mean loss and both gradients over a set of rows.
#[derive(Debug, Clone)]
pub struct LocalEval {
    pub loss: f64,
    pub grad_theta: DenseMatrix,
    pub grad_c: Vec<f64>,
}

fn evaluate_rows(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    rows: Option<&[usize]>,
    arch: Architecture,
    want_theta: bool,
    want_c: bool,
) -> Result<LocalEval> {
    check_shapes(ens, c, ds)?;
    let n = rows.map_or(ds.len(), <[usize]>::len);
    if n == 0 {
        return Err(PpflError::EmptyShard);
    }
    let w = 1.0 / n as f64;
    let mut gt = if want_theta {
        DenseMatrix::zeros(ens.theta.rows(), ens.k())
    } else {
        DenseMatrix::zeros(0, 0)
    };
    let mut gc = vec![0.0; if want_c { ens.k() } else { 0 }];
    let mut s = Scratch::new(ens.k(), ens.link.outputs());
    let mut loss = 0.0;
    let mut visit = |i: usize| {
        let (x, y) = ds.sample(i);
        loss += sample_eval(
            ens,
            c,
            x,
            y,
            arch,
            w,
            want_theta.then_some(&mut gt),
            want_c.then_some(gc.as_mut_slice()),
            &mut s,
        );
    };
    match rows {
        Some(r) => r.iter().for_each(|&i| visit(i)),
        None => (0..n).for_each(visit),
    }
    Ok(LocalEval {
        loss: loss * w,
        grad_theta: gt,
        grad_c: gc,
    })
}

/// Mean loss with both gradients on the whole shard.
pub fn loss_and_grads(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    arch: Architecture,
) -> Result<LocalEval> {
    evaluate_rows(ens, c, ds, None, arch, true, true)
}

/// As [`loss_and_grads`] restricted to `rows` (a minibatch).
pub fn loss_and_grads_on(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    rows: &[usize],
    arch: Architecture,
) -> Result<LocalEval> {
    evaluate_rows(ens, c, ds, Some(rows), arch, true, true)
}

/// Mean negative log-likelihood over the shard (half squared error for the
/// identity link).
pub fn local_loss(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    arch: Architecture,
) -> Result<f64> {
    Ok(evaluate_rows(ens, c, ds, None, arch, false, false)?.loss)
}

pub fn grad_theta(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    arch: Architecture,
) -> Result<DenseMatrix> {
    Ok(evaluate_rows(ens, c, ds, None, arch, true, false)?.grad_theta)
}

pub fn grad_theta_on(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    rows: &[usize],
    arch: Architecture,
) -> Result<DenseMatrix> {
    Ok(evaluate_rows(ens, c, ds, Some(rows), arch, true, false)?.grad_theta)
}

pub fn grad_c(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    arch: Architecture,
) -> Result<Vec<f64>> {
    Ok(evaluate_rows(ens, c, ds, None, arch, false, true)?.grad_c)
}

pub fn grad_c_on(
    ens: &CanonicalEnsemble,
    c: &[f64],
    ds: &LabeledDataset,
    rows: &[usize],
    arch: Architecture,
) -> Result<Vec<f64>> {
    Ok(evaluate_rows(ens, c, ds, Some(rows), arch, false, true)?.grad_c)
}

/// Personalized prediction at `x`: the mean response for identity/logit
/// links (one value) or class probabilities for softmax.
///
/// The loss-mixture architecture predicts like the prediction mixture.
pub fn predict(
    ens: &CanonicalEnsemble,
    c: &[f64],
    x: &[f64],
    arch: Architecture,
) -> Result<Vec<f64>> {
    if x.len() != ens.feature_dim() {
        return dim_err(format!(
            "feature vector has {} entries, model expects {}",
            x.len(),
            ens.feature_dim()
        ));
    }
    if c.len() != ens.k() {
        return dim_err(format!("membership has {} entries, K = {}", c.len(), ens.k()));
    }
    let o = ens.link.outputs();
    let mut z = vec![0.0; o];
    let mut mask = vec![1.0; o];
    let mut out = vec![0.0; o];
    match arch {
        Architecture::PredictionMixture | Architecture::LossMixture => {
            for (k, &ck) in c.iter().enumerate() {
                ens.logits_into(k, x, &mut z);
                apply_inverse_link(ens.link, &mut z, &mut mask);
                for m in 0..o {
                    out[m] += ck * z[m];
                }
            }
        }
        Architecture::ParameterMixture => {
            for (k, &ck) in c.iter().enumerate() {
                ens.logits_into(k, x, &mut z);
                for m in 0..o {
                    out[m] += ck * z[m];
                }
            }
            apply_inverse_link(ens.link, &mut out, &mut mask);
        }
    }
    Ok(out)
}

/// Hard decision from a prediction: class index for classification, the
/// mean itself for regression.
pub fn decide(link: Link, prediction: &[f64]) -> f64 {
    match link {
        Link::Identity => prediction[0],
        Link::Logit => {
            if prediction[0] >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        Link::Softmax { .. } => prediction
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            })
            .0 as f64,
    }
}
