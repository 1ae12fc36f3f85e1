//! Numerical check of the mixed-model form of the objective.
//!
//! With all-ones affinity, `λ = 1/M` and `p_i = n_i/n`, substituting
//! `b_i = θ c_i` turns the Laplacian penalty into
//! `λ M Σ_i (b_i − b̄)ᵀ Λ⁻¹ (b_i − b̄)` with `Λ⁻¹ = (θ⁺)ᵀ θ⁺`, the random-effect
//! prior of a generalized linear mixed model. Both sides are evaluated
//! independently here.

use serde::{Deserialize, Serialize};

use crate::error::{PpflError, Result};
use crate::fedsim::ClientShard;
use crate::graph::AffinityGraph;
use crate::linalg::{dot, DenseMatrix};
use crate::membership::MembershipMatrix;
use crate::model::{self, Architecture, CanonicalEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmmCheck {
    pub f_ppfl: f64,
    pub f_glmm: f64,
    pub abs_diff: f64,
}

impl GlmmCheck {
    pub fn relative_diff(&self) -> f64 {
        self.abs_diff / (1.0 + self.f_ppfl.abs())
    }
}

pub fn glmm_equivalence_check(
    theta: &CanonicalEnsemble,
    c: &MembershipMatrix,
    shards: &[ClientShard],
    lambda: f64,
) -> Result<GlmmCheck> {
    let m = shards.len();
    if c.m() != m || c.k() != theta.k() {
        return Err(PpflError::Dimension(format!(
            "{} membership blocks of width {} for {m} clients and K = {}",
            c.m(),
            c.k(),
            theta.k()
        )));
    }
    let n_total: usize = shards.iter().map(|s| s.train.len()).sum();
    let size_weights: Vec<f64> = shards
        .iter()
        .map(|s| s.train.len() as f64 / n_total as f64)
        .collect();
    if shards
        .iter()
        .zip(&size_weights)
        .any(|(s, w)| (s.weight - w).abs() > 1e-12)
    {
        return Err(PpflError::InvalidArgument(
            "mixed-model equivalence requires p_i = n_i / n".into(),
        ));
    }

    // population form
    let graph = AffinityGraph::all_ones(m);
    let mut f_ppfl = 0.0;
    for (i, s) in shards.iter().enumerate() {
        f_ppfl += s.weight * model::local_loss(theta, c.block(i), &s.train, Architecture::ParameterMixture)?;
    }
    f_ppfl += lambda * graph.laplacian_pairwise(c.as_slice(), c.k())?;

    // mixed-model form
    let t = theta.theta();
    let gram = t.transpose().matmul(t)?;
    let gram_inv = gram.inverse(1e-12).ok_or(PpflError::RankDeficient)?;
    let pinv = gram_inv.matmul(&t.transpose())?; // K x p
    let lambda_inv = pinv.transpose().matmul(&pinv)?; // p x p
    let b: Vec<Vec<f64>> = c.blocks().map(|ci| t.matvec(ci)).collect::<Result<_>>()?;
    let p = t.rows();
    let mut b0 = vec![0.0; p];
    for bi in &b {
        for (o, v) in b0.iter_mut().zip(bi) {
            *o += v / m as f64;
        }
    }
    let mut f_glmm = 0.0;
    for ((s, w), bi) in shards.iter().zip(&size_weights).zip(&b) {
        let single = CanonicalEnsemble::new(DenseMatrix::from_vec(p, 1, bi.clone())?, theta.link())?;
        f_glmm += w * model::local_loss(&single, &[1.0], &s.train, Architecture::ParameterMixture)?;
    }
    let mut prior = 0.0;
    for bi in &b {
        let dev: Vec<f64> = bi.iter().zip(&b0).map(|(x, y)| x - y).collect();
        prior += dot(&dev, &lambda_inv.matvec(&dev)?);
    }
    f_glmm += lambda * m as f64 * prior;

    Ok(GlmmCheck {
        f_ppfl,
        f_glmm,
        abs_diff: (f_ppfl - f_glmm).abs(),
    })
}
