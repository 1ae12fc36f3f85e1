//! Membership-recovery metrics against ground truth.
//!
//! Canonical models are identified only up to a permutation, so estimated
//! columns are aligned to the truth first: exhaustively for `K <= 6`,
//! greedily on the pairwise cost matrix beyond that.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::membership::MembershipMatrix;

const EXHAUSTIVE_MAX_K: usize = 6;

/// Calls `f` on every permutation of `0..n` (Heap's algorithm), starting with
/// the identity.
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Assignment `perm` (row `r` → column `perm[r]`) minimizing
/// `Σ_r cost[r][perm[r]]` for a square cost matrix. Ties keep the first
/// permutation visited.
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n <= EXHAUSTIVE_MAX_K {
        let mut best = (f64::INFINITY, (0..n).collect::<Vec<_>>());
        for_each_permutation(n, |p| {
            let v: f64 = p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            if v < best.0 {
                best = (v, p.to_vec());
            }
        });
        return best.1;
    }
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| (cost[r][c], r, c))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, r, c) in pairs {
        if perm[r] == usize::MAX && !used[c] {
            perm[r] = c;
            used[c] = true;
        }
    }
    perm
}

/// Column permutation `perm` such that column `perm[k]` of `c_hat` is
/// matched with truth column `k`, minimizing the total L1 gap.
pub fn align_columns(c_hat: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<usize>> {
    if c_hat.len() != truth.len() || c_hat.is_empty() {
        return dim_err(format!("{} estimated vs {} true rows", c_hat.len(), truth.len()));
    }
    let k = truth[0].len();
    if c_hat.iter().chain(truth).any(|r| r.len() != k) {
        return dim_err("membership rows of unequal width");
    }
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|kt| {
            (0..k)
                .map(|kh| c_hat.iter().zip(truth).map(|(h, t)| (t[kt] - h[kh]).abs()).sum())
                .collect()
        })
        .collect();
    Ok(min_cost_assignment(&cost))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryGap {
    /// `½ Σ_k |α_ik − ĉ_ik|` per client after alignment.
    pub per_client: Vec<f64>,
    pub mean: f64,
    pub permutation: Vec<usize>,
}

/// Total-variation gap between estimated memberships and ground-truth
/// mixture weights, after the best column alignment.
pub fn membership_recovery_gap(c_hat: &MembershipMatrix, alpha: &[Vec<f64>]) -> Result<RecoveryGap> {
    let rows = c_hat.to_rows();
    let perm = align_columns(&rows, alpha)?;
    let per_client: Vec<f64> = rows
        .iter()
        .zip(alpha)
        .map(|(h, t)| 0.5 * t.iter().enumerate().map(|(k, &a)| (a - h[perm[k]]).abs()).sum::<f64>())
        .map(|g| g.clamp(0.0, 1.0))
        .collect();
    let mean = per_client.iter().sum::<f64>() / per_client.len() as f64;
    Ok(RecoveryGap {
        per_client,
        mean,
        permutation: perm,
    })
}

/// Fraction of clients whose dominant canonical model maps to their true
/// group under the best canonical-to-group matching. Ties in the argmax go
/// to the lowest index.
pub fn group_identification_rate(c_hat: &MembershipMatrix, groups: &[usize]) -> Result<f64> {
    if groups.len() != c_hat.m() || groups.is_empty() {
        return dim_err(format!("{} group labels for {} clients", groups.len(), c_hat.m()));
    }
    let k = c_hat.k();
    let g = groups.iter().max().map_or(0, |m| m + 1);
    let n = k.max(g);
    // counts[canonical][group]
    let mut counts = vec![vec![0.0; n]; n];
    for (row, &grp) in c_hat.blocks().zip(groups) {
        let arg = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        counts[arg][grp] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let perm = min_cost_assignment(&cost);
    let hits: f64 = perm.iter().enumerate().map(|(r, &c)| counts[r][c]).sum();
    Ok(hits / groups.len() as f64)
}
