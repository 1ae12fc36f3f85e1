//! Client affinity graph and the Laplacian `(D - W) ⊗ I_K` acting on stacked
//! membership vectors. The `KM x KM` operator is never materialized.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, PpflError, Result};
use crate::linalg::{dot, min_eigenvalue_symmetric, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdStatus {
    /// Guaranteed by construction.
    ByConstruction,
    /// Checked numerically.
    Verified,
    /// Numerical check found a negative eigenvalue.
    NotPsd,
}

/// Symmetric nonnegative affinity matrix with cached degrees.
///
/// `self_affinity` holds diagonal mass removed from `W` (cosine graphs drop
/// their unit self-similarity). It does not change the Laplacian, but the
/// majorization split `W + diag(self_affinity)` is the matrix whose
/// positive semi-definiteness the surrogate relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityGraph {
    w: DenseMatrix,
    degrees: Vec<f64>,
    self_affinity: Vec<f64>,
    psd: PsdStatus,
}

fn degrees_of(w: &DenseMatrix) -> Vec<f64> {
    (0..w.rows()).map(|i| w.row(i).iter().sum()).collect()
}

impl AffinityGraph {
    fn build(w: DenseMatrix, self_affinity: Vec<f64>, psd: PsdStatus) -> Self {
        let degrees = degrees_of(&w);
        Self {
            w,
            degrees,
            self_affinity,
            psd,
        }
    }

    /// Every `w_ij = 1`, diagonal included.
    pub fn all_ones(m: usize) -> Self {
        Self::build(
            DenseMatrix::from_vec(m, m, vec![1.0; m * m]).expect("shape"),
            vec![0.0; m],
            PsdStatus::ByConstruction,
        )
    }

    pub fn empty(m: usize) -> Self {
        Self::build(DenseMatrix::zeros(m, m), vec![0.0; m], PsdStatus::ByConstruction)
    }

    /// Pairwise cosine similarity of label-frequency vectors, zero diagonal.
    pub fn from_label_histograms(histograms: &[Vec<f64>]) -> Result<Self> {
        let m = histograms.len();
        if m < 2 {
            return Err(PpflError::InvalidArgument(
                "affinity needs at least two clients".into(),
            ));
        }
        let c = histograms[0].len();
        let mut norms = Vec::with_capacity(m);
        for (i, h) in histograms.iter().enumerate() {
            if h.len() != c {
                return dim_err("label histograms of unequal length");
            }
            let n = dot(h, h).sqrt();
            if n == 0.0 {
                return Err(PpflError::InvalidArgument(format!(
                    "client {i} has an all-zero label histogram"
                )));
            }
            norms.push(n);
        }
        let mut w = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in (i + 1)..m {
                let v = dot(&histograms[i], &histograms[j]) / (norms[i] * norms[j]);
                w.set(i, j, v);
                w.set(j, i, v);
            }
        }
        Ok(Self::build(w, vec![1.0; m], PsdStatus::ByConstruction))
    }

    /// User-supplied affinity. Must be symmetric, finite and nonnegative;
    /// a negative minimum eigenvalue only triggers a warning.
    pub fn from_matrix(w: DenseMatrix) -> Result<Self> {
        if w.rows() != w.cols() {
            return dim_err(format!("affinity must be square, got {}x{}", w.rows(), w.cols()));
        }
        if !w.is_finite() || w.as_slice().iter().any(|&v| v < 0.0) {
            return Err(PpflError::InvalidArgument(
                "affinity entries must be finite and nonnegative".into(),
            ));
        }
        if !w.is_symmetric() {
            return Err(PpflError::InvalidArgument("affinity must be symmetric".into()));
        }
        let min_eig = min_eigenvalue_symmetric(&w, 5000);
        let scale = w.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let psd = if min_eig >= -1e-9 * scale.max(1.0) {
            PsdStatus::Verified
        } else {
            warn!(
                "affinity matrix is not positive semi-definite (min eigenvalue {min_eig:.3e}); \
                 the majorization surrogate may not dominate the objective"
            );
            PsdStatus::NotPsd
        };
        let m = w.rows();
        Ok(Self::build(w, vec![0.0; m], psd))
    }

    /// Header-free comma-separated `M x M` matrix.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|e| {
                            PpflError::Data(format!("{}: bad affinity entry {t:?}: {e}", path.display()))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_matrix(DenseMatrix::from_rows(&rows)?)
    }

    pub fn m(&self) -> usize {
        self.w.rows()
    }

    pub fn w(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn psd(&self) -> PsdStatus {
        self.psd
    }

    pub fn self_affinity(&self) -> &[f64] {
        &self.self_affinity
    }

    fn check(&self, c: &[f64], k: usize) -> Result<()> {
        if k == 0 || c.len() != self.m() * k {
            return dim_err(format!(
                "stacked membership has {} entries, expected {} x {k}",
                c.len(),
                self.m()
            ));
        }
        Ok(())
    }

    /// `(W C)_i = sum_j w_ij c_j` for every block.
    pub fn w_apply(&self, c: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check(c, k)?;
        let m = self.m();
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let row = self.w.row(i);
            let oi = &mut out[i * k..(i + 1) * k];
            for (j, &wij) in row.iter().enumerate() {
                if wij != 0.0 {
                    for (o, &cj) in oi.iter_mut().zip(&c[j * k..(j + 1) * k]) {
                        *o += wij * cj;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(L C)_i = d_ii c_i - sum_j w_ij c_j`.
    pub fn laplacian_apply(&self, c: &[f64], k: usize) -> Result<Vec<f64>> {
        let mut out = self.w_apply(c, k)?;
        for (i, block) in out.chunks_exact_mut(k).enumerate() {
            let d = self.degrees[i];
            for (o, &ci) in block.iter_mut().zip(&c[i * k..(i + 1) * k]) {
                *o = d * ci - *o;
            }
        }
        Ok(out)
    }

    /// Single block `(L C)_i`.
    pub fn laplacian_slice(&self, c: &[f64], k: usize, i: usize) -> Result<Vec<f64>> {
        self.check(c, k)?;
        let mut out: Vec<f64> = c[i * k..(i + 1) * k].iter().map(|v| v * self.degrees[i]).collect();
        for (j, &wij) in self.w.row(i).iter().enumerate() {
            if wij != 0.0 {
                for (o, &cj) in out.iter_mut().zip(&c[j * k..(j + 1) * k]) {
                    *o -= wij * cj;
                }
            }
        }
        Ok(out)
    }

    /// `½ Σ_ij w_ij ‖c_i − c_j‖²`.
    pub fn laplacian_pairwise(&self, c: &[f64], k: usize) -> Result<f64> {
        self.check(c, k)?;
        let m = self.m();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let wij = self.w.get(i, j);
                if wij != 0.0 {
                    let d2: f64 = c[i * k..(i + 1) * k]
                        .iter()
                        .zip(&c[j * k..(j + 1) * k])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    s += wij * d2;
                }
            }
        }
        Ok(0.5 * s)
    }

    /// `Cᵀ L C`, cross-checked against the pairwise form in debug builds.
    pub fn laplacian_quadratic(&self, c: &[f64], k: usize) -> Result<f64> {
        let lc = self.laplacian_apply(c, k)?;
        let q = dot(c, &lc);
        debug_assert!({
            let p = self.laplacian_pairwise(c, k)?;
            (p - q).abs() <= 1e-10 * (1.0 + p.abs())
        });
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_client_laplacian() {
        let w = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let g = AffinityGraph::from_matrix(w).unwrap();
        let c = [0.7, 0.3, 0.2, 0.8];
        let lc = g.laplacian_apply(&c, 2).unwrap();
        assert_eq!(lc[..2], [0.7 - 0.2, 0.3 - 0.8]);
        let q = g.laplacian_quadratic(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(q, 2.0);
        assert_eq!(g.laplacian_pairwise(&[1.0, 0.0, 0.0, 1.0], 2).unwrap(), 2.0);
    }

    #[test]
    fn empty_graph_gives_zero() {
        let g = AffinityGraph::empty(3);
        let lc = g.laplacian_apply(&[0.1, 0.9, 0.5, 0.5, 0.3, 0.7], 2).unwrap();
        assert!(lc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_blocks_in_null_space() {
        let g = AffinityGraph::all_ones(4);
        let c: Vec<f64> = [0.2, 0.3, 0.5].repeat(4);
        assert!(g.laplacian_quadratic(&c, 3).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cosine_affinity() {
        let h = vec![vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]];
        let g = AffinityGraph::from_label_histograms(&h).unwrap();
        assert!((g.w().get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(g.w().get(0, 2), 0.0);
        assert_eq!(g.w().get(1, 1), 0.0);
        assert!(AffinityGraph::from_label_histograms(&[vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(AffinityGraph::from_label_histograms(&[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn user_matrix_validation() {
        let asym = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        assert!(AffinityGraph::from_matrix(asym).is_err());
        let neg = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(AffinityGraph::from_matrix(neg).is_err());
        // zero-diagonal pair has eigenvalues ±1
        let pair = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(AffinityGraph::from_matrix(pair).unwrap().psd(), PsdStatus::NotPsd);
        let ones = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(AffinityGraph::from_matrix(ones).unwrap().psd(), PsdStatus::Verified);
    }

    #[test]
    fn shape_mismatch() {
        let g = AffinityGraph::all_ones(3);
        assert!(g.laplacian_apply(&[0.5; 5], 2).is_err());
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "0,0.5,1\n0.5,0,0.25\n1,0.25,0\n").unwrap();
        let g = AffinityGraph::from_csv(&p).unwrap();
        assert_eq!(g.degrees(), &[1.5, 0.75, 1.25]);
    }
}
