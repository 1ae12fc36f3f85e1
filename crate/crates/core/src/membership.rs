//! Simplex-constrained membership vectors.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, PpflError, Result};

/// Default lower bound on every membership entry.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;

/// Tolerance on `sum(c) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(c: &[f64], floor: f64) -> Result<()> {
    let sum: f64 = c.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(PpflError::InvalidArgument(format!(
            "membership sums to {sum}, expected 1"
        )));
    }
    if let Some(v) = c.iter().find(|&&v| !(v >= floor * (1.0 - 1e-9))) {
        return Err(PpflError::InvalidArgument(format!(
            "membership entry {v} below floor {floor}"
        )));
    }
    Ok(())
}

/// One client's membership vector `c_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipVector(Vec<f64>);

impl MembershipVector {
    pub fn new(c: Vec<f64>, floor: f64) -> Result<Self> {
        if c.is_empty() {
            return Err(PpflError::InvalidArgument("empty membership vector".into()));
        }
        check_simplex(&c, floor)?;
        Ok(Self(c))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub(crate) fn from_raw(c: Vec<f64>) -> Self {
        Self(c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Concatenation `C = [c_1; ...; c_M]` of all membership vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipMatrix {
    k: usize,
    data: Vec<f64>,
}

impl MembershipMatrix {
    pub fn uniform(m: usize, k: usize) -> Self {
        Self {
            k,
            data: vec![1.0 / k as f64; m * k],
        }
    }

    pub fn from_blocks(blocks: &[Vec<f64>], floor: f64) -> Result<Self> {
        let k = blocks.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(PpflError::InvalidArgument("empty membership matrix".into()));
        }
        for b in blocks {
            if b.len() != k {
                return dim_err("membership blocks of unequal length");
            }
            check_simplex(b, floor)?;
        }
        Ok(Self {
            k,
            data: blocks.concat(),
        })
    }

    pub(crate) fn from_vectors(vs: Vec<MembershipVector>) -> Self {
        let k = vs.first().map_or(0, MembershipVector::len);
        Self {
            k,
            data: vs.into_iter().flat_map(MembershipVector::into_inner).collect(),
        }
    }

    pub fn m(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.data.len() / self.k
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn set_block(&mut self, i: usize, c: &MembershipVector) {
        self.data[i * self.k..(i + 1) * self.k].copy_from_slice(c.as_slice());
    }

    /// Flat `M * K` view.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.blocks().map(<[f64]>::to_vec).collect()
    }

    /// Checks every block against the simplex and floor invariants.
    pub fn validate(&self, floor: f64) -> Result<()> {
        self.blocks().try_for_each(|b| check_simplex(b, floor))
    }
}
