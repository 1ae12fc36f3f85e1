//! Labeled datasets and shard splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, PpflError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }

    /// Number of label classes; `None` for regression.
    pub fn num_classes(self) -> Option<usize> {
        match self {
            Task::Regression => None,
            Task::Binary => Some(2),
            Task::Multiclass { classes } => Some(classes),
        }
    }
}

/// Feature matrix (`n x d`) with one target per row.
///
/// Classification targets are stored as integral `f64` class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DenseMatrix,
    labels: Vec<f64>,
    task: Task,
}

impl LabeledDataset {
    pub fn new(features: DenseMatrix, labels: Vec<f64>, task: Task) -> Result<Self> {
        if features.rows() != labels.len() {
            return dim_err(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            ));
        }
        if let Some(classes) = task.num_classes() {
            if let Some(bad) = labels
                .iter()
                .find(|&&y| y.fract() != 0.0 || y < 0.0 || y >= classes as f64)
            {
                return Err(PpflError::InvalidArgument(format!(
                    "label {bad} outside [0, {classes})"
                )));
            }
        } else if labels.iter().any(|y| !y.is_finite()) {
            return Err(PpflError::InvalidArgument("non-finite label".into()));
        }
        Ok(Self {
            features,
            labels,
            task,
        })
    }

    pub fn empty(dim: usize, task: Task) -> Self {
        Self {
            features: DenseMatrix::zeros(0, dim),
            labels: Vec::new(),
            task,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    pub fn sample(&self, i: usize) -> (&[f64], f64) {
        (self.features.row(i), self.labels[i])
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features: DenseMatrix::from_vec(indices.len(), d, data).expect("consistent shape"),
            labels,
            task: self.task,
        }
    }

    /// Row-wise concatenation of datasets sharing dimension and task.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| PpflError::InvalidArgument("nothing to concatenate".into()))?;
        let d = first.dim();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != d || p.task != first.task {
                return dim_err("concat: incompatible datasets");
            }
            data.extend_from_slice(p.features.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        Ok(Self {
            features: DenseMatrix::from_vec(labels.len(), d, data)?,
            labels,
            task: first.task,
        })
    }

    /// Counts per class; `None` for regression.
    pub fn label_histogram(&self) -> Option<Vec<f64>> {
        let classes = self.task.num_classes()?;
        let mut h = vec![0.0; classes];
        for &y in &self.labels {
            h[y as usize] += 1.0;
        }
        Some(h)
    }
}

/// Shuffled split into `ceil(frac * n)` training rows and the remainder.
pub fn split_train_test(
    ds: &LabeledDataset,
    frac: f64,
    rng: &RngStream,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if ds.is_empty() {
        return Err(PpflError::EmptyShard);
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(PpflError::InvalidArgument(format!(
            "train fraction {frac} not in (0, 1)"
        )));
    }
    let n = ds.len();
    let n_train = ((frac * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledDataset {
        let x = DenseMatrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(x, (0..n).map(|i| i as f64).collect(), Task::Regression).unwrap()
    }

    #[test]
    fn split_sizes() {
        let rng = RngStream::root(1);
        let (tr, te) = split_train_test(&toy(10), 0.8, &rng).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split_train_test(&toy(1), 0.8, &rng).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 0));
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let rng = RngStream::root(3);
        let ds = toy(37);
        let (a, b) = split_train_test(&ds, 0.8, &rng).unwrap();
        let (a2, _) = split_train_test(&ds, 0.8, &rng).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = a.labels().iter().chain(b.labels()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, ds.labels());
    }

    #[test]
    fn split_empty_errors() {
        let ds = LabeledDataset::empty(2, Task::Binary);
        let err = split_train_test(&ds, 0.8, &RngStream::root(0)).unwrap_err();
        assert_eq!(err.to_string(), "empty shard");
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let x = DenseMatrix::zeros(2, 1);
        assert!(LabeledDataset::new(x.clone(), vec![0.0, 2.0], Task::Binary).is_err());
        assert!(LabeledDataset::new(x.clone(), vec![0.0, 0.5], Task::Binary).is_err());
        assert!(LabeledDataset::new(x, vec![0.0], Task::Binary).is_err());
    }
}
