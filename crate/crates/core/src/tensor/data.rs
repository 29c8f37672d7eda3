use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::rng::{derive_rng, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    targets: Vec<f64>,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Vec<f64>, split: Split) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        if targets.is_empty() {
            return Err(invalid("dataset must contain at least one row"));
        }
        if inputs.len() != targets.len() * dim {
            return Err(shape(format!(
                "{} inputs for {} rows of dimension {dim}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            dim,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// New dataset holding the given rows (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(format!("row {i} out of range")));
            }
            inputs.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Self::new(inputs, self.dim, targets, self.split)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.dim != other.dim {
            return Err(shape("cannot concatenate datasets of different dimension"));
        }
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(&other.inputs);
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Self::new(inputs, self.dim, targets, self.split)
    }

    /// Loads a CSV with a header of `x0..x{d-1}` feature columns and a `y`
    /// target column.
    pub fn from_csv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| invalid("CSV has no `y` column"))?;
        let dim = headers.len() - 1;
        let mut x_cols = Vec::with_capacity(dim);
        for j in 0..dim {
            let name = format!("x{j}");
            let col = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| invalid(format!("CSV is missing feature column `{name}`")))?;
            x_cols.push(col);
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let cell = |col: usize| -> Result<f64> {
                let raw = record.get(col).unwrap_or("").trim();
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "non-numeric cell {raw:?} at row {} column {}",
                            row + 1,
                            &headers[col]
                        ))
                    })
            };
            for &c in &x_cols {
                inputs.push(cell(c)?);
            }
            targets.push(cell(y_col)?);
        }
        Self::new(inputs, dim, targets, split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `y = w·x + c + noise·ε` with Gaussian features.
    Regression,
    /// Two Gaussian classes centred at `±u` for a random unit vector `u`,
    /// with per-coordinate spread `noise`. Labels are 0/1, exactly balanced.
    Classification,
    /// Balanced 0/1 labels given by the sign of `x0·x1`, features spread by
    /// `noise`. Not linearly separable.
    Xor,
}

/// Fixes the ground truth (weights, class centres) of a synthetic task so
/// that independently drawn train and test sets share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("task dimension must be positive"));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(invalid("task noise must be finite and non-negative"));
        }
        Ok(Self {
            kind,
            dim,
            noise,
            seed,
        })
    }

    fn truth(&self) -> (Vec<f64>, f64) {
        let mut rng = derive_rng(self.seed, &[domain::DATA, 0]);
        let mut w: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let c: f64 = StandardNormal.sample(&mut rng);
        if self.kind == TaskKind::Classification {
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            w.iter_mut().for_each(|v| *v /= norm);
        }
        (w, c)
    }

    pub fn sample(&self, n: usize, stream: u64, split: Split) -> Result<Dataset> {
        if n < 2 {
            return Err(invalid("a synthetic dataset needs at least 2 rows"));
        }
        let (w, c) = self.truth();
        let mut rng = derive_rng(self.seed, &[domain::DATA, 1, stream]);
        let d = self.dim;
        let mut inputs = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n);
        match self.kind {
            TaskKind::Regression => {
                for _ in 0..n {
                    let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let y = dot(&w, &x) + c + self.noise * eps;
                    inputs.extend(x);
                    targets.push(y);
                }
            }
            TaskKind::Classification => {
                for i in 0..n {
                    let label = (i % 2) as f64;
                    let sign = if label > 0.5 { 1.0 } else { -1.0 };
                    for &wj in &w {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        inputs.push(sign * wj + self.noise * eps);
                    }
                    targets.push(label);
                }
            }
            TaskKind::Xor => {
                for i in 0..n {
                    let label = (i % 2) as f64;
                    loop {
                        let x: Vec<f64> = (0..d)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect();
                        if (x[0] * x.get(1).copied().unwrap_or(1.0) > 0.0) == (label > 0.5) {
                            inputs.extend(x.iter().map(|v| {
                                let eps: f64 = StandardNormal.sample(&mut rng);
                                v + self.noise * eps
                            }));
                            break;
                        }
                    }
                    targets.push(label);
                }
            }
        }
        Dataset::new(inputs, d, targets, split)
    }

    /// Train and test sets drawn from independent streams of the same task.
    pub fn train_test(&self, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
        Ok((
            self.sample(n_train, 0, Split::Train)?,
            self.sample(n_test, 1, Split::Test)?,
        ))
    }
}

/// One-shot synthetic dataset with a default noise level (0.1 for regression,
/// 1.0 for classification).
pub fn generate_synthetic(kind: TaskKind, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(invalid("n and d must be positive"));
    }
    let noise = match kind {
        TaskKind::Regression => 0.1,
        TaskKind::Classification => 1.0,
        TaskKind::Xor => 0.05,
    };
    SyntheticTask::new(kind, d, noise, seed)?.sample(n, 0, Split::Train)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(TaskKind::Regression, 100, 5, 7).unwrap();
        let b = generate_synthetic(TaskKind::Regression, 100, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(TaskKind::Regression, 100, 5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classification_is_balanced() {
        let ds = generate_synthetic(TaskKind::Classification, 200, 2, 1).unwrap();
        let ones = ds.targets().iter().filter(|&&y| y == 1.0).count();
        let zeros = ds.targets().iter().filter(|&&y| y == 0.0).count();
        assert_eq!((zeros, ones), (100, 100));
        let xor = generate_synthetic(TaskKind::Xor, 50, 3, 1).unwrap();
        assert_eq!(xor.targets().iter().filter(|&&y| y == 1.0).count(), 25);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(generate_synthetic(TaskKind::Regression, 0, 5, 1).is_err());
        assert!(generate_synthetic(TaskKind::Regression, 10, 0, 1).is_err());
        assert!(generate_synthetic(TaskKind::Regression, 1, 2, 1).is_err());
    }

    #[test]
    fn train_and_test_share_ground_truth_but_not_rows() {
        let task = SyntheticTask::new(TaskKind::Regression, 3, 0.0, 4).unwrap();
        let (train, test) = task.train_test(20, 10).unwrap();
        assert_eq!(train.split(), Split::Train);
        assert_eq!(test.split(), Split::Test);
        assert_ne!(train.row(0), test.row(0));
    }

    #[test]
    fn csv_loader_reads_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::File::create(&good)
            .unwrap()
            .write_all(b"x0,x1,y\n1,2,0\n3,4.5,1\n")
            .unwrap();
        let ds = Dataset::from_csv(&good, Split::Train).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(1), &[3.0, 4.5]);
        assert_eq!(ds.targets(), &[0.0, 1.0]);

        let bad = dir.path().join("bad.csv");
        std::fs::File::create(&bad)
            .unwrap()
            .write_all(b"x0,y\n1,abc\n")
            .unwrap();
        assert!(Dataset::from_csv(&bad, Split::Train).is_err());

        let missing = dir.path().join("missing.csv");
        std::fs::File::create(&missing)
            .unwrap()
            .write_all(b"x1,y\n1,0\n")
            .unwrap();
        assert!(Dataset::from_csv(&missing, Split::Train).is_err());
    }
}
