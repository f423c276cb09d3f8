//! Synthetic blob datasets and client partitioning.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::validation("dataset must be nonempty"));
        }
        if features.rows() != labels.len() {
            return Err(Error::validation("feature rows != label count"));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::validation("label out of class range"));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::validation("empty subset"));
        }
        let d = self.dims();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            features: Tensor::new(vec![idx.len(), d], data)?,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Splits off the first `n` rows; returns (head, tail).
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::validation("split point out of range"));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }
}

/// Unit-norm class means with pairwise distance >= 1: standard basis
/// vectors when classes <= dims, otherwise a circle in the first two
/// dimensions (needs classes <= 6 for the distance bound).
fn class_means(dims: usize, classes: usize) -> Result<Vec<Vec<f64>>> {
    if classes <= dims {
        Ok((0..classes)
            .map(|c| {
                let mut m = vec![0.0; dims];
                m[c] = 1.0;
                m
            })
            .collect())
    } else if classes <= 6 {
        Ok((0..classes)
            .map(|c| {
                let theta = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                let mut m = vec![0.0; dims];
                m[0] = theta.cos();
                m[1] = theta.sin();
                m
            })
            .collect())
    } else {
        Err(Error::validation(format!(
            "cannot place {classes} unit-norm means with pairwise distance >= 1 in {dims} dims"
        )))
    }
}

/// Balanced Gaussian blobs around well-separated class means.
/// Deterministic in `seed`; labels cycle round-robin through the classes.
pub fn gen_blobs(seed: u64, n: usize, dims: usize, classes: usize, spread: f64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::validation("need at least 2 classes"));
    }
    if dims < 2 {
        return Err(Error::validation("need at least 2 dimensions"));
    }
    if n == 0 {
        return Err(Error::validation("need at least 1 sample"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::validation("spread must be non-negative"));
    }
    let means = class_means(dims, classes)?;
    let mut stream = RngStream::new(seed, "data")?;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for d in 0..dims {
            data.push(means[c][d] + spread * stream.normal());
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, dims], data)?, labels, classes)
}

/// Random permutation, then near-equal contiguous shards.
pub fn partition_uniform(ds: &Dataset, n_shards: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n_shards == 0 {
        return Err(Error::validation("need at least one shard"));
    }
    if n_shards > ds.len() {
        return Err(Error::validation(format!(
            "cannot split {} samples into {} shards",
            ds.len(),
            n_shards
        )));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    let mut stream = RngStream::new(seed, "partition")?;
    stream.shuffle(&mut perm);
    let base = ds.len() / n_shards;
    let extra = ds.len() % n_shards;
    let mut shards = Vec::with_capacity(n_shards);
    let mut cursor = 0;
    for s in 0..n_shards {
        let size = base + usize::from(s < extra);
        shards.push(ds.subset(&perm[cursor..cursor + size])?);
        cursor += size;
    }
    Ok(shards)
}

/// Largest-remainder apportionment of `total` into integer counts
/// proportional to `props`.
fn apportion(total: usize, props: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = props.iter().map(|p| (p * total as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = props
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for k in 0..total - assigned {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

/// Per-class Dirichlet(alpha) proportions across shards; resamples until
/// every shard is nonempty (bounded retries).
pub fn partition_dirichlet(
    ds: &Dataset,
    n_shards: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::validation("alpha must be positive"));
    }
    if n_shards == 0 || n_shards > ds.len() {
        return Err(Error::validation("bad shard count"));
    }
    let mut stream = RngStream::new(seed, "partition.dirichlet")?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    const MAX_RETRIES: usize = 100;
    for _ in 0..MAX_RETRIES {
        let mut assign: Vec<Vec<usize>> = vec![Vec::new(); n_shards];
        for idxs in &by_class {
            if idxs.is_empty() {
                continue;
            }
            let mut idxs = idxs.clone();
            stream.shuffle(&mut idxs);
            let gammas: Vec<f64> = (0..n_shards).map(|_| stream.gamma(alpha)).collect();
            let sum: f64 = gammas.iter().sum();
            let props: Vec<f64> = gammas.iter().map(|g| g / sum).collect();
            let counts = apportion(idxs.len(), &props);
            let mut cursor = 0;
            for (s, &c) in counts.iter().enumerate() {
                assign[s].extend_from_slice(&idxs[cursor..cursor + c]);
                cursor += c;
            }
        }
        if assign.iter().all(|a| !a.is_empty()) {
            return assign.iter().map(|a| ds.subset(a)).collect();
        }
    }
    Err(Error::validation(format!(
        "dirichlet partition degenerate after {MAX_RETRIES} retries (alpha {alpha}, {n_shards} shards)"
    )))
}
