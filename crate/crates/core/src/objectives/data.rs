//! Labelled datasets, the synthetic multi-class generator, the CSV loader
//! and the similarity-controlled client split.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::rng::{Purpose, RngStream};

/// Row-major feature matrix with integer class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, n_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(FedError::param("dataset needs at least one feature column"));
        }
        if features.len() != dim * labels.len() {
            return Err(FedError::Dimension {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(FedError::param(format!("label {bad} out of range 0..{n_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(FedError::param("dataset features must be finite"));
        }
        Ok(Dataset {
            dim,
            n_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            n_classes: self.n_classes,
            features,
            labels,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Reads header-free rows of `d` feature columns followed by one integer
    /// label column. The class count is `max label + 1`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut dim = None;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(FedError::config(
                    format!("row {}", line + 1),
                    "expected at least one feature column and a label",
                ));
            }
            let d = record.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(FedError::config(
                        format!("row {}", line + 1),
                        format!("expected {prev} feature columns, found {d}"),
                    ))
                }
                _ => {}
            }
            for (j, field) in record.iter().take(d).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    FedError::config(format!("row {}, column {}", line + 1, j + 1), format!("not a number: {field:?}"))
                })?;
                features.push(v);
            }
            let raw = record[d].trim();
            let label: usize = raw.parse().map_err(|_| {
                FedError::config(format!("row {}, label", line + 1), format!("not a class index: {raw:?}"))
            })?;
            labels.push(label);
        }
        let dim = dim.ok_or_else(|| FedError::param("dataset is empty"))?;
        let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
        Dataset::new(dim, n_classes, features, labels)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian class clusters: class means are drawn from `N(0, separation²·I)`
/// and each example adds unit-variance isotropic noise to its class mean.
/// Feature `j` is then scaled by `anisotropy^(−j/(d−1))`, which leaves the
/// classes equally separable but makes the loss ill-conditioned.
/// Labels cycle through the classes so every class count differs by at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassification {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    #[serde(default = "unit")]
    pub anisotropy: f64,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SyntheticClassification {
    pub const DEFAULT_SEPARATION: f64 = 0.5;

    pub fn new(n: usize, dim: usize, classes: usize, seed: u64) -> Self {
        SyntheticClassification {
            n,
            dim,
            classes,
            separation: Self::DEFAULT_SEPARATION,
            anisotropy: 1.0,
            seed,
        }
    }

    pub fn with_separation(self, separation: f64) -> Self {
        SyntheticClassification { separation, ..self }
    }

    pub fn with_anisotropy(self, anisotropy: f64) -> Self {
        SyntheticClassification { anisotropy, ..self }
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.classes < 1 || self.n < self.classes {
            return Err(FedError::param("need n >= C >= 1"));
        }
        if self.dim < 2 {
            return Err(FedError::param("synthetic data needs d >= 2"));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(FedError::param("separation must be finite and >= 0"));
        }
        if !(self.anisotropy >= 1.0) || !self.anisotropy.is_finite() {
            return Err(FedError::param("anisotropy must be finite and >= 1"));
        }
        let mut rng = RngStream::new(self.seed, Purpose::Dataset).rng();
        let means: Vec<f64> = (0..self.classes * self.dim)
            .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scales: Vec<f64> = (0..self.dim)
            .map(|j| self.anisotropy.powf(-(j as f64) / (self.dim - 1) as f64))
            .collect();
        let mut features = Vec::with_capacity(self.n * self.dim);
        let mut labels = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let label = k % self.classes;
            let mean = &means[label * self.dim..(label + 1) * self.dim];
            features.extend(
                mean.iter()
                    .zip(&scales)
                    .map(|(m, s)| (m + rng.sample::<f64, _>(StandardNormal)) * s),
            );
            labels.push(label);
        }
        Dataset::new(self.dim, self.classes, features, labels)
    }
}

pub fn make_synthetic_classification(n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    SyntheticClassification::new(n, dim, classes, seed).generate()
}

fn even_shares(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Splits the example indices of `data` among `n_clients` clients so that
/// `s`% of every client's quota is drawn uniformly at random and the rest
/// comes from a contiguous chunk of the label-sorted remainder.
///
/// The dataset is shuffled once; the first `round(s·n/100)` shuffled
/// examples form the i.i.d. pool, the remainder is stably sorted by label.
pub fn split_by_similarity(data: &Dataset, s: f64, n_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if data.is_empty() {
        return Err(FedError::param("cannot split an empty dataset"));
    }
    if !(0.0..=100.0).contains(&s) {
        return Err(FedError::param(format!("similarity must lie in [0, 100], got {s}")));
    }
    if n_clients == 0 || data.len() < n_clients {
        return Err(FedError::param(format!(
            "{} examples cannot be split among {n_clients} clients",
            data.len()
        )));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed, Purpose::Partition).rng());

    let n_iid = ((s / 100.0) * n as f64).round() as usize;
    let (iid_pool, rest) = order.split_at(n_iid);
    let mut sorted = rest.to_vec();
    sorted.sort_by_key(|&i| data.labels[i]);

    let quotas = even_shares(n, n_clients);
    let iid_quotas = even_shares(n_iid, n_clients);
    let mut clients = Vec::with_capacity(n_clients);
    let (mut iid_at, mut sorted_at) = (0, 0);
    for (quota, iid) in quotas.into_iter().zip(iid_quotas) {
        let iid = iid.min(quota);
        let from_sorted = quota - iid;
        let mut idx = Vec::with_capacity(quota);
        idx.extend_from_slice(&iid_pool[iid_at..iid_at + iid]);
        idx.extend_from_slice(&sorted[sorted_at..sorted_at + from_sorted]);
        iid_at += iid;
        sorted_at += from_sorted;
        clients.push(idx);
    }
    debug_assert_eq!(iid_at + sorted_at, n);
    Ok(clients)
}

/// Shannon entropy (nats) of the label distribution over `indices`.
pub fn label_entropy(data: &Dataset, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut h = vec![0usize; data.n_classes()];
    for &i in indices {
        h[data.labels()[i]] += 1;
    }
    let n = indices.len() as f64;
    h.into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            p * (n / c as f64).ln()
        })
        .sum()
}
