//! Frozen-embedding kNN evaluation.

use crate::data::Dataset;
use crate::error::{contract, param, Result};
use crate::imaging::Image;
use crate::model::{embed, ModelParams};

/// Labeled, row-normalized embeddings (`n × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<f64>,
    labels: Vec<u8>,
}

/// Scale each `dim`-sized row to unit norm. Zero rows stay zero.
pub fn normalize_rows(rows: &mut [f64], dim: usize) {
    for r in rows.chunks_exact_mut(dim) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            r.iter_mut().for_each(|v| *v /= n);
        }
    }
}

impl EmbeddingTable {
    /// Build a table from raw (unnormalized) rows.
    pub fn new(mut rows: Vec<f64>, dim: usize, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || rows.len() != dim * labels.len() {
            return Err(contract(format!("{} values do not form {} rows of {dim}", rows.len(), labels.len())));
        }
        normalize_rows(&mut rows, dim);
        Ok(EmbeddingTable { dim, rows, labels })
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

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Projector outputs of a labeled dataset in inference mode, unit-normalized.
pub fn embed_dataset(params: &ModelParams<f32>, ds: &Dataset) -> Result<EmbeddingTable> {
    let labels = ds.labels.clone().ok_or_else(|| param("kNN evaluation needs a labeled dataset"))?;
    let dim = params.arch.proj_dim;
    let mut rows = Vec::with_capacity(ds.len() * dim);
    for chunk in ds.images.chunks(256) {
        let refs: Vec<&Image> = chunk.iter().collect();
        rows.extend(embed(params, &refs)?.into_iter().map(f64::from));
    }
    EmbeddingTable::new(rows, dim, labels)
}

/// Majority vote among the `k` most cosine-similar rows of `train`.
///
/// Neighbours are ranked by similarity (ties: lower row index). Vote ties are
/// broken by summed similarity, then by the lowest class id.
pub fn knn_classify(train: &EmbeddingTable, queries: &[f64], k: usize) -> Result<Vec<u8>> {
    if train.is_empty() {
        return Err(param("kNN table is empty"));
    }
    if k == 0 || k > train.len() {
        return Err(param(format!("k must be in 1..={} (got {k})", train.len())));
    }
    let d = train.dim;
    if queries.len() % d != 0 {
        return Err(contract(format!("query matrix length {} is not a multiple of {d}", queries.len())));
    }
    let n_classes = train.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut q = queries.to_vec();
    normalize_rows(&mut q, d);
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    let mut preds = Vec::with_capacity(q.len() / d);
    for query in q.chunks_exact(d) {
        sims.clear();
        for (i, row) in train.rows.chunks_exact(d).enumerate() {
            sims.push((row.iter().zip(query).map(|(a, b)| a * b).sum(), i));
        }
        let rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, rank);
        }
        let mut votes = vec![(0usize, 0f64); n_classes];
        for &(s, i) in &sims[..k] {
            let v = &mut votes[train.labels[i] as usize];
            v.0 += 1;
            v.1 += s;
        }
        let best = votes
            .iter()
            .enumerate()
            .max_by(|(ca, a), (cb, b)| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(cb.cmp(ca)))
            .map(|(c, _)| c as u8)
            .unwrap_or(0);
        preds.push(best);
    }
    Ok(preds)
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(param(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(param("accuracy of an empty prediction set"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// kNN accuracy of `queries` against the `bank` table.
pub fn knn_accuracy(bank: &EmbeddingTable, queries: &EmbeddingTable, k: usize) -> Result<f64> {
    let pred = knn_classify(bank, queries.rows(), k)?;
    accuracy(&pred, queries.labels())
}
