use std::cmp::Ordering;
use std::fmt::Write as _;

use super::{EvalError, FeatureMatrix};
use crate::dataset::FACTOR_NAMES;

/// Average precision of one ranking: mean of precision@k over the ranks
/// `k` (1-based) holding relevant items.
pub fn average_precision(relevant_in_rank_order: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (k, rel) in relevant_in_rank_order.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

fn check(features: &FeatureMatrix, chunk: usize, factor: usize) -> Result<Vec<usize>, EvalError> {
    let layout = features.layout();
    if chunk >= layout.chunks {
        return Err(EvalError::InvalidArgument(format!(
            "chunk {chunk} out of range 0..{}",
            layout.chunks
        )));
    }
    let labels = features.factor(factor)?;
    if labels.len() < 2 {
        return Err(EvalError::InvalidArgument(format!(
            "retrieval needs at least 2 items, got {}",
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(EvalError::SingleClass { factor });
    }
    Ok(labels)
}

/// Relevance of every other item to `query`, in rank order: ascending
/// Euclidean distance on the chunk, ties by ascending index.
fn ranked_relevance(features: &FeatureMatrix, chunk: usize, labels: &[usize], query: usize, order: &mut Vec<(f64, usize)>) {
    let range = features.layout().range(chunk);
    let q = &features.row(query)[range.clone()];
    order.clear();
    for j in (0..labels.len()).filter(|&j| j != query) {
        let d: f64 = q
            .iter()
            .zip(&features.row(j)[range.clone()])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        order.push((d, j));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

/// Average precision of a single query, `None` when no other item shares
/// its label.
pub fn query_average_precision(
    features: &FeatureMatrix,
    chunk: usize,
    factor: usize,
    query: usize,
) -> Result<Option<f64>, EvalError> {
    let labels = check(features, chunk, factor)?;
    if query >= labels.len() {
        return Err(EvalError::InvalidArgument(format!("query {query} out of range")));
    }
    let mut order = Vec::new();
    ranked_relevance(features, chunk, &labels, query, &mut order);
    Ok(average_precision(order.iter().map(|&(_, j)| labels[j] == labels[query])))
}

/// Nearest-neighbour mAP of `factor` using only the coordinates of `chunk`.
///
/// Every item queries all others. Queries whose class has no other member
/// carry no relevant item and are left out of the mean.
pub fn retrieval_map(features: &FeatureMatrix, chunk: usize, factor: usize) -> Result<f64, EvalError> {
    let labels = check(features, chunk, factor)?;
    let mut order = Vec::with_capacity(labels.len());
    let (mut total, mut queries) = (0.0, 0usize);
    for q in 0..labels.len() {
        ranked_relevance(features, chunk, &labels, q, &mut order);
        if let Some(ap) = average_precision(order.iter().map(|&(_, j)| labels[j] == labels[q])) {
            total += ap;
            queries += 1;
        }
    }
    if queries == 0 {
        return Err(EvalError::InvalidArgument("no query has a relevant item".into()));
    }
    Ok(total / queries as f64)
}

/// mAP for every (factor, chunk) pair with the best chunk per factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkTable {
    /// `maps[factor][chunk]`.
    pub maps: Vec<Vec<f64>>,
    pub best_chunk: Vec<usize>,
    pub best_map: Vec<f64>,
}

impl ChunkTable {
    /// Mean over factors of the best-chunk mAP.
    pub fn average(&self) -> f64 {
        self.best_map.iter().sum::<f64>() / self.best_map.len().max(1) as f64
    }

    /// One row per factor: `n` chunk mAPs, the best chunk and its mAP.
    pub fn rows(&self) -> Vec<Vec<String>> {
        self.maps
            .iter()
            .enumerate()
            .map(|(f, row)| {
                let mut r: Vec<String> = row.iter().map(|m| format!("{m:.4}")).collect();
                r.push(self.best_chunk[f].to_string());
                r.push(format!("{:.4}", self.best_map[f]));
                r
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let n = self.maps.first().map_or(0, |r| r.len());
        let mut out = String::from("factor");
        for c in 0..n {
            let _ = write!(out, "\tchunk{c}");
        }
        out.push_str("\tbest_chunk\tbest_map\n");
        for (f, row) in self.rows().iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", factor_name(f), row.join("\t"));
        }
        out
    }

    /// Best chunk of each factor, so that distinct entries mean distinct
    /// factors were picked up by distinct chunks.
    pub fn distinct_best(&self) -> bool {
        let mut seen = self.best_chunk.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len() == self.best_chunk.len()
    }
}

pub fn factor_name(f: usize) -> String {
    FACTOR_NAMES.get(f).map_or_else(|| format!("factor{f}"), |s| s.to_string())
}

pub fn best_chunk_table(features: &FeatureMatrix) -> Result<ChunkTable, EvalError> {
    let n = features.layout().chunks;
    let mut maps = Vec::new();
    let mut best_chunk = Vec::new();
    let mut best_map = Vec::new();
    for f in 0..features.factor_count() {
        let row: Vec<f64> = (0..n)
            .map(|c| retrieval_map(features, c, f))
            .collect::<Result<_, _>>()?;
        let mut best = 0;
        for c in 1..n {
            if row[c].partial_cmp(&row[best]) == Some(Ordering::Greater) {
                best = c;
            }
        }
        best_chunk.push(best);
        best_map.push(row[best]);
        maps.push(row);
    }
    Ok(ChunkTable {
        maps,
        best_chunk,
        best_map,
    })
}
