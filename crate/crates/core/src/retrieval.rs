//! Brute-force cosine retrieval over an embedding database.
//!
//! Candidates are ordered by descending cosine similarity; equal
//! similarities are ordered by ascending id.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type LabelId = u64;

/// `n × d` embeddings, one unique id per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet<S> {
    vectors: Tensor<S>,
    ids: Vec<LabelId>,
    normalized: bool,
}

impl<S: Scalar> EmbeddingSet<S> {
    pub fn new(vectors: Tensor<S>, ids: Vec<LabelId>) -> Result<Self> {
        let &[n, _] = vectors.dims() else {
            return Err(Error::shape(format!(
                "embeddings must be [n, d], got {:?}",
                vectors.dims()
            )));
        };
        if ids.len() != n {
            return Err(Error::Data(format!("{} ids for {n} embeddings", ids.len())));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Data(format!("duplicate embedding id {dup}")));
        }
        if !vectors.is_finite() {
            return Err(Error::Data("embeddings contain non-finite values".into()));
        }
        Ok(Self {
            vectors,
            ids,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims()[1]
    }

    pub fn ids(&self) -> &[LabelId] {
        &self.ids
    }

    pub fn vectors(&self) -> &Tensor<S> {
        &self.vectors
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.vectors.row(i)
    }

    /// Row index of every id.
    pub fn positions(&self) -> HashMap<LabelId, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Copy with every row scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.vectors.numel());
        for (i, row) in self.vectors.data().chunks(d.max(1)).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            if norm == S::zero() {
                return Err(Error::degenerate(format!(
                    "embedding id {} has zero norm",
                    self.ids[i]
                )));
            }
            data.extend(row.iter().map(|&v| v / norm));
        }
        Ok(Self {
            vectors: Tensor::new(self.vectors.dims().to_vec(), data)?,
            ids: self.ids.clone(),
            normalized: true,
        })
    }

    /// Rows of `self` followed by rows of `other`; ids must stay unique.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "cannot join {}-d and {}-d embeddings",
                self.dim(),
                other.dim()
            )));
        }
        let mut data = self.vectors.data().to_vec();
        data.extend_from_slice(other.vectors.data());
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Self::new(Tensor::new([ids.len(), self.dim()], data)?, ids)
    }

    /// Rows of `self` whose ids are in `keep`, in `keep` order.
    pub fn subset(&self, keep: &[LabelId]) -> Result<Self> {
        let pos = self.positions();
        let rows = keep
            .iter()
            .map(|id| {
                pos.get(id)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("id {id} not in embedding set")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(self.vectors.select_outer(&rows), keep.to_vec())?;
        out.normalized = self.normalized;
        Ok(out)
    }
}

/// Immutable database of unit-norm rows.
#[derive(Clone, Debug)]
pub struct Index<S> {
    set: EmbeddingSet<S>,
}

/// Normalizes and stores the database rows.
pub fn build_index<S: Scalar>(images: &EmbeddingSet<S>) -> Result<Index<S>> {
    if images.is_empty() {
        return Err(Error::param("index needs at least one embedding"));
    }
    Ok(Index {
        set: images.normalized()?,
    })
}

impl<S: Scalar> Index<S> {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn embeddings(&self) -> &EmbeddingSet<S> {
        &self.set
    }

    fn unit_query(&self, query: &[S]) -> Result<Vec<S>> {
        if query.len() != self.dim() {
            return Err(Error::shape(format!(
                "query has {} dims, index has {}",
                query.len(),
                self.dim()
            )));
        }
        let norm = query.iter().map(|&v| v * v).sum::<S>().sqrt();
        if norm == S::zero() || !norm.is_finite() {
            return Err(Error::degenerate(format!("query norm {norm}")));
        }
        Ok(query.iter().map(|&v| v / norm).collect())
    }

    /// Cosine similarity of a query against every database row.
    pub fn similarities(&self, query: &[S]) -> Result<Vec<S>> {
        let q = self.unit_query(query)?;
        let d = self.dim();
        Ok(self
            .set
            .vectors
            .data()
            .chunks(d)
            .map(|row| row.iter().zip(&q).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    /// All database ids, most similar first.
    pub fn rank(&self, query: &[S]) -> Result<Vec<LabelId>> {
        let sims = self.similarities(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.cmp_candidates(&sims, a, b));
        Ok(order.into_iter().map(|i| self.set.ids[i]).collect())
    }

    /// First `k` ids of [`Index::rank`].
    pub fn top_k(&self, query: &[S], k: usize) -> Result<Vec<LabelId>> {
        let sims = self.similarities(query)?;
        Ok(self.head(&sims, k))
    }

    fn head(&self, sims: &[S], k: usize) -> Vec<LabelId> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let k = k.min(order.len());
        if k == 0 {
            return Vec::new();
        }
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, |&a, &b| self.cmp_candidates(sims, a, b));
            order.truncate(k);
        }
        order.sort_by(|&a, &b| self.cmp_candidates(sims, a, b));
        // collect from a slice: reusing `order`'s buffer would keep its full
        // database-sized capacity alive in every query result
        order.iter().map(|&i| self.set.ids[i]).collect()
    }

    fn cmp_candidates(&self, sims: &[S], a: usize, b: usize) -> Ordering {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then(self.set.ids[a].cmp(&self.set.ids[b]))
    }

    /// Zero-based position of `id` in the ranking of `sims`.
    fn position_of(&self, sims: &[S], target: usize) -> usize {
        (0..self.len())
            .filter(|&j| self.cmp_candidates(sims, j, target) == Ordering::Less)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub true_id: LabelId,
    /// One-based rank of the true id.
    pub rank: usize,
    /// Leading ids, truncated to the largest requested k.
    pub top: Vec<LabelId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub database_size: usize,
    pub query_count: usize,
    pub ks: Vec<usize>,
    pub hits: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub queries: Vec<QueryResult>,
}

impl RetrievalReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }
}

/// Scores `queries: [q, d]` against the index.
///
/// accuracy@k is the fraction of queries whose true id ranks within the
/// first `k` candidates.
pub fn topk_accuracy<S: Scalar>(
    index: &Index<S>,
    queries: &Tensor<S>,
    true_ids: &[LabelId],
    ks: &[usize],
) -> Result<RetrievalReport> {
    let &[q, d] = queries.dims() else {
        return Err(Error::shape(format!(
            "queries must be [q, d], got {:?}",
            queries.dims()
        )));
    };
    if d != index.dim() {
        return Err(Error::shape(format!(
            "queries have {d} dims, index has {}",
            index.dim()
        )));
    }
    if true_ids.len() != q {
        return Err(Error::Data(format!("{} true ids for {q} queries", true_ids.len())));
    }
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > index.len()) {
        return Err(Error::param(format!(
            "every k must lie in 1..={}, got {ks:?}",
            index.len()
        )));
    }
    let positions = index.set.positions();
    let targets = true_ids
        .iter()
        .map(|id| {
            positions
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("true id {id} is not in the index")))
        })
        .collect::<Result<Vec<_>>>()?;
    let k_max = *ks.iter().max().expect("ks is nonempty");

    let queries: Vec<QueryResult> = (0..q)
        .into_par_iter()
        .map(|i| {
            let sims = index.similarities(queries.row(i))?;
            Ok(QueryResult {
                true_id: true_ids[i],
                rank: index.position_of(&sims, targets[i]) + 1,
                top: index.head(&sims, k_max),
            })
        })
        .collect::<Result<_>>()?;

    let hits: Vec<usize> = ks
        .iter()
        .map(|&k| queries.iter().filter(|r| r.rank <= k).count())
        .collect();
    let accuracy = hits
        .iter()
        .map(|&h| if q == 0 { 0.0 } else { h as f64 / q as f64 })
        .collect();
    Ok(RetrievalReport {
        database_size: index.len(),
        query_count: q,
        ks: ks.to_vec(),
        hits,
        accuracy,
        queries,
    })
}

/// [`topk_accuracy`] against an enlarged database (e.g. train ∪ test images).
pub fn extended_search<S: Scalar>(
    index_train_plus_test: &Index<S>,
    queries: &Tensor<S>,
    true_ids: &[LabelId],
    ks: &[usize],
) -> Result<RetrievalReport> {
    topk_accuracy(index_train_plus_test, queries, true_ids, ks)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn set(rows: &[Vec<f64>], ids: &[u64]) -> EmbeddingSet<f64> {
        EmbeddingSet::new(Tensor::from_rows(rows).unwrap(), ids.to_vec()).unwrap()
    }

    #[test]
    fn single_row_index() {
        let idx = build_index(&set(&[vec![3.0, 4.0]], &[7])).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.rank(&[1.0, 0.0]).unwrap(), vec![7]);
    }

    #[test]
    fn rows_are_unit_norm_after_build() {
        let idx = build_index(&set(&[vec![3.0, 4.0], vec![0.0, -2.0], vec![1.0, 1.0]], &[1, 2, 3])).unwrap();
        assert!(idx.embeddings().is_normalized());
        for i in 0..3 {
            let n: f64 = idx.embeddings().row(i).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rows_and_queries_are_degenerate() {
        let err = build_index(&set(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1, 42])).unwrap_err();
        assert!(matches!(&err, Error::Degenerate(m) if m.contains("42")));
        let idx = build_index(&set(&[vec![1.0, 0.0]], &[1])).unwrap();
        assert!(matches!(idx.rank(&[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let t = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(EmbeddingSet::<f64>::new(t, vec![3, 3]).is_err());
    }

    #[test]
    fn self_retrieval_and_ties() {
        let rows = vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0], vec![5.0, 0.0, 1.0]];
        let idx = build_index(&set(&rows, &[10, 11, 12])).unwrap();
        assert_eq!(idx.rank(&rows[2]).unwrap()[0], 12);

        // orthogonal to all but one
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let idx = build_index(&set(&rows, &[0, 1, 2])).unwrap();
        assert_eq!(idx.rank(&[0.0, 0.0, 2.0]).unwrap(), vec![2, 0, 1]);

        // duplicated rows: lower id first regardless of insertion order
        let rows = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let idx = build_index(&set(&rows, &[9, 5, 3])).unwrap();
        assert_eq!(idx.rank(&[1.0, 1.0]).unwrap(), vec![3, 9, 5]);
    }

    #[test]
    fn perfect_queries_and_errors() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.2]];
        let idx = build_index(&set(&rows, &[0, 1, 2])).unwrap();
        let q = Tensor::from_rows(&rows).unwrap();
        let rep = topk_accuracy(&idx, &q, &[0, 1, 2], &[1, 3]).unwrap();
        assert_eq!(rep.accuracy, vec![1.0, 1.0]);
        assert_eq!(rep.database_size, 3);
        assert!(matches!(topk_accuracy(&idx, &q, &[0, 1, 99], &[1]), Err(Error::Data(_))));
        assert!(matches!(topk_accuracy(&idx, &q, &[0, 1, 2], &[4]), Err(Error::Parameter(_))));
        assert!(matches!(topk_accuracy(&idx, &q, &[0, 1, 2], &[0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn top_lists_do_not_hold_database_sized_buffers() {
        let rows: Vec<Vec<f64>> = (0..500).map(|i| vec![1.0, i as f64]).collect();
        let ids: Vec<u64> = (0..500).collect();
        let idx = build_index(&set(&rows, &ids)).unwrap();
        let q = Tensor::from_rows(&rows[..3]).unwrap();
        let rep = topk_accuracy(&idx, &q, &[0, 1, 2], &[2]).unwrap();
        assert!(rep.queries.iter().all(|r| r.top.len() == 2 && r.top.capacity() < 500));
    }

    #[test]
    fn orthogonal_distractors_leave_accuracy_unchanged() {
        // queries and base rows live in the first two coordinates
        let base = set(&[vec![1.0, 0.2, 0.0, 0.0], vec![0.3, 1.0, 0.0, 0.0]], &[0, 1]);
        let extra = set(&[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]], &[2, 3]);
        let q = Tensor::from_rows(&[vec![0.2, 1.0, 0.0, 0.0], vec![1.0, 0.9, 0.0, 0.0]]).unwrap();
        let small = topk_accuracy(&build_index(&base).unwrap(), &q, &[1, 0], &[1, 2]).unwrap();
        let big = extended_search(&build_index(&base.concat(&extra).unwrap()).unwrap(), &q, &[1, 0], &[1, 2]).unwrap();
        assert_eq!(small.accuracy, big.accuracy);
        assert_eq!(big.database_size, 4);
    }

    fn brute_rank(rows: &[Vec<f64>], ids: &[u64], q: &[f64]) -> Vec<u64> {
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut scored: Vec<(f64, u64)> = rows
            .iter()
            .zip(ids)
            .map(|(r, &id)| {
                let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s: f64 = r.iter().zip(q).map(|(a, b)| (a / rn) * (b / qn)).sum();
                (s, id)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, id)| id).collect()
    }

    proptest! {
        #[test]
        fn rank_matches_brute_force_and_scaling(
            raw in prop::collection::vec(prop::collection::vec(-3i32..4, 3), 1..20),
            q in prop::collection::vec(-3i32..4, 3),
            scale in 0.5f64..8.0,
        ) {
            // small integer coordinates produce plenty of exact ties
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            prop_assume!(rows.iter().all(|r| r.iter().any(|&v| v != 0.0)));
            let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
            prop_assume!(q.iter().any(|&v| v != 0.0));
            let ids: Vec<u64> = (0..rows.len() as u64).rev().collect();
            let idx = build_index(&set(&rows, &ids)).unwrap();
            let ranked = idx.rank(&q).unwrap();
            prop_assert_eq!(&ranked, &brute_rank(&rows, &ids, &q));
            let doubled: Vec<f64> = q.iter().map(|v| v * 2.0).collect();
            prop_assert_eq!(&idx.rank(&doubled).unwrap(), &ranked);
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let sr = idx.rank(&scaled).unwrap();
            prop_assert_eq!(sr.len(), ranked.len());
            for k in 1..=ranked.len() {
                prop_assert_eq!(idx.top_k(&q, k).unwrap(), ranked[..k].to_vec());
            }
        }
    }
}
