use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;

use crate::embio::{Qrels, RunEntry, RunFile};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, EmbeddingMatrix};
use crate::lsh::BitCodes;

/// Pairwise scorer between a fixed set of queries and documents.
pub trait Similarity: Sync {
    fn num_queries(&self) -> usize;
    fn num_docs(&self) -> usize;
    fn score(&self, query: usize, doc: usize) -> Result<f64>;
}

/// Cosine similarity over dense rows; row norms are computed once.
pub struct CosineScorer<'a> {
    queries: &'a EmbeddingMatrix,
    docs: &'a EmbeddingMatrix,
    query_norms: Vec<f64>,
    doc_norms: Vec<f64>,
}

impl<'a> CosineScorer<'a> {
    pub fn new(queries: &'a EmbeddingMatrix, docs: &'a EmbeddingMatrix) -> Result<Self> {
        if queries.dims() != docs.dims() {
            return Err(Error::Dimension(format!(
                "queries have {} dims, documents {}",
                queries.dims(),
                docs.dims()
            )));
        }
        Ok(Self {
            queries,
            docs,
            query_norms: queries.iter_rows().map(norm).collect(),
            doc_norms: docs.iter_rows().map(norm).collect(),
        })
    }
}

impl Similarity for CosineScorer<'_> {
    fn num_queries(&self) -> usize {
        self.queries.rows()
    }

    fn num_docs(&self) -> usize {
        self.docs.rows()
    }

    fn score(&self, query: usize, doc: usize) -> Result<f64> {
        let (nq, nd) = (self.query_norms[query], self.doc_norms[doc]);
        if nq == 0.0 {
            return Err(Error::ZeroVector(format!("query row {query}")));
        }
        if nd == 0.0 {
            return Err(Error::ZeroVector(format!("document row {doc}")));
        }
        Ok(dot(self.queries.row(query), self.docs.row(doc)) / (nq * nd))
    }
}

/// SimHash estimate over packed sign bits.
pub struct HammingScorer<'a> {
    queries: &'a BitCodes,
    docs: &'a BitCodes,
}

impl<'a> HammingScorer<'a> {
    pub fn new(queries: &'a BitCodes, docs: &'a BitCodes) -> Result<Self> {
        if queries.bits_per_row() != docs.bits_per_row() {
            return Err(Error::Dimension(format!(
                "query codes have {} bits, document codes {}",
                queries.bits_per_row(),
                docs.bits_per_row()
            )));
        }
        Ok(Self { queries, docs })
    }
}

impl Similarity for HammingScorer<'_> {
    fn num_queries(&self) -> usize {
        self.queries.rows()
    }

    fn num_docs(&self) -> usize {
        self.docs.rows()
    }

    fn score(&self, query: usize, doc: usize) -> Result<f64> {
        self.queries.similarity(query, self.docs, doc)
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Exhaustive top-`k` search. For every query all documents are scored and
/// the best `k` kept, ordered by score descending with ties broken by
/// document id ascending. Queries are scored in parallel; the output does
/// not depend on the schedule.
pub fn search<S: Similarity + ?Sized>(
    query_ids: &[String],
    doc_ids: &[String],
    scorer: &S,
    k: usize,
    tag: &str,
) -> Result<RunFile> {
    if k == 0 {
        return Err(Error::Validation("cutoff k must be at least 1".into()));
    }
    if doc_ids.is_empty() {
        return Err(Error::Validation("no documents to search".into()));
    }
    if query_ids.len() != scorer.num_queries() || doc_ids.len() != scorer.num_docs() {
        return Err(Error::Dimension(format!(
            "{} query ids / {} doc ids for {} queries / {} docs",
            query_ids.len(),
            doc_ids.len(),
            scorer.num_queries(),
            scorer.num_docs()
        )));
    }
    check_unique(query_ids, "query")?;
    check_unique(doc_ids, "document")?;

    let per_query: Vec<Vec<RunEntry>> = (0..query_ids.len())
        .into_par_iter()
        .map(|q| {
            let mut scored = (0..doc_ids.len())
                .map(|d| scorer.score(q, d).map(|s| (s, d)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage(format!("query {}", query_ids[q])))?;
            let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
                b.0.total_cmp(&a.0)
                    .then_with(|| doc_ids[a.1].cmp(&doc_ids[b.1]))
            };
            let keep = k.min(scored.len());
            if keep < scored.len() {
                scored.select_nth_unstable_by(keep - 1, order);
                scored.truncate(keep);
            }
            scored.sort_unstable_by(order);
            Ok(scored
                .into_iter()
                .enumerate()
                .map(|(r, (score, d))| RunEntry {
                    query_id: query_ids[q].clone(),
                    doc_id: doc_ids[d].clone(),
                    rank: r + 1,
                    score,
                    tag: tag.to_string(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    RunFile::new(per_query.into_iter().flatten().collect())
}

/// Queries and documents with ids, judgments and cutoff.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub name: String,
    pub queries: EmbeddingMatrix,
    pub query_ids: Vec<String>,
    pub docs: EmbeddingMatrix,
    pub doc_ids: Vec<String>,
    pub qrels: Qrels,
    pub k: usize,
}

impl RetrievalTask {
    pub fn new(
        name: impl Into<String>,
        queries: EmbeddingMatrix,
        query_ids: Vec<String>,
        docs: EmbeddingMatrix,
        doc_ids: Vec<String>,
        qrels: Qrels,
    ) -> Result<Self> {
        if queries.rows() != query_ids.len() {
            return Err(Error::Dimension(format!(
                "{} query rows but {} query ids",
                queries.rows(),
                query_ids.len()
            )));
        }
        if docs.rows() != doc_ids.len() {
            return Err(Error::Dimension(format!(
                "{} document rows but {} document ids",
                docs.rows(),
                doc_ids.len()
            )));
        }
        check_unique(&query_ids, "query")?;
        check_unique(&doc_ids, "document")?;
        Ok(Self {
            name: name.into(),
            queries,
            query_ids,
            docs,
            doc_ids,
            qrels,
            k: super::DEFAULT_CUTOFF,
        })
    }

    pub fn with_cutoff(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn from_planted(name: impl Into<String>, t: crate::synth::PlantedTask) -> Self {
        Self::new(name, t.queries, t.query_ids, t.docs, t.doc_ids, t.qrels)
            .expect("planted tasks have consistent ids")
    }

    /// Same ids and judgments with different query/document matrices.
    pub fn with_embeddings(&self, queries: EmbeddingMatrix, docs: EmbeddingMatrix) -> Result<Self> {
        Ok(Self::new(
            self.name.clone(),
            queries,
            self.query_ids.clone(),
            docs,
            self.doc_ids.clone(),
            self.qrels.clone(),
        )?
        .with_cutoff(self.k))
    }

    /// Cosine search over the task's raw embeddings.
    pub fn search_cosine(&self, tag: &str) -> Result<RunFile> {
        let scorer = CosineScorer::new(&self.queries, &self.docs)?;
        search(&self.query_ids, &self.doc_ids, &scorer, self.k, tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn ranks_by_score() {
        // doc cosines with the query: 0.9, 0.2, 0.5
        let q = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let docs = EmbeddingMatrix::from_rows(&[
            [0.9f32, (1.0f32 - 0.81).sqrt()],
            [0.2, (1.0f32 - 0.04).sqrt()],
            [0.5, (1.0f32 - 0.25).sqrt()],
        ])
        .unwrap();
        let scorer = CosineScorer::new(&q, &docs).unwrap();
        let run = search(&ids("q", 1), &ids("d", 3), &scorer, 2, "t").unwrap();
        let got: Vec<_> = run
            .entries()
            .iter()
            .map(|e| (e.doc_id.as_str(), e.rank))
            .collect();
        assert_eq!(got, vec![("d0", 1), ("d2", 2)]);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let q = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let docs = EmbeddingMatrix::from_rows(&[[1.0f32, 1.0], [1.0, 1.0], [1.0, -1.0]]).unwrap();
        let doc_ids = vec!["zeta".to_string(), "alpha".into(), "mid".into()];
        let scorer = CosineScorer::new(&q, &docs).unwrap();
        for _ in 0..3 {
            let run = search(&ids("q", 1), &doc_ids, &scorer, 3, "t").unwrap();
            let order: Vec<_> = run.entries().iter().map(|e| e.doc_id.as_str()).collect();
            assert_eq!(order, vec!["alpha", "mid", "zeta"]);
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let t = synth::PlantedTask::gaussian(200, 60, 16, 0.8, 3);
        let task = RetrievalTask::from_planted("p", t);
        let parallel = task.search_cosine("t").unwrap().to_trec_string();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| task.search_cosine("t").unwrap().to_trec_string());
        assert_eq!(parallel, serial);
    }

    #[test]
    fn errors_carry_query_id() {
        let q = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        let docs = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let scorer = CosineScorer::new(&q, &docs).unwrap();
        let err = search(&ids("q", 2), &ids("d", 1), &scorer, 10, "t").unwrap_err();
        assert!(err.to_string().contains("query q1"));
        assert!(search(&ids("q", 2), &ids("d", 1), &scorer, 0, "t").is_err());
        let dup = vec!["d".to_string()];
        let single = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let s = CosineScorer::new(&single, &single).unwrap();
        assert!(search(&dup, &dup, &s, 1, "t").is_ok());
        assert!(
            RetrievalTask::new("x", single.clone(), vec![], single, dup, Qrels::default()).is_err()
        );
    }
}
