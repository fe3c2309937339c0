//! Seeded synthetic corpora and retrieval tasks with known structure.
//!
//! * [`LowRankSpace`]: rows `G·P` with `G` Gaussian `N×r` and a fixed random
//!   `r×d` projection `P`, so every pairwise cosine is exactly representable
//!   in `r` dimensions.
//! * [`PlantedTask`]: each query is a noisy copy of exactly one document,
//!   which is its only relevant document.
//! * [`SourceFamily`]: several "embedding models" observing one latent
//!   vector through different projections with independent noise, each
//!   emphasizing a different part of the latent space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embio::{QrelEntry, Qrels};
use crate::linalg::{EmbeddingMatrix, Matrix};

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn to_f32(rows: usize, dims: usize, data: Vec<f64>) -> EmbeddingMatrix {
    Matrix::new(rows, dims, data.into_iter().map(|v| v as f32).collect())
        .expect("synthetic data is finite")
}

/// `rows × dims` matrix of i.i.d. standard normal entries.
pub fn gaussian(rows: usize, dims: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    to_f32(rows, dims, normal_vec(rows * dims, &mut rng))
}

/// Rank-`rank` corpus of `rows × dims`.
pub fn low_rank_corpus(rows: usize, dims: usize, rank: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = LowRankSpace::new(dims, rank, &mut rng);
    space.sample(rows, &mut rng)
}

/// A fixed rank-`r` subspace of `R^d`.
#[derive(Debug, Clone)]
pub struct LowRankSpace {
    rank: usize,
    dims: usize,
    projection: Vec<f64>,
}

impl LowRankSpace {
    pub fn new(dims: usize, rank: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rank,
            dims,
            projection: normal_vec(rank * dims, rng),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Maps latent rows (`n × rank`, row-major) into the ambient space.
    pub fn embed(&self, latent: &[f64]) -> EmbeddingMatrix {
        let n = latent.len() / self.rank;
        let mut out = vec![0.0f64; n * self.dims];
        for i in 0..n {
            for r in 0..self.rank {
                let g = latent[i * self.rank + r];
                let p = &self.projection[r * self.dims..(r + 1) * self.dims];
                for (o, pv) in out[i * self.dims..(i + 1) * self.dims].iter_mut().zip(p) {
                    *o += g * pv;
                }
            }
        }
        to_f32(n, self.dims, out)
    }

    pub fn sample(&self, rows: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
        self.embed(&normal_vec(rows * self.rank, rng))
    }

    /// Planted-neighbor task inside the subspace: latent query = latent doc + `noise`·N(0, I).
    pub fn planted_task(
        &self,
        docs: usize,
        queries: usize,
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> PlantedTask {
        let doc_latent = normal_vec(docs * self.rank, rng);
        let query_latent = perturbed_copies(&doc_latent, self.rank, queries, noise, rng);
        PlantedTask::new(self.embed(&doc_latent), self.embed(&query_latent))
    }
}

/// Query `j` is a noisy copy of document `j % docs`.
fn perturbed_copies(
    doc_rows: &[f64],
    dims: usize,
    queries: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let docs = doc_rows.len() / dims;
    let mut out = Vec::with_capacity(queries * dims);
    for j in 0..queries {
        let src = &doc_rows[(j % docs) * dims..(j % docs + 1) * dims];
        out.extend(
            src.iter()
                .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal)),
        );
    }
    out
}

/// Retrieval task where query `j` has exactly one relevant document, `doc (j mod docs)`.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub docs: EmbeddingMatrix,
    pub doc_ids: Vec<String>,
    pub queries: EmbeddingMatrix,
    pub query_ids: Vec<String>,
    pub qrels: Qrels,
}

impl PlantedTask {
    pub fn new(docs: EmbeddingMatrix, queries: EmbeddingMatrix) -> Self {
        let doc_ids: Vec<String> = (0..docs.rows()).map(|i| format!("d{i}")).collect();
        let query_ids: Vec<String> = (0..queries.rows()).map(|j| format!("q{j}")).collect();
        let entries = query_ids
            .iter()
            .enumerate()
            .map(|(j, q)| QrelEntry {
                query_id: q.clone(),
                doc_id: doc_ids[j % doc_ids.len()].clone(),
                relevance: 1,
            })
            .collect();
        Self {
            docs,
            doc_ids,
            queries,
            query_ids,
            qrels: Qrels::new(entries).expect("one judgment per query"),
        }
    }

    /// Documents are i.i.d. Gaussian rows; queries add `noise`·N(0, I).
    pub fn gaussian(docs: usize, queries: usize, dims: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc_rows = normal_vec(docs * dims, &mut rng);
        let query_rows = perturbed_copies(&doc_rows, dims, queries, noise, &mut rng);
        Self::new(
            to_f32(docs, dims, doc_rows),
            to_f32(queries, dims, query_rows),
        )
    }
}

/// Several simulated embedding models over one latent space.
///
/// Source `s` sees latent `x` as `A_s (w_s ⊙ x) + σ ε`, where `w_s` puts
/// weight 1 on its own slice of latent coordinates and `weak` elsewhere, so
/// the sources carry complementary information.
#[derive(Debug, Clone)]
pub struct SourceFamily {
    latent_dims: usize,
    source_dims: usize,
    noise: f64,
    emphasis: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
}

impl SourceFamily {
    pub fn new(
        sources: usize,
        latent_dims: usize,
        source_dims: usize,
        weak: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slice = latent_dims.div_ceil(sources);
        let emphasis = (0..sources)
            .map(|s| {
                (0..latent_dims)
                    .map(|c| if c / slice == s { 1.0 } else { weak })
                    .collect()
            })
            .collect();
        let scale = 1.0 / (latent_dims as f64).sqrt();
        let mixing = (0..sources)
            .map(|_| {
                normal_vec(source_dims * latent_dims, &mut rng)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect()
            })
            .collect();
        Self {
            latent_dims,
            source_dims,
            noise,
            emphasis,
            mixing,
        }
    }

    pub fn sources(&self) -> usize {
        self.mixing.len()
    }

    /// Embeds latent rows with source `s`, drawing fresh observation noise.
    pub fn observe(&self, s: usize, latent: &[f64], rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
        let n = latent.len() / self.latent_dims;
        let (a, w) = (&self.mixing[s], &self.emphasis[s]);
        let mut out = Vec::with_capacity(n * self.source_dims);
        for x in latent.chunks_exact(self.latent_dims) {
            for row in a.chunks_exact(self.latent_dims) {
                let mut acc = 0.0;
                for ((aij, wj), xj) in row.iter().zip(w).zip(x) {
                    acc += aij * wj * xj;
                }
                out.push(acc + self.noise * rng.sample::<f64, _>(StandardNormal));
            }
        }
        to_f32(n, self.source_dims, out)
    }

    /// Per-source document and query matrices for a planted task, plus the
    /// shared ids and qrels (the `docs`/`queries` fields hold source 0).
    pub fn planted_task(
        &self,
        docs: usize,
        queries: usize,
        query_noise: f64,
        seed: u64,
    ) -> (Vec<EmbeddingMatrix>, Vec<EmbeddingMatrix>, PlantedTask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc_latent = normal_vec(docs * self.latent_dims, &mut rng);
        let query_latent = perturbed_copies(
            &doc_latent,
            self.latent_dims,
            queries,
            query_noise,
            &mut rng,
        );
        let doc_views: Vec<_> = (0..self.sources())
            .map(|s| self.observe(s, &doc_latent, &mut rng))
            .collect();
        let query_views: Vec<_> = (0..self.sources())
            .map(|s| self.observe(s, &query_latent, &mut rng))
            .collect();
        let task = PlantedTask::new(doc_views[0].clone(), query_views[0].clone());
        (doc_views, query_views, task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_rank_corpus_has_requested_rank_structure() {
        let m = low_rank_corpus(20, 10, 2, 1);
        assert_eq!((m.rows(), m.dims()), (20, 10));
        // any 3 rows are linearly dependent: check a 3x3 Gram determinant
        let g = |i: usize, j: usize| crate::linalg::dot(m.row(i), m.row(j));
        let det = g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
            - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0));
        assert!(det.abs() < 1e-3 * g(0, 0) * g(1, 1) * g(2, 2));
    }

    #[test]
    fn planted_task_shapes() {
        let t = PlantedTask::gaussian(10, 25, 4, 0.1, 3);
        assert_eq!(t.queries.rows(), 25);
        assert_eq!(t.qrels.entries().len(), 25);
        assert_eq!(t.qrels.entries()[12].doc_id, "d2");
    }

    #[test]
    fn source_family_is_deterministic() {
        let fam = SourceFamily::new(4, 16, 8, 0.2, 0.5, 9);
        let (d1, q1, _) = fam.planted_task(5, 5, 0.1, 2);
        let (d2, q2, _) = fam.planted_task(5, 5, 0.1, 2);
        assert_eq!(d1, d2);
        assert_eq!(q1, q2);
        assert_eq!(d1.len(), 4);
        assert_eq!(d1[3].dims(), 8);
    }
}
