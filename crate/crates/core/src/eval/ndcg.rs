use std::collections::BTreeMap;

use crate::embio::{Qrels, RunFile};
use crate::error::{Error, Result};

/// Gain applied to a relevance grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// `rel` (trec_eval convention).
    #[default]
    Linear,
    /// `2^rel - 1`.
    Exponential,
}

impl Gain {
    #[inline]
    fn of(self, rel: u32) -> f64 {
        match self {
            Gain::Linear => rel as f64,
            Gain::Exponential => 2f64.powi(rel as i32) - 1.0,
        }
    }
}

/// nDCG@k for one run against one set of judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub transform: String,
    pub k: usize,
    /// Only queries with at least one relevant judgment appear here.
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

impl EvalReport {
    pub fn labeled(mut self, task: impl Into<String>, transform: impl Into<String>) -> Self {
        self.task = task.into();
        self.transform = transform.into();
        self
    }

    /// `task<TAB>transform<TAB>query_id<TAB>ndcg` lines with a header.
    pub fn per_query_tsv(&self) -> String {
        let mut out = format!("task\ttransform\tquery_id\tndcg@{}\n", self.k);
        for (q, v) in &self.per_query {
            out.push_str(&format!("{}\t{}\t{q}\t{v:.6}\n", self.task, self.transform));
        }
        out
    }
}

/// Summary TSV (`task, transform, mean_ndcg`) for a set of reports.
pub fn summary_tsv(reports: &[EvalReport]) -> String {
    let k = reports.first().map_or(10, |r| r.k);
    let mut out = format!("task\ttransform\tmean_ndcg@{k}\n");
    for r in reports {
        out.push_str(&format!("{}\t{}\t{:.6}\n", r.task, r.transform, r.mean));
    }
    out
}

/// nDCG@k with linear gains.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<EvalReport> {
    ndcg_at_k_with(run, qrels, k, Gain::Linear)
}

/// `DCG@k = Σ_{rank ≤ k} gain(rel) / log2(rank + 1)`, normalized by the DCG
/// of the judgments sorted by relevance. Queries without a relevant
/// judgment are left out of the mean; qrels queries absent from the run are
/// ignored.
pub fn ndcg_at_k_with(run: &RunFile, qrels: &Qrels, k: usize, gain: Gain) -> Result<EvalReport> {
    if k < 1 {
        return Err(Error::Validation("cutoff k must be at least 1".into()));
    }
    if qrels.is_empty() {
        return Err(Error::Validation("qrels are empty".into()));
    }
    let judged = qrels.by_query();
    let mut per_query = BTreeMap::new();
    for (qid, ranked) in run.by_query() {
        let Some(rels) = judged.get(qid) else {
            continue;
        };
        let mut ideal: Vec<u32> = rels.values().copied().filter(|&r| r > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| gain.of(r) / ((i + 2) as f64).log2())
            .sum();
        let dcg: f64 = ranked
            .iter()
            .filter(|e| e.rank <= k)
            .map(|e| {
                let rel = rels.get(e.doc_id.as_str()).copied().unwrap_or(0);
                gain.of(rel) / ((e.rank + 1) as f64).log2()
            })
            .sum();
        per_query.insert(qid.to_string(), dcg / idcg);
    }
    if per_query.is_empty() {
        return Err(Error::InsufficientData(
            "no run query has a relevant judgment".into(),
        ));
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(EvalReport {
        task: String::new(),
        transform: String::new(),
        k,
        per_query,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embio::{QrelEntry, RunEntry};
    use proptest::prelude::*;

    fn run(q: &str, docs: &[&str]) -> RunFile {
        RunFile::new(
            docs.iter()
                .enumerate()
                .map(|(i, d)| RunEntry {
                    query_id: q.into(),
                    doc_id: d.to_string(),
                    rank: i + 1,
                    score: 1.0 - i as f64 * 0.1,
                    tag: "t".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn qrels(list: &[(&str, &str, u32)]) -> Qrels {
        Qrels::new(
            list.iter()
                .map(|(q, d, r)| QrelEntry {
                    query_id: q.to_string(),
                    doc_id: d.to_string(),
                    relevance: *r,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_relevant_at_top_or_second() {
        let qr = qrels(&[("q", "a", 1)]);
        assert_eq!(
            ndcg_at_k(&run("q", &["a", "b"]), &qr, 10).unwrap().mean,
            1.0
        );
        let second = ndcg_at_k(&run("q", &["b", "a"]), &qr, 10).unwrap().mean;
        assert!((second - 0.63093).abs() < 1e-5);
        assert_eq!(second, 1.0 / 3f64.log2());
    }

    #[test]
    fn graded_ideal_order() {
        let qr = qrels(&[("q", "a", 2), ("q", "b", 1)]);
        let r = ndcg_at_k(&run("q", &["a", "b", "c"]), &qr, 10).unwrap();
        assert_eq!(r.mean, 1.0);
        let swapped = ndcg_at_k(&run("q", &["b", "a"]), &qr, 10).unwrap().mean;
        assert!(swapped < 1.0);
        let exp = ndcg_at_k_with(&run("q", &["b", "a"]), &qr, 10, Gain::Exponential)
            .unwrap()
            .mean;
        assert!((exp - (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn cutoff_and_exclusions() {
        let qr = qrels(&[("q", "c", 1), ("z", "a", 0)]);
        let r = ndcg_at_k(&run("q", &["a", "b", "c"]), &qr, 2).unwrap();
        assert_eq!(r.mean, 0.0);
        // query z has only non-relevant judgments: excluded
        let mut entries = run("q", &["c"]).entries().to_vec();
        entries.extend(run("z", &["a"]).entries().iter().cloned());
        let r = ndcg_at_k(&RunFile::new(entries).unwrap(), &qr, 10).unwrap();
        assert_eq!(r.per_query.len(), 1);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn errors() {
        assert!(ndcg_at_k(&run("q", &["a"]), &Qrels::default(), 10).is_err());
        assert!(ndcg_at_k(&run("q", &["a"]), &qrels(&[("q", "a", 1)]), 0).is_err());
        assert!(matches!(
            ndcg_at_k(&run("q", &["a"]), &qrels(&[("x", "a", 1)]), 10),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn tsv_output() {
        let r = ndcg_at_k(&run("q", &["a"]), &qrels(&[("q", "a", 1)]), 10)
            .unwrap()
            .labeled("scifact", "raw");
        assert_eq!(
            summary_tsv(std::slice::from_ref(&r)),
            "task\ttransform\tmean_ndcg@10\nscifact\traw\t1.000000\n"
        );
        assert!(r.per_query_tsv().ends_with("scifact\traw\tq\t1.000000\n"));
    }

    proptest! {
        #[test]
        fn bounded_and_rank_only(
            rels in prop::collection::vec(0u32..3, 8),
            perm_seed in any::<u64>(),
        ) {
            prop_assume!(rels.iter().any(|&r| r > 0));
            let docs: Vec<String> = (0..8).map(|i| format!("d{i}")).collect();
            let list: Vec<(&str, &str, u32)> = docs.iter().zip(&rels).map(|(d, &r)| ("q", d.as_str(), r)).collect();
            let qr = qrels(&list);
            let mut order: Vec<usize> = (0..8).collect();
            let mut s = perm_seed;
            for i in (1..8).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let names: Vec<&str> = order.iter().map(|&i| docs[i].as_str()).collect();
            let base = run("q", &names);
            let v = ndcg_at_k(&base, &qr, 5).unwrap().mean;
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            // strictly increasing transform of scores leaves nDCG unchanged
            let cubed = RunFile::new(base.entries().iter().map(|e| RunEntry { score: e.score.powi(3) * 7.0 - 2.0, ..e.clone() }).collect()).unwrap();
            prop_assert_eq!(ndcg_at_k(&cubed, &qr, 5).unwrap().mean, v);
            // sorting by relevance gives the ideal value
            let mut ideal: Vec<usize> = (0..8).collect();
            ideal.sort_by(|&a, &b| rels[b].cmp(&rels[a]));
            let names: Vec<&str> = ideal.iter().map(|&i| docs[i].as_str()).collect();
            prop_assert!((ndcg_at_k(&run("q", &names), &qr, 5).unwrap().mean - 1.0).abs() < 1e-12);
        }
    }
}
