//! Test-only oracles, written independently of the library code paths.

#![allow(dead_code)]

use std::collections::HashMap;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Double loop over ordered pairs `i != j`.
pub fn brute_sim_loss(h: &[Vec<f64>], z: &[Vec<f64>]) -> f64 {
    let b = h.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                let d = cos(&h[i], &h[j]) - cos(&z[i], &z[j]);
                total += d * d;
            }
        }
    }
    total / (b * (b - 1)) as f64
}

/// `(query, doc) -> relevance` and a ranked doc list per query.
pub fn brute_ndcg(
    ranked: &HashMap<String, Vec<String>>,
    judgments: &HashMap<String, HashMap<String, u32>>,
    k: usize,
) -> f64 {
    let mut scores = Vec::new();
    let mut queries: Vec<&String> = ranked.keys().collect();
    queries.sort();
    for q in queries {
        let Some(rels) = judgments.get(q) else {
            continue;
        };
        let mut ideal: Vec<u32> = rels.values().cloned().filter(|r| *r > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort();
        ideal.reverse();
        let mut idcg = 0.0;
        for (pos, r) in ideal.iter().enumerate().take(k) {
            idcg += *r as f64 / (pos as f64 + 2.0).log2();
        }
        let mut dcg = 0.0;
        for (pos, d) in ranked[q].iter().enumerate().take(k) {
            let r = rels.get(d).copied().unwrap_or(0);
            dcg += r as f64 / (pos as f64 + 2.0).log2();
        }
        scores.push(dcg / idcg);
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}
