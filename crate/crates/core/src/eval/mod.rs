//! Exhaustive retrieval and nDCG@k scoring over any representation.

mod ndcg;
mod pipeline;
mod search;

pub use ndcg::{ndcg_at_k, ndcg_at_k_with, summary_tsv, EvalReport, Gain};
pub use pipeline::{
    apply_chain, chain_label, evaluate_pipeline, evaluate_pipeline_with, run_pipeline,
    Representation, Transform,
};
pub use search::{search, CosineScorer, HammingScorer, RetrievalTask, Similarity};

pub const DEFAULT_CUTOFF: usize = 10;
