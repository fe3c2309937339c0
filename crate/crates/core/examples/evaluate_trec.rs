//! Score a run against qrels with nDCG@10 and write TREC-style outputs.
//!
//! Run: `cargo run --example evaluate_trec`

use embfuse::embio::{Qrels, RunFile};
use embfuse::eval::{ndcg_at_k, summary_tsv, Gain};

const QRELS: &str = "q1\t0\td1\t2\nq1\t0\td3\t1\nq2\t0\td2\t1\nq3\t0\td9\t0\n";

const RUN: &str = "\
q1 Q0 d3 1 0.91 demo
q1 Q0 d1 2 0.80 demo
q1 Q0 d7 3 0.42 demo
q2 Q0 d5 1 0.77 demo
q2 Q0 d2 2 0.70 demo
q3 Q0 d9 1 0.50 demo
";

fn main() -> embfuse::Result<()> {
    let qrels = Qrels::parse(QRELS)?;
    let run = RunFile::parse(RUN)?;
    // q3 has no relevant document and is left out of the mean.
    let report = ndcg_at_k(&run, &qrels, 10)?.labeled("demo", "raw");
    print!("{}", report.per_query_tsv());
    print!("{}", summary_tsv(&[report]));

    let exp = embfuse::eval::ndcg_at_k_with(&run, &qrels, 10, Gain::Exponential)?;
    println!("exponential gains: {:.6}", exp.mean);
    print!("{}", run.to_trec_string());
    Ok(())
}
