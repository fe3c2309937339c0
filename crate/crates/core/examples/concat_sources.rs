//! Fuse several embedding "models" by concatenating their vectors.
//!
//! Run: `cargo run --example concat_sources`

use embfuse::eval::{evaluate_pipeline, RetrievalTask, Transform};
use embfuse::linalg::{concat, concat_normalized};
use embfuse::synth::SourceFamily;

fn main() -> embfuse::Result<()> {
    // Four 32-d sources, each sharper on its own quarter of a 32-d latent space.
    let family = SourceFamily::new(4, 32, 32, 0.2, 0.5, 7);
    let (docs, queries, planted) = family.planted_task(2000, 400, 0.6, 8);

    println!("sources\tdims\tnDCG@10");
    for n in 1..=4 {
        let d: Vec<_> = docs[..n].iter().collect();
        let q: Vec<_> = queries[..n].iter().collect();
        let task = RetrievalTask::from_planted("family", planted.clone())
            .with_embeddings(concat_normalized(&q)?, concat_normalized(&d)?)?;
        let r = evaluate_pipeline(&task, &[Transform::Raw])?;
        println!("{n}\t{}\t{:.4}", task.docs.dims(), r.mean);
    }

    // Without per-source normalization a source with larger norms dominates the cosine.
    let loud = docs[1].convert::<f64>()?;
    let loud = embfuse::Matrix::new(
        loud.rows(),
        loud.dims(),
        loud.as_slice().iter().map(|v| (v * 10.0) as f32).collect(),
    )?;
    let raw = concat(&[&docs[0], &loud])?;
    let norm = concat_normalized(&[&docs[0], &loud])?;
    println!(
        "row 0 share of squared norm from source 0: raw {:.3}, normalized {:.3}",
        share(raw.row(0), 32),
        share(norm.row(0), 32)
    );
    Ok(())
}

fn share(row: &[f32], split: usize) -> f64 {
    let sq = |s: &[f32]| s.iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
    sq(&row[..split]) / sq(row)
}
