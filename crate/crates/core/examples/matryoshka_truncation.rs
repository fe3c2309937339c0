//! Compare decoder prefixes against plain truncation of the raw vectors.
//!
//! Run: `cargo run --release --example matryoshka_truncation`

use embfuse::decoder::{train, TrainConfig};
use embfuse::eval::{evaluate_pipeline, RetrievalTask, Transform};
use embfuse::linalg::concat_normalized;
use embfuse::synth::SourceFamily;

fn main() -> embfuse::Result<()> {
    let family = SourceFamily::new(4, 24, 32, 0.3, 0.3, 3);
    let (docs, queries, planted) = family.planted_task(3000, 500, 0.5, 4);
    let task = RetrievalTask::from_planted("family", planted).with_embeddings(
        concat_normalized(&queries.iter().collect::<Vec<_>>())?,
        concat_normalized(&docs.iter().collect::<Vec<_>>())?,
    )?;

    let stops = vec![4, 8, 16, 24, 32];
    let config = TrainConfig {
        batch_size: 128,
        epochs: 40,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let model = train(&task.docs, &config, &stops)?.model;

    let raw = evaluate_pipeline(&task, &[Transform::Raw])?.mean;
    println!("raw {}-d: {raw:.4}", task.docs.dims());
    println!("k\ttrunc\tdecoder");
    for &k in &stops {
        let t = evaluate_pipeline(&task, &[Transform::Truncate(k)])?.mean;
        let d = evaluate_pipeline(
            &task,
            &[Transform::Decoder {
                model: model.clone(),
                stop: Some(k),
            }],
        )?
        .mean;
        println!("{k}\t{t:.4}\t{d:.4}");
    }
    Ok(())
}
