//! Sources, concatenation, decoder, quantization and LSH side by side.
//!
//! Run: `cargo run --release --example full_pipeline`

use embfuse::decoder::{train, TrainConfig};
use embfuse::eval::{evaluate_pipeline, summary_tsv, RetrievalTask, Transform};
use embfuse::linalg::concat_normalized;
use embfuse::lsh::LshProjector;
use embfuse::quantizer::QuantizerCalibration;
use embfuse::synth::SourceFamily;

fn main() -> embfuse::Result<()> {
    let family = SourceFamily::new(3, 48, 64, 0.25, 0.4, 21);
    let (docs, queries, planted) = family.planted_task(3000, 600, 0.5, 22);
    let task = RetrievalTask::from_planted("synthetic", planted).with_embeddings(
        concat_normalized(&queries.iter().collect::<Vec<_>>())?,
        concat_normalized(&docs.iter().collect::<Vec<_>>())?,
    )?;
    let d = task.docs.dims();

    let config = TrainConfig {
        batch_size: 128,
        epochs: 30,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let model = train(&task.docs, &config, &[16, 32, 48, 64])?.model;
    let decoder = |stop| Transform::Decoder {
        model: model.clone(),
        stop: Some(stop),
    };
    let outputs = model.encode(&task.docs, None)?;
    let cal = |bits| QuantizerCalibration::calibrate(&outputs, bits).map(Transform::Quantize);

    let chains: Vec<Vec<Transform>> = vec![
        vec![Transform::Raw],
        vec![Transform::Truncate(64)],
        vec![decoder(64)],
        vec![decoder(32)],
        vec![
            Transform::Decoder {
                model: model.clone(),
                stop: None,
            },
            cal(4)?,
        ],
        vec![
            Transform::Decoder {
                model: model.clone(),
                stop: None,
            },
            cal(1)?,
        ],
        vec![Transform::Lsh(LshProjector::new(d, 256, 0)?)],
    ];
    let reports = chains
        .iter()
        .map(|c| evaluate_pipeline(&task, c))
        .collect::<embfuse::Result<Vec<_>>>()?;
    print!("{}", summary_tsv(&reports));
    Ok(())
}
