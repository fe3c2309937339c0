//! Random-hyperplane LSH as an extreme-compression baseline.
//!
//! Run: `cargo run --release --example lsh_baseline`

use embfuse::eval::{evaluate_pipeline, RetrievalTask, Transform};
use embfuse::lsh::{compression_factor, LshProjector};
use embfuse::synth::PlantedTask;

fn main() -> embfuse::Result<()> {
    println!(
        "1536-d float32 to 1024 bits: {}x",
        compression_factor(1536, 32, 1024)
    );

    let task =
        RetrievalTask::from_planted("planted", PlantedTask::gaussian(3000, 500, 128, 1.5, 5));
    println!(
        "raw: {:.4}",
        evaluate_pipeline(&task, &[Transform::Raw])?.mean
    );
    println!("bits\tcompression\tnDCG@10");
    for d_proj in [32, 64, 256, 1024, 4096] {
        let p = LshProjector::new(128, d_proj, 0)?;
        let factor = p.compression_factor();
        let r = evaluate_pipeline(&task, &[Transform::Lsh(p)])?;
        println!("{d_proj}\t{factor:.1}x\t{:.4}", r.mean);
    }

    let pair = embfuse::Matrix::from_rows(&[[1.0f32, 0.0], [0.5, 0.75f32.sqrt()]])?;
    let codes = LshProjector::new(2, 4096, 9)?.project_and_binarize(&pair)?;
    println!(
        "estimated cosine of a 0.5 pair: {:.3}",
        codes.similarity(0, &codes, 1)?
    );
    Ok(())
}
