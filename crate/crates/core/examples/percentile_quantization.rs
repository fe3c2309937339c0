//! Equal-mass scalar quantization of decoder outputs.
//!
//! Run: `cargo run --release --example percentile_quantization`

use embfuse::eval::{evaluate_pipeline, RetrievalTask, Transform};
use embfuse::quantizer::QuantizerCalibration;
use embfuse::synth::PlantedTask;
use embfuse::Matrix;

fn main() -> embfuse::Result<()> {
    let column = Matrix::new(8, 1, (1..=8).map(|v| v as f32).collect())?;
    let cal = QuantizerCalibration::calibrate(&column, 2)?;
    println!(
        "b=2 on 1..8: break-points {:?}, representatives {:?}",
        cal.breakpoints(0),
        cal.representatives(0)
    );
    println!(
        "symbols of 5, 1, 7: {:?}",
        [5.0, 1.0, 7.0].map(|v| cal.quantize_value(0, v))
    );

    let task =
        RetrievalTask::from_planted("planted", PlantedTask::gaussian(3000, 500, 64, 1.5, 11));
    let base = evaluate_pipeline(&task, &[Transform::Raw])?.mean;
    println!("float32: {base:.4}");
    println!("bits\tcompression\tnDCG@10");
    for bits in [1u8, 2, 4, 8] {
        let cal = QuantizerCalibration::calibrate(&task.docs, bits)?;
        let codes = cal.quantize(&task.docs)?;
        let packed = codes.to_packed();
        let r = evaluate_pipeline(&task, &[Transform::Quantize(cal)])?;
        println!(
            "{bits}\t{:.0}x ({} B/row)\t{:.4}",
            codes.compression_factor(),
            packed.row_bytes(),
            r.mean
        );
    }
    Ok(())
}
