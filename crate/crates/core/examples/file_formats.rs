//! Round-trip every binary format the toolkit reads and writes.
//!
//! Run: `cargo run --example file_formats`

use embfuse::decoder::{read_checkpoint, write_checkpoint, Checkpoint, DecoderModel};
use embfuse::embio::{read_codes, read_embeddings, read_ids, write_embeddings, write_ids};
use embfuse::lsh::{
    read_bit_codes, read_projector, write_bit_codes, write_projector, LshProjector,
};
use embfuse::quantizer::{
    read_calibration, read_quantized, write_calibration, write_quantized, QuantizerCalibration,
};
use embfuse::synth;

fn main() -> embfuse::Result<()> {
    let dir = std::env::temp_dir().join("embfuse_formats");
    std::fs::create_dir_all(&dir).map_err(|e| embfuse::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let m = synth::gaussian(300, 24, 1);

    write_embeddings(&m, dir.join("m.embf"))?;
    assert_eq!(read_embeddings(dir.join("m.embf"))?, m);

    let ids: Vec<String> = (0..m.rows()).map(|i| format!("doc-{i}")).collect();
    write_ids(&ids, dir.join("m.ids"))?;
    assert_eq!(read_ids(dir.join("m.ids"))?, ids);

    let cal = QuantizerCalibration::calibrate(&m, 3)?;
    write_calibration(&cal, dir.join("m.embc"))?;
    assert_eq!(read_calibration(dir.join("m.embc"))?, cal);
    let codes = cal.quantize(&m)?;
    write_quantized(&codes, dir.join("m.embq"))?;
    assert_eq!(read_quantized(dir.join("m.embq"))?, codes);
    let packed = read_codes(dir.join("m.embq"))?;
    println!(
        "EMBQ: {} rows x {} dims at {} bits, {} bytes/row",
        packed.rows,
        packed.dims,
        packed.bits,
        packed.row_bytes()
    );

    let p = LshProjector::new(24, 100, 5)?;
    write_projector(&p, dir.join("p.embl"))?;
    assert_eq!(read_projector(dir.join("p.embl"))?, p);
    let bits = p.project_and_binarize(&m)?;
    write_bit_codes(&bits, dir.join("b.embq"))?;
    assert_eq!(read_bit_codes(dir.join("b.embq"))?, bits);

    let model = DecoderModel::init_seeded(24, vec![4, 8], 2)?;
    let ckpt = Checkpoint::from_model(model);
    write_checkpoint(&ckpt, dir.join("d.embd"))?;
    assert_eq!(read_checkpoint(dir.join("d.embd"))?, ckpt);

    for entry in std::fs::read_dir(&dir).map_err(|e| embfuse::Error::Io {
        path: dir.clone(),
        source: e,
    })? {
        let entry = entry.map_err(|e| embfuse::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let len = entry.metadata().map(|m| m.len()).unwrap_or(0);
        println!("{:>8} B  {}", len, entry.file_name().to_string_lossy());
    }
    Ok(())
}
